use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Sentiment inventory shared by both corpora: Ekman's six basic emotions,
/// neutral, and (EmotionPush only) non-neutral for utterances without
/// annotator consensus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentimentLabel {
    Anger,
    Disgust,
    Fear,
    Joy,
    Neutral,
    NonNeutral,
    Sadness,
    Surprise,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 8] = [
        SentimentLabel::Anger,
        SentimentLabel::Disgust,
        SentimentLabel::Fear,
        SentimentLabel::Joy,
        SentimentLabel::Neutral,
        SentimentLabel::NonNeutral,
        SentimentLabel::Sadness,
        SentimentLabel::Surprise,
    ];

    /// The seven labels used by DailyDialog.
    pub const WITHOUT_NON_NEUTRAL: [SentimentLabel; 7] = [
        SentimentLabel::Anger,
        SentimentLabel::Disgust,
        SentimentLabel::Fear,
        SentimentLabel::Joy,
        SentimentLabel::Neutral,
        SentimentLabel::Sadness,
        SentimentLabel::Surprise,
    ];

    /// Canonical identifier, as used in normalized files and on the wire.
    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Anger => "anger",
            SentimentLabel::Disgust => "disgust",
            SentimentLabel::Fear => "fear",
            SentimentLabel::Joy => "joy",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::NonNeutral => "non_neutral",
            SentimentLabel::Sadness => "sadness",
            SentimentLabel::Surprise => "surprise",
        }
    }

    /// Lowercase human-readable surface form (`non-neutral` is hyphenated).
    pub fn surface_name(self) -> &'static str {
        match self {
            SentimentLabel::NonNeutral => "non-neutral",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = Error;

    /// Accepts the canonical identifier, the hyphenated surface form and
    /// common dataset spellings (`happiness`, `no emotion`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let label = match norm.as_str() {
            "anger" | "angry" => SentimentLabel::Anger,
            "disgust" => SentimentLabel::Disgust,
            "fear" => SentimentLabel::Fear,
            "joy" | "happiness" => SentimentLabel::Joy,
            "neutral" | "no_emotion" => SentimentLabel::Neutral,
            "non_neutral" | "nonneutral" => SentimentLabel::NonNeutral,
            "sadness" => SentimentLabel::Sadness,
            "surprise" => SentimentLabel::Surprise,
            _ => return Err(Error::UnknownLabel(s.to_string())),
        };
        Ok(label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trips_every_label() {
        for label in SentimentLabel::ALL {
            assert_eq!(label.as_str().parse::<SentimentLabel>().unwrap(), label);
            assert_eq!(label.surface_name().parse::<SentimentLabel>().unwrap(), label);
        }
    }

    #[test]
    fn serde_uses_snake_case() {
        let json = serde_json::to_string(&SentimentLabel::NonNeutral).unwrap();
        assert_eq!(json, "\"non_neutral\"");
    }

    #[test]
    fn unknown_label_is_rejected() {
        assert!("elation".parse::<SentimentLabel>().is_err());
    }
}
