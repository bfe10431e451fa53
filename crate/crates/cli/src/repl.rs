use std::io::{BufRead, Write};

use anyhow::Result;
use saca_core::agent::{Agent, AgentMode, ChatSession, ModeKind, TurnResult};
use saca_core::SentimentLabel;

/// Agent reply line; the conditioning label is shown in brackets when the
/// mode uses one.
pub fn format_turn(result: &TurnResult) -> String {
    match result.shown_label {
        Some(label) => format!("agent: {} [{label}]", result.reply_text),
        None => format!("agent: {}", result.reply_text),
    }
}

/// Line-oriented chat. `/label <name>` sets the oracle label, `/mode <m>`
/// switches mode, `/quit` (or end of input) leaves with status 0.
pub fn run_repl(agent: &Agent, mode: AgentMode, input: impl BufRead, mut out: impl Write) -> Result<i32> {
    let mut session = ChatSession::new(mode);
    let mut label: Option<SentimentLabel> = None;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(command) = line.strip_prefix('/') {
            let (name, arg) = command.split_once(' ').unwrap_or((command, ""));
            let arg = arg.trim();
            match name {
                "quit" | "exit" => return Ok(0),
                "label" => match arg.parse::<SentimentLabel>() {
                    Ok(l) if agent.labels.contains(&l) => {
                        label = Some(l);
                        writeln!(out, "label set to {l}")?;
                    }
                    _ => writeln!(out, "unknown label `{arg}`; choose from {}", label_list(agent))?,
                },
                "mode" => match switch_mode(agent, arg) {
                    Ok(m) => {
                        session.set_mode(m);
                        writeln!(out, "mode set to {}", m.kind)?;
                    }
                    Err(e) => writeln!(out, "{e}")?,
                },
                other => writeln!(out, "unknown command `/{other}` (try /label, /mode, /quit)")?,
            }
            continue;
        }
        match agent.reply(&mut session, line, label) {
            Ok(result) => writeln!(out, "{}", format_turn(&result))?,
            Err(e) => writeln!(out, "error: {e}")?,
        }
    }
    Ok(0)
}

fn label_list(agent: &Agent) -> String {
    agent.labels.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", ")
}

fn switch_mode(agent: &Agent, arg: &str) -> saca_core::Result<AgentMode> {
    let kind: ModeKind = arg.parse()?;
    let mode = AgentMode::new(kind, agent.default_lexicon(kind))?;
    agent.check_mode(&mode)?;
    Ok(mode)
}
