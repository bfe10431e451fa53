use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::SentimentLabel;

/// Exact Euclidean nearest-neighbour index over training examples.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    vectors: Array2<f32>,
    labels: Vec<SentimentLabel>,
    ids: Vec<String>,
    rows_by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub label: SentimentLabel,
    pub id: String,
    pub row: usize,
    pub distance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexManifest {
    embedder: String,
    dim: usize,
    rows: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RowRecord {
    id: String,
    label: SentimentLabel,
}

pub fn build_index(
    embeddings: Array2<f32>,
    labels: Vec<SentimentLabel>,
    ids: Vec<String>,
) -> Result<NeighborIndex> {
    let rows = embeddings.nrows();
    if labels.len() != rows || ids.len() != rows {
        return Err(Error::Validation(format!(
            "index rows {rows}, labels {}, ids {}",
            labels.len(),
            ids.len()
        )));
    }
    let mut rows_by_id = HashMap::with_capacity(rows);
    for (row, id) in ids.iter().enumerate() {
        if rows_by_id.insert(id.clone(), row).is_some() {
            return Err(Error::Validation(format!("duplicate example id `{id}`")));
        }
    }
    Ok(NeighborIndex {
        vectors: embeddings,
        labels,
        ids,
        rows_by_id,
    })
}

fn squared_distance(a: ArrayView1<f32>, b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

impl NeighborIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f32> {
        &self.vectors
    }

    pub fn labels(&self) -> &[SentimentLabel] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.rows_by_id.contains_key(id)
    }

    /// Closest row to `query` by Euclidean distance, skipping `exclude_id`.
    /// Ties go to the lowest row.
    pub fn nearest_label(&self, query: &[f32], exclude_id: Option<&str>) -> Result<Neighbor> {
        if query.len() != self.dim() {
            return Err(Error::Validation(format!(
                "query dim {} != index dim {}",
                query.len(),
                self.dim()
            )));
        }
        let excluded = exclude_id.and_then(|id| self.rows_by_id.get(id).copied());
        let mut best: Option<(usize, f64)> = None;
        for (row, vector) in self.vectors.outer_iter().enumerate() {
            if Some(row) == excluded {
                continue;
            }
            let d = squared_distance(vector, query);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((row, d));
            }
        }
        let (row, d) = best.ok_or_else(|| Error::Empty("no searchable rows in index".into()))?;
        Ok(Neighbor {
            label: self.labels[row],
            id: self.ids[row].clone(),
            row,
            distance: d.sqrt(),
        })
    }

    /// Writes `vectors.f32` (row-major little-endian float32), `rows.jsonl`
    /// (`{id, label}` per row) and `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>, embedder_id: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(fs::File::create(dir.join("vectors.f32"))?);
        for v in self.vectors.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        let mut rows = BufWriter::new(fs::File::create(dir.join("rows.jsonl"))?);
        for (id, label) in self.ids.iter().zip(&self.labels) {
            serde_json::to_writer(
                &mut rows,
                &RowRecord {
                    id: id.clone(),
                    label: *label,
                },
            )?;
            rows.write_all(b"\n")?;
        }
        rows.flush()?;
        let manifest = IndexManifest {
            embedder: embedder_id.to_string(),
            dim: self.dim(),
            rows: self.len(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Loads an index saved by [`NeighborIndex::save`]; returns it with the
    /// embedder identifier from the manifest.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, String)> {
        let dir = dir.as_ref();
        let manifest: IndexManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let bytes = fs::read(dir.join("vectors.f32"))?;
        if bytes.len() != manifest.rows * manifest.dim * 4 {
            return Err(Error::Checkpoint(format!(
                "vectors.f32 holds {} bytes, manifest expects {} x {} floats",
                bytes.len(),
                manifest.rows,
                manifest.dim
            )));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut labels = Vec::with_capacity(manifest.rows);
        let mut ids = Vec::with_capacity(manifest.rows);
        for line in BufReader::new(fs::File::open(dir.join("rows.jsonl"))?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RowRecord = serde_json::from_str(&line)?;
            ids.push(rec.id);
            labels.push(rec.label);
        }
        let vectors = Array2::from_shape_vec((manifest.rows, manifest.dim), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((build_index(vectors, labels, ids)?, manifest.embedder))
    }
}
