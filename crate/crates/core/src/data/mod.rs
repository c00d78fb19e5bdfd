//! Corpus plumbing: utterance manifests (JSON-lines), binary feature files,
//! synthetic accented-corpus generation, and the seven-bucket
//! speaker/transcript-disjoint splitter.

mod features;
mod gen;
mod split;

pub use features::{read_features, write_features, FEATURE_MAGIC};
pub use gen::{gen_corpus, write_corpus, AccentProfile, GenConfig, GeneratedUtterance};
pub use split::{
    seven_bucket_split, speaker_disjoint, Split, SplitAssignment, SplitRatios, SplitReport,
    BUCKET_BENEFACTORS,
};

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {source}")]
    Manifest {
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate utterance id {0}")]
    DuplicateUtt(String),
    #[error("feature file format: {0}")]
    Format(String),
    #[error("{0}")]
    Invalid(String),
    #[error("split infeasible: {0}")]
    Infeasible(String),
}

/// One corpus row: the unit of the manifest index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker: String,
    pub accent: String,
    pub transcript: String,
    pub feature_path: String,
    pub duration_frames: usize,
}

/// Line-oriented corpus index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
}

impl Manifest {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self, DataError> {
        let m = Manifest { utterances };
        m.check_unique_ids()?;
        Ok(m)
    }

    fn check_unique_ids(&self) -> Result<(), DataError> {
        let mut seen = std::collections::HashSet::new();
        for u in &self.utterances {
            if !seen.insert(u.utt_id.as_str()) {
                return Err(DataError::DuplicateUtt(u.utt_id.clone()));
            }
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut utterances = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let utt: Utterance = serde_json::from_str(&line)
                .map_err(|source| DataError::Manifest { line: i + 1, source })?;
            utterances.push(utt);
        }
        Manifest::new(utterances)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DataError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for u in &self.utterances {
            serde_json::to_writer(&mut file, u).map_err(|e| {
                DataError::Invalid(format!("serializing {}: {e}", u.utt_id))
            })?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        Ok(())
    }

    /// Accent names in first-appearance order.
    pub fn accents(&self) -> Vec<String> {
        let mut out = Vec::new();
        for u in &self.utterances {
            if !out.contains(&u.accent) {
                out.push(u.accent.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, speaker: &str) -> Utterance {
        Utterance {
            utt_id: id.into(),
            speaker: speaker.into(),
            accent: "north".into(),
            transcript: "abc".into(),
            feature_path: format!("features/{id}.afv"),
            duration_frames: 9,
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let m = Manifest::new(vec![utt("u1", "s1"), utt("u2", "s2")]).unwrap();
        m.write_jsonl(&path).unwrap();
        let back = Manifest::read_jsonl(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(matches!(
            Manifest::new(vec![utt("u1", "s1"), utt("u1", "s2")]),
            Err(DataError::DuplicateUtt(_))
        ));
    }
}
