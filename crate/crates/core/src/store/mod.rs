//! Embedding, trial and score containers and their tab-separated file formats.

mod scores;
mod text;
mod trials;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

pub use scores::{ScoreEntry, ScoreSet};
pub use trials::{build_crossmodal_trials, CrossModalTrials, Trial, TrialSet};

pub(crate) use text::{content_lines, parse_scalar as text_scalar, read_to_string, write_string};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Voice,
    Face,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Voice => "voice",
            Modality::Face => "face",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "voice" => Ok(Modality::Voice),
            "face" => Ok(Modality::Face),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// Ground truth of a trial. For voice/face pairs `Target` means "same person".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Target,
    Nontarget,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Target => "target",
            Label::Nontarget => "nontarget",
        }
    }

    pub fn is_target(self) -> bool {
        self == Label::Target
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "target" => Ok(Label::Target),
            "nontarget" => Ok(Label::Nontarget),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord<T> {
    pub record_id: String,
    pub identity_id: String,
    pub modality: Modality,
    pub vector: Vec<T>,
}

impl<T> EmbeddingRecord<T> {
    pub fn new(
        record_id: impl Into<String>,
        identity_id: impl Into<String>,
        modality: Modality,
        vector: Vec<T>,
    ) -> Self {
        EmbeddingRecord {
            record_id: record_id.into(),
            identity_id: identity_id.into(),
            modality,
            vector,
        }
    }
}

/// A set of embeddings sharing one dimension, addressable by record id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    records: Vec<EmbeddingRecord<T>>,
    index: HashMap<String, usize>,
    dim: Option<usize>,
}

impl<T: Scalar> Default for EmbeddingStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> EmbeddingStore<T> {
    pub fn new() -> Self {
        EmbeddingStore {
            records: Vec::new(),
            index: HashMap::new(),
            dim: None,
        }
    }

    pub fn from_records(records: impl IntoIterator<Item = EmbeddingRecord<T>>) -> Result<Self> {
        let mut store = Self::new();
        for r in records {
            store.push(r)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, record: EmbeddingRecord<T>) -> Result<()> {
        if let Some(d) = self.dim {
            if record.vector.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "embedding store",
                    expected: d,
                    found: record.vector.len(),
                });
            }
        }
        if !all_finite(&record.vector) {
            return Err(Error::NonFinite(format!("record `{}`", record.record_id)));
        }
        if self.index.contains_key(&record.record_id) {
            return Err(Error::DuplicateRecord(record.record_id));
        }
        self.dim = Some(record.vector.len());
        self.index.insert(record.record_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    /// Dimension shared by every record; undefined for an empty store.
    pub fn dim(&self) -> Result<usize> {
        self.dim.ok_or(Error::UndefinedDimension)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord<T>] {
        &self.records
    }

    pub fn get(&self, record_id: &str) -> Option<&EmbeddingRecord<T>> {
        self.index.get(record_id).map(|&i| &self.records[i])
    }

    pub fn require(&self, record_id: &str) -> Result<&EmbeddingRecord<T>> {
        self.get(record_id)
            .ok_or_else(|| Error::UnknownId(record_id.to_string()))
    }

    /// Position of `record_id` in [`records`](Self::records).
    pub fn index_of(&self, record_id: &str) -> Result<usize> {
        self.index
            .get(record_id)
            .copied()
            .ok_or_else(|| Error::UnknownId(record_id.to_string()))
    }

    pub fn by_modality(&self, modality: Modality) -> impl Iterator<Item = &EmbeddingRecord<T>> {
        self.records.iter().filter(move |r| r.modality == modality)
    }

    /// Records of one modality grouped by identity, identities in sorted order.
    pub fn group_by_identity(&self, modality: Modality) -> BTreeMap<&str, Vec<&EmbeddingRecord<T>>> {
        let mut groups: BTreeMap<&str, Vec<&EmbeddingRecord<T>>> = BTreeMap::new();
        for r in self.by_modality(modality) {
            groups.entry(r.identity_id.as_str()).or_default().push(r);
        }
        groups
    }

    pub fn identities(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.records.iter().map(|r| r.identity_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Union of two stores; record ids must not collide.
    pub fn merged(&self, other: &EmbeddingStore<T>) -> Result<Self> {
        let mut out = self.clone();
        for r in &other.records {
            out.push(r.clone())?;
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut store = Self::new();
        for (line, content) in content_lines(text) {
            let mut fields = content.split('\t');
            let (Some(record_id), Some(identity_id), Some(modality), Some(coords), None) = (
                fields.next(),
                fields.next(),
                fields.next(),
                fields.next(),
                fields.next(),
            ) else {
                return Err(Error::parse(line, "expected 4 tab-separated fields"));
            };
            if record_id.is_empty() || identity_id.is_empty() {
                return Err(Error::parse(line, "empty record or identity id"));
            }
            let modality: Modality = modality.parse().map_err(|e: String| Error::parse(line, e))?;
            let vector = coords
                .split(',')
                .map(|t| text::parse_scalar::<T>(t, line))
                .collect::<Result<Vec<T>>>()?;
            if let Some(d) = store.dim {
                if vector.len() != d {
                    return Err(Error::LineDimension {
                        line,
                        expected: d,
                        found: vector.len(),
                    });
                }
            }
            store
                .push(EmbeddingRecord::new(record_id, identity_id, modality, vector))
                .map_err(|e| Error::parse(line, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_to_string(path.as_ref())?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.record_id);
            out.push('\t');
            out.push_str(&r.identity_id);
            out.push('\t');
            out.push_str(r.modality.as_str());
            out.push('\t');
            for (i, c) in r.vector.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_string(path.as_ref(), &self.to_text())
    }
}
