use std::path::Path;

use super::text::parse_scalar;
use super::{content_lines, read_to_string, write_string, Label, TrialSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry<T> {
    pub enroll_id: String,
    pub test_id: String,
    pub score: T,
    pub label: Option<Label>,
}

/// Trial scores with optional labels. Scores are finite; labels are all-or-none.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet<T> {
    entries: Vec<ScoreEntry<T>>,
}

impl<T: Scalar> ScoreSet<T> {
    pub fn new(entries: Vec<ScoreEntry<T>>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::NonFinite(format!("score of {} / {}", e.enroll_id, e.test_id)));
        }
        let labeled = entries.iter().filter(|e| e.label.is_some()).count();
        if labeled != 0 && labeled != entries.len() {
            return Err(Error::InvalidTrials(format!(
                "{labeled} of {} scores labeled; expected all or none",
                entries.len()
            )));
        }
        Ok(ScoreSet { entries })
    }

    /// Scores aligned with a trial list, inheriting its ids and labels.
    pub fn from_trials(trials: &TrialSet, scores: Vec<T>) -> Result<Self> {
        if trials.len() != scores.len() {
            return Err(Error::Misaligned(format!(
                "{} trials but {} scores",
                trials.len(),
                scores.len()
            )));
        }
        let entries = trials
            .trials()
            .iter()
            .zip(scores)
            .map(|(t, score)| ScoreEntry {
                enroll_id: t.enroll_id.clone(),
                test_id: t.test_id.clone(),
                score,
                label: t.label,
            })
            .collect();
        ScoreSet::new(entries)
    }

    /// Labeled scores built directly from target and nontarget samples.
    pub fn from_labeled(targets: &[T], nontargets: &[T]) -> Result<Self> {
        let entries = targets
            .iter()
            .map(|&s| (s, Label::Target))
            .chain(nontargets.iter().map(|&s| (s, Label::Nontarget)))
            .enumerate()
            .map(|(i, (score, label))| ScoreEntry {
                enroll_id: format!("e{i}"),
                test_id: format!("t{i}"),
                score,
                label: Some(label),
            })
            .collect();
        ScoreSet::new(entries)
    }

    pub fn entries(&self) -> &[ScoreEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.label.is_some())
    }

    pub fn scores(&self) -> Vec<T> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// Same trials with new scores.
    pub fn with_scores(&self, scores: Vec<T>) -> Result<Self> {
        if scores.len() != self.entries.len() {
            return Err(Error::Misaligned(format!(
                "{} entries but {} scores",
                self.entries.len(),
                scores.len()
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(scores)
            .map(|(e, score)| ScoreEntry { score, ..e.clone() })
            .collect();
        ScoreSet::new(entries)
    }

    /// Target and nontarget scores; errors unless both classes are present.
    pub fn split(&self) -> Result<(Vec<T>, Vec<T>)> {
        if !self.is_labeled() {
            return Err(Error::Unlabeled);
        }
        let mut tar = Vec::new();
        let mut non = Vec::new();
        for e in &self.entries {
            match e.label {
                Some(Label::Target) => tar.push(e.score),
                _ => non.push(e.score),
            }
        }
        if tar.is_empty() || non.is_empty() {
            return Err(Error::InsufficientLabels {
                targets: tar.len(),
                nontargets: non.len(),
            });
        }
        Ok((tar, non))
    }

    /// Whether both sets list the same trials in the same order.
    pub fn aligned_with(&self, other: &ScoreSet<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.enroll_id == b.enroll_id && a.test_id == b.test_id)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (line, content) in content_lines(text) {
            let fields: Vec<&str> = content.split('\t').collect();
            let label = match fields.len() {
                3 => None,
                4 => Some(fields[3].parse::<Label>().map_err(|e| Error::parse(line, e))?),
                n => return Err(Error::parse(line, format!("expected 3 or 4 fields, found {n}"))),
            };
            entries.push(ScoreEntry {
                enroll_id: fields[0].to_string(),
                test_id: fields[1].to_string(),
                score: parse_scalar(fields[2], line)?,
                label,
            });
        }
        ScoreSet::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_to_string(path.as_ref())?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}", e.enroll_id, e.test_id, e.score));
            if let Some(l) = e.label {
                out.push('\t');
                out.push_str(l.as_str());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_string(path.as_ref(), &self.to_text())
    }
}
