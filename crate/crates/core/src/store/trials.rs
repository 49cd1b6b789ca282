use std::collections::HashSet;
use std::path::Path;

use log::warn;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{content_lines, read_to_string, write_string, EmbeddingStore, Label, Modality};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: Option<Label>,
}

impl Trial {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>, label: Option<Label>) -> Self {
        Trial {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            label,
        }
    }
}

/// Trials with unique (enroll, test) pairs, either all labeled or all unlabeled.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrialSet {
    trials: Vec<Trial>,
}

impl TrialSet {
    pub fn new(trials: Vec<Trial>) -> Result<Self> {
        let labeled = trials.iter().filter(|t| t.label.is_some()).count();
        if labeled != 0 && labeled != trials.len() {
            return Err(Error::InvalidTrials(format!(
                "{labeled} of {} trials labeled; expected all or none",
                trials.len()
            )));
        }
        let mut seen = HashSet::with_capacity(trials.len());
        for t in &trials {
            if !seen.insert((t.enroll_id.as_str(), t.test_id.as_str())) {
                return Err(Error::InvalidTrials(format!(
                    "duplicate pair {} / {}",
                    t.enroll_id, t.test_id
                )));
            }
        }
        Ok(TrialSet { trials })
    }

    pub fn empty() -> Self {
        TrialSet::default()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// True when every trial carries a label (an empty set counts as labeled).
    pub fn is_labeled(&self) -> bool {
        self.trials.iter().all(|t| t.label.is_some())
    }

    pub fn count(&self, label: Label) -> usize {
        self.trials.iter().filter(|t| t.label == Some(label)).count()
    }

    pub fn union(&self, other: &TrialSet) -> Result<TrialSet> {
        let mut all = self.trials.clone();
        all.extend(other.trials.iter().cloned());
        TrialSet::new(all)
    }

    /// Same pairs with the labels permuted at random.
    pub fn with_shuffled_labels(&self, seed: u64) -> TrialSet {
        use rand::seq::SliceRandom;
        let mut labels: Vec<Option<Label>> = self.trials.iter().map(|t| t.label).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let trials = self
            .trials
            .iter()
            .zip(labels)
            .map(|(t, label)| Trial { label, ..t.clone() })
            .collect();
        TrialSet { trials }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut trials = Vec::new();
        for (line, content) in content_lines(text) {
            let fields: Vec<&str> = content.split('\t').collect();
            let label = match fields.len() {
                2 => None,
                3 => Some(fields[2].parse::<Label>().map_err(|e| Error::parse(line, e))?),
                n => return Err(Error::parse(line, format!("expected 2 or 3 fields, found {n}"))),
            };
            trials.push(Trial::new(fields[0], fields[1], label));
        }
        TrialSet::new(trials)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_to_string(path.as_ref())?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            out.push_str(&t.enroll_id);
            out.push('\t');
            out.push_str(&t.test_id);
            if let Some(l) = t.label {
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

/// Builds labeled voice-to-face trials from a store: every same-identity
/// (voice, face) pair up to a per-identity cap as targets, plus negatives
/// drawn uniformly without replacement from the cross-identity pairs.
#[derive(Debug, Clone, Copy)]
pub struct CrossModalTrials {
    pub negatives_per_positive: usize,
    pub max_targets_per_identity: usize,
    pub seed: u64,
}

impl Default for CrossModalTrials {
    fn default() -> Self {
        CrossModalTrials {
            negatives_per_positive: 1,
            max_targets_per_identity: 50,
            seed: 0,
        }
    }
}

impl CrossModalTrials {
    pub fn build<T: Scalar>(&self, store: &EmbeddingStore<T>) -> Result<TrialSet> {
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be positive".into()));
        }
        let voices: Vec<_> = store.by_modality(Modality::Voice).collect();
        let faces: Vec<_> = store.by_modality(Modality::Face).collect();
        if voices.is_empty() || faces.is_empty() {
            return Err(Error::InsufficientData(
                "cross-modal trials need both voice and face records".into(),
            ));
        }
        if store.identities().len() < 2 {
            return Err(Error::InsufficientData(
                "cross-modal trials need at least two identities".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let voice_groups = store.group_by_identity(Modality::Voice);
        let face_groups = store.group_by_identity(Modality::Face);
        let mut trials = Vec::new();
        for (identity, vs) in &voice_groups {
            let Some(fs) = face_groups.get(identity) else {
                continue;
            };
            let n = vs.len() * fs.len();
            let chosen: Vec<usize> = if n > self.max_targets_per_identity {
                let mut picked = index::sample(&mut rng, n, self.max_targets_per_identity).into_vec();
                picked.sort_unstable();
                picked
            } else {
                (0..n).collect()
            };
            for k in chosen {
                let (v, f) = (vs[k / fs.len()], fs[k % fs.len()]);
                trials.push(Trial::new(&v.record_id, &f.record_id, Some(Label::Target)));
            }
        }

        // Cross-identity pairs per voice = all faces minus that identity's faces.
        let same_faces = |id: &str| face_groups.get(id).map_or(0, Vec::len);
        let total_cross: usize = voices
            .iter()
            .map(|v| faces.len() - same_faces(&v.identity_id))
            .sum();
        let mut wanted = trials.len() * self.negatives_per_positive;
        if wanted > total_cross {
            warn!("requested {wanted} nontarget trials but only {total_cross} cross-identity pairs exist");
            wanted = total_cross;
        }

        if 2 * wanted > total_cross {
            let mut all = Vec::with_capacity(total_cross);
            for v in &voices {
                for f in &faces {
                    if v.identity_id != f.identity_id {
                        all.push((*v, *f));
                    }
                }
            }
            for k in index::sample(&mut rng, all.len(), wanted) {
                let (v, f) = all[k];
                trials.push(Trial::new(&v.record_id, &f.record_id, Some(Label::Nontarget)));
            }
        } else {
            let mut taken = HashSet::with_capacity(wanted);
            while taken.len() < wanted {
                let vi = rng.random_range(0..voices.len());
                let fi = rng.random_range(0..faces.len());
                if voices[vi].identity_id == faces[fi].identity_id || !taken.insert((vi, fi)) {
                    continue;
                }
                trials.push(Trial::new(
                    &voices[vi].record_id,
                    &faces[fi].record_id,
                    Some(Label::Nontarget),
                ));
            }
        }
        TrialSet::new(trials)
    }
}

/// Cross-modal trials with the default per-identity target cap of 50.
pub fn build_crossmodal_trials<T: Scalar>(
    store: &EmbeddingStore<T>,
    negatives_per_positive: usize,
    rng_seed: u64,
) -> Result<TrialSet> {
    CrossModalTrials {
        negatives_per_positive,
        seed: rng_seed,
        ..CrossModalTrials::default()
    }
    .build(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::EmbeddingRecord;

    fn store(ids: usize, voices: usize, faces: usize) -> EmbeddingStore<f64> {
        let mut records = Vec::new();
        for i in 0..ids {
            for v in 0..voices {
                records.push(EmbeddingRecord::new(format!("v{i}_{v}"), format!("id{i}"), Modality::Voice, vec![1.0, i as f64]));
            }
            for f in 0..faces {
                records.push(EmbeddingRecord::new(format!("f{i}_{f}"), format!("id{i}"), Modality::Face, vec![i as f64, 1.0]));
            }
        }
        EmbeddingStore::from_records(records).unwrap()
    }

    fn identity_of<'a>(s: &'a EmbeddingStore<f64>, id: &str) -> &'a str {
        &s.get(id).unwrap().identity_id
    }

    #[test]
    fn two_identities_one_each() {
        let s = store(2, 1, 1);
        let t = build_crossmodal_trials(&s, 1, 7).unwrap();
        assert_eq!(t.count(Label::Target), 2);
        assert_eq!(t.count(Label::Nontarget), 2);
        let mut non: Vec<(String, String)> = t
            .trials()
            .iter()
            .filter(|t| t.label == Some(Label::Nontarget))
            .map(|t| (t.enroll_id.clone(), t.test_id.clone()))
            .collect();
        non.sort();
        assert_eq!(non, vec![("v0_0".into(), "f1_0".into()), ("v1_0".into(), "f0_0".into())]);
    }

    #[test]
    fn labels_agree_with_identities_and_seed_is_deterministic() {
        let s = store(6, 3, 4);
        let a = build_crossmodal_trials(&s, 2, 11).unwrap();
        let b = build_crossmodal_trials(&s, 2, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.count(Label::Target), 6 * 12);
        assert_eq!(a.count(Label::Nontarget), 2 * 6 * 12);
        for t in a.trials() {
            let same = identity_of(&s, &t.enroll_id) == identity_of(&s, &t.test_id);
            assert_eq!(same, t.label == Some(Label::Target));
            assert_eq!(s.get(&t.enroll_id).unwrap().modality, Modality::Voice);
            assert_eq!(s.get(&t.test_id).unwrap().modality, Modality::Face);
        }
        assert_ne!(a, build_crossmodal_trials(&s, 2, 12).unwrap());
    }

    #[test]
    fn target_cap_applies_per_identity() {
        let s = store(3, 10, 10);
        let t = build_crossmodal_trials(&s, 1, 1).unwrap();
        assert_eq!(t.count(Label::Target), 150);
    }

    #[test]
    fn single_identity_is_rejected() {
        let s = store(1, 2, 2);
        assert!(matches!(build_crossmodal_trials(&s, 1, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn trial_set_invariants() {
        let dup = vec![Trial::new("a", "b", None), Trial::new("a", "b", None)];
        assert!(TrialSet::new(dup).is_err());
        let mixed = vec![Trial::new("a", "b", Some(Label::Target)), Trial::new("a", "c", None)];
        assert!(TrialSet::new(mixed).is_err());
        let text = "e1\tt1\ttarget\ne1\tt2\tnontarget\n";
        let t = TrialSet::parse(text).unwrap();
        assert_eq!(TrialSet::parse(&t.to_text()).unwrap(), t);
        assert!(TrialSet::parse("e1\tt1\tmaybe\n").is_err());
    }
}
