//! End-to-end experiment: speaker and face back-ends, the voice-face network,
//! per-system scoring of enrollment/test segment trials, fusion and evaluation.
//!
//! A trial side names a *segment*. A segment is either a single record id or a
//! prefix `seg` whose records are named `seg/<anything>`; an exact record id
//! wins over the prefix reading.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::backend::{score_face_trial, score_vfnet_trial, PoolingRule, SpeakerBackend};
use crate::error::{Error, Result, StageExt};
use crate::fusion::{FusionModel, FusionTrainer};
use crate::metrics::{DcfParams, DetectionScores, MetricReport};
use crate::scalar::Scalar;
use crate::store::{CrossModalTrials, EmbeddingStore, Modality, ScoreSet, TrialSet};
use crate::synth::{AvSplitConfig, GenConfig};
use crate::train::{train, TrainConfig, TrainReport};
use crate::vfnet::VfNetParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum System {
    Audio,
    Visual,
    Vfnet,
}

impl System {
    pub const ALL: [System; 3] = [System::Audio, System::Visual, System::Vfnet];

    pub fn as_str(self) -> &'static str {
        match self {
            System::Audio => "audio",
            System::Visual => "visual",
            System::Vfnet => "vfnet",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "audio" => Ok(System::Audio),
            "visual" => Ok(System::Visual),
            "vfnet" => Ok(System::Vfnet),
            other => Err(Error::Config(format!("unknown system `{other}` (audio, visual, vfnet)"))),
        }
    }
}

/// Parses a comma-separated system list such as `audio,visual,vfnet`.
pub fn parse_systems(s: &str) -> Result<Vec<System>> {
    let mut out: Vec<System> = s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::Config("system list is empty".into()));
    }
    Ok(out)
}

/// Voice and face record indices of every segment in a store.
#[derive(Debug, Clone, Default)]
pub struct SegmentIndex {
    segments: HashMap<String, (Vec<usize>, Vec<usize>)>,
}

impl SegmentIndex {
    pub fn new<T: Scalar>(store: &EmbeddingStore<T>) -> Self {
        let mut segments: HashMap<String, (Vec<usize>, Vec<usize>)> = HashMap::new();
        for (i, r) in store.records().iter().enumerate() {
            let mut keys = vec![r.record_id.as_str()];
            if let Some((seg, _)) = r.record_id.rsplit_once('/') {
                keys.push(seg);
            }
            for k in keys {
                let entry = segments.entry(k.to_string()).or_default();
                match r.modality {
                    Modality::Voice => entry.0.push(i),
                    Modality::Face => entry.1.push(i),
                }
            }
        }
        SegmentIndex { segments }
    }

    fn lookup(&self, id: &str, modality: Modality) -> Result<&[usize]> {
        let (v, f) = self.segments.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let found = match modality {
            Modality::Voice => v,
            Modality::Face => f,
        };
        if found.is_empty() {
            return Err(Error::InvalidTrials(format!("segment `{id}` has no {modality} records")));
        }
        Ok(found)
    }

    /// Voice records of a segment.
    pub fn voices(&self, id: &str) -> Result<&[usize]> {
        self.lookup(id, Modality::Voice)
    }

    pub fn faces(&self, id: &str) -> Result<&[usize]> {
        self.lookup(id, Modality::Face)
    }
}

fn mean_vector<T: Scalar>(store: &EmbeddingStore<T>, idx: &[usize]) -> Vec<T> {
    let records = store.records();
    let mut m = vec![T::zero(); records[idx[0]].vector.len()];
    for &i in idx {
        for (a, &x) in m.iter_mut().zip(&records[i].vector) {
            *a += x;
        }
    }
    let n = T::from_count(idx.len());
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Trained models needed to score all three systems.
#[derive(Debug, Clone)]
pub struct Scorers<'a, T: Scalar> {
    pub backend: Option<&'a SpeakerBackend<T>>,
    pub vfnet: Option<&'a VfNetParams<T>>,
    pub pooling: PoolingRule<T>,
}

impl<T: Scalar> Scorers<'_, T> {
    /// Scores every trial with one system; output order follows the trial list.
    pub fn score(&self, system: System, store: &EmbeddingStore<T>, trials: &TrialSet) -> Result<ScoreSet<T>> {
        let index = SegmentIndex::new(store);
        let records = store.records();
        let faces = |idx: &[usize]| idx.iter().map(|&i| records[i].vector.as_slice()).collect::<Vec<_>>();
        let scores = trials
            .trials()
            .par_iter()
            .map(|t| match system {
                System::Audio => {
                    let backend = self.backend.ok_or(Error::Config("audio scoring needs a speaker back-end".into()))?;
                    let e = mean_vector(store, index.voices(&t.enroll_id)?);
                    let s = mean_vector(store, index.voices(&t.test_id)?);
                    backend.score(&e, &s)
                }
                System::Visual => score_face_trial(
                    &faces(index.faces(&t.enroll_id)?),
                    &faces(index.faces(&t.test_id)?),
                    &self.pooling,
                ),
                System::Vfnet => {
                    let net = self.vfnet.ok_or(Error::Config("vfnet scoring needs a network checkpoint".into()))?;
                    let e = mean_vector(store, index.voices(&t.enroll_id)?);
                    score_vfnet_trial(net, &e, &faces(index.faces(&t.test_id)?), &self.pooling)
                }
            })
            .collect::<Result<Vec<T>>>()?;
        ScoreSet::from_trials(trials, scores)
    }
}

/// Data for one experiment. Fusion is fitted on `dev`; `eval` is only scored.
#[derive(Debug, Clone)]
pub struct PipelineData<T: Scalar> {
    pub train: EmbeddingStore<T>,
    pub dev: EmbeddingStore<T>,
    pub dev_trials: TrialSet,
    pub eval: EmbeddingStore<T>,
    pub eval_trials: TrialSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings<T> {
    pub train: TrainConfig,
    pub dcf: DcfParams<T>,
    pub pooling: PoolingRule<T>,
    pub lda_dim: usize,
    pub length_norm: bool,
    pub systems: Vec<System>,
    /// Share of training identities held out for the network's early stopping.
    pub valid_fraction: f64,
    pub negatives_per_positive: usize,
    pub trial_seed: u64,
}

impl<T: Scalar> Default for PipelineSettings<T> {
    fn default() -> Self {
        PipelineSettings {
            train: TrainConfig::default(),
            dcf: DcfParams::default(),
            pooling: PoolingRule::default(),
            lda_dim: 150,
            length_norm: true,
            systems: System::ALL.to_vec(),
            valid_fraction: 0.1,
            negatives_per_positive: 1,
            trial_seed: 0,
        }
    }
}

/// One report row: a fused combination of systems.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemRow<T> {
    pub name: String,
    pub systems: Vec<System>,
    pub fusion: FusionModel<T>,
    pub eval_scores: ScoreSet<T>,
    pub metrics: MetricReport<T>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome<T: Scalar> {
    pub backend: Option<SpeakerBackend<T>>,
    pub vfnet: Option<TrainReport<T>>,
    pub dev_scores: BTreeMap<System, ScoreSet<T>>,
    pub eval_scores: BTreeMap<System, ScoreSet<T>>,
    pub rows: Vec<SystemRow<T>>,
}

/// Report rows in display order, each with its component systems.
pub fn report_layout() -> Vec<(&'static str, Vec<System>)> {
    use System::*;
    vec![
        ("audio", vec![Audio]),
        ("audio+vfnet", vec![Audio, Vfnet]),
        ("visual", vec![Visual]),
        ("visual+vfnet", vec![Visual, Vfnet]),
        ("av", vec![Audio, Visual]),
        ("av+vfnet", vec![Audio, Visual, Vfnet]),
    ]
}

impl<T: Scalar> PipelineOutcome<T> {
    pub fn row(&self, name: &str) -> Option<&SystemRow<T>> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub const TSV_HEADER: &'static str = "system\teer\tmin_dcf\tact_dcf";

    pub fn report_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::TSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.name, r.metrics.eer, r.metrics.min_dcf, r.metrics.act_dcf));
        }
        out
    }

    pub fn report_markdown(&self) -> String {
        let mut out = String::from("| system | EER (%) | minDCF | actDCF |\n|---|---:|---:|---:|\n");
        for r in &self.rows {
            let m = &r.metrics;
            out.push_str(&format!(
                "| {} | {:.2} | {:.4} | {:.4} |\n",
                r.name,
                m.eer.to_f64_lossy() * 100.0,
                m.min_dcf.to_f64_lossy(),
                m.act_dcf.to_f64_lossy()
            ));
        }
        out
    }
}

/// Splits the identities of a store into (train, held-out) stores; the last
/// `fraction` of identities in sorted order are held out.
pub fn hold_out_identities<T: Scalar>(store: &EmbeddingStore<T>, fraction: f64) -> Result<(EmbeddingStore<T>, EmbeddingStore<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("valid_fraction {fraction} outside (0, 1)")));
    }
    let ids = store.identities();
    let n_hold = ((ids.len() as f64 * fraction).round() as usize).clamp(2, ids.len().saturating_sub(2));
    if ids.len() < 4 {
        return Err(Error::InsufficientData(format!("{} identities is too few to hold some out", ids.len())));
    }
    let held: std::collections::HashSet<&str> = ids[ids.len() - n_hold..].iter().copied().collect();
    let mut keep = EmbeddingStore::new();
    let mut out = EmbeddingStore::new();
    for r in store.records() {
        if held.contains(r.identity_id.as_str()) {
            out.push(r.clone())?;
        } else {
            keep.push(r.clone())?;
        }
    }
    Ok((keep, out))
}

/// Fits everything on `train` and `dev`, then reports every combination of
/// the configured systems on `eval`.
pub fn run_pipeline<T: Scalar>(data: &PipelineData<T>, settings: &PipelineSettings<T>) -> Result<PipelineOutcome<T>> {
    if settings.systems.is_empty() {
        return Err(Error::Config("no systems to evaluate".into()));
    }
    settings.dcf.validate()?;
    let wants = |s| settings.systems.contains(&s);

    let backend = if wants(System::Audio) {
        log::info!("fitting speaker back-end");
        let (b, fit) = SpeakerBackend::fit(&data.train, settings.lda_dim, settings.length_norm).stage("fit-backend")?;
        log::info!("PLDA EM ran {} iterations", fit.log_likelihood.len() - 1);
        Some(b)
    } else {
        None
    };

    let vfnet = if wants(System::Vfnet) {
        log::info!("training voice-face network");
        Some(train_network(&data.train, settings).stage("train-vfnet")?)
    } else {
        None
    };

    let scorers = Scorers {
        backend: backend.as_ref(),
        vfnet: vfnet.as_ref().map(|r| &r.final_params),
        pooling: settings.pooling,
    };
    let mut dev_scores = BTreeMap::new();
    let mut eval_scores = BTreeMap::new();
    for &s in &settings.systems {
        log::info!("scoring {s}");
        dev_scores.insert(s, scorers.score(s, &data.dev, &data.dev_trials).stage("score")?);
        eval_scores.insert(s, scorers.score(s, &data.eval, &data.eval_trials).stage("score")?);
    }

    let mut rows = Vec::new();
    for (name, systems) in report_layout() {
        if !systems.iter().all(|s| wants(*s)) {
            continue;
        }
        let dev: Vec<ScoreSet<T>> = systems.iter().map(|s| dev_scores[s].clone()).collect();
        let eval: Vec<ScoreSet<T>> = systems.iter().map(|s| eval_scores[s].clone()).collect();
        let fusion = FusionTrainer::default().fit(&dev, &settings.dcf).stage("fuse")?;
        let fused = fusion.apply(&eval).stage("fuse")?;
        let metrics = DetectionScores::from_score_set(&fused).stage("eval")?.report(&settings.dcf);
        rows.push(SystemRow {
            name: name.to_string(),
            systems,
            fusion,
            eval_scores: fused,
            metrics,
        });
    }
    Ok(PipelineOutcome {
        backend,
        vfnet,
        dev_scores,
        eval_scores,
        rows,
    })
}

/// Trains the network on cross-modal trials from the training store, holding
/// out some identities for validation.
pub fn train_network<T: Scalar>(store: &EmbeddingStore<T>, settings: &PipelineSettings<T>) -> Result<TrainReport<T>> {
    let (fit, held) = hold_out_identities(store, settings.valid_fraction)?;
    let builder = CrossModalTrials {
        negatives_per_positive: settings.negatives_per_positive,
        seed: settings.trial_seed,
        ..CrossModalTrials::default()
    };
    let train_trials = builder.build(&fit)?;
    let valid_trials = CrossModalTrials { seed: settings.trial_seed.wrapping_add(1), ..builder }.build(&held)?;
    train(&fit.merged(&held)?, &train_trials, &valid_trials, &settings.train)
}

/// Generator settings for a fully synthetic experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticExperiment {
    pub generator: GenConfig,
    pub split: AvSplitConfig,
}

impl Default for SyntheticExperiment {
    fn default() -> Self {
        SyntheticExperiment {
            generator: GenConfig {
                sigma: 1.0,
                test_identities: 0,
                ..GenConfig::default()
            },
            split: AvSplitConfig::default(),
        }
    }
}

impl SyntheticExperiment {
    /// Training identities plus independent dev and eval splits.
    pub fn generate<T: Scalar>(&self) -> Result<PipelineData<T>> {
        let data = crate::synth::generate::<T>(&self.generator)?;
        let (dev, dev_trials) = data.truth.generate_av_split(&self.split, "dev", 1)?;
        let (eval, eval_trials) = data.truth.generate_av_split(&self.split, "eval", 2)?;
        Ok(PipelineData {
            train: data.train,
            dev,
            dev_trials,
            eval,
            eval_trials,
        })
    }
}
