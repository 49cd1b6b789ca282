//! Mini-batch training of [`VfNetParams`] on labeled cross-modal trials.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::metrics::DetectionScores;
use crate::scalar::Scalar;
use crate::store::{content_lines, read_to_string, write_string, EmbeddingStore, Label, Modality, Trial, TrialSet};
use crate::vfnet::pair_grad_accumulate;
use crate::vfnet::{Architecture, VfNetParams};

/// Pairs per gradient work unit. Partial sums are combined in chunk order, so
/// results do not depend on the number of threads.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Sgd => f.write_str("sgd"),
            Optimizer::Adam { beta1, beta2, epsilon } => write!(f, "adam({beta1},{beta2},{epsilon})"),
        }
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    /// Accepts `sgd`, `adam` or `adam(beta1,beta2,epsilon)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("invalid optimizer `{s}`"));
        if s == "sgd" {
            return Ok(Optimizer::Sgd);
        }
        if s == "adam" {
            return Ok(Optimizer::ADAM);
        }
        let inner = s
            .strip_prefix("adam(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let v: Vec<f64> = inner
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let [beta1, beta2, epsilon] = v[..] else {
            return Err(bad());
        };
        let o = Optimizer::Adam { beta1, beta2, epsilon };
        o.validate()?;
        Ok(o)
    }
}

impl Optimizer {
    fn validate(&self) -> Result<()> {
        if let Optimizer::Adam { beta1, beta2, epsilon } = *self {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !(unit(beta1) && unit(beta2) && epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::Config(format!("adam needs betas in [0, 1) and epsilon > 0, got {self}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a lower validation EER tolerated before
    /// stopping; zero behaves like one.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            optimizer: Optimizer::ADAM,
        }
    }
}

pub const CONFIG_KEYS: [&str; 6] = ["lr", "batch_size", "max_epochs", "patience", "seed", "optimizer"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        self.optimizer.validate()
    }

    /// Overrides the defaults with whichever of [`CONFIG_KEYS`] are present.
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = TrainConfig::default();
        let optimizer = match c.get("optimizer") {
            Some(s) => s.parse()?,
            None => d.optimizer,
        };
        let t = TrainConfig {
            learning_rate: c.parsed_or("lr", d.learning_rate)?,
            batch_size: c.parsed_or("batch_size", d.batch_size)?,
            max_epochs: c.parsed_or("max_epochs", d.max_epochs)?,
            patience: c.parsed_or("patience", d.patience)?,
            seed: c.parsed_or("seed", d.seed)?,
            optimizer,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_flat(&self) -> FlatConfig {
        let mut c = FlatConfig::default();
        c.set("lr", self.learning_rate.to_string());
        c.set("batch_size", self.batch_size.to_string());
        c.set("max_epochs", self.max_epochs.to_string());
        c.set("patience", self.patience.to_string());
        c.set("seed", self.seed.to_string());
        c.set("optimizer", self.optimizer.to_string());
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats<T> {
    pub train_loss: T,
    pub validation_eer: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    pub epochs: Vec<EpochStats<T>>,
    /// Index into `epochs` of the lowest validation EER (earliest on ties).
    pub best_epoch: usize,
    /// Parameters at the end of `best_epoch`.
    pub final_params: VfNetParams<T>,
}

impl<T: Scalar> TrainReport<T> {
    pub fn best(&self) -> EpochStats<T> {
        self.epochs[self.best_epoch]
    }

    /// One row per epoch (1-based), preceded by a header and a `# best_epoch` line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# best_epoch\t{}\nepoch\ttrain_loss\tvalidation_eer\n", self.best_epoch + 1);
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\n", i + 1, e.train_loss, e.validation_eer));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_string(path.as_ref(), &self.to_tsv())
    }
}

/// Per-epoch rows of a saved report, as `(train_loss, validation_eer)`.
pub fn load_report_epochs<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<(T, T)>> {
    let text = read_to_string(path.as_ref())?;
    let mut rows = Vec::new();
    for (line, content) in content_lines(&text) {
        if content.starts_with("epoch") {
            continue;
        }
        let f: Vec<&str> = content.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::parse(line, "expected 3 tab-separated fields"));
        }
        let num = |s: &str| s.parse::<T>().map_err(|_| Error::parse(line, format!("invalid number `{s}`")));
        rows.push((num(f[1])?, num(f[2])?));
    }
    Ok(rows)
}

/// A trial resolved to store indices of its voice and face records.
#[derive(Debug, Clone, Copy)]
struct Pair {
    voice: usize,
    face: usize,
    label: Label,
    trial: usize,
}

/// Indices of the voice and face records of a cross-modal trial, in either order.
pub fn voice_face_indices<T: Scalar>(store: &EmbeddingStore<T>, trial: &Trial) -> Result<(usize, usize)> {
    let a = store.index_of(&trial.enroll_id)?;
    let b = store.index_of(&trial.test_id)?;
    let ma = store.records()[a].modality;
    let mb = store.records()[b].modality;
    match (ma, mb) {
        (Modality::Voice, Modality::Face) => Ok((a, b)),
        (Modality::Face, Modality::Voice) => Ok((b, a)),
        _ => Err(Error::InvalidTrials(format!(
            "trial {} {} is not a voice/face pair",
            trial.enroll_id, trial.test_id
        ))),
    }
}

fn resolve<T: Scalar>(store: &EmbeddingStore<T>, trials: &TrialSet) -> Result<Vec<Pair>> {
    if !trials.is_labeled() {
        return Err(Error::Unlabeled);
    }
    trials
        .trials()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (voice, face) = voice_face_indices(store, t)?;
            Ok(Pair {
                voice,
                face,
                label: t.label.expect("checked labeled"),
                trial: i,
            })
        })
        .collect()
}

/// Validation EER of `params` using `p_same` as the score.
pub fn validation_eer<T: Scalar>(params: &VfNetParams<T>, store: &EmbeddingStore<T>, trials: &TrialSet) -> Result<T> {
    let pairs = resolve(store, trials)?;
    eer_of(params, store, &pairs)
}

fn eer_of<T: Scalar>(params: &VfNetParams<T>, store: &EmbeddingStore<T>, pairs: &[Pair]) -> Result<T> {
    let records = store.records();
    let scores: Vec<(T, Label)> = pairs
        .par_iter()
        .map(|p| Ok((params.score(&records[p.voice].vector, &records[p.face].vector)?.p_same, p.label)))
        .collect::<Result<_>>()?;
    let (tar, non): (Vec<_>, Vec<_>) = scores.into_iter().partition(|(_, l)| l.is_target());
    let tar = tar.into_iter().map(|(s, _)| s).collect();
    let non = non.into_iter().map(|(s, _)| s).collect();
    Ok(DetectionScores::new(tar, non)?.eer())
}

struct AdamState<T> {
    m: VfNetParams<T>,
    v: VfNetParams<T>,
    step: i32,
}

fn apply_update<T: Scalar>(
    params: &mut VfNetParams<T>,
    grad: &VfNetParams<T>,
    config: &TrainConfig,
    adam: &mut Option<AdamState<T>>,
) {
    let lr = T::lit(config.learning_rate);
    match config.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.slices_mut().into_iter().zip(grad.slices()) {
                for (p, &g) in p.iter_mut().zip(g) {
                    *p -= lr * g;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            let state = adam.get_or_insert_with(|| AdamState {
                m: params.zeros_like(),
                v: params.zeros_like(),
                step: 0,
            });
            state.step += 1;
            let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(epsilon));
            let one = T::one();
            let c1 = one - T::lit(beta1.powi(state.step));
            let c2 = one - T::lit(beta2.powi(state.step));
            let slices = params
                .slices_mut()
                .into_iter()
                .zip(grad.slices())
                .zip(state.m.slices_mut())
                .zip(state.v.slices_mut());
            for (((p, g), m), v) in slices {
                for i in 0..p.len() {
                    let g = g[i];
                    m[i] = b1 * m[i] + (one - b1) * g;
                    v[i] = b2 * v[i] + (one - b2) * g * g;
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    p[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// Interleaves shuffled targets and nontargets so any even-sized batch is
/// balanced. The shorter class wraps around to match the longer one.
fn epoch_order(targets: &[usize], nontargets: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut t = targets.to_vec();
    let mut n = nontargets.to_vec();
    t.shuffle(rng);
    n.shuffle(rng);
    if t.is_empty() {
        return n;
    }
    if n.is_empty() {
        return t;
    }
    let len = t.len().max(n.len());
    let mut order = Vec::with_capacity(2 * len);
    for i in 0..len {
        order.push(t[i % t.len()]);
        order.push(n[i % n.len()]);
    }
    order
}

/// Trains from a fresh Glorot initialization drawn from `config.seed`.
pub fn train<T: Scalar>(
    store: &EmbeddingStore<T>,
    train_trials: &TrialSet,
    valid_trials: &TrialSet,
    config: &TrainConfig,
) -> Result<TrainReport<T>> {
    let arch = Architecture::with_inputs(dim_of(store, Modality::Voice)?, dim_of(store, Modality::Face)?);
    train_with_architecture(arch, store, train_trials, valid_trials, config)
}

pub fn train_with_architecture<T: Scalar>(
    arch: Architecture,
    store: &EmbeddingStore<T>,
    train_trials: &TrialSet,
    valid_trials: &TrialSet,
    config: &TrainConfig,
) -> Result<TrainReport<T>> {
    train_from(VfNetParams::init(arch, config.seed), store, train_trials, valid_trials, config)
}

/// Continues training from `params` on the union of the base and extra data.
pub fn retrain_with_extra<T: Scalar>(
    params: VfNetParams<T>,
    store: &EmbeddingStore<T>,
    trials: &TrialSet,
    store_extra: &EmbeddingStore<T>,
    trials_extra: &TrialSet,
    valid_trials: &TrialSet,
    config: &TrainConfig,
) -> Result<TrainReport<T>> {
    let merged = store.merged(store_extra)?;
    let union = trials.union(trials_extra)?;
    train_from(params, &merged, &union, valid_trials, config)
}

fn dim_of<T: Scalar>(store: &EmbeddingStore<T>, modality: Modality) -> Result<usize> {
    store
        .by_modality(modality)
        .next()
        .map(|r| r.vector.len())
        .ok_or(Error::Empty(match modality {
            Modality::Voice => "voice embeddings",
            Modality::Face => "face embeddings",
        }))
}

/// The training loop proper; `train` and `retrain_with_extra` differ only in
/// the starting point and the data they pass here.
pub fn train_from<T: Scalar>(
    mut params: VfNetParams<T>,
    store: &EmbeddingStore<T>,
    train_trials: &TrialSet,
    valid_trials: &TrialSet,
    config: &TrainConfig,
) -> Result<TrainReport<T>> {
    config.validate()?;
    let pairs = resolve(store, train_trials)?;
    if pairs.is_empty() {
        return Err(Error::Empty("training trials"));
    }
    let valid = resolve(store, valid_trials)?;
    let records = store.records();
    for p in pairs.iter().chain(&valid) {
        let arch = params.architecture();
        for (idx, want) in [(p.voice, arch.voice_dim), (p.face, arch.face_dim)] {
            if records[idx].vector.len() != want {
                return Err(Error::DimensionMismatch {
                    context: "trial embedding vs network input",
                    expected: want,
                    found: records[idx].vector.len(),
                });
            }
        }
    }
    let targets: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].label.is_target()).collect();
    let nontargets: Vec<usize> = (0..pairs.len()).filter(|&i| !pairs[i].label.is_target()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = None;
    let n_chunks = config.batch_size.div_ceil(CHUNK);
    let mut partial: Vec<(T, VfNetParams<T>)> = (0..n_chunks).map(|_| (T::zero(), params.zeros_like())).collect();
    let mut grad = params.zeros_like();

    let mut epochs = Vec::new();
    let mut best: Option<(usize, T, VfNetParams<T>)> = None;
    let mut stall = 0;
    for epoch in 0..config.max_epochs {
        let order = epoch_order(&targets, &nontargets, &mut rng);
        let mut loss_sum = T::zero();
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let used = batch.len().div_ceil(CHUNK);
            let current = &params;
            partial[..used]
                .par_iter_mut()
                .zip(batch.par_chunks(CHUNK))
                .try_for_each(|((loss, g), chunk)| -> std::result::Result<(), usize> {
                    *loss = T::zero();
                    for s in g.slices_mut() {
                        s.fill(T::zero());
                    }
                    for &i in chunk {
                        let p = &pairs[i];
                        // A zero-norm branch output leaves the loss undefined; report it like a non-finite one.
                        match pair_grad_accumulate(current, &records[p.voice].vector, &records[p.face].vector, p.label, g) {
                            Ok(l) if l.is_finite() => *loss += l,
                            _ => return Err(i),
                        }
                    }
                    Ok(())
                })
                .map_err(|i| {
                    let t = &train_trials.trials()[pairs[i].trial];
                    Error::NonFiniteLoss {
                        epoch: epoch + 1,
                        batch: b + 1,
                        enroll_id: t.enroll_id.clone(),
                        test_id: t.test_id.clone(),
                    }
                })?;
            for s in grad.slices_mut() {
                s.fill(T::zero());
            }
            for (loss, g) in &partial[..used] {
                loss_sum += *loss;
                grad.add_assign(g);
            }
            grad.scale(T::one() / T::from_count(batch.len()));
            apply_update(&mut params, &grad, config, &mut adam);
        }
        let train_loss = loss_sum / T::from_count(order.len());
        let validation_eer = eer_of(&params, store, &valid)?;
        log::info!("epoch {}: train loss {train_loss:.6}, validation EER {validation_eer:.5}", epoch + 1);
        epochs.push(EpochStats { train_loss, validation_eer });
        match &best {
            Some((_, eer, _)) if validation_eer >= *eer => {
                stall += 1;
                if stall >= config.patience.max(1) {
                    log::info!("stopping after {} epochs without improvement", stall);
                    break;
                }
            }
            _ => {
                best = Some((epoch, validation_eer, params.clone()));
                stall = 0;
            }
        }
    }
    let (best_epoch, _, final_params) = best.expect("at least one epoch runs");
    Ok(TrainReport {
        epochs,
        best_epoch,
        final_params,
    })
}
