//! `vfnet`: command-line front end for the audio-visual verification stack.
//!
//! Every subcommand reads an optional flat `key = value` file given with
//! `--config`; flags given on the command line override the file. Exit status
//! is 0 on success, 1 for invalid input and 2 when a run fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vfnet_core::backend::{PoolingRule, SpeakerBackend};
use vfnet_core::config::FlatConfig;
use vfnet_core::fusion::{FusionModel, FusionTrainer};
use vfnet_core::metrics::{DcfParams, DetectionScores, MetricReport};
use vfnet_core::pipeline::{parse_systems, run_pipeline, PipelineData, PipelineSettings, Scorers, SyntheticExperiment, System};
use vfnet_core::store::CrossModalTrials;
use vfnet_core::synth::{generate, save_ground_truth, AvSplitConfig, GenConfig};
use vfnet_core::train::{self, TrainConfig};
use vfnet_core::vfnet::VfNetParams;
use vfnet_core::{Embeddings, Error, Result, Scores, TrialSet};

#[derive(Parser)]
#[command(name = "vfnet", version, about = "Voice-face cross-modal verification, back-ends, fusion and evaluation")]
struct Cli {
    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic voice and face embeddings with a known identity space
    Synth(SynthArgs),
    /// Train the voice-face network on labeled cross-modal trials
    TrainVfnet(TrainArgs),
    /// Fit the LDA + PLDA speaker back-end on voice embeddings
    FitBackend(BackendArgs),
    /// Score a trial list with one system
    Score(ScoreArgs),
    /// Fit score fusion on development scores and apply it
    Fuse(FuseArgs),
    /// Compute EER, AUC, minDCF and actDCF of a labeled score file
    Eval(EvalArgs),
    /// Run back-ends, network training, scoring, fusion and evaluation end to end
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Flat key = value file with any of the flags below (underscored names)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for train.emb, test.emb, their trial lists and ground_truth.conf
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Identity-space dimension
    #[arg(long)]
    d_id: Option<usize>,
    /// Voice embedding dimension
    #[arg(long)]
    d_voice: Option<usize>,
    /// Face embedding dimension (must equal the voice dimension)
    #[arg(long)]
    d_face: Option<usize>,
    /// Identities in the training store
    #[arg(long)]
    train_identities: Option<usize>,
    /// Identities in the test store
    #[arg(long)]
    test_identities: Option<usize>,
    /// Voice sessions per identity
    #[arg(long)]
    voice_sessions: Option<usize>,
    /// Face sessions per identity
    #[arg(long)]
    face_sessions: Option<usize>,
    /// Session noise standard deviation
    #[arg(long)]
    sigma: Option<f64>,
    /// Generator seed
    #[arg(long)]
    seed: Option<u64>,
    /// Also write dev and eval enrollment/test splits (dev.emb, dev.trials, eval.emb, eval.trials)
    #[arg(long)]
    av_splits: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Embedding store holding every record the trial lists reference
    #[arg(long)]
    store: Option<PathBuf>,
    /// Labeled voice/face training trials
    #[arg(long)]
    trials: Option<PathBuf>,
    /// Labeled validation trials used for early stopping
    #[arg(long)]
    valid_trials: Option<PathBuf>,
    /// Extra store holding validation records, merged with --store
    #[arg(long)]
    valid_store: Option<PathBuf>,
    /// Continue from this network checkpoint instead of a fresh initialization
    #[arg(long)]
    init: Option<PathBuf>,
    /// Additional store to train on, merged with --store (requires --init)
    #[arg(long)]
    extra_store: Option<PathBuf>,
    /// Additional labeled trials over --extra-store
    #[arg(long)]
    extra_trials: Option<PathBuf>,
    /// Output network checkpoint
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output per-epoch report (TSV)
    #[arg(long)]
    report: Option<PathBuf>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Epochs without a lower validation EER before stopping
    #[arg(long)]
    patience: Option<usize>,
    /// Initialization and shuffling seed
    #[arg(long)]
    seed: Option<u64>,
    /// sgd, adam or adam(beta1,beta2,epsilon)
    #[arg(long)]
    optimizer: Option<String>,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training embeddings; voice records are used, grouped by identity
    #[arg(long)]
    store: Option<PathBuf>,
    /// Output back-end checkpoint
    #[arg(long)]
    out: Option<PathBuf>,
    /// LDA output dimension (clipped to identities - 1 and input dimension)
    #[arg(long)]
    lda_dim: Option<usize>,
    /// Length-normalize projected vectors before PLDA (true or false)
    #[arg(long)]
    length_norm: Option<bool>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// audio, visual or vfnet
    #[arg(long)]
    system: Option<String>,
    /// Embeddings of every enrollment and test segment
    #[arg(long)]
    store: Option<PathBuf>,
    /// Trial list of segment or record ids
    #[arg(long)]
    trials: Option<PathBuf>,
    /// Back-end checkpoint (audio) or network checkpoint (vfnet)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Share of the best per-face scores averaged (visual, vfnet)
    #[arg(long)]
    pooling_fraction: Option<f64>,
    /// Output score file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled development score files, one per system (repeat; config: comma-separated)
    #[arg(long)]
    dev: Vec<PathBuf>,
    /// Evaluation score files in the same system order (repeat; config: comma-separated)
    #[arg(long)]
    eval: Vec<PathBuf>,
    /// Apply this fusion model instead of fitting one
    #[arg(long)]
    model: Option<PathBuf>,
    /// Where to write the fitted fusion model
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Output fused evaluation scores
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    p_target: Option<f64>,
    #[arg(long)]
    c_miss: Option<f64>,
    #[arg(long)]
    c_fa: Option<f64>,
    /// L2 penalty on the fusion weights
    #[arg(long)]
    l2: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled score file
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    p_target: Option<f64>,
    #[arg(long)]
    c_miss: Option<f64>,
    #[arg(long)]
    c_fa: Option<f64>,
    /// Write ROC/DET operating points (threshold, p_miss, p_fa) here
    #[arg(long)]
    det_out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline keys, training keys (lr, batch_size, ...) and `synth.`-prefixed generator keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generate all data synthetically instead of reading stores
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    train_store: Option<PathBuf>,
    #[arg(long)]
    dev_store: Option<PathBuf>,
    #[arg(long)]
    dev_trials: Option<PathBuf>,
    #[arg(long)]
    eval_store: Option<PathBuf>,
    #[arg(long)]
    eval_trials: Option<PathBuf>,
    /// Directory for models, scores and report.tsv
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated subset of audio,visual,vfnet
    #[arg(long)]
    systems: Option<String>,
    #[arg(long)]
    lda_dim: Option<usize>,
    #[arg(long)]
    length_norm: Option<bool>,
    #[arg(long)]
    pooling_fraction: Option<f64>,
    #[arg(long)]
    p_target: Option<f64>,
    #[arg(long)]
    c_miss: Option<f64>,
    #[arg(long)]
    c_fa: Option<f64>,
    /// Print the report as a Markdown table instead of TSV
    #[arg(long)]
    markdown: bool,
}

/// Config file contents with command-line overrides applied.
struct Settings(FlatConfig);

impl Settings {
    fn new(config: &Option<PathBuf>, allowed: &[&str], overrides: Vec<(&str, Option<String>)>) -> Result<Self> {
        let mut flat = match config {
            Some(p) => FlatConfig::load(p)?,
            None => FlatConfig::default(),
        };
        flat.check_keys(allowed)?;
        for (k, v) in overrides {
            if let Some(v) = v {
                flat.set(k, v);
            }
        }
        Ok(Settings(flat))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.0.get(key).map(PathBuf::from)
    }

    fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::Config(format!("missing `--{}`", key.replace('_', "-"))))
    }

    fn paths(&self, key: &str) -> Vec<PathBuf> {
        self.0
            .get(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect())
            .unwrap_or_default()
    }

    fn dcf(&self) -> Result<DcfParams<f64>> {
        let d = DcfParams::default();
        DcfParams::new(
            self.0.parsed_or("p_target", d.p_target)?,
            self.0.parsed_or("c_miss", d.c_miss)?,
            self.0.parsed_or("c_fa", d.c_fa)?,
        )
    }

    fn pooling(&self) -> Result<PoolingRule<f64>> {
        match self.0.parsed::<f64>("pooling_fraction")? {
            Some(f) => PoolingRule::new(f),
            None => Ok(PoolingRule::default()),
        }
    }
}

fn s<V: ToString>(v: &Option<V>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn p(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn joined(v: &[PathBuf]) -> Option<String> {
    (!v.is_empty()).then(|| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

const DCF_KEYS: [&str; 3] = ["p_target", "c_miss", "c_fa"];

fn synth(a: &SynthArgs) -> Result<()> {
    let mut allowed = GenConfig::keys().to_vec();
    allowed.extend(["out_dir", "av_splits"]);
    let set = Settings::new(
        &a.config,
        &allowed,
        vec![
            ("out_dir", p(&a.out_dir)),
            ("d_id", s(&a.d_id)),
            ("d_voice", s(&a.d_voice)),
            ("d_face", s(&a.d_face)),
            ("train_identities", s(&a.train_identities)),
            ("test_identities", s(&a.test_identities)),
            ("voice_sessions", s(&a.voice_sessions)),
            ("face_sessions", s(&a.face_sessions)),
            ("sigma", s(&a.sigma)),
            ("seed", s(&a.seed)),
            ("av_splits", a.av_splits.then(|| "true".to_string())),
        ],
    )?;
    let out = set.require_path("out_dir")?;
    let config = GenConfig::from_flat(&set.0)?;
    let data = generate::<f64>(&config)?;
    create_dir(&out)?;
    data.train.save(out.join("train.emb"))?;
    data.test.save(out.join("test.emb"))?;
    save_ground_truth(&config, out.join("ground_truth.conf"))?;
    let builder = CrossModalTrials { seed: config.seed, ..CrossModalTrials::default() };
    if config.train_identities >= 2 {
        builder.build(&data.train)?.save(out.join("train.trials"))?;
    }
    if config.test_identities >= 2 {
        builder.build(&data.test)?.save(out.join("test.trials"))?;
    }
    if set.0.parsed_or("av_splits", false)? {
        let split = AvSplitConfig::default();
        for (name, seed) in [("dev", 1), ("eval", 2)] {
            let (store, trials) = data.truth.generate_av_split(&split, name, seed)?;
            store.save(out.join(format!("{name}.emb")))?;
            trials.save(out.join(format!("{name}.trials")))?;
        }
    }
    println!("wrote {} train and {} test records to {}", data.train.len(), data.test.len(), out.display());
    Ok(())
}

fn train_vfnet(a: &TrainArgs) -> Result<()> {
    let mut allowed = train::CONFIG_KEYS.to_vec();
    allowed.extend([
        "store",
        "trials",
        "valid_trials",
        "valid_store",
        "init",
        "extra_store",
        "extra_trials",
        "out",
        "report",
    ]);
    let set = Settings::new(
        &a.config,
        &allowed,
        vec![
            ("store", p(&a.store)),
            ("trials", p(&a.trials)),
            ("valid_trials", p(&a.valid_trials)),
            ("valid_store", p(&a.valid_store)),
            ("init", p(&a.init)),
            ("extra_store", p(&a.extra_store)),
            ("extra_trials", p(&a.extra_trials)),
            ("out", p(&a.out)),
            ("report", p(&a.report)),
            ("lr", s(&a.lr)),
            ("batch_size", s(&a.batch_size)),
            ("max_epochs", s(&a.max_epochs)),
            ("patience", s(&a.patience)),
            ("seed", s(&a.seed)),
            ("optimizer", a.optimizer.clone()),
        ],
    )?;
    let config = TrainConfig::from_flat(&set.0)?;
    let out = set.require_path("out")?;
    let mut store = Embeddings::load(set.require_path("store")?)?;
    let trials = TrialSet::load(set.require_path("trials")?)?;
    let valid = TrialSet::load(set.require_path("valid_trials")?)?;
    if let Some(vs) = set.path("valid_store") {
        store = store.merged(&Embeddings::load(vs)?)?;
    }
    let report = match (set.path("init"), set.path("extra_store"), set.path("extra_trials")) {
        (Some(init), Some(es), Some(et)) => {
            let params = VfNetParams::load(init)?;
            let extra = Embeddings::load(es)?;
            let extra_trials = TrialSet::load(et)?;
            train::retrain_with_extra(params, &store, &trials, &extra, &extra_trials, &valid, &config)?
        }
        (_, Some(_), None) | (_, None, Some(_)) => {
            return Err(Error::Config("--extra-store and --extra-trials go together".into()));
        }
        (None, Some(_), Some(_)) => {
            return Err(Error::Config("--extra-store needs --init".into()));
        }
        (Some(init), None, None) => train::train_from(VfNetParams::load(init)?, &store, &trials, &valid, &config)?,
        (None, None, None) => train::train(&store, &trials, &valid, &config)?,
    };
    report.final_params.save(&out)?;
    if let Some(r) = set.path("report") {
        report.save(r)?;
    }
    let best = report.best();
    println!(
        "best epoch {} of {}: train loss {}, validation EER {}",
        report.best_epoch + 1,
        report.epochs.len(),
        best.train_loss,
        best.validation_eer
    );
    Ok(())
}

fn fit_backend(a: &BackendArgs) -> Result<()> {
    let set = Settings::new(
        &a.config,
        &["store", "out", "lda_dim", "length_norm"],
        vec![
            ("store", p(&a.store)),
            ("out", p(&a.out)),
            ("lda_dim", s(&a.lda_dim)),
            ("length_norm", s(&a.length_norm)),
        ],
    )?;
    let out = set.require_path("out")?;
    let store = Embeddings::load(set.require_path("store")?)?;
    let lda_dim = set.0.parsed_or("lda_dim", 150usize)?;
    let length_norm = set.0.parsed_or("length_norm", true)?;
    let (backend, fit) = SpeakerBackend::fit(&store, lda_dim, length_norm)?;
    backend.save(&out)?;
    println!(
        "LDA {} -> {}, PLDA log-likelihood {} after {} EM iterations",
        backend.lda.input_dim(),
        backend.lda.output_dim(),
        fit.log_likelihood.last().copied().unwrap_or(f64::NAN),
        fit.log_likelihood.len().saturating_sub(1)
    );
    Ok(())
}

fn score(a: &ScoreArgs) -> Result<()> {
    let set = Settings::new(
        &a.config,
        &["system", "store", "trials", "model", "pooling_fraction", "out"],
        vec![
            ("system", a.system.clone()),
            ("store", p(&a.store)),
            ("trials", p(&a.trials)),
            ("model", p(&a.model)),
            ("pooling_fraction", s(&a.pooling_fraction)),
            ("out", p(&a.out)),
        ],
    )?;
    let system: System = set.0.get("system").ok_or_else(|| Error::Config("missing `--system`".into()))?.parse()?;
    let out = set.require_path("out")?;
    let store = Embeddings::load(set.require_path("store")?)?;
    let trials = TrialSet::load(set.require_path("trials")?)?;
    let pooling = set.pooling()?;
    let (backend, net) = match system {
        System::Audio => (Some(SpeakerBackend::load(set.require_path("model")?)?), None),
        System::Vfnet => (None, Some(VfNetParams::load(set.require_path("model")?)?)),
        System::Visual => (None, None),
    };
    let scorers = Scorers {
        backend: backend.as_ref(),
        vfnet: net.as_ref(),
        pooling,
    };
    let scores = scorers.score(system, &store, &trials)?;
    scores.save(&out)?;
    println!("wrote {} {system} scores to {}", scores.len(), out.display());
    Ok(())
}

fn fuse(a: &FuseArgs) -> Result<()> {
    let mut allowed = vec!["dev", "eval", "model", "model_out", "out", "l2"];
    allowed.extend(DCF_KEYS);
    let set = Settings::new(
        &a.config,
        &allowed,
        vec![
            ("dev", joined(&a.dev)),
            ("eval", joined(&a.eval)),
            ("model", p(&a.model)),
            ("model_out", p(&a.model_out)),
            ("out", p(&a.out)),
            ("p_target", s(&a.p_target)),
            ("c_miss", s(&a.c_miss)),
            ("c_fa", s(&a.c_fa)),
            ("l2", s(&a.l2)),
        ],
    )?;
    let eval: Vec<Scores> = set.paths("eval").into_iter().map(Scores::load).collect::<Result<_>>()?;
    let model = match set.path("model") {
        Some(m) => FusionModel::load(m)?,
        None => {
            let dev: Vec<Scores> = set.paths("dev").into_iter().map(Scores::load).collect::<Result<_>>()?;
            if dev.is_empty() {
                return Err(Error::Config("fitting needs at least one `--dev` score file (or pass `--model`)".into()));
            }
            let trainer = FusionTrainer {
                l2: set.0.parsed_or("l2", 0.0)?,
                ..FusionTrainer::default()
            };
            let model = trainer.fit(&dev, &set.dcf()?)?;
            if let Some(path) = set.path("model_out") {
                model.save(path)?;
            }
            model
        }
    };
    println!("weights {:?} bias {}", model.weights, model.bias);
    if !eval.is_empty() {
        let out = set.require_path("out")?;
        model.apply(&eval)?.save(&out)?;
        println!("wrote fused scores to {}", out.display());
    } else if set.path("out").is_some() {
        return Err(Error::Config("`--out` needs `--eval` score files".into()));
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut allowed = vec!["scores", "det_out"];
    allowed.extend(DCF_KEYS);
    let set = Settings::new(
        &a.config,
        &allowed,
        vec![
            ("scores", p(&a.scores)),
            ("p_target", s(&a.p_target)),
            ("c_miss", s(&a.c_miss)),
            ("c_fa", s(&a.c_fa)),
            ("det_out", p(&a.det_out)),
        ],
    )?;
    let scores = Scores::load(set.require_path("scores")?)?;
    let detection = DetectionScores::from_score_set(&scores)?;
    let report = detection.report(&set.dcf()?);
    println!("#{}", MetricReport::<f64>::TSV_HEADER);
    println!("{}", report.tsv_row());
    if let Some(path) = set.path("det_out") {
        let mut text = String::from("threshold\tp_miss\tp_fa\n");
        for pt in detection.roc_points() {
            text.push_str(&format!("{}\t{}\t{}\n", pt.threshold, pt.p_miss, pt.p_fa));
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

const PIPELINE_KEYS: [&str; 16] = [
    "synthetic",
    "train_store",
    "dev_store",
    "dev_trials",
    "eval_store",
    "eval_trials",
    "out_dir",
    "systems",
    "lda_dim",
    "length_norm",
    "pooling_fraction",
    "valid_fraction",
    "negatives_per_positive",
    "trial_seed",
    "p_target",
    "c_miss",
];

fn pipeline(a: &PipelineArgs) -> Result<()> {
    let mut flat = match &a.config {
        Some(p) => FlatConfig::load(p)?,
        None => FlatConfig::default(),
    };
    let unknown = flat.keys().find(|k| {
        !PIPELINE_KEYS.contains(k) && *k != "c_fa" && !train::CONFIG_KEYS.contains(k) && !k.starts_with("synth.")
    });
    if let Some(k) = unknown {
        return Err(Error::Config(format!("unknown key `{k}`")));
    }
    let overrides = [
        ("synthetic", a.synthetic.then(|| "true".to_string())),
        ("train_store", p(&a.train_store)),
        ("dev_store", p(&a.dev_store)),
        ("dev_trials", p(&a.dev_trials)),
        ("eval_store", p(&a.eval_store)),
        ("eval_trials", p(&a.eval_trials)),
        ("out_dir", p(&a.out_dir)),
        ("systems", a.systems.clone()),
        ("lda_dim", s(&a.lda_dim)),
        ("length_norm", s(&a.length_norm)),
        ("pooling_fraction", s(&a.pooling_fraction)),
        ("p_target", s(&a.p_target)),
        ("c_miss", s(&a.c_miss)),
        ("c_fa", s(&a.c_fa)),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            flat.set(k, v);
        }
    }
    let set = Settings(flat);
    let d = PipelineSettings::<f64>::default();
    let settings = PipelineSettings {
        train: TrainConfig::from_flat(&set.0)?,
        dcf: set.dcf()?,
        pooling: set.pooling()?,
        lda_dim: set.0.parsed_or("lda_dim", d.lda_dim)?,
        length_norm: set.0.parsed_or("length_norm", d.length_norm)?,
        systems: match set.0.get("systems") {
            Some(list) => parse_systems(list)?,
            None => d.systems,
        },
        valid_fraction: set.0.parsed_or("valid_fraction", d.valid_fraction)?,
        negatives_per_positive: set.0.parsed_or("negatives_per_positive", d.negatives_per_positive)?,
        trial_seed: set.0.parsed_or("trial_seed", d.trial_seed)?,
    };
    let out = set.require_path("out_dir")?;
    let data = if set.0.parsed_or("synthetic", false)? {
        let synth = set.0.section("synth.");
        let mut experiment = SyntheticExperiment::default();
        let mut gen_flat = experiment.generator.to_flat();
        for k in synth.keys() {
            gen_flat.set(k, synth.get(k).unwrap_or_default());
        }
        gen_flat.check_keys(GenConfig::keys())?;
        experiment.generator = GenConfig::from_flat(&gen_flat)?;
        experiment.generate()?
    } else {
        PipelineData {
            train: Embeddings::load(set.require_path("train_store")?)?,
            dev: Embeddings::load(set.require_path("dev_store")?)?,
            dev_trials: TrialSet::load(set.require_path("dev_trials")?)?,
            eval: Embeddings::load(set.require_path("eval_store")?)?,
            eval_trials: TrialSet::load(set.require_path("eval_trials")?)?,
        }
    };
    let outcome = run_pipeline(&data, &settings)?;

    create_dir(&out)?;
    if let Some(b) = &outcome.backend {
        b.save(out.join("backend.ckpt"))?;
    }
    if let Some(r) = &outcome.vfnet {
        r.final_params.save(out.join("vfnet.ckpt"))?;
        r.save(out.join("vfnet_train.tsv"))?;
    }
    for (sys, scores) in &outcome.dev_scores {
        scores.save(out.join(format!("dev_{sys}.scores")))?;
    }
    for (sys, scores) in &outcome.eval_scores {
        scores.save(out.join(format!("eval_{sys}.scores")))?;
    }
    for row in &outcome.rows {
        row.fusion.save(out.join(format!("fusion_{}.ckpt", row.name)))?;
        row.eval_scores.save(out.join(format!("fused_{}.scores", row.name)))?;
    }
    let tsv = outcome.report_tsv();
    let path = out.join("report.tsv");
    fs::write(&path, &tsv).map_err(|e| Error::io(&path, e))?;
    if a.markdown {
        print!("{}", outcome.report_markdown());
    } else {
        print!("{tsv}");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainVfnet(a) => train_vfnet(a),
        Command::FitBackend(a) => fit_backend(a),
        Command::Score(a) => score(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
