//! Command-line front end: generate the synthetic benchmark, train, evaluate,
//! run ablations and target-pool sweeps, and check the joint-error bound.
//!
//! # Configuration files
//!
//! One `key = value` pair per line. Blank lines and lines starting with `#`
//! are ignored, as is anything after a `#` on a value line. Keys may appear
//! once. Unknown keys are an error. Command-line flags override file values.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `seed` | 0 | run seed (data, init, training, forests) |
//! | `out` | `out` | output directory |
//! | `data` | same as `out` | directory holding the three CSV inputs |
//! | `k_shared`, `m_private`, `d_x` | 4, 4, 20 | benchmark latent and feature widths |
//! | `n_source`, `n_test` | 2000, 1000 | benchmark sizes |
//! | `n_t` | 50 | target training pool size |
//! | `anomaly_fraction` | 0.2 | anomalous share of the target test set |
//! | `shift` | 4.0 | anomaly displacement in shared-latent space |
//! | `inlier_scale`, `private_scale` | 0.25, 1.0 | latent standard deviations |
//! | `source_transform_seed`, `target_transform_seed` | 1, 2 | domain map seeds |
//! | `nonlinear` | true | tanh squashing of features |
//! | `d_z`, `d_p`, `hidden`, `hidden_layers` | 8, 8, 32, 2 | network widths |
//! | `alpha`, `beta` | 1.0, 0.5 | cycle and separation loss weights |
//! | `epochs`, `batch_size` | 30, 64 | training length |
//! | `lr`, `beta1`, `beta2`, `adam_eps` | 2e-4, 0.5, 0.999, 1e-8 | Adam |
//! | `d_steps_per_g_step` | 1 | discriminator updates per step |
//! | `adv_mode` | `vanilla` | `vanilla` or `least_squares` |
//! | `early_stop` | `holdout_proxy` | `holdout_proxy` or `none` |
//! | `variant` | `full` | `full`, `no_lsim`, `no_cycle`, `no_xrnd` |
//! | `trees`, `psi` | 100, 256 | isolation forest |
//! | `seeds` | 5 | seeds per ablation / sweep point, starting at `seed` |
//! | `nt_values` | `10,20,50,100` | sweep grid |
//! | `checkpoint_every` | 0 | also save a checkpoint every N epochs (0 = off) |

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use irad::checkpoint::Checkpoint;
use irad::data::{gen_two_domain, load_csv, save_csv, BenchSpec, LabeledSet};
use irad::evaltheory::{auroc, lemma_jsd_check, theory_sweep, DEFAULT_TOL};
use irad::iforest::ForestParams;
use irad::model::{AdvMode, IradModel, ModelConfig};
use irad::pipeline::{
    anomaly_score, build_irad_detector, build_raw_detector, forest_seed, init_model, nt_sweep,
    run_ablation, DetectorKind, RunSpec,
};
use irad::trainer::{fit_with, EarlyStop, TrainConfig, Variant};

pub const SOURCE_TRAIN: &str = "source_train.csv";
pub const TARGET_TRAIN: &str = "target_train.csv";
pub const TARGET_TEST: &str = "target_test.csv";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const EVAL_REPORT: &str = "eval_report.csv";
pub const ABLATION_REPORT: &str = "ablation_report.csv";
pub const NT_SWEEP: &str = "nt_sweep.csv";
pub const THEORY_REPORT: &str = "theory_report.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] irad::Error),

    #[error("config line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Stable snake_case tag for the error class.
    pub fn kind(&self) -> &'static str {
        use irad::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Shape { .. } => "shape",
                E::Contract(_) => "contract",
                E::NonFinite(_) => "non_finite",
                E::UndefinedMetric(_) => "undefined_metric",
                E::Config(_) => "config",
                E::Parse { .. } => "parse",
                E::MissingFile(_) => "missing_file",
                E::Io(_) => "io",
                E::Serde(_) => "serialization",
            },
            CliError::ConfigLine { .. } => "config",
            CliError::Usage(_) => "usage",
        }
    }

    /// The single line printed on failure: a JSON object with `error` (the
    /// kind) and `message`.
    pub fn to_line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        serde_json::json!({ "error": self.kind(), "message": msg.trim() }).to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(irad::Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(irad::Error::Config(format!("csv output: {e}")))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Every setting a command can use.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Input directory for the CSVs; `None` means `out`.
    pub data: Option<PathBuf>,
    pub bench: BenchSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub forest: ForestParams,
    pub seeds: u64,
    pub nt_values: Vec<usize>,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: None,
            bench: BenchSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            forest: ForestParams::default(),
            seeds: 5,
            nt_values: vec![10, 20, 50, 100],
            checkpoint_every: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse()
        .map_err(|e: T::Err| format!("{key}: cannot parse {v:?}: {e}"))
}

impl RunConfig {
    /// Sets one key. Errors name the key and the offending value.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let b = &mut self.bench;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "data" => self.data = Some(PathBuf::from(v)),
            "k_shared" => b.k_shared = parse(key, v)?,
            "m_private" => b.m_private = parse(key, v)?,
            "d_x" => b.d_x = parse(key, v)?,
            "n_source" => b.n_source = parse(key, v)?,
            "n_test" => b.n_test = parse(key, v)?,
            "n_t" => {
                t.n_t = parse(key, v)?;
                b.n_t = t.n_t;
            }
            "anomaly_fraction" => b.anomaly_fraction = parse(key, v)?,
            "shift" => b.shift = parse(key, v)?,
            "inlier_scale" => b.inlier_scale = parse(key, v)?,
            "private_scale" => b.private_scale = parse(key, v)?,
            "source_transform_seed" => b.source_transform_seed = parse(key, v)?,
            "target_transform_seed" => b.target_transform_seed = parse(key, v)?,
            "nonlinear" => b.nonlinear = parse(key, v)?,
            "d_z" => m.d_z = parse(key, v)?,
            "d_p" => m.d_p = parse(key, v)?,
            "hidden" => m.hidden = parse(key, v)?,
            "hidden_layers" => m.hidden_layers = parse(key, v)?,
            "alpha" => t.alpha = parse(key, v)?,
            "beta" => t.beta = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "lr" => t.adam.lr = parse(key, v)?,
            "beta1" => t.adam.beta1 = parse(key, v)?,
            "beta2" => t.adam.beta2 = parse(key, v)?,
            "adam_eps" => t.adam.eps = parse(key, v)?,
            "d_steps_per_g_step" => t.d_steps_per_g_step = parse(key, v)?,
            "adv_mode" => t.adv_mode = parse::<AdvMode>(key, v)?,
            "early_stop" => t.early_stop = parse::<EarlyStop>(key, v)?,
            "variant" => t.variant = parse::<Variant>(key, v)?,
            "trees" => self.forest.n_trees = parse(key, v)?,
            "psi" => self.forest.psi = parse(key, v)?,
            "seeds" => self.seeds = parse(key, v)?,
            "nt_values" => {
                self.nt_values = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Parses the `key = value` grammar on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::ConfigLine { line, msg };
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {content:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("duplicate key {k:?}")));
            }
            cfg.set(k, v).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(irad::Error::MissingFile(path.to_path_buf()).into());
        }
        Self::parse_str(&fs::read_to_string(path)?)
    }

    /// Renders every key in file grammar; `parse_str` of the result gives
    /// back an equal config.
    pub fn to_config_string(&self) -> String {
        let (b, m, t) = (&self.bench, &self.model, &self.train);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        if let Some(d) = &self.data {
            kv("data", d.display().to_string());
        }
        kv("k_shared", b.k_shared.to_string());
        kv("m_private", b.m_private.to_string());
        kv("d_x", b.d_x.to_string());
        kv("n_source", b.n_source.to_string());
        kv("n_test", b.n_test.to_string());
        kv("n_t", t.n_t.to_string());
        kv("anomaly_fraction", b.anomaly_fraction.to_string());
        kv("shift", b.shift.to_string());
        kv("inlier_scale", b.inlier_scale.to_string());
        kv("private_scale", b.private_scale.to_string());
        kv("source_transform_seed", b.source_transform_seed.to_string());
        kv("target_transform_seed", b.target_transform_seed.to_string());
        kv("nonlinear", b.nonlinear.to_string());
        kv("d_z", m.d_z.to_string());
        kv("d_p", m.d_p.to_string());
        kv("hidden", m.hidden.to_string());
        kv("hidden_layers", m.hidden_layers.to_string());
        kv("alpha", t.alpha.to_string());
        kv("beta", t.beta.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lr", t.adam.lr.to_string());
        kv("beta1", t.adam.beta1.to_string());
        kv("beta2", t.adam.beta2.to_string());
        kv("adam_eps", t.adam.eps.to_string());
        kv("d_steps_per_g_step", t.d_steps_per_g_step.to_string());
        kv("adv_mode", t.adv_mode.to_string());
        kv("early_stop", t.early_stop.to_string());
        kv("variant", t.variant.to_string());
        kv("trees", self.forest.n_trees.to_string());
        kv("psi", self.forest.psi.to_string());
        kv("seeds", self.seeds.to_string());
        kv(
            "nt_values",
            self.nt_values
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("checkpoint_every", self.checkpoint_every.to_string());
        s
    }

    pub fn data_dir(&self) -> &Path {
        self.data.as_deref().unwrap_or(&self.out)
    }

    /// The pipeline view of this config, with the run seed applied.
    pub fn run_spec(&self) -> RunSpec {
        let mut train = self.train;
        train.seed = self.seed;
        RunSpec {
            bench: BenchSpec {
                n_t: self.train.n_t,
                ..self.bench
            },
            model: self.model,
            train,
            forest: self.forest,
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (self.seed..self.seed + self.seeds).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.run_spec();
        spec.bench.validate()?;
        spec.model_config().validate()?;
        spec.train.validate()?;
        if self.forest.n_trees == 0 || self.forest.psi < 2 {
            return Err(irad::Error::Config("trees must be >= 1 and psi >= 2".into()).into());
        }
        if self.seeds == 0 {
            return Err(irad::Error::Config("seeds must be >= 1".into()).into());
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "irad",
    version,
    about = "Invariant-representation anomaly detection on a scarce target domain"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write source_train.csv, target_train.csv and target_test.csv.
    Gen(Common),
    /// Train on the CSVs; write checkpoint.json and train_log.csv.
    Train(Common),
    /// AUROC of IRAD, IF(T) and IF(S+T) on target_test.csv; writes eval_report.csv.
    Eval(WithCheckpoint),
    /// All four ablation variants over `seeds` seeds; writes ablation_report.csv and pca_2d_<variant>.csv.
    Ablate(Common),
    /// Target AUROC over the n_t grid; writes nt_sweep.csv.
    Sweep(Common),
    /// Joint-error bound at every score threshold; writes theory_report.csv.
    Theory(WithCheckpoint),
}

/// Flags shared by every command. Unset flags fall back to the config file,
/// then to the built-in defaults shown.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// key = value configuration file [default: none]
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Training epochs [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Target training pool size [default: 50]
    #[arg(long)]
    pub nt: Option<usize>,
    /// Weight of the cycle losses [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the separation losses [default: 0.5]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Adversarial objective: vanilla or least_squares [default: vanilla]
    #[arg(long, value_name = "MODE")]
    pub adv_mode: Option<String>,
    /// Objective variant: full, no_lsim, no_cycle, no_xrnd [default: full]
    #[arg(long)]
    pub variant: Option<String>,
    /// Isolation forest trees [default: 100]
    #[arg(long)]
    pub trees: Option<usize>,
    /// Isolation forest subsample size [default: 256]
    #[arg(long)]
    pub psi: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct WithCheckpoint {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to load [default: <out>/checkpoint.json]
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
}

impl Common {
    /// Config file (if any) with the flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut flag = |key: &str, v: Option<String>| -> Result<()> {
            if let Some(v) = v {
                cfg.set(key, &v)
                    .map_err(|m| CliError::Usage(format!("--{}: {m}", key.replace('_', "-"))))?;
            }
            Ok(())
        };
        flag("seed", self.seed.map(|v| v.to_string()))?;
        flag("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        flag("epochs", self.epochs.map(|v| v.to_string()))?;
        flag("n_t", self.nt.map(|v| v.to_string()))?;
        flag("alpha", self.alpha.map(|v| v.to_string()))?;
        flag("beta", self.beta.map(|v| v.to_string()))?;
        flag("adv_mode", self.adv_mode.clone())?;
        flag("variant", self.variant.clone())?;
        flag("trees", self.trees.map(|v| v.to_string()))?;
        flag("psi", self.psi.map(|v| v.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(c) => cmd_gen(&c.resolve()?).map(drop),
        Command::Train(c) => cmd_train(&c.resolve()?).map(drop),
        Command::Eval(w) => {
            let cfg = w.common.resolve()?;
            cmd_eval(&cfg, &checkpoint_path(&cfg, w)).map(drop)
        }
        Command::Ablate(c) => cmd_ablate(&c.resolve()?).map(drop),
        Command::Sweep(c) => cmd_sweep(&c.resolve()?).map(drop),
        Command::Theory(w) => {
            let cfg = w.common.resolve()?;
            cmd_theory(&cfg, &checkpoint_path(&cfg, w)).map(drop)
        }
    }
}

fn checkpoint_path(cfg: &RunConfig, w: &WithCheckpoint) -> PathBuf {
    w.checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out.join(CHECKPOINT))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

/// Writes the three benchmark CSVs and returns their paths.
pub fn cmd_gen(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.run_spec();
    let bench = gen_two_domain(&spec.bench, cfg.seed)?;
    let dir = out_dir(cfg)?;
    let mut paths = Vec::new();
    for (name, set) in [
        (SOURCE_TRAIN, &bench.source_train),
        (TARGET_TRAIN, &bench.target_train),
        (TARGET_TEST, &bench.target_test),
    ] {
        let p = dir.join(name);
        save_csv(set, &p)?;
        paths.push(p);
    }
    log::info!("wrote benchmark to {}", dir.display());
    Ok(paths)
}

fn load_input(cfg: &RunConfig, name: &str) -> Result<LabeledSet> {
    Ok(load_csv(&cfg.data_dir().join(name))?)
}

/// Loads the training CSVs, trimming the target pool to `n_t` rows.
fn training_sets(cfg: &RunConfig) -> Result<(LabeledSet, LabeledSet)> {
    let source = load_input(cfg, SOURCE_TRAIN)?;
    let target = load_input(cfg, TARGET_TRAIN)?;
    let n_t = cfg.train.n_t;
    if n_t > target.len() {
        return Err(irad::Error::Config(format!(
            "n_t = {n_t} but {} holds {} rows",
            TARGET_TRAIN,
            target.len()
        ))
        .into());
    }
    Ok((source, target.head(n_t)))
}

fn model_for(cfg: &RunConfig, d_x: usize) -> Result<IradModel> {
    let mut spec = cfg.run_spec();
    spec.bench.d_x = d_x;
    Ok(init_model(&spec)?)
}

/// Trains on the CSVs in the data directory, writes `train_log.csv` and a
/// checkpoint holding the selected model and its forest.
pub fn cmd_train(cfg: &RunConfig) -> Result<Checkpoint> {
    let (source, target) = training_sets(cfg)?;
    let spec = cfg.run_spec();
    let dir = out_dir(cfg)?.to_path_buf();
    let every = cfg.checkpoint_every;
    let (model, log) = fit_with(
        model_for(cfg, source.dim())?,
        &source,
        &target,
        &spec.train,
        |epoch, m| {
            log::info!("epoch {epoch}/{}", spec.train.epochs);
            if every > 0 && epoch % every == 0 {
                let p = dir.join(format!("checkpoint_epoch_{epoch:04}.json"));
                Checkpoint::new(m.clone(), spec.train, epoch, None).save(&p)?;
            }
            Ok(())
        },
    )?;
    fs::write(dir.join(TRAIN_LOG), log.to_csv())?;
    let det = build_irad_detector(model, &source, &target, cfg.forest, forest_seed(cfg.seed))?;
    let ckpt = Checkpoint::new(
        det.model.expect("irad detector keeps its model"),
        spec.train,
        log.selected_epoch,
        Some(det.forest),
    );
    ckpt.save(&dir.join(CHECKPOINT))?;
    log::info!("selected epoch {}", log.selected_epoch);
    Ok(ckpt)
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub detector: DetectorKind,
    pub auroc: f64,
}

/// Target-test AUROC of the checkpointed IRAD detector and both raw-feature
/// forests; writes `eval_report.csv`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<Vec<EvalRow>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (source, target) = training_sets(cfg)?;
    let test = load_input(cfg, TARGET_TEST)?;
    let mut rows = Vec::new();
    for kind in DetectorKind::ALL {
        let det = match kind {
            DetectorKind::Irad => match &ckpt.forest {
                Some(f) => irad::pipeline::Detector {
                    kind,
                    model: Some(ckpt.model.clone()),
                    forest: f.clone(),
                },
                None => build_irad_detector(
                    ckpt.model.clone(),
                    &source,
                    &target,
                    cfg.forest,
                    forest_seed(cfg.seed),
                )?,
            },
            _ => build_raw_detector(kind, &source, &target, cfg.forest, forest_seed(cfg.seed))?,
        };
        let a = auroc(&anomaly_score(&det, &test.x)?, &test.y)?;
        rows.push(EvalRow {
            detector: kind,
            auroc: a,
        });
    }
    let mut w = csv_writer(cfg, EVAL_REPORT)?;
    w.write_record(["detector", "auroc"])?;
    for r in &rows {
        w.write_record([r.detector.to_string(), r.auroc.to_string()])?;
    }
    w.flush()?;
    Ok(rows)
}

fn csv_writer(cfg: &RunConfig, name: &str) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(out_dir(cfg)?.join(name))?)
}

/// Runs every ablation variant on the synthetic benchmark.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<irad::pipeline::AblationReport>> {
    let spec = cfg.run_spec();
    let seeds = cfg.seed_list();
    let reports = Variant::ALL
        .into_iter()
        .map(|v| {
            log::info!("ablation variant {v}");
            run_ablation(v, &spec, &seeds)
        })
        .collect::<irad::Result<Vec<_>>>()?;
    let mut w = csv_writer(cfg, ABLATION_REPORT)?;
    w.write_record(["variant", "seed", "auroc", "mean_abs_cosine", "mean_cosine"])?;
    for rep in &reports {
        for r in &rep.rows {
            w.write_record([
                r.variant.to_string(),
                r.seed.to_string(),
                r.auroc.to_string(),
                r.mean_abs_cosine.to_string(),
                r.mean_cosine.to_string(),
            ])?;
        }
        let mut p = csv_writer(cfg, &format!("pca_2d_{}.csv", rep.variant))?;
        p.write_record(["pc1", "pc2", "domain", "label"])?;
        for (a, b, d, y) in &rep.pca {
            p.write_record([a.to_string(), b.to_string(), d.to_string(), y.to_string()])?;
        }
        p.flush()?;
    }
    w.flush()?;
    Ok(reports)
}

/// Target AUROC over the `nt_values` grid.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<irad::pipeline::SweepRow>> {
    let rows = nt_sweep(&cfg.nt_values, &cfg.run_spec(), &cfg.seed_list())?;
    let mut w = csv_writer(cfg, NT_SWEEP)?;
    w.write_record(["n_t", "mean_auroc", "sd_auroc", "seeds"])?;
    for r in &rows {
        w.write_record([
            r.n_t.to_string(),
            r.mean_auroc.to_string(),
            r.sd_auroc.to_string(),
            r.aurocs.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Summary of a theory report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheorySummary {
    pub thresholds: usize,
    pub bound_violations: usize,
    pub lemma_violations: usize,
}

/// Scores source_train (all normal) and target_test with the checkpointed
/// detector and checks the joint-error bound and the per-domain JS lemma at
/// every threshold; writes `theory_report.csv`.
pub fn cmd_theory(cfg: &RunConfig, checkpoint: &Path) -> Result<TheorySummary> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (source, target) = training_sets(cfg)?;
    let test = load_input(cfg, TARGET_TEST)?;
    let det = match &ckpt.forest {
        Some(f) => irad::pipeline::Detector {
            kind: DetectorKind::Irad,
            model: Some(ckpt.model.clone()),
            forest: f.clone(),
        },
        None => build_irad_detector(
            ckpt.model.clone(),
            &source,
            &target,
            cfg.forest,
            forest_seed(cfg.seed),
        )?,
    };
    let s_src = anomaly_score(&det, &source.x)?;
    let s_tgt = anomaly_score(&det, &test.x)?;
    let rows = theory_sweep(&s_src, &source.y, &s_tgt, &test.y, DEFAULT_TOL)?;
    let mut w = csv_writer(cfg, THEORY_REPORT)?;
    w.write_record([
        "threshold",
        "eps_s",
        "eps_t",
        "d_js_labels",
        "d_js_predictions",
        "lhs",
        "rhs",
        "holds",
        "general_holds",
        "lemma_holds",
    ])?;
    let mut summary = TheorySummary {
        thresholds: rows.len(),
        bound_violations: 0,
        lemma_violations: 0,
    };
    for row in &rows {
        let r = &row.report;
        let rule = irad::evaltheory::ThresholdRule {
            threshold: row.threshold,
        };
        let (_, _, ls) = lemma_jsd_check(&rule.predict(&s_src), &source.y)?;
        let (_, _, lt) = lemma_jsd_check(&rule.predict(&s_tgt), &test.y)?;
        let lemma = ls && lt;
        summary.bound_violations += usize::from(!r.holds);
        summary.lemma_violations += usize::from(!lemma);
        w.write_record([
            row.threshold.to_string(),
            r.eps_s.to_string(),
            r.eps_t.to_string(),
            r.d_js_labels.to_string(),
            r.d_js_predictions.to_string(),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.holds.to_string(),
            r.general_bound_holds(DEFAULT_TOL).to_string(),
            lemma.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(summary)
}
