//! End-to-end detection: train the representation, fit an isolation forest
//! on shared codes of both training sets, and score target rows through the
//! shared encoder. Also the raw-feature forest baselines, the ablation runner
//! and the target-pool-size sweep.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_two_domain, BenchSpec, Benchmark, Domain, LabeledSet};
use crate::error::{Error, Result};
use crate::evaltheory::{auroc, pca_2d};
use crate::iforest::{ForestParams, IsolationForest};
use crate::model::{IradModel, ModelConfig};
use crate::numkit::{matmul_transb, normalize_rows, Matrix};
use crate::trainer::{fit_with, TrainConfig, TrainLog, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Forest over shared codes of source and target training rows.
    Irad,
    /// Forest over raw target training rows.
    IfRawT,
    /// Forest over raw source and target training rows.
    IfRawSt,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [
        DetectorKind::Irad,
        DetectorKind::IfRawT,
        DetectorKind::IfRawSt,
    ];
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Irad => "irad",
            DetectorKind::IfRawT => "if_raw_t",
            DetectorKind::IfRawSt => "if_raw_st",
        })
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown detector kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub kind: DetectorKind,
    /// Present for [`DetectorKind::Irad`] only.
    pub model: Option<IradModel>,
    pub forest: IsolationForest,
}

fn check_dims(a: &LabeledSet, b: &LabeledSet, d: usize) -> Result<()> {
    for s in [a, b] {
        if s.dim() != d {
            return Err(Error::shape(
                "detector training data",
                (s.len(), s.dim()),
                (s.len(), d),
            ));
        }
    }
    Ok(())
}

/// Fits the forest on `[E_sh(source); E_sh(target)]`.
pub fn build_irad_detector(
    model: IradModel,
    source_train: &LabeledSet,
    target_train: &LabeledSet,
    params: ForestParams,
    seed: u64,
) -> Result<Detector> {
    check_dims(source_train, target_train, model.config.d_x)?;
    source_train.require_normal("source training set")?;
    target_train.require_normal("target training set")?;
    let codes = model
        .encode_shared(&source_train.x)?
        .vstack(&model.encode_shared(&target_train.x)?)?;
    let forest = IsolationForest::fit(&codes, params, seed)?;
    Ok(Detector {
        kind: DetectorKind::Irad,
        model: Some(model),
        forest,
    })
}

/// Raw-feature baseline: target rows only, or source and target rows stacked.
pub fn build_raw_detector(
    kind: DetectorKind,
    source_train: &LabeledSet,
    target_train: &LabeledSet,
    params: ForestParams,
    seed: u64,
) -> Result<Detector> {
    check_dims(source_train, target_train, target_train.dim())?;
    let x = match kind {
        DetectorKind::IfRawT => target_train.x.clone(),
        DetectorKind::IfRawSt => source_train.x.vstack(&target_train.x)?,
        DetectorKind::Irad => {
            return Err(Error::Config(
                "the irad detector needs a trained model".into(),
            ));
        }
    };
    Ok(Detector {
        kind,
        model: None,
        forest: IsolationForest::fit(&x, params, seed)?,
    })
}

/// Row-wise anomaly scores; higher is more anomalous.
pub fn anomaly_score(d: &Detector, x: &Matrix) -> Result<Vec<f64>> {
    match (&d.kind, &d.model) {
        (DetectorKind::Irad, Some(m)) => d.forest.score(&m.encode_shared(x)?),
        (DetectorKind::Irad, None) => Err(Error::Contract("irad detector without a model".into())),
        _ => d.forest.score(x),
    }
}

/// Everything a seeded benchmark run needs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSpec {
    pub bench: BenchSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub forest: ForestParams,
}

impl RunSpec {
    /// Model config matched to the benchmark's feature width.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_x: self.bench.d_x,
            adv_mode: self.train.adv_mode,
            ..self.model
        }
    }

    /// Copy with every seed-dependent field set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = *self;
        s.train.seed = seed;
        s
    }
}

/// Seed of the model's initial weights for run seed `seed`.
pub fn init_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(1)
}

/// Seed of every isolation forest fitted in run `seed`.
pub fn forest_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(2)
}

pub fn init_model(spec: &RunSpec) -> Result<IradModel> {
    IradModel::init(
        spec.model_config(),
        &mut ChaCha8Rng::seed_from_u64(init_seed(spec.train.seed)),
    )
}

/// Target-test AUROC of `model` through a freshly fitted forest.
pub fn irad_auroc(
    model: &IradModel,
    bench: &Benchmark,
    params: ForestParams,
    seed: u64,
) -> Result<f64> {
    let d = build_irad_detector(
        model.clone(),
        &bench.source_train,
        &bench.target_train,
        params,
        forest_seed(seed),
    )?;
    auroc(
        &anomaly_score(&d, &bench.target_test.x)?,
        &bench.target_test.y,
    )
}

/// Source rows used when comparing shared codes across domains.
const COSINE_SOURCE_ROWS: usize = 500;

/// Mean absolute cosine between shared codes of source training rows and of
/// normal target test rows, and the same mean without the absolute value.
pub fn cross_domain_cosine(model: &IradModel, bench: &Benchmark) -> Result<(f64, f64)> {
    let src = bench.source_train.head(COSINE_SOURCE_ROWS);
    let normals: Vec<usize> = (0..bench.target_test.len())
        .filter(|&i| bench.target_test.y[i] == 0)
        .collect();
    let tgt = bench.target_test.select(&normals);
    let a = normalize_rows(&model.encode_shared(&src.x)?);
    let b = normalize_rows(&model.encode_shared(&tgt.x)?);
    let g = matmul_transb(&a, &b)?;
    let n = g.data().len() as f64;
    Ok((g.data().iter().map(|v| v.abs()).sum::<f64>() / n, g.mean()))
}

/// Shared codes of source training rows and all target test rows projected
/// to two dimensions, with their domain and label.
pub fn pca_export(model: &IradModel, bench: &Benchmark) -> Result<Vec<(f64, f64, Domain, u8)>> {
    let src = bench.source_train.head(COSINE_SOURCE_ROWS);
    let tgt = &bench.target_test;
    let codes = model
        .encode_shared(&src.x)?
        .vstack(&model.encode_shared(&tgt.x)?)?;
    let p = pca_2d(&codes)?;
    let meta = src
        .y
        .iter()
        .map(|&y| (Domain::Source, y))
        .chain(tgt.y.iter().map(|&y| (Domain::Target, y)));
    Ok(p.projection
        .iter_rows()
        .zip(meta)
        .map(|(r, (d, y))| (r[0], r[1], d, y))
        .collect())
}

/// Outcome of one seeded run on the synthetic benchmark.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub model: IradModel,
    pub log: TrainLog,
    pub auroc_irad: f64,
    pub auroc_if_raw_t: f64,
    pub auroc_if_raw_st: f64,
    /// Target AUROC after every epoch, when requested.
    pub epoch_auroc: Vec<f64>,
    pub bench: Benchmark,
}

/// Generates the benchmark for `seed`, trains, and scores all three detectors.
/// With `track_epochs` the per-epoch target AUROC is recorded as well.
pub fn run_benchmark(spec: &RunSpec, seed: u64, track_epochs: bool) -> Result<RunOutcome> {
    let spec = spec.with_seed(seed);
    let bench_spec = BenchSpec {
        n_t: spec.train.n_t,
        ..spec.bench
    };
    let bench = gen_two_domain(&bench_spec, seed)?;
    let model = init_model(&spec)?;
    let mut epoch_auroc = Vec::new();
    let (model, log) = fit_with(
        model,
        &bench.source_train,
        &bench.target_train,
        &spec.train,
        |_, m| {
            if track_epochs {
                epoch_auroc.push(irad_auroc(m, &bench, spec.forest, seed)?);
            }
            Ok(())
        },
    )?;
    let auroc_irad = irad_auroc(&model, &bench, spec.forest, seed)?;
    let raw = |kind| -> Result<f64> {
        let d = build_raw_detector(
            kind,
            &bench.source_train,
            &bench.target_train,
            spec.forest,
            forest_seed(seed),
        )?;
        auroc(
            &anomaly_score(&d, &bench.target_test.x)?,
            &bench.target_test.y,
        )
    };
    Ok(RunOutcome {
        seed,
        model,
        log,
        auroc_irad,
        auroc_if_raw_t: raw(DetectorKind::IfRawT)?,
        auroc_if_raw_st: raw(DetectorKind::IfRawSt)?,
        epoch_auroc,
        bench,
    })
}

/// One seed of one ablation variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub auroc: f64,
    pub mean_abs_cosine: f64,
    pub mean_cosine: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub variant: Variant,
    pub rows: Vec<AblationRow>,
    /// PCA export of the first seed's shared codes.
    pub pca: Vec<(f64, f64, Domain, u8)>,
}

impl AblationReport {
    pub fn mean_auroc(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.auroc))
    }

    pub fn mean_abs_cosine(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.mean_abs_cosine))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Trains `variant` once per seed (in parallel) and reports target AUROC and
/// cross-domain cosine of shared codes.
pub fn run_ablation(variant: Variant, spec: &RunSpec, seeds: &[u64]) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut s = *spec;
    s.train.variant = variant;
    let outcomes: Vec<(AblationRow, Option<Vec<(f64, f64, Domain, u8)>>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let out = run_benchmark(&s, seed, false)?;
            let (abs_cos, cos) = cross_domain_cosine(&out.model, &out.bench)?;
            let pca = if i == 0 {
                Some(pca_export(&out.model, &out.bench)?)
            } else {
                None
            };
            Ok((
                AblationRow {
                    variant,
                    seed,
                    auroc: out.auroc_irad,
                    mean_abs_cosine: abs_cos,
                    mean_cosine: cos,
                },
                pca,
            ))
        })
        .collect::<Result<_>>()?;
    let mut pca = Vec::new();
    let mut rows = Vec::new();
    for (row, p) in outcomes {
        rows.push(row);
        if let Some(p) = p {
            pca = p;
        }
    }
    Ok(AblationReport { variant, rows, pca })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_t: usize,
    pub mean_auroc: f64,
    pub sd_auroc: f64,
    pub aurocs: Vec<f64>,
}

/// Target AUROC for each target-pool size over `seeds`. Sizes must be
/// ascending; the test set and source set do not change with `n_t`.
pub fn nt_sweep(values: &[usize], spec: &RunSpec, seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "n_t sweep needs at least one value and one seed".into(),
        ));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "n_t values must be strictly ascending, got {values:?}"
        )));
    }
    let jobs: Vec<(usize, u64)> = values
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(n_t, seed)| {
            let mut s = *spec;
            s.train.n_t = n_t;
            Ok(run_benchmark(&s, seed, false)?.auroc_irad)
        })
        .collect::<Result<_>>()?;
    Ok(values
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(&n_t, a)| {
            let m = mean(a.iter().copied());
            let var = if a.len() > 1 {
                a.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (a.len() - 1) as f64
            } else {
                0.0
            };
            SweepRow {
                n_t,
                mean_auroc: m,
                sd_auroc: var.sqrt(),
                aurocs: a.to_vec(),
            }
        })
        .collect())
}
