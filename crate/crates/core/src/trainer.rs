//! Alternating optimization: a discriminator update on `v_d`, then one update
//! of both encoders and the generator on the weighted total objective.
//!
//! Target batches are drawn with replacement from the small target pool and
//! paired row by row with the concurrent source batch, whose private codes
//! stand in for the target's in the cross-domain generation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::losses::{
    cycle_loss_tape, discriminator_loss_tape, dissimilarity_loss_tape, generator_adv_loss_tape,
    similarity_loss_tape, LossBundle, DEFAULT_ALPHA, DEFAULT_BETA,
};
use crate::model::{AdvMode, IradModel, NetRole};
use crate::numkit::{Adam, AdamConfig, Matrix, NodeId, ParamId, Tape};

/// Which objective term an ablation removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Drops `beta * l_sim` from the total.
    NoLsim,
    /// Drops `alpha * (l1 + l2)` from the total; both are still logged.
    NoCycle,
    /// Removes the noise-generated stream from both adversarial losses.
    NoXrnd,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoLsim,
        Variant::NoCycle,
        Variant::NoXrnd,
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoLsim => "no_lsim",
            Variant::NoCycle => "no_cycle",
            Variant::NoXrnd => "no_xrnd",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected full, no_lsim, no_cycle or no_xrnd"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStop {
    None,
    /// Hold out a fifth of the target pool and keep the epoch with the lowest
    /// cross-domain reconstruction loss on it.
    #[default]
    HoldoutProxy,
}

impl fmt::Display for EarlyStop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EarlyStop::None => "none",
            EarlyStop::HoldoutProxy => "holdout_proxy",
        })
    }
}

impl FromStr for EarlyStop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EarlyStop::None),
            "holdout_proxy" => Ok(EarlyStop::HoldoutProxy),
            other => Err(Error::Config(format!("unknown early_stop {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Size of the target training pool.
    pub n_t: usize,
    pub adam: AdamConfig,
    pub d_steps_per_g_step: usize,
    pub seed: u64,
    pub adv_mode: AdvMode,
    pub early_stop: EarlyStop,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            epochs: 30,
            batch_size: 64,
            n_t: 50,
            adam: AdamConfig::default(),
            d_steps_per_g_step: 1,
            seed: 0,
            adv_mode: AdvMode::Vanilla,
            early_stop: EarlyStop::HoldoutProxy,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.n_t == 0 {
            return Err(Error::Config("n_t must be >= 1".into()));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(Error::Config("d_steps_per_g_step must be >= 1".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lr", self.adam.lr),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Inputs of one optimization step. `x_tgt` has the same row count as
/// `x_src`; row `i` of each is paired. `noise` replaces the private code in
/// the noise-generated stream.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub x_src: Matrix,
    pub x_tgt: Matrix,
    pub noise: Matrix,
}

impl StepBatch {
    pub fn sample<R: Rng + ?Sized>(
        model: &IradModel,
        x_src: Matrix,
        target_pool: &Matrix,
        rng: &mut R,
    ) -> Self {
        let b = x_src.rows();
        let idx: Vec<usize> = (0..b)
            .map(|_| rng.random_range(0..target_pool.rows()))
            .collect();
        let x_tgt = target_pool.select_rows(&idx);
        let noise = model.sample_noise(b, rng);
        Self {
            x_src,
            x_tgt,
            noise,
        }
    }
}

/// Tape nodes of every objective term.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes {
    pub v_d: NodeId,
    pub v_g: NodeId,
    pub l1: NodeId,
    pub l2: NodeId,
    pub l_dis: NodeId,
    pub l_sim: NodeId,
    pub total: NodeId,
}

/// Which parameter groups become trainable leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    /// Both encoders and the generator.
    pub representation: bool,
    pub discriminator: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        representation: true,
        discriminator: true,
    };
    pub const NONE: Trainable = Trainable {
        representation: false,
        discriminator: false,
    };
}

/// Loss weights, adversarial form and ablation switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub alpha: f64,
    pub beta: f64,
    pub adv_mode: AdvMode,
    pub variant: Variant,
}

impl From<&TrainConfig> for ObjectiveSpec {
    fn from(c: &TrainConfig) -> Self {
        Self {
            alpha: c.alpha,
            beta: c.beta,
            adv_mode: c.adv_mode,
            variant: c.variant,
        }
    }
}

/// Records the full objective for `batch` on `tape`.
pub fn build_objective(
    model: &IradModel,
    tape: &mut Tape,
    batch: &StepBatch,
    spec: &ObjectiveSpec,
    trainable: Trainable,
) -> Result<ObjectiveNodes> {
    if batch.x_src.rows() != batch.x_tgt.rows() || batch.x_src.rows() != batch.noise.rows() {
        return Err(Error::shape(
            "training batch",
            batch.x_src.shape(),
            batch.x_tgt.shape(),
        ));
    }
    let rep = trainable.representation;
    let x_src = tape.constant(batch.x_src.clone());
    let x_tgt = tape.constant(batch.x_tgt.clone());

    let z_sh_s = model.forward_tape(NetRole::Shared, tape, x_src, rep)?;
    let z_pv_s = model.forward_tape(NetRole::Private, tape, x_src, rep)?;
    let z_sh_t = model.forward_tape(NetRole::Shared, tape, x_tgt, rep)?;

    let x_src_hat = model.generate_tape(tape, z_sh_s, z_pv_s, rep)?;
    let x_tgt_hat = model.generate_tape(tape, z_sh_t, z_pv_s, rep)?;

    let disc = trainable.discriminator;
    let d_real = model.forward_tape(NetRole::Discriminator, tape, x_src, disc)?;
    let mut fakes = vec![
        model.forward_tape(NetRole::Discriminator, tape, x_src_hat, disc)?,
        model.forward_tape(NetRole::Discriminator, tape, x_tgt_hat, disc)?,
    ];
    if spec.variant != Variant::NoXrnd {
        let z = tape.constant(batch.noise.clone());
        let x_rnd = model.generate_tape(tape, z_sh_s, z, rep)?;
        fakes.push(model.forward_tape(NetRole::Discriminator, tape, x_rnd, disc)?);
    }
    let v_d = discriminator_loss_tape(tape, d_real, &fakes, spec.adv_mode).map_err(term("v_d"))?;
    let v_g = generator_adv_loss_tape(tape, &fakes, spec.adv_mode).map_err(term("v_g"))?;

    let l1 = cycle_loss_tape(tape, x_src, x_src_hat).map_err(term("l1"))?;
    let l2 = cycle_loss_tape(tape, x_src, x_tgt_hat).map_err(term("l2"))?;
    let l_dis = dissimilarity_loss_tape(tape, z_sh_s, z_pv_s).map_err(term("l_dis"))?;
    let l_sim = similarity_loss_tape(tape, z_sh_s, z_sh_t).map_err(term("l_sim"))?;

    let mut build_total = || -> Result<NodeId> {
        let mut total = v_g;
        if spec.variant != Variant::NoCycle {
            let c = tape.add(l1, l2)?;
            let c = tape.scale(c, spec.alpha)?;
            total = tape.add(total, c)?;
        }
        let sep = if spec.variant == Variant::NoLsim {
            l_dis
        } else {
            tape.add(l_dis, l_sim)?
        };
        let sep = tape.scale(sep, spec.beta)?;
        tape.add(total, sep)
    };
    let total = build_total().map_err(term("total"))?;

    Ok(ObjectiveNodes {
        v_d,
        v_g,
        l1,
        l2,
        l_dis,
        l_sim,
        total,
    })
}

/// Tags a non-finite error with the objective term it arose in.
fn term(name: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(m) => {
            Error::NonFinite(format!("loss term {name} became non-finite in {m}"))
        }
        other => other,
    }
}

fn bundle(tape: &Tape, n: &ObjectiveNodes, spec: &ObjectiveSpec) -> Result<LossBundle> {
    Ok(LossBundle {
        v_d: tape.scalar(n.v_d)?,
        v_g: tape.scalar(n.v_g)?,
        l1: tape.scalar(n.l1)?,
        l2: tape.scalar(n.l2)?,
        l_dis: tape.scalar(n.l_dis)?,
        l_sim: tape.scalar(n.l_sim)?,
        total: tape.scalar(n.total)?,
        alpha: spec.alpha,
        beta: spec.beta,
    })
}

fn ensure_finite(b: &LossBundle) -> Result<()> {
    match b.non_finite_term() {
        Some(term) => Err(Error::NonFinite(format!(
            "loss term {term} became non-finite (v_d={}, v_g={}, l1={}, l2={}, l_dis={}, l_sim={}, total={})",
            b.v_d, b.v_g, b.l1, b.l2, b.l_dis, b.l_sim, b.total
        ))),
        None => Ok(()),
    }
}

/// Evaluates every objective term without touching the model.
pub fn evaluate_objective(
    model: &IradModel,
    batch: &StepBatch,
    spec: &ObjectiveSpec,
) -> Result<LossBundle> {
    let mut tape = Tape::new();
    let nodes = build_objective(model, &mut tape, batch, spec, Trainable::NONE)?;
    bundle(&tape, &nodes, spec)
}

fn representation_params(model: &mut IradModel) -> Vec<&mut Matrix> {
    let IradModel {
        e_sh, e_pv, g_src, ..
    } = model;
    [e_sh, e_pv, g_src]
        .into_iter()
        .flat_map(|m| m.params_mut())
        .collect()
}

/// The model with its two optimizers.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: IradModel,
    opt_d: Adam,
    opt_g: Adam,
    spec: ObjectiveSpec,
    d_steps: usize,
}

impl Trainer {
    pub fn new(model: IradModel, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt_d = Adam::new(cfg.adam, model.d_src.params());
        let mut m = model;
        let opt_g = Adam::new(
            cfg.adam,
            representation_params(&mut m).into_iter().map(|p| &*p),
        );
        Ok(Self {
            model: m,
            opt_d,
            opt_g,
            spec: cfg.into(),
            d_steps: cfg.d_steps_per_g_step,
        })
    }

    pub fn model(&self) -> &IradModel {
        &self.model
    }

    pub fn into_model(self) -> IradModel {
        self.model
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    /// One Adam step of the discriminator on `v_d`; returns the losses
    /// measured before the step.
    pub fn discriminator_update(&mut self, batch: &StepBatch) -> Result<LossBundle> {
        let mut tape = Tape::new();
        let trainable = Trainable {
            representation: false,
            discriminator: true,
        };
        let nodes = build_objective(&self.model, &mut tape, batch, &self.spec, trainable)?;
        let before = bundle(&tape, &nodes, &self.spec)?;
        ensure_finite(&before)?;
        let grads = tape.backward(nodes.v_d)?;
        let range = self.model.param_range(NetRole::Discriminator);
        let g: Vec<&Matrix> = range
            .map(|i| grads.get(ParamId(i)).expect("registered"))
            .collect();
        self.opt_d
            .step(&mut self.model.role_params_mut(NetRole::Discriminator), &g);
        Ok(before)
    }

    /// One Adam step of both encoders and the generator on the total
    /// objective; returns the losses measured before the step.
    pub fn representation_update(&mut self, batch: &StepBatch) -> Result<LossBundle> {
        let mut tape = Tape::new();
        let trainable = Trainable {
            representation: true,
            discriminator: false,
        };
        let nodes = build_objective(&self.model, &mut tape, batch, &self.spec, trainable)?;
        let before = bundle(&tape, &nodes, &self.spec)?;
        ensure_finite(&before)?;
        let grads = tape.backward(nodes.total)?;
        let end = self.model.param_range(NetRole::Generator).end;
        let g: Vec<&Matrix> = (0..end)
            .map(|i| grads.get(ParamId(i)).expect("registered"))
            .collect();
        self.opt_g
            .step(&mut representation_params(&mut self.model), &g);
        Ok(before)
    }

    /// Discriminator updates followed by one representation update; returns
    /// the losses seen by the representation update.
    pub fn step(&mut self, batch: &StepBatch) -> Result<LossBundle> {
        for _ in 0..self.d_steps {
            self.discriminator_update(batch)?;
        }
        self.representation_update(batch)
    }

    /// Like [`Trainer::step`] but returns the losses of the updated model on
    /// the same batch, at the cost of one extra forward pass.
    pub fn train_step(&mut self, batch: &StepBatch) -> Result<LossBundle> {
        for _ in 0..self.d_steps {
            self.discriminator_update(batch)?;
        }
        self.representation_update(batch)?;
        let after = evaluate_objective(&self.model, batch, &self.spec)?;
        ensure_finite(&after)?;
        Ok(after)
    }
}

/// Per-epoch record: mean losses over the epoch's steps and the holdout
/// proxy, when tracked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBundle,
    pub proxy_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch whose model was returned.
    pub selected_epoch: usize,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,v_d,v_g,l1,l2,l_dis,l_sim,total,proxy_val";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let l = &r.losses;
            let proxy = r.proxy_val.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.epoch, l.v_d, l.v_g, l.l1, l.l2, l.l_dis, l.l_sim, l.total, proxy
            ));
        }
        out
    }
}

/// First epoch (1-based) with the smallest proxy value.
pub fn select_epoch(proxy: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in proxy.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// Rows of the target pool held out for the early-stopping proxy.
pub fn holdout_size(n_t: usize) -> usize {
    ((0.2 * n_t as f64).round() as usize).max(2)
}

/// Cross-domain reconstruction of held-out target rows, each paired with a
/// fixed source row: mean over pairs of `|x_src - G(E_sh(x_tgt) + E_pv(x_src))|`.
pub struct HoldoutProxy {
    x_src: Matrix,
    x_tgt: Matrix,
}

impl HoldoutProxy {
    const PAIRS: usize = 256;

    pub fn new<R: Rng + ?Sized>(source: &Matrix, holdout: &Matrix, rng: &mut R) -> Self {
        let n = Self::PAIRS.max(holdout.rows());
        let src: Vec<usize> = (0..n).map(|_| rng.random_range(0..source.rows())).collect();
        let tgt: Vec<usize> = (0..n).map(|i| i % holdout.rows()).collect();
        Self {
            x_src: source.select_rows(&src),
            x_tgt: holdout.select_rows(&tgt),
        }
    }

    pub fn evaluate(&self, model: &IradModel) -> Result<f64> {
        let z_sh = model.encode_shared(&self.x_tgt)?;
        let z_pv = model.encode_private(&self.x_src)?;
        let x_hat = model.generate(&z_sh, &z_pv)?;
        let d = self.x_src.sub(&x_hat)?;
        Ok(d.iter_rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / d.rows() as f64)
    }
}

/// Trains `model` on normal source rows and the target pool.
pub fn fit(
    model: IradModel,
    source: &LabeledSet,
    target_train: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<(IradModel, TrainLog)> {
    fit_with(model, source, target_train, cfg, |_, _| Ok(()))
}

/// As [`fit`], calling `on_epoch(epoch, model)` after every epoch.
pub fn fit_with<F>(
    mut model: IradModel,
    source: &LabeledSet,
    target_train: &LabeledSet,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(IradModel, TrainLog)>
where
    F: FnMut(usize, &IradModel) -> Result<()>,
{
    cfg.validate()?;
    source.require_normal("source training set")?;
    target_train.require_normal("target training set")?;
    if source.len() < 2 || target_train.is_empty() {
        return Err(Error::Contract(format!(
            "need at least 2 source rows and 1 target row, got {} and {}",
            source.len(),
            target_train.len()
        )));
    }
    let d_x = model.config.d_x;
    if source.dim() != d_x || target_train.dim() != d_x {
        return Err(Error::shape(
            "training data",
            (source.len(), source.dim()),
            (target_train.len(), d_x),
        ));
    }
    model.config.adv_mode = cfg.adv_mode;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (pool, proxy) = match cfg.early_stop {
        EarlyStop::None => (target_train.x.clone(), None),
        EarlyStop::HoldoutProxy => {
            let n_hold = holdout_size(target_train.len());
            if n_hold >= target_train.len() {
                return Err(Error::Config(format!(
                    "holdout proxy needs more than {n_hold} target rows, got {}",
                    target_train.len()
                )));
            }
            let mut idx: Vec<usize> = (0..target_train.len()).collect();
            idx.shuffle(&mut rng);
            let hold = target_train.x.select_rows(&idx[..n_hold]);
            let pool = target_train.x.select_rows(&idx[n_hold..]);
            let proxy = HoldoutProxy::new(&source.x, &hold, &mut rng);
            (pool, Some(proxy))
        }
    };

    let mut trainer = Trainer::new(model, cfg)?;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, IradModel)> = None;
    let mut order: Vec<usize> = (0..source.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBundle::default();
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = StepBatch::sample(
                trainer.model(),
                source.x.select_rows(chunk),
                &pool,
                &mut rng,
            );
            let b = trainer.step(&batch).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}: {m}")),
                other => other,
            })?;
            sum.v_d += b.v_d;
            sum.v_g += b.v_g;
            sum.l1 += b.l1;
            sum.l2 += b.l2;
            sum.l_dis += b.l_dis;
            sum.l_sim += b.l_sim;
            sum.total += b.total;
            steps += 1;
        }
        let k = steps as f64;
        let losses = LossBundle {
            v_d: sum.v_d / k,
            v_g: sum.v_g / k,
            l1: sum.l1 / k,
            l2: sum.l2 / k,
            l_dis: sum.l_dis / k,
            l_sim: sum.l_sim / k,
            total: sum.total / k,
            alpha: cfg.alpha,
            beta: cfg.beta,
        };
        let proxy_val = proxy
            .as_ref()
            .map(|p| p.evaluate(trainer.model()))
            .transpose()?;
        if let Some(v) = proxy_val {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}: holdout proxy is {v}"
                )));
            }
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, trainer.model().clone()));
                log.selected_epoch = epoch;
            }
        }
        log.records.push(EpochRecord {
            epoch,
            losses,
            proxy_val,
        });
        log::debug!(
            "epoch {epoch}: total {:.5} proxy {:?}",
            losses.total,
            proxy_val
        );
        on_epoch(epoch, trainer.model())?;
    }

    let out = match best {
        Some((_, m)) => m,
        None => {
            log.selected_epoch = cfg.epochs;
            trainer.into_model()
        }
    };
    Ok((out, log))
}
