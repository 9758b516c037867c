//! The four networks and the latent-space plumbing between them.
//!
//! `e_sh` maps data to shared codes, `e_pv` to source-private codes, `g_src`
//! maps a (shared, private) pair back to data space and `d_src` scores how much
//! an input looks like real source data.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Activation, Matrix, Mlp, NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdvMode {
    /// Cross-entropy GAN objective on sigmoid probabilities.
    #[default]
    Vanilla,
    /// Least-squares GAN objective on raw scores.
    LeastSquares,
}

impl std::fmt::Display for AdvMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdvMode::Vanilla => "vanilla",
            AdvMode::LeastSquares => "least_squares",
        })
    }
}

impl std::str::FromStr for AdvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(AdvMode::Vanilla),
            "least_squares" | "lsgan" => Ok(AdvMode::LeastSquares),
            other => Err(Error::Config(format!("unknown adversarial mode `{other}`"))),
        }
    }
}

/// How shared and private codes are combined before the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Concat,
    /// Elementwise sum; needs `d_z == d_p`.
    Sum,
}

impl std::str::FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Combine::Concat),
            "sum" => Ok(Combine::Sum),
            other => Err(Error::Config(format!("unknown code combination `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetRole {
    Shared,
    Private,
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_z: usize,
    pub d_p: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub adv_mode: AdvMode,
    pub combine: Combine,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_x: 20,
            d_z: 8,
            d_p: 8,
            hidden: 32,
            hidden_layers: 2,
            adv_mode: AdvMode::Vanilla,
            combine: Combine::Concat,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 || self.d_z == 0 || self.d_p == 0 || self.hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.combine == Combine::Sum && self.d_z != self.d_p {
            return Err(Error::Config(format!(
                "sum combination needs d_z == d_p, got {} and {}",
                self.d_z, self.d_p
            )));
        }
        Ok(())
    }

    fn code_dim(&self) -> usize {
        match self.combine {
            Combine::Concat => self.d_z + self.d_p,
            Combine::Sum => self.d_z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IradModel {
    pub e_sh: Mlp,
    pub e_pv: Mlp,
    pub g_src: Mlp,
    pub d_src: Mlp,
    pub config: ModelConfig,
}

impl IradModel {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let widths = |from: usize, to: usize| {
            let mut w = vec![from];
            w.extend(std::iter::repeat_n(c.hidden, c.hidden_layers));
            w.push(to);
            w
        };
        let t = Activation::Tanh;
        let id = Activation::Identity;
        let e_sh = Mlp::init(&widths(c.d_x, c.d_z), t, id, rng)?;
        let e_pv = Mlp::init(&widths(c.d_x, c.d_p), t, id, rng)?;
        let g_src = Mlp::init(&widths(c.code_dim(), c.d_x), t, id, rng)?;
        let d_src = Mlp::init(&widths(c.d_x, 1), t, id, rng)?;
        Self::from_parts(e_sh, e_pv, g_src, d_src, config)
    }

    /// Assembles a model from existing networks, checking every dimension chain.
    pub fn from_parts(
        e_sh: Mlp,
        e_pv: Mlp,
        g_src: Mlp,
        d_src: Mlp,
        config: ModelConfig,
    ) -> Result<Self> {
        config.validate()?;
        let check = |name: &str, net: &Mlp, i: usize, o: usize| {
            if net.in_dim() != i || net.out_dim() != o {
                Err(Error::Config(format!(
                    "{name} maps {}->{}, expected {i}->{o}",
                    net.in_dim(),
                    net.out_dim()
                )))
            } else {
                Ok(())
            }
        };
        check("e_sh", &e_sh, config.d_x, config.d_z)?;
        check("e_pv", &e_pv, config.d_x, config.d_p)?;
        check("g_src", &g_src, config.code_dim(), config.d_x)?;
        check("d_src", &d_src, config.d_x, 1)?;
        Ok(Self {
            e_sh,
            e_pv,
            g_src,
            d_src,
            config,
        })
    }

    pub fn net(&self, role: NetRole) -> &Mlp {
        match role {
            NetRole::Shared => &self.e_sh,
            NetRole::Private => &self.e_pv,
            NetRole::Generator => &self.g_src,
            NetRole::Discriminator => &self.d_src,
        }
    }

    fn net_mut(&mut self, role: NetRole) -> &mut Mlp {
        match role {
            NetRole::Shared => &mut self.e_sh,
            NetRole::Private => &mut self.e_pv,
            NetRole::Generator => &mut self.g_src,
            NetRole::Discriminator => &mut self.d_src,
        }
    }

    const ORDER: [NetRole; 4] = [
        NetRole::Shared,
        NetRole::Private,
        NetRole::Generator,
        NetRole::Discriminator,
    ];

    /// Contiguous parameter-id range owned by `role`, in the flat ordering
    /// used by [`IradModel::params`].
    pub fn param_range(&self, role: NetRole) -> Range<usize> {
        let mut start = 0;
        for r in Self::ORDER {
            let n = self.net(r).param_count();
            if r == role {
                return start..start + n;
            }
            start += n;
        }
        unreachable!()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        Self::ORDER
            .iter()
            .flat_map(|&r| self.net(r).params())
            .collect()
    }

    pub fn role_params_mut(&mut self, role: NetRole) -> Vec<&mut Matrix> {
        self.net_mut(role).params_mut()
    }

    /// Copy of the model with every parameter replaced, in [`IradModel::params`] order.
    pub fn with_params(&self, values: &[Matrix]) -> Result<Self> {
        let mut out = self.clone();
        let slots: Vec<&mut Matrix> =
            [&mut out.e_sh, &mut out.e_pv, &mut out.g_src, &mut out.d_src]
                .into_iter()
                .flat_map(Mlp::params_mut)
                .collect();
        if slots.len() != values.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter matrices, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.into_iter().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::shape("with_params", slot.shape(), v.shape()));
            }
            *slot = v.clone();
        }
        Ok(out)
    }

    pub fn encode_shared(&self, x: &Matrix) -> Result<Matrix> {
        self.e_sh.forward(x)
    }

    pub fn encode_private(&self, x: &Matrix) -> Result<Matrix> {
        self.e_pv.forward(x)
    }

    pub fn combine_codes(&self, z_sh: &Matrix, z_pv: &Matrix) -> Result<Matrix> {
        if z_sh.rows() != z_pv.rows() {
            return Err(Error::shape("generate", z_sh.shape(), z_pv.shape()));
        }
        if z_sh.cols() != self.config.d_z || z_pv.cols() != self.config.d_p {
            return Err(Error::shape("generate", z_sh.shape(), z_pv.shape()));
        }
        match self.config.combine {
            Combine::Concat => z_sh.hstack(z_pv),
            Combine::Sum => z_sh.add(z_pv),
        }
    }

    pub fn generate(&self, z_sh: &Matrix, z_pv: &Matrix) -> Result<Matrix> {
        self.g_src.forward(&self.combine_codes(z_sh, z_pv)?)
    }

    pub fn discriminate(&self, x: &Matrix) -> Result<Matrix> {
        self.d_src.forward(x)
    }

    /// `B x d_p` standard-normal draws standing in for private codes.
    pub fn sample_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Matrix {
        sample_standard_normal(batch, self.config.d_p, rng)
    }

    /// Generation from the shared code of `x_src` and a fresh noise private code.
    pub fn make_x_rnd<R: Rng + ?Sized>(&self, x_src: &Matrix, rng: &mut R) -> Result<Matrix> {
        let z_sh = self.encode_shared(x_src)?;
        let z = self.sample_noise(x_src.rows(), rng);
        self.generate(&z_sh, &z)
    }

    /// Records `role`'s forward pass; trainable when `trainable` is set,
    /// otherwise its weights enter the tape as constants.
    pub fn forward_tape(
        &self,
        role: NetRole,
        tape: &mut Tape,
        x: NodeId,
        trainable: bool,
    ) -> Result<NodeId> {
        let base = trainable.then(|| self.param_range(role).start);
        self.net(role).forward_tape(tape, x, base)
    }

    pub fn generate_tape(
        &self,
        tape: &mut Tape,
        z_sh: NodeId,
        z_pv: NodeId,
        trainable: bool,
    ) -> Result<NodeId> {
        let (a, b) = (tape.value(z_sh).shape(), tape.value(z_pv).shape());
        if a.0 != b.0 || a.1 != self.config.d_z || b.1 != self.config.d_p {
            return Err(Error::shape("generate", a, b));
        }
        let code = match self.config.combine {
            Combine::Concat => tape.concat_cols(z_sh, z_pv)?,
            Combine::Sum => tape.add(z_sh, z_pv)?,
        };
        self.forward_tape(NetRole::Generator, tape, code, trainable)
    }
}

pub fn sample_standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("finite normal draws")
}
