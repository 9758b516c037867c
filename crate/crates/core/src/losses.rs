//! Objective terms: the adversarial value for both players, the two cycle
//! reconstruction losses, shared/private dissimilarity, cross-domain shared
//! similarity, and their weighted total.
//!
//! Each term has a tape builder (used for training and gradient checks) and a
//! value wrapper that evaluates the same builder on a scratch tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AdvMode;
use crate::numkit::{Matrix, NodeId, Tape};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.5;

/// All loss terms from one evaluation. `total` is what the encoders and the
/// generator minimize; `v_d` is what the discriminator minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBundle {
    pub v_d: f64,
    pub v_g: f64,
    pub l1: f64,
    pub l2: f64,
    pub l_dis: f64,
    pub l_sim: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossBundle {
    /// First non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("v_d", self.v_d),
            ("v_g", self.v_g),
            ("l1", self.l1),
            ("l2", self.l2),
            ("l_dis", self.l_dis),
            ("l_sim", self.l_sim),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn check_scores(tape: &Tape, nodes: &[NodeId]) -> Result<()> {
    let first = tape.value(nodes[0]).shape();
    for &n in nodes {
        let s = tape.value(n).shape();
        if s.1 != 1 || s.0 != first.0 {
            return Err(Error::shape("adversarial scores", first, s));
        }
    }
    Ok(())
}

/// Discriminator loss. Fake streams are averaged with equal weight.
pub fn discriminator_loss_tape(
    tape: &mut Tape,
    real: NodeId,
    fakes: &[NodeId],
    mode: AdvMode,
) -> Result<NodeId> {
    if fakes.is_empty() {
        return Err(Error::Contract(
            "at least one fake stream is required".into(),
        ));
    }
    let mut all = vec![real];
    all.extend_from_slice(fakes);
    check_scores(tape, &all)?;
    let k = fakes.len() as f64;
    match mode {
        AdvMode::Vanilla => {
            // -mean log s(real) - 1/k sum mean log(1 - s(fake)), using 1 - s(x) = s(-x)
            let lr = tape.log_sigmoid(real)?;
            let mut acc = tape.mean(lr)?;
            for &f in fakes {
                let neg = tape.scale(f, -1.0)?;
                let lf = tape.log_sigmoid(neg)?;
                let m = tape.mean(lf)?;
                let m = tape.scale(m, 1.0 / k)?;
                acc = tape.add(acc, m)?;
            }
            tape.scale(acc, -1.0)
        }
        AdvMode::LeastSquares => {
            let r = tape.offset(real, -1.0)?;
            let r = tape.square(r)?;
            let mut acc = tape.mean(r)?;
            for &f in fakes {
                let sq = tape.square(f)?;
                let m = tape.mean(sq)?;
                let m = tape.scale(m, 1.0 / k)?;
                acc = tape.add(acc, m)?;
            }
            Ok(acc)
        }
    }
}

/// Non-saturating generator-side adversarial loss.
pub fn generator_adv_loss_tape(tape: &mut Tape, fakes: &[NodeId], mode: AdvMode) -> Result<NodeId> {
    if fakes.is_empty() {
        return Err(Error::Contract(
            "at least one fake stream is required".into(),
        ));
    }
    check_scores(tape, fakes)?;
    let k = fakes.len() as f64;
    let mut acc: Option<NodeId> = None;
    for &f in fakes {
        let term = match mode {
            AdvMode::Vanilla => {
                let l = tape.log_sigmoid(f)?;
                tape.mean(l)?
            }
            AdvMode::LeastSquares => {
                let d = tape.offset(f, -1.0)?;
                let d = tape.square(d)?;
                tape.mean(d)?
            }
        };
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let sign = match mode {
        AdvMode::Vanilla => -1.0,
        AdvMode::LeastSquares => 1.0,
    };
    tape.scale(acc.expect("non-empty"), sign / k)
}

/// Mean over rows of the Euclidean distance between `x` and `x_hat`.
pub fn cycle_loss_tape(tape: &mut Tape, x: NodeId, x_hat: NodeId) -> Result<NodeId> {
    let d = tape.sub(x, x_hat)?;
    let n = tape.row_norm(d)?;
    tape.mean(n)
}

/// Frobenius norm of the cosine-similarity matrix between shared and private
/// codes, divided by the batch size. With equal code widths this is the
/// `B x B` matrix of pairwise cosines between rows; with unequal widths the
/// `d_z x d_p` cross-product of the normalized codes is used instead.
pub fn dissimilarity_loss_tape(tape: &mut Tape, z_sh: NodeId, z_pv: NodeId) -> Result<NodeId> {
    let (a, b) = (tape.value(z_sh).shape(), tape.value(z_pv).shape());
    if a.0 != b.0 {
        return Err(Error::shape("dissimilarity_loss", a, b));
    }
    let batch = a.0 as f64;
    let ns = tape.row_normalize(z_sh)?;
    let np = tape.row_normalize(z_pv)?;
    let gram = if a.1 == b.1 {
        tape.matmul_transb(ns, np)?
    } else {
        let nst = tape.transpose(ns)?;
        tape.matmul(nst, np)?
    };
    let f = tape.frobenius_norm(gram)?;
    tape.scale(f, 1.0 / batch)
}

/// Negative Frobenius norm of the cross-domain cosine matrix of shared codes,
/// scaled by `1/sqrt(B_s * B_t)`; lies in `[-1, 0]`.
pub fn similarity_loss_tape(tape: &mut Tape, z_src: NodeId, z_tgt: NodeId) -> Result<NodeId> {
    let (a, b) = (tape.value(z_src).shape(), tape.value(z_tgt).shape());
    if a.1 != b.1 {
        return Err(Error::shape("similarity_loss", a, b));
    }
    let ns = tape.row_normalize(z_src)?;
    let nt = tape.row_normalize(z_tgt)?;
    let gram = tape.matmul_transb(ns, nt)?;
    let f = tape.frobenius_norm(gram)?;
    tape.scale(f, -1.0 / ((a.0 * b.0) as f64).sqrt())
}

fn scratch<F>(inputs: &[&Matrix], build: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let nodes: Vec<NodeId> = inputs.iter().map(|m| tape.constant((*m).clone())).collect();
    let out = build(&mut tape, &nodes)?;
    tape.scalar(out)
}

/// `(v_d, v_g)` for raw discriminator scores on real data and on the
/// generated streams (normally three: reconstruction, target-shared, noise).
pub fn adv_losses(d_real: &Matrix, d_fakes: &[&Matrix], mode: AdvMode) -> Result<(f64, f64)> {
    let mut all = vec![d_real];
    all.extend_from_slice(d_fakes);
    let v_d = scratch(&all, |t, n| discriminator_loss_tape(t, n[0], &n[1..], mode))?;
    let v_g = scratch(d_fakes, |t, n| generator_adv_loss_tape(t, n, mode))?;
    Ok((v_d, v_g))
}

/// `(l1, l2)`: reconstruction distance of the source batch and of the
/// target-shared generation, both against `x_src`.
pub fn cycle_losses(x_src: &Matrix, x_src_hat: &Matrix, x_tgt_hat: &Matrix) -> Result<(f64, f64)> {
    let l1 = scratch(&[x_src, x_src_hat], |t, n| cycle_loss_tape(t, n[0], n[1]))?;
    let l2 = scratch(&[x_src, x_tgt_hat], |t, n| cycle_loss_tape(t, n[0], n[1]))?;
    Ok((l1, l2))
}

pub fn dissimilarity_loss(z_sh: &Matrix, z_pv: &Matrix) -> Result<f64> {
    scratch(&[z_sh, z_pv], |t, n| dissimilarity_loss_tape(t, n[0], n[1]))
}

pub fn similarity_loss(z_sh_src: &Matrix, z_sh_tgt: &Matrix) -> Result<f64> {
    scratch(&[z_sh_src, z_sh_tgt], |t, n| {
        similarity_loss_tape(t, n[0], n[1])
    })
}

/// `v_g + alpha (l1 + l2) + beta (l_dis + l_sim)`.
pub fn total_objective(
    v_g: f64,
    l1: f64,
    l2: f64,
    l_dis: f64,
    l_sim: f64,
    alpha: f64,
    beta: f64,
) -> f64 {
    v_g + alpha * (l1 + l2) + beta * (l_dis + l_sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_standard_normal;
    use crate::numkit::{grad_check, ParamId, DEFAULT_EPS};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn randn(r: usize, c: usize, seed: u64) -> Matrix {
        sample_standard_normal(r, c, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
    }

    fn pairwise_frob(a: &Matrix, b: &Matrix) -> f64 {
        let mut s = 0.0;
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                s += cosine(a.row(i), b.row(j)).powi(2);
            }
        }
        s.sqrt()
    }

    #[test]
    fn vanilla_at_half_probability() {
        let z = Matrix::zeros(4, 1);
        let (v_d, v_g) = adv_losses(&z, &[&z, &z, &z], AdvMode::Vanilla).unwrap();
        let ln2 = 2f64.ln();
        assert!((v_d - 2.0 * ln2).abs() < 1e-15);
        assert!((v_g - ln2).abs() < 1e-15);
    }

    #[test]
    fn least_squares_at_optimum() {
        let real = Matrix::filled(3, 1, 1.0);
        let fake = Matrix::zeros(3, 1);
        let (v_d, v_g) = adv_losses(&real, &[&fake, &fake, &fake], AdvMode::LeastSquares).unwrap();
        assert_eq!(v_d, 0.0);
        assert_eq!(v_g, 1.0);
    }

    #[test]
    fn adversarial_matches_scalar_loop() {
        let real = randn(5, 1, 1);
        let fakes = [randn(5, 1, 2), randn(5, 1, 3), randn(5, 1, 4)];
        let refs: Vec<&Matrix> = fakes.iter().collect();
        let mean =
            |v: &Matrix, f: &dyn Fn(f64) -> f64| v.data().iter().map(|&x| f(x)).sum::<f64>() / 5.0;

        let (v_d, v_g) = adv_losses(&real, &refs, AdvMode::Vanilla).unwrap();
        let mut d = -mean(&real, &|x| sig(x).ln());
        let mut g = 0.0;
        for f in &fakes {
            d -= mean(f, &|x| (1.0 - sig(x)).ln()) / 3.0;
            g -= mean(f, &|x| sig(x).ln()) / 3.0;
        }
        assert!((v_d - d).abs() < 1e-12);
        assert!((v_g - g).abs() < 1e-12);

        let (v_d, v_g) = adv_losses(&real, &refs, AdvMode::LeastSquares).unwrap();
        let mut d = mean(&real, &|x| (x - 1.0).powi(2));
        let mut g = 0.0;
        for f in &fakes {
            d += mean(f, &|x| x * x) / 3.0;
            g += mean(f, &|x| (x - 1.0).powi(2)) / 3.0;
        }
        assert!((v_d - d).abs() < 1e-12);
        assert!((v_g - g).abs() < 1e-12);
    }

    #[test]
    fn adversarial_rejects_batch_mismatch() {
        let a = Matrix::zeros(3, 1);
        let b = Matrix::zeros(4, 1);
        assert!(adv_losses(&a, &[&b], AdvMode::Vanilla).is_err());
    }

    #[test]
    fn discriminator_loss_decreases_towards_separation() {
        let mut prev = f64::INFINITY;
        for step in 0..20 {
            let t = step as f64 * 0.5;
            let real = Matrix::filled(2, 1, t);
            let fake = Matrix::filled(2, 1, -t);
            let (v_d, _) = adv_losses(&real, &[&fake, &fake, &fake], AdvMode::Vanilla).unwrap();
            assert!(v_d < prev);
            prev = v_d;
        }
    }

    #[test]
    fn cycle_cases() {
        let x = randn(3, 4, 5);
        assert_eq!(cycle_losses(&x, &x, &x).unwrap(), (0.0, 0.0));
        let (l1, _) = cycle_losses(
            &m(&[vec![0.0, 0.0]]),
            &m(&[vec![3.0, 4.0]]),
            &m(&[vec![0.0, 0.0]]),
        )
        .unwrap();
        assert_eq!(l1, 5.0);
    }

    #[test]
    fn cycle_matches_row_loop() {
        let x = randn(6, 5, 6);
        let a = randn(6, 5, 7);
        let b = randn(6, 5, 8);
        let (l1, l2) = cycle_losses(&x, &a, &b).unwrap();
        let oracle = |h: &Matrix| {
            (0..6)
                .map(|r| {
                    x.row(r)
                        .iter()
                        .zip(h.row(r))
                        .map(|(p, q)| (p - q).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / 6.0
        };
        assert!((l1 - oracle(&a)).abs() < 1e-12);
        assert!((l2 - oracle(&b)).abs() < 1e-12);
        assert!(cycle_losses(&x, &randn(5, 5, 1), &b).is_err());
    }

    #[test]
    fn dissimilarity_cases() {
        assert_eq!(
            dissimilarity_loss(&m(&[vec![1.0, 0.0]]), &m(&[vec![0.0, 1.0]])).unwrap(),
            0.0
        );
        assert_eq!(
            dissimilarity_loss(&m(&[vec![1.0, 0.0]]), &m(&[vec![1.0, 0.0]])).unwrap(),
            1.0
        );
        let a = randn(4, 3, 9);
        let b = randn(4, 3, 10);
        let got = dissimilarity_loss(&a, &b).unwrap();
        assert!((got - pairwise_frob(&a, &b) / 4.0).abs() < 1e-12);
        assert!(dissimilarity_loss(&a, &randn(3, 3, 1)).is_err());
    }

    #[test]
    fn dissimilarity_with_unequal_widths() {
        let a = randn(5, 3, 11);
        let b = randn(5, 2, 12);
        let got = dissimilarity_loss(&a, &b).unwrap();
        // ||A^T B||_F over normalized rows, by explicit sums
        let na = crate::numkit::normalize_rows(&a);
        let nb = crate::numkit::normalize_rows(&b);
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                let v: f64 = (0..5).map(|r| na.get(r, i) * nb.get(r, j)).sum();
                s += v * v;
            }
        }
        assert!((got - s.sqrt() / 5.0).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn similarity_cases() {
        assert_eq!(
            similarity_loss(&m(&[vec![0.6, 0.8]]), &m(&[vec![0.6, 0.8]])).unwrap(),
            -1.0
        );
        assert_eq!(
            similarity_loss(&m(&[vec![1.0, 0.0]]), &m(&[vec![0.0, 2.0]])).unwrap(),
            0.0
        );
        let a = randn(4, 3, 13);
        let b = randn(6, 3, 14);
        let got = similarity_loss(&a, &b).unwrap();
        assert!((got + pairwise_frob(&a, &b) / 24f64.sqrt()).abs() < 1e-12);
        assert!(similarity_loss(&a, &randn(6, 2, 1)).is_err());
    }

    #[test]
    fn total_cases() {
        assert!((total_objective(1.0, 2.0, 3.0, 0.4, -0.4, 1.0, 0.5) - 6.0).abs() < 1e-15);
        assert_eq!(total_objective(0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hand = p[0] + 1.0 * (p[1] + p[2]) + 0.5 * (p[3] + p[4]);
        assert_eq!(
            total_objective(p[0], p[1], p[2], p[3], p[4], 1.0, 0.5),
            hand
        );
    }

    #[test]
    fn zero_rows_do_not_break_normalized_losses() {
        let a = m(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let b = m(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(dissimilarity_loss(&a, &b).unwrap().is_finite());
        assert!(similarity_loss(&a, &b).unwrap().is_finite());
    }

    fn check_grad(
        inputs: Vec<Matrix>,
        build: impl Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
    ) -> f64 {
        grad_check(&inputs, DEFAULT_EPS, |p, t| {
            let nodes: Vec<NodeId> = p
                .iter()
                .enumerate()
                .map(|(i, v)| t.param(ParamId(i), v))
                .collect();
            build(t, &nodes)
        })
        .unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = |seed| randn(5, 1, seed);
        for mode in [AdvMode::Vanilla, AdvMode::LeastSquares] {
            let e = check_grad(vec![s(1), s(2), s(3), s(4)], |t, n| {
                discriminator_loss_tape(t, n[0], &n[1..], mode)
            });
            assert!(e < 1e-4, "v_d {mode:?}: {e}");
            let e = check_grad(vec![s(2), s(3), s(4)], |t, n| {
                generator_adv_loss_tape(t, n, mode)
            });
            assert!(e < 1e-4, "v_g {mode:?}: {e}");
        }
        let e = check_grad(vec![randn(4, 3, 5), randn(4, 3, 6)], |t, n| {
            cycle_loss_tape(t, n[0], n[1])
        });
        assert!(e < 1e-4, "cycle: {e}");
        let e = check_grad(vec![randn(4, 3, 7), randn(4, 3, 8)], |t, n| {
            dissimilarity_loss_tape(t, n[0], n[1])
        });
        assert!(e < 1e-4, "dis: {e}");
        let e = check_grad(vec![randn(4, 3, 9), randn(4, 2, 10)], |t, n| {
            dissimilarity_loss_tape(t, n[0], n[1])
        });
        assert!(e < 1e-4, "dis unequal: {e}");
        let e = check_grad(vec![randn(4, 3, 11), randn(6, 3, 12)], |t, n| {
            similarity_loss_tape(t, n[0], n[1])
        });
        assert!(e < 1e-4, "sim: {e}");
    }

    proptest! {
        #[test]
        fn bounded_and_scale_invariant(seed in 0u64..5000, b in 1usize..7, d in 1usize..6, c in 0.01f64..100.0, row in 0usize..7) {
            let a = randn(b, d, seed);
            let p = randn(b, d, seed + 1);
            let t = randn(b + 1, d, seed + 2);
            let dis = dissimilarity_loss(&a, &p).unwrap();
            let sim = similarity_loss(&a, &t).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&dis));
            prop_assert!((-1.0 - 1e-12..=1e-12).contains(&sim));

            let r = row % b;
            let mut scaled = a.clone();
            for v in scaled.row_mut(r) { *v *= c; }
            prop_assert!((dissimilarity_loss(&scaled, &p).unwrap() - dis).abs() <= 1e-12);
            prop_assert!((similarity_loss(&scaled, &t).unwrap() - sim).abs() <= 1e-12);
        }
    }
}
