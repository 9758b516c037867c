//! Central finite-difference gradient checking.

use super::matrix::Matrix;
use super::tape::{NodeId, ParamId, Tape};
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Largest relative disagreement between tape gradients and central
/// differences, `|analytic - numeric| / (|numeric| + 1e-8)`, over every entry
/// of every parameter.
///
/// `f` must build a scalar on the tape and register `params[i]` as
/// `ParamId(i)`. It is called once on a recording tape and twice per entry on
/// perturbed copies.
pub fn grad_check<F>(params: &[Matrix], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&[Matrix], &mut Tape) -> Result<NodeId>,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    let grads = tape.backward(loss)?;

    let eval = |p: &[Matrix]| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(p, &mut t)?;
        t.scalar(l)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Matrix> = params.to_vec();
    for i in 0..params.len() {
        let zeros = Matrix::zeros(params[i].rows(), params[i].cols());
        let analytic = grads.get(ParamId(i)).unwrap_or(&zeros).clone();
        for k in 0..params[i].data().len() {
            let orig = params[i].data()[k];
            work[i].data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (analytic.data()[k] - numeric).abs() / (numeric.abs() + 1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let build = |p: &[Matrix], t: &mut Tape| {
            let w = t.param(ParamId(0), &p[0]);
            let sq = t.square(w)?;
            let m = t.mean(sq)?;
            t.scale(m, 2.0)
        };
        let mut tape = Tape::new();
        let loss = build(std::slice::from_ref(&w), &mut tape).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[2.0, 4.0]);
        assert!(grad_check(&[w], DEFAULT_EPS, build).unwrap() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let w = Matrix::from_rows(&[vec![1.0, -3.0]]).unwrap();
        let err = grad_check(&[w], DEFAULT_EPS, |p, t| {
            t.param(ParamId(0), &p[0]);
            Ok(t.constant(Matrix::scalar(4.0)))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
