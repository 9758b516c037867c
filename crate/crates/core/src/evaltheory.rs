//! AUROC, Jensen-Shannon distance between Bernoulli marginals, numerical
//! checks of the joint-error lower bound and of the marginal-distance lemma,
//! and a two-component PCA for plotting encodings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{matmul_transa, Matrix};

pub const DEFAULT_TOL: f64 = 1e-9;

/// Area under the ROC curve from rank statistics, ties counted half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auroc", (scores.len(), 1), (labels.len(), 1)));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auroc scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::Contract("auroc labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auroc needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are 1-based; tied runs share their average rank. Doubling keeps
    // everything in integers until the final division.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_avg = (i + 1 + j + 1) as u64;
        let pos_in_run = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        twice_rank_sum += twice_avg * pos_in_run;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u64, n_neg as u64);
    // 2U = 2 R_pos - n_pos (n_pos + 1)
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

fn binary_entropy_bits(p: f64) -> f64 {
    let h = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    h(p) + h(1.0 - p)
}

/// Square root of the base-2 Jensen-Shannon divergence between Bern(p) and Bern(q).
pub fn js_distance_bernoulli(p: f64, q: f64) -> Result<f64> {
    for v in [p, q] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Contract(format!("probability {v} outside [0, 1]")));
        }
    }
    let m = 0.5 * (p + q);
    let jsd = binary_entropy_bits(m) - 0.5 * (binary_entropy_bits(p) + binary_entropy_bits(q));
    Ok(jsd.max(0.0).sqrt())
}

fn rate(v: &[u8]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().filter(|&&b| b == 1).count() as f64 / v.len() as f64
    }
}

fn error_rate(pred: &[u8], y: &[u8]) -> Result<f64> {
    if pred.len() != y.len() {
        return Err(Error::shape("error rate", (pred.len(), 1), (y.len(), 1)));
    }
    if pred.is_empty() {
        return Err(Error::Contract("error rate of an empty set".into()));
    }
    Ok(pred.iter().zip(y).filter(|(a, b)| a != b).count() as f64 / pred.len() as f64)
}

/// Both sides of the joint-error lower bound for one pair of labelings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub eps_s: f64,
    pub eps_t: f64,
    /// JS distance between the source and target label marginals.
    pub d_js_labels: f64,
    /// JS distance between the source and target prediction marginals. The
    /// bound presumes one prediction marginal shared by both domains (what an
    /// invariant representation delivers); a non-zero value here means that
    /// premise does not hold for this instance.
    pub d_js_predictions: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl ErrorReport {
    /// The bound with the triangle inequality taken through both prediction
    /// marginals: `d(Y_S, Y_T) <= sqrt(eps_s) + d(P_S, P_T) + sqrt(eps_t)`.
    /// Holds for any predictor, shared marginal or not.
    pub fn general_bound_holds(&self, tol: f64) -> bool {
        self.d_js_labels <= self.eps_s.sqrt() + self.d_js_predictions + self.eps_t.sqrt() + tol
    }
}

/// Evaluates `eps_s + eps_t >= d_JS(Y_S, Y_T)^2 / 2` on empirical vectors.
pub fn joint_error_check(
    pred_s: &[u8],
    y_s: &[u8],
    pred_t: &[u8],
    y_t: &[u8],
    tol: f64,
) -> Result<ErrorReport> {
    let eps_s = error_rate(pred_s, y_s)?;
    let eps_t = error_rate(pred_t, y_t)?;
    let d_js_labels = js_distance_bernoulli(rate(y_s), rate(y_t))?;
    let d_js_predictions = js_distance_bernoulli(rate(pred_s), rate(pred_t))?;
    let lhs = eps_s + eps_t;
    let rhs = 0.5 * d_js_labels * d_js_labels;
    Ok(ErrorReport {
        eps_s,
        eps_t,
        d_js_labels,
        d_js_predictions,
        lhs,
        rhs,
        holds: lhs >= rhs - tol,
    })
}

/// `(d_JS(Y, Y_hat), sqrt(eps), d_JS <= sqrt(eps))` for one labeling.
pub fn lemma_jsd_check(pred: &[u8], y: &[u8]) -> Result<(f64, f64, bool)> {
    let eps = error_rate(pred, y)?;
    let d = js_distance_bernoulli(rate(y), rate(pred))?;
    let s = eps.sqrt();
    Ok((d, s, d <= s + 1e-12))
}

/// Maps scores to hard labels: `score >= threshold` is predicted anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub threshold: f64,
}

impl ThresholdRule {
    pub fn predict(&self, scores: &[f64]) -> Vec<u8> {
        scores
            .iter()
            .map(|&s| u8::from(s >= self.threshold))
            .collect()
    }
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub threshold: f64,
    pub report: ErrorReport,
}

/// Runs [`joint_error_check`] at every distinct score in either domain, plus
/// one threshold above all scores (everything predicted normal).
pub fn theory_sweep(
    scores_s: &[f64],
    y_s: &[u8],
    scores_t: &[f64],
    y_t: &[u8],
    tol: f64,
) -> Result<Vec<TheoryRow>> {
    let mut thresholds: Vec<f64> = scores_s.iter().chain(scores_t).copied().collect();
    if thresholds.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("theory sweep scores contain NaN".into()));
    }
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    thresholds
        .into_iter()
        .map(|threshold| {
            let rule = ThresholdRule { threshold };
            let report = joint_error_check(
                &rule.predict(scores_s),
                y_s,
                &rule.predict(scores_t),
                y_t,
                tol,
            )?;
            Ok(TheoryRow { threshold, report })
        })
        .collect()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape("symmetric_eigen", a.shape(), a.shape()));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m.get(b, b).total_cmp(&m.get(a, a)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, c, v.get(r, i));
        }
    }
    Ok((values, vectors))
}

/// Two-component PCA output.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    /// `n x 2` projection of the centred points.
    pub projection: Matrix,
    /// Variance along each component.
    pub explained: [f64; 2],
    /// `d x 2`, columns are unit loadings.
    pub components: Matrix,
}

/// Projects mean-centred points onto the top two covariance eigenvectors.
/// Each component's sign makes its largest-magnitude loading positive.
pub fn pca_2d(points: &Matrix) -> Result<Pca2d> {
    let (n, d) = points.shape();
    if n < 2 || d < 2 {
        return Err(Error::Contract(format!(
            "pca_2d needs at least 2 points and 2 dims, got {n}x{d}"
        )));
    }
    let mean = points.col_means();
    let mut centred = points.clone();
    for r in 0..n {
        for (v, m) in centred.row_mut(r).iter_mut().zip(mean.data()) {
            *v -= m;
        }
    }
    let cov = matmul_transa(&centred, &centred)?.scale(1.0 / (n - 1) as f64);
    if cov.data().iter().all(|&v| v == 0.0) {
        log::warn!("pca_2d: all points coincide, returning a zero projection");
        return Ok(Pca2d {
            projection: Matrix::zeros(n, 2),
            explained: [0.0, 0.0],
            components: Matrix::zeros(d, 2),
        });
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    let mut components = Matrix::zeros(d, 2);
    for c in 0..2 {
        let col: Vec<f64> = (0..d).map(|r| vectors.get(r, c)).collect();
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for (r, v) in col.into_iter().enumerate() {
            components.set(r, c, sign * v);
        }
    }
    let projection = crate::numkit::matmul(&centred, &components)?;
    Ok(Pca2d {
        projection,
        explained: [values[0].max(0.0), values[1].max(0.0)],
        components,
    })
}
