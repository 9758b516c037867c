//! Labeled feature sets, the synthetic two-domain benchmark, and CSV I/O.
//!
//! CSV layout: header `f0,...,f{d-1},label,domain`, one row per sample.
//! Floats are written in shortest round-trip form, so save then load is
//! bit-exact.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::sample_standard_normal;
use crate::numkit::{matmul_transb, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Config(format!("unknown domain {other:?}"))),
        }
    }
}

/// Feature rows with 0/1 labels (1 = anomaly) from a single domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub x: Matrix,
    pub y: Vec<u8>,
    pub domain: Domain,
}

impl LabeledSet {
    pub fn new(x: Matrix, y: Vec<u8>, domain: Domain) -> Result<Self> {
        if y.len() != x.rows() {
            return Err(Error::shape("labeled set", x.shape(), (y.len(), 1)));
        }
        if let Some(bad) = y.iter().find(|&&l| l > 1) {
            return Err(Error::Contract(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self { x, y, domain })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn n_anomalies(&self) -> usize {
        self.y.iter().filter(|&&l| l == 1).count()
    }

    /// Errors unless every label is 0.
    pub fn require_normal(&self, what: &str) -> Result<()> {
        match self.n_anomalies() {
            0 => Ok(()),
            n => Err(Error::Contract(format!(
                "{what} contains {n} anomalous rows; training data must be normal"
            ))),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            domain: self.domain,
        }
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&l| f64::from(l)).collect()
    }
}

/// Seeded shuffle into `(a, b)` with `a` holding `round(fraction * n)` rows.
pub fn split(set: &LabeledSet, fraction: f64, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (fraction * set.len() as f64).round() as usize;
    Ok((set.select(&idx[..cut]), set.select(&idx[cut..])))
}

pub fn save_csv(set: &LabeledSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..set.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    header.push("domain".into());
    w.write_record(&header).map_err(csv_err)?;
    let domain = set.domain.to_string();
    for (row, label) in set.x.iter_rows().zip(&set.y) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        rec.push(domain.clone());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<LabeledSet> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let n = header.len();
    let bad_header = || Error::Parse {
        line: 1,
        msg: "header must be f0,...,f{d-1},label,domain".into(),
    };
    if n < 3 || &header[n - 2] != "label" || &header[n - 1] != "domain" {
        return Err(bad_header());
    }
    let d = n - 2;
    if (0..d).any(|j| header[j] != format!("f{j}")) {
        return Err(bad_header());
    }

    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut domain = None;
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let err = |msg: String| Error::Parse { line, msg };
        if rec.len() != n {
            return Err(err(format!("expected {n} fields, found {}", rec.len())));
        }
        for j in 0..d {
            let v: f64 = rec[j]
                .trim()
                .parse()
                .map_err(|_| err(format!("f{j}: not a number: {:?}", &rec[j])))?;
            if !v.is_finite() {
                return Err(err(format!("f{j}: non-finite value {:?}", &rec[j])));
            }
            data.push(v);
        }
        y.push(match rec[d].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("label must be 0 or 1, found {other:?}"))),
        });
        let dom: Domain = rec[d + 1]
            .trim()
            .parse()
            .map_err(|e: Error| err(e.to_string()))?;
        match domain {
            None => domain = Some(dom),
            Some(prev) if prev != dom => {
                return Err(err(format!("mixed domains {prev} and {dom}")))
            }
            _ => {}
        }
    }
    let x = Matrix::from_vec(y.len(), d, data)?;
    LabeledSet::new(x, y, domain.unwrap_or(Domain::Source))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Parameters of the synthetic two-domain benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    /// Width of the shared latent that carries class content.
    pub k_shared: usize,
    /// Width of each domain's private latent.
    pub m_private: usize,
    pub d_x: usize,
    pub n_source: usize,
    pub n_t: usize,
    pub n_test: usize,
    /// Fraction of `target_test` that is anomalous.
    pub anomaly_fraction: f64,
    /// Distance anomalies are moved in shared-latent space.
    pub shift: f64,
    /// Standard deviation of the normal-class shared latent.
    pub inlier_scale: f64,
    /// Standard deviation of the private latent.
    pub private_scale: f64,
    /// Seeds of the two domain maps; equal seeds give identical domains.
    pub source_transform_seed: u64,
    pub target_transform_seed: u64,
    /// Squash features through tanh after the affine map.
    pub nonlinear: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            k_shared: 4,
            m_private: 4,
            d_x: 20,
            n_source: 2000,
            n_t: 50,
            n_test: 1000,
            anomaly_fraction: 0.2,
            shift: 4.0,
            inlier_scale: 0.25,
            private_scale: 1.0,
            source_transform_seed: 1,
            target_transform_seed: 2,
            nonlinear: true,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k_shared == 0 || self.m_private == 0 || self.d_x == 0 {
            return fail("benchmark dims must be positive".into());
        }
        if self.n_source < 2 || self.n_t == 0 || self.n_test < 2 {
            return fail("benchmark needs n_source >= 2, n_t >= 1, n_test >= 2".into());
        }
        if self.n_t >= self.n_source {
            return fail(format!(
                "n_t ({}) must be well below n_source ({})",
                self.n_t, self.n_source
            ));
        }
        if !(self.anomaly_fraction > 0.0 && self.anomaly_fraction < 1.0) {
            return fail(format!(
                "anomaly_fraction {} outside (0, 1)",
                self.anomaly_fraction
            ));
        }
        if !self.shift.is_finite()
            || self.shift < 0.0
            || !self.private_scale.is_finite()
            || self.private_scale < 0.0
            || !self.inlier_scale.is_finite()
            || self.inlier_scale < 0.0
        {
            return fail(
                "shift, inlier_scale and private_scale must be finite and non-negative".into(),
            );
        }
        Ok(())
    }

    pub fn n_test_anomalies(&self) -> usize {
        ((self.anomaly_fraction * self.n_test as f64).round() as usize).clamp(1, self.n_test - 1)
    }
}

/// A generated benchmark. `test_latent` holds the true shared latent of
/// every `target_test` row, for the oracle detector.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub source_train: LabeledSet,
    pub target_train: LabeledSet,
    pub target_test: LabeledSet,
    pub test_latent: Matrix,
}

struct DomainMap {
    /// `d_x x (k + m)`
    a: Matrix,
    /// `1 x d_x`
    c: Matrix,
}

impl DomainMap {
    fn new(spec: &BenchSpec, seed: u64, transform_seed: u64) -> Self {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ transform_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let w = spec.k_shared + spec.m_private;
        let a = sample_standard_normal(spec.d_x, w, &mut rng).scale(1.0 / (w as f64).sqrt());
        let c = sample_standard_normal(1, spec.d_x, &mut rng).scale(0.5);
        Self { a, c }
    }

    fn apply(&self, s: &Matrix, p: &Matrix, nonlinear: bool) -> Matrix {
        let latent = s.hstack(p).expect("same rows");
        let mut lin = matmul_transb(&latent, &self.a).expect("dims");
        for r in 0..lin.rows() {
            for (v, b) in lin.row_mut(r).iter_mut().zip(self.c.data()) {
                *v += b;
            }
        }
        if nonlinear {
            lin.map(f64::tanh)
        } else {
            lin
        }
    }
}

// Independent streams keep every split fixed when another split's size changes,
// so e.g. a larger n_t only appends target rows and leaves the test set alone.
const STREAM_SOURCE: u64 = 1;
const STREAM_TARGET_TRAIN: u64 = 2;
const STREAM_TARGET_TEST: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn unit_direction<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

/// Samples `n` rows, the first `n_anom` of them anomalous, and returns the
/// features alongside the shared latent. Rows are drawn one at a time so a
/// longer request extends a shorter one.
fn sample_domain(
    spec: &BenchSpec,
    map: &DomainMap,
    n: usize,
    n_anom: usize,
    rng: &mut ChaCha8Rng,
) -> (Matrix, Matrix) {
    let (k, m) = (spec.k_shared, spec.m_private);
    let mut s = Matrix::zeros(n, k);
    let mut p = Matrix::zeros(n, m);
    for r in 0..n {
        for v in s.row_mut(r) {
            let z: f64 = StandardNormal.sample(rng);
            *v = spec.inlier_scale * z;
        }
        if r < n_anom {
            let u = unit_direction(k, rng);
            for (v, d) in s.row_mut(r).iter_mut().zip(u) {
                *v += spec.shift * d;
            }
        }
        for v in p.row_mut(r) {
            let z: f64 = StandardNormal.sample(rng);
            *v = spec.private_scale * z;
        }
    }
    (map.apply(&s, &p, spec.nonlinear), s)
}

/// Generates `(source_train, target_train, target_test)` plus the test latent.
/// Training sets are all-normal; the anomalous test rows are shuffled in.
pub fn gen_two_domain(spec: &BenchSpec, seed: u64) -> Result<Benchmark> {
    spec.validate()?;
    let src_map = DomainMap::new(spec, seed, spec.source_transform_seed);
    let tgt_map = DomainMap::new(spec, seed, spec.target_transform_seed);

    let (xs, _) = sample_domain(
        spec,
        &src_map,
        spec.n_source,
        0,
        &mut stream(seed, STREAM_SOURCE),
    );
    let (xt, _) = sample_domain(
        spec,
        &tgt_map,
        spec.n_t,
        0,
        &mut stream(seed, STREAM_TARGET_TRAIN),
    );

    let mut rng = stream(seed, STREAM_TARGET_TEST);
    let n_anom = spec.n_test_anomalies();
    let (xq, sq) = sample_domain(spec, &tgt_map, spec.n_test, n_anom, &mut rng);
    let mut order: Vec<usize> = (0..spec.n_test).collect();
    order.shuffle(&mut rng);
    let yq: Vec<u8> = order.iter().map(|&i| u8::from(i < n_anom)).collect();

    Ok(Benchmark {
        source_train: LabeledSet::new(xs, vec![0; spec.n_source], Domain::Source)?,
        target_train: LabeledSet::new(xt, vec![0; spec.n_t], Domain::Target)?,
        target_test: LabeledSet::new(xq.select_rows(&order), yq, Domain::Target)?,
        test_latent: sq.select_rows(&order),
    })
}

/// Distance of each test row's true shared latent from the normal-class
/// centre; the Bayes-style reference detector for the benchmark.
pub fn oracle_scores(bench: &Benchmark) -> Vec<f64> {
    bench
        .test_latent
        .iter_rows()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchSpec {
        BenchSpec {
            n_source: 200,
            n_t: 10,
            n_test: 100,
            ..BenchSpec::default()
        }
    }

    #[test]
    fn shapes_and_labels() {
        let b = gen_two_domain(&small(), 0).unwrap();
        assert_eq!(b.source_train.x.shape(), (200, 20));
        assert_eq!(b.target_train.x.shape(), (10, 20));
        assert_eq!(b.target_test.x.shape(), (100, 20));
        assert_eq!(b.source_train.n_anomalies(), 0);
        assert_eq!(b.target_train.n_anomalies(), 0);
        assert_eq!(b.target_test.n_anomalies(), 20);
        assert_eq!(b.target_test.domain, Domain::Target);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = gen_two_domain(&small(), 3).unwrap();
        let b = gen_two_domain(&small(), 3).unwrap();
        let c = gen_two_domain(&small(), 4).unwrap();
        assert_eq!(a.target_test, b.target_test);
        assert_eq!(a.source_train, b.source_train);
        assert_ne!(a.source_train, c.source_train);
    }

    #[test]
    fn larger_n_t_extends_target_train_and_keeps_test() {
        let a = gen_two_domain(&small(), 1).unwrap();
        let b = gen_two_domain(&BenchSpec { n_t: 20, ..small() }, 1).unwrap();
        assert_eq!(b.target_train.head(10), a.target_train);
        assert_eq!(a.target_test, b.target_test);
        assert_eq!(a.source_train, b.source_train);
    }

    #[test]
    fn equal_transform_seeds_give_one_domain_map() {
        let spec = BenchSpec {
            target_transform_seed: 1,
            ..small()
        };
        let s = DomainMap::new(&spec, 5, spec.source_transform_seed);
        let t = DomainMap::new(&spec, 5, spec.target_transform_seed);
        assert_eq!(s.a, t.a);
        let d = DomainMap::new(&small(), 5, 2);
        assert_ne!(s.a, d.a);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(gen_two_domain(
            &BenchSpec {
                k_shared: 0,
                ..small()
            },
            0
        )
        .is_err());
        assert!(gen_two_domain(
            &BenchSpec {
                n_t: 500,
                ..small()
            },
            0
        )
        .is_err());
        assert!(gen_two_domain(
            &BenchSpec {
                anomaly_fraction: 1.0,
                ..small()
            },
            0
        )
        .is_err());
    }

    #[test]
    fn oracle_separates_classes() {
        let b = gen_two_domain(&BenchSpec::default(), 0).unwrap();
        let s = oracle_scores(&b);
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &yi) in b.target_test.y.iter().enumerate() {
            for (j, &yj) in b.target_test.y.iter().enumerate() {
                if yi == 1 && yj == 0 {
                    pairs += 1.0;
                    if s[i] > s[j] {
                        wins += 1.0;
                    }
                }
            }
        }
        assert!(wins / pairs >= 0.95, "oracle auroc {}", wins / pairs);
    }

    #[test]
    fn split_halves_and_is_seeded() {
        let x = Matrix::from_vec(10, 1, (0..10).map(f64::from).collect()).unwrap();
        let set = LabeledSet::new(x, vec![0; 10], Domain::Source).unwrap();
        let (a, b) = split(&set, 0.5, 7).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        assert_eq!(split(&set, 0.5, 7).unwrap().0, a);
        let mut all: Vec<f64> = a.x.data().iter().chain(b.x.data()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());
        assert!(split(&set, 0.0, 7).is_err());
        assert!(split(&set, 1.0, 7).is_err());
    }

    #[test]
    fn new_rejects_bad_labels() {
        assert!(LabeledSet::new(Matrix::zeros(2, 1), vec![0, 2], Domain::Source).is_err());
        assert!(LabeledSet::new(Matrix::zeros(2, 1), vec![0], Domain::Source).is_err());
    }
}
