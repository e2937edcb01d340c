//! Synthetic datasets on the unit sphere, target functions, and their
//! on-disk format (CSV plus a JSON sidecar).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::activation::ActivationKind;
use crate::kernelgram;
use crate::sampling::{derive_seed, dot, fill_sphere, norm, rng_from_seed, unit_sphere};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
/// Datasets whose kernel matrix has a smaller eigenvalue are tagged degenerate.
pub const DEGENERATE_LAMBDA: f64 = 1e-8;
/// Monte Carlo size for the kernel eigenvalue stored with a generated dataset.
pub const ADVISORY_KERNEL_SAMPLES: usize = 20_000;
/// Above this size generated datasets skip the kernel advisory.
pub const ADVISORY_MAX_N: usize = 1_000;
const LABEL_TOL: f64 = 1e-12;

/// Coefficient function `a*(ω)` on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CoefficientFn {
    /// `a*(ω) = value`
    Constant { value: f64 },
    /// `a*(ω) = vᵀω`
    Linear { v: Vec<f64> },
    /// `a*(ω) = ωᵀQω` for symmetric `Q`.
    Quadratic { q: Vec<Vec<f64>> },
}

impl CoefficientFn {
    pub fn eval(&self, w: &[f64]) -> f64 {
        match self {
            CoefficientFn::Constant { value } => *value,
            CoefficientFn::Linear { v } => dot(v, w),
            CoefficientFn::Quadratic { q } => q.iter().zip(w).map(|(row, wi)| wi * dot(row, w)).sum(),
        }
    }

    /// `sup_{‖ω‖=1} |a*(ω)|`, exact for every variant.
    pub fn sup_abs(&self) -> f64 {
        match self {
            CoefficientFn::Constant { value } => value.abs(),
            CoefficientFn::Linear { v } => norm(v),
            CoefficientFn::Quadratic { q } => {
                let d = q.len();
                let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (q[i][j] + q[j][i]));
                m.symmetric_eigenvalues().iter().fold(0.0f64, |acc, e| acc.max(e.abs()))
            }
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let ok = match self {
            CoefficientFn::Constant { .. } => true,
            CoefficientFn::Linear { v } => v.len() == d,
            CoefficientFn::Quadratic { q } => q.len() == d && q.iter().all(|r| r.len() == d),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("coefficient function does not match d = {d}")))
        }
    }
}

/// `E|ω_1|^k` for `ω` uniform on the unit sphere in `R^d`.
pub fn sphere_abs_moment(d: usize, k: u32) -> f64 {
    let (d, k) = (d as f64, k as f64);
    (ln_gamma(d / 2.0) + ln_gamma((k + 1.0) / 2.0) - 0.5 * std::f64::consts::PI.ln() - ln_gamma((d + k) / 2.0)).exp()
}

/// A target in the RKHS of the initialization kernel,
/// `f*(x) = scale · E_ω[a*(ω) σ(ωᵀx)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkhsTarget {
    pub coefficient: CoefficientFn,
    pub activation: ActivationKind,
    /// Multiplier applied so that labels stay within `[-1, 1]`.
    #[serde(default = "one")]
    pub scale: f64,
    /// Monte Carlo size used when no closed form is available (tanh).
    #[serde(default = "default_target_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub mc_seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_target_mc() -> usize {
    200_000
}

fn default_coordinate() -> usize {
    0
}

impl RkhsTarget {
    pub fn new(coefficient: CoefficientFn, activation: ActivationKind) -> Self {
        RkhsTarget { coefficient, activation, scale: 1.0, n_mc: default_target_mc(), mc_seed: 0 }
    }

    /// Upper bound on `sup_x |f*(x)|` before scaling: `|σ(u)| ≤ |u|` gives
    /// `sup|a*| · E|ω_1|`.
    pub fn sup_bound(&self, d: usize) -> f64 {
        self.coefficient.sup_abs() * sphere_abs_moment(d, 1)
    }

    /// Closed form of the unscaled target, available for ReLU.
    pub fn closed_form(&self, x: &[f64]) -> Option<f64> {
        if self.activation != ActivationKind::Relu {
            return None;
        }
        let d = x.len();
        let m1 = sphere_abs_moment(d, 1);
        Some(match &self.coefficient {
            CoefficientFn::Constant { value } => value * m1 / 2.0,
            CoefficientFn::Linear { v } => dot(v, x) / (2.0 * d as f64),
            CoefficientFn::Quadratic { q } => {
                let m3 = sphere_abs_moment(d, 3);
                let xqx: f64 = q.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum();
                let trace: f64 = (0..d).map(|i| q[i][i]).sum();
                let perp = if d > 1 { (trace - xqx) / (d as f64 - 1.0) * (m1 - m3) / 2.0 } else { 0.0 };
                xqx * m3 / 2.0 + perp
            }
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let raw = match self.closed_form(x) {
            Some(v) => v,
            None => rkhs_mc(self, x, self.n_mc, self.mc_seed).0,
        };
        self.scale * raw
    }
}

fn rkhs_mc(t: &RkhsTarget, x: &[f64], n_mc: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng_from_seed(seed);
    let mut w = vec![0.0; x.len()];
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_mc {
        fill_sphere(&mut rng, 1.0, &mut w);
        let v = t.coefficient.eval(&w) * t.activation.eval(dot(&w, x));
        s += v;
        s2 += v * v;
    }
    let n = n_mc as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of an RKHS target (including its scale) with the
/// standard error of the mean.
pub fn rkhs_target_eval(target: &RkhsTarget, x: &[f64], n_mc: usize, seed: u64) -> (f64, f64) {
    if let CoefficientFn::Constant { value } = target.coefficient {
        if value == 0.0 {
            return (0.0, 0.0);
        }
    }
    let (v, se) = rkhs_mc(target, x, n_mc, seed);
    (target.scale * v, target.scale.abs() * se)
}

/// Description of the function that generated a dataset's labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSpec {
    /// `f*(x) = max(x_i, 0)` for the given coordinate.
    ReluCoordinate {
        #[serde(default = "default_coordinate")]
        coordinate: usize,
    },
    RkhsFinite(RkhsTarget),
    /// Labels given only at the sample points.
    Table,
}

impl TargetSpec {
    pub fn relu_first_coordinate() -> Self {
        TargetSpec::ReluCoordinate { coordinate: 0 }
    }

    /// `f*(x)`, or `None` for tabulated targets.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        match self {
            TargetSpec::ReluCoordinate { coordinate } => Some(x[*coordinate].max(0.0)),
            TargetSpec::RkhsFinite(t) => Some(t.eval(x)),
            TargetSpec::Table => None,
        }
    }

    /// `γ(f*) = max(1, sup|a*|)` where a coefficient function is known.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            TargetSpec::RkhsFinite(t) => Some((t.scale.abs() * t.coefficient.sup_abs()).max(1.0)),
            _ => None,
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            TargetSpec::ReluCoordinate { coordinate } if *coordinate >= d => {
                Err(Error::Dimension(format!("target coordinate {coordinate} out of range for d = {d}")))
            }
            TargetSpec::RkhsFinite(t) => t.coefficient.check_dim(d),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub target: TargetSpec,
    pub seed: Option<u64>,
    /// Smallest eigenvalue of the ReLU/target-activation kernel matrix when computed.
    pub kernel_lambda: Option<f64>,
    pub degenerate: bool,
}

impl Dataset {
    /// Builds a dataset after checking unit norms and label bounds.
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>, target: TargetSpec, seed: Option<u64>) -> Result<Self> {
        let d = xs.first().map(Vec::len).ok_or_else(|| Error::Input("dataset has no points".into()))?;
        let ds = Dataset { d, xs, ys, target, seed, kernel_lambda: None, degenerate: false };
        ds.validate()?;
        Ok(ds)
    }

    /// Points with explicit labels and no generating function.
    pub fn from_table(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        Dataset::new(xs, ys, TargetSpec::Table, None)
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Dimension("d must be positive".into()));
        }
        if self.xs.len() != self.ys.len() {
            return Err(Error::Validation(format!("{} inputs but {} labels", self.xs.len(), self.ys.len())));
        }
        for (i, (x, y)) in self.xs.iter().zip(&self.ys).enumerate() {
            if x.len() != self.d {
                return Err(Error::Validation(format!("point {i} has dimension {}, expected {}", x.len(), self.d)));
            }
            let nx = norm(x);
            if (nx - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!("point {i} has norm {nx}, expected 1")));
            }
            if !y.is_finite() || y.abs() > 1.0 + LABEL_TOL {
                return Err(Error::Validation(format!("label {i} = {y} outside [-1, 1]")));
            }
        }
        self.target.check_dim(self.d)
    }

    /// Same inputs, new labels (used for zero-residual and relabelling checks).
    pub fn with_labels(&self, ys: Vec<f64>) -> Result<Self> {
        let mut ds = Dataset::new(self.xs.clone(), ys, TargetSpec::Table, self.seed)?;
        ds.kernel_lambda = self.kernel_lambda;
        ds.degenerate = self.degenerate;
        Ok(ds)
    }

    /// Computes the smallest eigenvalue of the kernel matrix and tags the
    /// dataset as degenerate when it falls below [`DEGENERATE_LAMBDA`].
    pub fn assess_kernel(&mut self, act: ActivationKind, n_samples: usize, seed: u64) -> Result<f64> {
        let k = kernelgram::kernel_matrix(self, act, n_samples, seed)?;
        let (lambda, _) = kernelgram::min_eigenvalue(&k.matrix)?;
        self.kernel_lambda = Some(lambda);
        self.degenerate = lambda < DEGENERATE_LAMBDA || !k.duplicate_pairs.is_empty();
        if self.degenerate {
            log::warn!("kernel matrix is degenerate (lambda_min = {lambda:e})");
        }
        Ok(lambda)
    }
}

/// Samples `n` points uniformly from the unit sphere in `R^d` and labels them
/// with `target`. RKHS targets whose sup bound exceeds 1 are rescaled; the
/// factor is stored in the returned dataset's target.
pub fn sphere_dataset(d: usize, n: usize, target: TargetSpec, seed: u64) -> Result<Dataset> {
    if d == 0 || n == 0 {
        return Err(Error::Dimension(format!("need d >= 1 and n >= 1 (d={d}, n={n})")));
    }
    let target = generative_target(target, d)?;
    let mut rng = rng_from_seed(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| unit_sphere(&mut rng, d)).collect();
    labelled(xs, target, seed)
}

/// The `2d` points `±e_i`, in the order `e_1, −e_1, e_2, …`. The seed only
/// feeds the kernel advisory and rkhs-finite label estimates.
pub fn cross_polytope_dataset(d: usize, target: TargetSpec, seed: u64) -> Result<Dataset> {
    if d == 0 {
        return Err(Error::Dimension("need d >= 1".into()));
    }
    let target = generative_target(target, d)?;
    let xs: Vec<Vec<f64>> = (0..2 * d)
        .map(|k| {
            let mut x = vec![0.0; d];
            x[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            x
        })
        .collect();
    labelled(xs, target, seed)
}

/// Checks the target against `d` and rescales rkhs-finite targets so that
/// `sup |f*| <= 1`.
fn generative_target(target: TargetSpec, d: usize) -> Result<TargetSpec> {
    target.check_dim(d)?;
    Ok(match target {
        TargetSpec::RkhsFinite(mut t) => {
            let bound = t.sup_bound(d) * t.scale.abs();
            if bound > 1.0 {
                t.scale /= bound;
            }
            TargetSpec::RkhsFinite(t)
        }
        TargetSpec::Table => {
            return Err(Error::Input("cannot generate labels for a tabulated target".into()));
        }
        other => other,
    })
}

fn labelled(xs: Vec<Vec<f64>>, target: TargetSpec, seed: u64) -> Result<Dataset> {
    let n = xs.len();
    let ys: Vec<f64> = xs.iter().map(|x| target.eval(x).expect("generative target")).collect();
    let act = match &target {
        TargetSpec::RkhsFinite(t) => t.activation,
        _ => ActivationKind::Relu,
    };
    let mut ds = Dataset::new(xs, ys, target, Some(seed))?;
    if n <= ADVISORY_MAX_N {
        ds.assess_kernel(act, ADVISORY_KERNEL_SAMPLES, derive_seed(seed, 0x6b65726e))?;
    }
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    d: usize,
    n: usize,
    target: TargetSpec,
    seed: Option<u64>,
    kernel_lambda: Option<f64>,
    degenerate: bool,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `x1..xd,y` rows with 17 significant digits plus the JSON sidecar.
pub fn save_dataset(ds: &Dataset, csv_path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(csv_path)?);
    let header: Vec<String> = (1..=ds.d).map(|i| format!("x{i}")).chain(std::iter::once("y".into())).collect();
    writeln!(w, "{}", header.join(","))?;
    for (x, y) in ds.xs.iter().zip(&ds.ys) {
        let row: Vec<String> = x.iter().chain(std::iter::once(y)).map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    let side = Sidecar {
        format_version: FORMAT_VERSION,
        d: ds.d,
        n: ds.n(),
        target: ds.target.clone(),
        seed: ds.seed,
        kernel_lambda: ds.kernel_lambda,
        degenerate: ds.degenerate,
    };
    std::fs::write(sidecar_path(csv_path), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`], re-validating every invariant.
pub fn load_dataset(csv_path: &Path) -> Result<Dataset> {
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(csv_path))?)?;
    if side.format_version != FORMAT_VERSION {
        return Err(Error::Validation(format!("unsupported format_version {}", side.format_version)));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(csv_path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    let expected: Vec<String> = (1..=side.d).map(|i| format!("x{i}")).chain(std::iter::once("y".into())).collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Validation(format!(
            "header has {} columns, sidecar declares d = {}",
            header.len(),
            side.d
        )));
    }
    let mut xs = Vec::with_capacity(side.n);
    let mut ys = Vec::with_capacity(side.n);
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let (y, x) = vals.split_last().expect("non-empty record");
        xs.push(x.to_vec());
        ys.push(*y);
    }
    if xs.len() != side.n {
        return Err(Error::Parse {
            line: xs.len() as u64 + 1,
            msg: format!("found {} rows, sidecar declares {}", xs.len(), side.n),
        });
    }
    let mut ds = Dataset::new(xs, ys, side.target, side.seed)?;
    if ds.d != side.d {
        return Err(Error::Validation(format!("data has d = {}, sidecar declares {}", ds.d, side.d)));
    }
    ds.kernel_lambda = side.kernel_lambda;
    ds.degenerate = side.degenerate;
    Ok(ds)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, msg: format!("{other:?}") },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_polytope_points() {
        let ds = cross_polytope_dataset(3, TargetSpec::relu_first_coordinate(), 0).unwrap();
        assert_eq!(ds.n(), 6);
        assert_eq!(ds.xs[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(ds.xs[1], vec![-1.0, 0.0, 0.0]);
        assert_eq!(ds.xs[5], vec![0.0, 0.0, -1.0]);
        assert_eq!(ds.ys, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(ds.kernel_lambda.unwrap() > 0.0);
    }

    #[test]
    fn relu_coordinate_target_values() {
        let t = TargetSpec::relu_first_coordinate();
        assert_eq!(t.eval(&[1.0, 0.0, 0.0]), Some(1.0));
        assert_eq!(t.eval(&[-1.0, 0.0, 0.0]), Some(0.0));
    }

    #[test]
    fn zero_coefficient_gives_zero_labels() {
        let t = TargetSpec::RkhsFinite(RkhsTarget::new(CoefficientFn::Constant { value: 0.0 }, ActivationKind::Relu));
        let ds = sphere_dataset(3, 20, t, 4).unwrap();
        assert!(ds.ys.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn different_seeds_give_distinct_points() {
        let a = sphere_dataset(3, 5000, TargetSpec::relu_first_coordinate(), 1).unwrap();
        let b = sphere_dataset(3, 5000, TargetSpec::relu_first_coordinate(), 2).unwrap();
        let mut all: Vec<&Vec<f64>> = a.xs.iter().chain(&b.xs).collect();
        all.sort_by(|p, q| p.partial_cmp(q).unwrap());
        assert!(all.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn sphere_moments_match_known_values() {
        // d = 2: E|cos θ| = 2/π, E|cos θ|³ = 4/(3π)
        assert!((sphere_abs_moment(2, 1) - 2.0 / std::f64::consts::PI).abs() < 1e-14);
        assert!((sphere_abs_moment(2, 3) - 4.0 / (3.0 * std::f64::consts::PI)).abs() < 1e-14);
        // d = 3: ω_1 uniform on [-1, 1]
        assert!((sphere_abs_moment(3, 1) - 0.5).abs() < 1e-14);
        assert!((sphere_abs_moment(3, 2) - 1.0 / 3.0).abs() < 1e-14);
        assert!((sphere_abs_moment(1, 3) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn closed_forms_agree_with_monte_carlo() {
        let mut rng = rng_from_seed(8);
        let d = 4;
        let coefs = vec![
            CoefficientFn::Constant { value: 1.3 },
            CoefficientFn::Linear { v: vec![0.5, -1.0, 0.25, 0.0] },
            CoefficientFn::Quadratic {
                q: vec![
                    vec![1.0, 0.2, 0.0, 0.0],
                    vec![0.2, -0.5, 0.1, 0.0],
                    vec![0.0, 0.1, 0.3, 0.0],
                    vec![0.0, 0.0, 0.0, -1.0],
                ],
            },
        ];
        for coef in coefs {
            let t = RkhsTarget::new(coef, ActivationKind::Relu);
            for k in 0..3 {
                let x = unit_sphere(&mut rng, d);
                let exact = t.closed_form(&x).unwrap();
                let (mc, se) = rkhs_target_eval(&t, &x, 400_000, k);
                assert!((exact - mc).abs() < 4.0 * se + 1e-12, "{exact} vs {mc} ± {se}");
            }
        }
    }

    #[test]
    fn constant_coefficient_target_is_constant() {
        // E[σ(ωᵀx)] does not depend on the unit vector x.
        let t = RkhsTarget::new(CoefficientFn::Constant { value: 0.8 }, ActivationKind::Relu);
        let mut rng = rng_from_seed(2);
        let expected = 0.8 * sphere_abs_moment(3, 1) / 2.0;
        for k in 0..100 {
            let x = unit_sphere(&mut rng, 3);
            let (v, se) = rkhs_target_eval(&t, &x, 20_000, k);
            assert!((v - expected).abs() < 4.0 * se);
        }
    }

    #[test]
    fn gamma_and_sup_values() {
        let q = CoefficientFn::Quadratic { q: vec![vec![2.0, 0.0], vec![0.0, -3.0]] };
        assert!((q.sup_abs() - 3.0).abs() < 1e-12);
        let t = TargetSpec::RkhsFinite(RkhsTarget::new(CoefficientFn::Constant { value: 0.3 }, ActivationKind::Relu));
        assert_eq!(t.gamma(), Some(1.0));
        assert_eq!(TargetSpec::relu_first_coordinate().gamma(), None);
    }

    #[test]
    fn large_targets_are_rescaled_explicitly() {
        let t = TargetSpec::RkhsFinite(RkhsTarget::new(CoefficientFn::Constant { value: 10.0 }, ActivationKind::Relu));
        let ds = sphere_dataset(3, 10, t, 0).unwrap();
        match &ds.target {
            TargetSpec::RkhsFinite(t) => assert!((t.scale - 1.0 / (10.0 * 0.5)).abs() < 1e-15),
            _ => unreachable!(),
        }
        assert!(ds.ys.iter().all(|y| y.abs() <= 1.0));
    }

    #[test]
    fn new_rejects_off_sphere_points_and_big_labels() {
        assert!(matches!(Dataset::from_table(vec![vec![0.5, 0.5]], vec![0.0]), Err(Error::Validation(_))));
        assert!(matches!(Dataset::from_table(vec![vec![1.0, 0.0]], vec![1.5]), Err(Error::Validation(_))));
        assert!(matches!(Dataset::from_table(vec![], vec![]), Err(Error::Input(_))));
    }

    #[test]
    fn duplicate_points_are_tagged_degenerate() {
        let x = vec![0.6, 0.8];
        let mut ds = Dataset::from_table(vec![x.clone(), x, vec![1.0, 0.0]], vec![0.1, 0.1, 0.2]).unwrap();
        ds.assess_kernel(ActivationKind::Relu, 5000, 1).unwrap();
        assert!(ds.degenerate);
    }
}
