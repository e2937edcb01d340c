//! The initialization kernel `k0`, the kernel matrix `K`, the Gram matrix
//! `H(Θ)` built from the `a`-gradients, and their smallest eigenvalues.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::activation::ActivationKind;
use crate::data::Dataset;
use crate::netcore::{ModelParams, Propagator};
use crate::sampling::{dot, fill_sphere, rng_from_seed};
use crate::{Error, Result};

/// Smallest Monte Carlo size accepted for kernel estimates.
pub const MIN_KERNEL_SAMPLES: usize = 1_000;
pub const DEFAULT_KERNEL_SAMPLES: usize = 200_000;
const SYMMETRY_TOL: f64 = 1e-10;

/// Monte Carlo estimate of `k0(x, x') = E_w[σ(wᵀx) σ(wᵀx')]` with `w`
/// uniform on the unit sphere, returned with its standard error.
pub fn k0_mc(x: &[f64], xp: &[f64], act: ActivationKind, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    if n_samples < MIN_KERNEL_SAMPLES {
        return Err(Error::Parameter(format!("k0 needs at least {MIN_KERNEL_SAMPLES} samples, got {n_samples}")));
    }
    if x.len() != xp.len() {
        return Err(Error::Dimension("kernel arguments differ in dimension".into()));
    }
    crate::netcore::check_unit(x, Default::default())?;
    crate::netcore::check_unit(xp, Default::default())?;
    let mut rng = rng_from_seed(seed);
    let mut w = vec![0.0; x.len()];
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_samples {
        fill_sphere(&mut rng, 1.0, &mut w);
        let v = act.eval(dot(&w, x)) * act.eval(dot(&w, xp));
        s += v;
        s2 += v * v;
    }
    let n = n_samples as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone)]
pub struct KernelMatrix {
    /// `K_ij = k0(x_i, x_j) / n`.
    pub matrix: DMatrix<f64>,
    /// Index pairs `(i, j)`, `i < j`, with identical inputs.
    pub duplicate_pairs: Vec<(usize, usize)>,
}

/// Kernel matrix estimated with one shared set of sphere samples, which keeps
/// it positive semidefinite.
pub fn kernel_matrix(data: &Dataset, act: ActivationKind, n_samples: usize, seed: u64) -> Result<KernelMatrix> {
    if n_samples < MIN_KERNEL_SAMPLES {
        return Err(Error::Parameter(format!("kernel needs at least {MIN_KERNEL_SAMPLES} samples, got {n_samples}")));
    }
    let n = data.n();
    let mut duplicate_pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if data.xs[i] == data.xs[j] {
                duplicate_pairs.push((i, j));
            }
        }
    }
    if !duplicate_pairs.is_empty() {
        log::warn!("{} duplicate input pair(s): kernel matrix is singular", duplicate_pairs.len());
    }
    let mut rng = rng_from_seed(seed);
    let mut w = vec![0.0; data.d];
    let mut phi = vec![0.0; n];
    let mut acc = vec![0.0; n * n];
    for _ in 0..n_samples {
        fill_sphere(&mut rng, 1.0, &mut w);
        for (p, x) in phi.iter_mut().zip(&data.xs) {
            *p = act.eval(dot(&w, x));
        }
        accumulate_upper(&mut acc, &phi, n);
    }
    let scale = 1.0 / (n_samples as f64 * n as f64);
    Ok(KernelMatrix { matrix: symmetric_from_upper(&acc, n, scale), duplicate_pairs })
}

fn accumulate_upper(acc: &mut [f64], phi: &[f64], n: usize) {
    for i in 0..n {
        let pi = phi[i];
        if pi == 0.0 {
            continue;
        }
        let row = &mut acc[i * n..(i + 1) * n];
        for j in i..n {
            row[j] += pi * phi[j];
        }
    }
}

fn symmetric_from_upper(acc: &[f64], n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i <= j { acc[i * n + j] * scale } else { acc[j * n + i] * scale })
}

/// `a`-gradient features `∇_a f(x_i)` for every training input, one row per
/// input, `m (L-1)` columns.
pub fn a_feature_rows(params: &ModelParams, data: &Dataset, act: ActivationKind) -> Result<Vec<Vec<f64>>> {
    if data.d != params.d {
        return Err(Error::Dimension(format!("dataset has d = {}, model has d = {}", data.d, params.d)));
    }
    let mut prop = Propagator::new(params);
    let width = params.m * params.n_blocks();
    Ok(data
        .xs
        .iter()
        .map(|x| {
            prop.run(params, x, act);
            let mut row = vec![0.0; width];
            prop.a_features(&mut row);
            row
        })
        .collect())
}

/// Gram matrix `H_ij(Θ) = (1 / (n N)) Σ_k ⟨∇_{a_k} f(x_i), ∇_{a_k} f(x_j)⟩`,
/// where `N = L - 1` is the number of residual blocks.
pub fn gram_matrix(params: &ModelParams, data: &Dataset, act: ActivationKind) -> Result<DMatrix<f64>> {
    let rows = a_feature_rows(params, data, act)?;
    Ok(gram_from_features(&rows, params.n_blocks()))
}

pub(crate) fn gram_from_features(rows: &[Vec<f64>], n_blocks: usize) -> DMatrix<f64> {
    let n = rows.len();
    let scale = 1.0 / (n as f64 * n_blocks as f64);
    let mut acc = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            acc[i * n + j] = dot(&rows[i], &rows[j]);
        }
    }
    symmetric_from_upper(&acc, n, scale)
}

/// `H(Θ0)` for the standard initialization drawn with `seed`, computed while
/// streaming the `B` rows so that very deep networks never need to be stored.
/// Uses the same random stream as [`crate::netcore::sample_init`].
pub fn init_gram_streaming(
    data: &Dataset,
    m: usize,
    depth: usize,
    seed: u64,
    act: ActivationKind,
) -> Result<DMatrix<f64>> {
    if depth < 2 || m == 0 {
        return Err(Error::Dimension(format!("need m >= 1 and depth >= 2 (m={m}, depth={depth})")));
    }
    let (d, n) = (data.d, data.n());
    let mut rng = rng_from_seed(seed);
    let radius = 1.0 / (m as f64).sqrt();
    let mut row = vec![0.0; d];
    let mut phi = vec![0.0; n];
    let mut acc = vec![0.0; n * n];
    for _ in 0..(depth - 1) * m {
        fill_sphere(&mut rng, radius, &mut row);
        for (p, x) in phi.iter_mut().zip(&data.xs) {
            *p = act.eval(dot(&row, x));
        }
        accumulate_upper(&mut acc, &phi, n);
    }
    Ok(symmetric_from_upper(&acc, n, 1.0 / (n as f64 * (depth - 1) as f64)))
}

pub fn check_symmetric(a: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Input(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
    }
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            if (a[(i, j)] - a[(j, i)]).abs() > tol {
                return Err(Error::Input(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Smallest eigenvalue of a symmetric matrix and the residual `‖Av − λv‖` of
/// its unit eigenvector.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> Result<(f64, f64)> {
    let (lambda, v) = min_eigenpair(a)?;
    let residual = (a * &v - &v * lambda).norm();
    Ok((lambda, residual))
}

pub fn min_eigenpair(a: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    check_symmetric(a, SYMMETRY_TOL)?;
    if a.nrows() == 0 {
        return Err(Error::Input("empty matrix".into()));
    }
    let eig = SymmetricEigen::new(a.clone());
    let (idx, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &e)| if e < best.1 { (i, e) } else { best });
    Ok((lambda, eig.eigenvectors.column(idx).into_owned()))
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(a, SYMMETRY_TOL)?;
    Ok(a.symmetric_eigenvalues().max())
}

/// Kernel and Gram matrices of one dataset together with their smallest
/// eigenvalues.
#[derive(Debug, Clone, Serialize)]
pub struct GramBundle {
    #[serde(serialize_with = "ser_matrix")]
    pub k: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub h: DMatrix<f64>,
    pub lambda_k: f64,
    pub lambda_h: f64,
    pub eig_residual: f64,
}

pub fn gram_bundle(
    params: &ModelParams,
    data: &Dataset,
    act: ActivationKind,
    n_samples: usize,
    seed: u64,
) -> Result<GramBundle> {
    let k = kernel_matrix(data, act, n_samples, seed)?.matrix;
    let h = gram_matrix(params, data, act)?;
    let (lambda_k, rk) = min_eigenvalue(&k)?;
    let (lambda_h, rh) = min_eigenvalue(&h)?;
    Ok(GramBundle { k, h, lambda_k, lambda_h, eig_residual: rk.max(rh) })
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

pub fn matrix_to_json(m: &DMatrix<f64>) -> serde_json::Value {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    serde_json::json!({ "nrows": m.nrows(), "ncols": m.ncols(), "rows": rows })
}

/// Row-major CSV with header `i,j,value`.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    writeln!(w, "i,j,value")?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            writeln!(w, "{i},{j},{:.16e}", m[(i, j)])?;
        }
    }
    Ok(())
}

pub fn save_matrix_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix_csv(m, f)
}
