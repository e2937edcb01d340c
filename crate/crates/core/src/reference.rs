//! Random-feature reference model `f̃(x; a, B0) = Σ_k a_kᵀ σ(B0_k x)`.
//!
//! `B0` is the stack of the `B` blocks of an initialization and is never
//! modified; only the readout vector `a` is trained.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::data::{CoefficientFn, Dataset};
use crate::netcore::{check_unit, InputPolicy, ModelParams};
use crate::sampling::dot;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureParams {
    pub d: usize,
    pub m: usize,
    /// Network depth `L` of the generating model; there are `L - 1` blocks.
    pub depth: usize,
    /// Stacked readout, length `m (L - 1)`.
    pub a: Vec<f64>,
    b0: Vec<f64>,
    pub act: ActivationKind,
    pub init_seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct RfDoc {
    init_seed: Option<u64>,
    d: usize,
    m: usize,
    #[serde(rename = "L")]
    depth: usize,
    activation: ActivationKind,
    a: Vec<f64>,
}

impl RandomFeatureParams {
    /// Freezes the `B` blocks of `params` and copies its `a` blocks.
    pub fn from_model(params: &ModelParams, act: ActivationKind, init_seed: Option<u64>) -> Self {
        RandomFeatureParams {
            d: params.d,
            m: params.m,
            depth: params.depth,
            a: params.stacked_a(),
            b0: params.stacked_b(),
            act,
            init_seed,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.depth - 1
    }

    pub fn n_features(&self) -> usize {
        self.a.len()
    }

    /// Frozen feature matrix, `m (L - 1)` rows of length `d`.
    pub fn b0(&self) -> &[f64] {
        &self.b0
    }

    /// `σ(B0 x)` written into `out`.
    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.b0.chunks(self.d)) {
            *o = self.act.eval(dot(row, x));
        }
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features()];
        self.features_into(x, &mut out);
        out
    }

    /// Evaluates the model with a readout other than `self.a`.
    pub fn predict_with(&self, a: &[f64], x: &[f64]) -> Result<f64> {
        if a.len() != self.n_features() {
            return Err(Error::Dimension(format!("readout has {} entries, expected {}", a.len(), self.n_features())));
        }
        if x.len() != self.d {
            return Err(Error::Dimension(format!("input has length {}, expected {}", x.len(), self.d)));
        }
        check_unit(x, InputPolicy::Strict)?;
        Ok(a.iter().zip(self.b0.chunks(self.d)).map(|(ai, row)| ai * self.act.eval(dot(row, x))).sum())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = RfDoc {
            init_seed: self.init_seed,
            d: self.d,
            m: self.m,
            depth: self.depth,
            activation: self.act,
            a: self.a.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Restores a model saved by [`Self::to_json`]; the frozen features come
    /// from `params0`, which must be the initialization the model was built on.
    pub fn from_json(s: &str, params0: &ModelParams) -> Result<Self> {
        let doc: RfDoc = serde_json::from_str(s)?;
        if (doc.d, doc.m, doc.depth) != (params0.d, params0.m, params0.depth) {
            return Err(Error::Validation(format!(
                "random-feature model has (d, m, L) = ({}, {}, {}), parameters have ({}, {}, {})",
                doc.d, doc.m, doc.depth, params0.d, params0.m, params0.depth
            )));
        }
        let mut rf = RandomFeatureParams::from_model(params0, doc.activation, doc.init_seed);
        if doc.a.len() != rf.n_features() {
            return Err(Error::Validation(format!("readout has {} entries, expected {}", doc.a.len(), rf.n_features())));
        }
        rf.a = doc.a;
        Ok(rf)
    }
}

pub fn rf_predict(rf: &RandomFeatureParams, x: &[f64]) -> Result<f64> {
    rf.predict_with(&rf.a, x)
}

fn check_data(rf: &RandomFeatureParams, data: &Dataset) -> Result<()> {
    if data.n() == 0 {
        return Err(Error::Input("empty dataset".into()));
    }
    if data.d != rf.d {
        return Err(Error::Dimension(format!("dataset has d = {}, model has d = {}", data.d, rf.d)));
    }
    Ok(())
}

/// Feature matrix `Φ` with rows `σ(B0 x_i)`.
pub fn feature_matrix(rf: &RandomFeatureParams, data: &Dataset) -> Result<DMatrix<f64>> {
    check_data(rf, data)?;
    let p = rf.n_features();
    let mut phi = DMatrix::zeros(data.n(), p);
    let mut row = vec![0.0; p];
    for (i, x) in data.xs.iter().enumerate() {
        rf.features_into(x, &mut row);
        for (j, v) in row.iter().enumerate() {
            phi[(i, j)] = *v;
        }
    }
    Ok(phi)
}

/// Risk `(1/2n) Σ (f̃(x_i) − y_i)²` and its gradient in `a`.
pub fn rf_grad_risk(rf: &RandomFeatureParams, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    check_data(rf, data)?;
    let n = data.n() as f64;
    let mut grad = vec![0.0; rf.n_features()];
    let mut feat = vec![0.0; rf.n_features()];
    let mut sq = 0.0;
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        rf.features_into(x, &mut feat);
        let e = dot(&rf.a, &feat) - y;
        sq += e * e;
        for (g, f) in grad.iter_mut().zip(&feat) {
            *g += e * f / n;
        }
    }
    Ok((sq / (2.0 * n), grad))
}

pub fn rf_risk(rf: &RandomFeatureParams, data: &Dataset) -> Result<f64> {
    Ok(rf_grad_risk(rf, data)?.0)
}

/// Minimum-norm least-squares readout, `a = Φ⁺ y`.
pub fn least_squares_readout(rf: &RandomFeatureParams, data: &Dataset) -> Result<Vec<f64>> {
    let phi = feature_matrix(rf, data)?;
    let y = DVector::from_column_slice(&data.ys);
    let svd = phi.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(1.0);
    let a = svd.solve(&y, tol).map_err(|e| Error::Precondition(e.to_string()))?;
    Ok(a.iter().copied().collect())
}

/// Readout `a*_j = a*(√m b_j) / (√m (L - 1))` built from the frozen rows
/// `b_j` of `b0` (length `m (L - 1) d`).
pub fn construct_astar(coef: &CoefficientFn, b0: &[f64], d: usize, m: usize, depth: usize) -> Result<Vec<f64>> {
    if d == 0 || m == 0 || depth < 2 {
        return Err(Error::Dimension(format!("need d, m >= 1 and depth >= 2 (d={d}, m={m}, depth={depth})")));
    }
    let blocks = depth - 1;
    if b0.len() != m * blocks * d {
        return Err(Error::Dimension(format!("B0 has {} entries, expected {}", b0.len(), m * blocks * d)));
    }
    let sm = (m as f64).sqrt();
    let denom = sm * blocks as f64;
    let mut w = vec![0.0; d];
    Ok(b0
        .chunks(d)
        .map(|row| {
            for (wi, ri) in w.iter_mut().zip(row) {
                *wi = sm * ri;
            }
            coef.eval(&w) / denom
        })
        .collect())
}
