//! Plain residual network `h_{l+1} = h_l + U_l σ(V_l h_l)`, its twin with
//! the inner weights `V_l` frozen, the path norm, and Adam training of the
//! path-norm regularized risk.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::data::Dataset;
use crate::netcore::{check_unit, BlockDeviation, InputPolicy};
use crate::sampling::{dot, fill_gaussian, rng_from_seed};
use crate::trainer::{Outcome, TrainConfig, Trajectory};
use crate::{Error, Result};

/// Regularization strength used for the path-norm experiments.
pub const DEFAULT_PATH_LAMBDA: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetParams {
    pub d: usize,
    pub m: usize,
    /// `L`; the network has `L - 1` residual blocks.
    pub depth: usize,
    /// `U_l`, `(d+1) × m` row-major.
    pub u: Vec<Vec<f64>>,
    /// `V_l`, `m × (d+1)` row-major.
    pub v: Vec<Vec<f64>>,
    pub frozen_v: bool,
}

impl ResNetParams {
    /// Width of the hidden state, `d + 1`.
    pub fn width(&self) -> usize {
        self.d + 1
    }

    pub fn n_blocks(&self) -> usize {
        self.depth - 1
    }

    /// Readout `w = (0, …, 0, 1)`.
    pub fn w(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.width()];
        w[self.d] = 1.0;
        w
    }

    /// `V0 = [I_d; 0]`, `(d+1) × d` row-major.
    pub fn v0(&self) -> Vec<f64> {
        let d = self.d;
        let mut v0 = vec![0.0; (d + 1) * d];
        for i in 0..d {
            v0[i * d + i] = 1.0;
        }
        v0
    }

    pub fn validate(&self) -> Result<()> {
        let (p, m) = (self.width(), self.m);
        if self.d == 0 || m == 0 || self.depth < 2 {
            return Err(Error::Dimension(format!("need d, m >= 1 and L >= 2 (d={}, m={m}, L={})", self.d, self.depth)));
        }
        let ok = self.u.len() == self.n_blocks()
            && self.v.len() == self.n_blocks()
            && self.u.iter().all(|u| u.len() == p * m)
            && self.v.iter().all(|v| v.len() == m * p);
        if !ok {
            return Err(Error::Dimension("ResNet block shapes are inconsistent".into()));
        }
        Ok(())
    }

    /// `(max_l ‖U_l − U0_l‖_F, max_l ‖V_l − V0_l‖_F)`.
    pub fn deviation_from(&self, reference: &ResNetParams) -> (f64, f64) {
        let mut du = 0.0f64;
        let mut dv = 0.0f64;
        for l in 0..self.n_blocks() {
            du = du.max(dist(&self.u[l], &reference.u[l]));
            dv = dv.max(dist(&self.v[l], &reference.v[l]));
        }
        (du, dv)
    }

    pub fn stacked_u(&self) -> Vec<f64> {
        self.u.concat()
    }
}

/// `U_l = 0` and `V_l` entries i.i.d. `N(0, 1/m)`.
pub fn sample_resnet_init(d: usize, m: usize, depth: usize, seed: u64, frozen_v: bool) -> Result<ResNetParams> {
    if d == 0 || m == 0 || depth < 2 {
        return Err(Error::Dimension(format!("need d, m >= 1 and L >= 2 (d={d}, m={m}, L={depth})")));
    }
    let p = d + 1;
    let mut rng = rng_from_seed(seed);
    let sd = 1.0 / (m as f64).sqrt();
    let v = (0..depth - 1)
        .map(|_| {
            let mut block = vec![0.0; m * p];
            fill_gaussian(&mut rng, &mut block);
            block.iter_mut().for_each(|x| *x *= sd);
            block
        })
        .collect();
    Ok(ResNetParams { d, m, depth, u: vec![vec![0.0; p * m]; depth - 1], v, frozen_v })
}

/// Hidden states, pre-activations and activations of one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetTrace {
    pub h: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub f: f64,
}

pub fn resnet_forward(p: &ResNetParams, x: &[f64], act: ActivationKind) -> Result<(f64, ResNetTrace)> {
    p.validate()?;
    if x.len() != p.d {
        return Err(Error::Dimension(format!("input has length {}, expected {}", x.len(), p.d)));
    }
    check_unit(x, InputPolicy::Strict)?;
    let tr = forward_unchecked(p, x, act);
    Ok((tr.f, tr))
}

fn forward_unchecked(p: &ResNetParams, x: &[f64], act: ActivationKind) -> ResNetTrace {
    let (w, m) = (p.width(), p.m);
    let mut h0 = vec![0.0; w];
    h0[..p.d].copy_from_slice(x);
    let mut h = Vec::with_capacity(p.depth);
    let mut pre = Vec::with_capacity(p.n_blocks());
    let mut s = Vec::with_capacity(p.n_blocks());
    h.push(h0);
    for l in 0..p.n_blocks() {
        let hl = &h[l];
        let pl: Vec<f64> = p.v[l].chunks(w).map(|row| dot(row, hl)).collect();
        let sl: Vec<f64> = pl.iter().map(|&z| act.eval(z)).collect();
        let next: Vec<f64> = (0..w).map(|k| hl[k] + dot(&p.u[l][k * m..(k + 1) * m], &sl)).collect();
        pre.push(pl);
        s.push(sl);
        h.push(next);
    }
    let f = h[p.n_blocks()][p.d];
    ResNetTrace { h, pre, s, f }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResNetGrads {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl ResNetGrads {
    fn zeros_like(p: &ResNetParams) -> Self {
        ResNetGrads { u: p.u.iter().map(|u| vec![0.0; u.len()]).collect(), v: p.v.iter().map(|v| vec![0.0; v.len()]).collect() }
    }
}

/// Adds `weight · ∇f(x)` into `grads`.
fn accumulate(p: &ResNetParams, tr: &ResNetTrace, act: ActivationKind, weight: f64, grads: &mut ResNetGrads) {
    let (w, m) = (p.width(), p.m);
    let mut delta = vec![0.0; w];
    delta[p.d] = weight;
    let mut q = vec![0.0; m];
    for l in (0..p.n_blocks()).rev() {
        let (u, v) = (&p.u[l], &p.v[l]);
        let (s, pre, h) = (&tr.s[l], &tr.pre[l], &tr.h[l]);
        for k in 0..w {
            for i in 0..m {
                grads.u[l][k * m + i] += delta[k] * s[i];
            }
        }
        for i in 0..m {
            let back: f64 = (0..w).map(|k| u[k * m + i] * delta[k]).sum();
            q[i] = act.deriv(pre[i]) * back;
        }
        for i in 0..m {
            for j in 0..w {
                grads.v[l][i * w + j] += q[i] * h[j];
            }
        }
        for j in 0..w {
            delta[j] += (0..m).map(|i| v[i * w + j] * q[i]).sum::<f64>();
        }
    }
}

/// Empirical risk and its gradient. With `frozen_v` the `V` gradients are
/// zeroed after being computed.
pub fn resnet_grad_risk(p: &ResNetParams, data: &Dataset, act: ActivationKind) -> Result<(f64, ResNetGrads)> {
    p.validate()?;
    if data.n() == 0 {
        return Err(Error::Input("empty dataset".into()));
    }
    if data.d != p.d {
        return Err(Error::Dimension(format!("dataset has d = {}, model has d = {}", data.d, p.d)));
    }
    Ok(grad_risk_unchecked(p, data, act))
}

fn grad_risk_unchecked(p: &ResNetParams, data: &Dataset, act: ActivationKind) -> (f64, ResNetGrads) {
    let n = data.n() as f64;
    let mut grads = ResNetGrads::zeros_like(p);
    let mut sq = 0.0;
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        let tr = forward_unchecked(p, x, act);
        let e = tr.f - y;
        sq += e * e;
        accumulate(p, &tr, act, e / n, &mut grads);
    }
    if p.frozen_v {
        grads.v.iter_mut().for_each(|g| g.fill(0.0));
    }
    (sq / (2.0 * n), grads)
}

pub fn resnet_risk(p: &ResNetParams, data: &Dataset, act: ActivationKind) -> f64 {
    let n = data.n() as f64;
    data.xs
        .iter()
        .zip(&data.ys)
        .map(|(x, &y)| {
            let e = forward_unchecked(p, x, act).f - y;
            e * e
        })
        .sum::<f64>()
        / (2.0 * n)
}

/// Predictor closure for population-risk estimates.
pub fn resnet_predictor(p: &ResNetParams, act: ActivationKind) -> impl FnMut(&[f64]) -> Result<f64> + '_ {
    move |x| Ok(resnet_forward(p, x, act)?.0)
}

/// `Σ_j (|w|ᵀ Π_l (I + |U_l||V_l|) |V0|)_j`, the path norm summed over input
/// coordinates.
pub fn path_norm(p: &ResNetParams) -> f64 {
    let rho = path_rows(p);
    // |V0| selects the first d coordinates
    rho[0][..p.d].iter().sum()
}

/// Row vectors `ρ_l = |w|ᵀ Π_{k ≥ l} (I + |U_k||V_k|)` for `l = 0..=N`.
fn path_rows(p: &ResNetParams) -> Vec<Vec<f64>> {
    let (w, m, nb) = (p.width(), p.m, p.n_blocks());
    let mut rows = vec![Vec::new(); nb + 1];
    rows[nb] = p.w().iter().map(|v| v.abs()).collect();
    for l in (0..nb).rev() {
        let r = &rows[l + 1];
        let ru: Vec<f64> = (0..m).map(|i| (0..w).map(|k| r[k] * p.u[l][k * m + i].abs()).sum()).collect();
        let next: Vec<f64> = (0..w).map(|j| r[j] + (0..m).map(|i| ru[i] * p.v[l][i * w + j].abs()).sum::<f64>()).collect();
        rows[l] = next;
    }
    rows
}

/// Subgradient of [`path_norm`] with `sign(0) = 0`.
pub fn path_norm_grad(p: &ResNetParams) -> ResNetGrads {
    let (w, m, nb) = (p.width(), p.m, p.n_blocks());
    let rows = path_rows(p);
    let mut col = vec![0.0; w];
    col[..p.d].fill(1.0);
    let mut g = ResNetGrads::zeros_like(p);
    for l in 0..nb {
        let (u, v) = (&p.u[l], &p.v[l]);
        let r = &rows[l + 1];
        let vc: Vec<f64> = (0..m).map(|i| (0..w).map(|j| v[i * w + j].abs() * col[j]).sum()).collect();
        let ru: Vec<f64> = (0..m).map(|i| (0..w).map(|k| r[k] * u[k * m + i].abs()).sum()).collect();
        for k in 0..w {
            for i in 0..m {
                g.u[l][k * m + i] = sign(u[k * m + i]) * r[k] * vc[i];
            }
        }
        for i in 0..m {
            for j in 0..w {
                g.v[l][i * w + j] = sign(v[i * w + j]) * ru[i] * col[j];
            }
        }
        col = (0..w).map(|k| col[k] + (0..m).map(|i| u[k * m + i].abs() * vc[i]).sum::<f64>()).collect();
    }
    g
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResNetMode {
    PlainGd,
    #[serde(rename = "frozen-V-gd")]
    FrozenVGd,
    PathnormAdam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

struct Adam {
    cfg: AdamConfig,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(cfg: AdamConfig, n: usize) -> Self {
        Adam { cfg, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], eta: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= eta * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

fn flatten(blocks: &[Vec<f64>]) -> Vec<f64> {
    blocks.concat()
}

fn unflatten(flat: &[f64], blocks: &mut [Vec<f64>]) {
    let mut off = 0;
    for b in blocks {
        let len = b.len();
        b.copy_from_slice(&flat[off..off + len]);
        off += len;
    }
}

fn resnet_dev(p: &ResNetParams, p0: &ResNetParams) -> BlockDeviation {
    let (du, dv) = p.deviation_from(p0);
    // U plays the role of C (activation back into the state), V that of B
    BlockDeviation { a: 0.0, r: 0.0, b: dv, c: du }
}

/// Trains a ResNet. `plain-gd` and `frozen-V-gd` use gradient descent on the
/// risk; `pathnorm-adam` runs Adam on `R̂_n + (λ/√n) ‖Θ‖_P` and records the
/// extra columns `path_norm` and `J`.
pub fn train_resnet(
    p0: &ResNetParams,
    data: &Dataset,
    cfg: &TrainConfig,
    mode: ResNetMode,
    lambda_reg: f64,
    act: ActivationKind,
) -> Result<(Trajectory, ResNetParams)> {
    cfg.validate()?;
    if cfg.eta_rule != crate::trainer::EtaRule::Explicit {
        return Err(Error::Parameter("ResNet training needs an explicit step size".into()));
    }
    if !(lambda_reg >= 0.0) {
        return Err(Error::Parameter(format!("lambda_reg must be non-negative, got {lambda_reg}")));
    }
    if mode != ResNetMode::PathnormAdam && lambda_reg != 0.0 {
        return Err(Error::Parameter("lambda_reg only applies to pathnorm-adam".into()));
    }
    p0.validate()?;
    if data.n() == 0 || data.d != p0.d {
        return Err(Error::Input("dataset is empty or has the wrong dimension".into()));
    }
    let frozen = mode == ResNetMode::FrozenVGd;
    if p0.frozen_v != frozen {
        return Err(Error::Parameter(format!("mode {mode:?} does not match frozen_v = {}", p0.frozen_v)));
    }
    let name = match mode {
        ResNetMode::PlainGd => "resnet",
        ResNetMode::FrozenVGd => "resnet-frozenV",
        ResNetMode::PathnormAdam => "resnet-pathnorm",
    };
    let mut traj = Trajectory::new(name, cfg.eta, cfg.eta, None, Some(cfg.seed));
    let reg = lambda_reg / (data.n() as f64).sqrt();
    let mut p = p0.clone();
    let n_u: usize = p.u.iter().map(Vec::len).sum();
    let n_v: usize = p.v.iter().map(Vec::len).sum();
    let mut adam = Adam::new(AdamConfig::default(), n_u + n_v);
    for t in 0..=cfg.steps {
        let (risk, mut grads) = grad_risk_unchecked(&p, data, act);
        if !risk.is_finite() || risk > cfg.divergence_risk {
            return Err(Error::Divergence { step: t, risk, threshold: cfg.divergence_risk });
        }
        let done = risk <= cfg.stop_risk;
        let last = t == cfg.steps;
        if t % cfg.record_every == 0 || done || last {
            traj.record(t, risk, resnet_dev(&p, p0), p.stacked_u());
            if mode == ResNetMode::PathnormAdam {
                let pn = path_norm(&p);
                traj.push_extra("path_norm", pn);
                traj.push_extra("J", risk + reg * pn);
            }
        }
        if done {
            traj.outcome = Outcome::Converged { step: t };
            break;
        }
        if last {
            break;
        }
        match mode {
            ResNetMode::PlainGd | ResNetMode::FrozenVGd => {
                for (u, g) in p.u.iter_mut().zip(&grads.u) {
                    u.iter_mut().zip(g).for_each(|(a, b)| *a -= cfg.eta * b);
                }
                if !frozen {
                    for (v, g) in p.v.iter_mut().zip(&grads.v) {
                        v.iter_mut().zip(g).for_each(|(a, b)| *a -= cfg.eta * b);
                    }
                }
            }
            ResNetMode::PathnormAdam => {
                if reg > 0.0 {
                    let pg = path_norm_grad(&p);
                    for (g, h) in grads.u.iter_mut().zip(&pg.u).chain(grads.v.iter_mut().zip(&pg.v)) {
                        g.iter_mut().zip(h).for_each(|(a, b)| *a += reg * b);
                    }
                }
                let mut flat = flatten(&p.u);
                flat.extend(flatten(&p.v));
                let mut gflat = flatten(&grads.u);
                gflat.extend(flatten(&grads.v));
                adam.step(&mut flat, &gflat, cfg.eta);
                unflatten(&flat[..n_u], &mut p.u);
                unflatten(&flat[n_u..], &mut p.v);
            }
        }
    }
    Ok((traj, p))
}

/// One row of a ResNet coupling series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResNetCouplingPoint {
    pub t: f64,
    /// `‖U_t − Ũ_t‖` between the two runs.
    pub a_gap: f64,
    /// Network against itself with `V` reset to initialization.
    pub f_gap_theta: f64,
    /// Network against the frozen-`V` run.
    pub f_gap_traj: f64,
    pub risk_nn: f64,
    pub risk_rf: f64,
}

/// Trains a ResNet and its frozen-`V` twin in lockstep from the same
/// initialization and records their gaps every `record_every` steps.
pub fn couple_resnet(
    p0: &ResNetParams,
    data: &Dataset,
    cfg: &TrainConfig,
    test_points: &[Vec<f64>],
    act: ActivationKind,
) -> Result<Vec<ResNetCouplingPoint>> {
    cfg.validate()?;
    p0.validate()?;
    if data.n() == 0 || data.d != p0.d || test_points.is_empty() {
        return Err(Error::Input("dataset or test points are empty or have the wrong dimension".into()));
    }
    let mut nn = ResNetParams { frozen_v: false, ..p0.clone() };
    let mut rf = ResNetParams { frozen_v: true, ..p0.clone() };
    let mut out = Vec::new();
    for t in 0..=cfg.steps {
        let (risk_nn, g_nn) = grad_risk_unchecked(&nn, data, act);
        let (risk_rf, g_rf) = grad_risk_unchecked(&rf, data, act);
        for risk in [risk_nn, risk_rf] {
            if !risk.is_finite() || risk > cfg.divergence_risk {
                return Err(Error::Divergence { step: t, risk, threshold: cfg.divergence_risk });
            }
        }
        if t % cfg.record_every == 0 || t == cfg.steps {
            let twin = ResNetParams { v: p0.v.clone(), frozen_v: true, ..nn.clone() };
            let (mut gap_theta, mut gap_traj) = (0.0f64, 0.0f64);
            for x in test_points {
                let f = forward_unchecked(&nn, x, act).f;
                gap_theta = gap_theta.max((f - forward_unchecked(&twin, x, act).f).abs());
                gap_traj = gap_traj.max((f - forward_unchecked(&rf, x, act).f).abs());
            }
            out.push(ResNetCouplingPoint {
                t: t as f64 * cfg.eta,
                a_gap: dist(&nn.stacked_u(), &rf.stacked_u()),
                f_gap_theta: gap_theta,
                f_gap_traj: gap_traj,
                risk_nn,
                risk_rf,
            });
        }
        if t == cfg.steps {
            break;
        }
        for (u, g) in nn.u.iter_mut().zip(&g_nn.u) {
            u.iter_mut().zip(g).for_each(|(a, b)| *a -= cfg.eta * b);
        }
        for (v, g) in nn.v.iter_mut().zip(&g_nn.v) {
            v.iter_mut().zip(g).for_each(|(a, b)| *a -= cfg.eta * b);
        }
        for (u, g) in rf.u.iter_mut().zip(&g_rf.u) {
            u.iter_mut().zip(g).for_each(|(a, b)| *a -= cfg.eta * b);
        }
    }
    Ok(out)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
