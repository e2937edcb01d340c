use super::batch::BatchPropagator;
use super::params::{Gradients, ModelParams};
use crate::activation::ActivationKind;
use crate::data::Dataset;
use crate::sampling::{dot, norm};
use crate::{Error, Result};

/// Tolerance on `‖x‖ = 1` for network inputs.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// What to do when an input is not on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputPolicy {
    #[default]
    Strict,
    Warn,
}

pub(crate) fn check_unit(x: &[f64], policy: InputPolicy) -> Result<()> {
    let n = norm(x);
    if (n - 1.0).abs() > UNIT_NORM_TOL {
        match policy {
            InputPolicy::Strict => {
                return Err(Error::Input(format!("input norm {n} is not 1 within {UNIT_NORM_TOL:e}")))
            }
            InputPolicy::Warn => log::warn!("input norm {n} is not 1"),
        }
    }
    Ok(())
}

/// Cached activations of one forward pass. Index `k` of `z`/`y` is the state
/// entering block `k` (so `z(0) = x`, `y(0) = 0`) and index `L-1` is the
/// output state. `g(k)` and `pre(k)` belong to block `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    d: usize,
    m: usize,
    depth: usize,
    pub x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    pre: Vec<f64>,
    g: Vec<f64>,
    pub f: f64,
}

impl ForwardTrace {
    pub fn new(d: usize, m: usize, depth: usize) -> Self {
        ForwardTrace {
            d,
            m,
            depth,
            x: vec![0.0; d],
            z: vec![0.0; depth * d],
            y: vec![0.0; depth],
            pre: vec![0.0; (depth - 1) * m],
            g: vec![0.0; (depth - 1) * m],
            f: 0.0,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn z(&self, k: usize) -> &[f64] {
        &self.z[k * self.d..(k + 1) * self.d]
    }

    pub fn y(&self, k: usize) -> f64 {
        self.y[k]
    }

    pub fn g(&self, k: usize) -> &[f64] {
        &self.g[k * self.m..(k + 1) * self.m]
    }

    pub fn pre(&self, k: usize) -> &[f64] {
        &self.pre[k * self.m..(k + 1) * self.m]
    }

    /// All hidden outputs `g` stacked block after block.
    pub fn stacked_g(&self) -> &[f64] {
        &self.g
    }

    fn matches(&self, params: &ModelParams) -> bool {
        self.d == params.d && self.m == params.m && self.depth == params.depth
    }
}

/// Adjoints `α = ∂f/∂y`, `β = ∂f/∂z` per state index, `∂f/∂g` per block, and
/// `γ = σ'(pre) ⊙ ∂f/∂g`, the adjoint of the pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrace {
    d: usize,
    m: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    grad_g: Vec<f64>,
    gamma: Vec<f64>,
}

impl AdjointTrace {
    pub fn new(d: usize, m: usize, depth: usize) -> Self {
        AdjointTrace {
            d,
            m,
            alpha: vec![0.0; depth],
            beta: vec![0.0; depth * d],
            grad_g: vec![0.0; (depth - 1) * m],
            gamma: vec![0.0; (depth - 1) * m],
        }
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k]
    }

    pub fn beta(&self, k: usize) -> &[f64] {
        &self.beta[k * self.d..(k + 1) * self.d]
    }

    pub fn grad_g(&self, k: usize) -> &[f64] {
        &self.grad_g[k * self.m..(k + 1) * self.m]
    }

    pub fn gamma(&self, k: usize) -> &[f64] {
        &self.gamma[k * self.m..(k + 1) * self.m]
    }

    pub fn depth(&self) -> usize {
        self.alpha.len()
    }
}

fn forward_into(params: &ModelParams, x: &[f64], act: ActivationKind, tr: &mut ForwardTrace) {
    let (d, m) = (params.d, params.m);
    tr.x.copy_from_slice(x);
    tr.z[..d].copy_from_slice(x);
    tr.y[0] = 0.0;
    for (k, layer) in params.layers.iter().enumerate() {
        let (zs, znext) = tr.z.split_at_mut((k + 1) * d);
        let z = &zs[k * d..];
        let y = tr.y[k];
        let pre = &mut tr.pre[k * m..(k + 1) * m];
        let g = &mut tr.g[k * m..(k + 1) * m];
        for i in 0..m {
            let p = dot(&layer.b[i * d..(i + 1) * d], z) + layer.r[i] * y;
            pre[i] = p;
            g[i] = act.eval(p);
        }
        let znext = &mut znext[..d];
        for j in 0..d {
            znext[j] = x[j] + dot(&layer.c[j * m..(j + 1) * m], g);
        }
        tr.y[k + 1] = y + dot(&layer.a, g);
    }
    tr.f = tr.y[params.depth - 1];
}

fn backward_into(params: &ModelParams, tr: &ForwardTrace, act: ActivationKind, adj: &mut AdjointTrace) {
    let (d, m) = (params.d, params.m);
    let top = params.depth - 1;
    adj.alpha[top] = 1.0;
    adj.beta[top * d..].fill(0.0);
    for k in (0..params.n_blocks()).rev() {
        let layer = &params.layers[k];
        let alpha_next = adj.alpha[k + 1];
        let (beta_lo, beta_hi) = adj.beta.split_at_mut((k + 1) * d);
        let beta_next = &beta_hi[..d];
        let grad_g = &mut adj.grad_g[k * m..(k + 1) * m];
        let gamma = &mut adj.gamma[k * m..(k + 1) * m];
        let pre = tr.pre(k);
        for i in 0..m {
            let mut s = layer.a[i] * alpha_next;
            for j in 0..d {
                s += layer.c[j * m + i] * beta_next[j];
            }
            grad_g[i] = s;
            gamma[i] = act.deriv(pre[i]) * s;
        }
        let beta = &mut beta_lo[k * d..];
        beta.fill(0.0);
        for i in 0..m {
            let gi = gamma[i];
            if gi != 0.0 {
                for j in 0..d {
                    beta[j] += layer.b[i * d + j] * gi;
                }
            }
        }
        adj.alpha[k] = alpha_next + dot(&layer.r, gamma);
    }
}

/// Evaluates the network, caching every layer.
pub fn forward(params: &ModelParams, x: &[f64], act: ActivationKind) -> Result<ForwardTrace> {
    forward_with(params, x, act, InputPolicy::Strict)
}

pub fn forward_with(params: &ModelParams, x: &[f64], act: ActivationKind, policy: InputPolicy) -> Result<ForwardTrace> {
    if x.len() != params.d {
        return Err(Error::Dimension(format!("input has length {}, expected {}", x.len(), params.d)));
    }
    check_unit(x, policy)?;
    let mut tr = ForwardTrace::new(params.d, params.m, params.depth);
    forward_into(params, x, act, &mut tr);
    Ok(tr)
}

/// Back-propagates the adjoints through a cached forward pass.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, act: ActivationKind) -> Result<AdjointTrace> {
    if !trace.matches(params) {
        return Err(Error::Dimension("trace does not match parameter shapes".into()));
    }
    let mut adj = AdjointTrace::new(params.d, params.m, params.depth);
    backward_into(params, trace, act, &mut adj);
    Ok(adj)
}

/// Reusable forward/backward buffers for loops over many inputs.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub trace: ForwardTrace,
    pub adjoint: AdjointTrace,
}

impl Propagator {
    pub fn new(params: &ModelParams) -> Self {
        Propagator {
            trace: ForwardTrace::new(params.d, params.m, params.depth),
            adjoint: AdjointTrace::new(params.d, params.m, params.depth),
        }
    }

    /// Forward pass only; `x` is assumed to be a validated unit vector.
    pub fn eval(&mut self, params: &ModelParams, x: &[f64], act: ActivationKind) -> f64 {
        forward_into(params, x, act, &mut self.trace);
        self.trace.f
    }

    /// Forward and backward pass; returns `f(x)`.
    pub fn run(&mut self, params: &ModelParams, x: &[f64], act: ActivationKind) -> f64 {
        forward_into(params, x, act, &mut self.trace);
        backward_into(params, &self.trace, act, &mut self.adjoint);
        self.trace.f
    }

    /// Adds `weight · ∇_Θ f(x)` for the last [`Propagator::run`] into `grads`.
    pub fn accumulate(&self, params: &ModelParams, weight: f64, grads: &mut Gradients) {
        let (d, m) = (params.d, params.m);
        let (tr, adj) = (&self.trace, &self.adjoint);
        for (k, gl) in grads.layers.iter_mut().enumerate() {
            let g = tr.g(k);
            let z = tr.z(k);
            let y = tr.y(k);
            let wa = weight * adj.alpha(k + 1);
            let gamma = adj.gamma(k);
            let beta_next = adj.beta(k + 1);
            for i in 0..m {
                gl.a[i] += wa * g[i];
                let wg = weight * gamma[i];
                gl.r[i] += wg * y;
                if wg != 0.0 {
                    for j in 0..d {
                        gl.b[i * d + j] += wg * z[j];
                    }
                }
            }
            for j in 0..d {
                let wb = weight * beta_next[j];
                if wb != 0.0 {
                    for i in 0..m {
                        gl.c[j * m + i] += wb * g[i];
                    }
                }
            }
        }
    }

    /// `∇_{a_k} f = α_{k+1} g_k` for every block, stacked.
    pub fn a_features(&self, out: &mut [f64]) {
        let m = self.trace.m;
        for (k, chunk) in out.chunks_mut(m).enumerate() {
            let alpha = self.adjoint.alpha(k + 1);
            for (o, g) in chunk.iter_mut().zip(self.trace.g(k)) {
                *o = alpha * g;
            }
        }
    }
}

/// Gradient of a single output, `∇_Θ f(x)`.
pub fn grad_output(params: &ModelParams, x: &[f64], act: ActivationKind) -> Result<(f64, Gradients)> {
    forward(params, x, act)?;
    let mut prop = Propagator::new(params);
    let f = prop.run(params, x, act);
    let mut grads = Gradients::zeros_like(params);
    prop.accumulate(params, 1.0, &mut grads);
    Ok((f, grads))
}

/// Empirical risk `(1/2n) Σ (f(x_i) − y_i)²` and its gradient.
pub fn grad_risk(params: &ModelParams, data: &Dataset, act: ActivationKind) -> Result<(f64, Gradients)> {
    if data.n() == 0 {
        return Err(Error::Input("empty dataset".into()));
    }
    if data.d != params.d {
        return Err(Error::Dimension(format!("dataset has d = {}, model has d = {}", data.d, params.d)));
    }
    let mut prop = BatchPropagator::new(params, data);
    let mut grads = Gradients::zeros_like(params);
    let risk = prop.risk_grad(params, data, act, &mut grads);
    Ok((risk, grads))
}

/// Sample-by-sample evaluation of [`grad_risk`]; `grads` is overwritten.
#[cfg(test)]
pub(crate) fn accumulate_risk_grad(
    params: &ModelParams,
    data: &Dataset,
    act: ActivationKind,
    prop: &mut Propagator,
    grads: &mut Gradients,
) -> f64 {
    grads.clear();
    let n = data.n() as f64;
    let mut sq = 0.0;
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        let e = prop.run(params, x, act) - y;
        sq += e * e;
        prop.accumulate(params, e / n, grads);
    }
    sq / (2.0 * n)
}

/// Empirical risk without gradients.
pub fn risk(params: &ModelParams, data: &Dataset, act: ActivationKind) -> f64 {
    let mut prop = BatchPropagator::new(params, data);
    let n = data.n() as f64;
    let mut sq = 0.0;
    for (f, t) in prop.forward(params, act).iter().zip(&data.ys) {
        let e = f - t;
        sq += e * e;
    }
    sq / (2.0 * n)
}
