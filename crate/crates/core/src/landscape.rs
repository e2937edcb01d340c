//! Numerical checks of the landscape estimates around initialization:
//! forward and backward stability, gradient bounds, Gram drift, coupling of
//! the deep-net and random-feature trajectories, and population risk.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::data::{Dataset, TargetSpec};
use crate::kernelgram::{gram_from_features, gram_matrix, min_eigenvalue};
use crate::netcore::{forward_with, InputPolicy, ModelParams, Propagator};
use crate::reference::RandomFeatureParams;
use crate::sampling::{derive_seed, norm, rng_from_seed, unit_sphere, SeededRng};
use crate::trainer::Trajectory;
use crate::{Error, Result};

pub const COUPLING_HEADER: &str = "t,a_gap,f_gap_theta,f_gap_traj";
/// Default failure probability entering the probabilistic depth gates.
pub const DEFAULT_DELTA: f64 = 0.1;
const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Every block sits at distance exactly `c/L` from initialization.
    #[default]
    Boundary,
    /// Every block sits at a uniformly drawn distance in `[0, c/L]`.
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub c: f64,
    pub depth: usize,
}

impl NeighborhoodSpec {
    pub fn new(c: f64, depth: usize) -> Result<Self> {
        if !(c >= 0.0) || depth < 2 {
            return Err(Error::Parameter(format!("need c >= 0 and L >= 2 (c={c}, L={depth})")));
        }
        if c > depth as f64 {
            return Err(Error::Parameter(format!("radius c/L = {} exceeds 1", c / depth as f64)));
        }
        Ok(NeighborhoodSpec { c, depth })
    }

    pub fn eps(&self) -> f64 {
        self.c / self.depth as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_name: String,
    pub lhs_max: f64,
    pub rhs: f64,
    pub margin: f64,
    pub n_trials: usize,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl BoundReport {
    pub fn new(name: &str, lhs_max: f64, rhs: f64, n_trials: usize) -> Self {
        let margin = rhs - lhs_max;
        BoundReport {
            bound_name: name.to_string(),
            lhs_max,
            rhs,
            margin,
            n_trials,
            pass: margin >= 0.0,
            note: None,
        }
    }

    fn with_note(mut self, note: String) -> Self {
        self.note = Some(note);
        self
    }
}

/// Settings shared by the probe-based checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub c: f64,
    pub n_probes: usize,
    /// Unit inputs evaluated per probe by the stability checks.
    pub n_inputs: usize,
    pub seed: u64,
    pub mode: ProbeMode,
    pub delta: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { c: 1.0, n_probes: 200, n_inputs: 20, seed: 0, mode: ProbeMode::Boundary, delta: DEFAULT_DELTA }
    }
}

fn perturb<R: Rng + ?Sized>(rng: &mut R, block: &mut [f64], radius: f64, mode: ProbeMode) {
    if radius == 0.0 {
        return;
    }
    let mut dir: Vec<f64> = (0..block.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut len = norm(&dir);
    while len == 0.0 {
        dir.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        len = norm(&dir);
    }
    let r = match mode {
        ProbeMode::Boundary => radius,
        ProbeMode::Interior => radius * rng.random::<f64>(),
    };
    for (b, v) in block.iter_mut().zip(&dir) {
        *b += r * v / len;
    }
}

fn sample_with_rng(params0: &ModelParams, spec: NeighborhoodSpec, mode: ProbeMode, rng: &mut SeededRng) -> Result<ModelParams> {
    let eps = spec.eps();
    let mut p = params0.clone();
    for l in &mut p.layers {
        perturb(rng, &mut l.a, eps, mode);
        perturb(rng, &mut l.r, eps, mode);
        perturb(rng, &mut l.b, eps, mode);
        perturb(rng, &mut l.c, eps, mode);
    }
    if !in_neighborhood(&p, params0, spec.c) {
        return Err(Error::Validation("perturbed parameters left the neighborhood".into()));
    }
    Ok(p)
}

/// Random point of `I_c(Θ0)`; with [`ProbeMode::Boundary`] every block is
/// displaced by exactly `c/L` in a random direction.
pub fn sample_in_neighborhood(params0: &ModelParams, c: f64, seed: u64, mode: ProbeMode) -> Result<ModelParams> {
    let spec = NeighborhoodSpec::new(c, params0.depth)?;
    sample_with_rng(params0, spec, mode, &mut rng_from_seed(seed))
}

/// Whether every block of `params` lies within `c/L` of `params0`.
pub fn in_neighborhood(params: &ModelParams, params0: &ModelParams, c: f64) -> bool {
    params.same_shape(params0)
        && params.deviation_from(params0).max() <= c / params0.depth as f64 * (1.0 + MEMBERSHIP_TOL)
}

fn gate(name: &str, depth: usize, required: f64) -> Result<()> {
    if (depth as f64) < required {
        return Err(Error::Precondition(format!("{name} needs L >= {required}, have L = {depth}")));
    }
    Ok(())
}

fn probe_inputs(d: usize, n_inputs: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    (0..n_inputs).map(|_| unit_sphere(&mut rng, d)).collect()
}

fn probes(params0: &ModelParams, cfg: &ProbeConfig) -> Result<Vec<ModelParams>> {
    let spec = NeighborhoodSpec::new(cfg.c, params0.depth)?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 2));
    (0..cfg.n_probes).map(|_| sample_with_rng(params0, spec, cfg.mode, &mut rng)).collect()
}

fn check_probe_config(cfg: &ProbeConfig) -> Result<()> {
    if cfg.n_probes == 0 || cfg.n_inputs == 0 {
        return Err(Error::Parameter("need at least one probe and one input".into()));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1), got {}", cfg.delta)));
    }
    Ok(())
}

/// Worst per-layer deviations of `y`, `z`, `g` from their values at `Θ0`
/// against `4c`, `4c/L` and `6c²/L`. Needs `L ≥ 4c²`.
pub fn check_forward_stability(params0: &ModelParams, cfg: &ProbeConfig, act: ActivationKind) -> Result<[BoundReport; 3]> {
    check_probe_config(cfg)?;
    let depth = params0.depth;
    gate("forward stability", depth, 4.0 * cfg.c * cfg.c)?;
    let inputs = probe_inputs(params0.d, cfg.n_inputs, cfg.seed);
    let base: Vec<_> = inputs
        .iter()
        .map(|x| forward_with(params0, x, act, InputPolicy::Strict))
        .collect::<Result<_>>()?;
    let (mut dy, mut dz, mut dg) = (0.0f64, 0.0f64, 0.0f64);
    let mut prop = Propagator::new(params0);
    for p in probes(params0, cfg)? {
        for (x, t0) in inputs.iter().zip(&base) {
            prop.eval(&p, x, act);
            let t = &prop.trace;
            for k in 0..depth {
                dy = dy.max((t.y(k) - t0.y(k)).abs());
                dz = dz.max(dist(t.z(k), t0.z(k)));
                if k + 1 < depth {
                    dg = dg.max(dist(t.g(k), t0.g(k)));
                }
            }
        }
    }
    let l = depth as f64;
    let c = cfg.c;
    let trials = cfg.n_probes * cfg.n_inputs;
    Ok([
        BoundReport::new("forward_y", dy, 4.0 * c, trials),
        BoundReport::new("forward_z", dz, 4.0 * c / l, trials),
        BoundReport::new("forward_g", dg, 6.0 * c * c / l, trials),
    ])
}

/// Worst per-layer `|α − 1|`, `‖β‖` and `‖∂f/∂g‖` against `5c/L`, `4c/L`
/// and `3c/L`. Needs `L ≥ 6c²`.
pub fn check_backward_stability(params0: &ModelParams, cfg: &ProbeConfig, act: ActivationKind) -> Result<[BoundReport; 3]> {
    check_probe_config(cfg)?;
    let depth = params0.depth;
    gate("backward stability", depth, 6.0 * cfg.c * cfg.c)?;
    let inputs = probe_inputs(params0.d, cfg.n_inputs, cfg.seed);
    let (mut da, mut db, mut dg) = (0.0f64, 0.0f64, 0.0f64);
    let mut prop = Propagator::new(params0);
    for p in probes(params0, cfg)? {
        for x in &inputs {
            prop.run(&p, x, act);
            let adj = &prop.adjoint;
            for k in 0..depth {
                da = da.max((adj.alpha(k) - 1.0).abs());
                db = db.max(norm(adj.beta(k)));
                if k + 1 < depth {
                    dg = dg.max(norm(adj.grad_g(k)));
                }
            }
        }
    }
    let l = depth as f64;
    let c = cfg.c;
    let trials = cfg.n_probes * cfg.n_inputs;
    Ok([
        BoundReport::new("backward_alpha", da, 5.0 * c / l, trials),
        BoundReport::new("backward_beta", db, 4.0 * c / l, trials),
        BoundReport::new("backward_gamma", dg, 3.0 * c / l, trials),
    ])
}

/// Quantities of one probe that feed the gradient checks.
struct GradientProbe {
    risk: f64,
    /// Per block, squared gradient norms of `[a, B, C, r]`.
    blocks: Vec<[f64; 4]>,
    total_sq: f64,
    quad_form: f64,
    lambda_h: f64,
    drift: f64,
}

fn gradient_probe(
    p: &ModelParams,
    h0: &nalgebra::DMatrix<f64>,
    data: &Dataset,
    act: ActivationKind,
) -> Result<GradientProbe> {
    let n = data.n();
    let width = p.m * p.n_blocks();
    let mut prop = Propagator::new(p);
    let mut grads = crate::netcore::Gradients::zeros_like(p);
    let mut rows = Vec::with_capacity(n);
    let mut resid = Vec::with_capacity(n);
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        let e = prop.run(p, x, act) - y;
        prop.accumulate(p, e / n as f64, &mut grads);
        let mut row = vec![0.0; width];
        prop.a_features(&mut row);
        rows.push(row);
        resid.push(e);
    }
    let risk = resid.iter().map(|e| e * e).sum::<f64>() / (2.0 * n as f64);
    let h = gram_from_features(&rows, p.n_blocks());
    let e = nalgebra::DVector::from_column_slice(&resid);
    let quad_form = p.n_blocks() as f64 / n as f64 * (e.transpose() * &h * &e)[(0, 0)];
    let drift = (&h - h0).abs().max();
    let lambda_h = min_eigenvalue(&h)?.0;
    Ok(GradientProbe {
        risk,
        blocks: grads.block_squared_norms(),
        total_sq: grads.squared_norm(),
        quad_form,
        lambda_h,
        drift,
    })
}

/// Gradient bounds over probes of `I_c(Θ0)`; needs `L ≥ 100c²`.
///
/// Reports, in order: the four per-block upper bounds as ratios to the risk
/// (`a`, `r` against `1 + 50c²/L`; `B`, `C` against `20c²/L²`), the exactness
/// of `Σ_k ‖∇_{a_k} R̂‖² = (N/n) eᵀHe`, the lower bound
/// `‖∇R̂‖² ≥ N λ_min(H(Θ)) R̂` stated as a ratio below 1, the eigenvalue floor
/// `λ_min(H(Θ)) ≥ λ_min(H(Θ0))/2` stated as a ratio below 1, and the entrywise
/// Gram drift against `50c²/(nL)`.
pub fn check_gradient_bounds(
    params0: &ModelParams,
    data: &Dataset,
    cfg: &ProbeConfig,
    act: ActivationKind,
) -> Result<Vec<BoundReport>> {
    check_probe_config(cfg)?;
    if data.n() == 0 || data.d != params0.d {
        return Err(Error::Input("dataset is empty or has the wrong dimension".into()));
    }
    let depth = params0.depth;
    gate("gradient upper bounds", depth, 100.0 * cfg.c * cfg.c)?;
    let h0 = gram_matrix(params0, data, act)?;
    let lambda0 = min_eigenvalue(&h0)?.0;
    let blocks = params0.n_blocks() as f64;
    let mut worst = [0.0f64; 4];
    let (mut ident, mut lower, mut floor, mut drift) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for p in probes(params0, cfg)? {
        let g = gradient_probe(&p, &h0, data, act)?;
        if g.risk > 0.0 {
            for b in &g.blocks {
                for (w, v) in worst.iter_mut().zip(b) {
                    *w = w.max(v / g.risk);
                }
            }
            lower = lower.max(blocks * g.lambda_h * g.risk / g.total_sq);
        }
        let a_sq: f64 = g.blocks.iter().map(|b| b[0]).sum();
        ident = ident.max((a_sq - g.quad_form).abs() / a_sq.max(f64::MIN_POSITIVE));
        floor = floor.max(if lambda0 > 0.0 { 0.5 * lambda0 / g.lambda_h } else { f64::INFINITY });
        drift = drift.max(g.drift);
    }
    let (l, c, n) = (depth as f64, cfg.c, data.n() as f64);
    let trials = cfg.n_probes;
    Ok(vec![
        BoundReport::new("grad_upper_a", worst[0], 1.0 + 50.0 * c * c / l, trials),
        BoundReport::new("grad_upper_r", worst[3], 1.0 + 50.0 * c * c / l, trials),
        BoundReport::new("grad_upper_B", worst[1], 20.0 * c * c / (l * l), trials),
        BoundReport::new("grad_upper_C", worst[2], 20.0 * c * c / (l * l), trials),
        BoundReport::new("grad_a_identity_relerr", ident, 1e-10, trials),
        BoundReport::new("grad_lower_ratio", lower, 1.0, trials),
        BoundReport::new("gram_floor_ratio", floor, 1.0, trials)
            .with_note(format!("lambda_min(H(theta0)) = {lambda0:e}")),
        BoundReport::new("gram_drift", drift, 50.0 * c * c / (n * l), trials),
    ])
}

/// The certified lower bound `‖∇R̂‖² ≥ (λ L / 2) R̂` with
/// `λ = (2/3) λ_min(H(Θ0))`, under its full depth gate
/// `L ≥ max{8 ln(n²/δ)/(m λ²), 200c²/λ}`.
pub fn check_certified_lower_bound(
    params0: &ModelParams,
    data: &Dataset,
    cfg: &ProbeConfig,
    act: ActivationKind,
) -> Result<BoundReport> {
    check_probe_config(cfg)?;
    let h0 = gram_matrix(params0, data, act)?;
    let lambda = 2.0 / 3.0 * min_eigenvalue(&h0)?.0;
    if !(lambda > 0.0) {
        return Err(Error::Precondition(format!("Gram matrix at initialization is not positive definite ({lambda:e})")));
    }
    let required = certified_gate(data.n(), params0.m, lambda, cfg.c, cfg.delta);
    gate("certified gradient lower bound", params0.depth, required)?;
    let l = params0.depth as f64;
    let mut worst = 0.0f64;
    for p in probes(params0, cfg)? {
        let g = gradient_probe(&p, &h0, data, act)?;
        if g.risk > 0.0 {
            worst = worst.max(0.5 * lambda * l * g.risk / g.total_sq);
        }
    }
    Ok(BoundReport::new("grad_lower_certified_ratio", worst, 1.0, cfg.n_probes)
        .with_note(format!("lambda = (2/3) lambda_min(H(theta0)) = {lambda:e}")))
}

/// `max{8 ln(n²/δ)/(m λ²), 200c²/λ}`.
pub fn certified_gate(n: usize, m: usize, lambda: f64, c: f64, delta: f64) -> f64 {
    concentration_gate(n, m, lambda, delta).max(200.0 * c * c / lambda)
}

/// `⌈8 ln(n²/δ) / (m λ²)⌉`, the depth beyond which `λ_min(H(Θ0)) ≥ 3λ/4`
/// holds with probability `1 − δ`.
pub fn concentration_gate(n: usize, m: usize, lambda: f64, delta: f64) -> f64 {
    (8.0 * ((n * n) as f64 / delta).ln() / (m as f64 * lambda * lambda)).ceil()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingPoint {
    pub t: f64,
    pub a_gap: f64,
    /// `max_x |f(x; Θ_t) − f̃(x; a_t, B0)|` with the network's own readout.
    pub f_gap_theta: f64,
    /// `max_x |f(x; Θ_t) − f̃(x; ã_t, B0)|` with the random-feature iterate.
    pub f_gap_traj: f64,
}

/// Gap series between a deep-net run and a random-feature run started from
/// the same initialization with the same step size, evaluated at every step
/// where the deep-net run holds a snapshot.
pub fn coupling_gap(
    traj_nn: &Trajectory,
    traj_rf: &Trajectory,
    rf0: &RandomFeatureParams,
    test_points: &[Vec<f64>],
    act: ActivationKind,
) -> Result<Vec<CouplingPoint>> {
    if traj_nn.init_seed != traj_rf.init_seed {
        return Err(Error::Input(format!(
            "trajectories come from different initializations ({:?} vs {:?})",
            traj_nn.init_seed, traj_rf.init_seed
        )));
    }
    if (traj_nn.eta - traj_rf.eta).abs() > 1e-12 * traj_nn.eta.abs() {
        return Err(Error::Input(format!("step sizes differ ({:e} vs {:e})", traj_nn.eta, traj_rf.eta)));
    }
    if traj_nn.snapshots.is_empty() {
        return Err(Error::Input("deep-net trajectory has no snapshots".into()));
    }
    if test_points.is_empty() {
        return Err(Error::Input("no test points".into()));
    }
    let mut out = Vec::new();
    for (step, p) in &traj_nn.snapshots {
        if p.d != rf0.d || p.m != rf0.m || p.depth != rf0.depth {
            return Err(Error::Input("snapshot shape differs from the random-feature model".into()));
        }
        let Some(j) = traj_rf.times.iter().position(|t| t == step) else {
            return Err(Error::Input(format!("random-feature trajectory has no record at step {step}")));
        };
        let a_t = p.stacked_a();
        let a_rf = &traj_rf.a_stack[j];
        let a_gap = dist(&a_t, a_rf);
        let mut prop = Propagator::new(p);
        let (mut gap_theta, mut gap_traj) = (0.0f64, 0.0f64);
        for x in test_points {
            let f = prop.eval(p, x, act);
            gap_theta = gap_theta.max((f - rf0.predict_with(&a_t, x)?).abs());
            gap_traj = gap_traj.max((f - rf0.predict_with(a_rf, x)?).abs());
        }
        out.push(CouplingPoint { t: *step as f64 * traj_nn.time_per_step, a_gap, f_gap_theta: gap_theta, f_gap_traj: gap_traj });
    }
    Ok(out)
}

pub fn write_coupling_csv<W: std::io::Write>(series: &[CouplingPoint], mut w: W) -> Result<()> {
    writeln!(w, "{COUPLING_HEADER}")?;
    for p in series {
        writeln!(w, "{},{},{},{}", p.t, p.a_gap, p.f_gap_theta, p.f_gap_traj)?;
    }
    Ok(())
}

/// Monte Carlo estimate of `(1/2) E[(f(x) − f*(x))²]` over the uniform
/// sphere, with its standard error.
pub fn population_risk<F>(predictor: F, target: &TargetSpec, d: usize, n_test: usize, seed: u64) -> Result<(f64, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let xs = test_points(d, n_test, seed)?;
    population_risk_on(predictor, target, &xs)
}

/// Fresh uniform test inputs; at least a thousand are required.
pub fn test_points(d: usize, n_test: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n_test < 1000 {
        return Err(Error::Parameter(format!("need at least 1000 test points, got {n_test}")));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n_test).map(|_| unit_sphere(&mut rng, d)).collect())
}

/// Population risk estimate on a fixed set of test inputs.
pub fn population_risk_on<F>(mut predictor: F, target: &TargetSpec, xs: &[Vec<f64>]) -> Result<(f64, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if xs.len() < 2 {
        return Err(Error::Input("need at least two test points".into()));
    }
    let mut losses = Vec::with_capacity(xs.len());
    for x in xs {
        let fstar = target
            .eval(x)
            .ok_or_else(|| Error::Input("target has no generative form".into()))?;
        let e = predictor(x)? - fstar;
        losses.push(0.5 * e * e);
    }
    let k = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / k;
    let var = losses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    Ok((mean, (var / k).sqrt()))
}

/// Checks `‖ã_t − a*‖ ≤ ‖ã_0 − a*‖ + 2t Ê_n(a*)` at every record of a
/// random-feature trajectory. The squared form
/// `‖ã_t − a*‖² ≤ ‖ã_0 − a*‖² + 2t Ê_n(a*)` is returned alongside.
pub fn check_rf_norm_growth(traj_rf: &Trajectory, astar: &[f64], risk_astar: f64) -> Result<[BoundReport; 2]> {
    if traj_rf.is_empty() {
        return Err(Error::Input("empty trajectory".into()));
    }
    let d0 = dist(&traj_rf.a_stack[0], astar);
    let (mut linear, mut squared) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..traj_rf.len() {
        let t = traj_rf.time(i);
        let dt = dist(&traj_rf.a_stack[i], astar);
        linear = linear.max(dt - (d0 + 2.0 * t * risk_astar));
        squared = squared.max(dt * dt - (d0 * d0 + 2.0 * t * risk_astar));
    }
    Ok([
        BoundReport::new("rf_norm_growth_excess", linear, 0.0, traj_rf.len()),
        BoundReport::new("rf_norm_growth_sq_excess", squared, 0.0, traj_rf.len()),
    ])
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Convenience: `f̃(x; a, B0)` as a fallible closure argument.
pub fn rf_predictor<'a>(rf: &'a RandomFeatureParams, a: &'a [f64]) -> impl FnMut(&[f64]) -> Result<f64> + 'a {
    move |x| rf.predict_with(a, x)
}

/// Deep-net predictor for [`population_risk`].
pub fn nn_predictor<'a>(params: &'a ModelParams, act: ActivationKind) -> impl FnMut(&[f64]) -> Result<f64> + 'a {
    let mut prop = Propagator::new(params);
    move |x| {
        if x.len() != params.d {
            return Err(Error::Dimension(format!("input has length {}, expected {}", x.len(), params.d)));
        }
        Ok(prop.eval(params, x, act))
    }
}
