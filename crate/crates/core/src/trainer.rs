//! Full-batch gradient descent for the deep network and the random-feature
//! model, the step-size rule, forward-Euler approximation of gradient flow,
//! and trajectory recording.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::data::Dataset;
use crate::kernelgram::{gram_from_features, gram_matrix, min_eigenvalue};
use crate::netcore::{BatchPropagator, BlockDeviation, Gradients, ModelParams};
use crate::reference::RandomFeatureParams;
use crate::sampling::dot;
use crate::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "step,time,risk,max_dev_a,max_dev_r,max_dev_B,max_dev_C";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    #[default]
    Explicit,
    /// `η = κ λ̂ / L` with `λ̂ = λ_min(H(Θ0))`.
    LambdaScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub steps: usize,
    pub eta_rule: EtaRule,
    pub kappa: f64,
    pub record_every: usize,
    /// Full parameter copies every this many steps; 0 disables them.
    pub snapshot_every: usize,
    pub seed: u64,
    pub stop_risk: f64,
    pub divergence_risk: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.0,
            steps: 1000,
            eta_rule: EtaRule::Explicit,
            kappa: 0.5,
            record_every: 1,
            snapshot_every: 0,
            seed: 0,
            stop_risk: 1e-12,
            divergence_risk: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn lambda_scaled(kappa: f64, steps: usize) -> Self {
        TrainConfig { eta_rule: EtaRule::LambdaScaled, kappa, steps, ..Default::default() }
    }

    pub fn explicit(eta: f64, steps: usize) -> Self {
        TrainConfig { eta, steps, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Parameter("steps must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Parameter("record_every must be at least 1".into()));
        }
        if !(self.stop_risk >= 0.0) || !(self.divergence_risk > self.stop_risk) {
            return Err(Error::Parameter(format!(
                "need 0 <= stop_risk < divergence_risk (got {}, {})",
                self.stop_risk, self.divergence_risk
            )));
        }
        match self.eta_rule {
            EtaRule::Explicit if !(self.eta > 0.0 && self.eta.is_finite()) => {
                Err(Error::Parameter(format!("eta must be positive and finite, got {}", self.eta)))
            }
            EtaRule::LambdaScaled if !(self.kappa > 0.0 && self.kappa <= 1.0) => {
                Err(Error::Parameter(format!("kappa must lie in (0, 1], got {}", self.kappa)))
            }
            _ => Ok(()),
        }
    }

    /// Step size for a network of the given depth whose initial Gram matrix
    /// has smallest eigenvalue `lambda_hat`.
    pub fn resolve_eta(&self, lambda_hat: f64, depth: usize) -> Result<f64> {
        self.validate()?;
        match self.eta_rule {
            EtaRule::Explicit => Ok(self.eta),
            EtaRule::LambdaScaled => {
                if !(lambda_hat > 0.0) {
                    return Err(Error::Precondition(format!(
                        "step rule needs a positive Gram eigenvalue, got {lambda_hat:e}"
                    )));
                }
                let cap = lambda_hat / depth as f64;
                let eta = self.kappa * cap;
                assert!(eta <= cap);
                Ok(eta)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Converged { step: usize },
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub model: String,
    pub eta: f64,
    /// Continuous time covered by one step.
    pub time_per_step: f64,
    pub lambda_hat: Option<f64>,
    pub init_seed: Option<u64>,
    pub times: Vec<usize>,
    pub risks: Vec<f64>,
    pub block_devs: Vec<BlockDeviation>,
    pub a_stack: Vec<Vec<f64>>,
    pub snapshots: Vec<(usize, ModelParams)>,
    /// Additional named columns, one value per recorded step.
    pub extras: Vec<(String, Vec<f64>)>,
    pub outcome: Outcome,
    /// Steps, recorded or not, at which the risk went up.
    pub risk_increases: usize,
}

#[derive(Serialize)]
struct TrajectoryMeta<'a> {
    model: &'a str,
    eta: f64,
    time_per_step: f64,
    lambda_hat: Option<f64>,
    init_seed: Option<u64>,
    records: usize,
    final_risk: Option<f64>,
    outcome: Outcome,
    risk_increases: usize,
}

impl Trajectory {
    pub fn new(model: &str, eta: f64, time_per_step: f64, lambda_hat: Option<f64>, init_seed: Option<u64>) -> Self {
        Trajectory {
            model: model.to_string(),
            eta,
            time_per_step,
            lambda_hat,
            init_seed,
            times: Vec::new(),
            risks: Vec::new(),
            block_devs: Vec::new(),
            a_stack: Vec::new(),
            snapshots: Vec::new(),
            extras: Vec::new(),
            outcome: Outcome::BudgetExhausted,
            risk_increases: 0,
        }
    }

    pub fn record(&mut self, step: usize, risk: f64, dev: BlockDeviation, a: Vec<f64>) {
        debug_assert!(self.times.last().is_none_or(|&t| t < step));
        self.times.push(step);
        self.risks.push(risk);
        self.block_devs.push(dev);
        self.a_stack.push(a);
    }

    pub fn push_extra(&mut self, name: &str, value: f64) {
        match self.extras.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => v.push(value),
            None => self.extras.push((name.to_string(), vec![value])),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i] as f64 * self.time_per_step
    }

    pub fn continuous_times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn final_risk(&self) -> Option<f64> {
        self.risks.last().copied()
    }

    pub fn snapshot_at(&self, step: usize) -> Option<&ModelParams> {
        self.snapshots.iter().find(|(s, _)| *s == step).map(|(_, p)| p)
    }

    /// Largest recorded deviation of any block.
    pub fn max_deviation(&self) -> f64 {
        self.block_devs.iter().fold(0.0, |acc, d| acc.max(d.max()))
    }

    /// Risk at continuous time `t` by linear interpolation between records.
    pub fn risk_at_time(&self, t: f64) -> Option<f64> {
        let times = self.continuous_times();
        if times.is_empty() || t < times[0] || t > *times.last().unwrap() {
            return None;
        }
        let k = times.partition_point(|&s| s < t);
        if times[k] == t || k == 0 {
            return Some(self.risks[k]);
        }
        let (t0, t1) = (times[k - 1], times[k]);
        let w = (t - t0) / (t1 - t0);
        Some((1.0 - w) * self.risks[k - 1] + w * self.risks[k])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "{TRAJECTORY_HEADER}")?;
        for (name, _) in &self.extras {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            let d = &self.block_devs[i];
            write!(w, "{},{},{},{},{},{},{}", self.times[i], self.time(i), self.risks[i], d.a, d.r, d.b, d.c)?;
            for (_, v) in &self.extras {
                write!(w, ",{}", v[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn meta_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(TrajectoryMeta {
            model: &self.model,
            eta: self.eta,
            time_per_step: self.time_per_step,
            lambda_hat: self.lambda_hat,
            init_seed: self.init_seed,
            records: self.len(),
            final_risk: self.final_risk(),
            outcome: self.outcome,
            risk_increases: self.risk_increases,
        })?)
    }
}

fn check_inputs(params: &ModelParams, data: &Dataset) -> Result<()> {
    params.validate_shapes()?;
    if data.n() == 0 {
        return Err(Error::Input("empty dataset".into()));
    }
    if data.d != params.d {
        return Err(Error::Dimension(format!("dataset has d = {}, model has d = {}", data.d, params.d)));
    }
    Ok(())
}

/// `λ_min(H(Θ))` for the step rule.
pub fn lambda_hat(params: &ModelParams, data: &Dataset, act: ActivationKind) -> Result<f64> {
    Ok(min_eigenvalue(&gram_matrix(params, data, act)?)?.0)
}

/// Gradient descent `Θ_{t+1} = Θ_t − η ∇R̂_n(Θ_t)` on the deep network.
pub fn train_nn(params0: &ModelParams, data: &Dataset, cfg: &TrainConfig, act: ActivationKind) -> Result<Trajectory> {
    Ok(train_nn_final(params0, data, cfg, act)?.0)
}

/// [`train_nn`] that also returns the last iterate.
pub fn train_nn_final(
    params0: &ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    act: ActivationKind,
) -> Result<(Trajectory, ModelParams)> {
    cfg.validate()?;
    check_inputs(params0, data)?;
    let lam = lambda_hat(params0, data, act)?;
    let eta = cfg.resolve_eta(lam, params0.depth)?;
    let mut traj = Trajectory::new("skipnet", eta, eta, Some(lam), Some(cfg.seed));
    let last = descend_nn(params0, data, act, eta, cfg, &mut traj)?;
    Ok((traj, last))
}

fn descend_nn(
    params0: &ModelParams,
    data: &Dataset,
    act: ActivationKind,
    eta: f64,
    cfg: &TrainConfig,
    traj: &mut Trajectory,
) -> Result<ModelParams> {
    let mut p = params0.clone();
    let mut prop = BatchPropagator::new(&p, data);
    let mut grads = Gradients::zeros_like(&p);
    let mut prev = f64::INFINITY;
    for t in 0..=cfg.steps {
        let risk = prop.risk_grad(&p, data, act, &mut grads);
        if !risk.is_finite() || risk > cfg.divergence_risk {
            return Err(Error::Divergence { step: t, risk, threshold: cfg.divergence_risk });
        }
        if risk > prev {
            traj.risk_increases += 1;
        }
        prev = risk;
        let done = risk <= cfg.stop_risk;
        let last = t == cfg.steps;
        if t % cfg.record_every == 0 || done || last {
            traj.record(t, risk, p.deviation_from(params0), p.stacked_a());
        }
        if cfg.snapshot_every > 0 && t % cfg.snapshot_every == 0 {
            traj.snapshots.push((t, p.clone()));
        }
        if done {
            traj.outcome = Outcome::Converged { step: t };
            break;
        }
        if last {
            break;
        }
        p.descend(&grads, eta);
    }
    Ok(p)
}

fn rf_block_deviation(a: &[f64], a0: &[f64], m: usize) -> BlockDeviation {
    let worst = a
        .chunks(m)
        .zip(a0.chunks(m))
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    BlockDeviation { a: worst, ..Default::default() }
}

/// Gradient descent on the random-feature readout. The step rule uses the
/// feature Gram matrix, which equals `H(Θ0)` for a model taken at
/// initialization.
pub fn train_rf(rf0: &RandomFeatureParams, data: &Dataset, cfg: &TrainConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(Error::Input("empty dataset".into()));
    }
    if data.d != rf0.d {
        return Err(Error::Dimension(format!("dataset has d = {}, model has d = {}", data.d, rf0.d)));
    }
    let rows: Vec<Vec<f64>> = data.xs.iter().map(|x| rf0.features(x)).collect();
    let lam = min_eigenvalue(&gram_from_features(&rows, rf0.n_blocks()))?.0;
    let eta = cfg.resolve_eta(lam, rf0.depth)?;
    let mut traj = Trajectory::new("rf", eta, eta, Some(lam), rf0.init_seed.or(Some(cfg.seed)));
    let n = data.n() as f64;
    let mut a = rf0.a.clone();
    let mut grad = vec![0.0; a.len()];
    let mut prev = f64::INFINITY;
    for t in 0..=cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut sq = 0.0;
        for (row, &y) in rows.iter().zip(&data.ys) {
            let e = dot(&a, row) - y;
            sq += e * e;
            for (g, f) in grad.iter_mut().zip(row) {
                *g += e * f / n;
            }
        }
        let risk = sq / (2.0 * n);
        if !risk.is_finite() || risk > cfg.divergence_risk {
            return Err(Error::Divergence { step: t, risk, threshold: cfg.divergence_risk });
        }
        if risk > prev {
            traj.risk_increases += 1;
        }
        prev = risk;
        let done = risk <= cfg.stop_risk;
        let last = t == cfg.steps;
        if t % cfg.record_every == 0 || done || last {
            traj.record(t, risk, rf_block_deviation(&a, &rf0.a, rf0.m), a.clone());
        }
        if done {
            traj.outcome = Outcome::Converged { step: t };
            break;
        }
        if last {
            break;
        }
        for (ai, g) in a.iter_mut().zip(&grad) {
            *ai -= eta * g;
        }
    }
    Ok(traj)
}

/// Forward-Euler approximation of the gradient flow up to continuous time
/// `horizon`. `eta_fine` may not exceed a tenth of `λ̂/L`.
pub fn euler_flow(
    params0: &ModelParams,
    data: &Dataset,
    eta_fine: f64,
    horizon: f64,
    act: ActivationKind,
    record_every: usize,
) -> Result<Trajectory> {
    check_inputs(params0, data)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Parameter(format!("horizon must be positive, got {horizon}")));
    }
    let lam = lambda_hat(params0, data, act)?;
    let rule = lam / params0.depth as f64;
    if !(eta_fine > 0.0) || eta_fine > rule / 10.0 {
        return Err(Error::Parameter(format!(
            "eta_fine = {eta_fine:e} must be positive and at most λ̂/(10 L) = {:e}",
            rule / 10.0
        )));
    }
    let steps = (horizon / eta_fine).ceil() as usize;
    let cfg = TrainConfig { eta: eta_fine, steps, record_every: record_every.max(1), stop_risk: 0.0, ..Default::default() };
    let mut traj = Trajectory::new("skipnet-flow", eta_fine, eta_fine, Some(lam), None);
    descend_nn(params0, data, act, eta_fine, &cfg, &mut traj)?;
    Ok(traj)
}

/// Early-stopping time `T = √n / L`.
pub fn early_stop_time(n: usize, depth: usize) -> Result<f64> {
    if n == 0 || depth < 2 {
        return Err(Error::Parameter(format!("need n >= 1 and L >= 2 (n={n}, L={depth})")));
    }
    Ok((n as f64).sqrt() / depth as f64)
}

/// Step index `⌈T / η⌉` of the early-stopping time.
pub fn early_stop_step(n: usize, depth: usize, eta: f64) -> Result<usize> {
    if !(eta > 0.0) {
        return Err(Error::Parameter(format!("eta must be positive, got {eta}")));
    }
    Ok((early_stop_time(n, depth)? / eta).ceil() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sphere_dataset, TargetSpec};
    use crate::kernelgram::max_eigenvalue;
    use crate::netcore::{risk, sample_init, LayerBlocks};
    use crate::reference::{least_squares_readout, rf_risk};

    fn small_problem(depth: usize) -> (ModelParams, Dataset) {
        let data = sphere_dataset(3, 5, TargetSpec::relu_first_coordinate(), 11).unwrap();
        (sample_init(3, 4, depth, 2).unwrap(), data)
    }

    #[test]
    fn zero_labels_are_a_fixed_point() {
        let (p0, data) = small_problem(6);
        let data = data.with_labels(vec![0.0; 5]).unwrap();
        let traj = train_nn(&p0, &data, &TrainConfig::explicit(0.1, 50), ActivationKind::Relu).unwrap();
        assert_eq!(traj.outcome, Outcome::Converged { step: 0 });
        assert_eq!(traj.risks, vec![0.0]);
        assert_eq!(traj.max_deviation(), 0.0);
    }

    #[test]
    fn lambda_rule_descends_monotonically() {
        let (p0, data) = small_problem(40);
        let traj = train_nn(&p0, &data, &TrainConfig::lambda_scaled(0.5, 300), ActivationKind::Relu).unwrap();
        assert!(traj.risks.windows(2).all(|w| w[1] < w[0]));
        let lam = traj.lambda_hat.unwrap();
        assert!((traj.eta - 0.5 * lam / 40.0).abs() < 1e-18);
    }

    #[test]
    fn runs_are_bit_identical() {
        let (p0, data) = small_problem(10);
        let cfg = TrainConfig { snapshot_every: 7, ..TrainConfig::explicit(0.05, 40) };
        let a = train_nn(&p0, &data, &cfg, ActivationKind::Relu).unwrap();
        let b = train_nn(&p0, &data, &cfg, ActivationKind::Relu).unwrap();
        assert_eq!(a, b);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.snapshots.len(), 6);
    }

    #[test]
    fn recorded_risk_matches_snapshot() {
        let (p0, data) = small_problem(8);
        let cfg = TrainConfig { snapshot_every: 5, record_every: 5, ..TrainConfig::explicit(0.05, 20) };
        let traj = train_nn(&p0, &data, &cfg, ActivationKind::Relu).unwrap();
        for (i, &t) in traj.times.iter().enumerate() {
            let p = traj.snapshot_at(t).unwrap();
            assert_eq!(risk(p, &data, ActivationKind::Relu), traj.risks[i]);
            assert_eq!(p.stacked_a(), traj.a_stack[i]);
            assert_eq!(p.deviation_from(&p0), traj.block_devs[i]);
        }
    }

    #[test]
    fn oversized_step_diverges() {
        let (p0, data) = small_problem(6);
        let err = train_nn(&p0, &data, &TrainConfig::explicit(1e4, 200), ActivationKind::Relu).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::explicit(0.0, 10).validate().is_err());
        assert!(TrainConfig::explicit(0.1, 0).validate().is_err());
        assert!(TrainConfig::lambda_scaled(1.5, 10).validate().is_err());
        assert!(TrainConfig::lambda_scaled(0.5, 10).resolve_eta(0.0, 10).is_err());
        let cfg: TrainConfig = serde_json::from_str(r#"{"eta": 0.2, "steps": 5}"#).unwrap();
        assert_eq!(cfg.stop_risk, 1e-12);
        assert_eq!(cfg.divergence_risk, 1e6);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"eta": 0.2, "stepz": 5}"#).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let (p0, data) = small_problem(4);
        let traj = train_nn(&p0, &data, &TrainConfig::explicit(0.05, 3), ActivationKind::Relu).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRAJECTORY_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,0,"));
    }

    #[test]
    fn scalar_rf_recurrence_is_geometric() {
        let mut p0 = ModelParams::zeros(1, 1, 2).unwrap();
        p0.layers[0] = LayerBlocks { a: vec![0.0], b: vec![0.8], c: vec![0.0], r: vec![0.0] };
        let rf = RandomFeatureParams::from_model(&p0, ActivationKind::Relu, None);
        let data = Dataset::from_table(vec![vec![1.0]], vec![0.5]).unwrap();
        let eta = 0.7;
        let cfg = TrainConfig { stop_risk: 0.0, ..TrainConfig::explicit(eta, 30) };
        let traj = train_rf(&rf, &data, &cfg).unwrap();
        let (g, y) = (0.8, 0.5);
        let fixed = y / g;
        for (i, &t) in traj.times.iter().enumerate() {
            let expected = fixed - fixed * (1.0 - eta * g * g).powi(t as i32);
            assert!((traj.a_stack[i][0] - expected).abs() <= 1e-14, "step {t}");
        }
    }

    #[test]
    fn rf_descent_is_monotone_and_beats_astar() {
        let data = sphere_dataset(4, 8, TargetSpec::relu_first_coordinate(), 1).unwrap();
        let p0 = sample_init(4, 5, 6, 2).unwrap();
        let rf = RandomFeatureParams::from_model(&p0, ActivationKind::Relu, Some(2));
        let phi = crate::reference::feature_matrix(&rf, &data).unwrap();
        let lmax = max_eigenvalue(&(phi.transpose() * &phi / 8.0)).unwrap();
        let cfg = TrainConfig { stop_risk: 1e-24, ..TrainConfig::explicit(0.9 / lmax, 20_000) };
        let traj = train_rf(&rf, &data, &cfg).unwrap();
        assert!(traj.risks.windows(2).all(|w| w[1] <= w[0]));
        let mut best = rf.clone();
        best.a = least_squares_readout(&rf, &data).unwrap();
        let astar = crate::reference::construct_astar(
            &crate::data::CoefficientFn::Constant { value: 1.0 },
            rf.b0(),
            4,
            5,
            6,
        )
        .unwrap();
        let mut at_star = rf.clone();
        at_star.a = astar;
        assert!(traj.final_risk().unwrap() <= rf_risk(&at_star, &data).unwrap());
        assert!(rf_risk(&best, &data).unwrap() <= traj.final_risk().unwrap() + 1e-15);
    }

    #[test]
    fn euler_flow_rejects_coarse_steps() {
        let (p0, data) = small_problem(10);
        let lam = lambda_hat(&p0, &data, ActivationKind::Relu).unwrap();
        let rule = lam / 10.0;
        assert!(euler_flow(&p0, &data, rule / 5.0, 1.0, ActivationKind::Relu, 1).is_err());
        let traj = euler_flow(&p0, &data, rule / 10.0, 20.0 * rule, ActivationKind::Relu, 1).unwrap();
        assert_eq!(*traj.times.last().unwrap(), 200);
        assert!((traj.time(traj.len() - 1) - 20.0 * rule).abs() < 1e-12 * rule);
    }

    #[test]
    fn early_stopping_formula() {
        assert_eq!(early_stop_time(16, 8).unwrap(), 0.5);
        assert!((early_stop_time(100, 1000).unwrap() - 0.01).abs() < 1e-18);
        assert_eq!(early_stop_step(16, 8, 0.1).unwrap(), 5);
        assert!(early_stop_time(0, 8).is_err());
        assert!(early_stop_time(4, 1).is_err());
        for n in [1, 4, 9, 50] {
            for depth in [2, 3, 10, 100] {
                assert!(early_stop_time(n, depth + 1).unwrap() < early_stop_time(n, depth).unwrap());
                assert!(early_stop_time(n + 1, depth).unwrap() > early_stop_time(n, depth).unwrap());
            }
        }
    }

    #[test]
    fn interpolated_risk() {
        let mut traj = Trajectory::new("x", 0.5, 0.5, None, None);
        traj.record(0, 4.0, BlockDeviation::default(), vec![]);
        traj.record(2, 2.0, BlockDeviation::default(), vec![]);
        assert_eq!(traj.risk_at_time(0.0), Some(4.0));
        assert_eq!(traj.risk_at_time(0.5), Some(3.0));
        assert_eq!(traj.risk_at_time(1.0), Some(2.0));
        assert_eq!(traj.risk_at_time(1.5), None);
    }
}
