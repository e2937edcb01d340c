use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::{json, Value};
use skiplab::data::Dataset;
use skiplab::fit::{loglog_slope, median};
use skiplab::landscape::{
    check_backward_stability, check_certified_lower_bound, check_forward_stability, check_gradient_bounds,
    coupling_gap, nn_predictor, population_risk_on, rf_predictor, test_points, write_coupling_csv, BoundReport,
};
use skiplab::netcore::{sample_init, ModelParams};
use skiplab::reference::RandomFeatureParams;
use skiplab::resnetlab::{couple_resnet, resnet_predictor, sample_resnet_init, train_resnet, ResNetMode};
use skiplab::trainer::{early_stop_step, lambda_hat, train_nn_final, train_rf, EtaRule, TrainConfig, Trajectory};
use skiplab::{Error, Result};

use crate::config::{CheckKind, CoupleSection, ModelKind, RunConfig, VerifySection};

/// Everything a command produces, held in memory until the run directory is
/// written.
pub struct Output {
    pub files: Vec<(String, Vec<u8>)>,
    pub dataset: Option<Dataset>,
    pub all_pass: bool,
}

impl Output {
    fn new(cfg: &RunConfig, data: &Dataset) -> Result<Self> {
        let reference = json!({
            "spec": cfg.dataset,
            "n": data.n(),
            "d": data.d,
            "kernel_lambda": data.kernel_lambda,
            "degenerate": data.degenerate,
            "copy": "data.csv",
        });
        Ok(Output {
            files: vec![
                ("config.json".into(), cfg.canonical_json()?.into_bytes()),
                ("dataset_ref.json".into(), pretty(&reference)?),
            ],
            dataset: Some(data.clone()),
            all_pass: true,
        })
    }

    fn push(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }
}

fn pretty(v: &Value) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

fn csv_bytes(traj: &Trajectory) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    Ok(buf)
}

/// Test risk of a trained model on fixed test points, when the dataset's
/// target can be evaluated off the sample.
fn test_risk<F>(predictor: F, data: &Dataset, xs: &[Vec<f64>]) -> Result<Option<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if data.target.eval(&xs[0]).is_none() {
        return Ok(None);
    }
    Ok(Some(population_risk_on(predictor, &data.target, xs)?.0))
}

pub fn divergence_output(cfg: &RunConfig, err: &Error) -> Result<Output> {
    let Error::Divergence { step, risk, threshold } = err else {
        unreachable!("only divergences are reported this way")
    };
    let diag = json!({ "error": "divergence", "step": step, "risk": risk, "threshold": threshold });
    Ok(Output {
        files: vec![
            ("config.json".into(), cfg.canonical_json()?.into_bytes()),
            ("diagnostics.json".into(), pretty(&diag)?),
        ],
        dataset: None,
        all_pass: false,
    })
}

pub fn train(cfg: &RunConfig) -> Result<Output> {
    let data = cfg.build_dataset()?;
    let mut out = Output::new(cfg, &data)?;
    let xs = test_points(cfg.d, 1000, 0)?;
    let (traj, test) = match cfg.model {
        ModelKind::SkipNet => {
            let p0 = sample_init(cfg.d, cfg.m, cfg.depth, cfg.seed)?;
            let (traj, last) = train_nn_final(&p0, &data, &cfg.train, cfg.activation)?;
            let test = test_risk(nn_predictor(&last, cfg.activation), &data, &xs)?;
            (traj, test)
        }
        ModelKind::Rf => {
            let p0 = sample_init(cfg.d, cfg.m, cfg.depth, cfg.seed)?;
            let rf0 = RandomFeatureParams::from_model(&p0, cfg.activation, Some(cfg.seed));
            let traj = train_rf(&rf0, &data, &cfg.train)?;
            let a = traj.a_stack.last().expect("at least one record").clone();
            let test = test_risk(rf_predictor(&rf0, &a), &data, &xs)?;
            (traj, test)
        }
        ModelKind::ResNet | ModelKind::ResNetFrozenV => {
            let (mode, lambda) = cfg.resnet_mode();
            let p0 = sample_resnet_init(cfg.d, cfg.m, cfg.depth, cfg.seed, mode == ResNetMode::FrozenVGd)?;
            let (traj, last) = train_resnet(&p0, &data, &cfg.train, mode, lambda, cfg.activation)?;
            let test = test_risk(resnet_predictor(&last, cfg.activation), &data, &xs)?;
            (traj, test)
        }
    };
    let mut diag = traj.meta_json()?;
    diag["max_deviation"] = json!(traj.max_deviation());
    diag["test_risk"] = json!(test);
    out.push("trajectory.csv", csv_bytes(&traj)?);
    out.push("diagnostics.json", pretty(&diag)?);
    Ok(out)
}

pub fn verify(cfg: &RunConfig) -> Result<Output> {
    if cfg.model != ModelKind::SkipNet {
        return Err(Error::Input("verify applies to the skipnet model".into()));
    }
    let section = cfg.verify.clone().unwrap_or(VerifySection {
        probe: Default::default(),
        checks: vec![CheckKind::Forward, CheckKind::Backward, CheckKind::Gradient],
    });
    if section.checks.is_empty() {
        return Err(Error::Input("no checks enabled".into()));
    }
    let data = cfg.build_dataset()?;
    let mut out = Output::new(cfg, &data)?;
    let p0 = sample_init(cfg.d, cfg.m, cfg.depth, cfg.seed)?;
    let mut reports: Vec<BoundReport> = Vec::new();
    for check in &section.checks {
        match check {
            CheckKind::Forward => reports.extend(check_forward_stability(&p0, &section.probe, cfg.activation)?),
            CheckKind::Backward => reports.extend(check_backward_stability(&p0, &section.probe, cfg.activation)?),
            CheckKind::Gradient => reports.extend(check_gradient_bounds(&p0, &data, &section.probe, cfg.activation)?),
            CheckKind::Certified => reports.push(check_certified_lower_bound(&p0, &data, &section.probe, cfg.activation)?),
        }
    }
    let dev = p0.deviation_from(&p0);
    out.all_pass = reports.iter().all(|r| r.pass);
    let diag = json!({
        "reports": reports,
        "all_pass": out.all_pass,
        "lambda_hat": lambda_hat(&p0, &data, cfg.activation)?,
        "deviation": { "a": dev.a, "r": dev.r, "B": dev.b, "C": dev.c },
    });
    out.push("verify.json", pretty(&diag)?);
    Ok(out)
}

fn couple_section(cfg: &RunConfig) -> CoupleSection {
    cfg.couple.clone().unwrap_or(CoupleSection { depths: Vec::new(), n_test: 1000, test_seed: 0, rf_seed: None })
}

/// Paired deep-net and random-feature runs at one depth.
fn couple_skipnet(cfg: &RunConfig, data: &Dataset, depth: usize, xs: &[Vec<f64>], rf_seed: u64) -> Result<(Vec<u8>, CoupleSummary)> {
    let p0 = sample_init(cfg.d, cfg.m, depth, cfg.seed)?;
    let mut nn_cfg = cfg.train.clone();
    if nn_cfg.snapshot_every == 0 {
        nn_cfg.snapshot_every = nn_cfg.record_every;
    }
    let (traj_nn, params_last) = train_nn_final(&p0, data, &nn_cfg, cfg.activation)?;
    let rf_p0 = if rf_seed == cfg.seed { p0.clone() } else { sample_init(cfg.d, cfg.m, depth, rf_seed)? };
    let rf0 = RandomFeatureParams::from_model(&rf_p0, cfg.activation, Some(rf_seed));
    let rf_cfg = TrainConfig {
        eta: traj_nn.eta,
        eta_rule: EtaRule::Explicit,
        steps: (*traj_nn.times.last().expect("at least one record")).max(1),
        record_every: nn_cfg.snapshot_every,
        stop_risk: 0.0,
        seed: rf_seed,
        ..nn_cfg.clone()
    };
    let traj_rf = train_rf(&rf0, data, &rf_cfg)?;
    let series = coupling_gap(&traj_nn, &traj_rf, &rf0, xs, cfg.activation)?;
    let mut buf = Vec::new();
    write_coupling_csv(&series, &mut buf)?;
    let last = series.last().expect("non-empty series");
    let summary = CoupleSummary {
        depth,
        lambda_hat: traj_nn.lambda_hat,
        eta: traj_nn.eta,
        sup_f_gap: series.iter().fold(0.0, |a, p| a.max(p.f_gap_traj)),
        final_t: last.t,
        final_a_gap: last.a_gap,
        sup_risk_gap: None,
        final_train_risk: traj_nn.final_risk().expect("non-empty trajectory"),
        steps: *traj_nn.times.last().expect("non-empty trajectory"),
        nn: Some((traj_nn, params_last)),
    };
    Ok((buf, summary))
}

fn couple_resnet_depth(cfg: &RunConfig, data: &Dataset, depth: usize, xs: &[Vec<f64>]) -> Result<(Vec<u8>, CoupleSummary)> {
    let p0 = sample_resnet_init(cfg.d, cfg.m, depth, cfg.seed, false)?;
    let series = couple_resnet(&p0, data, &cfg.train, xs, cfg.activation)?;
    let mut buf = String::from("t,a_gap,f_gap_theta,f_gap_traj,risk_nn,risk_rf\n");
    for p in &series {
        buf.push_str(&format!("{},{},{},{},{},{}\n", p.t, p.a_gap, p.f_gap_theta, p.f_gap_traj, p.risk_nn, p.risk_rf));
    }
    let last = series.last().expect("non-empty series");
    let summary = CoupleSummary {
        depth,
        lambda_hat: None,
        eta: cfg.train.eta,
        sup_f_gap: series.iter().fold(0.0, |a, p| a.max(p.f_gap_traj)),
        final_t: last.t,
        final_a_gap: last.a_gap,
        sup_risk_gap: Some(series.iter().fold(0.0, |a, p| a.max((p.risk_nn - p.risk_rf).abs()))),
        final_train_risk: last.risk_nn,
        steps: (last.t / cfg.train.eta).round() as usize,
        nn: None,
    };
    Ok((buf.into_bytes(), summary))
}

struct CoupleSummary {
    depth: usize,
    lambda_hat: Option<f64>,
    eta: f64,
    sup_f_gap: f64,
    final_t: f64,
    final_a_gap: f64,
    sup_risk_gap: Option<f64>,
    final_train_risk: f64,
    steps: usize,
    /// Deep-net trajectory and last iterate, for skipnet runs.
    nn: Option<(Trajectory, ModelParams)>,
}

impl CoupleSummary {
    fn json(&self) -> Value {
        json!({
            "depth": self.depth,
            "lambda_hat": self.lambda_hat,
            "eta": self.eta,
            "sup_f_gap": self.sup_f_gap,
            "final_t": self.final_t,
            "final_a_gap": self.final_a_gap,
            "sup_risk_gap": self.sup_risk_gap,
        })
    }
}

fn couple_one(cfg: &RunConfig, data: &Dataset, depth: usize, xs: &[Vec<f64>], rf_seed: u64) -> Result<(Vec<u8>, CoupleSummary)> {
    match cfg.model {
        ModelKind::SkipNet => couple_skipnet(cfg, data, depth, xs, rf_seed),
        ModelKind::ResNet => {
            if rf_seed != cfg.seed {
                return Err(Error::Input(format!("rf_seed {rf_seed} differs from seed {}", cfg.seed)));
            }
            if cfg.resnet_mode().0 != ResNetMode::PlainGd {
                return Err(Error::Input("ResNet coupling pairs plain gradient descent with its frozen-V twin".into()));
            }
            couple_resnet_depth(cfg, data, depth, xs)
        }
        _ => Err(Error::Input("couple needs model skipnet or resnet".into())),
    }
}

pub fn couple(cfg: &RunConfig) -> Result<Output> {
    let section = couple_section(cfg);
    let rf_seed = section.rf_seed.unwrap_or(cfg.seed);
    let depths = if section.depths.is_empty() { vec![cfg.depth] } else { section.depths.clone() };
    let data = cfg.build_dataset()?;
    let xs = test_points(cfg.d, section.n_test, section.test_seed)?;
    let mut out = Output::new(cfg, &data)?;
    let mut rows = Vec::new();
    for &depth in &depths {
        let (csv, summary) = couple_one(cfg, &data, depth, &xs, rf_seed)?;
        out.push(format!("coupling_L{depth}.csv"), csv);
        rows.push(summary.json());
    }
    out.push("couple.json", pretty(&json!({ "runs": rows }))?);
    Ok(out)
}

struct SweepRow {
    depth: usize,
    seed: u64,
    lambda_hat: Option<f64>,
    eta: f64,
    steps: usize,
    final_train_risk: f64,
    early_step: usize,
    test_risk_early: Option<f64>,
    test_risk_final: Option<f64>,
    sup_f_gap: f64,
    a_gap_rate: f64,
    sup_risk_gap: Option<f64>,
}

const SWEEP_HEADER: &str = "depth,seed,lambda_hat,eta,steps,final_train_risk,early_step,test_risk_early,test_risk_final,sup_f_gap,a_gap_rate,sup_risk_gap";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn sweep_one(cfg: &RunConfig, data: &Dataset, xs: &[Vec<f64>], depth: usize, seed: u64) -> Result<SweepRow> {
    let mut run = cfg.clone();
    run.depth = depth;
    run.seed = seed;
    run.train.seed = seed;
    let (_, summary) = couple_one(&run, data, depth, xs, seed)?;
    let early_step = early_stop_step(data.n(), depth, summary.eta)?;
    let (test_early, test_final) = match &summary.nn {
        Some((traj, last)) => {
            let early = traj.snapshots.iter().min_by_key(|(s, _)| s.abs_diff(early_step)).expect("snapshots");
            (test_risk(nn_predictor(&early.1, cfg.activation), data, xs)?, test_risk(nn_predictor(last, cfg.activation), data, xs)?)
        }
        None => {
            let (mode, lambda) = run.resnet_mode();
            let p0 = sample_resnet_init(cfg.d, cfg.m, depth, seed, false)?;
            let early_cfg = TrainConfig { steps: early_step.max(1), ..run.train.clone() };
            let (_, early) = train_resnet(&p0, data, &early_cfg, mode, lambda, cfg.activation)?;
            let (_, last) = train_resnet(&p0, data, &run.train, mode, lambda, cfg.activation)?;
            (
                test_risk(resnet_predictor(&early, cfg.activation), data, xs)?,
                test_risk(resnet_predictor(&last, cfg.activation), data, xs)?,
            )
        }
    };
    Ok(SweepRow {
        depth,
        seed,
        lambda_hat: summary.lambda_hat,
        eta: summary.eta,
        steps: summary.steps,
        final_train_risk: summary.final_train_risk,
        early_step,
        test_risk_early: test_early,
        test_risk_final: test_final,
        sup_f_gap: summary.sup_f_gap,
        a_gap_rate: if summary.final_t > 0.0 { summary.final_a_gap / summary.final_t } else { 0.0 },
        sup_risk_gap: summary.sup_risk_gap,
    })
}

/// Median over seeds of a column, per depth.
fn per_depth_median(rows: &[SweepRow], depths: &[usize], col: impl Fn(&SweepRow) -> Option<f64>) -> Vec<Option<f64>> {
    depths
        .iter()
        .map(|&l| {
            let v: Vec<f64> = rows.iter().filter(|r| r.depth == l).filter_map(&col).collect();
            median(&v)
        })
        .collect()
}

fn slope(depths: &[usize], ys: &[Option<f64>]) -> Option<f64> {
    let ys: Option<Vec<f64>> = ys.iter().copied().collect();
    let xs: Vec<f64> = depths.iter().map(|&l| l as f64).collect();
    loglog_slope(&xs, &ys?).ok()
}

fn spread(ys: &[Option<f64>]) -> Option<f64> {
    let ys: Option<Vec<f64>> = ys.iter().copied().collect();
    let ys = ys?;
    let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().cloned().fold(0.0, f64::max);
    (lo > 0.0).then(|| hi / lo)
}

pub fn sweep(cfg: &RunConfig, jobs: usize) -> Result<Output> {
    let section = cfg.sweep.clone().ok_or_else(|| Error::Input("sweep section missing".into()))?;
    if section.depths.is_empty() || section.seeds.is_empty() {
        return Err(Error::Input("sweep grid is empty".into()));
    }
    if section.depths.iter().any(|&l| l < 2) {
        return Err(Error::Dimension("sweep depths must be at least 2".into()));
    }
    if !matches!(cfg.model, ModelKind::SkipNet | ModelKind::ResNet) {
        return Err(Error::Input("sweep needs model skipnet or resnet".into()));
    }
    let data = cfg.build_dataset()?;
    let xs = test_points(cfg.d, section.n_test, section.test_seed)?;
    let tasks: Vec<(usize, u64)> = section.depths.iter().flat_map(|&l| section.seeds.iter().map(move |&s| (l, s))).collect();
    let results: Mutex<Vec<Option<Result<SweepRow>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(depth, seed)) = tasks.get(i) else { break };
                let row = sweep_one(cfg, &data, &xs, depth, seed);
                results.lock().expect("no poisoned lock")[i] = Some(row);
            });
        }
    });
    let rows: Vec<SweepRow> = results
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect::<Result<_>>()?;

    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.depth,
            r.seed,
            opt(r.lambda_hat),
            r.eta,
            r.steps,
            r.final_train_risk,
            r.early_step,
            opt(r.test_risk_early),
            opt(r.test_risk_final),
            r.sup_f_gap,
            r.a_gap_rate,
            opt(r.sup_risk_gap)
        ));
    }
    let depths = &section.depths;
    let f_gap = per_depth_median(&rows, depths, |r| Some(r.sup_f_gap));
    let a_rate = per_depth_median(&rows, depths, |r| Some(r.a_gap_rate));
    let test_final = per_depth_median(&rows, depths, |r| r.test_risk_final);
    let summary = json!({
        "depths": depths,
        "seeds": section.seeds,
        "median_sup_f_gap": f_gap,
        "median_a_gap_rate": a_rate,
        "median_test_risk_final": test_final,
        "exponents": {
            "sup_f_gap_vs_depth": slope(depths, &f_gap),
            "a_gap_rate_vs_depth": slope(depths, &a_rate),
        },
        "test_risk_final_spread": spread(&test_final),
    });
    let mut out = Output::new(cfg, &data)?;
    out.push("sweep.csv", csv.into_bytes());
    out.push("sweep_summary.json", pretty(&summary)?);
    Ok(out)
}
