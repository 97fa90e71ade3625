// SPDX-License-Identifier: MIT OR Apache-2.0

//! Monte Carlo size and power experiments.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpt::{run_test, Critical, TestOptions, Trim, WeightFn};
use crate::critval::{QuantileCache, QuantileConfig};
use crate::error::{CptError, Result};
use crate::mle::FitOptions;
use crate::models::ModelSpec;
use crate::seed;
use crate::simulate::{simulate_h0, simulate_h1, DEFAULT_BURN_IN};

pub const DEFAULT_REPLICATIONS: usize = 100;
pub const FULL_REPLICATIONS: usize = 200;
const WILSON_Z: f64 = 1.959_963_984_540_054;

/// Location of the change in an alternative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeRule {
    /// `t* = ⌊n/2⌋`.
    Half,
    Fraction(f64),
    At(usize),
}

impl ChangeRule {
    pub fn index(&self, n: usize) -> usize {
        match *self {
            Self::Half => n / 2,
            Self::Fraction(f) => (f * n as f64).floor() as usize,
            Self::At(t) => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    pub spec: ModelSpec,
    pub theta0: Vec<f64>,
    pub theta1: Option<Vec<f64>>,
    pub change: ChangeRule,
    /// Published rejection rates at `n = 500` and `n = 1000`, when known.
    pub reference: Option<(f64, f64)>,
}

impl Scenario {
    pub fn level(label: &str, spec: ModelSpec, theta0: &[f64]) -> Self {
        Self {
            label: label.into(),
            spec,
            theta0: theta0.to_vec(),
            theta1: None,
            change: ChangeRule::Half,
            reference: None,
        }
    }

    pub fn power(label: &str, spec: ModelSpec, theta0: &[f64], theta1: &[f64]) -> Self {
        Self {
            theta1: Some(theta1.to_vec()),
            ..Self::level(label, spec, theta0)
        }
    }

    fn with_reference(mut self, n500: f64, n1000: f64) -> Self {
        self.reference = Some((n500, n1000));
        self
    }

    pub fn is_power(&self) -> bool {
        self.theta1.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub ns: Vec<usize>,
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    pub weight: WeightFn,
    pub un: Trim,
    pub vn: Trim,
    pub burn_in: usize,
    /// Fixed `c_α`; simulated once per plan when absent.
    pub critical_value: Option<f64>,
    pub critval_paths: usize,
    pub critval_grid: usize,
}

impl ExperimentPlan {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            ns: vec![500, 1000],
            replications: DEFAULT_REPLICATIONS,
            alpha: 0.05,
            seed: 20_240_601,
            weight: WeightFn::One,
            un: Trim::Auto,
            vn: Trim::Auto,
            burn_in: DEFAULT_BURN_IN,
            critical_value: None,
            critval_paths: crate::critval::DEFAULT_PATHS,
            critval_grid: crate::critval::DEFAULT_GRID,
        }
    }

    fn check(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(CptError::InvalidArgument(
                "replications must be >= 1".into(),
            ));
        }
        if self.ns.is_empty() {
            return Err(CptError::InvalidArgument(
                "at least one sample size is required".into(),
            ));
        }
        let s = &self.scenario;
        s.spec.check_theta(&s.theta0)?;
        if let Some(t1) = &s.theta1 {
            s.spec.check_theta(t1)?;
            for &n in &self.ns {
                let t = s.change.index(n);
                if t < 2 || t + 1 > n {
                    return Err(CptError::InvalidArgument(format!(
                        "change index {t} is outside 2..n-1 for n={n}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub replication: usize,
    pub seed: u64,
    pub statistic: Option<f64>,
    pub t_hat: Option<usize>,
    pub reject: Option<bool>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResult {
    pub n: usize,
    pub change_index: Option<usize>,
    /// Rejections over successful replications.
    pub rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub rejections: usize,
    pub successes: usize,
    pub anomalies: usize,
    pub mean_abs_t_hat_error: Option<f64>,
    pub median_abs_t_hat_error: Option<f64>,
    pub median_statistic: Option<f64>,
    pub seconds: f64,
    pub records: Vec<Record>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: String,
    pub model: String,
    pub critical_value: f64,
    pub alpha: f64,
    pub replications: usize,
    pub results: Vec<SampleSizeResult>,
}

/// Wilson score interval at 95%.
pub fn wilson(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = WILSON_Z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// `c_α` for the plan, from the fixed value or the quantile cache.
pub fn plan_critical_value(plan: &ExperimentPlan, cache: &QuantileCache) -> Result<f64> {
    if let Some(c) = plan.critical_value {
        return Ok(c);
    }
    let cfg = QuantileConfig {
        grid: plan.critval_grid,
        paths: plan.critval_paths,
        ..QuantileConfig::new(plan.scenario.spec.dim(), plan.weight)
    };
    cache.quantile(&cfg, plan.alpha)
}

/// Runs every sample size of the plan.
pub fn run(plan: &ExperimentPlan, cache: &QuantileCache) -> Result<ExperimentResult> {
    plan.check()?;
    let critical = plan_critical_value(plan, cache)?;
    let scenario_id = seed::label_id(&plan.scenario.label);
    let options = TestOptions {
        alpha: plan.alpha,
        weight: plan.weight,
        un: plan.un,
        vn: plan.vn,
        fit: FitOptions::default(),
        critical: Some(Critical::Value(critical)),
    };
    let mut results = Vec::with_capacity(plan.ns.len());
    for &n in &plan.ns {
        let started = Instant::now();
        let t_star = plan
            .scenario
            .theta1
            .as_ref()
            .map(|_| plan.scenario.change.index(n));
        let records: Vec<Record> = (0..plan.replications)
            .into_par_iter()
            .map(|rep| {
                let s = seed::mix(plan.seed, &[scenario_id, n as u64, rep as u64]);
                replicate(plan, &options, n, t_star, rep, s)
            })
            .collect();
        results.push(summarise(
            n,
            t_star,
            records,
            started.elapsed().as_secs_f64(),
        ));
    }
    Ok(ExperimentResult {
        scenario: plan.scenario.label.clone(),
        model: plan.scenario.spec.to_string(),
        critical_value: critical,
        alpha: plan.alpha,
        replications: plan.replications,
        results,
    })
}

/// Size experiment; the scenario must not carry an alternative.
pub fn run_level(plan: &ExperimentPlan, cache: &QuantileCache) -> Result<ExperimentResult> {
    if plan.scenario.is_power() {
        return Err(CptError::InvalidArgument(
            "level experiments take no post-change parameter".into(),
        ));
    }
    run(plan, cache)
}

/// Power experiment; the scenario must carry an alternative.
pub fn run_power(plan: &ExperimentPlan, cache: &QuantileCache) -> Result<ExperimentResult> {
    if !plan.scenario.is_power() {
        return Err(CptError::InvalidArgument(
            "power experiments need a post-change parameter".into(),
        ));
    }
    run(plan, cache)
}

fn replicate(
    plan: &ExperimentPlan,
    options: &TestOptions,
    n: usize,
    t_star: Option<usize>,
    rep: usize,
    s: u64,
) -> Record {
    let sc = &plan.scenario;
    let traj = match (&sc.theta1, t_star) {
        (Some(t1), Some(t)) => simulate_h1(&sc.spec, &sc.theta0, t1, n, t, plan.burn_in, s),
        _ => simulate_h0(&sc.spec, &sc.theta0, n, plan.burn_in, s),
    };
    let outcome = traj.and_then(|tr| run_test(&sc.spec, &tr.y, options));
    match outcome {
        Ok(r) => Record {
            replication: rep,
            seed: s,
            statistic: Some(r.statistic),
            t_hat: Some(r.t_hat),
            reject: Some(r.reject),
            error: None,
        },
        Err(e) => Record {
            replication: rep,
            seed: s,
            statistic: None,
            t_hat: None,
            reject: None,
            error: Some(e.to_string()),
        },
    }
}

fn summarise(
    n: usize,
    t_star: Option<usize>,
    records: Vec<Record>,
    seconds: f64,
) -> SampleSizeResult {
    let successes = records.iter().filter(|r| r.reject.is_some()).count();
    let rejections = records.iter().filter(|r| r.reject == Some(true)).count();
    let (wilson_lo, wilson_hi) = wilson(rejections, successes);
    let mut errs: Vec<f64> = match t_star {
        Some(t) => records
            .iter()
            .filter_map(|r| r.t_hat)
            .map(|h| (h as f64 - t as f64).abs())
            .collect(),
        None => Vec::new(),
    };
    let mean_abs = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
    let mut stats: Vec<f64> = records.iter().filter_map(|r| r.statistic).collect();
    SampleSizeResult {
        n,
        change_index: t_star,
        rate: if successes == 0 {
            0.0
        } else {
            rejections as f64 / successes as f64
        },
        wilson_lo,
        wilson_hi,
        rejections,
        successes,
        anomalies: records.len() - successes,
        mean_abs_t_hat_error: mean_abs,
        median_abs_t_hat_error: median(&mut errs),
        median_statistic: median(&mut stats),
        seconds,
        records,
    }
}

fn theta_label(theta: &[f64]) -> String {
    theta
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("/")
}

fn nb(r: u32) -> ModelSpec {
    ModelSpec::nb_ingarch(r).expect("r >= 1")
}

/// NB-INGARCH level scenarios with published rates, for `r ∈ {1, 8}`.
pub fn table1_levels() -> Vec<Scenario> {
    let rows: [(&[f64], [(f64, f64); 2]); 3] = [
        (&[1.0, 0.2, 0.15], [(0.030, 0.025), (0.015, 0.020)]),
        (&[0.2, 0.3, 0.25], [(0.075, 0.045), (0.040, 0.020)]),
        (&[8.0, 0.2, 0.15], [(0.035, 0.040), (0.025, 0.030)]),
    ];
    let mut out = Vec::new();
    for (th, refs) in rows {
        for (r, (a, b)) in [1u32, 8].into_iter().zip(refs) {
            let label = format!("nb{r}-level-{}", theta_label(th));
            out.push(Scenario::level(&label, nb(r), th).with_reference(a, b));
        }
    }
    out
}

/// NB-INGARCH power scenarios (change at `n/2`) with published rates.
pub fn table1_powers() -> Vec<Scenario> {
    let rows: [(&[f64], &[f64], [(f64, f64); 2]); 3] = [
        (
            &[1.0, 0.2, 0.15],
            &[1.0, 0.05, 0.85],
            [(0.985, 0.995), (0.995, 0.995)],
        ),
        (
            &[0.2, 0.3, 0.25],
            &[0.7, 0.3, 0.25],
            [(0.980, 0.990), (0.990, 0.995)],
        ),
        (
            &[8.0, 0.2, 0.15],
            &[2.0, 0.15, 0.5],
            [(0.945, 0.980), (0.985, 0.995)],
        ),
    ];
    let mut out = Vec::new();
    for (t0, t1, refs) in rows {
        for (r, (a, b)) in [1u32, 8].into_iter().zip(refs) {
            let label = format!("nb{r}-power-{}-{}", theta_label(t0), theta_label(t1));
            out.push(Scenario::power(&label, nb(r), t0, t1).with_reference(a, b));
        }
    }
    out
}

/// Binary-model level scenarios with published rates.
pub fn table2_levels() -> Vec<Scenario> {
    let b = ModelSpec::bernoulli_ingarch;
    vec![
        Scenario::level("binary-level-0.1/0.75/0.05", b(), &[0.1, 0.75, 0.05])
            .with_reference(0.045, 0.050),
        Scenario::level("binary-level-0.2/0.35/0.4", b(), &[0.2, 0.35, 0.4])
            .with_reference(0.035, 0.045),
    ]
}

/// Binary-model power scenarios (change at `n/2`) with published rates.
pub fn table2_powers() -> Vec<Scenario> {
    let b = ModelSpec::bernoulli_ingarch;
    let rows: [(&[f64], &[f64], (f64, f64)); 4] = [
        (&[0.1, 0.75, 0.05], &[0.05, 0.7, 0.05], (0.605, 0.820)),
        (&[0.1, 0.75, 0.05], &[0.1, 0.4, 0.05], (0.995, 0.995)),
        (&[0.2, 0.35, 0.4], &[0.35, 0.1, 0.4], (0.775, 0.960)),
        (&[0.2, 0.35, 0.4], &[0.05, 0.35, 0.4], (0.985, 0.990)),
    ];
    rows.into_iter()
        .map(|(t0, t1, (a, c))| {
            Scenario::power(
                &format!("binary-power-{}-{}", theta_label(t0), theta_label(t1)),
                b(),
                t0,
                t1,
            )
            .with_reference(a, c)
        })
        .collect()
}

/// Every preset scenario.
pub fn presets() -> Vec<Scenario> {
    let mut v = table1_levels();
    v.extend(table1_powers());
    v.extend(table2_levels());
    v.extend(table2_powers());
    v
}

/// CSV row layout used by the `bench` command.
pub const CSV_HEADER: &str =
    "scenario,n,r_or_model,rate,wilson_lo,wilson_hi,median_abs_that_err,seconds";

pub fn csv_rows(result: &ExperimentResult) -> Vec<String> {
    result
        .results
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{:.6},{:.6},{:.6},{},{:.3}",
                result.scenario.replace(',', ";"),
                r.n,
                result.model,
                r.rate,
                r.wilson_lo,
                r.wilson_hi,
                r.median_abs_t_hat_error
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                r.seconds
            )
        })
        .collect()
}
