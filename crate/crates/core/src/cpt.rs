// SPDX-License-Identifier: MIT OR Apache-2.0

//! The change-point test.
//!
//! ```text
//! Ĉ_{n,k} = q(k/n)⁻² · k²(n−k)²/n³ · Δ_kᵀ Ω̂_n(u_n) Δ_k,   Δ_k = θ̂(T_{1,k}) − θ̂(T_{k+1,n})
//! Ĉ_n     = max_{v_n ≤ k ≤ n−v_n} Ĉ_{n,k},                t̂_n = argmax
//! ```

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::critval::{QuantileCache, QuantileConfig};
use crate::error::{CptError, Result};
use crate::likelihood::omega_split;
use crate::mle::{fit, min_segment_len, FitOptions, FitResult, Start};
use crate::models::ModelSpec;

/// Share of invalid curve points above which a report carries a warning.
pub const INVALID_WARN_FRACTION: f64 = 0.05;

/// Weight function `q` on `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFn {
    One,
    /// `q(τ) = (τ(1 − τ))^γ`.
    Power {
        gamma: f64,
    },
}

impl WeightFn {
    pub fn eval(&self, tau: f64) -> f64 {
        match *self {
            Self::One => 1.0,
            Self::Power { gamma } => (tau * (1.0 - tau)).powf(gamma),
        }
    }

    /// `γ ∈ [0, ½)` for the power family.
    pub fn admissible(&self) -> bool {
        match *self {
            Self::One => true,
            Self::Power { gamma } => (0.0..0.5).contains(&gamma),
        }
    }

    /// `I(q, c) = ∫₀¹ (t(1−t))⁻¹ exp(−c q²(t) / (t(1−t))) dt`, infinite for
    /// inadmissible weights.
    pub fn integral(&self, c: f64) -> f64 {
        if !self.admissible() || !(c > 0.0) {
            return f64::INFINITY;
        }
        // symmetric about ½; with t = e^{−u} on (0, ½]:
        // ∫ exp(−c q²/(t(1−t))) / (1 − t) du over u ∈ [ln 2, ∞)
        let f = |u: f64| {
            let t = (-u).exp();
            let s = t * (1.0 - t);
            let q = self.eval(t);
            (-c * q * q / s).exp() / (1.0 - t)
        };
        let (a, b) = (std::f64::consts::LN_2, 740.0);
        let steps = 200_000;
        let h = (b - a) / steps as f64;
        let mut sum = f(a) + f(b);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(a + i as f64 * h);
        }
        2.0 * sum * h / 3.0
    }
}

impl fmt::Display for WeightFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::One => write!(f, "one"),
            Self::Power { gamma } => write!(f, "power:g={gamma}"),
        }
    }
}

impl FromStr for WeightFn {
    type Err = CptError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| CptError::InvalidArgument(format!("weight '{s}': {reason}"));
        let t = s.trim().to_ascii_lowercase();
        if t == "one" || t == "1" {
            return Ok(Self::One);
        }
        let rest = t
            .strip_prefix("power:")
            .ok_or_else(|| bad("expected 'one' or 'power:g=<gamma>'"))?;
        let g = rest
            .strip_prefix("g=")
            .or(rest.strip_prefix("gamma="))
            .unwrap_or(rest);
        let gamma: f64 = g.parse().map_err(|_| bad("gamma is not a number"))?;
        let w = Self::Power { gamma };
        if !w.admissible() {
            return Err(bad("gamma must lie in [0, 0.5)"));
        }
        Ok(w)
    }
}

/// `⌊(ln n)²⌋` floored at the minimum segment length for dimension `d`.
pub fn default_trim(n: usize, d: usize) -> usize {
    let base = (n.max(1) as f64).ln().powi(2).floor() as usize;
    base.max(min_segment_len(d))
}

/// `k²(n−k)²/n³ / q²(k/n)`.
pub fn prefactor(n: usize, k: usize, weight: &WeightFn) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    let q = weight.eval(kf / nf);
    kf * kf * (nf - kf) * (nf - kf) / (nf * nf * nf) / (q * q)
}

/// `Ĉ_{n,k}` from two parameter estimates.
pub fn quadratic_statistic(
    n: usize,
    k: usize,
    left: &[f64],
    right: &[f64],
    omega: &DMatrix<f64>,
    weight: &WeightFn,
) -> Result<f64> {
    let d = omega.nrows();
    if omega.ncols() != d || left.len() != d || right.len() != d {
        return Err(CptError::DimensionMismatch {
            expected: d,
            got: left.len().max(right.len()),
        });
    }
    if k == 0 || k >= n {
        return Err(CptError::InvalidArgument(format!(
            "k={k} must lie in 1..n-1 (n={n})"
        )));
    }
    let diff = nalgebra::DVector::from_iterator(d, left.iter().zip(right).map(|(a, b)| a - b));
    let qf = diff.dot(&(omega * &diff));
    Ok(prefactor(n, k, weight) * qf.max(0.0))
}

/// Window `u_n` / `v_n` setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trim {
    Auto,
    Fixed(usize),
}

impl Trim {
    fn resolve(self, n: usize, d: usize) -> usize {
        match self {
            Self::Auto => default_trim(n, d),
            Self::Fixed(v) => v,
        }
    }
}

impl FromStr for Trim {
    type Err = CptError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        s.parse().map(Self::Fixed).map_err(|_| {
            CptError::InvalidArgument(format!("'{s}' is neither 'auto' nor an integer"))
        })
    }
}

/// Where `c_α` comes from.
#[derive(Clone, Debug)]
pub enum Critical {
    Value(f64),
    Simulate {
        config: QuantileConfig,
        cache: QuantileCache,
    },
}

#[derive(Clone, Debug)]
pub struct TestOptions {
    pub alpha: f64,
    pub weight: WeightFn,
    pub un: Trim,
    pub vn: Trim,
    pub fit: FitOptions,
    /// `None` simulates with default settings for the model dimension.
    pub critical: Option<Critical>,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            weight: WeightFn::One,
            un: Trim::Auto,
            vn: Trim::Auto,
            fit: FitOptions::default(),
            critical: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    /// `None` when either segment fit failed.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Argmax {
    pub k: usize,
    pub theta_left: Vec<f64>,
    pub theta_right: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentFits {
    pub left: FitResult,
    pub right: FitResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub model: String,
    pub n: usize,
    pub statistic: f64,
    pub t_hat: usize,
    pub critical_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub weight: WeightFn,
    pub u_n: usize,
    pub v_n: usize,
    pub omega: Vec<Vec<f64>>,
    pub argmax: Argmax,
    /// Full refits on `T_{1,t̂}` and `T_{t̂+1,n}`; present only on rejection.
    pub segment_fits: Option<SegmentFits>,
    pub invalid_points: usize,
    pub warnings: Vec<String>,
    pub curve: Vec<CurvePoint>,
}

/// Estimates on both sides of every `k` in `[lo, hi]`.
#[derive(Clone, Debug)]
pub struct SweepFits {
    pub lo: usize,
    pub left: Vec<Option<Vec<f64>>>,
    pub right: Vec<Option<Vec<f64>>>,
}

fn fit_with_fallback(
    spec: &ModelSpec,
    y: &[u64],
    start: usize,
    end: usize,
    opts: &FitOptions,
    warm: Option<&[f64]>,
) -> Option<Vec<f64>> {
    if let Some(w) = warm {
        let o = FitOptions {
            starts: vec![Start::Point(w.to_vec())],
            ..opts.clone()
        };
        if let Ok(r) = fit(spec, y, start, end, &o) {
            if r.converged {
                return Some(r.theta);
            }
        }
    }
    match fit(spec, y, start, end, opts) {
        Ok(r) if r.converged => Some(r.theta),
        _ => None,
    }
}

/// Left fits for `k = lo..=hi` in increasing `k`, right fits in decreasing
/// `k`, each warm-started from its neighbour.
pub fn sweep_fits(
    spec: &ModelSpec,
    y: &[u64],
    lo: usize,
    hi: usize,
    opts: &FitOptions,
) -> SweepFits {
    let n = y.len();
    let count = hi + 1 - lo;
    let (left, right) = rayon::join(
        || {
            let mut out = Vec::with_capacity(count);
            let mut warm: Option<Vec<f64>> = None;
            for k in lo..=hi {
                let r = fit_with_fallback(spec, y, 1, k, opts, warm.as_deref());
                if r.is_some() {
                    warm.clone_from(&r);
                }
                out.push(r);
            }
            out
        },
        || {
            let mut out = Vec::with_capacity(count);
            let mut warm: Option<Vec<f64>> = None;
            for k in (lo..=hi).rev() {
                let r = fit_with_fallback(spec, y, k + 1, n, opts, warm.as_deref());
                if r.is_some() {
                    warm.clone_from(&r);
                }
                out.push(r);
            }
            out.reverse();
            out
        },
    );
    SweepFits { lo, left, right }
}

/// `Ĉ_{n,k}` for a single `k`, fitting both segments.
pub fn statistic_at(
    spec: &ModelSpec,
    y: &[u64],
    k: usize,
    omega: &DMatrix<f64>,
    weight: &WeightFn,
    opts: &FitOptions,
) -> Result<f64> {
    let n = y.len();
    let left = fit(spec, y, 1, k, opts)?;
    let right = fit(spec, y, k + 1, n, opts)?;
    if !left.converged || !right.converged {
        return Err(CptError::FitFailure(format!(
            "segment fit at k={k} did not converge"
        )));
    }
    quadratic_statistic(n, k, &left.theta, &right.theta, omega, weight)
}

/// The curve over `[v_n, n − v_n]` given `Ω̂`.
pub fn statistic_curve(
    spec: &ModelSpec,
    y: &[u64],
    omega: &DMatrix<f64>,
    weight: &WeightFn,
    vn: usize,
    opts: &FitOptions,
) -> Result<(Vec<CurvePoint>, SweepFits)> {
    let n = y.len();
    let (lo, hi) = (vn, n - vn);
    let fits = sweep_fits(spec, y, lo, hi, opts);
    let mut curve = Vec::with_capacity(hi + 1 - lo);
    for (i, k) in (lo..=hi).enumerate() {
        let value = match (&fits.left[i], &fits.right[i]) {
            (Some(l), Some(r)) => Some(quadratic_statistic(n, k, l, r, omega, weight)?),
            _ => None,
        };
        curve.push(CurvePoint { k, value });
    }
    Ok((curve, fits))
}

fn check_inputs(spec: &ModelSpec, y: &[u64], opts: &TestOptions) -> Result<(usize, usize)> {
    let n = y.len();
    let d = spec.dim();
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(CptError::InvalidArgument(format!(
            "alpha must lie in (0, 1) (got {})",
            opts.alpha
        )));
    }
    if !opts.weight.admissible() {
        return Err(CptError::InvalidArgument(format!(
            "weight {} is not admissible",
            opts.weight
        )));
    }
    for (row, &v) in y.iter().enumerate() {
        if !spec.family.in_support(v) {
            return Err(CptError::Support {
                row: row + 1,
                value: v,
                family: spec.family.to_string(),
            });
        }
    }
    let un = opts.un.resolve(n, d);
    let vn = opts.vn.resolve(n, d);
    let min = min_segment_len(d);
    if un < min || vn < min {
        return Err(CptError::InvalidArgument(format!(
            "u_n and v_n must be at least {min} (got {un}, {vn})"
        )));
    }
    let need = 2 * vn.max(un) + 1;
    if n < need {
        return Err(CptError::SeriesTooShort { n, min: need });
    }
    Ok((un, vn))
}

/// Runs the test on `y`.
pub fn run_test(spec: &ModelSpec, y: &[u64], opts: &TestOptions) -> Result<TestReport> {
    let n = y.len();
    let (un, vn) = check_inputs(spec, y, opts)?;

    let (curve, fits) = {
        // Ω̂ is only needed once the curve is known to have valid points
        let placeholder = DMatrix::identity(spec.dim(), spec.dim());
        statistic_curve(spec, y, &placeholder, &opts.weight, vn, &opts.fit)?
    };
    let valid: Vec<usize> = curve
        .iter()
        .enumerate()
        .filter(|(_, p)| p.value.is_some())
        .map(|(i, _)| i)
        .collect();
    if valid.is_empty() {
        return Err(CptError::AllInvalidCurve {
            points: curve.len(),
        });
    }

    let left_u = fit(spec, y, 1, un, &opts.fit)?;
    let right_u = fit(spec, y, un + 1, n, &opts.fit)?;
    let omega = omega_split(spec, y, un, &left_u.theta, &right_u.theta)?;

    let mut curve = curve;
    let mut best: Option<(usize, f64)> = None;
    for &i in &valid {
        let k = curve[i].k;
        let l = fits.left[i].as_ref().expect("valid point");
        let r = fits.right[i].as_ref().expect("valid point");
        let v = quadratic_statistic(n, k, l, r, &omega, &opts.weight)?;
        curve[i].value = Some(v);
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (bi, statistic) = best.expect("at least one valid point");
    let t_hat = curve[bi].k;

    let invalid_points = curve.len() - valid.len();
    let mut warnings = Vec::new();
    if invalid_points as f64 > INVALID_WARN_FRACTION * curve.len() as f64 {
        warnings.push(format!(
            "{invalid_points} of {} curve points are invalid (segment fits failed)",
            curve.len()
        ));
    }

    let critical_value = match &opts.critical {
        Some(Critical::Value(c)) => *c,
        Some(Critical::Simulate { config, cache }) => {
            if config.d != spec.dim() || config.weight != opts.weight {
                return Err(CptError::InvalidArgument(format!(
                    "critical-value config (d={}, q={}) does not match the test (d={}, q={})",
                    config.d,
                    config.weight,
                    spec.dim(),
                    opts.weight
                )));
            }
            cache.quantile(config, opts.alpha)?
        }
        None => {
            let cfg = QuantileConfig::new(spec.dim(), opts.weight);
            QuantileCache::at(crate::critval::resolve_cache_dir(None)).quantile(&cfg, opts.alpha)?
        }
    };
    let reject = statistic > critical_value;

    let argmax = Argmax {
        k: t_hat,
        theta_left: fits.left[bi].clone().expect("valid point"),
        theta_right: fits.right[bi].clone().expect("valid point"),
    };
    let segment_fits = if reject {
        Some(SegmentFits {
            left: refit(spec, y, 1, t_hat, &argmax.theta_left, &opts.fit)?,
            right: refit(spec, y, t_hat + 1, n, &argmax.theta_right, &opts.fit)?,
        })
    } else {
        None
    };

    let d = spec.dim();
    Ok(TestReport {
        model: spec.to_string(),
        n,
        statistic,
        t_hat,
        critical_value,
        alpha: opts.alpha,
        reject,
        weight: opts.weight,
        u_n: un,
        v_n: vn,
        omega: (0..d)
            .map(|i| (0..d).map(|j| omega[(i, j)]).collect())
            .collect(),
        argmax,
        segment_fits,
        invalid_points,
        warnings,
        curve,
    })
}

fn refit(
    spec: &ModelSpec,
    y: &[u64],
    start: usize,
    end: usize,
    warm: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let mut starts = opts.starts.clone();
    starts.push(Start::Point(warm.to_vec()));
    fit(
        spec,
        y,
        start,
        end,
        &FitOptions {
            starts,
            ..opts.clone()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_h0, simulate_h1, DEFAULT_BURN_IN};

    fn fixed(c: f64) -> TestOptions {
        TestOptions {
            critical: Some(Critical::Value(c)),
            ..TestOptions::default()
        }
    }

    #[test]
    fn weight_values() {
        assert_eq!(WeightFn::One.eval(0.3), 1.0);
        let w = WeightFn::Power { gamma: 0.25 };
        assert!((w.eval(0.5) - 0.25f64.powf(0.25)).abs() < 1e-15);
        assert!((w.eval(0.5) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(!WeightFn::Power { gamma: 0.5 }.admissible());
        assert!(WeightFn::Power { gamma: 0.0 }.admissible());
        assert!(WeightFn::One.integral(1.0).is_finite());
        assert!(WeightFn::Power { gamma: 0.4 }.integral(1.0).is_finite());
        assert!(WeightFn::Power { gamma: 0.5 }.integral(1.0).is_infinite());
    }

    #[test]
    fn integral_of_unit_weight() {
        // ∫₀¹ e^{−c/(t(1−t))}/(t(1−t)) dt = 2 K₀(2c) e^{−2c}; K₀(2) = 0.11389387...
        let got = WeightFn::One.integral(1.0);
        let expect = 2.0 * 0.113_893_872_749_533_4 * (-2.0f64).exp();
        assert!((got - expect).abs() < 1e-8, "{got} {expect}");
    }

    #[test]
    fn weight_parsing() {
        assert_eq!("one".parse::<WeightFn>().unwrap(), WeightFn::One);
        assert_eq!(
            "power:g=0.25".parse::<WeightFn>().unwrap(),
            WeightFn::Power { gamma: 0.25 }
        );
        assert!("power:g=0.5".parse::<WeightFn>().is_err());
        assert!("cosine".parse::<WeightFn>().is_err());
        let w = WeightFn::Power { gamma: 0.1 };
        assert_eq!(w.to_string().parse::<WeightFn>().unwrap(), w);
    }

    #[test]
    fn prefactor_identities() {
        assert_eq!(prefactor(1000, 500, &WeightFn::One), 1000.0 / 16.0);
        for k in 1..100 {
            assert_eq!(
                prefactor(100, k, &WeightFn::One),
                prefactor(100, 100 - k, &WeightFn::One)
            );
        }
    }

    #[test]
    fn hand_built_statistic() {
        let om = DMatrix::from_element(1, 1, 2.0);
        let v = quadratic_statistic(100, 50, &[0.5], &[0.2], &om, &WeightFn::One).unwrap();
        assert!((v - 1.125).abs() < 1e-12);
        let z = quadratic_statistic(100, 50, &[0.5], &[0.5], &om, &WeightFn::One).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn trim_defaults() {
        assert_eq!(default_trim(1000, 3), 47);
        assert_eq!(default_trim(460, 3), 37);
        assert_eq!(default_trim(50, 3), 15);
        assert_eq!(default_trim(10, 3), 10);
    }

    #[test]
    fn detects_a_strong_change() {
        let m = ModelSpec::nb_ingarch(1).unwrap();
        let tr = simulate_h1(
            &m,
            &[0.2, 0.3, 0.25],
            &[0.7, 0.3, 0.25],
            1000,
            500,
            DEFAULT_BURN_IN,
            7,
        )
        .unwrap();
        let rep = run_test(&m, &tr.y, &fixed(3.0)).unwrap();
        assert!(rep.reject, "{}", rep.statistic);
        assert!((rep.t_hat as i64 - 500).abs() <= 50, "{}", rep.t_hat);
        let fits = rep.segment_fits.as_ref().unwrap();
        assert_eq!(fits.left.segment, (1, rep.t_hat));
        assert_eq!(fits.right.segment, (rep.t_hat + 1, 1000));
        let max = rep
            .curve
            .iter()
            .filter_map(|p| p.value)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, rep.statistic);
        assert_eq!(rep.curve.first().unwrap().k, 47);
        assert_eq!(rep.curve.last().unwrap().k, 953);
    }

    #[test]
    fn quiet_series_is_not_rejected_and_omits_refits() {
        let m = ModelSpec::poisson_ingarch();
        let tr = simulate_h0(&m, &[1.0, 0.2, 0.15], 400, DEFAULT_BURN_IN, 3).unwrap();
        let rep = run_test(&m, &tr.y, &fixed(1e9)).unwrap();
        assert!(!rep.reject);
        assert!(rep.segment_fits.is_none());
        assert!(rep.curve.iter().flat_map(|p| p.value).all(|v| v >= 0.0));
        let again = run_test(&m, &tr.y, &fixed(1e9)).unwrap();
        assert_eq!(rep, again);
    }

    #[test]
    fn warm_sweep_matches_cold_fits() {
        let m = ModelSpec::poisson_ingarch();
        let tr = simulate_h0(&m, &[1.0, 0.3, 0.3], 200, DEFAULT_BURN_IN, 5).unwrap();
        let om = DMatrix::identity(3, 3);
        let (curve, _) =
            statistic_curve(&m, &tr.y, &om, &WeightFn::One, 28, &FitOptions::default()).unwrap();
        for p in curve.iter().step_by(17) {
            let cold = statistic_at(&m, &tr.y, p.k, &om, &WeightFn::One, &FitOptions::default());
            if let (Some(v), Ok(c)) = (p.value, cold) {
                assert!(
                    (v - c).abs() <= 1e-6 * c.abs().max(1.0),
                    "k={} {v} {c}",
                    p.k
                );
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        let m = ModelSpec::poisson_ingarch();
        let y = vec![4u64; 300];
        assert!(matches!(
            run_test(&m, &y, &fixed(3.0)),
            Err(CptError::AllInvalidCurve { .. })
        ));
        let y = vec![1u64, 2, 3, 4, 5, 6, 7, 8, 9, 10];
        assert!(matches!(
            run_test(&m, &y, &fixed(3.0)),
            Err(CptError::SeriesTooShort { .. })
        ));
        let b = ModelSpec::bernoulli_ingarch();
        let mut y = [0u64, 1].repeat(100);
        y[7] = 2;
        assert!(matches!(
            run_test(&b, &y, &fixed(3.0)),
            Err(CptError::Support { row: 8, .. })
        ));
    }
}
