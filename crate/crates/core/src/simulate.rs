// SPDX-License-Identifier: MIT OR Apache-2.0

//! Trajectory generation without a change (H0) and with one change (H1).

use serde::{Deserialize, Serialize};

use crate::error::{CptError, Result};
use crate::models::ModelSpec;
use crate::seed;

pub const DEFAULT_BURN_IN: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub model: String,
    pub theta: Vec<f64>,
    /// Post-change parameter, when a change was simulated.
    pub theta_after: Option<Vec<f64>>,
    /// Last index (1-based) generated under `theta`.
    pub change_index: Option<usize>,
    pub burn_in: usize,
    /// The post-change recursion continues from the pre-change state
    /// `(X_{t*}, Y_{t*})` rather than from an independent stationary draw.
    pub state_handoff: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub y: Vec<u64>,
    pub x_latent: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Simulates `n` observations under a constant parameter.
pub fn simulate_h0(
    spec: &ModelSpec,
    theta: &[f64],
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Trajectory> {
    spec.check_theta(theta)?;
    if n == 0 {
        return Err(CptError::InvalidArgument("n must be >= 1".into()));
    }
    let (y, x) = run(spec, theta, theta, n, n, burn_in, seed)?;
    Ok(Trajectory {
        y,
        x_latent: x,
        meta: TrajectoryMeta {
            seed,
            model: spec.to_string(),
            theta: theta.to_vec(),
            theta_after: None,
            change_index: None,
            burn_in,
            state_handoff: false,
        },
    })
}

/// Simulates `n` observations where `Y_1..Y_{t*}` follow `theta_before` and
/// `Y_{t*+1}..Y_n` follow `theta_after`.
pub fn simulate_h1(
    spec: &ModelSpec,
    theta_before: &[f64],
    theta_after: &[f64],
    n: usize,
    t_star: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Trajectory> {
    spec.check_theta(theta_before)?;
    spec.check_theta(theta_after)?;
    if n < 3 || t_star < 2 || t_star > n - 1 {
        return Err(CptError::InvalidArgument(format!(
            "change index must satisfy 2 <= t* <= n-1 (t*={t_star}, n={n})"
        )));
    }
    let (y, x) = run(spec, theta_before, theta_after, n, t_star, burn_in, seed)?;
    Ok(Trajectory {
        y,
        x_latent: x,
        meta: TrajectoryMeta {
            seed,
            model: spec.to_string(),
            theta: theta_before.to_vec(),
            theta_after: Some(theta_after.to_vec()),
            change_index: Some(t_star),
            burn_in,
            state_handoff: true,
        },
    })
}

fn run(
    spec: &ModelSpec,
    before: &[f64],
    after: &[f64],
    n: usize,
    t_star: usize,
    burn_in: usize,
    seed: u64,
) -> Result<(Vec<u64>, Vec<f64>)> {
    let mut rng = seed::stream(seed, &[]);
    let mut x = spec.initial_mean(before)?;
    let mut ys = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let total = burn_in + n;
    for step in 0..total {
        let y = spec.family.sample(x, &mut rng)?;
        if step >= burn_in {
            ys.push(y);
            xs.push(x);
        }
        // Mean for observation `t + 1`, with `t` the 1-based index of `y`.
        let next_t = step + 2;
        let theta = if next_t > burn_in + t_star {
            after
        } else {
            before
        };
        x = spec.step(theta, x, y as f64);
    }
    Ok((ys, xs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::ExponentialFamily;
    use crate::models::Recursion;

    fn mean(v: &[u64]) -> f64 {
        v.iter().map(|&y| y as f64).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn iid_case_matches_poisson_mean() {
        let m = ModelSpec::poisson_ingarch();
        let n = 100_000;
        let tr = simulate_h0(&m, &[2.0, 0.0, 0.0], n, 10, 5).unwrap();
        let bar = mean(&tr.y);
        assert!((bar - 2.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "{bar}");
        assert!(tr.x_latent.iter().all(|&x| x == 2.0));
    }

    #[test]
    fn stationary_mean_of_long_path() {
        let m = ModelSpec::poisson_ingarch();
        let tr = simulate_h0(&m, &[1.0, 0.2, 0.15], 100_000, DEFAULT_BURN_IN, 9).unwrap();
        assert!((mean(&tr.y) - 1.0 / 0.65).abs() < 0.05);
    }

    #[test]
    fn same_seed_same_output() {
        let m = ModelSpec::nb_ingarch(1).unwrap();
        let a = simulate_h0(&m, &[0.2, 0.3, 0.25], 500, 100, 77).unwrap();
        let b = simulate_h0(&m, &[0.2, 0.3, 0.25], 500, 100, 77).unwrap();
        assert_eq!(a, b);
        let c = simulate_h0(&m, &[0.2, 0.3, 0.25], 500, 100, 78).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn no_change_alternative_equals_null() {
        let m = ModelSpec::nb_ingarch(8).unwrap();
        let th = [1.0, 0.2, 0.15];
        let a = simulate_h0(&m, &th, 300, 50, 3).unwrap();
        let b = simulate_h1(&m, &th, &th, 300, 150, 50, 3).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.x_latent, b.x_latent);
    }

    #[test]
    fn change_separates_segment_means() {
        let m = ModelSpec::nb_ingarch(1).unwrap();
        let tr = simulate_h1(&m, &[0.2, 0.3, 0.25], &[0.7, 0.3, 0.25], 1000, 500, 500, 21).unwrap();
        let pre = mean(&tr.y[..500]);
        let post = mean(&tr.y[500..]);
        // NB(r=1) variance X(X+1) plus autocorrelation; a loose 5σ envelope.
        let sd_post = (1.556f64 * 2.556 * 2.0 / 500.0).sqrt();
        let sd_pre = (0.444f64 * 1.444 * 2.0 / 500.0).sqrt();
        assert!((pre - 0.2 / 0.45).abs() < 5.0 * sd_pre, "pre {pre}");
        assert!((post - 0.7 / 0.45).abs() < 5.0 * sd_post, "post {post}");
        assert!(post - pre > 5.0 * (sd_pre * sd_pre + sd_post * sd_post).sqrt());
        // the first post-change mean is computed with the new intercept
        let x = tr.x_latent[500];
        let expected = 0.7 + 0.3 * tr.y[499] as f64 + 0.25 * tr.x_latent[499];
        assert!((x - expected).abs() < 1e-12);
    }

    #[test]
    fn change_at_last_step() {
        let m = ModelSpec::poisson_ingarch();
        let tr = simulate_h1(&m, &[1.0, 0.2, 0.15], &[3.0, 0.2, 0.15], 50, 49, 0, 1).unwrap();
        assert_eq!(tr.len(), 50);
        assert_eq!(tr.meta.change_index, Some(49));
        assert!(simulate_h1(&m, &[1.0, 0.2, 0.15], &[3.0, 0.2, 0.15], 50, 50, 0, 1).is_err());
        assert!(simulate_h1(&m, &[1.0, 0.2, 0.15], &[3.0, 0.2, 0.15], 50, 1, 0, 1).is_err());
    }

    #[test]
    fn bernoulli_paths_stay_in_support() {
        let m = ModelSpec::bernoulli_ingarch();
        let tr = simulate_h0(&m, &[0.1, 0.75, 0.05], 5000, 100, 4).unwrap();
        assert!(tr.y.iter().all(|&y| y <= 1));
        assert!(tr.x_latent.iter().all(|&x| x > 0.0 && x < 1.0));
        let tr = simulate_h1(&m, &[0.2, 0.35, 0.4], &[0.35, 0.1, 0.4], 2000, 1000, 100, 4).unwrap();
        assert!(tr
            .x_latent
            .iter()
            .all(|&x| x > 0.0 && x < 1.0 - 0.01 + 1e-12));
    }

    #[test]
    fn threshold_model_simulates() {
        let m = ModelSpec::new(ExponentialFamily::Poisson, Recursion::Threshold { l: 3 }).unwrap();
        let tr = simulate_h0(&m, &[1.0, 0.3, 0.4, 0.2], 2000, 100, 8).unwrap();
        assert_eq!(tr.len(), 2000);
    }

    #[test]
    fn autocovariance_decays_geometrically() {
        let m = ModelSpec::poisson_ingarch();
        let (a, b) = (0.4, 0.3);
        let tr = simulate_h0(&m, &[1.0, a, b], 200_000, 500, 12).unwrap();
        let ys: Vec<f64> = tr.y.iter().map(|&v| v as f64).collect();
        let mu = ys.iter().sum::<f64>() / ys.len() as f64;
        let acov = |k: usize| {
            ys.iter()
                .zip(&ys[k..])
                .map(|(u, v)| (u - mu) * (v - mu))
                .sum::<f64>()
                / ys.len() as f64
        };
        let g0 = acov(0);
        let g1 = acov(1);
        let c = g1 / g0;
        for k in 2..=10 {
            let bound = g0 * c * (a + b).powi(k as i32 - 1);
            // sampling noise of γ̂(k) is about g0 / sqrt(n)
            assert!(
                acov(k).abs() <= bound + 4.0 * g0 / (ys.len() as f64).sqrt(),
                "k={k}"
            );
        }
    }
}
