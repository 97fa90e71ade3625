// SPDX-License-Identifier: MIT OR Apache-2.0

//! Filtered conditional means and the conditional log-likelihood on a segment.
//!
//! For a segment `T_{k,k′}` the filter starts at `X_k = x_init` with
//! `∂X_k/∂θ = 0` and runs `X_{t+1} = f_θ(X_t, Y_t)` forward, carrying first
//! (and optionally second) parameter derivatives. With `η_t = (A′)⁻¹(X_t)`
//! and `V = A′′ ∘ (A′)⁻¹` the variance function,
//!
//! ```text
//! ℓ_t        = η_t Y_t − A(η_t)
//! ∂η_t/∂θ    = ∂X_t/∂θ / V(X_t)
//! ∂ℓ_t/∂θ    = (Y_t − X_t) ∂η_t/∂θ
//! −∂²ℓ_t     = V(X_t) ∂η_t ∂η_tᵀ − (Y_t − X_t) ∂²η_t
//! ∂²η_t      = ∂²X_t / V − V′(X_t) / V² ∂X_t ∂X_tᵀ
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CptError, Result};
use crate::models::{ModelSpec, MAX_DIM};

/// Fraction of a segment allowed to hit the mean guard before evaluation is rejected.
pub const SATURATION_FRACTION: f64 = 0.01;

/// Observation window `T_{k,k′}` (1-based, inclusive) with its starting mean.
#[derive(Clone, Copy, Debug)]
pub struct Segment<'a> {
    y: &'a [u64],
    start: usize,
    end: usize,
    x_init: f64,
}

impl<'a> Segment<'a> {
    pub fn new(y: &'a [u64], start: usize, end: usize, x_init: f64) -> Result<Self> {
        if start == 0 || start > end || end > y.len() {
            return Err(CptError::InvalidArgument(format!(
                "segment [{start}, {end}] must satisfy 1 <= start <= end <= n = {}",
                y.len()
            )));
        }
        if !(x_init.is_finite() && x_init > 0.0) {
            return Err(CptError::InvalidArgument(format!(
                "initial mean {x_init} must be positive and finite"
            )));
        }
        Ok(Self {
            y,
            start,
            end,
            x_init,
        })
    }

    /// Segment whose initial mean is the sample mean of its observations,
    /// clamped into `[ε, 1 − ε]` for Bernoulli models and above the mean
    /// guard otherwise.
    pub fn with_default_init(
        spec: &ModelSpec,
        y: &'a [u64],
        start: usize,
        end: usize,
    ) -> Result<Self> {
        if start == 0 || start > end || end > y.len() {
            return Err(CptError::InvalidArgument(format!(
                "segment [{start}, {end}] must satisfy 1 <= start <= end <= n = {}",
                y.len()
            )));
        }
        let x = default_init(spec, &y[start - 1..end]);
        Self::new(y, start, end, x)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x_init(&self) -> f64 {
        self.x_init
    }

    /// Observations `Y_k..Y_{k′}`.
    pub fn observations(&self) -> &'a [u64] {
        &self.y[self.start - 1..self.end]
    }

    pub fn is_constant(&self) -> bool {
        let obs = self.observations();
        obs.iter().all(|&v| v == obs[0])
    }
}

/// Sample mean of `obs` moved inside the admissible range for `spec`.
pub fn default_init(spec: &ModelSpec, obs: &[u64]) -> f64 {
    let mean = if obs.is_empty() {
        1.0
    } else {
        obs.iter().map(|&v| v as f64).sum::<f64>() / obs.len() as f64
    };
    match spec.family {
        crate::expfam::ExponentialFamily::Bernoulli => {
            let eps = spec.space.eps;
            mean.clamp(eps, 1.0 - eps)
        }
        fam => fam.guard_mean(mean).value,
    }
}

/// Per-time filter output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub t: usize,
    pub mean: f64,
    pub natural: f64,
    pub mean_grad: Vec<f64>,
    pub natural_grad: Vec<f64>,
    pub natural_hessian: Option<Vec<Vec<f64>>>,
    pub saturated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Order {
    Value,
    Gradient,
    Hessian,
}

/// State of the mean recursion at one time point.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Step {
    pub t: usize,
    pub y: f64,
    pub x: f64,
    pub dx: [f64; MAX_DIM],
    pub d2x: [[f64; MAX_DIM]; MAX_DIM],
    pub saturated: bool,
}

/// Forward recursion over a segment yielding `(X_t, ∂X_t, ∂²X_t)`.
pub(crate) struct Recurrence<'s> {
    spec: &'s ModelSpec,
    theta: [f64; MAX_DIM],
    y: &'s [u64],
    end: usize,
    next_t: usize,
    x: f64,
    dx: [f64; MAX_DIM],
    d2x: [[f64; MAX_DIM]; MAX_DIM],
    order: Order,
}

impl<'s> Recurrence<'s> {
    pub(crate) fn new(spec: &'s ModelSpec, theta: &[f64], seg: &Segment<'s>, order: Order) -> Self {
        let mut th = [0.0; MAX_DIM];
        th[..theta.len()].copy_from_slice(theta);
        Self {
            spec,
            theta: th,
            y: seg.y,
            end: seg.end,
            next_t: seg.start,
            x: seg.x_init,
            dx: [0.0; MAX_DIM],
            d2x: [[0.0; MAX_DIM]; MAX_DIM],
            order,
        }
    }
}

impl Iterator for Recurrence<'_> {
    type Item = Step;

    #[inline]
    fn next(&mut self) -> Option<Step> {
        if self.next_t > self.end {
            return None;
        }
        let t = self.next_t;
        let y = self.y[t - 1] as f64;
        let guarded = self.spec.family.guard_mean(self.x);
        if guarded.saturated {
            self.x = guarded.value;
            self.dx = [0.0; MAX_DIM];
            self.d2x = [[0.0; MAX_DIM]; MAX_DIM];
        }
        let step = Step {
            t,
            y,
            x: self.x,
            dx: self.dx,
            d2x: self.d2x,
            saturated: guarded.saturated,
        };
        self.next_t += 1;
        if self.next_t <= self.end {
            let d = self.spec.dim();
            let bi = d - 1;
            let beta = self.theta[bi];
            let theta = &self.theta[..d];
            if self.order >= Order::Gradient {
                let mut g = [0.0; MAX_DIM];
                self.spec.explicit_grad(theta, self.x, y, &mut g[..d]);
                if self.order >= Order::Hessian {
                    let mut h = [[0.0; MAX_DIM]; MAX_DIM];
                    for i in 0..d {
                        for j in 0..=i {
                            let mut v = beta * self.d2x[i][j];
                            if i == bi {
                                v += self.dx[j];
                            }
                            if j == bi {
                                v += self.dx[i];
                            }
                            h[i][j] = v;
                            h[j][i] = v;
                        }
                    }
                    self.d2x = h;
                }
                for i in 0..d {
                    g[i] += beta * self.dx[i];
                }
                self.dx = g;
            }
            self.x = self.spec.step(theta, self.x, y);
        }
        Some(step)
    }
}

/// Sums over a segment. `info` is the Gram form `Σ V ∂η ∂ηᵀ`; `neg_hessian`
/// is the observed information `−Σ ∂²ℓ_t`.
#[derive(Clone, Debug)]
pub(crate) struct Accumulated {
    pub loglik: f64,
    pub score: [f64; MAX_DIM],
    pub info: [[f64; MAX_DIM]; MAX_DIM],
    pub neg_hessian: [[f64; MAX_DIM]; MAX_DIM],
}

fn allowed_saturation(len: usize) -> usize {
    (SATURATION_FRACTION * len as f64).floor() as usize
}

/// Evaluates the segment log-likelihood and derivatives without validating `θ`.
pub(crate) fn accumulate(
    spec: &ModelSpec,
    theta: &[f64],
    seg: &Segment<'_>,
    order: Order,
) -> Result<Accumulated> {
    let d = spec.dim();
    let fam = spec.family;
    let mut acc = Accumulated {
        loglik: 0.0,
        score: [0.0; MAX_DIM],
        info: [[0.0; MAX_DIM]; MAX_DIM],
        neg_hessian: [[0.0; MAX_DIM]; MAX_DIM],
    };
    let mut saturated = 0usize;
    for s in Recurrence::new(spec, theta, seg, order) {
        saturated += usize::from(s.saturated);
        acc.loglik += fam.log_kernel(s.y, s.x);
        if order == Order::Value {
            continue;
        }
        let v = fam.variance_unchecked(s.x);
        let resid = s.y - s.x;
        let mut deta = [0.0; MAX_DIM];
        for i in 0..d {
            deta[i] = s.dx[i] / v;
            acc.score[i] += resid * deta[i];
        }
        for i in 0..d {
            for j in 0..=i {
                acc.info[i][j] += v * deta[i] * deta[j];
            }
        }
        if order == Order::Hessian {
            let slope = fam.variance_slope(s.x) / (v * v);
            for i in 0..d {
                for j in 0..=i {
                    let d2eta = s.d2x[i][j] / v - slope * s.dx[i] * s.dx[j];
                    acc.neg_hessian[i][j] += v * deta[i] * deta[j] - resid * d2eta;
                }
            }
        }
    }
    let allowed = allowed_saturation(seg.len());
    if saturated > allowed {
        return Err(CptError::NumericDegeneracy { saturated, allowed });
    }
    if !acc.loglik.is_finite() {
        return Err(CptError::FitFailure("log-likelihood is not finite".into()));
    }
    for i in 0..d {
        for j in 0..i {
            acc.info[j][i] = acc.info[i][j];
            acc.neg_hessian[j][i] = acc.neg_hessian[i][j];
        }
    }
    Ok(acc)
}

/// Runs the filter and returns the full state sequence.
pub fn filter(
    spec: &ModelSpec,
    theta: &[f64],
    seg: &Segment<'_>,
    second_order: bool,
) -> Result<Vec<FilterState>> {
    spec.check_theta(theta)?;
    let d = spec.dim();
    let fam = spec.family;
    let order = if second_order {
        Order::Hessian
    } else {
        Order::Gradient
    };
    let mut out = Vec::with_capacity(seg.len());
    let mut saturated = 0usize;
    for s in Recurrence::new(spec, theta, seg, order) {
        saturated += usize::from(s.saturated);
        let v = fam.variance_unchecked(s.x);
        let natural_grad: Vec<f64> = s.dx[..d].iter().map(|g| g / v).collect();
        let natural_hessian = second_order.then(|| {
            let slope = fam.variance_slope(s.x) / (v * v);
            let mut h = vec![vec![0.0; d]; d];
            for i in 0..d {
                for j in 0..=i {
                    let e = s.d2x[i][j] / v - slope * s.dx[i] * s.dx[j];
                    h[i][j] = e;
                    h[j][i] = e;
                }
            }
            h
        });
        out.push(FilterState {
            t: s.t,
            mean: s.x,
            natural: fam.natural_unchecked(s.x),
            mean_grad: s.dx[..d].to_vec(),
            natural_grad,
            natural_hessian,
            saturated: s.saturated,
        });
    }
    let allowed = allowed_saturation(seg.len());
    if saturated > allowed {
        return Err(CptError::NumericDegeneracy { saturated, allowed });
    }
    Ok(out)
}

/// `L(T_{k,k′}, θ) = Σ_t η_t Y_t − A(η_t)`.
pub fn loglik(spec: &ModelSpec, theta: &[f64], seg: &Segment<'_>) -> Result<f64> {
    spec.check_theta(theta)?;
    Ok(accumulate(spec, theta, seg, Order::Value)?.loglik)
}

/// Gradient of [`loglik`] in `θ`.
pub fn score(spec: &ModelSpec, theta: &[f64], seg: &Segment<'_>) -> Result<Vec<f64>> {
    spec.check_theta(theta)?;
    let acc = accumulate(spec, theta, seg, Order::Gradient)?;
    Ok(acc.score[..spec.dim()].to_vec())
}

/// Per-time score terms `∂ℓ_t/∂θ`.
pub fn score_terms(spec: &ModelSpec, theta: &[f64], seg: &Segment<'_>) -> Result<Vec<Vec<f64>>> {
    Ok(filter(spec, theta, seg, false)?
        .into_iter()
        .map(|s| {
            let y = seg.y[s.t - 1] as f64;
            s.natural_grad.iter().map(|g| (y - s.mean) * g).collect()
        })
        .collect())
}

/// Analytic observed information `−∂²L/∂θ∂θᵀ`.
pub fn observed_information(
    spec: &ModelSpec,
    theta: &[f64],
    seg: &Segment<'_>,
) -> Result<DMatrix<f64>> {
    spec.check_theta(theta)?;
    let acc = accumulate(spec, theta, seg, Order::Hessian)?;
    Ok(to_matrix(&acc.neg_hessian, spec.dim()))
}

/// `Ω̂ = (1/m) Σ_t A′′(η_t) ∂η_t ∂η_tᵀ` over the segment.
pub fn omega_hat(spec: &ModelSpec, theta: &[f64], seg: &Segment<'_>) -> Result<DMatrix<f64>> {
    spec.check_theta(theta)?;
    let acc = accumulate(spec, theta, seg, Order::Gradient)?;
    Ok(to_matrix(&acc.info, spec.dim()) / seg.len() as f64)
}

/// Split information estimator: the average of the information on
/// `T_{1,u}` at `theta_left` and on `T_{u+1,n}` at `theta_right`, each
/// segment filtered from its own sample mean.
pub fn omega_split(
    spec: &ModelSpec,
    y: &[u64],
    u: usize,
    theta_left: &[f64],
    theta_right: &[f64],
) -> Result<DMatrix<f64>> {
    let d = spec.dim();
    let n = y.len();
    if u < d + 1 || u + d + 1 > n {
        return Err(CptError::SegmentTooShort {
            start: 1,
            end: u,
            len: u.min(n.saturating_sub(u)),
            min: d + 1,
        });
    }
    let left = Segment::with_default_init(spec, y, 1, u)?;
    let right = Segment::with_default_init(spec, y, u + 1, n)?;
    let a = omega_hat(spec, theta_left, &left)?;
    let b = omega_hat(spec, theta_right, &right)?;
    Ok((a + b) * 0.5)
}

pub(crate) fn to_matrix(a: &[[f64; MAX_DIM]; MAX_DIM], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| a[i][j])
}
