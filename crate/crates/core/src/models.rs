// SPDX-License-Identifier: MIT OR Apache-2.0

//! Conditional-mean recursions `X_t = f_θ(X_{t−1}, Y_{t−1})` and their
//! parameter spaces.
//!
//! Two recursions are provided, both with the autoregressive coefficient on
//! the previous mean in the last slot of `θ`:
//!
//! * linear (INGARCH(1,1)): `θ = (α₀, α, β)`,
//!   `f_θ(x, y) = α₀ + α y + β x`;
//! * threshold (INTARCH(1,1)) with a known integer threshold `ℓ`:
//!   `θ = (α₀, α₁, α₂, β)`,
//!   `f_θ(x, y) = α₀ + α₁ max(y − ℓ, 0) + α₂ min(y, ℓ) + β x`.
//!
//! Every admissible `θ` makes `f_θ` a contraction: `|f_θ(x,y) − f_θ(x′,y′)|
//! ≤ δ₁|x − x′| + δ₂|y − y′|` with `δ₁ + δ₂ ≤ 1 − ε`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CptError, Result};
use crate::expfam::ExponentialFamily;

/// Largest parameter dimension of any supported recursion.
pub const MAX_DIM: usize = 4;

pub const DEFAULT_EPS: f64 = 0.01;
pub const DEFAULT_INTERCEPT_BOUNDS: (f64, f64) = (1e-4, 20.0);

/// Slack allowed when checking membership, to absorb rounding from optimizers.
pub const FEASIBILITY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recursion {
    Linear,
    Threshold { l: u64 },
}

impl Recursion {
    pub fn dim(&self) -> usize {
        match self {
            Recursion::Linear => 3,
            Recursion::Threshold { .. } => 4,
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Recursion::Linear => &["alpha0", "alpha", "beta"],
            Recursion::Threshold { .. } => &["alpha0", "alpha1", "alpha2", "beta"],
        }
    }
}

/// A half-space `coeffs · θ ≤ bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub id: String,
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn lhs(&self, theta: &[f64]) -> f64 {
        self.coeffs.iter().zip(theta).map(|(a, t)| a * t).sum()
    }

    pub fn slack(&self, theta: &[f64]) -> f64 {
        self.bound - self.lhs(theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    /// Amount by which the constraint is exceeded.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

/// Compact parameter set: a box intersected with contraction half-spaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eps: f64,
    /// Half-spaces of the form `(sum of some coordinates) ≤ 1 − ε`.
    pub contraction: Vec<LinearConstraint>,
}

impl ParamSpace {
    /// Default space for a family/recursion pair.
    pub fn default_for(family: ExponentialFamily, recursion: Recursion) -> Self {
        Self::with_eps(family, recursion, DEFAULT_EPS)
    }

    pub fn with_eps(family: ExponentialFamily, recursion: Recursion, eps: f64) -> Self {
        let d = recursion.dim();
        let mut lower = vec![0.0; d];
        let mut upper = vec![1.0; d];
        lower[0] = DEFAULT_INTERCEPT_BOUNDS.0;
        upper[0] = DEFAULT_INTERCEPT_BOUNDS.1;
        let bound = 1.0 - eps;
        let row = |id: &str, idx: &[usize]| {
            let mut coeffs = vec![0.0; d];
            for &i in idx {
                coeffs[i] = 1.0;
            }
            LinearConstraint {
                id: id.to_string(),
                coeffs,
                bound,
            }
        };
        let contraction = match (family, recursion) {
            (ExponentialFamily::Bernoulli, Recursion::Linear) => {
                vec![row("alpha0+alpha+beta", &[0, 1, 2])]
            }
            (_, Recursion::Linear) => vec![row("alpha+beta", &[1, 2])],
            (_, Recursion::Threshold { .. }) => {
                vec![row("alpha1+beta", &[1, 3]), row("alpha2+beta", &[2, 3])]
            }
        };
        Self {
            lower,
            upper,
            eps,
            contraction,
        }
    }

    /// Replaces the box, keeping the contraction half-spaces.
    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != self.dim() || upper.len() != self.dim() {
            return Err(CptError::DimensionMismatch {
                expected: self.dim(),
                got: lower.len().max(upper.len()),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(CptError::InvalidArgument(
                "every lower bound must not exceed its upper bound".into(),
            ));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// All constraints (box rows and contraction rows) as `a · θ ≤ b`.
    pub fn constraints(&self) -> Vec<LinearConstraint> {
        let d = self.dim();
        let mut rows = Vec::with_capacity(2 * d + self.contraction.len());
        for i in 0..d {
            if self.lower[i].is_finite() {
                let mut coeffs = vec![0.0; d];
                coeffs[i] = -1.0;
                rows.push(LinearConstraint {
                    id: format!("lower[{i}]"),
                    coeffs,
                    bound: -self.lower[i],
                });
            }
            if self.upper[i].is_finite() {
                let mut coeffs = vec![0.0; d];
                coeffs[i] = 1.0;
                rows.push(LinearConstraint {
                    id: format!("upper[{i}]"),
                    coeffs,
                    bound: self.upper[i],
                });
            }
        }
        rows.extend(self.contraction.iter().cloned());
        rows
    }

    pub fn validate(&self, theta: &[f64]) -> Validation {
        if theta.len() != self.dim() {
            return Validation {
                valid: false,
                violations: vec![Violation {
                    constraint: format!("dimension (expected {})", self.dim()),
                    excess: f64::INFINITY,
                }],
            };
        }
        let mut violations = Vec::new();
        if theta.iter().any(|t| !t.is_finite()) {
            violations.push(Violation {
                constraint: "finite".into(),
                excess: f64::INFINITY,
            });
        }
        for c in self.constraints() {
            let excess = -c.slack(theta);
            if excess > FEASIBILITY_TOL {
                violations.push(Violation {
                    constraint: c.id,
                    excess,
                });
            }
        }
        Validation {
            valid: violations.is_empty(),
            violations,
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.validate(theta).valid
    }

    /// Maps any vector into the space: clamp to the box, then shrink the
    /// coordinates named by violated contraction rows radially so that the
    /// tightest row sits at `1 − ε − ε/2`.
    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out: Vec<f64> = (0..d)
            .map(|i| {
                let v = theta.get(i).copied().unwrap_or(self.lower[i]);
                let v = if v.is_nan() { self.lower[i] } else { v };
                v.clamp(self.lower[i], self.upper[i])
            })
            .collect();
        let mut scale: f64 = 1.0;
        let mut touched = vec![false; d];
        for row in &self.contraction {
            let lhs = row.lhs(&out);
            if lhs > row.bound + FEASIBILITY_TOL {
                let target = row.bound - self.eps / 2.0;
                scale = scale.min(target.max(0.0) / lhs);
            }
            for (i, &a) in row.coeffs.iter().enumerate() {
                if a != 0.0 {
                    touched[i] = true;
                }
            }
        }
        if scale < 1.0 {
            for i in 0..d {
                if touched[i] {
                    out[i] *= scale;
                }
            }
            for i in 0..d {
                out[i] = out[i].max(self.lower[i]);
            }
        }
        out
    }
}

/// Family, recursion and parameter space of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ExponentialFamily,
    pub recursion: Recursion,
    pub space: ParamSpace,
}

impl ModelSpec {
    pub fn new(family: ExponentialFamily, recursion: Recursion) -> Result<Self> {
        if family == ExponentialFamily::Bernoulli && recursion != Recursion::Linear {
            return Err(CptError::Unsupported(
                "threshold recursions are only defined for count families".into(),
            ));
        }
        Ok(Self {
            family,
            recursion,
            space: ParamSpace::default_for(family, recursion),
        })
    }

    pub fn poisson_ingarch() -> Self {
        Self::new(ExponentialFamily::Poisson, Recursion::Linear).expect("valid model")
    }

    pub fn nb_ingarch(r: u32) -> Result<Self> {
        Self::new(ExponentialFamily::negative_binomial(r)?, Recursion::Linear)
    }

    pub fn bernoulli_ingarch() -> Self {
        Self::new(ExponentialFamily::Bernoulli, Recursion::Linear).expect("valid model")
    }

    pub fn with_space(mut self, space: ParamSpace) -> Result<Self> {
        if space.dim() != self.dim() {
            return Err(CptError::DimensionMismatch {
                expected: self.dim(),
                got: space.dim(),
            });
        }
        self.space = space;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.recursion.dim()
    }

    /// Index of the coefficient on the previous mean.
    #[inline]
    pub fn beta_index(&self) -> usize {
        self.dim() - 1
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        self.recursion.param_names()
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(CptError::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let v = self.space.validate(theta);
        if v.valid {
            Ok(())
        } else {
            Err(CptError::InvalidParameter {
                violations: v
                    .violations
                    .into_iter()
                    .map(|v| format!("{} exceeded by {:.3e}", v.constraint, v.excess))
                    .collect(),
            })
        }
    }

    fn check_state(&self, x_prev: f64, y_prev: u64) -> Result<()> {
        if !self.family.in_mean_domain(x_prev) {
            return Err(CptError::InvalidMean {
                family: self.family.to_string(),
                mean: x_prev,
            });
        }
        if !self.family.in_support(y_prev) {
            return Err(CptError::InvalidArgument(format!(
                "observation {y_prev} outside the support of {}",
                self.family
            )));
        }
        Ok(())
    }

    /// `f_θ(x_prev, y_prev)`.
    pub fn mean_step(&self, theta: &[f64], x_prev: f64, y_prev: u64) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_state(x_prev, y_prev)?;
        Ok(self.step(theta, x_prev, y_prev as f64))
    }

    /// `∂X_t/∂θ` given `∂X_{t−1}/∂θ = dx_prev`.
    pub fn mean_step_grad(
        &self,
        theta: &[f64],
        x_prev: f64,
        y_prev: u64,
        dx_prev: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_state(x_prev, y_prev)?;
        if dx_prev.len() != self.dim() {
            return Err(CptError::DimensionMismatch {
                expected: self.dim(),
                got: dx_prev.len(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        self.explicit_grad(theta, x_prev, y_prev as f64, &mut out);
        let beta = theta[self.beta_index()];
        for (o, d) in out.iter_mut().zip(dx_prev) {
            *o += beta * d;
        }
        Ok(out)
    }

    /// Unchecked recursion step.
    #[inline]
    pub(crate) fn step(&self, theta: &[f64], x: f64, y: f64) -> f64 {
        match self.recursion {
            Recursion::Linear => theta[0] + theta[1] * y + theta[2] * x,
            Recursion::Threshold { l } => {
                let l = l as f64;
                theta[0] + theta[1] * (y - l).max(0.0) + theta[2] * y.min(l) + theta[3] * x
            }
        }
    }

    /// Partial derivative of `f_θ(x, y)` in `θ` holding `x` fixed.
    #[inline]
    pub(crate) fn explicit_grad(&self, _theta: &[f64], x: f64, y: f64, out: &mut [f64]) {
        match self.recursion {
            Recursion::Linear => {
                out[0] = 1.0;
                out[1] = y;
                out[2] = x;
            }
            Recursion::Threshold { l } => {
                let l = l as f64;
                out[0] = 1.0;
                out[1] = (y - l).max(0.0);
                out[2] = y.min(l);
                out[3] = x;
            }
        }
    }

    /// Lipschitz constants `(δ₁, δ₂)` of `f_θ` in `(x, y)`.
    pub fn lipschitz(&self, theta: &[f64]) -> (f64, f64) {
        match self.recursion {
            Recursion::Linear => (theta[2], theta[1]),
            Recursion::Threshold { .. } => (theta[3], theta[1].max(theta[2])),
        }
    }

    /// Unconditional mean `α₀ / (1 − α − β)` of a linear model.
    pub fn stationary_mean(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(CptError::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        match self.recursion {
            Recursion::Threshold { .. } => Err(CptError::Unsupported(
                "no closed-form stationary mean for threshold recursions".into(),
            )),
            Recursion::Linear => {
                let persistence = theta[1] + theta[2];
                if !(persistence < 1.0) || theta[0] <= 0.0 {
                    return Err(CptError::InvalidParameter {
                        violations: vec![format!(
                            "alpha+beta = {persistence} must be < 1 and alpha0 > 0"
                        )],
                    });
                }
                Ok(theta[0] / (1.0 - persistence))
            }
        }
    }

    /// Starting mean for simulation: the stationary mean for linear models,
    /// `α₀ / (1 − β)` for threshold models.
    pub fn initial_mean(&self, theta: &[f64]) -> Result<f64> {
        match self.recursion {
            Recursion::Linear => self.stationary_mean(theta),
            Recursion::Threshold { .. } => {
                let beta = theta[self.beta_index()];
                Ok(theta[0] / (1.0 - beta))
            }
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = match self.family {
            ExponentialFamily::Poisson => "poisson",
            ExponentialFamily::NegBinomial { .. } => "nb",
            ExponentialFamily::Bernoulli => "bernoulli",
        };
        let rec = match self.recursion {
            Recursion::Linear => "ingarch",
            Recursion::Threshold { .. } => "intarch",
        };
        write!(f, "{fam}-{rec}")?;
        match (self.family, self.recursion) {
            (ExponentialFamily::NegBinomial { r }, Recursion::Threshold { l }) => {
                write!(f, ":r={r},l={l}")
            }
            (ExponentialFamily::NegBinomial { r }, _) => write!(f, ":r={r}"),
            (_, Recursion::Threshold { l }) => write!(f, ":l={l}"),
            _ => Ok(()),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = CptError;

    /// Parses `poisson-ingarch`, `nb-ingarch:r=8`, `bernoulli-ingarch`,
    /// `poisson-intarch:l=5` or `nb-intarch:r=8,l=5`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| CptError::ModelSpec {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let (head, opts) = match s.trim().split_once(':') {
            Some((h, o)) => (h, Some(o)),
            None => (s.trim(), None),
        };
        let mut r: Option<u32> = None;
        let mut l: Option<u64> = None;
        if let Some(opts) = opts {
            for kv in opts.split(',').filter(|p| !p.trim().is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| bad("expected key=value"))?;
                match k.trim() {
                    "r" => {
                        r = Some(
                            v.trim()
                                .parse()
                                .map_err(|_| bad("r must be a positive integer"))?,
                        )
                    }
                    "l" => {
                        l = Some(
                            v.trim()
                                .parse()
                                .map_err(|_| bad("l must be a nonnegative integer"))?,
                        )
                    }
                    other => return Err(bad(&format!("unknown option '{other}'"))),
                }
            }
        }
        let (fam, rec) = head
            .split_once('-')
            .ok_or_else(|| bad("expected <family>-<recursion>"))?;
        let family = match fam {
            "poisson" => ExponentialFamily::Poisson,
            "bernoulli" => ExponentialFamily::Bernoulli,
            "nb" => {
                let r = r.ok_or_else(|| bad("nb models need r=<failures>"))?;
                if r == 0 {
                    return Err(bad("r must be >= 1"));
                }
                ExponentialFamily::NegBinomial { r }
            }
            _ => return Err(bad("unknown family")),
        };
        if r.is_some() && !matches!(family, ExponentialFamily::NegBinomial { .. }) {
            return Err(bad("r only applies to nb models"));
        }
        let recursion = match rec {
            "ingarch" => {
                if l.is_some() {
                    return Err(bad("l only applies to intarch models"));
                }
                Recursion::Linear
            }
            "intarch" => Recursion::Threshold {
                l: l.ok_or_else(|| bad("intarch models need l=<threshold>"))?,
            },
            _ => return Err(bad("unknown recursion")),
        };
        ModelSpec::new(family, recursion).map_err(|e| bad(&e.to_string()))
    }
}
