// SPDX-License-Identifier: MIT OR Apache-2.0

//! One-parameter exponential families `p(y | η) = exp{η y − A(η)} h(y)`.
//!
//! Three families are supported: Poisson, negative binomial with a known
//! number of failures `r`, and Bernoulli. Each is described by its cumulant
//! function `A`, the mean map `A′` with its inverse (the link), and the
//! variance function `A′′ ∘ (A′)⁻¹`. The base measure `h(y)` never enters a
//! likelihood difference and is not evaluated.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{CptError, Result};

/// Distance kept from the edges of the mean domain before evaluating a link.
pub const MEAN_GUARD: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExponentialFamily {
    Poisson,
    /// Negative binomial with `r` failures, parameterized by its mean.
    NegBinomial {
        r: u32,
    },
    Bernoulli,
}

/// Result of pulling a mean back inside the guarded domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Guarded {
    pub value: f64,
    pub saturated: bool,
}

impl ExponentialFamily {
    pub fn negative_binomial(r: u32) -> Result<Self> {
        if r == 0 {
            return Err(CptError::InvalidArgument(
                "negative binomial needs r >= 1".into(),
            ));
        }
        Ok(Self::NegBinomial { r })
    }

    /// Open interval of admissible conditional means.
    pub fn mean_domain(&self) -> (f64, f64) {
        match self {
            Self::Poisson | Self::NegBinomial { .. } => (0.0, f64::INFINITY),
            Self::Bernoulli => (0.0, 1.0),
        }
    }

    pub fn in_mean_domain(&self, x: f64) -> bool {
        let (lo, hi) = self.mean_domain();
        x.is_finite() && x > lo && x < hi
    }

    /// Whether `y` can be observed under this family.
    pub fn in_support(&self, y: u64) -> bool {
        match self {
            Self::Bernoulli => y <= 1,
            _ => true,
        }
    }

    /// Clamps `x` into `[MEAN_GUARD, upper − MEAN_GUARD]`, reporting whether it moved.
    pub fn guard_mean(&self, x: f64) -> Guarded {
        let (_, hi) = self.mean_domain();
        let upper = if hi.is_finite() {
            hi - MEAN_GUARD
        } else {
            f64::MAX
        };
        if x.is_nan() {
            return Guarded {
                value: MEAN_GUARD,
                saturated: true,
            };
        }
        if x < MEAN_GUARD {
            Guarded {
                value: MEAN_GUARD,
                saturated: true,
            }
        } else if x > upper {
            Guarded {
                value: upper,
                saturated: true,
            }
        } else {
            Guarded {
                value: x,
                saturated: false,
            }
        }
    }

    fn check_natural(&self, eta: f64) -> Result<()> {
        let ok = match self {
            Self::NegBinomial { .. } => eta < 0.0,
            _ => eta.is_finite(),
        };
        if ok && !eta.is_nan() {
            Ok(())
        } else {
            Err(CptError::InvalidNaturalParameter {
                family: self.to_string(),
                eta,
            })
        }
    }

    fn check_mean(&self, x: f64) -> Result<()> {
        if self.in_mean_domain(x) {
            Ok(())
        } else {
            Err(CptError::InvalidMean {
                family: self.to_string(),
                mean: x,
            })
        }
    }

    /// Cumulant function `A(η)`.
    pub fn cumulant(&self, eta: f64) -> Result<f64> {
        self.check_natural(eta)?;
        Ok(match *self {
            Self::Poisson => eta.exp(),
            Self::NegBinomial { r } => {
                let r = f64::from(r);
                // r log(r / (1 − e^η))
                r * (r.ln() - (-eta.exp_m1()).ln())
            }
            Self::Bernoulli => softplus(eta),
        })
    }

    /// `A′(η)`, the conditional mean.
    pub fn mean_from_natural(&self, eta: f64) -> Result<f64> {
        self.check_natural(eta)?;
        Ok(match *self {
            Self::Poisson => eta.exp(),
            Self::NegBinomial { r } => f64::from(r) * eta.exp() / (-eta.exp_m1()),
            Self::Bernoulli => logistic(eta),
        })
    }

    /// `(A′)⁻¹(x)`, the natural parameter of mean `x`.
    pub fn natural_from_mean(&self, x: f64) -> Result<f64> {
        self.check_mean(x)?;
        Ok(self.natural_unchecked(x))
    }

    pub(crate) fn natural_unchecked(&self, x: f64) -> f64 {
        match *self {
            Self::Poisson => x.ln(),
            // log(x / (x + r)) = −log1p(r / x)
            Self::NegBinomial { r } => -(f64::from(r) / x).ln_1p(),
            Self::Bernoulli => x.ln() - (-x).ln_1p(),
        }
    }

    /// `A′′(η)`.
    pub fn cumulant_second(&self, eta: f64) -> Result<f64> {
        self.check_natural(eta)?;
        Ok(match *self {
            Self::Poisson => eta.exp(),
            Self::NegBinomial { r } => {
                let q = -eta.exp_m1();
                f64::from(r) * eta.exp() / (q * q)
            }
            Self::Bernoulli => {
                let p = logistic(eta);
                p * (1.0 - p)
            }
        })
    }

    /// Conditional variance `A′′((A′)⁻¹(x))` as a function of the mean.
    pub fn variance_from_mean(&self, x: f64) -> Result<f64> {
        self.check_mean(x)?;
        Ok(self.variance_unchecked(x))
    }

    #[inline]
    pub(crate) fn variance_unchecked(&self, x: f64) -> f64 {
        match *self {
            Self::Poisson => x,
            Self::NegBinomial { r } => {
                let r = f64::from(r);
                x * (x + r) / r
            }
            Self::Bernoulli => x * (1.0 - x),
        }
    }

    /// Derivative of the variance function with respect to the mean.
    #[inline]
    pub(crate) fn variance_slope(&self, x: f64) -> f64 {
        match *self {
            Self::Poisson => 1.0,
            Self::NegBinomial { r } => {
                let r = f64::from(r);
                (2.0 * x + r) / r
            }
            Self::Bernoulli => 1.0 - 2.0 * x,
        }
    }

    /// `η(x) y − A(η(x))` evaluated directly from the mean.
    #[inline]
    pub(crate) fn log_kernel(&self, y: f64, x: f64) -> f64 {
        match *self {
            Self::Poisson => y * x.ln() - x,
            Self::NegBinomial { r } => {
                let r = f64::from(r);
                // A(η) = r log(x + r) once η = log(x / (x + r)).
                -y * (r / x).ln_1p() - r * (x + r).ln()
            }
            Self::Bernoulli => y * (x.ln() - (-x).ln_1p()) + (-x).ln_1p(),
        }
    }

    /// Draws one observation with conditional mean `x`.
    ///
    /// The negative binomial is drawn as a Poisson with a Gamma(shape `r`,
    /// rate `r/x`) mean, which has the NB(r, p = r/(r+x)) law exactly.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<u64> {
        self.check_mean(x)?;
        Ok(match *self {
            Self::Poisson => draw_poisson(x, rng),
            Self::NegBinomial { r } => {
                let r = f64::from(r);
                let gamma = Gamma::new(r, x / r).map_err(|_| CptError::InvalidMean {
                    family: self.to_string(),
                    mean: x,
                })?;
                let lambda: f64 = gamma.sample(rng);
                draw_poisson(lambda, rng)
            }
            Self::Bernoulli => u64::from(rng.random::<f64>() < x),
        })
    }
}

fn draw_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    match Poisson::new(lambda) {
        Ok(p) => {
            let v: f64 = p.sample(rng);
            v as u64
        }
        // Only reachable for astronomically large means.
        Err(_) => lambda.round() as u64,
    }
}

#[inline]
fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

impl fmt::Display for ExponentialFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Poisson => write!(f, "poisson"),
            Self::NegBinomial { r } => write!(f, "nb(r={r})"),
            Self::Bernoulli => write!(f, "bernoulli"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use std::f64::consts::LN_2;

    const FAMILIES: [ExponentialFamily; 4] = [
        ExponentialFamily::Poisson,
        ExponentialFamily::NegBinomial { r: 1 },
        ExponentialFamily::NegBinomial { r: 8 },
        ExponentialFamily::Bernoulli,
    ];

    fn grid(fam: ExponentialFamily) -> Vec<f64> {
        (0..1000)
            .map(|i| {
                let u = (i as f64 + 0.5) / 1000.0;
                match fam {
                    ExponentialFamily::Bernoulli => 1e-6 + u * (1.0 - 2e-6),
                    _ => 10f64.powf(-6.0 + 12.0 * u),
                }
            })
            .collect()
    }

    #[test]
    fn cumulant_examples() {
        assert_eq!(ExponentialFamily::Poisson.cumulant(0.0).unwrap(), 1.0);
        let b = ExponentialFamily::Bernoulli.cumulant(0.0).unwrap();
        assert!((b - LN_2).abs() < 1e-15);
        let nb = ExponentialFamily::NegBinomial { r: 1 }
            .cumulant(-LN_2)
            .unwrap();
        assert!((nb - LN_2).abs() < 1e-15);
    }

    #[test]
    fn nb_rejects_nonnegative_eta() {
        let nb = ExponentialFamily::NegBinomial { r: 3 };
        assert!(matches!(
            nb.cumulant(0.0),
            Err(CptError::InvalidNaturalParameter { .. })
        ));
        assert!(nb.mean_from_natural(0.5).is_err());
    }

    #[test]
    fn link_examples() {
        assert_eq!(
            ExponentialFamily::Poisson.natural_from_mean(1.0).unwrap(),
            0.0
        );
        assert_eq!(
            ExponentialFamily::Bernoulli.natural_from_mean(0.5).unwrap(),
            0.0
        );
        let eta = ExponentialFamily::NegBinomial { r: 1 }
            .natural_from_mean(1.0)
            .unwrap();
        assert!((eta + LN_2).abs() < 1e-15);
    }

    #[test]
    fn out_of_domain_means_are_rejected() {
        assert!(ExponentialFamily::Bernoulli.natural_from_mean(1.0).is_err());
        assert!(ExponentialFamily::Bernoulli.natural_from_mean(1.5).is_err());
        assert!(ExponentialFamily::Poisson.natural_from_mean(0.0).is_err());
        assert!(ExponentialFamily::Poisson.variance_from_mean(-1.0).is_err());
    }

    #[test]
    fn variance_examples() {
        assert_eq!(
            ExponentialFamily::Poisson.variance_from_mean(3.0).unwrap(),
            3.0
        );
        assert_eq!(
            ExponentialFamily::Bernoulli
                .variance_from_mean(0.5)
                .unwrap(),
            0.25
        );
        assert_eq!(
            ExponentialFamily::NegBinomial { r: 8 }
                .variance_from_mean(8.0)
                .unwrap(),
            16.0
        );
    }

    #[test]
    fn link_inverts_mean_map() {
        for fam in FAMILIES {
            for x in grid(fam) {
                let eta = fam.natural_from_mean(x).unwrap();
                let back = fam.mean_from_natural(eta).unwrap();
                assert!(((back - x) / x).abs() <= 1e-12, "{fam}: x={x} back={back}");
            }
        }
    }

    #[test]
    fn second_cumulant_is_positive_and_matches_finite_difference() {
        for fam in FAMILIES {
            for x in grid(fam).into_iter().step_by(7) {
                let eta = fam.natural_from_mean(x).unwrap();
                let a2 = fam.cumulant_second(eta).unwrap();
                assert!(a2 > 0.0);
                let v = fam.variance_from_mean(x).unwrap();
                assert!(((a2 - v) / v).abs() < 1e-10, "{fam} x={x}");
                // central difference of A′ at η
                let h = match fam {
                    // A′ blows up as η → 0⁻, so the step scales with |η|
                    ExponentialFamily::NegBinomial { .. } => 1e-4 * eta.abs(),
                    _ => 1e-5 * (1.0 + eta.abs()),
                };
                let fd = (fam.mean_from_natural(eta + h).unwrap()
                    - fam.mean_from_natural(eta - h).unwrap())
                    / (2.0 * h);
                assert!(((fd - v) / v).abs() < 1e-6, "{fam} x={x} fd={fd} v={v}");
            }
        }
    }

    #[test]
    fn guard_reports_saturation() {
        let g = ExponentialFamily::Bernoulli.guard_mean(1.0);
        assert!(g.saturated);
        assert!(g.value < 1.0);
        let g = ExponentialFamily::Poisson.guard_mean(0.0);
        assert!(g.saturated && g.value == MEAN_GUARD);
        assert!(!ExponentialFamily::Poisson.guard_mean(2.0).saturated);
    }

    #[test]
    fn log_kernel_matches_natural_form() {
        for fam in FAMILIES {
            for (x, y) in [(0.3, 0.0), (0.7, 1.0), (0.2, 1.0)] {
                let eta = fam.natural_from_mean(x).unwrap();
                let direct = eta * y - fam.cumulant(eta).unwrap();
                assert!((fam.log_kernel(y, x) - direct).abs() < 1e-12, "{fam}");
            }
        }
    }

    fn moments(draws: &[u64]) -> (f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = draws
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn poisson_sample_mean() {
        let mut rng = seed::stream(7, &[1]);
        let draws: Vec<u64> = (0..100_000)
            .map(|_| ExponentialFamily::Poisson.sample(4.0, &mut rng).unwrap())
            .collect();
        let (mean, _) = moments(&draws);
        assert!((mean - 4.0).abs() < 0.07, "mean {mean}");
    }

    #[test]
    fn nb_sample_variance() {
        let mut rng = seed::stream(7, &[2]);
        let fam = ExponentialFamily::NegBinomial { r: 1 };
        let draws: Vec<u64> = (0..100_000)
            .map(|_| fam.sample(1.0, &mut rng).unwrap())
            .collect();
        let (mean, var) = moments(&draws);
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!((var - 2.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn sampler_moments_within_four_sigma() {
        let n = 100_000usize;
        for (i, fam) in FAMILIES.into_iter().enumerate() {
            let x = if fam == ExponentialFamily::Bernoulli {
                0.3
            } else {
                2.5
            };
            let mut rng = seed::stream(11, &[i as u64]);
            let draws: Vec<u64> = (0..n).map(|_| fam.sample(x, &mut rng).unwrap()).collect();
            let (mean, var) = moments(&draws);
            let v = fam.variance_from_mean(x).unwrap();
            assert!(
                (mean - x).abs() < 4.0 * (v / n as f64).sqrt(),
                "{fam} mean {mean}"
            );
            // Var of the sample variance ≈ (μ4 − v²)/n; bound μ4 loosely by 3v² + v(1+6v)
            let mu4 = 3.0 * v * v + v * (1.0 + 6.0 * v);
            let band = 4.0 * ((mu4 - v * v) / n as f64).sqrt();
            assert!((var - v).abs() < band, "{fam} var {var} vs {v} band {band}");
        }
    }

    #[test]
    fn near_degenerate_bernoulli() {
        let mut rng = seed::stream(3, &[]);
        let fam = ExponentialFamily::Bernoulli;
        let ones = (0..100_000)
            .filter(|_| fam.sample(1.0 - 1e-15, &mut rng).unwrap() == 1)
            .count();
        assert_eq!(ones, 100_000);
    }

    #[test]
    fn bernoulli_support() {
        assert!(ExponentialFamily::Bernoulli.in_support(1));
        assert!(!ExponentialFamily::Bernoulli.in_support(3));
        assert!(ExponentialFamily::Poisson.in_support(3));
    }
}
