// SPDX-License-Identifier: MIT OR Apache-2.0

//! Constrained conditional maximum likelihood on a segment.
//!
//! The objective is maximised over the parameter polytope by an active-set
//! projected Newton method. Steps use the analytic observed information
//! restricted to the null space of the working set, falling back to the
//! Gram (Fisher-type) information with a small ridge when the observed
//! information is not positive definite there. Lagrange multipliers of the
//! working set decide when a constraint is released.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CptError, Result};
use crate::expfam::ExponentialFamily;
use crate::likelihood::{accumulate, default_init, to_matrix, Accumulated, Order, Segment};
use crate::models::{LinearConstraint, ModelSpec, FEASIBILITY_TOL};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Shortest segment accepted for estimation, before the `d + 1` floor.
pub const MIN_SEGMENT: usize = 10;

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;
const INDEPENDENCE_TOL: f64 = 1e-9;

/// Starting point for the optimiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// Middle of the intercept range with equal remaining weights.
    Centroid,
    /// Intercept chosen so that a light-persistence model matches the sample mean.
    MeanMatched,
    Point(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Convergence threshold on the sup-norm of the projected gradient of
    /// the per-observation log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    pub starts: Vec<Start>,
    /// Initial filter mean; defaults to the segment sample mean.
    pub x_init: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            starts: vec![Start::Centroid, Start::MeanMatched],
            x_init: None,
        }
    }
}

impl FitOptions {
    pub fn warm(theta: &[f64]) -> Self {
        Self {
            starts: vec![Start::Point(theta.to_vec())],
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub grad_inf_norm: f64,
    pub projected_grad_inf_norm: f64,
    pub iterations: usize,
    /// Constraint ids active at the solution.
    pub boundary_active: Vec<String>,
    pub converged: bool,
    pub x_init: f64,
    /// 1-based inclusive segment bounds.
    pub segment: (usize, usize),
    /// Reciprocal condition number of the information matrix at `theta`.
    pub information_rcond: f64,
}

/// Smallest segment length accepted by [`fit`] for a model of dimension `d`.
pub fn min_segment_len(d: usize) -> usize {
    MIN_SEGMENT.max(d + 1)
}

/// Fits `spec` on `Y_start..Y_end` (1-based, inclusive).
pub fn fit(
    spec: &ModelSpec,
    y: &[u64],
    start: usize,
    end: usize,
    opts: &FitOptions,
) -> Result<FitResult> {
    if start == 0 || start > end || end > y.len() {
        return Err(CptError::InvalidArgument(format!(
            "segment [{start}, {end}] must satisfy 1 <= start <= end <= n = {}",
            y.len()
        )));
    }
    let x_init = match opts.x_init {
        Some(x) => x,
        None => default_init(spec, &y[start - 1..end]),
    };
    let seg = Segment::new(y, start, end, x_init)?;
    fit_segment(spec, &seg, opts)
}

/// Fits `spec` on a prepared segment.
pub fn fit_segment(spec: &ModelSpec, seg: &Segment<'_>, opts: &FitOptions) -> Result<FitResult> {
    let d = spec.dim();
    let min = min_segment_len(d);
    if seg.len() < min {
        return Err(CptError::SegmentTooShort {
            start: seg.start(),
            end: seg.end(),
            len: seg.len(),
            min,
        });
    }
    if seg.is_constant() {
        return Err(CptError::DegenerateSegment {
            start: seg.start(),
            end: seg.end(),
        });
    }
    if opts.starts.is_empty() {
        return Err(CptError::InvalidArgument(
            "at least one start is required".into(),
        ));
    }
    if !(opts.tol > 0.0) {
        return Err(CptError::InvalidArgument("tol must be positive".into()));
    }
    for y in seg.observations() {
        if !spec.family.in_support(*y) {
            return Err(CptError::Support {
                row: 0,
                value: *y,
                family: spec.family.to_string(),
            });
        }
    }

    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for s in &opts.starts {
        let theta0 = start_point(spec, seg, s)?;
        match Solver::new(spec, seg, opts).run(theta0) {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (r.converged && !b.converged)
                            || (r.converged == b.converged && r.loglik > b.loglik)
                    }
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => Err(CptError::FitFailure("no start produced a fit".into())),
    }
}

fn start_point(spec: &ModelSpec, seg: &Segment<'_>, start: &Start) -> Result<Vec<f64>> {
    let d = spec.dim();
    let space = &spec.space;
    let raw = match start {
        Start::Point(p) => {
            if p.len() != d {
                return Err(CptError::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            p.clone()
        }
        Start::Centroid => {
            let w = (1.0 - space.eps) / 3.0;
            let mut p = vec![w; d];
            if spec.family != ExponentialFamily::Bernoulli {
                p[0] = 0.5 * (space.lower[0] + space.upper[0]);
            }
            if d == 4 {
                p[1] = w;
                p[2] = w;
                p[3] = w;
            }
            p
        }
        Start::MeanMatched => {
            let mean = seg.observations().iter().map(|&v| v as f64).sum::<f64>() / seg.len() as f64;
            let mut p = vec![0.1; d];
            p[0] = 0.8 * mean;
            p
        }
    };
    Ok(space.project(&raw))
}

struct Solver<'a> {
    spec: &'a ModelSpec,
    seg: &'a Segment<'a>,
    rows: Vec<LinearConstraint>,
    tol: f64,
    max_iter: usize,
    d: usize,
    m: f64,
}

struct Eval {
    f: f64,
    g: DVector<f64>,
    acc: Accumulated,
}

impl<'a> Solver<'a> {
    fn new(spec: &'a ModelSpec, seg: &'a Segment<'a>, opts: &FitOptions) -> Self {
        Self {
            spec,
            seg,
            rows: spec.space.constraints(),
            tol: opts.tol,
            max_iter: opts.max_iter,
            d: spec.dim(),
            m: seg.len() as f64,
        }
    }

    fn eval(&self, theta: &DVector<f64>, order: Order) -> Result<Eval> {
        let acc = accumulate(self.spec, theta.as_slice(), self.seg, order)?;
        let g = DVector::from_column_slice(&acc.score[..self.d]);
        Ok(Eval {
            f: acc.loglik,
            g,
            acc,
        })
    }

    fn row(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.rows[i].coeffs)
    }

    fn slack(&self, i: usize, theta: &DVector<f64>) -> f64 {
        self.rows[i].slack(theta.as_slice())
    }

    /// Orthonormal basis of the null space of the working-set rows.
    fn null_space(&self, working: &[usize]) -> DMatrix<f64> {
        let mut q: Vec<DVector<f64>> = Vec::new();
        for &i in working {
            if let Some(v) = orthonormalize(self.row(i), &q) {
                q.push(v);
            }
        }
        let k = q.len();
        for j in 0..self.d {
            if q.len() == self.d {
                break;
            }
            let mut e = DVector::zeros(self.d);
            e[j] = 1.0;
            if let Some(v) = orthonormalize(e, &q) {
                q.push(v);
            }
        }
        let cols: Vec<DVector<f64>> = q.into_iter().skip(k).collect();
        if cols.is_empty() {
            DMatrix::zeros(self.d, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }

    fn independent(&self, working: &[usize], cand: usize) -> bool {
        let mut q: Vec<DVector<f64>> = Vec::new();
        for &i in working {
            if let Some(v) = orthonormalize(self.row(i), &q) {
                q.push(v);
            }
        }
        orthonormalize(self.row(cand), &q).is_some()
    }

    /// Least-squares multipliers `λ` with `g ≈ Σ λ_i a_i`.
    fn multipliers(&self, working: &[usize], g: &DVector<f64>) -> Vec<f64> {
        if working.is_empty() {
            return Vec::new();
        }
        let cols: Vec<DVector<f64>> = working.iter().map(|&i| self.row(i)).collect();
        let a = DMatrix::from_columns(&cols);
        let ata = a.transpose() * &a;
        let atg = a.transpose() * g;
        match ata.clone().cholesky() {
            Some(c) => c.solve(&atg).iter().copied().collect(),
            None => ata
                .pseudo_inverse(1e-12)
                .map(|p| (p * atg).iter().copied().collect())
                .unwrap_or_else(|_| vec![0.0; working.len()]),
        }
    }

    fn run(&self, theta0: Vec<f64>) -> Result<FitResult> {
        let d = self.d;
        let mut theta = DVector::from_vec(theta0);
        let active_tol = FEASIBILITY_TOL;
        let mut working: Vec<usize> = Vec::new();
        for i in 0..self.rows.len() {
            if self.slack(i, &theta) <= active_tol && self.independent(&working, i) {
                working.push(i);
            }
        }
        let mut cur = self.eval(&theta, Order::Hessian)?;
        let mut iterations = 0;
        let mut converged = false;
        let mut stalled_drop: Option<usize> = None;

        while iterations < self.max_iter {
            let z = self.null_space(&working);
            let gz = z.transpose() * &cur.g;
            let pg = &z * &gz;
            let pg_norm = inf_norm(&pg) / self.m;
            if pg_norm <= self.tol {
                let lambda = self.multipliers(&working, &cur.g);
                let lam_tol = self.tol * self.m.max(1.0) * 10.0;
                let worst = lambda
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l < -lam_tol)
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k);
                match worst {
                    None => {
                        converged = true;
                        break;
                    }
                    Some(k) => {
                        let row = working.remove(k);
                        if stalled_drop == Some(row) {
                            // released and re-blocked without progress
                            converged = true;
                            working.insert(k, row);
                            break;
                        }
                        stalled_drop = Some(row);
                        continue;
                    }
                }
            }
            iterations += 1;

            let h = to_matrix(&cur.acc.neg_hessian, d);
            let info = to_matrix(&cur.acc.info, d);
            let newton = reduced_solve(&z, &h, &gz);
            let fisher = || {
                let r = z.transpose() * &info * &z;
                let ridge = 1e-8 * (r.trace().abs() + 1.0);
                let r = r + DMatrix::identity(z.ncols(), z.ncols()) * ridge;
                r.cholesky().map(|c| &z * c.solve(&gz))
            };
            let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(3);
            if let Some(p) = newton {
                dirs.push(p);
            }
            if let Some(p) = fisher() {
                dirs.push(p);
            }
            dirs.push(pg.clone() / (inf_norm(&pg).max(1e-300)) * 1e-3);

            let mut moved = false;
            for p in dirs {
                let slope = cur.g.dot(&p);
                if !(slope > 0.0) {
                    continue;
                }
                // largest feasible step along p
                let mut t_max = f64::INFINITY;
                let mut blocking = None;
                for i in 0..self.rows.len() {
                    if working.contains(&i) {
                        continue;
                    }
                    let ap = self.row(i).dot(&p);
                    if ap > 1e-15 {
                        let t = self.slack(i, &theta).max(0.0) / ap;
                        if t < t_max {
                            t_max = t;
                            blocking = Some(i);
                        }
                    }
                }
                let mut t = t_max.min(1.0);
                let slack_f = 1e-12 * (1.0 + cur.f.abs());
                while t > MIN_STEP {
                    let cand = &theta + &p * t;
                    let cand = DVector::from_vec(self.spec.space.project(cand.as_slice()));
                    if let Ok(next) = self.eval(&cand, Order::Hessian) {
                        if next.f >= cur.f + ARMIJO_C * t * slope - slack_f {
                            let hit_block = t == t_max && t_max <= 1.0;
                            theta = cand;
                            cur = next;
                            if hit_block {
                                if let Some(b) = blocking {
                                    if self.independent(&working, b) {
                                        working.push(b);
                                    }
                                }
                            }
                            moved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if moved {
                    break;
                }
            }
            if !moved {
                break;
            }
            stalled_drop = None;
            // rows that the projection may have pinned
            for i in 0..self.rows.len() {
                if !working.contains(&i)
                    && self.slack(i, &theta) <= active_tol
                    && self.independent(&working, i)
                {
                    working.push(i);
                }
            }
        }

        let z = self.null_space(&working);
        let pg = &z * (z.transpose() * &cur.g);
        let pg_norm = inf_norm(&pg) / self.m;
        if !converged && pg_norm <= self.tol {
            let lambda = self.multipliers(&working, &cur.g);
            converged = lambda.iter().all(|&l| l >= -self.tol * self.m * 10.0);
        }
        let info = to_matrix(&cur.acc.info, d);
        let eig = info.symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
            (lo.min(e), hi.max(e.abs()))
        });
        let rcond = if hi > 0.0 { (lo / hi).max(0.0) } else { 0.0 };
        let mut boundary_active: Vec<String> = (0..self.rows.len())
            .filter(|&i| self.slack(i, &theta) <= 1e-8)
            .map(|i| self.rows[i].id.clone())
            .collect();
        boundary_active.sort();
        Ok(FitResult {
            theta: theta.iter().copied().collect(),
            loglik: cur.f,
            grad_inf_norm: inf_norm(&cur.g) / self.m,
            projected_grad_inf_norm: pg_norm,
            iterations,
            boundary_active,
            converged,
            x_init: self.seg.x_init(),
            segment: (self.seg.start(), self.seg.end()),
            information_rcond: rcond,
        })
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn orthonormalize(mut v: DVector<f64>, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
    let n0 = v.norm();
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(&v);
            v -= q * c;
        }
    }
    let n = v.norm();
    (n > INDEPENDENCE_TOL * n0.max(1.0)).then(|| v / n)
}

/// Newton direction `Z (ZᵀHZ)⁻¹ Zᵀg` when the reduced Hessian is positive definite.
fn reduced_solve(z: &DMatrix<f64>, h: &DMatrix<f64>, gz: &DVector<f64>) -> Option<DVector<f64>> {
    if z.ncols() == 0 {
        return None;
    }
    let r = z.transpose() * h * z;
    r.cholesky().map(|c| z * c.solve(gz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{loglik, score};
    use crate::simulate::{simulate_h0, DEFAULT_BURN_IN};

    fn fit_all(spec: &ModelSpec, y: &[u64]) -> FitResult {
        fit(spec, y, 1, y.len(), &FitOptions::default()).unwrap()
    }

    #[test]
    fn recovers_poisson_parameters() {
        let m = ModelSpec::poisson_ingarch();
        let th = [1.0, 0.2, 0.15];
        let tr = simulate_h0(&m, &th, 5000, DEFAULT_BURN_IN, 1).unwrap();
        let r = fit_all(&m, &tr.y);
        assert!(r.converged, "{r:?}");
        for (a, b) in r.theta.iter().zip(th) {
            assert!((a - b).abs() < 0.15, "{:?}", r.theta);
        }
        assert!(r.projected_grad_inf_norm <= 1e-8);
    }

    #[test]
    fn fit_beats_truth_and_nearby_points() {
        let m = ModelSpec::nb_ingarch(8).unwrap();
        let th = [1.0, 0.2, 0.15];
        let tr = simulate_h0(&m, &th, 800, DEFAULT_BURN_IN, 3).unwrap();
        let r = fit_all(&m, &tr.y);
        assert!(r.converged);
        let seg = Segment::with_default_init(&m, &tr.y, 1, 800).unwrap();
        let at_truth = loglik(&m, &th, &seg).unwrap();
        assert!(r.loglik >= at_truth - 1e-9);
        for k in 0..3 {
            for s in [-1e-3, 1e-3] {
                let mut p = r.theta.clone();
                p[k] += s;
                if m.space.contains(&p) {
                    assert!(loglik(&m, &p, &seg).unwrap() <= r.loglik + 1e-9);
                }
            }
        }
    }

    #[test]
    fn iid_data_hits_boundary_with_nonnegative_multipliers() {
        let m = ModelSpec::poisson_ingarch();
        let tr = simulate_h0(&m, &[2.0, 0.0, 0.0], 2000, 0, 8).unwrap();
        let r = fit_all(&m, &tr.y);
        assert!(r.converged, "{r:?}");
        assert!(r.theta[1] < 0.05, "{:?}", r.theta);
        let seg = Segment::with_default_init(&m, &tr.y, 1, 2000).unwrap();
        let bar = seg.x_init();
        // with α = 0 the intercept and β trade off along α₀/(1−β) = const
        assert!(r.loglik >= loglik(&m, &[bar, 0.0, 0.0], &seg).unwrap() - 1e-9);
        let g = score(&m, &r.theta, &seg).unwrap();
        if r.boundary_active.iter().any(|id| id == "lower[1]") {
            assert!(g[1] <= 1e-6 * 2000.0, "{g:?}");
        }
    }

    #[test]
    fn bernoulli_fit_stays_feasible() {
        let m = ModelSpec::bernoulli_ingarch();
        let th = [0.2, 0.35, 0.4];
        let tr = simulate_h0(&m, &th, 2000, DEFAULT_BURN_IN, 5).unwrap();
        let r = fit_all(&m, &tr.y);
        assert!(r.converged, "{r:?}");
        assert!(m.space.contains(&r.theta));
        assert!((r.theta[0] / (1.0 - r.theta[1] - r.theta[2]) - 0.2 / 0.25).abs() < 0.1);
    }

    #[test]
    fn warm_start_agrees_with_cold() {
        let m = ModelSpec::nb_ingarch(1).unwrap();
        let tr = simulate_h0(&m, &[0.2, 0.3, 0.25], 600, DEFAULT_BURN_IN, 11).unwrap();
        let cold = fit_all(&m, &tr.y);
        let warm = fit(&m, &tr.y, 1, 600, &FitOptions::warm(&[0.3, 0.2, 0.2])).unwrap();
        assert!(
            (cold.loglik - warm.loglik).abs() < 1e-6,
            "{cold:?} {warm:?}"
        );
    }

    #[test]
    fn rejects_short_and_constant_segments() {
        let m = ModelSpec::poisson_ingarch();
        let y = vec![1u64, 2, 3, 0, 1, 2, 4, 1, 0];
        assert!(matches!(
            fit(&m, &y, 1, 9, &FitOptions::default()),
            Err(CptError::SegmentTooShort { .. })
        ));
        let y = vec![3u64; 50];
        assert!(matches!(
            fit(&m, &y, 1, 50, &FitOptions::default()),
            Err(CptError::DegenerateSegment { .. })
        ));
        let y = vec![0u64, 1, 2, 1, 0, 1, 0, 2, 1, 1, 1, 0];
        let b = ModelSpec::bernoulli_ingarch();
        assert!(matches!(
            fit(&b, &y, 1, 12, &FitOptions::default()),
            Err(CptError::Support { .. })
        ));
    }

    #[test]
    fn threshold_model_fits() {
        let m = ModelSpec::new(
            ExponentialFamily::Poisson,
            crate::models::Recursion::Threshold { l: 2 },
        )
        .unwrap();
        let th = [1.0, 0.3, 0.2, 0.3];
        let tr = simulate_h0(&m, &th, 3000, 200, 2).unwrap();
        let r = fit_all(&m, &tr.y);
        assert!(r.converged, "{r:?}");
        assert!(m.space.contains(&r.theta));
    }
}
