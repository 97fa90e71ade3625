// SPDX-License-Identifier: MIT OR Apache-2.0

//! Quantiles of `sup_{0<τ<1} ‖W_d(τ)‖² / q²(τ)` for a `d`-dimensional
//! Brownian bridge `W_d`, by Monte Carlo over discretised bridges.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpt::WeightFn;
use crate::error::{CptError, Result};
use crate::seed::{self, StreamRng};

pub const DEFAULT_GRID: usize = 4097;
pub const DEFAULT_PATHS: usize = 200_000;
pub const DEFAULT_SEED: u64 = 42;
pub const MIN_GRID: usize = 64;
pub const STANDARD_ALPHAS: [f64; 4] = [0.10, 0.05, 0.025, 0.01];
pub const CACHE_ENV: &str = "CPT_CACHE_DIR";

const CACHE_VERSION: u32 = 1;
/// `−ζ(1/2)/√(2π)`: expected overshoot of a continuous maximum past its
/// grid maximum, in units of `σ√Δ`.
const OVERSHOOT: f64 = 0.582_597_157_939_010_6;

/// How the grid maximum is mapped to an estimate of the continuous supremum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridCorrection {
    /// Raw maximum over interior grid points.
    None,
    /// Shift the maximum of `‖W‖/q` up by `0.5826 √Δ / q` before squaring.
    Overshoot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileConfig {
    pub d: usize,
    pub weight: WeightFn,
    /// Number of grid intervals `m`; the grid is `τ_j = j/m`.
    pub grid: usize,
    pub paths: usize,
    pub seed: u64,
    pub correction: GridCorrection,
}

impl QuantileConfig {
    pub fn new(d: usize, weight: WeightFn) -> Self {
        Self {
            d,
            weight,
            grid: DEFAULT_GRID,
            paths: DEFAULT_PATHS,
            seed: DEFAULT_SEED,
            correction: GridCorrection::None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.d == 0 {
            return Err(CptError::InvalidArgument("d must be >= 1".into()));
        }
        if self.grid < MIN_GRID {
            return Err(CptError::InvalidArgument(format!(
                "grid must be >= {MIN_GRID} (got {})",
                self.grid
            )));
        }
        if self.paths == 0 {
            return Err(CptError::InvalidArgument("paths must be >= 1".into()));
        }
        if !self.weight.admissible() {
            return Err(CptError::InvalidArgument(format!(
                "weight {} is not admissible",
                self.weight
            )));
        }
        Ok(())
    }

    fn cache_key(&self) -> String {
        let corr = match self.correction {
            GridCorrection::None => "raw",
            GridCorrection::Overshoot => "os",
        };
        let q = self.weight.to_string().replace([':', '='], "_");
        format!(
            "critval-v{CACHE_VERSION}-d{}-q{q}-m{}-N{}-s{}-{corr}.csv",
            self.d, self.grid, self.paths, self.seed
        )
    }
}

/// `α ↦ c_α` for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub config: QuantileConfig,
    /// Sorted by decreasing `α`.
    pub rows: Vec<(f64, f64)>,
}

impl QuantileTable {
    pub fn get(&self, alpha: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|(a, _)| (a - alpha).abs() < 1e-12)
            .map(|r| r.1)
    }
}

/// Precomputed `1/q²(τ_j)` on the interior grid.
struct Grid {
    m: usize,
    inv_q2: Vec<f64>,
    inv_q: Vec<f64>,
    sd: f64,
}

impl Grid {
    fn new(m: usize, weight: &WeightFn) -> Self {
        let inv_q: Vec<f64> = (1..m)
            .map(|j| 1.0 / weight.eval(j as f64 / m as f64))
            .collect();
        Self {
            m,
            inv_q2: inv_q.iter().map(|v| v * v).collect(),
            inv_q,
            sd: (1.0 / m as f64).sqrt(),
        }
    }
}

/// One draw of `max_j ‖W(τ_j)‖² / q²(τ_j)` over the interior grid
/// `τ_j = j/m, 0 < j < m`.
pub fn simulate_sup<R: Rng + ?Sized>(d: usize, weight: &WeightFn, m: usize, rng: &mut R) -> f64 {
    let grid = Grid::new(m.max(2), weight);
    let mut buf = vec![0.0; d * m.max(2)];
    draw(&grid, d, GridCorrection::None, rng, &mut buf)
}

fn draw<R: Rng + ?Sized>(
    grid: &Grid,
    d: usize,
    correction: GridCorrection,
    rng: &mut R,
    buf: &mut [f64],
) -> f64 {
    let m = grid.m;
    // buf[i*m + j] holds B_i(τ_{j+1})
    for i in 0..d {
        let row = &mut buf[i * m..(i + 1) * m];
        let mut b = 0.0;
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            b += grid.sd * z;
            *v = b;
        }
    }
    let mut best = 0.0f64;
    let mut best_j = 0usize;
    for j in 0..m - 1 {
        let tau = (j + 1) as f64 / m as f64;
        let mut s = 0.0;
        for i in 0..d {
            let w = buf[i * m + j] - tau * buf[i * m + m - 1];
            s += w * w;
        }
        let v = s * grid.inv_q2[j];
        if v > best {
            best = v;
            best_j = j;
        }
    }
    match correction {
        GridCorrection::None => best,
        GridCorrection::Overshoot => {
            let r = best.sqrt() + OVERSHOOT * grid.sd * grid.inv_q[best_j];
            r * r
        }
    }
}

/// `N` independent draws, sorted ascending. Path `i` uses its own stream
/// derived from `(seed, i)`, so the result does not depend on scheduling.
pub fn sup_draws(cfg: &QuantileConfig) -> Result<Vec<f64>> {
    cfg.check()?;
    let grid = Grid::new(cfg.grid, &cfg.weight);
    let mut out: Vec<f64> = (0..cfg.paths)
        .into_par_iter()
        .map_init(
            || vec![0.0; cfg.d * cfg.grid],
            |buf, i| {
                let mut rng = StreamRng::seed_from_u64(seed::mix(cfg.seed, &[i as u64]));
                draw(&grid, cfg.d, cfg.correction, &mut rng, buf)
            },
        )
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Empirical `(1 − α)`-quantile of sorted draws: the order statistic of
/// rank `⌈(1 − α) N⌉`.
pub fn empirical_quantile(sorted: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if sorted.is_empty() {
        return Err(CptError::InvalidArgument("no draws".into()));
    }
    let n = sorted.len();
    let rank = ((1.0 - alpha) * n as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CptError::InvalidArgument(format!(
            "alpha must lie in (0, 1) (got {alpha})"
        )));
    }
    Ok(())
}

/// Builds the table for the standard levels plus `extra`, without caching.
pub fn table(cfg: &QuantileConfig, extra: &[f64]) -> Result<QuantileTable> {
    for &a in extra {
        check_alpha(a)?;
    }
    let draws = sup_draws(cfg)?;
    let mut alphas: Vec<f64> = STANDARD_ALPHAS.iter().chain(extra).copied().collect();
    alphas.sort_by(|a, b| b.total_cmp(a));
    alphas.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let rows = alphas
        .into_iter()
        .map(|a| Ok((a, empirical_quantile(&draws, a)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantileTable {
        config: cfg.clone(),
        rows,
    })
}

/// Cache location: `explicit`, else `$CPT_CACHE_DIR`, else the user cache
/// directory, else the system temporary directory.
pub fn resolve_cache_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    if let Some(p) = std::env::var_os("XDG_CACHE_HOME").filter(|v| !v.is_empty()) {
        return PathBuf::from(p).join("ingarch-cpt");
    }
    if let Some(p) = std::env::var_os("HOME").filter(|v| !v.is_empty()) {
        return PathBuf::from(p).join(".cache").join("ingarch-cpt");
    }
    std::env::temp_dir().join("ingarch-cpt")
}

/// Handle on a directory of cached quantile tables.
#[derive(Clone, Debug)]
pub struct QuantileCache {
    dir: Option<PathBuf>,
}

impl QuantileCache {
    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
        }
    }

    /// A cache that never reads or writes.
    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn load(&self, cfg: &QuantileConfig) -> Option<Vec<(f64, f64)>> {
        let path = self.dir.as_ref()?.join(cfg.cache_key());
        let text = fs::read_to_string(path).ok()?;
        let mut lines = text.lines();
        if lines.next()? != "alpha,c_alpha" {
            return None;
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (a, c) = line.split_once(',')?;
            let a: f64 = a.trim().parse().ok()?;
            let c: f64 = c.trim().parse().ok()?;
            if !(c.is_finite()) {
                return None;
            }
            rows.push((a, c));
        }
        Some(rows)
    }

    /// Best-effort write; a failure leaves the cache unchanged.
    fn store(&self, cfg: &QuantileConfig, rows: &[(f64, f64)]) {
        let Some(dir) = &self.dir else { return };
        if fs::create_dir_all(dir).is_err() {
            return;
        }
        let path = dir.join(cfg.cache_key());
        let tmp = dir.join(format!("{}.tmp{}", cfg.cache_key(), std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            writeln!(f, "alpha,c_alpha")?;
            for (a, c) in rows {
                writeln!(f, "{a},{c}")?;
            }
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        if write().is_err() {
            let _ = fs::remove_file(&tmp);
        }
    }

    /// Table for `cfg` containing at least the standard levels and `alphas`.
    pub fn table(&self, cfg: &QuantileConfig, alphas: &[f64]) -> Result<QuantileTable> {
        cfg.check()?;
        if let Some(rows) = self.load(cfg) {
            let have = |a: f64| rows.iter().any(|(x, _)| (x - a).abs() < 1e-12);
            if alphas.iter().all(|&a| have(a)) && STANDARD_ALPHAS.iter().all(|&a| have(a)) {
                return Ok(QuantileTable {
                    config: cfg.clone(),
                    rows,
                });
            }
            // recompute, keeping previously cached levels
            let mut extra: Vec<f64> = rows.iter().map(|r| r.0).collect();
            extra.extend_from_slice(alphas);
            let t = table(cfg, &extra)?;
            self.store(cfg, &t.rows);
            return Ok(t);
        }
        let t = table(cfg, alphas)?;
        self.store(cfg, &t.rows);
        Ok(t)
    }

    pub fn quantile(&self, cfg: &QuantileConfig, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        let t = self.table(cfg, &[alpha])?;
        t.get(alpha)
            .ok_or_else(|| CptError::InvalidArgument(format!("alpha {alpha} missing from table")))
    }
}

/// `c_α` for `cfg`, uncached.
pub fn quantile(cfg: &QuantileConfig, alpha: f64) -> Result<f64> {
    QuantileCache::disabled().quantile(cfg, alpha)
}

/// `P(sup_τ |W₁(τ)| ≤ x) = 1 − 2 Σ_{k≥1} (−1)^{k+1} e^{−2k²x²}`.
pub fn kolmogorov_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        s += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    1.0 - 2.0 * s
}
