//! Haar functions on dyadic intervals, the centred coefficients
//! `X_{N,k} = ∫ e_{N,k} dμ_ε - ∫ e_{N,k} dx` of a sampled measure, their exact
//! joint cumulants and Monte Carlo estimators for them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::levy::{LevySpec, MeasureWeight, SampledMeasure};
use crate::seeding::{Purpose, SeedStream};
use crate::stats::{grouped_jackknife, joint_k_statistic, Estimate};

/// Jackknife groups used for k-statistic standard errors.
pub const JACKKNIFE_GROUPS: usize = 100;

/// `(N, k)`: `e_{1,k} = 1_{[k, k+1)}` and, for `N >= 2`,
/// `e_{N,k} = √(N/2) (1_{I_{N,2k}} - 1_{I_{N,2k+1}})` with `I_{N,k} = [k/N, (k+1)/N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HaarIndex {
    pub n: u32,
    pub k: i64,
}

impl HaarIndex {
    pub fn new(n: u32, k: i64) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("Haar level must be a power of two, got {n}")));
        }
        Ok(Self { n, k })
    }

    /// Support `[lo, hi)`.
    pub fn support(&self) -> (f64, f64) {
        if self.n == 1 {
            (self.k as f64, self.k as f64 + 1.0)
        } else {
            let w = 2.0 / f64::from(self.n);
            (self.k as f64 * w, (self.k + 1) as f64 * w)
        }
    }

    /// `∫ e dx`.
    pub fn lebesgue_integral(&self) -> f64 {
        if self.n == 1 {
            1.0
        } else {
            0.0
        }
    }

    /// `e_{N,k}(x)` for `x` on the line.
    pub fn value(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x >= lo && x < hi) {
            return 0.0;
        }
        if self.n == 1 {
            return 1.0;
        }
        let amp = (f64::from(self.n) / 2.0).sqrt();
        if x < 0.5 * (lo + hi) {
            amp
        } else {
            -amp
        }
    }

    /// Check that the support lies inside the torus and is resolved by `grid`.
    pub fn check(&self, grid: Grid) -> Result<()> {
        let (lo, hi) = self.support();
        let half = 0.5 * grid.length();
        if lo < -half || hi > half {
            return Err(Error::InvalidArgument(format!(
                "Haar support [{lo}, {hi}) leaves the torus [-{half}, {half})"
            )));
        }
        let step = 1.0 / f64::from(self.n);
        if step < 2.0 * grid.dx() - 1e-12 {
            return Err(Error::Resolution(format!(
                "Haar level {} needs 1/N >= 2 dx = {}",
                self.n,
                2.0 * grid.dx()
            )));
        }
        let cells = step / grid.dx();
        if (cells - cells.round()).abs() > 1e-9 || ((lo + half) / grid.dx()).fract().abs() > 1e-9 {
            return Err(Error::Resolution(format!("Haar level {} is not aligned with the grid", self.n)));
        }
        Ok(())
    }

    /// The value of `e` in the torus coordinates of `grid` (periodic wrap).
    pub fn value_on_torus(&self, grid: Grid, x: f64) -> f64 {
        self.value(grid.wrap(x))
    }
}

/// Every index whose support fits in the torus, for levels `1, 2, …, max_level`.
pub fn resolvable_indices(grid: Grid, max_level: u32) -> Vec<HaarIndex> {
    let half = (0.5 * grid.length()).floor() as i64;
    let mut out = Vec::new();
    let mut n = 1u32;
    while n <= max_level {
        let per_unit = if n == 1 { 1 } else { i64::from(n / 2) };
        for k in -half * per_unit..half * per_unit {
            let idx = HaarIndex { n, k };
            if idx.check(grid).is_ok() {
                out.push(idx);
            }
        }
        n *= 2;
    }
    out
}

pub fn haar_function(idx: HaarIndex, grid: Grid) -> Result<Vec<f64>> {
    idx.check(grid)?;
    // evaluate at cell midpoints so that the sampled function is exactly the
    // piecewise-constant cell average
    Ok((0..grid.cells()).map(|j| idx.value(grid.x(j) + 0.5 * grid.dx())).collect())
}

/// `X_{N,k}`, evaluated exactly over the atoms plus the Lebesgue part.
pub fn haar_coefficient(measure: &SampledMeasure, idx: HaarIndex) -> f64 {
    let atoms: Vec<f64> = measure
        .atoms
        .iter()
        .map(|a| a.weight * idx.value_on_torus(measure.grid, a.position))
        .collect();
    crate::stats::pairwise_sum(&atoms) + (measure.lebesgue_density - 1.0) * idx.lebesgue_integral()
}

/// `∫ Π_j e_j dx`, exact on the dyadic lattice of the finest level involved.
pub fn product_integral(indices: &[HaarIndex]) -> f64 {
    let Some(finest) = indices.iter().map(|i| i.n).max() else {
        return 0.0;
    };
    let lo = indices.iter().map(|i| i.support().0).fold(f64::MIN, f64::max);
    let hi = indices.iter().map(|i| i.support().1).fold(f64::MAX, f64::min);
    if lo >= hi {
        return 0.0;
    }
    let h = 1.0 / f64::from(finest.max(2));
    let cells = ((hi - lo) / h).round() as i64;
    (0..cells)
        .map(|c| {
            let mid = lo + (c as f64 + 0.5) * h;
            indices.iter().map(|i| i.value(mid)).product::<f64>() * h
        })
        .sum()
}

/// `κ(X_1, …, X_J) = (-ε)^{J-1} Φ^{(J)}(0) ∫ Π e_j dx`.
pub fn exact_joint_cumulant(spec: &LevySpec, epsilon: f64, indices: &[HaarIndex]) -> f64 {
    let order = indices.len() as u32;
    assert!(order >= 1, "cumulants need at least one variable");
    if order == 1 {
        return 0.0;
    }
    (-epsilon).powi(order as i32 - 1) * spec.phi_derivative(order) * product_integral(indices)
}

/// One line of the cumulant results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantRow {
    pub indices: Vec<HaarIndex>,
    pub exact: f64,
    pub estimate: Estimate,
}

impl CumulantRow {
    pub fn index_label(&self) -> String {
        self.indices.iter().map(|i| format!("({},{})", i.n, i.k)).collect::<Vec<_>>().join(" ")
    }
}

/// Draw `replicas` measures and return the coefficient matrix, one row per
/// replica, one column per entry of `columns`.
pub fn sample_coefficients(
    spec: &LevySpec,
    epsilon: f64,
    grid: Grid,
    columns: &[HaarIndex],
    replicas: usize,
    seeds: SeedStream,
    task: u32,
) -> Result<Vec<Vec<f64>>> {
    for c in columns {
        c.check(grid)?;
    }
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeds.rng(task, r as u32, Purpose::Measure);
            let m = spec.sample(epsilon, grid, &mut rng)?;
            Ok(columns.iter().map(|&i| haar_coefficient(&m, i)).collect())
        })
        .collect()
}

/// k-statistic estimates of the joint cumulants of each index tuple.
pub fn empirical_cumulants(
    spec: &LevySpec,
    epsilon: f64,
    grid: Grid,
    tuples: &[Vec<HaarIndex>],
    replicas: usize,
    seeds: SeedStream,
) -> Result<Vec<CumulantRow>> {
    if replicas < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 replicas, got {replicas}")));
    }
    if let Some(t) = tuples.iter().find(|t| t.is_empty() || t.len() > 4) {
        return Err(Error::InvalidArgument(format!("cumulant order {} outside 1..=4", t.len())));
    }
    let mut columns: Vec<HaarIndex> = Vec::new();
    for t in tuples {
        for i in t {
            if !columns.contains(i) {
                columns.push(*i);
            }
        }
    }
    let rows = sample_coefficients(spec, epsilon, grid, &columns, replicas, seeds, 0)?;
    let by_column: Vec<Vec<f64>> = (0..columns.len()).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    Ok(tuples
        .iter()
        .map(|t| {
            let samples: Vec<&[f64]> = t
                .iter()
                .map(|i| by_column[columns.iter().position(|c| c == i).unwrap()].as_slice())
                .collect();
            CumulantRow {
                indices: t.clone(),
                exact: exact_joint_cumulant(spec, epsilon, t),
                estimate: grouped_jackknife(&samples, JACKKNIFE_GROUPS, joint_k_statistic),
            }
        })
        .collect())
}

/// Write the cumulant table as CSV.
pub fn write_cumulant_csv<W: std::io::Write>(rows: &[CumulantRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "indices,exact,estimate,se")?;
    for r in rows {
        writeln!(out, "\"{}\",{},{},{}", r.index_label(), r.exact, r.estimate.value, r.estimate.se)?;
    }
    Ok(())
}

/// `‖ψ (dμ - 1)‖²_{H^{-s}}` for one measure, using its grid density.
pub fn weighted_negative_norm_sq<M: MeasureWeight + ?Sized>(measure: &M, psi: &GridField, s: f64) -> f64 {
    let values: Vec<_> = psi
        .values
        .iter()
        .zip(measure.density())
        .map(|(p, d)| p * (d - 1.0))
        .collect();
    GridField { grid: psi.grid, values }.sobolev_norm(-s).powi(2)
}

/// Monte Carlo estimate of `E ‖ψ (dμ_ε - 1)‖^{2p}_{H^{-s}}`.
pub fn weighted_negative_norm_moment(
    spec: &LevySpec,
    epsilon: f64,
    psi: &GridField,
    s: f64,
    p: u32,
    replicas: usize,
    seeds: SeedStream,
    task: u32,
) -> Result<Estimate> {
    if !(s > 0.5) {
        return Err(Error::InvalidArgument(format!("need s > 1/2, got {s}")));
    }
    if !(p == 1 || p == 2) {
        return Err(Error::InvalidArgument(format!("moment order must be 1 or 2, got {p}")));
    }
    let draws = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeds.rng(task, r as u32, Purpose::Measure);
            let m = spec.sample(epsilon, psi.grid, &mut rng)?;
            Ok(weighted_negative_norm_sq(&m, psi, s).powi(p as i32))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::of_mean(&draws))
}

/// Haar partial sum `Σ_{N <= n0} Σ_k ⟨f, e_{N,k}⟩ e_{N,k}` of a grid function.
pub fn haar_partial_sum(grid: Grid, f: &[f64], n0: u32) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.cells()];
    for idx in resolvable_indices(grid, n0) {
        let e = haar_function(idx, grid)?;
        let prods: Vec<f64> = e.iter().zip(f).map(|(a, b)| a * b).collect();
        let c = grid.integrate(&prods);
        for (o, v) in out.iter_mut().zip(&e) {
            *o += c * v;
        }
    }
    Ok(out)
}
