//! Split-step Fourier solvers for
//!
//! ```text
//! i ∂t ψ = -∂x² ψ + 2 |ψ|² ψ w(x)
//! ```
//!
//! with `w` the grid density of a sampled (or mollified) measure, or `w ≡ 1`
//! for the homogenized cubic equation. One step is Strang splitting: an exact
//! half step of the free flow in Fourier space, the exact pointwise rotation
//! `ψ ↦ ψ exp(-2i w |ψ|² dt)` (|ψ| is conserved by the nonlinear part), and
//! another free half step.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::levy::MeasureWeight;
use crate::weighted::MeasureNorms;

/// Largest nonlinear phase increment allowed in a single (sub)step.
pub const MAX_PHASE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid: Grid,
    /// Time step magnitude; the sign is taken from `t_final`.
    pub dt: f64,
    /// End time; negative values integrate backwards from `t = 0`.
    pub t_final: f64,
    pub store_every: usize,
    /// Zero Fourier modes above 2/3 of Nyquist in every free step.
    pub dealias: bool,
}

impl SolverConfig {
    pub fn new(grid: Grid, dt: f64, t_final: f64, store_every: usize) -> Result<Self> {
        let cfg = Self { grid, dt, t_final, store_every, dealias: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !self.t_final.is_finite() || self.dt > self.t_final.abs() && self.t_final != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "dt = {} exceeds the time horizon {}",
                self.dt, self.t_final
            )));
        }
        if self.store_every == 0 {
            return Err(Error::InvalidArgument("store_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps and the signed step that lands exactly on `t_final`.
    pub fn steps(&self) -> (usize, f64) {
        if self.t_final == 0.0 {
            return (0, 0.0);
        }
        let n = (self.t_final.abs() / self.dt - 1e-9).ceil().max(1.0) as usize;
        (n, self.t_final / n as f64)
    }

    pub fn with_t_final(&self, t_final: f64) -> Self {
        Self { t_final, ..*self }
    }
}

/// Per-snapshot diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub h1: f64,
    /// `‖(1 - χ_{L/4}) ψ‖_{L²} / ‖ψ₀‖_{L²}`.
    pub leakage: f64,
}

/// Stored snapshots of one flow. Times are strictly monotone.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<GridField>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Trajectory {
    pub fn grid(&self) -> Grid {
        self.states[0].grid
    }

    pub fn last(&self) -> &GridField {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn span(&self) -> (f64, f64) {
        let a = self.times[0];
        let b = *self.times.last().unwrap();
        (a.min(b), a.max(b))
    }

    /// `ψ(t)` by linear interpolation between snapshots.
    pub fn state_at(&self, t: f64) -> Result<GridField> {
        let (lo, hi) = self.span();
        let tol = 1e-9 * (1.0 + hi.abs().max(lo.abs()));
        if t < lo - tol || t > hi + tol {
            return Err(Error::TimeRange { requested: t, start: lo, end: hi });
        }
        let increasing = self.times.len() < 2 || self.times[1] > self.times[0];
        let n = self.times.len();
        if n == 1 {
            return Ok(self.states[0].clone());
        }
        // index of the left end of the bracketing interval, in increasing order
        let pos = |i: usize| if increasing { i } else { n - 1 - i };
        let mut a = 0;
        let mut b = n - 1;
        while b - a > 1 {
            let mid = (a + b) / 2;
            if self.times[pos(mid)] <= t {
                a = mid;
            } else {
                b = mid;
            }
        }
        let (ia, ib) = (pos(a), pos(b));
        let (ta, tb) = (self.times[ia], self.times[ib]);
        let theta = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        if theta == 0.0 {
            return Ok(self.states[ia].clone());
        }
        if theta == 1.0 {
            return Ok(self.states[ib].clone());
        }
        let values = self.states[ia]
            .values
            .iter()
            .zip(&self.states[ib].values)
            .map(|(x, y)| x * (1.0 - theta) + y * theta)
            .collect();
        Ok(GridField { grid: self.grid(), values })
    }

    /// Join a backward run from `t = 0` with a forward run from `t = 0`.
    pub fn two_sided(backward: Trajectory, forward: Trajectory) -> Result<Trajectory> {
        if backward.times[0] != 0.0 || forward.times[0] != 0.0 {
            return Err(Error::Alignment("both halves must start at t = 0".into()));
        }
        let mut times: Vec<f64> = backward.times.iter().rev().copied().collect();
        let mut states: Vec<GridField> = backward.states.into_iter().rev().collect();
        let mut diagnostics: Vec<Diagnostic> = backward.diagnostics.into_iter().rev().collect();
        times.extend(forward.times.iter().skip(1));
        states.extend(forward.states.into_iter().skip(1));
        diagnostics.extend(forward.diagnostics.into_iter().skip(1));
        Ok(Trajectory { times, states, diagnostics })
    }

    /// Diagnostics CSV: `t,mass,energy,H1,Xn1,Yns1,leakage` (norm columns
    /// left empty when `norms` is `None`).
    pub fn write_diagnostics_csv<W: Write>(&self, norms: Option<&MeasureNorms>, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,mass,energy,H1,Xn1,Yns1,leakage")?;
        for (d, s) in self.diagnostics.iter().zip(&self.states) {
            let (x, y) = match norms {
                Some(n) => (n.xn1(s).to_string(), n.yns1(s).to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(out, "{},{},{},{},{},{},{}", d.t, d.mass, d.energy, d.h1, x, y, d.leakage)?;
        }
        Ok(())
    }
}

/// `½ ∫ |∂ψ|² dx + ½ ∫ |ψ|⁴ w dx`.
pub fn energy_weighted(psi: &GridField, weights: &[f64]) -> f64 {
    let quartic: Vec<f64> = psi.values.iter().zip(weights).map(|(z, w)| z.norm_sqr().powi(2) * w).collect();
    0.5 * psi.gradient_energy() + 0.5 * psi.grid.integrate(&quartic)
}

pub fn energy_measure<M: MeasureWeight + ?Sized>(psi: &GridField, measure: &M) -> f64 {
    energy_weighted(psi, measure.density())
}

/// Energy of the homogenized equation (`w ≡ 1`).
pub fn energy(psi: &GridField) -> f64 {
    energy_weighted(psi, &vec![1.0; psi.len()])
}

/// Free flow multipliers `e^{-iξ²h}` (optionally dealiased).
pub(crate) fn free_multiplier(grid: Grid, h: f64, dealias: bool) -> Vec<Complex64> {
    let m = grid.cells() as i64;
    grid.frequencies()
        .iter()
        .enumerate()
        .map(|(i, xi)| {
            if dealias && 3 * grid.mode(i).abs() > m {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar(1.0, -xi * xi * h)
            }
        })
        .collect()
}

pub(crate) fn apply_free(grid: Grid, data: &mut [Complex64], multiplier: &[Complex64]) {
    grid.fft(data);
    for (z, m) in data.iter_mut().zip(multiplier) {
        *z *= m;
    }
    grid.ifft(data);
}

struct Stepper {
    grid: Grid,
    dealias: bool,
    h: f64,
    half: Vec<Complex64>,
}

impl Stepper {
    fn new(grid: Grid, h: f64, dealias: bool) -> Self {
        Self { grid, dealias, h, half: free_multiplier(grid, 0.5 * h, dealias) }
    }

    fn half_for(&self, h: f64) -> std::borrow::Cow<'_, [Complex64]> {
        if h == self.h {
            std::borrow::Cow::Borrowed(&self.half)
        } else {
            std::borrow::Cow::Owned(free_multiplier(self.grid, 0.5 * h, self.dealias))
        }
    }

    /// One step of size `h`, split into substeps so that no nonlinear
    /// rotation exceeds [`MAX_PHASE`].
    fn step(&self, psi: &mut [Complex64], weights: &[f64], h: f64) {
        let phase = psi
            .iter()
            .zip(weights)
            .map(|(z, w)| 2.0 * w * z.norm_sqr() * h.abs())
            .fold(0.0, f64::max);
        let sub = if phase > MAX_PHASE { (phase / MAX_PHASE).ceil() as usize } else { 1 };
        let hs = h / sub as f64;
        let half = self.half_for(hs);
        for _ in 0..sub {
            apply_free(self.grid, psi, &half);
            for (z, w) in psi.iter_mut().zip(weights) {
                *z *= Complex64::from_polar(1.0, -2.0 * w * z.norm_sqr() * hs);
            }
            apply_free(self.grid, psi, &half);
        }
    }
}

fn diagnostic(t: f64, psi: &GridField, weights: &[f64], initial_norm: f64) -> Diagnostic {
    let radius = 0.25 * psi.grid.length();
    Diagnostic {
        t,
        mass: psi.mass(),
        energy: energy_weighted(psi, weights),
        h1: psi.sobolev_norm(1.0),
        leakage: if initial_norm > 0.0 { psi.tail_norm(radius) / initial_norm } else { 0.0 },
    }
}

/// Evolve `psi0` under the weighted cubic equation with weights `w` on the grid.
pub fn solve_weighted(psi0: &GridField, weights: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if psi0.grid != cfg.grid || weights.len() != cfg.grid.cells() {
        return Err(Error::Alignment("initial data, weights and solver grid differ".into()));
    }
    if !psi0.is_finite() {
        return Err(Error::InvalidArgument("initial data is not finite".into()));
    }
    let (n, h) = cfg.steps();
    let stepper = Stepper::new(cfg.grid, h, cfg.dealias);
    let initial_norm = psi0.l2_norm();
    let mut psi = psi0.clone();
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![psi.clone()],
        diagnostics: vec![diagnostic(0.0, &psi, weights, initial_norm)],
    };
    let mut last_good = 0.0;
    for step in 1..=n {
        stepper.step(&mut psi.values, weights, h);
        let t = if step == n { cfg.t_final } else { step as f64 * h };
        if !psi.is_finite() {
            return Err(Error::Divergence { last_good_time: last_good });
        }
        last_good = t;
        if step % cfg.store_every == 0 || step == n {
            traj.times.push(t);
            traj.diagnostics.push(diagnostic(t, &psi, weights, initial_norm));
            traj.states.push(psi.clone());
        }
    }
    Ok(traj)
}

pub fn solve_nls_measure<M: MeasureWeight + ?Sized>(psi0: &GridField, measure: &M, cfg: &SolverConfig) -> Result<Trajectory> {
    if measure.grid() != cfg.grid {
        return Err(Error::Alignment("measure and solver use different grids".into()));
    }
    solve_weighted(psi0, measure.density(), cfg)
}

pub fn solve_nls(psi0: &GridField, cfg: &SolverConfig) -> Result<Trajectory> {
    solve_weighted(psi0, &vec![1.0; cfg.grid.cells()], cfg)
}

/// Norms of `ψ_A(t) - ψ_B(t)` at one stored time, with running sups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferenceRow {
    pub t: f64,
    pub h_minus1: f64,
    pub sup: f64,
    pub h1: f64,
    /// `|‖ψ_A‖²_{H¹} - ‖ψ_B‖²_{H¹}|`.
    pub h1_sq_gap: f64,
    pub sup_h_minus1: f64,
    pub sup_sup: f64,
    pub sup_h1: f64,
    pub sup_h1_sq_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceTable {
    pub rows: Vec<DifferenceRow>,
}

impl DifferenceTable {
    /// Sup over stored times (the last row's running sup).
    pub fn overall(&self) -> DifferenceRow {
        *self.rows.last().expect("difference table is never empty")
    }
}

pub fn difference_norms(a: &Trajectory, b: &Trajectory) -> Result<DifferenceTable> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-12) {
        return Err(Error::Alignment("trajectories are stored at different times".into()));
    }
    if a.grid() != b.grid() {
        return Err(Error::Alignment("trajectories live on different grids".into()));
    }
    let mut rows = Vec::with_capacity(a.times.len());
    let mut run = [0.0f64; 4];
    for ((t, x), y) in a.times.iter().zip(&a.states).zip(&b.states) {
        let d = x.sub(y);
        let vals = [
            d.sobolev_norm(-1.0),
            d.sup_norm(),
            d.sobolev_norm(1.0),
            (x.sobolev_norm(1.0).powi(2) - y.sobolev_norm(1.0).powi(2)).abs(),
        ];
        for (r, v) in run.iter_mut().zip(vals) {
            *r = r.max(v);
        }
        rows.push(DifferenceRow {
            t: *t,
            h_minus1: vals[0],
            sup: vals[1],
            h1: vals[2],
            h1_sq_gap: vals[3],
            sup_h_minus1: run[0],
            sup_sup: run[1],
            sup_h1: run[2],
            sup_h1_sq_gap: run[3],
        });
    }
    Ok(DifferenceTable { rows })
}

/// Sup over stored times of the leakage monitor.
pub fn max_leakage(traj: &Trajectory) -> f64 {
    traj.diagnostics.iter().map(|d| d.leakage).fold(0.0, f64::max)
}

/// Largest relative deviation of mass and energy from their initial values.
pub fn conservation_drift(traj: &Trajectory) -> (f64, f64) {
    let d0 = traj.diagnostics[0];
    let mass = traj.diagnostics.iter().map(|d| ((d.mass - d0.mass) / d0.mass).abs()).fold(0.0, f64::max);
    let energy = traj
        .diagnostics
        .iter()
        .map(|d| ((d.energy - d0.energy) / d0.energy).abs())
        .fold(0.0, f64::max);
    (mass, energy)
}

/// Named initial profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum InitialData {
    /// `amplitude · exp(-(x - centre)² / width²)`.
    Gaussian { amplitude: f64, width: f64, #[serde(default)] centre: f64 },
    /// `amplitude · exp(-(x - centre)²/width²) · e^{i k x}`.
    ModulatedGaussian { amplitude: f64, width: f64, wavenumber: f64, #[serde(default)] centre: f64 },
    /// `amplitude · e^{iξx}` with `ξ = 2π·mode/L`.
    PlaneWave { amplitude: f64, mode: i64 },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Gaussian { amplitude: 1.0, width: 2.0, centre: 0.0 }
    }
}

impl InitialData {
    /// Value at `x`; `length` is the torus length (plane waves need it).
    pub fn eval(&self, x: f64, length: f64) -> Complex64 {
        match *self {
            InitialData::Gaussian { amplitude, width, centre } => {
                Complex64::new(amplitude * (-((x - centre) / width).powi(2)).exp(), 0.0)
            }
            InitialData::ModulatedGaussian { amplitude, width, wavenumber, centre } => {
                Complex64::from_polar(amplitude * (-((x - centre) / width).powi(2)).exp(), wavenumber * x)
            }
            InitialData::PlaneWave { amplitude, mode } => {
                Complex64::from_polar(amplitude, 2.0 * std::f64::consts::PI * mode as f64 / length * x)
            }
        }
    }

    pub fn on(&self, grid: Grid) -> GridField {
        GridField::from_fn(grid, |x| self.eval(x, grid.length()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{LevySpec, SampledMeasure};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn gaussian(grid: Grid) -> GridField {
        InitialData::default().on(grid)
    }

    #[test]
    fn free_flow_is_exact_on_a_mode() {
        let grid = Grid::new(2.0 * PI, 64).unwrap();
        let cfg = SolverConfig::new(grid, 1e-2, 1.0, 10).unwrap();
        let psi0 = GridField::plane_wave(grid, 3, 1.0);
        let zero = SampledMeasure::zero(grid, 1.0);
        let traj = solve_nls_measure(&psi0, &zero, &cfg).unwrap();
        let exact = psi0.scale(Complex64::from_polar(1.0, -9.0));
        assert!(traj.last().sub(&exact).sup_norm() < 1e-10);
        assert_eq!(traj.times.len(), 11);
    }

    #[test]
    fn plane_wave_dispersion_relation() {
        let grid = Grid::new(2.0 * PI, 64).unwrap();
        let (k, a) = (2.0, 0.7);
        let cfg = SolverConfig::new(grid, 1e-3, 1.0, 1000).unwrap();
        let traj = solve_nls(&GridField::plane_wave(grid, 2, a), &cfg).unwrap();
        let omega: f64 = k * k + 2.0 * a * a;
        let j = 5;
        let phase = (traj.last().values[j] / traj.states[0].values[j]).arg();
        let expected = (-omega).rem_euclid(2.0 * PI) - 2.0 * PI;
        let err = ((phase - expected + PI).rem_euclid(2.0 * PI) - PI).abs() / omega;
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn mass_and_energy_are_conserved() {
        let grid = Grid::new(32.0, 512).unwrap();
        let cfg = SolverConfig::new(grid, 1e-3, 0.5, 50).unwrap();
        let traj = solve_nls(&gaussian(grid), &cfg).unwrap();
        let (mass, energy) = conservation_drift(&traj);
        assert!(mass < 1e-12, "{mass}");
        assert!(energy < 1e-6, "{energy}");
        assert!(max_leakage(&traj) < 1e-3);
    }

    #[test]
    fn energy_drift_is_second_order() {
        // Δx = 1/8 keeps dt well inside the split-step stability region
        let grid = Grid::new(16.0, 128).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = LevySpec::poisson().sample(0.2, grid, &mut rng).unwrap();
        let drift = |dt: f64| {
            let cfg = SolverConfig::new(grid, dt, 0.25, 1).unwrap();
            conservation_drift(&solve_nls_measure(&gaussian(grid), &m, &cfg).unwrap()).1
        };
        let (a, b) = (drift(2e-3), drift(1e-3));
        let ratio = a / b;
        assert!((3.5..=4.5).contains(&ratio), "{a} {b} {ratio}");
    }

    #[test]
    fn time_reversal_returns_initial_data() {
        let grid = Grid::new(16.0, 256).unwrap();
        let psi0 = gaussian(grid);
        let cfg = SolverConfig::new(grid, 1e-3, 0.5, 500).unwrap();
        let fwd = solve_nls(&psi0, &cfg).unwrap();
        let back = solve_nls(fwd.last(), &cfg.with_t_final(-0.5)).unwrap();
        assert!(back.last().sub(&psi0).sup_norm() < 1e-8);
    }

    #[test]
    fn gauge_covariance() {
        let grid = Grid::new(16.0, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = LevySpec::poisson().sample(0.2, grid, &mut rng).unwrap();
        let cfg = SolverConfig::new(grid, 1e-3, 0.2, 200).unwrap();
        let rot = Complex64::from_polar(1.0, 0.7);
        let a = solve_nls_measure(&gaussian(grid), &m, &cfg).unwrap();
        let b = solve_nls_measure(&gaussian(grid).scale(rot), &m, &cfg).unwrap();
        assert!(b.last().sub(&a.last().scale(rot)).sup_norm() < 1e-13);
    }

    #[test]
    fn lebesgue_measure_reproduces_cubic_flow() {
        let grid = Grid::new(16.0, 256).unwrap();
        let cfg = SolverConfig::new(grid, 1e-3, 0.3, 30).unwrap();
        let leb = SampledMeasure::lebesgue(grid, 1.0);
        let a = solve_nls_measure(&gaussian(grid), &leb, &cfg).unwrap();
        let b = solve_nls(&gaussian(grid), &cfg).unwrap();
        let d = difference_norms(&a, &b).unwrap().overall();
        assert!(d.sup_h1 < 1e-9 && d.sup_sup < 1e-9);
        assert_eq!(energy_measure(&a.states[0], &leb), energy(&a.states[0]));
    }

    #[test]
    fn difference_norms_examples() {
        let grid = Grid::new(16.0, 256).unwrap();
        let cfg = SolverConfig::new(grid, 1e-3, 0.3, 30).unwrap();
        let a = solve_nls(&gaussian(grid), &cfg).unwrap();
        let zero = difference_norms(&a, &a).unwrap();
        assert!(zero.rows.iter().all(|r| r.sup_h1 == 0.0 && r.sup_h1_sq_gap == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = LevySpec::poisson().sample(0.2, grid, &mut rng).unwrap();
        let b = solve_nls_measure(&gaussian(grid), &m, &cfg).unwrap();
        let table = difference_norms(&a, &b).unwrap();
        for w in table.rows.windows(2) {
            assert!(w[1].sup_h_minus1 >= w[0].sup_h_minus1);
            assert!(w[1].sup_sup >= w[0].sup_sup);
        }
        let c = solve_nls(&gaussian(grid), &cfg.with_t_final(0.2)).unwrap();
        assert!(matches!(difference_norms(&a, &c), Err(Error::Alignment(_))));
    }

    #[test]
    fn substepping_bounds_the_rotation() {
        let grid = Grid::new(16.0, 256).unwrap();
        let big = InitialData::Gaussian { amplitude: 6.0, width: 1.0, centre: 0.0 }.on(grid);
        let coarse = SolverConfig::new(grid, 1e-2, 1e-2, 1).unwrap();
        let fine = SolverConfig::new(grid, 1e-2 / 8.0, 1e-2, 8).unwrap();
        let a = solve_nls(&big, &coarse).unwrap();
        let b = solve_nls(&big, &fine).unwrap();
        // 2·36·1e-2 = 0.72 rad in one step → 8 substeps, i.e. the fine run
        assert!(a.last().sub(b.last()).sup_norm() < 1e-12);
    }

    #[test]
    fn divergence_and_range_errors() {
        let grid = Grid::new(16.0, 256).unwrap();
        let cfg = SolverConfig::new(grid, 1e-3, 0.1, 10).unwrap();
        let mut bad = gaussian(grid);
        bad.values[3] = Complex64::new(f64::NAN, 0.0);
        assert!(solve_nls(&bad, &cfg).is_err());
        let traj = solve_nls(&gaussian(grid), &cfg).unwrap();
        assert!(matches!(traj.state_at(0.2), Err(Error::TimeRange { .. })));
        let mid = traj.state_at(0.015).unwrap();
        let expected = traj.states[1].add(&traj.states[2]).scale(Complex64::new(0.5, 0.0));
        assert!(mid.sub(&expected).sup_norm() < 1e-14);
        assert!(SolverConfig::new(grid, 1.0, 0.1, 1).is_err());
    }

    #[test]
    fn two_sided_trajectory_is_monotone() {
        let grid = Grid::new(16.0, 128).unwrap();
        let cfg = SolverConfig::new(grid, 1e-2, 0.1, 1).unwrap();
        let fwd = solve_nls(&gaussian(grid), &cfg).unwrap();
        let back = solve_nls(&gaussian(grid), &cfg.with_t_final(-0.1)).unwrap();
        let both = Trajectory::two_sided(back, fwd).unwrap();
        assert!(both.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(both.span(), (-0.1, 0.1));
        assert_eq!(both.state_at(0.0).unwrap(), gaussian(grid));
    }
}
