//! Uniform periodic grid, discrete Fourier conventions, fractional Sobolev
//! norms, Littlewood–Paley projections, spatial cutoffs and the unit
//! partition of unity.
//!
//! Grid points are `x_j = -L/2 + j Δx`, `j = 0..M`. The discrete Fourier
//! transform approximates `f̂(ξ) = (2π)^{-1/2} ∫ f(x) e^{-ixξ} dx`, so that
//!
//! ```text
//! ‖f‖²_{H^s} = (Δx / M) Σ_m ⟨ξ_m⟩^{2s} |DFT(f)_m|²,   ⟨ξ⟩² = 1 + ξ²,
//! ```
//!
//! which reduces to `Δx Σ |f_j|²` at `s = 0` by Parseval.

use std::cell::RefCell;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn inverse_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Standard compactly supported bump `exp(-1/(1-x²))` on `(-1, 1)`.
pub fn bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (-1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

/// Smooth monotone step: 0 for `t <= 0`, 1 for `t >= 1`.
pub fn smooth_step(t: f64) -> f64 {
    let g = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let a = g(t);
    let b = g(1.0 - t);
    if a + b == 0.0 {
        return if t >= 1.0 { 1.0 } else { 0.0 };
    }
    a / (a + b)
}

/// Even cutoff: 1 on `[-1, 1]`, 0 outside `(-2, 2)`, smooth in between.
pub fn chi(x: f64) -> f64 {
    smooth_step(2.0 - x.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    length: f64,
    cells: usize,
}

impl Grid {
    pub fn new(length: f64, cells: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        if cells < 2 || !cells.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "cell count must be a power of two >= 2, got {cells}"
            )));
        }
        Ok(Self { length, cells })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dx(&self) -> f64 {
        self.length / self.cells as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -0.5 * self.length + j as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.cells).map(|j| self.x(j)).collect()
    }

    /// Integer wavenumber index of FFT slot `i`, in `{-M/2, …, M/2 - 1}`.
    pub fn mode(&self, i: usize) -> i64 {
        let m = self.cells as i64;
        let i = i as i64;
        if i < m / 2 {
            i
        } else {
            i - m
        }
    }

    /// Angular frequencies `ξ_m = 2πm/L` in FFT order.
    pub fn frequencies(&self) -> Vec<f64> {
        let k0 = 2.0 * std::f64::consts::PI / self.length;
        (0..self.cells).map(|i| k0 * self.mode(i) as f64).collect()
    }

    /// Map a position onto `[-L/2, L/2)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let l = self.length;
        let y = (x + 0.5 * l).rem_euclid(l) - 0.5 * l;
        if y >= 0.5 * l {
            y - l
        } else {
            y
        }
    }

    /// Index of the cell `[x_j, x_j + Δx)` containing `x` (periodic).
    pub fn cell_index(&self, x: f64) -> usize {
        let u = (self.wrap(x) + 0.5 * self.length) / self.dx();
        (u.floor() as usize).min(self.cells - 1)
    }

    pub fn fft(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.cells);
        forward_plan(self.cells).process(data);
    }

    /// Normalized inverse transform (`ifft(fft(f)) = f`).
    pub fn ifft(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.cells);
        inverse_plan(self.cells).process(data);
        let scale = 1.0 / self.cells as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    /// Apply a real Fourier multiplier `m(ξ)`.
    pub fn apply_multiplier(&self, data: &mut [Complex64], multiplier: impl Fn(f64) -> f64) {
        self.fft(data);
        for (z, xi) in data.iter_mut().zip(self.frequencies()) {
            *z *= multiplier(xi);
        }
        self.ifft(data);
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        crate::stats::pairwise_sum(values) * self.dx()
    }

    /// `‖f‖_{H^s}` of a real grid function.
    pub fn sobolev_norm_real(&self, values: &[f64], s: f64) -> f64 {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.sobolev_norm_of(&mut data, s)
    }

    fn sobolev_norm_of(&self, data: &mut [Complex64], s: f64) -> f64 {
        self.fft(data);
        let terms: Vec<f64> = data
            .iter()
            .zip(self.frequencies())
            .map(|(z, xi)| (1.0 + xi * xi).powf(s) * z.norm_sqr())
            .collect();
        (self.dx() / self.cells as f64 * crate::stats::pairwise_sum(&terms)).sqrt()
    }

    /// Unit-spaced partition of unity `ρ_k(x) = φ(x-k) / Σ_j φ(x-j)` on the torus.
    ///
    /// Requires an integer domain length and `Δx <= 0.1`.
    pub fn partition_bump(&self, k: i64) -> Result<Vec<f64>> {
        self.unit_cells()?;
        if self.dx() > 0.1 + 1e-12 {
            return Err(Error::Resolution(format!(
                "partition of unity needs dx <= 0.1, got {}",
                self.dx()
            )));
        }
        Ok((0..self.cells)
            .map(|j| {
                let x = self.x(j);
                let nearest = x.floor();
                let mut total = 0.0;
                let mut mine = 0.0;
                for c in [nearest - 1.0, nearest, nearest + 1.0, nearest + 2.0] {
                    let v = bump(self.wrap(x - c));
                    total += v;
                    if self.same_site(c, k) {
                        mine += v;
                    }
                }
                mine / total
            })
            .collect())
    }

    fn same_site(&self, centre: f64, k: i64) -> bool {
        let n = self.length.round() as i64;
        (centre as i64 - k).rem_euclid(n) == 0
    }

    /// Integer sites `k` of the unit partition, `-L/2 ..= L/2 - 1`.
    pub fn unit_cells(&self) -> Result<std::ops::Range<i64>> {
        let l = self.length.round();
        if (self.length - l).abs() > 1e-9 || l < 4.0 || (l as i64) % 2 != 0 {
            return Err(Error::Resolution(format!(
                "unit-cell constructions need an even integer domain length >= 4, got {}",
                self.length
            )));
        }
        let half = (l as i64) / 2;
        Ok(-half..half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Low,
    High,
}

/// Complex field sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<Complex64>,
}

impl GridField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.cells()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl FnMut(f64) -> Complex64) -> Self {
        Self {
            grid,
            values: grid.points().into_iter().map(f).collect(),
        }
    }

    pub fn from_real(grid: Grid, values: &[f64]) -> Self {
        assert_eq!(values.len(), grid.cells());
        Self {
            grid,
            values: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    /// `amplitude · e^{iξx}` for the torus frequency `ξ = 2π·mode/L`.
    pub fn plane_wave(grid: Grid, mode: i64, amplitude: f64) -> Self {
        let xi = 2.0 * std::f64::consts::PI * mode as f64 / grid.length();
        Self::from_fn(grid, |x| Complex64::from_polar(amplitude, xi * x))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `∫ |f|² dx`.
    pub fn mass(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|z| z.norm_sqr()).collect();
        self.grid.integrate(&sq)
    }

    pub fn l2_norm(&self) -> f64 {
        self.mass().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `⟨f, g⟩ = ∫ f ḡ dx`.
    pub fn inner(&self, other: &GridField) -> Complex64 {
        let re: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a * b.conj()).re)
            .collect();
        let im: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a * b.conj()).im)
            .collect();
        Complex64::new(self.grid.integrate(&re), self.grid.integrate(&im))
    }

    /// Real pairing `Re⟨f, g⟩`.
    pub fn real_pairing(&self, other: &GridField) -> f64 {
        let prods: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .collect();
        self.grid.integrate(&prods)
    }

    pub fn sub(&self, other: &GridField) -> GridField {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &GridField) -> GridField {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, factor: Complex64) -> GridField {
        GridField {
            grid: self.grid,
            values: self.values.iter().map(|z| z * factor).collect(),
        }
    }

    fn zip_with(&self, other: &GridField, op: impl Fn(Complex64, Complex64) -> Complex64) -> GridField {
        assert_eq!(self.len(), other.len());
        GridField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| op(a, b)).collect(),
        }
    }

    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let mut data = self.values.clone();
        self.grid.sobolev_norm_of(&mut data, s)
    }

    /// `‖∂ₓf‖²_{L²}` computed spectrally.
    pub fn gradient_energy(&self) -> f64 {
        let mut data = self.values.clone();
        self.grid.fft(&mut data);
        let terms: Vec<f64> = data
            .iter()
            .zip(self.grid.frequencies())
            .map(|(z, xi)| xi * xi * z.norm_sqr())
            .collect();
        self.grid.dx() / self.grid.cells() as f64 * crate::stats::pairwise_sum(&terms)
    }

    /// `P_{≤N} f` or `P_{>N} f`.
    pub fn littlewood_paley(&self, n: f64, side: Side) -> GridField {
        let mut low = self.values.clone();
        self.grid.apply_multiplier(&mut low, |xi| chi(xi / n));
        let values = match side {
            Side::Low => low,
            Side::High => self.values.iter().zip(&low).map(|(f, l)| f - l).collect(),
        };
        GridField { grid: self.grid, values }
    }

    /// Pointwise product with `χ(x / R)`.
    pub fn cutoff(&self, radius: f64) -> GridField {
        GridField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(j, z)| z * chi(self.grid.x(j) / radius))
                .collect(),
        }
    }

    /// `‖(1 - χ_R) f‖_{L²}`.
    pub fn tail_norm(&self, radius: f64) -> f64 {
        self.sub(&self.cutoff(radius)).l2_norm()
    }

    /// CSV with columns `x,re,im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,re,im")?;
        for (j, z) in self.values.iter().enumerate() {
            writeln!(out, "{},{},{}", self.grid.x(j), z.re, z.im)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn random_field(grid: Grid, seed: u64) -> GridField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GridField::from_fn(grid, |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(Grid::new(1.0, 100).is_err());
        assert!(Grid::new(-1.0, 64).is_err());
        let g = Grid::new(8.0, 64).unwrap();
        assert!((g.dx() * 64.0 - 8.0).abs() < 1e-15);
        let freqs = g.frequencies();
        assert_eq!(g.mode(32), -32);
        assert!((freqs[1] + freqs[63]).abs() < 1e-14);
    }

    #[test]
    fn cell_index_and_wrap() {
        let g = Grid::new(4.0, 8).unwrap();
        assert_eq!(g.cell_index(-2.0), 0);
        assert_eq!(g.cell_index(0.0), 4);
        assert_eq!(g.cell_index(0.49), 4);
        assert_eq!(g.cell_index(2.0), 0);
        assert!((g.wrap(2.5) + 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_field_has_zero_norms() {
        let g = Grid::new(8.0, 64).unwrap();
        let f = GridField::zeros(g);
        for s in [-2.0, -1.0, 0.0, 0.5, 2.0] {
            assert_eq!(f.sobolev_norm(s), 0.0);
        }
    }

    #[test]
    fn s_zero_is_l2() {
        let g = Grid::new(10.0, 128).unwrap();
        let f = random_field(g, 1);
        assert!((f.sobolev_norm(0.0) - f.l2_norm()).abs() < 1e-12 * f.l2_norm());
    }

    #[test]
    fn single_mode_h1_norm() {
        let g = Grid::new(2.0 * PI, 64).unwrap();
        let f = GridField::plane_wave(g, 1, 1.0);
        let ratio = f.sobolev_norm(1.0) / f.l2_norm();
        assert!((ratio - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn littlewood_paley_examples() {
        // ξ = 0.5 on L = 4π is mode 1.
        let g = Grid::new(4.0 * PI, 128).unwrap();
        let f = GridField::plane_wave(g, 1, 1.0);
        let low = f.littlewood_paley(1.0, Side::Low);
        assert!(low.sub(&f).sup_norm() < 1e-12);
        // ξ = 3N with N = 1 is mode 6.
        let h = GridField::plane_wave(g, 6, 1.0);
        assert!(h.littlewood_paley(1.0, Side::Low).sup_norm() < 1e-12);
        let r = random_field(g, 4);
        let sum = r.littlewood_paley(2.0, Side::Low).add(&r.littlewood_paley(2.0, Side::High));
        assert!(sum.sub(&r).sup_norm() < 1e-13);
    }

    #[test]
    fn cutoff_examples() {
        let g = Grid::new(16.0, 256).unwrap();
        let f = random_field(g, 2);
        assert_eq!(f.cutoff(16.0), f);
        let one = GridField::from_fn(g, |_| Complex64::new(1.0, 0.0));
        let c = one.cutoff(2.0);
        for (j, z) in c.values.iter().enumerate() {
            assert!((z.re - chi(g.x(j) * 8.0 / 16.0)).abs() < 1e-15);
        }
        let mut last = f64::INFINITY;
        for r in [0.5, 1.0, 2.0, 3.0, 5.0, 8.0] {
            let t = f.tail_norm(r);
            assert!(t <= last + 1e-14);
            last = t;
        }
    }

    #[test]
    fn chi_profile() {
        assert_eq!(chi(0.0), 1.0);
        assert_eq!(chi(1.0), 1.0);
        assert_eq!(chi(-1.0), 1.0);
        assert_eq!(chi(2.0), 0.0);
        assert!(chi(1.5) > 0.0 && chi(1.5) < 1.0);
        assert!((chi(1.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn partition_of_unity() {
        let g = Grid::new(8.0, 128).unwrap();
        let sites: Vec<Vec<f64>> = g.unit_cells().unwrap().map(|k| g.partition_bump(k).unwrap()).collect();
        for j in 0..g.cells() {
            let s: f64 = sites.iter().map(|r| r[j]).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
        let rho0 = g.partition_bump(0).unwrap();
        for (j, &v) in rho0.iter().enumerate() {
            if g.x(j).abs() >= 1.0 {
                assert_eq!(v, 0.0);
            }
        }
        let centre = g.cell_index(0.0);
        assert!((rho0[centre] - 1.0).abs() < 1e-15);
        // periodic wrap: the site at -L/2 also covers points near +L/2
        let edge = g.partition_bump(-4).unwrap();
        assert!(edge[g.cells() - 1] > 0.0);
    }

    #[test]
    fn partition_requires_resolution() {
        let g = Grid::new(8.0, 32).unwrap();
        assert!(matches!(g.partition_bump(0), Err(Error::Resolution(_))));
        let g = Grid::new(2.0 * PI, 128).unwrap();
        assert!(g.partition_bump(0).is_err());
    }

    proptest! {
        #[test]
        fn fft_round_trip(seed in 0u64..1000) {
            let g = Grid::new(5.0, 256).unwrap();
            let f = random_field(g, seed);
            let mut data = f.values.clone();
            g.fft(&mut data);
            g.ifft(&mut data);
            let err = data.iter().zip(&f.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            prop_assert!(err < 1e-12 * f.sup_norm());
        }

        #[test]
        fn sobolev_monotone_in_s(seed in 0u64..1000, s1 in -2.0f64..2.0, ds in 0.0f64..2.0) {
            let g = Grid::new(6.0, 64).unwrap();
            let f = random_field(g, seed);
            let s2 = (s1 + ds).min(2.0);
            prop_assert!(f.sobolev_norm(s1) <= f.sobolev_norm(s2) * (1.0 + 1e-12));
        }

        #[test]
        fn duality_bound(seed in 0u64..1000, s in -2.0f64..2.0) {
            let g = Grid::new(6.0, 64).unwrap();
            let f = random_field(g, seed);
            let h = random_field(g, seed + 10_000);
            let lhs = f.inner(&h).norm();
            prop_assert!(lhs <= f.sobolev_norm(s) * h.sobolev_norm(-s) * (1.0 + 1e-12));
        }

        #[test]
        fn bernstein_bound(seed in 0u64..1000, k in 0u32..5) {
            let g = Grid::new(6.0, 128).unwrap();
            let f = random_field(g, seed);
            let n = 2f64.powi(k as i32);
            let low = f.littlewood_paley(n, Side::Low);
            let bracket = (1.0 + 4.0 * n * n).sqrt();
            prop_assert!(low.sobolev_norm(1.0) <= 2.0 * bracket * f.l2_norm());
        }
    }
}
