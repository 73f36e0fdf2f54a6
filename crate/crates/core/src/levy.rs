//! Stationary independent-increment random measures with unit intensity.
//!
//! A measure is specified by its Lévy measure `Λ` on `(0, ∞)` through
//!
//! ```text
//! Φ(z) = ∫ (1 - s z - e^{-s z}) dΛ(s),
//! E exp(-∫ f dμ_ε) = exp(-(1/ε) ∫ Φ(ε f) + ε f dx).
//! ```
//!
//! Realizations of `μ_ε` live on the periodic grid: a Lebesgue part of
//! density `c = 1 - ∫ s dΛ` plus finitely many atoms, deposited onto the grid
//! with cloud-in-cell weights.

use std::io::Write;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bump, Grid};
use crate::stats::pairwise_sum;

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevyKind {
    /// Unit-intensity Poisson process, `Λ = δ_1`.
    Poisson,
    /// Finitely many jump sizes `(s, p)` with total rate `λ`, `Λ = λ Σ p δ_s`.
    /// When `rate` is omitted it is chosen so that `∫ s² dΛ = 1`.
    CompoundPoisson {
        jumps: Vec<(f64, f64)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
    },
    /// Gamma process, `Λ(ds) = s⁻¹ e^{-s} ds`.
    Gamma,
    /// Degenerate test measure: Lebesgue measure itself (`Λ = 0`).
    Lebesgue,
}

fn default_radius() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevySpec {
    #[serde(flatten)]
    pub kind: LevyKind,
    /// Exponential-moment radius: `∫ s e^{a s} dΛ < ∞`.
    #[serde(default = "default_radius")]
    pub a: f64,
}

impl LevySpec {
    pub fn poisson() -> Self {
        Self { kind: LevyKind::Poisson, a: 1.0 }
    }

    pub fn gamma() -> Self {
        Self { kind: LevyKind::Gamma, a: 0.5 }
    }

    pub fn lebesgue() -> Self {
        Self { kind: LevyKind::Lebesgue, a: 1.0 }
    }

    /// Compound Poisson law with the rate fixed by `∫ s² dΛ = 1`.
    pub fn compound_poisson(jumps: Vec<(f64, f64)>) -> Result<Self> {
        let spec = Self {
            kind: LevyKind::CompoundPoisson { jumps, rate: None },
            a: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            LevyKind::Poisson => "poisson",
            LevyKind::CompoundPoisson { .. } => "compound_poisson",
            LevyKind::Gamma => "gamma",
            LevyKind::Lebesgue => "lebesgue",
        }
    }

    /// Total jump rate `Λ((0, ∞))`; `None` for infinite activity.
    pub fn total_rate(&self) -> Option<f64> {
        match &self.kind {
            LevyKind::Poisson => Some(1.0),
            LevyKind::CompoundPoisson { .. } => Some(self.compound_rate()),
            LevyKind::Gamma => None,
            LevyKind::Lebesgue => Some(0.0),
        }
    }

    fn compound_rate(&self) -> f64 {
        match &self.kind {
            LevyKind::CompoundPoisson { jumps, rate } => rate.unwrap_or_else(|| {
                1.0 / jumps.iter().map(|(s, p)| p * s * s).sum::<f64>()
            }),
            _ => unreachable!(),
        }
    }

    /// `∫ s^j dΛ(s)`.
    pub fn moment(&self, j: u32) -> f64 {
        match &self.kind {
            LevyKind::Poisson => 1.0,
            LevyKind::CompoundPoisson { jumps, .. } => {
                self.compound_rate() * jumps.iter().map(|(s, p)| p * s.powi(j as i32)).sum::<f64>()
            }
            // ∫ s^{j-1} e^{-s} ds = (j-1)!
            LevyKind::Gamma => (1..j).map(f64::from).product(),
            LevyKind::Lebesgue => 0.0,
        }
    }

    /// Density `c = 1 - ∫ s dΛ` of the Lebesgue component.
    pub fn lebesgue_density(&self) -> f64 {
        match self.kind {
            LevyKind::Lebesgue => 1.0,
            _ => 1.0 - self.moment(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::InvalidSpec(format!("radius a must be positive, got {}", self.a)));
        }
        match &self.kind {
            LevyKind::Poisson | LevyKind::Lebesgue => {}
            LevyKind::Gamma => {
                if self.a >= 1.0 {
                    return Err(Error::InvalidSpec(format!(
                        "Gamma Lévy measure has exponential moments only for a < 1, got {}",
                        self.a
                    )));
                }
            }
            LevyKind::CompoundPoisson { jumps, rate } => {
                if jumps.is_empty() {
                    return Err(Error::InvalidSpec("compound Poisson needs at least one jump".into()));
                }
                for &(s, p) in jumps {
                    if !(s.is_finite() && s > 0.0) {
                        return Err(Error::InvalidSpec(format!("jump size must be positive, got {s}")));
                    }
                    if !(p.is_finite() && p > 0.0) {
                        return Err(Error::InvalidSpec(format!("jump probability must be positive, got {p}")));
                    }
                }
                let total: f64 = jumps.iter().map(|(_, p)| p).sum();
                if (total - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidSpec(format!("jump probabilities sum to {total}, not 1")));
                }
                if let Some(r) = rate {
                    if !(r.is_finite() && *r > 0.0) {
                        return Err(Error::InvalidSpec(format!("rate must be positive, got {r}")));
                    }
                }
            }
        }
        if !matches!(self.kind, LevyKind::Lebesgue) {
            let m1 = self.moment(1);
            let m2 = self.moment(2);
            if !(m1 > 0.0 && m1 <= 1.0 + NORMALIZATION_TOL) {
                return Err(Error::InvalidSpec(format!(
                    "first moment ∫s dΛ = {m1} must lie in (0, 1] for a nonnegative Lebesgue part"
                )));
            }
            if (m2 - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidSpec(format!(
                    "second moment ∫s² dΛ = {m2} must equal 1"
                )));
            }
        }
        Ok(())
    }

    /// `Φ(z)`, defined for `Re z > -a`.
    pub fn phi(&self, z: Complex64) -> Result<Complex64> {
        if !(z.re > -self.a) {
            return Err(Error::AnalyticityDomain { z: format!("{z}"), bound: -self.a });
        }
        Ok(match &self.kind {
            LevyKind::Poisson => poisson_phi(z),
            LevyKind::CompoundPoisson { jumps, .. } => {
                let sum: Complex64 = jumps.iter().map(|&(s, p)| p * poisson_phi(z * s)).sum();
                sum * self.compound_rate()
            }
            LevyKind::Gamma => gamma_phi(z),
            LevyKind::Lebesgue => Complex64::new(0.0, 0.0),
        })
    }

    /// `∂_z^J Φ(0) = -(-1)^J ∫ s^J dΛ` for `J >= 2`, and 0 for `J = 1`.
    pub fn phi_derivative(&self, order: u32) -> f64 {
        assert!(order >= 1, "derivative order must be at least 1");
        if order == 1 {
            return 0.0;
        }
        let sign = if order % 2 == 0 { -1.0 } else { 1.0 };
        sign * self.moment(order)
    }

    /// Draw one realization of `μ_ε` on `grid`.
    pub fn sample<R: Rng + ?Sized>(&self, epsilon: f64, grid: Grid, rng: &mut R) -> Result<SampledMeasure> {
        self.validate()?;
        check_epsilon(epsilon)?;
        let length = grid.length();
        let mut atoms = Vec::new();
        match &self.kind {
            LevyKind::Poisson | LevyKind::CompoundPoisson { .. } => {
                let rate = self.total_rate().unwrap_or(0.0);
                let expected = rate * length / epsilon;
                let count = Poisson::new(expected)
                    .map_err(|e| Error::InvalidArgument(format!("Poisson mean {expected}: {e}")))?
                    .sample(rng) as usize;
                let jumps: Vec<(f64, f64)> = match &self.kind {
                    LevyKind::CompoundPoisson { jumps, .. } => jumps.clone(),
                    _ => vec![(1.0, 1.0)],
                };
                atoms.reserve(count);
                for _ in 0..count {
                    let position = -0.5 * length + length * rng.random::<f64>();
                    let size = pick_jump(&jumps, rng.random::<f64>());
                    atoms.push(Atom { position, weight: epsilon * size });
                }
                atoms.sort_by(|a, b| a.position.total_cmp(&b.position));
            }
            LevyKind::Gamma => {
                let law = Gamma::new(grid.dx() / epsilon, epsilon)
                    .map_err(|e| Error::InvalidArgument(format!("Gamma law: {e}")))?;
                for j in 0..grid.cells() {
                    let weight = law.sample(rng);
                    if weight > 0.0 {
                        atoms.push(Atom { position: grid.x(j), weight });
                    }
                }
            }
            LevyKind::Lebesgue => {}
        }
        Ok(SampledMeasure::new(grid, epsilon, self.lebesgue_density(), atoms))
    }

    /// Closed-form `E exp(-∫ f dμ_ε)` for `f` piecewise constant on grid cells.
    pub fn laplace_functional_exact(&self, epsilon: f64, grid: Grid, f: &[f64]) -> Result<f64> {
        check_epsilon(epsilon)?;
        assert_eq!(f.len(), grid.cells());
        let terms = f
            .iter()
            .map(|&v| Ok((self.phi(Complex64::new(epsilon * v, 0.0))?.re + epsilon * v) / epsilon))
            .collect::<Result<Vec<f64>>>()?;
        Ok((-grid.integrate(&terms)).exp())
    }

    /// Closed-form `E exp(i ε^{-1/2} (∫ F dμ_ε - ∫ F dx))` for real `F`.
    pub fn characteristic_functional_exact(&self, epsilon: f64, grid: Grid, f: &[f64]) -> Result<Complex64> {
        check_epsilon(epsilon)?;
        assert_eq!(f.len(), grid.cells());
        let root = epsilon.sqrt();
        let values = f
            .iter()
            .map(|&v| self.phi(Complex64::new(0.0, -root * v)))
            .collect::<Result<Vec<Complex64>>>()?;
        let re: Vec<f64> = values.iter().map(|z| z.re).collect();
        let im: Vec<f64> = values.iter().map(|z| z.im).collect();
        let exponent = Complex64::new(grid.integrate(&re), grid.integrate(&im)) / epsilon;
        Ok((-exponent).exp())
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    Ok(())
}

fn pick_jump(jumps: &[(f64, f64)], u: f64) -> f64 {
    let mut acc = 0.0;
    for &(s, p) in jumps {
        acc += p;
        if u < acc {
            return s;
        }
    }
    jumps.last().map(|j| j.0).unwrap_or(1.0)
}

/// `1 - z - e^{-z}`, with a Taylor series near the origin to avoid cancellation.
fn poisson_phi(z: Complex64) -> Complex64 {
    if z.norm() < 0.5 {
        // -Σ_{k>=2} (-z)^k / k!
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        for k in 1..=30 {
            term *= -z / k as f64;
            if k >= 2 {
                sum += term;
            }
        }
        -sum
    } else {
        Complex64::new(1.0, 0.0) - z - (-z).exp()
    }
}

/// `log(1 + z) - z`, the Gamma-process exponent.
fn gamma_phi(z: Complex64) -> Complex64 {
    if z.norm() < 0.25 {
        // Σ_{k>=2} (-1)^{k+1} z^k / k
        let mut power = z;
        let mut sum = Complex64::new(0.0, 0.0);
        for k in 2..=40 {
            power *= z;
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            sum += sign * power / k as f64;
        }
        sum
    } else {
        (Complex64::new(1.0, 0.0) + z).ln() - z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: f64,
    pub weight: f64,
}

/// One realization of `μ_ε` on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMeasure {
    pub grid: Grid,
    pub epsilon: f64,
    pub lebesgue_density: f64,
    pub atoms: Vec<Atom>,
    /// Cloud-in-cell deposited density at the grid points (units 1/length).
    pub cell_density: Vec<f64>,
}

impl SampledMeasure {
    pub fn new(grid: Grid, epsilon: f64, lebesgue_density: f64, atoms: Vec<Atom>) -> Self {
        let cell_density = deposit(grid, lebesgue_density, &atoms);
        Self { grid, epsilon, lebesgue_density, atoms, cell_density }
    }

    /// Lebesgue measure on `grid`.
    pub fn lebesgue(grid: Grid, epsilon: f64) -> Self {
        Self::new(grid, epsilon, 1.0, Vec::new())
    }

    /// The zero measure.
    pub fn zero(grid: Grid, epsilon: f64) -> Self {
        Self::new(grid, epsilon, 0.0, Vec::new())
    }

    pub fn total_mass(&self) -> f64 {
        let w: Vec<f64> = self.atoms.iter().map(|a| a.weight).collect();
        self.lebesgue_density * self.grid.length() + pairwise_sum(&w)
    }

    /// `∫ f dμ` for `f` piecewise constant on the cells `[x_j, x_j + Δx)`.
    pub fn integrate_cells(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.grid.cells());
        let atoms: Vec<f64> = self
            .atoms
            .iter()
            .map(|a| a.weight * f[self.grid.cell_index(a.position)])
            .collect();
        pairwise_sum(&atoms) + self.lebesgue_density * self.grid.integrate(f)
    }

    /// `∫ f dμ` with `f` evaluated exactly at atom positions.
    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64, lebesgue_integral: f64) -> f64 {
        let atoms: Vec<f64> = self.atoms.iter().map(|a| a.weight * f(a.position)).collect();
        pairwise_sum(&atoms) + self.lebesgue_density * lebesgue_integral
    }

    /// `μ([lo, hi))` on the torus, by exact atom membership.
    pub fn mass_in(&self, lo: f64, hi: f64) -> f64 {
        let width = hi - lo;
        assert!(width >= 0.0 && width <= self.grid.length());
        let length = self.grid.length();
        let inside: Vec<f64> = self
            .atoms
            .iter()
            .filter(|a| (a.position - lo).rem_euclid(length) < width)
            .map(|a| a.weight)
            .collect();
        pairwise_sum(&inside) + self.lebesgue_density * width
    }

    /// Write `position,weight` rows preceded by a `# c=…,epsilon=…,length=…` line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# c={},epsilon={},length={}",
            self.lebesgue_density,
            self.epsilon,
            self.grid.length()
        )?;
        writeln!(out, "position,weight")?;
        for a in &self.atoms {
            writeln!(out, "{},{}", a.position, a.weight)?;
        }
        Ok(())
    }
}

fn deposit(grid: Grid, lebesgue_density: f64, atoms: &[Atom]) -> Vec<f64> {
    let m = grid.cells();
    let dx = grid.dx();
    let mut density = vec![lebesgue_density; m];
    for a in atoms {
        let u = (grid.wrap(a.position) + 0.5 * grid.length()) / dx;
        let base = u.floor();
        let frac = u - base;
        let j = (base as usize) % m;
        density[j] += a.weight * (1.0 - frac) / dx;
        density[(j + 1) % m] += a.weight * frac / dx;
    }
    density
}

/// `∫_{-1}^{1} exp(-1/(1-x²)) dx`.
pub fn bump_normalizer() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        // The integrand is flat to all orders at ±1, so the trapezoid rule
        // converges faster than any power of the step.
        let n = 20_000;
        let h = 2.0 / n as f64;
        let vals: Vec<f64> = (1..n).map(|i| bump(-1.0 + i as f64 * h)).collect();
        pairwise_sum(&vals) * h
    })
}

/// Unit-mass mollifier `ζ^h(x) = h⁻¹ ζ(x/h)`, `ζ = bump / C_ζ`.
pub fn mollifier(x: f64, h: f64) -> f64 {
    bump(x / h) / (h * bump_normalizer())
}

/// `ζ^h * μ_ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedMeasure {
    pub base: SampledMeasure,
    pub h: f64,
    pub density: Vec<f64>,
}

pub fn check_mollifier_scale(grid: Grid, h: f64) -> Result<()> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::InvalidArgument(format!("mollifier scale must lie in (0, 1], got {h}")));
    }
    if h < 2.0 * grid.dx() - 1e-12 {
        return Err(Error::Resolution(format!(
            "mollifier scale {h} is below 2·dx = {}",
            2.0 * grid.dx()
        )));
    }
    Ok(())
}

/// Convolve the atoms with `ζ^h` (periodically). Each atom's sampled kernel is
/// renormalized to unit discrete mass, so the total mass is preserved exactly.
pub fn mollify(measure: &SampledMeasure, h: f64) -> Result<MollifiedMeasure> {
    let grid = measure.grid;
    check_mollifier_scale(grid, h)?;
    let m = grid.cells();
    let dx = grid.dx();
    let reach = (h / dx).ceil() as i64 + 1;
    let mut density = vec![measure.lebesgue_density; m];
    let mut weights = Vec::with_capacity(2 * reach as usize + 1);
    for a in &measure.atoms {
        let u = (grid.wrap(a.position) + 0.5 * grid.length()) / dx;
        let centre = u.floor() as i64;
        weights.clear();
        for off in -reach..=reach {
            let j = centre + off;
            let offset = (j as f64 - u) * dx;
            weights.push((j.rem_euclid(m as i64) as usize, mollifier(offset, h)));
        }
        let total: f64 = weights.iter().map(|w| w.1).sum::<f64>() * dx;
        for &(j, w) in &weights {
            density[j] += a.weight * w / total;
        }
    }
    Ok(MollifiedMeasure { base: measure.clone(), h, density })
}

/// Periodic convolution of a grid function with `ζ^h`, using the kernel
/// sampled at grid offsets and normalized to unit discrete mass. The kernel
/// is even, so the map is symmetric for `∫ f g dx`.
pub fn convolve_mollifier(grid: Grid, f: &[f64], h: f64) -> Result<Vec<f64>> {
    check_mollifier_scale(grid, h)?;
    let m = grid.cells() as i64;
    let dx = grid.dx();
    let reach = ((h / dx).ceil() as i64).min(m / 2);
    let mut kernel: Vec<f64> = (-reach..=reach).map(|o| mollifier(o as f64 * dx, h)).collect();
    let total = pairwise_sum(&kernel) * dx;
    kernel.iter_mut().for_each(|k| *k /= total);
    Ok((0..m)
        .map(|j| {
            let terms: Vec<f64> = (-reach..=reach)
                .zip(&kernel)
                .map(|(o, k)| k * f[(j - o).rem_euclid(m) as usize])
                .collect();
            pairwise_sum(&terms) * dx
        })
        .collect())
}

/// Anything that can weight the cubic nonlinearity on a grid.
pub trait MeasureWeight: Sync {
    fn grid(&self) -> Grid;
    fn epsilon(&self) -> f64;
    /// Density `dμ/dx` sampled at the grid points.
    fn density(&self) -> &[f64];
    /// `μ([k - ½, k + ½))` for the unit sites of the grid.
    fn unit_cell_masses(&self) -> Result<Vec<f64>>;
}

impl MeasureWeight for SampledMeasure {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn density(&self) -> &[f64] {
        &self.cell_density
    }

    fn unit_cell_masses(&self) -> Result<Vec<f64>> {
        Ok(self.grid.unit_cells()?.map(|k| self.mass_in(k as f64 - 0.5, k as f64 + 0.5)).collect())
    }
}

impl MeasureWeight for MollifiedMeasure {
    fn grid(&self) -> Grid {
        self.base.grid
    }

    fn epsilon(&self) -> f64 {
        self.base.epsilon
    }

    fn density(&self) -> &[f64] {
        &self.density
    }

    fn unit_cell_masses(&self) -> Result<Vec<f64>> {
        let grid = self.base.grid;
        let sites = grid.unit_cells()?;
        let mut masses = vec![0.0; sites.clone().count()];
        let first = sites.start;
        for (j, d) in self.density.iter().enumerate() {
            let k = (grid.x(j) + 0.5).floor() as i64;
            let k = (k - first).rem_euclid(masses.len() as i64) as usize;
            masses[k] += d * grid.dx();
        }
        Ok(masses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn compound() -> LevySpec {
        LevySpec::compound_poisson(vec![(0.5, 0.5), (2.0, 0.5)]).unwrap()
    }

    fn specs() -> Vec<LevySpec> {
        vec![LevySpec::poisson(), compound(), LevySpec::gamma()]
    }

    /// Composite Simpson quadrature on [a, b].
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn phi_examples() {
        let p = LevySpec::poisson();
        assert_eq!(p.phi(c(0.0, 0.0)).unwrap(), c(0.0, 0.0));
        let v = p.phi(c(1.0, 0.0)).unwrap();
        assert!((v.re + (-1f64).exp()).abs() < 1e-15);
        assert!((v.re + 0.3678794).abs() < 1e-7);

        let g = LevySpec::gamma();
        let v = g.phi(c(1.0, 0.0)).unwrap();
        assert!((v.re - (2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((v.re + 0.3068528).abs() < 1e-7);
    }

    #[test]
    fn gamma_phi_matches_quadrature() {
        // ∫_0^∞ (1 - s z - e^{-sz}) s^{-1} e^{-s} ds after s = t/(1-t).
        let g = LevySpec::gamma();
        for z in [0.3, 1.0, 2.5, -0.4] {
            let integrand = |t: f64| {
                if t <= 0.0 || t >= 1.0 {
                    return 0.0;
                }
                let s = t / (1.0 - t);
                let jac = 1.0 / ((1.0 - t) * (1.0 - t));
                ((1.0 - s * z) * (-s).exp() - (-s * (1.0 + z)).exp()) / s * jac
            };
            let quad = simpson(integrand, 0.0, 1.0, 200_000);
            let exact = g.phi(c(z, 0.0)).unwrap().re;
            assert!((quad - exact).abs() < 1e-8, "z={z}: {quad} vs {exact}");
        }
    }

    #[test]
    fn phi_domain_is_enforced() {
        let g = LevySpec::gamma();
        assert!(matches!(g.phi(c(-0.6, 0.0)), Err(Error::AnalyticityDomain { .. })));
        assert!(g.phi(c(-0.4, 3.0)).is_ok());
    }

    #[test]
    fn phi_derivatives() {
        let p = LevySpec::poisson();
        assert_eq!(p.phi_derivative(1), 0.0);
        assert_eq!(p.phi_derivative(2), -1.0);
        assert_eq!(p.phi_derivative(3), 1.0);
        assert_eq!(LevySpec::gamma().phi_derivative(3), 2.0);
        assert_eq!(LevySpec::gamma().phi_derivative(4), -6.0);
    }

    #[test]
    fn phi_derivatives_match_finite_differences() {
        // central differences of phi at 0 with step 1e-2 (accurate to ~1e-5 relative)
        let h = 1e-2;
        for spec in specs() {
            let f = |x: f64| spec.phi(c(x, 0.0)).unwrap().re;
            let d2 = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
            let d3 = (f(2.0 * h) - 2.0 * f(h) + 2.0 * f(-h) - f(-2.0 * h)) / (2.0 * h * h * h);
            assert!((d2 - spec.phi_derivative(2)).abs() < 1e-4, "{}", spec.name());
            assert!((d3 - spec.phi_derivative(3)).abs() < 1e-3, "{}", spec.name());
        }
    }

    #[test]
    fn supported_specs_are_normalized() {
        for spec in specs() {
            spec.validate().unwrap();
            assert!(spec.phi(c(0.0, 0.0)).unwrap().norm() < 1e-15);
            assert!(spec.phi_derivative(1).abs() < 1e-10);
            assert!((spec.phi_derivative(2) + 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn series_branch_is_continuous() {
        for spec in [LevySpec::poisson(), LevySpec::gamma()] {
            for r in [0.2499999, 0.2500001, 0.4999999, 0.5000001] {
                let z = c(r * 0.6, r * 0.8);
                let a = spec.phi(z).unwrap();
                let b = spec.phi(z * (1.0 + 1e-9)).unwrap();
                assert!((a - b).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = LevySpec {
            kind: LevyKind::CompoundPoisson { jumps: vec![(1.0, 1.0)], rate: Some(2.0) },
            a: 1.0,
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidSpec(_))));
        // m2 = 1 forces m1 = 4 here, violating c >= 0
        assert!(LevySpec::compound_poisson(vec![(0.25, 1.0)]).is_err());
        assert!(LevySpec::compound_poisson(vec![(1.0, 0.4), (2.0, 0.4)]).is_err());
        assert!(LevySpec { kind: LevyKind::Gamma, a: 1.5 }.validate().is_err());
        let grid = Grid::new(8.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(bad.sample(0.5, grid, &mut rng).is_err());
        assert!(LevySpec::poisson().sample(1.5, grid, &mut rng).is_err());
    }

    #[test]
    fn deposition_conserves_mass() {
        let grid = Grid::new(32.0, 512).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in specs() {
            for eps in [1.0, 0.1] {
                let m = spec.sample(eps, grid, &mut rng).unwrap();
                let deposited = grid.integrate(&m.cell_density);
                assert!((deposited - m.total_mass()).abs() < 1e-12 * m.total_mass());
                assert!(m.cell_density.iter().all(|&d| d >= 0.0));
                assert!(m.atoms.iter().all(|a| a.weight > 0.0 && a.position >= -16.0 && a.position < 16.0));
            }
        }
    }

    #[test]
    fn lebesgue_component_matches_spec() {
        let grid = Grid::new(8.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = compound();
        let m = spec.sample(0.5, grid, &mut rng).unwrap();
        assert!((m.lebesgue_density - (1.0 - spec.moment(1))).abs() < 1e-15);
        let l = LevySpec::lebesgue().sample(0.3, grid, &mut rng).unwrap();
        assert!(l.atoms.is_empty());
        assert!(l.cell_density.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn laplace_functional_examples() {
        let grid = Grid::new(8.0, 64).unwrap();
        let zero = vec![0.0; 64];
        for spec in specs() {
            assert_eq!(spec.laplace_functional_exact(0.3, grid, &zero).unwrap(), 1.0);
        }
        let ind: Vec<f64> = grid.points().iter().map(|&x| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 }).collect();
        let v = LevySpec::poisson().laplace_functional_exact(1.0, grid, &ind).unwrap();
        // E e^{-N}, N ~ Poisson(1)
        let oracle = ((-1f64).exp() - 1.0).exp();
        assert!((v - oracle).abs() < 1e-14);
        assert!((v - 0.5315).abs() < 1e-4);
        let neg: Vec<f64> = vec![-3.0; 64];
        assert!(LevySpec::poisson().laplace_functional_exact(0.5, grid, &neg).is_err());
    }

    #[test]
    fn characteristic_functional_examples() {
        let grid = Grid::new(8.0, 64).unwrap();
        let zero = vec![0.0; 64];
        let one = LevySpec::poisson().characteristic_functional_exact(0.01, grid, &zero).unwrap();
        assert_eq!(one, c(1.0, 0.0));
        let ind: Vec<f64> = grid.points().iter().map(|&x| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 }).collect();
        let v = LevySpec::poisson().characteristic_functional_exact(0.01, grid, &ind).unwrap();
        // Characteristic function of sqrt(ε)(N - 1/ε), N ~ Poisson(1/ε)
        let lam: f64 = 100.0;
        let t: f64 = 0.1;
        let oracle = (c(0.0, t).exp() - 1.0).scale(lam).exp() * c(0.0, -t * lam).exp();
        assert!((v - oracle).norm() < 1e-12);
        assert!((v.norm() - 0.6065).abs() < 1e-3);
        assert!((v.arg() + 0.01666).abs() < 1e-5);
        // small-ε limit → exp(-½‖F‖²) = exp(-½)
        let tiny = LevySpec::poisson().characteristic_functional_exact(1e-8, grid, &ind).unwrap();
        assert!((tiny - c((-0.5f64).exp(), 0.0)).norm() < 1e-3);
    }

    #[test]
    fn poisson_atom_count_has_unit_rate() {
        let grid = Grid::new(32.0, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let counts: Vec<f64> = (0..2000)
            .map(|_| LevySpec::poisson().sample(1.0, grid, &mut rng).unwrap().atoms.len() as f64)
            .collect();
        let est = crate::stats::Estimate::of_mean(&counts);
        assert!(est.within(32.0, 4.0), "{est:?}");
    }

    #[test]
    fn mass_in_uses_exact_membership() {
        let grid = Grid::new(8.0, 64).unwrap();
        let atoms = vec![
            Atom { position: -0.5, weight: 1.0 },
            Atom { position: 0.49, weight: 2.0 },
            Atom { position: 0.5, weight: 4.0 },
            Atom { position: 3.9, weight: 8.0 },
        ];
        let m = SampledMeasure::new(grid, 1.0, 0.25, atoms);
        assert!((m.mass_in(-0.5, 0.5) - (3.0 + 0.25)).abs() < 1e-15);
        // wrap-around cell [3.5, 4.5) ≡ [3.5, 4) ∪ [-4, -3.5)
        assert!((m.mass_in(3.5, 4.5) - (8.0 + 0.25)).abs() < 1e-15);
        let masses = m.unit_cell_masses().unwrap();
        assert_eq!(masses.len(), 8);
        assert!((masses.iter().sum::<f64>() - m.total_mass()).abs() < 1e-12);
    }

    #[test]
    fn bump_normalizer_matches_simpson() {
        let oracle = simpson(bump, -1.0, 1.0, 200_000);
        assert!((bump_normalizer() - oracle).abs() < 1e-10);
        assert!((bump_normalizer() - 0.443994).abs() < 1e-6);
    }

    #[test]
    fn mollify_examples() {
        let grid = Grid::new(8.0, 512).unwrap();
        let leb = SampledMeasure::lebesgue(grid, 0.1);
        let m = mollify(&leb, 0.5).unwrap();
        assert!(m.density.iter().all(|&d| (d - 1.0).abs() < 1e-15));

        let single = SampledMeasure::new(grid, 1.0, 1.0, vec![Atom { position: 0.0, weight: 1.0 }]);
        let m = mollify(&single, 0.5).unwrap();
        let mass = grid.integrate(&m.density);
        assert!((mass - (1.0 + 8.0)).abs() < 1e-10);
        let peak = m.density.iter().cloned().fold(0.0, f64::max) - 1.0;
        let expected = 2.0 * (-1f64).exp() / bump_normalizer();
        assert!((peak - expected).abs() < 1e-3 * expected, "{peak} vs {expected}");

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in specs() {
            let s = spec.sample(0.1, grid, &mut rng).unwrap();
            for h in [1.0, 0.5, 0.1, 2.0 * grid.dx()] {
                let m = mollify(&s, h).unwrap();
                let before = s.total_mass();
                assert!((grid.integrate(&m.density) - before).abs() < 1e-10 * before);
            }
        }
        assert!(matches!(mollify(&leb, grid.dx()), Err(Error::Resolution(_))));
    }

    #[test]
    fn csv_header_and_rows() {
        let grid = Grid::new(8.0, 64).unwrap();
        let m = SampledMeasure::new(grid, 0.5, 0.25, vec![Atom { position: 1.5, weight: 0.5 }]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# c=0.25,epsilon=0.5,length=8");
        assert_eq!(lines[1], "position,weight");
        assert_eq!(lines[2], "1.5,0.5");
    }
}
