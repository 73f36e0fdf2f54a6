//! Linearization of the cubic equation about a background solution `ψ`:
//!
//! ```text
//! i ∂t u = -∂x² u + 4|ψ|² u + 2ψ² ū,
//! ```
//!
//! its propagator `S(t, τ)`, the white-noise forced fluctuation field
//! `φ(t) = ∫₀ᵗ S(t, τ)[(2/i)|ψ|²ψ ξ] dτ`, the operator `K_t` (the same map with a
//! deterministic profile in place of `ξ`) and its adjoint under the real
//! pairing `Re⟨f, g⟩`, which determines the Gaussian covariance of `φ`.
//!
//! Every step is Strang split: exact free half steps, and in between the exact
//! solution of the pointwise real-linear system `(a, b)' = A (a, b) + forcing`
//! with `ψ` frozen at the step midpoint. Writing `ρ = |ψ|²`, `ψ² = P + iQ`,
//!
//! ```text
//! A = [[2Q, 4ρ - 2P], [-4ρ - 2P, -2Q]],   A² = -ω² I,   ω = 2√3 ρ,
//! ```
//!
//! so `exp(Ah) = cos(ωh) I + sin(ωh)/ω A` and
//! `∫₀ʰ exp(As) ds = sin(ωh)/ω I + (1 - cos ωh)/ω² A`.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::levy::convolve_mollifier;
use crate::nls::{apply_free, free_multiplier, SolverConfig, Trajectory};

/// Largest grid for which dense operators are assembled.
pub const DENSE_LIMIT: usize = 512;

/// A real-linear map on complex grid fields, stored as a dense `2M × 2M`
/// matrix acting on `(Re ψ_0, …, Re ψ_{M-1}, Im ψ_0, …, Im ψ_{M-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealLinearOperator {
    pub grid: Grid,
    pub t: f64,
    pub tau: f64,
    dim: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

pub fn stack(f: &GridField) -> Vec<f64> {
    f.values.iter().map(|z| z.re).chain(f.values.iter().map(|z| z.im)).collect()
}

pub fn unstack(grid: Grid, v: &[f64]) -> GridField {
    let m = grid.cells();
    GridField { grid, values: (0..m).map(|j| Complex64::new(v[j], v[m + j])).collect() }
}

impl RealLinearOperator {
    /// Assemble from the images of the `2M` stacked unit vectors.
    pub fn from_columns(grid: Grid, t: f64, tau: f64, column: impl Fn(usize) -> Result<Vec<f64>> + Sync + Send) -> Result<Self> {
        let dim = 2 * grid.cells();
        let cols: Vec<Vec<f64>> = (0..dim).into_par_iter().map(column).collect::<Result<_>>()?;
        let mut data = vec![0.0; dim * dim];
        for (c, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                data[r * dim + c] = *v;
            }
        }
        Ok(Self { grid, t, tau, dim, data })
    }

    pub fn identity(grid: Grid, t: f64) -> Self {
        let dim = 2 * grid.cells();
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { grid, t, tau: t, dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn apply_stacked(&self, v: &[f64]) -> Vec<f64> {
        self.data.chunks(self.dim).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn apply(&self, f: &GridField) -> GridField {
        unstack(self.grid, &self.apply_stacked(&stack(f)))
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim;
        let mut data = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                data[c * d + r] = self.data[r * d + c];
            }
        }
        Self { grid: self.grid, t: self.tau, tau: self.t, dim: d, data }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        let d = self.dim;
        let mut data = vec![0.0; d * d];
        data.par_chunks_mut(d).enumerate().for_each(|(r, row)| {
            for k in 0..d {
                let a = self.data[r * d + k];
                if a != 0.0 {
                    for (c, out) in row.iter_mut().enumerate() {
                        *out += a * other.data[k * d + c];
                    }
                }
            }
        });
        Self { grid: self.grid, t: self.t, tau: other.tau, dim: d, data }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Spectral norm by power iteration on `AᵀA`.
    pub fn norm(&self) -> f64 {
        let mut v = vec![1.0 / (self.dim as f64).sqrt(); self.dim];
        let mut est = 0.0;
        let t = self.transpose();
        for _ in 0..200 {
            let w = t.apply_stacked(&self.apply_stacked(&v));
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                return 0.0;
            }
            let next = n.sqrt();
            v = w.into_iter().map(|x| x / n).collect();
            if (next - est).abs() < 1e-12 * next {
                return next;
            }
            est = next;
        }
        est
    }

    /// Binary export: an ASCII header line
    /// `sprinkled-operator dim=… t=… tau=… length=… cells=…` followed by the
    /// row-major entries as little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "sprinkled-operator dim={} t={} tau={} length={} cells={}",
            self.dim,
            self.t,
            self.tau,
            self.grid.length(),
            self.grid.cells()
        )?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Real spatial white noise on a grid: i.i.d. `N(0, 1/Δx)` per cell,
/// optionally convolved with `ζʰ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteNoiseSample {
    pub grid: Grid,
    pub h: Option<f64>,
    pub values: Vec<f64>,
}

impl WhiteNoiseSample {
    pub fn as_field(&self) -> GridField {
        GridField::from_real(self.grid, &self.values)
    }
}

pub fn sample_white_noise<R: Rng + ?Sized>(grid: Grid, rng: &mut R, h: Option<f64>) -> Result<WhiteNoiseSample> {
    let sd = 1.0 / grid.dx().sqrt();
    let raw: Vec<f64> = (0..grid.cells())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect();
    let values = match h {
        Some(h) => convolve_mollifier(grid, &raw, h)?,
        None => raw,
    };
    Ok(WhiteNoiseSample { grid, h, values })
}

/// Pointwise data of one step: the 2×2 generator and the exact propagator
/// coefficients, plus the forcing coefficient `-2iρψ`.
struct CellStep {
    a11: f64,
    a12: f64,
    a21: f64,
    cos: f64,
    s1: f64,
    s2: f64,
    force: Complex64,
}

impl CellStep {
    fn new(psi: Complex64, h: f64) -> Self {
        let rho = psi.norm_sqr();
        let sq = psi * psi;
        let (p, q) = (sq.re, sq.im);
        let omega = 2.0 * 3f64.sqrt() * rho;
        let x = omega * h;
        let (cos, s1, s2) = if x.abs() < 1e-4 {
            let x2 = x * x;
            (1.0 - 0.5 * x2, h * (1.0 - x2 / 6.0), 0.5 * h * h * (1.0 - x2 / 12.0))
        } else {
            (x.cos(), x.sin() / omega, (1.0 - x.cos()) / (omega * omega))
        };
        Self {
            a11: 2.0 * q,
            a12: 4.0 * rho - 2.0 * p,
            a21: -4.0 * rho - 2.0 * p,
            cos,
            s1,
            s2,
            force: Complex64::new(0.0, -2.0 * rho) * psi,
        }
    }

    /// `exp(Ah) u + G c`.
    fn advance(&self, u: Complex64, c: Complex64) -> Complex64 {
        let (a, b) = (u.re, u.im);
        let au = (self.a11 * a + self.a12 * b, self.a21 * a - self.a11 * b);
        let ac = (self.a11 * c.re + self.a12 * c.im, self.a21 * c.re - self.a11 * c.im);
        Complex64::new(
            self.cos * a + self.s1 * au.0 + self.s1 * c.re + self.s2 * ac.0,
            self.cos * b + self.s1 * au.1 + self.s1 * c.im + self.s2 * ac.1,
        )
    }

    /// `exp(Ah)ᵀ v`.
    fn propagator_transpose(&self, v: Complex64) -> Complex64 {
        let (x, y) = (v.re, v.im);
        let atv = (self.a11 * x + self.a21 * y, self.a12 * x - self.a11 * y);
        Complex64::new(self.cos * x + self.s1 * atv.0, self.cos * y + self.s1 * atv.1)
    }

    /// `Cᵀ Gᵀ w`, with `C` multiplication by the forcing coefficient.
    fn forcing_transpose(&self, w: Complex64) -> Complex64 {
        let (x, y) = (w.re, w.im);
        let atw = (self.a11 * x + self.a21 * y, self.a12 * x - self.a11 * y);
        let gtw = Complex64::new(self.s1 * x + self.s2 * atw.0, self.s1 * y + self.s2 * atw.1);
        self.force.conj() * gtw
    }
}

/// Propagators built on a stored background trajectory.
pub struct LinearizedFlow<'a> {
    traj: &'a Trajectory,
    grid: Grid,
    dt: f64,
    dealias: bool,
}

impl<'a> LinearizedFlow<'a> {
    pub fn new(traj: &'a Trajectory, cfg: &SolverConfig) -> Result<Self> {
        if traj.grid() != cfg.grid {
            return Err(Error::Alignment("background trajectory and config use different grids".into()));
        }
        Ok(Self { traj, grid: cfg.grid, dt: cfg.dt, dealias: cfg.dealias })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn schedule(&self, from: f64, to: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.traj.span();
        for t in [from, to] {
            if t < lo - 1e-9 || t > hi + 1e-9 {
                return Err(Error::TimeRange { requested: t, start: lo, end: hi });
            }
        }
        if from == to {
            return Ok((0, 0.0));
        }
        let n = ((to - from).abs() / self.dt - 1e-9).ceil().max(1.0) as usize;
        Ok((n, (to - from) / n as f64))
    }

    fn cells(&self, t_mid: f64, h: f64) -> Result<Vec<CellStep>> {
        let psi = self.traj.state_at(t_mid)?;
        Ok(psi.values.iter().map(|&z| CellStep::new(z, h)).collect())
    }

    /// March from `from` to `to`, optionally forced by `profile` (complex,
    /// per cell). Calls `visit(t, u)` after every step.
    fn march(
        &self,
        u: &mut GridField,
        from: f64,
        to: f64,
        profile: Option<&[Complex64]>,
        mut visit: impl FnMut(usize, f64, &GridField),
    ) -> Result<()> {
        let (n, h) = self.schedule(from, to)?;
        let half = free_multiplier(self.grid, 0.5 * h, self.dealias);
        let zero = Complex64::new(0.0, 0.0);
        for k in 0..n {
            let cells = self.cells(from + (k as f64 + 0.5) * h, h)?;
            apply_free(self.grid, &mut u.values, &half);
            for (j, (z, c)) in u.values.iter_mut().zip(&cells).enumerate() {
                let forcing = profile.map_or(zero, |p| c.force * p[j]);
                *z = c.advance(*z, forcing);
            }
            apply_free(self.grid, &mut u.values, &half);
            let t = if k + 1 == n { to } else { from + (k + 1) as f64 * h };
            visit(k + 1, t, u);
        }
        Ok(())
    }

    /// `S(t, τ) u₀`.
    pub fn propagate(&self, u0: &GridField, tau: f64, t: f64) -> Result<GridField> {
        let mut u = u0.clone();
        self.march(&mut u, tau, t, None, |_, _, _| {})?;
        Ok(u)
    }

    /// `K_t f = ∫₀ᵗ S(t, τ)[(2/i)|ψ(τ)|²ψ(τ) f] dτ` for a complex profile `f`.
    pub fn kt_apply(&self, f: &GridField, t: f64) -> Result<GridField> {
        let mut u = GridField::zeros(self.grid);
        self.march(&mut u, 0.0, t, Some(&f.values), |_, _, _| {})?;
        Ok(u)
    }

    /// `φ(t)` forced by `ξ`, stored every `store_every` steps (and at `t_final`).
    pub fn solve_fluctuation(&self, xi: &WhiteNoiseSample, t_final: f64, store_every: usize) -> Result<Trajectory> {
        let profile: Vec<Complex64> = xi.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut u = GridField::zeros(self.grid);
        let mut traj = Trajectory { times: vec![0.0], states: vec![u.clone()], diagnostics: Vec::new() };
        let (n, _) = self.schedule(0.0, t_final)?;
        let every = store_every.max(1);
        self.march(&mut u, 0.0, t_final, Some(&profile), |k, t, state| {
            if k % every == 0 || k == n {
                traj.times.push(t);
                traj.states.push(state.clone());
            }
        })?;
        Ok(traj)
    }

    /// `K_t* f` for each `f`, in one backward sweep (exact transpose of the
    /// discrete forward map with respect to `Re⟨·,·⟩`).
    pub fn kt_adjoint(&self, fs: &[GridField], t: f64) -> Result<Vec<GridField>> {
        let (n, h) = self.schedule(0.0, t)?;
        let back = free_multiplier(self.grid, -0.5 * h, self.dealias);
        let mut vs: Vec<GridField> = fs.to_vec();
        let mut acc: Vec<GridField> = fs.iter().map(|_| GridField::zeros(self.grid)).collect();
        for k in (0..n).rev() {
            let cells = self.cells((k as f64 + 0.5) * h, h)?;
            for (v, a) in vs.iter_mut().zip(acc.iter_mut()) {
                apply_free(self.grid, &mut v.values, &back);
                for ((z, s), c) in v.values.iter_mut().zip(a.values.iter_mut()).zip(&cells) {
                    *s += c.forcing_transpose(*z);
                    *z = c.propagator_transpose(*z);
                }
                apply_free(self.grid, &mut v.values, &back);
            }
        }
        Ok(acc)
    }

    fn guard(&self) -> Result<()> {
        if self.grid.cells() > DENSE_LIMIT {
            return Err(Error::SizeGuard { dim: 2 * self.grid.cells(), limit: 2 * DENSE_LIMIT });
        }
        Ok(())
    }

    fn unit(&self, c: usize) -> GridField {
        let mut v = vec![0.0; 2 * self.grid.cells()];
        v[c] = 1.0;
        unstack(self.grid, &v)
    }

    /// Dense `S(t, τ)`.
    pub fn assemble_propagator(&self, tau: f64, t: f64) -> Result<RealLinearOperator> {
        self.guard()?;
        self.schedule(tau, t)?;
        RealLinearOperator::from_columns(self.grid, t, tau, |c| Ok(stack(&self.propagate(&self.unit(c), tau, t)?)))
    }

    /// Dense `K_t`.
    pub fn assemble_kt(&self, t: f64) -> Result<RealLinearOperator> {
        self.guard()?;
        self.schedule(0.0, t)?;
        RealLinearOperator::from_columns(self.grid, t, 0.0, |c| Ok(stack(&self.kt_apply(&self.unit(c), t)?)))
    }
}

/// `(Re K*f, Re K*(f/i))`: the real noise profiles whose pairings with `ξ`
/// give `Re⟨f, φ⟩` and `Im⟨f, φ⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseResponse {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl NoiseResponse {
    /// Convolve both profiles with `ζʰ` (mollified noise).
    pub fn mollified(&self, grid: Grid, h: f64) -> Result<Self> {
        Ok(Self { re: convolve_mollifier(grid, &self.re, h)?, im: convolve_mollifier(grid, &self.im, h)? })
    }
}

pub fn noise_responses(flow: &LinearizedFlow<'_>, t: f64, fs: &[GridField]) -> Result<Vec<NoiseResponse>> {
    let minus_i = Complex64::new(0.0, -1.0);
    let mut inputs = Vec::with_capacity(2 * fs.len());
    for f in fs {
        inputs.push(f.clone());
        inputs.push(f.scale(minus_i));
    }
    let adj = flow.kt_adjoint(&inputs, t)?;
    Ok(adj
        .chunks(2)
        .map(|p| NoiseResponse {
            re: p[0].values.iter().map(|z| z.re).collect(),
            im: p[1].values.iter().map(|z| z.re).collect(),
        })
        .collect())
}

fn pair(grid: Grid, a: &[f64], b: &[f64]) -> f64 {
    let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    grid.integrate(&p)
}

/// `(E⟨f,φ⟩ conj⟨g,φ⟩, E⟨f,φ⟩⟨g,φ⟩)` from the noise responses of `f` and `g`.
pub fn covariance_from_responses(grid: Grid, f: &NoiseResponse, g: &NoiseResponse) -> (Complex64, Complex64) {
    let aa = pair(grid, &f.re, &g.re);
    let bb = pair(grid, &f.im, &g.im);
    let ab = pair(grid, &f.re, &g.im);
    let ba = pair(grid, &f.im, &g.re);
    (Complex64::new(aa + bb, ba - ab), Complex64::new(aa - bb, ab + ba))
}

/// Covariance and pseudo-covariance of `⟨f, φ(t)⟩` and `⟨g, φ(t)⟩`.
pub fn exact_covariance(
    flow: &LinearizedFlow<'_>,
    t: f64,
    f: &GridField,
    g: &GridField,
    h: Option<f64>,
) -> Result<(Complex64, Complex64)> {
    let mut r = noise_responses(flow, t, &[f.clone(), g.clone()])?;
    if let Some(h) = h {
        r = r.iter().map(|x| x.mollified(flow.grid(), h)).collect::<Result<_>>()?;
    }
    Ok(covariance_from_responses(flow.grid(), &r[0], &r[1]))
}

/// `‖Re K_t* f‖²`, so that `E exp(i Re⟨f, φ(t)⟩) = exp(-½ ‖Re K_t* f‖²)`.
pub fn characteristic_exponent(flow: &LinearizedFlow<'_>, t: f64, f: &GridField) -> Result<f64> {
    let adj = flow.kt_adjoint(std::slice::from_ref(f), t)?;
    let re: Vec<f64> = adj[0].values.iter().map(|z| z.re * z.re).collect();
    Ok(flow.grid().integrate(&re))
}

/// Covariance and pseudo-covariance rebuilt from the quadratic form
/// `Q(h) = ‖Re K_t* h‖²` alone, by polarization.
pub fn covariance_by_polarization(
    flow: &LinearizedFlow<'_>,
    t: f64,
    f: &GridField,
    g: &GridField,
) -> Result<(Complex64, Complex64)> {
    let q = |h: GridField| characteristic_exponent(flow, t, &h);
    let minus_i = Complex64::new(0.0, -1.0);
    let (fi, gi) = (f.scale(minus_i), g.scale(minus_i));
    // E[Re⟨x,φ⟩ Re⟨y,φ⟩] = (Q(x + y) - Q(x - y)) / 4, and Im⟨x,φ⟩ = Re⟨-ix,φ⟩
    let cross = |x: &GridField, y: &GridField| -> Result<f64> { Ok(0.25 * (q(x.add(y))? - q(x.sub(y))?)) };
    let aa = cross(f, g)?;
    let bb = cross(&fi, &gi)?;
    let ab = cross(f, &gi)?;
    let ba = cross(&fi, g)?;
    Ok((Complex64::new(aa + bb, ba - ab), Complex64::new(aa - bb, ab + ba)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nls::{solve_nls, InitialData};
    use crate::stats::Estimate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(cells: usize, t_lo: f64, t_hi: f64, amplitude: f64) -> (Trajectory, SolverConfig) {
        let grid = Grid::new(16.0, cells).unwrap();
        let cfg = SolverConfig::new(grid, 1e-3, t_hi, 1).unwrap();
        let psi0 = InitialData::Gaussian { amplitude, width: 2.0, centre: 0.0 }.on(grid);
        let fwd = solve_nls(&psi0, &cfg).unwrap();
        let traj = if t_lo < 0.0 {
            let back = solve_nls(&psi0, &cfg.with_t_final(t_lo)).unwrap();
            Trajectory::two_sided(back, fwd).unwrap()
        } else {
            fwd
        };
        (traj, cfg)
    }

    fn random_field(grid: Grid, seed: u64) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridField::from_fn(grid, |x| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * (-x * x / 8.0).exp()
        })
    }

    fn rel(a: &GridField, b: &GridField) -> f64 {
        a.sub(b).l2_norm() / b.l2_norm()
    }

    #[test]
    fn zero_background_is_free_flow() {
        let (traj, cfg) = setup(64, -1.0, 1.0, 0.0);
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        let grid = cfg.grid;
        let u0 = GridField::plane_wave(grid, 3, 1.0);
        let xi = 2.0 * PI * 3.0 / 16.0;
        let u = flow.propagate(&u0, -0.4, 0.7).unwrap();
        let exact = u0.scale(Complex64::from_polar(1.0, -xi * xi * 1.1));
        assert!(u.sub(&exact).sup_norm() < 1e-10);
    }

    #[test]
    fn identity_and_flow_property() {
        let (traj, cfg) = setup(128, -1.0, 1.0, 1.0);
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        let u0 = random_field(cfg.grid, 1);
        assert_eq!(flow.propagate(&u0, 0.3, 0.3).unwrap(), u0);
        for (s, tau, t) in [(-1.0, 0.2, 0.9), (0.5, -0.5, 1.0), (0.8, 0.1, -0.6)] {
            let direct = flow.propagate(&u0, s, t).unwrap();
            let composed = flow.propagate(&flow.propagate(&u0, s, tau).unwrap(), tau, t).unwrap();
            assert!(rel(&composed, &direct) < 1e-6, "{s} {tau} {t}");
        }
        // unaligned times: composition differs from the direct solve only by splitting error
        let direct = flow.propagate(&u0, 0.0, 0.5).unwrap();
        let composed = flow.propagate(&flow.propagate(&u0, 0.0, 0.2345).unwrap(), 0.2345, 0.5).unwrap();
        assert!(rel(&composed, &direct) < 1e-4);
        assert!(matches!(flow.propagate(&u0, 0.0, 1.5), Err(Error::TimeRange { .. })));
    }

    #[test]
    fn dense_operators_match_actions() {
        let (traj, cfg) = setup(32, 0.0, 0.3, 1.0);
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        let s = flow.assemble_propagator(0.0, 0.3).unwrap();
        let k = flow.assemble_kt(0.3).unwrap();
        for seed in 0..5 {
            let u = random_field(cfg.grid, seed);
            assert!(s.apply(&u).sub(&flow.propagate(&u, 0.0, 0.3).unwrap()).sup_norm() < 1e-10);
            assert!(k.apply(&u).sub(&flow.kt_apply(&u, 0.3).unwrap()).sup_norm() < 1e-10);
            let scaled = s.apply(&u.scale(Complex64::new(2.5, 0.0)));
            assert!(scaled.sub(&s.apply(&u).scale(Complex64::new(2.5, 0.0))).sup_norm() < 1e-12);
        }
        let id = flow.assemble_propagator(0.2, 0.2).unwrap();
        assert_eq!(id.max_abs_diff(&RealLinearOperator::identity(cfg.grid, 0.2)), 0.0);
        assert!(flow.assemble_kt(0.0).unwrap().max_abs_diff(&RealLinearOperator::identity(cfg.grid, 0.0)) == 1.0);
        // adjoint sweep agrees with the dense transpose
        let kt = k.transpose();
        let f = random_field(cfg.grid, 9);
        let adj = flow.kt_adjoint(std::slice::from_ref(&f), 0.3).unwrap();
        assert!(kt.apply(&f).sub(&adj[0]).sup_norm() < 1e-10);
    }

    #[test]
    fn kt_vanishes_for_trivial_cases() {
        let (traj, cfg) = setup(64, 0.0, 0.5, 0.0);
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        let f = random_field(cfg.grid, 3);
        assert_eq!(flow.kt_apply(&f, 0.5).unwrap().sup_norm(), 0.0);
        let (traj, cfg) = setup(64, 0.0, 0.5, 1.0);
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        assert_eq!(flow.kt_apply(&f, 0.0).unwrap().sup_norm(), 0.0);
        let (c, p) = exact_covariance(&flow, 0.0, &f, &f, None).unwrap();
        assert_eq!((c.norm(), p.norm()), (0.0, 0.0));
    }

    #[test]
    fn duality_holds_to_rounding() {
        let (traj, cfg) = setup(128, 0.0, 0.5, 1.0);
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        for seed in 0..3 {
            let f = random_field(cfg.grid, seed);
            let g = random_field(cfg.grid, seed + 10);
            let lhs = flow.kt_adjoint(std::slice::from_ref(&f), 0.5).unwrap()[0].real_pairing(&g);
            let rhs = f.real_pairing(&flow.kt_apply(&g, 0.5).unwrap());
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0), "{lhs} {rhs}");
        }
    }

    #[test]
    fn fluctuation_is_linear_and_matches_kt() {
        let (traj, cfg) = setup(128, 0.0, 0.5, 1.0);
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = sample_white_noise(cfg.grid, &mut rng, None).unwrap();
        let b = sample_white_noise(cfg.grid, &mut rng, None).unwrap();
        let sum = WhiteNoiseSample { values: a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect(), ..a.clone() };
        let pa = flow.solve_fluctuation(&a, 0.5, 100).unwrap();
        let pb = flow.solve_fluctuation(&b, 0.5, 100).unwrap();
        let ps = flow.solve_fluctuation(&sum, 0.5, 100).unwrap();
        assert_eq!(pa.times.len(), 6);
        assert!(ps.last().sub(&pa.last().add(pb.last())).sup_norm() < 1e-10);
        assert!(flow.kt_apply(&a.as_field(), 0.5).unwrap().sub(pa.last()).sup_norm() < 1e-8);
        let zero = WhiteNoiseSample { values: vec![0.0; 128], ..a };
        assert_eq!(flow.solve_fluctuation(&zero, 0.5, 10).unwrap().last().sup_norm(), 0.0);
    }

    #[test]
    fn polarization_reconstructs_covariance() {
        let (traj, cfg) = setup(128, 0.0, 0.5, 1.0);
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        let f = InitialData::Gaussian { amplitude: 1.0, width: 1.0, centre: 0.5 }.on(cfg.grid);
        let g = InitialData::ModulatedGaussian { amplitude: 1.0, width: 1.5, wavenumber: 2.0, centre: 0.0 }.on(cfg.grid);
        let (c1, p1) = exact_covariance(&flow, 0.5, &f, &g, None).unwrap();
        let (c2, p2) = covariance_by_polarization(&flow, 0.5, &f, &g).unwrap();
        assert!((c1 - c2).norm() < 1e-8 && (p1 - p2).norm() < 1e-8);
        let (cf, _) = exact_covariance(&flow, 0.5, &f, &f, None).unwrap();
        assert!(cf.im.abs() < 1e-12 && cf.re > 0.0);
    }

    #[test]
    fn covariance_matches_monte_carlo() {
        let (traj, cfg) = setup(128, 0.0, 0.5, 1.0);
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        let f = InitialData::Gaussian { amplitude: 1.0, width: 1.0, centre: 0.0 }.on(cfg.grid);
        let resp = noise_responses(&flow, 0.5, std::slice::from_ref(&f)).unwrap();
        let (cov, pcov) = covariance_from_responses(cfg.grid, &resp[0], &resp[0]);
        let draws: Vec<Complex64> = (0..4000)
            .into_par_iter()
            .map(|r| {
                let mut rng = crate::seeding::SeedStream::new(3).rng(0, r, crate::seeding::Purpose::WhiteNoise);
                let xi = sample_white_noise(cfg.grid, &mut rng, None).unwrap();
                // the linear functional through the precomputed responses
                Complex64::new(pair(cfg.grid, &resp[0].re, &xi.values), pair(cfg.grid, &resp[0].im, &xi.values))
            })
            .collect();
        let abs2: Vec<f64> = draws.iter().map(|z| z.norm_sqr()).collect();
        let sq: Vec<f64> = draws.iter().map(|z| (z * z).re).collect();
        assert!(Estimate::of_mean(&abs2).within(cov.re, 4.0));
        assert!(Estimate::of_mean(&sq).within(pcov.re, 4.0));
        // and directly through the forward solver for a handful of draws
        for r in 0..3 {
            let mut rng = crate::seeding::SeedStream::new(3).rng(0, r, crate::seeding::Purpose::WhiteNoise);
            let xi = sample_white_noise(cfg.grid, &mut rng, None).unwrap();
            let phi = flow.solve_fluctuation(&xi, 0.5, 1000).unwrap();
            assert!((f.inner(phi.last()) - draws[r as usize]).norm() < 1e-9);
        }
    }

    #[test]
    fn white_noise_pairing_variance() {
        let grid = Grid::new(16.0, 256).unwrap();
        let f: Vec<f64> = grid.points().iter().map(|x| (-x * x).exp()).collect();
        let norm2 = grid.integrate(&f.iter().map(|v| v * v).collect::<Vec<_>>());
        let smoothed = convolve_mollifier(grid, &f, 0.5).unwrap();
        let norm2_h = grid.integrate(&smoothed.iter().map(|v| v * v).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (mut plain, mut moll) = (Vec::new(), Vec::new());
        for _ in 0..10_000 {
            let xi = sample_white_noise(grid, &mut rng, None).unwrap();
            plain.push(pair(grid, &f, &xi.values).powi(2));
            let xh = WhiteNoiseSample { values: convolve_mollifier(grid, &xi.values, 0.5).unwrap(), h: Some(0.5), ..xi };
            moll.push(pair(grid, &f, &xh.values).powi(2));
        }
        assert!(Estimate::of_mean(&plain).within(norm2, 4.0));
        assert!(Estimate::of_mean(&moll).within(norm2_h, 4.0));
    }

    #[test]
    fn size_guard() {
        let grid = Grid::new(16.0, 1024).unwrap();
        let cfg = SolverConfig::new(grid, 1e-2, 0.02, 1).unwrap();
        let traj = solve_nls(&InitialData::default().on(grid), &cfg).unwrap();
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        assert!(matches!(flow.assemble_kt(0.02), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn operator_norm_growth_is_at_most_exponential() {
        let (traj, cfg) = setup(32, 0.0, 1.0, 1.0);
        let flow = LinearizedFlow::new(&traj, &cfg).unwrap();
        let logs: Vec<f64> = [0.25, 0.5, 1.0]
            .iter()
            .map(|&t| flow.assemble_propagator(0.0, t).unwrap().norm().ln())
            .collect();
        let rate = logs[0] / 0.25;
        assert!(logs.iter().all(|l| *l >= -1e-12));
        assert!(logs[1] <= 2.0 * rate * 0.5 + 1e-9 && logs[2] <= 4.0 * rate * 1.0 + 1e-9, "{logs:?}");
    }

    #[test]
    fn binary_export_has_header() {
        let grid = Grid::new(4.0, 4).unwrap();
        let op = RealLinearOperator::identity(grid, 0.5);
        let mut buf = Vec::new();
        op.write_binary(&mut buf).unwrap();
        let header_end = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(std::str::from_utf8(&buf[..header_end]).unwrap(), "sprinkled-operator dim=8 t=0.5 tau=0.5 length=4 cells=4");
        assert_eq!(buf.len() - header_end - 1, 64 * 8);
    }
}
