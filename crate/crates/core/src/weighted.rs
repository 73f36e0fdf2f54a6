//! Slowly varying envelopes of integer-indexed weights and the weighted norms
//! built from them.
//!
//! For `Z: ℤ → [0, ∞)` the envelope is `𝒩(k)² = 4 + max_ℓ [Z(ℓ)² - |k - ℓ|]`
//! and `ω(·; Z)` interpolates `𝒩(k)²` linearly between consecutive integers.
//! On the torus the index set is periodic and `|k - ℓ|` is the wrap-around
//! distance.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::levy::MeasureWeight;

const ENVELOPE_FLOOR: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSequence {
    first: i64,
    values: Vec<f64>,
}

impl WeightSequence {
    /// Values for the periodic sites `first, first + 1, …`.
    pub fn new(first: i64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("weight sequence needs at least one site".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("weights must be finite and nonnegative, got {v}")));
        }
        Ok(Self { first, values })
    }

    pub fn zeros(sites: Range<i64>) -> Self {
        let n = (sites.end - sites.start).max(1) as usize;
        Self { first: sites.start, values: vec![0.0; n] }
    }

    pub fn sites(&self) -> Range<i64> {
        self.first..self.first + self.values.len() as i64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn slot(&self, k: i64) -> usize {
        (k - self.first).rem_euclid(self.values.len() as i64) as usize
    }

    pub fn get(&self, k: i64) -> f64 {
        self.values[self.slot(k)]
    }

    pub fn envelope(&self) -> Envelope {
        let n = self.values.len();
        let squared = (0..n)
            .map(|k| {
                let best = (0..n)
                    .map(|l| {
                        let d = k.abs_diff(l);
                        let d = d.min(n - d) as f64;
                        self.values[l] * self.values[l] - d
                    })
                    .fold(0.0, f64::max);
                ENVELOPE_FLOOR + best
            })
            .collect();
        Envelope { first: self.first, squared }
    }
}

/// `𝒩(k; Z)²` on the periodic sites together with the interpolated weight `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    first: i64,
    squared: Vec<f64>,
}

impl Envelope {
    pub fn squared_at(&self, k: i64) -> f64 {
        self.squared[(k - self.first).rem_euclid(self.squared.len() as i64) as usize]
    }

    pub fn squared(&self) -> &[f64] {
        &self.squared
    }

    /// `ω(x; Z)` for `x` in torus coordinates.
    pub fn omega(&self, x: f64) -> f64 {
        let k = x.floor();
        let t = x - k;
        let k = k as i64;
        (1.0 - t) * self.squared_at(k) + t * self.squared_at(k + 1)
    }

    pub fn omega_on(&self, grid: Grid) -> Vec<f64> {
        grid.points().into_iter().map(|x| self.omega(x)).collect()
    }
}

/// `‖f‖²_{L²_Z} = ∫ |f|² ω(x; Z) dx` for a precomputed `ω` on the grid.
pub fn weighted_l2_squared(f: &GridField, omega: &[f64]) -> f64 {
    let terms: Vec<f64> = f.values.iter().zip(omega).map(|(z, w)| z.norm_sqr() * w).collect();
    f.grid.integrate(&terms)
}

pub fn weighted_l2_norm(f: &GridField, z: &WeightSequence) -> f64 {
    weighted_l2_squared(f, &z.envelope().omega_on(f.grid)).sqrt()
}

/// `Z_n(k) = μ([k - ½, k + ½))`.
pub fn unit_masses<M: MeasureWeight + ?Sized>(measure: &M) -> Result<WeightSequence> {
    let sites = measure.grid().unit_cells()?;
    WeightSequence::new(sites.start, measure.unit_cell_masses()?)
}

/// `Z_{n,s}(k) = ‖ρ_k (dμ - 1) / √ε‖_{H^{-s}}`, using the grid density.
pub fn local_negative_norms<M: MeasureWeight + ?Sized>(measure: &M, s: f64) -> Result<WeightSequence> {
    check_s(s)?;
    let grid = measure.grid();
    let sites = grid.unit_cells()?;
    let scale = 1.0 / measure.epsilon().sqrt();
    let centred: Vec<f64> = measure.density().iter().map(|d| (d - 1.0) * scale).collect();
    let values = sites
        .clone()
        .map(|k| {
            let rho = grid.partition_bump(k)?;
            let local: Vec<f64> = rho.iter().zip(&centred).map(|(r, c)| r * c).collect();
            Ok(grid.sobolev_norm_real(&local, -s))
        })
        .collect::<Result<Vec<f64>>>()?;
    WeightSequence::new(sites.start, values)
}

fn check_s(s: f64) -> Result<()> {
    if !(s > 0.5 && s <= 1.0) {
        return Err(Error::InvalidArgument(format!("regularity s must lie in (1/2, 1], got {s}")));
    }
    Ok(())
}

/// The weights `ω(·; Z_n)` and `ω(·; Z_{n,s})` for one measure sample, ready
/// to evaluate `X¹` and `Y¹_s` norms of many fields.
#[derive(Debug, Clone)]
pub struct MeasureNorms {
    pub s: f64,
    omega_mass: Vec<f64>,
    omega_local: Vec<f64>,
}

impl MeasureNorms {
    pub fn new<M: MeasureWeight + ?Sized>(measure: &M, s: f64) -> Result<Self> {
        let grid = measure.grid();
        Ok(Self {
            s,
            omega_mass: unit_masses(measure)?.envelope().omega_on(grid),
            omega_local: local_negative_norms(measure, s)?.envelope().omega_on(grid),
        })
    }

    pub fn xn1(&self, f: &GridField) -> f64 {
        let h1 = f.sobolev_norm(1.0);
        (h1 * h1 + weighted_l2_squared(f, &self.omega_mass)).sqrt()
    }

    pub fn yns1(&self, f: &GridField) -> f64 {
        let x = self.xn1(f);
        (x * x + weighted_l2_squared(f, &self.omega_local)).sqrt()
    }
}

pub fn xn1_norm<M: MeasureWeight + ?Sized>(f: &GridField, measure: &M) -> Result<f64> {
    let omega = unit_masses(measure)?.envelope().omega_on(f.grid);
    let h1 = f.sobolev_norm(1.0);
    Ok((h1 * h1 + weighted_l2_squared(f, &omega)).sqrt())
}

pub fn yns1_norm<M: MeasureWeight + ?Sized>(f: &GridField, measure: &M, s: f64) -> Result<f64> {
    Ok(MeasureNorms::new(measure, s)?.yns1(f))
}
