//! Seeded Monte Carlo experiments: homogenization of the randomly weighted
//! flow, the scalar CLT for `∫F dμ_ε`, Gaussian fluctuations of
//! `φ_ε = (ψ_ε - ψ)/√ε`, their mollified variants and Haar statistics.
//!
//! Test-profile pairings use `⟨f, φ⟩ = ∫ f φ̄ dx` ([`GridField::inner`]).
//! Measure draws for ε-index `i` and replica `r` come from stream
//! `(i, r, Measure)`, so every experiment sharing a config sees the same
//! measures.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

pub use config::{CltParams, ConfigIssue, ExperimentConfig, GridParams, HaarParams, SolverParams};
pub use output::{Aggregate, EnsembleResult, Line, Manifest, Record, TestStat};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::haar::{empirical_cumulants, weighted_negative_norm_moment, HaarIndex};
use crate::levy::mollify;
use crate::linearized::{covariance_from_responses, noise_responses, sample_white_noise, LinearizedFlow, NoiseResponse};
use crate::nls::{conservation_drift, difference_norms, max_leakage, solve_nls, solve_nls_measure, SolverConfig, Trajectory};
use crate::seeding::{Purpose, SeedStream};
use crate::stats::{
    anderson_darling_normal, fitted_slope, grouped_jackknife, ks_distance_normal, ks_two_sample,
    ks_two_sample_critical_1pct, mean, pairwise_sum, variance, Estimate, ANDERSON_DARLING_CRITICAL_1PCT,
};
use crate::weighted::MeasureNorms;

const LIMIT_TASK: u32 = 1 << 20;
const BOOTSTRAP_TASK: u32 = 2 << 20;
const MOMENT_TASK: u32 = 3 << 20;
const BOOTSTRAP_RESAMPLES: usize = 200;
/// One-sample Kolmogorov–Smirnov 1% critical value, times `√n`.
const KS_CRITICAL_1PCT: f64 = 1.628;

pub const DIFFERENCE_METRICS: [&str; 4] = ["sup_h_minus1", "sup_linf", "sup_h1", "sup_h1_sq_gap"];

struct Context {
    grid: Grid,
    solver: SolverConfig,
    psi0: GridField,
    seeds: SeedStream,
}

impl Context {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        if let Some(issue) = cfg.issues().into_iter().next() {
            return Err(Error::Config(format!("{}: {}", issue.key, issue.message)));
        }
        let grid = cfg.grid()?;
        Ok(Self { grid, solver: cfg.solver_config()?, psi0: cfg.initial.on(grid), seeds: SeedStream::new(cfg.master_seed) })
    }

    fn background(&self, limit: f64) -> Result<Trajectory> {
        let bg = solve_nls(&self.psi0, &self.solver)?;
        guard_leakage(&bg, limit, 0.0)?;
        Ok(bg)
    }
}

fn guard_leakage(traj: &Trajectory, limit: f64, epsilon: f64) -> Result<()> {
    let leakage = max_leakage(traj);
    if !(leakage <= limit) {
        return Err(Error::Leakage { leakage, limit, epsilon });
    }
    Ok(())
}

fn ensemble<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

fn column(rows: &[BTreeMap<String, f64>], key: &str) -> Vec<f64> {
    rows.iter().map(|r| r[key]).collect()
}

fn theta_label(theta: f64) -> String {
    format!("theta{theta}")
}

/// Per-replica measurements of a randomly weighted trajectory against the
/// background: sup-in-time difference norms, conservation drift, leakage,
/// pairings `⟨f_a, φ_ε(T)⟩` and `sup_t ‖φ_ε(t)‖_{H^{-s}}`.
fn replica_values(traj: &Trajectory, bg: &Trajectory, epsilon: f64, profiles: &[GridField], s: f64) -> Result<BTreeMap<String, f64>> {
    let d = difference_norms(traj, bg)?.overall();
    let (mass, energy) = conservation_drift(traj);
    let mut v = BTreeMap::new();
    v.insert("sup_h_minus1".to_string(), d.sup_h_minus1);
    v.insert("sup_linf".to_string(), d.sup_sup);
    v.insert("sup_h1".to_string(), d.sup_h1);
    v.insert("sup_h1_sq_gap".to_string(), d.sup_h1_sq_gap);
    v.insert("mass_drift".to_string(), mass);
    v.insert("energy_drift".to_string(), energy);
    v.insert("leakage".to_string(), max_leakage(traj));
    let root = epsilon.sqrt();
    let sup = traj
        .states
        .iter()
        .zip(&bg.states)
        .map(|(a, b)| a.sub(b).sobolev_norm(-s) / root)
        .fold(0.0, f64::max);
    v.insert("sup_h_minus_s".to_string(), sup);
    let phi = traj.last().sub(bg.last()).scale(Complex64::new(1.0 / root, 0.0));
    for (a, f) in profiles.iter().enumerate() {
        let x = f.inner(&phi);
        v.insert(format!("re_{a}"), x.re);
        v.insert(format!("im_{a}"), x.im);
    }
    Ok(v)
}

fn summarize_differences(res: &mut EnsembleResult, epsilon: f64, h: Option<f64>, rows: &[BTreeMap<String, f64>]) {
    let n = rows.len();
    for m in DIFFERENCE_METRICS {
        let xs = column(rows, m);
        res.aggregate(Some(epsilon), h, &format!("mean_{m}"), Estimate::of_mean(&xs), None, n);
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        res.aggregate(Some(epsilon), h, &format!("mean_sq_{m}"), Estimate::of_mean(&sq), None, n);
    }
    for m in ["mass_drift", "energy_drift", "leakage"] {
        res.aggregate(Some(epsilon), h, &format!("mean_{m}"), Estimate::of_mean(&column(rows, m)), None, n);
    }
}

/// Weighted least-squares slope of `log E‖·‖` against `log ε` for each metric.
fn difference_slopes(res: &mut EnsembleResult, epsilons: &[f64], h: Option<f64>) {
    if epsilons.len() < 2 {
        return;
    }
    for m in DIFFERENCE_METRICS {
        let name = format!("mean_{m}");
        let pts: Vec<&Aggregate> = epsilons.iter().filter_map(|&e| res.find(&name, Some(e), h)).collect();
        if pts.len() != epsilons.len() || pts.iter().any(|a| !(a.value > 0.0)) {
            continue;
        }
        let xs: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|a| a.value.ln()).collect();
        let se: Vec<f64> = pts.iter().map(|a| a.se / a.value).collect();
        let slope = fitted_slope(&xs, &ys, &se);
        res.aggregate(None, h, &format!("slope_{m}"), slope, None, epsilons.len());
    }
}

/// `E sup_{|t|≤T} ‖ψ_ε - ψ‖` in `H^{-1}`, `L^∞`, `H¹` over replicas, for each ε.
pub fn run_homogenization(cfg: &ExperimentConfig) -> Result<EnsembleResult> {
    let ctx = Context::new(cfg)?;
    let bg = ctx.background(cfg.leakage_limit)?;
    let mut res = EnsembleResult::new("homogenize");
    for (i, &eps) in cfg.epsilons.iter().enumerate() {
        let rows = ensemble(cfg.replicas, |r| {
            let mut rng = ctx.seeds.rng(i as u32, r as u32, Purpose::Measure);
            let m = cfg.measure.sample(eps, ctx.grid, &mut rng)?;
            let traj = solve_nls_measure(&ctx.psi0, &m, &ctx.solver)?;
            guard_leakage(&traj, cfg.leakage_limit, eps)?;
            replica_values(&traj, &bg, eps, &[], cfg.s)
        })?;
        summarize_differences(&mut res, eps, None, &rows);
        for (r, row) in rows.into_iter().enumerate() {
            res.record(eps, None, r, row);
        }
    }
    difference_slopes(&mut res, &cfg.epsilons, None);
    Ok(res)
}

/// Exact law of `(⟨f_a, φ(T)⟩)_a` for the Gaussian limit.
#[derive(Debug, Clone)]
pub struct ExactLaw {
    pub responses: Vec<NoiseResponse>,
    /// `cov[a][b] = (E X_a conj X_b, E X_a X_b)`.
    pub cov: Vec<Vec<(Complex64, Complex64)>>,
}

impl ExactLaw {
    pub fn new(grid: Grid, responses: Vec<NoiseResponse>) -> Self {
        let cov = responses
            .iter()
            .map(|f| responses.iter().map(|g| covariance_from_responses(grid, f, g)).collect())
            .collect();
        Self { responses, cov }
    }

    /// `Var Re X_a`.
    pub fn re_variance(&self, a: usize) -> f64 {
        let (c, p) = self.cov[a][a];
        0.5 * (c.re + p.re)
    }

    pub fn mollified(&self, grid: Grid, h: f64) -> Result<Self> {
        let r = self.responses.iter().map(|x| x.mollified(grid, h)).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(grid, r))
    }
}

/// Background trajectory stored every step, for the linearized flow.
fn exact_law(ctx: &Context, cfg: &ExperimentConfig, profiles: &[GridField]) -> Result<(Trajectory, ExactLaw)> {
    let fine_cfg = SolverConfig { store_every: 1, ..ctx.solver };
    let fine = solve_nls(&ctx.psi0, &fine_cfg)?;
    let flow = LinearizedFlow::new(&fine, &fine_cfg)?;
    let responses = noise_responses(&flow, cfg.t_final, profiles)?;
    Ok((fine, ExactLaw::new(ctx.grid, responses)))
}

fn summarize_fluctuations(
    res: &mut EnsembleResult,
    cfg: &ExperimentConfig,
    seeds: SeedStream,
    task: u32,
    epsilon: f64,
    h: Option<f64>,
    rows: &[BTreeMap<String, f64>],
    law: &ExactLaw,
) {
    let n = rows.len();
    let k = law.responses.len();
    let x: Vec<Vec<Complex64>> = (0..k)
        .map(|a| {
            let re = column(rows, &format!("re_{a}"));
            let im = column(rows, &format!("im_{a}"));
            re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect()
        })
        .collect();
    let e = Some(epsilon);
    for a in 0..k {
        let re: Vec<f64> = x[a].iter().map(|z| z.re).collect();
        let im: Vec<f64> = x[a].iter().map(|z| z.im).collect();
        res.aggregate(e, h, &format!("mean_re_{a}"), Estimate::of_mean(&re), Some(0.0), n);
        res.aggregate(e, h, &format!("mean_im_{a}"), Estimate::of_mean(&im), Some(0.0), n);
        for b in a..k {
            let (cov, pcov) = law.cov[a][b];
            let c: Vec<Complex64> = x[a].iter().zip(&x[b]).map(|(p, q)| p * q.conj()).collect();
            let p: Vec<Complex64> = x[a].iter().zip(&x[b]).map(|(p, q)| p * q).collect();
            for (name, vals, exact) in [("cov", &c, cov), ("pcov", &p, pcov)] {
                let r: Vec<f64> = vals.iter().map(|z| z.re).collect();
                let i: Vec<f64> = vals.iter().map(|z| z.im).collect();
                res.aggregate(e, h, &format!("{name}_re_{a}{b}"), Estimate::of_mean(&r), Some(exact.re), n);
                res.aggregate(e, h, &format!("{name}_im_{a}{b}"), Estimate::of_mean(&i), Some(exact.im), n);
            }
        }
        let var = law.re_variance(a);
        for &theta in &cfg.clt.thetas {
            let cos: Vec<f64> = re.iter().map(|v| (theta * v).cos()).collect();
            let sin: Vec<f64> = re.iter().map(|v| (theta * v).sin()).collect();
            let gauss = (-0.5 * theta * theta * var).exp();
            let label = theta_label(theta);
            res.aggregate(e, h, &format!("cf_re_{a}_{label}"), Estimate::of_mean(&cos), Some(gauss), n);
            res.aggregate(e, h, &format!("cf_im_{a}_{label}"), Estimate::of_mean(&sin), Some(0.0), n);
        }
        if n < 8 || !(variance(&re) > 0.0) || !(var > 0.0) {
            continue;
        }
        let sd = var.sqrt();
        let ks = ks_distance_normal(&re, 0.0, sd);
        let mut rng = seeds.rng(BOOTSTRAP_TASK + task, a as u32, Purpose::Statistics);
        let boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| {
                let resample: Vec<f64> = (0..n).map(|_| re[rng.random_range(0..n)]).collect();
                ks_distance_normal(&resample, 0.0, sd)
            })
            .collect();
        res.aggregate(e, h, &format!("ks_re_{a}"), Estimate::new(ks, variance(&boot).sqrt()), None, n);
        res.test(e, h, &format!("ks_re_{a}"), ks, KS_CRITICAL_1PCT / (n as f64).sqrt(), n);
        res.test(e, h, &format!("ad_re_{a}"), anderson_darling_normal(&re), ANDERSON_DARLING_CRITICAL_1PCT, n);
    }
    let sup = column(rows, "sup_h_minus_s");
    res.aggregate(e, h, "mean_sup_h_minus_s", Estimate::of_mean(&sup), None, n);
}

/// `sup_t ‖φ(t)‖_{H^{-s}}` for draws of the limiting (white-noise forced) field.
fn limit_field_norms(ctx: &Context, cfg: &ExperimentConfig, fine: &Trajectory, h: Option<f64>) -> Result<Vec<f64>> {
    let fine_cfg = SolverConfig { store_every: 1, ..ctx.solver };
    let flow = LinearizedFlow::new(fine, &fine_cfg)?;
    ensemble(cfg.limit_replicas(), |r| {
        let mut rng = ctx.seeds.rng(LIMIT_TASK, r as u32, Purpose::WhiteNoise);
        let xi = sample_white_noise(ctx.grid, &mut rng, h)?;
        let phi = flow.solve_fluctuation(&xi, cfg.t_final, ctx.solver.store_every)?;
        Ok(phi.states.iter().map(|s| s.sobolev_norm(-cfg.s)).fold(0.0, f64::max))
    })
}

/// `⟨f, φ_ε(T)⟩` over replicas against the exact Gaussian law, plus the
/// `C_T H^{-s}` norm of `φ_ε` against draws of the limit field.
pub fn run_fluctuations(cfg: &ExperimentConfig) -> Result<EnsembleResult> {
    let ctx = Context::new(cfg)?;
    let bg = ctx.background(cfg.leakage_limit)?;
    let profiles: Vec<GridField> = cfg.profiles.iter().map(|p| p.on(ctx.grid)).collect();
    let (fine, law) = exact_law(&ctx, cfg, &profiles)?;
    let mut res = EnsembleResult::new("fluctuations");
    for a in 0..profiles.len() {
        res.aggregate(None, None, &format!("exact_var_re_{a}"), Estimate::new(law.re_variance(a), 0.0), None, 0);
    }
    let limit = limit_field_norms(&ctx, cfg, &fine, None)?;
    res.aggregate(None, None, "limit_mean_sup_h_minus_s", Estimate::of_mean(&limit), None, limit.len());
    for (i, &eps) in cfg.epsilons.iter().enumerate() {
        let rows = ensemble(cfg.replicas, |r| {
            let mut rng = ctx.seeds.rng(i as u32, r as u32, Purpose::Measure);
            let m = cfg.measure.sample(eps, ctx.grid, &mut rng)?;
            let traj = solve_nls_measure(&ctx.psi0, &m, &ctx.solver)?;
            guard_leakage(&traj, cfg.leakage_limit, eps)?;
            replica_values(&traj, &bg, eps, &profiles, cfg.s)
        })?;
        summarize_fluctuations(&mut res, cfg, ctx.seeds, i as u32, eps, None, &rows, &law);
        let sup = column(&rows, "sup_h_minus_s");
        res.test(
            Some(eps),
            None,
            "ks2_sup_h_minus_s",
            ks_two_sample(&sup, &limit),
            ks_two_sample_critical_1pct(sup.len(), limit.len()),
            sup.len(),
        );
        for (r, row) in rows.into_iter().enumerate() {
            res.record(eps, None, r, row);
        }
    }
    Ok(res)
}

/// Relative spread `(max - min) / max` of per-h column means, with a grouped
/// jackknife standard error over (paired) replicas.
fn spread(columns: &[Vec<f64>]) -> Estimate {
    let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    grouped_jackknife(&refs, 100, |cols| {
        let means: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        if hi == 0.0 {
            0.0
        } else {
            (hi - lo) / hi.abs()
        }
    })
}

/// Metrics whose h-spread `run_mollified` reports.
pub const MOLLIFIED_SPREAD_METRICS: [&str; 3] = ["sup_h_minus1", "sup_linf", "abs2_0"];

/// Homogenization and fluctuation metrics for `ζʰ * μ_ε` and `ζʰ * ξ` over the
/// configured scales `h`, with common measure draws across `h`.
pub fn run_mollified(cfg: &ExperimentConfig) -> Result<EnsembleResult> {
    let ctx = Context::new(cfg)?;
    if cfg.mollifier_scales.is_empty() {
        return Err(Error::Config("mollifier_scales: the mollified experiment needs at least one scale".into()));
    }
    let hs = &cfg.mollifier_scales;
    let bg = ctx.background(cfg.leakage_limit)?;
    let profiles: Vec<GridField> = cfg.profiles.iter().map(|p| p.on(ctx.grid)).collect();
    let (_, law) = exact_law(&ctx, cfg, &profiles)?;
    let laws = hs.iter().map(|&h| law.mollified(ctx.grid, h)).collect::<Result<Vec<_>>>()?;
    let mut res = EnsembleResult::new("mollified");
    for (&h, l) in hs.iter().zip(&laws) {
        for a in 0..profiles.len() {
            res.aggregate(None, Some(h), &format!("exact_var_re_{a}"), Estimate::new(l.re_variance(a), 0.0), None, 0);
        }
    }
    for (i, &eps) in cfg.epsilons.iter().enumerate() {
        let rows: Vec<Vec<BTreeMap<String, f64>>> = ensemble(cfg.replicas, |r| {
            let mut rng = ctx.seeds.rng(i as u32, r as u32, Purpose::Measure);
            let m = cfg.measure.sample(eps, ctx.grid, &mut rng)?;
            hs.iter()
                .map(|&h| {
                    let mh = mollify(&m, h)?;
                    let traj = solve_nls_measure(&ctx.psi0, &mh, &ctx.solver)?;
                    guard_leakage(&traj, cfg.leakage_limit, eps)?;
                    let mut v = replica_values(&traj, &bg, eps, &profiles, cfg.s)?;
                    let abs2 = v["re_0"].powi(2) + v["im_0"].powi(2);
                    v.insert("abs2_0".to_string(), abs2);
                    Ok(v)
                })
                .collect()
        })?;
        let mut per_h: Vec<Vec<BTreeMap<String, f64>>> = vec![Vec::with_capacity(rows.len()); hs.len()];
        for replica in rows {
            for (j, v) in replica.into_iter().enumerate() {
                per_h[j].push(v);
            }
        }
        for (j, (&h, rows)) in hs.iter().zip(&per_h).enumerate() {
            summarize_differences(&mut res, eps, Some(h), rows);
            let task = (i * hs.len() + j) as u32;
            summarize_fluctuations(&mut res, cfg, ctx.seeds, task, eps, Some(h), rows, &laws[j]);
        }
        if cfg.replicas >= 2 {
            for m in MOLLIFIED_SPREAD_METRICS {
                let cols: Vec<Vec<f64>> = per_h.iter().map(|rows| column(rows, m)).collect();
                res.aggregate(Some(eps), None, &format!("spread_{m}"), spread(&cols), None, cfg.replicas);
            }
        }
        for (&h, rows) in hs.iter().zip(per_h) {
            for (r, row) in rows.into_iter().enumerate() {
                res.record(eps, Some(h), r, row);
            }
        }
    }
    for &h in hs {
        difference_slopes(&mut res, &cfg.epsilons, Some(h));
    }
    Ok(res)
}

/// Empirical characteristic function of `ε^{-1/2}(∫F dμ_ε - ∫F dx)` against
/// the closed form and the Gaussian limit `exp(-θ²‖F‖²/2)`.
pub fn run_clt_linear(cfg: &ExperimentConfig) -> Result<EnsembleResult> {
    let ctx = Context::new(cfg)?;
    let grid = ctx.grid;
    let length = grid.length();
    let profile = &cfg.clt.profile;
    let f: Vec<f64> = profile.on(grid).values.iter().map(|z| z.re).collect();
    let lebesgue = grid.integrate(&f);
    let l2sq = grid.integrate(&f.iter().map(|v| v * v).collect::<Vec<_>>());
    let l3cube = grid.integrate(&f.iter().map(|v| v.abs().powi(3)).collect::<Vec<_>>());
    let mut res = EnsembleResult::new("clt");
    for (i, &eps) in cfg.epsilons.iter().enumerate() {
        let xs = ensemble(cfg.replicas, |r| {
            let mut rng = ctx.seeds.rng(i as u32, r as u32, Purpose::Measure);
            let m = cfg.measure.sample(eps, grid, &mut rng)?;
            Ok((m.integrate_fn(|x| profile.eval(x, length).re, lebesgue) - lebesgue) / eps.sqrt())
        })?;
        let n = xs.len();
        let e = Some(eps);
        res.aggregate(e, None, "mean", Estimate::of_mean(&xs), Some(0.0), n);
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        res.aggregate(e, None, "second_moment", Estimate::of_mean(&sq), Some(l2sq), n);
        let mut max_dev: f64 = 0.0;
        let mut max_gap: f64 = 0.0;
        let mut max_constant: f64 = 0.0;
        for &theta in &cfg.clt.thetas {
            let scaled: Vec<f64> = f.iter().map(|v| theta * v).collect();
            let exact = cfg.measure.characteristic_functional_exact(eps, grid, &scaled)?;
            let gauss = (-0.5 * theta * theta * l2sq).exp();
            let cos: Vec<f64> = xs.iter().map(|x| (theta * x).cos()).collect();
            let sin: Vec<f64> = xs.iter().map(|x| (theta * x).sin()).collect();
            let (c, s) = (Estimate::of_mean(&cos), Estimate::of_mean(&sin));
            let label = theta_label(theta);
            res.aggregate(e, None, &format!("cf_re_{label}"), c, Some(exact.re), n);
            res.aggregate(e, None, &format!("cf_im_{label}"), s, Some(exact.im), n);
            let gap = (exact - gauss).norm();
            res.aggregate(e, None, &format!("exact_minus_gaussian_{label}"), Estimate::new(gap, 0.0), None, 0);
            max_dev = max_dev.max((Complex64::new(c.value, s.value) - exact).norm());
            max_gap = max_gap.max(gap);
            if theta != 0.0 {
                max_constant = max_constant.max(gap / (eps.sqrt() * theta.abs().powi(3) * l3cube));
            }
        }
        res.test(e, None, "cf_max_deviation", max_dev, 4.0 / (n as f64).sqrt(), n);
        res.aggregate(e, None, "gaussian_distance", Estimate::new(max_gap, 0.0), None, 0);
        res.aggregate(e, None, "gaussian_distance_constant", Estimate::new(max_constant, 0.0), None, 0);
        for (r, x) in xs.into_iter().enumerate() {
            res.record(eps, None, r, BTreeMap::from([("x".to_string(), x)]));
        }
    }
    Ok(res)
}

fn index_label(indices: &[HaarIndex]) -> String {
    let parts: Vec<String> = indices.iter().map(|i| format!("({},{})", i.n, i.k)).collect();
    parts.join("")
}

/// Gram matrix of `ε^{-1/2} X_{N,k}`, third-order joint cumulants and the
/// moment `E‖ψ₀(dμ_ε - 1)‖²_{H^{-s}} / ε`, for each ε.
pub fn run_haar_stats(cfg: &ExperimentConfig) -> Result<EnsembleResult> {
    let ctx = Context::new(cfg)?;
    let idx = &cfg.haar.indices;
    let mut tuples: Vec<Vec<HaarIndex>> = Vec::new();
    for a in 0..idx.len() {
        for b in a..idx.len() {
            tuples.push(vec![idx[a], idx[b]]);
        }
    }
    tuples.extend(cfg.haar.triples.iter().map(|t| t.to_vec()));
    let mut res = EnsembleResult::new("haar_stats");
    let n = cfg.replicas;
    for (i, &eps) in cfg.epsilons.iter().enumerate() {
        let e = Some(eps);
        for row in empirical_cumulants(&cfg.measure, eps, ctx.grid, &tuples, n, ctx.seeds)? {
            let label = index_label(&row.indices);
            if row.indices.len() == 2 {
                let est = Estimate::new(row.estimate.value / eps, row.estimate.se / eps);
                res.aggregate(e, None, &format!("gram_{label}"), est, Some(row.exact / eps), n);
            } else {
                res.aggregate(e, None, &format!("k{}_{label}", row.indices.len()), row.estimate, Some(row.exact), n);
            }
        }
        for p in [1u32, 2] {
            let m = weighted_negative_norm_moment(&cfg.measure, eps, &ctx.psi0, cfg.s, p, n, ctx.seeds, MOMENT_TASK + i as u32)?;
            let scale = eps.powi(p as i32);
            res.aggregate(e, None, &format!("moment{p}_over_eps{p}"), Estimate::new(m.value / scale, m.se / scale), None, n);
        }
    }
    let pts: Vec<Estimate> = cfg
        .epsilons
        .iter()
        .filter_map(|&e| res.find("moment1_over_eps1", Some(e), None).map(Aggregate::estimate))
        .collect();
    if let (Some(hi), Some(lo)) = (
        pts.iter().copied().max_by(|a, b| a.value.total_cmp(&b.value)),
        pts.iter().copied().min_by(|a, b| a.value.total_cmp(&b.value)),
    ) {
        let ratio = hi.value / lo.value;
        let se = ratio * ((hi.se / hi.value).powi(2) + (lo.se / lo.value).powi(2)).sqrt();
        res.aggregate(None, None, "moment1_ratio", Estimate::new(ratio, se), None, pts.len());
    }
    Ok(res)
}

/// Total mass of sampled measures over replicas; replica 0 of each ε is also
/// written as `measure_<i>.csv` when `dir` is given.
pub fn run_sample_measure(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<(EnsembleResult, Vec<String>)> {
    let ctx = Context::new(cfg)?;
    let mut res = EnsembleResult::new("sample_measure");
    let mut files = Vec::new();
    for (i, &eps) in cfg.epsilons.iter().enumerate() {
        let rows = ensemble(cfg.replicas, |r| {
            let mut rng = ctx.seeds.rng(i as u32, r as u32, Purpose::Measure);
            let m = cfg.measure.sample(eps, ctx.grid, &mut rng)?;
            if r == 0 {
                if let Some(dir) = dir {
                    fs::create_dir_all(dir)?;
                    m.write_csv(BufWriter::new(fs::File::create(dir.join(format!("measure_{i}.csv")))?))?;
                }
            }
            let mut v = BTreeMap::new();
            v.insert("atoms".to_string(), m.atoms.len() as f64);
            v.insert("total_mass".to_string(), m.total_mass());
            Ok(v)
        })?;
        if dir.is_some() {
            files.push(format!("measure_{i}.csv"));
        }
        let mass = column(&rows, "total_mass");
        res.aggregate(Some(eps), None, "mean_total_mass", Estimate::of_mean(&mass), Some(ctx.grid.length()), mass.len());
        for (r, row) in rows.into_iter().enumerate() {
            res.record(eps, None, r, row);
        }
    }
    Ok((res, files))
}

/// One randomly weighted solve at the first ε next to the constant-coefficient
/// solve; diagnostics, differences and final states go to `dir`.
pub fn run_solve(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<(EnsembleResult, Vec<String>)> {
    let ctx = Context::new(cfg)?;
    let eps = cfg.epsilons[0];
    let mut rng = ctx.seeds.rng(0, 0, Purpose::Measure);
    let m = cfg.measure.sample(eps, ctx.grid, &mut rng)?;
    let traj = solve_nls_measure(&ctx.psi0, &m, &ctx.solver)?;
    guard_leakage(&traj, cfg.leakage_limit, eps)?;
    let bg = ctx.background(cfg.leakage_limit)?;
    let table = difference_norms(&traj, &bg)?;
    let mut res = EnsembleResult::new("solve");
    for (k, row) in table.rows.iter().enumerate() {
        let v = BTreeMap::from([
            ("t".to_string(), row.t),
            ("h_minus1".to_string(), row.h_minus1),
            ("linf".to_string(), row.sup),
            ("h1".to_string(), row.h1),
            ("h1_sq_gap".to_string(), row.h1_sq_gap),
            ("energy".to_string(), traj.diagnostics[k].energy),
            ("mass".to_string(), traj.diagnostics[k].mass),
        ]);
        res.record(eps, None, 0, v);
    }
    let (mass, energy) = conservation_drift(&traj);
    res.aggregate(Some(eps), None, "mass_drift", Estimate::new(mass, 0.0), None, 1);
    res.aggregate(Some(eps), None, "energy_drift", Estimate::new(energy, 0.0), None, 1);
    let mut files = Vec::new();
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        let norms = MeasureNorms::new(&m, cfg.s).ok();
        traj.write_diagnostics_csv(norms.as_ref(), BufWriter::new(fs::File::create(dir.join("diagnostics_measure.csv"))?))?;
        bg.write_diagnostics_csv(None, BufWriter::new(fs::File::create(dir.join("diagnostics_lebesgue.csv"))?))?;
        traj.last().write_csv(BufWriter::new(fs::File::create(dir.join("final_measure.csv"))?))?;
        bg.last().write_csv(BufWriter::new(fs::File::create(dir.join("final_lebesgue.csv"))?))?;
        m.write_csv(BufWriter::new(fs::File::create(dir.join("measure.csv"))?))?;
        files.extend(
            ["diagnostics_measure.csv", "diagnostics_lebesgue.csv", "final_measure.csv", "final_lebesgue.csv", "measure.csv"]
                .map(String::from),
        );
    }
    Ok((res, files))
}

/// Mean of a per-replica value across the records of one `(ε, h)` cell.
pub fn record_mean(res: &EnsembleResult, key: &str, epsilon: f64, h: Option<f64>) -> Option<f64> {
    let xs: Vec<f64> = res
        .records
        .iter()
        .filter(|r| r.epsilon == epsilon && r.h == h)
        .filter_map(|r| r.values.get(key).copied())
        .collect();
    (!xs.is_empty()).then(|| pairwise_sum(&xs) / xs.len() as f64)
}
