//! Python bindings: grids, Lévy specs and sampled measures, the split-step
//! solver, the linearized flow covariance and the experiment runners.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sprinkled_core::experiments::{self, ExperimentConfig};
use sprinkled_core::grid::{Grid as CoreGrid, GridField};
use sprinkled_core::haar::{self, HaarIndex};
use sprinkled_core::levy::{self, LevySpec as CoreSpec, MeasureWeight, SampledMeasure as CoreMeasure};
use sprinkled_core::linearized::{self, LinearizedFlow};
use sprinkled_core::nls::{self, SolverConfig};
use sprinkled_core::seeding::{Purpose, SeedStream};
use sprinkled_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::InvalidSpec(_)
        | Error::InvalidArgument(_)
        | Error::InvalidGrid(_)
        | Error::Resolution(_)
        | Error::AnalyticityDomain { .. }
        | Error::TimeRange { .. }
        | Error::Alignment(_)
        | Error::SizeGuard { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn field(grid: CoreGrid, values: Vec<Complex64>) -> PyResult<GridField> {
    if values.len() != grid.cells() {
        return Err(PyValueError::new_err(format!("expected {} values, got {}", grid.cells(), values.len())));
    }
    Ok(GridField { grid, values })
}

fn real_values(grid: CoreGrid, values: &[f64]) -> PyResult<()> {
    if values.len() != grid.cells() {
        return Err(PyValueError::new_err(format!("expected {} values, got {}", grid.cells(), values.len())));
    }
    Ok(())
}

/// Periodic grid on `[-L/2, L/2)` with `cells` points.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct Grid(CoreGrid);

#[pymethods]
impl Grid {
    #[new]
    fn new(length: f64, cells: usize) -> PyResult<Self> {
        CoreGrid::new(length, cells).map(Grid).map_err(py_err)
    }

    #[getter]
    fn length(&self) -> f64 {
        self.0.length()
    }

    #[getter]
    fn cells(&self) -> usize {
        self.0.cells()
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx()
    }

    fn points(&self) -> Vec<f64> {
        self.0.points()
    }

    /// `‖f‖_{H^s}` of complex grid values.
    fn sobolev_norm(&self, values: Vec<Complex64>, s: f64) -> PyResult<f64> {
        Ok(field(self.0, values)?.sobolev_norm(s))
    }

    fn __repr__(&self) -> String {
        format!("Grid(length={}, cells={})", self.0.length(), self.0.cells())
    }
}

/// Lévy measure describing the law of the random measure.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct LevySpec(CoreSpec);

#[pymethods]
impl LevySpec {
    #[staticmethod]
    fn poisson() -> Self {
        LevySpec(CoreSpec::poisson())
    }

    #[staticmethod]
    fn gamma() -> Self {
        LevySpec(CoreSpec::gamma())
    }

    #[staticmethod]
    fn lebesgue() -> Self {
        LevySpec(CoreSpec::lebesgue())
    }

    /// Jumps given as `[(size, probability), ...]`.
    #[staticmethod]
    fn compound_poisson(jumps: Vec<(f64, f64)>) -> PyResult<Self> {
        CoreSpec::compound_poisson(jumps).map(LevySpec).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn phi(&self, z: Complex64) -> PyResult<Complex64> {
        self.0.phi(z).map_err(py_err)
    }

    fn phi_derivative(&self, order: u32) -> f64 {
        self.0.phi_derivative(order)
    }

    /// Sample with the stream the CLI uses for `(epsilon index 0, replica)`.
    #[pyo3(signature = (epsilon, grid, seed, replica = 0))]
    fn sample(&self, epsilon: f64, grid: &Grid, seed: u64, replica: u32) -> PyResult<SampledMeasure> {
        let mut rng = SeedStream::new(seed).rng(0, replica, Purpose::Measure);
        self.0.sample(epsilon, grid.0, &mut rng).map(SampledMeasure).map_err(py_err)
    }

    fn laplace_functional_exact(&self, epsilon: f64, grid: &Grid, f: Vec<f64>) -> PyResult<f64> {
        real_values(grid.0, &f)?;
        self.0.laplace_functional_exact(epsilon, grid.0, &f).map_err(py_err)
    }

    fn characteristic_functional_exact(&self, epsilon: f64, grid: &Grid, f: Vec<f64>) -> PyResult<Complex64> {
        real_values(grid.0, &f)?;
        self.0.characteristic_functional_exact(epsilon, grid.0, &f).map_err(py_err)
    }

    /// Joint cumulant of the Haar coefficients for `[(n, k), ...]`.
    fn exact_joint_cumulant(&self, epsilon: f64, indices: Vec<(u32, i64)>) -> PyResult<f64> {
        let idx = indices
            .into_iter()
            .map(|(n, k)| HaarIndex::new(n, k))
            .collect::<Result<Vec<_>, _>>()
            .map_err(py_err)?;
        Ok(haar::exact_joint_cumulant(&self.0, epsilon, &idx))
    }

    fn __repr__(&self) -> String {
        format!("LevySpec.{}()", self.0.name())
    }
}

/// One realization of the random measure.
#[pyclass(frozen)]
struct SampledMeasure(CoreMeasure);

#[pymethods]
impl SampledMeasure {
    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon
    }

    #[getter]
    fn lebesgue_density(&self) -> f64 {
        self.0.lebesgue_density
    }

    /// `[(position, weight), ...]`.
    fn atoms(&self) -> Vec<(f64, f64)> {
        self.0.atoms.iter().map(|a| (a.position, a.weight)).collect()
    }

    fn total_mass(&self) -> f64 {
        self.0.total_mass()
    }

    /// Cloud-in-cell density at the grid points.
    fn density(&self) -> Vec<f64> {
        self.0.density().to_vec()
    }

    fn integrate_cells(&self, f: Vec<f64>) -> PyResult<f64> {
        real_values(self.0.grid, &f)?;
        Ok(self.0.integrate_cells(&f))
    }

    /// Density of the measure convolved with the unit-mass bump at scale `h`.
    fn mollified_density(&self, h: f64) -> PyResult<Vec<f64>> {
        levy::mollify(&self.0, h).map(|m| m.density).map_err(py_err)
    }

    fn haar_coefficient(&self, n: u32, k: i64) -> PyResult<f64> {
        let idx = HaarIndex::new(n, k).map_err(py_err)?;
        idx.check(self.0.grid).map_err(py_err)?;
        Ok(haar::haar_coefficient(&self.0, idx))
    }
}

/// Stored solution of a split-step solve.
#[pyclass(frozen)]
struct Trajectory {
    traj: nls::Trajectory,
    cfg: SolverConfig,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.traj.times.clone()
    }

    fn states(&self) -> Vec<Vec<Complex64>> {
        self.traj.states.iter().map(|s| s.values.clone()).collect()
    }

    fn last(&self) -> Vec<Complex64> {
        self.traj.last().values.clone()
    }

    /// `[(t, mass, energy, h1, leakage), ...]`.
    fn diagnostics(&self) -> Vec<(f64, f64, f64, f64, f64)> {
        self.traj.diagnostics.iter().map(|d| (d.t, d.mass, d.energy, d.h1, d.leakage)).collect()
    }

    /// Largest relative mass and energy drift.
    fn conservation_drift(&self) -> (f64, f64) {
        nls::conservation_drift(&self.traj)
    }

    /// Linearized flow `S(t, τ) u0` about this trajectory.
    fn propagate(&self, u0: Vec<Complex64>, tau: f64, t: f64) -> PyResult<Vec<Complex64>> {
        let flow = LinearizedFlow::new(&self.traj, &self.cfg).map_err(py_err)?;
        let u = field(self.cfg.grid, u0)?;
        flow.propagate(&u, tau, t).map(|v| v.values).map_err(py_err)
    }

    /// Covariance and pseudo-covariance of `⟨f, φ(t)⟩`, `⟨g, φ(t)⟩` for the
    /// limit fluctuation field, optionally with noise mollified at scale `h`.
    #[pyo3(signature = (t, f, g, h = None))]
    fn exact_covariance(&self, t: f64, f: Vec<Complex64>, g: Vec<Complex64>, h: Option<f64>) -> PyResult<(Complex64, Complex64)> {
        let flow = LinearizedFlow::new(&self.traj, &self.cfg).map_err(py_err)?;
        let (f, g) = (field(self.cfg.grid, f)?, field(self.cfg.grid, g)?);
        linearized::exact_covariance(&flow, t, &f, &g, h).map_err(py_err)
    }
}

/// Split-step solve from `psi0`, with Lebesgue weight when `measure` is None.
/// Use `store_every = 1` before calling `propagate` or `exact_covariance`.
#[pyfunction]
#[pyo3(signature = (grid, psi0, dt, t_final, store_every = 1, measure = None))]
fn solve_nls(
    grid: &Grid,
    psi0: Vec<Complex64>,
    dt: f64,
    t_final: f64,
    store_every: usize,
    measure: Option<&SampledMeasure>,
) -> PyResult<Trajectory> {
    let cfg = SolverConfig::new(grid.0, dt, t_final, store_every).map_err(py_err)?;
    let psi0 = field(grid.0, psi0)?;
    let traj = match measure {
        Some(m) => nls::solve_nls_measure(&psi0, &m.0, &cfg),
        None => nls::solve_nls(&psi0, &cfg),
    }
    .map_err(py_err)?;
    Ok(Trajectory { traj, cfg })
}

/// Parse a TOML experiment config; raises ValueError with `label:line:col`.
#[pyfunction]
#[pyo3(signature = (source, label = "<string>"))]
fn validate_config(source: &str, label: &str) -> PyResult<()> {
    ExperimentConfig::from_toml_str(source, label).map(|_| ()).map_err(py_err)
}

/// Run an experiment (`homogenize`, `clt`, `fluctuations`, `mollified` or
/// `haar-stats`) from TOML text and return the JSON-lines output.
#[pyfunction]
fn run_experiment(py: Python<'_>, command: &str, source: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml_str(source, "<string>").map_err(py_err)?;
    let run = match command {
        "homogenize" => experiments::run_homogenization,
        "clt" => experiments::run_clt_linear,
        "fluctuations" => experiments::run_fluctuations,
        "mollified" => experiments::run_mollified,
        "haar-stats" => experiments::run_haar_stats,
        other => return Err(PyValueError::new_err(format!("unknown experiment {other:?}"))),
    };
    let result = py.detach(|| run(&cfg)).map_err(py_err)?;
    let mut out = Vec::new();
    result.write_jsonl(&mut out).map_err(py_err)?;
    Ok(String::from_utf8(out).expect("JSON output is UTF-8"))
}

#[pymodule]
fn sprinkled(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Grid>()?;
    m.add_class::<LevySpec>()?;
    m.add_class::<SampledMeasure>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(solve_nls, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
