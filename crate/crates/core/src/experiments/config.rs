use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::haar::HaarIndex;
use crate::levy::{check_mollifier_scale, LevySpec};
use crate::nls::{InitialData, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_cells")]
    pub cells: usize,
}

fn default_length() -> f64 {
    256.0
}

fn default_cells() -> usize {
    4096
}

impl Default for GridParams {
    fn default() -> Self {
        Self { length: default_length(), cells: default_cells() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_store_every")]
    pub store_every: usize,
    #[serde(default)]
    pub dealias: bool,
}

fn default_dt() -> f64 {
    5e-4
}

fn default_store_every() -> usize {
    20
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { dt: default_dt(), store_every: default_store_every(), dealias: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltParams {
    /// Real part is used as the test function `F`.
    #[serde(default = "default_clt_profile")]
    pub profile: InitialData,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
}

fn default_clt_profile() -> InitialData {
    InitialData::Gaussian { amplitude: 1.0, width: 1.0, centre: 0.0 }
}

fn default_thetas() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0]
}

impl Default for CltParams {
    fn default() -> Self {
        Self { profile: default_clt_profile(), thetas: default_thetas() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HaarParams {
    #[serde(default = "default_haar_indices")]
    pub indices: Vec<HaarIndex>,
    #[serde(default = "default_haar_triples")]
    pub triples: Vec<[HaarIndex; 3]>,
}

fn default_haar_indices() -> Vec<HaarIndex> {
    [(1, 0), (1, 1), (2, 0), (2, 1), (4, 0), (4, 1), (4, 2), (4, 3)]
        .into_iter()
        .map(|(n, k)| HaarIndex { n, k })
        .collect()
}

fn default_haar_triples() -> Vec<[HaarIndex; 3]> {
    let h = |n, k| HaarIndex { n, k };
    vec![
        [h(1, 0), h(1, 0), h(1, 0)],
        [h(2, 0), h(2, 0), h(1, 0)],
        [h(4, 0), h(4, 0), h(2, 0)],
        [h(4, 1), h(4, 1), h(2, 0)],
        [h(2, 1), h(2, 1), h(2, 1)],
        [h(1, 0), h(2, 0), h(4, 0)],
    ]
}

impl Default for HaarParams {
    fn default() -> Self {
        Self { indices: default_haar_indices(), triples: default_haar_triples() }
    }
}

fn default_profiles() -> Vec<InitialData> {
    vec![
        InitialData::Gaussian { amplitude: 1.0, width: 1.0, centre: 0.0 },
        InitialData::Gaussian { amplitude: 1.0, width: 1.5, centre: 1.0 },
        InitialData::ModulatedGaussian { amplitude: 1.0, width: 1.5, wavenumber: 2.0, centre: 0.0 },
    ]
}

/// One experiment, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub measure: LevySpec,
    #[serde(default)]
    pub grid: GridParams,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub initial: InitialData,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_s")]
    pub s: f64,
    pub replicas: usize,
    pub master_seed: u64,
    /// Limit-field draws in `fluctuations`; defaults to `replicas`.
    #[serde(default)]
    pub limit_replicas: Option<usize>,
    #[serde(default)]
    pub mollifier_scales: Vec<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_leakage_limit")]
    pub leakage_limit: f64,
    #[serde(default = "default_profiles")]
    pub profiles: Vec<InitialData>,
    #[serde(default)]
    pub clt: CltParams,
    #[serde(default)]
    pub haar: HaarParams,
}

fn default_t_final() -> f64 {
    1.0
}

fn default_s() -> f64 {
    0.75
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_leakage_limit() -> f64 {
    1e-3
}

/// A semantic problem with a config, tied to the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    /// Dotted path, e.g. `grid.cells`.
    pub key: String,
    pub message: String,
}

impl ExperimentConfig {
    /// Config with defaults for everything but the measure and run size.
    pub fn new(measure: LevySpec, epsilons: Vec<f64>, replicas: usize, master_seed: u64) -> Self {
        Self {
            measure,
            grid: GridParams::default(),
            solver: SolverParams::default(),
            initial: InitialData::default(),
            epsilons,
            t_final: default_t_final(),
            s: default_s(),
            replicas,
            master_seed,
            limit_replicas: None,
            mollifier_scales: Vec::new(),
            output_dir: default_output_dir(),
            leakage_limit: default_leakage_limit(),
            profiles: default_profiles(),
            clt: CltParams::default(),
            haar: HaarParams::default(),
        }
    }

    /// Parse and validate. Errors are reported as `label:line:col: message`.
    pub fn from_toml_str(src: &str, label: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| {
            let (line, col) = e.span().map_or((1, 1), |s| line_col(src, s.start));
            Error::Config(format!("{label}:{line}:{col}: {}", e.message()))
        })?;
        if let Some(issue) = cfg.issues().into_iter().next() {
            let (line, col) = locate_key(src, &issue.key).unwrap_or((1, 1));
            return Err(Error::Config(format!("{label}:{line}:{col}: {}: {}", issue.key, issue.message)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut push = |key: &str, message: String| out.push(ConfigIssue { key: key.into(), message });
        if let Err(e) = self.measure.validate() {
            push("measure.kind", e.to_string());
        }
        if let Err(e) = Grid::new(self.grid.length, self.grid.cells) {
            push("grid.cells", e.to_string());
        } else if let Err(e) = self.solver_config() {
            push("solver.dt", e.to_string());
        }
        if self.epsilons.is_empty() {
            push("epsilons", "at least one epsilon is required".into());
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            push("epsilons", format!("every epsilon must lie in (0, 1], got {e}"));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            push("t_final", format!("t_final must be positive, got {}", self.t_final));
        }
        if !(self.s > 0.5) {
            push("s", format!("s must exceed 1/2, got {}", self.s));
        }
        if self.replicas == 0 {
            push("replicas", "replicas must be at least 1".into());
        }
        if self.limit_replicas == Some(0) {
            push("limit_replicas", "limit_replicas must be at least 1".into());
        }
        if let Ok(grid) = Grid::new(self.grid.length, self.grid.cells) {
            for &h in &self.mollifier_scales {
                if let Err(e) = check_mollifier_scale(grid, h) {
                    push("mollifier_scales", e.to_string());
                    break;
                }
            }
            for i in self.haar.indices.iter().chain(self.haar.triples.iter().flatten()) {
                if let Err(e) = HaarIndex::new(i.n, i.k).and_then(|i| i.check(grid)) {
                    push("haar.indices", e.to_string());
                    break;
                }
            }
        }
        if !(self.leakage_limit > 0.0) {
            push("leakage_limit", format!("leakage_limit must be positive, got {}", self.leakage_limit));
        }
        if self.profiles.is_empty() {
            push("profiles", "at least one test profile is required".into());
        }
        if self.clt.thetas.iter().any(|t| !t.is_finite()) {
            push("clt.thetas", "frequencies must be finite".into());
        }
        out
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.length, self.grid.cells)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::new(self.grid()?, self.solver.dt, self.t_final, self.solver.store_every)?;
        cfg.dealias = self.solver.dealias;
        Ok(cfg)
    }

    pub fn limit_replicas(&self) -> usize {
        self.limit_replicas.unwrap_or(self.replicas)
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Line and column of `a.b.key` in a TOML source: the `key = ...` line inside
/// the `[a.b]` table (or at top level), falling back to the table header.
fn locate_key(src: &str, path: &str) -> Option<(usize, usize)> {
    let (table, key) = path.rsplit_once('.').unwrap_or(("", path));
    let mut current = String::new();
    let mut header = None;
    for (n, line) in src.lines().enumerate() {
        let t = line.trim_start();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']' || c == ' ').to_string();
            if current == table {
                header = Some((n + 1, line.len() - t.len() + 1));
            }
            continue;
        }
        if current == table {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some((n + 1, line.len() - t.len() + 1));
                }
            }
        }
    }
    header
}
