use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::stats::Estimate;

/// One replica's measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    pub epsilon: f64,
    pub h: Option<f64>,
    pub replica: usize,
    pub values: BTreeMap<String, f64>,
}

/// An ensemble statistic with its standard error (zero for deterministic
/// quantities) and, where one exists, the reference value it targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub experiment: String,
    pub epsilon: Option<f64>,
    pub h: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub se: f64,
    pub exact: Option<f64>,
    pub n: usize,
}

impl Aggregate {
    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.value, self.se)
    }

    /// `|value - exact| / se`, when both exist.
    pub fn z_score(&self) -> Option<f64> {
        self.exact.map(|e| self.estimate().z_score(e))
    }
}

/// A hypothesis test: reject when `statistic > critical`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestStat {
    pub experiment: String,
    pub epsilon: Option<f64>,
    pub h: Option<f64>,
    pub name: String,
    pub statistic: f64,
    pub critical: f64,
    pub rejected: bool,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Line {
    Record(Record),
    Aggregate(Aggregate),
    Test(TestStat),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub experiment: String,
    pub records: Vec<Record>,
    pub aggregates: Vec<Aggregate>,
    pub tests: Vec<TestStat>,
}

impl EnsembleResult {
    pub fn new(experiment: &str) -> Self {
        Self { experiment: experiment.into(), ..Self::default() }
    }

    pub fn record(&mut self, epsilon: f64, h: Option<f64>, replica: usize, values: BTreeMap<String, f64>) {
        self.records.push(Record { experiment: self.experiment.clone(), epsilon, h, replica, values });
    }

    pub fn aggregate(&mut self, epsilon: Option<f64>, h: Option<f64>, metric: &str, est: Estimate, exact: Option<f64>, n: usize) {
        self.aggregates.push(Aggregate {
            experiment: self.experiment.clone(),
            epsilon,
            h,
            metric: metric.into(),
            value: est.value,
            se: est.se,
            exact,
            n,
        });
    }

    pub fn test(&mut self, epsilon: Option<f64>, h: Option<f64>, name: &str, statistic: f64, critical: f64, n: usize) {
        self.tests.push(TestStat {
            experiment: self.experiment.clone(),
            epsilon,
            h,
            name: name.into(),
            statistic,
            critical,
            rejected: !(statistic <= critical),
            n,
        });
    }

    pub fn merge(&mut self, other: EnsembleResult) {
        self.records.extend(other.records);
        self.aggregates.extend(other.aggregates);
        self.tests.extend(other.tests);
    }

    /// First aggregate matching `(metric, epsilon, h)`.
    pub fn find(&self, metric: &str, epsilon: Option<f64>, h: Option<f64>) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.metric == metric && a.epsilon == epsilon && a.h == h)
    }

    pub fn find_test(&self, name: &str, epsilon: Option<f64>, h: Option<f64>) -> Option<&TestStat> {
        self.tests.iter().find(|t| t.name == name && t.epsilon == epsilon && t.h == h)
    }

    pub fn lines(&self) -> impl Iterator<Item = Line> + '_ {
        self.records
            .iter()
            .cloned()
            .map(Line::Record)
            .chain(self.aggregates.iter().cloned().map(Line::Aggregate))
            .chain(self.tests.iter().cloned().map(Line::Test))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for line in self.lines() {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// `kind,experiment,epsilon,h,metric,value,se,exact,n` for aggregates and tests
    /// (tests put the critical value in `exact` and leave `se` empty).
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        writeln!(out, "kind,experiment,epsilon,h,metric,value,se,exact,n")?;
        for a in &self.aggregates {
            writeln!(
                out,
                "aggregate,{},{},{},{},{},{},{},{}",
                a.experiment,
                opt(a.epsilon),
                opt(a.h),
                a.metric,
                a.value,
                a.se,
                opt(a.exact),
                a.n
            )?;
        }
        for t in &self.tests {
            writeln!(
                out,
                "test,{},{},{},{},{},,{},{}",
                t.experiment,
                opt(t.epsilon),
                opt(t.h),
                t.name,
                t.statistic,
                t.critical,
                t.n
            )?;
        }
        Ok(())
    }
}

/// Everything needed to re-run an experiment from its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub master_seed: u64,
    pub config_sha256: String,
    pub config_file: String,
    pub outputs: Vec<String>,
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `records.jsonl`, `summary.csv`, a verbatim copy of the config and
/// `manifest.json` into `dir`. `extra` names further files already written there.
pub fn write_result_dir(dir: &Path, command: &str, config_src: &str, master_seed: u64, result: &EnsembleResult, extra: &[String]) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(fs::File::create(dir.join(RECORDS_FILE))?);
    result.write_jsonl(&mut out)?;
    out.flush()?;
    let mut out = BufWriter::new(fs::File::create(dir.join(SUMMARY_FILE))?);
    result.write_summary_csv(&mut out)?;
    out.flush()?;
    fs::write(dir.join(CONFIG_COPY), config_src)?;
    let mut outputs = vec![RECORDS_FILE.to_string(), SUMMARY_FILE.to_string()];
    outputs.extend(extra.iter().cloned());
    let manifest = Manifest {
        command: command.into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        master_seed,
        config_sha256: sha256_hex(config_src.as_bytes()),
        config_file: CONFIG_COPY.into(),
        outputs,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}
