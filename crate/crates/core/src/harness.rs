//! Seeded experiment sweeps and report emission.
//!
//! A config names one experiment and its parameter grids. Every cell of the
//! grid (crossed with the seed list) becomes one [`ReportRow`]; cells run in a
//! rayon pool and rows come back in grid order. A grid left out of the config
//! takes its default, an explicitly empty grid yields no cells.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{certified_threshold, target_t, BalanceInstance, Solver};
use crate::blocks::{BlockStructure, Exponent, MixedNormSpec};
use crate::error::{Error, Result};
use crate::gaussian::{
    check_correlation, check_ebound, check_s_inequality, measure_intersection_lower_bound, random_ellipsoid,
    random_vector_set, CheckStatus,
};
use crate::rng::stream_rng;
use crate::subspace::Subspace;
use crate::widths::{b1inf_vertices, kolmogorov_search, verified_certificate, HeuristicOptions};
use crate::witness::{run_witness, verify_trace, WitnessParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    #[default]
    WitnessSweep,
    BalanceSweep,
    GaussianSuite,
    WidthCompare,
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentId::WitnessSweep => "witness-sweep",
            ExperimentId::BalanceSweep => "balance-sweep",
            ExperimentId::GaussianSuite => "gaussian-suite",
            ExperimentId::WidthCompare => "width-compare",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Parse(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Auto,
    Exhaustive,
    Random,
    Greedy,
}

impl SolverKind {
    pub fn solver(self, trials: u64, seed: u64) -> Solver {
        match self {
            SolverKind::Auto => Solver::Auto { exhaustive_max_d: 12, trials, seed },
            SolverKind::Exhaustive => Solver::Exhaustive,
            SolverKind::Random => Solver::Random { trials, seed },
            SolverKind::Greedy => Solver::Greedy,
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Auto => "auto",
            SolverKind::Exhaustive => "exhaustive",
            SolverKind::Random => "random",
            SolverKind::Greedy => "greedy",
        })
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Parse(format!("unknown solver {s:?}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    /// `d` for balance and Gaussian cells, `k` for width cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    /// `dim L / N` for witness cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_fractions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solvers: Option<Vec<SolverKind>>,
    /// Vectors per set in balance cells; defaults to `d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_set: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(default)]
    pub strict_steps: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        Self { experiment, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let seeds = grid(&self.seeds, &[0]);
        let mut seen = HashSet::new();
        for s in &seeds {
            if !seen.insert(s) {
                return Err(Error::Config(format!("seed {s} listed twice")));
            }
        }
        let bad = |what: &str| Err(Error::Config(format!("{what} in {} config", self.experiment)));
        if self.n.iter().flatten().chain(self.m.iter().flatten()).any(|&v| v == 0) {
            return bad("zero block size or count");
        }
        if self.dim_fractions.iter().flatten().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return bad("dim fraction outside (0, 1]");
        }
        if self.t.iter().flatten().any(|&t| !(t >= 1.0 && t.is_finite())) {
            return bad("t below 1");
        }
        if self.samples.iter().flatten().any(|&s| s == 0) || self.trials.iter().flatten().any(|&s| s == 0) {
            return bad("zero samples or trials");
        }
        if self.experiment != ExperimentId::WidthCompare && self.dims.iter().flatten().any(|&d| d == 0) {
            return bad("zero dimension");
        }
        Ok(())
    }
}

fn grid<T: Clone>(field: &Option<Vec<T>>, default: &[T]) -> Vec<T> {
    field.clone().unwrap_or_else(|| default.to_vec())
}

/// A single config object or an array of them.
pub fn parse_configs(text: &str) -> Result<Vec<ExperimentConfig>> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let configs: Vec<ExperimentConfig> = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|c| vec![c])
    }
    .map_err(|e| Error::Config(e.to_string()))?;
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}

pub fn load_configs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_configs(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub cell: usize,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub primary_name: String,
    pub primary: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub wall_time_ms: f64,
}

impl ReportRow {
    pub fn is_error(&self) -> bool {
        self.status == "error"
    }
}

struct Outcome {
    primary_name: &'static str,
    primary: f64,
    metrics: BTreeMap<String, f64>,
    status: &'static str,
}

fn status_code(s: CheckStatus) -> f64 {
    match s {
        CheckStatus::Pass => 1.0,
        CheckStatus::Inconclusive => 0.0,
        CheckStatus::Fail => -1.0,
    }
}

fn worst_status(all: &[CheckStatus]) -> &'static str {
    if all.contains(&CheckStatus::Fail) {
        "fail"
    } else if all.contains(&CheckStatus::Inconclusive) {
        "inconclusive"
    } else {
        "pass"
    }
}

type Params = BTreeMap<String, String>;

struct Cell {
    params: Params,
    seed: u64,
    run: Box<dyn Fn(u64) -> Result<Outcome> + Send + Sync>,
}

fn params(pairs: &[(&str, String)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn witness_cells(c: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for n in grid(&c.n, &[8]) {
        for m in grid(&c.m, &[24]) {
            for frac in grid(&c.dim_fractions, &[0.5]) {
                for solver in grid(&c.solvers, &[SolverKind::Auto]) {
                    for trials in grid(&c.trials, &[100_000]) {
                        for seed in grid(&c.seeds, &[0]) {
                            let strict = c.strict_steps;
                            let p = params(&[
                                ("n", n.to_string()),
                                ("m", m.to_string()),
                                ("dim_fraction", frac.to_string()),
                                ("solver", solver.to_string()),
                                ("trials", trials.to_string()),
                                ("strict_steps", strict.to_string()),
                            ]);
                            let run = move |seed| witness_cell(n, m, frac, solver, trials, strict, seed);
                            cells.push(Cell { params: p, seed, run: Box::new(run) });
                        }
                    }
                }
            }
        }
    }
    cells
}

fn witness_cell(n: usize, m: usize, frac: f64, solver: SolverKind, trials: u64, strict: bool, seed: u64) -> Result<Outcome> {
    let structure = BlockStructure::new(n, m)?;
    let big_n = structure.dim();
    let dim = ((frac * big_n as f64).round() as usize).clamp(1, big_n);
    let l = Subspace::random(big_n, dim, &mut stream_rng(seed, 0));
    let mut params = if strict { WitnessParams::strict(structure) } else { WitnessParams::default() };
    params.solver = solver.solver(trials, seed);
    let trace = run_witness(&l, structure, &params)?;
    let report = verify_trace(&trace, &l, structure, &params)?;
    let cert = &trace.certificate;
    let mut metrics = BTreeMap::new();
    metrics.insert("ratio".into(), cert.ratio);
    metrics.insert("ratio_over_m".into(), cert.ratio / m as f64);
    metrics.insert("blocks_hit".into(), cert.blocks_hit as f64);
    metrics.insert("l".into(), trace.steps_taken() as f64);
    metrics.insert("max_w_large".into(), trace.max_w_on_large());
    metrics.insert("max_block_w".into(), report.max_block_w);
    metrics.insert("norm_inf1".into(), cert.norm_inf1);
    metrics.insert("norm_2inf".into(), cert.norm_2inf);
    metrics.insert("support".into(), trace.epsilon.support as f64);
    metrics.insert("balance_achieved".into(), trace.epsilon.achieved);
    metrics.insert("max_large_count".into(), trace.steps.iter().map(|s| s.large_count).max().unwrap_or(0) as f64);
    metrics.insert("structural_pass".into(), report.structural_pass as u8 as f64);
    metrics.insert("degenerate".into(), report.degenerate as u8 as f64);
    let status = if report.structural_pass && !report.degenerate { "pass" } else { "fail" };
    Ok(Outcome { primary_name: "ratio", primary: cert.ratio, metrics, status })
}

fn balance_cells(c: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for d in grid(&c.dims, &[10]) {
        for m in grid(&c.m, &[30]) {
            for solver in grid(&c.solvers, &[SolverKind::Random]) {
                for trials in grid(&c.trials, &[100_000]) {
                    for seed in grid(&c.seeds, &[0]) {
                        let per_set = c.per_set.unwrap_or(d);
                        let p = params(&[
                            ("d", d.to_string()),
                            ("m", m.to_string()),
                            ("per_set", per_set.to_string()),
                            ("solver", solver.to_string()),
                            ("trials", trials.to_string()),
                        ]);
                        let run = move |seed| balance_cell(d, m, per_set, solver, trials, seed);
                        cells.push(Cell { params: p, seed, run: Box::new(run) });
                    }
                }
            }
        }
    }
    cells
}

fn balance_cell(d: usize, m: usize, per_set: usize, solver: SolverKind, trials: u64, seed: u64) -> Result<Outcome> {
    let instance = BalanceInstance::random(&mut stream_rng(seed, 1), d, m, per_set)?;
    let result = solver.solver(trials, seed).solve(&instance, d.div_ceil(2))?;
    let threshold = certified_threshold(d, m)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("achieved".into(), result.achieved);
    metrics.insert("threshold".into(), threshold);
    metrics.insert("target_t".into(), target_t(d, m)?);
    metrics.insert("achieved_over_threshold".into(), result.achieved / threshold);
    metrics.insert("support".into(), result.support as f64);
    let status = if result.is_certified(&instance) { "pass" } else { "fail" };
    Ok(Outcome { primary_name: "achieved", primary: result.achieved, metrics, status })
}

fn gaussian_cells(c: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for d in grid(&c.dims, &[4]) {
        for m in grid(&c.m, &[8]) {
            for t in grid(&c.t, &[1.5, 2.0, 3.0]) {
                for samples in grid(&c.samples, &[200_000]) {
                    for seed in grid(&c.seeds, &[0]) {
                        let p = params(&[
                            ("d", d.to_string()),
                            ("m", m.to_string()),
                            ("t", t.to_string()),
                            ("samples", samples.to_string()),
                        ]);
                        let run = move |seed| gaussian_cell(d, m, t, samples, seed);
                        cells.push(Cell { params: p, seed, run: Box::new(run) });
                    }
                }
            }
        }
    }
    cells
}

fn gaussian_cell(d: usize, m: usize, t: f64, samples: u64, seed: u64) -> Result<Outcome> {
    let mut rng = stream_rng(seed, 2);
    let set = random_vector_set(&mut rng, d, d + 1, 1.0);
    let eb = check_ebound(&set, d, samples, seed)?;
    let body = random_ellipsoid(&mut rng, d);
    let si = check_s_inequality(&body, t, d, samples, seed.wrapping_add(1))?;
    let (k1, k2) = (random_ellipsoid(&mut rng, d), random_ellipsoid(&mut rng, d));
    let co = check_correlation(&k1, &k2, d, samples, seed.wrapping_add(2))?;
    let sets: Vec<Vec<Vec<f64>>> = (0..m).map(|_| random_vector_set(&mut rng, d, d, 1.0)).collect();
    let it = measure_intersection_lower_bound(&sets, t, d, samples, seed.wrapping_add(3))?;
    let statuses = [eb.status, si.status, co.status, it.status];
    let mut metrics = BTreeMap::new();
    metrics.insert("ebound_status".into(), status_code(eb.status));
    metrics.insert("ebound_gamma".into(), eb.gamma.value);
    metrics.insert("s_status".into(), status_code(si.status));
    metrics.insert("s_gamma_tk".into(), si.gamma_tk.value);
    metrics.insert("s_strip_value".into(), si.strip_value);
    metrics.insert("correlation_status".into(), status_code(co.status));
    metrics.insert("correlation_gap".into(), co.gamma12.value - co.product);
    metrics.insert("intersection_status".into(), status_code(it.status));
    metrics.insert("intersection_gamma".into(), it.gamma_v.value);
    metrics.insert("intersection_product_bound".into(), it.product_bound);
    let fails = statuses.iter().filter(|s| s.is_fail()).count();
    metrics.insert("fails".into(), fails as f64);
    Ok(Outcome { primary_name: "fails", primary: fails as f64, metrics, status: worst_status(&statuses) })
}

fn width_cells(c: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    let restarts = c.restarts.unwrap_or(2);
    for n in grid(&c.n, &[2]) {
        for m in grid(&c.m, &[3]) {
            let ks = grid(&c.dims, &[n * m / 2]);
            for k in ks {
                for seed in grid(&c.seeds, &[0]) {
                    let p = params(&[
                        ("n", n.to_string()),
                        ("m", m.to_string()),
                        ("k", k.to_string()),
                        ("restarts", restarts.to_string()),
                        ("target", "2,1".to_string()),
                    ]);
                    let run = move |seed| width_cell(n, m, k, restarts, seed);
                    cells.push(Cell { params: p, seed, run: Box::new(run) });
                }
            }
        }
    }
    cells
}

fn width_cell(n: usize, m: usize, k: usize, restarts: usize, seed: u64) -> Result<Outcome> {
    let structure = BlockStructure::new(n, m)?;
    let target = MixedNormSpec::new(Exponent::TWO, Exponent::ONE);
    let vertices = b1inf_vertices(structure)?;
    let found = kolmogorov_search(&vertices, structure, target, k, restarts, seed, &HeuristicOptions::default())?;
    let complement = found.subspace.orthogonal_complement();
    let params = WitnessParams { solver: SolverKind::Auto.solver(100_000, seed), ..WitnessParams::default() };
    let trace = run_witness(&complement, structure, &params)?;
    let lower = verified_certificate(&trace, &complement, &params)?.value;
    let upper = found.estimate.value;
    let mut metrics = BTreeMap::new();
    metrics.insert("upper".into(), upper);
    metrics.insert("lower".into(), lower);
    metrics.insert("gap".into(), upper - lower);
    metrics.insert("trivial_bound".into(), m as f64);
    metrics.insert("upper_over_m".into(), upper / m as f64);
    let consistent = lower <= upper + 1e-9 && upper <= m as f64 + 1e-9;
    metrics.insert("consistent".into(), consistent as u8 as f64);
    Ok(Outcome { primary_name: "upper", primary: upper, metrics, status: if consistent { "pass" } else { "fail" } })
}

/// Runs every cell; a failing cell becomes an `error` row and the sweep goes on.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    config.validate()?;
    let cells = match config.experiment {
        ExperimentId::WitnessSweep => witness_cells(config),
        ExperimentId::BalanceSweep => balance_cells(config),
        ExperimentId::GaussianSuite => gaussian_cells(config),
        ExperimentId::WidthCompare => width_cells(config),
    };
    let experiment = config.experiment.to_string();
    Ok(cells
        .into_par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let start = Instant::now();
            let result = (cell.run)(cell.seed);
            let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
            let mut row = ReportRow {
                experiment: experiment.clone(),
                cell: i,
                params: cell.params,
                seed: cell.seed,
                status: "error".into(),
                error: None,
                primary_name: String::new(),
                primary: None,
                metrics: BTreeMap::new(),
                wall_time_ms,
            };
            match result {
                Ok(out) => {
                    row.status = out.status.into();
                    row.primary_name = out.primary_name.into();
                    row.primary = Some(out.primary).filter(|v| v.is_finite());
                    row.metrics = out.metrics.into_iter().filter(|(_, v)| v.is_finite()).collect();
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect())
}

const BASE_COLUMNS: [&str; 7] = ["experiment", "cell", "seed", "status", "error", "primary_name", "primary"];
const WALL_COLUMN: &str = "wall_time_ms";

/// Header: the base columns, `param:*` and `metric:*` in sorted order, then
/// the wall time.
pub fn csv_header(rows: &[ReportRow]) -> Vec<String> {
    let params: BTreeSet<&String> = rows.iter().flat_map(|r| r.params.keys()).collect();
    let metrics: BTreeSet<&String> = rows.iter().flat_map(|r| r.metrics.keys()).collect();
    BASE_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(params.into_iter().map(|p| format!("param:{p}")))
        .chain(metrics.into_iter().map(|m| format!("metric:{m}")))
        .chain(std::iter::once(WALL_COLUMN.to_string()))
        .collect()
}

pub fn emit_report<W: Write>(rows: &[ReportRow], format: Format, out: W) -> Result<()> {
    match format {
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, rows)?;
            out.write_all(b"\n")?;
        }
        Format::Csv => {
            let header = csv_header(rows);
            let mut w = csv::Writer::from_writer(out);
            w.write_record(&header)?;
            for r in rows {
                let record: Vec<String> = header
                    .iter()
                    .map(|h| match h.as_str() {
                        "experiment" => r.experiment.clone(),
                        "cell" => r.cell.to_string(),
                        "seed" => r.seed.to_string(),
                        "status" => r.status.clone(),
                        "error" => r.error.clone().unwrap_or_default(),
                        "primary_name" => r.primary_name.clone(),
                        "primary" => r.primary.map(|v| v.to_string()).unwrap_or_default(),
                        WALL_COLUMN => r.wall_time_ms.to_string(),
                        other => {
                            if let Some(p) = other.strip_prefix("param:") {
                                r.params.get(p).cloned().unwrap_or_default()
                            } else {
                                let m = other.strip_prefix("metric:").unwrap_or(other);
                                r.metrics.get(m).map(|v| v.to_string()).unwrap_or_default()
                            }
                        }
                    })
                    .collect();
                w.write_record(&record)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn emit_report_to_path(rows: &[ReportRow], format: Format, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    emit_report(rows, format, file)
}

/// Reads rows back from the CSV layout of [`emit_report`].
pub fn parse_csv_report<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}"))) };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut row = ReportRow {
            experiment: String::new(),
            cell: 0,
            params: BTreeMap::new(),
            seed: 0,
            status: String::new(),
            error: None,
            primary_name: String::new(),
            primary: None,
            metrics: BTreeMap::new(),
            wall_time_ms: 0.0,
        };
        for (h, v) in header.iter().zip(record.iter()) {
            match h.as_str() {
                "experiment" => row.experiment = v.into(),
                "cell" => row.cell = v.parse().map_err(|_| Error::Parse(format!("bad cell {v:?}")))?,
                "seed" => row.seed = v.parse().map_err(|_| Error::Parse(format!("bad seed {v:?}")))?,
                "status" => row.status = v.into(),
                "error" => row.error = (!v.is_empty()).then(|| v.to_string()),
                "primary_name" => row.primary_name = v.into(),
                "primary" => row.primary = if v.is_empty() { None } else { Some(num(v)?) },
                WALL_COLUMN => row.wall_time_ms = num(v)?,
                other => {
                    if v.is_empty() {
                        continue;
                    }
                    if let Some(p) = other.strip_prefix("param:") {
                        row.params.insert(p.into(), v.into());
                    } else if let Some(m) = other.strip_prefix("metric:") {
                        row.metrics.insert(m.into(), num(v)?);
                    }
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Copies of `rows` with the wall time zeroed, for byte comparisons.
pub fn without_wall_time(rows: &[ReportRow]) -> Vec<ReportRow> {
    rows.iter().cloned().map(|r| ReportRow { wall_time_ms: 0.0, ..r }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emit(rows: &[ReportRow], format: Format) -> String {
        let mut buf = Vec::new();
        emit_report(rows, format, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_grid_gives_empty_report() {
        let mut c = ExperimentConfig::new(ExperimentId::WitnessSweep);
        c.m = Some(vec![]);
        assert!(run_experiment(&c).unwrap().is_empty());
        let csv = emit(&[], Format::Csv);
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(csv.trim_end(), "experiment,cell,seed,status,error,primary_name,primary,wall_time_ms");
    }

    #[test]
    fn config_parsing() {
        let one = parse_configs(r#"{"experiment": "balance-sweep", "dims": [6], "seeds": [1, 2]}"#).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].dims, Some(vec![6]));
        let many = parse_configs(r#"[{"experiment": "gaussian-suite"}, {"experiment": "width-compare"}]"#).unwrap();
        assert_eq!(many.len(), 2);
        for bad in [
            r#"{"experiment": "nope"}"#,
            r#"{"experiment": "balance-sweep", "seeds": [1, 1]}"#,
            r#"{"experiment": "balance-sweep", "typo": 3}"#,
            r#"{"experiment": "gaussian-suite", "t": [0.5]}"#,
            "not json",
        ] {
            assert!(matches!(parse_configs(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn balance_rows_and_formats() {
        let mut c = ExperimentConfig::new(ExperimentId::BalanceSweep);
        c.dims = Some(vec![6]);
        c.m = Some(vec![12]);
        c.trials = Some(vec![500]);
        c.seeds = Some(vec![3, 4]);
        let rows = run_experiment(&c).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 4]);
        for r in &rows {
            assert!(r.metrics["achieved"] <= r.metrics["threshold"]);
            assert_eq!(r.status, "pass");
        }
        let csv = emit(&rows[..1], Format::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
        assert!(lines[0].ends_with("wall_time_ms"));

        let json = emit(&rows, Format::Json);
        let back: Vec<ReportRow> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rows);
        let csv = emit(&back, Format::Csv);
        let again = parse_csv_report(csv.as_bytes()).unwrap();
        for (a, b) in rows.iter().zip(&again) {
            assert_eq!(a.params, b.params);
            for (k, v) in &a.metrics {
                let w = b.metrics[k];
                assert!((v - w).abs() <= 1e-12 * v.abs().max(1e-300), "{k}");
            }
        }
    }

    #[test]
    fn rows_are_reproducible_and_independent() {
        let mut c = ExperimentConfig::new(ExperimentId::WitnessSweep);
        c.n = Some(vec![4]);
        c.m = Some(vec![8, 12]);
        c.seeds = Some(vec![0, 1]);
        let a = without_wall_time(&run_experiment(&c).unwrap());
        let b = without_wall_time(&run_experiment(&c).unwrap());
        assert_eq!(emit(&a, Format::Csv), emit(&b, Format::Csv));
        assert_eq!(emit(&a, Format::Json), emit(&b, Format::Json));
        c.m = Some(vec![12]);
        let sub = run_experiment(&c).unwrap();
        for (x, y) in sub.iter().zip(&a[2..]) {
            assert_eq!(x.metrics, y.metrics);
            assert_eq!(x.params, y.params);
        }
        assert!(a.iter().all(|r| r.status == "pass" && r.primary.unwrap() > 0.0));
    }

    #[test]
    fn failing_cell_is_recorded() {
        let mut c = ExperimentConfig::new(ExperimentId::WidthCompare);
        c.n = Some(vec![10]);
        c.m = Some(vec![6]);
        let rows = run_experiment(&c).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].is_error());
        assert!(rows[0].error.as_deref().unwrap().contains("vertex"));
    }

    #[test]
    fn width_compare_is_consistent() {
        let c = ExperimentConfig::new(ExperimentId::WidthCompare);
        let rows = run_experiment(&c).unwrap();
        assert_eq!(rows[0].status, "pass", "{:?}", rows[0]);
        assert!(rows[0].metrics["lower"] <= rows[0].metrics["upper"] + 1e-9);
    }
}
