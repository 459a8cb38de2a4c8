//! Trial grid execution and the result directory.
//!
//! Layout of an output directory:
//!
//! - `scenario.json`: the resolved scenario, defaults filled in
//! - `trials.json`: one entry per trial with its start, trace file, abort reason and wall time
//! - `traces/NNN_<method>_SS.csv`: per-trial traces
//! - `metrics.csv`: raw metrics and safety extremes, one row per trial
//! - `summary.json`: per-method means, per-trial normalized metrics, solver timing
//!
//! Everything except the `solve_ms` column of the traces, `wall_s` in
//! `trials.json` and the timing fields of `summary.json` is a deterministic
//! function of scenario and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{compute_metrics, normalize_metrics, MetricInputs, SafetyAudit, TrialMetrics};
use crate::scenario::Scenario;
use crate::trace::{read_trace, write_trace, TraceRow};
use crate::trial::{run_trial, Method, TrialOutcome, TrialSpec, WallClock};
use crate::BenchError;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub methods: Vec<Method>,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            jobs: 0,
            seed: 0,
        }
    }
}

/// `trials.json` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub spec: TrialSpec,
    pub trace: String,
    pub failure: Option<String>,
    #[serde(default)]
    pub wall_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: usize,
    pub method: Method,
    pub start_index: usize,
    pub trace: String,
    pub failure: Option<String>,
    pub metrics: Option<TrialMetrics>,
    pub normalized: Option<TrialMetrics>,
    pub audit: Option<SafetyAudit>,
    pub violations: Vec<String>,
    pub updates: usize,
    pub mean_solve_ms: Option<f64>,
    pub max_solve_ms: Option<f64>,
    pub wall_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub trials: usize,
    pub reached: usize,
    pub aborted: usize,
    pub success_rate: f64,
    pub mean: Option<TrialMetrics>,
    pub mean_normalized: Option<TrialMetrics>,
    pub mean_solve_ms: Option<f64>,
    pub max_solve_ms: Option<f64>,
    pub max_wall_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    /// Trials entering the normalization.
    pub pool_size: usize,
    pub safety_violations: usize,
    pub methods: BTreeMap<Method, MethodSummary>,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub summary: Summary,
    pub out: PathBuf,
}

impl SuiteReport {
    /// No aborted trial and no safety violation.
    pub fn passed(&self) -> bool {
        self.summary
            .trials
            .iter()
            .all(|t| t.failure.is_none() && t.violations.is_empty())
    }
}

/// `metrics.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct MetricsRow {
    pub trial: usize,
    pub method: Method,
    pub start_index: usize,
    pub status: String,
    pub SI: Option<f64>,
    pub AT: Option<f64>,
    pub TC: Option<f64>,
    pub CM: Option<f64>,
    pub CD: Option<f64>,
    pub CI: Option<f64>,
    pub min_psi0: Option<f64>,
    pub max_abs_s: Option<f64>,
    pub max_abs_omega: Option<f64>,
    pub min_constraint: Option<f64>,
}

pub fn trial_specs(scenario: &Scenario, options: &SuiteOptions) -> Result<Vec<TrialSpec>, BenchError> {
    let starts = scenario.all_starts(options.seed)?;
    let mut methods = options.methods.clone();
    methods.sort();
    methods.dedup();
    let mut specs = Vec::new();
    for method in methods {
        for (start_index, start) in starts.iter().enumerate() {
            specs.push(TrialSpec {
                id: specs.len(),
                method,
                start_index,
                start: *start,
                seed: options.seed,
                duration: scenario.limits.t_final,
            });
        }
    }
    Ok(specs)
}

/// Runs every trial, writes the output directory and returns the summary.
///
/// Trials run on a worker pool; all files are written afterwards, in trial order.
pub fn run_suite(scenario: &Scenario, out: &Path, options: &SuiteOptions) -> Result<SuiteReport, BenchError> {
    let specs = trial_specs(scenario, options)?;
    log::info!("{}: {} trials", scenario.name, specs.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<TrialOutcome, BenchError>> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let outcome = run_trial(scenario, spec, &WallClock::new());
                if let Ok(o) = &outcome {
                    let last = o.rows.last().map(|r| (r.qx, r.qy));
                    log::info!("trial {} {} start {} done, final q = {:?}", spec.id, spec.method, spec.start_index, last);
                }
                outcome
            })
            .collect()
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;

    let traces = out.join("traces");
    fs::create_dir_all(&traces).map_err(|e| BenchError::io(&traces, e))?;
    write_json(&out.join("scenario.json"), scenario)?;
    let mut manifest = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let name = o.spec.trace_name();
        write_trace(&traces.join(&name), &o.rows)?;
        manifest.push(ManifestEntry {
            spec: o.spec.clone(),
            trace: name,
            failure: o.failure.clone(),
            wall_s: Some(o.wall_s),
        });
    }
    write_json(&out.join("trials.json"), &manifest)?;
    let trials: Vec<(ManifestEntry, Vec<TraceRow>)> = manifest.into_iter().zip(outcomes.into_iter().map(|o| o.rows)).collect();
    finish(scenario, out, &trials)
}

/// Recomputes `metrics.csv` and `summary.json` from an existing output directory.
pub fn recompute(out: &Path) -> Result<SuiteReport, BenchError> {
    let scenario: Scenario = read_json(&out.join("scenario.json"))?;
    let manifest: Vec<ManifestEntry> = read_json(&out.join("trials.json"))?;
    let mut trials = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let rows = read_trace(&out.join("traces").join(&entry.trace))?;
        trials.push((entry, rows));
    }
    finish(&scenario, out, &trials)
}

fn finish(scenario: &Scenario, out: &Path, trials: &[(ManifestEntry, Vec<TraceRow>)]) -> Result<SuiteReport, BenchError> {
    let inputs = MetricInputs::from_scenario(scenario);
    let mut records: Vec<TrialRecord> = trials
        .iter()
        .map(|(entry, rows)| {
            let metrics = compute_metrics(rows, &inputs).ok();
            let audit = (!rows.is_empty()).then(|| SafetyAudit::of(rows));
            let violations = audit
                .map(|a| a.violations(scenario.limits.s_bar, scenario.limits.omega_bar))
                .unwrap_or_default();
            let solves: Vec<f64> = rows.iter().filter_map(|r| r.solve_ms).collect();
            TrialRecord {
                id: entry.spec.id,
                method: entry.spec.method,
                start_index: entry.spec.start_index,
                trace: entry.trace.clone(),
                failure: entry.failure.clone(),
                metrics,
                normalized: None,
                audit,
                violations,
                updates: solves.len(),
                mean_solve_ms: mean(&solves),
                max_solve_ms: solves.iter().copied().reduce(f64::max),
                wall_s: entry.wall_s,
            }
        })
        .collect();

    let pooled: Vec<usize> = (0..records.len()).filter(|&i| records[i].metrics.is_some()).collect();
    let raw: Vec<TrialMetrics> = pooled.iter().filter_map(|&i| records[i].metrics).collect();
    for (&i, n) in pooled.iter().zip(normalize_metrics(&raw)) {
        records[i].normalized = Some(n);
    }

    let mut methods = BTreeMap::new();
    for method in Method::ALL {
        let group: Vec<&TrialRecord> = records.iter().filter(|r| r.method == method).collect();
        if group.is_empty() {
            continue;
        }
        let reached = group.iter().filter(|r| r.metrics.is_some_and(|m| m.reached())).count();
        let solves: Vec<f64> = trials
            .iter()
            .filter(|(e, _)| e.spec.method == method)
            .flat_map(|(_, rows)| rows.iter().filter_map(|r| r.solve_ms))
            .collect();
        methods.insert(
            method,
            MethodSummary {
                trials: group.len(),
                reached,
                aborted: group.iter().filter(|r| r.failure.is_some()).count(),
                success_rate: reached as f64 / group.len() as f64,
                mean: mean_metrics(group.iter().filter_map(|r| r.metrics)),
                mean_normalized: mean_metrics(group.iter().filter_map(|r| r.normalized)),
                mean_solve_ms: mean(&solves),
                max_solve_ms: solves.iter().copied().reduce(f64::max),
                max_wall_s: group.iter().filter_map(|r| r.wall_s).reduce(f64::max),
            },
        );
    }

    let summary = Summary {
        scenario: scenario.name.clone(),
        pool_size: pooled.len(),
        safety_violations: records.iter().filter(|r| !r.violations.is_empty()).count(),
        methods,
        trials: records,
    };
    write_metrics_csv(&out.join("metrics.csv"), &summary.trials)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(SuiteReport {
        summary,
        out: out.to_path_buf(),
    })
}

fn write_metrics_csv(path: &Path, records: &[TrialRecord]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::csv(path, e))?;
    for r in records {
        let m = r.metrics.map(|m| m.to_array());
        let pick = |j: usize| m.map(|a| a[j]);
        let status = match (&r.failure, r.violations.is_empty()) {
            (Some(_), _) => "aborted",
            (None, false) => "unsafe",
            (None, true) => "ok",
        };
        w.serialize(MetricsRow {
            trial: r.id,
            method: r.method,
            start_index: r.start_index,
            status: status.to_string(),
            SI: pick(0),
            AT: pick(1),
            TC: pick(2),
            CM: pick(3),
            CD: pick(4),
            CI: pick(5),
            min_psi0: r.audit.map(|a| a.min_psi0),
            max_abs_s: r.audit.map(|a| a.max_abs_s),
            max_abs_omega: r.audit.map(|a| a.max_abs_omega),
            min_constraint: r.audit.map(|a| a.min_constraint),
        })
        .map_err(|e| BenchError::csv(path, e))?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, BenchError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::csv(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .map_err(|e| BenchError::csv(path, e))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn mean_metrics(items: impl Iterator<Item = TrialMetrics>) -> Option<TrialMetrics> {
    let arrays: Vec<[f64; 6]> = items.map(|m| m.to_array()).collect();
    if arrays.is_empty() {
        return None;
    }
    let mut acc = [0.0; 6];
    for a in &arrays {
        for j in 0..6 {
            acc[j] += a[j];
        }
    }
    Some(TrialMetrics::from_array(acc.map(|s| s / arrays.len() as f64)))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), BenchError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| BenchError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BenchError> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| BenchError::Json {
        path: path.display().to_string(),
        source: e,
    })
}
