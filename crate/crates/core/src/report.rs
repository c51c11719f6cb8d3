//! Result files.
//!
//! `results.csv` and `comparison.csv` hold no wall-clock values, so rerunning
//! a config with the same seed reproduces them byte for byte. Timings go to
//! `timings.csv` and the JSON summary.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::accuracy::AuditReport;
use crate::config::{DesignId, EngineKind};
use crate::oc::OcEstimate;

/// One engine's estimates for one case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineRun {
    pub engine: EngineKind,
    pub replicates: usize,
    pub wall_clock_s: f64,
    pub estimates: Vec<OcEstimate>,
}

/// Everything computed for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub id: String,
    pub runs: Vec<EngineRun>,
    /// Exact OC values, when the design admits enumeration.
    pub exact: Option<Vec<(String, f64)>>,
}

impl CaseResult {
    pub fn run(&self, engine: EngineKind) -> Option<&EngineRun> {
        self.runs.iter().find(|r| r.engine == engine)
    }
}

/// `design, scenario_id, engine, oc, estimate, se, replicates`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow<'a> {
    pub design: &'a str,
    pub scenario_id: &'a str,
    pub engine: &'a str,
    pub oc: &'a str,
    pub estimate: f64,
    pub se: f64,
    pub replicates: usize,
}

#[derive(Serialize)]
struct TimingRow<'a> {
    design: &'a str,
    scenario_id: &'a str,
    engine: &'a str,
    replicates: usize,
    wall_clock_s: f64,
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    scenario_id: &'a str,
    oc: &'a str,
    psi_q: f64,
    se_q: f64,
    psi_mc: f64,
    se_mc: f64,
    mc_minus_q: f64,
    combined_se: f64,
}

/// A `(x, y, series)` point for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row).map_err(io::Error::other)?;
    }
    w.flush()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Flattens results into rows, in case then engine then OC order.
pub fn result_rows<'a>(design: &'a str, results: &'a [CaseResult]) -> Vec<ResultRow<'a>> {
    let mut rows = Vec::new();
    for case in results {
        for run in &case.runs {
            for e in &run.estimates {
                rows.push(ResultRow {
                    design,
                    scenario_id: &case.id,
                    engine: run.engine.as_str(),
                    oc: &e.name,
                    estimate: e.estimate,
                    se: e.se,
                    replicates: e.replicates,
                });
            }
        }
    }
    rows
}

#[derive(Serialize)]
struct CaseSummary<'a> {
    id: &'a str,
    runs: &'a [EngineRun],
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<serde_json::Map<String, serde_json::Value>>,
    /// `T_MC / T_Q` per replicate.
    #[serde(skip_serializing_if = "Option::is_none")]
    time_ratio_mc_over_q: Option<f64>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    design: &'a str,
    seed: u64,
    description: Option<&'a str>,
    cases: Vec<CaseSummary<'a>>,
}

/// Per-replicate wall-clock ratio MC over Q.
pub fn time_ratio(case: &CaseResult) -> Option<f64> {
    let q = case.run(EngineKind::Q)?;
    let mc = case.run(EngineKind::Mc)?;
    let tq = q.wall_clock_s / q.replicates as f64;
    let tmc = mc.wall_clock_s / mc.replicates as f64;
    (tq > 0.0).then(|| tmc / tq)
}

/// Writes `results.csv`, `timings.csv`, `summary.json` and, when both
/// engines ran, `comparison.csv`. Returns the files written.
pub fn write_run(
    dir: &Path,
    design: DesignId,
    seed: u64,
    description: Option<&str>,
    results: &[CaseResult],
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let design = design.as_str();
    let mut files = Vec::new();

    let path = dir.join("results.csv");
    write_csv(&path, result_rows(design, results))?;
    files.push(path);

    let path = dir.join("timings.csv");
    write_csv(
        &path,
        results.iter().flat_map(|c| {
            c.runs.iter().map(move |r| TimingRow {
                design,
                scenario_id: &c.id,
                engine: r.engine.as_str(),
                replicates: r.replicates,
                wall_clock_s: r.wall_clock_s,
            })
        }),
    )?;
    files.push(path);

    let both = results.iter().all(|c| c.run(EngineKind::Q).is_some() && c.run(EngineKind::Mc).is_some());
    if both {
        let path = dir.join("comparison.csv");
        let mut rows = Vec::new();
        for c in results {
            let (q, mc) = (c.run(EngineKind::Q).unwrap(), c.run(EngineKind::Mc).unwrap());
            for eq in &q.estimates {
                if let Some(em) = mc.estimates.iter().find(|e| e.name == eq.name) {
                    rows.push(ComparisonRow {
                        scenario_id: &c.id,
                        oc: &eq.name,
                        psi_q: eq.estimate,
                        se_q: eq.se,
                        psi_mc: em.estimate,
                        se_mc: em.se,
                        mc_minus_q: em.estimate - eq.estimate,
                        combined_se: eq.se.hypot(em.se),
                    });
                }
            }
        }
        write_csv(&path, rows)?;
        files.push(path);
    }

    let summary = RunSummary {
        design,
        seed,
        description,
        cases: results
            .iter()
            .map(|c| CaseSummary {
                id: &c.id,
                runs: &c.runs,
                exact: c.exact.as_ref().map(|ex| {
                    ex.iter()
                        .map(|(k, v)| (k.clone(), serde_json::json!(v)))
                        .collect()
                }),
                time_ratio_mc_over_q: time_ratio(c),
            })
            .collect(),
    };
    let path = dir.join("summary.json");
    write_json(&path, &summary)?;
    files.push(path);
    Ok(files)
}

/// `plot.csv` with columns `x, y, series`.
pub fn write_plot(path: &Path, points: &[PlotPoint]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_csv(path, points)
}

/// Long-format rows of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub x: f64,
    pub scenario_id: String,
    pub engine: String,
    pub oc: String,
    pub estimate: f64,
    pub se: f64,
    pub replicates: usize,
}

/// RMSE of repeated estimates at one time budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub scenario_id: String,
    pub engine: String,
    pub oc: String,
    pub budget_s: f64,
    /// Replicates that fit in the budget; 0 when not even one does.
    pub replicates: usize,
    pub repeats: usize,
    /// Empty when no replicate fits in the budget.
    pub rmse: Option<f64>,
    pub exact: f64,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_csv(path, rows)
}

#[derive(Serialize)]
struct AuditSummary<'a> {
    oc: &'a str,
    scenarios: usize,
    delta: f64,
    delta_interval: (f64, f64),
    tau: f64,
    tau_interval: (f64, f64),
    degenerate: bool,
    mean_se_q: f64,
    mean_se_mc: f64,
}

/// Writes `audit.csv` and `audit_summary.json`.
pub fn write_audit(dir: &Path, report: &AuditReport) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("audit.csv");
    write_csv(&csv_path, &report.records)?;
    let json_path = dir.join("audit_summary.json");
    write_json(
        &json_path,
        &AuditSummary {
            oc: &report.oc,
            scenarios: report.records.len(),
            delta: report.fit.delta,
            delta_interval: report.fit.delta_interval,
            tau: report.fit.tau,
            tau_interval: report.fit.tau_interval,
            degenerate: report.fit.degenerate,
            mean_se_q: report.mean_se_q,
            mean_se_mc: report.mean_se_mc,
        },
    )?;
    Ok(vec![csv_path, json_path])
}
