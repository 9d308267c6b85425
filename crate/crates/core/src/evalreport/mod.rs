//! Evaluation protocol: per-environment normalization, IQM, stratified
//! bootstrap intervals, cost accounting and drift surfaces.

mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learnedalgos::{drift_eval, DriftFunction};
use crate::numcore::RngStream;
use crate::rltrain::csv_err;

pub use stats::{iqm, quantile_sorted, stratified_bootstrap_ci, BootstrapCi};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BlackboxEs,
    DistillSame,
    DistillSmaller,
    DistillSymbolic,
    LlmProposal,
    HandcraftedBaseline,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::BlackboxEs,
        Method::DistillSame,
        Method::DistillSmaller,
        Method::DistillSymbolic,
        Method::LlmProposal,
        Method::HandcraftedBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BlackboxEs => "blackbox_es",
            Method::DistillSame => "distill_same",
            Method::DistillSmaller => "distill_smaller",
            Method::DistillSymbolic => "distill_symbolic",
            Method::LlmProposal => "llm_proposal",
            Method::HandcraftedBaseline => "handcrafted_baseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistTag {
    InDist,
    OutDist,
}

impl DistTag {
    pub fn name(self) -> &'static str {
        match self {
            DistTag::InDist => "in_dist",
            DistTag::OutDist => "out_dist",
        }
    }
}

/// One evaluation run. Wall time is kept in [`CostRecord`] so that record
/// files are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub env_id: String,
    pub dist: DistTag,
    pub seed: u64,
    pub final_return: f64,
    pub env_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    MetaTrain,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub method: Method,
    pub phase: Phase,
    pub env_steps: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRecord {
    pub record: RunRecord,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub records: Vec<NormalizedRecord>,
    /// Environments whose baseline mean return is not positive.
    pub excluded: Vec<(DistTag, String)>,
}

/// Divides every return by the baseline method's mean return on the same
/// (distribution, environment). Environments with a baseline mean `<= 0`
/// are dropped and listed in `excluded`.
pub fn normalize_returns(records: &[RunRecord], baseline: Method) -> Result<Normalized> {
    let mut sums: BTreeMap<(DistTag, &str), (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.method == baseline) {
        let e = sums.entry((r.dist, r.env_id.as_str())).or_insert((0.0, 0));
        e.0 += r.final_return;
        e.1 += 1;
    }
    let missing: BTreeSet<String> = records
        .iter()
        .filter(|r| !sums.contains_key(&(r.dist, r.env_id.as_str())))
        .map(|r| format!("{}/{}", r.dist.name(), r.env_id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingBaseline(missing.into_iter().collect()));
    }
    let means: BTreeMap<(DistTag, &str), f64> = sums.iter().map(|(k, (s, n))| (*k, s / *n as f64)).collect();
    let excluded: Vec<(DistTag, String)> = means
        .iter()
        .filter(|(_, m)| !(**m > 0.0))
        .map(|((d, e), _)| (*d, e.to_string()))
        .collect();
    let out = records
        .iter()
        .filter_map(|r| {
            let m = means[&(r.dist, r.env_id.as_str())];
            (m > 0.0).then(|| NormalizedRecord {
                record: r.clone(),
                score: r.final_return / m,
            })
        })
        .collect();
    Ok(Normalized { records: out, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub dist: DistTag,
    pub n_records: usize,
    pub iqm: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub samples: u64,
    pub train_s: f64,
    pub test_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub rows: Vec<ReportRow>,
    pub excluded: Vec<(DistTag, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodCost {
    /// Environment steps spent on meta-training.
    pub samples: u64,
    pub train_s: f64,
    pub test_s: f64,
    /// Environment steps spent on evaluation runs.
    pub test_samples: u64,
}

pub fn cost_accounting(costs: &[CostRecord]) -> BTreeMap<Method, MethodCost> {
    let mut out: BTreeMap<Method, MethodCost> = BTreeMap::new();
    for c in costs {
        let m = out.entry(c.method).or_default();
        match c.phase {
            Phase::MetaTrain => {
                m.samples += c.env_steps;
                m.train_s += c.wall_time_s;
            }
            Phase::Test => {
                m.test_samples += c.env_steps;
                m.test_s += c.wall_time_s;
            }
        }
    }
    out
}

/// Pooled normalized IQM and bootstrap interval for every (method, dist)
/// cell, strata being environments.
pub fn aggregate(records: &[RunRecord], costs: &[CostRecord], baseline: Method, n_boot: usize, rng: &RngStream) -> Result<AggregateReport> {
    let norm = normalize_returns(records, baseline)?;
    let mut cells: BTreeMap<(Method, DistTag), BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in &norm.records {
        cells
            .entry((r.record.method, r.record.dist))
            .or_default()
            .entry(r.record.env_id.as_str())
            .or_default()
            .push(r.score);
    }
    let cost = cost_accounting(costs);
    let mut rows = Vec::new();
    for (i, ((method, dist), envs)) in cells.into_iter().enumerate() {
        let strata: Vec<Vec<f64>> = envs.into_values().collect();
        let ci = stratified_bootstrap_ci(&strata, n_boot, 0.95, &rng.derive(i as u64))?;
        let c = cost.get(&method).copied().unwrap_or_default();
        rows.push(ReportRow {
            method,
            dist,
            n_records: strata.iter().map(Vec::len).sum(),
            iqm: ci.point,
            ci_lo: ci.lo,
            ci_hi: ci.hi,
            samples: c.samples,
            train_s: c.train_s,
            test_s: c.test_s,
        });
    }
    Ok(AggregateReport {
        rows,
        excluded: norm.excluded,
    })
}

impl AggregateReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&format!(
                "{:<22} {:<8} n={:<4} iqm={:.4} ci=[{:.4}, {:.4}] samples={} train_s={:.1} test_s={:.1}\n",
                r.method.name(),
                r.dist.name(),
                r.n_records,
                r.iqm,
                r.ci_lo,
                r.ci_hi,
                r.samples,
                r.train_s,
                r.test_s
            ));
        }
        for (d, e) in &self.excluded {
            s.push_str(&format!("excluded {}/{}: baseline mean return <= 0\n", d.name(), e));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub r: f64,
    pub a: f64,
    pub d: f64,
    pub dd_dr: f64,
}

pub const SURFACE_FD_STEP: f64 = 1e-5;

/// Drift values and central-difference slopes in `r` over a grid.
pub fn drift_surface(d: &DriftFunction, r_grid: &[f64], a_grid: &[f64]) -> Result<Vec<SurfacePoint>> {
    let mut out = Vec::with_capacity(r_grid.len() * a_grid.len());
    for &r in r_grid {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("surface ratio {r} must be finite and > 0")));
        }
        let h = SURFACE_FD_STEP.min(r / 2.0);
        for &a in a_grid {
            let v = drift_eval(d, r, a)?;
            let dd = (drift_eval(d, r + h, a)? - drift_eval(d, r - h, a)?) / (2.0 * h);
            out.push(SurfacePoint { r, a, d: v, dd_dr: dd });
        }
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|x| x.map_err(csv_err)).collect()
}

pub fn write_records_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    write_csv(path, records)
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RunRecord>> {
    read_csv(path)
}

pub fn write_costs_csv(path: &Path, costs: &[CostRecord]) -> Result<()> {
    write_csv(path, costs)
}

pub fn read_costs_csv(path: &Path) -> Result<Vec<CostRecord>> {
    read_csv(path)
}

pub fn write_report_csv(path: &Path, report: &AggregateReport) -> Result<()> {
    write_csv(path, &report.rows)
}

pub fn write_surface_csv(path: &Path, points: &[SurfacePoint]) -> Result<()> {
    write_csv(path, points)
}
