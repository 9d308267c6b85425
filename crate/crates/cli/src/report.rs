//! `metarl report` and `metarl surface`.

use std::path::{Path, PathBuf};

use metarl::evalreport::{
    aggregate, drift_surface, read_costs_csv, read_records_csv, write_report_csv, write_surface_csv, AggregateReport,
    Method,
};
use metarl::learnedalgos::Artifact;
use metarl::numcore::RngStream;
use metarl::{Error, Result};

use crate::pipeline::{Manifest, COSTS_FILE, MANIFEST_FILE};

pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";

/// Default drift-surface grid: r in [0.5, 2], A in [-2, 2].
pub fn default_grid() -> (Vec<f64>, Vec<f64>) {
    let r = (0..=60).map(|i| 0.5 + 1.5 * i as f64 / 60.0).collect();
    let a = (0..=8).map(|i| -2.0 + 0.5 * i as f64).collect();
    (r, a)
}

pub fn cmd_surface(artifact: &Path, out: &Path) -> Result<usize> {
    let d = Artifact::load(artifact)?.into_drift()?;
    let (r, a) = default_grid();
    let pts = drift_surface(&d, &r, &a)?;
    write_surface_csv(out, &pts)?;
    Ok(pts.len())
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub report: AggregateReport,
    pub inputs: Vec<PathBuf>,
    pub surfaces: Vec<PathBuf>,
}

/// Aggregate every record file matching `pattern`. Cost files and manifests
/// sitting next to a record file are picked up; each drift artifact named by
/// those manifests gets a surface CSV in `out_dir`.
pub fn cmd_report(pattern: &str, baseline: Method, out_dir: &Path, n_boot: usize, seed: u64) -> Result<ReportOutput> {
    let paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| Error::Config(format!("bad glob `{pattern}`: {e}")))?
        .filter_map(|p| p.ok())
        .collect();
    if paths.is_empty() {
        return Err(Error::Config(format!("no files match `{pattern}`")));
    }
    let mut records = Vec::new();
    let mut costs = Vec::new();
    let mut artifacts = Vec::new();
    for p in &paths {
        records.extend(read_records_csv(p)?);
        let dir = p.parent().unwrap_or_else(|| Path::new("."));
        let c = dir.join(COSTS_FILE);
        if c.exists() {
            costs.extend(read_costs_csv(&c)?);
        }
        let m = dir.join(MANIFEST_FILE);
        if m.exists() {
            let man = Manifest::load(&m)?;
            if let Some(a) = man.artifact {
                artifacts.push((man.name, a));
            }
        }
    }
    let report = aggregate(&records, &costs, baseline, n_boot, &RngStream::new(seed, 0))?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(REPORT_TEXT), report.to_text())?;
    write_report_csv(&out_dir.join(REPORT_CSV), &report)?;
    let mut surfaces = Vec::new();
    for (name, a) in artifacts {
        if !a.exists() {
            continue;
        }
        if let Ok(Artifact::Drift(_)) = Artifact::load(&a) {
            let out = out_dir.join(format!("surface_{name}.csv"));
            cmd_surface(&a, &out)?;
            surfaces.push(out);
        }
    }
    Ok(ReportOutput {
        report,
        inputs: paths,
        surfaces,
    })
}
