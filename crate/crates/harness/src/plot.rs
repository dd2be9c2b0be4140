//! `emit-plot-data`: running-average curves from finished runs.
//!
//! Every metrics.csv under the run directory is a curve. Curves in
//! `seed-<s>` directories are averaged into one curve per parent directory
//! (the arm). The output `running_avg.csv` has a `t` column and one column
//! per arm; values are held from the last sampled slot at or before `t` and
//! left empty past the end of a curve.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::output::{create_writer, io_err};
use crate::HarnessError;

pub const DEFAULT_POINTS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    /// `(t, running_avg)`, ascending in `t`.
    pub points: Vec<(u64, f64)>,
}

impl Curve {
    pub fn end(&self) -> u64 {
        self.points.last().map_or(0, |p| p.0)
    }

    /// Value at the last sample at or before `t`, if `t` is in range.
    pub fn at(&self, t: u64) -> Option<f64> {
        if t > self.end() {
            return None;
        }
        let i = self.points.partition_point(|p| p.0 <= t);
        (i > 0).then(|| self.points[i - 1].1)
    }
}

pub fn read_curve(path: &Path) -> Result<Curve, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::MissingInput(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| HarnessError::MissingInput(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::MissingInput(format!("{}: no `{name}` column", path.display())))
    };
    let (ti, ai) = (col("t")?, col("running_avg")?);
    let mut points = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| HarnessError::MissingInput(format!("{}: {e}", path.display())))?;
        let parse_err = |_| HarnessError::MissingInput(format!("{}: malformed row", path.display()));
        let t: u64 = rec[ti].parse().map_err(|_| parse_err(()))?;
        let a: f64 = rec[ai].parse().map_err(|_| parse_err(()))?;
        points.push((t, a));
    }
    Ok(Curve { points })
}

fn arm_label(run_dir: &Path, metrics: &Path) -> String {
    let dir = metrics.parent().unwrap_or(run_dir);
    let dir = match dir.file_name().and_then(|n| n.to_str()) {
        Some(name) if name.starts_with("seed-") => dir.parent().unwrap_or(run_dir),
        _ => dir,
    };
    match dir.strip_prefix(run_dir) {
        Ok(rel) if !rel.as_os_str().is_empty() => rel.to_string_lossy().replace('\\', "/"),
        _ => "run".to_string(),
    }
}

/// Evenly spaced picks from `grid` that always keep both endpoints.
pub fn downsample(grid: &[u64], points: usize) -> Vec<u64> {
    if grid.len() <= points || points < 2 {
        return grid.to_vec();
    }
    let last = grid.len() - 1;
    let mut out: Vec<u64> = (0..points)
        .map(|i| grid[(i as u128 * last as u128 / (points - 1) as u128) as usize])
        .collect();
    out.dedup();
    out
}

/// Reads every metrics.csv under `run_dir` and writes
/// `out/running_avg.csv`. Returns the arm labels in column order.
pub fn emit_plot_data(run_dir: &Path, out: &Path, points: usize) -> Result<Vec<String>, HarnessError> {
    if !run_dir.is_dir() {
        return Err(HarnessError::MissingInput(format!("{} is not a directory", run_dir.display())));
    }
    let mut files: Vec<PathBuf> = WalkDir::new(run_dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_name() == "metrics.csv" && !e.path().starts_with(out))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::MissingInput(format!("no metrics.csv under {}", run_dir.display())));
    }
    let mut arms: BTreeMap<String, Vec<Curve>> = BTreeMap::new();
    for f in &files {
        arms.entry(arm_label(run_dir, f)).or_default().push(read_curve(f)?);
    }
    let mut grid: Vec<u64> = arms
        .values()
        .flatten()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    let grid = downsample(&grid, points);

    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("running_avg.csv");
    let mut w = create_writer(&path)?;
    let wrap = |e: csv::Error| HarnessError::Io {
        path: path.clone(),
        source: e.into(),
    };
    let labels: Vec<String> = arms.keys().cloned().collect();
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(wrap)?;
    for &t in &grid {
        let mut row = vec![t.to_string()];
        for curves in arms.values() {
            let vals: Option<Vec<f64>> = curves.iter().map(|c| c.at(t)).collect();
            row.push(match vals {
                Some(v) if !v.is_empty() => (v.iter().sum::<f64>() / v.len() as f64).to_string(),
                _ => String::new(),
            });
        }
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(labels)
}
