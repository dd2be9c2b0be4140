//! CSV and manifest writers. Floats use Rust's shortest round-trip
//! formatting, so identical runs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rlqn_core::rlqn::EpisodeRecord;
use rlqn_core::stats::{bootstrap_mean, BlockAccumulator, Interval, DEFAULT_BLOCKS, DEFAULT_RESAMPLES};
use rlqn_core::{ActionId, Environment, Partition, StateSpace};
use serde::Serialize;

use crate::HarnessError;

pub const METRICS_HEADER: [&str; 6] = ["t", "total_backlog", "cumulative_backlog", "running_avg", "episode", "mode"];
pub const EPISODES_HEADER: [&str; 10] = [
    "k",
    "mode",
    "length",
    "inner_visits",
    "backlog_sum",
    "episodic_avg_backlog",
    "running_avg_backlog",
    "epsilon",
    "policy_changed",
    "resolve_ms",
];

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

pub fn create_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

/// Receives every slot, writes every `stride`-th row plus the final one, and
/// keeps the full backlog series for the block-bootstrap interval.
pub struct MetricsWriter {
    path: PathBuf,
    out: csv::Writer<BufWriter<File>>,
    stride: u64,
    series: Vec<u32>,
    cumulative: u64,
    pending: Option<[String; 6]>,
}

impl MetricsWriter {
    pub fn create(path: &Path, stride: u64) -> Result<Self, HarnessError> {
        let mut out = create_writer(path)?;
        out.write_record(METRICS_HEADER).map_err(csv_err(path))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            out,
            stride: stride.max(1),
            series: Vec::new(),
            cumulative: 0,
            pending: None,
        })
    }

    pub fn push(&mut self, t: u64, backlog: u64, episode: usize, mode: &str) -> Result<(), HarnessError> {
        self.cumulative += backlog;
        self.series.push(backlog as u32);
        let row = [
            t.to_string(),
            backlog.to_string(),
            self.cumulative.to_string(),
            (self.cumulative as f64 / t as f64).to_string(),
            episode.to_string(),
            mode.to_string(),
        ];
        if (t - 1) % self.stride == 0 {
            self.out.write_record(&row).map_err(csv_err(&self.path))?;
            self.pending = None;
        } else {
            self.pending = Some(row);
        }
        Ok(())
    }

    pub fn slots(&self) -> u64 {
        self.series.len() as u64
    }

    /// Flushes the file and returns the running average with a 95% block
    /// bootstrap interval over the whole run.
    pub fn finish(mut self, seed: u64) -> Result<Interval, HarnessError> {
        if let Some(row) = self.pending.take() {
            self.out.write_record(&row).map_err(csv_err(&self.path))?;
        }
        self.out.flush().map_err(io_err(&self.path))?;
        let mut blocks = BlockAccumulator::new(self.series.len() as u64, DEFAULT_BLOCKS);
        for &b in &self.series {
            blocks.push(b as f64);
        }
        let mut rng = rlqn_core::rng::stream(seed, "bootstrap", 0);
        let ci = bootstrap_mean(&blocks.block_means(), DEFAULT_RESAMPLES, &mut rng);
        Ok(Interval {
            estimate: self.cumulative as f64 / self.series.len().max(1) as f64,
            ..ci
        })
    }
}

pub fn write_episodes(path: &Path, episodes: &[EpisodeRecord]) -> Result<(), HarnessError> {
    let mut out = create_writer(path)?;
    out.write_record(EPISODES_HEADER).map_err(csv_err(path))?;
    let mut cumulative = 0u64;
    for r in episodes {
        cumulative += r.backlog_sum;
        let slots = r.start_slot + r.length;
        out.write_record([
            r.k.to_string(),
            r.mode.as_str().to_string(),
            r.length.to_string(),
            r.inner_visits.to_string(),
            r.backlog_sum.to_string(),
            r.episodic_avg_backlog().to_string(),
            (cumulative as f64 / slots.max(1) as f64).to_string(),
            r.epsilon.to_string(),
            r.policy_changed.to_string(),
            r.resolve_time
                .map(|d| (d.as_secs_f64() * 1e3).to_string())
                .unwrap_or_default(),
        ])
        .map_err(csv_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// One row per state of `space` that `keep` accepts: coordinates, action
/// index and action label.
pub fn write_policy(
    path: &Path,
    env: &dyn Environment,
    space: &StateSpace,
    keep: impl Fn(&[u32]) -> bool,
    action: impl Fn(usize, &[u32]) -> ActionId,
) -> Result<(), HarnessError> {
    let mut out = create_writer(path)?;
    let mut header: Vec<String> = (1..=space.queues()).map(|i| format!("q{i}")).collect();
    header.push("action".into());
    header.push("label".into());
    out.write_record(&header).map_err(csv_err(path))?;
    let mut q = vec![0u32; space.queues()];
    for id in 0..space.size() {
        space.write_vector(id, &mut q);
        if !keep(&q) {
            continue;
        }
        let a = action(id, &q);
        let mut row: Vec<String> = q.iter().map(|x| x.to_string()).collect();
        row.push(a.0.to_string());
        row.push(env.action_label(a));
        out.write_record(&row).map_err(csv_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Inner-region filter for policy tables.
pub fn inner(partition: Partition) -> impl Fn(&[u32]) -> bool {
    move |q| partition.is_inner(q)
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub config_digest: String,
    pub seed: u64,
    pub core_version: &'static str,
    pub harness_version: &'static str,
    /// How per-component random streams derive from the seed.
    pub seeding: &'static str,
    pub algo: &'a str,
    pub env: &'a str,
    pub total_slots: u64,
    pub episodes: usize,
    pub final_running_avg: f64,
    pub config: &'a C,
}

pub const SEEDING_RULE: &str = "ChaCha8 keyed by the seed; component streams select stream id \
splitmix64(fnv1a64(component) ^ splitmix64(index)); components: schedule, policy, dynamics, bootstrap";

pub fn write_manifest<C: Serialize>(path: &Path, manifest: &Manifest<'_, C>) -> Result<(), HarnessError> {
    let text = toml::to_string(manifest).map_err(|e| HarnessError::Runtime(format!("manifest: {e}")))?;
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
