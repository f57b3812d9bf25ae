//! Parameter sweeps over (p, k) grids with replicates, summary persistence and
//! plot-ready aggregates.
//!
//! Output layout under the sweep directory:
//!
//! ```text
//! summary.csv                      one row per (p, k, replicate)
//! trajectories/p=<p>_k=<k>_r=<r>.jsonl
//! figure4_p=<p>.csv                silo counts vs k for one p
//! figure5_k=<k>.csv                silo counts vs p for one k
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::classify::{classify, PatternLabel};
use crate::engine::{run_system, RunOptions};
use crate::error::{ConfigError, HarnessError, IoError};
use crate::io::{format_decimal, save_trajectory};
use crate::model::{Probability, SystemConfig};
use crate::seed::{derive_seed, StreamTag};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 9] = [
    "p",
    "k",
    "replicate",
    "seed",
    "silo_count_T",
    "entropy_T",
    "pattern",
    "trajectory_path",
    "status",
];

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: SystemConfig,
    pub p_values: Vec<Probability>,
    pub k_values: Vec<usize>,
    pub replicates: u32,
    pub parallelism: usize,
    pub output_dir: PathBuf,
    /// Extra attempts for runs that fail with a retryable (transport) error.
    pub retries: u32,
    pub record_embeddings: bool,
}

impl SweepSpec {
    pub fn new(base: SystemConfig, output_dir: impl Into<PathBuf>) -> Self {
        SweepSpec {
            p_values: vec![base.p],
            k_values: vec![base.k],
            base,
            replicates: 8,
            parallelism: 1,
            output_dir: output_dir.into(),
            retries: 2,
            record_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.replicates < 1 {
            return Err(ConfigError::invalid("replicates", "must be >= 1"));
        }
        if self.parallelism < 1 {
            return Err(ConfigError::invalid("parallelism", "must be >= 1"));
        }
        if self.p_values.is_empty() {
            return Err(ConfigError::invalid("p", "sweep needs at least one p value"));
        }
        if self.k_values.is_empty() {
            return Err(ConfigError::invalid("k", "sweep needs at least one k value"));
        }
        for &p in &self.p_values {
            for &k in &self.k_values {
                self.cell_config(p, k, 0).validate()?;
            }
        }
        Ok(())
    }

    fn cell_config(&self, p: Probability, k: usize, replicate: u32) -> SystemConfig {
        SystemConfig {
            p,
            k,
            seed: derive_seed(self.base.seed, &StreamTag::replicate(p, k, replicate)),
            ..self.base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub p: Probability,
    pub k: usize,
    pub replicate: u32,
    pub seed: u64,
    pub silo_count_t: Option<usize>,
    pub entropy_t: Option<f64>,
    pub pattern: Option<PatternLabel>,
    /// Relative to the sweep directory.
    pub trajectory_path: String,
    pub status: RunStatus,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GroupKey {
    /// Fixed p, x axis is k.
    P(Probability),
    /// Fixed k, x axis is p.
    K(usize),
}

/// Statistics of one (p, k) cell over its successful replicates.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub group: GroupKey,
    pub p: Probability,
    pub k: usize,
    /// Per replicate index; `None` where the run failed.
    pub silos: Vec<Option<usize>>,
    pub patterns: Vec<Option<PatternLabel>>,
    pub mean_silos: f64,
    /// Sample standard deviation (n - 1 denominator) over the square root of the
    /// number of successful replicates; 0 when there is only one.
    pub std_err: f64,
    pub band: f64,
    pub degenerate: bool,
}

impl AggregateRow {
    /// The x coordinate as written to the plot files.
    pub fn x_text(&self) -> String {
        match self.group {
            GroupKey::P(_) => self.k.to_string(),
            GroupKey::K(_) => self.p.canonical_text(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<AggregateRow>,
    pub plot_files: Vec<PathBuf>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.status.is_ok()).count()
    }
}

/// Mean and standard error; the flag marks a single-sample (degenerate) estimate.
pub fn mean_std_err(values: &[f64]) -> (f64, f64, bool) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0, true);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, true);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt() / (n as f64).sqrt(), false)
}

fn trajectory_rel_path(p: Probability, k: usize, replicate: u32) -> String {
    format!("trajectories/p={}_k={k}_r={replicate}.jsonl", p.canonical_text())
}

fn run_cell(spec: &SweepSpec, p: Probability, k: usize, replicate: u32) -> SweepRow {
    let config = spec.cell_config(p, k, replicate);
    let rel = trajectory_rel_path(p, k, replicate);
    let mut row = SweepRow {
        p,
        k,
        replicate,
        seed: config.seed,
        silo_count_t: None,
        entropy_t: None,
        pattern: None,
        trajectory_path: rel.clone(),
        status: RunStatus::Ok,
    };
    let options = RunOptions {
        record_embeddings: spec.record_embeddings,
    };
    let mut attempt = 0;
    let traj = loop {
        match run_system(&config, options) {
            Ok(t) => break t,
            Err(e) if e.is_retryable() && attempt < spec.retries => {
                attempt += 1;
                warn!("p={p} k={k} r={replicate}: {e}; retry {attempt}/{}", spec.retries);
            }
            Err(e) => {
                warn!("p={p} k={k} r={replicate} failed: {e}");
                row.status = RunStatus::Failed(e.to_string());
                return row;
            }
        }
    };
    let report = match classify(&traj, &config.classifier_params()) {
        Ok(r) => r,
        Err(e) => {
            row.status = RunStatus::Failed(format!("classification: {e}"));
            return row;
        }
    };
    if let Err(e) = save_trajectory(&traj.snapshots, &spec.output_dir.join(&rel)) {
        row.status = RunStatus::Failed(e.to_string());
        return row;
    }
    let last = traj.snapshots.last().expect("at least one snapshot");
    row.silo_count_t = Some(last.silo_count);
    row.entropy_t = Some(last.entropy);
    row.pattern = Some(report.label);
    info!(
        "p={p} k={k} r={replicate}: {} silos, {}",
        last.silo_count, report.label
    );
    row
}

/// Runs every (p, k, replicate) cell, writes trajectories, `summary.csv` and the plot
/// files. Run failures are recorded in their rows; the sweep itself only fails on
/// invalid specs or output errors.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome, HarnessError> {
    spec.validate()?;
    fs::create_dir_all(spec.output_dir.join("trajectories")).map_err(|source| IoError::File {
        path: spec.output_dir.clone(),
        source,
    })?;

    let mut jobs = Vec::new();
    for &p in &spec.p_values {
        for &k in &spec.k_values {
            for r in 0..spec.replicates {
                jobs.push((p, k, r));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let mut rows: Vec<SweepRow> =
        pool.install(|| jobs.par_iter().map(|&(p, k, r)| run_cell(spec, p, k, r)).collect());
    sort_rows(&mut rows);

    write_summary(&rows, &spec.output_dir.join(SUMMARY_FILE))?;
    let aggregates = aggregate(&rows);
    let plot_files = write_plot_files(&aggregates, &spec.output_dir)?;
    Ok(SweepOutcome {
        rows,
        aggregates,
        plot_files,
    })
}

fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        a.p.value()
            .total_cmp(&b.p.value())
            .then(a.k.cmp(&b.k))
            .then(a.replicate.cmp(&b.replicate))
    });
}

pub fn write_summary(rows: &[SweepRow], path: &Path) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in rows {
        let status = match &r.status {
            RunStatus::Ok => "ok".to_string(),
            RunStatus::Failed(msg) => format!("error: {msg}"),
        };
        w.write_record([
            r.p.canonical_text(),
            r.k.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.silo_count_t.map(|c| c.to_string()).unwrap_or_default(),
            r.entropy_t.map(format_decimal).unwrap_or_default(),
            r.pattern.map(|p| p.to_string()).unwrap_or_default(),
            r.trajectory_path.clone(),
            status,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_summary(path: &Path) -> Result<Vec<SweepRow>, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(IoError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header, expected {}", SUMMARY_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = idx + 2;
        let bad = |field: &str| IoError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("invalid {field}"),
        };
        let opt = |i: usize| Some(&rec[i]).filter(|s| !s.is_empty());
        rows.push(SweepRow {
            p: rec[0].parse().map_err(|_| bad("p"))?,
            k: rec[1].parse().map_err(|_| bad("k"))?,
            replicate: rec[2].parse().map_err(|_| bad("replicate"))?,
            seed: rec[3].parse().map_err(|_| bad("seed"))?,
            silo_count_t: opt(4).map(str::parse).transpose().map_err(|_| bad("silo_count_T"))?,
            entropy_t: opt(5).map(str::parse).transpose().map_err(|_| bad("entropy_T"))?,
            pattern: opt(6).map(str::parse).transpose().map_err(|_| bad("pattern"))?,
            trajectory_path: rec[7].to_string(),
            status: match &rec[8] {
                "ok" => RunStatus::Ok,
                other => RunStatus::Failed(
                    other.strip_prefix("error: ").unwrap_or(other).to_string(),
                ),
            },
        });
    }
    Ok(rows)
}

/// Per-cell statistics, emitted once grouped by p (x = k) and once grouped by k
/// (x = p). Within each group rows are sorted by ascending x.
pub fn aggregate(rows: &[SweepRow]) -> Vec<AggregateRow> {
    let replicates = rows.iter().map(|r| r.replicate as usize + 1).max().unwrap_or(0);
    let mut cells: BTreeMap<(u64, usize), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        // Probabilities are non-negative, so their bit patterns sort like their values.
        cells.entry((r.p.value().to_bits(), r.k)).or_default().push(r);
    }
    let mut stats = Vec::new();
    for cell in cells.values() {
        let ok: Vec<&&SweepRow> = cell.iter().filter(|r| r.status.is_ok()).collect();
        if ok.is_empty() {
            continue;
        }
        let values: Vec<f64> = ok.iter().filter_map(|r| r.silo_count_t).map(|c| c as f64).collect();
        let (mean, se, degenerate) = mean_std_err(&values);
        let mut silos = vec![None; replicates];
        let mut patterns = vec![None; replicates];
        for r in &ok {
            silos[r.replicate as usize] = r.silo_count_t;
            patterns[r.replicate as usize] = r.pattern;
        }
        stats.push(AggregateRow {
            group: GroupKey::K(cell[0].k),
            p: cell[0].p,
            k: cell[0].k,
            silos,
            patterns,
            mean_silos: mean,
            std_err: se,
            band: 3.0 * se,
            degenerate,
        });
    }
    let mut out: Vec<AggregateRow> = stats
        .iter()
        .map(|s| AggregateRow {
            group: GroupKey::P(s.p),
            ..s.clone()
        })
        .collect();
    out.sort_by(|a, b| a.p.value().total_cmp(&b.p.value()).then(a.k.cmp(&b.k)));
    let mut by_k = stats;
    by_k.sort_by(|a, b| a.k.cmp(&b.k).then(a.p.value().total_cmp(&b.p.value())));
    out.extend(by_k);
    out
}

pub fn plot_file_name(group: GroupKey) -> String {
    match group {
        GroupKey::P(p) => format!("figure4_p={}.csv", p.canonical_text()),
        GroupKey::K(k) => format!("figure5_k={k}.csv"),
    }
}

/// Writes one CSV per group: `x, silos_r0.., pattern_r0.., mean_silos, std_err, band,
/// degenerate`, where x is `k` for the per-p files and `p` for the per-k files.
pub fn write_plot_files(aggregates: &[AggregateRow], dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut groups: Vec<(String, Vec<&AggregateRow>)> = Vec::new();
    for a in aggregates {
        let name = plot_file_name(a.group);
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => v.push(a),
            None => groups.push((name, vec![a])),
        }
    }
    let mut written = Vec::new();
    for (name, rows) in groups {
        let path = dir.join(&name);
        let csv_err = |source| IoError::Csv {
            path: path.clone(),
            source,
        };
        let replicates = rows[0].silos.len();
        let x_name = match rows[0].group {
            GroupKey::P(_) => "k",
            GroupKey::K(_) => "p",
        };
        let mut header = vec![x_name.to_string()];
        header.extend((0..replicates).map(|r| format!("silos_r{r}")));
        header.extend((0..replicates).map(|r| format!("pattern_r{r}")));
        header.extend(["mean_silos", "std_err", "band", "degenerate"].map(String::from));

        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(&header).map_err(csv_err)?;
        for a in rows {
            let mut rec = vec![a.x_text()];
            rec.extend(a.silos.iter().map(|s| s.map(|c| c.to_string()).unwrap_or_default()));
            rec.extend(a.patterns.iter().map(|p| p.map(|p| p.to_string()).unwrap_or_default()));
            rec.push(format_decimal(a.mean_silos));
            rec.push(format_decimal(a.std_err));
            rec.push(format_decimal(a.band));
            rec.push(a.degenerate.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|source| IoError::File {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// Aggregates `rows` and writes the plot files into `dir`.
pub fn emit_plot_data(rows: &[SweepRow], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::NoRows);
    }
    fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(write_plot_files(&aggregate(rows), dir)?)
}
