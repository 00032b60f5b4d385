//! Structural Hamming distance and the multi-seed sweep harness.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::order::{discover, order_divergence, BackendKind, NetConfig, PruneConfig, ScoreBackend};
use crate::rng::{stream, Stream};
use crate::scm::{build_scm, generate_dag, sample, Dag, DEFAULT_SIGMA_RANGE};
use crate::stats::{mean, sample_std};

/// Seed stride between consecutive runs of a sweep.
pub const RUN_SEED_STRIDE: u64 = 10_007;

/// Largest `d` for which the automatic backend choice trains networks.
pub const AUTO_NET_MAX_D: usize = 20;

/// Structural Hamming distance: each unordered node pair whose edge state
/// (absent, forward, backward) differs counts once, so a reversal costs 1.
pub fn shd(est: &Dag, truth: &Dag) -> Result<usize> {
    shd_edges(est.d(), est.edges(), truth)
}

pub fn shd_edges(d: usize, est: &[(usize, usize)], truth: &Dag) -> Result<usize> {
    if d != truth.d() {
        return Err(Error::invalid(format!(
            "graph sizes differ: {d} vs {}",
            truth.d()
        )));
    }
    let state = |edges: &[(usize, usize)]| {
        let mut m = std::collections::HashMap::new();
        for &(a, b) in edges {
            let key = (a.min(b), a.max(b));
            let dir = a < b;
            // a pair carrying both directions counts as a distinct state
            m.entry(key)
                .and_modify(|s: &mut u8| *s |= if dir { 1 } else { 2 })
                .or_insert(if dir { 1 } else { 2 });
        }
        m
    };
    let e = state(est);
    let t = state(truth.edges());
    let mut count = e.iter().filter(|(k, s)| t.get(k) != Some(s)).count();
    count += t.keys().filter(|k| !e.contains_key(k)).count();
    Ok(count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Cm,
    N,
    D,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Cm => "cm",
            Axis::N => "n",
            Axis::D => "d",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cm" => Ok(Axis::Cm),
            "n" => Ok(Axis::N),
            "d" => Ok(Axis::D),
            other => Err(Error::invalid(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// Which score backend a sweep uses. `Auto` trains networks for
/// `d <= 20` and uses the noisy oracle above that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    Auto,
    Fixed(BackendKind),
}

impl BackendChoice {
    pub fn resolve(self, d: usize) -> BackendKind {
        match self {
            BackendChoice::Fixed(k) => k,
            BackendChoice::Auto if d <= AUTO_NET_MAX_D => BackendKind::TrainedNet,
            BackendChoice::Auto => BackendKind::NoisyOracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: Axis,
    pub grid: Vec<f64>,
    /// Fixed parameters; the swept one is overridden per cell.
    pub d: usize,
    pub n: usize,
    pub cm: f64,
    pub edge_prob: f64,
    pub sigma_range: (f64, f64),
    pub runs: usize,
    pub base_seed: u64,
    pub backend: BackendChoice,
    pub net: NetConfig,
    pub prune: PruneConfig,
    /// Noisy-oracle estimation variance; `None` uses the rate default.
    pub noise_var: Option<f64>,
    /// Record wall-clock time per run; off writes 0 so reruns are
    /// byte-identical.
    pub timing: bool,
}

impl SweepConfig {
    pub fn new(axis: Axis, grid: Vec<f64>) -> Self {
        Self {
            axis,
            grid,
            d: 10,
            n: 100,
            cm: 1.0,
            edge_prob: 0.3,
            sigma_range: DEFAULT_SIGMA_RANGE,
            runs: 10,
            base_seed: 0,
            backend: BackendChoice::Auto,
            net: NetConfig::default(),
            prune: PruneConfig::default(),
            noise_var: None,
            timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("sweep grid is empty"));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("sweep grid must be strictly increasing"));
        }
        if self.runs == 0 {
            return Err(Error::invalid("runs must be at least 1"));
        }
        for &v in &self.grid {
            let (d, n, cm) = self.cell(v);
            if d == 0 || n < 2 || !(cm >= 0.0) {
                return Err(Error::invalid(format!(
                    "grid value {v} gives an invalid cell (d={d}, n={n}, cm={cm})"
                )));
            }
            if matches!(self.axis, Axis::N | Axis::D) && v.fract() != 0.0 {
                return Err(Error::invalid(format!("grid value {v} must be an integer")));
            }
        }
        self.prune.validate()?;
        self.net.dsm.validate()
    }

    /// `(d, n, cm)` for a grid value.
    pub fn cell(&self, value: f64) -> (usize, usize, f64) {
        match self.axis {
            Axis::Cm => (self.d, self.n, value),
            Axis::N => (self.d, value as usize, self.cm),
            Axis::D => (value as usize, self.n, self.cm),
        }
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64 * RUN_SEED_STRIDE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub seed: u64,
    pub shd: Option<usize>,
    pub order_div: Option<usize>,
    pub wall_time: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub axis: Axis,
    pub value: f64,
    pub shd_mean: f64,
    pub shd_std: f64,
    pub runs_ok: usize,
    pub runs_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
}

/// One discovery run: model, data, ordering and pruning, scored against the
/// true graph. Returns `(shd, order_divergence)`.
pub fn run_once(cfg: &SweepConfig, value: f64, seed: u64) -> Result<(usize, usize)> {
    let (d, n, cm) = cfg.cell(value);
    let mut scm_rng = stream(seed, Stream::Scm);
    let dag = generate_dag(d, cfg.edge_prob, &mut scm_rng)?;
    let scm = build_scm(dag, cm, cfg.sigma_range, &mut scm_rng)?;
    let data = sample(&scm, n, &mut stream(seed, Stream::Data))?;
    let backend = match cfg.backend.resolve(d) {
        BackendKind::Oracle => ScoreBackend::Oracle(scm.clone()),
        BackendKind::NoisyOracle => ScoreBackend::NoisyOracle {
            scm: scm.clone(),
            noise_var: cfg.noise_var,
        },
        BackendKind::TrainedNet => ScoreBackend::TrainedNet(cfg.net.clone()),
    };
    let (order, graph) = discover(&data, &backend, &cfg.prune, &mut stream(seed, Stream::Order))?;
    let shd = shd_edges(d, &graph.edges, scm.dag())?;
    Ok((shd, order_divergence(&order.pi, scm.dag())))
}

/// Runs every `(grid value, run)` cell. Failed runs become error rows; rows
/// are ordered by grid value then seed whatever the completion order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let jobs: Vec<(f64, u64)> = cfg
        .grid
        .iter()
        .flat_map(|&v| (0..cfg.runs).map(move |r| (v, r)))
        .map(|(v, r)| (v, cfg.run_seed(r)))
        .collect();
    let mut rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(value, seed)| {
            let start = Instant::now();
            let outcome = run_once(cfg, value, seed);
            let wall_time = if cfg.timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            };
            let (shd, order_div, error) = match outcome {
                Ok((s, o)) => (Some(s), Some(o), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            SweepRow {
                axis: cfg.axis,
                value,
                seed,
                shd,
                order_div,
                wall_time,
                error,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.seed.cmp(&b.seed)));
    let summary = summarize(&rows);
    Ok(SweepOutput { rows, summary })
}

/// Mean and sample std of SHD per grid value.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let value = rows[start].value;
        let end = start
            + rows[start..]
                .iter()
                .take_while(|r| r.value == value)
                .count();
        let cell = &rows[start..end];
        let shds: Vec<f64> = cell.iter().filter_map(|r| r.shd).map(|s| s as f64).collect();
        out.push(SummaryRow {
            axis: cell[0].axis,
            value,
            shd_mean: if shds.is_empty() { f64::NAN } else { mean(&shds) },
            shd_std: sample_std(&shds),
            runs_ok: shds.len(),
            runs_failed: cell.len() - shds.len(),
        });
        start = end;
    }
    out
}

impl SweepOutput {
    /// Header `axis,value,seed,shd,order_div,wall_time_s`; failed runs leave
    /// the metric cells blank.
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["axis", "value", "seed", "shd", "order_div", "wall_time_s"])?;
        for r in &self.rows {
            w.write_record([
                r.axis.as_str().to_string(),
                r.value.to_string(),
                r.seed.to_string(),
                r.shd.map(|v| v.to_string()).unwrap_or_default(),
                r.order_div.map(|v| v.to_string()).unwrap_or_default(),
                format!("{:.6}", r.wall_time),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Header `axis,value,shd_mean,shd_std,runs_ok,runs_failed`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["axis", "value", "shd_mean", "shd_std", "runs_ok", "runs_failed"])?;
        for s in &self.summary {
            w.write_record([
                s.axis.as_str().to_string(),
                s.value.to_string(),
                s.shd_mean.to_string(),
                s.shd_std.to_string(),
                s.runs_ok.to_string(),
                s.runs_failed.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn errors(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}
