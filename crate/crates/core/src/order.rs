//! Leaf-removal topological ordering from the score Jacobian, and pruning.
//!
//! For an additive Gaussian noise model the diagonal entry `d s_j / d x_j` of
//! the score Jacobian is constant exactly when `j` is a leaf. Each round
//! estimates the score over the remaining nodes, removes the node whose
//! diagonal entry has the smallest sample variance and prepends it to the
//! order. Pruning replays the removals: while `j` is the current leaf, its
//! parents are the nodes `i` on which `d s_j / d x_i` actually varies.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dsm::{sgd_train, DsmConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Dims, MlpParams};
use crate::rng::{fork, Rng};
use crate::scm::{Dag, Scm};
use crate::stats::sample_variance;

/// Numerical floor of the exact oracle's leaf variance.
pub const ORACLE_FLOOR: f64 = 1e-8;

/// Multiple of the noise floor a candidate parent's variance must clear.
pub const FLOOR_FACTOR: f64 = 10.0;

/// A trained network's noise floor, as a fraction of the variance of the
/// leaf's own diagonal entry. Combined with [`FLOOR_FACTOR`], a candidate
/// parent must fluctuate at least as much as the leaf's diagonal does.
pub const NET_FLOOR_SCALE: f64 = 0.1;

/// DSM noise level used when fitting networks for ordering; it acts on
/// standardized columns.
pub const NET_DSM_SIGMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Oracle,
    NoisyOracle,
    TrainedNet,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Oracle => "oracle",
            BackendKind::NoisyOracle => "noisy-oracle",
            BackendKind::TrainedNet => "trained-net",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(BackendKind::Oracle),
            "noisy-oracle" => Ok(BackendKind::NoisyOracle),
            "trained-net" | "net" => Ok(BackendKind::TrainedNet),
            other => Err(Error::invalid(format!("unknown backend {other:?}"))),
        }
    }
}

/// Network and training settings for the trained-net backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub width: usize,
    pub depth: usize,
    pub dsm: DsmConfig,
    /// Start each round from the previous round's weights (with the removed
    /// node's input and output dropped) instead of a fresh initialisation.
    pub warm_start: bool,
    /// Train on per-column z-scored data. Rescaling column `j` by `c_j`
    /// multiplies `d s_j/d x_i` by `c_i c_j`, so leaves keep a constant
    /// diagonal and non-parents a zero entry.
    pub standardize: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            width: 128,
            depth: 3,
            dsm: DsmConfig { sigma: NET_DSM_SIGMA, ..DsmConfig::default() },
            warm_start: false,
            standardize: true,
        }
    }
}

/// Source of score-Jacobian estimates over a subset of nodes.
#[derive(Debug, Clone)]
pub enum ScoreBackend {
    /// Analytic score of the generating model, restricted to the remaining
    /// nodes.
    Oracle(Scm),
    /// Analytic Jacobian entries plus independent `N(0, noise_var)` estimation
    /// error per sample and entry. `None` uses [`default_noise_var`].
    NoisyOracle { scm: Scm, noise_var: Option<f64> },
    /// A fresh network trained by denoising score matching each round.
    TrainedNet(NetConfig),
}

impl ScoreBackend {
    pub fn kind(&self) -> BackendKind {
        match self {
            ScoreBackend::Oracle(_) => BackendKind::Oracle,
            ScoreBackend::NoisyOracle { .. } => BackendKind::NoisyOracle,
            ScoreBackend::TrainedNet(_) => BackendKind::TrainedNet,
        }
    }
}

/// Estimation-noise variance used by the noisy oracle when none is given:
/// `ln(n d) / sqrt(n)`, the shape of the score-matching error rate.
pub fn default_noise_var(n: usize, d: usize) -> f64 {
    ((n * d) as f64).ln().max(1.0) / (n as f64).sqrt()
}

/// Score estimate for one round of the loop.
enum Fitted<'a> {
    Oracle {
        scm: &'a Scm,
        active: Vec<bool>,
        noise: Option<(Normal<f64>, Rng)>,
    },
    /// Trained network and the (possibly standardized) columns it was fit on.
    Net { params: MlpParams, view: Dataset },
}

impl Fitted<'_> {
    /// `n x k` matrix of `d s_j / d x_j` at every sample, for the `k`
    /// remaining columns.
    fn diag_samples(&mut self, data: &Dataset, remaining: &[usize]) -> Matrix {
        let n = data.n();
        let k = remaining.len();
        let mut out = Matrix::zeros(n, k);
        match self {
            Fitted::Oracle { scm, active, noise } => {
                for r in 0..n {
                    let jd = scm.jacobian_diag_on(data.row(r), active);
                    for (c, &pos) in remaining.iter().enumerate() {
                        let mut v = jd[data.labels()[pos]];
                        if let Some((dist, rng)) = noise {
                            v += dist.sample(rng);
                        }
                        out.set(r, c, v);
                    }
                }
            }
            Fitted::Net { params: p, view } => {
                for r in 0..n {
                    let (_, cache) = p.forward(view.row(r));
                    out.row_mut(r).copy_from_slice(&p.jacobian_diag(&cache));
                }
            }
        }
        out
    }

    /// `n x k` matrix of `d s_leaf / d x_i` for the remaining columns `i`.
    fn row_samples(&mut self, data: &Dataset, remaining: &[usize], leaf: usize) -> Matrix {
        let n = data.n();
        let k = remaining.len();
        let mut out = Matrix::zeros(n, k);
        match self {
            Fitted::Oracle { scm, active, noise } => {
                let label = data.labels()[remaining[leaf]];
                for r in 0..n {
                    let row = scm.jacobian_row_on(data.row(r), label, active);
                    for (c, &pos) in remaining.iter().enumerate() {
                        let mut v = row[data.labels()[pos]];
                        if let Some((dist, rng)) = noise {
                            v += dist.sample(rng);
                        }
                        out.set(r, c, v);
                    }
                }
            }
            Fitted::Net { params: p, view } => {
                for r in 0..n {
                    let (_, cache) = p.forward(view.row(r));
                    out.row_mut(r)
                        .copy_from_slice(&p.jacobian_row(&cache, leaf));
                }
            }
        }
        out
    }
}

/// Per-round state shared by ordering and pruning.
struct Session<'a> {
    data: &'a Dataset,
    /// training view of `data` for the trained-net backend
    train: Option<Dataset>,
    backend: &'a ScoreBackend,
    noise_var: f64,
    previous: Option<MlpParams>,
}

impl<'a> Session<'a> {
    fn new(data: &'a Dataset, backend: &'a ScoreBackend) -> Result<Self> {
        if data.n() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: data.n(),
            });
        }
        let noise_var = match backend {
            ScoreBackend::Oracle(scm) => {
                check_labels(scm, data)?;
                0.0
            }
            ScoreBackend::NoisyOracle { scm, noise_var } => {
                check_labels(scm, data)?;
                let v = noise_var.unwrap_or_else(|| default_noise_var(data.n(), data.d()));
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::invalid(format!("noise variance must be >= 0, got {v}")));
                }
                v
            }
            ScoreBackend::TrainedNet(cfg) => {
                cfg.dsm.validate()?;
                0.0
            }
        };
        let train = match backend {
            ScoreBackend::TrainedNet(cfg) if cfg.standardize => Some(standardized(data)),
            ScoreBackend::TrainedNet(_) => Some(data.clone()),
            _ => None,
        };
        Ok(Self {
            data,
            train,
            backend,
            noise_var,
            previous: None,
        })
    }

    /// Score estimate over the columns at `remaining`. `dropped` is the
    /// position (within the previous round's columns) removed since the last
    /// fit, used for warm starts.
    fn fit(&mut self, remaining: &[usize], dropped: Option<usize>, rng: &mut Rng) -> Result<Fitted<'a>> {
        let backend: &'a ScoreBackend = self.backend;
        match backend {
            ScoreBackend::Oracle(scm) | ScoreBackend::NoisyOracle { scm, .. } => {
                let mut active = vec![false; scm.d()];
                for &pos in remaining {
                    active[self.data.labels()[pos]] = true;
                }
                let noise = (self.noise_var > 0.0).then(|| {
                    (
                        Normal::new(0.0, self.noise_var.sqrt()).expect("finite"),
                        fork(rng),
                    )
                });
                Ok(Fitted::Oracle { scm, active, noise })
            }
            ScoreBackend::TrainedNet(cfg) => {
                let sub = self
                    .train
                    .as_ref()
                    .expect("net backend has a training view")
                    .select_columns(remaining);
                let mut train_rng = fork(rng);
                let init = match (&self.previous, dropped) {
                    (Some(prev), Some(pos)) if cfg.warm_start => prev.drop_coordinate(pos)?,
                    _ => MlpParams::init(
                        Dims::square(remaining.len(), cfg.width, cfg.depth),
                        &mut train_rng,
                    )?,
                };
                let (p, _) = sgd_train(init, &sub, &cfg.dsm, &mut train_rng, None)?;
                if cfg.warm_start {
                    self.previous = Some(p.clone());
                }
                Ok(Fitted::Net { params: p, view: sub })
            }
        }
    }

    /// Noise floor below which a leaf is declared parentless. `leaf_var` is
    /// the variance of the leaf's own diagonal entry under the same fit.
    fn floor(&self, leaf_var: f64) -> f64 {
        match self.backend {
            ScoreBackend::Oracle(_) => ORACLE_FLOOR,
            ScoreBackend::NoisyOracle { .. } => self.noise_var.max(ORACLE_FLOOR),
            ScoreBackend::TrainedNet(_) => leaf_var.max(ORACLE_FLOOR) * NET_FLOOR_SCALE,
        }
    }
}

/// Per-column z-scores; constant columns are only centred.
fn standardized(data: &Dataset) -> Dataset {
    let cols: Vec<(f64, f64)> = (0..data.d())
        .map(|c| {
            let col = data.values().column(c);
            let sd = crate::stats::sample_std(&col);
            (crate::stats::mean(&col), if sd > 0.0 { sd } else { 1.0 })
        })
        .collect();
    let values = Matrix::from_fn(data.n(), data.d(), |r, c| {
        (data.values().get(r, c) - cols[c].0) / cols[c].1
    });
    Dataset::new(values, data.labels().to_vec()).expect("finite rescaling of finite data")
}

fn check_labels(scm: &Scm, data: &Dataset) -> Result<()> {
    if data.d() != scm.d() {
        return Err(Error::invalid(format!(
            "oracle model has {} nodes, dataset has {} columns",
            scm.d(),
            data.d()
        )));
    }
    if data.labels().iter().enumerate().any(|(c, &l)| c != l) {
        return Err(Error::invalid("oracle backends need columns in node order"));
    }
    Ok(())
}

impl MlpParams {
    /// Removes input and output coordinate `pos` of a square network.
    pub fn drop_coordinate(&self, pos: usize) -> Result<MlpParams> {
        let dims = self.dims();
        if dims.d_in != dims.d_out || pos >= dims.d_in || dims.d_in < 2 {
            return Err(Error::invalid("cannot drop coordinate from this network"));
        }
        let mut layers = self.layers().to_vec();
        let first = &layers[0];
        layers[0] = Matrix::from_fn(first.rows(), first.cols() - 1, |r, c| {
            first.get(r, if c < pos { c } else { c + 1 })
        });
        let last_idx = layers.len() - 1;
        let last = &layers[last_idx];
        layers[last_idx] = Matrix::from_fn(last.rows() - 1, last.cols(), |r, c| {
            last.get(if r < pos { r } else { r + 1 }, c)
        });
        MlpParams::from_layers(Dims::square(dims.d_in - 1, dims.width, dims.depth), layers)
    }
}

/// Unbiased per-column sample variance of an `n x k` table of Jacobian
/// diagonals.
pub fn variance_stats(jac_diags: &Matrix) -> Result<Vec<f64>> {
    if jac_diags.rows() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: jac_diags.rows(),
        });
    }
    Ok((0..jac_diags.cols())
        .map(|c| sample_variance(&jac_diags.column(c)))
        .collect())
}

/// Position of the smallest value; ties go to the smallest label.
fn argmin_by_label(values: &[f64], labels: &[usize]) -> usize {
    let mut best = 0;
    for k in 1..values.len() {
        let better = values[k] < values[best]
            || (values[k] == values[best] && labels[k] < labels[best]);
        if better {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderResult {
    /// Root-first order of node labels.
    pub pi: Vec<usize>,
    /// Per round, `V_j` for every node still present.
    pub v_trace: Vec<BTreeMap<usize, f64>>,
    pub backend: BackendKind,
}

/// Estimated graph; every edge points forward in the order it was pruned
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    pub d: usize,
    /// Sorted `(parent, child)` pairs.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// A candidate is a parent when its variance reaches this fraction of
    /// the largest candidate variance.
    pub tau_rel: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { tau_rel: 0.001 }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_rel > 0.0 && self.tau_rel < 1.0) {
            return Err(Error::invalid(format!("tau_rel must lie in (0, 1), got {}", self.tau_rel)));
        }
        Ok(())
    }
}

/// Estimates a topological order of the dataset's columns by repeated leaf
/// removal.
pub fn score_order(data: &Dataset, backend: &ScoreBackend, rng: &mut Rng) -> Result<OrderResult> {
    run(data, backend, None, rng).map(|(order, _)| order)
}

/// Ordering and pruning in one pass, sharing each round's score fit.
pub fn discover(
    data: &Dataset,
    backend: &ScoreBackend,
    cfg: &PruneConfig,
    rng: &mut Rng,
) -> Result<(OrderResult, CausalGraph)> {
    cfg.validate()?;
    let (order, graph) = run(data, backend, Some(cfg), rng)?;
    Ok((order, graph.expect("pruning requested")))
}

fn run(
    data: &Dataset,
    backend: &ScoreBackend,
    prune_cfg: Option<&PruneConfig>,
    rng: &mut Rng,
) -> Result<(OrderResult, Option<CausalGraph>)> {
    let mut session = Session::new(data, backend)?;
    let mut remaining: Vec<usize> = (0..data.d()).collect();
    remaining.sort_by_key(|&p| data.labels()[p]);
    let mut removed = Vec::with_capacity(data.d());
    let mut v_trace = Vec::with_capacity(data.d());
    let mut edges = Vec::new();
    let mut dropped = None;
    while !remaining.is_empty() {
        let labels: Vec<usize> = remaining.iter().map(|&p| data.labels()[p]).collect();
        let (leaf, v) = if remaining.len() == 1 {
            // the last node is trivially a leaf with no candidate parents
            (0, vec![0.0])
        } else {
            let mut fitted = session.fit(&remaining, dropped, rng)?;
            let v = variance_stats(&fitted.diag_samples(data, &remaining))?;
            let leaf = argmin_by_label(&v, &labels);
            if let Some(cfg) = prune_cfg {
                let rows = fitted.row_samples(data, &remaining, leaf);
                edges.extend(
                    select_parents(&rows, leaf, session.floor(v[leaf]), cfg)?
                        .into_iter()
                        .map(|k| (labels[k], labels[leaf])),
                );
            }
            (leaf, v)
        };
        v_trace.push(labels.iter().copied().zip(v).collect());
        removed.push(labels[leaf]);
        dropped = Some(leaf);
        remaining.remove(leaf);
    }
    removed.reverse();
    let order = OrderResult {
        pi: removed,
        v_trace,
        backend: backend.kind(),
    };
    let graph = prune_cfg.map(|_| {
        edges.sort_unstable();
        CausalGraph {
            d: data.d(),
            edges,
        }
    });
    Ok((order, graph))
}

/// Candidate parents of `leaf` from the `n x k` samples of its Jacobian row.
fn select_parents(rows: &Matrix, leaf: usize, floor: f64, cfg: &PruneConfig) -> Result<Vec<usize>> {
    let vars = variance_stats(rows)?;
    let max = vars
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != leaf)
        .map(|(_, &v)| v)
        .fold(0.0, f64::max);
    let floor = FLOOR_FACTOR * floor;
    if max < floor {
        return Ok(Vec::new());
    }
    let threshold = (cfg.tau_rel * max).max(floor);
    Ok(vars
        .iter()
        .enumerate()
        .filter(|&(k, &v)| k != leaf && v >= threshold)
        .map(|(k, _)| k)
        .collect())
}

/// Prunes the complete DAG of `pi` by replaying its leaf removals.
pub fn prune(
    data: &Dataset,
    pi: &[usize],
    backend: &ScoreBackend,
    cfg: &PruneConfig,
    rng: &mut Rng,
) -> Result<CausalGraph> {
    cfg.validate()?;
    let d = data.d();
    let mut check = pi.to_vec();
    check.sort_unstable();
    let mut labels = data.labels().to_vec();
    labels.sort_unstable();
    if check != labels {
        return Err(Error::invalid("order is not a permutation of the dataset columns"));
    }
    let position_of = |label: usize| {
        data.labels()
            .iter()
            .position(|&l| l == label)
            .expect("label present")
    };
    let mut session = Session::new(data, backend)?;
    let mut remaining: Vec<usize> = (0..d).collect();
    remaining.sort_by_key(|&p| data.labels()[p]);
    let mut edges = Vec::new();
    let mut dropped = None;
    for &leaf_label in pi.iter().rev() {
        let leaf = remaining
            .iter()
            .position(|&p| p == position_of(leaf_label))
            .expect("leaf still present");
        if remaining.len() > 1 {
            let lbls: Vec<usize> = remaining.iter().map(|&p| data.labels()[p]).collect();
            let mut fitted = session.fit(&remaining, dropped, rng)?;
            let rows = fitted.row_samples(data, &remaining, leaf);
            let leaf_var = sample_variance(&rows.column(leaf));
            edges.extend(
                select_parents(&rows, leaf, session.floor(leaf_var), cfg)?
                    .into_iter()
                    .map(|k| (lbls[k], leaf_label)),
            );
        }
        dropped = Some(leaf);
        remaining.remove(leaf);
    }
    edges.sort_unstable();
    Ok(CausalGraph { d, edges })
}

/// Number of true edges whose endpoints appear in the wrong order in `pi`
/// (read root-first).
pub fn order_divergence(pi: &[usize], truth: &Dag) -> usize {
    let mut pos = vec![usize::MAX; truth.d()];
    for (k, &v) in pi.iter().enumerate() {
        pos[v] = k;
    }
    truth
        .edges()
        .iter()
        .filter(|&&(a, b)| pos[a] > pos[b])
        .count()
}

// ---------------------------------------------------------------------------
// export

#[derive(Serialize, Deserialize)]
struct OrderDoc {
    pi: Vec<usize>,
    v_trace: Vec<BTreeMap<String, f64>>,
    backend: BackendKind,
}

impl OrderResult {
    /// JSON `{pi, v_trace, backend}` with 1-based node ids.
    pub fn to_json(&self) -> Result<String> {
        let doc = OrderDoc {
            pi: self.pi.iter().map(|v| v + 1).collect(),
            v_trace: self
                .v_trace
                .iter()
                .map(|m| m.iter().map(|(k, v)| ((k + 1).to_string(), *v)).collect())
                .collect(),
            backend: self.backend,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: OrderDoc = serde_json::from_str(text)?;
        let node = |v: usize| {
            v.checked_sub(1)
                .ok_or_else(|| Error::format("order json", "node ids are 1-based"))
        };
        let pi = doc.pi.into_iter().map(node).collect::<Result<Vec<_>>>()?;
        let v_trace = doc
            .v_trace
            .into_iter()
            .map(|m| {
                m.into_iter()
                    .map(|(k, v)| {
                        let id: usize = k
                            .parse()
                            .map_err(|_| Error::format("order json", format!("bad node key {k:?}")))?;
                        Ok((node(id)?, v))
                    })
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pi,
            v_trace,
            backend: doc.backend,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl CausalGraph {
    pub fn to_dag(&self) -> Result<Dag> {
        Dag::new(self.d, self.edges.clone())
    }

    /// Edge list CSV `src,dst`, 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src", "dst"])?;
        for &(a, b) in &self.edges {
            w.write_record([(a + 1).to_string(), (b + 1).to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}
