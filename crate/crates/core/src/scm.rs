//! Non-linear additive Gaussian noise structural causal models.
//!
//! Every node follows `x_i = f_i(PA_i(x)) + e_i` with `e_i ~ N(0, sigma_i^2)`
//! and `f_i(pa) = a_i * sum_j w_ij * sin(w_ij * x_j)`. The amplitude `a_i` is
//! calibrated so that each edge `j -> i` meets the identifiability margin
//! `E[(d^2 f_i / d x_j^2)^2] >= C_m * sigma_i^2`.
//!
//! Node ids are 0-based in the API and 1-based in the JSON document.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Pilot samples drawn per node when calibrating amplitudes.
pub const CALIBRATION_SAMPLES: usize = 10_000;

/// Default range for the per-node noise standard deviation.
pub const DEFAULT_SIGMA_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    d: usize,
    edges: Vec<(usize, usize)>,
    topo: Vec<usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    /// Builds a DAG from `parent -> child` pairs; fails on cycles, self-loops,
    /// duplicates or out-of-range endpoints. The stored order is Kahn's
    /// algorithm with smallest-id-first tie-breaking.
    pub fn new(d: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let (parents, children) = adjacency(d, &edges)?;
        let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut ready: std::collections::BTreeSet<usize> =
            (0..d).filter(|&i| indeg[i] == 0).collect();
        let mut topo = Vec::with_capacity(d);
        while let Some(i) = ready.pop_first() {
            topo.push(i);
            for &c in &children[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if topo.len() != d {
            return Err(Error::invalid("edge set contains a cycle"));
        }
        Ok(Self::assemble(d, edges, topo, parents, children))
    }

    /// Like [`Dag::new`] but with a caller-supplied topological order, which
    /// is checked.
    pub fn with_order(d: usize, edges: Vec<(usize, usize)>, topo: Vec<usize>) -> Result<Self> {
        let (parents, children) = adjacency(d, &edges)?;
        let mut rank = vec![usize::MAX; d];
        if topo.len() != d {
            return Err(Error::invalid("order length differs from node count"));
        }
        for (r, &v) in topo.iter().enumerate() {
            if v >= d || rank[v] != usize::MAX {
                return Err(Error::invalid("order is not a permutation"));
            }
            rank[v] = r;
        }
        if edges.iter().any(|&(p, c)| rank[p] >= rank[c]) {
            return Err(Error::invalid("order is not topological for the edges"));
        }
        Ok(Self::assemble(d, edges, topo, parents, children))
    }

    fn assemble(
        d: usize,
        mut edges: Vec<(usize, usize)>,
        topo: Vec<usize>,
        parents: Vec<Vec<usize>>,
        children: Vec<Vec<usize>>,
    ) -> Self {
        edges.sort_unstable();
        Self {
            d,
            edges,
            topo,
            parents,
            children,
        }
    }

    pub fn empty(d: usize) -> Self {
        Self::new(d, Vec::new()).expect("edgeless graph is acyclic")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Sorted `(parent, child)` pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Root-first topological order.
    pub fn topo(&self) -> &[usize] {
        &self.topo
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.binary_search(&(from, to)).is_ok()
    }
}

fn adjacency(d: usize, edges: &[(usize, usize)]) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    if d == 0 {
        return Err(Error::invalid("graph needs at least one node"));
    }
    let mut parents = vec![Vec::new(); d];
    let mut children = vec![Vec::new(); d];
    let mut seen = std::collections::HashSet::new();
    for &(p, c) in edges {
        if p >= d || c >= d {
            return Err(Error::invalid(format!("edge ({p}, {c}) out of range for d={d}")));
        }
        if p == c {
            return Err(Error::invalid(format!("self-loop on node {p}")));
        }
        if !seen.insert((p, c)) {
            return Err(Error::invalid(format!("duplicate edge ({p}, {c})")));
        }
        parents[c].push(p);
        children[p].push(c);
    }
    for list in parents.iter_mut().chain(children.iter_mut()) {
        list.sort_unstable();
    }
    Ok((parents, children))
}

/// Erdős–Rényi DAG: a uniformly random node ranking, then every
/// lower-rank -> higher-rank pair is an edge with probability `edge_prob`.
pub fn generate_dag(d: usize, edge_prob: f64, rng: &mut Rng) -> Result<Dag> {
    if d == 0 {
        return Err(Error::invalid("d must be at least 1"));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::invalid(format!("edge_prob must lie in (0, 1], got {edge_prob}")));
    }
    let mut rank: Vec<usize> = (0..d).collect();
    rank.shuffle(rng);
    let mut edges = Vec::new();
    for a in 0..d {
        for b in a + 1..d {
            if rng.gen_bool(edge_prob) {
                edges.push((rank[a], rank[b]));
            }
        }
    }
    Dag::with_order(d, edges, rank)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismForm {
    /// `a * sum_j w_j sin(w_j x_j)`
    #[default]
    Sine,
    /// `a * sum_j w_j x_j`; zero curvature, only used to probe the margin
    /// estimator.
    Linear,
}

impl MechanismForm {
    fn is_sine(&self) -> bool {
        *self == MechanismForm::Sine
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    pub parents: Vec<usize>,
    pub weights: Vec<f64>,
    pub amplitude: f64,
    pub form: MechanismForm,
}

impl Mechanism {
    pub fn root() -> Self {
        Self {
            parents: Vec::new(),
            weights: Vec::new(),
            amplitude: 0.0,
            form: MechanismForm::Sine,
        }
    }

    /// `f_i` evaluated on a full point `x`.
    pub fn value(&self, x: &[f64]) -> f64 {
        let s: f64 = self
            .parents
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| match self.form {
                MechanismForm::Sine => w * (w * x[p]).sin(),
                MechanismForm::Linear => w * x[p],
            })
            .sum();
        self.amplitude * s
    }

    /// `df/dx_p` for the `k`-th parent, evaluated at that parent's value.
    pub fn first_partial(&self, k: usize, xp: f64) -> f64 {
        let w = self.weights[k];
        match self.form {
            MechanismForm::Sine => self.amplitude * w * w * (w * xp).cos(),
            MechanismForm::Linear => self.amplitude * w,
        }
    }

    /// `d^2 f/dx_p^2` for the `k`-th parent.
    pub fn second_partial(&self, k: usize, xp: f64) -> f64 {
        let w = self.weights[k];
        match self.form {
            MechanismForm::Sine => -self.amplitude * w * w * w * (w * xp).sin(),
            MechanismForm::Linear => 0.0,
        }
    }

    /// `C_i = a * sum |w|`, the sup-norm bound of a sine mechanism.
    pub fn bound(&self) -> f64 {
        match self.form {
            MechanismForm::Sine => {
                self.amplitude.abs() * self.weights.iter().map(|w| w.abs()).sum::<f64>()
            }
            MechanismForm::Linear if self.parents.is_empty() => 0.0,
            MechanismForm::Linear => f64::INFINITY,
        }
    }

    fn position_of(&self, parent: usize) -> Option<usize> {
        self.parents.iter().position(|&p| p == parent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scm {
    dag: Dag,
    mechanisms: Vec<Mechanism>,
    sigmas: Vec<f64>,
    target_margin: f64,
}

impl Scm {
    pub fn new(
        dag: Dag,
        mechanisms: Vec<Mechanism>,
        sigmas: Vec<f64>,
        target_margin: f64,
    ) -> Result<Self> {
        let d = dag.d();
        if mechanisms.len() != d || sigmas.len() != d {
            return Err(Error::invalid("one mechanism and one sigma per node required"));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("sigmas must be finite and positive"));
        }
        if !(target_margin >= 0.0) {
            return Err(Error::invalid("target margin must be non-negative"));
        }
        for (i, m) in mechanisms.iter().enumerate() {
            let mut ps = m.parents.clone();
            ps.sort_unstable();
            if ps != dag.parents(i) {
                return Err(Error::invalid(format!(
                    "mechanism {i} parents do not match the graph"
                )));
            }
            if m.weights.len() != m.parents.len() {
                return Err(Error::invalid(format!("mechanism {i}: one weight per parent")));
            }
            if !m.amplitude.is_finite() || m.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::invalid(format!("mechanism {i}: non-finite coefficient")));
            }
        }
        Ok(Self {
            dag,
            mechanisms,
            sigmas,
            target_margin,
        })
    }

    pub fn d(&self) -> usize {
        self.dag.d()
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn mechanisms(&self) -> &[Mechanism] {
        &self.mechanisms
    }

    pub fn mechanism(&self, i: usize) -> &Mechanism {
        &self.mechanisms[i]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn target_margin(&self) -> f64 {
        self.target_margin
    }

    /// `d f_child / d x_parent` at `x`.
    fn dfi(&self, child: usize, parent: usize, x: &[f64]) -> f64 {
        let m = &self.mechanisms[child];
        let k = m.position_of(parent).expect("parent of child");
        m.first_partial(k, x[parent])
    }

    fn d2fi(&self, child: usize, parent: usize, x: &[f64]) -> f64 {
        let m = &self.mechanisms[child];
        let k = m.position_of(parent).expect("parent of child");
        m.second_partial(k, x[parent])
    }

    /// Residual `e_i = x_i - f_i(PA_i(x))`.
    pub fn residual(&self, i: usize, x: &[f64]) -> f64 {
        x[i] - self.mechanisms[i].value(x)
    }

    /// `log p(x)` as the product of Gaussian conditionals.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        (0..self.d())
            .map(|i| {
                let s = self.sigmas[i];
                let r = self.residual(i, x) / s;
                -0.5 * r * r - 0.5 * (2.0 * std::f64::consts::PI * s * s).ln()
            })
            .sum()
    }

    /// `grad log p(x)`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        self.score_on(x, &vec![true; self.d()])
    }

    /// Score of the model restricted to `active` nodes: child terms of
    /// inactive nodes are dropped. Entries of inactive nodes are 0.
    ///
    /// When the inactive set consists of removed leaves this is exactly the
    /// score of the marginal over the active nodes.
    pub fn score_on(&self, x: &[f64], active: &[bool]) -> Vec<f64> {
        let d = self.d();
        assert_eq!(x.len(), d);
        let eps: Vec<f64> = (0..d).map(|i| self.residual(i, x)).collect();
        (0..d)
            .map(|j| {
                if !active[j] {
                    return 0.0;
                }
                let own = -eps[j] / (self.sigmas[j] * self.sigmas[j]);
                let ch: f64 = self
                    .dag
                    .children(j)
                    .iter()
                    .filter(|&&i| active[i])
                    .map(|&i| self.dfi(i, j, x) * eps[i] / (self.sigmas[i] * self.sigmas[i]))
                    .sum();
                own + ch
            })
            .collect()
    }

    /// Diagonal of the score Jacobian, `d s_j / d x_j`.
    pub fn jacobian_diag(&self, x: &[f64]) -> Vec<f64> {
        self.jacobian_diag_on(x, &vec![true; self.d()])
    }

    /// `d s_j/d x_j = -1/sigma_j^2 + sum_{i in CH_j} (f_i'' e_i - f_i'^2) / sigma_i^2`
    /// over active children; leaves give the constant `-1/sigma_j^2`.
    pub fn jacobian_diag_on(&self, x: &[f64], active: &[bool]) -> Vec<f64> {
        let d = self.d();
        assert_eq!(x.len(), d);
        (0..d)
            .map(|j| {
                if !active[j] {
                    return 0.0;
                }
                let base = -1.0 / (self.sigmas[j] * self.sigmas[j]);
                let ch: f64 = self
                    .dag
                    .children(j)
                    .iter()
                    .filter(|&&i| active[i])
                    .map(|&i| {
                        let e = self.residual(i, x);
                        let g1 = self.dfi(i, j, x);
                        let g2 = self.d2fi(i, j, x);
                        (g2 * e - g1 * g1) / (self.sigmas[i] * self.sigmas[i])
                    })
                    .sum();
                base + ch
            })
            .collect()
    }

    /// Row `j` of the score Jacobian (the Hessian of `log p`) for the model
    /// restricted to `active`; `out[b] = d s_j / d x_b`.
    pub fn jacobian_row_on(&self, x: &[f64], j: usize, active: &[bool]) -> Vec<f64> {
        let d = self.d();
        let mut row = vec![0.0; d];
        // log p = -1/2 sum_i e_i^2 / sigma_i^2, with de_i/dx_b = [b = i] - df_i/dx_b.
        let terms = std::iter::once(j).chain(
            self.dag
                .children(j)
                .iter()
                .copied()
                .filter(|&i| active[i]),
        );
        for i in terms {
            let inv_var = 1.0 / (self.sigmas[i] * self.sigmas[i]);
            let de_dj = if i == j { 1.0 } else { -self.dfi(i, j, x) };
            row[i] -= de_dj * inv_var;
            for &b in self.dag.parents(i) {
                row[b] += de_dj * self.dfi(i, b, x) * inv_var;
            }
            if i != j {
                row[j] += self.residual(i, x) * self.d2fi(i, j, x) * inv_var;
            }
        }
        row
    }

    /// Full `d x d` score Jacobian.
    pub fn jacobian(&self, x: &[f64]) -> Matrix {
        let active = vec![true; self.d()];
        let mut m = Matrix::zeros(self.d(), self.d());
        for j in 0..self.d() {
            m.row_mut(j).copy_from_slice(&self.jacobian_row_on(x, j, &active));
        }
        m
    }
}

/// Draws noise scales and weights for `dag`, then calibrates amplitudes to
/// meet `cm` on every edge.
///
/// Calibration walks the graph root-first and uses ancestral pilot samples of
/// the already-finished parents, so each edge's expected squared curvature is
/// estimated under the parent's actual marginal.
pub fn build_scm(dag: Dag, cm: f64, sigma_range: (f64, f64), rng: &mut Rng) -> Result<Scm> {
    build_scm_with(dag, cm, sigma_range, CALIBRATION_SAMPLES, rng)
}

pub fn build_scm_with(
    dag: Dag,
    cm: f64,
    sigma_range: (f64, f64),
    pilot: usize,
    rng: &mut Rng,
) -> Result<Scm> {
    let (lo, hi) = sigma_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::invalid(format!("sigma range must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
    }
    if !(cm >= 0.0 && cm.is_finite()) {
        return Err(Error::invalid(format!("margin must be finite and >= 0, got {cm}")));
    }
    if pilot < 2 {
        return Err(Error::invalid("calibration needs at least two pilot samples"));
    }
    let d = dag.d();
    let sigmas: Vec<f64> = (0..d)
        .map(|_| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
        .collect();
    let magnitude = Uniform::new_inclusive(0.5, 2.0);
    let mut mechanisms: Vec<Mechanism> = (0..d)
        .map(|i| {
            let parents = dag.parents(i).to_vec();
            let weights = parents
                .iter()
                .map(|_| {
                    let w: f64 = magnitude.sample(rng);
                    if rng.gen_bool(0.5) {
                        w
                    } else {
                        -w
                    }
                })
                .collect();
            Mechanism {
                parents,
                weights,
                amplitude: 1.0,
                form: MechanismForm::Sine,
            }
        })
        .collect();

    let mut pilot_x = Matrix::zeros(pilot, d);
    for &i in dag.topo() {
        let m = &mut mechanisms[i];
        if m.parents.is_empty() {
            m.amplitude = 0.0;
        } else if cm > 0.0 {
            let min_curv = m
                .parents
                .iter()
                .zip(&m.weights)
                .map(|(&p, &w)| {
                    let w3 = w * w * w;
                    (0..pilot)
                        .map(|r| {
                            let g = w3 * (w * pilot_x.get(r, p)).sin();
                            g * g
                        })
                        .sum::<f64>()
                        / pilot as f64
                })
                .fold(f64::INFINITY, f64::min);
            if !(min_curv > 0.0) {
                return Err(Error::invalid("degenerate pilot sample during calibration"));
            }
            m.amplitude = (cm * sigmas[i] * sigmas[i] / min_curv).sqrt();
        }
        let m = &mechanisms[i];
        for r in 0..pilot {
            let z: f64 = StandardNormal.sample(rng);
            let v = m.value(pilot_x.row(r)) + sigmas[i] * z;
            pilot_x.set(r, i, v);
        }
    }
    Scm::new(dag, mechanisms, sigmas, cm)
}

/// Ancestral sampling. Noise is drawn per row in node-id order so the result
/// does not depend on which topological order the graph stores.
pub fn sample(scm: &Scm, n: usize, rng: &mut Rng) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let d = scm.d();
    let mut values = Matrix::zeros(n, d);
    let mut z = vec![0.0; d];
    for r in 0..n {
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        for &i in scm.dag.topo() {
            let f = scm.mechanisms[i].value(values.row(r));
            values.set(r, i, f + scm.sigmas[i] * z[i]);
        }
    }
    Dataset::from_matrix(values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginEstimate {
    /// Monte-Carlo mean of `(d^2 f_i / d x_j^2)^2 / sigma_i^2`.
    pub margin: f64,
    pub std_err: f64,
}

/// Per-edge Monte-Carlo estimate of the identifiability margin on the model's
/// own joint distribution.
pub fn estimate_margin(
    scm: &Scm,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<BTreeMap<(usize, usize), MarginEstimate>> {
    if n_mc < 100 {
        return Err(Error::invalid(format!("n_mc must be at least 100, got {n_mc}")));
    }
    let data = sample(scm, n_mc, rng)?;
    let mut out = BTreeMap::new();
    for &(j, i) in scm.dag.edges() {
        let var_i = scm.sigmas[i] * scm.sigmas[i];
        let vals: Vec<f64> = (0..n_mc)
            .map(|r| {
                let g = scm.d2fi(i, j, data.row(r));
                g * g / var_i
            })
            .collect();
        let (mean, var) = mean_var(&vals);
        out.insert(
            (j, i),
            MarginEstimate {
                margin: mean,
                std_err: (var / n_mc as f64).sqrt(),
            },
        );
    }
    Ok(out)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Serialize, Deserialize)]
struct ScmDoc {
    d: usize,
    edges: Vec<[usize; 2]>,
    sigmas: Vec<f64>,
    mechanisms: Vec<MechanismDoc>,
    target_margin: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MechanismDoc {
    parents: Vec<usize>,
    weights: Vec<f64>,
    amplitude: f64,
    #[serde(default, skip_serializing_if = "MechanismForm::is_sine")]
    form: MechanismForm,
}

fn one_based(i: usize) -> usize {
    i + 1
}

fn zero_based(i: usize) -> Result<usize> {
    i.checked_sub(1)
        .ok_or_else(|| Error::format("scm json", "node ids are 1-based"))
}

impl Scm {
    pub fn to_json(&self) -> Result<String> {
        let doc = ScmDoc {
            d: self.d(),
            edges: self
                .dag
                .edges()
                .iter()
                .map(|&(p, c)| [one_based(p), one_based(c)])
                .collect(),
            sigmas: self.sigmas.clone(),
            mechanisms: self
                .mechanisms
                .iter()
                .map(|m| MechanismDoc {
                    parents: m.parents.iter().copied().map(one_based).collect(),
                    weights: m.weights.clone(),
                    amplitude: m.amplitude,
                    form: m.form,
                })
                .collect(),
            target_margin: self.target_margin,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScmDoc = serde_json::from_str(text)?;
        let edges = doc
            .edges
            .iter()
            .map(|&[p, c]| Ok((zero_based(p)?, zero_based(c)?)))
            .collect::<Result<Vec<_>>>()?;
        let dag = Dag::new(doc.d, edges)?;
        let mechanisms = doc
            .mechanisms
            .into_iter()
            .map(|m| {
                Ok(Mechanism {
                    parents: m.parents.into_iter().map(zero_based).collect::<Result<_>>()?,
                    weights: m.weights,
                    amplitude: m.amplitude,
                    form: m.form,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Scm::new(dag, mechanisms, doc.sigmas, doc.target_margin)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    pub(crate) fn chain3() -> Scm {
        let dag = Dag::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let mech = |p: usize, w: f64, a: f64| Mechanism {
            parents: vec![p],
            weights: vec![w],
            amplitude: a,
            form: MechanismForm::Sine,
        };
        Scm::new(
            dag,
            vec![Mechanism::root(), mech(0, 1.3, 0.8), mech(1, -0.7, 1.6)],
            vec![0.9, 1.1, 0.6],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn dag_rejects_bad_edges() {
        assert!(Dag::new(0, vec![]).is_err());
        assert!(Dag::new(2, vec![(0, 0)]).is_err());
        assert!(Dag::new(2, vec![(0, 2)]).is_err());
        assert!(Dag::new(2, vec![(0, 1), (0, 1)]).is_err());
        assert!(Dag::new(3, vec![(0, 1), (1, 2), (2, 0)]).is_err());
        assert!(Dag::with_order(2, vec![(0, 1)], vec![1, 0]).is_err());
    }

    #[test]
    fn generate_dag_edge_cases() {
        let mut rng = seeded(3);
        let one = generate_dag(1, 0.5, &mut rng).unwrap();
        assert_eq!(one.n_edges(), 0);
        assert_eq!(one.topo(), &[0]);
        let full = generate_dag(3, 1.0, &mut rng).unwrap();
        assert_eq!(full.n_edges(), 3);
        let t = full.topo();
        assert!(full.has_edge(t[0], t[1]) && full.has_edge(t[0], t[2]) && full.has_edge(t[1], t[2]));
        assert!(generate_dag(0, 0.5, &mut rng).is_err());
        assert!(generate_dag(3, 0.0, &mut rng).is_err());
    }

    #[test]
    fn leaf_diagonal_is_constant() {
        let scm = chain3();
        let mut rng = seeded(1);
        let data = sample(&scm, 200, &mut rng).unwrap();
        for r in 0..data.n() {
            let jd = scm.jacobian_diag(data.row(r));
            assert_eq!(jd[2], -1.0 / (0.6 * 0.6));
        }
    }

    #[test]
    fn three_node_chain_score_matches_closed_form() {
        // s_3 = (f_3(x_2) - x_3)/sigma_3^2 and
        // d s_2/d x_2 = -1/sigma_2^2 + (f_3'' e_3 - f_3'^2)/sigma_3^2.
        let scm = chain3();
        let x = [0.3, -1.2, 0.4];
        let f3 = 1.6 * -0.7 * (-0.7f64 * -1.2).sin();
        let s = scm.score(&x);
        assert!((s[2] - (f3 - 0.4) / 0.36).abs() < 1e-14);
        let e3 = 0.4 - f3;
        let f3p = 1.6 * 0.49 * (-0.7f64 * -1.2).cos();
        let f3pp = -1.6 * -0.343 * (-0.7f64 * -1.2).sin();
        let expected = -1.0 / 1.21 + (f3pp * e3 - f3p * f3p) / 0.36;
        assert!((scm.jacobian_diag(&x)[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn jacobian_row_diagonal_agrees_with_diag() {
        let scm = chain3();
        let x = [0.7, 0.1, -0.9];
        let jd = scm.jacobian_diag(&x);
        let full = scm.jacobian(&x);
        for j in 0..3 {
            assert!((full.get(j, j) - jd[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let mut rng = seeded(11);
        let dag = generate_dag(6, 0.5, &mut rng).unwrap();
        let scm = build_scm_with(dag, 2.0, DEFAULT_SIGMA_RANGE, 500, &mut rng).unwrap();
        let back = Scm::from_json(&scm.to_json().unwrap()).unwrap();
        assert_eq!(back.mechanisms(), scm.mechanisms());
        assert_eq!(back.sigmas(), scm.sigmas());
        assert_eq!(back.dag().edges(), scm.dag().edges());
        assert_eq!(back.target_margin(), 2.0);
    }

    #[test]
    fn build_rejects_bad_sigma_range() {
        let mut rng = seeded(0);
        assert!(build_scm(Dag::empty(2), 1.0, (0.0, 1.0), &mut rng).is_err());
        assert!(build_scm(Dag::empty(2), 1.0, (2.0, 1.0), &mut rng).is_err());
        assert!(build_scm(Dag::empty(2), -1.0, (1.0, 1.0), &mut rng).is_err());
    }
}
