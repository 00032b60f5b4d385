//! Score-based generative modelling with an Ornstein–Uhlenbeck forward
//! process `dx = -x/2 dt + dw`.
//!
//! The transition kernel is Gaussian, `x_t | x_0 ~ N(alpha(t) x_0, h(t) I)`
//! with `alpha(t) = e^{-t/2}` and `h(t) = 1 - e^{-t}`, so the conditional
//! score `-(x_t - alpha x_0)/h` is a closed-form regression target. A
//! time-conditioned network is fitted to it over `t ~ U[t0, T]` and then
//! drives an Euler–Maruyama discretisation of the reverse-time SDE.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dsm::{TrainReport, DIVERGENCE_FACTOR};
use crate::error::{Error, Result};
use crate::matrix::{norm_sq, Matrix};
use crate::nn::{Dims, ForwardCache, Grads, MlpParams};
use crate::rng::{fork, Rng};

/// Time window `[t0, T]` of the forward process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuSchedule {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_max: f64,
}

impl Default for OuSchedule {
    fn default() -> Self {
        Self { t0: 0.01, t_max: 5.0 }
    }
}

impl OuSchedule {
    pub fn new(t0: f64, t_max: f64) -> Result<Self> {
        let s = Self { t0, t_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::invalid(format!("t0 must be > 0, got {}", self.t0)));
        }
        if !(self.t_max > self.t0 && self.t_max.is_finite()) {
            return Err(Error::invalid(format!(
                "T must exceed t0 = {}, got {}",
                self.t0, self.t_max
            )));
        }
        Ok(())
    }

    fn time_dist(&self) -> Uniform<f64> {
        Uniform::new_inclusive(self.t0, self.t_max)
    }
}

/// `(alpha(t), h(t)) = (e^{-t/2}, 1 - e^{-t})`.
pub fn transition_stats(t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("t must be > 0, got {t}")));
    }
    Ok(stats_unchecked(t))
}

fn stats_unchecked(t: f64) -> (f64, f64) {
    // -expm1(-t) keeps h accurate for small t
    ((-0.5 * t).exp(), -(-t).exp_m1())
}

/// Draws `x_t = alpha(t) x0 + sqrt(h(t)) z`.
pub fn perturb(x0: &[f64], t: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let (alpha, h) = transition_stats(t)?;
    let sd = h.sqrt();
    Ok(x0
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(rng);
            alpha * x + sd * z
        })
        .collect())
}

/// A time-dependent score `s(x, t)`.
pub trait TimeScore {
    fn dim(&self) -> usize;
    fn score(&self, x: &[f64], t: f64) -> Vec<f64>;
}

/// Exact diffused score of isotropic Gaussian data `N(0, var I)`:
/// `s(x, t) = -x / (var alpha(t)^2 + h(t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianScore {
    pub d: usize,
    pub var: f64,
}

impl TimeScore for GaussianScore {
    fn dim(&self) -> usize {
        self.d
    }

    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        let (alpha, h) = stats_unchecked(t);
        let k = 1.0 / (self.var * alpha * alpha + h);
        x.iter().map(|v| -k * v).collect()
    }
}

/// Network over `d + 1` inputs (the data coordinates followed by `t`) with
/// `d` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeNet {
    params: MlpParams,
}

impl TimeNet {
    pub fn init(d: usize, width: usize, depth: usize, rng: &mut Rng) -> Result<Self> {
        let dims = Dims {
            d_in: d + 1,
            d_out: d,
            width,
            depth,
        };
        Ok(Self {
            params: MlpParams::init(dims, rng)?,
        })
    }

    pub fn from_params(params: MlpParams) -> Result<Self> {
        let dims = params.dims();
        if dims.d_in != dims.d_out + 1 {
            return Err(Error::invalid(format!(
                "time network needs d_in = d_out + 1, got {} -> {}",
                dims.d_in, dims.d_out
            )));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    fn forward(&self, x: &[f64], t: f64) -> (Vec<f64>, ForwardCache) {
        let mut input = Vec::with_capacity(x.len() + 1);
        input.extend_from_slice(x);
        input.push(t);
        self.params.forward(&input)
    }

    pub fn to_json(&self) -> Result<String> {
        self.params.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_params(MlpParams::from_json(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(MlpParams::load(path)?)
    }
}

impl TimeScore for TimeNet {
    fn dim(&self) -> usize {
        self.params.dims().d_out
    }

    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.forward(x, t).0
    }
}

/// Squared error `|target - s(x_t, t)|^2` at one time with the standard
/// normal draw `z`, and its weight gradients.
pub fn sgm_time_loss(net: &TimeNet, x0: &[f64], t: f64, z: &[f64]) -> Result<(f64, Grads)> {
    let (loss, grad_y, cache) = time_residual(net, x0, t, z)?;
    Ok((loss, net.params.backward(&cache, &grad_y)))
}

fn time_residual(
    net: &TimeNet,
    x0: &[f64],
    t: f64,
    z: &[f64],
) -> Result<(f64, Vec<f64>, ForwardCache)> {
    let (alpha, h) = transition_stats(t)?;
    let sd = h.sqrt();
    let xt: Vec<f64> = x0.iter().zip(z).map(|(x, z)| alpha * x + sd * z).collect();
    let (s, cache) = net.forward(&xt, t);
    // target -(x_t - alpha x0)/h = -z/sqrt(h)
    let r: Vec<f64> = s.iter().zip(z).map(|(s, z)| s + z / sd).collect();
    let grad_y = r.iter().map(|v| 2.0 * v).collect();
    Ok((norm_sq(&r), grad_y, cache))
}

/// Monte-Carlo estimate of the time-averaged loss at `x0` with `k_times`
/// draws of `t ~ U[t0, T]`, and its weight gradients.
pub fn sgm_loss(
    net: &TimeNet,
    x0: &[f64],
    sched: &OuSchedule,
    rng: &mut Rng,
    k_times: usize,
) -> Result<(f64, Grads)> {
    sched.validate()?;
    if k_times == 0 {
        return Err(Error::invalid("k_times must be at least 1"));
    }
    let times = sched.time_dist();
    let w = 1.0 / k_times as f64;
    let mut total = 0.0;
    let mut acc: Option<Grads> = None;
    let mut z = vec![0.0; x0.len()];
    for _ in 0..k_times {
        let t = times.sample(rng);
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        let (loss, g) = sgm_time_loss(net, x0, t, &z)?;
        total += w * loss;
        match &mut acc {
            Some(a) => a.accumulate(&g, w),
            None => {
                let mut g = g;
                g.layers.iter_mut().for_each(|m| m.scale(w));
                g.input.iter_mut().for_each(|v| *v *= w);
                acc = Some(g);
            }
        }
    }
    Ok((total, acc.expect("k_times >= 1")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgmConfig {
    /// SGD step size.
    pub eta: f64,
    pub epochs: usize,
    /// Time draws per sample per step.
    pub k_times: usize,
    /// Project training points onto the ball `|x| <= clip` (off when `None`).
    pub clip: Option<f64>,
}

impl Default for SgmConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            epochs: 200,
            k_times: 4,
            clip: None,
        }
    }
}

impl SgmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be >= 0, got {}", self.eta)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.k_times == 0 {
            return Err(Error::invalid("k_times must be at least 1"));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("clip radius must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Scales `x` onto the ball of radius `c`; returns whether it was outside.
fn clip_to_ball(x: &mut [f64], c: f64) -> bool {
    let norm = norm_sq(x).sqrt();
    if norm > c {
        x.iter_mut().for_each(|v| *v *= c / norm);
        true
    } else {
        false
    }
}

/// Trains `net` on `data` by per-sample SGD on [`sgm_loss`]. The report's
/// `losses` are per-epoch means; `clipped` counts clipped training points.
pub fn train_sgm(
    mut net: TimeNet,
    data: &Dataset,
    sched: &OuSchedule,
    cfg: &SgmConfig,
    rng: &mut Rng,
) -> Result<(TimeNet, TrainReport)> {
    sched.validate()?;
    cfg.validate()?;
    let d = net.dim();
    if data.d() != d {
        return Err(Error::invalid(format!(
            "network dimension {d} does not match data dimension {}",
            data.d()
        )));
    }
    let mut points = data.values().clone();
    let mut report = TrainReport::default();
    if let Some(c) = cfg.clip {
        for r in 0..points.rows() {
            if clip_to_ball(points.row_mut(r), c) {
                report.clipped += 1;
            }
        }
    }

    let n = data.n();
    let limit = DIVERGENCE_FACTOR * initial_loss(&net, &points, sched, cfg.k_times, &mut fork(rng))?;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, g) = sgm_loss(&net, points.row(i), sched, rng, cfg.k_times)?;
            if !(loss <= limit) {
                return Err(Error::Diverged { epoch, loss, limit });
            }
            total += loss;
            net.params.apply(&g.layers, cfg.eta);
        }
        let mean = total / n as f64;
        if !net.params.is_finite() || !(mean <= limit) {
            return Err(Error::Diverged {
                epoch,
                loss: mean,
                limit,
            });
        }
        report.losses.push(mean);
        report.esm.push(None);
    }
    Ok((net, report))
}

fn initial_loss(
    net: &TimeNet,
    points: &Matrix,
    sched: &OuSchedule,
    k_times: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut total = 0.0;
    for r in 0..points.rows() {
        total += sgm_loss(net, points.row(r), sched, rng, k_times)?.0;
    }
    Ok(total / points.rows() as f64)
}

/// Euler–Maruyama integration of the reverse SDE from `x_T ~ N(0, I)`:
/// `x <- x + [x/2 + s(x, t)] dt + sqrt(dt) z` for `t = T, T - dt, ...`,
/// stopping at `t0`. Returns one sample per row.
pub fn reverse_sample(
    score: &impl TimeScore,
    sched: &OuSchedule,
    n_steps: usize,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Matrix> {
    sched.validate()?;
    if n_steps == 0 {
        return Err(Error::invalid("n_steps must be at least 1"));
    }
    let d = score.dim();
    let dt = (sched.t_max - sched.t0) / n_steps as f64;
    let sd = dt.sqrt();
    let mut out = Matrix::zeros(n_samples, d);
    for r in 0..n_samples {
        let x = out.row_mut(r);
        x.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        for k in 0..n_steps {
            let t = sched.t_max - k as f64 * dt;
            let s = score.score(x, t);
            for (xi, si) in x.iter_mut().zip(&s) {
                let z: f64 = StandardNormal.sample(rng);
                *xi += (0.5 * *xi + si) * dt + sd * z;
            }
        }
    }
    Ok(out)
}

/// Mean squared error per coordinate between `score` and the exact
/// Gaussian score over the given times and points.
pub fn gaussian_score_mse(
    score: &impl TimeScore,
    var: f64,
    times: &[f64],
    points: &[Vec<f64>],
) -> f64 {
    let exact = GaussianScore {
        d: score.dim(),
        var,
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for &t in times {
        for x in points {
            let a = score.score(x, t);
            let b = exact.score(x, t);
            total += a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
            count += a.len();
        }
    }
    total / count as f64
}

/// Schedule echoed next to a sample dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_max: f64,
    pub n_steps: usize,
}

impl SampleMeta {
    pub fn new(sched: &OuSchedule, n_steps: usize) -> Self {
        Self {
            t0: sched.t0,
            t_max: sched.t_max,
            n_steps,
        }
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out).map_err(|e| Error::io("<json>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn kernel_at_one() {
        let (a, h) = transition_stats(1.0).unwrap();
        assert_eq!(a, (-0.5f64).exp());
        assert!((h - (1.0 - (-1.0f64).exp())).abs() < 1e-16);
    }

    #[test]
    fn kernel_rejects_non_positive_time() {
        assert!(transition_stats(0.0).is_err());
        assert!(transition_stats(-1.0).is_err());
        assert!(transition_stats(f64::NAN).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(OuSchedule::new(0.0, 1.0).is_err());
        assert!(OuSchedule::new(1.0, 1.0).is_err());
        assert!(OuSchedule::new(0.01, 5.0).is_ok());
    }

    #[test]
    fn zero_step_size_leaves_net_unchanged() {
        let net = TimeNet::init(2, 16, 3, &mut seeded(1)).unwrap();
        let data = Dataset::from_matrix(Matrix::from_fn(8, 2, |r, c| r as f64 * 0.1 - c as f64)).unwrap();
        let cfg = SgmConfig {
            eta: 0.0,
            epochs: 2,
            ..Default::default()
        };
        let (out, report) = train_sgm(net.clone(), &data, &OuSchedule::default(), &cfg, &mut seeded(2)).unwrap();
        assert_eq!(out, net);
        assert_eq!(report.losses.len(), 2);
    }

    #[test]
    fn clipping_counts_points_outside_ball() {
        let net = TimeNet::init(2, 8, 2, &mut seeded(3)).unwrap();
        let data = Dataset::from_matrix(Matrix::from_vec(3, 2, vec![3.0, 4.0, 0.1, 0.2, -6.0, 0.0])).unwrap();
        let cfg = SgmConfig {
            eta: 0.0,
            epochs: 1,
            clip: Some(1.0),
            ..Default::default()
        };
        let (_, report) = train_sgm(net, &data, &OuSchedule::default(), &cfg, &mut seeded(4)).unwrap();
        assert_eq!(report.clipped, 2);
    }

    #[test]
    fn time_net_shape_is_checked() {
        let p = MlpParams::init(Dims::square(3, 8, 2), &mut seeded(5)).unwrap();
        assert!(TimeNet::from_params(p).is_err());
    }

    #[test]
    fn meta_json_uses_capital_t() {
        let mut buf = Vec::new();
        SampleMeta::new(&OuSchedule::default(), 50).write_json(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["T"], 5.0);
        assert_eq!(v["t0"], 0.01);
        assert_eq!(v["n_steps"], 50);
    }
}
