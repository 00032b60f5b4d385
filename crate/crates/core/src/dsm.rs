//! Denoising score matching.
//!
//! A sample `x` is perturbed to `x^ = x + e`, `e ~ N(0, sigma^2 I)`; the
//! network is regressed onto the conditional score `(x - x^)/sigma^2`, which
//! in expectation is the score of the sigma-smoothed data density.

use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::norm_sq;
use crate::nn::{Grads, MlpParams};
use crate::rng::{fork, Rng};
use crate::scm::Scm;

/// Loss growth, relative to the untrained network, treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DsmConfig {
    /// DSM perturbation std.
    pub sigma: f64,
    /// SGD step size.
    pub eta: f64,
    pub epochs: usize,
    /// Samples per update; 1 is plain SGD.
    pub batch_size: usize,
    /// Fresh perturbation on every visit; otherwise one fixed draw per sample.
    pub resample_noise: bool,
    /// Evaluate the oracle ESM error every `eval_every` epochs (0 = never).
    pub eval_every: usize,
}

impl Default for DsmConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            eta: 1e-3,
            epochs: 200,
            batch_size: 1,
            resample_noise: true,
            eval_every: 0,
        }
    }
}

impl DsmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be >= 0, got {}", self.eta)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean DSM loss of each epoch.
    pub losses: Vec<f64>,
    /// Oracle ESM error after each epoch when evaluated.
    pub esm: Vec<Option<f64>>,
    /// Oracle ESM error of the initial parameters, when evaluated.
    pub initial_esm: Option<f64>,
    /// Training points moved onto the clipping ball, when clipping is on.
    pub clipped: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    pub fn final_esm(&self) -> Option<f64> {
        self.esm.iter().rev().find_map(|e| *e)
    }

    /// CSV with header `epoch,dsm_loss,esm_error`; unevaluated ESM cells
    /// are blank.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "dsm_loss", "esm_error"])?;
        for (k, loss) in self.losses.iter().enumerate() {
            let esm = self.esm.get(k).copied().flatten();
            w.write_record([
                (k + 1).to_string(),
                crate::dataset::format_f64(*loss),
                esm.map(crate::dataset::format_f64).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Loss `1/2 |s(x + e) + e/sigma^2|^2` and its weight gradients for one
/// sample with caller-supplied perturbation `eps`.
pub fn dsm_sample_loss(p: &MlpParams, x: &[f64], eps: &[f64], sigma: f64) -> (f64, Grads) {
    let (loss, grad_y, cache) = residual(p, x, eps, sigma);
    (loss, p.backward(&cache, &grad_y))
}

fn residual(
    p: &MlpParams,
    x: &[f64],
    eps: &[f64],
    sigma: f64,
) -> (f64, Vec<f64>, crate::nn::ForwardCache) {
    let inv_var = 1.0 / (sigma * sigma);
    let x_hat: Vec<f64> = x.iter().zip(eps).map(|(a, e)| a + e).collect();
    let (y, cache) = p.forward(&x_hat);
    // target (x - x^)/sigma^2 = -e/sigma^2
    let r: Vec<f64> = y.iter().zip(eps).map(|(s, e)| s + e * inv_var).collect();
    (0.5 * norm_sq(&r), r, cache)
}

/// Trains `p` on `data` by SGD on the DSM objective. With `oracle`, the ESM
/// error against that model is tracked every `cfg.eval_every` epochs on the
/// given evaluation points.
pub fn sgd_train(
    mut p: MlpParams,
    data: &Dataset,
    cfg: &DsmConfig,
    rng: &mut Rng,
    oracle: Option<(&Scm, &Dataset)>,
) -> Result<(MlpParams, TrainReport)> {
    cfg.validate()?;
    let d = p.dims().d_in;
    if data.d() != d || p.dims().d_out != d {
        return Err(Error::invalid(format!(
            "network dimension {d} does not match data dimension {}",
            data.d()
        )));
    }
    let noise = Normal::new(0.0, cfg.sigma).expect("valid sigma");
    let n = data.n();
    let fixed: Option<Vec<Vec<f64>>> = (!cfg.resample_noise).then(|| {
        (0..n)
            .map(|_| (0..d).map(|_| noise.sample(rng)).collect())
            .collect()
    });

    let mut report = TrainReport::default();
    let eval_esm = |p: &MlpParams| oracle.map(|(scm, pts)| esm_error(p, scm, pts));
    if cfg.eval_every > 0 {
        report.initial_esm = eval_esm(&p);
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut eps = vec![0.0; d];
    let limit = DIVERGENCE_FACTOR * initial_loss(&p, data, &noise, &mut fork(rng));
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batch: Option<Grads> = None;
        let mut in_batch = 0;
        for &i in &order {
            match &fixed {
                Some(f) => eps.copy_from_slice(&f[i]),
                None => eps.iter_mut().for_each(|e| *e = noise.sample(rng)),
            }
            let (loss, grad_y, cache) = residual(&p, data.row(i), &eps, cfg.sigma);
            if !(loss <= limit) {
                return Err(Error::Diverged { epoch, loss, limit });
            }
            total += loss;
            if cfg.batch_size == 1 {
                p.sgd_step(&cache, &grad_y, cfg.eta);
            } else {
                let g = p.backward(&cache, &grad_y);
                match &mut batch {
                    Some(acc) => acc.accumulate(&g, 1.0),
                    None => batch = Some(g),
                }
                in_batch += 1;
                if in_batch == cfg.batch_size {
                    let acc = batch.take().expect("accumulated");
                    p.apply(&acc.layers, cfg.eta / in_batch as f64);
                    in_batch = 0;
                }
            }
        }
        if let Some(acc) = batch.take() {
            p.apply(&acc.layers, cfg.eta / in_batch as f64);
        }
        let mean = total / n as f64;
        if !p.is_finite() || !(mean <= limit) {
            return Err(Error::Diverged {
                epoch,
                loss: mean,
                limit,
            });
        }
        report.losses.push(mean);
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        report.esm.push(if due { eval_esm(&p) } else { None });
    }
    Ok((p, report))
}

/// Mean DSM loss of the untrained network, the divergence reference.
fn initial_loss(p: &MlpParams, data: &Dataset, noise: &Normal<f64>, rng: &mut Rng) -> f64 {
    let d = data.d();
    let total: f64 = (0..data.n())
        .map(|i| {
            let eps: Vec<f64> = (0..d).map(|_| noise.sample(rng)).collect();
            residual(p, data.row(i), &eps, noise.std_dev()).0
        })
        .sum();
    total / data.n() as f64
}

/// Monte-Carlo explicit score-matching error
/// `mean_x 1/2 |s(x) - grad log p(x)|^2` with the model's analytic score.
///
/// `points` columns are matched to model nodes through their labels; the
/// score is that of the model restricted to those nodes.
pub fn esm_error(p: &MlpParams, scm: &Scm, points: &Dataset) -> f64 {
    esm_error_with(|x| p.eval(x), scm, points)
}

/// [`esm_error`] for an arbitrary score function over the dataset columns.
pub fn esm_error_with(score: impl Fn(&[f64]) -> Vec<f64>, scm: &Scm, points: &Dataset) -> f64 {
    let mut active = vec![false; scm.d()];
    for &l in points.labels() {
        active[l] = true;
    }
    let mut full = vec![0.0; scm.d()];
    let mut total = 0.0;
    for r in 0..points.n() {
        let row = points.row(r);
        for (&l, &v) in points.labels().iter().zip(row) {
            full[l] = v;
        }
        let truth = scm.score_on(&full, &active);
        let est = score(row);
        total += points
            .labels()
            .iter()
            .zip(&est)
            .map(|(&l, s)| (s - truth[l]) * (s - truth[l]))
            .sum::<f64>();
    }
    0.5 * total / points.n() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dims;
    use crate::rng::seeded;

    #[test]
    fn zero_output_layer_gives_noise_only_loss() {
        let mut p = MlpParams::init(Dims::square(3, 8, 3), &mut seeded(1)).unwrap();
        p.zero_output();
        let eps = [0.05, -0.1, 0.02];
        let sigma = 0.1;
        let (loss, _) = dsm_sample_loss(&p, &[1.0, 2.0, 3.0], &eps, sigma);
        let expected = 0.5 * norm_sq(&eps) / sigma.powi(4);
        assert!((loss - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn zero_step_size_leaves_params_unchanged() {
        let p = MlpParams::init(Dims::square(2, 8, 3), &mut seeded(2)).unwrap();
        let data = Dataset::from_matrix(crate::Matrix::from_fn(10, 2, |r, c| {
            (r as f64 - 5.0) * 0.1 + c as f64
        }))
        .unwrap();
        let cfg = DsmConfig {
            eta: 0.0,
            epochs: 1,
            ..Default::default()
        };
        let (q, report) = sgd_train(p.clone(), &data, &cfg, &mut seeded(3), None).unwrap();
        assert_eq!(p, q);
        assert_eq!(report.losses.len(), 1);
    }

    #[test]
    fn config_validation() {
        let bad = [
            DsmConfig { epochs: 0, ..Default::default() },
            DsmConfig { sigma: 0.0, ..Default::default() },
            DsmConfig { eta: -1.0, ..Default::default() },
            DsmConfig { batch_size: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn huge_step_size_reports_divergence() {
        let p = MlpParams::init(Dims::square(2, 16, 3), &mut seeded(4)).unwrap();
        let data = Dataset::from_matrix(crate::Matrix::from_fn(50, 2, |r, c| {
            ((r * 7 + c * 3) % 11) as f64 - 5.0
        }))
        .unwrap();
        let cfg = DsmConfig {
            eta: 10.0,
            epochs: 50,
            ..Default::default()
        };
        match sgd_train(p, &data, &cfg, &mut seeded(5), None) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn report_csv_leaves_blank_esm() {
        let report = TrainReport {
            losses: vec![1.5, 0.5],
            esm: vec![None, Some(0.25)],
            initial_esm: Some(1.0),
            clipped: 0,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,dsm_loss,esm_error");
        assert!(lines[1].starts_with("1,") && lines[1].ends_with(','));
        assert!(lines[2].ends_with("2.5000000000000000e-1"));
    }
}
