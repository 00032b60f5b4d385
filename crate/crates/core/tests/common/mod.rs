//! Fixtures and numerical oracles shared by the integration tests.

#![allow(dead_code)]

use causal_score::rng::{stream, Stream};
use causal_score::scm::{build_scm, generate_dag, Mechanism, MechanismForm, DEFAULT_SIGMA_RANGE};
use causal_score::{Dag, Scm};

pub fn sine(parents: &[usize], weights: &[f64], amplitude: f64) -> Mechanism {
    Mechanism {
        parents: parents.to_vec(),
        weights: weights.to_vec(),
        amplitude,
        form: MechanismForm::Sine,
    }
}

/// Chain `x1 -> x2 -> x3` with hand-picked coefficients.
pub fn chain3() -> Scm {
    let dag = Dag::new(3, vec![(0, 1), (1, 2)]).unwrap();
    Scm::new(
        dag,
        vec![Mechanism::root(), sine(&[0], &[1.3], 0.8), sine(&[1], &[-0.7], 1.6)],
        vec![0.9, 1.1, 0.6],
        0.0,
    )
    .unwrap()
}

/// Chain `x1 -> ... -> xd` calibrated to margin `cm`.
pub fn chain(d: usize, cm: f64, seed: u64) -> Scm {
    let dag = Dag::new(d, (1..d).map(|i| (i - 1, i)).collect()).unwrap();
    build_scm(dag, cm, DEFAULT_SIGMA_RANGE, &mut stream(seed, Stream::Scm)).unwrap()
}

/// Erdős–Rényi model in the sweep's seeding convention.
pub fn random_scm(d: usize, p: f64, cm: f64, seed: u64) -> Scm {
    let mut rng = stream(seed, Stream::Scm);
    let dag = generate_dag(d, p, &mut rng).unwrap();
    build_scm(dag, cm, DEFAULT_SIGMA_RANGE, &mut rng).unwrap()
}

/// Central difference of `f` along coordinate `k`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[k] += h;
    xm[k] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Relative error with the denominator floored at one, so entries near
/// zero are held to the same absolute tolerance.
pub fn rel_err(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs() / truth.abs().max(1.0)
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// `E[g(Z)]` for `Z ~ N(0, 1)` by quadrature over `[-12, 12]`.
pub fn gaussian_expectation(g: impl Fn(f64) -> f64) -> f64 {
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    simpson(|z| g(z) * phi(z), -12.0, 12.0, 20_000)
}
