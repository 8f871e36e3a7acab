//! Mittag-Leffler accuracy against closed-form identities.

use fracflux::mlfunc::{ml_asymptotic, ml_eval, ml_eval_general, ml_integral, ml_series, switch_points};
use fracflux::Result;

use super::{Case, Gate, Level, Outcome};
use crate::config::ExperimentConfig;

/// Worst error of `err(x)` over `n + 1` equispaced points of `[a, b]`.
fn sweep(a: f64, b: f64, n: usize, err: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        worst = worst.max(err(a + (b - a) * i as f64 / n as f64)?);
    }
    Ok(worst)
}

fn sampled(
    cfg: &ExperimentConfig,
    id: &str,
    alpha: f64,
    range: (f64, f64),
    err: impl Fn(f64) -> Result<f64> + Send + Sync + 'static,
) -> Case {
    let ns = cfg.params.nodes.clone();
    Case::new(cfg, id, vec![Gate::Max(1e-10)], move || {
        let levels =
            ns.iter().map(|&n| Ok(Level::scalar(n, sweep(range.0, range.1, n, &err)?))).collect::<Result<_>>()?;
        Ok(Outcome::levels(levels))
    })
    .alpha(alpha)
}

pub fn ml_accuracy(cfg: &ExperimentConfig) -> Vec<Case> {
    let mut cases =
        vec![
            sampled(cfg, "exp-relative", 1.0, (-30.0, 20.0), |z| Ok((ml_eval(1.0, z)? - z.exp()).abs() / z.exp())),
            sampled(cfg, "exp-series-band", 1.0, (-2.0, 20.0), |z| {
                Ok((ml_eval_general(1.0, z)? - z.exp()).abs() / z.exp())
            }),
            // cos has zeros, so the error is absolute
            sampled(cfg, "cos-absolute", 2.0, (0.0, 20.0), |x| Ok((ml_eval(2.0, -x * x)? - x.cos()).abs())),
            sampled(cfg, "cos-general-absolute", 2.0, (0.0, 20.0), |x| {
                Ok((ml_eval_general(2.0, -x * x)? - x.cos()).abs())
            }),
            sampled(cfg, "erfc-half-relative", 0.5, (0.0, 25.0), |x| {
                let want = (x * x).exp() * libm::erfc(x);
                Ok((ml_eval(0.5, -x)? - want).abs() / want)
            }),
        ];
    for &alpha in &cfg.params.alpha {
        cases.push(
            Case::new(cfg, format!("crossover-alpha{alpha}"), vec![Gate::Max(1e-9)], move || {
                let (z1, z2) = switch_points(alpha);
                let a = ml_series(alpha, z1);
                let b = ml_integral(alpha, z1)?;
                let c = ml_integral(alpha, z2)?;
                let d = ml_asymptotic(alpha, z2);
                let jump = ((a - b).abs() / a.abs().max(1e-300)).max((c - d).abs() / c.abs().max(1e-12));
                Ok(Outcome::levels(vec![Level::scalar(1, jump)]))
            })
            .alpha(alpha),
        );
    }
    cases
}
