//! Mode residuals, Green's function mass, origin exponent and the classical
//! limit of the time-fractional diffusion equation.

use std::f64::consts::PI;

use fracflux::diffusion::{
    asymptotic_exponent, equation_residual, greens_function, mode_field, solve, DiffusionProblem, GreenFunction,
    InitialData,
};
use fracflux::mlfunc::Branch;
use fracflux::{AxisSpec, Grid, Result, SampledField};
use num_complex::Complex64;

use super::{Case, Gate, Level, Outcome};
use crate::config::ExperimentConfig;

fn mode_grid(nt: usize, d: usize) -> Result<Grid> {
    let mut axes = vec![AxisSpec::time(1.0, nt)];
    axes.extend(std::iter::repeat_n(AxisSpec::periodic(2.0 * PI, 8), d));
    Grid::new(axes)
}

/// Relative residual of the mode solution with wave vector `k`.
fn mode_residual(nt: usize, alpha: f64, c: f64, k: &[f64], branch: Branch) -> Result<(f64, SampledField)> {
    let grid = mode_grid(nt, k.len())?;
    let phi = mode_field(&grid, alpha, c, branch, k)?;
    let phi0 = SampledField::from_fn(&grid, 1, vec![0.0; grid.ndim()], |x, _| {
        Complex64::from_polar(1.0, k.iter().zip(&x[1..]).map(|(k, x)| k * x).sum())
    })?;
    let res = equation_residual(&phi, alpha, c, branch, &phi0)?;
    let scale = phi.max_abs();
    Ok((res.max_abs() / scale, res.scale_real(1.0 / scale)))
}

fn mode_case(cfg: &ExperimentConfig, alpha: f64, k: Vec<f64>, branch: Branch) -> Case {
    let (ns, c) = (cfg.params.nodes.clone(), cfg.params.diffusivity);
    let tag = match branch {
        Branch::Forward => "forward",
        Branch::Conjugate => "conjugate",
    };
    let ks: Vec<String> = k.iter().map(|k| k.to_string()).collect();
    let id = format!("mode-{tag}-d{}-k{}-alpha{alpha}", k.len(), ks.join("_"));
    Case::new(cfg, id, vec![Gate::Max(1e-4), Gate::Decreasing], move || {
        let mut levels = Vec::new();
        let mut last = None;
        for &n in &ns {
            let (r, field) = mode_residual(n, alpha, c, &k, branch)?;
            levels.push(Level::scalar(n, r));
            last = Some(field);
        }
        let out = Outcome::levels(levels);
        Ok(match last {
            Some(f) if k.len() == 1 => out.with_field(f),
            _ => out,
        })
    })
    .alpha(alpha)
}

/// Composite Simpson rule with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Total mass of the self-similar profile; `rho = u^2` removes the origin
/// singularity in two and three dimensions.
fn green_mass(g: &GreenFunction, n: usize) -> f64 {
    let top = 40f64;
    match g.dim() {
        1 => 2.0 * simpson(|r| g.profile(r), 0.0, top, n),
        2 => simpson(|u| if u == 0.0 { 0.0 } else { 4.0 * PI * u.powi(3) * g.profile(u * u) }, 0.0, top.sqrt(), n),
        _ => simpson(|u| if u == 0.0 { 0.0 } else { 8.0 * PI * u.powi(5) * g.profile(u * u) }, 0.0, top.sqrt(), n),
    }
}

fn mass_case(cfg: &ExperimentConfig, alpha: f64, d: usize) -> Case {
    let c = cfg.params.diffusivity;
    Case::new(cfg, format!("green-mass-d{d}-alpha{alpha}"), vec![Gate::Max(1e-6)], move || {
        let g = GreenFunction::new(alpha, c, d)?;
        let levels = [1000, 2000, 4000].map(|n| Level::scalar(n, (green_mass(&g, n) - 1.0).abs())).to_vec();
        Ok(Outcome::levels(levels))
    })
    .alpha(alpha)
}

fn heat_kernel(c: f64, d: usize, r: f64, t: f64) -> f64 {
    (4.0 * PI * c * t).powf(-(d as f64) / 2.0) * (-r * r / (4.0 * c * t)).exp()
}

/// Order one against the classical heat kernel, relative to the peak.
fn heat_case(cfg: &ExperimentConfig, d: usize) -> Case {
    let c = cfg.params.diffusivity;
    Case::new(cfg, format!("heat-kernel-limit-d{d}"), vec![Gate::Max(1e-6)], move || {
        let green = GreenFunction::new(1.0, c, d)?;
        let mut worst: f64 = 0.0;
        for t in [0.05, 0.3, 1.0, 2.5] {
            for r in [0.01, 0.2, 0.5, 1.0, 2.0, 3.0] {
                worst = worst.max((green.eval(r, t)? - heat_kernel(c, d, r, t)).abs() / heat_kernel(c, d, 0.0, t));
            }
        }
        Ok(Outcome::levels(vec![Level::scalar(1, worst)]))
    })
    .alpha(1.0)
}

pub fn diffusion_1d(cfg: &ExperimentConfig) -> Vec<Case> {
    let c = cfg.params.diffusivity;
    let mut cases = Vec::new();
    for &alpha in &cfg.params.alpha {
        for &k in &cfg.params.k {
            cases.push(mode_case(cfg, alpha, vec![k], Branch::Forward));
            cases.push(mode_case(cfg, alpha, vec![k], Branch::Conjugate));
        }
        cases.push(mass_case(cfg, alpha, 1));
        // G(0, t) ~ t^{-a/2}: the residual is |fitted exponent + a/2|
        cases.push(
            Case::new(cfg, format!("origin-exponent-alpha{alpha}"), vec![Gate::Max(0.02)], move || {
                let t: Vec<f64> = (0..40).map(|i| 1e-3 * 2f64.powf(i as f64 / 12.0)).collect();
                let g = t.iter().map(|&ti| greens_function(alpha, c, 1, 0.0, ti)).collect::<Result<Vec<_>>>()?;
                let e = asymptotic_exponent(&t, &g)?;
                let grid = Grid::new(vec![AxisSpec::time(1.0, 64), AxisSpec::line(8.0, 64)])?;
                let p = DiffusionProblem::new(alpha, c, InitialData::Delta { weight: 1.0 })?;
                Ok(Outcome::levels(vec![Level::scalar(t.len(), (e + alpha / 2.0).abs())]).with_field(solve(&p, &grid)?))
            })
            .alpha(alpha),
        );
    }
    cases.push(heat_case(cfg, 1));
    cases
}

pub fn diffusion_dd(cfg: &ExperimentConfig) -> Vec<Case> {
    let d = cfg.params.dim;
    let k: Vec<f64> = (0..d).map(|i| cfg.params.k[i % cfg.params.k.len()]).collect();
    let mut cases = Vec::new();
    for &alpha in &cfg.params.alpha {
        cases.push(mode_case(cfg, alpha, k.clone(), Branch::Forward));
        cases.push(mode_case(cfg, alpha, k.clone(), Branch::Conjugate));
        cases.push(mass_case(cfg, alpha, d));
    }
    cases.push(heat_case(cfg, d));
    cases
}
