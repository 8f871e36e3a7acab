//! Operator correctness, composition and Leibniz rules on the time axis.

use fracflux::fracops::{
    compare, frac_derivative, frac_derivative_pointwise, frac_integral, gl_derivative_pointwise, identity_residual,
    Identity, OpKind,
};
use fracflux::grid::laplace_convolve;
use fracflux::special::gamma_ratio;
use fracflux::{AxisSpec, Grid, Result, SampledField};
use num_complex::Complex64;

use super::{level_of, Case, Gate, Level, Outcome};
use crate::config::ExperimentConfig;

const POWERS: [f64; 4] = [0.0, 1.0, 0.3, 0.5];

fn time_grid(n: usize) -> Result<Grid> {
    Grid::new(vec![AxisSpec::time(1.0, n)])
}

/// `t^p e^{-t}` with the power kept as exponent metadata.
fn exp_weighted(grid: &Grid, p: f64) -> Result<SampledField> {
    SampledField::from_fn(grid, 1, vec![p], |x, _| Complex64::new((-x[0]).exp(), 0.0))
}

fn cos_weighted(grid: &Grid, p: f64) -> Result<SampledField> {
    SampledField::from_fn(grid, 1, vec![p], |x, _| Complex64::new((2.0 * x[0]).cos(), 0.0))
}

/// `D^{-nu} t^p = Gamma(p+1)/Gamma(p+1+nu) t^{p+nu}`; `s = -nu` gives the
/// derivative of order `nu`.
fn power_rule(grid: &Grid, p: f64, s: f64) -> Result<SampledField> {
    Ok(SampledField::power(grid, 0, p + s)?.scale_real(gamma_ratio(p + 1.0, p + 1.0 + s)))
}

/// The power rule applied termwise to the Taylor series of `t^p e^{-t}`.
fn weighted_exact(p: f64, s: f64, t: f64) -> f64 {
    let mut sum = 0.0;
    let mut fact = 1.0;
    for k in 0..80 {
        let kf = k as f64;
        if k > 0 {
            fact *= kf;
        }
        let term = gamma_ratio(p + kf + 1.0, p + kf + 1.0 + s) / fact * t.powf(p + kf + s);
        sum += if k % 2 == 0 { term } else { -term };
    }
    sum
}

/// Relative error at the end point `t = T`: the Grunwald-Letnikov scheme is
/// first order pointwise at fixed `t > 0`, while near `t = 0` it carries a
/// start-up layer that converges more slowly.
fn end_point(n: usize, got: &SampledField, want: &SampledField) -> Level {
    let (a, b) = (got.evaluate(), want.evaluate());
    let e = (a[[n - 1, 0]] - b[[n - 1, 0]]).norm() / b[[n - 1, 0]].norm();
    Level::scalar(n, e)
}

/// Rounding level of `D^nu = D^{m+1} D^{-(m+1-nu)}` on `n` nodes of `[0, 1]`:
/// the `(m+1)`-th difference stencil amplifies unit rounding by `h^{-(m+1)}`.
/// A factor 10 leaves room for the quadrature noise it differentiates.
fn stencil_floor(n: usize, nu: f64) -> f64 {
    10.0 * f64::EPSILON * (n as f64).powi(nu.floor() as i32 + 1)
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

pub fn verify_ops(cfg: &ExperimentConfig) -> Vec<Case> {
    let nodes = cfg.params.nodes.clone();
    let mut cases = Vec::new();
    for &nu in &cfg.params.alpha {
        for p in POWERS {
            for (kind, s) in [("integral", nu), ("derivative", -nu)] {
                let ns = nodes.clone();
                cases.push(
                    Case::new(
                        cfg,
                        format!("{kind}-power-p{}-nu{}", fmt(p), fmt(nu)),
                        vec![Gate::Max(1e-4)],
                        move || {
                            let mut levels = Vec::new();
                            for &n in &ns {
                                let grid = time_grid(n)?;
                                let f = SampledField::power(&grid, 0, p)?;
                                let got = if s > 0.0 {
                                    frac_integral(&f, nu, 0)?
                                } else {
                                    frac_derivative_pointwise(&f, nu, 0)?
                                };
                                levels.push(level_of(n, &got, &power_rule(&grid, p, s)?)?);
                            }
                            Ok(Outcome::levels(levels))
                        },
                    )
                    .alpha(nu),
                );
                // pure powers are exact; convergence shows on t^p e^{-t}
                let ns = nodes.clone();
                let dump = kind == "derivative";
                cases.push(
                    Case::new(
                        cfg,
                        format!("{kind}-weighted-p{}-nu{}", fmt(p), fmt(nu)),
                        vec![Gate::Max(1e-4), Gate::Order(1.5)],
                        move || {
                            let mut levels = Vec::new();
                            let mut last = None;
                            for &n in &ns {
                                let grid = time_grid(n)?;
                                let f = exp_weighted(&grid, p)?;
                                let got = if s > 0.0 {
                                    frac_integral(&f, nu, 0)?
                                } else {
                                    frac_derivative_pointwise(&f, nu, 0)?
                                };
                                let want = SampledField::from_real_fn(&grid, |x| weighted_exact(p, s, x[0]))?;
                                let floor = if s > 0.0 { 0.0 } else { stencil_floor(n, nu) };
                                levels.push(level_of(n, &got, &want)?.with_floor(floor));
                                last = Some(got);
                            }
                            let out = Outcome::levels(levels);
                            Ok(match last {
                                Some(f) if dump => out.with_field(f),
                                _ => out,
                            })
                        },
                    )
                    .alpha(nu)
                    .l2_order(),
                );
            }
            let ns = nodes.clone();
            cases.push(
                Case::new(cfg, format!("gl-weighted-p{}-nu{}", fmt(p), fmt(nu)), vec![Gate::Order(1.0)], move || {
                    let mut levels = Vec::new();
                    for &n in &ns {
                        let grid = time_grid(n)?;
                        let got = gl_derivative_pointwise(&exp_weighted(&grid, p)?, nu, 0)?;
                        let want = SampledField::from_real_fn(&grid, |x| weighted_exact(p, -nu, x[0]))?;
                        levels.push(end_point(n, &got, &want));
                    }
                    Ok(Outcome::levels(levels))
                })
                .alpha(nu),
            );
        }
    }
    // D^{-nu} D^{-mu} f = D^{-(nu+mu)} f
    let alphas = cfg.params.alpha.clone();
    for (i, &nu) in alphas.iter().enumerate() {
        for &mu in &alphas[i..] {
            for p in POWERS {
                let ns = nodes.clone();
                cases.push(
                    Case::new(
                        cfg,
                        format!("composition-int-p{}-nu{}-mu{}", fmt(p), fmt(nu), fmt(mu)),
                        vec![Gate::Max(1e-5)],
                        move || {
                            let mut levels = Vec::new();
                            for &n in &ns {
                                let grid = time_grid(n)?;
                                let f = exp_weighted(&grid, p)?;
                                let lhs = frac_integral(&frac_integral(&f, mu, 0)?, nu, 0)?;
                                levels.push(level_of(n, &lhs, &frac_integral(&f, nu + mu, 0)?)?);
                            }
                            Ok(Outcome::levels(levels))
                        },
                    )
                    .alpha(nu)
                    .split(mu),
                );
            }
        }
    }
    // D^{0.9} D^{0.5} t^{-1/2} = 0 while D^{1.4} t^{-1/2} does not vanish
    let ns = nodes.clone();
    cases.push(
        Case::new(cfg, "composition-der-witness", vec![Gate::Floor(1e-2)], move || {
            let mut levels = Vec::new();
            for &n in &ns {
                let grid = time_grid(n)?;
                let f = SampledField::power(&grid, 0, -0.5)?;
                let lhs = frac_derivative_pointwise(&frac_derivative_pointwise(&f, 0.5, 0)?, 0.9, 0)?;
                levels.push(level_of(n, &lhs, &frac_derivative_pointwise(&f, 1.4, 0)?)?);
            }
            Ok(Outcome::levels(levels))
        })
        .alpha(0.9)
        .split(0.5),
    );
    cases
}

fn identity_case(cfg: &ExperimentConfig, id: Identity, case_id: String, split: f64, nu: f64) -> Case {
    let ns = cfg.params.nodes.clone();
    Case::new(cfg, case_id, vec![Gate::Max(1e-3), Gate::Order(1.5)], move || {
        let f = |g: &Grid| exp_weighted(g, 0.6);
        let g = |g: &Grid| cos_weighted(g, 0.4);
        let mut levels = Vec::new();
        for &n in &ns {
            let r = identity_residual(id, &f, &g, &time_grid(n)?, 0)?;
            if !r.violations.is_empty() {
                return Err(fracflux::Error::Precondition(r.violations.join("; ")));
            }
            levels.push(Level::new(n, r.coarse.max_rel, r.coarse.l2));
        }
        Ok(Outcome::levels(levels))
    })
    .alpha(nu)
    .split(split)
}

pub fn verify_leibniz(cfg: &ExperimentConfig) -> Vec<Case> {
    let mut cases = Vec::new();
    for &nu in &cfg.params.alpha {
        let gamma = 0.4 * nu;
        let id = |s: &str| format!("{s}-nu{}", fmt(nu));
        cases.push(identity_case(cfg, Identity::LeibnizInt { nu, gamma }, id("leibniz-int"), gamma, nu));
        cases.push(identity_case(cfg, Identity::LeibnizSplit { nu, gamma }, id("leibniz-split"), gamma, nu));
        for beta in [0.0, 0.5, 1.0] {
            cases.push(identity_case(
                cfg,
                Identity::LeibnizDer { nu, beta },
                format!("leibniz-der-beta{}-nu{}", fmt(beta), fmt(nu)),
                beta,
                nu,
            ));
        }
        for (kind, name) in [(OpKind::Integral, "shifted-int"), (OpKind::Derivative, "shifted-der")] {
            let g = 0.25 * nu;
            let id = Identity::ShiftedLeibniz { nu, gamma: g, kind, symmetric: false };
            cases.push(identity_case(cfg, id, format!("leibniz-{name}-nu{}", fmt(nu)), g, nu));
        }
        // the one-sided rules beta = 0 and beta = 1 agree within 10x their
        // quadrature error; the residual is the ratio gap / quadrature error
        let ns = cfg.params.nodes.clone();
        cases.push(
            Case::new(cfg, format!("leibniz-beta-agreement-nu{}", fmt(nu)), vec![Gate::Max(10.0)], move || {
                let mut levels = Vec::new();
                for &n in &ns {
                    let grid = time_grid(n)?;
                    let (f, g) = (exp_weighted(&grid, 0.6)?, cos_weighted(&grid, 0.4)?);
                    let direct = frac_derivative(&laplace_convolve(&f, &g, &[0])?, nu, 0)?;
                    let left = laplace_convolve(&frac_derivative(&f, nu, 0)?, &g, &[0])?;
                    let right = laplace_convolve(&f, &frac_derivative(&g, nu, 0)?, &[0])?;
                    let quad = compare(&left, &direct)?.max_rel.max(compare(&right, &direct)?.max_rel).max(1e-14);
                    let gap = compare(&left, &right)?;
                    levels.push(Level::new(n, gap.max_rel / quad, gap.l2));
                }
                Ok(Outcome::levels(levels))
            })
            .alpha(nu),
        );
    }
    // f = g = 1: D^{-nu}(1*1) = D^{-nu} t is exact
    let ns = cfg.params.nodes.clone();
    cases.push(
        Case::new(cfg, "leibniz-int-constants-nu0.75", vec![Gate::Max(1e-12)], move || {
            let one = |g: &Grid| SampledField::power(g, 0, 0.0);
            let mut levels = Vec::new();
            for &n in &ns {
                let r =
                    identity_residual(Identity::LeibnizInt { nu: 0.75, gamma: 0.25 }, &one, &one, &time_grid(n)?, 0)?;
                levels.push(Level::new(n, r.coarse.max_rel, r.coarse.l2));
            }
            Ok(Outcome::levels(levels))
        })
        .alpha(0.75)
        .split(0.25),
    );
    cases
}
