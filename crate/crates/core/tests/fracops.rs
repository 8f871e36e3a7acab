use std::f64::consts::PI;

use fracflux::fracops::{
    compare, frac_derivative, frac_derivative_pointwise, frac_integral, gl_derivative, identity_residual,
    limit_condition, observed_order, shifted_op, Identity, OpKind,
};
use fracflux::special::rgamma;
use fracflux::{AxisSpec, Error, Grid, Result, SampledField};
use num_complex::Complex64;
use proptest::prelude::*;
use statrs::function::gamma::gamma;

fn time_grid(n: usize) -> Grid {
    Grid::new(vec![AxisSpec::time(1.0, n)]).unwrap()
}

fn at_end(f: &SampledField) -> f64 {
    let v = f.evaluate();
    v[[v.shape()[0] - 1, 0]].re
}

/// `t^p h(t)` with the exponent kept as metadata.
fn weighted(grid: &Grid, p: f64, h: impl Fn(f64) -> f64) -> Result<SampledField> {
    SampledField::from_fn(grid, 1, vec![p], |x, _| Complex64::new(h(x[0]), 0.0))
}

/// `Gamma(p+1) / Gamma(p+1+nu) t^{p+nu}`, the power rule for `D^{-nu} t^p`.
fn power_rule(grid: &Grid, p: f64, nu: f64) -> SampledField {
    SampledField::power(grid, 0, p + nu).unwrap().scale_real(gamma(p + 1.0) * rgamma(p + 1.0 + nu))
}

#[test]
fn integral_examples() {
    let grid = time_grid(64);
    let one = SampledField::constant(&grid, Complex64::new(1.0, 0.0));
    assert!((at_end(&frac_integral(&one, 0.5, 0).unwrap()) - 2.0 / PI.sqrt()).abs() < 1e-12);
    let g2 = Grid::new(vec![AxisSpec::time(2.0, 64)]).unwrap();
    let t = SampledField::power(&g2, 0, 1.0).unwrap();
    assert!((at_end(&frac_integral(&t, 1.0, 0).unwrap()) - 2.0).abs() < 1e-12);
    let twice = frac_integral(&frac_integral(&one, 0.75, 0).unwrap(), 0.25, 0).unwrap();
    assert!(compare(&twice, &SampledField::power(&grid, 0, 1.0).unwrap()).unwrap().max_abs < 1e-12);
}

#[test]
fn derivative_examples() {
    let grid = time_grid(256);
    let root = SampledField::power(&grid, 0, 0.5).unwrap();
    let d = frac_derivative(&root, 0.5, 0).unwrap();
    assert!((at_end(&d) - PI.sqrt() / 2.0).abs() < 1e-8);
    let one = SampledField::constant(&grid, Complex64::new(1.0, 0.0));
    assert!((at_end(&frac_derivative(&one, 0.5, 0).unwrap()) - 1.0 / PI.sqrt()).abs() < 1e-8);
    let t = SampledField::power(&grid, 0, 1.0).unwrap();
    let dd = frac_derivative(&frac_derivative(&t, 0.5, 0).unwrap(), 0.5, 0).unwrap();
    assert!((at_end(&dd) - 1.0).abs() < 1e-8);
}

#[test]
fn derivative_rejects_nondifferintegrable_input() {
    let grid = time_grid(32);
    let f = SampledField::power(&grid, 0, -0.5).unwrap();
    assert!(matches!(frac_derivative(&f, 0.6, 0), Err(Error::NotDifferintegrable { .. })));
    assert!(frac_derivative_pointwise(&f, 0.6, 0).is_ok());
    assert!(matches!(frac_integral(&f, -0.5, 0), Err(Error::InvalidOrder { .. })));
    assert!(matches!(frac_derivative(&f, 2.0, 0), Err(Error::InvalidOrder { .. })));
}

#[test]
fn grunwald_letnikov_examples() {
    let grid = Grid::new(vec![AxisSpec::time(2.0, 400)]).unwrap();
    let t = SampledField::power(&grid, 0, 1.0).unwrap();
    let d = gl_derivative(&t, 1.0, 0).unwrap().evaluate();
    assert!(d.iter().skip(1).all(|v| (v.re - 1.0).abs() < 1e-12));
    let mut errs = Vec::new();
    for n in [256, 512] {
        let grid = time_grid(n);
        let root = SampledField::from_real_fn(&grid, |x| x[0].sqrt()).unwrap();
        errs.push((at_end(&gl_derivative(&root, 0.5, 0).unwrap()) - PI.sqrt() / 2.0).abs());
    }
    assert!(observed_order(errs[0], errs[1]) > 0.9, "{errs:?}");
}

#[test]
fn grunwald_letnikov_agrees_with_riemann_liouville() {
    let mut diffs = Vec::new();
    for n in [128, 256, 512] {
        let grid = time_grid(n);
        let f = SampledField::from_real_fn(&grid, |x| x[0] * (-x[0]).exp()).unwrap();
        let rl = frac_derivative(&f, 0.7, 0).unwrap();
        let gl = gl_derivative(&f, 0.7, 0).unwrap();
        // compare on t >= 1/2 to stay clear of the start-up layer
        let (a, b) = (rl.evaluate(), gl.evaluate());
        let diff = (n / 2..n).map(|i| (a[[i, 0]] - b[[i, 0]]).norm()).fold(0.0, f64::max);
        diffs.push(diff);
    }
    assert!(diffs[2] < diffs[1] && diffs[1] < diffs[0], "{diffs:?}");
    assert!(observed_order(diffs[1], diffs[2]) > 0.9, "{diffs:?}");
}

#[test]
fn shifted_operator_examples() {
    let grid = time_grid(64);
    let one = SampledField::constant(&grid, Complex64::new(1.0, 0.0));
    let s = shifted_op(&one, 0.5, 0, OpKind::Integral).unwrap();
    assert!((at_end(&s) - (2.0 / PI.sqrt() - 1.0)).abs() < 1e-12);
    let z = shifted_op(&one, 0.0, 0, OpKind::Derivative).unwrap();
    assert!(z.max_abs() == 0.0);
}

#[test]
fn limit_condition_examples() {
    let grid = time_grid(256);
    let root = SampledField::power(&grid, 0, 0.5).unwrap();
    assert!(limit_condition(&root, 0.5, 0).unwrap().satisfied);
    // I^{1/2} t^{-1/2} = sqrt(pi): the limit is nonzero
    let inv = SampledField::power(&grid, 0, -0.5).unwrap();
    let check = limit_condition(&inv, 0.5, 0).unwrap();
    assert!(!check.satisfied);
    assert!((check.limit - PI.sqrt()).abs() < 1e-6, "{check:?}");
}

fn exp_weighted(p: f64) -> impl Fn(&Grid) -> Result<SampledField> {
    move |g: &Grid| weighted(g, p, |t| (-t).exp())
}

fn cos_weighted(p: f64) -> impl Fn(&Grid) -> Result<SampledField> {
    move |g: &Grid| weighted(g, p, |t| (2.0 * t).cos())
}

fn power(p: f64) -> impl Fn(&Grid) -> Result<SampledField> {
    move |g: &Grid| SampledField::power(g, 0, p)
}

#[test]
fn composition_rules_hold_exactly_on_powers() {
    let grid = time_grid(64);
    for p in [0.0, 1.0, 0.3] {
        let r = identity_residual(Identity::CompositionInt { nu: 0.5, mu: 0.75 }, &power(p), &power(0.0), &grid, 0)
            .unwrap();
        assert!(r.fine.max_rel < 1e-12, "{p}: {r:?}");
        let r = identity_residual(Identity::CompositionDer { nu: 0.5, mu: 0.25 }, &power(p), &power(0.0), &grid, 0)
            .unwrap();
        assert!(r.fine.max_rel < 1e-8, "{p}: {r:?}");
        assert!(r.violations.is_empty());
    }
}

#[test]
fn composition_rules_converge_on_weighted_families() {
    let grid = time_grid(256);
    for p in [0.0, 1.0, 0.3] {
        let f = exp_weighted(p);
        let r = identity_residual(Identity::CompositionInt { nu: 0.5, mu: 0.75 }, &f, &power(0.0), &grid, 0).unwrap();
        assert!(r.fine.max_rel < 1e-5 && r.order >= 1.5, "{p}: {r:?}");
        // the sup norm settles at the first nodes; the rms error converges
        let r = identity_residual(Identity::CompositionDer { nu: 0.5, mu: 0.25 }, &f, &power(0.0), &grid, 0).unwrap();
        assert!(r.fine.max_rel < 1e-4 && r.order_l2 >= 1.5, "{p}: {r:?}");
    }
}

#[test]
fn derivative_is_left_inverse_of_integral() {
    let grid = time_grid(256);
    for nu in [0.25, 0.5, 1.25] {
        let f = exp_weighted(0.3)(&grid).unwrap();
        let back = frac_derivative(&frac_integral(&f, nu, 0).unwrap(), nu, 0).unwrap();
        let n = compare(&back, &f).unwrap();
        assert!(n.max_rel < 1e-4, "{nu}: {n:?}");
    }
}

#[test]
fn noncommutativity_witness_does_not_converge() {
    // D^{0.5} t^{-1/2} = 0 while D^{1.4} t^{-1/2} does not vanish: the
    // composition condition mu < p + 1 fails, so the residual stays O(1)
    let mut rels = Vec::new();
    for n in [128, 256] {
        let grid = time_grid(n);
        let f = SampledField::power(&grid, 0, -0.5).unwrap();
        let lhs = frac_derivative_pointwise(&frac_derivative_pointwise(&f, 0.5, 0).unwrap(), 0.9, 0).unwrap();
        let rhs = frac_derivative_pointwise(&f, 1.4, 0).unwrap();
        rels.push(compare(&lhs, &rhs).unwrap().max_rel);
    }
    assert!(rels.iter().all(|&r| r > 1e-2), "{rels:?}");
    // the pure power t^{0.2} satisfies the condition and commutes
    let grid = time_grid(128);
    let f = SampledField::power(&grid, 0, 0.2).unwrap();
    let a = frac_derivative_pointwise(&frac_derivative_pointwise(&f, 0.5, 0).unwrap(), 0.9, 0).unwrap();
    let b = frac_derivative_pointwise(&frac_derivative_pointwise(&f, 0.9, 0).unwrap(), 0.5, 0).unwrap();
    assert!(compare(&a, &b).unwrap().max_rel < 1e-8);
}

#[test]
fn integral_leibniz_example_on_constants() {
    // D^{-nu}(1 * 1) = D^{-nu} t = t^{1+nu} / Gamma(2+nu)
    let grid = time_grid(64);
    let r =
        identity_residual(Identity::LeibnizInt { nu: 0.6, gamma: 0.2 }, &power(0.0), &power(0.0), &grid, 0).unwrap();
    assert!(r.fine.max_rel < 1e-12, "{r:?}");
    let one = SampledField::constant(&grid, Complex64::new(1.0, 0.0));
    let lhs = frac_integral(&fracflux::grid::laplace_convolve(&one, &one, &[0]).unwrap(), 0.6, 0).unwrap();
    assert!(compare(&lhs, &power_rule(&grid, 1.0, 0.6)).unwrap().max_rel < 1e-12);
}

#[test]
fn leibniz_rules_converge() {
    let grid = time_grid(256);
    let f = exp_weighted(0.6);
    let g = cos_weighted(0.4);
    let ids = [
        Identity::LeibnizInt { nu: 0.7, gamma: 0.3 },
        Identity::LeibnizDer { nu: 0.5, beta: 1.0 },
        Identity::LeibnizDer { nu: 0.5, beta: 0.0 },
        Identity::LeibnizDer { nu: 0.5, beta: 0.5 },
        Identity::LeibnizSplit { nu: 0.8, gamma: 0.3 },
        Identity::ShiftedLeibniz { nu: 0.4, gamma: 0.1, kind: OpKind::Integral, symmetric: false },
        Identity::ShiftedLeibniz { nu: 0.4, gamma: 0.1, kind: OpKind::Derivative, symmetric: false },
    ];
    for id in ids {
        let r = identity_residual(id, &f, &g, &grid, 0).unwrap();
        assert!(r.violations.is_empty(), "{id:?}: {r:?}");
        assert!(r.order >= 1.5, "{id:?}: {r:?}");
        assert!(r.fine.max_rel < 1e-3, "{id:?}: {r:?}");
    }
}

#[test]
fn one_sided_leibniz_forms_agree() {
    let grid = time_grid(256);
    let f = exp_weighted(0.6)(&grid).unwrap();
    let g = cos_weighted(0.4)(&grid).unwrap();
    let fg = fracflux::grid::laplace_convolve(&f, &g, &[0]).unwrap();
    let left = fracflux::grid::laplace_convolve(&frac_derivative(&f, 0.5, 0).unwrap(), &g, &[0]).unwrap();
    let right = fracflux::grid::laplace_convolve(&f, &frac_derivative(&g, 0.5, 0).unwrap(), &[0]).unwrap();
    let direct = frac_derivative(&fg, 0.5, 0).unwrap();
    let quad = compare(&left, &direct).unwrap().max_rel.max(compare(&right, &direct).unwrap().max_rel);
    let gap = compare(&left, &right).unwrap().max_rel;
    assert!(gap <= 10.0 * quad.max(1e-14), "gap {gap} quad {quad}");
}

#[test]
fn violated_limit_condition_is_reported() {
    let grid = time_grid(64);
    let r =
        identity_residual(Identity::LeibnizDer { nu: 0.5, beta: 1.0 }, &power(-0.5), &power(0.0), &grid, 0).unwrap();
    assert!(!r.violations.is_empty(), "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn power_rule_for_integrals(p in -0.9f64..2.0, nu in 0.05f64..1.9) {
        let grid = time_grid(32);
        let f = SampledField::power(&grid, 0, p).unwrap();
        let n = compare(&frac_integral(&f, nu, 0).unwrap(), &power_rule(&grid, p, nu)).unwrap();
        prop_assert!(n.max_rel < 1e-10);
    }

    #[test]
    fn semigroup_on_powers(p in -0.5f64..1.5, nu in 0.05f64..1.0, mu in 0.05f64..1.0) {
        let grid = time_grid(32);
        let f = SampledField::power(&grid, 0, p).unwrap();
        let a = frac_integral(&frac_integral(&f, mu, 0).unwrap(), nu, 0).unwrap();
        let b = frac_integral(&f, nu + mu, 0).unwrap();
        prop_assert!(compare(&a, &b).unwrap().max_rel < 1e-10);
    }

    #[test]
    fn integral_is_linear(s in -3.0f64..3.0, nu in 0.1f64..1.5) {
        let grid = time_grid(64);
        let f = weighted(&grid, 0.3, |t| (-t).exp()).unwrap();
        let g = weighted(&grid, 0.0, |t| (3.0 * t).sin()).unwrap();
        let lhs = frac_integral(&f.scale_real(s).add(&g).unwrap(), nu, 0).unwrap();
        let rhs = frac_integral(&f, nu, 0).unwrap().scale_real(s).add(&frac_integral(&g, nu, 0).unwrap()).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-12 * (1.0 + lhs.max_abs()));
    }

    #[test]
    fn integral_preserves_positivity(p in -0.9f64..1.0, nu in 0.05f64..1.9) {
        let grid = time_grid(48);
        let f = weighted(&grid, p, |t| 1.0 + t * t).unwrap();
        let v = frac_integral(&f, nu, 0).unwrap().evaluate();
        prop_assert!(v.iter().all(|x| x.re >= 0.0));
    }
}
