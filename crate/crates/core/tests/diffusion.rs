use std::f64::consts::PI;

use fracflux::diffusion::{
    asymptotic_exponent, band_limited_delta, equation_residual, greens_function, mode_field, solve, solve_conjugate,
    DiffusionProblem, GreenFunction, InitialData,
};
use fracflux::fracops::{limit_condition, observed_order};
use fracflux::mlfunc::Branch;
use fracflux::special::rgamma;
use fracflux::{AxisSpec, Error, Grid, SampledField};
use num_complex::Complex64;
use proptest::prelude::*;

fn heat_kernel(c: f64, d: usize, r: f64, t: f64) -> f64 {
    (4.0 * PI * c * t).powf(-(d as f64) / 2.0) * (-r * r / (4.0 * c * t)).exp()
}

/// `M_nu(z) = sum (-z)^n / (n! Gamma(1 - nu - nu n))`, the one-dimensional
/// profile: `F(rho) = M_{a/2}(rho) / 2`.
fn m_wright(nu: f64, z: f64) -> f64 {
    let mut sum = 0.0;
    let mut zn = 1.0;
    for n in 0..200 {
        sum += zn * rgamma(1.0 - nu - nu * n as f64);
        zn *= -z / (n as f64 + 1.0);
    }
    sum
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn mode_grid(nt: usize) -> Grid {
    Grid::new(vec![AxisSpec::time(1.0, nt), AxisSpec::periodic(2.0 * PI, 8)]).unwrap()
}

/// `e^{ikx}` replicated along `t`.
fn wave(grid: &Grid, k: f64) -> SampledField {
    SampledField::from_fn(grid, 1, vec![0.0; grid.ndim()], |x, _| Complex64::from_polar(1.0, k * x[1])).unwrap()
}

#[test]
fn heat_kernel_spot_value() {
    let g = greens_function(1.0, 1.0, 1, 0.0, 1.0).unwrap();
    assert!((g - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-9, "{g}");
}

#[test]
fn classical_limit_is_the_heat_kernel() {
    for d in 1..=3 {
        let green = GreenFunction::new(1.0, 0.7, d).unwrap();
        for t in [0.05, 0.3, 1.0, 2.5] {
            let peak = heat_kernel(0.7, d, 0.0, t);
            for r in [0.01, 0.2, 0.5, 1.0, 2.0, 3.0] {
                let g = green.eval(r, t).unwrap();
                assert!((g - heat_kernel(0.7, d, r, t)).abs() <= 1e-6 * peak, "d={d} r={r} t={t}");
            }
        }
    }
}

#[test]
fn one_dimensional_profile_matches_the_m_wright_series() {
    for alpha in [0.3, 0.5, 0.8] {
        let green = GreenFunction::new(alpha, 1.0, 1).unwrap();
        for rho in [0.0, 0.25, 0.5, 1.0, 2.0, 3.0] {
            let want = m_wright(alpha / 2.0, rho) / 2.0;
            assert!((green.profile(rho) - want).abs() < 1e-8, "a={alpha} rho={rho}");
        }
    }
}

#[test]
fn green_mass_is_one() {
    for alpha in [0.3, 0.5, 0.8, 1.0] {
        // d = 1: 2 int_0^inf F
        let g1 = GreenFunction::new(alpha, 1.0, 1).unwrap();
        let m1 = 2.0 * simpson(|r| g1.profile(r), 0.0, 40.0, 4000);
        // d = 2: int 2 pi rho F, rho = u^2 removes the logarithm
        let g2 = GreenFunction::new(alpha, 1.0, 2).unwrap();
        let m2 =
            simpson(|u| if u == 0.0 { 0.0 } else { 4.0 * PI * u.powi(3) * g2.profile(u * u) }, 0.0, 40f64.sqrt(), 4000);
        // d = 3: int 4 pi rho^2 F, with F ~ 1/rho at the origin
        let g3 = GreenFunction::new(alpha, 1.0, 3).unwrap();
        let m3 =
            simpson(|u| if u == 0.0 { 0.0 } else { 8.0 * PI * u.powi(5) * g3.profile(u * u) }, 0.0, 40f64.sqrt(), 4000);
        for (d, m) in [(1, m1), (2, m2), (3, m3)] {
            assert!((m - 1.0).abs() <= 1e-6, "alpha={alpha} d={d} mass={m}");
        }
    }
}

#[test]
fn green_is_self_similar() {
    let green = GreenFunction::new(0.6, 1.3, 1).unwrap();
    for t in [0.01, 0.1, 1.0] {
        let l = green.length(t);
        for rho in [0.0, 0.7, 2.0] {
            let g = green.eval(rho * l, t).unwrap();
            assert!((g * l - green.profile(rho)).abs() < 1e-13);
        }
    }
    assert!(green.truncation_estimate() <= 1e-9);
}

#[test]
fn green_errors() {
    assert!(greens_function(0.5, 1.0, 1, 0.3, 0.0).is_err());
    assert!(matches!(greens_function(0.5, 1.0, 2, 0.0, 1.0), Err(Error::Precondition(_))));
    assert!(GreenFunction::new(0.5, 1.0, 4).is_err());
    assert!(GreenFunction::new(1.5, 1.0, 1).is_err());
}

#[test]
fn origin_exponent_from_the_green_function() {
    for alpha in [0.3, 0.5, 0.8, 1.0] {
        let t: Vec<f64> = (0..40).map(|i| 1e-3 * 2f64.powf(i as f64 / 12.0)).collect();
        let g: Vec<f64> = t.iter().map(|&ti| greens_function(alpha, 1.0, 1, 0.0, ti).unwrap()).collect();
        let e = asymptotic_exponent(&t, &g).unwrap();
        assert!((e + alpha / 2.0).abs() <= 0.02, "{alpha}: {e}");
    }
}

#[test]
fn origin_exponent_from_narrow_gaussian_data() {
    // independent path: Fourier integral of the Gaussian-smoothed spectrum
    for alpha in [0.3, 0.5, 0.8] {
        let grid = Grid::new(vec![AxisSpec::time(1.0, 64), AxisSpec::line(0.02, 3)]).unwrap();
        let p = DiffusionProblem::new(alpha, 1.0, InitialData::Gaussian { sigma: 1e-4 }).unwrap();
        let f = solve(&p, &grid).unwrap().evaluate();
        let t = grid.coords(0).unwrap();
        let v: Vec<f64> = (0..64).map(|i| f[[i, 1, 0]].re).collect();
        let e = asymptotic_exponent(&t, &v).unwrap();
        assert!((e + alpha / 2.0).abs() <= 0.02, "{alpha}: {e}");
    }
}

#[test]
fn asymptotic_exponent_examples() {
    let t: Vec<f64> = (1..=16).map(|i| i as f64 * 0.01).collect();
    assert!(asymptotic_exponent(&t, &[3.0; 16]).unwrap().abs() < 1e-12);
    let heat: Vec<f64> = t.iter().map(|&ti| heat_kernel(1.0, 1, 0.0, ti)).collect();
    assert!((asymptotic_exponent(&t, &heat).unwrap() + 0.5).abs() < 1e-12);
    assert!(asymptotic_exponent(&t[..5], &heat[..5]).is_err());
    let mut bad = heat.clone();
    bad[2] = 0.0;
    assert!(asymptotic_exponent(&t, &bad).is_err());
}

#[test]
fn delta_solution_on_a_line() {
    let alpha = 0.5;
    let grid = Grid::new(vec![AxisSpec::time(1.0, 16), AxisSpec::line(8.0, 33)]).unwrap();
    let p = DiffusionProblem::new(alpha, 1.0, InitialData::Delta { weight: 2.0 }).unwrap();
    let f = solve(&p, &grid).unwrap();
    assert_eq!(f.singularity_exponent(0), Some(-alpha / 2.0));
    let v = f.evaluate();
    let (t, x) = (grid.coords(0).unwrap(), grid.coords(1).unwrap());
    for (i, j) in [(0, 16), (7, 20), (15, 30)] {
        let want = 2.0 * greens_function(alpha, 1.0, 1, x[j].abs(), t[i]).unwrap();
        assert!((v[[i, j, 0]].re - want).abs() <= 1e-8 * want.max(1.0), "{i} {j}");
    }
}

#[test]
fn heat_flow_widens_a_gaussian() {
    let (sigma, c) = (0.3, 0.5);
    let grid = Grid::new(vec![AxisSpec::time(1.0, 8), AxisSpec::line(12.0, 61)]).unwrap();
    let p = DiffusionProblem::new(1.0, c, InitialData::Gaussian { sigma }).unwrap();
    let v = solve(&p, &grid).unwrap().evaluate();
    let (t, x) = (grid.coords(0).unwrap(), grid.coords(1).unwrap());
    for (i, &ti) in t.iter().enumerate() {
        let s2 = sigma * sigma + 2.0 * c * ti;
        for (j, &xj) in x.iter().enumerate() {
            let want = (-xj * xj / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt();
            assert!((v[[i, j, 0]].re - want).abs() < 1e-6, "t={ti} x={xj}");
        }
    }
}

#[test]
fn periodic_and_line_gaussians_agree() {
    // line(L (N+1)/N, N+1) shares the nodes of periodic(L, N)
    let (l, n, sigma) = (16.0, 64, 0.8);
    for alpha in [0.4, 0.9] {
        let per = Grid::new(vec![AxisSpec::time(0.5, 8), AxisSpec::periodic(l, n)]).unwrap();
        let line =
            Grid::new(vec![AxisSpec::time(0.5, 8), AxisSpec::line(l * (n + 1) as f64 / n as f64, n + 1)]).unwrap();
        let p = DiffusionProblem::new(alpha, 0.2, InitialData::Gaussian { sigma }).unwrap();
        let a = solve(&p, &per).unwrap().evaluate();
        let b = solve(&p, &line).unwrap().evaluate();
        let mut worst: f64 = 0.0;
        for i in 0..8 {
            for j in 0..n {
                worst = worst.max((a[[i, j, 0]] - b[[i, j, 0]]).norm());
            }
        }
        assert!(worst <= 1e-6, "{alpha}: {worst}");
    }
}

#[test]
fn periodic_delta_conserves_mass() {
    let grid = Grid::new(vec![AxisSpec::time(2.0, 16), AxisSpec::periodic(10.0, 64)]).unwrap();
    let p = DiffusionProblem::new(0.5, 1.0, InitialData::Delta { weight: 1.5 }).unwrap();
    let v = solve(&p, &grid).unwrap().evaluate();
    let h = 10.0 / 64.0;
    for i in 0..16 {
        let m: f64 = (0..64).map(|j| v[[i, j, 0]].re).sum::<f64>() * h;
        assert!((m - 1.5).abs() < 1e-6, "{i}: {m}");
    }
}

#[test]
fn mode_data_reproduce_the_mode_field() {
    let grid = mode_grid(32);
    let p = DiffusionProblem::new(0.5, 0.5, InitialData::Mode { k: vec![2.0] }).unwrap();
    let a = solve(&p, &grid).unwrap();
    let b = mode_field(&grid, 0.5, 0.5, Branch::Forward, &[2.0]).unwrap();
    assert!(a.sub(&b).unwrap().max_abs() <= 1e-10);
    let bad = DiffusionProblem::new(0.5, 0.5, InitialData::Mode { k: vec![0.5] }).unwrap();
    assert!(solve(&bad, &grid).is_err());
}

fn mode_residual(alpha: f64, nt: usize, branch: Branch) -> f64 {
    let grid = mode_grid(nt);
    let phi = mode_field(&grid, alpha, 0.5, branch, &[1.0]).unwrap();
    let res = equation_residual(&phi, alpha, 0.5, branch, &wave(&grid, 1.0)).unwrap();
    res.max_abs() / phi.max_abs()
}

#[test]
fn forward_mode_residual_converges() {
    for alpha in [0.3, 0.5, 0.8] {
        let coarse = mode_residual(alpha, 1024, Branch::Forward);
        let fine = mode_residual(alpha, 2048, Branch::Forward);
        assert!(fine <= 1e-4 && fine < coarse, "{alpha}: {coarse} {fine}");
    }
}

#[test]
fn conjugate_mode_residual_converges() {
    for alpha in [0.3, 0.5, 0.8] {
        let coarse = mode_residual(alpha, 1024, Branch::Conjugate);
        let fine = mode_residual(alpha, 2048, Branch::Conjugate);
        assert!(fine <= 1e-4 && fine < coarse, "{alpha}: {coarse} {fine}");
    }
}

#[test]
fn conjugate_examples() {
    let grid = mode_grid(16);
    let zero = DiffusionProblem::new(0.5, 0.5, InitialData::Mode { k: vec![0.0] }).unwrap();
    let f = solve_conjugate(&zero, &grid, 1.0).unwrap().evaluate();
    assert!(f.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    let one = DiffusionProblem::new(1.0, 1.0, InitialData::Mode { k: vec![2.0] }).unwrap();
    let f = solve_conjugate(&one, &grid, 2.0).unwrap().evaluate();
    let (t, x) = (grid.coords(0).unwrap(), grid.coords(1).unwrap());
    for (i, &ti) in t.iter().enumerate() {
        for (j, &xj) in x.iter().enumerate() {
            let want = Complex64::from_polar((4.0 * ti).exp(), 2.0 * xj);
            assert!((f[[i, j, 0]] - want).norm() <= 1e-12 * want.norm());
        }
    }
    assert!(matches!(solve_conjugate(&one, &grid, 1.0), Err(Error::Precondition(_))));
    let wide = Grid::new(vec![AxisSpec::time(1e3, 8), AxisSpec::periodic(2.0 * PI, 8)]).unwrap();
    assert!(matches!(solve_conjugate(&one, &wide, 2.0), Err(Error::Overflow { .. })));
}

#[test]
fn problem_validation() {
    assert!(DiffusionProblem::new(0.0, 1.0, InitialData::Delta { weight: 1.0 }).is_err());
    assert!(DiffusionProblem::new(1.2, 1.0, InitialData::Delta { weight: 1.0 }).is_err());
    assert!(DiffusionProblem::new(0.5, -1.0, InitialData::Delta { weight: 1.0 }).is_err());
    assert!(DiffusionProblem::new(0.5, 1.0, InitialData::Gaussian { sigma: 0.0 }).is_err());
    // a Gaussian narrower than the mesh is not resolved on a periodic box
    let grid = Grid::new(vec![AxisSpec::time(1.0, 4), AxisSpec::periodic(10.0, 16)]).unwrap();
    let p = DiffusionProblem::new(0.5, 1.0, InitialData::Gaussian { sigma: 0.1 }).unwrap();
    assert!(matches!(solve(&p, &grid), Err(Error::Unresolved { .. })));
}

#[test]
fn limit_condition_window_for_delta_solutions() {
    // phi' ~ t^{-a/2} near the origin: I^{1-a} phi' -> 0 iff a < 2/3
    for (alpha, expect) in [(0.3, true), (0.5, true), (0.8, false)] {
        let grid = Grid::new(vec![AxisSpec::time(1.0, 256), AxisSpec::line(8.0, 16)]).unwrap();
        let p = DiffusionProblem::new(alpha, 1.0, InitialData::Delta { weight: 1.0 }).unwrap();
        let phi = solve(&p, &grid).unwrap();
        let check = limit_condition(&phi, alpha, 0).unwrap();
        assert_eq!(check.satisfied, expect, "{alpha}: {check:?}");
    }
}

#[test]
fn band_limited_delta_vanishes_at_coarse_nodes() {
    let (l, coarse) = (8.0 * PI, 16);
    let grid = Grid::new(vec![AxisSpec::time(1.0, 4), AxisSpec::periodic(l, 3 * coarse)]).unwrap();
    let d = band_limited_delta(&grid, coarse, 1.0).unwrap();
    let h = l / coarse as f64;
    for j in 0..3 * coarse {
        let v = d[[j]].re;
        if j % 3 == 0 && j != 3 * coarse / 2 {
            assert!(v.abs() < 1e-14, "{j}: {v}");
        }
    }
    // weight 1/h at the source and unit mass
    assert!((d[[3 * coarse / 2]].re - 1.0 / h).abs() < 1e-12);
    let mass: f64 = d.iter().map(|v| v.re).sum::<f64>() * l / (3 * coarse) as f64;
    assert!((mass - 1.0).abs() < 1e-12);
    assert!(band_limited_delta(&grid, 7, 1.0).is_err());
}

#[test]
fn order_of_the_mode_residual() {
    let (a, b) = (mode_residual(0.5, 256, Branch::Forward), mode_residual(0.5, 512, Branch::Forward));
    assert!(observed_order(a, b) > 1.0, "{a} {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn green_profile_is_positive_and_decreasing(alpha in 0.2f64..1.0, rho in 0.0f64..6.0, dr in 0.01f64..1.0) {
        let g = GreenFunction::new(alpha, 1.0, 1).unwrap();
        let (a, b) = (g.profile(rho), g.profile(rho + dr));
        prop_assert!(a > 0.0 && b > 0.0 && b < a);
    }

    #[test]
    fn delta_mass_is_conserved_on_any_box(alpha in 0.2f64..1.0, c in 0.1f64..2.0, n in 8usize..40) {
        let grid = Grid::new(vec![AxisSpec::time(1.0, 4), AxisSpec::periodic(6.0, 2 * n)]).unwrap();
        let p = DiffusionProblem::new(alpha, c, InitialData::Delta { weight: 1.0 }).unwrap();
        let v = solve(&p, &grid).unwrap().evaluate();
        let h = 6.0 / (2 * n) as f64;
        for i in 0..4 {
            let m: f64 = (0..2 * n).map(|j| v[[i, j, 0]].re).sum::<f64>() * h;
            prop_assert!((m - 1.0).abs() < 1e-10);
        }
    }
}
