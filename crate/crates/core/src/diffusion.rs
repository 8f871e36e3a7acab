//! Time-fractional diffusion
//! `D^a_t phi = C lap phi + phi(x, 0) t^{-a} / Gamma(1 - a)` and its
//! conjugate `D^a_t phi' = -C lap phi' + phi'(x, 0) t^{-a} / Gamma(1 - a)`.
//!
//! Every solution here is built from the Mittag-Leffler eigenmodes
//! `e^{ik.x} E_a(-+ C |k|^2 t^a)`: exactly on periodic boxes (through the
//! FFT of the initial samples), and through Fourier integrals on truncated
//! lines.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{ArrayD, Dimension, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fracops::frac_derivative_pointwise;
use crate::grid::{classical_derivative, fft_axis, Grid, SampledField, Term, Topology};
use crate::mlfunc::{ml_eval, ml_remainder, ml_time_field, z_max, Branch};
use crate::quadrature::gauss_legendre;
use crate::special::rgamma;

/// Initial profile `phi(x, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// `weight * delta(x)`. On periodic boxes this is the discrete delta
    /// `weight / dV` at the node `x = 0`.
    Delta { weight: f64 },
    /// Normalized Gaussian of standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// The plane wave `e^{ik.x}`, one wavenumber per space axis.
    Mode { k: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionProblem {
    pub alpha: f64,
    pub diffusivity: f64,
    pub initial: InitialData,
}

impl DiffusionProblem {
    /// `alpha` must lie in `(0, 1]`; `alpha = 1` is the classical limit.
    pub fn new(alpha: f64, diffusivity: f64, initial: InitialData) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Parameter(format!("diffusion order must lie in (0, 1], got {alpha}")));
        }
        if !(diffusivity.is_finite() && diffusivity > 0.0) {
            return Err(Error::Parameter(format!("diffusivity must be positive, got {diffusivity}")));
        }
        match &initial {
            InitialData::Gaussian { sigma } if !(*sigma > 0.0) => {
                return Err(Error::Parameter("gaussian width must be positive".into()))
            }
            InitialData::Delta { weight } if !weight.is_finite() => {
                return Err(Error::Parameter("delta weight must be finite".into()))
            }
            _ => {}
        }
        Ok(DiffusionProblem { alpha, diffusivity, initial })
    }
}

/// Axis bookkeeping of a `(t, x_1..x_d)` grid.
#[derive(Debug, Clone)]
pub struct Layout {
    pub time: usize,
    pub space: Vec<usize>,
    pub topology: Topology,
}

pub fn layout(grid: &Grid) -> Result<Layout> {
    let frac = grid.fractional_axes();
    if frac.len() != 1 {
        return Err(Error::GridMismatch("diffusion grids need exactly one time axis".into()));
    }
    let space = grid.classical_axes();
    if space.is_empty() || space.len() > 3 {
        return Err(Error::GridMismatch("diffusion grids need 1 to 3 space axes".into()));
    }
    let topology = grid.axes()[space[0]].topology;
    if space.iter().any(|&a| grid.axes()[a].topology != topology) {
        return Err(Error::GridMismatch("all space axes must share one topology".into()));
    }
    Ok(Layout { time: frac[0], space, topology })
}

fn space_dims(grid: &Grid, lay: &Layout) -> Vec<usize> {
    lay.space.iter().map(|&a| grid.axes()[a].nodes).collect()
}

/// Fills a full-grid value array from `f(time index, space index)`.
fn broadcast(grid: &Grid, lay: &Layout, f: impl Fn(usize, &[usize]) -> Complex64) -> ArrayD<Complex64> {
    let mut shape = grid.dims();
    shape.push(1);
    let mut out = ArrayD::zeros(IxDyn(&shape));
    let mut sidx = vec![0usize; lay.space.len()];
    for (idx, v) in out.indexed_iter_mut() {
        for (s, &a) in sidx.iter_mut().zip(&lay.space) {
            *s = idx[a];
        }
        *v = f(idx[lay.time], &sidx);
    }
    out
}

fn check_on_grid(grid: &Grid, lay: &Layout, k: &[f64]) -> Result<()> {
    if k.len() != lay.space.len() {
        return Err(Error::Parameter(format!("{} wavenumbers for {} space axes", k.len(), lay.space.len())));
    }
    if lay.topology == Topology::Periodic {
        for (&ka, &a) in k.iter().zip(&lay.space) {
            let j = ka * grid.axes()[a].extent / (2.0 * PI);
            if (j - j.round()).abs() > 1e-9 * (1.0 + j.abs()) {
                return Err(Error::Parameter(format!("wavenumber {ka} is not on the grid")));
            }
        }
    }
    Ok(())
}

/// The single mode `e^{ik.x} E_a(-+ C |k|^2 t^a)`.
pub fn mode_field(grid: &Grid, alpha: f64, diffusivity: f64, branch: Branch, k: &[f64]) -> Result<SampledField> {
    let lay = layout(grid)?;
    check_on_grid(grid, &lay, k)?;
    let k2: f64 = k.iter().map(|v| v * v).sum();
    let time = ml_time_field(grid, lay.time, alpha, branch.sign() * diffusivity * k2)?;
    let coords: Vec<Vec<f64>> = lay.space.iter().map(|&a| grid.axes()[a].coords()).collect();
    let wave = broadcast(grid, &lay, |_, s| {
        let ph: f64 = s.iter().zip(&coords).zip(k).map(|((&i, c), ka)| ka * c[i]).sum();
        Complex64::from_polar(1.0, ph)
    });
    time.mul(&SampledField::from_values(grid, 1, vec![0.0; grid.ndim()], wave)?)
}

/// Samples of the initial profile on the space axes.
pub fn initial_samples(problem: &DiffusionProblem, grid: &Grid) -> Result<ArrayD<Complex64>> {
    let lay = layout(grid)?;
    let dims = space_dims(grid, &lay);
    let coords: Vec<Vec<f64>> = lay.space.iter().map(|&a| grid.axes()[a].coords()).collect();
    let d = lay.space.len() as i32;
    let out = match &problem.initial {
        InitialData::Mode { k } => {
            check_on_grid(grid, &lay, k)?;
            ArrayD::from_shape_fn(IxDyn(&dims), |idx| {
                let ph: f64 = (0..dims.len()).map(|a| k[a] * coords[a][idx[a]]).sum();
                Complex64::from_polar(1.0, ph)
            })
        }
        InitialData::Gaussian { sigma } => {
            let norm = (sigma * (2.0 * PI).sqrt()).powi(d);
            ArrayD::from_shape_fn(IxDyn(&dims), |idx| {
                let r2: f64 = (0..dims.len()).map(|a| coords[a][idx[a]].powi(2)).sum();
                Complex64::new((-r2 / (2.0 * sigma * sigma)).exp() / norm, 0.0)
            })
        }
        InitialData::Delta { weight } => {
            let mut at = Vec::with_capacity(dims.len());
            let mut dv = 1.0;
            for (a, c) in coords.iter().enumerate() {
                let j = c
                    .iter()
                    .position(|&x| x == 0.0)
                    .ok_or_else(|| Error::GridMismatch(format!("space axis {} has no node at x = 0", lay.space[a])))?;
                at.push(j);
                dv *= grid.axes()[lay.space[a]].step();
            }
            let mut out = ArrayD::zeros(IxDyn(&dims));
            out[IxDyn(&at)] = Complex64::new(weight / dv, 0.0);
            out
        }
    };
    Ok(out)
}

/// Samples of the trigonometric interpolant of a discrete delta of the
/// given weight at `x = 0` on a coarser periodic box with `coarse` nodes
/// per space axis. The interpolant vanishes at the other coarse nodes and
/// its spectrum stops at the coarse Nyquist mode (split evenly between
/// `+-k`), so products of two such fields are resolved on a grid at least
/// twice as fine.
pub fn band_limited_delta(grid: &Grid, coarse: usize, weight: f64) -> Result<ArrayD<Complex64>> {
    let lay = layout(grid)?;
    if lay.topology != Topology::Periodic {
        return Err(Error::GridMismatch("band-limited data need periodic space axes".into()));
    }
    if coarse < 2 || !coarse.is_multiple_of(2) {
        return Err(Error::Parameter(format!("coarse node count {coarse} must be even and at least 2")));
    }
    let dims = space_dims(grid, &lay);
    let profiles: Vec<Vec<f64>> = lay
        .space
        .iter()
        .map(|&a| {
            let spec = &grid.axes()[a];
            let half = (coarse / 2) as i64;
            spec.coords()
                .iter()
                .map(|&x| {
                    let mut v = 0.0;
                    for m in -half..=half {
                        let w = if m.abs() == half { 0.5 } else { 1.0 };
                        v += w * (2.0 * PI * m as f64 * x / spec.extent).cos();
                    }
                    v / spec.extent
                })
                .collect()
        })
        .collect();
    Ok(ArrayD::from_shape_fn(IxDyn(&dims), |idx| {
        let v: f64 = (0..dims.len()).map(|a| profiles[a][idx[a]]).product();
        Complex64::new(weight * v, 0.0)
    }))
}

fn signed_index(j: usize, n: usize) -> f64 {
    if j <= n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    }
}

/// Relative size below which Fourier coefficients count as roundoff.
pub const SPECTRAL_FLOOR: f64 = 1e-14;

/// Exact propagation of the trigonometric interpolant of `phi0` on a
/// periodic box: mode `k` picks up `E_a(-+ C |k|^2 t^a)`.
pub fn spectral_solution(
    grid: &Grid,
    alpha: f64,
    diffusivity: f64,
    branch: Branch,
    phi0: &ArrayD<Complex64>,
) -> Result<SampledField> {
    let lay = layout(grid)?;
    if lay.topology != Topology::Periodic {
        return Err(Error::GridMismatch("spectral propagation needs periodic space axes".into()));
    }
    let dims = space_dims(grid, &lay);
    if phi0.shape() != dims.as_slice() {
        return Err(Error::ShapeMismatch(format!("initial samples {:?}, space grid {:?}", phi0.shape(), dims)));
    }
    let mut hat = forward_fft(phi0);
    // coefficients at roundoff level carry no data but would still be
    // propagated with their (possibly huge) conjugate growth
    let hmax = hat.iter().fold(0.0f64, |m, h| m.max(h.norm()));
    hat.mapv_inplace(|h| if h.norm() <= SPECTRAL_FLOOR * hmax { Complex64::new(0.0, 0.0) } else { h });
    let ntot: usize = dims.iter().product();
    let extents: Vec<f64> = lay.space.iter().map(|&a| grid.axes()[a].extent).collect();
    let omega = ArrayD::from_shape_fn(IxDyn(&dims), |idx| {
        let k2: f64 = (0..dims.len()).map(|a| (2.0 * PI * signed_index(idx[a], dims[a]) / extents[a]).powi(2)).sum();
        branch.sign() * diffusivity * k2
    });
    let t = grid.axes()[lay.time].coords();
    let ta = t[t.len() - 1].powf(alpha);
    let zm = z_max(alpha);
    for (&w, h) in omega.iter().zip(hat.iter()) {
        if h.norm() > 0.0 && w * ta > zm {
            return Err(Error::Overflow { z: w * ta, z_max: zm });
        }
    }
    let m = (2.0 / alpha).ceil() as usize;
    let scale = 1.0 / ntot as f64;
    // per-rate head length and remainder samples
    let mut rates: BTreeMap<u64, (usize, Vec<f64>)> = BTreeMap::new();
    for (&w, h) in omega.iter().zip(hat.iter()) {
        if h.norm() > 0.0 && !rates.contains_key(&w.to_bits()) {
            let mk = head_length(alpha, w * ta, m);
            rates.insert(w.to_bits(), (mk, ml_time_remainders(alpha, w, mk, &t)?));
        }
    }
    let mut terms = Vec::with_capacity(m + 1);
    for n in 0..=m {
        let c = rgamma(alpha * n as f64 + 1.0) * scale;
        let head = ndarray::Zip::from(&hat).and(&omega).map_collect(|h, w| match rates.get(&w.to_bits()) {
            Some(&(mk, _)) if n < mk => h * (c * w.powi(n as i32)),
            _ => Complex64::new(0.0, 0.0),
        });
        let ends_here = rates.values().any(|(mk, _)| *mk == n);
        let mut exps = vec![0.0; grid.ndim()];
        exps[lay.time] = alpha * n as f64;
        if !ends_here {
            if head.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
                continue;
            }
            let p = inverse_fft(&head);
            terms.push(Term { exponents: exps, values: broadcast(grid, &lay, |_, s| p[s]) });
            continue;
        }
        let mut slices = Vec::with_capacity(t.len());
        for i in 0..t.len() {
            let spec =
                ndarray::Zip::from(&hat).and(&omega).and(&head).map_collect(|h, w, hd| match rates.get(&w.to_bits()) {
                    Some((mk, r)) if *mk == n => hd + h * (r[i] * scale),
                    _ => *hd,
                });
            slices.push(inverse_fft(&spec));
        }
        terms.push(Term { exponents: exps, values: broadcast(grid, &lay, |it, s| slices[it][s]) });
    }
    SampledField::from_terms(grid, 1, terms)
}

/// Largest head bound `(|w| T^a)^n / Gamma(a n + 1)` allowed in the power
/// split of one mode; beyond it the head terms would cancel to roundoff.
const HEAD_LIMIT: f64 = 1e4;

/// Number of leading powers `t^{a n}` split off a mode with `z = w T^a`:
/// `m`, or fewer where the head terms would exceed [`HEAD_LIMIT`].
fn head_length(alpha: f64, z: f64, m: usize) -> usize {
    (0..m).find(|&n| z.abs().powi(n as i32) * rgamma(alpha * n as f64 + 1.0) > HEAD_LIMIT).unwrap_or(m)
}

/// Values of the remainder `R(t)` that [`ml_time_field`] stores for rate `w`.
fn ml_time_remainders(alpha: f64, w: f64, m: usize, t: &[f64]) -> Result<Vec<f64>> {
    if w == 0.0 {
        return Ok(vec![0.0; t.len()]);
    }
    t.iter().map(|&ti| ml_remainder(alpha, w, m, ti)).collect()
}

fn forward_fft(a: &ArrayD<Complex64>) -> ArrayD<Complex64> {
    (0..a.ndim()).fold(a.clone(), |acc, ax| fft_axis(&acc, ax, false))
}

fn inverse_fft(a: &ArrayD<Complex64>) -> ArrayD<Complex64> {
    (0..a.ndim()).fold(a.clone(), |acc, ax| fft_axis(&acc, ax, true))
}

/// Radial Fourier kernel constants `(2 pi)^{-d}` times the angular measure.
fn radial_const(d: usize) -> f64 {
    match d {
        1 => 1.0 / PI,
        2 => 1.0 / (2.0 * PI),
        _ => 1.0 / (2.0 * PI * PI),
    }
}

/// `int_0^inf u^{d-1} k_d(u rho) ...` kernels: `cos`, `J0` and `sin(x)/x`.
fn radial_kernel(d: usize, x: f64) -> f64 {
    match d {
        1 => x.cos(),
        2 => puruspe::Jn(0, x),
        _ => {
            if x.abs() < 1e-8 {
                1.0 - x * x / 6.0
            } else {
                x.sin() / x
            }
        }
    }
}

/// Cut-off and panel width of the radial quadratures.
const RADIAL_CUTOFF: f64 = 60.0;
const RADIAL_PANEL: f64 = 0.25;
const TRUNCATION_TOL: f64 = 1e-9;

fn radial_nodes(cutoff: f64, panel: f64) -> (Vec<f64>, Vec<f64>) {
    let rule = gauss_legendre(16);
    let panels = (cutoff / panel).ceil() as usize;
    let w = cutoff / panels as f64;
    let mut nodes = Vec::with_capacity(panels * rule.len());
    let mut weights = Vec::with_capacity(panels * rule.len());
    for p in 0..panels {
        for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
            nodes.push((p as f64 + x) * w);
            weights.push(wx * w);
        }
    }
    (nodes, weights)
}

/// Gauss-Legendre panels on `[0, cutoff]` whose width at `k` is `width(k)`.
fn graded_nodes(cutoff: f64, width: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    let rule = gauss_legendre(16);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut a = 0.0;
    while a < cutoff {
        let b = (a + width(a)).min(cutoff);
        let w = b - a;
        for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
            nodes.push(a + x * w);
            weights.push(wx * w);
        }
        a = b;
    }
    (nodes, weights)
}

/// Similarity profile `F` of the fractional Green's function,
/// `G(r, t) = l^{-d} F(r / l)` with `l = sqrt(C t^a)`, where
/// `F(rho) = (2 pi)^{-d} int e^{iu.rho} E_a(-|u|^2) d^d u`.
///
/// `E_a(-u^2)` decays only like `u^{-2}`, so the two leading terms of its
/// asymptotic series are matched by `A(u) = a1/(1+u^2) + a2/(1+u^2)^2`,
/// whose transforms are elementary, and only `E_a - A = O(u^{-6})` is
/// integrated numerically up to a finite cut-off.
#[derive(Debug, Clone)]
pub struct GreenFunction {
    alpha: f64,
    diffusivity: f64,
    dim: usize,
    a1: f64,
    a2: f64,
    nodes: Vec<f64>,
    /// Quadrature weights times the radial measure and `E_a - A`.
    weights: Vec<f64>,
    cutoff: f64,
    truncation: f64,
    table_step: f64,
    table: Vec<f64>,
}

impl GreenFunction {
    pub fn new(alpha: f64, diffusivity: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Parameter(format!("diffusion order must lie in (0, 1], got {alpha}")));
        }
        if !(diffusivity > 0.0) || !(1..=3).contains(&dim) {
            return Err(Error::Parameter("need positive diffusivity and 1 <= d <= 3".into()));
        }
        // E_a(-x) ~ b1/x + b2/x^2 with b1 = 1/Gamma(1-a), b2 = -1/Gamma(1-2a).
        let b1 = rgamma(1.0 - alpha);
        let b2 = -rgamma(1.0 - 2.0 * alpha);
        let (a1, a2) = (b1, b1 + b2);
        let d = dim;
        let mut cutoff = RADIAL_CUTOFF;
        loop {
            let rem = |u: f64| -> Result<f64> {
                let s = 1.0 / (1.0 + u * u);
                Ok(ml_eval(alpha, -u * u)? - a1 * s - a2 * s * s)
            };
            let tail = rem(cutoff)?.abs() * cutoff.powi(d as i32) / (6 - d) as f64 * radial_const(d);
            if tail <= TRUNCATION_TOL || cutoff >= 16.0 * RADIAL_CUTOFF {
                if tail > TRUNCATION_TOL {
                    return Err(Error::Quadrature(format!(
                        "Green's function tail {tail:e} above {TRUNCATION_TOL:e} at cut-off {cutoff}"
                    )));
                }
                let (nodes, w) = radial_nodes(cutoff, RADIAL_PANEL);
                let weights = nodes
                    .iter()
                    .zip(&w)
                    .map(|(&u, &wu)| Ok(wu * rem(u)? * u.powi(d as i32 - 1) * radial_const(d)))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(GreenFunction {
                    alpha,
                    diffusivity,
                    dim,
                    a1,
                    a2,
                    nodes,
                    weights,
                    cutoff,
                    truncation: tail,
                    table_step: 0.0,
                    table: Vec::new(),
                });
            }
            cutoff *= 2.0;
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Radial cut-off `K_max` of the numerical part, in units of `1 / l`.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Estimated size of the neglected quadrature tail.
    pub fn truncation_estimate(&self) -> f64 {
        self.truncation
    }

    fn tails(&self, rho: f64) -> f64 {
        let (a1, a2) = (self.a1, self.a2);
        let e = (-rho).exp();
        let part = |a: f64, f: &dyn Fn() -> f64| if a == 0.0 { 0.0 } else { a * f() };
        match self.dim {
            1 => part(a1, &|| e / 2.0) + part(a2, &|| (1.0 + rho) * e / 4.0),
            2 => {
                part(a1, &|| puruspe::Kn(0, rho) / (2.0 * PI))
                    + part(a2, &|| if rho == 0.0 { 1.0 / (4.0 * PI) } else { rho * puruspe::Kn(1, rho) / (4.0 * PI) })
            }
            _ => part(a1, &|| e / (4.0 * PI * rho)) + part(a2, &|| e / (8.0 * PI)),
        }
    }

    fn remainder(&self, rho: f64) -> f64 {
        let d = self.dim;
        let terms: Vec<f64> =
            self.nodes.iter().zip(&self.weights).map(|(&u, &w)| w * radial_kernel(d, u * rho)).collect();
        crate::quadrature::pairwise_sum(&terms)
    }

    /// `F(rho)` by direct quadrature. Infinite at `rho = 0` for `d >= 2`
    /// unless `a = 1`.
    pub fn profile(&self, rho: f64) -> f64 {
        self.tails(rho) + self.remainder(rho)
    }

    /// Largest `rho` worth tabulating: `F` has decayed below `1e-17 F(1)`.
    fn profile_extent(&self) -> f64 {
        let f1 = self.profile(1.0).abs();
        let mut rho = 2.0;
        while rho < 80.0 && self.profile(rho).abs() > 1e-17 * f1 {
            rho += 2.0;
        }
        rho
    }

    /// Tabulates the numerical part for fast evaluation on grids.
    pub fn tabulated(mut self) -> Self {
        let step = if self.dim == 2 { 0.02 } else { 0.01 };
        let rho_max = self.profile_extent();
        let n = (rho_max / step).ceil() as usize + 4;
        self.table = (0..n).map(|j| self.remainder(j as f64 * step)).collect();
        self.table_step = step;
        self
    }

    /// `F(rho)`, from the table when one exists (cubic interpolation),
    /// and exactly zero past the tabulated range.
    pub fn profile_fast(&self, rho: f64) -> f64 {
        if self.table.is_empty() {
            return self.profile(rho);
        }
        let h = self.table_step;
        let n = self.table.len();
        let x = rho / h;
        if x >= (n - 4) as f64 {
            return 0.0;
        }
        let j = (x.floor() as usize).saturating_sub(1).min(n - 4);
        let mut v = 0.0;
        for a in 0..4 {
            let mut l = 1.0;
            for b in 0..4 {
                if a != b {
                    l *= (x - (j + b) as f64) / (a as f64 - b as f64);
                }
            }
            v += l * self.table[j + a];
        }
        self.tails(rho) + v
    }

    /// `l(t) = sqrt(C t^a)`.
    pub fn length(&self, t: f64) -> f64 {
        (self.diffusivity * t.powf(self.alpha)).sqrt()
    }

    /// `G(r, t)`.
    pub fn eval(&self, r: f64, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Parameter(format!("Green's function needs t > 0, got {t}")));
        }
        if r == 0.0 && self.dim >= 2 && self.a1 != 0.0 {
            return Err(Error::Precondition("the Green's function is singular at r = 0 for d >= 2".into()));
        }
        let l = self.length(t);
        Ok(self.profile(r.abs() / l) / l.powi(self.dim as i32))
    }
}

/// One-off evaluation of `G_a(r, t)` in `d` dimensions.
pub fn greens_function(alpha: f64, diffusivity: f64, d: usize, r: f64, t: f64) -> Result<f64> {
    GreenFunction::new(alpha, diffusivity, d)?.eval(r, t)
}

fn node_radius(coords: &[Vec<f64>], s: &[usize]) -> f64 {
    s.iter().zip(coords).map(|(&i, c)| c[i] * c[i]).sum::<f64>().sqrt()
}

/// `weight * G(|x|, t)` on a truncated-line grid, stored as
/// `t^{-d a / 2} g(x, t)`.
fn green_field(grid: &Grid, lay: &Layout, alpha: f64, diffusivity: f64, weight: f64) -> Result<SampledField> {
    let d = lay.space.len();
    let green = GreenFunction::new(alpha, diffusivity, d)?.tabulated();
    let coords: Vec<Vec<f64>> = lay.space.iter().map(|&a| grid.axes()[a].coords()).collect();
    if d >= 2 && alpha < 1.0 {
        let dims = space_dims(grid, lay);
        let hit = ndarray::indices(IxDyn(&dims)).into_iter().any(|i| node_radius(&coords, i.slice()) == 0.0);
        if hit {
            return Err(Error::GridMismatch("a node sits on the source; offset the grid by half a cell".into()));
        }
    }
    let t = grid.axes()[lay.time].coords();
    let scale = weight * diffusivity.powf(-(d as f64) / 2.0);
    let inv_l: Vec<f64> = t.iter().map(|&ti| 1.0 / green.length(ti)).collect();
    let values = broadcast(grid, lay, |it, s| {
        Complex64::new(scale * green.profile_fast(node_radius(&coords, s) * inv_l[it]), 0.0)
    });
    let mut exps = vec![0.0; grid.ndim()];
    exps[lay.time] = -(d as f64) * alpha / 2.0;
    SampledField::from_values(grid, 1, exps, values)
}

/// Gaussian data on a truncated line: the radial Fourier integral of
/// `E_a(-C k^2 t^a) e^{-sigma^2 k^2 / 2}` at every node.
fn gaussian_field(grid: &Grid, lay: &Layout, alpha: f64, diffusivity: f64, sigma: f64) -> Result<SampledField> {
    let d = lay.space.len();
    let coords: Vec<Vec<f64>> = lay.space.iter().map(|&a| grid.axes()[a].coords()).collect();
    let dims = space_dims(grid, lay);
    let mut radii: BTreeMap<u64, usize> = BTreeMap::new();
    for i in ndarray::indices(IxDyn(&dims)) {
        let r = node_radius(&coords, i.slice());
        let n = radii.len();
        radii.entry(r.to_bits()).or_insert(n);
    }
    let r_max = radii.keys().map(|&b| f64::from_bits(b)).fold(0.0, f64::max);
    let kmax = 9.5 / sigma;
    // E_a(-C k^2 t^a) turns over at k ~ 1/l(t) and is smooth in log k
    // beyond, so panels grow geometrically past 1/l(T), capped by the
    // oscillation and damping scales
    let t = grid.axes()[lay.time].coords();
    let l_max = (diffusivity * t[t.len() - 1].powf(alpha)).sqrt();
    let cap = (0.5 / sigma).min(8.0 / r_max.max(1e-300));
    let (nodes, w) = graded_nodes(kmax, |k| (0.25 * k).max(0.5 / l_max).min(cap));
    let damp: Vec<f64> = nodes
        .iter()
        .zip(&w)
        .map(|(&u, &wu)| wu * (-0.5 * sigma * sigma * u * u).exp() * u.powi(d as i32 - 1) * radial_const(d))
        .collect();
    let ker: BTreeMap<u64, Vec<f64>> =
        radii.keys().map(|&b| (b, nodes.iter().map(|&u| radial_kernel(d, u * f64::from_bits(b))).collect())).collect();
    let mut per_time: Vec<BTreeMap<u64, f64>> = Vec::with_capacity(t.len());
    for &ti in &t {
        let ta = diffusivity * ti.powf(alpha);
        let spec = nodes
            .iter()
            .zip(&damp)
            .map(|(&u, &dm)| Ok(dm * ml_eval(alpha, -ta * u * u)?))
            .collect::<Result<Vec<f64>>>()?;
        let vals = ker
            .iter()
            .map(|(&b, kv)| {
                let terms: Vec<f64> = spec.iter().zip(kv).map(|(s, k)| s * k).collect();
                (b, crate::quadrature::pairwise_sum(&terms))
            })
            .collect();
        per_time.push(vals);
    }
    let values = broadcast(grid, lay, |it, s| Complex64::new(per_time[it][&node_radius(&coords, s).to_bits()], 0.0));
    SampledField::from_values(grid, 1, vec![0.0; grid.ndim()], values)
}

fn spectral_tail(hat: &ArrayD<Complex64>) -> f64 {
    let dims = hat.shape().to_vec();
    let max = hat.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let mut tail: f64 = 0.0;
    for (idx, v) in hat.indexed_iter() {
        let edge = (0..dims.len()).any(|a| {
            let n = dims[a];
            signed_index(idx[a], n).abs() >= 0.4 * n as f64
        });
        if edge {
            tail = tail.max(v.norm());
        }
    }
    if max == 0.0 {
        0.0
    } else {
        tail / max
    }
}

/// Threshold on the relative spectral tail of smooth initial data.
pub const RESOLUTION_TOL: f64 = 1e-10;

/// Solves the diffusion problem on `grid`.
///
/// * Mode data give the exact Mittag-Leffler mode.
/// * Periodic boxes propagate the FFT of the initial samples exactly; a
///   delta is the discrete delta at `x = 0`, anything else must have a
///   resolved spectrum.
/// * Truncated lines use the Green's function for delta data (carrying
///   the `t^{-d a / 2}` endpoint behaviour as an exponent) and the Fourier
///   integral for Gaussian data.
pub fn solve(problem: &DiffusionProblem, grid: &Grid) -> Result<SampledField> {
    let lay = layout(grid)?;
    let (a, c) = (problem.alpha, problem.diffusivity);
    match (&problem.initial, lay.topology) {
        (InitialData::Mode { k }, _) => mode_field(grid, a, c, Branch::Forward, k),
        (init, Topology::Periodic) => {
            let phi0 = initial_samples(problem, grid)?;
            if !matches!(init, InitialData::Delta { .. }) {
                let tail = spectral_tail(&forward_fft(&phi0));
                if tail > RESOLUTION_TOL {
                    return Err(Error::Unresolved { tail, threshold: RESOLUTION_TOL });
                }
            }
            spectral_solution(grid, a, c, Branch::Forward, &phi0)
        }
        (InitialData::Delta { weight }, _) => green_field(grid, &lay, a, c, *weight),
        (InitialData::Gaussian { sigma }, _) => gaussian_field(grid, &lay, a, c, *sigma),
    }
}

/// Solves the conjugated equation for initial data whose spectrum is
/// confined to `|k| <= band_limit`; the growth `E_a(+C K^2 T^a)` must stay
/// representable.
pub fn solve_conjugate(problem: &DiffusionProblem, grid: &Grid, band_limit: f64) -> Result<SampledField> {
    let lay = layout(grid)?;
    let (a, c) = (problem.alpha, problem.diffusivity);
    let t = grid.axes()[lay.time].coords();
    let z = c * band_limit * band_limit * t[t.len() - 1].powf(a);
    if z > z_max(a) {
        return Err(Error::Overflow { z, z_max: z_max(a) });
    }
    match (&problem.initial, lay.topology) {
        (InitialData::Mode { k }, _) => {
            let kn = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            if kn > band_limit * (1.0 + 1e-12) {
                return Err(Error::Precondition(format!("mode |k| = {kn} exceeds the band limit {band_limit}")));
            }
            mode_field(grid, a, c, Branch::Conjugate, k)
        }
        (_, Topology::Periodic) => {
            let phi0 = initial_samples(problem, grid)?;
            let hat = forward_fft(&phi0);
            let dims = hat.shape().to_vec();
            let extents: Vec<f64> = lay.space.iter().map(|&s| grid.axes()[s].extent).collect();
            let max = hat.iter().fold(0.0f64, |m, v| m.max(v.norm()));
            let mut outside: f64 = 0.0;
            for (idx, v) in hat.indexed_iter() {
                let k2: f64 =
                    (0..dims.len()).map(|ax| (2.0 * PI * signed_index(idx[ax], dims[ax]) / extents[ax]).powi(2)).sum();
                if k2.sqrt() > band_limit * (1.0 + 1e-12) {
                    outside = outside.max(v.norm());
                }
            }
            let tail = if max > 0.0 { outside / max } else { 0.0 };
            if tail > 1e-12 {
                return Err(Error::Unresolved { tail, threshold: 1e-12 });
            }
            spectral_solution(grid, a, c, Branch::Conjugate, &phi0)
        }
        _ => Err(Error::Precondition("band-limited conjugates need a periodic box or mode data".into())),
    }
}

/// `phi0(x) t^{-a} / Gamma(1 - a)` from a field `phi0` constant in time.
pub fn initial_term(phi0: &SampledField, alpha: f64) -> Result<SampledField> {
    let lay = layout(phi0.grid())?;
    let kernel = SampledField::power(phi0.grid(), lay.time, -alpha)?;
    Ok(phi0.mul(&kernel)?.scale_real(rgamma(1.0 - alpha)))
}

/// Residual of the forward (`D^a phi - C lap phi - init`) or conjugated
/// (`D^a phi' + C lap phi' - init`) equation. `phi0` is the initial trace,
/// constant in time.
pub fn equation_residual(
    phi: &SampledField,
    alpha: f64,
    diffusivity: f64,
    branch: Branch,
    phi0: &SampledField,
) -> Result<SampledField> {
    let lay = layout(phi.grid())?;
    let mut lap = SampledField::zeros(phi.grid(), phi.components());
    for &a in &lay.space {
        lap = lap.add(&classical_derivative(phi, a, 2)?)?;
    }
    let dt = frac_derivative_pointwise(phi, alpha, lay.time)?;
    // forward: -C lap; conjugate: +C lap
    let spatial = lap.scale_real(branch.sign() * diffusivity);
    dt.add(&spatial)?.sub(&initial_term(phi0, alpha)?)
}

/// Least-squares slope of `ln v` against `ln t` over the first decade of
/// the samples.
pub fn asymptotic_exponent(t: &[f64], values: &[f64]) -> Result<f64> {
    if t.len() != values.len() {
        return Err(Error::ShapeMismatch("times and values differ in length".into()));
    }
    let t0 = t.iter().cloned().fold(f64::INFINITY, f64::min);
    let pts: Vec<(f64, f64)> = t.iter().zip(values).filter(|(&ti, _)| ti <= 10.0 * t0).map(|(&a, &b)| (a, b)).collect();
    if pts.len() < 8 {
        return Err(Error::Precondition(format!("{} samples in the first decade, need 8", pts.len())));
    }
    if pts.iter().any(|&(_, v)| !(v > 0.0)) {
        return Err(Error::Precondition("the series must be strictly positive".into()));
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), &(t, v)| (a + t.ln(), b + v.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), &(t, v)| {
        let dx = t.ln() - mx;
        (a + dx * (v.ln() - my), b + dx * dx)
    });
    Ok(sxy / sxx)
}
