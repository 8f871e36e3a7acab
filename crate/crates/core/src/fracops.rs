//! Riemann-Liouville integrals and derivatives on sampled fields.
//!
//! Kernel convention: `Phi_p(t) = t^(p-1) / Gamma(p)` for `p > 0`, so that
//! `D^{-nu} f = Phi_nu * f` and `Phi_p * Phi_q = Phi_{p+q}`. The derivative
//! is `D^nu = (d/dt)^{m+1} D^{-(m+1-nu)}` with `m = floor(nu)`.

use ndarray::Array2;
use num_complex::Complex64;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{
    axis_from_front, axis_to_front, extrapolate_origin, laplace_convolve, time_derivative, AxisRole, Grid,
    LaneAccumulator, SampledField, Term,
};
use crate::quadrature::{gauss_jacobi, gauss_legendre, GaussRule};

/// A real differintegration order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalOrder {
    value: f64,
}

impl FractionalOrder {
    /// Order of an integral, `nu > 0`.
    pub fn integral(nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::InvalidOrder { order: nu, reason: "integral orders must be positive".into() });
        }
        Ok(FractionalOrder { value: nu })
    }

    /// Order of a derivative, `0 <= nu < 2`.
    pub fn derivative(nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu >= 0.0) {
            return Err(Error::InvalidOrder {
                order: nu,
                reason: "derivative orders must be non-negative; use an integral".into(),
            });
        }
        if nu >= 2.0 {
            return Err(Error::InvalidOrder { order: nu, reason: "derivative orders are limited to [0, 2)".into() });
        }
        Ok(FractionalOrder { value: nu })
    }

    pub fn value(self) -> f64 {
        self.value
    }

    /// `m` with `m <= nu < m + 1`.
    pub fn integer_part(self) -> usize {
        self.value.floor() as usize
    }
}

/// Samples of `Phi_p` on fractional axis `axis`: exponent `p - 1`,
/// constant values `1 / Gamma(p)`.
pub fn power_kernel(grid: &Grid, axis: usize, p: f64) -> Result<SampledField> {
    FractionalOrder::integral(p)?;
    Ok(SampledField::power(grid, axis, p - 1.0)?.scale_real(1.0 / gamma(p)))
}

const NEAR_CELLS: usize = 8;
const JACOBI_POINTS: usize = 8;

/// `D^{-nu} f` along `axis` by product integration against the exact
/// kernel `(t - s)^(nu-1) / Gamma(nu)`. Graded meshes are supported.
pub fn frac_integral(f: &SampledField, nu: f64, axis: usize) -> Result<SampledField> {
    let nu = FractionalOrder::integral(nu)?.value();
    let spec = f.grid().require_role(axis, AxisRole::Fractional)?.clone();
    for term in f.terms() {
        let p = term.exponents[axis];
        if p <= -1.0 {
            return Err(Error::NonIntegrable { axis, exponent: p });
        }
    }
    let t = spec.coords();
    let uniform = spec.is_uniform();
    let mut terms = Vec::with_capacity(f.terms().len());
    for term in f.terms() {
        let p = term.exponents[axis];
        let g = axis_to_front(&term.values, axis);
        let r = integrate_term(&g, &t, uniform, p, nu);
        let mut exponents = term.exponents.clone();
        exponents[axis] = p + nu;
        terms.push(Term { exponents, values: axis_from_front(r, axis, term.values.shape()) });
    }
    SampledField::from_terms(f.grid(), f.components(), terms)
}

/// Per-cell samples `s^p G(s)` at the nodes of a rule (or `G(s)` alone).
fn cell_samples(
    g: &Array2<Complex64>,
    g0: &[Complex64],
    tau: &[f64],
    rule: &GaussRule,
    p: f64,
    powered: bool,
    cells: std::ops::Range<usize>,
) -> Vec<Complex64> {
    let lanes = g.ncols();
    let q = rule.len();
    let mut out = Vec::with_capacity(cells.len() * q * lanes);
    for c in cells {
        let (lo, hi) = (tau[c], tau[c + 1]);
        for &y in &rule.nodes {
            let s = lo + (hi - lo) * y;
            let factor = if powered { s.powf(p) } else { 1.0 };
            for l in 0..lanes {
                let a = if c == 0 { g0[l] } else { g[[c - 1, l]] };
                let b = g[[c, l]];
                out.push((a * (1.0 - y) + b * y) * factor);
            }
        }
    }
    out
}

fn integrate_term(g: &Array2<Complex64>, t: &[f64], uniform: bool, p: f64, nu: f64) -> Array2<Complex64> {
    let (n_nodes, lanes) = g.dim();
    let g0 = extrapolate_origin(g, t);
    let mut tau = Vec::with_capacity(n_nodes + 1);
    tau.push(0.0);
    tau.extend_from_slice(t);

    let gl4 = gauss_legendre(4);
    let gl8 = gauss_legendre(8);
    let jac_first = gauss_jacobi(JACOBI_POINTS, 0.0, p);
    let jac_last = gauss_jacobi(JACOBI_POINTS, nu - 1.0, 0.0);
    let jac_one = gauss_jacobi(JACOBI_POINTS, nu - 1.0, p);

    let s4 = cell_samples(g, &g0, &tau, &gl4, p, true, 0..n_nodes);
    let s8 = cell_samples(g, &g0, &tau, &gl8, p, true, 0..n_nodes);
    let s_first = cell_samples(g, &g0, &tau, &jac_first, p, false, 0..1);
    let s_last = cell_samples(g, &g0, &tau, &jac_last, p, true, 0..n_nodes);
    let s_one = cell_samples(g, &g0, &tau, &jac_one, p, false, 0..1);

    // Weighted kernel tables w_q h (t_n - s)^(nu-1) on uniform meshes, stored
    // by decreasing cell distance d so that a run of cells reads them in order.
    let h = tau[1];
    let table = |rule: &GaussRule| -> Vec<f64> {
        let q = rule.len();
        let mut k = vec![0.0; n_nodes * q];
        for d in 1..=n_nodes {
            for (i, &y) in rule.nodes.iter().enumerate() {
                k[(n_nodes - d) * q + i] = rule.weights[i] * h * ((d as f64 - y) * h).powf(nu - 1.0);
            }
        }
        k
    };
    let (k4, k8) = if uniform { (table(&gl4), table(&gl8)) } else { (Vec::new(), Vec::new()) };

    let inv_gamma = 1.0 / gamma(nu);
    let mut out = Array2::zeros((n_nodes, lanes));
    let mut acc = LaneAccumulator::new(lanes);
    let mut row = vec![Complex64::new(0.0, 0.0); lanes];
    for n in 1..=n_nodes {
        let tn = tau[n];
        acc.reset();
        if n == 1 {
            let scale = tn.powf(nu + p);
            for q in 0..JACOBI_POINTS {
                acc.add_scaled(jac_one.weights[q] * scale, &s_one[q * lanes..(q + 1) * lanes]);
            }
        } else {
            let d0 = tau[1];
            let scale = d0.powf(1.0 + p);
            for q in 0..JACOBI_POINTS {
                let k = (tn - d0 * jac_first.nodes[q]).powf(nu - 1.0);
                acc.add_scaled(jac_first.weights[q] * scale * k, &s_first[q * lanes..(q + 1) * lanes]);
            }
            if uniform {
                let a_end = NEAR_CELLS.min(n - 1);
                let c_start = NEAR_CELLS.max(n.saturating_sub(NEAR_CELLS)).min(n - 1);
                let mut run = |c0: usize, c1: usize, q: usize, ktab: &[f64], samples: &[Complex64]| {
                    if c1 > c0 {
                        let k0 = (n_nodes - n + c0) * q;
                        let len = (c1 - c0) * q;
                        acc.add_run_scaled(&ktab[k0..k0 + len], &samples[c0 * q * lanes..(c0 * q + len) * lanes]);
                    }
                };
                run(1, a_end, 8, &k8, &s8);
                run(NEAR_CELLS, c_start, 4, &k4, &s4);
                run(c_start.max(a_end), n - 1, 8, &k8, &s8);
            } else {
                for c in 1..n - 1 {
                    let near = c < NEAR_CELLS || n - 1 - c < NEAR_CELLS;
                    let (rule, samples) = if near { (&gl8, &s8) } else { (&gl4, &s4) };
                    let qn = rule.len();
                    let width = tau[c + 1] - tau[c];
                    for q in 0..qn {
                        let k = (tn - tau[c] - width * rule.nodes[q]).powf(nu - 1.0);
                        let base = (c * qn + q) * lanes;
                        acc.add_scaled(rule.weights[q] * width * k, &samples[base..base + lanes]);
                    }
                }
            }
            let c = n - 1;
            let width = tau[c + 1] - tau[c];
            let scale = width.powf(nu);
            for q in 0..JACOBI_POINTS {
                let base = (c * JACOBI_POINTS + q) * lanes;
                acc.add_scaled(jac_last.weights[q] * scale, &s_last[base..base + lanes]);
            }
        }
        acc.finish(&mut row);
        let norm = inv_gamma / tn.powf(p + nu);
        for l in 0..lanes {
            out[[n - 1, l]] = row[l] * norm;
        }
    }
    out
}

fn check_differintegrable(f: &SampledField, nu: f64, axis: usize) -> Result<()> {
    for term in f.terms() {
        let p = term.exponents[axis];
        if p <= nu - 1.0 {
            return Err(Error::NotDifferintegrable { order: nu, exponent: p, bound: nu - 1.0 });
        }
    }
    Ok(())
}

/// Riemann-Liouville derivative `D^nu f`, `0 <= nu < 2`, for functions in
/// the differintegrable class (every exponent above `nu - 1`).
pub fn frac_derivative(f: &SampledField, nu: f64, axis: usize) -> Result<SampledField> {
    FractionalOrder::derivative(nu)?;
    f.grid().require_role(axis, AxisRole::Fractional)?;
    check_differintegrable(f, nu, axis)?;
    frac_derivative_pointwise(f, nu, axis)
}

/// `D^nu f` requiring only integrability (exponents above -1). The result
/// is the pointwise value of the derivative on `t > 0`; it may carry
/// exponents at or below -1.
pub fn frac_derivative_pointwise(f: &SampledField, nu: f64, axis: usize) -> Result<SampledField> {
    let order = FractionalOrder::derivative(nu)?;
    f.grid().require_role(axis, AxisRole::Fractional)?;
    if nu == 0.0 {
        return Ok(f.clone());
    }
    let m = order.integer_part();
    let inner = frac_integral(f, (m + 1) as f64 - nu, axis)?;
    time_derivative(&inner, axis, m + 1)
}

/// Which of the two shifted operators to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Integral,
    Derivative,
}

/// `D^{-nu} f` for `nu > 0`, identity for `nu == 0`.
fn integral_or_identity(f: &SampledField, nu: f64, axis: usize) -> Result<SampledField> {
    if nu == 0.0 {
        Ok(f.clone())
    } else {
        frac_integral(f, nu, axis)
    }
}

/// Shifted operators `D^{-nu} - 1` and `D^{nu} - 1`.
pub fn shifted_op(f: &SampledField, nu: f64, axis: usize, kind: OpKind) -> Result<SampledField> {
    let d = match kind {
        OpKind::Integral => {
            if nu < 0.0 {
                return Err(Error::InvalidOrder { order: nu, reason: "integral orders must be non-negative".into() });
            }
            integral_or_identity(f, nu, axis)?
        }
        OpKind::Derivative => frac_derivative(f, nu, axis)?,
    };
    d.sub(f)
}

fn shifted_op_pointwise(f: &SampledField, nu: f64, axis: usize, kind: OpKind) -> Result<SampledField> {
    let d = match kind {
        OpKind::Integral => integral_or_identity(f, nu, axis)?,
        OpKind::Derivative => frac_derivative_pointwise(f, nu, axis)?,
    };
    d.sub(f)
}

/// Grunwald-Letnikov derivative on a uniform mesh,
/// `h^{-nu} sum_{j=0}^{n} w_j f(t_{n-j})` with `w_0 = 1`,
/// `w_j = w_{j-1} (1 - (nu + 1) / j)`. First-order accurate away from
/// `t = 0`. Returns plain nodal values (exponent 0).
pub fn gl_derivative(f: &SampledField, nu: f64, axis: usize) -> Result<SampledField> {
    FractionalOrder::derivative(nu)?;
    check_differintegrable(f, nu, axis)?;
    gl_derivative_pointwise(f, nu, axis)
}

/// [`gl_derivative`] requiring only a finite value at `t = 0`.
pub fn gl_derivative_pointwise(f: &SampledField, nu: f64, axis: usize) -> Result<SampledField> {
    FractionalOrder::derivative(nu)?;
    let spec = f.grid().require_role(axis, AxisRole::Fractional)?.clone();
    if !spec.is_uniform() {
        return Err(Error::UnsupportedMesh("Grunwald-Letnikov weights need a uniform mesh".into()));
    }
    let t = spec.coords();
    let h = spec.step();
    let values = f.evaluate();
    let v = axis_to_front(&values, axis);
    let (n_nodes, lanes) = v.dim();
    // f(0) from the term structure
    let mut f0 = vec![Complex64::new(0.0, 0.0); lanes];
    for term in f.terms() {
        let p = term.exponents[axis];
        if p < 0.0 {
            return Err(Error::Precondition(format!(
                "Grunwald-Letnikov needs a finite value at t = 0, found exponent {p}"
            )));
        }
        if p == 0.0 {
            let g = axis_to_front(&term.values, axis);
            for (a, b) in f0.iter_mut().zip(extrapolate_origin(&g, &t)) {
                *a += b;
            }
        }
    }
    let mut w = vec![1.0; n_nodes + 1];
    for j in 1..=n_nodes {
        w[j] = w[j - 1] * (1.0 - (nu + 1.0) / j as f64);
    }
    let scale = h.powf(-nu);
    let mut out = Array2::zeros((n_nodes, lanes));
    let mut acc = LaneAccumulator::new(lanes);
    let mut row = vec![Complex64::new(0.0, 0.0); lanes];
    // nodal rows in reverse order: row n-1-j of v is row N-n+j here
    let mut vrev = Vec::with_capacity(n_nodes * lanes);
    for i in (0..n_nodes).rev() {
        vrev.extend((0..lanes).map(|l| v[[i, l]]));
    }
    for n in 1..=n_nodes {
        acc.reset();
        acc.add_run_scaled(&w[..n], &vrev[(n_nodes - n) * lanes..]);
        acc.add_scaled(w[n], &f0);
        acc.finish(&mut row);
        for l in 0..lanes {
            out[[n - 1, l]] = row[l] * scale;
        }
    }
    let mut exps = vec![0.0; f.grid().ndim()];
    exps[axis] = 0.0;
    SampledField::from_values(f.grid(), f.components(), exps, axis_from_front(out, axis, values.shape()))
}

/// Outcome of the numerical limit-condition proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCheck {
    /// Estimated `max_k |lim_{t->0} f^{(k)} * Phi_{m+1-nu}|`.
    pub limit: f64,
    pub threshold: f64,
    pub satisfied: bool,
}

/// Checks `lim_{t -> 0+} f^{(k)} * Phi_{m+1-nu} = 0` for `k = 0..=m` by
/// extrapolating the smooth factor of each term to `t = 0`: a term
/// `t^q H` contributes 0 if `q > 0`, `|H(0)|` if `q = 0` and is a violation
/// if `q < 0` with `H(0)` above the threshold. The threshold is
/// `1e-6 * max|f|`.
pub fn limit_condition(f: &SampledField, nu: f64, axis: usize) -> Result<LimitCheck> {
    let order = FractionalOrder::derivative(nu)?;
    let spec = f.grid().require_role(axis, AxisRole::Fractional)?.clone();
    let t = spec.coords();
    let threshold = 1e-6 * f.max_abs();
    let m = order.integer_part();
    let kappa = (m + 1) as f64 - nu;
    let mut limit: f64 = 0.0;
    for k in 0..=m {
        let fk = time_derivative(f, axis, k)?;
        if fk.terms().iter().any(|term| term.exponents[axis] <= -1.0) {
            limit = f64::INFINITY;
            continue;
        }
        let conv = frac_integral(&fk, kappa, axis)?;
        let mut sum = 0.0;
        for term in conv.terms() {
            let q = term.exponents[axis];
            let g = axis_to_front(&term.values, axis);
            let h0 = extrapolate_origin(&g, &t).iter().fold(0.0f64, |a, v| a.max(v.norm()));
            if q > 1e-12 {
                continue;
            } else if q >= -1e-12 {
                sum += h0;
            } else if h0 > threshold {
                sum = f64::INFINITY;
            }
        }
        limit = limit.max(sum);
    }
    Ok(LimitCheck { limit, threshold, satisfied: limit <= threshold })
}

/// Error norms of `lhs - rhs` at the grid nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub max_abs: f64,
    /// `max_i |d_i| / max(|r_i|, 1e-3 e_i)` with `e` the envelope of the
    /// reference, so isolated zero crossings do not dominate.
    pub max_rel: f64,
    /// Root-mean-square of `|d_i|`.
    pub l2: f64,
}

/// Pointwise comparison of two fields on the same grid.
pub fn compare(lhs: &SampledField, rhs: &SampledField) -> Result<Norms> {
    let d = lhs.sub(rhs)?.evaluate();
    let r = rhs.evaluate();
    let env = rhs.envelope();
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut sq = Vec::with_capacity(d.len());
    for ((dv, rv), ev) in d.iter().zip(r.iter()).zip(env.iter()) {
        let a = dv.norm();
        max_abs = max_abs.max(a);
        let scale = rv.norm().max(1e-3 * ev);
        max_rel = max_rel.max(if scale > 0.0 { a / scale } else { a });
        sq.push(a * a);
    }
    let l2 = (crate::quadrature::pairwise_sum(&sq) / sq.len() as f64).sqrt();
    Ok(Norms { max_abs, max_rel, l2 })
}

/// Observed order from errors at spacing `h` and `h / 2`.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// The identities of the convolution algebra that can be checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Identity {
    /// `D^{-nu} D^{-mu} f = D^{-(nu+mu)} f`.
    CompositionInt { nu: f64, mu: f64 },
    /// `D^{nu} D^{mu} f = D^{nu+mu} f`.
    CompositionDer { nu: f64, mu: f64 },
    /// `D^{-nu}(f*g) = (D^{-(nu-gamma)} f) * D^{-gamma} g`, `0 <= gamma <= nu`.
    LeibnizInt { nu: f64, gamma: f64 },
    /// `D^nu(f*g) = beta (D^nu f)*g + (1-beta) f*(D^nu g)`; `beta = 1` is the
    /// one-sided rule.
    LeibnizDer { nu: f64, beta: f64 },
    /// `D^nu(f*g) = (D^gamma f) * D^{nu-gamma} g`, `0 < gamma < nu`.
    LeibnizSplit { nu: f64, gamma: f64 },
    /// Leibniz rules of the shifted operators, plain or symmetric form.
    ShiftedLeibniz { nu: f64, gamma: f64, kind: OpKind, symmetric: bool },
}

/// Residual norms at two resolutions plus precondition findings.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub coarse_nodes: usize,
    pub fine_nodes: usize,
    pub coarse: Norms,
    pub fine: Norms,
    /// Order from `max_rel`.
    pub order: f64,
    /// Order from `l2`.
    pub order_l2: f64,
    /// Validity conditions of the identity that the inputs fail.
    pub violations: Vec<String>,
}

/// A field family: builds the same function on any grid.
pub type Family<'a> = &'a dyn Fn(&Grid) -> Result<SampledField>;

fn validate_identity(id: Identity) -> Result<()> {
    let bad = |msg: String| Err(Error::Precondition(msg));
    match id {
        Identity::CompositionInt { nu, mu } => {
            FractionalOrder::integral(nu)?;
            FractionalOrder::integral(mu)?;
        }
        Identity::CompositionDer { nu, mu } => {
            FractionalOrder::derivative(nu)?;
            FractionalOrder::derivative(mu)?;
            FractionalOrder::derivative(nu + mu)?;
        }
        Identity::LeibnizInt { nu, gamma } => {
            FractionalOrder::integral(nu)?;
            if !(0.0..=nu).contains(&gamma) {
                return bad(format!("integral Leibniz rule needs 0 <= gamma <= nu, got gamma = {gamma}"));
            }
        }
        Identity::LeibnizDer { nu, beta } => {
            FractionalOrder::derivative(nu)?;
            if !(0.0..=1.0).contains(&beta) {
                return bad(format!("beta must lie in [0, 1], got {beta}"));
            }
        }
        Identity::LeibnizSplit { nu, gamma } => {
            FractionalOrder::derivative(nu)?;
            if !(gamma > 0.0 && nu - gamma > 0.0) {
                return bad(format!("derivative splitting needs 0 < gamma < nu, got gamma = {gamma}"));
            }
        }
        Identity::ShiftedLeibniz { nu, gamma, kind, .. } => match kind {
            OpKind::Integral => {
                FractionalOrder::integral(nu)?;
                if !(gamma > 0.0 && nu - gamma >= 0.0) {
                    return bad(format!("shifted integral rule needs 0 < gamma <= nu, got gamma = {gamma}"));
                }
            }
            OpKind::Derivative => {
                FractionalOrder::derivative(nu)?;
                if !(gamma > 0.0 && nu - gamma > 0.0) {
                    return bad(format!("shifted derivative rule needs 0 < gamma < nu, got gamma = {gamma}"));
                }
            }
        },
    }
    Ok(())
}

fn note_limit(v: &mut Vec<String>, name: &str, f: &SampledField, nu: f64, axis: usize) -> Result<()> {
    let c = limit_condition(f, nu, axis)?;
    if !c.satisfied {
        v.push(format!("limit condition fails for {name} at order {nu}: |limit| = {:e} > {:e}", c.limit, c.threshold));
    }
    Ok(())
}

/// Evaluates both sides of `id` on one grid.
fn sides(
    id: Identity,
    f: &SampledField,
    g: &SampledField,
    axis: usize,
    violations: &mut Vec<String>,
) -> Result<(SampledField, SampledField)> {
    let conv = |a: &SampledField, b: &SampledField| laplace_convolve(a, b, &[axis]);
    let der = |a: &SampledField, nu: f64| frac_derivative_pointwise(a, nu, axis);
    let int = |a: &SampledField, nu: f64| integral_or_identity(a, nu, axis);
    Ok(match id {
        Identity::CompositionInt { nu, mu } => (int(&int(f, mu)?, nu)?, int(f, nu + mu)?),
        Identity::CompositionDer { nu, mu } => {
            for term in f.terms() {
                let lambda = term.exponents[axis];
                if mu >= lambda + 1.0 {
                    violations.push(format!(
                        "composition of derivatives needs mu < lambda + 1, got mu = {mu}, lambda = {lambda}"
                    ));
                }
            }
            (der(&der(f, mu)?, nu)?, der(f, nu + mu)?)
        }
        Identity::LeibnizInt { nu, gamma } => (int(&conv(f, g)?, nu)?, conv(&int(f, nu - gamma)?, &int(g, gamma)?)?),
        Identity::LeibnizDer { nu, beta } => {
            if beta > 0.0 {
                note_limit(violations, "f", f, nu, axis)?;
            }
            if beta < 1.0 {
                note_limit(violations, "g", g, nu, axis)?;
            }
            let lhs = der(&conv(f, g)?, nu)?;
            let a = conv(&der(f, nu)?, g)?.scale_real(beta);
            let b = conv(f, &der(g, nu)?)?.scale_real(1.0 - beta);
            (lhs, a.add(&b)?)
        }
        Identity::LeibnizSplit { nu, gamma } => {
            note_limit(violations, "f", f, gamma, axis)?;
            note_limit(violations, "g", g, nu - gamma, axis)?;
            (der(&conv(f, g)?, nu)?, conv(&der(f, gamma)?, &der(g, nu - gamma)?)?)
        }
        Identity::ShiftedLeibniz { nu, gamma, kind, symmetric } => {
            let shift = |a: &SampledField, o: f64| shifted_op_pointwise(a, o, axis, kind);
            let zeta = |a: &SampledField, o: f64| match kind {
                OpKind::Integral => int(a, o),
                OpKind::Derivative => der(a, o),
            };
            if kind == OpKind::Derivative {
                note_limit(violations, "f", f, gamma, axis)?;
                note_limit(violations, "g", g, nu - gamma, axis)?;
            }
            let lhs = shift(&conv(f, g)?, nu)?;
            let rhs = match (kind, symmetric) {
                (OpKind::Integral, false) => {
                    conv(&zeta(f, gamma)?, &shift(g, nu - gamma)?)?.add(&conv(&shift(f, gamma)?, g)?)?
                }
                (OpKind::Integral, true) => {
                    conv(f, &shift(g, gamma)?)?.add(&conv(&shift(f, nu - gamma)?, &zeta(g, gamma)?)?)?
                }
                (OpKind::Derivative, false) => {
                    conv(&shift(f, gamma)?, g)?.add(&conv(&zeta(f, gamma)?, &shift(g, nu - gamma)?)?)?
                }
                (OpKind::Derivative, true) => {
                    conv(&shift(f, gamma)?, &zeta(g, nu - gamma)?)?.add(&conv(f, &shift(g, nu - gamma)?)?)?
                }
            };
            (lhs, rhs)
        }
    })
}

/// Evaluates both sides of `id` for the families `f`, `g` on `grid` and on
/// the grid with twice the nodes along `axis`, and reports the residual.
/// Parameter ranges outside the identity's statement are errors;
/// function-class conditions that fail are listed in `violations` and the
/// residual is still computed.
pub fn identity_residual(id: Identity, f: Family, g: Family, grid: &Grid, axis: usize) -> Result<ResidualReport> {
    validate_identity(id)?;
    let spec = grid.require_role(axis, AxisRole::Fractional)?;
    let coarse_nodes = spec.nodes;
    let fine_grid = grid.with_axis_nodes(axis, 2 * coarse_nodes)?;
    let mut violations = Vec::new();
    let (l, r) = sides(id, &f(grid)?, &g(grid)?, axis, &mut violations)?;
    let coarse = compare(&l, &r)?;
    let mut ignored = Vec::new();
    let (l, r) = sides(id, &f(&fine_grid)?, &g(&fine_grid)?, axis, &mut ignored)?;
    let fine = compare(&l, &r)?;
    Ok(ResidualReport {
        coarse_nodes,
        fine_nodes: 2 * coarse_nodes,
        coarse,
        fine,
        order: observed_order(coarse.max_rel, fine.max_rel),
        order_l2: observed_order(coarse.l2, fine.l2),
        violations,
    })
}
