//! Currents, their stationarity laws and charges.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fracops::{compare, frac_derivative, frac_derivative_pointwise, frac_integral, limit_condition, Norms};
use crate::grid::{classical_derivative, time_derivative, AxisRole, Grid, SampledField, Term, Topology};
use crate::special::rgamma;

use super::gamma::{apply_left, apply_right, build_gamma, pair, GammaSet};
use super::spec::{Atom, OperatorSpec};

/// Time nodes used by the limit-condition proxy.
const PROXY_NODES: usize = 64;

/// Boundary gate for charges on truncated lines, relative to `max |J_t|`.
pub const TAIL_GATE: f64 = 1e-10;

/// A symmetry generator acting on solutions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Symmetry {
    /// `P_i = ∂_i` on a classical axis.
    Translation(usize),
    /// `M_ij = x_i ∂_j - x_j ∂_i` on two classical axes.
    Rotation(usize, usize),
    /// `D^order` along a fractional axis.
    FractionalTranslation { axis: usize, order: f64 },
}

fn coordinate(grid: &Grid, axis: usize) -> Result<SampledField> {
    grid.axis(axis)?;
    SampledField::from_real_fn(grid, |x| x[axis])
}

/// Applies a symmetry generator to a field.
pub fn apply_symmetry(sym: Symmetry, f: &SampledField) -> Result<SampledField> {
    let grid = f.grid();
    match sym {
        Symmetry::Translation(i) => classical_derivative(f, i, 1),
        Symmetry::Rotation(i, j) => {
            grid.require_role(i, AxisRole::Classical)?;
            grid.require_role(j, AxisRole::Classical)?;
            let a = coordinate(grid, i)?.mul(&classical_derivative(f, j, 1)?)?;
            let b = coordinate(grid, j)?.mul(&classical_derivative(f, i, 1)?)?;
            a.sub(&b)
        }
        Symmetry::FractionalTranslation { axis, order } => {
            require_regular(f, order, axis, "the field")?;
            frac_derivative(f, order, axis)
        }
    }
}

/// The limit-condition proxy on the first nodes of the time axis.
fn require_regular(f: &SampledField, order: f64, axis: usize, what: &str) -> Result<()> {
    let n = f.grid().axis(axis)?.nodes.min(PROXY_NODES);
    let check = limit_condition(&f.head(axis, n)?, order, axis)?;
    if check.satisfied {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "{what} fails the limit condition for D^{order} on axis {axis} (limit {:.3e})",
            check.limit
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurrentKind {
    /// Obeys `Σ D^α J_k + Σ ∂ J_j = 0`.
    Stationary,
    /// Obeys `Σ ∂ J'_l = 0`.
    Conserved,
}

/// Components of a current, one per fractional atom and classical axis.
#[derive(Debug, Clone)]
pub struct Current {
    pub tilde: Vec<(Atom, SampledField)>,
    pub classical: Vec<(usize, SampledField)>,
    pub kind: CurrentKind,
    spec: OperatorSpec,
    phi_prime: SampledField,
    phi: SampledField,
}

impl Current {
    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    /// The fields the current was built from (`φ` after any symmetry).
    pub fn fields(&self) -> (&SampledField, &SampledField) {
        (&self.phi_prime, &self.phi)
    }

    pub fn component(&self, atom: Atom) -> Option<&SampledField> {
        match atom {
            Atom::Partial(a) => self.classical.iter().find(|(b, _)| *b == a).map(|(_, f)| f),
            _ => self.tilde.iter().find(|(b, _)| *b == atom).map(|(_, f)| f),
        }
    }

    /// Initial traces of the stored fields on every fractional axis.
    pub fn initial_traces(&self) -> Result<Vec<InitialTrace>> {
        self.phi.grid().fractional_axes().into_iter().map(|a| InitialTrace::of(a, &self.phi_prime, &self.phi)).collect()
    }
}

/// `J_k = φ' * Γ̃_k φ`, `J_j = φ' * Γ_j φ`, with `φ` replaced by `δφ` if a
/// symmetry is given. Every fractional atom must see `φ'` and `φ` pass the
/// limit-condition proxy.
pub fn assemble_current(
    spec: &OperatorSpec,
    phi_prime: &SampledField,
    phi: &SampledField,
    symmetry: Option<Symmetry>,
) -> Result<Current> {
    let grid = spec.grid()?;
    if *phi.grid() != grid || *phi_prime.grid() != grid {
        return Err(Error::GridMismatch("fields do not live on the spec grid".into()));
    }
    let gamma = build_gamma(spec)?;
    let phi = match symmetry {
        Some(s) => apply_symmetry(s, phi)?,
        None => phi.clone(),
    };
    for (atom, _) in &gamma.tilde {
        if let Atom::Frac { axis, order } = *atom {
            require_regular(phi_prime, order, axis, "φ'")?;
            require_regular(&phi, order, axis, "φ")?;
        }
    }
    build_current(spec, &gamma, phi_prime, &phi)
}

fn build_current(
    spec: &OperatorSpec,
    gamma: &GammaSet,
    phi_prime: &SampledField,
    phi: &SampledField,
) -> Result<Current> {
    let tilde =
        gamma.tilde.iter().map(|(a, form)| Ok((*a, form.evaluate(phi_prime, phi)?))).collect::<Result<Vec<_>>>()?;
    let classical =
        gamma.classical.iter().map(|(j, form)| Ok((*j, form.evaluate(phi_prime, phi)?))).collect::<Result<Vec<_>>>()?;
    Ok(Current {
        tilde,
        classical,
        kind: CurrentKind::Stationary,
        spec: spec.clone(),
        phi_prime: phi_prime.clone(),
        phi: phi.clone(),
    })
}

/// Initial data `φ'(.,0)` and `φ(.,0)` on one fractional axis, as fields
/// constant along that axis.
#[derive(Debug, Clone)]
pub struct InitialTrace {
    pub axis: usize,
    pub phi_prime0: SampledField,
    pub phi0: SampledField,
}

impl InitialTrace {
    pub fn of(axis: usize, phi_prime: &SampledField, phi: &SampledField) -> Result<Self> {
        Ok(InitialTrace { axis, phi_prime0: phi_prime.trace_at_origin(axis)?, phi0: phi.trace_at_origin(axis)? })
    }
}

/// `f0 t^{-a} / Γ(1 - a)` along `axis`.
fn initial_factor(f0: &SampledField, order: f64, axis: usize) -> Result<SampledField> {
    let kernel = SampledField::power(f0.grid(), axis, -order)?;
    Ok(f0.mul(&kernel)?.scale_real(rgamma(1.0 - order)))
}

/// The law residual and the initial-data source it should equal.
#[derive(Debug, Clone)]
pub struct Stationarity {
    pub law: SampledField,
    pub source: Option<SampledField>,
}

impl Stationarity {
    /// `law - source`, or the law alone without initial data.
    pub fn defect(&self) -> Result<SampledField> {
        match &self.source {
            Some(s) => self.law.sub(s),
            None => Ok(self.law.clone()),
        }
    }
}

/// `Σ D^α J_k + Σ ∂_j J_j` (or `Σ ∂ J'_l` for conserved currents) and, if
/// initial traces are given, the source
/// `Σ_k (φ'_0 Φ_k) Λ̃_k * φ + φ' Λ̃_k * (φ_0 Φ_k)` with
/// `Φ_k = t_k^{-α_k} / Γ(1 - α_k)`, which the law equals when the initial
/// data do not vanish.
pub fn stationarity_residual(current: &Current, initial: &[InitialTrace]) -> Result<Stationarity> {
    let grid = current.phi.grid();
    let mut law = SampledField::zeros(grid, 1);
    for (atom, j) in &current.tilde {
        let Atom::Frac { axis, order } = *atom else { unreachable!("tilde atoms are fractional") };
        let d = match current.kind {
            CurrentKind::Stationary => frac_derivative_pointwise(j, order, axis)?,
            CurrentKind::Conserved => time_derivative(j, axis, 1)?,
        };
        law = law.add(&d)?;
    }
    for (axis, j) in &current.classical {
        law = law.add(&classical_derivative(j, *axis, 1)?)?;
    }
    if initial.is_empty() {
        return Ok(Stationarity { law, source: None });
    }
    let ex = current.spec.expanded()?;
    let mut source = SampledField::zeros(grid, 1);
    for (word, c) in &ex.fractional {
        let &[Atom::Frac { axis, order }] = word.as_slice() else {
            return Err(Error::Precondition("initial-data sources need length-1 fractional words".into()));
        };
        if order > 1.0 {
            return Err(Error::Precondition(format!("initial-data source for order {order} > 1")));
        }
        if order == 1.0 {
            // 1 / Γ(0) = 0: classical time derivatives carry no initial term
            continue;
        }
        let tr = initial
            .iter()
            .find(|t| t.axis == axis)
            .ok_or_else(|| Error::Precondition(format!("no initial trace for axis {axis}")))?;
        let a = pair(&initial_factor(&tr.phi_prime0, order, axis)?, c, &current.phi)?;
        let b = pair(&current.phi_prime, c, &initial_factor(&tr.phi0, order, axis)?)?;
        source = source.add(&a)?.add(&b)?;
    }
    Ok(Stationarity { law, source: Some(source) })
}

/// `J'_k = ∂_k^m (J_k *_k Φ_{α_k - m})` in our kernel convention
/// `∂^m I^{m+1-α} J_k`; classical components unchanged.
pub fn to_conserved_current(current: &Current) -> Result<Current> {
    if current.kind == CurrentKind::Conserved {
        return Ok(current.clone());
    }
    let mut out = current.clone();
    for (atom, j) in &mut out.tilde {
        let Atom::Frac { axis, order } = *atom else { unreachable!("tilde atoms are fractional") };
        if order.fract() == 0.0 {
            return Err(Error::InvalidOrder { order, reason: "integer orders belong on classical axes".into() });
        }
        let m = order.floor() as usize;
        let conv = frac_integral(j, (m + 1) as f64 - order, axis)?;
        *j = time_derivative(&conv, axis, m)?;
    }
    out.kind = CurrentKind::Conserved;
    Ok(out)
}

/// Stationary (order `α`) or conserved charge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChargeKind {
    Stationary { order: f64 },
    Conserved,
}

/// `Q(t)` on the time axis alone, keeping the endpoint exponents.
#[derive(Debug, Clone)]
pub struct ChargeSeries {
    pub field: SampledField,
    pub kind: ChargeKind,
}

impl ChargeSeries {
    pub fn times(&self) -> Vec<f64> {
        self.field.grid().axes()[0].coords()
    }

    pub fn values(&self) -> Vec<Complex64> {
        self.field.evaluate().iter().copied().collect()
    }
}

/// The time axis and atom of a current with one fractional axis.
fn time_atom(current: &Current) -> Result<(usize, Atom)> {
    let frac = current.phi.grid().fractional_axes();
    if frac.len() != 1 || current.tilde.len() != 1 {
        return Err(Error::Precondition("charges need one fractional axis with a single order".into()));
    }
    Ok((frac[0], current.tilde[0].0))
}

/// Integral over every classical axis: the rectangle rule, exact for the
/// trigonometric interpolant on periodic axes and the midpoint rule on
/// truncated lines, whose boundary values must pass `gate` relative to
/// the maximum.
fn integrate_space(f: &SampledField, time: usize, gate: Option<f64>) -> Result<SampledField> {
    let grid = f.grid();
    let classical = grid.classical_axes();
    if let Some(g) = gate {
        let v = f.evaluate();
        let max = v.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        for &a in &classical {
            if grid.axes()[a].topology != Topology::TruncatedLine {
                continue;
            }
            let n = grid.axes()[a].nodes;
            let edge = [0, n - 1]
                .iter()
                .map(|&i| v.index_axis(ndarray::Axis(a), i).iter().fold(0.0f64, |m, z| m.max(z.norm())))
                .fold(0.0f64, f64::max);
            if edge > g * max.max(f64::MIN_POSITIVE) {
                return Err(Error::Unresolved { tail: edge / max, threshold: g });
            }
        }
    }
    let tgrid = Grid::new(vec![grid.axes()[time].clone()])?;
    let w: f64 = classical.iter().map(|&a| grid.axes()[a].step()).product();
    let last = grid.ndim();
    let terms = f
        .terms()
        .iter()
        .map(|t| {
            let mut v = t.values.clone();
            // sum the classical axes, highest index first so indices stay valid
            for &a in classical.iter().rev() {
                v = v.sum_axis(ndarray::Axis(a));
            }
            let keep: Vec<usize> = (0..last).filter(|a| !classical.contains(a)).collect();
            debug_assert_eq!(keep, vec![time]);
            Term { exponents: vec![t.exponents[time]], values: v.mapv(|z| z * w) }
        })
        .collect();
    SampledField::from_terms(&tgrid, f.components(), terms)
}

/// `Q(t) = ∫ J_t dx` over all classical axes.
pub fn charge(current: &Current) -> Result<ChargeSeries> {
    let (time, atom) = time_atom(current)?;
    if current.phi.grid().ndim() != current.phi.grid().classical_axes().len() + 1 {
        return Err(Error::Precondition("charges integrate over classical axes only".into()));
    }
    let jt = current.component(atom).expect("time component");
    let kind = match (current.kind, atom) {
        (CurrentKind::Conserved, _) => ChargeKind::Conserved,
        (CurrentKind::Stationary, Atom::Frac { order, .. }) => ChargeKind::Stationary { order },
        _ => unreachable!("tilde atoms are fractional"),
    };
    Ok(ChargeSeries { field: integrate_space(jt, time, Some(TAIL_GATE))?, kind })
}

/// Right-hand side of `D^α Q = -[J_x]_{boundary} + ∫ source dx`. The
/// boundary term vanishes on periodic axes; on truncated lines it uses the
/// outermost nodes.
pub fn charge_rhs(current: &Current, initial: &[InitialTrace]) -> Result<SampledField> {
    let (time, _) = time_atom(current)?;
    let st = stationarity_residual(current, initial)?;
    let grid = current.phi.grid();
    let mut rhs = match &st.source {
        Some(s) => integrate_space(s, time, None)?,
        None => SampledField::zeros(&Grid::new(vec![grid.axes()[time].clone()])?, 1),
    };
    for (axis, j) in &current.classical {
        let spec = &grid.axes()[*axis];
        if spec.topology == Topology::Periodic {
            continue;
        }
        let n = spec.nodes;
        let terms = j
            .terms()
            .iter()
            .map(|t| {
                let diff =
                    &t.values.index_axis(ndarray::Axis(*axis), n - 1) - &t.values.index_axis(ndarray::Axis(*axis), 0);
                let spread = diff.insert_axis(ndarray::Axis(*axis)).broadcast(t.values.raw_dim()).unwrap().to_owned();
                Term { exponents: t.exponents.clone(), values: spread.mapv(|z| z / spec.extent) }
            })
            .collect();
        let flux = SampledField::from_terms(grid, 1, terms)?;
        rhs = rhs.sub(&integrate_space(&flux, time, None)?)?;
    }
    Ok(rhs)
}

/// Norms of `D^α Q - rhs` and of `dQ'/dt - D^α Q`.
#[derive(Debug, Clone)]
pub struct ChargeCheck {
    pub d_alpha_q: SampledField,
    pub stationarity: Norms,
    pub conservation: Option<Norms>,
}

pub fn charge_identity_check(
    q: &ChargeSeries,
    rhs: &SampledField,
    q_conserved: Option<&ChargeSeries>,
) -> Result<ChargeCheck> {
    let ChargeKind::Stationary { order } = q.kind else {
        return Err(Error::Precondition("the identity check needs the stationary charge".into()));
    };
    let d = frac_derivative_pointwise(&q.field, order, 0)?;
    let stationarity = compare(&d, rhs)?;
    let conservation = match q_conserved {
        Some(qc) => {
            if qc.kind != ChargeKind::Conserved {
                return Err(Error::Precondition("second series must be the conserved charge".into()));
            }
            Some(compare(&time_derivative(&qc.field, 0, 1)?, &d)?)
        }
        None => None,
    };
    Ok(ChargeCheck { d_alpha_q: d, stationarity, conservation })
}

/// Residual of `Σ ∂_j(f Γ_j g) + Σ D_k(f * Γ̃_k g) = f * Λ g - f Λ(-←) * g`.
#[derive(Debug, Clone)]
pub struct TelescopeReport {
    pub residual: SampledField,
    pub max_abs: f64,
    /// Largest magnitude among the right-hand side pieces.
    pub scale: f64,
}

impl TelescopeReport {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.max_abs / self.scale
        } else {
            self.max_abs
        }
    }
}

pub fn telescope_residual(spec: &OperatorSpec, f: &SampledField, g: &SampledField) -> Result<TelescopeReport> {
    let grid = spec.grid()?;
    if *f.grid() != grid || *g.grid() != grid {
        return Err(Error::GridMismatch("fields do not live on the spec grid".into()));
    }
    let gamma = build_gamma(spec)?;
    let ex = spec.expanded()?;
    let mut lhs = SampledField::zeros(&grid, 1);
    for (atom, form) in &gamma.tilde {
        let Atom::Frac { axis, order } = *atom else { unreachable!("tilde atoms are fractional") };
        for t in form.terms() {
            require_regular(&apply_left(f, &t.left)?, order, axis, "f")?;
            require_regular(&apply_right(g, &t.right)?, order, axis, "g")?;
        }
        lhs = lhs.add(&frac_derivative_pointwise(&form.evaluate(f, g)?, order, axis)?)?;
    }
    for (axis, form) in &gamma.classical {
        lhs = lhs.add(&classical_derivative(&form.evaluate(f, g)?, *axis, 1)?)?;
    }
    let mut rhs = SampledField::zeros(&grid, 1);
    let mut scale: f64 = 0.0;
    for (word, c) in ex.fractional.iter().chain(&ex.classical) {
        let right = pair(f, c, &apply_right(g, word)?)?;
        let sign = if word.len() % 2 == 0 { 1.0 } else { -1.0 };
        let left = pair(&apply_left(f, word)?, &c.scaled(sign), g)?;
        scale = scale.max(right.max_abs()).max(left.max_abs());
        rhs = rhs.add(&right.sub(&left)?)?;
    }
    let residual = lhs.sub(&rhs)?;
    Ok(TelescopeReport { max_abs: residual.max_abs(), residual, scale })
}
