//! Tensor-product grids, sampled fields and the Laplace-convolution algebra.
//!
//! A [`SampledField`] stores a finite sum of terms `t^p * g`, one exponent
//! per axis and term. Classical axes always carry exponent 0. Fractional axes
//! start at `h > 0`, so the point `t = 0` is never sampled and endpoint
//! power laws live in the exponents rather than in the values.

use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{
    extrapolate_to_zero, fornberg_weights, gauss_jacobi, gauss_legendre, stencil_start, GaussRule,
};
use crate::special::gamma_ratio;

/// Whether an axis carries Riemann-Liouville or ordinary derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisRole {
    Fractional,
    Classical,
}

impl AxisRole {
    pub fn name(self) -> &'static str {
        match self {
            AxisRole::Fractional => "fractional",
            AxisRole::Classical => "classical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Halfline,
    Periodic,
    TruncatedLine,
}

fn unit_grading() -> f64 {
    1.0
}

fn is_unit_grading(r: &f64) -> bool {
    *r == 1.0
}

/// One axis of a tensor-product grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub role: AxisRole,
    pub extent: f64,
    pub nodes: usize,
    pub topology: Topology,
    /// Grading exponent `r` of fractional axes, `t_i = T (i/N)^r`.
    #[serde(default = "unit_grading", skip_serializing_if = "is_unit_grading")]
    pub grading: f64,
}

impl AxisSpec {
    /// Uniform fractional axis on `(0, extent]`.
    pub fn time(extent: f64, nodes: usize) -> Self {
        Self::graded_time(extent, nodes, 1.0)
    }

    pub fn graded_time(extent: f64, nodes: usize, grading: f64) -> Self {
        AxisSpec { role: AxisRole::Fractional, extent, nodes, topology: Topology::Halfline, grading }
    }

    /// Periodic classical axis on `[-L/2, L/2)`.
    pub fn periodic(extent: f64, nodes: usize) -> Self {
        AxisSpec { role: AxisRole::Classical, extent, nodes, topology: Topology::Periodic, grading: 1.0 }
    }

    /// Truncated line on `(-L/2, L/2)` with cell-centred nodes, so `x = 0`
    /// is a node only if `nodes` is odd.
    pub fn line(extent: f64, nodes: usize) -> Self {
        AxisSpec { role: AxisRole::Classical, extent, nodes, topology: Topology::TruncatedLine, grading: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(Error::InvalidAxis(format!("extent must be positive, got {}", self.extent)));
        }
        match self.role {
            AxisRole::Fractional => {
                if self.topology != Topology::Halfline {
                    return Err(Error::InvalidAxis("fractional axes must be half-lines".into()));
                }
                if self.nodes < 4 {
                    return Err(Error::InvalidAxis("fractional axes need at least 4 nodes".into()));
                }
                if !(self.grading.is_finite() && self.grading >= 1.0) {
                    return Err(Error::InvalidAxis(format!("grading exponent must be >= 1, got {}", self.grading)));
                }
            }
            AxisRole::Classical => {
                if self.topology == Topology::Halfline {
                    return Err(Error::InvalidAxis("classical axes must be periodic or truncated lines".into()));
                }
                if self.nodes < 2 {
                    return Err(Error::InvalidAxis("classical axes need at least 2 nodes".into()));
                }
                if self.grading != 1.0 {
                    return Err(Error::InvalidAxis("only fractional axes may be graded".into()));
                }
            }
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        self.grading == 1.0
    }

    /// Nominal spacing `extent / nodes`.
    pub fn step(&self) -> f64 {
        self.extent / self.nodes as f64
    }

    pub fn coords(&self) -> Vec<f64> {
        let n = self.nodes as f64;
        let l = self.extent;
        (0..self.nodes)
            .map(|i| {
                let i = i as f64;
                match self.topology {
                    Topology::Halfline if self.grading == 1.0 => l * (i + 1.0) / n,
                    Topology::Halfline => l * ((i + 1.0) / n).powf(self.grading),
                    Topology::Periodic => -0.5 * l + i * l / n,
                    Topology::TruncatedLine => -0.5 * l + (i + 0.5) * l / n,
                }
            })
            .collect()
    }

    /// The same axis with a different node count.
    pub fn with_nodes(&self, nodes: usize) -> Self {
        AxisSpec { nodes, ..self.clone() }
    }
}

/// An ordered list of axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<AxisSpec>,
}

impl Grid {
    pub fn new(axes: Vec<AxisSpec>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidAxis("a grid needs at least one axis".into()));
        }
        for a in &axes {
            a.validate()?;
        }
        Ok(Grid { axes })
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, i: usize) -> Result<&AxisSpec> {
        self.axes.get(i).ok_or(Error::AxisOutOfRange(i))
    }

    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.nodes).collect()
    }

    pub fn coords(&self, i: usize) -> Result<Vec<f64>> {
        Ok(self.axis(i)?.coords())
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fractional_axes(&self) -> Vec<usize> {
        (0..self.ndim()).filter(|&i| self.axes[i].role == AxisRole::Fractional).collect()
    }

    pub fn classical_axes(&self) -> Vec<usize> {
        (0..self.ndim()).filter(|&i| self.axes[i].role == AxisRole::Classical).collect()
    }

    /// Every axis with twice the nodes.
    pub fn refined(&self) -> Self {
        Grid { axes: self.axes.iter().map(|a| a.with_nodes(2 * a.nodes)).collect() }
    }

    pub fn with_axis_nodes(&self, i: usize, nodes: usize) -> Result<Self> {
        let mut axes = self.axes.clone();
        axes.get_mut(i).ok_or(Error::AxisOutOfRange(i))?.nodes = nodes;
        Grid::new(axes)
    }

    pub fn require_role(&self, i: usize, role: AxisRole) -> Result<&AxisSpec> {
        let a = self.axis(i)?;
        if a.role != role {
            return Err(Error::AxisRole { axis: i, expected: role.name(), found: a.role.name() });
        }
        Ok(a)
    }

    /// Calls `f` with the coordinates of every node in row-major order.
    pub fn for_each_point(&self, mut f: impl FnMut(&[f64])) {
        let coords: Vec<Vec<f64>> = self.axes.iter().map(|a| a.coords()).collect();
        let dims = self.dims();
        let mut idx = vec![0usize; dims.len()];
        let mut x: Vec<f64> = coords.iter().map(|c| c[0]).collect();
        for _ in 0..self.len() {
            f(&x);
            for d in (0..dims.len()).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    x[d] = coords[d][idx[d]];
                    break;
                }
                idx[d] = 0;
                x[d] = coords[d][0];
            }
        }
    }
}

/// One term `prod_a t_a^{exponents[a]} * values` of a sampled field.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub exponents: Vec<f64>,
    pub values: ArrayD<Complex64>,
}

/// A vector-valued function sampled on a grid, stored as a sum of terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    grid: Grid,
    components: usize,
    terms: Vec<Term>,
}

fn value_shape(grid: &Grid, components: usize) -> Vec<usize> {
    let mut s = grid.dims();
    s.push(components);
    s
}

fn exp_key_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o != std::cmp::Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Total order on terms: exponents first, then value bit patterns.
fn term_cmp(a: &Term, b: &Term) -> std::cmp::Ordering {
    exp_key_cmp(&a.exponents, &b.exponents).then_with(|| {
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
            if o != std::cmp::Ordering::Equal {
                return o;
            }
        }
        std::cmp::Ordering::Equal
    })
}

impl SampledField {
    pub fn zeros(grid: &Grid, components: usize) -> Self {
        assert!(components >= 1, "a field needs at least one component");
        SampledField { grid: grid.clone(), components, terms: Vec::new() }
    }

    /// A single-term field `t^exponents * values`.
    pub fn from_values(grid: &Grid, components: usize, exponents: Vec<f64>, values: ArrayD<Complex64>) -> Result<Self> {
        let mut f = SampledField::zeros(grid, components);
        f.push_term(Term { exponents, values })?;
        Ok(f)
    }

    /// Samples `g(x, component)` and attaches the given exponents.
    pub fn from_fn(
        grid: &Grid,
        components: usize,
        exponents: Vec<f64>,
        g: impl Fn(&[f64], usize) -> Complex64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len() * components);
        grid.for_each_point(|x| {
            for c in 0..components {
                data.push(g(x, c));
            }
        });
        let values =
            ArrayD::from_shape_vec(IxDyn(&value_shape(grid, components)), data).expect("shape matches sample count");
        SampledField::from_values(grid, components, exponents, values)
    }

    /// Scalar real field with no endpoint exponents.
    pub fn from_real_fn(grid: &Grid, g: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let zeros = vec![0.0; grid.ndim()];
        SampledField::from_fn(grid, 1, zeros, |x, _| Complex64::new(g(x), 0.0))
    }

    pub fn constant(grid: &Grid, c: Complex64) -> Self {
        let values = ArrayD::from_elem(IxDyn(&value_shape(grid, 1)), c);
        SampledField::from_values(grid, 1, vec![0.0; grid.ndim()], values).expect("constant field is well formed")
    }

    /// Scalar `t^p` along fractional axis `axis`.
    pub fn power(grid: &Grid, axis: usize, p: f64) -> Result<Self> {
        grid.require_role(axis, AxisRole::Fractional)?;
        let mut exps = vec![0.0; grid.ndim()];
        exps[axis] = p;
        let values = ArrayD::from_elem(IxDyn(&value_shape(grid, 1)), Complex64::new(1.0, 0.0));
        SampledField::from_values(grid, 1, exps, values)
    }

    fn push_term(&mut self, term: Term) -> Result<()> {
        if term.exponents.len() != self.grid.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "{} exponents for a {}-axis grid",
                term.exponents.len(),
                self.grid.ndim()
            )));
        }
        let shape = value_shape(&self.grid, self.components);
        if term.values.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch(format!("values shape {:?}, expected {:?}", term.values.shape(), shape)));
        }
        for (a, &p) in term.exponents.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("exponent on axis {a}")));
            }
            if p != 0.0 && self.grid.axes[a].role == AxisRole::Classical {
                return Err(Error::AxisRole { axis: a, expected: "fractional", found: "classical" });
            }
        }
        if term.values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite("field construction".into()));
        }
        self.terms.push(term);
        Ok(())
    }

    /// Builds a field from raw terms, merging equal exponents canonically.
    pub fn from_terms(grid: &Grid, components: usize, terms: Vec<Term>) -> Result<Self> {
        let mut f = SampledField::zeros(grid, components);
        for t in terms {
            f.push_term(t)?;
        }
        Ok(f.normalized())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// The smallest exponent on `axis` over all terms, i.e. the leading
    /// endpoint behaviour. `None` for the zero field.
    pub fn singularity_exponent(&self, axis: usize) -> Option<f64> {
        self.terms.iter().map(|t| t.exponents[axis]).min_by(|a, b| a.total_cmp(b))
    }

    /// Sorts terms canonically and sums those with identical exponents.
    pub fn normalized(mut self) -> Self {
        self.terms.sort_by(term_cmp);
        let mut out: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            match out.last_mut() {
                Some(last) if last.exponents == t.exponents => last.values += &t.values,
                _ => out.push(t),
            }
        }
        out.retain(|t| t.values.iter().any(|v| *v != Complex64::new(0.0, 0.0)));
        self.terms = out;
        self
    }

    fn check_conform(&self, other: &SampledField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
        if self.components != other.components {
            return Err(Error::ComponentMismatch(format!("{} vs {} components", self.components, other.components)));
        }
        Ok(())
    }

    pub fn add(&self, other: &SampledField) -> Result<SampledField> {
        self.check_conform(other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(SampledField { terms, ..SampledField::zeros(&self.grid, self.components) }.normalized())
    }

    pub fn sub(&self, other: &SampledField) -> Result<SampledField> {
        self.add(&other.scale_real(-1.0))
    }

    pub fn scale(&self, c: Complex64) -> SampledField {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.values.mapv_inplace(|v| v * c);
        }
        out.normalized()
    }

    pub fn scale_real(&self, c: f64) -> SampledField {
        self.scale(Complex64::new(c, 0.0))
    }

    /// Pointwise product. Exponents add; a scalar factor broadcasts over
    /// the components of the other.
    pub fn mul(&self, other: &SampledField) -> Result<SampledField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
        let comps = broadcast_components(self.components, other.components)?;
        let shape = value_shape(&self.grid, comps);
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            let av = broadcast_values(&a.values, &shape);
            for b in &other.terms {
                let bv = broadcast_values(&b.values, &shape);
                let exponents = a.exponents.iter().zip(&b.exponents).map(|(x, y)| x + y).collect();
                terms.push(Term { exponents, values: &av * &bv });
            }
        }
        SampledField::from_terms(&self.grid, comps, terms)
    }

    /// Applies the constant `c x c` row-major matrix to the component index.
    pub fn apply_matrix(&self, m: &[Complex64]) -> Result<SampledField> {
        let c = self.components;
        if m.len() != c * c {
            return Err(Error::ComponentMismatch(format!("matrix with {} entries for {} components", m.len(), c)));
        }
        let mut out = self.clone();
        for t in &mut out.terms {
            let old = t.values.clone();
            for (mut lane_out, lane_in) in t
                .values
                .lanes_mut(ndarray::Axis(old.ndim() - 1))
                .into_iter()
                .zip(old.lanes(ndarray::Axis(old.ndim() - 1)))
            {
                for i in 0..c {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for j in 0..c {
                        acc += m[i * c + j] * lane_in[j];
                    }
                    lane_out[i] = acc;
                }
            }
        }
        Ok(out.normalized())
    }

    /// Extracts one component as a scalar field.
    pub fn component(&self, i: usize) -> Result<SampledField> {
        if i >= self.components {
            return Err(Error::ComponentMismatch(format!("component {i} of {}", self.components)));
        }
        let last = self.grid.ndim();
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                exponents: t.exponents.clone(),
                values: t.values.index_axis(ndarray::Axis(last), i).insert_axis(ndarray::Axis(last)).to_owned(),
            })
            .collect();
        SampledField::from_terms(&self.grid, 1, terms)
    }

    /// Sum over components, the row-by-column contraction.
    pub fn sum_components(&self) -> SampledField {
        let last = self.grid.ndim();
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                exponents: t.exponents.clone(),
                values: t.values.sum_axis(ndarray::Axis(last)).insert_axis(ndarray::Axis(last)),
            })
            .collect();
        SampledField::from_terms(&self.grid, 1, terms).expect("contraction keeps shapes")
    }

    /// Stacks scalar fields into a vector field.
    pub fn stack(parts: &[SampledField]) -> Result<SampledField> {
        let first = parts.first().ok_or_else(|| Error::ComponentMismatch("nothing to stack".into()))?;
        let c = parts.len();
        let shape = value_shape(&first.grid, c);
        let mut terms = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            if p.grid != first.grid || p.components != 1 {
                return Err(Error::ComponentMismatch("stack needs scalar fields on one grid".into()));
            }
            for t in &p.terms {
                let mut values = ArrayD::zeros(IxDyn(&shape));
                values
                    .index_axis_mut(ndarray::Axis(shape.len() - 1), i)
                    .assign(&t.values.index_axis(ndarray::Axis(shape.len() - 1), 0));
                terms.push(Term { exponents: t.exponents.clone(), values });
            }
        }
        SampledField::from_terms(&first.grid, c, terms)
    }

    /// Pointwise values `sum_terms prod_a t_a^p * g` at the grid nodes.
    pub fn evaluate(&self) -> ArrayD<Complex64> {
        let shape = value_shape(&self.grid, self.components);
        let mut out = ArrayD::zeros(IxDyn(&shape));
        for t in &self.terms {
            let mut v = t.values.clone();
            for (a, &p) in t.exponents.iter().enumerate() {
                if p != 0.0 {
                    let c = self.grid.axes[a].coords();
                    for (i, mut sl) in v.axis_iter_mut(ndarray::Axis(a)).enumerate() {
                        let f = c[i].powf(p);
                        sl.mapv_inplace(|z| z * f);
                    }
                }
            }
            out += &v;
        }
        out
    }

    /// Pointwise magnitude scale `sum_k t^{q_k} max|g_k|` over the terms,
    /// shaped like [`evaluate`](Self::evaluate). Unlike `|f|` it does not
    /// vanish where terms cancel.
    pub fn envelope(&self) -> ArrayD<f64> {
        let shape = value_shape(&self.grid, self.components);
        let mut out = ArrayD::zeros(IxDyn(&shape));
        for t in &self.terms {
            let m = t.values.iter().fold(0.0f64, |a, z| a.max(z.norm()));
            let mut v = ArrayD::from_elem(IxDyn(&shape), m);
            for (a, &p) in t.exponents.iter().enumerate() {
                if p != 0.0 {
                    let c = self.grid.axes[a].coords();
                    for (i, mut sl) in v.axis_iter_mut(ndarray::Axis(a)).enumerate() {
                        let f = c[i].abs().powf(p);
                        sl.mapv_inplace(|z| z * f);
                    }
                }
            }
            out += &v;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.evaluate().iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Root-mean-square of the pointwise values.
    pub fn rms(&self) -> f64 {
        let v = self.evaluate();
        let s: Vec<f64> = v.iter().map(|z| z.norm_sqr()).collect();
        (crate::quadrature::pairwise_sum(&s) / s.len() as f64).sqrt()
    }

    /// The limit `t -> 0` along `axis`, broadcast back along that axis.
    /// Terms with positive exponent vanish; a singular term is an error.
    pub fn trace_at_origin(&self, axis: usize) -> Result<SampledField> {
        let t = self.grid.require_role(axis, AxisRole::Fractional)?.coords();
        let folded = self.fold_integer_exponents(axis);
        let mut terms = Vec::new();
        for term in &folded.terms {
            let p = term.exponents[axis];
            if p > 0.0 {
                continue;
            }
            if p < 0.0 {
                return Err(Error::Precondition(format!("term t^{p} has no value at t = 0")));
            }
            let g = axis_to_front(&term.values, axis);
            let g0 = extrapolate_origin(&g, &t);
            let (n, lanes) = g.dim();
            let m = Array2::from_shape_fn((n, lanes), |(_, l)| g0[l]);
            terms.push(Term {
                exponents: term.exponents.clone(),
                values: axis_from_front(m, axis, term.values.shape()),
            });
        }
        SampledField::from_terms(&self.grid, self.components, terms)
    }

    /// The field on the first `n` nodes of fractional axis `axis`; the
    /// shortened axis keeps the node positions.
    pub fn head(&self, axis: usize, n: usize) -> Result<SampledField> {
        let spec = self.grid.require_role(axis, AxisRole::Fractional)?.clone();
        if n == 0 || n > spec.nodes {
            return Err(Error::InvalidAxis(format!("head of {n} nodes on an axis of {}", spec.nodes)));
        }
        let mut axes = self.grid.axes.clone();
        axes[axis] =
            AxisSpec { extent: spec.extent * (n as f64 / spec.nodes as f64).powf(spec.grading), nodes: n, ..spec };
        let grid = Grid::new(axes)?;
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                exponents: t.exponents.clone(),
                values: t.values.slice_axis(ndarray::Axis(axis), ndarray::Slice::from(0..n)).to_owned(),
            })
            .collect();
        SampledField::from_terms(&grid, self.components, terms)
    }

    /// Multiplies `t^p` into the values wherever `p` is a non-negative
    /// integer on `axis`, leaving exponent 0.
    pub fn fold_integer_exponents(&self, axis: usize) -> SampledField {
        let coords = self.grid.axes[axis].coords();
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let p = t.exponents[axis];
                if p > 0.0 && p.fract() == 0.0 {
                    let mut t = t.clone();
                    for (i, mut sl) in t.values.axis_iter_mut(ndarray::Axis(axis)).enumerate() {
                        let f = coords[i].powi(p as i32);
                        sl.mapv_inplace(|z| z * f);
                    }
                    t.exponents[axis] = 0.0;
                    t
                } else {
                    t.clone()
                }
            })
            .collect();
        SampledField::from_terms(&self.grid, self.components, terms).expect("folding keeps shapes")
    }
}

fn broadcast_components(a: usize, b: usize) -> Result<usize> {
    if a == b || b == 1 {
        Ok(a)
    } else if a == 1 {
        Ok(b)
    } else {
        Err(Error::ComponentMismatch(format!("{a} vs {b} components")))
    }
}

fn broadcast_values(v: &ArrayD<Complex64>, shape: &[usize]) -> ArrayD<Complex64> {
    if v.shape() == shape {
        v.clone()
    } else {
        v.broadcast(IxDyn(shape)).expect("component broadcast").to_owned()
    }
}

/// Moves `axis` to the front and flattens the rest: `(n_axis, lanes)`.
pub(crate) fn axis_to_front(a: &ArrayD<Complex64>, axis: usize) -> Array2<Complex64> {
    let nd = a.ndim();
    let mut perm: Vec<usize> = vec![axis];
    perm.extend((0..nd).filter(|&i| i != axis));
    let n = a.shape()[axis];
    let lanes = a.len() / n.max(1);
    let p = a.view().permuted_axes(IxDyn(&perm));
    let flat: Vec<Complex64> = p.iter().copied().collect();
    Array2::from_shape_vec((n, lanes), flat).expect("lane layout")
}

/// Inverse of [`axis_to_front`]; `shape` is the target shape.
pub(crate) fn axis_from_front(m: Array2<Complex64>, axis: usize, shape: &[usize]) -> ArrayD<Complex64> {
    let nd = shape.len();
    let mut front_shape = vec![shape[axis]];
    front_shape.extend((0..nd).filter(|&i| i != axis).map(|i| shape[i]));
    let (v, _) = m.into_raw_vec_and_offset();
    let a = ArrayD::from_shape_vec(IxDyn(&front_shape), v).expect("front layout");
    // position of original axis i inside the front layout
    let inv: Vec<usize> = (0..nd)
        .map(|i| match i.cmp(&axis) {
            std::cmp::Ordering::Less => i + 1,
            std::cmp::Ordering::Equal => 0,
            std::cmp::Ordering::Greater => i,
        })
        .collect();
    a.permuted_axes(IxDyn(&inv)).as_standard_layout().into_owned()
}

/// Derivative of the values along a classical axis.
///
/// Periodic axes use the FFT; truncated lines use centred stencils of
/// `order + 4` points, one-sided near the ends, fourth-order accurate.
pub fn classical_derivative(f: &SampledField, axis: usize, order: usize) -> Result<SampledField> {
    let spec = f.grid.require_role(axis, AxisRole::Classical)?.clone();
    if order == 0 || order > 4 {
        return Err(Error::InvalidOrder {
            order: order as f64,
            reason: "classical derivatives support orders 1 to 4".into(),
        });
    }
    let terms = f
        .terms
        .iter()
        .map(|t| {
            let m = axis_to_front(&t.values, axis);
            let d = match spec.topology {
                Topology::Periodic => spectral_derivative(&m, spec.extent, order),
                _ => stencil_derivative(&m, &spec.coords(), order),
            };
            Term { exponents: t.exponents.clone(), values: axis_from_front(d, axis, t.values.shape()) }
        })
        .collect();
    SampledField::from_terms(&f.grid, f.components, terms)
}

/// Unnormalized DFT of `a` along `axis` (`inverse` flips the sign of the
/// exponent).
pub(crate) fn fft_axis(a: &ArrayD<Complex64>, axis: usize, inverse: bool) -> ArrayD<Complex64> {
    let mut m = axis_to_front(a, axis);
    let (n, lanes) = m.dim();
    let mut planner = FftPlanner::<f64>::new();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for l in 0..lanes {
        for i in 0..n {
            buf[i] = m[[i, l]];
        }
        plan.process(&mut buf);
        for i in 0..n {
            m[[i, l]] = buf[i];
        }
    }
    axis_from_front(m, axis, a.shape())
}

fn spectral_derivative(m: &Array2<Complex64>, extent: f64, order: usize) -> Array2<Complex64> {
    let (n, lanes) = m.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mult: Vec<Complex64> = (0..n)
        .map(|j| {
            let kj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            // the Nyquist mode has no odd-derivative counterpart
            if n % 2 == 0 && j == n / 2 && order % 2 == 1 {
                return Complex64::new(0.0, 0.0);
            }
            let k = 2.0 * std::f64::consts::PI * kj / extent;
            Complex64::new(0.0, k).powu(order as u32) / n as f64
        })
        .collect();
    let mut out = Array2::zeros((n, lanes));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for l in 0..lanes {
        for i in 0..n {
            buf[i] = m[[i, l]];
        }
        fwd.process(&mut buf);
        for i in 0..n {
            buf[i] *= mult[i];
        }
        inv.process(&mut buf);
        for i in 0..n {
            out[[i, l]] = buf[i];
        }
    }
    out
}

/// Applies `order`-th derivative stencils of `order + 4` points on the
/// (possibly non-uniform) nodes `xs`.
pub(crate) fn stencil_derivative(m: &Array2<Complex64>, xs: &[f64], order: usize) -> Array2<Complex64> {
    let (n, lanes) = m.dim();
    let width = (order + 4).min(n);
    let mut out = Array2::zeros((n, lanes));
    for i in 0..n {
        let s = stencil_start(i, n, width);
        let w = fornberg_weights(xs[i], &xs[s..s + width], order);
        for l in 0..lanes {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, wj) in w[order].iter().enumerate() {
                acc += m[[s + j, l]] * wj;
            }
            out[[i, l]] = acc;
        }
    }
    out
}

/// Exact-in-exponent time derivative of order 1 or 2 along a fractional
/// axis: `d/dt (t^q g) = t^{q-1} (q g + t g')`. Terms whose exponent is a
/// non-negative integer are folded into the values first.
pub fn time_derivative(f: &SampledField, axis: usize, order: usize) -> Result<SampledField> {
    let spec = f.grid.require_role(axis, AxisRole::Fractional)?.clone();
    if order == 0 {
        return Ok(f.clone());
    }
    if order > 2 {
        return Err(Error::InvalidOrder {
            order: order as f64,
            reason: "time derivatives support orders 1 and 2".into(),
        });
    }
    let t = spec.coords();
    let folded = f.fold_integer_exponents(axis);
    let mut terms = Vec::with_capacity(folded.terms.len());
    for term in &folded.terms {
        let q = term.exponents[axis];
        let g = axis_to_front(&term.values, axis);
        let d1 = stencil_derivative(&g, &t, 1);
        let (n, lanes) = g.dim();
        let mut out = Array2::zeros((n, lanes));
        let mut exps = term.exponents.clone();
        if q == 0.0 {
            out = if order == 1 { d1 } else { stencil_derivative(&g, &t, 2) };
        } else if order == 1 {
            for i in 0..n {
                for l in 0..lanes {
                    out[[i, l]] = g[[i, l]] * q + d1[[i, l]] * t[i];
                }
            }
            exps[axis] = q - 1.0;
        } else {
            let d2 = stencil_derivative(&g, &t, 2);
            for i in 0..n {
                for l in 0..lanes {
                    out[[i, l]] =
                        g[[i, l]] * (q * (q - 1.0)) + d1[[i, l]] * (2.0 * q * t[i]) + d2[[i, l]] * (t[i] * t[i]);
                }
            }
            exps[axis] = q - 2.0;
        }
        terms.push(Term { exponents: exps, values: axis_from_front(out, axis, term.values.shape()) });
    }
    SampledField::from_terms(&f.grid, f.components, terms)
}

/// Values of `g` at `t = 0` along the first axis of `m`, by quadratic
/// extrapolation from the first three nodes.
pub(crate) fn extrapolate_origin(m: &Array2<Complex64>, t: &[f64]) -> Vec<Complex64> {
    let lanes = m.ncols();
    (0..lanes).map(|l| extrapolate_to_zero(&t[..3], &[m[[0, l]], m[[1, l]], m[[2, l]]])).collect()
}

// ---------------------------------------------------------------------------
// Laplace convolution
// ---------------------------------------------------------------------------

const NEAR_CELLS: usize = 8;
const JACOBI_POINTS: usize = 8;

/// One quadrature contribution `w * F[fi] * G[gi]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Entry {
    pub w: f64,
    pub fi: usize,
    pub gi: usize,
}

/// A sample position on `[0, T]`; `powered` samples include `s^p`.
#[derive(Debug, Clone, Copy)]
struct Sample {
    s: f64,
    powered: bool,
}

/// Per-axis quadrature plan for one pair of exponents `(pf, pg)`.
struct AxisPlan {
    h: f64,
    pf: f64,
    pg: f64,
    gl4: GaussRule,
    gl8: GaussRule,
    jac_g: GaussRule,
    jac_f: GaussRule,
    jac_both: GaussRule,
    f_samples: Vec<Sample>,
    g_samples: Vec<Sample>,
    f_off: [usize; 5],
    g_off: [usize; 5],
}

// Offsets into the sample lists: gl4, gl8, first cell, last cell, single cell.
const O4: usize = 0;
const O8: usize = 1;
const OFIRST: usize = 2;
const OLAST: usize = 3;
const OONE: usize = 4;

impl AxisPlan {
    fn new(n: usize, h: f64, pf: f64, pg: f64) -> Self {
        let gl4 = gauss_legendre(4);
        let gl8 = gauss_legendre(8);
        // first cell: weight sigma^pg; last cell: weight y^pf with y = 1 - sigma
        let jac_g = gauss_jacobi(JACOBI_POINTS, 0.0, pg);
        let jac_f = gauss_jacobi(JACOBI_POINTS, 0.0, pf);
        let jac_both = gauss_jacobi(JACOBI_POINTS, pf, pg);
        let mut f_samples = Vec::new();
        let mut g_samples = Vec::new();
        let mut f_off = [0; 5];
        let mut g_off = [0; 5];
        for (slot, rule) in [(O4, &gl4), (O8, &gl8)] {
            f_off[slot] = f_samples.len();
            g_off[slot] = g_samples.len();
            for m in 0..n {
                for &y in &rule.nodes {
                    let s = (m as f64 + y) * h;
                    f_samples.push(Sample { s, powered: true });
                    g_samples.push(Sample { s, powered: true });
                }
            }
        }
        // first cell: g at sigma h (weight carries the power), f mirrored
        f_off[OFIRST] = f_samples.len();
        g_off[OFIRST] = g_samples.len();
        for m in 0..n {
            for &y in &jac_g.nodes {
                f_samples.push(Sample { s: (m as f64 + 1.0 - y) * h, powered: true });
            }
        }
        for &y in &jac_g.nodes {
            g_samples.push(Sample { s: y * h, powered: false });
        }
        // last cell: f at y h (weight carries the power), g mirrored
        f_off[OLAST] = f_samples.len();
        g_off[OLAST] = g_samples.len();
        for &y in &jac_f.nodes {
            f_samples.push(Sample { s: y * h, powered: false });
        }
        for m in 0..n {
            for &y in &jac_f.nodes {
                g_samples.push(Sample { s: (m as f64 + 1.0 - y) * h, powered: true });
            }
        }
        // a single cell carries both powers in the weight
        f_off[OONE] = f_samples.len();
        g_off[OONE] = g_samples.len();
        for &y in &jac_both.nodes {
            f_samples.push(Sample { s: (1.0 - y) * h, powered: false });
            g_samples.push(Sample { s: y * h, powered: false });
        }
        AxisPlan { h, pf, pg, gl4, gl8, jac_g, jac_f, jac_both, f_samples, g_samples, f_off, g_off }
    }

    /// Entries for the target node `t_n = n h`, `n >= 1`.
    fn entries(&self, n: usize, out: &mut Vec<Entry>) {
        out.clear();
        let h = self.h;
        let qj = JACOBI_POINTS;
        if n == 1 {
            let scale = h.powf(1.0 + self.pf + self.pg);
            for q in 0..qj {
                out.push(Entry {
                    w: self.jac_both.weights[q] * scale,
                    fi: self.f_off[OONE] + q,
                    gi: self.g_off[OONE] + q,
                });
            }
            return;
        }
        let scale = h.powf(1.0 + self.pg);
        for q in 0..qj {
            out.push(Entry {
                w: self.jac_g.weights[q] * scale,
                fi: self.f_off[OFIRST] + (n - 1) * qj + q,
                gi: self.g_off[OFIRST] + q,
            });
        }
        for j in 1..n - 1 {
            let mirror = n - 1 - j;
            let (rule, slot, width) =
                if j < NEAR_CELLS || mirror < NEAR_CELLS { (&self.gl8, O8, 8) } else { (&self.gl4, O4, 4) };
            for q in 0..width {
                out.push(Entry {
                    w: rule.weights[q] * h,
                    fi: self.f_off[slot] + mirror * width + (width - 1 - q),
                    gi: self.g_off[slot] + j * width + q,
                });
            }
        }
        let scale = h.powf(1.0 + self.pf);
        for q in 0..qj {
            out.push(Entry {
                w: self.jac_f.weights[q] * scale,
                fi: self.f_off[OLAST] + q,
                gi: self.g_off[OLAST] + (n - 1) * qj + q,
            });
        }
    }
}

/// Resamples the node values (first axis of `m`, nodes `t_i = (i+1) h`)
/// at arbitrary positions by linear interpolation, with the value at
/// `t = 0` extrapolated from the first three nodes.
pub(crate) fn resample_uniform(m: &Array2<Complex64>, h: f64, p: f64, samples: &[(f64, bool)]) -> Array2<Complex64> {
    let (n, lanes) = m.dim();
    let t: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
    let g0 = extrapolate_origin(m, &t);
    let mut out = Array2::zeros((samples.len(), lanes));
    for (k, &(s, powered)) in samples.iter().enumerate() {
        let u = s / h;
        let i = (u.floor() as usize).min(n - 1);
        let frac = u - i as f64;
        let factor = if powered { s.powf(p) } else { 1.0 };
        for l in 0..lanes {
            let lo = if i == 0 { g0[l] } else { m[[i - 1, l]] };
            let hi = m[[i, l]];
            out[[k, l]] = (lo * (1.0 - frac) + hi * frac) * factor;
        }
    }
    out
}

/// Block-then-pairwise accumulator over lanes; the reduction tree depends
/// only on the number of entries, never on the data.
pub(crate) struct LaneAccumulator {
    lanes: usize,
    block: usize,
    count: usize,
    partials: Vec<Complex64>,
}

impl LaneAccumulator {
    pub(crate) fn new(lanes: usize) -> Self {
        LaneAccumulator { lanes, block: 64, count: 0, partials: Vec::new() }
    }

    pub(crate) fn reset(&mut self) {
        self.count = 0;
        self.partials.clear();
    }

    /// Adds `w * a[l] * b[l]` for every lane.
    #[inline]
    pub(crate) fn add(&mut self, w: f64, a: &[Complex64], b: &[Complex64]) {
        if self.count.is_multiple_of(self.block) {
            self.partials.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), self.lanes));
        }
        let start = self.partials.len() - self.lanes;
        let acc = &mut self.partials[start..];
        for l in 0..self.lanes {
            acc[l] += a[l] * b[l] * w;
        }
        self.count += 1;
    }

    /// Adds `w * a[l]` for every lane.
    #[inline]
    pub(crate) fn add_scaled(&mut self, w: f64, a: &[Complex64]) {
        if self.count.is_multiple_of(self.block) {
            self.partials.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), self.lanes));
        }
        let start = self.partials.len() - self.lanes;
        let acc = &mut self.partials[start..];
        for l in 0..self.lanes {
            acc[l] += a[l] * w;
        }
        self.count += 1;
    }

    /// Opens a new partial if the current block is full and returns how
    /// many entries still fit in it.
    #[inline]
    fn room(&mut self) -> usize {
        if self.count.is_multiple_of(self.block) {
            self.partials.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), self.lanes));
        }
        self.block - self.count % self.block
    }

    /// Adds `w[k] * a[k][l]` over a contiguous run of entries; `a` holds
    /// `w.len()` rows of `lanes` values. Same result as repeated
    /// [`Self::add_scaled`].
    pub(crate) fn add_run_scaled(&mut self, w: &[f64], a: &[Complex64]) {
        let lanes = self.lanes;
        let mut k = 0;
        while k < w.len() {
            let m = self.room().min(w.len() - k);
            let start = self.partials.len() - lanes;
            let acc = &mut self.partials[start..];
            if lanes == 1 {
                let mut s = acc[0];
                for i in k..k + m {
                    s += a[i] * w[i];
                }
                acc[0] = s;
            } else {
                for i in k..k + m {
                    let row = &a[i * lanes..(i + 1) * lanes];
                    for l in 0..lanes {
                        acc[l] += row[l] * w[i];
                    }
                }
            }
            self.count += m;
            k += m;
        }
    }

    /// Adds `w[k % w.len()] * a[k][l] * b[k][l]` over a run of `len`
    /// entries. Same result as repeated [`Self::add`].
    pub(crate) fn add_run_product(&mut self, w: &[f64], len: usize, a: &[Complex64], b: &[Complex64]) {
        let lanes = self.lanes;
        let q = w.len();
        let mut k = 0;
        while k < len {
            let m = self.room().min(len - k);
            let start = self.partials.len() - lanes;
            let acc = &mut self.partials[start..];
            for i in k..k + m {
                let wi = w[i % q];
                let ra = &a[i * lanes..(i + 1) * lanes];
                let rb = &b[i * lanes..(i + 1) * lanes];
                for l in 0..lanes {
                    acc[l] += ra[l] * rb[l] * wi;
                }
            }
            self.count += m;
            k += m;
        }
    }

    pub(crate) fn finish(&mut self, out: &mut [Complex64]) {
        let nb = self.partials.len() / self.lanes.max(1);
        if nb == 0 {
            out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            return;
        }
        let mut stride = 1;
        while stride < nb {
            let mut b = 0;
            while b + stride < nb {
                let (lo, hi) = self.partials.split_at_mut((b + stride) * self.lanes);
                let dst = &mut lo[b * self.lanes..(b + 1) * self.lanes];
                for l in 0..self.lanes {
                    dst[l] += hi[l];
                }
                b += 2 * stride;
            }
            stride *= 2;
        }
        out.copy_from_slice(&self.partials[..self.lanes]);
    }
}

/// Laplace convolution `(f * g)(t) = int_0^t f(t - s) g(s) ds` along every
/// axis in `axes` (jointly), pointwise product along all other axes.
///
/// Each cell is integrated with the linear interpolant of the smooth
/// factors against the exact power factors: Gauss-Jacobi in the two end
/// cells, Gauss-Legendre inside. Operands are put in a canonical order, so
/// `f * g` and `g * f` agree bit for bit. Uniform meshes only.
pub fn laplace_convolve(f: &SampledField, g: &SampledField, axes: &[usize]) -> Result<SampledField> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch("convolution operands live on different grids".into()));
    }
    let grid = &f.grid;
    let mut conv: Vec<usize> = axes.to_vec();
    conv.sort_unstable();
    conv.dedup();
    if conv.is_empty() {
        return Err(Error::Precondition("convolution needs at least one axis".into()));
    }
    for &a in &conv {
        let spec = grid.require_role(a, AxisRole::Fractional)?;
        if !spec.is_uniform() {
            return Err(Error::UnsupportedMesh(format!(
                "convolution along axis {a} needs a uniform mesh (grading {})",
                spec.grading
            )));
        }
    }
    let comps = broadcast_components(f.components, g.components)?;
    let shape = value_shape(grid, comps);
    let mut terms = Vec::new();
    for a in &f.terms {
        for b in &g.terms {
            let a = Term { exponents: a.exponents.clone(), values: broadcast_values(&a.values, &shape) };
            let b = Term { exponents: b.exponents.clone(), values: broadcast_values(&b.values, &shape) };
            let (x, y) = if term_cmp(&a, &b) == std::cmp::Ordering::Greater { (b, a) } else { (a, b) };
            for &ax in &conv {
                for p in [x.exponents[ax], y.exponents[ax]] {
                    if p <= -1.0 {
                        return Err(Error::NonIntegrable { axis: ax, exponent: p });
                    }
                }
            }
            if constant_along(&x.values, &conv) && constant_along(&y.values, &conv) {
                terms.push(beta_terms(&conv, &x, &y));
            } else {
                terms.push(convolve_terms(grid, &conv, &x, &y));
            }
        }
    }
    SampledField::from_terms(grid, comps, terms)
}

/// True if the values do not change along any of `axes`.
fn constant_along(values: &ArrayD<Complex64>, axes: &[usize]) -> bool {
    axes.iter().all(|&a| {
        let first = values.index_axis(ndarray::Axis(a), 0);
        values.axis_iter(ndarray::Axis(a)).skip(1).all(|lane| lane == first)
    })
}

/// Closed form `t^a * t^b = B(a+1, b+1) t^{a+b+1}` per axis, for factors
/// that are constant along the convolved axes.
fn beta_terms(conv: &[usize], f: &Term, g: &Term) -> Term {
    let mut w = 1.0;
    for &a in conv {
        let (p, q) = (f.exponents[a], g.exponents[a]);
        w *= gamma_ratio(p + 1.0, p + q + 2.0) * statrs::function::gamma::gamma(q + 1.0);
    }
    let exponents = f
        .exponents
        .iter()
        .zip(&g.exponents)
        .enumerate()
        .map(|(a, (p, q))| if conv.contains(&a) { p + q + 1.0 } else { p + q })
        .collect();
    let mut values = &f.values * &g.values;
    values.mapv_inplace(|v| v * w);
    Term { exponents, values }
}

fn convolve_terms(grid: &Grid, conv: &[usize], f: &Term, g: &Term) -> Term {
    let nd = f.values.ndim();
    // layout: convolved axes first, then the rest flattened into lanes
    let mut perm: Vec<usize> = conv.to_vec();
    perm.extend((0..nd).filter(|i| !conv.contains(i)));
    let dims: Vec<usize> = conv.iter().map(|&a| grid.axes[a].nodes).collect();
    let lanes: usize = f.values.len() / dims.iter().product::<usize>();

    // pointwise product of powers on the non-convolved axes is handled by
    // exponent addition, the values multiply lane by lane below
    let plans: Vec<AxisPlan> = conv
        .iter()
        .map(|&a| AxisPlan::new(grid.axes[a].nodes, grid.axes[a].step(), f.exponents[a], g.exponents[a]))
        .collect();

    let fs = sample_tensor(&f.values, &perm, &dims, lanes, &plans, true);
    let gs = sample_tensor(&g.values, &perm, &dims, lanes, &plans, false);
    let f_sizes: Vec<usize> = plans.iter().map(|p| p.f_samples.len()).collect();
    let g_sizes: Vec<usize> = plans.iter().map(|p| p.g_samples.len()).collect();

    let total: usize = dims.iter().product();
    let mut out = vec![Complex64::new(0.0, 0.0); total * lanes];
    let mut acc = LaneAccumulator::new(lanes);
    let mut lists: Vec<Vec<Entry>> = vec![Vec::new(); conv.len()];
    let mut target = vec![0usize; conv.len()];
    if conv.len() == 1 {
        let plan = &plans[0];
        let n_nodes = dims[0];
        let reversed = |off: usize, width: usize| -> Vec<Complex64> {
            let rows = n_nodes * width;
            let mut r = Vec::with_capacity(rows * lanes);
            for k in (0..rows).rev() {
                r.extend_from_slice(&fs[(off + k) * lanes..(off + k + 1) * lanes]);
            }
            r
        };
        let frev4 = reversed(plan.f_off[O4], 4);
        let frev8 = reversed(plan.f_off[O8], 8);
        let w4: Vec<f64> = plan.gl4.weights.iter().map(|w| w * plan.h).collect();
        let w8: Vec<f64> = plan.gl8.weights.iter().map(|w| w * plan.h).collect();
        for n in 1..=n_nodes {
            acc.reset();
            if n == 1 {
                plan.entries(1, &mut lists[0]);
                for e in &lists[0] {
                    acc.add(e.w, &fs[e.fi * lanes..(e.fi + 1) * lanes], &gs[e.gi * lanes..(e.gi + 1) * lanes]);
                }
            } else {
                let qj = JACOBI_POINTS;
                let scale = plan.h.powf(1.0 + plan.pg);
                for q in 0..qj {
                    let fi = plan.f_off[OFIRST] + (n - 1) * qj + q;
                    let gi = plan.g_off[OFIRST] + q;
                    acc.add(
                        plan.jac_g.weights[q] * scale,
                        &fs[fi * lanes..(fi + 1) * lanes],
                        &gs[gi * lanes..(gi + 1) * lanes],
                    );
                }
                let a_end = NEAR_CELLS.min(n - 1);
                let c_start = NEAR_CELLS.max(n.saturating_sub(NEAR_CELLS)).min(n - 1);
                let mut run = |c0: usize, c1: usize, width: usize, w: &[f64], frev: &[Complex64], slot: usize| {
                    if c1 <= c0 {
                        return;
                    }
                    let len = (c1 - c0) * width;
                    let fa = ((n_nodes - n) * width + c0 * width) * lanes;
                    let ga = (plan.g_off[slot] + c0 * width) * lanes;
                    acc.add_run_product(w, len, &frev[fa..fa + len * lanes], &gs[ga..ga + len * lanes]);
                };
                run(1, a_end, 8, &w8, &frev8, O8);
                run(NEAR_CELLS, c_start, 4, &w4, &frev4, O4);
                run(c_start.max(a_end), n - 1, 8, &w8, &frev8, O8);
                let scale = plan.h.powf(1.0 + plan.pf);
                for q in 0..qj {
                    let fi = plan.f_off[OLAST] + q;
                    let gi = plan.g_off[OLAST] + (n - 1) * qj + q;
                    acc.add(
                        plan.jac_f.weights[q] * scale,
                        &fs[fi * lanes..(fi + 1) * lanes],
                        &gs[gi * lanes..(gi + 1) * lanes],
                    );
                }
            }
            let dst = &mut out[(n - 1) * lanes..n * lanes];
            acc.finish(dst);
            let t = n as f64 * plan.h;
            let scale = t.powf(plan.pf + plan.pg + 1.0);
            dst.iter_mut().for_each(|v| *v /= scale);
        }
    }
    for flat in (if conv.len() == 1 { total } else { 0 })..total {
        // unravel target index (row-major over conv axes)
        let mut r = flat;
        for d in (0..conv.len()).rev() {
            target[d] = r % dims[d];
            r /= dims[d];
        }
        for d in 0..conv.len() {
            plans[d].entries(target[d] + 1, &mut lists[d]);
        }
        acc.reset();
        let mut pos = vec![0usize; conv.len()];
        'product: loop {
            let mut w = 1.0;
            let mut fi = 0;
            let mut gi = 0;
            for d in 0..conv.len() {
                let e = lists[d][pos[d]];
                w *= e.w;
                fi = fi * f_sizes[d] + e.fi;
                gi = gi * g_sizes[d] + e.gi;
            }
            acc.add(w, &fs[fi * lanes..(fi + 1) * lanes], &gs[gi * lanes..(gi + 1) * lanes]);
            for d in (0..conv.len()).rev() {
                pos[d] += 1;
                if pos[d] < lists[d].len() {
                    continue 'product;
                }
                pos[d] = 0;
            }
            break;
        }
        let dst = &mut out[flat * lanes..(flat + 1) * lanes];
        acc.finish(dst);
        let mut scale = 1.0;
        for d in 0..conv.len() {
            let t = (target[d] + 1) as f64 * plans[d].h;
            scale *= t.powf(plans[d].pf + plans[d].pg + 1.0);
        }
        dst.iter_mut().for_each(|v| *v /= scale);
    }

    // undo the layout
    let mut front_shape = dims.clone();
    front_shape.extend((0..nd).filter(|i| !conv.contains(i)).map(|i| f.values.shape()[i]));
    let arr = ArrayD::from_shape_vec(IxDyn(&front_shape), out).expect("result layout");
    let mut inv = vec![0usize; nd];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    let values = arr.permuted_axes(IxDyn(&inv)).as_standard_layout().into_owned();
    let exponents = (0..nd - 1)
        .map(|a| {
            let s = f.exponents[a] + g.exponents[a];
            if conv.contains(&a) {
                s + 1.0
            } else {
                s
            }
        })
        .collect();
    Term { exponents, values }
}

/// Samples the node values of one operand at the plan positions along each
/// convolved axis; returns a flat array `[samples..., lanes]`.
fn sample_tensor(
    values: &ArrayD<Complex64>,
    perm: &[usize],
    dims: &[usize],
    lanes: usize,
    plans: &[AxisPlan],
    f_role: bool,
) -> Vec<Complex64> {
    let permuted = values.view().permuted_axes(IxDyn(perm));
    let flat: Vec<Complex64> = permuted.iter().copied().collect();
    let mut shape: Vec<usize> = dims.to_vec();
    shape.push(lanes);
    let mut cur = ArrayD::from_shape_vec(IxDyn(&shape), flat).expect("sample layout");
    for (d, plan) in plans.iter().enumerate() {
        let (samples, p) = if f_role { (&plan.f_samples, plan.pf) } else { (&plan.g_samples, plan.pg) };
        let pairs: Vec<(f64, bool)> = samples.iter().map(|s| (s.s, s.powered)).collect();
        let m = axis_to_front(&cur, d);
        let r = resample_uniform(&m, plan.h, p, &pairs);
        let mut new_shape: Vec<usize> = cur.shape().to_vec();
        new_shape[d] = pairs.len();
        cur = axis_from_front(r, d, &new_shape);
    }
    cur.as_standard_layout().iter().copied().collect()
}
