//! Operator specifications `Λ(D, ∂)` and their TOML form.

use std::cmp::Ordering;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AxisRole, AxisSpec, Grid};

/// A coefficient: a number or a square matrix given row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coeff {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Coeff {
    fn dim(&self) -> Option<usize> {
        match self {
            Coeff::Scalar(_) => None,
            Coeff::Matrix(rows) => Some(rows.len()),
        }
    }

    fn to_matrix(&self, dim: usize) -> Result<CoeffMatrix> {
        match self {
            Coeff::Scalar(c) => Ok(CoeffMatrix::scalar(dim, *c)),
            Coeff::Matrix(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::Spec(format!("coefficient matrix is not {dim}x{dim}")));
                }
                Ok(CoeffMatrix { dim, data: rows.iter().flatten().copied().collect() })
            }
        }
    }
}

/// A dense row-major `dim x dim` real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl CoeffMatrix {
    pub fn scalar(dim: usize, c: f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = c;
        }
        CoeffMatrix { dim, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        Coeff::Matrix(rows.iter().map(|r| r.to_vec()).collect()).to_matrix(rows.len())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, s: f64) -> Self {
        CoeffMatrix { dim: self.dim, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn plus(&self, other: &CoeffMatrix) -> Self {
        CoeffMatrix { dim: self.dim, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    /// `Some(c)` if the matrix is `c` times the identity.
    pub fn as_scalar(&self) -> Option<f64> {
        let c = self.data[0];
        let id = CoeffMatrix::scalar(self.dim, c);
        (id == *self).then_some(c)
    }

    pub(crate) fn complex(&self) -> Vec<Complex64> {
        self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect()
    }
}

/// One derivative factor: `∂_axis` or `D^order_axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    Partial(usize),
    Frac { axis: usize, order: f64 },
}

impl Atom {
    pub fn axis(self) -> usize {
        match self {
            Atom::Partial(a) | Atom::Frac { axis: a, .. } => a,
        }
    }

    fn key(self) -> (u8, usize, u64) {
        match self {
            Atom::Partial(a) => (0, a, 0),
            Atom::Frac { axis, order } => (1, axis, order.to_bits()),
        }
    }
}

impl Eq for Atom {}

impl PartialOrd for Atom {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Atom {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl std::fmt::Display for Atom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Atom::Partial(a) => write!(f, "d{a}"),
            Atom::Frac { axis, order } => write!(f, "D{axis}^{order}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalTerm {
    /// `[[axis, order], ...]`, applied right to left.
    pub word: Vec<(usize, f64)>,
    pub coeff: Coeff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalTerm {
    /// Classical axis indices of the derivative multi-index.
    pub mu: Vec<usize>,
    pub coeff: Coeff,
}

/// A mixed operator `Σ Λ̃_w D_w + Σ Λ_μ ∂^μ + Λ_0` on a tensor grid.
///
/// Coefficients are tensor entries: a word listed once stands for all of
/// its distinct permutations with the same coefficient, so `mu = [1, 2]`
/// with `c` means `2c ∂_1 ∂_2`. Listing two permutations of one word with
/// different coefficients is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub axes: Vec<AxisSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fractional_terms: Vec<FractionalTerm>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classical_terms: Vec<ClassicalTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_term: Option<Coeff>,
}

/// A spec with every coefficient expanded over the permutations of its word.
#[derive(Debug, Clone, PartialEq)]
pub struct Expanded {
    pub components: usize,
    pub fractional: Vec<(Vec<Atom>, CoeffMatrix)>,
    pub classical: Vec<(Vec<Atom>, CoeffMatrix)>,
    pub constant: CoeffMatrix,
}

fn next_permutation(v: &mut [Atom]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn distinct_permutations(word: &[Atom]) -> Vec<Vec<Atom>> {
    let mut w = word.to_vec();
    w.sort();
    let mut out = vec![w.clone()];
    while next_permutation(&mut w) {
        out.push(w.clone());
    }
    out
}

type Word = (Vec<Atom>, CoeffMatrix);

fn expand(words: Vec<Word>, what: &str) -> Result<Vec<Word>> {
    // group listed words by their sorted form
    let mut groups: Vec<(Vec<Atom>, Vec<Word>)> = Vec::new();
    for (w, c) in words {
        let mut key = w.clone();
        key.sort();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push((w, c)),
            None => groups.push((key, vec![(w, c)])),
        }
    }
    let mut out = Vec::new();
    for (key, members) in groups {
        for (i, (wa, ca)) in members.iter().enumerate() {
            for (wb, cb) in &members[i + 1..] {
                if wa == wb {
                    return Err(Error::Spec(format!("{what} word {wa:?} listed twice")));
                }
                if ca != cb {
                    return Err(Error::Spec(format!("asymmetric {what} coefficients for {wa:?} and {wb:?}")));
                }
            }
        }
        let c = &members[0].1;
        for p in distinct_permutations(&key) {
            out.push((p, c.clone()));
        }
    }
    Ok(out)
}

impl OperatorSpec {
    /// The 1+d diffusion operator `D^α_t - C Δ` on axes `[time, space...]`.
    pub fn diffusion(alpha: f64, diffusivity: f64, time: AxisSpec, space: Vec<AxisSpec>) -> Self {
        let d = space.len();
        let mut axes = vec![time];
        axes.extend(space);
        OperatorSpec {
            axes,
            fractional_terms: vec![FractionalTerm { word: vec![(0, alpha)], coeff: Coeff::Scalar(1.0) }],
            classical_terms: (1..=d)
                .map(|i| ClassicalTerm { mu: vec![i, i], coeff: Coeff::Scalar(-diffusivity) })
                .collect(),
            constant_term: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: OperatorSpec = toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        spec.expanded()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.axes.clone())
    }

    /// Field dimension: the size of the matrix coefficients, 1 if all are
    /// scalars.
    pub fn components(&self) -> Result<usize> {
        let dims: Vec<usize> = self
            .fractional_terms
            .iter()
            .map(|t| &t.coeff)
            .chain(self.classical_terms.iter().map(|t| &t.coeff))
            .chain(self.constant_term.iter())
            .filter_map(Coeff::dim)
            .collect();
        match dims.first() {
            None => Ok(1),
            Some(&d) if d > 0 && dims.iter().all(|&x| x == d) => Ok(d),
            _ => Err(Error::Spec("matrix coefficients of different sizes".into())),
        }
    }

    /// Validates the spec and expands the coefficient tensors.
    pub fn expanded(&self) -> Result<Expanded> {
        let grid = self.grid()?;
        let c = self.components()?;
        let mut frac = Vec::new();
        for t in &self.fractional_terms {
            if t.word.is_empty() {
                return Err(Error::Spec("empty fractional word".into()));
            }
            let mut w = Vec::new();
            for &(axis, order) in &t.word {
                let spec = grid.axis(axis).map_err(|_| Error::Spec(format!("axis {axis} does not exist")))?;
                if spec.role != AxisRole::Fractional {
                    return Err(Error::Spec(format!("fractional word uses classical axis {axis}")));
                }
                if !(order > 0.0 && order < 2.0) {
                    return Err(Error::Spec(format!("fractional order {order} outside (0, 2)")));
                }
                w.push(Atom::Frac { axis, order });
            }
            frac.push((w, t.coeff.to_matrix(c)?));
        }
        let mut classical = Vec::new();
        for t in &self.classical_terms {
            if t.mu.is_empty() {
                return Err(Error::Spec("empty classical multi-index".into()));
            }
            if t.mu.len() > 4 {
                return Err(Error::Spec("classical terms above fourth order are not supported".into()));
            }
            for &axis in &t.mu {
                let spec = grid.axis(axis).map_err(|_| Error::Spec(format!("axis {axis} does not exist")))?;
                if spec.role != AxisRole::Classical {
                    return Err(Error::Spec(format!("classical multi-index uses fractional axis {axis}")));
                }
            }
            classical.push((t.mu.iter().map(|&a| Atom::Partial(a)).collect(), t.coeff.to_matrix(c)?));
        }
        let constant = match &self.constant_term {
            Some(k) => k.to_matrix(c)?,
            None => CoeffMatrix::scalar(c, 0.0),
        };
        Ok(Expanded {
            components: c,
            fractional: expand(frac, "fractional")?,
            classical: expand(classical, "classical")?,
            constant,
        })
    }
}
