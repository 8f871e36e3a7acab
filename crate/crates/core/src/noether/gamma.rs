//! Bilinear forms `φ' Γ φ` built by splitting operator words.

use crate::error::{Error, Result};
use crate::fracops::frac_derivative;
use crate::grid::{classical_derivative, laplace_convolve, SampledField};

use super::spec::{Atom, CoeffMatrix, OperatorSpec};

/// One term `(left word φ') coeff (right word φ)`. Signs of left-acting
/// derivatives are already folded into `coeff`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearTerm {
    pub left: Vec<Atom>,
    pub right: Vec<Atom>,
    pub coeff: CoeffMatrix,
}

/// A sum of [`BilinearTerm`]s in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearForm {
    terms: Vec<BilinearTerm>,
}

impl BilinearForm {
    /// Merges terms with equal words, drops zero coefficients and sorts.
    pub fn new(terms: Vec<BilinearTerm>) -> Self {
        let mut out: Vec<BilinearTerm> = Vec::new();
        for t in terms {
            match out.iter_mut().find(|o| o.left == t.left && o.right == t.right) {
                Some(o) => o.coeff = o.coeff.plus(&t.coeff),
                None => out.push(t),
            }
        }
        out.retain(|t| !t.coeff.is_zero());
        out.sort_by(|a, b| a.left.cmp(&b.left).then_with(|| a.right.cmp(&b.right)));
        BilinearForm { terms: out }
    }

    pub fn terms(&self) -> &[BilinearTerm] {
        &self.terms
    }

    /// `Σ (left φ') coeff * (right φ)`: Laplace convolution over every
    /// fractional axis of the grid, pointwise product elsewhere, contracted
    /// over components.
    pub fn evaluate(&self, phi_prime: &SampledField, phi: &SampledField) -> Result<SampledField> {
        let mut acc = SampledField::zeros(phi.grid(), 1);
        for t in &self.terms {
            let l = apply_left(phi_prime, &t.left)?;
            let r = apply_right(phi, &t.right)?;
            acc = acc.add(&pair(&l, &t.coeff, &r)?)?;
        }
        Ok(acc)
    }
}

impl std::fmt::Display for BilinearForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            match t.coeff.as_scalar() {
                Some(c) => write!(f, "({c})")?,
                None => write!(f, "{:?}", t.coeff.data())?,
            }
            for a in &t.left {
                write!(f, " <{a}")?;
            }
            for a in &t.right {
                write!(f, " {a}>")?;
            }
        }
        Ok(())
    }
}

/// `l coeff * r` contracted to a scalar field.
pub(crate) fn pair(l: &SampledField, coeff: &CoeffMatrix, r: &SampledField) -> Result<SampledField> {
    if l.grid() != r.grid() {
        return Err(Error::GridMismatch("φ' and φ live on different grids".into()));
    }
    if l.components() != coeff.dim() || r.components() != coeff.dim() {
        return Err(Error::ComponentMismatch(format!(
            "fields with {} and {} components for a {}x{} coefficient",
            l.components(),
            r.components(),
            coeff.dim(),
            coeff.dim()
        )));
    }
    let r = match coeff.as_scalar() {
        Some(c) => r.scale_real(c),
        None => r.apply_matrix(&coeff.complex())?,
    };
    let frac = r.grid().fractional_axes();
    let prod = if frac.is_empty() { l.mul(&r)? } else { laplace_convolve(l, &r, &frac)? };
    Ok(prod.sum_components())
}

fn apply_atoms(f: &SampledField, atoms: impl Iterator<Item = Atom>) -> Result<SampledField> {
    let atoms: Vec<Atom> = atoms.collect();
    let mut out = f.clone();
    let mut i = 0;
    while i < atoms.len() {
        match atoms[i] {
            Atom::Partial(a) => {
                // consecutive derivatives along one axis use one stencil
                let mut n = 1;
                while i + n < atoms.len() && atoms[i + n] == Atom::Partial(a) {
                    n += 1;
                }
                out = classical_derivative(&out, a, n)?;
                i += n;
            }
            Atom::Frac { axis, order } => {
                out = frac_derivative(&out, order, axis)?;
                i += 1;
            }
        }
    }
    Ok(out)
}

/// `f ←A_1 ... ←A_n`: the first atom acts first.
pub fn apply_left(f: &SampledField, word: &[Atom]) -> Result<SampledField> {
    apply_atoms(f, word.iter().copied())
}

/// `A_1 ... A_n f`: the last atom acts first.
pub fn apply_right(f: &SampledField, word: &[Atom]) -> Result<SampledField> {
    apply_atoms(f, word.iter().rev().copied())
}

/// `Γ̃` per fractional atom and `Γ` per classical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSet {
    pub tilde: Vec<(Atom, BilinearForm)>,
    pub classical: Vec<(usize, BilinearForm)>,
}

impl GammaSet {
    pub fn tilde_for(&self, atom: Atom) -> Option<&BilinearForm> {
        self.tilde.iter().find(|(a, _)| *a == atom).map(|(_, f)| f)
    }

    pub fn classical_for(&self, axis: usize) -> Option<&BilinearForm> {
        self.classical.iter().find(|(a, _)| *a == axis).map(|(_, f)| f)
    }
}

/// Splits every word at each occurrence of an atom: the prefix acts on
/// `φ'` with sign `(-1)^{prefix length}`, the suffix acts on `φ`. The
/// classical split gives the usual `Γ_j` of a local operator; the fractional
/// split carries the extra factor 2 of the symmetric Leibniz rule.
fn split_words(words: &[(Vec<Atom>, CoeffMatrix)], factor: f64) -> Vec<(Atom, BilinearTerm)> {
    let mut out = Vec::new();
    for (w, c) in words {
        for (k, &a) in w.iter().enumerate() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            out.push((
                a,
                BilinearTerm { left: w[..k].to_vec(), right: w[k + 1..].to_vec(), coeff: c.scaled(sign * factor) },
            ));
        }
    }
    out
}

fn group(split: Vec<(Atom, BilinearTerm)>) -> Vec<(Atom, BilinearForm)> {
    let mut keys: Vec<Atom> = split.iter().map(|(a, _)| *a).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let terms = split.iter().filter(|(a, _)| *a == k).map(|(_, t)| t.clone()).collect();
            (k, BilinearForm::new(terms))
        })
        .collect()
}

/// Builds `Γ̃` and `Γ` for a spec.
pub fn build_gamma(spec: &OperatorSpec) -> Result<GammaSet> {
    let ex = spec.expanded()?;
    let tilde = group(split_words(&ex.fractional, 2.0));
    let classical = group(split_words(&ex.classical, 1.0)).into_iter().map(|(a, f)| (a.axis(), f)).collect();
    Ok(GammaSet { tilde, classical })
}
