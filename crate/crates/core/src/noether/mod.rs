//! Stationarity-conservation laws: `Γ` forms, currents and charges.

mod current;
mod gamma;
mod spec;

pub use current::*;
pub use gamma::{apply_left, apply_right, build_gamma, BilinearForm, BilinearTerm, GammaSet};
pub use spec::{Atom, ClassicalTerm, Coeff, CoeffMatrix, Expanded, FractionalTerm, OperatorSpec};
