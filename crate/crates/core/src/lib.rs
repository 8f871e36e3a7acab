//! Riemann-Liouville calculus in the Laplace-convolution algebra.

pub mod diffusion;
pub mod error;
pub mod fracops;
pub mod grid;
pub mod mlfunc;
pub mod noether;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};
pub use grid::{AxisRole, AxisSpec, Grid, SampledField, Term, Topology};

// The guide's snippets run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/mittag-leffler.md")]
    mod mittag_leffler {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/currents.md")]
    mod currents {}
    #[doc = include_str!("../../../book/src/specs.md")]
    mod specs {}
}
