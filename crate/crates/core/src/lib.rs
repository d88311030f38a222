//! Finite element solvers for elliptic optimal control problems with
//! pointwise state constraints.
//!
//! Penalizing the control in an energy norm lets it be eliminated, leaving a
//! variational inequality for the state alone (plus a harmonic constraint for
//! boundary control). The crate builds these inequalities with linear
//! elements on nested triangulations and solves them by projection gradient,
//! PDHG, an interior point method or, for gradient constraints, penalized
//! semismooth Newton.
//!
//! ```
//! use energy_vi::problems::parse_case;
//! use energy_vi::study::{SolveOptions, solve_case};
//!
//! let spec = parse_case("distributed:2").unwrap();
//! let sol = solve_case(&spec, 2, &SolveOptions::default_for(spec.kind)).unwrap();
//! assert!(sol.bundle.final_residual < 5e-8);
//! ```
//!
//! The guide in `book/` covers the formulation and each solver.

pub mod error;
pub mod fem;
pub mod gradient_ssn;
pub mod linsolve;
pub mod mesh;
pub mod problems;
pub mod recovery;
pub mod solvers;
pub mod sparse;
pub mod study;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/meshes.md")]
    mod meshes {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/gradient.md")]
    mod gradient {}
    #[doc = include_str!("../../../book/src/studies.md")]
    mod studies {}
}
