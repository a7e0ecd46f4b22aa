//! Exact bilinearization of control-affine systems `ẋ = f(x) + Σ uᵢ gᵢ(x)`.
//!
//! The [`engine`] iterates Lie derivation of a seed function space until the chain
//! of spaces stabilizes; a stabilized space yields an embedding `z = Ψ(x)` under
//! which the dynamics are exactly `ż = Az + D₀ + Σ uᵢ (Bᵢz + Dᵢ)`. The remaining
//! modules use that bilinear form for simulation ([`sim`]), reachable-set sampling
//! and Lie-rank checks ([`reach`]), and feedback or open-loop control ([`control`]).
//!
//! ```
//! use ebif::engine::{ebif_run, extract_bilinear, EbifConfig, ConstantMode, NonlinearSystem};
//!
//! let sys = NonlinearSystem::parse(
//!     "unicycle",
//!     3,
//!     &["0", "0", "0"],
//!     &[vec!["cos(x3)", "sin(x3)", "0"], vec!["0", "0", "1"]],
//! )
//! .unwrap();
//! let cfg = EbifConfig::coordinates(3).with_mode(ConstantMode::Augment);
//! let outcome = ebif_run(&sys, &cfg).unwrap();
//! assert_eq!(outcome.k_star, Some(1));
//! let real = extract_bilinear(&sys, &outcome, &cfg).unwrap();
//! assert_eq!(real.r(), 6);
//! ```

// `!(x > 0.0)` is used deliberately so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod engine;
pub mod error;
pub mod io;
pub mod linalg;
pub mod par;
pub mod reach;
pub mod sim;
pub mod symbolic;

pub use error::{ControlError, EngineError, IoError, ReachError, SimError, SymbolicError};
pub use par::Execution;
