//! Numerical verification lab for connection theory on extensions of
//! transitive Lie groupoids over principal bundles.
//!
//! The library wires together four layers:
//!
//! * a tiny expression DSL ([`expr`]) used for all user-supplied coefficient
//!   functions, with finite-difference differentiation;
//! * concrete matrix Lie groups ([`liegroup`]) and charted principal bundles
//!   ([`bundle`]) at desk scale: SU(2), SO(3), U(1), SO(2), user-defined
//!   bases, and the SU(2) → S² fibration built from its two stereographic
//!   charts;
//! * the geometric core: trivial extension groupoids ([`groupoid`]) and
//!   algebroids ([`algebroid`]), equivariant ("isometablic") connections and
//!   their curvature ([`connection`]), transition data on chart overlaps
//!   ([`transition`]), and path lifting / holonomy ([`holonomy`]) up to the
//!   Ambrose–Singer comparison of holonomy and curvature algebras;
//! * artifact plumbing: JSON experiment specs and canonical reports
//!   ([`io`]), a check runner ([`runner`]), and shipped example specs
//!   ([`presets`]).
//!
//! Everything is deterministic: randomized checks draw from a counter-based
//! generator seeded explicitly, and reports serialize canonically so equal
//! inputs produce byte-identical output.

pub mod algebroid;
pub mod bundle;
pub mod connection;
mod error;
pub mod expr;
pub mod groupoid;
pub mod holonomy;
pub mod io;
pub mod liegroup;
pub mod linalg;
pub mod presets;
pub mod runner;
pub mod transition;

pub use error::{Error, Result};
