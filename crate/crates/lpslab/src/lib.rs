//! lpslab: a numerical laboratory for Littlewood-Paley-Stein square
//! functions, Riesz transforms and R-boundedness constants of Schrödinger
//! operators L = Δ + V on weighted graphs.
//!
//! The crate discretizes the measured space as a weighted graph, assembles
//! L so that integration by parts is exact, provides the full spectral
//! functional calculus, evaluates the vertical square functions pointwise
//! (log-time quadrature cross-checked against a closed-form Gram oracle),
//! estimates L^p operator norms and R-bounds empirically, and runs a named,
//! seeded verification suite that confronts the transform-level inequalities
//! and the two counterexample families with numbers.

pub mod error;
pub mod functionals;
pub mod graph;
pub mod operator;
pub mod probes;
pub mod reverse_holder;
pub mod sobolev;
pub mod spectral;

pub use error::{DivergenceReport, Error, Result};
pub use graph::{
    build_connected_sum, build_grid, build_path_graph, build_radial_graph, CoefficientField,
    Edge, WeightedGraph,
};
pub use operator::{
    attach_divergence_form, attach_potential, attach_potential_fn, laplacian_bundle,
    GammaChannel, OperatorBundle,
};
pub use spectral::{
    apply_function, decompose, heat, inverse_sqrt, poisson, resolvent_power,
    BumpShape, DecomposeOptions, MultiplierFunction, SpectralDecomposition, TabulatedFn,
};
