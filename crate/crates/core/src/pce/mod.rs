//! Polynomial-chaos surrogates in the prior-standardized variable
//! `ξ = (m − mpr) / σpr`, built by quadrature projection or by
//! interpolation on stochastic-testing nodes, and the surrogate posterior.

pub mod basis;
pub mod posterior;
pub mod quadrature;
pub mod selection;
pub mod surrogate;

pub use basis::{hermite_eval, standardize, unstandardize, MultiIndexSet};
pub use posterior::{surrogate_map, SurrogatePosterior};
pub use quadrature::{gauss_hermite, sparse_rule, tensor_rule, QuadratureRule, RuleKind};
pub use selection::{stochastic_testing_select, Collocation};
pub use surrogate::{build_surrogate, Design, Surrogate};

/// Prior draws used as extra starting points by [`surrogate_map`].
pub const DEFAULT_STARTS: usize = 16;
