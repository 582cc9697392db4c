//! Numerical core for Lyapunov exponents of 2x2 random matrix products in the
//! diffusion limit.
//!
//! The library is organized around six layers:
//!
//! * [`specfun`] — modified Bessel K at real/complex order, its order
//!   derivative, digamma, incomplete gamma, Bernoulli numbers.
//! * [`exact`] — closed-form Lyapunov exponent, invariant density, small-x
//!   expansions with rational coefficients, CLT variance.
//! * [`spectral`] — zeros of K at imaginary order, residues, dominant-pole
//!   machinery.
//! * [`mccoywu`] — the disordered-Ising stack: F(alpha; eta) and its divergent
//!   Taylor series, simplified integrals with digamma closed form, transfer
//!   matrix, beta_c, the beta <-> alpha bijection, free energy.
//! * [`simulate`] — Monte Carlo engines for the diffusion and the matrix
//!   product, with Lyapunov / invariant-measure / CLT estimators.
//! * [`dd`] and [`quad`] — double-double arithmetic and quadrature support.

pub mod dd;
pub mod exact;
pub mod quad;
pub mod simulate;
pub mod specfun;
pub mod spectral;

pub use exact::{
    ExactError, ExpansionResult, ModelParams, SingularKind, VarianceRegime, VarianceResult,
};
pub use simulate::{
    BaseDensity, DiffusionChart, DisorderLaw, HypothesisReport, MeasureReport, PathSummary,
    SimConfig, SimError,
};
pub use specfun::{Method, PrecisionPolicy, SpecFunError, SpecialEval};
pub use spectral::{ResidueData, SpectralError, SpectralZero};
