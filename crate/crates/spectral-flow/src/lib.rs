//! Spectral flow of paths of self-adjoint operators.
//!
//! The crate computes the spectral flow of a continuous path of symmetric
//! matrices (finite-dimensional self-adjoint operators) by three independent
//! methods — interval partition with admissible spectral levels, crossing
//! forms at regular crossings, and Morse-index differences — together with a
//! Z2-equivariant refinement taking values in the representation ring of the
//! two-element group. On top of the core engine sit two model front ends:
//!
//! * [`pde`]: Galerkin discretizations of an indefinite elliptic system on an
//!   interval with Dirichlet conditions, including a bifurcation report and a
//!   damped-Newton branch search.
//! * [`ham`]: first-order Hamiltonian systems on the real line with
//!   hyperbolic limits, where crossings of the path correspond to homoclinic
//!   solutions; the module provides a shooting pathway (stable/unstable
//!   frames and crossing forms) and a truncated-matrix pathway, and
//!   cross-checks them.
//!
//! Nonzero (equivariant) spectral flow across a parameter interval with
//! invertible endpoints certifies bifurcation of nontrivial solutions from
//! the trivial branch; zero flow is always reported as inconclusive.

pub mod equivariance;
pub mod ham;
pub mod linalg;
pub mod ode;
pub mod pde;
pub mod quadrature;
pub mod repring;
pub mod selftest;
pub mod sflcore;

pub use repring::RepRingElement;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not symmetric: max |M - M^T| entry {asym:.3e} exceeds tolerance {tol:.3e}")]
    NotSymmetric { asym: f64, tol: f64 },

    #[error("spectral count has an eigenvalue within {guard:.3e} of the interval edge {edge:.6e}")]
    BoundaryEigenvalue { edge: f64, guard: f64 },

    #[error("near-kernel ambiguity: {count} eigenvalue(s) in [{lo:.3e}, {hi:.3e}) under strict counting")]
    NearKernelAmbiguity { count: usize, lo: f64, hi: f64 },

    #[error("ambiguous kernel: eigenvalue magnitude inside the guard band ({lo:.3e}, {hi:.3e})")]
    AmbiguousKernel { lo: f64, hi: f64 },

    #[error("degenerate quadratic form: eigenvalue magnitude {value:.3e} at or below {tol:.3e}")]
    DegenerateForm { value: f64, tol: f64 },

    #[error("invalid involution: not symmetric-orthogonal with square identity (defect {defect:.3e})")]
    InvalidInvolution { defect: f64 },

    #[error("path is not equivariant: max |sigma L - L sigma| = {defect:.3e} at lambda = {lambda}")]
    NotEquivariant { defect: f64, lambda: f64 },

    #[error("endpoint operator at lambda = {lambda} is not invertible: smallest |eigenvalue| {smallest:.3e} < {tol:.3e}")]
    SingularEndpoint {
        lambda: f64,
        smallest: f64,
        tol: f64,
    },

    #[error("refinement limit: depth {depth} reached on [{lo:.6e}, {hi:.6e}] without admissible level")]
    RefinementLimit { depth: usize, lo: f64, hi: f64 },

    #[error("crossing at lambda = {lambda:.12e} is not regular: crossing-form eigenvalue {value:.3e} within {tol:.3e} of zero")]
    NonRegularCrossing { lambda: f64, value: f64, tol: f64 },

    #[error("computation pathways disagree: {0}")]
    PathwayDisagreement(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// True when the error reflects bad user input rather than a numerical
    /// breakdown; drivers map the two classes to different exit codes.
    pub fn is_invalid_input(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::InvalidInvolution { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
