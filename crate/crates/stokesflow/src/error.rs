//! Error type shared across the crate.

use crate::reflections::IterationReport;

/// Everything that can go wrong in the solver library.
///
/// Variants carry enough context to name the offending particle, point, or
/// quantity; the CLI maps them onto its documented exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input that is not one of the more specific cases below.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A particle radius was zero or negative.
    #[error("particle {index} has non-positive radius {radius}")]
    NonPositiveRadius { index: usize, radius: f64 },

    /// Two closed balls intersect.
    #[error("particles {i} and {j} overlap (center distance {distance} <= radius sum {radius_sum})")]
    Overlap {
        i: usize,
        j: usize,
        distance: f64,
        radius_sum: f64,
    },

    /// The Poisson-disk sampler ran out of attempts.
    #[error("placement failed: requested {requested} particles, placed {achieved} within the attempt budget")]
    GenerationFailed { requested: usize, achieved: usize },

    /// Evaluation exactly at a kernel singularity.
    #[error("singular evaluation at ({x}, {y}, {z})")]
    SingularEvaluation { x: f64, y: f64, z: f64 },

    /// Gradient/strain evaluation on a source sphere surface, where the
    /// tangential derivative jumps. Raised by bare kernels that do not know
    /// which particle they belong to; field-level evaluation upgrades it to
    /// [`Error::OnSurface`].
    #[error("gradient evaluated on a source sphere surface")]
    OnSurfacePoint,

    /// Gradient/strain evaluation on the surface of a specific particle.
    #[error("gradient evaluated on the surface of particle {particle}")]
    OnSurface { particle: usize },

    /// Quadrature order below the documented floor.
    #[error("quadrature order {order} (radial {radial}) below the floor: surface degree >= {min_order}, radial points >= {min_radial}")]
    QuadratureFloor {
        order: usize,
        radial: usize,
        min_order: usize,
        min_radial: usize,
    },

    /// The collocation design matrix is unusable even after truncation.
    #[error("collocation basis ill-conditioned (condition number {cond:.3e}); reduce the truncation degree")]
    IllConditioned { cond: f64 },

    /// A coefficient update produced NaN or infinity.
    #[error("non-finite coefficient at particle {particle}: iteration diverged")]
    NonFiniteCoefficient { particle: usize },

    /// A reflection iterate left the divergence guard; the report of the run
    /// so far rides along for post-mortem inspection.
    #[error("iteration diverged: residual exceeded 10x the initial residual at iteration {}", report.iterations())]
    Diverged { report: Box<IterationReport> },

    /// An eigenvalue iteration did not settle within its budget.
    #[error("eigen iteration did not converge within {budget} steps (last estimate {last})")]
    EigenNoConvergence { budget: usize, last: f64 },

    /// Normalization by a zero ambient strain.
    #[error("ambient strain is zero; the normalized viscosity increment is undefined")]
    ZeroStrain,

    /// Two flow fields or a field and a configuration disagree about the
    /// particles they describe.
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
}
