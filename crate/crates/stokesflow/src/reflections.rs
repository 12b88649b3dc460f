//! The iteration engine: simultaneous radiated corrections with optional
//! relaxation, residual tracking, and termination.
//!
//! One step replaces the field v by v - gamma sum_i Q_i v, where Q_i v is the
//! degree-truncated correction of particle i computed from the CURRENT field
//! (Jacobi style; a sequential sweep would be a different operator with
//! different constants). The rigid part of each local projection is reported
//! but radiates nothing: force- and torque-free particles are free to
//! translate and rotate, so rigid data is admissible, not an error.
//!
//! The residual r_k is the L^q norm of the strain over the union of balls.
//! Runs terminate on r_k <= tol * r_0, on the iteration cap, or on the
//! divergence guard r_k > 10 * r_0; the guard exists because the unrelaxed
//! sequence is not a priori bounded for clustered configurations, and it
//! converts runaway growth into a diagnosable error carrying the partial
//! report.

use std::time::Instant;

use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::fields::{AmbientField, CollocationTerm, FlowField, TracelessSym3, COLLOCATION_DIM};
use crate::geometry::{validate_config, ParticleConfig};
use crate::moments::{apply_q_collocation, SphereQuadrature};
use crate::util::{line_fit, Kahan};
use crate::{Error, Result};

/// Iterations excluded from the head of every geometric-rate fit: the first
/// steps mix transient modes and would bias the asymptotic ratio.
const RATE_FIT_DROP: usize = 2;

/// Residual growth factor that declares divergence.
const DIVERGENCE_FACTOR: f64 = 10.0;

// ---------------------------------------------------------------------------
// Options
// ---------------------------------------------------------------------------

/// Knobs of the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Truncation degree: 1 = dipole only, 2 = dipole plus collocation.
    pub degree: u8,
    /// Relaxation factor in (0, 1]; 1 is the unrelaxed method.
    pub gamma: f64,
    pub max_iterations: usize,
    /// Relative tolerance: terminate once r_k <= tolerance * r_0.
    pub tolerance: f64,
    /// Exponent of the residual norm over the union of balls; q > 1.
    pub q: f64,
    /// Surface exactness degree of the moment quadrature (radial order is
    /// paired automatically at half the surface order).
    pub quadrature_order: usize,
    /// Number of trailing residuals used by the geometric-rate fit.
    pub window: usize,
    /// Retain per-iteration dipole coefficients in the report.
    pub record_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            degree: 1,
            gamma: 1.0,
            max_iterations: 100,
            tolerance: 1e-8,
            q: 2.0,
            quadrature_order: 17,
            window: 5,
            record_history: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.degree != 1 && self.degree != 2 {
            return Err(Error::InvalidInput(format!(
                "truncation degree must be 1 or 2, got {}",
                self.degree
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "relaxation factor must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be positive and finite, got {}",
                self.tolerance
            )));
        }
        if !(self.q > 1.0 && self.q.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "residual exponent must lie in (1, inf), got {}",
                self.q
            )));
        }
        Ok(())
    }

    /// The ball rule implied by `quadrature_order`.
    pub fn quadrature(&self) -> Result<SphereQuadrature> {
        let radial = (self.quadrature_order / 2).max(SphereQuadrature::MIN_RADIAL);
        SphereQuadrature::new(self.quadrature_order, radial)
    }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Why a run stopped.
#[derive(Clone, Copy, Debug, Eq, PartialEq)]
pub enum Terminated {
    Tolerance,
    MaxIterations,
    Diverged,
}

impl Terminated {
    pub fn as_str(&self) -> &'static str {
        match self {
            Terminated::Tolerance => "tol",
            Terminated::MaxIterations => "max",
            Terminated::Diverged => "div",
        }
    }
}

/// Everything a run measured. `residuals` always includes the initial
/// residual, so its length is the iteration count plus one.
#[derive(Clone, Debug)]
pub struct IterationReport {
    pub residuals: Vec<f64>,
    /// Largest dipole-coefficient update (Frobenius) per iteration.
    pub max_updates: Vec<f64>,
    /// Seconds spent in each iteration.
    pub wall_times: Vec<f64>,
    /// Geometric contraction ratio fitted over the trailing window.
    pub rho: f64,
    pub terminated: Terminated,
    pub phi0: f64,
    pub options: SolverOptions,
    /// Per-iteration dipole coefficients (index 0 = initial state), kept only
    /// when the options ask for it.
    pub coefficient_history: Option<Vec<Vec<TracelessSym3>>>,
}

impl IterationReport {
    pub fn iterations(&self) -> usize {
        self.residuals.len().saturating_sub(1)
    }
}

impl Serialize for IterationReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_struct("IterationReport", 6)?;
        m.serialize_field("residuals", &self.residuals)?;
        m.serialize_field("rho", &self.rho)?;
        m.serialize_field("iterations", &self.iterations())?;
        m.serialize_field("terminated", self.terminated.as_str())?;
        m.serialize_field("phi0", &self.phi0)?;
        m.serialize_field("options", &self.options)?;
        m.end()
    }
}

// ---------------------------------------------------------------------------
// Rate fit
// ---------------------------------------------------------------------------

/// Geometric ratio from a least-squares line on log r_k.
///
/// The fit keeps the trailing `window` residuals (all of them when `window`
/// is zero or larger than the sequence), then discards iterations before
/// [`RATE_FIT_DROP`]; if fewer than two points survive, it falls back to the
/// final two residuals. Fewer than two residuals give zero.
pub fn fit_rho(residuals: &[f64], window: usize) -> f64 {
    let n = residuals.len();
    if n < 2 {
        return 0.0;
    }
    let start = if window > 0 && n > window { n - window } else { 0 };
    let keep = |lo: usize| -> (Vec<f64>, Vec<f64>) {
        (lo..n)
            .map(|k| (k as f64, residuals[k].max(f64::MIN_POSITIVE).ln()))
            .unzip()
    };
    let lo = start.max(RATE_FIT_DROP);
    let (ks, logs) = if n - lo >= 2 { keep(lo) } else { keep(n - 2) };
    let (slope, _, _) = line_fit(&ks, &logs);
    slope.exp()
}

// ---------------------------------------------------------------------------
// Residual norm
// ---------------------------------------------------------------------------

fn check_consistency(field: &FlowField, cfg: &ParticleConfig) -> Result<()> {
    if field.terms.len() != cfg.len() {
        return Err(Error::ConfigMismatch(format!(
            "field carries {} terms, configuration {} particles",
            field.terms.len(),
            cfg.len()
        )));
    }
    for (i, (t, p)) in field.terms.iter().zip(&cfg.particles).enumerate() {
        if t.center() != p.center || t.radius() != p.radius {
            return Err(Error::ConfigMismatch(format!(
                "term {i} does not sit on particle {i}"
            )));
        }
    }
    Ok(())
}

/// L^q norm of the field's strain over the union of balls:
/// (sum_i R_i^3 integral over the unit ball of |e|^q)^(1/q), with the
/// Frobenius norm pointwise. Ball quadrature, fixed particle order,
/// compensated sums.
pub fn residual_norm(
    field: &FlowField,
    cfg: &ParticleConfig,
    q: f64,
    quad: &SphereQuadrature,
) -> Result<f64> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "residual exponent must lie in (1, inf), got {q}"
        )));
    }
    check_consistency(field, cfg)?;
    let per_ball: Vec<f64> = cfg
        .particles
        .par_iter()
        .map(|p| -> Result<f64> {
            let mut acc = Kahan::new();
            for &(y, w) in quad.ball() {
                let e = field.strain(&(p.center + y * p.radius))?;
                acc.add(w * e.frobenius().powf(q));
            }
            Ok(acc.total() * p.radius.powi(3))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Kahan::new();
    for v in per_ball {
        total.add(v);
    }
    Ok(total.total().powf(1.0 / q))
}

// ---------------------------------------------------------------------------
// One step
// ---------------------------------------------------------------------------

/// One simultaneous correction sweep. Returns the new field; `gamma = 0`
/// returns the input bit for bit.
pub fn reflection_step(
    field: &FlowField,
    cfg: &ParticleConfig,
    opts: &SolverOptions,
) -> Result<FlowField> {
    let quad = opts.quadrature()?;
    step_with_quad(field, cfg, opts, &quad).map(|(f, _)| f)
}

/// Step plus the largest dipole-coefficient update, with a caller-owned
/// quadrature so runs build the node set once.
fn step_with_quad(
    field: &FlowField,
    cfg: &ParticleConfig,
    opts: &SolverOptions,
    quad: &SphereQuadrature,
) -> Result<(FlowField, f64)> {
    check_consistency(field, cfg)?;
    if opts.gamma == 0.0 {
        return Ok((field.clone(), 0.0));
    }
    // Moments of the current field, all particles against the same iterate.
    let projections = (0..field.terms.len())
        .into_par_iter()
        .map(|i| apply_q_collocation(field, i, opts.degree, quad))
        .collect::<Result<Vec<_>>>()?;

    let mut next = field.clone();
    let mut max_update = 0.0f64;
    for (i, proj) in projections.into_iter().enumerate() {
        let update = proj.dipole.coefficient * opts.gamma;
        if !update.frobenius().is_finite() {
            return Err(Error::NonFiniteCoefficient { particle: i });
        }
        max_update = max_update.max(update.frobenius());
        let term = &mut next.terms[i];
        term.dipole.coefficient = term.dipole.coefficient - update;
        if let Some(fit) = proj.collocation {
            let mut coeff = term
                .collocation
                .as_ref()
                .map(|c| c.coefficients)
                .unwrap_or([0.0; COLLOCATION_DIM]);
            let mut any = false;
            for (c, f) in coeff.iter_mut().zip(&fit.coefficients) {
                *c -= opts.gamma * f;
                if !c.is_finite() {
                    return Err(Error::NonFiniteCoefficient { particle: i });
                }
                any |= *c != 0.0;
            }
            term.collocation = if any || term.collocation.is_some() {
                Some(CollocationTerm::new(term.center(), term.radius(), coeff))
            } else {
                None
            };
        }
    }
    Ok((next, max_update))
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

fn diverged(r_k: f64, r_0: f64) -> bool {
    !(r_k <= DIVERGENCE_FACTOR * r_0)
}

/// Iterate from the ambient field until tolerance, the iteration cap, or the
/// divergence guard. Requires a valid configuration with margin
/// (`theta_max > 1`). A divergence error carries the report for post-mortem.
pub fn run(
    cfg: &ParticleConfig,
    ambient: AmbientField,
    opts: &SolverOptions,
) -> Result<(FlowField, IterationReport)> {
    opts.validate()?;
    let v = validate_config(cfg)?;
    if !v.disjoint {
        let &(i, j) = v.overlapping.first().expect("non-disjoint lists a pair");
        let distance = (cfg.particles[i].center - cfg.particles[j].center).norm();
        return Err(Error::Overlap {
            i,
            j,
            distance,
            radius_sum: cfg.particles[i].radius + cfg.particles[j].radius,
        });
    }
    if !(v.theta_max > 1.0) {
        return Err(Error::InvalidInput(format!(
            "configuration needs separation margin theta_max > 1, got {}",
            v.theta_max
        )));
    }
    let quad = opts.quadrature()?;

    let mut field = FlowField::initial(ambient, cfg);
    let r_0 = residual_norm(&field, cfg, opts.q, &quad)?;
    let mut residuals = vec![r_0];
    let mut max_updates = Vec::new();
    let mut wall_times = Vec::new();
    let mut history = opts.record_history.then(|| vec![coefficients(&field)]);

    let mut terminated = Terminated::MaxIterations;
    for _ in 1..=opts.max_iterations {
        let t = Instant::now();
        let (next, upd) = step_with_quad(&field, cfg, opts, &quad)?;
        field = next;
        wall_times.push(t.elapsed().as_secs_f64());
        max_updates.push(upd);
        let r_k = residual_norm(&field, cfg, opts.q, &quad)?;
        residuals.push(r_k);
        if let Some(h) = history.as_mut() {
            h.push(coefficients(&field));
        }
        if diverged(r_k, r_0) {
            let report = IterationReport {
                rho: fit_rho(&residuals, opts.window),
                residuals,
                max_updates,
                wall_times,
                terminated: Terminated::Diverged,
                phi0: v.phi0,
                options: *opts,
                coefficient_history: history,
            };
            return Err(Error::Diverged {
                report: Box::new(report),
            });
        }
        if r_k <= opts.tolerance * r_0 {
            terminated = Terminated::Tolerance;
            break;
        }
    }
    let report = IterationReport {
        rho: fit_rho(&residuals, opts.window),
        residuals,
        max_updates,
        wall_times,
        terminated,
        phi0: v.phi0,
        options: *opts,
        coefficient_history: history,
    };
    Ok((field, report))
}

fn coefficients(field: &FlowField) -> Vec<TracelessSym3> {
    field.terms.iter().map(|t| t.dipole.coefficient).collect()
}
