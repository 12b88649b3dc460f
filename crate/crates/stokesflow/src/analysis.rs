//! Measurement instruments: contraction sweeps, spectral estimates on the
//! dipole subspace, kernel decay checks, boundary-average superconvergence,
//! and the dilute effective-viscosity estimate.
//!
//! Everything here reports on the dipole shadow of the interaction operator:
//! the finite matrix obtained by restricting the correction map to simple
//! dipole coefficients, five degrees of freedom per particle. That is the
//! part the truncation actually exercises, and every report says so rather
//! than claiming statements about the full operator.
//!
//! Rate fits discard the first two iterations (startup transient) and run
//! least squares on log residuals; sweeps parallelize over configurations,
//! matrix assembly over rows. All estimates are dimensionless, so uniformly
//! rescaling every length leaves them unchanged, which the suite checks.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::fields::{
    AmbientField, CollocationTerm, DipoleTerm, FlowField, TracelessSym3, COLLOCATION_DIM,
};
use crate::geometry::{generate_lattice, generate_poisson_disk, validate_config, Box3,
    ParticleConfig, SplitMix64};
use crate::moments::SphereQuadrature;
use crate::reflections::{run, SolverOptions};
use crate::util::{line_fit, Kahan, KahanMat3, KahanVec3};
use crate::{Error, Result};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Relative Rayleigh-quotient increment below which an eigen-iteration is
/// considered settled.
const EIGEN_EPS: f64 = 1e-10;

/// The probe strain used by sweeps: a unit shear with off-diagonal 1/2.
/// Contraction ratios are independent of the probe by linearity.
fn probe_strain() -> TracelessSym3 {
    TracelessSym3::from_components(0.0, 0.5, 0.0, 0.0, 0.0)
}

// ---------------------------------------------------------------------------
// Contraction sweep
// ---------------------------------------------------------------------------

/// A one-parameter family of configurations indexed by the dilution
/// parameter phi0 = (r_max / d_min)^3.
#[derive(Clone, Debug)]
pub enum ConfigFamily {
    /// n^3 cubic lattice with unit spacing; phi0 sets the radius
    /// phi0^(1/3). Realizable while the balls stay disjoint (phi0 < 1/8).
    Lattice { n: usize },
    /// Poisson-disk cloud of `count` spheres in a cubic box; phi0 sets the
    /// radius relative to the mean spacing `box_size / count^(1/3)`.
    Poisson {
        count: usize,
        box_size: f64,
        min_gap: f64,
        seed: u64,
    },
}

impl ConfigFamily {
    pub fn realize(&self, phi0: f64) -> Result<ParticleConfig> {
        if !(phi0 > 0.0 && phi0.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "phi0 must be positive and finite, got {phi0}"
            )));
        }
        match *self {
            ConfigFamily::Lattice { n } => {
                let radius = phi0.cbrt();
                if n > 1 && radius >= 0.5 {
                    return Err(Error::InvalidInput(format!(
                        "phi0 = {phi0} puts lattice spheres in contact (radius {radius} >= 1/2)"
                    )));
                }
                generate_lattice(n, 1.0, radius)
            }
            ConfigFamily::Poisson {
                count,
                box_size,
                min_gap,
                seed,
            } => {
                let spacing = box_size / (count as f64).cbrt();
                let radius = phi0.cbrt() * spacing;
                let container = Box3::new(Vector3::zeros(), Vector3::repeat(box_size));
                generate_poisson_disk(count, container, min_gap, radius, seed)
            }
        }
    }

    fn seed(&self) -> u64 {
        match *self {
            ConfigFamily::Lattice { .. } => 0,
            ConfigFamily::Poisson { seed, .. } => seed,
        }
    }
}

/// One sweep point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepRow {
    pub phi0: f64,
    /// Fitted contraction ratio of the run; meaningless when `diverged`.
    pub rho: f64,
    /// Particle count.
    pub n: usize,
    pub seed: u64,
    pub theta_max: f64,
    pub iterations: usize,
    /// The run tripped the divergence guard; the row is excluded from fits.
    pub diverged: bool,
}

/// Sweep rows plus the log-log regression of rho against phi0.
#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub family: String,
    pub rows: Vec<SweepRow>,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

impl SweepResult {
    /// Rows that enter the regression: finite positive rho, positive phi0
    /// (which excludes single-particle configurations, whose one-step
    /// exactness would put log 0 in the fit), and no divergence flag.
    pub fn fitted_rows(&self) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| !r.diverged && r.phi0 > 0.0 && r.rho > 0.0 && r.rho.is_finite())
            .collect()
    }

    /// Recompute the regression from the stored rows.
    pub fn refit(&self) -> (f64, f64, f64) {
        let rows = self.fitted_rows();
        if rows.len() < 2 {
            return (f64::NAN, f64::NAN, f64::NAN);
        }
        let xs: Vec<f64> = rows.iter().map(|r| r.phi0.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.rho.ln()).collect();
        line_fit(&xs, &ys)
    }
}

/// Run the solver across `phi0_list` for one family and fit
/// log rho = slope * log phi0 + intercept.
///
/// Divergent runs are kept as flagged rows and excluded from the fit; any
/// other error aborts the sweep. Configurations are processed in parallel.
pub fn contraction_sweep(
    family: &ConfigFamily,
    phi0_list: &[f64],
    opts: &SolverOptions,
) -> Result<SweepResult> {
    if phi0_list.is_empty() {
        return Err(Error::InvalidInput("empty phi0 list".into()));
    }
    opts.validate()?;
    let rows = phi0_list
        .par_iter()
        .map(|&phi0| -> Result<SweepRow> {
            let cfg = family.realize(phi0)?;
            let n = cfg.len();
            let theta_max = cfg.theta_max();
            match run(&cfg, AmbientField::LinearStrain(probe_strain()), opts) {
                Ok((_, report)) => Ok(SweepRow {
                    phi0: report.phi0,
                    rho: report.rho,
                    n,
                    seed: family.seed(),
                    theta_max,
                    iterations: report.iterations(),
                    diverged: false,
                }),
                Err(Error::Diverged { report }) => Ok(SweepRow {
                    phi0: report.phi0,
                    rho: report.rho,
                    n,
                    seed: family.seed(),
                    theta_max,
                    iterations: report.iterations(),
                    diverged: true,
                }),
                Err(other) => Err(other),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = SweepResult {
        family: format!("{family:?}"),
        rows,
        slope: f64::NAN,
        intercept: f64::NAN,
        stderr: f64::NAN,
    };
    let (slope, intercept, stderr) = out.refit();
    out.slope = slope;
    out.intercept = intercept;
    out.stderr = stderr;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dipole interaction matrix
// ---------------------------------------------------------------------------

/// The dipole shadow of the correction operator: the linear map taking
/// stacked coefficients {S_j} (five components each, orthonormal basis) to
/// the ball averages of the strain of sum_j w_{S_j} over every ball.
///
/// Self-blocks are the identity by construction (the interior strain of a
/// ball's own dipole is its coefficient, exactly); cross-blocks are computed
/// by ball quadrature, rows in parallel.
#[derive(Clone, Debug)]
pub struct DipoleInteractionMatrix {
    matrix: DMatrix<f64>,
    radii: Vec<f64>,
}

impl DipoleInteractionMatrix {
    pub fn assemble(cfg: &ParticleConfig, quad: &SphereQuadrature) -> Result<Self> {
        let v = validate_config(cfg)?;
        if !(v.disjoint && v.theta_max > 1.0) {
            return Err(Error::InvalidInput(format!(
                "interaction matrix needs a disjoint configuration with margin, theta_max = {}",
                v.theta_max
            )));
        }
        let n = cfg.len();
        let basis = TracelessSym3::basis();
        let block_rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<Vec<f64>> {
                let pi = &cfg.particles[i];
                let mut row = vec![0.0; 5 * 5 * n];
                for j in 0..n {
                    for (p, b) in basis.iter().enumerate() {
                        let col = 5 * j + p;
                        if j == i {
                            row[5 * col + p] = 1.0;
                            continue;
                        }
                        let pj = &cfg.particles[j];
                        let term = DipoleTerm::new(pj.center, pj.radius, *b);
                        let mut acc = KahanMat3::new();
                        for &(y, w) in quad.ball() {
                            let g = term.gradient(&(pi.center + y * pi.radius))?;
                            acc.add(&(g * w));
                        }
                        let avg = acc.total() / (FOUR_PI / 3.0);
                        let s = TracelessSym3::from_matrix(&avg).to_array5();
                        for (a, &sv) in s.iter().enumerate() {
                            row[5 * col + a] = sv;
                        }
                    }
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut matrix = DMatrix::zeros(5 * n, 5 * n);
        for (i, row) in block_rows.iter().enumerate() {
            for col in 0..5 * n {
                for a in 0..5 {
                    matrix[(5 * i + a, col)] = row[5 * col + a];
                }
            }
        }
        Ok(Self {
            matrix,
            radii: cfg.particles.iter().map(|p| p.radius).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, coefficients: &[TracelessSym3]) -> Vec<TracelessSym3> {
        let n = self.len();
        assert_eq!(coefficients.len(), n, "coefficient count must match");
        let mut x = DVector::zeros(5 * n);
        for (j, s) in coefficients.iter().enumerate() {
            for (a, v) in s.to_array5().iter().enumerate() {
                x[5 * j + a] = *v;
            }
        }
        let y = &self.matrix * x;
        (0..n)
            .map(|i| {
                let mut a5 = [0.0; 5];
                for a in 0..5 {
                    a5[a] = y[5 * i + a];
                }
                TracelessSym3::from_array5(&a5)
            })
            .collect()
    }

    /// The map conjugated into the energy inner product
    /// (weights R_i^3 per particle) and symmetrized there.
    pub fn symmetrized_energy(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut b = self.matrix.clone();
        for i in 0..n {
            for j in 0..n {
                let scale = (self.radii[i].powi(3) / self.radii[j].powi(3)).sqrt();
                for a in 0..5 {
                    for c in 0..5 {
                        b[(5 * i + a, 5 * j + c)] *= scale;
                    }
                }
            }
        }
        let bt = b.transpose();
        (b + bt) * 0.5
    }

    /// Largest entry-wise asymmetry of D M against its transpose, D the
    /// energy weight; zero for an exactly self-adjoint shadow.
    pub fn energy_symmetry_defect(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for i in 0..5 * n {
            for j in 0..5 * n {
                let di = self.radii[i / 5].powi(3);
                let dj = self.radii[j / 5].powi(3);
                let a = di * self.matrix[(i, j)];
                let b = dj * self.matrix[(j, i)];
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// Spectral estimates
// ---------------------------------------------------------------------------

/// Rayleigh-quotient estimates on the dipole shadow, energy inner product.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SpectrumEstimate {
    /// Operator-norm estimate; equals `max_rayleigh` because the symmetrized
    /// shadow is self-adjoint and nonnegative.
    pub norm: f64,
    pub max_rayleigh: f64,
    pub min_rayleigh: f64,
    /// Matrix-vector products spent on (largest, smallest).
    pub iterations_used: (usize, usize),
}

fn deterministic_unit(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut v = DVector::from_fn(n, |_, _| rng.next_f64() - 0.5);
    let norm = v.norm();
    v /= norm;
    v
}

fn power_iteration(
    b: &DMatrix<f64>,
    budget: usize,
    seed: u64,
    mut advance: impl FnMut(&DVector<f64>) -> DVector<f64>,
) -> Result<(f64, usize)> {
    let n = b.nrows();
    let mut v = deterministic_unit(n, seed);
    let mut last = f64::NAN;
    for k in 1..=budget {
        let w = advance(&v);
        let norm = w.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::EigenNoConvergence { budget, last });
        }
        v = w / norm;
        let quotient = v.dot(&(b * &v));
        if k >= 3 && (quotient - last).abs() <= EIGEN_EPS * quotient.abs().max(1.0) {
            return Ok((quotient, k));
        }
        last = quotient;
    }
    Err(Error::EigenNoConvergence { budget, last })
}

/// Largest and smallest Rayleigh quotients of the dipole shadow in the
/// energy pairing: direct power iteration for the top, inverse iteration for
/// the bottom, both from deterministic seeded start vectors.
pub fn operator_norm_estimate(
    cfg: &ParticleConfig,
    quad: &SphereQuadrature,
    iterations: usize,
) -> Result<SpectrumEstimate> {
    let m = DipoleInteractionMatrix::assemble(cfg, quad)?;
    let b = m.symmetrized_energy();

    let (max_rayleigh, used_max) = power_iteration(&b, iterations, 1, |v| &b * v)?;

    // Inverse iteration drives the smallest Rayleigh quotient; Cholesky when
    // the form is numerically definite, LU otherwise. A solve failure yields
    // the zero vector, which the iteration reports as non-convergence.
    let chol = b.clone().cholesky();
    let lu = if chol.is_none() { Some(b.clone().lu()) } else { None };
    let n = b.nrows();
    let (min_rayleigh, used_min) = power_iteration(&b, iterations, 2, |v| match (&chol, &lu) {
        (Some(c), _) => c.solve(v),
        (None, Some(l)) => l.solve(v).unwrap_or_else(|| DVector::zeros(n)),
        (None, None) => unreachable!(),
    })?;

    Ok(SpectrumEstimate {
        norm: max_rayleigh,
        max_rayleigh,
        min_rayleigh,
        iterations_used: (used_max, used_min),
    })
}

// ---------------------------------------------------------------------------
// Decay slopes
// ---------------------------------------------------------------------------

/// Which radiated kernel to probe.
#[derive(Clone, Debug)]
pub enum DecayKind {
    Dipole(TracelessSym3),
    Collocation([f64; COLLOCATION_DIM]),
}

/// Log-log slopes of the far-field magnitudes, or an exact-zero report.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecaySlopes {
    pub velocity: Option<f64>,
    pub gradient: Option<f64>,
    /// The probed coefficient was identically zero: nothing to fit.
    pub zero: bool,
}

/// Fit the decay exponents of a radiated term's velocity and gradient over
/// `window` source radii: at each of 24 log-spaced distances, take the
/// maximum magnitude over a fixed direction set, then fit log magnitude
/// against log distance.
pub fn decay_slope_check(kind: &DecayKind, window: (f64, f64)) -> Result<DecaySlopes> {
    let (lo, hi) = window;
    if !(lo >= 10.0 && hi <= 1e4 && lo < hi) {
        return Err(Error::InvalidInput(format!(
            "decay window must satisfy 10 <= lo < hi <= 1e4, got ({lo}, {hi})"
        )));
    }
    enum Term {
        D(DipoleTerm),
        C(CollocationTerm),
    }
    let term = match kind {
        DecayKind::Dipole(s) => {
            if s.frobenius() == 0.0 {
                return Ok(DecaySlopes { velocity: None, gradient: None, zero: true });
            }
            Term::D(DipoleTerm::new(Vector3::zeros(), 1.0, *s))
        }
        DecayKind::Collocation(c) => {
            if c.iter().all(|&x| x == 0.0) {
                return Ok(DecaySlopes { velocity: None, gradient: None, zero: true });
            }
            Term::C(CollocationTerm::new(Vector3::zeros(), 1.0, *c))
        }
    };
    let directions: Vec<Vector3<f64>> = SphereQuadrature::default_rule()
        .surface()
        .iter()
        .map(|&(n, _)| n)
        .collect();
    let count = 24;
    let mut log_r = Vec::with_capacity(count);
    let mut log_v = Vec::with_capacity(count);
    let mut log_g = Vec::with_capacity(count);
    for k in 0..count {
        let t = k as f64 / (count - 1) as f64;
        let r = lo * (hi / lo).powf(t);
        let mut vmax = 0.0f64;
        let mut gmax = 0.0f64;
        for d in &directions {
            let x = d * r;
            let (v, g) = match &term {
                Term::D(t) => (t.velocity(&x), t.gradient(&x)?),
                Term::C(t) => (t.velocity(&x), t.gradient(&x)?),
            };
            vmax = vmax.max(v.norm());
            gmax = gmax.max(g.norm());
        }
        log_r.push(r.ln());
        log_v.push(vmax.ln());
        log_g.push(gmax.ln());
    }
    let (sv, _, _) = line_fit(&log_r, &log_v);
    let (sg, _, _) = line_fit(&log_r, &log_g);
    Ok(DecaySlopes {
        velocity: Some(sv),
        gradient: Some(sg),
        zero: false,
    })
}

// ---------------------------------------------------------------------------
// Boundary averages
// ---------------------------------------------------------------------------

/// Surface-averaged velocity differences per particle and their sup.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryAverageError {
    pub per_particle: Vec<f64>,
    pub sup: f64,
}

fn field_matches(field: &FlowField, cfg: &ParticleConfig, name: &str) -> Result<()> {
    if field.terms.len() != cfg.len() {
        return Err(Error::ConfigMismatch(format!(
            "{name} carries {} terms, configuration {} particles",
            field.terms.len(),
            cfg.len()
        )));
    }
    for (i, (t, p)) in field.terms.iter().zip(&cfg.particles).enumerate() {
        if t.center() != p.center || t.radius() != p.radius {
            return Err(Error::ConfigMismatch(format!(
                "{name} term {i} does not sit on particle {i}"
            )));
        }
    }
    Ok(())
}

/// |average over the sphere of (v_k - v_ref)| per particle, and the sup.
///
/// `v_ref` should hold fixed-point coefficients (iterated until updates
/// reach rounding level); the strain residual itself plateaus at the
/// truncation floor, so "converged" here is a statement about coefficients.
pub fn boundary_average_error(
    v_k: &FlowField,
    v_ref: &FlowField,
    cfg: &ParticleConfig,
    quad: &SphereQuadrature,
) -> Result<BoundaryAverageError> {
    field_matches(v_k, cfg, "v_k")?;
    field_matches(v_ref, cfg, "v_ref")?;
    let per_particle: Vec<f64> = cfg
        .particles
        .par_iter()
        .map(|p| -> Result<f64> {
            let mut acc = KahanVec3::new();
            for &(n, w) in quad.surface() {
                let x = p.center + n * p.radius;
                let d = v_k.velocity(&x)? - v_ref.velocity(&x)?;
                acc.add(&(d * w));
            }
            Ok((acc.total() / FOUR_PI).norm())
        })
        .collect::<Result<Vec<_>>>()?;
    let sup = per_particle.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(BoundaryAverageError { per_particle, sup })
}

// ---------------------------------------------------------------------------
// Einstein estimate
// ---------------------------------------------------------------------------

/// Normalized dilute viscosity increment (mu_eff - mu) / (mu phi) from the
/// converged coefficients, via the moment identity: each particle
/// contributes stresslet (20 pi / 3) R^3 S_i, so the increment is
/// sum (20 pi / 3) R_i^3 (S_i : E) / (2 |E|^2 volume) and phi is
/// sum (4 pi / 3) R_i^3 / volume. The sample volume cancels in the ratio; it
/// is kept explicit so callers state what they averaged over, and it must
/// enclose the cloud minus a boundary layer for the estimate to mean a bulk
/// property.
pub fn einstein_viscosity_estimate(
    converged: &FlowField,
    cfg: &ParticleConfig,
    ambient: &AmbientField,
    volume: f64,
) -> Result<f64> {
    let e = match ambient {
        AmbientField::LinearStrain(e) => *e,
        _ => {
            return Err(Error::InvalidInput(
                "the viscosity estimate needs a pure linear-strain ambient".into(),
            ))
        }
    };
    let e2 = e.double_dot(&e);
    if e2 == 0.0 {
        return Err(Error::ZeroStrain);
    }
    if !(volume > 0.0 && volume.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sample volume must be positive and finite, got {volume}"
        )));
    }
    field_matches(converged, cfg, "converged field")?;
    let mut moment = Kahan::new();
    let mut balls = Kahan::new();
    for term in &converged.terms {
        let r3 = term.radius().powi(3);
        // The radiated coefficient is additive; the stresslet coefficient
        // is its negative.
        let s = -term.dipole.coefficient;
        moment.add(r3 * s.double_dot(&e));
        balls.add(r3);
    }
    let increment = (20.0 * std::f64::consts::PI / 3.0) * moment.total() / (2.0 * e2 * volume);
    let phi = (FOUR_PI / 3.0) * balls.total() / volume;
    Ok(increment / phi)
}
