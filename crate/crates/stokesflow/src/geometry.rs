//! Particle configurations, separation metrics, and deterministic generators.
//!
//! A configuration is a finite list of spheres `(X_i, R_i)`. Everything the
//! convergence theory cares about is summarized by a handful of derived
//! quantities:
//!
//! - `d_min = inf_{i != j} |X_i - X_j|`, the closest center distance;
//! - `R_max = sup_i R_i`;
//! - `phi0 = R_max^3 / d_min^3`, the dilution proxy that controls the
//!   contraction rate of the reflection iteration;
//! - `theta_max = inf_{i != j} |X_i - X_j| / (R_i + R_j)`, the largest
//!   inflation factor under which the inflated balls stay pairwise disjoint
//!   (`theta_max > 1` is exactly pairwise disjointness of the closed balls);
//! - `lambda_q = sup_i sum_{j != i} R_j^3 / |X_i - X_j|^{2q}`, the
//!   summability quantity gating uniform far-field estimates.
//!
//! Single-particle conventions keep the formulas total: `d_min = +inf`,
//! `phi0 = 0`, `theta_max = +inf`, `lambda_q = 0`.
//!
//! Generators are deterministic. The Poisson-disk sampler uses an embedded
//! SplitMix64 generator with fixed constants so fixtures reproduce
//! bit-for-bit on every platform.

use nalgebra::Vector3;
use serde::Serialize;

use crate::{Error, Result};

/// One rigid sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Particle {
    pub fn new(center: Vector3<f64>, radius: f64) -> Self {
        Self { center, radius }
    }
}

/// Axis-aligned box, used by generators and grid exports.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3 {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

impl Box3 {
    pub fn new(lo: Vector3<f64>, hi: Vector3<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn volume(&self) -> f64 {
        (self.hi - self.lo).iter().product()
    }
}

/// A finite collection of spheres plus an optional bounding box.
///
/// Construction is permissive: overlapping or degenerate inputs are
/// representable so that [`validate_config`] can diagnose them; operations
/// that require a valid configuration say so and check.
#[derive(Clone, Debug, Default)]
pub struct ParticleConfig {
    pub particles: Vec<Particle>,
    pub bounding_box: Option<Box3>,
}

impl ParticleConfig {
    pub fn new(particles: Vec<Particle>) -> Self {
        Self {
            particles,
            bounding_box: None,
        }
    }

    /// Convenience constructor from `(center, radius)` pairs.
    pub fn from_parts(parts: Vec<(Vector3<f64>, f64)>) -> Self {
        Self::new(parts.into_iter().map(|(c, r)| Particle::new(c, r)).collect())
    }

    pub fn with_box(particles: Vec<Particle>, bounding_box: Box3) -> Self {
        Self {
            particles,
            bounding_box: Some(bounding_box),
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Closest center-to-center distance; `+inf` with fewer than two particles.
    pub fn d_min(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.particles.len() {
            for j in (i + 1)..self.particles.len() {
                let d = (self.particles[i].center - self.particles[j].center).norm();
                best = best.min(d);
            }
        }
        best
    }

    /// Largest radius; 0 for an empty configuration.
    pub fn r_max(&self) -> f64 {
        self.particles.iter().fold(0.0, |m, p| m.max(p.radius))
    }

    /// `R_max^3 / d_min^3`; 0 with fewer than two particles.
    pub fn phi0(&self) -> f64 {
        if self.particles.len() < 2 {
            return 0.0;
        }
        let r = self.r_max() / self.d_min();
        r * r * r
    }

    /// Largest inflation factor keeping all inflated balls disjoint;
    /// `+inf` with fewer than two particles.
    pub fn theta_max(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.particles.len() {
            for j in (i + 1)..self.particles.len() {
                let d = (self.particles[i].center - self.particles[j].center).norm();
                let s = self.particles[i].radius + self.particles[j].radius;
                best = best.min(d / s);
            }
        }
        best
    }
}

/// Outcome of [`validate_config`].
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    /// All closed balls pairwise disjoint.
    pub disjoint: bool,
    /// `theta_max > 1` (equivalent to `disjoint`, reported separately so the
    /// margin is visible).
    pub theta_ok: bool,
    pub d_min: f64,
    pub r_max: f64,
    pub phi0: f64,
    pub theta_max: f64,
    /// Index pairs whose closed balls intersect.
    pub overlapping: Vec<(usize, usize)>,
}

/// Check radii and pairwise disjointness and compute the separation metrics.
///
/// Requires at least one particle. A non-positive radius is an error naming
/// the particle; overlap is not an error here but is reported through the
/// `disjoint` flag and the `overlapping` pair list so callers can name
/// offenders.
pub fn validate_config(cfg: &ParticleConfig) -> Result<ValidationReport> {
    if cfg.is_empty() {
        return Err(Error::InvalidInput(
            "configuration has no particles".into(),
        ));
    }
    for (index, p) in cfg.particles.iter().enumerate() {
        if !(p.radius > 0.0) {
            return Err(Error::NonPositiveRadius {
                index,
                radius: p.radius,
            });
        }
    }
    let mut overlapping = Vec::new();
    for i in 0..cfg.len() {
        for j in (i + 1)..cfg.len() {
            let d = (cfg.particles[i].center - cfg.particles[j].center).norm();
            if d <= cfg.particles[i].radius + cfg.particles[j].radius {
                overlapping.push((i, j));
            }
        }
    }
    let theta_max = cfg.theta_max();
    Ok(ValidationReport {
        disjoint: overlapping.is_empty(),
        theta_ok: theta_max > 1.0,
        d_min: cfg.d_min(),
        r_max: cfg.r_max(),
        phi0: cfg.phi0(),
        theta_max,
        overlapping,
    })
}

/// `sup_i sum_{j != i} R_j^3 / |X_i - X_j|^{2q}`.
///
/// The sum converges under uniform density only for `2q > 3`; the caller
/// picks `q`, the sum itself is evaluated verbatim for any positive exponent.
/// Returns 0 with fewer than two particles.
pub fn compute_lambda_q(cfg: &ParticleConfig, q: f64) -> f64 {
    let n = cfg.len();
    if n < 2 {
        return 0.0;
    }
    let mut best = 0.0f64;
    for i in 0..n {
        let mut acc = crate::util::Kahan::new();
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = (cfg.particles[i].center - cfg.particles[j].center).norm();
            let r = cfg.particles[j].radius;
            acc.add(r * r * r / d.powf(2.0 * q));
        }
        best = best.max(acc.total());
    }
    best
}

/// Cubic lattice of `n_per_side^3` equal spheres, lexicographic index order.
///
/// The first particle sits at the origin of the lattice frame; spacing must
/// exceed the diameter.
pub fn generate_lattice(n_per_side: usize, spacing: f64, radius: f64) -> Result<ParticleConfig> {
    if n_per_side == 0 {
        return Err(Error::InvalidInput("lattice needs n_per_side >= 1".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::NonPositiveRadius { index: 0, radius });
    }
    if n_per_side > 1 && spacing <= 2.0 * radius {
        return Err(Error::Overlap {
            i: 0,
            j: 1,
            distance: spacing,
            radius_sum: 2.0 * radius,
        });
    }
    let mut particles = Vec::with_capacity(n_per_side.pow(3));
    for i in 0..n_per_side {
        for j in 0..n_per_side {
            for k in 0..n_per_side {
                particles.push(Particle::new(
                    Vector3::new(i as f64, j as f64, k as f64) * spacing,
                    radius,
                ));
            }
        }
    }
    let side = (n_per_side - 1) as f64 * spacing;
    let bb = Box3::new(
        Vector3::repeat(-radius),
        Vector3::repeat(side + radius),
    );
    Ok(ParticleConfig::with_box(particles, bb))
}

/// SplitMix64: the crate's only random number generator.
///
/// Fixed public constants, 64-bit state, identical streams on every
/// platform. `next_f64` maps the top 53 bits onto `[0, 1)`.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Seeded dart-throwing Poisson-disk sampler.
///
/// Places `count` centers inside `container`, inset by `radius` from every
/// wall, rejecting candidates closer than `min_gap` to an accepted center.
/// Candidates are drawn coordinate by coordinate (x, y, z) from one
/// SplitMix64 stream, so the output is a pure function of the seed. The
/// attempt budget is `1000 * count`; exhausting it is an error reporting the
/// achieved count.
///
/// Feasibility is screened up front: `count * min_gap^3` must not exceed 30%
/// of the container volume, and `min_gap` must exceed the diameter so the
/// result is guaranteed disjoint.
pub fn generate_poisson_disk(
    count: usize,
    container: Box3,
    min_gap: f64,
    radius: f64,
    seed: u64,
) -> Result<ParticleConfig> {
    if count == 0 {
        return Ok(ParticleConfig::with_box(Vec::new(), container));
    }
    if !(radius > 0.0) {
        return Err(Error::NonPositiveRadius { index: 0, radius });
    }
    if min_gap <= 2.0 * radius {
        return Err(Error::Overlap {
            i: 0,
            j: 1,
            distance: min_gap,
            radius_sum: 2.0 * radius,
        });
    }
    let volume = container.volume();
    if !(volume > 0.0) || count as f64 * min_gap.powi(3) > 0.3 * volume {
        return Err(Error::InvalidInput(format!(
            "infeasible packing: count * min_gap^3 = {:.6} exceeds 30% of the box volume {:.6}",
            count as f64 * min_gap.powi(3),
            volume
        )));
    }
    let lo = container.lo + Vector3::repeat(radius);
    let hi = container.hi - Vector3::repeat(radius);
    for k in 0..3 {
        if lo[k] >= hi[k] {
            return Err(Error::InvalidInput(
                "box too small for the particle radius inset".into(),
            ));
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut centers: Vec<Vector3<f64>> = Vec::with_capacity(count);
    let budget = 1000 * count;
    let gap2 = min_gap * min_gap;
    let mut attempts = 0;
    while centers.len() < count && attempts < budget {
        attempts += 1;
        let p = Vector3::new(
            lo[0] + rng.next_f64() * (hi[0] - lo[0]),
            lo[1] + rng.next_f64() * (hi[1] - lo[1]),
            lo[2] + rng.next_f64() * (hi[2] - lo[2]),
        );
        if centers.iter().all(|q| (p - q).norm_squared() >= gap2) {
            centers.push(p);
        }
    }
    if centers.len() < count {
        return Err(Error::GenerationFailed {
            requested: count,
            achieved: centers.len(),
        });
    }
    Ok(ParticleConfig::with_box(
        centers
            .into_iter()
            .map(|center| Particle::new(center, radius))
            .collect(),
        container,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(d: f64, r: f64) -> ParticleConfig {
        ParticleConfig::new(vec![
            Particle::new(Vector3::zeros(), r),
            Particle::new(Vector3::new(d, 0.0, 0.0), r),
        ])
    }

    #[test]
    fn two_particle_metrics_are_exact() {
        let report = validate_config(&pair(4.0, 1.0)).expect("valid pair");
        assert!(report.disjoint && report.theta_ok);
        assert_eq!(report.d_min, 4.0);
        assert_eq!(report.phi0, 1.0 / 64.0, "phi0 = (1/4)^3");
        assert_eq!(report.theta_max, 2.0, "theta_max = 4 / (1 + 1)");
    }

    #[test]
    fn single_particle_conventions() {
        let cfg = ParticleConfig::new(vec![Particle::new(Vector3::zeros(), 2.0)]);
        let report = validate_config(&cfg).expect("single particle is valid");
        assert!(report.d_min.is_infinite(), "d_min is +inf for one particle");
        assert_eq!(report.phi0, 0.0);
        assert!(report.theta_max.is_infinite());
        assert!(report.theta_ok);
    }

    #[test]
    fn overlap_is_flagged_with_indices() {
        let report = validate_config(&pair(1.5, 1.0)).expect("report still produced");
        assert!(!report.disjoint);
        assert!(!report.theta_ok);
        assert_eq!(report.overlapping, vec![(0, 1)], "offending pair named");
    }

    #[test]
    fn non_positive_radius_names_the_particle() {
        let mut cfg = pair(4.0, 1.0);
        cfg.particles[1].radius = -0.5;
        match validate_config(&cfg) {
            Err(Error::NonPositiveRadius { index: 1, .. }) => {}
            other => panic!("expected NonPositiveRadius for index 1, got {other:?}"),
        }
    }

    #[test]
    fn lambda_q_trivial_and_pair_values() {
        let single = ParticleConfig::new(vec![Particle::new(Vector3::zeros(), 1.0)]);
        assert_eq!(compute_lambda_q(&single, 2.0), 0.0, "empty sum");
        // R = 1, separation 4, q = 2: 1 / 4^4.
        let v = compute_lambda_q(&pair(4.0, 1.0), 2.0);
        assert!(
            (v - 1.0 / 256.0).abs() < 1e-18,
            "pair value should be 1/256, got {v}"
        );
    }

    #[test]
    fn lambda_q_lattice_regression() {
        // 3x3x3 unit-spacing lattice, R = 0.1, q = 2; constant frozen from an
        // independent brute-force summation.
        let cfg = generate_lattice(3, 1.0, 0.1).unwrap();
        let v = compute_lambda_q(&cfg, 2.0);
        let frozen = 0.009888888888888888;
        assert!(
            (v - frozen).abs() <= 1e-15 * frozen.abs(),
            "lattice lambda_q regression: got {v}, frozen {frozen}"
        );
    }

    #[test]
    fn lambda_q_matches_naive_double_loop_on_200_particles() {
        // Random cloud, then an independently written O(N^2) accumulation.
        let mut rng = SplitMix64::new(11);
        let mut particles = Vec::new();
        for _ in 0..200 {
            let c = Vector3::new(
                10.0 * rng.next_f64(),
                10.0 * rng.next_f64(),
                10.0 * rng.next_f64(),
            );
            particles.push(Particle::new(c, 0.05 + 0.05 * rng.next_f64()));
        }
        let cfg = ParticleConfig::new(particles);
        let q = 1.7;
        let fast = compute_lambda_q(&cfg, q);
        let mut naive: f64 = 0.0;
        for i in 0..cfg.len() {
            let mut s = 0.0;
            for j in 0..cfg.len() {
                if i != j {
                    let d = (cfg.particles[i].center - cfg.particles[j].center).norm();
                    s += cfg.particles[j].radius.powi(3) * d.powf(-2.0 * q);
                }
            }
            naive = naive.max(s);
        }
        assert!(
            (fast - naive).abs() <= 1e-12 * naive,
            "lambda_q {fast} deviates from the naive oracle {naive}"
        );
    }

    #[test]
    fn lattice_examples() {
        let cfg = generate_lattice(2, 1.0, 0.1).unwrap();
        assert_eq!(cfg.len(), 8);
        assert_eq!(cfg.d_min(), 1.0);
        assert!((cfg.phi0() - 1e-3).abs() < 1e-18);

        let one = generate_lattice(1, 1.0, 0.3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.particles[0].center, Vector3::zeros());

        let theta2 = generate_lattice(3, 2.0, 0.5).unwrap();
        assert_eq!(theta2.len(), 27);
        assert_eq!(theta2.theta_max(), 2.0);
    }

    #[test]
    fn lattice_ordering_is_lexicographic() {
        let cfg = generate_lattice(2, 1.0, 0.2).unwrap();
        let expect = [
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 1.0],
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 0.0],
            [1.0, 1.0, 1.0],
        ];
        for (p, e) in cfg.particles.iter().zip(expect) {
            assert_eq!(p.center, Vector3::from_row_slice(&e));
        }
    }

    #[test]
    fn lattice_rejects_touching_spheres() {
        match generate_lattice(2, 1.0, 0.5) {
            Err(Error::Overlap { .. }) => {}
            other => panic!("spacing equal to the diameter must be rejected, got {other:?}"),
        }
    }

    #[test]
    fn poisson_disk_trivial_counts() {
        let bx = Box3::new(Vector3::zeros(), Vector3::repeat(10.0));
        let empty = generate_poisson_disk(0, bx, 1.0, 0.2, 7).unwrap();
        assert!(empty.is_empty());
        let one = generate_poisson_disk(1, bx, 1.0, 0.2, 7).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.phi0(), 0.0);
    }

    #[test]
    fn poisson_disk_64_in_box_10_fixture() {
        let bx = Box3::new(Vector3::zeros(), Vector3::repeat(10.0));
        let cfg = generate_poisson_disk(64, bx, 1.0, 0.2, 7).unwrap();
        assert_eq!(cfg.len(), 64);
        assert!(cfg.d_min() >= 1.0, "min gap respected, d_min = {}", cfg.d_min());
        assert!(
            cfg.theta_max() >= 2.5,
            "theta_max {} should clear 2.5 at gap/diameter = 2.5",
            cfg.theta_max()
        );
        let report = validate_config(&cfg).unwrap();
        assert!(report.disjoint, "generator output must be disjoint");
        // Seed-determined placement, frozen on first run: the first center.
        let c0 = cfg.particles[0].center;
        let frozen = [3.942365584556207, 0.36116762747029874, 8.847302533826081];
        for k in 0..3 {
            assert!(
                (c0[k] - frozen[k]).abs() < 1e-12,
                "first center drifted: got {c0:?}, frozen {frozen:?}"
            );
        }
    }

    #[test]
    fn poisson_disk_is_seed_deterministic() {
        let bx = Box3::new(Vector3::zeros(), Vector3::repeat(8.0));
        let a = generate_poisson_disk(30, bx, 1.05, 0.25, 2024).unwrap();
        let b = generate_poisson_disk(30, bx, 1.05, 0.25, 2024).unwrap();
        for (p, q) in a.particles.iter().zip(&b.particles) {
            assert_eq!(p.center, q.center, "same seed must reproduce bit-for-bit");
        }
        let c = generate_poisson_disk(30, bx, 1.05, 0.25, 2025).unwrap();
        assert!(
            a.particles.iter().zip(&c.particles).any(|(p, q)| p.center != q.center),
            "different seeds should give different placements"
        );
    }

    #[test]
    fn poisson_disk_refuses_infeasible_packing() {
        let bx = Box3::new(Vector3::zeros(), Vector3::repeat(2.0));
        match generate_poisson_disk(64, bx, 1.0, 0.2, 3) {
            Err(Error::InvalidInput(msg)) => {
                assert!(msg.contains("infeasible"), "useful message, got: {msg}")
            }
            other => panic!("expected feasibility refusal, got {other:?}"),
        }
    }

    #[test]
    fn generator_output_theta_consistent_with_gap_arithmetic() {
        // theta_max >= min_gap / (2 radius) must hold exactly; equality holds
        // when some pair realizes the minimum gap.
        let bx = Box3::new(Vector3::zeros(), Vector3::repeat(8.0));
        let cfg = generate_poisson_disk(30, bx, 1.05, 0.25, 2024).unwrap();
        let bound = 1.05 / 0.5;
        assert!(
            cfg.theta_max() >= bound * (1.0 - 1e-12),
            "theta_max {} below the gap arithmetic bound {}",
            cfg.theta_max(),
            bound
        );
    }

    #[test]
    fn phi0_monotonicity_under_perturbations() {
        let base = generate_lattice(3, 1.0, 0.2).unwrap();
        let phi = base.phi0();
        // Growing any single radius cannot decrease phi0.
        for idx in [0usize, 13, 26] {
            let mut grown = base.clone();
            grown.particles[idx].radius *= 1.5;
            assert!(
                grown.phi0() >= phi,
                "phi0 must be monotone in radius at particle {idx}"
            );
        }
        // Dilating all centers cannot increase phi0.
        let mut dilated = base.clone();
        for p in &mut dilated.particles {
            p.center *= 1.3;
        }
        assert!(
            dilated.phi0() <= phi,
            "phi0 must not increase when all distances grow"
        );
    }

    #[test]
    fn splitmix64_reference_stream() {
        // First outputs for seed 0; classical SplitMix64 reference values.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220A8397B1DCDAF);
        assert_eq!(rng.next_u64(), 0x6E789E6AA1B965F4);
        assert_eq!(rng.next_u64(), 0x06C45D188009454F);
        let mut rng = SplitMix64::new(0);
        let u = rng.next_f64();
        assert!((0.0..1.0).contains(&u));
        assert!(
            (u - 0xE220A8397B1DCDAFu64.wrapping_shr(11) as f64 / 9007199254740992.0).abs() == 0.0,
            "next_f64 must be the top 53 bits over 2^53"
        );
    }
}
