//! Closed-form Stokes kernels and the composite flow-field representation.
//!
//! All fields here are exact solutions of the (unit-viscosity) Stokes
//! equations away from their sources, and every evaluation path has an
//! analytic gradient; no finite differences are used anywhere in the solver,
//! so quadrature is the only error source in downstream moments.
//!
//! The building blocks:
//!
//! - the stokeslet (point force), decaying like `1/|x|`;
//! - the dipole `w_S`: the force- and torque-free exterior solution whose
//!   interior restriction is exactly the affine field `S (x - X)`, decaying
//!   like `1/|x|^2`;
//! - a fixed 18-member collocation family of second derivatives of the
//!   stokeslet, all force- and torque-free with `1/|x|^3` velocity decay,
//!   used for the optional quadrupole-level correction.
//!
//! Radius scaling: a term of radius `R` evaluates as `R * f((x - X)/R)`
//! where `f` is the unit-ball formula. That convention makes the interior
//! strain of `w_S` exactly `S` for every radius.
//!
//! A [`FlowField`] is an ambient field plus one radiated term per particle;
//! evaluation sums in fixed particle order with compensated accumulation so
//! results do not depend on thread count.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::util::{KahanMat3, KahanVec3};
use crate::{Error, Result};

const EIGHT_PI: f64 = 8.0 * std::f64::consts::PI;

/// Points closer than this (in units of the normalized radius) to a source
/// sphere surface are treated as on-surface for gradient purposes.
const SURFACE_BAND: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Traceless symmetric matrices
// ---------------------------------------------------------------------------

/// A symmetric, traceless 3x3 matrix: strain-rate coefficients live here.
///
/// Construction always projects: symmetry is exact, and the trace residual
/// after projection is at the rounding level (|trace| <= 1e-14 * norm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracelessSym3 {
    m: Matrix3<f64>,
}

impl TracelessSym3 {
    pub fn zero() -> Self {
        Self {
            m: Matrix3::zeros(),
        }
    }

    /// Symmetrize and remove the trace of an arbitrary matrix.
    pub fn from_matrix(any: &Matrix3<f64>) -> Self {
        let sym = (any + any.transpose()) * 0.5;
        let tr = sym.trace() / 3.0;
        Self {
            m: sym - Matrix3::identity() * tr,
        }
    }

    /// Build from the five independent entries; `zz` is implied.
    pub fn from_components(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64) -> Self {
        Self {
            m: Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, -xx - yy),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.m * v
    }

    pub fn frobenius(&self) -> f64 {
        self.m.norm()
    }

    /// Double contraction `self : other`.
    pub fn double_dot(&self, other: &Self) -> f64 {
        self.m.dot(&other.m)
    }

    /// Conjugation by a rotation: `R S R^T`.
    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        Self::from_matrix(&(r * self.m * r.transpose()))
    }

    pub fn xx(&self) -> f64 {
        self.m[(0, 0)]
    }
    pub fn xy(&self) -> f64 {
        self.m[(0, 1)]
    }
    pub fn xz(&self) -> f64 {
        self.m[(0, 2)]
    }
    pub fn yy(&self) -> f64 {
        self.m[(1, 1)]
    }
    pub fn yz(&self) -> f64 {
        self.m[(1, 2)]
    }
    pub fn zz(&self) -> f64 {
        self.m[(2, 2)]
    }

    /// Orthonormal basis of the five-dimensional space (Frobenius inner
    /// product). Coordinates in this basis preserve the Frobenius norm.
    pub fn basis() -> [Self; 5] {
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        let s6 = 1.0 / 6.0f64.sqrt();
        [
            Self::from_components(s2, 0.0, 0.0, -s2, 0.0),
            Self::from_components(s6, 0.0, 0.0, s6, 0.0),
            Self::from_components(0.0, s2, 0.0, 0.0, 0.0),
            Self::from_components(0.0, 0.0, s2, 0.0, 0.0),
            Self::from_components(0.0, 0.0, 0.0, 0.0, s2),
        ]
    }

    /// Coordinates in the orthonormal basis.
    pub fn to_array5(&self) -> [f64; 5] {
        let b = Self::basis();
        [
            self.double_dot(&b[0]),
            self.double_dot(&b[1]),
            self.double_dot(&b[2]),
            self.double_dot(&b[3]),
            self.double_dot(&b[4]),
        ]
    }

    pub fn from_array5(a: &[f64; 5]) -> Self {
        let b = Self::basis();
        let mut m = Matrix3::zeros();
        for k in 0..5 {
            m += b[k].m * a[k];
        }
        Self { m }
    }
}

impl std::ops::Add for TracelessSym3 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self { m: self.m + rhs.m }
    }
}

impl std::ops::Sub for TracelessSym3 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self { m: self.m - rhs.m }
    }
}

impl std::ops::Mul<f64> for TracelessSym3 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self { m: self.m * rhs }
    }
}

impl std::ops::Neg for TracelessSym3 {
    type Output = Self;
    fn neg(self) -> Self {
        Self { m: -self.m }
    }
}

// ---------------------------------------------------------------------------
// Ambient fields
// ---------------------------------------------------------------------------

/// Analytic background flow. Every variant is divergence-free away from
/// stokeslet singularities, with unit viscosity throughout.
#[derive(Clone, Debug)]
pub enum AmbientField {
    /// `u(x) = E x` about the coordinate origin.
    LinearStrain(TracelessSym3),
    /// `u(x) = V + omega x (x - center)`; zero strain everywhere.
    RigidMotion {
        velocity: Vector3<f64>,
        omega: Vector3<f64>,
        center: Vector3<f64>,
    },
    /// Point force at `location`.
    Stokeslet {
        force: Vector3<f64>,
        location: Vector3<f64>,
    },
    /// Sum of parts, evaluated in list order with compensated accumulation.
    Superposition(Vec<AmbientField>),
}

impl AmbientField {
    pub fn velocity(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        match self {
            AmbientField::LinearStrain(e) => Ok(e.apply(x)),
            AmbientField::RigidMotion {
                velocity,
                omega,
                center,
            } => Ok(velocity + omega.cross(&(x - center))),
            AmbientField::Stokeslet { force, location } => stokeslet_velocity(force, location, x),
            AmbientField::Superposition(parts) => {
                let mut acc = KahanVec3::new();
                for p in parts {
                    acc.add(&p.velocity(x)?);
                }
                Ok(acc.total())
            }
        }
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Result<Matrix3<f64>> {
        match self {
            AmbientField::LinearStrain(e) => Ok(*e.matrix()),
            AmbientField::RigidMotion { omega, .. } => Ok(cross_matrix(omega)),
            AmbientField::Stokeslet { force, location } => stokeslet_gradient(force, location, x),
            AmbientField::Superposition(parts) => {
                let mut acc = KahanMat3::new();
                for p in parts {
                    acc.add(&p.gradient(x)?);
                }
                Ok(acc.total())
            }
        }
    }
}

/// Matrix of `v -> omega x v`: the gradient of a rigid rotation.
fn cross_matrix(omega: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -omega.z, omega.y, omega.z, 0.0, -omega.x, -omega.y, omega.x, 0.0,
    )
}

// ---------------------------------------------------------------------------
// Stokeslet
// ---------------------------------------------------------------------------

/// Point-force velocity `(F/|r| + r (F.r)/|r|^3) / (8 pi)`, `r = x - source`.
pub fn stokeslet_velocity(
    force: &Vector3<f64>,
    source: &Vector3<f64>,
    x: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let r = x - source;
    let d = r.norm();
    if d == 0.0 {
        return Err(Error::SingularEvaluation {
            x: x.x,
            y: x.y,
            z: x.z,
        });
    }
    let fr = force.dot(&r);
    Ok((force / d + r * (fr / (d * d * d))) / EIGHT_PI)
}

/// Exact gradient `d u_i / d x_j` of the stokeslet velocity.
pub fn stokeslet_gradient(
    force: &Vector3<f64>,
    source: &Vector3<f64>,
    x: &Vector3<f64>,
) -> Result<Matrix3<f64>> {
    let r = x - source;
    let d = r.norm();
    if d == 0.0 {
        return Err(Error::SingularEvaluation {
            x: x.x,
            y: x.y,
            z: x.z,
        });
    }
    let d3 = d * d * d;
    let d5 = d3 * d * d;
    let fr = force.dot(&r);
    let mut g = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut t = -force[i] * r[j] / d3 + r[i] * force[j] / d3 - 3.0 * r[i] * r[j] * fr / d5;
            if i == j {
                t += fr / d3;
            }
            g[(i, j)] = t / EIGHT_PI;
        }
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Dipole
// ---------------------------------------------------------------------------

/// Dipole velocity, total on all of space.
///
/// With `y = (x - center)/radius` and `r = |y|`: inside the ball the field
/// is the affine `radius * S y = S (x - center)`; outside it is
/// `radius * ((5/2) y (y.Sy) (1/r^5 - 1/r^7) + S y / r^5)`. The two branches
/// agree identically on `r = 1`.
pub fn dipole_velocity(
    s: &TracelessSym3,
    center: &Vector3<f64>,
    radius: f64,
    x: &Vector3<f64>,
) -> Vector3<f64> {
    let y = (x - center) / radius;
    let r2 = y.norm_squared();
    let sy = s.apply(&y);
    if r2 <= 1.0 {
        return sy * radius;
    }
    let r = r2.sqrt();
    let r5 = r2 * r2 * r;
    let r7 = r5 * r2;
    let ysy = y.dot(&sy);
    (y * (2.5 * ysy * (1.0 / r5 - 1.0 / r7)) + sy / r5) * radius
}

/// Exact dipole gradient `d u_i / d x_j`; constant `S` inside the ball,
/// an error within the rounding band of the sphere surface.
pub fn dipole_gradient(
    s: &TracelessSym3,
    center: &Vector3<f64>,
    radius: f64,
    x: &Vector3<f64>,
) -> Result<Matrix3<f64>> {
    let y = (x - center) / radius;
    let r2 = y.norm_squared();
    let r = r2.sqrt();
    if (r - 1.0).abs() <= SURFACE_BAND {
        return Err(Error::OnSurfacePoint);
    }
    if r2 < 1.0 {
        return Ok(*s.matrix());
    }
    let r5 = r2 * r2 * r;
    let r7 = r5 * r2;
    let r9 = r7 * r2;
    let sy = s.apply(&y);
    let a = y.dot(&sy);
    let sm = s.matrix();
    let c57 = 1.0 / r5 - 1.0 / r7;
    let mut g = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut t = 5.0 * y[i] * sy[j] * c57 + sm[(i, j)] / r5 - 5.0 * sy[i] * y[j] / r7
                + y[i] * y[j] * a * (17.5 / r9 - 12.5 / r7);
            if i == j {
                t += 2.5 * a * c57;
            }
            g[(i, j)] = t;
        }
    }
    Ok(g)
}

/// Symmetric gradient of the leading far-field dipole term alone:
/// `e((5/2) x (x.Sx)/|x|^5)`. Traceless, symmetric, homogeneous of degree -3.
pub fn strain_kernel(x: &Vector3<f64>, s: &TracelessSym3) -> Result<TracelessSym3> {
    let r2 = x.norm_squared();
    if r2 == 0.0 {
        return Err(Error::SingularEvaluation {
            x: 0.0,
            y: 0.0,
            z: 0.0,
        });
    }
    let r = r2.sqrt();
    let r5 = r2 * r2 * r;
    let r7 = r5 * r2;
    let sx = s.apply(x);
    let a = x.dot(&sx);
    let mut m = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut t = (x[i] * sx[j] + sx[i] * x[j]) / r5 - 5.0 * x[i] * x[j] * a / r7;
            if i == j {
                t += a / r5;
            }
            m[(i, j)] = 2.5 * t;
        }
    }
    Ok(TracelessSym3::from_matrix(&m))
}

// ---------------------------------------------------------------------------
// Collocation basis: second derivatives of the stokeslet
// ---------------------------------------------------------------------------

/// Number of collocation basis fields.
pub const COLLOCATION_DIM: usize = 18;

/// Derivative index pairs `(k, l)` in fixed order.
const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

#[inline]
fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Velocity of collocation basis field `b` at `y` (unit-ball frame,
/// exterior formula, the `8 pi` normalization dropped).
///
/// Field `b = 6 j + p` is the `(k, l)` second derivative (pair `p`) of the
/// `j`-th stokeslet column. All members carry zero net force and torque and
/// decay like `|y|^{-3}`.
pub fn collocation_velocity_basis(b: usize, y: &Vector3<f64>) -> Vector3<f64> {
    let (j, (k, l)) = (b / 6, PAIRS[b % 6]);
    let r2 = y.norm_squared();
    let r = r2.sqrt();
    let r3 = r2 * r;
    let r5 = r3 * r2;
    let r7 = r5 * r2;
    let mut out = Vector3::zeros();
    for i in 0..3 {
        let mut t = -delta(i, j) * delta(k, l) / r3;
        t += 3.0 * delta(i, j) * y[k] * y[l] / r5;
        t += (delta(i, k) * delta(j, l) + delta(j, k) * delta(i, l)) / r3;
        t -= 3.0 * (delta(i, k) * y[j] + delta(j, k) * y[i]) * y[l] / r5;
        t -= 3.0 * (delta(i, l) * y[j] + delta(j, l) * y[i]) * y[k] / r5;
        t -= 3.0 * delta(k, l) * y[i] * y[j] / r5;
        t += 15.0 * y[i] * y[j] * y[k] * y[l] / r7;
        out[i] = t;
    }
    out
}

/// Exact gradient `d/dy_m` of [`collocation_velocity_basis`].
pub fn collocation_gradient_basis(b: usize, y: &Vector3<f64>) -> Matrix3<f64> {
    let (j, (k, l)) = (b / 6, PAIRS[b % 6]);
    let r2 = y.norm_squared();
    let r = r2.sqrt();
    let r5 = r2 * r2 * r;
    let r7 = r5 * r2;
    let r9 = r7 * r2;
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for m in 0..3 {
            let mut t = 3.0 * delta(i, j) * delta(k, l) * y[m] / r5;
            t += 3.0
                * delta(i, j)
                * ((delta(k, m) * y[l] + delta(l, m) * y[k]) / r5
                    - 5.0 * y[k] * y[l] * y[m] / r7);
            t -= 3.0 * (delta(i, k) * delta(j, l) + delta(j, k) * delta(i, l)) * y[m] / r5;
            t -= 3.0
                * ((delta(i, k) * delta(j, m) + delta(j, k) * delta(i, m)) * y[l]
                    + (delta(i, k) * y[j] + delta(j, k) * y[i]) * delta(l, m))
                / r5;
            t += 15.0 * (delta(i, k) * y[j] + delta(j, k) * y[i]) * y[l] * y[m] / r7;
            t -= 3.0
                * ((delta(i, l) * delta(j, m) + delta(j, l) * delta(i, m)) * y[k]
                    + (delta(i, l) * y[j] + delta(j, l) * y[i]) * delta(k, m))
                / r5;
            t += 15.0 * (delta(i, l) * y[j] + delta(j, l) * y[i]) * y[k] * y[m] / r7;
            t -= 3.0 * delta(k, l) * (delta(i, m) * y[j] + delta(j, m) * y[i]) / r5;
            t += 15.0 * delta(k, l) * y[i] * y[j] * y[m] / r7;
            t += 15.0
                * (delta(i, m) * y[j] * y[k] * y[l]
                    + delta(j, m) * y[i] * y[k] * y[l]
                    + delta(k, m) * y[i] * y[j] * y[l]
                    + delta(l, m) * y[i] * y[j] * y[k])
                / r7;
            t -= 105.0 * y[i] * y[j] * y[k] * y[l] * y[m] / r9;
            out[(i, m)] = t;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Interior continuation of the collocation basis
// ---------------------------------------------------------------------------

const POLY_DEG: usize = 5;
const NUM_MONO: usize = 56;

/// Interior extensions of the 18 exterior basis fields: for each field, the
/// divergence-free Stokes velocity polynomial of degree <= 5 matching its
/// trace on the unit sphere (least squares on quadrature nodes, observed
/// mismatch at the 1e-13 level). The table is built once per process.
struct Continuation {
    exps: [[u8; 3]; NUM_MONO],
    /// `table[b][comp][mono]`: monomial coefficients of basis field `b`.
    table: Vec<[[f64; NUM_MONO]; 3]>,
}

fn monomials() -> [[u8; 3]; NUM_MONO] {
    let mut out = [[0u8; 3]; NUM_MONO];
    let mut idx = 0;
    for a in 0..=POLY_DEG as u8 {
        for b in 0..=POLY_DEG as u8 {
            for c in 0..=POLY_DEG as u8 {
                if (a + b + c) as usize <= POLY_DEG {
                    out[idx] = [a, b, c];
                    idx += 1;
                }
            }
        }
    }
    assert_eq!(idx, NUM_MONO, "monomial count for degree {POLY_DEG}");
    out
}

#[inline]
fn mono_value(powers: &[[f64; POLY_DEG + 1]; 3], e: &[u8; 3]) -> f64 {
    powers[0][e[0] as usize] * powers[1][e[1] as usize] * powers[2][e[2] as usize]
}

#[inline]
fn point_powers(y: &Vector3<f64>) -> [[f64; POLY_DEG + 1]; 3] {
    let mut p = [[1.0; POLY_DEG + 1]; 3];
    for c in 0..3 {
        for d in 1..=POLY_DEG {
            p[c][d] = p[c][d - 1] * y[c];
        }
    }
    p
}

/// Null space of the Stokes constraints (zero divergence, curl-free
/// Laplacian) on vector polynomials of degree <= 5, as an orthonormal set of
/// coefficient vectors.
fn stokes_poly_null_basis(exps: &[[u8; 3]; NUM_MONO]) -> Vec<DVector<f64>> {
    use std::collections::BTreeMap;
    let ncoef = 3 * NUM_MONO;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut index: BTreeMap<(u8, [u8; 3]), usize> = BTreeMap::new();
    let mut row_for = |key: (u8, [u8; 3]), rows: &mut Vec<Vec<f64>>| -> usize {
        *index.entry(key).or_insert_with(|| {
            rows.push(vec![0.0; ncoef]);
            rows.len() - 1
        })
    };

    // Divergence rows: one per target monomial of degree <= 4.
    for comp in 0..3 {
        for (m, e) in exps.iter().enumerate() {
            if e[comp] > 0 {
                let mut t = *e;
                t[comp] -= 1;
                let r = row_for((0, t), &mut rows);
                rows[r][comp * NUM_MONO + m] += e[comp] as f64;
            }
        }
    }

    // Curl-of-Laplacian rows (the pressure-compatibility constraint).
    let mut eps = [[[0.0f64; 3]; 3]; 3];
    eps[0][1][2] = 1.0;
    eps[1][2][0] = 1.0;
    eps[2][0][1] = 1.0;
    eps[0][2][1] = -1.0;
    eps[1][0][2] = -1.0;
    eps[2][1][0] = -1.0;
    for ci in 0..3u8 {
        for comp in 0..3 {
            for (m, e) in exps.iter().enumerate() {
                for k in 0..3 {
                    if e[k] < 2 {
                        continue;
                    }
                    let lf = (e[k] * (e[k] - 1)) as f64;
                    let mut le = *e;
                    le[k] -= 2;
                    for jj in 0..3 {
                        let s = eps[ci as usize][jj][comp];
                        if s == 0.0 || le[jj] == 0 {
                            continue;
                        }
                        let f = le[jj] as f64;
                        let mut t = le;
                        t[jj] -= 1;
                        let r = row_for((1 + ci, t), &mut rows);
                        rows[r][comp * NUM_MONO + m] += s * lf * f;
                    }
                }
            }
        }
    }

    let nrows = rows.len();
    let c = DMatrix::from_fn(nrows, ncoef, |r, cidx| rows[r][cidx]);
    let ctc = c.transpose() * &c;
    let eig = ctc.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut null = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        // The smallest genuinely nonzero eigenvalue of this integer-entry
        // Gram matrix is many orders above this cut; true null directions
        // land at the eigensolver's resolution floor well below it.
        if lambda <= lmax * 1e-12 {
            null.push(DVector::from_column_slice(eig.eigenvectors.column(k).as_slice()));
        }
    }
    null
}

fn build_continuation() -> Continuation {
    let exps = monomials();
    let null = stokes_poly_null_basis(&exps);
    let nb = null.len();

    let (nodes, weights) = crate::util::surface_nodes(9, 18);
    let nn = nodes.len();
    let mut design = DMatrix::zeros(3 * nn, nb);
    for (r, (node, w)) in nodes.iter().zip(&weights).enumerate() {
        let sw = w.sqrt();
        let powers = point_powers(node);
        for (col, basis_vec) in null.iter().enumerate() {
            for comp in 0..3 {
                let mut v = 0.0;
                for (m, e) in exps.iter().enumerate() {
                    let coef = basis_vec[comp * NUM_MONO + m];
                    if coef != 0.0 {
                        v += coef * mono_value(&powers, e);
                    }
                }
                design[(3 * r + comp, col)] = sw * v;
            }
        }
    }
    let svd = design.svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .fold(0.0f64, |a, &b| a.max(b));

    let mut table = Vec::with_capacity(COLLOCATION_DIM);
    for b in 0..COLLOCATION_DIM {
        let mut rhs = DVector::zeros(3 * nn);
        for (r, (node, w)) in nodes.iter().zip(&weights).enumerate() {
            let v = collocation_velocity_basis(b, node);
            let sw = w.sqrt();
            for comp in 0..3 {
                rhs[3 * r + comp] = sw * v[comp];
            }
        }
        let sol = svd
            .solve(&rhs, smax * 1e-12)
            .expect("continuation least squares is well posed");
        let mut combined = [[0.0; NUM_MONO]; 3];
        for (col, basis_vec) in null.iter().enumerate() {
            let c = sol[col];
            if c == 0.0 {
                continue;
            }
            for comp in 0..3 {
                for m in 0..NUM_MONO {
                    combined[comp][m] += c * basis_vec[comp * NUM_MONO + m];
                }
            }
        }
        table.push(combined);
    }
    Continuation { exps, table }
}

fn continuation() -> &'static Continuation {
    static TABLE: OnceLock<Continuation> = OnceLock::new();
    TABLE.get_or_init(build_continuation)
}

// ---------------------------------------------------------------------------
// Radiated terms
// ---------------------------------------------------------------------------

/// A dipole term: source sphere plus strain coefficient.
#[derive(Clone, Copy, Debug)]
pub struct DipoleTerm {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub coefficient: TracelessSym3,
}

impl DipoleTerm {
    pub fn new(center: Vector3<f64>, radius: f64, coefficient: TracelessSym3) -> Self {
        Self {
            center,
            radius,
            coefficient,
        }
    }

    pub fn velocity(&self, x: &Vector3<f64>) -> Vector3<f64> {
        dipole_velocity(&self.coefficient, &self.center, self.radius, x)
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Result<Matrix3<f64>> {
        dipole_gradient(&self.coefficient, &self.center, self.radius, x)
    }
}

/// A quadrupole-level correction: coefficients over the fixed 18-member
/// collocation family, radiated from one sphere. The interior extension (a
/// degree-5 Stokes polynomial combination) is precombined at construction.
#[derive(Clone, Debug)]
pub struct CollocationTerm {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub coefficients: [f64; COLLOCATION_DIM],
    interior: Box<[[f64; NUM_MONO]; 3]>,
}

impl CollocationTerm {
    pub fn new(center: Vector3<f64>, radius: f64, coefficients: [f64; COLLOCATION_DIM]) -> Self {
        let cont = continuation();
        let mut interior = Box::new([[0.0; NUM_MONO]; 3]);
        for (b, &c) in coefficients.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for comp in 0..3 {
                for m in 0..NUM_MONO {
                    interior[comp][m] += c * cont.table[b][comp][m];
                }
            }
        }
        Self {
            center,
            radius,
            coefficients,
        interior,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }

    fn interior_velocity(&self, y: &Vector3<f64>) -> Vector3<f64> {
        let cont = continuation();
        let powers = point_powers(y);
        let mut out = Vector3::zeros();
        for comp in 0..3 {
            let mut acc = 0.0;
            for (m, e) in cont.exps.iter().enumerate() {
                let c = self.interior[comp][m];
                if c != 0.0 {
                    acc += c * mono_value(&powers, e);
                }
            }
            out[comp] = acc;
        }
        out
    }

    fn interior_gradient(&self, y: &Vector3<f64>) -> Matrix3<f64> {
        let cont = continuation();
        let powers = point_powers(y);
        let mut out = Matrix3::zeros();
        for comp in 0..3 {
            for (m, e) in cont.exps.iter().enumerate() {
                let c = self.interior[comp][m];
                if c == 0.0 {
                    continue;
                }
                for k in 0..3 {
                    if e[k] == 0 {
                        continue;
                    }
                    let mut de = *e;
                    de[k] -= 1;
                    out[(comp, k)] += c * e[k] as f64 * mono_value(&powers, &de);
                }
            }
        }
        out
    }

    pub fn velocity(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let y = (x - self.center) / self.radius;
        if y.norm_squared() <= 1.0 {
            return self.interior_velocity(&y) * self.radius;
        }
        let mut acc = Vector3::zeros();
        for (b, &c) in self.coefficients.iter().enumerate() {
            if c != 0.0 {
                acc += collocation_velocity_basis(b, &y) * c;
            }
        }
        acc * self.radius
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let y = (x - self.center) / self.radius;
        let r = y.norm();
        if (r - 1.0).abs() <= SURFACE_BAND {
            return Err(Error::OnSurfacePoint);
        }
        if r < 1.0 {
            return Ok(self.interior_gradient(&y));
        }
        let mut acc = Matrix3::zeros();
        for (b, &c) in self.coefficients.iter().enumerate() {
            if c != 0.0 {
                acc += collocation_gradient_basis(b, &y) * c;
            }
        }
        Ok(acc)
    }
}

/// Rigid velocity bookkeeping attached to a particle, applied only when
/// evaluating inside that particle's ball.
#[derive(Clone, Copy, Debug, Default)]
pub struct RigidPart {
    pub velocity: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl RigidPart {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.velocity == Vector3::zeros() && self.omega == Vector3::zeros()
    }
}

/// Everything one particle radiates: mandatory dipole slot, optional
/// quadrupole-level correction, and a rigid interior correction.
#[derive(Clone, Debug)]
pub struct RadiatedTerm {
    pub particle: usize,
    pub dipole: DipoleTerm,
    pub collocation: Option<CollocationTerm>,
    pub rigid_correction: RigidPart,
}

impl RadiatedTerm {
    pub fn zero(particle: usize, center: Vector3<f64>, radius: f64) -> Self {
        Self {
            particle,
            dipole: DipoleTerm::new(center, radius, TracelessSym3::zero()),
            collocation: None,
            rigid_correction: RigidPart::zero(),
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.dipole.center
    }

    pub fn radius(&self) -> f64 {
        self.dipole.radius
    }

    fn contains(&self, x: &Vector3<f64>) -> bool {
        (x - self.dipole.center).norm_squared() <= self.dipole.radius * self.dipole.radius
    }

    fn velocity(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let mut v = self.dipole.velocity(x);
        if let Some(c) = &self.collocation {
            v += c.velocity(x);
        }
        if self.contains(x) && !self.rigid_correction.is_zero() {
            v += self.rigid_correction.velocity
                + self
                    .rigid_correction
                    .omega
                    .cross(&(x - self.dipole.center));
        }
        v
    }

    fn gradient(&self, x: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let mut g = self
            .dipole
            .gradient(x)
            .map_err(|e| self.tag_surface(e))?;
        if let Some(c) = &self.collocation {
            g += c.gradient(x).map_err(|e| self.tag_surface(e))?;
        }
        if self.contains(x) && !self.rigid_correction.is_zero() {
            g += cross_matrix(&self.rigid_correction.omega);
        }
        Ok(g)
    }

    fn tag_surface(&self, e: Error) -> Error {
        match e {
            Error::OnSurfacePoint => Error::OnSurface {
                particle: self.particle,
            },
            other => other,
        }
    }
}

// ---------------------------------------------------------------------------
// Composite flow field
// ---------------------------------------------------------------------------

/// Ambient flow plus the radiated term of every particle: the iteration
/// state. Immutable after construction; evaluation at many points in
/// parallel is the crate's main parallelism axis.
#[derive(Clone, Debug)]
pub struct FlowField {
    pub ambient: AmbientField,
    pub terms: Vec<RadiatedTerm>,
}

impl FlowField {
    /// Ambient field with no radiated terms.
    pub fn ambient_only(ambient: AmbientField) -> Self {
        Self {
            ambient,
            terms: Vec::new(),
        }
    }

    /// Ambient field with one zero term per particle of `cfg`.
    pub fn initial(ambient: AmbientField, cfg: &crate::geometry::ParticleConfig) -> Self {
        Self {
            ambient,
            terms: cfg
                .particles
                .iter()
                .enumerate()
                .map(|(i, p)| RadiatedTerm::zero(i, p.center, p.radius))
                .collect(),
        }
    }

    /// Velocity at `x`: ambient plus all radiated terms, fixed order,
    /// compensated accumulation.
    pub fn velocity(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let mut acc = KahanVec3::new();
        acc.add(&self.ambient.velocity(x)?);
        for t in &self.terms {
            acc.add(&t.velocity(x));
        }
        Ok(acc.total())
    }

    /// Full velocity gradient at `x`.
    pub fn gradient(&self, x: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let mut acc = KahanMat3::new();
        acc.add(&self.ambient.gradient(x)?);
        for t in &self.terms {
            acc.add(&t.gradient(x)?);
        }
        Ok(acc.total())
    }

    /// Symmetric traceless gradient at `x`.
    pub fn strain(&self, x: &Vector3<f64>) -> Result<TracelessSym3> {
        Ok(TracelessSym3::from_matrix(&self.gradient(x)?))
    }
}

/// Velocity of a composite field at a point.
pub fn evaluate_velocity(field: &FlowField, x: &Vector3<f64>) -> Result<Vector3<f64>> {
    field.velocity(x)
}

/// Strain (symmetric traceless gradient) of a composite field at a point.
pub fn evaluate_strain(field: &FlowField, x: &Vector3<f64>) -> Result<TracelessSym3> {
    field.strain(x)
}
