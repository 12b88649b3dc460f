//! Small numeric helpers: compensated summation and line fitting.

use nalgebra::{Matrix3, Vector3};

/// Neumaier compensated accumulator for a single f64.
///
/// Guarantees a summation error independent of the number of terms, which is
/// what makes residual norms and moment averages bit-stable under the fixed
/// summation order the crate promises.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Component-wise compensated accumulator for 3-vectors.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanVec3 {
    c: [Kahan; 3],
}

impl KahanVec3 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: &Vector3<f64>) {
        for k in 0..3 {
            self.c[k].add(v[k]);
        }
    }

    pub fn total(&self) -> Vector3<f64> {
        Vector3::new(self.c[0].total(), self.c[1].total(), self.c[2].total())
    }
}

/// Component-wise compensated accumulator for 3x3 matrices.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanMat3 {
    c: [[Kahan; 3]; 3],
}

impl KahanMat3 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, m: &Matrix3<f64>) {
        for i in 0..3 {
            for j in 0..3 {
                self.c[i][j].add(m[(i, j)]);
            }
        }
    }

    pub fn total(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.c[i][j].total())
    }
}

/// Legendre polynomial value and derivative at `x` via the three-term
/// recurrence; used by the Gauss node solver.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Gauss-Legendre nodes (ascending, exclusive of the endpoints) and weights
/// on `[-1, 1]`. Exact for polynomials through degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mirror = n - 1 - i;
        if i == mirror {
            // Odd count: the middle node is exactly zero by symmetry.
            let (_, dp) = legendre_pair(n, 0.0);
            nodes[i] = 0.0;
            weights[i] = 2.0 / (dp * dp);
            continue;
        }
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pair(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pair(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // i counts roots from the largest downward; store ascending.
        nodes[i] = -x;
        nodes[mirror] = x;
        weights[i] = w;
        weights[mirror] = w;
    }
    (nodes, weights)
}

/// Product rule on the unit sphere: Gauss-Legendre in cos(theta) times
/// uniform midpoint azimuths. Weights sum to 4 pi; spherical polynomials
/// through degree `2 min(n_theta, n_phi/2) - 1` integrate exactly.
///
/// Node order is fixed: polar index outer, azimuth inner.
pub fn surface_nodes(n_theta: usize, n_phi: usize) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let (ct, wt) = gauss_legendre(n_theta);
    let mut nodes = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    for i in 0..n_theta {
        let st = (1.0 - ct[i] * ct[i]).sqrt();
        for j in 0..n_phi {
            let phi = dphi * (j as f64 + 0.5);
            nodes.push(Vector3::new(st * phi.cos(), st * phi.sin(), ct[i]));
            weights.push(wt[i] * dphi);
        }
    }
    (nodes, weights)
}

/// Least-squares line fit `y = slope * x + intercept`.
///
/// Returns (slope, intercept, standard error of the slope). The standard
/// error is 0 when there are no residual degrees of freedom.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len(), "line_fit needs paired samples");
    let n = xs.len();
    assert!(n >= 2, "line_fit needs at least two points");
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    assert!(sxx > 0.0, "line_fit needs at least two distinct abscissae");
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if n == 2 {
        return (slope, intercept, 0.0);
    }
    let mut ss_res = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        ss_res += r * r;
    }
    let stderr = (ss_res / (nf - 2.0) / sxx).sqrt();
    (slope, intercept, stderr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_catastrophic_cancellation() {
        let mut acc = Kahan::new();
        acc.add(1.0);
        acc.add(1e100);
        acc.add(1.0);
        acc.add(-1e100);
        assert_eq!(acc.total(), 2.0, "compensation must retain the small terms");
    }

    #[test]
    fn line_fit_exact_on_a_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (slope, intercept, stderr) = line_fit(&xs, &ys);
        assert!((slope - 2.0).abs() < 1e-14, "slope should be 2, got {slope}");
        assert!((intercept - 1.0).abs() < 1e-14);
        assert!(stderr < 1e-14, "noiseless data should have zero slope error");
    }

    #[test]
    fn line_fit_two_points() {
        let (slope, intercept, stderr) = line_fit(&[1.0, 2.0], &[5.0, 9.0]);
        assert_eq!(slope, 4.0);
        assert_eq!(intercept, 1.0);
        assert_eq!(stderr, 0.0);
    }

    #[test]
    fn gauss_legendre_weight_sum_and_exactness() {
        for n in [4usize, 8, 9, 16] {
            let (xs, ws) = gauss_legendre(n);
            let total: f64 = ws.iter().sum();
            assert!(
                (total - 2.0).abs() < 1e-14,
                "n = {n}: weights must sum to 2, got {total}"
            );
            assert!(xs.windows(2).all(|w| w[0] < w[1]), "nodes ascend");
            // Exact through degree 2n - 1: check the two highest even powers.
            for p in [2 * n - 2, 2 * n - 4] {
                let quad: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x.powi(p as i32)).sum();
                let exact = 2.0 / (p as f64 + 1.0);
                assert!(
                    (quad - exact).abs() < 1e-13,
                    "n = {n}: x^{p} integrates to {quad}, want {exact}"
                );
            }
        }
    }

    #[test]
    fn surface_nodes_integrate_low_moments() {
        let (nodes, weights) = surface_nodes(9, 18);
        assert_eq!(nodes.len(), 162);
        let total: f64 = weights.iter().sum();
        assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        // Odd moments vanish; x^2 averages to 1/3 of the sphere area.
        let mut x1 = 0.0;
        let mut x2 = 0.0;
        for (n, w) in nodes.iter().zip(&weights) {
            x1 += w * n.x;
            x2 += w * n.x * n.x;
        }
        assert!(x1.abs() < 1e-14, "odd moment should vanish, got {x1}");
        let exact = 4.0 * std::f64::consts::PI / 3.0;
        assert!((x2 - exact).abs() < 1e-12, "x^2 moment {x2} vs {exact}");
    }
}
