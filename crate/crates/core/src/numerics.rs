//! Small dense/banded numerical kernels shared by the solvers.

/// Trapezoid weights for `n` uniform nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Bernoulli function z / (e^z - 1), stable for all z.
#[inline]
pub fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 - 0.5 * z + z * z / 12.0
    } else if z > 700.0 {
        0.0
    } else {
        z / z.exp_m1()
    }
}

/// LU factorization of a tridiagonal matrix without pivoting, for repeated
/// solves with diagonally dominant matrices.
#[derive(Debug, Clone)]
pub struct TridiagFactor {
    lower: Vec<f64>,
    cprime: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl TridiagFactor {
    /// `lower[i]` couples row i to i-1 (lower[0] unused), `upper[i]` couples
    /// row i to i+1 (last unused).
    pub fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Self {
        let n = diag.len();
        let mut cprime = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            let l = if i > 0 { lower[i] } else { 0.0 };
            let den = diag[i] - l * prev_c;
            inv_denom[i] = 1.0 / den;
            cprime[i] = if i + 1 < n { upper[i] / den } else { 0.0 };
            prev_c = cprime[i];
        }
        TridiagFactor {
            lower: lower.to_vec(),
            cprime,
            inv_denom,
        }
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mut prev = 0.0;
        for i in 0..n {
            let l = if i > 0 { self.lower[i] } else { 0.0 };
            rhs[i] = (rhs[i] - l * prev) * self.inv_denom[i];
            prev = rhs[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            rhs[i] -= self.cprime[i] * rhs[i + 1];
        }
    }
}

/// Solves a general tridiagonal system with partial pivoting.
pub fn tridiag_solve_pivot(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut du: Vec<f64> = (0..n).map(|i| if i + 1 < n { upper[i] } else { 0.0 }).collect();
    let mut du2 = vec![0.0; n];
    let mut dl: Vec<f64> = (0..n).map(|i| if i + 1 < n { lower[i + 1] } else { 0.0 }).collect();
    let mut b = rhs.to_vec();
    for i in 0..n.saturating_sub(1) {
        if d[i].abs() >= dl[i].abs() {
            let f = if d[i] != 0.0 { dl[i] / d[i] } else { 0.0 };
            d[i + 1] -= f * du[i];
            b[i + 1] -= f * b[i];
            dl[i] = 0.0;
        } else {
            // swap rows i and i+1
            let f = d[i] / dl[i];
            d[i] = dl[i];
            let tmp = d[i + 1];
            d[i + 1] = du[i] - f * tmp;
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] = -f * du2[i];
            }
            du[i] = tmp;
            let tb = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tb - f * b[i + 1];
        }
    }
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        if i + 1 < n {
            s -= du[i] * x[i + 1];
        }
        if i + 2 < n {
            s -= du2[i] * x[i + 2];
        }
        let p = if d[i].abs() < tiny { tiny.copysign(d[i]) } else { d[i] };
        x[i] = s / p;
    }
    x
}

/// Eigenpairs of a symmetric tridiagonal matrix.
pub struct SymTridiag {
    pub diag: Vec<f64>,
    /// off[i] couples i and i+1.
    pub off: Vec<f64>,
}

impl SymTridiag {
    /// Number of eigenvalues strictly below `x` (Sturm sequence).
    fn count_below(&self, x: f64) -> usize {
        let n = self.diag.len();
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..n {
            let e2 = if i > 0 { self.off[i - 1] * self.off[i - 1] } else { 0.0 };
            q = self.diag[i] - x - if i > 0 { e2 / q } else { 0.0 };
            if q == 0.0 {
                q = -f64::EPSILON * (self.diag[i].abs() + 1.0);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `m` smallest eigenvalues (ascending) by bisection.
    pub fn smallest_eigenvalues(&self, m: usize) -> Vec<f64> {
        let n = self.diag.len();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let r = (if i > 0 { self.off[i - 1].abs() } else { 0.0 })
                + (if i + 1 < n { self.off[i].abs() } else { 0.0 });
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        let scale = lo.abs().max(hi.abs()).max(1e-300);
        (0..m.min(n))
            .map(|k| {
                let (mut a, mut b) = (lo, hi);
                while b - a > 4.0 * f64::EPSILON * scale {
                    let mid = 0.5 * (a + b);
                    if mid <= a || mid >= b {
                        break;
                    }
                    if self.count_below(mid) > k {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                0.5 * (a + b)
            })
            .collect()
    }

    /// Unit eigenvector for eigenvalue `lambda` by inverse iteration,
    /// orthogonalized against `previous`.
    pub fn eigenvector(&self, lambda: f64, previous: &[Vec<f64>]) -> Vec<f64> {
        let n = self.diag.len();
        let scale = max_abs(&self.diag).max(1.0);
        let shift = lambda + 1e3 * f64::EPSILON * scale;
        let d: Vec<f64> = self.diag.iter().map(|v| v - shift).collect();
        let mut lower = vec![0.0; n];
        lower[1..].copy_from_slice(&self.off[..n - 1]);
        let mut upper = vec![0.0; n];
        upper[..n - 1].copy_from_slice(&self.off[..n - 1]);
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i as f64) * 0.7311).sin()).collect();
        for _ in 0..4 {
            for p in previous {
                let c = dot(&v, p);
                for (vi, pi) in v.iter_mut().zip(p) {
                    *vi -= c * pi;
                }
            }
            let nrm = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= nrm);
            v = tridiag_solve_pivot(&lower, &d, &upper, &v);
        }
        for p in previous {
            let c = dot(&v, p);
            for (vi, pi) in v.iter_mut().zip(p) {
                *vi -= c * pi;
            }
        }
        let nrm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= nrm);
        v
    }
}

/// Cubic (four-point Lagrange) interpolation of samples on a uniform grid
/// starting at `x0` with spacing `h`. Outside the grid the value is 0.
pub fn interp_cubic(values: &[f64], x0: f64, h: f64, x: f64) -> f64 {
    let n = values.len();
    let s = (x - x0) / h;
    if s < -1e-12 || s > (n - 1) as f64 + 1e-12 {
        return 0.0;
    }
    let i = (s.floor() as isize).clamp(1, n as isize - 3) as usize;
    let t = s - i as f64;
    let (p0, p1, p2, p3) = (values[i - 1], values[i], values[i + 1], values[i + 2]);
    // nodes at t = -1, 0, 1, 2
    let l0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
    let l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    let l2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
    let l3 = (t + 1.0) * t * (t - 1.0) / 6.0;
    p0 * l0 + p1 * l1 + p2 * l2 + p3 * l3
}

/// Dirichlet sine modes sin(k pi (i+1)/(n+1)) on `n` interior nodes.
#[derive(Debug, Clone)]
pub struct SineBasis {
    pub n: usize,
    /// `table[(k-1) * n + i]`.
    table: Vec<f64>,
}

impl SineBasis {
    pub fn new(n: usize) -> Self {
        let mut table = vec![0.0; n * n];
        let den = (n + 1) as f64;
        for k in 1..=n {
            for i in 0..n {
                // reduce the argument exactly before calling sin
                let m = (k * (i + 1)) % (2 * (n + 1));
                table[(k - 1) * n + i] = (std::f64::consts::PI * m as f64 / den).sin();
            }
        }
        SineBasis { n, table }
    }

    /// Mode `k` (1-based) sampled on the interior nodes.
    pub fn mode(&self, k: usize) -> &[f64] {
        &self.table[(k - 1) * self.n..k * self.n]
    }

    /// Sine coefficient of mode `k`: (2/(n+1)) sum_i u_i s_k(i).
    pub fn coefficient(&self, u: &[f64], k: usize) -> f64 {
        2.0 / (self.n + 1) as f64 * dot(u, self.mode(k))
    }

    pub fn coefficients(&self, u: &[f64], kmax: usize) -> Vec<f64> {
        (1..=kmax.min(self.n)).map(|k| self.coefficient(u, k)).collect()
    }

    /// Sum_k c[k-1] s_k.
    pub fn synthesize(&self, coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                for (o, s) in out.iter_mut().zip(self.mode(k + 1)) {
                    *o += c * s;
                }
            }
        }
    }

    /// Eigenvalue of -D+D- (Dirichlet) for mode k with spacing h.
    pub fn laplacian_eigenvalue(&self, k: usize, h: f64) -> f64 {
        let s = (std::f64::consts::PI * k as f64 / (2.0 * (self.n + 1) as f64)).sin();
        4.0 * s * s / (h * h)
    }
}

/// Grid L2 norm of an interior-node function with Dirichlet zeros.
pub fn l2_norm(u: &[f64], h: f64) -> f64 {
    (h * dot(u, u)).sqrt()
}

/// Discrete H2 norm sqrt(|u|^2 + |D+D- u|^2) with zero Dirichlet values at
/// both ends; the second difference at each boundary node uses the
/// one-sided stencil (u_b - 2u_1 + u_2)/h^2.
pub fn h2_norm(u: &[f64], h: f64) -> f64 {
    let n = u.len();
    let at = |i: isize| -> f64 {
        if i < 0 || i >= n as isize {
            0.0
        } else {
            u[i as usize]
        }
    };
    let h2 = h * h;
    let mut s2 = 0.0;
    for i in 0..n as isize {
        let d = (at(i - 1) - 2.0 * at(i) + at(i + 1)) / h2;
        s2 += d * d;
    }
    let left = (0.0 - 2.0 * at(0) + at(1)) / h2;
    let right = (0.0 - 2.0 * at(n as isize - 1) + at(n as isize - 2)) / h2;
    s2 += 0.5 * (left * left + right * right);
    (h * (dot(u, u) + s2)).sqrt()
}

/// Ordinary least-squares line fit; returns (slope, intercept, r2).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, r2)
}
