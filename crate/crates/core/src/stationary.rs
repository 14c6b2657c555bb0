//! Stationary density of the fast operator, the discrete fast operator
//! itself, and the projections P and Q.
//!
//! With D = sigma1^2/2 the fast operator is L1 u = D u'' - (f u)'. Its
//! normalized kernel is p_s = c exp(Psi), Psi' = 2 f / sigma1^2.

use crate::error::{Error, Result};
use crate::model::{Discretization, SdeModel};
use crate::numerics::{bernoulli, trapezoid_weights, weighted_dot};

pub const TAIL_TOL: f64 = 1e-10;

/// Fraction of [-X, X] (at each end) used for the tail-mass check.
const TAIL_FRACTION: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct StationaryDensity {
    pub y_param: f64,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    /// c in p_s = c exp(Psi) with Psi(0) = 0.
    pub normalizer: f64,
    /// Psi at the grid nodes, anchored at x = 0.
    pub potential: Vec<f64>,
    /// Trapezoid weights of the x grid.
    pub weights: Vec<f64>,
}

impl StationaryDensity {
    pub fn mass(&self) -> f64 {
        self.weights.iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }
}

/// Integral of psi = 2f/sigma1^2 over [a, b] by Simpson's rule.
fn psi_integral(model: &SdeModel, y: f64, a: f64, b: f64) -> f64 {
    let k = 2.0 / (model.sigma1 * model.sigma1);
    let m = 0.5 * (a + b);
    k * (b - a) / 6.0 * (model.f.eval(a, y) + 4.0 * model.f.eval(m, y) + model.f.eval(b, y))
}

/// Psi(x_i) = int_0^{x_i} psi, accumulated interval by interval.
pub fn potential(model: &SdeModel, y: f64, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    // node closest to the anchor
    let k = (0..n)
        .min_by(|&a, &b| x[a].abs().partial_cmp(&x[b].abs()).unwrap())
        .unwrap();
    let mut pot = vec![0.0; n];
    pot[k] = if x[k] == 0.0 { 0.0 } else { psi_integral(model, y, 0.0, x[k]) };
    for i in k + 1..n {
        pot[i] = pot[i - 1] + psi_integral(model, y, x[i - 1], x[i]);
    }
    for i in (0..k).rev() {
        pot[i] = pot[i + 1] - psi_integral(model, y, x[i], x[i + 1]);
    }
    pot
}

pub fn stationary_density(model: &SdeModel, y: f64, disc: &Discretization) -> Result<StationaryDensity> {
    stationary_density_with_tol(model, y, disc, TAIL_TOL)
}

pub fn stationary_density_with_tol(
    model: &SdeModel,
    y: f64,
    disc: &Discretization,
    tail_tol: f64,
) -> Result<StationaryDensity> {
    let x = disc.x_grid();
    let w = trapezoid_weights(disc.nx, disc.dx());
    let pot = potential(model, y, &x);
    if pot.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidModel {
            field: "f".into(),
            reason: format!("non-finite potential at y = {y}"),
        });
    }
    let shift = pot.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = pot.iter().map(|p| (p - shift).exp()).collect();
    let z = weighted_dot(&w, &unnorm, &vec![1.0; unnorm.len()]);
    let values: Vec<f64> = unnorm.iter().map(|v| v / z).collect();
    let normalizer = (-shift).exp() / z;
    let cut = (1.0 - TAIL_FRACTION) * disc.x_max;
    let tail: f64 = x
        .iter()
        .zip(&w)
        .zip(&values)
        .filter(|((xi, _), _)| xi.abs() > cut)
        .map(|((_, wi), v)| wi * v)
        .sum();
    if tail > tail_tol {
        return Err(Error::TailMassExceeded {
            y,
            mass: tail,
            tol: tail_tol,
        });
    }
    Ok(StationaryDensity {
        y_param: y,
        x,
        values,
        normalizer,
        potential: pot,
        weights: w,
    })
}

/// Discrete fast operator L1 at fixed y: finite volumes with
/// exponentially fitted (Scharfetter-Gummel) fluxes, zero flux at +-X,
/// half cells at the ends. The kernel is exactly exp(Psi).
#[derive(Debug, Clone)]
pub struct FastOperator {
    /// Row i couples to i-1 with `lower[i]`, to i+1 with `upper[i]`.
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub weights: Vec<f64>,
    pub potential: Vec<f64>,
    pub diffusion: f64,
    pub h: f64,
}

impl FastOperator {
    pub fn from_potential(potential: Vec<f64>, diffusion: f64, h: f64) -> Self {
        let n = potential.len();
        let weights = trapezoid_weights(n, h);
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let k = diffusion / h;
        for i in 0..n - 1 {
            // flux J_{i+1/2} = k [B(dPsi) u_{i+1} - B(-dPsi) u_i]
            let dp = potential[i + 1] - potential[i];
            let bp = k * bernoulli(dp);
            let bm = k * bernoulli(-dp);
            // row i gains +J, row i+1 gains -J
            upper[i] += bp / weights[i];
            diag[i] -= bm / weights[i];
            diag[i + 1] -= bp / weights[i + 1];
            lower[i + 1] += bm / weights[i + 1];
        }
        FastOperator {
            lower,
            diag,
            upper,
            weights,
            potential,
            diffusion,
            h,
        }
    }

    pub fn new(model: &SdeModel, y: f64, disc: &Discretization) -> Self {
        let x = disc.x_grid();
        let pot = potential(model, y, &x);
        FastOperator::from_potential(pot, 0.5 * model.sigma1 * model.sigma1, disc.dx())
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * u[i];
                if i > 0 {
                    v += self.lower[i] * u[i - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * u[i + 1];
                }
                v
            })
            .collect()
    }
}

/// P u = p_s * int u dx, Q = I - P, with the trapezoid inner product.
#[derive(Debug, Clone)]
pub struct ProjectionPair {
    pub ps: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn build_projections(ps: &StationaryDensity, _disc: &Discretization) -> ProjectionPair {
    ProjectionPair {
        ps: ps.values.clone(),
        weights: ps.weights.clone(),
    }
}

impl ProjectionPair {
    pub fn apply_p(&self, u: &[f64]) -> Vec<f64> {
        let m: f64 = self.weights.iter().zip(u).map(|(w, v)| w * v).sum();
        self.ps.iter().map(|p| p * m).collect()
    }

    pub fn apply_q(&self, u: &[f64]) -> Vec<f64> {
        let pu = self.apply_p(u);
        u.iter().zip(pu).map(|(a, b)| a - b).collect()
    }

    /// Dense matrix of P (row-major, n x n).
    pub fn p_matrix(&self) -> nalgebra::DMatrix<f64> {
        let n = self.ps.len();
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.ps[i] * self.weights[j])
    }

    pub fn q_matrix(&self) -> nalgebra::DMatrix<f64> {
        let n = self.ps.len();
        nalgebra::DMatrix::identity(n, n) - self.p_matrix()
    }
}
