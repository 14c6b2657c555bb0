//! Coefficient states to 2D densities and back, and density-space errors.

use rayon::prelude::*;

use crate::coefsys::CoefficientState;
use crate::eigenbasis::EigenBasis;
use crate::error::{Error, Result};
use crate::model::Discretization;
use crate::numerics::trapezoid_weights;
use crate::slowmanifold::SlowManifoldGraph;

/// Density on the x grid times the full y grid (boundary rows included).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `values[iy][ix]`.
    pub values: Vec<Vec<f64>>,
}

impl DensityField {
    pub fn zeros(x: Vec<f64>, y: Vec<f64>) -> Self {
        let values = vec![vec![0.0; x.len()]; y.len()];
        DensityField { t: 0.0, x, y, values }
    }

    pub fn from_fn(x: Vec<f64>, y: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = y.iter().map(|&yy| x.iter().map(|&xx| f(xx, yy)).collect()).collect();
        DensityField { t: 0.0, x, y, values }
    }

    fn weights(&self) -> (Vec<f64>, Vec<f64>) {
        let hx = self.x[1] - self.x[0];
        let hy = self.y[1] - self.y[0];
        (trapezoid_weights(self.x.len(), hx), trapezoid_weights(self.y.len(), hy))
    }

    /// int rho dx per y node.
    pub fn marginal(&self) -> Vec<f64> {
        let (wx, _) = self.weights();
        self.values
            .iter()
            .map(|row| row.iter().zip(&wx).map(|(v, w)| v * w).sum())
            .collect()
    }

    pub fn mass(&self) -> f64 {
        let (_, wy) = self.weights();
        self.marginal().iter().zip(&wy).map(|(m, w)| m * w).sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().flatten().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// sum_j a_j(y) phi_j^y(x) on the solver grid; rows at y = +-R are zero.
pub fn reconstruct_density(state: &CoefficientState, basis: &EigenBasis, disc: &Discretization, r: f64) -> DensityField {
    assert!(basis.n_modes() >= state.a.len(), "basis must cover the state's J");
    let x = disc.x_grid();
    let y = disc.y_full(r);
    let ny = y.len();
    let values: Vec<Vec<f64>> = (0..ny)
        .into_par_iter()
        .map(|iy| {
            let mut row = vec![0.0; x.len()];
            if iy == 0 || iy == ny - 1 {
                return row;
            }
            for (j, a) in state.a.iter().enumerate() {
                let c = a[iy - 1];
                if c != 0.0 {
                    for (o, p) in row.iter_mut().zip(basis.eval_row(j, y[iy], &x)) {
                        *o += c * p;
                    }
                }
            }
            row
        })
        .collect();
    DensityField { t: state.t, x, y, values }
}

/// a_j(y) = int rho psi_j dx / N_j on the interior y nodes (trapezoid in x).
pub fn decompose_density(rho: &DensityField, basis: &EigenBasis, j_max: usize) -> CoefficientState {
    assert!(basis.n_modes() > j_max, "basis must cover J");
    let (wx, _) = rho.weights();
    let ny = rho.y.len() - 2;
    let rows: Vec<Vec<f64>> = (1..=ny)
        .into_par_iter()
        .map(|iy| {
            (0..=j_max)
                .map(|j| {
                    let psi = basis.eval_adj_row(j, rho.y[iy], &rho.x);
                    let s: f64 = rho.values[iy].iter().zip(&psi).zip(&wx).map(|((r, p), w)| r * p * w).sum();
                    s / basis.adj_norm(j)
                })
                .collect()
        })
        .collect();
    let mut a = vec![vec![0.0; ny]; j_max + 1];
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            a[j][i] = *v;
        }
    }
    CoefficientState { t: rho.t, a }
}

/// Density of the slow-manifold point over slow coordinates `vs`.
pub fn manifold_density(
    graph: &SlowManifoldGraph,
    vs: &[f64],
    basis: &EigenBasis,
    disc: &Discretization,
    r: f64,
) -> DensityField {
    reconstruct_density(&graph.lift(vs), basis, disc, r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityError {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

/// Trapezoid-weighted norms of a - b.
pub fn density_error(a: &DensityField, b: &DensityField) -> Result<DensityError> {
    let same = |p: &[f64], q: &[f64]| p.len() == q.len() && p.iter().zip(q).all(|(u, v)| (u - v).abs() <= 1e-12 * (1.0 + u.abs()));
    if !same(&a.x, &b.x) || !same(&a.y, &b.y) {
        return Err(Error::GridMismatch(format!(
            "density grids differ: {}x{} vs {}x{}",
            a.x.len(),
            a.y.len(),
            b.x.len(),
            b.y.len()
        )));
    }
    let (wx, wy) = a.weights();
    let mut e = DensityError {
        l1: 0.0,
        l2: 0.0,
        linf: 0.0,
    };
    for (iy, (ra, rb)) in a.values.iter().zip(&b.values).enumerate() {
        for (ix, (u, v)) in ra.iter().zip(rb).enumerate() {
            let d = (u - v).abs();
            let w = wx[ix] * wy[iy];
            e.l1 += w * d;
            e.l2 += w * d * d;
            e.linf = e.linf.max(d);
        }
    }
    e.l2 = e.l2.sqrt();
    Ok(e)
}

/// Norms of the difference of two slow marginals on a common y grid.
pub fn marginal_error(a: &[f64], b: &[f64], hy: f64) -> Result<DensityError> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!("marginal lengths {} vs {}", a.len(), b.len())));
    }
    let w = trapezoid_weights(a.len(), hy);
    let mut e = DensityError {
        l1: 0.0,
        l2: 0.0,
        linf: 0.0,
    };
    for ((u, v), w) in a.iter().zip(b).zip(&w) {
        let d = (u - v).abs();
        e.l1 += w * d;
        e.l2 += w * d * d;
        e.linf = e.linf.max(d);
    }
    e.l2 = e.l2.sqrt();
    Ok(e)
}
