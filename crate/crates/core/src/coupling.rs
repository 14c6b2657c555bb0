//! Coupling tensors of the coefficient system.
//!
//! For each y node:
//!   G_i      = int g phi_i dx
//!   G_kj     = int g phi_k phi_j dx
//!   Gtil_kj  = int g phi_k d_y phi_j dx
//! and the transport/reaction tensors of the adjoint-tested system,
//!   T_ij = (int g phi_i psi_j + sigma2^2 int phi_i d_y psi_j) / N_j
//!   K_ij = (int g phi_i d_y psi_j + sigma2^2/2 int phi_i d_yy psi_j) / N_j
//! so that d_t a_j = (sigma2^2/2) a_j'' - lambda_j/eps a_j
//!                   - sum_i d_y(T_ij a_i) + sum_i K_ij a_i.

use std::f64::consts::{PI, SQRT_2};

use gauss_quad::GaussHermite;
use rayon::prelude::*;

use crate::eigenbasis::{hermite_all, tabulated_norm, EigenBasis, HermiteBasis};
use crate::error::{Error, Result};
use crate::model::{Discretization, SdeModel};

/// Relative change allowed between `quad_nodes` and `2 quad_nodes`.
pub const QUAD_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CouplingTensors {
    pub j_max: usize,
    /// y nodes at which the tensors are sampled (normally including +-R).
    pub ygrid: Vec<f64>,
    pub c0: f64,
    /// `g[i][n]`, i = 0..=J.
    pub g: Vec<Vec<f64>>,
    /// `gkj[k][j][n]`, k, j = 0..=J.
    pub gkj: Vec<Vec<Vec<f64>>>,
    /// `gtil[k][j][n]`, k, j = 0..=J.
    pub gtil: Vec<Vec<Vec<f64>>>,
    /// `transport[row][col][n]` = T_{col,row}.
    pub transport: Vec<Vec<Vec<f64>>>,
    /// `reaction[row][col][n]` = K_{col,row}.
    pub reaction: Vec<Vec<Vec<f64>>>,
}

/// All tensors at a single y node.
#[derive(Debug, Clone, PartialEq)]
struct NodeValues {
    g: Vec<f64>,
    gkj: Vec<Vec<f64>>,
    gtil: Vec<Vec<f64>>,
    transport: Vec<Vec<f64>>,
    reaction: Vec<Vec<f64>>,
}

impl NodeValues {
    fn zeros(m: usize) -> Self {
        NodeValues {
            g: vec![0.0; m],
            gkj: vec![vec![0.0; m]; m],
            gtil: vec![vec![0.0; m]; m],
            transport: vec![vec![0.0; m]; m],
            reaction: vec![vec![0.0; m]; m],
        }
    }
}

struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    fn new(n: usize) -> Self {
        let gh = GaussHermite::new(n.try_into().expect("node count must be positive"));
        // the library's tail weights carry absolute (not relative) error, which
        // high-degree integrands amplify; polish nodes and use the Christoffel form
        let (nodes, weights) = gh
            .iter()
            .map(|(x, _)| {
                let mut x = *x;
                for _ in 0..2 {
                    let (hn, hn1, _) = orthonormal_hermite(n, x);
                    x -= hn / ((2.0 * n as f64).sqrt() * hn1);
                }
                (x, 1.0 / orthonormal_hermite(n, x).2)
            })
            .unzip();
        Rule { nodes, weights }
    }
}

/// (h_n(x), h_{n-1}(x), sum_{k<n} h_k(x)^2) for Hermite polynomials
/// orthonormal under exp(-x^2).
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    let mut sum = 0.0;
    for k in 0..n {
        sum += cur * cur;
        let next = (2.0 / (k + 1) as f64).sqrt() * x * cur - (k as f64 / (k + 1) as f64).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sum)
}

/// Hermite-path integrals at one y node. Products containing
/// exp(-z^2/2) are integrated with z = sqrt2 t, products containing
/// exp(-z^2) with z = t, so every integrand is polynomial times the
/// Gauss-Hermite weight.
/// With `magnitude` set, absolute values of the summands are accumulated
/// instead (a round-off scale for the convergence check).
fn hermite_node(hb: &HermiteBasis, model: &SdeModel, m: usize, y: f64, rule: &Rule, magnitude: bool) -> NodeValues {
    let acc = |v: f64| if magnitude { v.abs() } else { v };
    let s = hb.s;
    let a = hb.drift.center(y);
    let a1 = hb.drift.a1;
    let sig2 = model.sigma2 * model.sigma2;
    let mut out = NodeValues::zeros(m);
    let sq2pi = (2.0 * PI).sqrt();
    // single exp(-z^2/2): phi_i = e^{-t^2} H_i(t), psi_j = sqrt(2pi)/s H_j(t)
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let x = a + SQRT_2 * t / s;
        let gx = model.g.eval(x, y);
        let h = hermite_all(m, t);
        let jac = SQRT_2 / s * w;
        for i in 0..m {
            out.g[i] += acc(jac * gx * h[i]);
            for j in 0..m {
                let psi = sq2pi / s * h[j];
                let dpsi = if j >= 1 { -sq2pi * SQRT_2 * j as f64 * a1 * h[j - 1] } else { 0.0 };
                let ddpsi = if j >= 2 { sq2pi * 2.0 * (j * (j - 1)) as f64 * a1 * a1 * s * h[j - 2] } else { 0.0 };
                let base = jac * h[i];
                out.transport[j][i] += acc(base * gx * psi) + acc(base * sig2 * dpsi);
                out.reaction[j][i] += acc(base * gx * dpsi) + acc(base * 0.5 * sig2 * ddpsi);
            }
        }
    }
    for j in 0..m {
        let nj = hb.adj_norm(j).abs();
        for i in 0..m {
            out.transport[j][i] /= nj;
            out.reaction[j][i] /= nj;
        }
    }
    // double exp(-z^2): phi_k phi_j = e^{-t^2} H_k(t/sqrt2) H_j(t/sqrt2)
    let dphi = a1 * s / SQRT_2;
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let x = a + t / s;
        let gx = model.g.eval(x, y);
        let h = hermite_all(m + 1, t / SQRT_2);
        let jac = w / s;
        for k in 0..m {
            for j in 0..m {
                out.gkj[k][j] += acc(jac * gx * h[k] * h[j]);
                out.gtil[k][j] += acc(jac * gx * h[k] * dphi * h[j + 1]);
            }
        }
    }
    out
}

/// Numeric-path integrals at one y node, trapezoid on the x grid.
fn numeric_node(basis: &EigenBasis, model: &SdeModel, m: usize, y: f64, xs: &[f64]) -> Result<NodeValues> {
    let nb = basis.numeric().expect("numeric basis");
    let gb = nb.grid(y)?;
    let sig2 = model.sigma2 * model.sigma2;
    let gx: Vec<f64> = xs.iter().map(|&x| model.g.eval(x, y)).collect();
    let w = &gb.weights;
    let mut dphi = Vec::with_capacity(m);
    let mut dpsi = Vec::with_capacity(m);
    let mut ddpsi = Vec::with_capacity(m);
    for j in 0..m {
        let (d1, _) = nb.grid_dy(y, |b| &b.phi[j])?;
        let (p1, p2) = nb.grid_dy(y, |b| &b.psi[j])?;
        dphi.push(d1);
        dpsi.push(p1);
        ddpsi.push(p2);
    }
    let mut out = NodeValues::zeros(m);
    let n = xs.len();
    for i in 0..m {
        let phi_i = &gb.phi[i];
        out.g[i] = (0..n).map(|q| w[q] * gx[q] * phi_i[q]).sum();
        for j in 0..m {
            let mut gk = 0.0;
            let mut gt = 0.0;
            let mut tr = 0.0;
            let mut re = 0.0;
            for q in 0..n {
                let wp = w[q] * phi_i[q];
                gk += wp * gx[q] * gb.phi[j][q];
                gt += wp * gx[q] * dphi[j][q];
                tr += wp * (gx[q] * gb.psi[j][q] + sig2 * dpsi[j][q]);
                re += wp * (gx[q] * dpsi[j][q] + 0.5 * sig2 * ddpsi[j][q]);
            }
            out.gkj[i][j] = gk;
            out.gtil[i][j] = gt;
            out.transport[j][i] = tr;
            out.reaction[j][i] = re;
        }
    }
    Ok(out)
}

/// `a`, `b`: values at quad_nodes and 2 quad_nodes; `mag`: summand
/// magnitudes, below which differences are round-off.
fn check_convergence(a: &NodeValues, b: &NodeValues, mag: &NodeValues, y: f64) -> Result<()> {
    let check = |name: &'static str, x: &[Vec<f64>], z: &[Vec<f64>], mg: &[Vec<f64>]| -> Result<()> {
        for k in 0..x.len() {
            for j in 0..x[k].len() {
                let d = (x[k][j] - z[k][j]).abs();
                if d > QUAD_REL_TOL * z[k][j].abs() && d > 1e-11 * mg[k][j] {
                    return Err(Error::QuadratureDivergence {
                        tensor: name,
                        k,
                        j,
                        y,
                        change: d / z[k][j].abs().max(f64::MIN_POSITIVE),
                    });
                }
            }
        }
        Ok(())
    };
    check("G", &[a.g.clone()], &[b.g.clone()], &[mag.g.clone()])?;
    check("Gkj", &a.gkj, &b.gkj, &mag.gkj)?;
    check("Gtil", &a.gtil, &b.gtil, &mag.gtil)?;
    check("T", &a.transport, &b.transport, &mag.transport)?;
    check("K", &a.reaction, &b.reaction, &mag.reaction)
}

/// Evaluates all tensors for indices 0..=J on `ygrid`.
pub fn compute_coupling(
    basis: &EigenBasis,
    model: &SdeModel,
    ygrid: &[f64],
    disc: &Discretization,
    j_max: usize,
) -> Result<CouplingTensors> {
    let m = j_max + 1;
    assert!(basis.n_modes() >= m + 1, "basis must cover J + 1 modes");
    let nodes: Vec<NodeValues> = if let Some(hb) = basis.hermite() {
        let r1 = Rule::new(disc.quad_nodes);
        let r2 = Rule::new(2 * disc.quad_nodes);
        ygrid
            .par_iter()
            .map(|&y| {
                let a = hermite_node(hb, model, m, y, &r1, false);
                let b = hermite_node(hb, model, m, y, &r2, false);
                let mag = hermite_node(hb, model, m, y, &r2, true);
                check_convergence(&a, &b, &mag, y)?;
                Ok(a)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let xs = disc.x_grid();
        ygrid
            .par_iter()
            .map(|&y| numeric_node(basis, model, m, y, &xs))
            .collect::<Result<Vec<_>>>()?
    };
    let ny = ygrid.len();
    let mut t = CouplingTensors {
        j_max,
        ygrid: ygrid.to_vec(),
        c0: basis.c0(),
        g: vec![vec![0.0; ny]; m],
        gkj: vec![vec![vec![0.0; ny]; m]; m],
        gtil: vec![vec![vec![0.0; ny]; m]; m],
        transport: vec![vec![vec![0.0; ny]; m]; m],
        reaction: vec![vec![vec![0.0; ny]; m]; m],
    };
    for (n, nv) in nodes.iter().enumerate() {
        for k in 0..m {
            t.g[k][n] = nv.g[k];
            for j in 0..m {
                t.gkj[k][j][n] = nv.gkj[k][j];
                t.gtil[k][j][n] = nv.gtil[k][j];
                t.transport[k][j][n] = nv.transport[k][j];
                t.reaction[k][j][n] = nv.reaction[k][j];
            }
        }
    }
    for v in t
        .g
        .iter()
        .flatten()
        .chain(t.gkj.iter().flatten().flatten())
        .chain(t.transport.iter().flatten().flatten())
        .chain(t.reaction.iter().flatten().flatten())
    {
        if !v.is_finite() {
            return Err(Error::InvalidModel {
                field: "g".into(),
                reason: "non-finite coupling tensor entry".into(),
            });
        }
    }
    Ok(t)
}

impl CouplingTensors {
    /// Linear interpolation of every tensor onto a finer y grid.
    pub fn interpolate_to(&self, ygrid: &[f64]) -> CouplingTensors {
        let src = &self.ygrid;
        let lerp = |v: &[f64]| -> Vec<f64> {
            ygrid
                .iter()
                .map(|&y| {
                    let p = src.partition_point(|&s| s < y);
                    if p == 0 {
                        v[0]
                    } else if p >= src.len() {
                        v[src.len() - 1]
                    } else {
                        let (y0, y1) = (src[p - 1], src[p]);
                        let t = (y - y0) / (y1 - y0);
                        v[p - 1] * (1.0 - t) + v[p] * t
                    }
                })
                .collect()
        };
        let map2 = |t: &Vec<Vec<Vec<f64>>>| t.iter().map(|r| r.iter().map(|v| lerp(v)).collect()).collect();
        CouplingTensors {
            j_max: self.j_max,
            ygrid: ygrid.to_vec(),
            c0: self.c0,
            g: self.g.iter().map(|v| lerp(v)).collect(),
            gkj: map2(&self.gkj),
            gtil: map2(&self.gtil),
            transport: map2(&self.transport),
            reaction: map2(&self.reaction),
        }
    }

    /// Entrywise scaling (used for linearity checks and coupling switches).
    pub fn scaled(&self, alpha: f64) -> CouplingTensors {
        let s1 = |v: &Vec<Vec<f64>>| v.iter().map(|r| r.iter().map(|x| alpha * x).collect()).collect();
        let s2 = |v: &Vec<Vec<Vec<f64>>>| v.iter().map(s1).collect();
        CouplingTensors {
            j_max: self.j_max,
            ygrid: self.ygrid.clone(),
            c0: self.c0,
            g: s1(&self.g),
            gkj: s2(&self.gkj),
            gtil: s2(&self.gtil),
            transport: s2(&self.transport),
            reaction: s2(&self.reaction),
        }
    }
}

/// Closed forms tabulated for the linear fixture (f = y - x, g = -x,
/// sigma1 = sqrt 2), written with Kronecker deltas and the tabulated norms.
pub mod tabulated {
    use super::*;

    fn delta(a: i64, b: i64) -> f64 {
        (a == b) as i32 as f64
    }

    fn c(j: i64) -> f64 {
        if j < 0 {
            0.0
        } else {
            tabulated_norm(j as usize)
        }
    }

    pub fn c0() -> f64 {
        (2.0 * PI).sqrt()
    }

    pub fn g(j: usize, y: f64) -> f64 {
        let j = j as i64;
        -y * (2.0 * PI).sqrt() * delta(0, j) - 2.0 * PI.sqrt() * delta(1, j)
    }

    pub fn gkj(k: usize, j: usize, y: f64) -> f64 {
        let (k, j) = (k as i64, j as i64);
        -y * SQRT_2 * delta(k, j) * c(j) - delta(k + 1, j) * c(j) - 2.0 * k as f64 * delta(k - 1, j) * c(j)
    }

    pub fn gtil(k: usize, j: usize, y: f64) -> f64 {
        let (k, j) = (k as i64, j as i64);
        -y * delta(k, j + 1) * c(j + 1)
            - (delta(k + 1, j + 1) * c(j + 1) + 2.0 * k as f64 * delta(k - 1, j + 1) * c(j + 1)) / SQRT_2
    }
}
