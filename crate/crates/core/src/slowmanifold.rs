//! Slow manifold of the truncated system by Lyapunov-Perron iteration.
//!
//! Coordinates: the slow part is the vector of sine coefficients
//! v = (c_1..c_{n_s}) of a0 with n_s = min(k0 - 1, ny); everything else
//! (the remaining sine modes of a0 and a_1..a_J) is fast. The iteration is
//! run on the one-step IMEX map x -> S(x + dt C x) of the coefficient
//! solver, so the converged graph is invariant under that stepper.
//!
//! With theta = 1 + dt r and scaled histories v^_n = theta^n v_n,
//! w^_n = theta^n w_n (n <= 0):
//!   backward  v^_n = B^{-1} (v^_{n+1} / theta - P_S Step(w^_n)),
//!   forward   w^_{n+1} = theta (P_F Step(w^_n) + P_F Step(E v^_n)),
//! with B = P_S Step E, w^_{-N} = 0 and v^_0 the slow input.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coefsys::{CoefficientState, Stepper, TruncatedSystem};
use crate::error::{Error, Result};
use crate::numerics::{h2_norm, linear_fit, SineBasis};
use crate::splitting::SineSplit;

#[derive(Debug, Clone)]
pub struct LpOptions {
    /// Weighted sup-norm tolerance between iterates (relative to |v|_inf).
    pub lp_tol: f64,
    pub max_iter: usize,
    /// Step of the underlying map; `None` uses the solver's dt rule.
    pub dt: Option<f64>,
    /// Horizon doublings tried before HorizonTooShort.
    pub max_doublings: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            lp_tol: 1e-8,
            max_iter: 200,
            dt: None,
            max_doublings: 6,
        }
    }
}

/// Precomputed pieces shared by all column solves.
struct LpSetup<'a> {
    stepper: Stepper<'a>,
    sb: SineBasis,
    n_s: usize,
    theta: f64,
    b_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// P_F Step(E e_k) for each slow mode k.
    gfs: Vec<Vec<Vec<f64>>>,
}

/// Weight rate: -eta from the k0 bookkeeping, moved to the middle of the
/// discrete slow/fast gap if it falls outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRate {
    pub eta: f64,
    pub rate: f64,
    pub slow_max: f64,
    pub fast_min: f64,
    pub clamped: bool,
}

pub fn weight_rate(sys: &TruncatedSystem, split: &SineSplit) -> WeightRate {
    let ny = sys.ny();
    let n_s = split.n_slow().min(ny);
    let sb = SineBasis::new(ny);
    let lambda_min = sys.lambdas[1..].iter().cloned().fold(f64::INFINITY, f64::min);
    let eta = -split.q + 0.5 * (split.ns + split.nf);
    let slow_max = if n_s > 0 {
        sys.diffusion * sb.laplacian_eigenvalue(n_s, sys.dy)
    } else {
        0.0
    };
    let mut fast_min = lambda_min / sys.epsilon;
    if n_s < ny {
        fast_min = fast_min.min(sys.diffusion * sb.laplacian_eigenvalue(n_s + 1, sys.dy));
    }
    let r = -eta;
    let clamped = !(r > slow_max && r < fast_min);
    WeightRate {
        eta,
        rate: if clamped { 0.5 * (slow_max + fast_min) } else { r },
        slow_max,
        fast_min,
        clamped,
    }
}

fn slow_coeffs(sb: &SineBasis, a0: &[f64], n_s: usize) -> DVector<f64> {
    DVector::from_vec(sb.coefficients(a0, n_s))
}

fn remove_slow(sb: &SineBasis, a0: &mut [f64], c: &DVector<f64>) {
    for (k, &ck) in c.iter().enumerate() {
        for (v, s) in a0.iter_mut().zip(sb.mode(k + 1)) {
            *v -= ck * s;
        }
    }
}

fn embed(sb: &SineBasis, m: usize, v: &DVector<f64>) -> Vec<Vec<f64>> {
    let ny = sb.n;
    let mut a = vec![vec![0.0; ny]; m];
    sb.synthesize(v.as_slice(), &mut a[0]);
    a
}

fn sup(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
}

impl<'a> LpSetup<'a> {
    fn new(sys: &'a TruncatedSystem, split: &SineSplit, dt: f64, rate: f64) -> Result<Self> {
        let ny = sys.ny();
        let m = sys.n_components();
        let n_s = split.n_slow().min(ny);
        let sb = SineBasis::new(ny);
        let stepper = sys.stepper(dt);
        let mut b = DMatrix::zeros(n_s, n_s);
        let mut gfs = Vec::with_capacity(n_s);
        for k in 0..n_s {
            let mut e = DVector::zeros(n_s);
            e[k] = 1.0;
            let mut a = embed(&sb, m, &e);
            stepper.apply(&mut a);
            let c = slow_coeffs(&sb, &a[0], n_s);
            b.set_column(k, &c);
            remove_slow(&sb, &mut a[0], &c);
            gfs.push(a);
        }
        let b_lu = b.lu();
        if n_s > 0 && b_lu.determinant().abs() < f64::MIN_POSITIVE {
            return Err(Error::DegenerateDenominator {
                term: "slow one-step block".into(),
                value: 0.0,
            });
        }
        Ok(LpSetup {
            stepper,
            sb,
            n_s,
            theta: 1.0 + dt * rate,
            b_lu,
            gfs,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Graph value: a[0] is the fast sine part of a0, a[j] = h_j.
    pub fast: Vec<Vec<f64>>,
    pub iterations: usize,
    pub contraction: f64,
    pub steps: usize,
}

fn solve_fixed_horizon(setup: &LpSetup, v0: &DVector<f64>, n: usize, opts: &LpOptions) -> Result<LpSolution> {
    let sys = setup.stepper.sys;
    let m = sys.n_components();
    let ny = sys.ny();
    let n_s = setup.n_s;
    let theta = setup.theta;
    let scale = v0.amax().max(f64::MIN_POSITIVE);
    let mut vhat = vec![DVector::zeros(n_s); n + 1];
    let mut z = vec![DVector::<f64>::zeros(n_s); n + 1];
    let mut w0_old = vec![vec![0.0; ny]; m];
    let mut prev_diff = f64::NAN;
    let mut growing = 0;
    let mut contraction = 0.0;
    for it in 1..=opts.max_iter {
        let mut new_v = Vec::with_capacity(n + 1);
        new_v.push(v0.clone());
        for i in 1..=n {
            let rhs = &new_v[i - 1] / theta - &z[i];
            let sol = if n_s > 0 { setup.b_lu.solve(&rhs).expect("nonsingular slow block") } else { rhs };
            new_v.push(sol);
        }
        let mut w = vec![vec![0.0; ny]; m];
        for i in (1..=n).rev() {
            let mut y = w.clone();
            setup.stepper.apply(&mut y);
            let zs = slow_coeffs(&setup.sb, &y[0], n_s);
            remove_slow(&setup.sb, &mut y[0], &zs);
            z[i] = zs;
            for (k, col) in setup.gfs.iter().enumerate() {
                let c = new_v[i][k];
                if c != 0.0 {
                    for (yr, gr) in y.iter_mut().zip(col) {
                        for (a, b) in yr.iter_mut().zip(gr) {
                            *a += c * b;
                        }
                    }
                }
            }
            for row in y.iter_mut() {
                row.iter_mut().for_each(|v| *v *= theta);
            }
            w = y;
        }
        let mut diff = 0.0f64;
        for (a, b) in new_v.iter().zip(&vhat) {
            if n_s > 0 {
                diff = diff.max((a - b).amax());
            }
        }
        for (a, b) in w.iter().zip(&w0_old) {
            for (x, y) in a.iter().zip(b) {
                diff = diff.max((x - y).abs());
            }
        }
        diff /= scale;
        vhat = new_v;
        w0_old = w;
        if it > 1 && prev_diff > 0.0 {
            contraction = diff / prev_diff;
            if contraction > 1.0 {
                growing += 1;
                if growing >= 3 {
                    return Err(Error::NoContraction {
                        ratio: contraction,
                        iterations: it,
                    });
                }
            } else {
                growing = 0;
            }
        }
        if diff < opts.lp_tol && it > 1 || diff == 0.0 {
            return Ok(LpSolution {
                fast: w0_old,
                iterations: it,
                contraction,
                steps: n,
            });
        }
        prev_diff = diff;
    }
    Err(Error::IterationCap {
        cap: opts.max_iter,
        change: prev_diff,
    })
}

/// Horizon T_LP = (eps/lambda_min + 1/r) ln(1/lp_tol).
pub fn lp_horizon(sys: &TruncatedSystem, rate: f64, lp_tol: f64) -> f64 {
    let lambda_min = sys.lambdas[1..].iter().cloned().fold(f64::INFINITY, f64::min);
    let l = (1.0 / lp_tol).ln();
    let fast = if lambda_min.is_finite() { sys.epsilon / lambda_min } else { 0.0 };
    (fast + 1.0 / rate) * l
}

fn solve_adaptive(setup: &LpSetup, v0: &DVector<f64>, n0: usize, opts: &LpOptions) -> Result<LpSolution> {
    let mut n = n0.max(1);
    let mut cur = solve_fixed_horizon(setup, v0, n, opts)?;
    let scale = v0.amax().max(f64::MIN_POSITIVE);
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_doublings {
        n *= 2;
        let next = solve_fixed_horizon(setup, v0, n, opts)?;
        change = cur
            .fast
            .iter()
            .flatten()
            .zip(next.fast.iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / scale;
        cur = next;
        if change <= 10.0 * opts.lp_tol {
            return Ok(cur);
        }
    }
    Err(Error::HorizonTooShort { change })
}

fn resolve_dt(sys: &TruncatedSystem, opts: &LpOptions) -> f64 {
    opts.dt.unwrap_or_else(|| sys.default_dt())
}

/// Graph value at one slow input `vs` (sine coefficients of a0_S).
pub fn lyapunov_perron(sys: &TruncatedSystem, split: &SineSplit, vs: &[f64], opts: &LpOptions) -> Result<LpSolution> {
    let dt = resolve_dt(sys, opts);
    let w = weight_rate(sys, split);
    let setup = LpSetup::new(sys, split, dt, w.rate)?;
    let mut v = DVector::zeros(setup.n_s);
    for (k, &c) in vs.iter().enumerate().take(setup.n_s) {
        v[k] = c;
    }
    let n0 = (lp_horizon(sys, w.rate, opts.lp_tol) / dt).ceil() as usize;
    solve_adaptive(&setup, &v, n0, opts)
}

#[derive(Debug, Clone)]
pub struct SlowManifoldGraph {
    pub dt: f64,
    pub epsilon: f64,
    pub k0: usize,
    pub n_slow: usize,
    pub ny: usize,
    pub weight: WeightRate,
    /// Steps of the longest accepted history window.
    pub horizon_steps: usize,
    /// `columns[k][comp][i]`: graph of the unit coefficient of slow mode k+1.
    pub columns: Vec<Vec<Vec<f64>>>,
    pub iterate_count: usize,
    pub contraction_estimate: f64,
    /// Discrete H2 norm of each slow sine mode.
    pub mode_h2: Vec<f64>,
}

/// Graph of the slow manifold, one Lyapunov-Perron solve per slow mode.
pub fn build_graph(sys: &TruncatedSystem, split: &SineSplit, opts: &LpOptions) -> Result<SlowManifoldGraph> {
    let dt = resolve_dt(sys, opts);
    let w = weight_rate(sys, split);
    let setup = LpSetup::new(sys, split, dt, w.rate)?;
    let n_s = setup.n_s;
    let n0 = (lp_horizon(sys, w.rate, opts.lp_tol) / dt).ceil() as usize;
    let sols: Vec<LpSolution> = (0..n_s)
        .into_par_iter()
        .map(|k| {
            let mut v = DVector::zeros(n_s);
            v[k] = 1.0;
            solve_adaptive(&setup, &v, n0, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mode_h2 = (1..=n_s).map(|k| h2_norm(setup.sb.mode(k), sys.dy)).collect();
    Ok(SlowManifoldGraph {
        dt,
        epsilon: sys.epsilon,
        k0: split.k0,
        n_slow: n_s,
        ny: sys.ny(),
        weight: w,
        horizon_steps: sols.iter().map(|s| s.steps).max().unwrap_or(0),
        iterate_count: sols.iter().map(|s| s.iterations).max().unwrap_or(0),
        contraction_estimate: sols.iter().map(|s| s.contraction).fold(0.0, f64::max),
        columns: sols.into_iter().map(|s| s.fast).collect(),
        mode_h2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphSize {
    /// sup over unit (H2-normalized) slow inputs of the grid sup norm of all fast parts.
    pub all: f64,
    pub a0_fast: f64,
    pub fast_modes: f64,
}

impl SlowManifoldGraph {
    pub fn n_components(&self) -> usize {
        self.columns.first().map_or(1, |c| c.len())
    }

    /// Fast components h(v).
    pub fn eval(&self, vs: &[f64]) -> Vec<Vec<f64>> {
        let m = self.n_components();
        let mut out = vec![vec![0.0; self.ny]; m];
        for (col, &c) in self.columns.iter().zip(vs) {
            for (o, g) in out.iter_mut().zip(col) {
                for (a, b) in o.iter_mut().zip(g) {
                    *a += c * b;
                }
            }
        }
        out
    }

    /// Full state E(v) + h(v).
    pub fn lift(&self, vs: &[f64]) -> CoefficientState {
        let sb = SineBasis::new(self.ny);
        let mut a = self.eval(vs);
        let mut slow = vec![0.0; self.ny];
        sb.synthesize(&vs[..self.n_slow.min(vs.len())], &mut slow);
        for (x, s) in a[0].iter_mut().zip(&slow) {
            *x += s;
        }
        CoefficientState { t: 0.0, a }
    }

    pub fn slow_coords(&self, state: &CoefficientState) -> Vec<f64> {
        SineBasis::new(self.ny).coefficients(&state.a[0], self.n_slow)
    }

    /// Grid sup norm of (fast part of state) - h(slow part of state).
    pub fn distance(&self, state: &CoefficientState) -> f64 {
        let sb = SineBasis::new(self.ny);
        let v = self.slow_coords(state);
        let h = self.eval(&v);
        let mut fast = state.a.clone();
        remove_slow(&sb, &mut fast[0], &DVector::from_vec(v));
        let d: Vec<Vec<f64>> = fast
            .iter()
            .zip(&h)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        sup(&d)
    }

    pub fn size(&self) -> GraphSize {
        let mut out = GraphSize {
            all: 0.0,
            a0_fast: 0.0,
            fast_modes: 0.0,
        };
        for (col, h2) in self.columns.iter().zip(&self.mode_h2) {
            let a0 = sup(&col[..1]) / h2;
            let fm = sup(&col[1..]) / h2;
            out.a0_fast = out.a0_fast.max(a0);
            out.fast_modes = out.fast_modes.max(fm);
            out.all = out.all.max(a0.max(fm));
        }
        out
    }
}

/// One step of the reduced dynamics: P_S Step_dt(E v + h(v)).
pub fn reduced_step(sys: &TruncatedSystem, graph: &SlowManifoldGraph, vs: &[f64], dt: f64) -> Result<Vec<f64>> {
    let mut s = graph.lift(vs);
    sys.stepper(dt).step_in_place(&mut s)?;
    Ok(graph.slow_coords(&s))
}

#[derive(Debug, Clone)]
pub struct ReducedTrajectory {
    pub times: Vec<f64>,
    pub slow: Vec<Vec<f64>>,
}

/// Reduced dynamics with the graph's dt until `t_end`.
pub fn reduced_integrate(sys: &TruncatedSystem, graph: &SlowManifoldGraph, v0: &[f64], t_end: f64) -> Result<ReducedTrajectory> {
    let steps = (t_end / graph.dt - 1e-9).ceil().max(1.0) as usize;
    let stepper = sys.stepper(graph.dt);
    let mut v = v0.to_vec();
    let mut out = ReducedTrajectory {
        times: vec![0.0],
        slow: vec![v.clone()],
    };
    for n in 1..=steps {
        let mut s = graph.lift(&v);
        stepper.step_in_place(&mut s)?;
        v = graph.slow_coords(&s);
        out.times.push(n as f64 * graph.dt);
        out.slow.push(v.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AttractionReport {
    pub times: Vec<f64>,
    pub distance: Vec<f64>,
    pub d0: f64,
    /// Fitted exponential decay rate of the initial transient (0 without offset).
    pub rate: f64,
}

/// Starts the truncated system at lift(v) plus `offset_scale` times a fixed
/// fast perturbation and tracks the distance to the graph.
pub fn attraction_test(
    sys: &TruncatedSystem,
    graph: &SlowManifoldGraph,
    v0: &[f64],
    offset_scale: f64,
    t_end: f64,
) -> Result<AttractionReport> {
    let ny = sys.ny();
    let sb = SineBasis::new(ny);
    let mut s = graph.lift(v0);
    if graph.n_slow < ny {
        for (x, p) in s.a[0].iter_mut().zip(sb.mode(graph.n_slow + 1)) {
            *x += offset_scale * p;
        }
    }
    for row in s.a.iter_mut().skip(1) {
        for (x, p) in row.iter_mut().zip(sb.mode(1)) {
            *x += offset_scale * p;
        }
    }
    let stepper = sys.stepper(graph.dt);
    let steps = (t_end / graph.dt - 1e-9).ceil().max(1.0) as usize;
    let mut times = vec![0.0];
    let mut distance = vec![graph.distance(&s)];
    for n in 1..=steps {
        stepper.step_in_place(&mut s)?;
        times.push(n as f64 * graph.dt);
        distance.push(graph.distance(&s));
    }
    let d0 = distance[0];
    let mut rate = 0.0;
    if offset_scale != 0.0 && d0 > 0.0 {
        let floor = 1e-3 * d0;
        let end = distance.iter().position(|&d| d < floor).unwrap_or(distance.len());
        let end = end.max(3).min(distance.len());
        let xs = &times[..end];
        let ys: Vec<f64> = distance[..end].iter().map(|d| d.max(f64::MIN_POSITIVE).ln()).collect();
        rate = -linear_fit(xs, &ys).0;
    }
    Ok(AttractionReport {
        times,
        distance,
        d0,
        rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefsys::assemble;
    use crate::coupling::compute_coupling;
    use crate::eigenbasis::hermite_basis;
    use crate::model::{Discretization, SdeModel};
    use std::f64::consts::PI;

    fn system(eps: f64, j: usize, ny: usize) -> TruncatedSystem {
        let model = SdeModel::ou_linear(eps, PI / 2.0);
        let disc = Discretization {
            ny,
            ..Default::default()
        };
        let b = hermite_basis(&model, j + 1).unwrap();
        let t = compute_coupling(&b, &model, &disc.y_full(model.r), &disc, j).unwrap();
        assemble(&t, &model, &disc, &b.lambdas, j).unwrap()
    }

    fn split_for(sys: &TruncatedSystem) -> SineSplit {
        SineSplit::new(sys.epsilon, 1.0, sys.ny(), None)
    }

    /// Graph-transform oracle: iterate H <- P_F M (E + H) (P_S M (E + H))^{-1}
    /// on the dense one-step matrix M until the slow subspace settles.
    fn oracle_graph(sys: &TruncatedSystem, n_s: usize, dt: f64) -> Vec<Vec<Vec<f64>>> {
        let ny = sys.ny();
        let m = sys.n_components();
        let sb = SineBasis::new(ny);
        let stepper = sys.stepper(dt);
        let mut h: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; ny]; m]; n_s];
        for _ in 0..20_000 {
            let mut ys = Vec::new();
            let mut p = DMatrix::zeros(n_s, n_s);
            for k in 0..n_s {
                let mut a = h[k].clone();
                for (x, s) in a[0].iter_mut().zip(sb.mode(k + 1)) {
                    *x += s;
                }
                stepper.apply(&mut a);
                let c = slow_coeffs(&sb, &a[0], n_s);
                remove_slow(&sb, &mut a[0], &c);
                p.set_column(k, &c);
                ys.push(a);
            }
            let pinv = p.try_inverse().unwrap();
            let mut next = vec![vec![vec![0.0; ny]; m]; n_s];
            for k in 0..n_s {
                for l in 0..n_s {
                    let c = pinv[(l, k)];
                    for (o, y) in next[k].iter_mut().zip(&ys[l]) {
                        for (a, b) in o.iter_mut().zip(y) {
                            *a += c * b;
                        }
                    }
                }
            }
            let change = next
                .iter()
                .flatten()
                .flatten()
                .zip(h.iter().flatten().flatten())
                .fold(0.0f64, |mm, (a, b)| mm.max((a - b).abs()));
            h = next;
            if change < 1e-14 {
                break;
            }
        }
        h
    }

    #[test]
    fn zero_input_gives_zero_graph_in_one_iteration() {
        let sys = system(1e-2, 2, 31);
        let split = split_for(&sys);
        let sol = lyapunov_perron(&sys, &split, &[0.0; 9], &LpOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.fast.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn graph_matches_invariant_subspace_oracle() {
        let sys = system(1e-2, 2, 31);
        let split = split_for(&sys);
        let g = build_graph(&sys, &split, &LpOptions::default()).unwrap();
        assert_eq!(g.n_slow, 9);
        let oracle = oracle_graph(&sys, g.n_slow, g.dt);
        for (a, b) in g.columns.iter().flatten().flatten().zip(oracle.iter().flatten().flatten()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn graph_is_invariant_under_the_stepper() {
        let sys = system(1e-2, 2, 31);
        let split = split_for(&sys);
        let g = build_graph(&sys, &split, &LpOptions::default()).unwrap();
        let v: Vec<f64> = (0..g.n_slow).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let rep = attraction_test(&sys, &g, &v, 0.0, 0.5).unwrap();
        let worst = rep.distance.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 10.0 * 1e-8, "{worst}");
        assert_eq!(rep.rate, 0.0);
    }

    #[test]
    fn graph_is_linear_in_the_slow_input() {
        let sys = system(1e-2, 2, 31);
        let split = split_for(&sys);
        let opts = LpOptions::default();
        let mut u = vec![0.0; 9];
        u[0] = 1.0;
        u[3] = -0.5;
        let a = lyapunov_perron(&sys, &split, &u, &opts).unwrap();
        let u2: Vec<f64> = u.iter().map(|x| -2.5 * x).collect();
        let b = lyapunov_perron(&sys, &split, &u2, &opts).unwrap();
        for (x, y) in a.fast.iter().flatten().zip(b.fast.iter().flatten()) {
            assert!((y + 2.5 * x).abs() <= 10.0 * opts.lp_tol * 2.5);
        }
        let g = build_graph(&sys, &split, &opts).unwrap();
        for (x, y) in g.eval(&u).iter().flatten().zip(a.fast.iter().flatten()) {
            assert!((x - y).abs() <= 10.0 * opts.lp_tol);
        }
    }

    #[test]
    fn horizon_doubling_is_stable() {
        let sys = system(1e-2, 2, 31);
        let split = split_for(&sys);
        let w = weight_rate(&sys, &split);
        let dt = sys.default_dt();
        let setup = LpSetup::new(&sys, &split, dt, w.rate).unwrap();
        let mut v = DVector::zeros(9);
        v[0] = 1.0;
        let n0 = (lp_horizon(&sys, w.rate, 1e-8) / dt).ceil() as usize;
        let opts = LpOptions::default();
        let a = solve_fixed_horizon(&setup, &v, 2 * n0, &opts).unwrap();
        let b = solve_fixed_horizon(&setup, &v, 4 * n0, &opts).unwrap();
        let change = a
            .fast
            .iter()
            .flatten()
            .zip(b.fast.iter().flatten())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(change <= 1e-7);
    }

    #[test]
    fn decoupled_reduced_dynamics_match_the_slow_heat_flow() {
        let sys = system(1e-2, 2, 31).without_coupling();
        let split = split_for(&sys);
        let g = build_graph(&sys, &split, &LpOptions::default()).unwrap();
        assert!(g.columns.iter().flatten().flatten().all(|v| v.abs() < 1e-14));
        let v0: Vec<f64> = (0..g.n_slow).map(|k| (k as f64 + 1.0).recip()).collect();
        let red = reduced_integrate(&sys, &g, &v0, 0.2).unwrap();
        let j0 = sys.truncated(0);
        let mut s = CoefficientState::zeros(0, sys.ny());
        SineBasis::new(sys.ny()).synthesize(&v0, &mut s.a[0]);
        let st = j0.stepper(g.dt);
        for _ in 1..red.times.len() {
            st.step_in_place(&mut s).unwrap();
        }
        let c = SineBasis::new(sys.ny()).coefficients(&s.a[0], g.n_slow);
        for (a, b) in c.iter().zip(red.slow.last().unwrap()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn off_manifold_starts_relax_at_the_fast_rate() {
        let eps = 1e-3;
        let sys = system(eps, 2, 63);
        let split = split_for(&sys);
        let g = build_graph(&sys, &split, &LpOptions::default()).unwrap();
        let mut v = vec![0.0; g.n_slow];
        v[0] = 1.0;
        let r1 = attraction_test(&sys, &g, &v, 1e-2, 20.0 * eps).unwrap();
        assert!(r1.rate >= 0.5 / eps, "rate {}", r1.rate);
        let r2 = attraction_test(&sys, &g, &v, 2e-2, 20.0 * eps).unwrap();
        assert!((r2.d0 / r1.d0 - 2.0).abs() < 1e-9);
        assert!((r2.rate / r1.rate - 1.0).abs() < 0.05);
    }

    #[test]
    fn reduced_step_agrees_with_integrator() {
        let sys = system(1e-2, 2, 31);
        let split = split_for(&sys);
        let g = build_graph(&sys, &split, &LpOptions::default()).unwrap();
        let v0: Vec<f64> = (0..g.n_slow).map(|k| (-(k as f64)).exp()).collect();
        let one = reduced_step(&sys, &g, &v0, g.dt).unwrap();
        let tr = reduced_integrate(&sys, &g, &v0, g.dt).unwrap();
        assert_eq!(tr.slow.len(), 2);
        for (a, b) in one.iter().zip(&tr.slow[1]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_rate_sits_in_the_gap() {
        let sys = system(1e-2, 2, 63);
        let split = split_for(&sys);
        let w = weight_rate(&sys, &split);
        assert!(w.rate > w.slow_max && w.rate < w.fast_min);
    }
}
