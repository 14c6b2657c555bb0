//! Truncated coefficient system on the interior y grid.
//!
//! d_t a_j = D a_j'' - (lambda_j/eps) a_j - sum_i d_y(T_ij a_i) + sum_i K_ij a_i,
//! D = sigma2^2/2, homogeneous Dirichlet data at +-R. Diffusion and
//! relaxation are backward Euler, coupling forward Euler.

use crate::coupling::CouplingTensors;
use crate::error::{Error, Result};
use crate::model::{Discretization, SdeModel};
use crate::numerics::{h2_norm, l2_norm, max_abs, TridiagFactor};

pub const BLOWUP_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoefficientState {
    pub t: f64,
    /// `a[j][i]` on interior nodes.
    pub a: Vec<Vec<f64>>,
}

impl CoefficientState {
    pub fn zeros(j_max: usize, ny: usize) -> Self {
        CoefficientState {
            t: 0.0,
            a: vec![vec![0.0; ny]; j_max + 1],
        }
    }

    pub fn l2_norms(&self, dy: f64) -> Vec<f64> {
        self.a.iter().map(|u| l2_norm(u, dy)).collect()
    }

    pub fn h2_norms(&self, dy: f64) -> Vec<f64> {
        self.a.iter().map(|u| h2_norm(u, dy)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TruncatedSystem {
    pub j_max: usize,
    pub epsilon: f64,
    pub r: f64,
    pub dy: f64,
    /// Interior nodes.
    pub y: Vec<f64>,
    pub diffusion: f64,
    pub lambdas: Vec<f64>,
    /// `face[row][col][f]`, f = 0..=ny, face f between full-grid nodes f and f+1.
    pub face: Vec<Vec<Vec<f64>>>,
    /// `react[row][col][i]` at interior nodes.
    pub react: Vec<Vec<Vec<f64>>>,
    pub coupled: bool,
}

/// Builds the truncated system from tensors sampled on the full y grid
/// (interior nodes plus +-R).
pub fn assemble(
    coupling: &CouplingTensors,
    model: &SdeModel,
    disc: &Discretization,
    lambdas: &[f64],
    j_max: usize,
) -> Result<TruncatedSystem> {
    if coupling.j_max < j_max || lambdas.len() < j_max + 1 {
        return Err(Error::GridMismatch(format!(
            "coupling covers J = {}, requested J = {j_max}",
            coupling.j_max
        )));
    }
    let full = disc.y_full(model.r);
    let tens = if coupling.ygrid.len() == full.len()
        && coupling.ygrid.iter().zip(&full).all(|(a, b)| (a - b).abs() < 1e-12)
    {
        coupling.clone()
    } else {
        let (lo, hi) = (coupling.ygrid[0], *coupling.ygrid.last().unwrap());
        if lo > full[0] + 1e-12 || hi < full[full.len() - 1] - 1e-12 {
            return Err(Error::GridMismatch("coupling y grid does not cover [-R, R]".into()));
        }
        coupling.interpolate_to(&full)
    };
    let ny = disc.ny;
    let m = j_max + 1;
    let mut face = vec![vec![vec![0.0; ny + 1]; m]; m];
    let mut react = vec![vec![vec![0.0; ny]; m]; m];
    for row in 0..m {
        for col in 0..m {
            let t = &tens.transport[row][col];
            for f in 0..=ny {
                face[row][col][f] = 0.5 * (t[f] + t[f + 1]);
            }
            for i in 0..ny {
                react[row][col][i] = tens.reaction[row][col][i + 1];
            }
        }
    }
    Ok(TruncatedSystem {
        j_max,
        epsilon: model.epsilon,
        r: model.r,
        dy: disc.dy(model.r),
        y: disc.y_interior(model.r),
        diffusion: 0.5 * model.sigma2 * model.sigma2,
        lambdas: lambdas[..m].to_vec(),
        face,
        react,
        coupled: true,
    })
}

impl TruncatedSystem {
    pub fn ny(&self) -> usize {
        self.y.len()
    }

    pub fn n_components(&self) -> usize {
        self.j_max + 1
    }

    /// Same diffusion and relaxation, coupling operator removed.
    pub fn without_coupling(&self) -> Self {
        TruncatedSystem {
            coupled: false,
            ..self.clone()
        }
    }

    /// Restriction to the first `j + 1` components.
    pub fn truncated(&self, j: usize) -> Self {
        let m = j + 1;
        TruncatedSystem {
            j_max: j,
            lambdas: self.lambdas[..m].to_vec(),
            face: self.face[..m].iter().map(|r| r[..m].to_vec()).collect(),
            react: self.react[..m].iter().map(|r| r[..m].to_vec()).collect(),
            ..self.clone()
        }
    }

    pub fn max_face_speed(&self) -> f64 {
        self.face
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(max_abs(v)))
    }

    /// min(0.25 dy / max|T_face|, 0.1 eps).
    pub fn default_dt(&self) -> f64 {
        let cap = 0.1 * self.epsilon;
        let speed = if self.coupled { self.max_face_speed() } else { 0.0 };
        if speed > 0.0 {
            (0.25 * self.dy / speed).min(cap)
        } else {
            cap
        }
    }

    /// Explicit coupling: -d_y(T a) (centered, conservative) + K a.
    pub fn apply_coupling_row(&self, row: usize, a: &[Vec<f64>], out: &mut [f64]) {
        let ny = self.ny();
        out.iter_mut().for_each(|v| *v = 0.0);
        if !self.coupled {
            return;
        }
        let inv = 1.0 / self.dy;
        for (col, u) in a.iter().enumerate().take(self.n_components()) {
            let fc = &self.face[row][col];
            let kr = &self.react[row][col];
            let at = |i: isize| if i < 0 || i >= ny as isize { 0.0 } else { u[i as usize] };
            for i in 0..ny {
                let ii = i as isize;
                let flux_r = fc[i + 1] * 0.5 * (at(ii) + at(ii + 1));
                let flux_l = fc[i] * 0.5 * (at(ii - 1) + at(ii));
                out[i] += -(flux_r - flux_l) * inv + kr[i] * u[i];
            }
        }
    }

    pub fn apply_coupling(&self, a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let ny = self.ny();
        (0..self.n_components())
            .map(|row| {
                let mut out = vec![0.0; ny];
                self.apply_coupling_row(row, a, &mut out);
                out
            })
            .collect()
    }

    /// Full right-hand side D a'' - lambda/eps a + coupling.
    pub fn apply_rhs(&self, a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let ny = self.ny();
        let mut c = self.apply_coupling(a);
        let h2 = self.dy * self.dy;
        for (j, (row, u)) in c.iter_mut().zip(a).enumerate() {
            let rate = self.lambdas[j] / self.epsilon;
            for i in 0..ny {
                let l = if i > 0 { u[i - 1] } else { 0.0 };
                let r = if i + 1 < ny { u[i + 1] } else { 0.0 };
                row[i] += self.diffusion * (l - 2.0 * u[i] + r) / h2 - rate * u[i];
            }
        }
        c
    }

    /// Factorized implicit parts for a fixed dt.
    pub fn stepper(&self, dt: f64) -> Stepper<'_> {
        let ny = self.ny();
        let c = dt * self.diffusion / (self.dy * self.dy);
        let off = vec![-c; ny];
        let factors = self
            .lambdas
            .iter()
            .map(|&l| {
                let diag = vec![1.0 + 2.0 * c + dt * l / self.epsilon; ny];
                TridiagFactor::new(&off, &diag, &off)
            })
            .collect();
        Stepper { sys: self, dt, factors }
    }
}

pub struct Stepper<'a> {
    pub sys: &'a TruncatedSystem,
    pub dt: f64,
    factors: Vec<TridiagFactor>,
}

impl Stepper<'_> {
    /// The linear one-step map, without time bookkeeping or blow-up checks.
    pub fn apply(&self, a: &mut [Vec<f64>]) {
        let ny = self.sys.ny();
        let mut tmp = vec![0.0; ny];
        let coupling: Vec<Vec<f64>> = (0..self.sys.n_components())
            .map(|row| {
                self.sys.apply_coupling_row(row, a, &mut tmp);
                tmp.clone()
            })
            .collect();
        for ((u, c), f) in a.iter_mut().zip(&coupling).zip(&self.factors) {
            for (v, cv) in u.iter_mut().zip(c) {
                *v += self.dt * cv;
            }
            f.solve_in_place(u);
        }
    }

    pub fn step_in_place(&self, state: &mut CoefficientState) -> Result<()> {
        self.apply(&mut state.a);
        state.t += self.dt;
        for u in &state.a {
            for &v in u {
                if !v.is_finite() || v.abs() > BLOWUP_CAP {
                    return Err(Error::StepUnstable {
                        t: state.t,
                        cap: BLOWUP_CAP,
                    });
                }
            }
        }
        Ok(())
    }
}

/// One IMEX step of size `dt`.
pub fn step(sys: &TruncatedSystem, state: &CoefficientState, dt: f64) -> Result<CoefficientState> {
    let mut next = state.clone();
    sys.stepper(dt).step_in_place(&mut next)?;
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    /// Fixed step; `None` uses the default rule (shrunk so T is hit exactly).
    pub dt: Option<f64>,
    /// Norms are recorded every `norm_stride` steps (and at the final time).
    pub norm_stride: usize,
    /// Number of evenly spaced snapshots after t = 0 (the initial state is
    /// always stored when this is positive).
    pub snapshots: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            dt: None,
            norm_stride: 1,
            snapshots: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub dt: f64,
    pub steps: usize,
    pub times: Vec<f64>,
    /// `l2[n][j]`.
    pub l2: Vec<Vec<f64>>,
    pub h2: Vec<Vec<f64>>,
    pub snapshots: Vec<CoefficientState>,
    pub final_state: CoefficientState,
}

/// Integrates to `t_end` with a fixed step; `observer` sees every state,
/// including the initial one.
pub fn integrate<F>(
    sys: &TruncatedSystem,
    state0: &CoefficientState,
    t_end: f64,
    opts: &IntegrateOptions,
    mut observer: F,
) -> Result<Trajectory>
where
    F: FnMut(&CoefficientState),
{
    assert!(t_end > 0.0, "integration horizon must be positive");
    let target = opts.dt.unwrap_or_else(|| sys.default_dt());
    let steps = (t_end / target - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let stepper = sys.stepper(dt);
    let stride = opts.norm_stride.max(1);
    let mut traj = Trajectory {
        dt,
        steps,
        ..Default::default()
    };
    let snap_at: Vec<usize> = (1..=opts.snapshots)
        .map(|k| ((k * steps) as f64 / opts.snapshots as f64).round() as usize)
        .collect();
    let mut state = state0.clone();
    let record = |traj: &mut Trajectory, s: &CoefficientState| {
        traj.times.push(s.t);
        traj.l2.push(s.l2_norms(sys.dy));
        traj.h2.push(s.h2_norms(sys.dy));
    };
    record(&mut traj, &state);
    if opts.snapshots > 0 {
        traj.snapshots.push(state.clone());
    }
    observer(&state);
    let mut next_snap = 0;
    for n in 1..=steps {
        stepper.step_in_place(&mut state)?;
        if n == steps {
            state.t = state0.t + t_end;
        }
        observer(&state);
        if n % stride == 0 || n == steps {
            record(&mut traj, &state);
        }
        while next_snap < snap_at.len() && snap_at[next_snap] == n {
            traj.snapshots.push(state.clone());
            next_snap += 1;
        }
    }
    traj.final_state = state;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::compute_coupling;
    use crate::eigenbasis::hermite_basis;
    use crate::numerics::SineBasis;
    use proptest::prelude::*;
    use std::f64::consts::{PI, SQRT_2};

    fn setup(eps: f64, j: usize, ny: usize) -> (SdeModel, Discretization, TruncatedSystem) {
        let model = SdeModel::ou_linear(eps, 1.5);
        let disc = Discretization {
            ny,
            ..Default::default()
        };
        let basis = hermite_basis(&model, j + 1).unwrap();
        let t = compute_coupling(&basis, &model, &disc.y_full(model.r), &disc, j).unwrap();
        let sys = assemble(&t, &model, &disc, &basis.lambdas, j).unwrap();
        (model, disc, sys)
    }

    fn sample(sys: &TruncatedSystem, f: impl Fn(f64) -> f64) -> Vec<f64> {
        sys.y.iter().map(|&y| f(y)).collect()
    }

    #[test]
    fn a0_row_matches_symbolic_form() {
        // d_t a0 = a0'' + (y a0)' + sqrt2 a1'
        let (_, _, sys) = setup(1e-2, 1, 127);
        let r = sys.r;
        let bump = |y: f64| ((y + r) * (r - y)).powi(3);
        let dbump = |y: f64| 3.0 * ((y + r) * (r - y)).powi(2) * (-2.0 * y);
        let a0 = sample(&sys, |y| bump(y) * (1.0 + 0.3 * y));
        let a1 = sample(&sys, |y| bump(y) * y.cos());
        let c = sys.apply_coupling(&[a0, a1]);
        let mut err = 0.0f64;
        for (i, &y) in sys.y.iter().enumerate() {
            let u0 = bump(y) * (1.0 + 0.3 * y);
            let du0 = dbump(y) * (1.0 + 0.3 * y) + 0.3 * bump(y);
            let du1 = dbump(y) * y.cos() - bump(y) * y.sin();
            let expect = u0 + y * du0 + SQRT_2 * du1;
            err = err.max((c[0][i] - expect).abs());
        }
        let scale = sys.y.iter().map(|&y| bump(y)).fold(0.0f64, f64::max);
        assert!(err < 5e-3 * scale, "err {err}");
        // second order: halve dy, error drops ~4x
        let (_, _, fine) = setup(1e-2, 1, 255);
        let a0 = sample(&fine, |y| bump(y) * (1.0 + 0.3 * y));
        let a1 = sample(&fine, |y| bump(y) * y.cos());
        let cf = fine.apply_coupling(&[a0, a1]);
        let mut errf = 0.0f64;
        for (i, &y) in fine.y.iter().enumerate() {
            let u0 = bump(y) * (1.0 + 0.3 * y);
            let du0 = dbump(y) * (1.0 + 0.3 * y) + 0.3 * bump(y);
            let du1 = dbump(y) * y.cos() - bump(y) * y.sin();
            errf = errf.max((cf[0][i] - (u0 + y * du0 + SQRT_2 * du1)).abs());
        }
        assert!(err / errf > 3.0, "{err} {errf}");
    }

    #[test]
    fn fast_rows_match_expansion() {
        // d_t a_m = ... + (y a_m)' + m a_m + (3/sqrt2) a_{m-1}' + sqrt2 (m+1) a_{m+1}'
        //           + y a_{m-1}/sqrt2 + a_{m-2}
        let row_errors = |ny: usize| -> Vec<f64> {
            let (_, _, sys) = setup(1e-2, 3, ny);
            let r = sys.r;
            let w = |y: f64| ((y + r) * (r - y)).powi(3);
            let dw = |y: f64| 3.0 * ((y + r) * (r - y)).powi(2) * (-2.0 * y);
            let mono = |p: i32| move |y: f64| w(y) * y.powi(p);
            let dmono = |p: i32| {
                move |y: f64| dw(y) * y.powi(p) + if p > 0 { p as f64 * w(y) * y.powi(p - 1) } else { 0.0 }
            };
            let a: Vec<Vec<f64>> = (0..4).map(|p| sample(&sys, mono(p))).collect();
            let c = sys.apply_coupling(&a);
            (1..=3usize)
                .map(|m| {
                    let mut err = 0.0f64;
                    for (i, &y) in sys.y.iter().enumerate() {
                        let u = |k: usize| mono(k as i32)(y);
                        let du = |k: usize| dmono(k as i32)(y);
                        let mut e = u(m) + y * du(m) + m as f64 * u(m);
                        e += 3.0 / SQRT_2 * du(m - 1) + y * u(m - 1) / SQRT_2;
                        if m < 3 {
                            e += SQRT_2 * (m + 1) as f64 * du(m + 1);
                        }
                        if m >= 2 {
                            e += u(m - 2);
                        }
                        err = err.max((c[m][i] - e).abs());
                    }
                    err
                })
                .collect()
        };
        let coarse = row_errors(127);
        let fine = row_errors(255);
        for m in 0..3 {
            assert!(fine[m] < 1e-2 * 11.4, "row {}: {}", m + 1, fine[m]);
            assert!(coarse[m] / fine[m] > 3.0, "row {}: {} -> {}", m + 1, coarse[m], fine[m]);
        }
    }

    #[test]
    fn zero_state_stays_zero_and_zero_tensors_give_zero_operator() {
        let (_, _, sys) = setup(1e-2, 2, 31);
        let s0 = CoefficientState::zeros(2, 31);
        let s1 = step(&sys, &s0, 1e-3).unwrap();
        assert!(s1.a.iter().flatten().all(|v| *v == 0.0));
        let off = sys.without_coupling();
        let a: Vec<Vec<f64>> = (0..3).map(|j| sample(&off, |y| (y * (j + 1) as f64).sin())).collect();
        assert!(off.apply_coupling(&a).iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn decoupled_fast_mode_decay() {
        let eps = 1e-3;
        let (_, _, sys) = setup(eps, 1, 63);
        let sys = sys.without_coupling();
        let r = sys.r;
        let mut s = CoefficientState::zeros(1, 63);
        s.a[1] = sample(&sys, |y| (PI * (y + r) / (2.0 * r)).sin());
        let n0 = l2_norm(&s.a[1], sys.dy);
        let opts = IntegrateOptions {
            dt: Some(eps / 2000.0),
            ..Default::default()
        };
        let tr = integrate(&sys, &s, 10.0 * eps, &opts, |_| {}).unwrap();
        let ratio = l2_norm(&tr.final_state.a[1], sys.dy) / n0;
        let k = PI / (2.0 * r);
        let expect = (-10.0f64).exp() * (-sys.diffusion * k * k * 10.0 * eps).exp();
        assert!((ratio / expect - 1.0).abs() < 0.02, "{ratio} vs {expect}");
    }

    #[test]
    fn decoupled_a0_heat_decay() {
        let (_, _, sys) = setup(1e-2, 0, 63);
        let sys = sys.without_coupling();
        let sb = SineBasis::new(63);
        let k = 2;
        let mut s = CoefficientState::zeros(0, 63);
        s.a[0] = sb.mode(k).to_vec();
        let tr = integrate(
            &sys,
            &s,
            0.1,
            &IntegrateOptions {
                dt: Some(1e-5),
                ..Default::default()
            },
            |_| {},
        )
        .unwrap();
        // decay rate of the assembled (discrete) Laplacian
        let expect = (-sys.diffusion * sb.laplacian_eigenvalue(k, sys.dy) * 0.1).exp();
        let got = sb.coefficient(&tr.final_state.a[0], k);
        assert!((got - expect).abs() < 1e-4, "{got} vs {expect}");
    }

    #[test]
    fn mass_non_increasing_without_coupling() {
        let (_, _, sys) = setup(1e-2, 0, 63);
        let sys = sys.without_coupling();
        let mut s = CoefficientState::zeros(0, 63);
        s.a[0] = sample(&sys, |y| (-(y * y) * 4.0).exp());
        let mut masses = Vec::new();
        integrate(
            &sys,
            &s,
            0.5,
            &IntegrateOptions {
                dt: Some(1e-3),
                ..Default::default()
            },
            |st| masses.push(st.a[0].iter().sum::<f64>() * sys.dy),
        )
        .unwrap();
        assert!(masses.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn coupled_smoke_run_is_finite_and_snapshots_are_counted() {
        let (_, _, sys) = setup(1e-2, 2, 63);
        let mut s = CoefficientState::zeros(2, 63);
        let r = sys.r;
        s.a[0] = sample(&sys, |y| (PI * (y + r) / (2.0 * r)).sin());
        let tr = integrate(
            &sys,
            &s,
            1.0,
            &IntegrateOptions {
                snapshots: 10,
                norm_stride: 10,
                ..Default::default()
            },
            |_| {},
        )
        .unwrap();
        assert_eq!(tr.snapshots.len(), 11);
        assert!((tr.snapshots[10].t - 1.0).abs() < 1e-12);
        assert!(tr.final_state.a.iter().flatten().all(|v| v.is_finite()));
        assert!(tr.dt <= 0.1 * sys.epsilon + 1e-15);
    }

    #[test]
    fn blowup_is_reported() {
        // explicit transport far beyond the dt rule
        let (model, disc, _) = setup(1e-2, 2, 63);
        let model = model.with_g(model.g.scaled(1e3));
        let basis = hermite_basis(&model, 3).unwrap();
        let t = compute_coupling(&basis, &model, &disc.y_full(model.r), &disc, 2).unwrap();
        let sys = assemble(&t, &model, &disc, &basis.lambdas, 2).unwrap();
        let mut s = CoefficientState::zeros(2, 63);
        s.a[0] = sample(&sys, |y| (3.0 * y).sin());
        let opts = IntegrateOptions {
            dt: Some(200.0 * sys.default_dt()),
            ..Default::default()
        };
        assert!(matches!(
            integrate(&sys, &s, 1.0, &opts, |_| {}),
            Err(Error::StepUnstable { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn integrate_is_linear(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, f in 0.5f64..3.0) {
            let (_, _, sys) = setup(1e-2, 2, 31);
            let mut u = CoefficientState::zeros(2, 31);
            let mut v = CoefficientState::zeros(2, 31);
            u.a[0] = sample(&sys, |y| (f * y).cos() * (sys.r * sys.r - y * y));
            v.a[1] = sample(&sys, |y| (f * y).sin() * (sys.r * sys.r - y * y));
            let mut w = CoefficientState::zeros(2, 31);
            for j in 0..3 {
                for i in 0..31 {
                    w.a[j][i] = c1 * u.a[j][i] + c2 * v.a[j][i];
                }
            }
            let opts = IntegrateOptions { dt: Some(1e-3), ..Default::default() };
            let tu = integrate(&sys, &u, 0.05, &opts, |_| {}).unwrap().final_state;
            let tv = integrate(&sys, &v, 0.05, &opts, |_| {}).unwrap().final_state;
            let tw = integrate(&sys, &w, 0.05, &opts, |_| {}).unwrap().final_state;
            for j in 0..3 {
                for i in 0..31 {
                    let e = c1 * tu.a[j][i] + c2 * tv.a[j][i];
                    prop_assert!((tw.a[j][i] - e).abs() <= 1e-10 * (1.0 + e.abs()));
                }
            }
        }
    }
}
