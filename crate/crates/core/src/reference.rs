//! Brute-force oracles: a 2D finite-volume Fokker-Planck solver on the
//! truncated strip and an Euler-Maruyama ensemble with absorption at |y| = R.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::coefsys::Trajectory;
use crate::eigenbasis::EigenBasis;
use crate::error::{Error, Result};
use crate::model::{Discretization, SdeModel};
use crate::numerics::{trapezoid_weights, TridiagFactor};
use crate::reconstruct::{density_error, marginal_error, reconstruct_density, DensityError, DensityField};
use crate::stationary::FastOperator;

pub const MASS_TOL: f64 = 1e-8;
const BLOWUP_CAP: f64 = 1e12;

#[derive(Debug, Clone, Default)]
pub struct FullOptions {
    pub dt: Option<f64>,
    /// Evenly spaced snapshots after t = 0; the initial field is stored too.
    pub snapshots: usize,
}

#[derive(Debug, Clone)]
pub struct FullTrajectory {
    pub dt: f64,
    pub steps: usize,
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub snapshots: Vec<DensityField>,
    pub final_field: DensityField,
}

/// Step rule shared with the coefficient solver: 0.25 dy / max|g|, capped at eps/10.
pub fn default_full_dt(model: &SdeModel, disc: &Discretization) -> f64 {
    let x = disc.x_grid();
    let speed = disc
        .y_full(model.r)
        .iter()
        .flat_map(|&y| x.iter().map(move |&xx| (xx, y)))
        .map(|(xx, y)| model.g.eval(xx, y).abs())
        .fold(0.0, f64::max);
    let cap = 0.1 * model.epsilon;
    if speed > 0.0 {
        (0.25 * disc.dy(model.r) / speed).min(cap)
    } else {
        cap
    }
}

struct FullSolver {
    nx: usize,
    ny: usize,
    hy: f64,
    dt: f64,
    wx: Vec<f64>,
    /// g at every full-grid node, `g[iy][ix]`.
    g: Vec<Vec<f64>>,
    x_factor: Vec<TridiagFactor>,
    y_factor: TridiagFactor,
}

impl FullSolver {
    fn new(model: &SdeModel, disc: &Discretization, dt: f64) -> Self {
        let x = disc.x_grid();
        let yf = disc.y_full(model.r);
        let hy = disc.dy(model.r);
        let (nx, ny) = (disc.nx, disc.ny);
        let g = yf.iter().map(|&y| x.iter().map(|&xx| model.g.eval(xx, y)).collect()).collect();
        let k = dt / model.epsilon;
        let x_factor = yf[1..=ny]
            .par_iter()
            .map(|&y| {
                let op = FastOperator::new(model, y, disc);
                let lower: Vec<f64> = op.lower.iter().map(|v| -k * v).collect();
                let diag: Vec<f64> = op.diag.iter().map(|v| 1.0 - k * v).collect();
                let upper: Vec<f64> = op.upper.iter().map(|v| -k * v).collect();
                TridiagFactor::new(&lower, &diag, &upper)
            })
            .collect();
        let d = 0.5 * model.sigma2 * model.sigma2 * dt / (hy * hy);
        let y_factor = TridiagFactor::new(&vec![-d; ny], &vec![1.0 + 2.0 * d; ny], &vec![-d; ny]);
        FullSolver {
            nx,
            ny,
            hy,
            dt,
            wx: trapezoid_weights(nx, disc.dx()),
            g,
            x_factor,
            y_factor,
        }
    }

    /// rho[iy][ix] over interior y rows.
    fn step(&self, rho: &mut [Vec<f64>]) {
        let (nx, ny) = (self.nx, self.ny);
        let c = self.dt / self.hy;
        // explicit conservative transport and implicit diffusion, column by column
        let cols: Vec<Vec<f64>> = (0..nx)
            .into_par_iter()
            .map(|ix| {
                let node = |iy: usize| if iy == 0 || iy == ny + 1 { 0.0 } else { rho[iy - 1][ix] };
                let flux: Vec<f64> = (0..=ny)
                    .map(|f| 0.5 * (self.g[f][ix] * node(f) + self.g[f + 1][ix] * node(f + 1)))
                    .collect();
                let mut col: Vec<f64> = (0..ny).map(|i| rho[i][ix] - c * (flux[i + 1] - flux[i])).collect();
                self.y_factor.solve_in_place(&mut col);
                col
            })
            .collect();
        rho.par_iter_mut().enumerate().for_each(|(iy, row)| {
            for (ix, v) in row.iter_mut().enumerate() {
                *v = cols[ix][iy];
            }
            self.x_factor[iy].solve_in_place(row);
        });
    }

    fn mass(&self, rho: &[Vec<f64>]) -> f64 {
        rho.iter()
            .map(|row| row.iter().zip(&self.wx).map(|(v, w)| v * w).sum::<f64>())
            .sum::<f64>()
            * self.hy
    }
}

fn interior(rho0: &DensityField) -> Vec<Vec<f64>> {
    rho0.values[1..rho0.values.len() - 1].to_vec()
}

fn to_field(t: f64, x: &[f64], y: &[f64], rho: &[Vec<f64>]) -> DensityField {
    let mut values = Vec::with_capacity(y.len());
    values.push(vec![0.0; x.len()]);
    values.extend(rho.iter().cloned());
    values.push(vec![0.0; x.len()]);
    DensityField {
        t,
        x: x.to_vec(),
        y: y.to_vec(),
        values,
    }
}

/// Lie-split IMEX integration: explicit centered y transport, implicit y
/// diffusion, implicit exponentially fitted x operator at rate 1/eps.
pub fn solve_full_fpe(
    model: &SdeModel,
    disc: &Discretization,
    rho0: &DensityField,
    t_end: f64,
    opts: &FullOptions,
) -> Result<FullTrajectory> {
    assert!(t_end > 0.0, "integration horizon must be positive");
    let x = disc.x_grid();
    let y = disc.y_full(model.r);
    if rho0.x.len() != x.len() || rho0.y.len() != y.len() {
        return Err(Error::GridMismatch(format!(
            "initial density is {}x{}, solver grid is {}x{}",
            rho0.x.len(),
            rho0.y.len(),
            x.len(),
            y.len()
        )));
    }
    let target = opts.dt.or(disc.dt).unwrap_or_else(|| default_full_dt(model, disc));
    let steps = (t_end / target - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let solver = FullSolver::new(model, disc, dt);
    let mut rho = interior(rho0);
    let m0 = solver.mass(&rho);
    let peak0 = rho.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let snap_at: Vec<usize> = (1..=opts.snapshots)
        .map(|k| ((k * steps) as f64 / opts.snapshots as f64).round() as usize)
        .collect();
    let mut traj = FullTrajectory {
        dt,
        steps,
        times: vec![rho0.t],
        mass: vec![m0],
        snapshots: Vec::new(),
        final_field: rho0.clone(),
    };
    if opts.snapshots > 0 {
        traj.snapshots.push(rho0.clone());
    }
    let mut prev = m0;
    let mut next = 0;
    for n in 1..=steps {
        solver.step(&mut rho);
        let t = rho0.t + n as f64 * dt;
        let peak = rho.iter().flatten().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
        if peak > BLOWUP_CAP * peak0 {
            return Err(Error::StepUnstable { t, cap: BLOWUP_CAP });
        }
        let m = solver.mass(&rho);
        if m - prev > MASS_TOL * m0.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::MassAnomaly { t, increase: m - prev });
        }
        prev = m;
        traj.times.push(t);
        traj.mass.push(m);
        while next < snap_at.len() && snap_at[next] == n {
            traj.snapshots.push(to_field(t, &x, &y, &rho));
            next += 1;
        }
    }
    traj.final_field = to_field(rho0.t + t_end, &x, &y, &rho);
    Ok(traj)
}

/// Discretization with nx' = 2nx - 1 and ny' = 2ny + 1; coarse nodes are a subset.
pub fn refined(disc: &Discretization) -> Discretization {
    Discretization {
        nx: 2 * disc.nx - 1,
        ny: 2 * disc.ny + 1,
        dt: disc.dt.map(|d| d / 2.0),
        ..disc.clone()
    }
}

/// Restriction of a field on `refined(disc)` to the coarse nodes.
pub fn restrict(fine: &DensityField) -> DensityField {
    DensityField {
        t: fine.t,
        x: fine.x.iter().step_by(2).cloned().collect(),
        y: fine.y.iter().step_by(2).cloned().collect(),
        values: fine.values.iter().step_by(2).map(|r| r.iter().step_by(2).cloned().collect()).collect(),
    }
}

/// Terminal difference between the run on `disc` and the run with halved
/// dx, dy and dt, measured on the coarse nodes.
pub fn self_convergence_error(
    model: &SdeModel,
    disc: &Discretization,
    init: impl Fn(&Discretization) -> DensityField,
    t_end: f64,
) -> Result<DensityError> {
    let dt = disc.dt.unwrap_or_else(|| default_full_dt(model, disc));
    let coarse_disc = Discretization { dt: Some(dt), ..disc.clone() };
    let fine_disc = refined(&coarse_disc);
    let coarse = solve_full_fpe(model, &coarse_disc, &init(&coarse_disc), t_end, &FullOptions::default())?;
    let fine = solve_full_fpe(model, &fine_disc, &init(&fine_disc), t_end, &FullOptions::default())?;
    density_error(&coarse.final_field, &restrict(&fine.final_field))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub t: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub marginal_l2: f64,
}

/// Density and slow-marginal errors of the reconstructed truncated solution
/// against the full solution, snapshot by snapshot.
pub fn compare_reduction(
    full: &[DensityField],
    coef: &Trajectory,
    basis: &EigenBasis,
    disc: &Discretization,
    r: f64,
) -> Result<Vec<ComparisonRow>> {
    if full.len() != coef.snapshots.len() {
        return Err(Error::GridMismatch(format!(
            "{} full snapshots vs {} coefficient snapshots",
            full.len(),
            coef.snapshots.len()
        )));
    }
    full.iter()
        .zip(&coef.snapshots)
        .map(|(f, s)| {
            if (f.t - s.t).abs() > 1e-9 * (1.0 + f.t.abs()) {
                return Err(Error::GridMismatch(format!("snapshot times {} vs {}", f.t, s.t)));
            }
            let rec = reconstruct_density(s, basis, disc, r);
            let e = density_error(f, &rec)?;
            let m = marginal_error(&f.marginal(), &rec.marginal(), disc.dy(r))?;
            Ok(ComparisonRow {
                t: f.t,
                l1: e.l1,
                l2: e.l2,
                linf: e.linf,
                marginal_l2: m.l2,
            })
        })
        .collect()
}

/// Keyed 64-bit mixer; uniforms are a pure function of (seed, path, step, lane).
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn keyed_uniform(seed: u64, path: u64, step: u64, lane: u64) -> f64 {
    let k = splitmix(seed ^ splitmix(path ^ splitmix(step.wrapping_mul(4).wrapping_add(lane))));
    ((k >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone)]
pub struct McOptions {
    pub n_paths: usize,
    pub t_end: f64,
    pub dt_sde: f64,
    pub seed: u64,
    /// Evenly spaced histogram times after t = 0.
    pub snapshots: usize,
}

#[derive(Debug, Clone)]
pub struct McEnsemble {
    pub n_paths: usize,
    pub seed: u64,
    pub dt_sde: f64,
    pub steps: usize,
    /// Final positions; `None` once absorbed.
    pub positions: Vec<Option<(f64, f64)>>,
    pub times: Vec<f64>,
    pub absorbed: Vec<usize>,
    /// Histograms as densities on the solver grid (count / (n_paths * cell area)).
    pub histograms: Vec<DensityField>,
    /// Raw counts per snapshot, `counts[s][iy][ix]` over the full y grid.
    pub counts: Vec<Vec<Vec<u64>>>,
}

/// Samples `n` starting points from a grid density: cell by mass, then
/// uniform inside the cell (cells are the trapezoid dual cells).
pub fn sample_initial(rho0: &DensityField, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let hx = rho0.x[1] - rho0.x[0];
    let hy = rho0.y[1] - rho0.y[0];
    let wx = trapezoid_weights(rho0.x.len(), hx);
    let wy = trapezoid_weights(rho0.y.len(), hy);
    let mut cells = Vec::new();
    let mut cdf = Vec::new();
    let mut acc = 0.0;
    for (iy, row) in rho0.values.iter().enumerate() {
        for (ix, v) in row.iter().enumerate() {
            let m = v.max(0.0) * wx[ix] * wy[iy];
            if m > 0.0 {
                acc += m;
                cells.push((ix, iy));
                cdf.push(acc);
            }
        }
    }
    assert!(acc > 0.0, "initial density has no positive mass");
    let nx = rho0.x.len();
    let ny = rho0.y.len();
    (0..n)
        .into_par_iter()
        .map(|p| {
            let u = keyed_uniform(seed, p as u64, u64::MAX, 0) * acc;
            let c = cdf.partition_point(|&v| v < u).min(cells.len() - 1);
            let (ix, iy) = cells[c];
            let lo = |i: usize, n: usize, h: f64, g: &[f64]| {
                let a = if i == 0 { g[0] } else { g[i] - h / 2.0 };
                let b = if i == n - 1 { g[n - 1] } else { g[i] + h / 2.0 };
                (a, b)
            };
            let (x0, x1) = lo(ix, nx, hx, &rho0.x);
            let (y0, y1) = lo(iy, ny, hy, &rho0.y);
            let ux = keyed_uniform(seed, p as u64, u64::MAX, 1);
            let uy = keyed_uniform(seed, p as u64, u64::MAX, 2);
            (x0 + ux * (x1 - x0), y0 + uy * (y1 - y0))
        })
        .collect()
}

fn bin(v: f64, lo: f64, h: f64, n: usize) -> Option<usize> {
    let i = ((v - lo) / h).round();
    if i < 0.0 || i > (n - 1) as f64 {
        None
    } else {
        Some(i as usize)
    }
}

/// Euler-Maruyama with first-exit absorption at |y| >= R, histogrammed on
/// the solver grid (paths beyond |x| > X + dx/2 are counted as live but unbinned).
pub fn euler_maruyama(model: &SdeModel, disc: &Discretization, starts: &[(f64, f64)], opts: &McOptions) -> McEnsemble {
    assert!(opts.dt_sde > 0.0 && opts.t_end > 0.0);
    let steps = (opts.t_end / opts.dt_sde - 1e-9).ceil().max(1.0) as usize;
    let dt = opts.t_end / steps as f64;
    let snap_at: Vec<usize> = (1..=opts.snapshots)
        .map(|k| ((k * steps) as f64 / opts.snapshots as f64).round() as usize)
        .collect();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let (eps, r) = (model.epsilon, model.r);
    let sx = model.sigma1 * (dt / eps).sqrt();
    let sy = model.sigma2 * dt.sqrt();
    let x = disc.x_grid();
    let y = disc.y_full(r);
    let (hx, hy) = (disc.dx(), disc.dy(r));
    let (nx, nyf) = (x.len(), y.len());
    let n_snap = snap_at.len() + 1;
    let chunk = 4096;
    let empty = || (vec![vec![vec![0u64; nx]; nyf]; n_snap], vec![0usize; n_snap]);
    let results: Vec<(Vec<Option<(f64, f64)>>, Vec<Vec<Vec<u64>>>, Vec<usize>)> = starts
        .par_chunks(chunk)
        .enumerate()
        .map(|(c, block)| {
            let (mut counts, mut absorbed) = empty();
            let mut out = Vec::with_capacity(block.len());
            for (k, &(x0, y0)) in block.iter().enumerate() {
                let p = (c * chunk + k) as u64;
                let mut pos = if y0.abs() >= r { None } else { Some((x0, y0)) };
                let mut record = |s: usize, pos: Option<(f64, f64)>| match pos {
                    None => absorbed[s] += 1,
                    Some((px, py)) => {
                        if let (Some(ix), Some(iy)) = (bin(px, -disc.x_max, hx, nx), bin(py, -r, hy, nyf)) {
                            counts[s][iy][ix] += 1;
                        }
                    }
                };
                record(0, pos);
                let mut next = 0;
                for n in 1..=steps {
                    if let Some((px, py)) = pos {
                        let z1 = if sx > 0.0 { normal.inverse_cdf(keyed_uniform(opts.seed, p, n as u64, 0)) } else { 0.0 };
                        let z2 = if sy > 0.0 { normal.inverse_cdf(keyed_uniform(opts.seed, p, n as u64, 1)) } else { 0.0 };
                        let nxp = px + model.f.eval(px, py) / eps * dt + sx * z1;
                        let nyp = py + model.g.eval(px, py) * dt + sy * z2;
                        pos = if nyp.abs() >= r { None } else { Some((nxp, nyp)) };
                    }
                    while next < snap_at.len() && snap_at[next] == n {
                        record(next + 1, pos);
                        next += 1;
                    }
                }
                out.push(pos);
            }
            (out, counts, absorbed)
        })
        .collect();
    let (mut counts, mut absorbed) = empty();
    let mut positions = Vec::with_capacity(starts.len());
    for (pos, c, a) in results {
        positions.extend(pos);
        for s in 0..n_snap {
            absorbed[s] += a[s];
            for (dst, src) in counts[s].iter_mut().zip(&c[s]) {
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
    }
    let wx = trapezoid_weights(nx, hx);
    let wy = trapezoid_weights(nyf, hy);
    let n = starts.len().max(1) as f64;
    let mut times = vec![0.0];
    times.extend(snap_at.iter().map(|&k| k as f64 * dt));
    let histograms = counts
        .iter()
        .zip(&times)
        .map(|(cs, &t)| DensityField {
            t,
            x: x.clone(),
            y: y.clone(),
            values: cs
                .iter()
                .enumerate()
                .map(|(iy, row)| row.iter().enumerate().map(|(ix, &k)| k as f64 / (n * wx[ix] * wy[iy])).collect())
                .collect(),
        })
        .collect();
    McEnsemble {
        n_paths: starts.len(),
        seed: opts.seed,
        dt_sde: dt,
        steps,
        positions,
        times,
        absorbed,
        histograms,
        counts,
    }
}

/// sqrt(B / n) with B the number of cells whose expected count under `pdf` is at least one.
pub fn statistical_error(pdf: &DensityField, n_paths: usize) -> f64 {
    let hx = pdf.x[1] - pdf.x[0];
    let hy = pdf.y[1] - pdf.y[0];
    let wx = trapezoid_weights(pdf.x.len(), hx);
    let wy = trapezoid_weights(pdf.y.len(), hy);
    let n = n_paths as f64;
    let b = pdf
        .values
        .iter()
        .enumerate()
        .flat_map(|(iy, row)| row.iter().enumerate().map(move |(ix, v)| (ix, iy, *v)))
        .filter(|&(ix, iy, v)| v * wx[ix] * wy[iy] * n >= 1.0)
        .count();
    (b as f64 / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Drift;
    use std::f64::consts::PI;

    fn small_disc() -> Discretization {
        Discretization {
            x_max: 8.0,
            nx: 81,
            ny: 31,
            ..Default::default()
        }
    }

    fn bump(r: f64) -> impl Fn(f64, f64) -> f64 {
        move |x: f64, y: f64| (PI * (y + r) / (2.0 * r)).sin() * (-(x - 0.5).powi(2) / 1.0).exp()
    }

    #[test]
    fn ou_relaxation_matches_transition_density() {
        let eps = 1e-2;
        let mut model = SdeModel::ou_linear(eps, PI / 2.0).with_g(Drift::from_fn("0", |_, _| 0.0));
        model.f = Drift::from_fn("-x", |x, _| -x);
        let disc = Discretization {
            x_max: 8.0,
            nx: 321,
            ny: 17,
            dt: Some(eps / 4000.0),
            ..Default::default()
        };
        let (m0, v0) = (1.0, 0.3);
        let rho0 = DensityField::from_fn(disc.x_grid(), disc.y_full(model.r), |x, y| {
            (PI * (y + model.r) / (2.0 * model.r)).sin() * (-(x - m0).powi(2) / (2.0 * v0)).exp() / (2.0 * PI * v0).sqrt()
        });
        let wx = trapezoid_weights(disc.nx, disc.dx());
        for k in [1.0, 2.0, 4.0] {
            let t = k * eps;
            let out = solve_full_fpe(&model, &disc, &rho0, t, &FullOptions::default()).unwrap();
            let mean = m0 * (-t / eps).exp();
            let var = 1.0 + (v0 - 1.0) * (-2.0 * t / eps).exp();
            let iy = disc.ny / 2 + 1;
            let row = &out.final_field.values[iy];
            let mass: f64 = row.iter().zip(&wx).map(|(v, w)| v * w).sum();
            let l2: f64 = row
                .iter()
                .zip(&disc.x_grid())
                .zip(&wx)
                .map(|((v, x), w)| {
                    let e = (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
                    w * (v / mass - e).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            assert!(l2 <= 1e-3, "t = {t}: {l2}");
        }
    }

    #[test]
    fn mass_is_non_increasing_and_positive() {
        let model = SdeModel::ou_linear(1e-2, PI / 2.0);
        let disc = small_disc();
        let rho0 = DensityField::from_fn(disc.x_grid(), disc.y_full(model.r), bump(model.r));
        let out = solve_full_fpe(&model, &disc, &rho0, 0.2, &FullOptions::default()).unwrap();
        for w in out.mass.windows(2) {
            assert!(w[1] <= w[0] + MASS_TOL * out.mass[0]);
        }
        assert!(out.final_field.min_value() >= -1e-10);
        assert!(out.mass.last().unwrap() < &out.mass[0]);
    }

    #[test]
    fn conditional_mean_tracks_y() {
        let eps = 1e-2;
        let model = SdeModel::ou_linear(eps, PI / 2.0);
        let disc = small_disc();
        let rho0 = DensityField::from_fn(disc.x_grid(), disc.y_full(model.r), bump(model.r));
        let out = solve_full_fpe(&model, &disc, &rho0, 0.3, &FullOptions::default()).unwrap();
        let f = &out.final_field;
        let wx = trapezoid_weights(disc.nx, disc.dx());
        let marg = f.marginal();
        let peak = marg.iter().cloned().fold(0.0, f64::max);
        for (iy, row) in f.values.iter().enumerate() {
            if marg[iy] < 0.2 * peak {
                continue;
            }
            let mean: f64 = row.iter().zip(&f.x).zip(&wx).map(|((v, x), w)| v * x * w).sum::<f64>() / marg[iy];
            // conditional mean y - eps d_y log(marginal) + ..., bounded by a few eps here
            assert!((mean - f.y[iy]).abs() < 10.0 * eps, "y = {}: {mean}", f.y[iy]);
        }
    }

    #[test]
    fn self_convergence_shrinks_under_refinement() {
        let model = SdeModel::ou_linear(1e-2, PI / 2.0);
        let disc = Discretization {
            x_max: 8.0,
            nx: 41,
            ny: 15,
            dt: Some(1e-3),
            ..Default::default()
        };
        let init = |d: &Discretization| DensityField::from_fn(d.x_grid(), d.y_full(model.r), bump(model.r));
        let e1 = self_convergence_error(&model, &disc, init, 0.1).unwrap();
        let e2 = self_convergence_error(&model, &refined(&disc), init, 0.1).unwrap();
        assert!(e1.l2 / e2.l2 >= 2.0, "{} {}", e1.l2, e2.l2);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let model = SdeModel::ou_linear(1e-2, PI / 2.0);
        let disc = small_disc();
        let rho0 = DensityField::zeros(vec![0.0, 1.0], vec![0.0, 1.0]);
        assert!(matches!(
            solve_full_fpe(&model, &disc, &rho0, 0.1, &FullOptions::default()),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn keyed_rng_is_uniform_and_stable() {
        let u: Vec<f64> = (0..20000).map(|p| keyed_uniform(7, p, 3, 0)).collect();
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
        assert!(u.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(keyed_uniform(7, 11, 3, 1), keyed_uniform(7, 11, 3, 1));
        assert_ne!(keyed_uniform(7, 11, 3, 1), keyed_uniform(7, 11, 3, 0));
    }

    #[test]
    fn deterministic_paths_follow_the_ode() {
        let eps = 0.1;
        let mut model = SdeModel::ou_linear(eps, 10.0);
        model.sigma1 = 0.0;
        model.sigma2 = 0.0;
        let disc = small_disc();
        let start = (1.0, 0.5);
        let rhs = |x: f64, y: f64| ((y - x) / eps, -x);
        // RK4 oracle at a tiny step
        let (mut x, mut y) = start;
        let h = 1e-5;
        for _ in 0..(0.5 / h) as usize {
            let k1 = rhs(x, y);
            let k2 = rhs(x + h / 2.0 * k1.0, y + h / 2.0 * k1.1);
            let k3 = rhs(x + h / 2.0 * k2.0, y + h / 2.0 * k2.1);
            let k4 = rhs(x + h * k3.0, y + h * k3.1);
            x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            y += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        let mut errs = Vec::new();
        for dt in [1e-3, 5e-4] {
            let opts = McOptions {
                n_paths: 1,
                t_end: 0.5,
                dt_sde: dt,
                seed: 1,
                snapshots: 0,
            };
            let ens = euler_maruyama(&model, &disc, &[start], &opts);
            let (px, py) = ens.positions[0].unwrap();
            errs.push(((px - x).powi(2) + (py - y).powi(2)).sqrt());
        }
        assert!(errs[0] < 5e-3, "{errs:?}");
        assert!((errs[0] / errs[1] - 2.0).abs() < 0.2, "{errs:?}");
    }

    #[test]
    fn ensembles_are_reproducible() {
        let model = SdeModel::ou_linear(1e-2, PI / 2.0);
        let disc = small_disc();
        let rho0 = DensityField::from_fn(disc.x_grid(), disc.y_full(model.r), bump(model.r));
        let starts = sample_initial(&rho0, 5000, 9);
        let opts = McOptions {
            n_paths: 5000,
            t_end: 0.05,
            dt_sde: 1e-3,
            seed: 9,
            snapshots: 2,
        };
        let a = euler_maruyama(&model, &disc, &starts, &opts);
        let b = euler_maruyama(&model, &disc, &sample_initial(&rho0, 5000, 9), &opts);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.positions, b.positions);
        let c = euler_maruyama(&model, &disc, &starts, &McOptions { seed: 10, ..opts });
        assert_ne!(a.positions, c.positions);
        // absorbed paths stay absorbed
        assert!(a.absorbed.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn initial_histogram_matches_density() {
        let model = SdeModel::ou_linear(1e-2, PI / 2.0);
        let disc = small_disc();
        let f = bump(model.r);
        let mut rho0 = DensityField::from_fn(disc.x_grid(), disc.y_full(model.r), f);
        let m = rho0.mass();
        rho0.values.iter_mut().flatten().for_each(|v| *v /= m);
        let n = 100_000;
        let ens = euler_maruyama(
            &model,
            &disc,
            &sample_initial(&rho0, n, 3),
            &McOptions {
                n_paths: n,
                t_end: 1e-3,
                dt_sde: 1e-3,
                seed: 3,
                snapshots: 1,
            },
        );
        let e = density_error(&ens.histograms[0], &rho0).unwrap();
        assert!(e.l1 <= 3.0 * statistical_error(&rho0, n), "{} {}", e.l1, statistical_error(&rho0, n));
    }
}
