//! Eigenfunctions of the fast operator, L1 phi_j = -lambda_j phi_j.
//!
//! Two sources: closed-form Hermite functions for affine fast drift
//! f = (a0 + a1 y - x)/tau, and a grid eigensolver for general drift.
//! Besides phi_j the basis exposes the adjoint functions psi_j = phi_j/p_s
//! (eigenfunctions of the adjoint operator), which give biorthogonality
//! int phi_i psi_j dx = N_j delta_ij.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::model::{AffineDrift, Discretization, SdeModel};
use crate::numerics::{interp_cubic, max_abs, SymTridiag};
use crate::stationary::stationary_density;

/// Extra eigenpairs computed beyond the truncation level.
pub const SPARE_MODES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSource {
    HermiteAnalytic,
    NumericGrid,
}

/// Physicists' Hermite polynomials H_0..=H_n at `w`.
pub fn hermite_all(n: usize, w: f64) -> Vec<f64> {
    let mut h = vec![0.0; n + 1];
    h[0] = 1.0;
    if n >= 1 {
        h[1] = 2.0 * w;
    }
    for k in 1..n {
        h[k + 1] = 2.0 * w * h[k] - 2.0 * k as f64 * h[k - 1];
    }
    h
}

pub fn hermite(n: usize, w: f64) -> f64 {
    hermite_all(n, w)[n]
}

/// (2j-1)!! with the convention (-1)!! = 1.
pub fn double_factorial_odd(j: usize) -> f64 {
    (1..=j).map(|i| (2 * i - 1) as f64).product()
}

/// Norm constants as tabulated for the linear fixture (sigma1 = sqrt 2,
/// tau = 1): sqrt(pi) for j = 0, sqrt(pi/2)(2j-1)!! otherwise. For j >= 1
/// the quadrature value int phi_j^2 dx is larger by sqrt 2.
pub fn tabulated_norm(j: usize) -> f64 {
    if j == 0 {
        PI.sqrt()
    } else {
        (PI / 2.0).sqrt() * double_factorial_odd(j)
    }
}

/// Closed-form basis for affine fast drift. With
/// z = s (x - a(y)), s = sqrt(2/(sigma1^2 tau)):
/// phi_n = exp(-z^2/2) H_n(z/sqrt 2), lambda_n = n/tau.
#[derive(Debug, Clone)]
pub struct HermiteBasis {
    pub drift: AffineDrift,
    pub s: f64,
}

impl HermiteBasis {
    #[inline]
    pub fn z(&self, y: f64, x: f64) -> f64 {
        self.s * (x - self.drift.center(y))
    }

    pub fn phi(&self, j: usize, y: f64, x: f64) -> f64 {
        let z = self.z(y, x);
        (-0.5 * z * z).exp() * hermite(j, z / SQRT_2)
    }

    /// d phi_j / dy = (a1 s / sqrt 2) phi_{j+1}.
    pub fn phi_dy(&self, j: usize, y: f64, x: f64) -> f64 {
        self.drift.a1 * self.s / SQRT_2 * self.phi(j + 1, y, x)
    }

    pub fn psi(&self, j: usize, y: f64, x: f64) -> f64 {
        (2.0 * PI).sqrt() / self.s * hermite(j, self.z(y, x) / SQRT_2)
    }

    pub fn psi_dy(&self, j: usize, y: f64, x: f64) -> f64 {
        if j == 0 {
            return 0.0;
        }
        -(2.0 * PI).sqrt() * SQRT_2 * j as f64 * self.drift.a1 * hermite(j - 1, self.z(y, x) / SQRT_2)
    }

    pub fn psi_dyy(&self, j: usize, y: f64, x: f64) -> f64 {
        if j < 2 {
            return 0.0;
        }
        let a1 = self.drift.a1;
        (2.0 * PI).sqrt() * 2.0 * (j * (j - 1)) as f64 * a1 * a1 * self.s * hermite(j - 2, self.z(y, x) / SQRT_2)
    }

    /// N_j = int phi_j psi_j dx = 2 pi 2^j j! / s^2.
    pub fn adj_norm(&self, j: usize) -> f64 {
        let fact: f64 = (1..=j).map(|i| i as f64).product();
        2.0 * PI * 2f64.powi(j as i32) * fact / (self.s * self.s)
    }

    /// int phi_j^2 dx = sqrt(pi)(2j-1)!!/s.
    pub fn norm(&self, j: usize) -> f64 {
        PI.sqrt() * double_factorial_odd(j) / self.s
    }

    pub fn c0(&self) -> f64 {
        (2.0 * PI).sqrt() / self.s
    }
}

/// Eigenpairs at one value of the slow parameter, sampled on the x grid.
#[derive(Debug, Clone)]
pub struct GridBasis {
    pub y: f64,
    pub x0: f64,
    pub h: f64,
    pub lambdas: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub ps: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Grid eigensolver for general additive-noise drift.
pub struct NumericBasis {
    model: SdeModel,
    disc: Discretization,
    n_modes: usize,
    pub dy_param: f64,
    cache: Mutex<HashMap<u64, Arc<GridBasis>>>,
}

impl std::fmt::Debug for NumericBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NumericBasis")
            .field("n_modes", &self.n_modes)
            .field("dy_param", &self.dy_param)
            .finish()
    }
}

const CACHE_LIMIT: usize = 4096;

impl NumericBasis {
    pub fn new(model: &SdeModel, disc: &Discretization, n_modes: usize) -> Self {
        NumericBasis {
            model: model.clone(),
            disc: disc.clone(),
            n_modes,
            dy_param: 1e-4 * model.r.max(1.0),
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Solves (or fetches) the eigenproblem at parameter `y`.
    pub fn grid(&self, y: f64) -> Result<Arc<GridBasis>> {
        let key = y.to_bits();
        if let Some(b) = self.cache.lock().unwrap().get(&key) {
            return Ok(b.clone());
        }
        let b = Arc::new(solve_grid_basis(&self.model, &self.disc, y, self.n_modes)?);
        let mut c = self.cache.lock().unwrap();
        if c.len() >= CACHE_LIMIT {
            c.clear();
        }
        c.insert(key, b.clone());
        Ok(b)
    }

    /// Centered parameter differences (first, second) of a grid quantity.
    pub fn grid_dy<F>(&self, y: f64, pick: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: Fn(&GridBasis) -> &[f64],
    {
        let d = self.dy_param;
        let bp = self.grid(y + d)?;
        let b0 = self.grid(y)?;
        let bm = self.grid(y - d)?;
        let (p, z, m) = (pick(&bp), pick(&b0), pick(&bm));
        let first = p.iter().zip(m).map(|(a, b)| (a - b) / (2.0 * d)).collect();
        let second = p
            .iter()
            .zip(z)
            .zip(m)
            .map(|((a, c), b)| (a - 2.0 * c + b) / (d * d))
            .collect();
        Ok((first, second))
    }
}

/// Symmetrized finite-volume eigenproblem. The discrete fast operator
/// W^-1 S E^-1 (S symmetric, E = exp(Psi), W = trapezoid weights) is similar
/// to the symmetric tridiagonal A = -(WE)^-1/2 S (WE)^-1/2.
pub fn solve_grid_basis(model: &SdeModel, disc: &Discretization, y: f64, n_modes: usize) -> Result<GridBasis> {
    let ps = stationary_density(model, y, disc)?;
    let n = disc.nx;
    let h = disc.dx();
    let dcoef = 0.5 * model.sigma1 * model.sigma1 / h;
    let w = &ps.weights;
    let pot = &ps.potential;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    for i in 0..n - 1 {
        let dp = pot[i + 1] - pot[i];
        diag[i] += dcoef * crate::numerics::bernoulli(-dp) / w[i];
        diag[i + 1] += dcoef * crate::numerics::bernoulli(dp) / w[i + 1];
        let half = 0.5 * dp;
        let sh = if half.abs() < 1e-8 { 1.0 } else { half / half.sinh() };
        off[i] = -dcoef * sh / (w[i] * w[i + 1]).sqrt();
    }
    let t = SymTridiag { diag, off };
    let lambdas = t.smallest_eigenvalues(n_modes);
    for (j, &l) in lambdas.iter().enumerate() {
        if l < -1e-8 {
            return Err(Error::SpectrumViolation { index: j, value: l });
        }
    }
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
    for &l in &lambdas {
        let v = t.eigenvector(l, &vecs);
        vecs.push(v);
    }
    let mut phi = Vec::with_capacity(n_modes);
    let mut psi = Vec::with_capacity(n_modes);
    for (j, v) in vecs.iter().enumerate() {
        if j == 0 {
            phi.push(ps.values.clone());
            psi.push(vec![1.0; n]);
            continue;
        }
        let mut ph: Vec<f64> = (0..n).map(|i| (ps.values[i] / w[i]).sqrt() * v[i]).collect();
        let mut ad: Vec<f64> = (0..n)
            .map(|i| {
                let d = (ps.values[i] * w[i]).sqrt();
                if d > 1e-300 {
                    v[i] / d
                } else {
                    0.0
                }
            })
            .collect();
        if sign_at_leftmost_extremum(&ph) < 0.0 {
            ph.iter_mut().for_each(|p| *p = -*p);
            ad.iter_mut().for_each(|p| *p = -*p);
        }
        phi.push(ph);
        psi.push(ad);
    }
    let mut lambdas = lambdas;
    lambdas[0] = lambdas[0].max(0.0);
    Ok(GridBasis {
        y,
        x0: -disc.x_max,
        h,
        lambdas,
        phi,
        psi,
        ps: ps.values,
        weights: ps.weights,
    })
}

fn sign_at_leftmost_extremum(v: &[f64]) -> f64 {
    let floor = 1e-3 * max_abs(v);
    for i in 1..v.len() - 1 {
        if v[i].abs() > floor && (v[i] - v[i - 1]) * (v[i + 1] - v[i]) <= 0.0 {
            return v[i].signum();
        }
    }
    1.0
}

#[derive(Debug)]
enum BasisImpl {
    Hermite(HermiteBasis),
    Numeric(NumericBasis),
}

/// Eigenbasis 0..=J (plus spares) of the fast operator, parametric in y.
#[derive(Debug)]
pub struct EigenBasis {
    pub j_max: usize,
    pub lambdas: Vec<f64>,
    /// C_jj = int phi_j^2 dx.
    pub norms: Vec<f64>,
    pub source: BasisSource,
    inner: BasisImpl,
}

pub fn hermite_basis(model: &SdeModel, j_max: usize) -> Result<EigenBasis> {
    let drift = model.affine_fast_drift().ok_or_else(|| {
        Error::UnsupportedModel(format!(
            "fast drift `{}` is not of the form (a(y) - x)/tau",
            model.f.name()
        ))
    })?;
    let s = (2.0 / (model.sigma1 * model.sigma1 * drift.tau)).sqrt();
    let hb = HermiteBasis { drift, s };
    let m = j_max + 1 + SPARE_MODES;
    Ok(EigenBasis {
        j_max,
        lambdas: (0..m).map(|n| n as f64 / drift.tau).collect(),
        norms: (0..m).map(|n| hb.norm(n)).collect(),
        source: BasisSource::HermiteAnalytic,
        inner: BasisImpl::Hermite(hb),
    })
}

/// Grid eigenbasis. Eigenvalues and norms are reported at y = 0 (they are
/// y-independent for translation-covariant drift).
pub fn numeric_basis(model: &SdeModel, disc: &Discretization, j_max: usize) -> Result<EigenBasis> {
    let m = j_max + 1 + SPARE_MODES;
    let nb = NumericBasis::new(model, disc, m);
    let g = nb.grid(0.0)?;
    let norms = g
        .phi
        .iter()
        .map(|p| p.iter().zip(&g.weights).map(|(v, w)| w * v * v).sum())
        .collect();
    Ok(EigenBasis {
        j_max,
        lambdas: g.lambdas.clone(),
        norms,
        source: BasisSource::NumericGrid,
        inner: BasisImpl::Numeric(nb),
    })
}

/// Picks the closed form when the fast drift is affine, else the grid solver.
pub fn auto_basis(model: &SdeModel, disc: &Discretization, j_max: usize) -> Result<EigenBasis> {
    match model.kind {
        crate::model::ModelKind::OrnsteinUhlenbeck => hermite_basis(model, j_max),
        crate::model::ModelKind::GeneralAdditive => numeric_basis(model, disc, j_max),
    }
}

impl EigenBasis {
    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn hermite(&self) -> Option<&HermiteBasis> {
        match &self.inner {
            BasisImpl::Hermite(h) => Some(h),
            _ => None,
        }
    }

    pub fn numeric(&self) -> Option<&NumericBasis> {
        match &self.inner {
            BasisImpl::Numeric(n) => Some(n),
            _ => None,
        }
    }

    pub fn eval(&self, j: usize, y: f64, x: f64) -> f64 {
        match &self.inner {
            BasisImpl::Hermite(h) => h.phi(j, y, x),
            BasisImpl::Numeric(n) => {
                let g = n.grid(y).expect("eigenbasis solve failed");
                interp_cubic(&g.phi[j], g.x0, g.h, x)
            }
        }
    }

    pub fn eval_dy(&self, j: usize, y: f64, x: f64) -> f64 {
        match &self.inner {
            BasisImpl::Hermite(h) => h.phi_dy(j, y, x),
            BasisImpl::Numeric(n) => {
                let d = n.dy_param;
                (self.eval(j, y + d, x) - self.eval(j, y - d, x)) / (2.0 * d)
            }
        }
    }

    /// Adjoint eigenfunction psi_j = phi_j / p_s.
    pub fn eval_adj(&self, j: usize, y: f64, x: f64) -> f64 {
        match &self.inner {
            BasisImpl::Hermite(h) => h.psi(j, y, x),
            BasisImpl::Numeric(n) => {
                let g = n.grid(y).expect("eigenbasis solve failed");
                interp_cubic(&g.psi[j], g.x0, g.h, x)
            }
        }
    }

    /// N_j = int phi_j psi_j dx.
    pub fn adj_norm(&self, j: usize) -> f64 {
        match &self.inner {
            BasisImpl::Hermite(h) => h.adj_norm(j),
            BasisImpl::Numeric(_) => 1.0,
        }
    }

    /// C0 = int phi_0 dx.
    pub fn c0(&self) -> f64 {
        match &self.inner {
            BasisImpl::Hermite(h) => h.c0(),
            BasisImpl::Numeric(_) => 1.0,
        }
    }

    /// phi_j(y, .) on a set of x nodes.
    pub fn eval_row(&self, j: usize, y: f64, xs: &[f64]) -> Vec<f64> {
        match &self.inner {
            BasisImpl::Hermite(h) => xs.iter().map(|&x| h.phi(j, y, x)).collect(),
            BasisImpl::Numeric(n) => {
                let g = n.grid(y).expect("eigenbasis solve failed");
                xs.iter().map(|&x| interp_cubic(&g.phi[j], g.x0, g.h, x)).collect()
            }
        }
    }

    pub fn eval_adj_row(&self, j: usize, y: f64, xs: &[f64]) -> Vec<f64> {
        match &self.inner {
            BasisImpl::Hermite(h) => xs.iter().map(|&x| h.psi(j, y, x)).collect(),
            BasisImpl::Numeric(n) => {
                let g = n.grid(y).expect("eigenbasis solve failed");
                xs.iter().map(|&x| interp_cubic(&g.psi[j], g.x0, g.h, x)).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Drift, ModelKind};
    use crate::stationary::FastOperator;
    use gauss_quad::GaussHermite;
    use proptest::prelude::*;

    fn fixture() -> SdeModel {
        SdeModel::ou_linear(1e-2, 1.5)
    }

    fn disc(nx: usize) -> Discretization {
        Discretization {
            x_max: 8.0,
            nx,
            ny: 31,
            ..Default::default()
        }
    }

    #[test]
    fn hermite_spectrum_and_norms() {
        let b = hermite_basis(&fixture(), 5).unwrap();
        assert_eq!(&b.lambdas[..4], &[0.0, 1.0, 2.0, 3.0]);
        assert!((b.c0() - (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!((b.norms[0] - PI.sqrt()).abs() < 1e-14);
        assert!((b.norms[1] - PI.sqrt()).abs() < 1e-14);
        assert!((b.norms[3] - 15.0 * PI.sqrt()).abs() < 1e-12);
        assert!((tabulated_norm(1) - 1.2533141373155).abs() < 1e-12);
    }

    #[test]
    fn norms_match_gauss_hermite_oracle() {
        // independent oracle: 200-node rule applied to phi_j^2 e^{x^2} against e^{-x^2}
        let b = hermite_basis(&fixture(), 6).unwrap();
        let gh = GaussHermite::new(200.try_into().unwrap());
        for j in 0..=6 {
            let v: f64 = gh.integrate(|t| {
                let p = b.eval(j, 0.0, t);
                p * p * (t * t).exp()
            });
            assert!((v - b.norms[j]).abs() < 1e-10 * b.norms[j], "j = {j}");
        }
    }

    #[test]
    fn hermite_ladder_identity() {
        // d/dz (H_n(z) e^{-z^2}) = -H_{n+1}(z) e^{-z^2}
        let mut z = 0.123f64;
        for _ in 0..64 {
            z = (z * 3.7 + 0.91).sin() * 3.0;
            for n in 0..8 {
                let hs = 1e-5;
                let f = |t: f64| hermite(n, t) * (-t * t).exp();
                let d = (f(z + hs) - f(z - hs)) / (2.0 * hs);
                let exact = -hermite(n + 1, z) * (-z * z).exp();
                let lower = if n > 0 { 2.0 * n as f64 * hermite(n - 1, z) } else { 0.0 };
                let d2 = (lower - 2.0 * z * hermite(n, z)) * (-z * z).exp();
                assert!((d2 - exact).abs() < 1e-10 * (1.0 + exact.abs()));
                assert!((d - exact).abs() < 1e-6 * (1.0 + exact.abs()));
            }
        }
    }

    #[test]
    fn hermite_translation_and_dy() {
        let b = hermite_basis(&fixture(), 4).unwrap();
        for &(y, x) in &[(0.3, 1.2), (-0.7, -0.1), (1.1, 2.5)] {
            for j in 0..4 {
                assert_eq!(b.eval(j, y, x), b.eval(j, 0.0, x - y));
                let hs = 1e-5;
                let dx = (b.eval(j, y, x + hs) - b.eval(j, y, x - hs)) / (2.0 * hs);
                assert!((b.eval_dy(j, y, x) + dx).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn hermite_residual_and_biorthogonality() {
        let m = fixture();
        let b = hermite_basis(&m, 5).unwrap();
        let hb = b.hermite().unwrap();
        let y = 0.4;
        // continuous residual by fine finite differences
        for j in 0..=5 {
            for &x in &[-1.5, 0.2, 0.9, 2.2] {
                let hs = 2e-4;
                let u = |x: f64| hb.phi(j, y, x);
                let flux = |x: f64| {
                    let du = (u(x + hs) - u(x - hs)) / (2.0 * hs);
                    du - m.f.eval(x, y) * u(x)
                };
                let l1 = (flux(x + hs) - flux(x - hs)) / (2.0 * hs);
                let r = l1 + b.lambdas[j] * u(x);
                let scale = 1.0 + (b.lambdas[j] * u(x)).abs();
                assert!(r.abs() < 1e-5 * scale, "j={j} x={x} r={r}");
            }
        }
        let gh = GaussHermite::new(120.try_into().unwrap());
        for i in 0..=5 {
            for j in 0..=5 {
                let v: f64 = gh.integrate(|u| {
                    let x = y + SQRT_2 * u;
                    SQRT_2 * hb.phi(i, y, x) * hb.psi(j, y, x) * (u * u).exp()
                });
                let expect = if i == j { hb.adj_norm(j) } else { 0.0 };
                assert!((v - expect).abs() < 1e-9 * hb.adj_norm(j), "{i} {j} {v}");
            }
        }
    }

    #[test]
    fn numeric_path_recovers_linear_spectrum() {
        let m = fixture();
        let d = disc(801);
        let b = numeric_basis(&m, &d, 5).unwrap();
        for j in 0..=5 {
            assert!((b.lambdas[j] - j as f64).abs() < 1e-3, "lambda_{j} = {}", b.lambdas[j]);
        }
        let nb = b.numeric().unwrap();
        let g = nb.grid(0.0).unwrap();
        let ps = stationary_density(&m, 0.0, &d).unwrap();
        let num: f64 = g.phi[0].iter().zip(&ps.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let den: f64 = ps.values.iter().map(|v| v * v).sum();
        assert!((num / den).sqrt() <= 1e-6);
        // weighted Gram matrix
        for i in 0..6 {
            for j in 0..6 {
                let v: f64 = (0..d.nx).map(|k| g.weights[k] * g.phi[i][k] * g.phi[j][k] / g.ps[k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() <= 1e-6, "{i} {j} {v}");
            }
        }
        // residual and mean-zero
        let op = FastOperator::new(&m, 0.0, &d);
        for j in 0..6 {
            let r = op.apply(&g.phi[j]);
            let res: f64 = r.iter().zip(&g.phi[j]).map(|(a, p)| (a + g.lambdas[j] * p).powi(2)).sum::<f64>().sqrt();
            let nrm: f64 = g.phi[j].iter().map(|p| p * p).sum::<f64>().sqrt();
            assert!(res <= 1e-6 * nrm, "residual {j}: {res}");
            if j > 0 {
                let mean: f64 = g.phi[j].iter().zip(&g.weights).map(|(p, w)| p * w).sum();
                assert!(mean.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn numeric_eigenvalues_converge_at_second_order() {
        let m = fixture();
        let coarse = numeric_basis(&m, &disc(101), 4).unwrap();
        let fine = numeric_basis(&m, &disc(201), 4).unwrap();
        for j in 1..=4 {
            let ec = (coarse.lambdas[j] - j as f64).abs();
            let ef = (fine.lambdas[j] - j as f64).abs();
            assert!(ec >= 3.0 * ef, "j={j}: {ec} vs {ef}");
        }
    }

    #[test]
    fn numeric_eigenfunctions_match_hermite_up_to_sign() {
        let m = fixture();
        let d = disc(801);
        let nb = numeric_basis(&m, &d, 3).unwrap();
        let hb = hermite_basis(&m, 3).unwrap();
        let h = hb.hermite().unwrap();
        let y = 0.25;
        let xs = d.x_grid();
        for j in 1..=3 {
            let num = nb.eval_row(j, y, &xs);
            // analytic phi_j normalized so int phi^2/p_s = 1 (divide by sqrt(N_j))
            let scale = h.adj_norm(j).sqrt();
            let ana: Vec<f64> = xs.iter().map(|&x| h.phi(j, y, x) / scale).collect();
            let sgn = if num.iter().zip(&ana).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            let err = num.iter().zip(&ana).map(|(a, b)| (a - sgn * b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-3, "j={j} err={err}");
            // parameter derivative agrees with the analytic one
            let dy_num = nb.eval_dy(j, y, 0.3);
            let dy_ana = sgn * h.phi_dy(j, y, 0.3) / scale;
            assert!((dy_num - dy_ana).abs() < 1e-3, "dy j={j}: {dy_num} vs {dy_ana}");
        }
    }

    #[test]
    fn double_well_has_real_nonnegative_spectrum() {
        let mut m = fixture();
        m.f = Drift::from_expr("x - x^3 + 0.2*y").unwrap();
        m.kind = ModelKind::GeneralAdditive;
        let b = numeric_basis(&m, &disc(401), 3).unwrap();
        assert!(b.lambdas[0].abs() < 1e-8);
        assert!(b.lambdas.windows(2).all(|w| w[0] <= w[1]));
        assert!(b.lambdas[1] > 0.0);
        assert!(matches!(hermite_basis(&m, 3), Err(Error::UnsupportedModel(_))));
    }

    proptest! {
        #[test]
        fn affine_rescaling(tau in 0.3f64..3.0, sig in 0.5f64..2.5, c in -1.0f64..1.0, y in -1.0f64..1.0) {
            let mut m = fixture();
            m.f = Drift::from_fn("affine", move |x, y| (c * y - x) / tau);
            m.sigma1 = sig;
            let b = hermite_basis(&m, 3).unwrap();
            let hb = b.hermite().unwrap();
            prop_assert!((b.lambdas[2] - 2.0 / tau).abs() < 1e-12);
            // phi_0 is proportional to the stationary density
            let d = Discretization { x_max: 12.0 * sig * tau.sqrt() + 2.0, nx: 801, ny: 31, ..Default::default() };
            let ps = stationary_density(&m, y, &d).unwrap();
            let xs = d.x_grid();
            for i in (0..801).step_by(50) {
                let v = hb.phi(0, y, xs[i]) / hb.c0();
                prop_assert!((v - ps.values[i]).abs() < 1e-9);
            }
        }
    }
}
