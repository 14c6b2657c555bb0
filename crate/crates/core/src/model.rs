//! Problem definition: the fast-slow SDE
//!
//!   dx = f(x, y)/eps dt + sigma1/sqrt(eps) dW1,   dy = g(x, y) dt + sigma2 dW2
//!
//! on the strip R x (-R, R), together with the discretization parameters
//! and the discrete checks of the standing assumptions.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;

type DriftFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A named scalar drift function of `(x, y)`.
#[derive(Clone)]
pub struct Drift {
    name: String,
    func: Arc<DriftFn>,
}

impl Drift {
    pub fn from_fn(name: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Drift {
            name: name.into(),
            func: Arc::new(f),
        }
    }

    pub fn from_expr(src: &str) -> Result<Self> {
        let e = Expr::parse(src)?;
        Ok(Drift::from_fn(format!("custom:{src}"), move |x, y| e.eval(x, y)))
    }

    /// Looks up a catalogue entry for the fast (`slot = "f"`) or slow
    /// (`slot = "g"`) drift, falling back to an expression.
    ///
    /// Catalogue: `ou_linear` (f = y - x, g = -x), `zero`.
    pub fn parse(slot: &str, spec: &str) -> Result<Self> {
        let spec = spec.trim();
        match (slot, spec) {
            ("f", "ou_linear") => Ok(Drift::from_fn("ou_linear", |x, y| y - x)),
            ("g", "ou_linear") => Ok(Drift::from_fn("ou_linear", |x, _| -x)),
            (_, "zero") => Ok(Drift::from_fn("zero", |_, _| 0.0)),
            _ => Drift::from_expr(spec.strip_prefix("custom:").unwrap_or(spec)),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.func)(x, y)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `alpha * self`.
    pub fn scaled(&self, alpha: f64) -> Drift {
        let f = self.func.clone();
        Drift::from_fn(format!("{alpha}*({})", self.name), move |x, y| alpha * f(x, y))
    }
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Drift({})", self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    OrnsteinUhlenbeck,
    GeneralAdditive,
}

#[derive(Debug, Clone)]
pub struct SdeModel {
    pub f: Drift,
    pub g: Drift,
    pub sigma1: f64,
    pub sigma2: f64,
    pub epsilon: f64,
    pub r: f64,
    pub kind: ModelKind,
}

impl SdeModel {
    /// The linear fixture: f = y - x, g = -x, sigma1 = sigma2 = sqrt 2.
    pub fn ou_linear(epsilon: f64, r: f64) -> Self {
        SdeModel {
            f: Drift::parse("f", "ou_linear").unwrap(),
            g: Drift::parse("g", "ou_linear").unwrap(),
            sigma1: std::f64::consts::SQRT_2,
            sigma2: std::f64::consts::SQRT_2,
            epsilon,
            r,
            kind: ModelKind::OrnsteinUhlenbeck,
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        SdeModel {
            epsilon,
            ..self.clone()
        }
    }

    pub fn with_g(&self, g: Drift) -> Self {
        SdeModel { g, ..self.clone() }
    }

    /// Detects f(x, y) = (a0 + a1*y - x)/tau by probing; `None` if f is not
    /// of this form.
    pub fn affine_fast_drift(&self) -> Option<AffineDrift> {
        let f = |x: f64, y: f64| self.f.eval(x, y);
        let alpha = f(0.0, 0.0);
        let beta = 0.5 * (f(1.0, 0.0) - f(-1.0, 0.0));
        let gamma = 0.5 * (f(0.0, 1.0) - f(0.0, -1.0));
        if !(beta < 0.0) || !alpha.is_finite() || !gamma.is_finite() {
            return None;
        }
        let probes = [-3.7, -1.3, -0.4, 0.0, 0.55, 2.9, 6.1];
        for &x in &probes {
            for &yf in &[-0.93, -0.31, 0.17, 0.88] {
                let y = yf * self.r.max(1.0);
                let v = f(x, y);
                let lin = alpha + beta * x + gamma * y;
                if !v.is_finite() || (v - lin).abs() > 1e-12 * (1.0 + v.abs().max(lin.abs())) {
                    return None;
                }
            }
        }
        Some(AffineDrift {
            tau: -1.0 / beta,
            a0: -alpha / beta,
            a1: -gamma / beta,
        })
    }
}

/// Parameters of an affine fast drift f = (a0 + a1*y - x)/tau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDrift {
    pub tau: f64,
    pub a0: f64,
    pub a1: f64,
}

impl AffineDrift {
    #[inline]
    pub fn center(&self, y: f64) -> f64 {
        self.a0 + self.a1 * y
    }
}

/// Grid and solver resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    /// Fast-domain half width; x lives on [-X, X].
    pub x_max: f64,
    pub nx: usize,
    /// Number of interior y nodes; the Dirichlet endpoints are not unknowns.
    pub ny: usize,
    /// Fixed time step; `None` selects the stability rule of each solver.
    pub dt: Option<f64>,
    pub quad_nodes: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization {
            x_max: 10.0,
            nx: 201,
            ny: 63,
            dt: None,
            quad_nodes: 64,
        }
    }
}

impl Discretization {
    pub fn dx(&self) -> f64 {
        2.0 * self.x_max / (self.nx - 1) as f64
    }

    pub fn x_grid(&self) -> Vec<f64> {
        let h = self.dx();
        (0..self.nx).map(|i| -self.x_max + i as f64 * h).collect()
    }

    pub fn dy(&self, r: f64) -> f64 {
        2.0 * r / (self.ny + 1) as f64
    }

    /// Interior y nodes.
    pub fn y_interior(&self, r: f64) -> Vec<f64> {
        let h = self.dy(r);
        (1..=self.ny).map(|i| -r + i as f64 * h).collect()
    }

    /// All y nodes including the endpoints -R and R.
    pub fn y_full(&self, r: f64) -> Vec<f64> {
        let h = self.dy(r);
        (0..self.ny + 2).map(|i| -r + i as f64 * h).collect()
    }

    pub fn check(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::InvalidModel {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if !(self.x_max > 0.0) {
            return bad("X", "must be positive");
        }
        if self.nx < 16 {
            return bad("nx", "must be at least 16");
        }
        if self.ny < 16 {
            return bad("ny", "must be at least 16");
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return bad("dt", "must be positive");
            }
        }
        if self.quad_nodes < 32 {
            return bad("quad_nodes", "must be at least 32");
        }
        Ok(())
    }
}

pub const HYPERBOLICITY_TOL: f64 = 1e-8;
const ROOT_SUBINTERVALS: usize = 512;
const BISECTION_TOL: f64 = 1e-12;

/// Centered difference step used for probing derivatives of drifts.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicityReport {
    pub ok: bool,
    /// `(y, x*, df/dx(x*, y))` for every root found.
    pub roots: Vec<(f64, f64, f64)>,
    /// `(x*, y)` pairs where |df/dx| <= tolerance.
    pub violations: Vec<(f64, f64)>,
    /// y samples where f had no sign change on [-X, X].
    pub unbracketed: Vec<f64>,
}

/// Finds the zeros of `f(., y)` on [-X, X] and checks that df/dx does not
/// vanish there.
pub fn check_normal_hyperbolicity(model: &SdeModel, x_max: f64, y_samples: &[f64]) -> HyperbolicityReport {
    let f = |x: f64, y: f64| model.f.eval(x, y);
    let h = 2.0 * x_max / ROOT_SUBINTERVALS as f64;
    let mut roots = Vec::new();
    let mut violations = Vec::new();
    let mut unbracketed = Vec::new();
    for &y in y_samples {
        let mut found = Vec::new();
        let mut fa = f(-x_max, y);
        if fa == 0.0 {
            found.push(-x_max);
        }
        for i in 0..ROOT_SUBINTERVALS {
            let a = -x_max + i as f64 * h;
            let b = if i + 1 == ROOT_SUBINTERVALS { x_max } else { a + h };
            let fb = f(b, y);
            if fb == 0.0 {
                found.push(b);
            } else if fa != 0.0 && fa.signum() != fb.signum() {
                let (mut lo, mut hi, mut flo) = (a, b, fa);
                while hi - lo > BISECTION_TOL {
                    let mid = 0.5 * (lo + hi);
                    let fm = f(mid, y);
                    if fm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if fm.signum() == flo.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                found.push(0.5 * (lo + hi));
            }
            fa = fb;
        }
        if found.is_empty() {
            unbracketed.push(y);
        }
        for xs in found {
            let s = fd_step(xs);
            let d = (f(xs + s, y) - f(xs - s, y)) / (2.0 * s);
            roots.push((y, xs, d));
            if !(d.abs() > HYPERBOLICITY_TOL) {
                violations.push((xs, y));
            }
        }
    }
    HyperbolicityReport {
        ok: violations.is_empty(),
        roots,
        violations,
        unbracketed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub max_abs_f: f64,
    pub max_abs_g: f64,
    pub max_grad_f: f64,
    pub max_grad_g: f64,
}

/// Default cap on |f|, |g| and their gradients over the computational grid.
pub const DRIFT_CAP: f64 = 1e8;

pub fn validate_model(model: &SdeModel, disc: &Discretization) -> Result<ValidationReport> {
    validate_model_with_cap(model, disc, DRIFT_CAP)
}

pub fn validate_model_with_cap(model: &SdeModel, disc: &Discretization, cap: f64) -> Result<ValidationReport> {
    let bad = |field: &str, reason: String| {
        Err(Error::InvalidModel {
            field: field.into(),
            reason,
        })
    };
    if !(model.sigma1 > 0.0 && model.sigma1.is_finite()) {
        return bad("sigma1", format!("must be positive, got {}", model.sigma1));
    }
    if !(model.sigma2 > 0.0 && model.sigma2.is_finite()) {
        return bad("sigma2", format!("must be positive, got {}", model.sigma2));
    }
    if !(model.epsilon > 0.0 && model.epsilon < 1.0) {
        return bad("epsilon", format!("must lie in (0, 1), got {}", model.epsilon));
    }
    if !(model.r > 0.0 && model.r.is_finite()) {
        return bad("R", format!("must be positive, got {}", model.r));
    }
    disc.check()?;
    let xs = disc.x_grid();
    let ys = disc.y_full(model.r);
    let mut rep = ValidationReport {
        max_abs_f: 0.0,
        max_abs_g: 0.0,
        max_grad_f: 0.0,
        max_grad_g: 0.0,
    };
    for (name, drift) in [("f", &model.f), ("g", &model.g)] {
        let mut max_v: f64 = 0.0;
        let mut max_d: f64 = 0.0;
        for &y in &ys {
            for &x in &xs {
                let v = drift.eval(x, y);
                if !v.is_finite() {
                    return bad(name, format!("non-finite value {v} at node (x = {x}, y = {y})"));
                }
                let sx = fd_step(x);
                let sy = fd_step(y);
                let dx = (drift.eval(x + sx, y) - drift.eval(x - sx, y)) / (2.0 * sx);
                let dy = (drift.eval(x, y + sy) - drift.eval(x, y - sy)) / (2.0 * sy);
                if !dx.is_finite() || !dy.is_finite() {
                    return bad(name, format!("non-finite gradient at node (x = {x}, y = {y})"));
                }
                max_v = max_v.max(v.abs());
                max_d = max_d.max(dx.abs()).max(dy.abs());
            }
        }
        if max_v > cap || max_d > cap {
            return bad(name, format!("magnitude {} exceeds cap {cap}", max_v.max(max_d)));
        }
        if name == "f" {
            rep.max_abs_f = max_v;
            rep.max_grad_f = max_d;
        } else {
            rep.max_abs_g = max_v;
            rep.max_grad_g = max_d;
        }
    }
    if model.kind == ModelKind::OrnsteinUhlenbeck && model.affine_fast_drift().is_none() {
        return bad("kind", "OrnsteinUhlenbeck requires f = (a(y) - x)/tau with affine a".into());
    }
    Ok(rep)
}
