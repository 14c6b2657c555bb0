//! Run configuration: a TOML file with the sections `[model]`, `[disc]`,
//! `[splitting]`, `[manifold]`, `[sweep]` and `[acceptance]`. Every key is
//! optional and falls back to the fixture defaults.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eigenbasis::{hermite_basis, numeric_basis, EigenBasis};
use crate::error::{Error, Result};
use crate::model::{validate_model, Discretization, Drift, ModelKind, SdeModel};
use crate::reconstruct::DensityField;
use crate::slowmanifold::LpOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub disc: DiscSection,
    pub splitting: SplittingSection,
    pub manifold: ManifoldSection,
    pub sweep: SweepSection,
    pub acceptance: AcceptanceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Fast drift: `ou_linear`, `zero` or an expression in x and y.
    pub f: String,
    pub g: String,
    pub sigma1: f64,
    pub sigma2: f64,
    pub epsilon: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "J")]
    pub j: usize,
    /// `auto`, `hermite` or `numeric`.
    pub basis: String,
    /// Initial density: first sine mode in y times N(x0_mean, x0_var) in x.
    pub x0_mean: f64,
    pub x0_var: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            f: "ou_linear".into(),
            g: "ou_linear".into(),
            sigma1: SQRT_2,
            sigma2: SQRT_2,
            epsilon: 1e-2,
            r: PI / 2.0,
            j: 2,
            basis: "auto".into(),
            x0_mean: 0.5,
            x0_var: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscSection {
    #[serde(rename = "X")]
    pub x_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub dt: Option<f64>,
    pub quad_nodes: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub snapshots: usize,
}

impl Default for DiscSection {
    fn default() -> Self {
        let d = Discretization::default();
        DiscSection {
            x_max: d.x_max,
            nx: d.nx,
            ny: d.ny,
            dt: None,
            quad_nodes: d.quad_nodes,
            t_end: 0.5,
            snapshots: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SplittingSection {
    /// Splitting parameter; defaults to epsilon.
    pub zeta: Option<f64>,
    /// Divide lambda_min/zeta by the y diffusion coefficient when choosing k0.
    pub include_diffusion_prefactor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldSection {
    pub lp_tol: f64,
    pub max_iter: usize,
    pub max_doublings: usize,
    /// Fast-component perturbation for the attraction test.
    pub offset_scale: f64,
    /// Horizon of the invariance and attraction runs.
    pub t_end: f64,
}

impl Default for ManifoldSection {
    fn default() -> Self {
        let o = LpOptions::default();
        ManifoldSection {
            lp_tol: o.lp_tol,
            max_iter: o.max_iter,
            max_doublings: o.max_doublings,
            offset_scale: 0.1,
            t_end: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub eps_list: Vec<f64>,
    /// Truncations compared against `j_ref` for galerkin_error.
    pub j_list: Vec<usize>,
    pub j_ref: usize,
    /// Truncation used by fast_residual and slow_error.
    pub j_rate: usize,
    /// y resolution of the fast_residual and slow_error runs.
    pub ny_rate: usize,
    /// Truncation and y resolution of manifold_distance.
    pub j_manifold: usize,
    pub ny_manifold: usize,
    /// Subset of fast_residual, slow_error, manifold_distance, galerkin_error, gap_ok.
    pub quantities: Vec<String>,
    /// Largest J scanned when locating the gap boundary.
    pub gap_j_cap: usize,
    /// eps grid of the gap-boundary fit (the boundary is cheap, so it is wider).
    pub gap_eps_list: Vec<f64>,
    pub seed: u64,
    pub n_paths: usize,
    /// Monte Carlo step; defaults to epsilon/10.
    pub dt_sde: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            eps_list: vec![1e-2, 10f64.powf(-2.5), 1e-3, 10f64.powf(-3.5)],
            j_list: vec![1, 2, 4, 8],
            j_ref: 12,
            j_rate: 6,
            ny_rate: 511,
            j_manifold: 2,
            ny_manifold: 63,
            quantities: ["fast_residual", "slow_error", "manifold_distance", "galerkin_error", "gap_ok"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            gap_j_cap: 100_000,
            gap_eps_list: (2..=8).map(|k| 10f64.powi(-k)).collect(),
            seed: 42,
            n_paths: 200_000,
            dt_sde: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceSection {
    pub coupling_tol: f64,
    pub eigen_tol: f64,
    pub ortho_tol: f64,
    pub projection_tol: f64,
    pub fast_projection_tol: f64,
    pub decay_rel_tol: f64,
    pub slow_slope: f64,
    pub slow_slope_tol: f64,
    pub galerkin_floor_factor: f64,
    pub gap_slope: f64,
    pub gap_slope_tol: f64,
    pub manifold_slope: f64,
    pub manifold_slope_tol: f64,
    pub invariance_factor: f64,
    pub attraction_factor: f64,
    pub mc_factor: f64,
    pub oracle_factor: f64,
    /// Points below this multiple of the grid self-error are excluded from fits.
    pub saturation_factor: f64,
}

impl Default for AcceptanceSection {
    fn default() -> Self {
        AcceptanceSection {
            coupling_tol: 1e-8,
            eigen_tol: 1e-3,
            ortho_tol: 1e-6,
            projection_tol: 1e-12,
            fast_projection_tol: 1e-6,
            decay_rel_tol: 0.05,
            slow_slope: 0.5,
            slow_slope_tol: 0.15,
            galerkin_floor_factor: 10.0,
            gap_slope: -1.0 / 6.0,
            gap_slope_tol: 0.05,
            manifold_slope: 1.0,
            manifold_slope_tol: 0.15,
            invariance_factor: 10.0,
            attraction_factor: 0.5,
            mc_factor: 3.0,
            oracle_factor: 5.0,
            saturation_factor: 10.0,
        }
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

impl Config {
    pub fn parse(src: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(src).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of(src, s.start)).unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config { line: 0, msg });
        if !["auto", "hermite", "numeric"].contains(&self.model.basis.as_str()) {
            return bad(format!("model.basis must be auto, hermite or numeric, got `{}`", self.model.basis));
        }
        if !(self.model.x0_var > 0.0) {
            return bad("model.x0_var must be positive".into());
        }
        const KNOWN: [&str; 5] = ["fast_residual", "slow_error", "manifold_distance", "galerkin_error", "gap_ok"];
        if let Some(q) = self.sweep.quantities.iter().find(|q| !KNOWN.contains(&q.as_str())) {
            return bad(format!("unknown sweep quantity `{q}`"));
        }
        if let Some(z) = self.splitting.zeta {
            if !(z > 0.0) {
                return bad("splitting.zeta must be positive".into());
            }
        }
        if !(self.disc.t_end > 0.0) {
            return bad("disc.T must be positive".into());
        }
        Ok(())
    }

    pub fn discretization(&self) -> Discretization {
        Discretization {
            x_max: self.disc.x_max,
            nx: self.disc.nx,
            ny: self.disc.ny,
            dt: self.disc.dt,
            quad_nodes: self.disc.quad_nodes,
        }
    }

    /// Builds and validates the model at the configured epsilon.
    pub fn model(&self) -> Result<SdeModel> {
        let m = &self.model;
        let mut model = SdeModel {
            f: Drift::parse("f", &m.f)?,
            g: Drift::parse("g", &m.g)?,
            sigma1: m.sigma1,
            sigma2: m.sigma2,
            epsilon: m.epsilon,
            r: m.r,
            kind: ModelKind::GeneralAdditive,
        };
        if m.basis != "numeric" && model.affine_fast_drift().is_some() {
            model.kind = ModelKind::OrnsteinUhlenbeck;
        }
        if m.basis == "hermite" && model.kind != ModelKind::OrnsteinUhlenbeck {
            return Err(Error::UnsupportedModel(format!("Hermite basis needs an affine fast drift, got `{}`", m.f)));
        }
        validate_model(&model, &self.discretization())?;
        Ok(model)
    }

    /// Basis with `n_modes() >= j_max + 2`, as the coupling tensors need.
    pub fn basis(&self, model: &SdeModel, j_max: usize) -> Result<EigenBasis> {
        match model.kind {
            ModelKind::OrnsteinUhlenbeck => hermite_basis(model, j_max + 1),
            ModelKind::GeneralAdditive => numeric_basis(model, &self.discretization(), j_max + 1),
        }
    }

    pub fn zeta(&self) -> f64 {
        self.splitting.zeta.unwrap_or(self.model.epsilon)
    }

    pub fn lp_options(&self) -> LpOptions {
        LpOptions {
            lp_tol: self.manifold.lp_tol,
            max_iter: self.manifold.max_iter,
            dt: self.disc.dt,
            max_doublings: self.manifold.max_doublings,
        }
    }

    pub fn dt_sde(&self) -> f64 {
        self.sweep.dt_sde.unwrap_or(self.model.epsilon / 10.0)
    }

    /// Unit-mass initial density on the grid of `disc`.
    pub fn initial_density(&self, disc: &Discretization) -> DensityField {
        let (mu, var, r) = (self.model.x0_mean, self.model.x0_var, self.model.r);
        let mut rho = DensityField::from_fn(disc.x_grid(), disc.y_full(r), |x, y| {
            (PI * (y + r) / (2.0 * r)).sin().max(0.0) * (-(x - mu).powi(2) / (2.0 * var)).exp()
        });
        let m = rho.mass();
        rho.values.iter_mut().flatten().for_each(|v| *v /= m);
        rho
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.model.r, PI / 2.0);
        assert_eq!(c.zeta(), 1e-2);
        let m = c.model().unwrap();
        assert_eq!(m.kind, ModelKind::OrnsteinUhlenbeck);
    }

    #[test]
    fn round_trip_through_toml() {
        let mut c = Config::default();
        c.model.epsilon = 1e-3;
        c.disc.dt = Some(1e-4);
        c.sweep.quantities = vec!["gap_ok".into()];
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn errors_carry_lines() {
        let src = "[model]\nepsilon = 1e-3\n\n[disc]\nnx = \"many\"\n";
        match Config::parse(src) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Config::parse("[model]\nbogus = 1\n"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(Config::parse("[sweep]\nquantities = [\"x\"]\n"), Err(Error::Config { .. })));
    }

    #[test]
    fn expression_drift_selects_numeric_basis() {
        let c = Config::parse("[model]\nf = \"y - x - x^3\"\n").unwrap();
        assert_eq!(c.model().unwrap().kind, ModelKind::GeneralAdditive);
        let c = Config::parse("[model]\nf = \"y - x - x^3\"\nbasis = \"hermite\"\n").unwrap();
        assert!(matches!(c.model(), Err(Error::UnsupportedModel(_))));
    }

    #[test]
    fn initial_density_has_unit_mass() {
        let c = Config::default();
        let d = c.discretization();
        let rho = c.initial_density(&d);
        assert!((rho.mass() - 1.0).abs() < 1e-12);
        assert!(rho.min_value() >= 0.0);
    }
}
