//! `fpe`: command line front end. Every subcommand reads the shared TOML
//! config and writes headed CSV files into `--out`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fpe_core::coefsys::{integrate, IntegrateOptions, Trajectory};
use fpe_core::config::Config;
use fpe_core::coupling::compute_coupling;
use fpe_core::error::{Error, Result};
use fpe_core::harness::{self, fmt_f, Table};
use fpe_core::reconstruct::{decompose_density, reconstruct_density, DensityField};
use fpe_core::reference::{compare_reduction, euler_maruyama, sample_initial, solve_full_fpe, statistical_error, FullOptions, McOptions};
use fpe_core::slowmanifold::reduced_integrate;
use fpe_core::splitting::{estimate_lipschitz, spectral_gap};
use fpe_core::stationary::stationary_density;

#[derive(Parser)]
#[command(name = "fpe", version, about = "Fast-slow Fokker-Planck reduction toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults apply to missing keys.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, short, global = true, default_value = "out")]
    out: PathBuf,
    /// Override model.epsilon.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Override model.J.
    #[arg(long, global = true)]
    j: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stationary fast density p_s(x; y).
    Stationary {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        y: f64,
    },
    /// Eigenvalues and eigenfunctions of the fast operator at one y.
    Eigenbasis {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        y: f64,
    },
    /// Coupling tensors on the interior y grid.
    Coupling,
    /// Integrate the truncated coefficient system.
    SolveCoef,
    /// Integrate the full two-dimensional equation.
    SolveFull,
    /// Euler-Maruyama ensemble with absorption at |y| = R.
    Mc,
    /// Slow-manifold graph by Lyapunov-Perron iteration.
    Manifold,
    /// Reduced dynamics on the slow manifold from the first slow mode.
    Reduced,
    /// Spectral-gap condition with measured Lipschitz constants.
    CheckGap,
    /// Reconstructed truncated solution against the full solver.
    Compare,
    /// Reconstructed density at T.
    Reconstruct,
    /// Parameter sweep and rate fits for `sweep.quantities`.
    Sweep,
    /// Full pipeline with all acceptance checks; exit 0 iff every check passes.
    ReproducePaperExample {
        /// Coarse grids and fewer paths.
        #[arg(long)]
        fast: bool,
    },
}

fn load(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(e) = c.eps {
        cfg.model.epsilon = e;
    }
    if let Some(j) = c.j {
        cfg.model.j = j;
    }
    cfg.check()?;
    Ok(cfg)
}

fn say(path: PathBuf) {
    println!("wrote {}", path.display());
}

fn density_table(name: &str, d: &DensityField) -> Table {
    let mut t = Table::new(name, &["x", "y", "rho"]);
    for (iy, y) in d.y.iter().enumerate() {
        for (ix, x) in d.x.iter().enumerate() {
            t.push(vec![fmt_f(*x), fmt_f(*y), fmt_f(d.values[iy][ix])]);
        }
    }
    t
}

fn norms_table(name: &str, tr: &Trajectory) -> Table {
    let j = tr.l2.first().map_or(0, |r| r.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..j).map(|k| format!("l2_a{k}")));
    header.extend((0..j).map(|k| format!("h2_a{k}")));
    let mut t = Table {
        name: name.into(),
        header,
        rows: Vec::new(),
    };
    for ((time, l2), h2) in tr.times.iter().zip(&tr.l2).zip(&tr.h2) {
        let mut row = vec![fmt_f(*time)];
        row.extend(l2.iter().chain(h2).map(|v| fmt_f(*v)));
        t.push(row);
    }
    t
}

fn coef_run(cfg: &Config) -> Result<(harness::Setup, Trajectory)> {
    let s = harness::setup(cfg, cfg.model.epsilon, cfg.model.j, cfg.disc.ny)?;
    let rho0 = cfg.initial_density(&s.disc);
    let s0 = decompose_density(&rho0, &s.basis, cfg.model.j);
    let opts = IntegrateOptions {
        dt: cfg.disc.dt,
        norm_stride: 1,
        snapshots: cfg.disc.snapshots,
    };
    let tr = integrate(&s.sys, &s0, cfg.disc.t_end, &opts, |_| {})?;
    Ok((s, tr))
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load(&cli.common)?;
    let out = cli.common.out.clone();
    match cli.cmd {
        Cmd::Stationary { y } => {
            let model = cfg.model()?;
            let ps = stationary_density(&model, y, &cfg.discretization())?;
            let mut t = Table::new("stationary", &["x", "p_s", "potential"]);
            for i in 0..ps.x.len() {
                t.push(vec![fmt_f(ps.x[i]), fmt_f(ps.values[i]), fmt_f(ps.potential[i])]);
            }
            say(t.write(&out)?);
            println!("mass {}", fmt_f(ps.mass()));
        }
        Cmd::Eigenbasis { y } => {
            let model = cfg.model()?;
            let disc = cfg.discretization();
            let b = cfg.basis(&model, cfg.model.j)?;
            let x = disc.x_grid();
            let mut ev = Table::new("eigenvalues", &["j", "lambda"]);
            for (j, l) in b.lambdas.iter().enumerate() {
                ev.push(vec![j.to_string(), fmt_f(*l)]);
            }
            let n = b.n_modes();
            let mut header = vec!["x".to_string()];
            header.extend((0..n).map(|j| format!("phi{j}")));
            header.extend((0..n).map(|j| format!("psi{j}")));
            let mut ef = Table {
                name: "eigenfunctions".into(),
                header,
                rows: Vec::new(),
            };
            let phi: Vec<Vec<f64>> = (0..n).map(|j| b.eval_row(j, y, &x)).collect();
            let psi: Vec<Vec<f64>> = (0..n).map(|j| b.eval_adj_row(j, y, &x)).collect();
            for i in 0..x.len() {
                let mut row = vec![fmt_f(x[i])];
                row.extend(phi.iter().chain(&psi).map(|c| fmt_f(c[i])));
                ef.push(row);
            }
            say(ev.write(&out)?);
            say(ef.write(&out)?);
        }
        Cmd::Coupling => {
            let model = cfg.model()?;
            let disc = cfg.discretization();
            let j = cfg.model.j;
            let b = cfg.basis(&model, j)?;
            let ys = disc.y_interior(model.r);
            let c = compute_coupling(&b, &model, &ys, &disc, j)?;
            let mut t = Table::new("coupling", &["tensor", "k", "j", "y", "value"]);
            t.push(vec!["C0".into(), "0".into(), "0".into(), "".into(), fmt_f(c.c0)]);
            for (n, y) in ys.iter().enumerate() {
                for jj in 0..c.g.len() {
                    t.push(vec!["G".into(), "0".into(), jj.to_string(), fmt_f(*y), fmt_f(c.g[jj][n])]);
                }
                for k in 0..c.gkj.len() {
                    for jj in 0..c.gkj[k].len() {
                        t.push(vec!["Gkj".into(), k.to_string(), jj.to_string(), fmt_f(*y), fmt_f(c.gkj[k][jj][n])]);
                        t.push(vec!["Gtil".into(), k.to_string(), jj.to_string(), fmt_f(*y), fmt_f(c.gtil[k][jj][n])]);
                    }
                }
            }
            say(t.write(&out)?);
        }
        Cmd::SolveCoef => {
            let (s, tr) = coef_run(&cfg)?;
            say(norms_table("coef_norms", &tr).write(&out)?);
            let mut header = vec!["y".to_string()];
            header.extend((0..tr.final_state.a.len()).map(|k| format!("a{k}")));
            let mut fin = Table {
                name: "coef_final".into(),
                header,
                rows: Vec::new(),
            };
            for (i, y) in s.disc.y_interior(s.model.r).iter().enumerate() {
                let mut row = vec![fmt_f(*y)];
                row.extend(tr.final_state.a.iter().map(|a| fmt_f(a[i])));
                fin.push(row);
            }
            say(fin.write(&out)?);
            println!("dt {} steps {}", fmt_f(tr.dt), tr.steps);
        }
        Cmd::SolveFull => {
            let model = cfg.model()?;
            let disc = cfg.discretization();
            let rho0 = cfg.initial_density(&disc);
            let tr = solve_full_fpe(&model, &disc, &rho0, cfg.disc.t_end, &FullOptions { dt: cfg.disc.dt, snapshots: cfg.disc.snapshots })?;
            let mut m = Table::new("full_mass", &["t", "mass"]);
            for (t, v) in tr.times.iter().zip(&tr.mass) {
                m.push(vec![fmt_f(*t), fmt_f(*v)]);
            }
            say(m.write(&out)?);
            say(density_table("full_final", &tr.final_field).write(&out)?);
            println!("dt {} steps {}", fmt_f(tr.dt), tr.steps);
        }
        Cmd::Mc => {
            let model = cfg.model()?;
            let disc = cfg.discretization();
            let rho0 = cfg.initial_density(&disc);
            let n = cfg.sweep.n_paths;
            let starts = sample_initial(&rho0, n, cfg.sweep.seed);
            let ens = euler_maruyama(
                &model,
                &disc,
                &starts,
                &McOptions {
                    n_paths: n,
                    t_end: cfg.disc.t_end,
                    dt_sde: cfg.dt_sde(),
                    seed: cfg.sweep.seed,
                    snapshots: cfg.disc.snapshots,
                },
            );
            let mut s = Table::new("mc_summary", &["t", "absorbed_fraction", "stat_error"]);
            for ((t, a), h) in ens.times.iter().zip(&ens.absorbed).zip(&ens.histograms) {
                s.push(vec![fmt_f(*t), fmt_f(*a as f64 / n as f64), fmt_f(statistical_error(h, n))]);
            }
            say(s.write(&out)?);
            if let Some(h) = ens.histograms.last() {
                say(density_table("mc_histogram", h).write(&out)?);
            }
        }
        Cmd::Manifold => {
            let (s, g) = harness::manifold_point(&cfg, cfg.model.epsilon, cfg.model.j, cfg.disc.ny)?;
            let mut t = Table::new("manifold_graph", &["slow_mode", "component", "y", "value"]);
            let ys = s.disc.y_interior(s.model.r);
            for (k, col) in g.columns.iter().enumerate() {
                for (c, comp) in col.iter().enumerate() {
                    for (i, v) in comp.iter().enumerate() {
                        t.push(vec![(k + 1).to_string(), c.to_string(), fmt_f(ys[i]), fmt_f(*v)]);
                    }
                }
            }
            say(t.write(&out)?);
            let sz = g.size();
            let mut m = Table::new("manifold_size", &["k0", "n_slow", "size_all", "size_a0_fast", "size_fast_modes", "iterations", "contraction"]);
            m.push(vec![
                g.k0.to_string(),
                g.n_slow.to_string(),
                fmt_f(sz.all),
                fmt_f(sz.a0_fast),
                fmt_f(sz.fast_modes),
                g.iterate_count.to_string(),
                fmt_f(g.contraction_estimate),
            ]);
            say(m.write(&out)?);
        }
        Cmd::Reduced => {
            let (s, g) = harness::manifold_point(&cfg, cfg.model.epsilon, cfg.model.j, cfg.disc.ny)?;
            let mut v0 = vec![0.0; g.n_slow];
            v0[0] = 1.0;
            let tr = reduced_integrate(&s.sys, &g, &v0, cfg.disc.t_end)?;
            let mut header = vec!["t".to_string()];
            header.extend((1..=g.n_slow).map(|k| format!("v{k}")));
            let mut t = Table {
                name: "reduced".into(),
                header,
                rows: Vec::new(),
            };
            for (time, v) in tr.times.iter().zip(&tr.slow) {
                let mut row = vec![fmt_f(*time)];
                row.extend(v.iter().map(|x| fmt_f(*x)));
                t.push(row);
            }
            say(t.write(&out)?);
        }
        Cmd::CheckGap => {
            let s = harness::setup(&cfg, cfg.model.epsilon, cfg.model.j, cfg.disc.ny)?;
            let split = harness::split_for(&cfg, &s);
            let lip = estimate_lipschitz(&s.sys);
            let lam = &s.basis.lambdas[1..=cfg.model.j];
            let rep = spectral_gap(s.model.epsilon, cfg.zeta(), &split, lam, &lip.f, lip.g)?;
            let mut t = Table::new("gap", &["L_spec", "simplified", "k0", "NS", "NF", "L_G", "ok", "ok_simplified"]);
            t.push(vec![
                fmt_f(rep.l_spec),
                fmt_f(rep.simplified),
                rep.k0.to_string(),
                fmt_f(rep.ns),
                fmt_f(rep.nf),
                fmt_f(rep.lipschitz_g),
                rep.ok.to_string(),
                rep.ok_simplified.to_string(),
            ]);
            say(t.write(&out)?);
            let mut l = Table::new("lipschitz", &["j", "L_F"]);
            for (j, v) in rep.lipschitz_f.iter().enumerate() {
                l.push(vec![(j + 1).to_string(), fmt_f(*v)]);
            }
            say(l.write(&out)?);
            println!("L_spec {} ({})", fmt_f(rep.l_spec), if rep.ok { "gap condition holds" } else { "gap condition fails" });
        }
        Cmd::Compare => {
            let (s, tr) = coef_run(&cfg)?;
            let rho0 = reconstruct_density(&tr.snapshots[0], &s.basis, &s.disc, s.model.r);
            let full = solve_full_fpe(&s.model, &s.disc, &rho0, cfg.disc.t_end, &FullOptions { dt: Some(tr.dt), snapshots: cfg.disc.snapshots })?;
            let rows = compare_reduction(&full.snapshots, &tr, &s.basis, &s.disc, s.model.r)?;
            let mut t = Table::new("comparison", &["t", "L1", "L2", "Linf", "marginal_L2"]);
            for r in &rows {
                t.push(vec![fmt_f(r.t), fmt_f(r.l1), fmt_f(r.l2), fmt_f(r.linf), fmt_f(r.marginal_l2)]);
            }
            say(t.write(&out)?);
        }
        Cmd::Reconstruct => {
            let (s, tr) = coef_run(&cfg)?;
            let d = reconstruct_density(&tr.final_state, &s.basis, &s.disc, s.model.r);
            say(density_table("reconstructed", &d).write(&out)?);
            println!("mass {} min {}", fmt_f(d.mass()), fmt_f(d.min_value()));
        }
        Cmd::Sweep => {
            let rep = harness::run_sweep(&harness::SweepPlan::from_config(&cfg)?)?;
            for t in &rep.tables {
                say(t.write(&out)?);
            }
            for (q, f) in &rep.fits {
                match f {
                    Ok(f) => println!("{q}: slope {} r2 {}", fmt_f(f.slope), fmt_f(f.r2)),
                    Err(e) => println!("{q}: {e}"),
                }
            }
            return Ok(rep.failures.is_empty());
        }
        Cmd::ReproducePaperExample { fast } => {
            let checks = harness::reproduce_example(&cfg, &out, fast)?;
            for c in &checks {
                println!("{c}");
            }
            println!("wrote {}", out.join("summary.csv").display());
            return Ok(checks.iter().all(|c| c.pass));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::InvalidModel { .. } | Error::UnsupportedModel(_) | Error::Io(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
