//! Study dispatch and output writing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stratbl::analytic_norms::{self, NormParams};
use stratbl::linear_bl::{self, BLState};
use stratbl::linear_bulk::{self, recipes, BulkSolver, BulkState};
use stratbl::nonlinear_bl::{self, BLForcing, PicardSettings};
use stratbl::GridSpec;

use crate::config::{RunConfig, Study};
use crate::snapshot::{load_snapshot, save_snapshot, Snapshot};
use crate::CliError;

/// Environment variable prefixed to `output.dir`.
pub const OUTPUT_ROOT_VAR: &str = "STRATBL_OUTPUT_ROOT";

#[derive(Serialize)]
struct FileDoc {
    description: String,
    columns: Vec<String>,
}

/// Output directory plus the manifest entries of everything written to it.
struct Out {
    dir: PathBuf,
    files: BTreeMap<String, FileDoc>,
    dt: Option<f64>,
}

impl Out {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_default();
        let dir = root.join(&cfg.output.dir);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
        Ok(Out { dir, files: BTreeMap::new(), dt: None })
    }

    fn write(&mut self, name: &str, text: &str, description: &str, columns: &[&str]) -> Result<(), CliError> {
        let p = self.dir.join(name);
        std::fs::write(&p, text).map_err(|e| CliError::Io(format!("writing {}: {e}", p.display())))?;
        self.files.insert(
            name.to_string(),
            FileDoc { description: description.into(), columns: columns.iter().map(|c| c.to_string()).collect() },
        );
        Ok(())
    }

    fn csv(&mut self, name: &str, description: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let mut text = columns.iter().map(|c| c.split(':').next().unwrap_or(c).trim()).collect::<Vec<_>>().join(",");
        text.push('\n');
        for r in rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(text, "{}", cells.join(","));
        }
        self.write(name, &text, description, columns)
    }

    fn json(&mut self, name: &str, description: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write(name, &text, description, &[])
    }

    fn snapshot(&mut self, name: &str, snap: &Snapshot) -> Result<(), CliError> {
        save_snapshot(snap, &self.dir.join(name))?;
        self.files.insert(
            name.to_string(),
            FileDoc { description: "binary snapshot".into(), columns: Vec::new() },
        );
        Ok(())
    }

    fn manifest(&mut self, cfg: &RunConfig) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            program: &'static str,
            version: &'static str,
            study: Study,
            grid: &'a GridSpec,
            dt: Option<f64>,
            config: &'a RunConfig,
            files: &'a BTreeMap<String, FileDoc>,
        }
        let files = std::mem::take(&mut self.files);
        let m = Manifest {
            program: "stratbl",
            version: env!("CARGO_PKG_VERSION"),
            study: cfg.study,
            grid: &cfg.grid,
            dt: self.dt,
            config: cfg,
            files: &files,
        };
        self.json("manifest.json", "run manifest", &m)
    }
}

/// Runs the configured study and returns the output directory.
pub fn run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let mut out = Out::new(cfg)?;
    let res = match cfg.study {
        Study::LinearBulk => linear_bulk_study(cfg, &mut out),
        Study::LinearBl => layer_study(cfg, &mut out, LayerKind::HalfLine),
        Study::IotaApprox => layer_study(cfg, &mut out, LayerKind::Finite),
        Study::NonlinearBl => layer_study(cfg, &mut out, LayerKind::Frozen),
        Study::Norms => norms_study(cfg, &mut out),
        Study::Inequalities => inequalities_study(cfg, &mut out),
        Study::ScalingSweep => scaling_study(cfg, &mut out),
        Study::IotaSweep => iota_sweep_study(cfg, &mut out),
        Study::Picard => picard_study(cfg, &mut out),
    };
    // The manifest records whatever was written, also on failure.
    out.manifest(cfg)?;
    res.map(|_| out.dir)
}

/// Number of steps from `t0` to `t_end`, refusing a horizon that is not a
/// multiple of `dt`.
fn step_count(t0: f64, t_end: f64, dt: f64) -> Result<usize, CliError> {
    let span = t_end - t0;
    if !(span > 0.0) {
        return Err(CliError::Config(format!("physics.t_end = {t_end} must exceed the start time {t0}")));
    }
    let n = (span / dt).round();
    if n < 1.0 || (n * dt - span).abs() > 1e-9 * span.max(dt) {
        return Err(CliError::Config(format!("horizon {span} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

/// Largest step not above `cap` that divides `span`.
fn dividing_dt(span: f64, cap: f64) -> f64 {
    span / (span / cap).ceil()
}

fn bulk_init(cfg: &RunConfig, solver: &BulkSolver) -> Result<BulkState, CliError> {
    let (eps, a) = (cfg.physics.eps, cfg.init.amplitude);
    let s = match cfg.init.recipe.as_str() {
        "zero" => BulkState::zeros(&cfg.grid, eps),
        "generic" => recipes::generic(solver, eps, a)?,
        "wall-forced" => recipes::wall_forced(solver, eps, a)?,
        "invariant" => recipes::invariant(solver, eps, a)?,
        "constant-theta" => recipes::constant_theta(solver, eps, a)?,
        "snapshot" => match load_snapshot(Path::new(cfg.init.snapshot.as_deref().unwrap_or_default()), &cfg.grid)? {
            Snapshot::Bulk(mut s) => {
                s.eps = eps;
                s
            }
            Snapshot::Layer(_) => return Err(CliError::Config("init.snapshot holds a layer state, not a bulk state".into())),
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown bulk recipe `{other}` (zero, generic, wall-forced, invariant, constant-theta, snapshot)"
            )))
        }
    };
    Ok(s)
}

fn layer_init(cfg: &RunConfig, grid: &GridSpec) -> Result<BLState, CliError> {
    let (a, beta, k) = (cfg.init.amplitude, cfg.init.beta, cfg.init.mode);
    let mut s = BLState::zeros(grid);
    match cfg.init.recipe.as_str() {
        "zero" => {}
        "decaying" => {
            let th = linear_bl::recipes::decaying(beta);
            s.add_cosine_mode(k, |_| 0.0, |_| 0.0, move |e| a * th(e))?;
        }
        "compatible" => {
            let th = linear_bl::recipes::decaying(beta);
            let v = linear_bl::recipes::compatible(beta);
            s.add_cosine_mode(k, move |e| a * v(e), |_| 0.0, move |e| a * th(e))?;
        }
        "snapshot" => match load_snapshot(Path::new(cfg.init.snapshot.as_deref().unwrap_or_default()), grid)? {
            Snapshot::Layer(l) => s = l,
            Snapshot::Bulk(_) => return Err(CliError::Config("init.snapshot holds a bulk state, not a layer state".into())),
        },
        other => {
            return Err(CliError::Config(format!("unknown layer recipe `{other}` (zero, decaying, compatible, snapshot)")))
        }
    }
    Ok(s)
}

fn snap_name(step: usize) -> String {
    format!("snap_{step:06}.bin")
}

fn linear_bulk_study(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let mut solver = BulkSolver::new(&cfg.grid)?;
    let init = bulk_init(cfg, &solver)?;
    let t0 = init.t;
    let dt = cfg.fixed_dt().unwrap_or((cfg.physics.t_end - t0) / 100.0);
    let steps = step_count(t0, cfg.physics.t_end, dt)?;
    out.dt = Some(dt);
    let base = (t0 / dt).round() as usize;
    let stride = cfg.output.stride;
    let mut energy_rows = Vec::new();
    let mut trace_rows = Vec::new();
    let mut s = init.clone();
    for i in 0..=steps {
        if i > 0 {
            s = solver.step(&s, dt)?;
        }
        if i % stride == 0 || i == steps {
            energy_rows.push(vec![s.t, solver.energy(&s), solver.divergence_residual(&s), solver.wall_normal_velocity(&s)]);
            let rep = solver.boundary_trace_diagnostics(&s);
            let predicted = solver.predicted_traces(&init, s.t - t0);
            trace_rows.push(vec![
                s.t,
                linear_bulk::sup_physical(&[&rep.dzz_w_bottom]),
                linear_bulk::sup_physical(&[&rep.dzz_theta_bottom]),
                linear_bulk::sup_physical(&[&rep.dz_v_bottom[0], &rep.dz_v_bottom[1]]),
                linear_bulk::sup_physical(&[&rep.dzz_w_top]),
                linear_bulk::sup_physical(&[&rep.dzz_theta_top]),
                linear_bulk::sup_physical(&[&rep.dz_v_top[0], &rep.dz_v_top[1]]),
                rep.max_diff(&predicted),
            ]);
            if cfg.output.snapshots {
                out.snapshot(&snap_name(base + i), &Snapshot::Bulk(s.clone()))?;
            }
        }
    }
    out.csv(
        "energy.csv",
        "linear bulk energy and constraint residuals",
        &["t", "energy: ∫(|v|²+w²+θ²) by LGL quadrature", "div_residual: max |div u|", "wall_w: max |w| at the walls"],
        &energy_rows,
    )?;
    out.csv(
        "traces.csv",
        "wall traces, physical sup over the torus",
        &[
            "t",
            "dzz_w_bottom",
            "dzz_theta_bottom",
            "dz_v_bottom: Euclidean length",
            "dzz_w_top",
            "dzz_theta_top",
            "dz_v_top: Euclidean length",
            "trace_error: max coefficient gap to the closed-form traces of the initial data",
        ],
        &trace_rows,
    )?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum LayerKind {
    HalfLine,
    Finite,
    Frozen,
}

fn layer_dt(cfg: &RunConfig, span: f64) -> f64 {
    cfg.fixed_dt().unwrap_or_else(|| dividing_dt(span, linear_bl::auto_dt(&cfg.grid)))
}

fn layer_study(cfg: &RunConfig, out: &mut Out, kind: LayerKind) -> Result<(), CliError> {
    let mut init = layer_init(cfg, &cfg.grid)?;
    if kind != LayerKind::HalfLine {
        init = linear_bl::project_compat(&init);
    }
    let t0 = init.t;
    let dt = layer_dt(cfg, cfg.physics.t_end - t0);
    let steps = step_count(t0, cfg.physics.t_end, dt)?;
    out.dt = Some(dt);
    let base = (t0 / dt).round() as usize;
    let params = NormParams { d: cfg.norms.d, r: cfg.norms.r, tau: cfg.norms.tau, m: cfg.norms.m };
    params.validate()?;
    let vo = init.clone();
    let forcing = BLForcing::zero();
    let stride = cfg.output.stride;
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    let mut s = init;
    for i in 0..=steps {
        if i > 0 {
            s = match kind {
                LayerKind::HalfLine => linear_bl::step_linear_bl(&s, dt),
                LayerKind::Finite => linear_bl::step_iota_linear(&s, dt)?,
                LayerKind::Frozen => nonlinear_bl::frozen_step(&s, &vo, &forcing, dt)?,
            };
        }
        if kind == LayerKind::HalfLine {
            samples.push(linear_bl::identity_sample(&s, 1)?);
        }
        if i % stride == 0 || i == steps {
            let x = analytic_norms::x_norm(&s, &params);
            rows.push(vec![
                s.t,
                linear_bl::energy(&s),
                linear_bl::compatibility_residual(&s),
                s.max_abs(),
                x.value,
                f64::from(u8::from(linear_bl::decay_flag(&s))),
            ]);
            if cfg.output.snapshots {
                out.snapshot(&snap_name(base + i), &Snapshot::Layer(s.clone()))?;
            }
        }
    }
    out.csv(
        "energy.csv",
        "layer energy, compatibility and analytic norm",
        &[
            "t",
            "energy: ∫(|v|²+θ²), midpoint rule in η",
            "compat_residual: relative |∫ div_h v dη|",
            "max_abs: largest coefficient",
            "x_norm: truncated X_τ norm at norms.tau",
            "decay_flag: 1 when the far-end values exceed the decay threshold",
        ],
        &rows,
    )?;
    if kind == LayerKind::HalfLine {
        if samples.len() >= 5 {
            let rep = linear_bl::identity_from_samples(&samples, 1)?;
            out.json("identity.json", "k = 1 boundary-term identity along the run", &rep)?;
        } else {
            out.json(
                "identity.json",
                "k = 1 boundary-term identity along the run",
                &serde_json::json!({"skipped": "fewer than 5 time samples"}),
            )?;
        }
    }
    Ok(())
}

fn norms_study(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let n = &cfg.norms;
    let params = NormParams { d: n.d, r: n.r, tau: n.tau, m: n.m };
    params.validate()?;
    let s = linear_bl::project_compat(&layer_init(cfg, &cfg.grid)?);
    let x = analytic_norms::x_norm(&s, &params);
    let y = analytic_norms::y_norm(&s, &params);
    let semi = analytic_norms::state_semi_norms(&s, n.d, n.m);
    let m_data = analytic_norms::x_norm(&s, &NormParams { tau: n.tau0, ..params.clone() }).value;
    let dt = cfg.fixed_dt().unwrap_or(cfg.physics.t_end / 100.0);
    out.dt = Some(dt);
    let sched = analytic_norms::tau_schedule(n.tau0, n.c_d, m_data, n.d, cfg.physics.t_end, dt)?;
    #[derive(Serialize)]
    struct Report<'a> {
        params: &'a NormParams,
        x_norm: analytic_norms::NormValue,
        y_norm: analytic_norms::NormValue,
        semi_norms: Vec<f64>,
        m_data: f64,
        tau0: f64,
        c_d: f64,
        t_max: f64,
        truncated: bool,
    }
    out.json(
        "norms.json",
        "analytic norms of the initial layer and the radius schedule summary",
        &Report {
            params: &params,
            x_norm: x,
            y_norm: y,
            semi_norms: semi,
            m_data,
            tau0: n.tau0,
            c_d: n.c_d,
            t_max: sched.t_max,
            truncated: sched.truncated,
        },
    )?;
    let rows: Vec<Vec<f64>> = sched.samples.iter().enumerate().map(|(i, tau)| vec![i as f64 * dt, *tau]).collect();
    out.csv("tau.csv", "analyticity radius schedule", &["t", "tau"], &rows)
}

fn inequalities_study(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let rep = analytic_norms::verify_inequalities(cfg.inequalities.m_max, cfg.inequalities.r)?;
    out.json("inequalities.json", "exhaustive scan of the four commutator inequalities", &rep)
}

fn scaling_study(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let mut solver = BulkSolver::new(&cfg.grid)?;
    let init = bulk_init(cfg, &solver)?;
    let rep = linear_bulk::scaling_study(&mut solver, &init, &cfg.physics.eps_list, cfg.physics.t_end)?;
    out.json("scaling.json", "log-log exponents of the bottom traces against eps", &rep)?;
    let rows: Vec<Vec<f64>> = rep
        .eps
        .iter()
        .enumerate()
        .map(|(i, e)| vec![*e, rep.fits[0].values[i], rep.fits[1].values[i], rep.fits[2].values[i]])
        .collect();
    out.csv(
        "scaling.csv",
        "bottom-wall trace sups at t = physics.t_end",
        &["eps", "dzz_w", "dzz_theta", "dz_v"],
        &rows,
    )
}

fn iota_sweep_study(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let sw = &cfg.sweep;
    let deepest = sw.l_list.iter().cloned().fold(0.0, f64::max);
    let dt = cfg.fixed_dt().unwrap_or_else(|| {
        let g = GridSpec { l_eta: deepest, ..cfg.grid.clone() };
        dividing_dt(cfg.physics.t_end, linear_bl::auto_dt(&g))
    });
    out.dt = Some(dt);
    let rep = linear_bl::iota_sweep(&cfg.grid, sw.h, &sw.l_list, cfg.physics.t_end, dt, |g| {
        layer_init(cfg, g).map_err(|e| match e {
            CliError::Solver(s) => s,
            other => stratbl::Error::Config(other.to_string()),
        })
    })?;
    out.json("iota_sweep.json", "finite-depth solutions compared across depths", &rep)?;
    let rows: Vec<Vec<f64>> = rep
        .lengths
        .iter()
        .enumerate()
        .map(|(i, l)| vec![*l, rep.gaps.get(i).copied().unwrap_or(f64::NAN), rep.half_line_gaps[i]])
        .collect();
    out.csv(
        "iota_sweep.csv",
        "depth sweep at t = physics.t_end",
        &["l_eta", "gap: L2 distance to the next depth on [0, l_eta], NaN for the last", "half_line_gap"],
        &rows,
    )
}

fn picard_study(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let n = &cfg.norms;
    let init = layer_init(cfg, &cfg.grid)?;
    let dt = layer_dt(cfg, cfg.physics.t_end);
    step_count(0.0, cfg.physics.t_end, dt)?;
    out.dt = Some(dt);
    let settings = PicardSettings {
        t_end: cfg.physics.t_end,
        dt,
        tol: n.tol,
        max_iter: n.max_iter,
        tau0: n.tau0,
        c_d: n.c_d,
        norms: NormParams { d: n.d, r: n.r, tau: n.tau0, m: n.m },
    };
    let forcing = BLForcing::zero();
    let (traj, report) = match nonlinear_bl::picard_fixed_point(&init, &forcing, &settings) {
        Ok(v) => v,
        Err(stratbl::Error::Divergence(rep)) => {
            out.json("contraction.json", "Picard contraction report", &rep)?;
            return Err(CliError::Solver(stratbl::Error::Divergence(rep)));
        }
        Err(e) => return Err(e.into()),
    };
    out.json("contraction.json", "Picard contraction report", &report)?;
    let stride = cfg.output.stride;
    let mut rows = Vec::new();
    for (i, s) in traj.states.iter().enumerate() {
        if i % stride == 0 || i + 1 == traj.states.len() {
            rows.push(vec![s.t, linear_bl::energy(s), linear_bl::compatibility_residual(s)]);
            if cfg.output.snapshots {
                out.snapshot(&snap_name(i), &Snapshot::Layer(s.clone()))?;
            }
        }
    }
    out.csv(
        "energy.csv",
        "converged nonlinear layer",
        &["t", "energy: ∫(|v|²+θ²), midpoint rule in η", "compat_residual: relative |∫ div_h v dη|"],
        &rows,
    )?;
    if traj.states.len() >= 5 {
        let res = nonlinear_bl::nonlinear_residual(&traj, &forcing)?;
        let rows: Vec<Vec<f64>> =
            (0..res.times.len()).map(|i| vec![res.times[i], res.momentum[i], res.buoyancy[i]]).collect();
        out.csv(
            "residual.csv",
            "full nonlinear residual of the converged trajectory",
            &["t", "momentum: L2 norm of the momentum residual", "buoyancy: L2 norm of the buoyancy residual"],
            &rows,
        )?;
    }
    Ok(())
}
