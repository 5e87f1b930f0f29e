//! Nonlinear boundary layer by repeated solution of the frozen-transport
//! system. One frozen solve is the map `𝔐: v^o ↦ v`; the Picard driver
//! iterates it to the fixed point and measures consecutive distances in the
//! contraction metric `𝔈`.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::Serialize;

use crate::analytic_norms::{contraction_metric_from, state_semi_norms, tau_schedule, x_norm, NormParams, TauSchedule};
use crate::error::{Error, Result};
use crate::grids::{eta_derivative, eta_integral_up, fd4_stencil, fft_slot, trapz, Fft2, GridSpec, SpectralField2D, C64};
use crate::linear_bl::{advance_iota, check_compatibility, project_compat, w_from_v, BLState, I, ZERO};

/// Horizontal velocity trace `V` driving the layer, sampled at uniform times
/// and linearly interpolated in between. No samples means `V ≡ 0`.
#[derive(Clone, Debug, Default)]
pub struct BLForcing {
    pub t0: f64,
    pub dt: f64,
    /// Per sample, the retained-mode coefficients of `(V1, V2)`.
    pub samples: Vec<[Vec<C64>; 2]>,
}

impl BLForcing {
    pub fn zero() -> Self {
        BLForcing::default()
    }

    pub fn from_fields(grid: &GridSpec, t0: f64, dt: f64, fields: &[[SpectralField2D; 2]]) -> Result<Self> {
        if fields.len() > 1 && !(dt > 0.0) {
            return Err(Error::Config("forcing spacing must be positive".into()));
        }
        let modes = grid.retained_modes();
        let mut samples = Vec::with_capacity(fields.len());
        for (i, f) in fields.iter().enumerate() {
            for (c, comp) in f.iter().enumerate() {
                if comp.nx != grid.nx || comp.ny != grid.ny {
                    return Err(Error::Config(format!("forcing sample {i} is not on the {}x{} grid", grid.nx, grid.ny)));
                }
                let defect = comp.hermitian_defect();
                if defect > 1e-12 * comp.l2_norm_sq().sqrt().max(1.0) {
                    return Err(Error::Config(format!(
                        "forcing sample {i}, component {} is not Hermitian (defect {defect:.2e})",
                        c + 1
                    )));
                }
            }
            samples.push([f[0].to_modes(&modes), f[1].to_modes(&modes)]);
        }
        Ok(BLForcing { t0, dt, samples })
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|s| s.iter().all(|c| c.iter().all(|z| *z == ZERO)))
    }

    /// `V(t)`, or `None` when the forcing vanishes identically.
    pub fn at(&self, t: f64) -> Result<Option<[Vec<C64>; 2]>> {
        if self.is_zero() {
            return Ok(None);
        }
        if self.samples.len() == 1 {
            return Ok(Some(self.samples[0].clone()));
        }
        let s = (t - self.t0) / self.dt;
        let last = (self.samples.len() - 1) as f64;
        if s < -1e-9 || s > last + 1e-9 {
            return Err(Error::Config(format!(
                "forcing requested at t = {t} outside [{}, {}]",
                self.t0,
                self.t0 + last * self.dt
            )));
        }
        let s = s.clamp(0.0, last);
        let i = (s.floor() as usize).min(self.samples.len() - 2);
        let f = s - i as f64;
        let lerp = |a: &Vec<C64>, b: &Vec<C64>| -> Vec<C64> { a.iter().zip(b).map(|(x, y)| x * (1.0 - f) + y * f).collect() };
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        Ok(Some([lerp(&a[0], &b[0]), lerp(&a[1], &b[1])]))
    }
}

/// States on a uniform time grid starting at `states[0].t`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<BLState>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &BLState {
        self.states.last().expect("trajectory is never empty")
    }

    /// Cubic Lagrange interpolation through the four nearest samples.
    pub fn at(&self, t: f64) -> Result<BLState> {
        let n = self.states.len();
        let t0 = self.states[0].t;
        let s = (t - t0) / self.dt;
        let last = (n - 1) as f64;
        if s < -1e-9 || s > last + 1e-9 {
            return Err(Error::Config(format!(
                "trajectory requested at t = {t} outside [{t0}, {}]",
                t0 + last * self.dt
            )));
        }
        let s = s.clamp(0.0, last);
        let near = s.round();
        if (s - near).abs() < 1e-9 {
            let mut out = self.states[near as usize].clone();
            out.t = t;
            return Ok(out);
        }
        let width = n.min(4);
        let start = (s.floor() as usize).saturating_sub(1).min(n - width);
        let mut out = BLState::zeros(&self.states[0].grid);
        out.t = t;
        for a in 0..width {
            let mut w = 1.0;
            for b in 0..width {
                if a != b {
                    w *= (s - (start + b) as f64) / (a as f64 - b as f64);
                }
            }
            out = out.add_scaled(&self.states[start + a], w);
        }
        Ok(out)
    }

    fn check_grid(&self, schedule: &TauSchedule) -> Result<()> {
        if self.states.len() != schedule.samples.len() || (self.dt - schedule.dt).abs() > 1e-12 * schedule.dt {
            return Err(Error::Config(format!(
                "trajectory ({} samples, dt {}) does not match the schedule ({} samples, dt {})",
                self.states.len(),
                self.dt,
                schedule.samples.len(),
                schedule.dt
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Transport terms

/// Pseudo-spectral evaluation of
/// `N_v = (V+v^o)·∇_h v + w^o ∂_η v + v·∇_h V`, `N_θ = (V+v^o)·∇_h θ + w^o ∂_η θ`
/// level by level in η, with products truncated to the retained set.
struct Transport {
    fft: Fft2,
    modes: Vec<[i32; 2]>,
    slots: Vec<usize>,
    /// Index of `−k` for each retained `k`.
    mirror: Vec<usize>,
}

impl Transport {
    fn new(grid: &GridSpec) -> Self {
        let modes = grid.retained_modes();
        let slots = modes.iter().map(|k| fft_slot(k[0], grid.nx) * grid.ny + fft_slot(k[1], grid.ny)).collect();
        let mirror = modes
            .iter()
            .map(|k| grid.mode_index([-k[0], -k[1]]).expect("retained set is symmetric"))
            .collect();
        Transport { fft: Fft2::new(grid.nx, grid.ny), modes, slots, mirror }
    }

    fn size(&self) -> usize {
        self.fft.nx * self.fft.ny
    }

    /// Physical values of `a + i b` for real fields with coefficients `a`, `b`.
    fn pack(&self, a: impl Fn(usize) -> C64, b: impl Fn(usize) -> C64, buf: &mut Vec<C64>) {
        buf.clear();
        buf.resize(self.size(), ZERO);
        for (idx, &s) in self.slots.iter().enumerate() {
            buf[s] = a(idx) + I * b(idx);
        }
        self.fft.inverse_in_place(buf);
    }

    /// Splits the transform of `p + i q` into the retained coefficients of
    /// `p` and `q`.
    fn unpack(&self, buf: &mut [C64], p: &mut [C64], q: &mut [C64]) {
        self.fft.forward_in_place(buf);
        for (idx, &s) in self.slots.iter().enumerate() {
            let z = buf[s];
            let zc = buf[self.slots[self.mirror[idx]]].conj();
            p[idx] = (z + zc) * 0.5;
            q[idx] = (z - zc) * C64::new(0.0, -0.5);
        }
    }

    fn rate(&self, s: &BLState, vo: &BLState, wo: &Array2<C64>, forcing: Option<&[Vec<C64>; 2]>) -> BLState {
        let n = s.neta();
        let h = s.h();
        let nm = self.modes.len();
        let mut out = BLState::zeros(&s.grid);
        out.t = s.t;
        // Exact zeros; packed transforms would leave round-off here.
        if s.is_zero() || (forcing.is_none() && vo.is_zero()) {
            return out;
        }
        let deta = |a: &Array2<C64>| -> Array2<C64> {
            let mut d = Array2::zeros(a.raw_dim());
            for (i, row) in a.rows().into_iter().enumerate() {
                for (j, v) in eta_derivative(&row.to_vec(), h).into_iter().enumerate() {
                    d[[i, j]] = v;
                }
            }
            d
        };
        let (ev1, ev2, eth) = (deta(&s.v1), deta(&s.v2), deta(&s.theta));
        let kx: Vec<C64> = self.modes.iter().map(|k| I * k[0] as f64).collect();
        let ky: Vec<C64> = self.modes.iter().map(|k| I * k[1] as f64).collect();
        let size = self.size();
        // η-independent forcing fields.
        let (mut fv, mut fgrad1, mut fgrad2) = (Vec::new(), Vec::new(), Vec::new());
        if let Some(v) = forcing {
            self.pack(|i| v[0][i], |i| v[1][i], &mut fv);
            self.pack(|i| kx[i] * v[0][i], |i| ky[i] * v[0][i], &mut fgrad1);
            self.pack(|i| kx[i] * v[1][i], |i| ky[i] * v[1][i], &mut fgrad2);
        }
        let mut b: Vec<Vec<C64>> = vec![Vec::with_capacity(size); 7];
        let mut c1 = vec![ZERO; size];
        let mut c2 = vec![ZERO; size];
        let (mut p, mut q) = (vec![ZERO; nm], vec![ZERO; nm]);
        for j in 0..n {
            self.pack(|i| vo.v1[[i, j]], |i| vo.v2[[i, j]], &mut b[0]);
            self.pack(|i| wo[[i, j]], |i| kx[i] * s.v1[[i, j]], &mut b[1]);
            self.pack(|i| ky[i] * s.v1[[i, j]], |i| ev1[[i, j]], &mut b[2]);
            self.pack(|i| kx[i] * s.v2[[i, j]], |i| ky[i] * s.v2[[i, j]], &mut b[3]);
            self.pack(|i| ev2[[i, j]], |i| kx[i] * s.theta[[i, j]], &mut b[4]);
            self.pack(|i| ky[i] * s.theta[[i, j]], |i| eth[[i, j]], &mut b[5]);
            if forcing.is_some() {
                self.pack(|i| s.v1[[i, j]], |i| s.v2[[i, j]], &mut b[6]);
            }
            for x in 0..size {
                let (mut a1, mut a2) = (b[0][x].re, b[0][x].im);
                if forcing.is_some() {
                    a1 += fv[x].re;
                    a2 += fv[x].im;
                }
                let w = b[1][x].re;
                let (v1x, v1y, v1e) = (b[1][x].im, b[2][x].re, b[2][x].im);
                let (v2x, v2y, v2e) = (b[3][x].re, b[3][x].im, b[4][x].re);
                let (thx, thy, the) = (b[4][x].im, b[5][x].re, b[5][x].im);
                let mut n1 = a1 * v1x + a2 * v1y + w * v1e;
                let mut n2 = a1 * v2x + a2 * v2y + w * v2e;
                if forcing.is_some() {
                    let (u1, u2) = (b[6][x].re, b[6][x].im);
                    n1 += u1 * fgrad1[x].re + u2 * fgrad1[x].im;
                    n2 += u1 * fgrad2[x].re + u2 * fgrad2[x].im;
                }
                c1[x] = C64::new(n1, n2);
                c2[x] = C64::new(a1 * thx + a2 * thy + w * the, 0.0);
            }
            self.unpack(&mut c1, &mut p, &mut q);
            for i in 0..nm {
                out.v1[[i, j]] = p[i];
                out.v2[[i, j]] = q[i];
            }
            self.unpack(&mut c2, &mut p, &mut q);
            for i in 0..nm {
                out.theta[[i, j]] = p[i];
            }
        }
        out
    }
}

/// Adds `−N` with its pressure part removed: the mean along `k̂` of the
/// velocity rate is exactly what `∇_h π` absorbs.
fn subtract_transport(rate: &mut BLState, n: &BLState) {
    let n = project_compat(n);
    rate.v1 -= &n.v1;
    rate.v2 -= &n.v2;
    rate.theta -= &n.theta;
}

// ---------------------------------------------------------------------------
// Frozen solves

/// One RK4 step of the frozen-transport system with `v^o` held fixed over
/// the step. With `v^o = 0` and `V = 0` this is the finite-depth linear step.
pub fn frozen_step(state: &BLState, vo: &BLState, forcing: &BLForcing, dt: f64) -> Result<BLState> {
    check_compatibility(vo, "frozen transport field")?;
    let tr = Transport::new(&state.grid);
    let wo = w_from_v(vo);
    Ok(advance_iota(state, dt, |t, s, r| {
        let v = forcing.at(t)?;
        subtract_transport(r, &tr.rate(s, vo, &wo, v.as_ref()));
        Ok(())
    })?
    .0)
}

/// Solves the frozen system on the schedule's time grid. `vo = None` stands
/// for the zero transport field; otherwise it is interpolated between its
/// samples.
pub fn solve_frozen(vo: Option<&Trajectory>, forcing: &BLForcing, init: &BLState, schedule: &TauSchedule) -> Result<Trajectory> {
    if schedule.truncated {
        return Err(Error::Horizon(format!(
            "horizon T = {} exceeds T_max = {:.6} where the radius reaches tau0/2 = {}",
            schedule.t_end,
            schedule.t_max,
            schedule.tau0 / 2.0
        )));
    }
    check_compatibility(init, "initial layer")?;
    if let Some(traj) = vo {
        traj.check_grid(schedule)?;
        for s in &traj.states {
            check_compatibility(s, "frozen transport field")?;
        }
    }
    let dt = schedule.dt;
    let steps = schedule.samples.len() - 1;
    let tr = Transport::new(&init.grid);
    let zero_forcing = forcing.is_zero();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(init.clone());
    let mut cache: Option<(f64, BLState, Array2<C64>)> = None;
    for i in 0..steps {
        let cur = &states[i];
        let next = match vo {
            None if zero_forcing => advance_iota(cur, dt, |_, _, _| Ok(()))?.0,
            _ => advance_iota(cur, dt, |t, s, r| {
                let v = forcing.at(t)?;
                let (vo_t, wo_t) = match vo {
                    None => (BLState::zeros(&s.grid), Array2::zeros(s.v1.raw_dim())),
                    Some(traj) => {
                        let hit = matches!(&cache, Some((tc, _, _)) if *tc == t);
                        if !hit {
                            let f = traj.at(t)?;
                            let w = w_from_v(&f);
                            cache = Some((t, f, w));
                        }
                        let (_, f, w) = cache.as_ref().expect("filled above");
                        (f.clone(), w.clone())
                    }
                };
                subtract_transport(r, &tr.rate(s, &vo_t, &wo_t, v.as_ref()));
                Ok(())
            })?
            .0,
        };
        let mut next = next;
        next.t = init.t + (i + 1) as f64 * dt;
        states.push(next);
    }
    Ok(Trajectory { dt, states })
}

// ---------------------------------------------------------------------------
// Picard driver

#[derive(Clone, Debug, Serialize)]
pub struct PicardSettings {
    pub t_end: f64,
    pub dt: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub tau0: f64,
    pub c_d: f64,
    /// `d`, `r` and `M` of the metric; `tau` is replaced by the schedule.
    pub norms: NormParams,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub iterates: usize,
    /// `𝔈(u_{n+1} − u_n)` with `u_0 = 0`.
    pub distances: Vec<f64>,
    /// `max_t ‖u_{n+1} − u_n‖_{L²}` for comparison.
    pub l2_distances: Vec<f64>,
    /// `distances[n+1] / distances[n]`; `None` where the denominator is 0.
    pub ratios: Vec<Option<f64>>,
    pub converged: bool,
    /// Largest full nonlinear residual of the returned trajectory.
    pub final_residual: f64,
    pub m_data: f64,
    pub t_max: f64,
}

fn ratios(d: &[f64]) -> Vec<Option<f64>> {
    d.windows(2).map(|w| if w[0] > 0.0 { Some(w[1] / w[0]) } else { None }).collect()
}

/// Iterates the frozen map from the zero transport field until consecutive
/// iterates are within `tol` in `𝔈`.
pub fn picard_fixed_point(init: &BLState, forcing: &BLForcing, settings: &PicardSettings) -> Result<(Trajectory, ContractionReport)> {
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(Error::Config("picard needs tol > 0 and max_iter >= 1".into()));
    }
    let norms = NormParams { tau: settings.tau0, ..settings.norms.clone() };
    norms.validate()?;
    let init = project_compat(init);
    let m_data = x_norm(&init, &norms).value;
    let schedule = tau_schedule(settings.tau0, settings.c_d, m_data, norms.d, settings.t_end, settings.dt)?;
    let mut report = ContractionReport {
        iterates: 0,
        distances: Vec::new(),
        l2_distances: Vec::new(),
        ratios: Vec::new(),
        converged: false,
        final_residual: 0.0,
        m_data,
        t_max: schedule.t_max,
    };
    let mut prev: Option<Trajectory> = None;
    let mut rising = 0;
    loop {
        let next = solve_frozen(prev.as_ref(), forcing, &init, &schedule)?;
        let mut semi = Vec::with_capacity(next.states.len());
        let mut l2: f64 = 0.0;
        for (i, s) in next.states.iter().enumerate() {
            let diff = match &prev {
                Some(p) => s.sub(&p.states[i]),
                None => s.clone(),
            };
            l2 = l2.max(diff.l2_norm());
            semi.push(state_semi_norms(&diff, norms.d, norms.m));
        }
        let dist = contraction_metric_from(&semi, &schedule, norms.r, norms.m)?;
        report.iterates += 1;
        report.distances.push(dist);
        report.l2_distances.push(l2);
        report.ratios = ratios(&report.distances);
        if dist <= settings.tol {
            report.converged = true;
            report.final_residual = if next.states.len() >= 5 {
                nonlinear_residual(&next, forcing)?.max()
            } else {
                0.0
            };
            return Ok((next, report));
        }
        let k = report.distances.len();
        if k >= 2 && report.distances[k - 1] >= report.distances[k - 2] {
            rising += 1;
        } else {
            rising = 0;
        }
        if rising >= 3 || report.iterates >= settings.max_iter {
            return Err(Error::Divergence(Box::new(report)));
        }
        prev = Some(next);
    }
}

// ---------------------------------------------------------------------------
// Residual of the full system

#[derive(Clone, Debug, Serialize)]
pub struct ResidualSeries {
    pub times: Vec<f64>,
    /// Discrete `L²` norm of the horizontal momentum residual.
    pub momentum: Vec<f64>,
    /// Discrete `L²` norm of the buoyancy residual.
    pub buoyancy: Vec<f64>,
}

impl ResidualSeries {
    pub fn max(&self) -> f64 {
        self.momentum.iter().chain(&self.buoyancy).fold(0.0, |a, b| a.max(*b))
    }
}

fn l2_rows(rows: &[&Array2<C64>], h: f64) -> f64 {
    let mut s = 0.0;
    for a in rows {
        for row in a.rows() {
            let sq: Vec<C64> = row.iter().map(|c| C64::new(c.norm_sqr(), 0.0)).collect();
            s += trapz(&sq, h).re;
        }
    }
    (4.0 * PI * PI * s).sqrt()
}

/// Residual of the self-transported system along a trajectory, with `∂_t`
/// by five-point differences and the pressure recovered from the η-mean.
pub fn nonlinear_residual(traj: &Trajectory, forcing: &BLForcing) -> Result<ResidualSeries> {
    let n_t = traj.states.len();
    if n_t < 5 {
        return Err(Error::Config(format!("time stencil needs at least 5 samples, got {n_t}")));
    }
    let first = &traj.states[0];
    let tr = Transport::new(&first.grid);
    let h = first.h();
    let l = first.grid.l_eta;
    let n = first.neta();
    let mut out = ResidualSeries { times: Vec::new(), momentum: Vec::new(), buoyancy: Vec::new() };
    for (it, s) in traj.states.iter().enumerate() {
        let (start, w) = fd4_stencil(it, n_t);
        let mut r = BLState::zeros(&s.grid);
        for (q, wq) in w.iter().enumerate() {
            r = r.add_scaled(&traj.states[start + q], wq / traj.dt);
        }
        let v = forcing.at(s.t)?;
        let nl = tr.rate(s, s, &w_from_v(s), v.as_ref());
        r.v1 += &nl.v1;
        r.v2 += &nl.v2;
        r.theta += &nl.theta;
        for (idx, k) in s.modes.iter().enumerate() {
            let Some((hx, hy, kn)) = BLState::unit(*k) else { continue };
            let up_th = eta_integral_up(&BLState::row(&s.theta, idx), h);
            let up_f = eta_integral_up(&s.divergence_row(idx), h);
            for j in 0..n {
                r.v1[[idx, j]] += I * k[0] as f64 * up_th[j];
                r.v2[[idx, j]] += I * k[1] as f64 * up_th[j];
                r.theta[[idx, j]] -= up_f[j];
            }
            let along: Vec<C64> = (0..n).map(|j| r.v1[[idx, j]] * hx + r.v2[[idx, j]] * hy).collect();
            // i|k| π̂ cancels the mean along k̂.
            let pi = -trapz(&along, h) / l / (I * kn);
            for j in 0..n {
                r.v1[[idx, j]] += I * k[0] as f64 * pi;
                r.v2[[idx, j]] += I * k[1] as f64 * pi;
            }
        }
        out.times.push(s.t);
        out.momentum.push(l2_rows(&[&r.v1, &r.v2], h));
        out.buoyancy.push(l2_rows(&[&r.theta], h));
    }
    Ok(out)
}
