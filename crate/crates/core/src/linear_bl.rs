//! Linear boundary layer on 𝕋²×(0, L_eta).
//!
//! Two forms share one state type: the half-line system with the tail
//! integral `∫_η^L θ`, and the finite-depth system with an η-independent
//! pressure and impermeable lids at both ends. Both advance by RK4.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grids::{
    derivative_real, eta_derivative, eta_integral_up, trapz, GridSpec, SpectralField2D, C64,
    DECAY_THRESHOLD,
};

pub(crate) const I: C64 = C64::new(0.0, 1.0);
pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);

/// Relative tolerance on `∫ div_h v dη` against the scale `L_eta · max|k||v̂|`.
pub const COMPAT_TOL: f64 = 1e-10;

/// Per-mode η-profiles of the layer. `ŵ` is derived, never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct BLState {
    pub grid: GridSpec,
    pub modes: Vec<[i32; 2]>,
    pub t: f64,
    pub v1: Array2<C64>,
    pub v2: Array2<C64>,
    pub theta: Array2<C64>,
}

impl BLState {
    pub fn zeros(grid: &GridSpec) -> Self {
        let modes = grid.retained_modes();
        let shape = (modes.len(), grid.neta);
        BLState {
            grid: grid.clone(),
            modes,
            t: 0.0,
            v1: Array2::zeros(shape),
            v2: Array2::zeros(shape),
            theta: Array2::zeros(shape),
        }
    }

    pub fn neta(&self) -> usize {
        self.grid.neta
    }

    pub fn h(&self) -> f64 {
        self.grid.eta_step()
    }

    /// Sets mode `k` and its conjugate partner.
    pub fn set_mode(&mut self, k: [i32; 2], v1: &[C64], v2: &[C64], theta: &[C64]) -> Result<()> {
        let n = self.neta();
        if v1.len() != n || v2.len() != n || theta.len() != n {
            return Err(Error::Config(format!("profiles must have Neta = {n} points")));
        }
        let idx = self
            .grid
            .mode_index(k)
            .ok_or_else(|| Error::Config(format!("mode {k:?} is not retained")))?;
        let jdx = self.grid.mode_index([-k[0], -k[1]]).expect("symmetric retained set");
        for j in 0..n {
            self.v1[[idx, j]] = v1[j];
            self.v2[[idx, j]] = v2[j];
            self.theta[[idx, j]] = theta[j];
            if jdx != idx {
                self.v1[[jdx, j]] = v1[j].conj();
                self.v2[[jdx, j]] = v2[j].conj();
                self.theta[[jdx, j]] = theta[j].conj();
            }
        }
        Ok(())
    }

    /// Adds the real field `v1(η) cos(k·x)` etc. to the state.
    pub fn add_cosine_mode(
        &mut self,
        k: [i32; 2],
        v1: impl Fn(f64) -> f64,
        v2: impl Fn(f64) -> f64,
        theta: impl Fn(f64) -> f64,
    ) -> Result<()> {
        let eta = self.grid.eta_nodes();
        let idx = self
            .grid
            .mode_index(k)
            .ok_or_else(|| Error::Config(format!("mode {k:?} is not retained")))?;
        let scale = if k == [0, 0] { 1.0 } else { 0.5 };
        let prof = |f: &dyn Fn(f64) -> f64, a: &Array2<C64>| -> Vec<C64> {
            eta.iter().enumerate().map(|(j, &e)| a[[idx, j]] + C64::new(scale * f(e), 0.0)).collect()
        };
        let (a, b, c) = (prof(&v1, &self.v1), prof(&v2, &self.v2), prof(&theta, &self.theta));
        self.set_mode(k, &a, &b, &c)
    }

    pub fn max_abs(&self) -> f64 {
        [&self.v1, &self.v2, &self.theta]
            .iter()
            .flat_map(|a| a.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        [&self.v1, &self.v2, &self.theta].iter().all(|a| a.iter().all(|c| *c == ZERO))
    }

    /// `self + c·rate` with the time left unchanged.
    pub fn add_scaled(&self, rate: &BLState, c: f64) -> BLState {
        let mut out = self.clone();
        out.v1.scaled_add(C64::new(c, 0.0), &rate.v1);
        out.v2.scaled_add(C64::new(c, 0.0), &rate.v2);
        out.theta.scaled_add(C64::new(c, 0.0), &rate.theta);
        out
    }

    pub fn sub(&self, other: &BLState) -> BLState {
        let mut out = self.clone();
        out.v1 -= &other.v1;
        out.v2 -= &other.v2;
        out.theta -= &other.theta;
        out
    }

    pub fn scale(&self, c: f64) -> BLState {
        let mut out = self.clone();
        out.v1.mapv_inplace(|z| z * c);
        out.v2.mapv_inplace(|z| z * c);
        out.theta.mapv_inplace(|z| z * c);
        out
    }

    /// Discrete `L²(𝕋²×(0,L))` norm with trapezoid weights in η.
    pub fn l2_norm(&self) -> f64 {
        let h = self.h();
        let n = self.neta();
        let mut s = 0.0;
        for a in [&self.v1, &self.v2, &self.theta] {
            for row in a.rows() {
                for (j, c) in row.iter().enumerate() {
                    let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                    s += w * c.norm_sqr();
                }
            }
        }
        (4.0 * PI * PI * h * s).sqrt()
    }

    pub fn row(a: &Array2<C64>, i: usize) -> Vec<C64> {
        a.row(i).to_vec()
    }

    pub(crate) fn unit(k: [i32; 2]) -> Option<(f64, f64, f64)> {
        let q = (k[0] * k[0] + k[1] * k[1]) as f64;
        if q == 0.0 {
            None
        } else {
            let kn = q.sqrt();
            Some((k[0] as f64 / kn, k[1] as f64 / kn, kn))
        }
    }

    /// `i k·v̂` for mode `idx`.
    pub fn divergence_row(&self, idx: usize) -> Vec<C64> {
        let k = self.modes[idx];
        (0..self.neta())
            .map(|j| I * (self.v1[[idx, j]] * k[0] as f64 + self.v2[[idx, j]] * k[1] as f64))
            .collect()
    }
}

/// `ŵ = −∫_0^η div_h v`.
pub fn w_from_v(state: &BLState) -> Array2<C64> {
    let h = state.h();
    let mut out = Array2::zeros((state.modes.len(), state.neta()));
    for idx in 0..state.modes.len() {
        let u = eta_integral_up(&state.divergence_row(idx), h);
        for (j, v) in u.iter().enumerate() {
            out[[idx, j]] = -v;
        }
    }
    out
}

/// Largest `|∫ i k·v̂ dη|` over modes.
pub fn compatibility_residual(state: &BLState) -> f64 {
    let h = state.h();
    (0..state.modes.len())
        .map(|i| trapz(&state.divergence_row(i), h).norm())
        .fold(0.0, f64::max)
}

/// Scale against which compatibility is judged.
pub fn compatibility_scale(state: &BLState) -> f64 {
    let mut m: f64 = 0.0;
    for (idx, k) in state.modes.iter().enumerate() {
        let kn = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
        for j in 0..state.neta() {
            m = m.max(kn * (state.v1[[idx, j]].norm() + state.v2[[idx, j]].norm()));
        }
    }
    m * state.grid.l_eta
}

pub fn check_compatibility(state: &BLState, what: &str) -> Result<()> {
    let r = compatibility_residual(state);
    let s = compatibility_scale(state);
    if r <= COMPAT_TOL * s {
        Ok(())
    } else {
        Err(Error::Compatibility(format!(
            "{what}: |∫ div_h v dη| = {r:.3e} exceeds {:.1e} of scale {s:.3e}",
            COMPAT_TOL
        )))
    }
}

/// Removes from each `v̂_k` the constant profile along `k̂` that carries its
/// divergence integral.
pub fn project_compat(state: &BLState) -> BLState {
    let mut out = state.clone();
    let h = state.h();
    let l = state.grid.l_eta;
    for (idx, k) in state.modes.iter().enumerate() {
        if let Some((hx, hy, _)) = BLState::unit(*k) {
            let along: Vec<C64> = (0..state.neta())
                .map(|j| state.v1[[idx, j]] * hx + state.v2[[idx, j]] * hy)
                .collect();
            let m = trapz(&along, h) / l;
            for j in 0..state.neta() {
                out.v1[[idx, j]] -= m * hx;
                out.v2[[idx, j]] -= m * hy;
            }
        }
    }
    out
}

/// True when some mode fails the far-field decay test.
pub fn decay_flag(state: &BLState) -> bool {
    let n = state.neta();
    (0..state.modes.len()).any(|i| {
        let sup = (0..n)
            .map(|j| state.v1[[i, j]].norm() + state.v2[[i, j]].norm() + state.theta[[i, j]].norm())
            .fold(0.0, f64::max);
        let end = state.v1[[i, n - 1]].norm() + state.v2[[i, n - 1]].norm() + state.theta[[i, n - 1]].norm();
        sup > 0.0 && end > DECAY_THRESHOLD * sup
    })
}

/// `∫ |v|² + θ²` with midpoint-averaged samples; this quadratic form is
/// conserved exactly by the semi-discrete dynamics of both steppers.
pub fn energy(state: &BLState) -> f64 {
    let n = state.neta();
    let mut s = 0.0;
    for a in [&state.v1, &state.v2, &state.theta] {
        for row in a.rows() {
            for j in 0..n - 1 {
                s += ((row[j] + row[j + 1]) * 0.5).norm_sqr();
            }
        }
    }
    4.0 * PI * PI * state.h() * s
}

/// Rate of the half-line system: `v̂_t = i k ∫_η^L θ̂`, `θ̂_t = ∫_0^η i k·v̂`.
pub fn half_line_rhs(state: &BLState) -> BLState {
    let h = state.h();
    let n = state.neta();
    let mut rate = BLState::zeros(&state.grid);
    rate.t = state.t;
    for (idx, k) in state.modes.iter().enumerate() {
        if *k == [0, 0] {
            continue;
        }
        let up_f = eta_integral_up(&state.divergence_row(idx), h);
        let up_th = eta_integral_up(&BLState::row(&state.theta, idx), h);
        let total = up_th[n - 1];
        for j in 0..n {
            let tail = if j == n - 1 { ZERO } else { total - up_th[j] };
            rate.v1[[idx, j]] = I * tail * k[0] as f64;
            rate.v2[[idx, j]] = I * tail * k[1] as f64;
            rate.theta[[idx, j]] = up_f[j];
        }
    }
    rate
}

/// Per-mode `π̂ = −(1/L)∫_0^L ∫_0^η θ̂`.
fn iota_pressure_row(theta: &[C64], h: f64, l: f64) -> C64 {
    -trapz(&eta_integral_up(theta, h), h) / l
}

/// Pressure of the finite-depth system; the mean mode is gauged to zero.
pub fn solve_iota_pressure(state: &BLState) -> SpectralField2D {
    let h = state.h();
    let l = state.grid.l_eta;
    let vals: Vec<C64> = state
        .modes
        .iter()
        .enumerate()
        .map(|(idx, k)| {
            if *k == [0, 0] {
                ZERO
            } else {
                iota_pressure_row(&BLState::row(&state.theta, idx), h, l)
            }
        })
        .collect();
    SpectralField2D::from_modes(state.grid.nx, state.grid.ny, &state.modes, &vals)
}

/// Rate of the finite-depth system: `v̂_t = −i k(π̂ + ∫_0^η θ̂)`,
/// `θ̂_t = ∫_0^η i k·v̂`.
pub fn iota_linear_rhs(state: &BLState) -> BLState {
    let h = state.h();
    let l = state.grid.l_eta;
    let n = state.neta();
    let mut rate = BLState::zeros(&state.grid);
    rate.t = state.t;
    for (idx, k) in state.modes.iter().enumerate() {
        if *k == [0, 0] {
            continue;
        }
        let up_f = eta_integral_up(&state.divergence_row(idx), h);
        let up_th = eta_integral_up(&BLState::row(&state.theta, idx), h);
        let pi = -trapz(&up_th, h) / l;
        for j in 0..n {
            let g = -I * (pi + up_th[j]);
            rate.v1[[idx, j]] = g * k[0] as f64;
            rate.v2[[idx, j]] = g * k[1] as f64;
            rate.theta[[idx, j]] = up_f[j];
        }
    }
    rate
}

/// Classical RK4. Returns the advanced state and the first-stage rate.
pub fn rk4(
    state: &BLState,
    dt: f64,
    mut rhs: impl FnMut(f64, &BLState) -> Result<BLState>,
) -> Result<(BLState, BLState)> {
    let t = state.t;
    let k1 = rhs(t, state)?;
    let k2 = rhs(t + 0.5 * dt, &state.add_scaled(&k1, 0.5 * dt))?;
    let k3 = rhs(t + 0.5 * dt, &state.add_scaled(&k2, 0.5 * dt))?;
    let k4 = rhs(t + dt, &state.add_scaled(&k3, dt))?;
    let mut sum = k1.clone();
    sum.v1 += &(&k2.v1 * C64::new(2.0, 0.0));
    sum.v2 += &(&k2.v2 * C64::new(2.0, 0.0));
    sum.theta += &(&k2.theta * C64::new(2.0, 0.0));
    sum.v1 += &(&k3.v1 * C64::new(2.0, 0.0));
    sum.v2 += &(&k3.v2 * C64::new(2.0, 0.0));
    sum.theta += &(&k3.theta * C64::new(2.0, 0.0));
    sum.v1 += &k4.v1;
    sum.v2 += &k4.v2;
    sum.theta += &k4.theta;
    let mut out = state.add_scaled(&sum, dt / 6.0);
    out.t = t + dt;
    Ok((out, k1))
}

/// One RK4 step of the half-line system. Compatibility is not enforced.
pub fn step_linear_bl(state: &BLState, dt: f64) -> BLState {
    rk4(state, dt, |_, s| Ok(half_line_rhs(s))).expect("half-line rate is infallible").0
}

/// Shared path of the finite-depth steppers: RK4 of the linear rate plus an
/// optional extra rate, followed by compatibility re-projection.
pub(crate) fn advance_iota(
    state: &BLState,
    dt: f64,
    mut extra: impl FnMut(f64, &BLState, &mut BLState) -> Result<()>,
) -> Result<(BLState, BLState)> {
    let (out, k1) = rk4(state, dt, |t, s| {
        let mut r = iota_linear_rhs(s);
        extra(t, s, &mut r)?;
        Ok(r)
    })?;
    Ok((project_compat(&out), k1))
}

/// One RK4 step of the finite-depth system.
pub fn step_iota_linear(state: &BLState, dt: f64) -> Result<BLState> {
    check_compatibility(state, "step_iota_linear")?;
    Ok(advance_iota(state, dt, |_, _, _| Ok(()))?.0)
}

/// Courant-like step `0.25 / (|k|_max · max(1, L_eta))`.
pub fn auto_dt(grid: &GridSpec) -> f64 {
    let kx = grid.kmax_x() as f64;
    let ky = grid.kmax_y() as f64;
    0.25 / ((kx * kx + ky * ky).sqrt().max(1.0) * grid.l_eta.max(1.0))
}

// ---------------------------------------------------------------------------
// Energy identity and growth bound

/// Output of [`energy_identity_report`].
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub k_order: usize,
    pub times: Vec<f64>,
    /// `‖∂_η^k (v, θ)‖²` with the last derivative a staggered difference.
    pub energy: Vec<f64>,
    /// `2∫_{𝕋²} (∂^{k-1}θ · div ∂^{k-1}v)` at the far end minus at `η = 0`.
    pub boundary_term: Vec<f64>,
    pub residual: Vec<f64>,
    pub hk_norm: Vec<f64>,
    /// Smallest `C` with `H^k(t) ≤ e^{C t} H^k(0)` on the samples; `None`
    /// when the initial norm vanishes.
    pub growth_constant: Option<f64>,
}

fn repeated_derivative(f: &[C64], h: f64, times: usize) -> Vec<C64> {
    let mut g = f.to_vec();
    for _ in 0..times {
        g = eta_derivative(&g, h);
    }
    g
}

/// Time derivative of a uniformly sampled series by five-point differences.
pub fn time_derivative(series: &[f64], dt: f64) -> Result<Vec<f64>> {
    if series.len() < 5 {
        return Err(Error::Config(format!(
            "time stencil needs at least 5 samples, got {}",
            series.len()
        )));
    }
    Ok(derivative_real(series, dt))
}

fn uniform_spacing(times: &[f64]) -> Result<f64> {
    if times.len() < 5 {
        return Err(Error::Config(format!(
            "time stencil needs at least 5 samples, got {}",
            times.len()
        )));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (i, t) in times.iter().enumerate() {
        if (t - times[0] - i as f64 * dt).abs() > 1e-9 * dt.abs().max(1e-300) + 1e-12 {
            return Err(Error::Config("trajectory samples are not uniformly spaced".into()));
        }
    }
    Ok(dt)
}

/// Per-time ingredients of the identity, so long runs need not keep states.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IdentitySample {
    pub t: f64,
    pub energy: f64,
    pub boundary_term: f64,
    pub hk_norm: f64,
}

pub fn identity_sample(s: &BLState, k_order: usize) -> Result<IdentitySample> {
    if k_order < 1 {
        return Err(Error::Config("energy identity needs k_order >= 1".into()));
    }
    let h = s.h();
    let n = s.neta();
    let mut e = 0.0;
    let mut b = 0.0;
    for idx in 0..s.modes.len() {
        let g1 = repeated_derivative(&BLState::row(&s.v1, idx), h, k_order - 1);
        let g2 = repeated_derivative(&BLState::row(&s.v2, idx), h, k_order - 1);
        let gt = repeated_derivative(&BLState::row(&s.theta, idx), h, k_order - 1);
        let gf = repeated_derivative(&s.divergence_row(idx), h, k_order - 1);
        for g in [&g1, &g2, &gt] {
            for j in 0..n - 1 {
                e += ((g[j + 1] - g[j]) / h).norm_sqr() * h;
            }
        }
        b += 2.0 * (gt[n - 1] * gf[n - 1].conj()).re - 2.0 * (gt[0] * gf[0].conj()).re;
    }
    let c = 4.0 * PI * PI;
    Ok(IdentitySample { t: s.t, energy: c * e, boundary_term: c * b, hk_norm: hk_norm(s, k_order) })
}

/// Residual of `d/dt‖∂_η^k(v,θ)‖² + 2∫(∂^{k-1}θ div ∂^{k-1}v)|_0 − (same)|_L = 0`
/// along a stored trajectory, plus the fitted `H^k` growth constant.
///
/// For `k = 1` the identity is exact for the semi-discrete half-line system,
/// so the residual measures time discretization only. For `k ≥ 2` the inner
/// derivatives are finite differences and the residual carries their error.
pub fn energy_identity_report(traj: &[BLState], k_order: usize) -> Result<IdentityReport> {
    if k_order < 1 {
        return Err(Error::Config("energy identity needs k_order >= 1".into()));
    }
    uniform_spacing(&traj.iter().map(|s| s.t).collect::<Vec<_>>())?;
    let samples = traj.iter().map(|s| identity_sample(s, k_order)).collect::<Result<Vec<_>>>()?;
    identity_from_samples(&samples, k_order)
}

pub fn identity_from_samples(samples: &[IdentitySample], k_order: usize) -> Result<IdentityReport> {
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let dt = uniform_spacing(&times)?;
    let energy_s: Vec<f64> = samples.iter().map(|s| s.energy).collect();
    let bterm: Vec<f64> = samples.iter().map(|s| s.boundary_term).collect();
    let hk: Vec<f64> = samples.iter().map(|s| s.hk_norm).collect();
    let de = time_derivative(&energy_s, dt)?;
    let residual: Vec<f64> = de.iter().zip(&bterm).map(|(d, b)| d - b).collect();
    let growth_constant = if hk[0] > 0.0 {
        let mut best: f64 = 0.0;
        for i in 1..hk.len() {
            let tau = times[i] - times[0];
            if tau > 0.0 && hk[i] > 0.0 {
                best = best.max((hk[i] / hk[0]).ln() / tau);
            }
        }
        Some(best)
    } else {
        None
    };
    Ok(IdentityReport { k_order, times, energy: energy_s, boundary_term: bterm, residual, hk_norm: hk, growth_constant })
}

/// `H^k(𝕋²×(0,L))` norm of `(v, θ)`: horizontal derivatives by mode
/// multiplication, η-derivatives by finite differences.
pub fn hk_norm(s: &BLState, k: usize) -> f64 {
    let h = s.h();
    let n = s.neta();
    let wts: Vec<f64> = (0..n).map(|j| if j == 0 || j == n - 1 { 0.5 * h } else { h }).collect();
    let mut total = 0.0;
    for (idx, kv) in s.modes.iter().enumerate() {
        let (kx2, ky2) = ((kv[0] * kv[0]) as f64, (kv[1] * kv[1]) as f64);
        for a in [&s.v1, &s.v2, &s.theta] {
            let mut g = BLState::row(a, idx);
            for ce in 0..=k {
                if ce > 0 {
                    g = eta_derivative(&g, h);
                }
                let mass: f64 = g.iter().zip(&wts).map(|(z, w)| w * z.norm_sqr()).sum();
                // Σ over horizontal orders a + b ≤ k − ce of kx^{2a} ky^{2b}.
                let mut horiz = 0.0;
                for ax in 0..=(k - ce) {
                    for by in 0..=(k - ce - ax) {
                        horiz += kx2.powi(ax as i32) * ky2.powi(by as i32);
                    }
                }
                total += horiz * mass;
            }
        }
    }
    (4.0 * PI * PI * total).sqrt()
}

/// Finite-depth solutions for a list of depths at a common η-spacing.
#[derive(Clone, Debug, Serialize)]
pub struct IotaSweep {
    pub lengths: Vec<f64>,
    pub t: f64,
    /// `‖u(L_i) − u(L_{i+1})‖` over `[0, L_i]`.
    pub gaps: Vec<f64>,
    /// `‖u(L_i) − u_half(L_i)‖` against the half-line stepper on the same grid.
    pub half_line_gaps: Vec<f64>,
}

fn restrict(s: &BLState, n: usize) -> BLState {
    let mut g = s.grid.clone();
    g.neta = n;
    g.l_eta = s.h() * (n - 1) as f64;
    let cut = |a: &Array2<C64>| a.slice(ndarray::s![.., ..n]).to_owned();
    BLState { grid: g, modes: s.modes.clone(), t: s.t, v1: cut(&s.v1), v2: cut(&s.v2), theta: cut(&s.theta) }
}

/// Runs both steppers to `t` for each depth in `lengths` (each a multiple of
/// `h`), starting from `init(grid)`, and compares consecutive depths on their
/// overlap.
pub fn iota_sweep(
    base: &GridSpec,
    h: f64,
    lengths: &[f64],
    t: f64,
    dt: f64,
    init: impl Fn(&GridSpec) -> Result<BLState>,
) -> Result<IotaSweep> {
    if lengths.len() < 2 || lengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("depth sweep needs at least two increasing lengths".into()));
    }
    let steps = (t / dt).round() as usize;
    if !(dt > 0.0) || (steps as f64 * dt - t).abs() > 1e-9 * t.max(dt) {
        return Err(Error::Config(format!("horizon {t} is not a multiple of dt {dt}")));
    }
    let mut finals = Vec::new();
    let mut half_line_gaps = Vec::new();
    for &l in lengths {
        let cells = (l / h).round();
        if (cells * h - l).abs() > 1e-9 * l {
            return Err(Error::Config(format!("depth {l} is not a multiple of the spacing {h}")));
        }
        let grid = GridSpec { neta: cells as usize + 1, l_eta: l, ..base.clone() };
        grid.validate()?;
        let s0 = project_compat(&init(&grid)?);
        let (mut a, mut b) = (s0.clone(), s0);
        for _ in 0..steps {
            a = step_iota_linear(&a, dt)?;
            b = step_linear_bl(&b, dt);
        }
        half_line_gaps.push(a.sub(&b).l2_norm());
        finals.push(a);
    }
    let gaps = finals
        .windows(2)
        .map(|w| w[0].sub(&restrict(&w[1], w[0].neta())).l2_norm())
        .collect();
    Ok(IotaSweep { lengths: lengths.to_vec(), t, gaps, half_line_gaps })
}

/// Profiles of the standard initial-data recipes.
pub mod recipes {
    /// `e^{-βη}`.
    pub fn decaying(beta: f64) -> impl Fn(f64) -> f64 {
        move |e| (-beta * e).exp()
    }

    /// `(1 − βη) e^{-βη}`, whose half-line integral vanishes.
    pub fn compatible(beta: f64) -> impl Fn(f64) -> f64 {
        move |e| (1.0 - beta * e) * (-beta * e).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(neta: usize, l: f64) -> GridSpec {
        GridSpec { nx: 8, ny: 8, neta, l_eta: l, ..GridSpec::default() }
    }

    pub(crate) fn random_state(g: &GridSpec, seed: u64) -> BLState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = BLState::zeros(g);
        for k in g.retained_modes() {
            if (k[0], k[1]) < (0, 0) {
                continue;
            }
            let a: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let b = 1.0 + rng.gen_range(0.0..1.0);
            let eta = g.eta_nodes();
            let prof = |c: C64, shift: f64| -> Vec<C64> {
                eta.iter()
                    .map(|&e| if k == [0, 0] { C64::new(c.re, 0.0) } else { c } * (1.0 + shift * e) * (-b * e).exp())
                    .collect()
            };
            s.set_mode(k, &prof(C64::new(a[0], a[1]), a[4]), &prof(C64::new(a[2], a[3]), a[5]), &prof(C64::new(a[4], a[0]), 0.0))
                .unwrap();
        }
        project_compat(&s)
    }

    #[test]
    fn w_vanishes_for_zero_velocity() {
        let s = BLState::zeros(&grid(64, 10.0));
        assert!(w_from_v(&s).iter().all(|c| *c == ZERO));
    }

    #[test]
    fn w_for_the_closed_form_velocity() {
        let g = grid(200_001, 20.0);
        let mut s = BLState::zeros(&g);
        s.add_cosine_mode([1, 0], recipes::compatible(1.0), |_| 0.0, |_| 0.0).unwrap();
        let w = w_from_v(&s);
        let idx = g.mode_index([1, 0]).unwrap();
        // w = η e^{-η} sin x has coefficient −i/2 · η e^{-η} at k = (1,0).
        for (j, e) in g.eta_nodes().iter().enumerate().step_by(5000) {
            let exact = C64::new(0.0, -0.5) * e * (-e).exp();
            assert!((w[[idx, j]] - exact).norm() < 1e-8, "eta {e}");
        }
        assert_eq!(w[[idx, 0]], ZERO);
    }

    #[test]
    fn projection_zeroes_the_divergence_integral() {
        let g = grid(128, 12.0);
        let s = random_state(&g, 5);
        assert!(compatibility_residual(&s) <= 1e-14 * compatibility_scale(&s));
        let w = w_from_v(&s);
        let end = (0..s.modes.len()).map(|i| w[[i, g.neta - 1]].norm()).fold(0.0, f64::max);
        assert!(end <= 1e-13);
    }

    #[test]
    fn zero_state_stays_zero_in_both_steppers() {
        let s = BLState::zeros(&grid(64, 10.0));
        assert!(step_linear_bl(&s, 0.1).is_zero());
        assert!(step_iota_linear(&s, 0.1).unwrap().is_zero());
    }

    #[test]
    fn short_time_expansion_of_the_half_line_step() {
        let g = grid(40_001, 20.0);
        let mut s = BLState::zeros(&g);
        s.add_cosine_mode([1, 0], |_| 0.0, |_| 0.0, recipes::decaying(1.0)).unwrap();
        let idx = g.mode_index([1, 0]).unwrap();
        let eta = g.eta_nodes();
        let errs: Vec<f64> = [2e-2, 1e-2, 5e-3]
            .iter()
            .map(|&t| {
                let out = step_linear_bl(&s, t);
                eta.iter()
                    .enumerate()
                    .map(|(j, e)| (out.v1[[idx, j]] - C64::new(0.0, 0.5 * t * (-e).exp())).norm())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn iota_step_refuses_incompatible_data() {
        let g = grid(64, 10.0);
        let mut s = BLState::zeros(&g);
        s.add_cosine_mode([1, 0], recipes::decaying(1.0), |_| 0.0, |_| 0.0).unwrap();
        assert!(matches!(step_iota_linear(&s, 0.01), Err(Error::Compatibility(_))));
    }

    #[test]
    fn pressure_for_constant_and_exponential_theta() {
        let g = grid(101, 20.0);
        let mut s = BLState::zeros(&g);
        s.add_cosine_mode([1, 0], |_| 0.0, |_| 0.0, |_| 2.0).unwrap();
        let p = solve_iota_pressure(&s);
        assert!((p.get([1, 0]) - C64::new(-20.0 * 0.5, 0.0) * 1.0).norm() < 1e-12);
        let fine = grid(200_001, 20.0);
        let mut e = BLState::zeros(&fine);
        e.add_cosine_mode([1, 0], |_| 0.0, |_| 0.0, |x| 2.0 * (-x).exp()).unwrap();
        let p = solve_iota_pressure(&e);
        let exact = -(20.0 - 1.0 + (-20.0f64).exp()) / 20.0;
        assert!((p.get([1, 0]).re - exact).abs() < 1e-8);
        assert!((exact + 0.95).abs() < 1e-9);
        assert_eq!(solve_iota_pressure(&BLState::zeros(&g)).coeffs.iter().map(|c| c.norm()).sum::<f64>(), 0.0);
    }

    #[test]
    fn half_line_energy_is_conserved() {
        let g = grid(256, 16.0);
        let mut s = random_state(&g, 9);
        let dt = 0.25 * auto_dt(&g);
        let e0 = energy(&s);
        let steps = (1.0 / dt).round() as usize;
        for _ in 0..steps {
            s = step_linear_bl(&s, 1.0 / steps as f64);
        }
        assert!((energy(&s) - e0).abs() / e0 < 1e-8);
    }

    #[test]
    fn iota_stepper_conserves_energy_and_compatibility() {
        let g = grid(256, 16.0);
        let mut s = random_state(&g, 10);
        let e0 = energy(&s);
        for _ in 0..200 {
            s = step_iota_linear(&s, 0.005).unwrap();
        }
        assert!((energy(&s) - e0).abs() / e0 < 1e-8);
        assert!(compatibility_residual(&s) <= 1e-10 * compatibility_scale(&s));
    }

    #[test]
    fn half_line_divergence_integral_follows_its_law() {
        // d/dt ∫ i k·v̂ = −|k|² ∫ T θ̂: the half-line system drifts compatibility
        // whenever the tail mass of θ is nonzero.
        let g = grid(256, 16.0);
        let s = random_state(&g, 11);
        let r = half_line_rhs(&s);
        let h = g.eta_step();
        for (idx, k) in s.modes.iter().enumerate() {
            let q = (k[0] * k[0] + k[1] * k[1]) as f64;
            let lhs = trapz(&r.divergence_row(idx), h);
            let up = eta_integral_up(&BLState::row(&s.theta, idx), h);
            let tail: Vec<C64> = up.iter().map(|u| up[g.neta - 1] - u).collect();
            let rhs = -trapz(&tail, h) * q;
            assert!((lhs - rhs).norm() < 1e-11 * (1.0 + rhs.norm()));
        }
    }

    #[test]
    fn identity_on_zero_trajectory() {
        let g = grid(64, 10.0);
        let traj: Vec<BLState> = (0..6)
            .map(|i| {
                let mut s = BLState::zeros(&g);
                s.t = i as f64 * 0.1;
                s
            })
            .collect();
        let rep = energy_identity_report(&traj, 1).unwrap();
        assert!(rep.residual.iter().all(|r| *r == 0.0));
        assert!(rep.growth_constant.is_none());
        assert!(matches!(energy_identity_report(&traj, 0), Err(Error::Config(_))));
        assert!(matches!(energy_identity_report(&traj[..3], 1), Err(Error::Config(_))));
    }

    #[test]
    fn identity_residual_shrinks_with_dt() {
        let g = grid(129, 16.0);
        let mut s0 = BLState::zeros(&g);
        s0.add_cosine_mode([1, 0], |e| 0.5 * recipes::compatible(1.0)(e), |_| 0.0, recipes::decaying(1.0))
            .unwrap();
        let res: Vec<f64> = [8e-3, 4e-3]
            .iter()
            .map(|&dt| {
                let n = (0.5 / dt) as usize;
                let mut traj = vec![s0.clone()];
                for _ in 0..n {
                    let next = step_linear_bl(traj.last().unwrap(), dt);
                    traj.push(next);
                }
                let rep = energy_identity_report(&traj, 1).unwrap();
                rep.residual.iter().map(|r| r.abs()).fold(0.0, f64::max)
            })
            .collect();
        assert!(res[1] < res[0] / 8.0, "{res:?}");
    }

    #[test]
    fn iota_solutions_approach_each_other_as_depth_grows() {
        let base = GridSpec { nx: 4, ny: 4, ..GridSpec::default() };
        let sweep = iota_sweep(&base, 0.05, &[10.0, 20.0, 40.0], 1.0, 0.01, |g| {
            let mut s = BLState::zeros(g);
            s.add_cosine_mode([1, 0], |_| 0.0, |_| 0.0, recipes::decaying(1.0))?;
            Ok(s)
        })
        .unwrap();
        assert!(sweep.gaps[1] < sweep.gaps[0]);
        assert!(sweep.half_line_gaps.windows(2).all(|w| w[1] < w[0]));
        assert!(iota_sweep(&base, 0.05, &[10.0], 1.0, 0.01, |g| Ok(BLState::zeros(g))).is_err());
        assert!(iota_sweep(&base, 0.3, &[10.0, 20.0], 1.0, 0.01, |g| Ok(BLState::zeros(g))).is_err());
    }

    #[test]
    fn growth_constant_is_finite() {
        let g = grid(129, 16.0);
        let mut s = random_state(&g, 12);
        let mut traj = vec![s.clone()];
        for _ in 0..20 {
            s = step_linear_bl(&s, 0.01);
            traj.push(s.clone());
        }
        let rep = energy_identity_report(&traj, 2).unwrap();
        let c = rep.growth_constant.unwrap();
        assert!(c.is_finite() && c >= 0.0);
        for (hk, t) in rep.hk_norm.iter().zip(&rep.times) {
            assert!(*hk <= (c * t).exp() * rep.hk_norm[0] * (1.0 + 1e-12));
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn both_steppers_conserve_midpoint_energy(seed in 0u64..10_000) {
            let g = grid(96, 10.0);
            let s = random_state(&g, seed);
            let e0 = energy(&s);
            let a = step_linear_bl(&s, 0.002);
            let b = step_iota_linear(&s, 0.002).unwrap();
            proptest::prop_assert!((energy(&a) - e0).abs() <= 1e-11 * e0);
            proptest::prop_assert!((energy(&b) - e0).abs() <= 1e-11 * e0);
        }
    }
}
