//! Analytic-norm bookkeeping for the nonlinear layer: weighted semi-norms,
//! the truncated `X_τ`/`Y_τ` norms, the decaying radius `τ(t)`, the
//! contraction metric and scans of the combinatorial inequalities behind the
//! product estimates.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grids::{eta_derivative, GridSpec, C64};
use crate::linear_bl::BLState;

pub const DEFAULT_ORDER: usize = 8;
pub const DEFAULT_CD: f64 = 1.0;
/// Share of the sum above which the last retained term raises a warning.
pub const TRUNCATION_WARNING: f64 = 0.01;

/// Parameters of the analytic norms.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormParams {
    /// Exponential η-weight rate.
    pub d: f64,
    /// Polynomial weight exponent.
    pub r: f64,
    /// Analyticity radius.
    pub tau: f64,
    /// Truncation order of the derivative sums.
    pub m: usize,
}

impl Default for NormParams {
    fn default() -> Self {
        NormParams { d: 1.0, r: 2.0, tau: 0.5, m: DEFAULT_ORDER }
    }
}

impl NormParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0) {
            return Err(Error::Config(format!("norm weight d must be positive, got {}", self.d)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("norm radius tau must be positive, got {}", self.tau)));
        }
        if !(self.r >= 2.0) {
            return Err(Error::Config(format!("norm exponent r must be >= 2, got {}", self.r)));
        }
        if self.m < 2 {
            return Err(Error::Config(format!("truncation order M must be >= 2, got {}", self.m)));
        }
        Ok(())
    }
}

/// `|f|_{d,m}` for `m = 0..=m_max`, where a list of fields is measured as one
/// vector field:
/// `|f|_{d,m} = Σ_{|α|=m} sup_η e^{dη} ‖∂^α f(η)‖_{L²(𝕋²)}`.
pub fn semi_norms(grid: &GridSpec, fields: &[&Array2<C64>], d: f64, m_max: usize) -> Vec<f64> {
    let modes = grid.retained_modes();
    let n = grid.neta;
    let h = grid.eta_step();
    let kx_max = grid.kmax_x();
    let ky_span = (2 * grid.kmax_y() + 1) as usize;
    let nkx = (2 * kx_max + 1) as usize;
    let weight: Vec<f64> = grid.eta_nodes().iter().map(|e| (d * e).exp()).collect();
    // Powers k^{2p} for p up to m_max.
    let pow = |k: i32, p: usize| ((k * k) as f64).powi(p as i32);
    let mut out = vec![0.0; m_max + 1];
    let mut current: Vec<Array2<C64>> = fields.iter().map(|f| (*f).clone()).collect();
    for c in 0..=m_max {
        if c > 0 {
            for f in current.iter_mut() {
                let mut next = Array2::zeros(f.raw_dim());
                for (i, row) in f.rows().into_iter().enumerate() {
                    let der = eta_derivative(&row.to_vec(), h);
                    for (j, v) in der.into_iter().enumerate() {
                        next[[i, j]] = v;
                    }
                }
                *f = next;
            }
        }
        // p[mode][η] = Σ_fields |∂_η^c f|².
        let mut p = Array2::<f64>::zeros((modes.len(), n));
        for f in &current {
            for ((i, j), v) in f.indexed_iter() {
                p[[i, j]] += v.norm_sqr();
            }
        }
        let rem = m_max - c;
        // r_b[kx][η] = Σ_ky ky^{2b} p.
        let mut r_b = vec![Array2::<f64>::zeros((nkx, n)); rem + 1];
        for (i, k) in modes.iter().enumerate() {
            let ix = i / ky_span;
            for (b, rb) in r_b.iter_mut().enumerate() {
                let wy = pow(k[1], b);
                if wy == 0.0 {
                    continue;
                }
                for j in 0..n {
                    rb[[ix, j]] += wy * p[[i, j]];
                }
            }
        }
        for (m, slot) in out.iter_mut().enumerate().skip(c) {
            let horiz = m - c;
            for a in 0..=horiz {
                let b = horiz - a;
                let mut sup: f64 = 0.0;
                for j in 0..n {
                    let mut s = 0.0;
                    for ix in 0..nkx {
                        let kx = ix as i32 - kx_max;
                        let wx = pow(kx, a);
                        if wx != 0.0 {
                            s += wx * r_b[b][[ix, j]];
                        }
                    }
                    sup = sup.max(weight[j] * (4.0 * PI * PI * s).sqrt());
                }
                *slot += sup;
            }
        }
    }
    out
}

/// `|f|_{d,m}` for one order; `m > M` is refused.
pub fn semi_norm(grid: &GridSpec, fields: &[&Array2<C64>], params: &NormParams, m: usize) -> Result<f64> {
    if m > params.m {
        return Err(Error::Config(format!("semi-norm order {m} exceeds truncation order {}", params.m)));
    }
    Ok(semi_norms(grid, fields, params.d, m)[m])
}

/// `|v, θ|_{d,m} = |v|_{d,m} + |θ|_{d,m}` for `m = 0..=m_max`.
pub fn state_semi_norms(state: &BLState, d: f64, m_max: usize) -> Vec<f64> {
    let v = semi_norms(&state.grid, &[&state.v1, &state.v2], d, m_max);
    let t = semi_norms(&state.grid, &[&state.theta], d, m_max);
    v.iter().zip(&t).map(|(a, b)| a + b).collect()
}

/// A truncated norm with its last-term indicator.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormValue {
    pub value: f64,
    pub last_term: f64,
    pub truncation_warning: bool,
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn finish(terms: impl Iterator<Item = f64>) -> NormValue {
    let terms: Vec<f64> = terms.collect();
    let value: f64 = terms.iter().sum();
    let last_term = *terms.last().unwrap_or(&0.0);
    NormValue { value, last_term, truncation_warning: value > 0.0 && last_term > TRUNCATION_WARNING * value }
}

/// `Σ_{m=0}^{M} s_m (m+1)^r τ^m / m!`.
pub fn x_norm_from(semi: &[f64], r: f64, tau: f64, order: usize) -> NormValue {
    finish((0..=order).map(|m| {
        semi[m] * ((m + 1) as f64).powf(r) * (m as f64 * tau.ln() - ln_factorial(m)).exp()
    }))
}

/// `Σ_{m=1}^{M} s_m (m+1)^r τ^{m-1} / (m-1)!`.
pub fn y_norm_from(semi: &[f64], r: f64, tau: f64, order: usize) -> NormValue {
    finish((1..=order).map(|m| {
        semi[m] * ((m + 1) as f64).powf(r) * ((m - 1) as f64 * tau.ln() - ln_factorial(m - 1)).exp()
    }))
}

pub fn x_norm(state: &BLState, params: &NormParams) -> NormValue {
    x_norm_from(&state_semi_norms(state, params.d, params.m), params.r, params.tau, params.m)
}

pub fn y_norm(state: &BLState, params: &NormParams) -> NormValue {
    y_norm_from(&state_semi_norms(state, params.d, params.m), params.r, params.tau, params.m)
}

// ---------------------------------------------------------------------------
// Radius schedule

/// Decreasing analyticity radius on the solver time grid.
#[derive(Clone, Debug, Serialize)]
pub struct TauSchedule {
    pub tau0: f64,
    pub c_d: f64,
    pub m_data: f64,
    pub d: f64,
    pub dt: f64,
    /// `τ(i·dt)` for the retained samples.
    pub samples: Vec<f64>,
    /// First time at which `τ = τ0/2`.
    pub t_max: f64,
    /// Set when the requested horizon exceeds `t_max`.
    pub truncated: bool,
    pub t_end: f64,
}

/// Right side of the radius ODE.
pub fn tau_rate(tau: f64, tau0: f64, c_d: f64, m: f64, d: f64) -> f64 {
    -(2.0 * c_d * (1.0 + 1.0 / tau) * m
        + 1.0 / d
        + 4.0 * c_d * (2.0 / tau0 + 4.0 / (tau0 * tau0)) * m
        + 4.0 * c_d * (1.0 + 2.0 / tau0) * m)
}

fn rk4_tau(tau: f64, s: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let k1 = f(tau);
    let k2 = f(tau + 0.5 * s * k1);
    let k3 = f(tau + 0.5 * s * k2);
    let k4 = f(tau + s * k3);
    tau + s / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Panels of the quadrature for `T_max`.
const TMAX_PANELS: usize = 4096;

/// Integrates the radius ODE by RK4 with step `dt`. `T_max` is the
/// quadrature `∫_{τ0/2}^{τ0} dτ/|τ'|` of the autonomous equation, so its
/// accuracy does not depend on `dt`; samples stop at `min(T, T_max)`.
pub fn tau_schedule(tau0: f64, c_d: f64, m_data: f64, d: f64, t_end: f64, dt: f64) -> Result<TauSchedule> {
    if !(tau0 > 0.0) || !(d > 0.0) || !(c_d > 0.0) || !(m_data >= 0.0) {
        return Err(Error::Config(format!(
            "schedule needs tau0 > 0, d > 0, C_d > 0, M >= 0 (got {tau0}, {d}, {c_d}, {m_data})"
        )));
    }
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::Config("schedule needs dt > 0 and T >= 0".into()));
    }
    let steps = (t_end / dt).round() as usize;
    if (steps as f64 * dt - t_end).abs() > 1e-9 * t_end.max(dt) {
        return Err(Error::Config(format!("horizon {t_end} is not a multiple of dt {dt}")));
    }
    let f = |tau: f64| tau_rate(tau, tau0, c_d, m_data, d);
    let half = 0.5 * tau0;
    // Composite Simpson on the smooth integrand 1/|f| over [τ0/2, τ0].
    let hq = (tau0 - half) / TMAX_PANELS as f64;
    let g = |tau: f64| -1.0 / f(tau);
    let mut acc = g(half) + g(tau0);
    for i in 1..TMAX_PANELS {
        acc += g(half + i as f64 * hq) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let t_max = acc * hq / 3.0;
    let mut samples = vec![tau0];
    let mut tau = tau0;
    for i in 1..=steps {
        if i as f64 * dt > t_max {
            break;
        }
        tau = rk4_tau(tau, dt, &f);
        samples.push(tau);
    }
    let truncated = t_max < t_end;
    Ok(TauSchedule { tau0, c_d, m_data, d, dt, samples, t_max, truncated, t_end })
}

impl TauSchedule {
    /// Coefficient of the time-integral term of the contraction metric.
    pub fn metric_coefficient(&self) -> f64 {
        4.0 * self.c_d * (2.0 / self.tau0 + 4.0 / (self.tau0 * self.tau0)) * self.m_data
    }
}

/// Closed-form time at which the radius ODE reaches `τ`.
pub fn tau_time_exact(tau: f64, tau0: f64, c_d: f64, m: f64, d: f64) -> f64 {
    let b = 2.0 * c_d * m;
    let a = b + 1.0 / d + 4.0 * c_d * (2.0 / tau0 + 4.0 / (tau0 * tau0)) * m + 4.0 * c_d * (1.0 + 2.0 / tau0) * m;
    ((tau0 - tau) - (b / a) * ((a * tau0 + b) / (a * tau + b)).ln()) / a
}

/// `𝔈 = ½ max_t X_{τ(t)} + coeff · ∫ Y_{τ(t)} dt` from per-sample semi-norms.
pub fn contraction_metric_from(semi: &[Vec<f64>], schedule: &TauSchedule, r: f64, order: usize) -> Result<f64> {
    if semi.len() != schedule.samples.len() {
        return Err(Error::Config(format!(
            "trajectory has {} samples but the schedule has {}",
            semi.len(),
            schedule.samples.len()
        )));
    }
    let mut sup: f64 = 0.0;
    let mut ys = Vec::with_capacity(semi.len());
    for (s, tau) in semi.iter().zip(&schedule.samples) {
        sup = sup.max(x_norm_from(s, r, *tau, order).value);
        ys.push(y_norm_from(s, r, *tau, order).value);
    }
    let integral = if ys.len() > 1 {
        let inner: f64 = ys[1..ys.len() - 1].iter().sum();
        (inner + 0.5 * (ys[0] + ys[ys.len() - 1])) * schedule.dt
    } else {
        0.0
    };
    Ok(0.5 * sup + schedule.metric_coefficient() * integral)
}

/// `𝔈` of a trajectory difference sampled on the schedule's grid.
pub fn contraction_metric(diffs: &[BLState], schedule: &TauSchedule, params: &NormParams) -> Result<f64> {
    for (i, s) in diffs.iter().enumerate() {
        let expect = diffs[0].t + i as f64 * schedule.dt;
        if (s.t - expect).abs() > 1e-9 * schedule.dt.max(1.0) {
            return Err(Error::Config(format!("sample {i} at t = {} is off the schedule grid", s.t)));
        }
    }
    let semi: Vec<Vec<f64>> = diffs.iter().map(|s| state_semi_norms(s, params.d, params.m)).collect();
    contraction_metric_from(&semi, schedule, params.r, params.m)
}

// ---------------------------------------------------------------------------
// Combinatorial inequalities

/// The four product-estimate inequalities, in the order they are used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Inequality {
    /// Low-order factor on the transport speed, `0 ≤ j ≤ [m/2]`, `r ≥ 1`.
    LowSpeed,
    /// High-order factor on the transport speed, `[m/2] < j ≤ m`, `r ≥ 1`.
    HighSpeed,
    /// Low-order factor on the vertical speed, `0 ≤ j ≤ [m/2]`, `r ≥ 2`.
    LowVertical,
    /// High-order factor on the vertical speed, `[m/2] < j ≤ m`, `r ≥ 2`.
    HighVertical,
}

impl Inequality {
    pub const ALL: [Inequality; 4] =
        [Inequality::LowSpeed, Inequality::HighSpeed, Inequality::LowVertical, Inequality::HighVertical];

    pub fn r_threshold(self) -> f64 {
        match self {
            Inequality::LowSpeed | Inequality::HighSpeed => 1.0,
            _ => 2.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Inequality::LowSpeed => 1,
            Inequality::HighSpeed => 2,
            Inequality::LowVertical => 3,
            Inequality::HighVertical => 4,
        }
    }

    fn j_range(self, m: usize) -> std::ops::RangeInclusive<usize> {
        match self {
            Inequality::LowSpeed | Inequality::LowVertical => 0..=m / 2,
            _ => (m / 2 + 1)..=m,
        }
    }

    /// The expression in binomial/factorial form, evaluated in logarithms.
    pub fn factorial_form(self, m: usize, j: usize, r: f64) -> f64 {
        let lf = ln_factorial;
        let ln = |x: usize| (x as f64).ln();
        let binom = lf(m) - lf(j) - lf(m - j);
        let lead = binom + r * ln(m + 1) - lf(m);
        let k = m - j;
        let rest = match self {
            Inequality::LowSpeed => {
                lf(k) - r * ln(k + 2) + 0.5 * (lf(j) + lf(j + 2)) - 0.5 * r * (ln(j + 1) + ln(j + 3))
            }
            Inequality::HighSpeed => {
                lf(j) - r * ln(j + 1) + 0.5 * (lf(k) + lf(k + 2)) - 0.5 * r * (ln(k + 2) + ln(k + 4))
            }
            Inequality::LowVertical => {
                lf(k) - r * ln(k + 2) + 0.5 * (lf(j + 1) + lf(j + 3)) - 0.5 * r * (ln(j + 2) + ln(j + 4))
            }
            Inequality::HighVertical => {
                lf(j) - r * ln(j + 2) + 0.5 * (lf(k + 1) + lf(k + 3)) - 0.5 * r * (ln(k + 2) + ln(k + 4))
            }
        };
        (lead + rest).exp()
    }

    /// The same expression after cancelling the factorials.
    pub fn simplified_form(self, m: usize, j: usize, r: f64) -> f64 {
        let f = |x: usize| x as f64;
        let k = m - j;
        match self {
            Inequality::LowSpeed => {
                (f(m + 1) / f(k + 2)).powf(r) * (f(j + 1) * f(j + 2)).sqrt()
                    / (f(j + 1).powf(r / 2.0) * f(j + 3).powf(r / 2.0))
            }
            Inequality::HighSpeed => {
                (f(m + 1) / f(j + 1)).powf(r) * (f(k + 1) * f(k + 2)).sqrt()
                    / (f(k + 2).powf(r / 2.0) * f(k + 4).powf(r / 2.0))
            }
            Inequality::LowVertical => {
                (f(m + 1) / f(k + 2)).powf(r) * f(j + 1) * (f(j + 2) * f(j + 3)).sqrt()
                    / (f(j + 2).powf(r / 2.0) * f(j + 4).powf(r / 2.0))
            }
            Inequality::HighVertical => {
                (f(m + 1) / f(j + 2)).powf(r) * f(k + 1) * (f(k + 2) * f(k + 3)).sqrt()
                    / (f(k + 2).powf(r / 2.0) * f(k + 4).powf(r / 2.0))
            }
        }
    }
}

/// Exhaustive scan of one inequality.
#[derive(Clone, Debug, Serialize)]
pub struct InequalityScan {
    pub inequality: usize,
    pub r: f64,
    pub m_max: usize,
    pub sup: f64,
    pub argmax: (usize, usize),
    /// Supremum over `m ≤ m_max/2`.
    pub sup_half: f64,
    /// Supremum over `m ≤ m_max/4`.
    pub sup_quarter: f64,
    /// `(sup − sup_half)/sup_half`.
    pub relative_growth: f64,
    /// `(sup − sup_half)/(sup_half − sup_quarter)`; `None` when the second
    /// difference vanishes. About 1/2 for an `O(1/m)` approach to a limit,
    /// 1 for logarithmic growth.
    pub increment_ratio: Option<f64>,
    /// Geometric extrapolation of the supremum using `increment_ratio`.
    pub extrapolated_limit: f64,
    pub plateau: bool,
    pub finite: bool,
    /// Largest relative gap between the factorial and simplified forms.
    pub form_mismatch: f64,
}

/// Relative growth of the supremum between `m_max/2` and `m_max` accepted as
/// a plateau outright.
pub const PLATEAU_TOL: f64 = 0.05;

/// Otherwise the increments over `m_max/4 → m_max/2 → m_max` must shrink by
/// at least this factor, which rules out logarithmic or faster growth.
pub const PLATEAU_RATIO: f64 = 0.75;

/// Plateau verdict from the suprema over `m ≤ m_max/4`, `m_max/2`, `m_max`.
pub fn is_plateau(quarter: f64, half: f64, full: f64) -> bool {
    let growth = (full - half) / half;
    let prev = half - quarter;
    growth <= PLATEAU_TOL || (prev > 0.0 && (full - half) / prev <= PLATEAU_RATIO)
}

pub fn scan_inequality(which: Inequality, m_max: usize, r: f64) -> Result<InequalityScan> {
    if m_max < 1 {
        return Err(Error::Config("inequality scan needs m_max >= 1".into()));
    }
    if !(r >= which.r_threshold()) {
        return Err(Error::Config(format!(
            "inequality {} requires r >= {}, got r = {r}",
            which.index(),
            which.r_threshold()
        )));
    }
    let mut sup = f64::NEG_INFINITY;
    let mut sup_half = f64::NEG_INFINITY;
    let mut sup_quarter = f64::NEG_INFINITY;
    let mut argmax = (0, 0);
    let mut mismatch: f64 = 0.0;
    for m in 0..=m_max {
        for j in which.j_range(m) {
            let v = which.simplified_form(m, j, r);
            let w = which.factorial_form(m, j, r);
            mismatch = mismatch.max((v - w).abs() / v.abs().max(f64::MIN_POSITIVE));
            if v > sup {
                sup = v;
                argmax = (m, j);
            }
            if m <= m_max / 2 && v > sup_half {
                sup_half = v;
            }
            if m <= m_max / 4 && v > sup_quarter {
                sup_quarter = v;
            }
        }
    }
    let relative_growth = (sup - sup_half) / sup_half;
    let prev = sup_half - sup_quarter;
    let increment_ratio = if prev > 0.0 { Some((sup - sup_half) / prev) } else { None };
    let extrapolated_limit = match increment_ratio {
        Some(q) if q < 1.0 => sup + (sup - sup_half) * q / (1.0 - q),
        Some(_) => f64::INFINITY,
        None => sup,
    };
    let plateau = is_plateau(sup_quarter, sup_half, sup);
    Ok(InequalityScan {
        inequality: which.index(),
        r,
        m_max,
        sup,
        argmax,
        sup_half,
        sup_quarter,
        relative_growth,
        increment_ratio,
        extrapolated_limit,
        plateau,
        finite: sup.is_finite(),
        form_mismatch: mismatch,
    })
}

/// Scans every inequality whose threshold `r` meets; the rest are listed as
/// refused with their threshold.
#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub m_max: usize,
    pub r: f64,
    pub scans: Vec<InequalityScan>,
    pub refused: Vec<String>,
}

pub fn verify_inequalities(m_max: usize, r: f64) -> Result<InequalityReport> {
    let mut scans = Vec::new();
    let mut refused = Vec::new();
    for which in Inequality::ALL {
        match scan_inequality(which, m_max, r) {
            Ok(s) => scans.push(s),
            Err(Error::Config(msg)) if r < which.r_threshold() => refused.push(msg),
            Err(e) => return Err(e),
        }
    }
    if scans.is_empty() {
        return Err(Error::Config(format!("no inequality applies at r = {r}; the smallest threshold is r >= 1")));
    }
    Ok(InequalityReport { m_max, r, scans, refused })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(neta: usize, l: f64) -> GridSpec {
        GridSpec { nx: 8, ny: 8, neta, l_eta: l, ..GridSpec::default() }
    }

    fn example(neta: usize) -> BLState {
        let mut s = BLState::zeros(&grid(neta, 16.0));
        s.add_cosine_mode([1, 0], |_| 0.0, |_| 0.0, |e| (-2.0 * e).exp()).unwrap();
        s
    }

    fn random_state(seed: u64) -> BLState {
        let g = grid(64, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = BLState::zeros(&g);
        for k in [[1, 0], [0, 1], [1, 2], [2, -1]] {
            let a: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            s.add_cosine_mode(k, move |e| a[0] * (-2.0 * e).exp(), move |e| a[1] * e * (-2.0 * e).exp(), move |e| {
                a[2] * (-(2.0 + a[3].abs()) * e).exp()
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn zero_field_has_zero_norms() {
        let s = BLState::zeros(&grid(32, 8.0));
        let p = NormParams::default();
        assert_eq!(state_semi_norms(&s, 1.0, 4), vec![0.0; 5]);
        let x = x_norm(&s, &p);
        assert_eq!((x.value, x.last_term), (0.0, 0.0));
        assert_eq!(y_norm(&s, &p).value, 0.0);
    }

    #[test]
    fn semi_norms_of_the_weighted_exponential() {
        let s = example(160_001);
        let p = NormParams { d: 1.0, r: 2.0, tau: 0.5, m: 2 };
        let s0 = semi_norm(&s.grid, &[&s.theta], &p, 0).unwrap();
        let s1 = semi_norm(&s.grid, &[&s.theta], &p, 1).unwrap();
        assert!((s0 - PI * 2f64.sqrt()).abs() < 1e-9);
        assert!((s1 - 3.0 * PI * 2f64.sqrt()).abs() < 1e-6);
        assert!(matches!(semi_norm(&s.grid, &[&s.theta], &p, 3), Err(Error::Config(_))));
    }

    #[test]
    fn first_order_x_norm_example() {
        let s = example(160_001);
        let semi = semi_norms(&s.grid, &[&s.theta], 1.0, 1);
        let x = x_norm_from(&semi, 2.0, 0.5, 1);
        let expect = PI * 2f64.sqrt() + 3.0 * PI * 2f64.sqrt() * 4.0 * 0.5;
        assert!((x.value - expect).abs() < 1e-5);
        assert!((x.value - 31.10).abs() < 0.01);
    }

    #[test]
    fn semi_norms_agree_with_physical_space_quadrature() {
        // Oracle: differentiate on the collocation grid by explicit Fourier
        // sums, integrate |∂^α f|² with the rectangle rule on 𝕋².
        let s = random_state(3);
        let g = &s.grid;
        let d = 0.5;
        let fast = semi_norms(g, &[&s.v1, &s.v2], d, 3);
        let xs = g.x_nodes();
        let ys = g.y_nodes();
        let h = g.eta_step();
        let eta = g.eta_nodes();
        let mut slow = vec![0.0; 4];
        for (m, slot) in slow.iter_mut().enumerate() {
            for c in 0..=m {
                for a in 0..=(m - c) {
                    let b = m - c - a;
                    let mut sup: f64 = 0.0;
                    // η-derivatives first, per mode.
                    let deriv = |arr: &Array2<C64>| -> Vec<Vec<C64>> {
                        (0..s.modes.len())
                            .map(|i| {
                                let mut r = arr.row(i).to_vec();
                                for _ in 0..c {
                                    r = eta_derivative(&r, h);
                                }
                                r
                            })
                            .collect()
                    };
                    let (d1, d2) = (deriv(&s.v1), deriv(&s.v2));
                    for j in 0..g.neta {
                        let mut l2 = 0.0;
                        for &x in &xs {
                            for &y in &ys {
                                for dd in [&d1, &d2] {
                                    let mut val = C64::new(0.0, 0.0);
                                    for (i, k) in s.modes.iter().enumerate() {
                                        let phase = C64::new(0.0, k[0] as f64 * x + k[1] as f64 * y).exp();
                                        let fac = C64::new(0.0, k[0] as f64).powu(a as u32)
                                            * C64::new(0.0, k[1] as f64).powu(b as u32);
                                        val += dd[i][j] * fac * phase;
                                    }
                                    l2 += val.re * val.re;
                                }
                            }
                        }
                        l2 *= 4.0 * PI * PI / (xs.len() * ys.len()) as f64;
                        sup = sup.max((d * eta[j]).exp() * l2.sqrt());
                    }
                    *slot += sup;
                }
            }
        }
        for m in 0..4 {
            assert!((fast[m] - slow[m]).abs() <= 1e-8 * slow[m].max(1.0), "m={m}: {} vs {}", fast[m], slow[m]);
        }
    }

    #[test]
    fn truncation_warning_fires_for_large_radius() {
        let s = random_state(1);
        let small = x_norm(&s, &NormParams { tau: 0.05, ..NormParams::default() });
        assert!(!small.truncation_warning);
        let large = x_norm(&s, &NormParams { tau: 50.0, ..NormParams::default() });
        assert!(large.truncation_warning);
    }

    #[test]
    fn norm_params_are_validated() {
        assert!(NormParams::default().validate().is_ok());
        assert!(NormParams { r: 1.5, ..NormParams::default() }.validate().is_err());
        assert!(NormParams { m: 1, ..NormParams::default() }.validate().is_err());
        assert!(NormParams { d: 0.0, ..NormParams::default() }.validate().is_err());
    }

    #[test]
    fn schedule_without_data_is_linear() {
        let s = tau_schedule(1.0, 1.0, 0.0, 2.0, 0.5, 0.01).unwrap();
        for (i, tau) in s.samples.iter().enumerate() {
            assert!((tau - (1.0 - i as f64 * 0.01 / 2.0)).abs() <= 1e-12);
        }
        assert!((s.t_max - 1.0).abs() < 1e-12);
        assert!(!s.truncated);
    }

    #[test]
    fn schedule_initial_slope_example() {
        assert_eq!(tau_rate(1.0, 1.0, 1.0, 1.0, 1.0), -41.0);
    }

    #[test]
    fn schedule_crossing_matches_closed_form() {
        let s = tau_schedule(0.8, 0.5, 0.3, 1.5, 1.0, 1e-3).unwrap();
        assert!(s.truncated);
        let exact = tau_time_exact(0.4, 0.8, 0.5, 0.3, 1.5);
        let slope = tau_rate(0.4, 0.8, 0.5, 0.3, 1.5).abs();
        assert!((s.t_max - exact).abs() * slope < 1e-8);
        for w in s.samples.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(s.samples.iter().all(|t| *t >= 0.4));
        for (i, tau) in s.samples.iter().enumerate() {
            let t = i as f64 * 1e-3;
            assert!((tau_time_exact(*tau, 0.8, 0.5, 0.3, 1.5) - t).abs() < 1e-10);
        }
    }

    #[test]
    fn crossing_time_does_not_depend_on_the_step() {
        // T_max spans only a few coarse steps here.
        let exact = tau_time_exact(0.25, 0.5, 1.0, 0.7, 0.8);
        let slope = tau_rate(0.25, 0.5, 1.0, 0.7, 0.8).abs();
        for dt in [1e-3, 1e-4] {
            let s = tau_schedule(0.5, 1.0, 0.7, 0.8, 1.0, dt).unwrap();
            assert!(s.truncated);
            assert!((s.t_max - exact).abs() * slope < 1e-10, "{} vs {exact}", s.t_max);
            assert!(s.samples.len() as f64 - 1.0 <= s.t_max / dt);
        }
    }

    #[test]
    fn metric_of_a_constant_snapshot_against_quadrature() {
        let s = random_state(4);
        let p = NormParams { d: 0.5, r: 2.0, tau: 0.5, m: 4 };
        let sched = tau_schedule(0.5, 1.0, 0.02, 0.5, 0.05, 5e-4).unwrap();
        let traj: Vec<BLState> = (0..sched.samples.len())
            .map(|i| {
                let mut x = s.clone();
                x.t = i as f64 * 5e-4;
                x
            })
            .collect();
        let e = contraction_metric(&traj, &sched, &p).unwrap();
        // X is increasing in τ, so the sup sits at t = 0. The integral uses
        // Simpson's rule on the closed-form radius as an independent check.
        let semi = state_semi_norms(&s, p.d, p.m);
        let x0 = x_norm_from(&semi, p.r, 0.5, p.m).value;
        let n = 200;
        let mut simpson = 0.0;
        for i in 0..=n {
            let t = 0.05 * i as f64 / n as f64;
            // Invert the closed form by bisection.
            let (mut lo, mut hi) = (0.25, 0.5);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if tau_time_exact(mid, 0.5, 1.0, 0.02, 0.5) > t {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let y = y_norm_from(&semi, p.r, 0.5 * (lo + hi), p.m).value;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            simpson += w * y;
        }
        simpson *= 0.05 / n as f64 / 3.0;
        let expect = 0.5 * x0 + sched.metric_coefficient() * simpson;
        assert!((e - expect).abs() < 1e-4 * expect, "{e} vs {expect}");
        let twice: Vec<BLState> = traj.iter().map(|x| x.scale(-2.0)).collect();
        assert!((contraction_metric(&twice, &sched, &p).unwrap() - 2.0 * e).abs() < 1e-12 * e);
        assert!(matches!(contraction_metric(&traj[..3], &sched, &p), Err(Error::Config(_))));
    }

    #[test]
    fn first_inequality_at_the_origin() {
        let v = Inequality::LowSpeed.simplified_form(0, 0, 1.0);
        assert!((v - 0.5 * (2.0f64).sqrt() / 3f64.sqrt()).abs() < 1e-15);
        assert!((v - 0.4082).abs() < 1e-4);
        assert!((Inequality::LowSpeed.factorial_form(0, 0, 1.0) - v).abs() < 1e-14);
    }

    #[test]
    fn inequality_threshold_is_enforced() {
        let e = scan_inequality(Inequality::LowVertical, 20, 1.0).unwrap_err();
        assert!(e.to_string().contains("r >= 2"));
        let rep = verify_inequalities(20, 1.0).unwrap();
        assert_eq!(rep.scans.len(), 2);
        assert_eq!(rep.refused.len(), 2);
        assert!(verify_inequalities(20, 0.5).is_err());
    }

    #[test]
    fn vertical_inequalities_approach_four() {
        // Along j = m/2 the third expression is 4(m+1)²/(m+4)² · (j+1)(j+2)^{1/2}(j+3)^{1/2}/((j+2)(j+4)) → 4.
        for which in [Inequality::LowVertical, Inequality::HighVertical] {
            let s = scan_inequality(which, 400, 2.0).unwrap();
            assert!(s.sup < 4.0 && s.plateau, "{s:?}");
            let q = s.increment_ratio.unwrap();
            assert!((q - 0.5).abs() < 0.1, "{q}");
            assert!((s.extrapolated_limit - 4.0).abs() < 0.05, "{}", s.extrapolated_limit);
        }
    }

    #[test]
    fn plateau_verdict_separates_limits_from_log_growth() {
        let harmonic = |n: usize| (1..=n).map(|i| 1.0 / i as f64).sum::<f64>();
        assert!(!is_plateau(harmonic(100), harmonic(200), harmonic(400)));
        let limit = |n: f64| 4.0 - 40.0 / n;
        assert!(is_plateau(limit(100.0), limit(200.0), limit(400.0)));
        assert!(is_plateau(1.0, 1.0, 1.0));
        assert!(!is_plateau(1.0, 2.0, 4.0));
    }

    #[test]
    fn first_inequality_plateaus() {
        let s = scan_inequality(Inequality::LowSpeed, 200, 1.0).unwrap();
        assert!(s.finite && s.plateau);
        assert!(s.form_mismatch < 1e-10);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn truncated_norms_are_seminorms(seed in 0u64..10_000, c in -3.0f64..3.0) {
            let a = random_state(seed);
            let b = random_state(seed + 77);
            let p = NormParams { d: 0.5, r: 2.0, tau: 0.4, m: 4 };
            let xa = x_norm(&a, &p).value;
            let xb = x_norm(&b, &p).value;
            let sum = a.add_scaled(&b, 1.0);
            proptest::prop_assert!(xa >= 0.0);
            proptest::prop_assert!(x_norm(&sum, &p).value <= (xa + xb) * (1.0 + 1e-12));
            proptest::prop_assert!((x_norm(&a.scale(c), &p).value - c.abs() * xa).abs() <= 1e-12 * xa.max(1.0));
            let ya = y_norm(&a, &p).value;
            proptest::prop_assert!(y_norm(&sum, &p).value <= (ya + y_norm(&b, &p).value) * (1.0 + 1e-12));
        }

        #[test]
        fn x_norm_grows_with_radius_and_order(seed in 0u64..10_000, tau in 0.05f64..1.0) {
            let a = random_state(seed);
            let p = NormParams { d: 0.5, r: 2.0, tau, m: 3 };
            let base = x_norm(&a, &p).value;
            let wider = x_norm(&a, &NormParams { tau: tau * 1.5, ..p.clone() }).value;
            let longer = x_norm(&a, &NormParams { m: 4, ..p.clone() }).value;
            proptest::prop_assert!(wider >= base);
            proptest::prop_assert!(longer >= base);
        }

        #[test]
        fn schedules_decrease(tau0 in 0.1f64..2.0, cd in 0.01f64..2.0, m in 0.0f64..2.0, d in 0.1f64..2.0) {
            let s = tau_schedule(tau0, cd, m, d, 0.01, 0.001).unwrap();
            for w in s.samples.windows(2) {
                proptest::prop_assert!(w[1] < w[0]);
            }
            proptest::prop_assert!(s.t_max > 0.0 && s.t_max <= tau0 * d / 2.0 + 1e-12);
        }
    }
}
