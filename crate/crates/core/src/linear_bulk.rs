//! Linear fast-wave Boussinesq channel on 𝕋²×(0,1).
//!
//! Each horizontal mode is discretized on a Legendre–Gauss–Lobatto z-grid.
//! The horizontal velocity splits into a potential part, slaved to `ŵ` by
//! incompressibility, and a toroidal part that does not evolve. The remaining
//! pair (`ŵ` on interior nodes, `θ̂`) obeys a Galerkin system whose exact
//! propagator is a rotation in singular-vector coordinates.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grids::{Fft2, GridSpec, Lgl, SpectralField2D, C64};

const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// Per-mode vertical profiles of the linear channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BulkState {
    pub grid: GridSpec,
    pub modes: Vec<[i32; 2]>,
    pub eps: f64,
    pub t: f64,
    pub v1: Array2<C64>,
    pub v2: Array2<C64>,
    pub w: Array2<C64>,
    pub theta: Array2<C64>,
}

impl BulkState {
    pub fn zeros(grid: &GridSpec, eps: f64) -> Self {
        let modes = grid.retained_modes();
        let shape = (modes.len(), grid.nz);
        BulkState {
            grid: grid.clone(),
            modes,
            eps,
            t: 0.0,
            v1: Array2::zeros(shape),
            v2: Array2::zeros(shape),
            w: Array2::zeros(shape),
            theta: Array2::zeros(shape),
        }
    }

    pub fn nz(&self) -> usize {
        self.grid.nz
    }

    /// Sets mode `k` (and its conjugate partner) from `ŵ`, `θ̂` and the
    /// toroidal velocity amplitude along `k⊥ = (-ky, kx)/|k|`. The potential
    /// velocity follows from incompressibility. `ŵ` wall values are zeroed.
    pub fn set_mode(
        &mut self,
        lgl: &Lgl,
        k: [i32; 2],
        w: &[C64],
        theta: &[C64],
        toroidal: &[C64],
    ) -> Result<()> {
        let nz = self.nz();
        if w.len() != nz || theta.len() != nz || toroidal.len() != nz {
            return Err(Error::Config(format!("profiles must have Nz = {nz} points")));
        }
        if k == [0, 0] {
            return Err(Error::Config("use set_mean_mode for k = 0".into()));
        }
        let idx = self
            .grid
            .mode_index(k)
            .ok_or_else(|| Error::Config(format!("mode {k:?} is not retained")))?;
        let mut w = w.to_vec();
        w[0] = ZERO;
        w[nz - 1] = ZERO;
        let (v1, v2) = velocity_from_w(lgl, k, &w, toroidal);
        self.write_mode(idx, &v1, &v2, &w, theta);
        let jdx = self.grid.mode_index([-k[0], -k[1]]).expect("symmetric retained set");
        let conj = |p: &[C64]| p.iter().map(|c| c.conj()).collect::<Vec<_>>();
        self.write_mode(jdx, &conj(&v1), &conj(&v2), &conj(&w), &conj(theta));
        Ok(())
    }

    /// Sets the horizontally averaged mode; `ŵ₀` is zero.
    pub fn set_mean_mode(&mut self, v1: &[f64], v2: &[f64], theta: &[f64]) -> Result<()> {
        let nz = self.nz();
        if v1.len() != nz || v2.len() != nz || theta.len() != nz {
            return Err(Error::Config(format!("profiles must have Nz = {nz} points")));
        }
        let idx = self.grid.mode_index([0, 0]).expect("mean mode retained");
        let r = |p: &[f64]| p.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>();
        self.write_mode(idx, &r(v1), &r(v2), &vec![ZERO; nz], &r(theta));
        Ok(())
    }

    fn write_mode(&mut self, idx: usize, v1: &[C64], v2: &[C64], w: &[C64], theta: &[C64]) {
        for j in 0..self.nz() {
            self.v1[[idx, j]] = v1[j];
            self.v2[[idx, j]] = v2[j];
            self.w[[idx, j]] = w[j];
            self.theta[[idx, j]] = theta[j];
        }
    }

    fn row(a: &Array2<C64>, i: usize) -> Vec<C64> {
        a.row(i).to_vec()
    }

    /// Largest coefficient magnitude across all fields.
    pub fn max_abs(&self) -> f64 {
        [&self.v1, &self.v2, &self.w, &self.theta]
            .iter()
            .flat_map(|a| a.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

fn velocity_from_w(lgl: &Lgl, k: [i32; 2], w: &[C64], toroidal: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let kn = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
    let (hx, hy) = (k[0] as f64 / kn, k[1] as f64 / kn);
    let dw = Lgl::apply(&lgl.d, w);
    let mut v1 = Vec::with_capacity(w.len());
    let mut v2 = Vec::with_capacity(w.len());
    for (d, b) in dw.iter().zip(toroidal) {
        let a = I * d / kn;
        v1.push(a * hx - b * hy);
        v2.push(a * hy + b * hx);
    }
    (v1, v2)
}

/// Exact per-mode propagator for one value of `|k|²`.
#[derive(Clone, Debug)]
struct Propagator {
    sigma: DVector<f64>,
    /// Interior `ŵ` to rotation coordinates.
    w_in: DMatrix<f64>,
    /// Interior `θ̂` to rotation coordinates.
    t_in: DMatrix<f64>,
    w_out: DMatrix<f64>,
    t_out: DMatrix<f64>,
}

impl Propagator {
    fn new(lgl: &Lgl, q: f64) -> Result<Self> {
        let n = lgl.len();
        let m = n - 2;
        let di = lgl.d.columns(1, m).into_owned();
        let wdiag = DMatrix::from_diagonal(&DVector::from_vec(lgl.weights.clone()));
        let mut a = di.transpose() * &wdiag * &di / q;
        for i in 0..m {
            a[(i, i)] += lgl.weights[i + 1];
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Numerical("channel mass matrix is not positive definite".into()))?;
        let l = chol.l();
        let sw: Vec<f64> = lgl.weights[1..n - 1].iter().map(|w| w.sqrt()).collect();
        let swd = DMatrix::from_diagonal(&DVector::from_vec(sw.clone()));
        let b = l
            .solve_lower_triangular(&swd)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let svd = b.svd(true, true);
        let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
        let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
        let w_in = u.transpose() * l.transpose();
        let t_in = &vt * &swd;
        let lt_inv_u = l
            .transpose()
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let inv_sw = DMatrix::from_diagonal(&DVector::from_vec(sw.iter().map(|s| 1.0 / s).collect()));
        let t_out = inv_sw * vt.transpose();
        Ok(Propagator { sigma: svd.singular_values, w_in, t_in, w_out: lt_inv_u, t_out })
    }

    /// Advances interior `(ŵ, θ̂)` by the rotation with phase `σ·s`.
    fn apply(&self, w: &mut [C64], theta: &mut [C64], s: f64) {
        let y = matvec(&self.w_in, w);
        let th = matvec(&self.t_in, theta);
        let m = y.len();
        let mut y2 = vec![ZERO; m];
        let mut th2 = vec![ZERO; m];
        for i in 0..m {
            let (sn, cs) = (self.sigma[i] * s).sin_cos();
            y2[i] = y[i] * cs + th[i] * sn;
            th2[i] = -y[i] * sn + th[i] * cs;
        }
        w.copy_from_slice(&matvec(&self.w_out, &y2));
        theta.copy_from_slice(&matvec(&self.t_out, &th2));
    }
}

fn matvec(m: &DMatrix<f64>, x: &[C64]) -> Vec<C64> {
    let (r, c) = m.shape();
    let mut out = vec![ZERO; r];
    for j in 0..c {
        let xj = x[j];
        for (i, o) in out.iter_mut().enumerate() {
            *o += xj * m[(i, j)];
        }
    }
    out
}

/// Wall traces of `∂z v`, `∂z² w` and `∂z² θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceReport {
    pub t: f64,
    pub dz_v_bottom: [SpectralField2D; 2],
    pub dz_v_top: [SpectralField2D; 2],
    pub dzz_w_bottom: SpectralField2D,
    pub dzz_w_top: SpectralField2D,
    pub dzz_theta_bottom: SpectralField2D,
    pub dzz_theta_top: SpectralField2D,
}

impl TraceReport {
    fn zeros(grid: &GridSpec, t: f64) -> Self {
        let z = SpectralField2D::zeros(grid.nx, grid.ny);
        TraceReport {
            t,
            dz_v_bottom: [z.clone(), z.clone()],
            dz_v_top: [z.clone(), z.clone()],
            dzz_w_bottom: z.clone(),
            dzz_w_top: z.clone(),
            dzz_theta_bottom: z.clone(),
            dzz_theta_top: z,
        }
    }

    /// Largest coefficient difference over all six traces.
    pub fn max_diff(&self, other: &TraceReport) -> f64 {
        let pairs = [
            (&self.dz_v_bottom[0], &other.dz_v_bottom[0]),
            (&self.dz_v_bottom[1], &other.dz_v_bottom[1]),
            (&self.dz_v_top[0], &other.dz_v_top[0]),
            (&self.dz_v_top[1], &other.dz_v_top[1]),
            (&self.dzz_w_bottom, &other.dzz_w_bottom),
            (&self.dzz_w_top, &other.dzz_w_top),
            (&self.dzz_theta_bottom, &other.dzz_theta_bottom),
            (&self.dzz_theta_top, &other.dzz_theta_top),
        ];
        pairs
            .iter()
            .flat_map(|(a, b)| a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max)
    }
}

/// Physical sup over 𝕋² of a trace, with a vector trace measured by its
/// Euclidean length.
pub fn sup_physical(fields: &[&SpectralField2D]) -> f64 {
    let fft = Fft2::new(fields[0].nx, fields[0].ny);
    let samples: Vec<Vec<f64>> = fields.iter().map(|f| fft.inverse(f)).collect();
    (0..samples[0].len())
        .map(|i| samples.iter().map(|s| s[i] * s[i]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Solver holding the z-grid and the propagator cache. The cache is keyed by
/// `|k|²` only; `ε` enters through the rotation phase.
#[derive(Clone, Debug)]
pub struct BulkSolver {
    pub grid: GridSpec,
    pub lgl: Lgl,
    cache: BTreeMap<i64, Propagator>,
}

impl BulkSolver {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        grid.validate()?;
        Ok(BulkSolver { grid: grid.clone(), lgl: Lgl::new(grid.nz), cache: BTreeMap::new() })
    }

    fn check(&self, state: &BulkState) -> Result<()> {
        if state.grid != self.grid {
            return Err(Error::Config("state grid differs from solver grid".into()));
        }
        Ok(())
    }

    fn ensure(&mut self, modes: &[[i32; 2]]) -> Result<()> {
        for k in modes {
            let q = (k[0] * k[0] + k[1] * k[1]) as i64;
            if q > 0 && !self.cache.contains_key(&q) {
                let p = Propagator::new(&self.lgl, q as f64)?;
                self.cache.insert(q, p);
            }
        }
        Ok(())
    }

    /// Advances every mode by `dt` with the exact propagator.
    pub fn step(&mut self, state: &BulkState, dt: f64) -> Result<BulkState> {
        self.check(state)?;
        if !(dt >= 0.0) {
            return Err(Error::Config(format!("dt must be nonnegative, got {dt}")));
        }
        self.ensure(&state.modes)?;
        let nz = state.nz();
        let mut out = state.clone();
        let s = dt / state.eps;
        for (idx, k) in state.modes.iter().enumerate() {
            let q = (k[0] * k[0] + k[1] * k[1]) as i64;
            if q == 0 {
                continue;
            }
            let prop = &self.cache[&q];
            let mut w = BulkState::row(&state.w, idx)[1..nz - 1].to_vec();
            let mut th = BulkState::row(&state.theta, idx)[1..nz - 1].to_vec();
            prop.apply(&mut w, &mut th, s);
            let kn = (q as f64).sqrt();
            let (hx, hy) = (k[0] as f64 / kn, k[1] as f64 / kn);
            let toroidal: Vec<C64> = (0..nz)
                .map(|j| -state.v1[[idx, j]] * hy + state.v2[[idx, j]] * hx)
                .collect();
            let mut wfull = vec![ZERO; nz];
            wfull[1..nz - 1].copy_from_slice(&w);
            let (v1, v2) = velocity_from_w(&self.lgl, *k, &wfull, &toroidal);
            for j in 0..nz {
                out.v1[[idx, j]] = v1[j];
                out.v2[[idx, j]] = v2[j];
                out.w[[idx, j]] = wfull[j];
            }
            for j in 1..nz - 1 {
                out.theta[[idx, j]] = th[j - 1];
            }
        }
        out.t = state.t + dt;
        Ok(out)
    }

    /// `∫_Ω |v|² + w² + θ²` by LGL quadrature.
    pub fn energy(&self, state: &BulkState) -> f64 {
        let wts = &self.lgl.weights;
        let mut e = 0.0;
        for idx in 0..state.modes.len() {
            for (j, wj) in wts.iter().enumerate() {
                e += wj
                    * (state.v1[[idx, j]].norm_sqr()
                        + state.v2[[idx, j]].norm_sqr()
                        + state.w[[idx, j]].norm_sqr()
                        + state.theta[[idx, j]].norm_sqr());
            }
        }
        4.0 * PI * PI * e
    }

    /// Largest `|i k·v̂ + Dŵ|` over modes and nodes, relative to the largest
    /// `|Dŵ|` (absolute when the state has no vertical motion).
    pub fn divergence_residual(&self, state: &BulkState) -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (idx, k) in state.modes.iter().enumerate() {
            let dw = Lgl::apply(&self.lgl.d, &BulkState::row(&state.w, idx));
            for (j, d) in dw.iter().enumerate() {
                let div = I * (state.v1[[idx, j]] * k[0] as f64 + state.v2[[idx, j]] * k[1] as f64) + d;
                worst = worst.max(div.norm());
                scale = scale.max(d.norm());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }

    /// Largest `|ŵ|` at either wall.
    pub fn wall_normal_velocity(&self, state: &BulkState) -> f64 {
        let nz = state.nz();
        (0..state.modes.len())
            .map(|i| state.w[[i, 0]].norm().max(state.w[[i, nz - 1]].norm()))
            .fold(0.0, f64::max)
    }

    /// Wall traces from the spectral differentiation rows.
    pub fn boundary_trace_diagnostics(&self, state: &BulkState) -> TraceReport {
        let g = &state.grid;
        let nz = state.nz();
        let mut rep = TraceReport::zeros(g, state.t);
        for (idx, k) in state.modes.iter().enumerate() {
            let v1 = BulkState::row(&state.v1, idx);
            let v2 = BulkState::row(&state.v2, idx);
            let w = BulkState::row(&state.w, idx);
            let th = BulkState::row(&state.theta, idx);
            let (d, d2) = (&self.lgl.d, &self.lgl.d2);
            for (wall, j) in [(0usize, 0usize), (1, nz - 1)] {
                let dv1 = Lgl::apply_row(d, j, &v1);
                let dv2 = Lgl::apply_row(d, j, &v2);
                let dw = Lgl::apply_row(d2, j, &w);
                let dt = Lgl::apply_row(d2, j, &th);
                if wall == 0 {
                    rep.dz_v_bottom[0].set(*k, dv1);
                    rep.dz_v_bottom[1].set(*k, dv2);
                    rep.dzz_w_bottom.set(*k, dw);
                    rep.dzz_theta_bottom.set(*k, dt);
                } else {
                    rep.dz_v_top[0].set(*k, dv1);
                    rep.dz_v_top[1].set(*k, dv2);
                    rep.dzz_w_top.set(*k, dw);
                    rep.dzz_theta_top.set(*k, dt);
                }
            }
        }
        rep
    }

    /// Closed-form wall traces at time `t` from the initial traces:
    /// `∂z²w(t) = ∂z²w₀ + (t/ε)Δθ₀`, `∂z²θ(t) = ∂z²θ₀ − (t/ε)∂z²w₀ − (t²/2ε²)Δθ₀`
    /// and `∂z v(t) = ∂z v₀ − (t/ε)∇θ₀`.
    pub fn predicted_traces(&self, init: &BulkState, t: f64) -> TraceReport {
        let base = self.boundary_trace_diagnostics(init);
        let nz = init.nz();
        let s = t / init.eps;
        let mut rep = base.clone();
        rep.t = init.t + t;
        for (idx, k) in init.modes.iter().enumerate() {
            let q = (k[0] * k[0] + k[1] * k[1]) as f64;
            for (wall, j) in [(0usize, 0usize), (1, nz - 1)] {
                let th = init.theta[[idx, j]];
                let lap = -th * q;
                let gx = I * th * k[0] as f64;
                let gy = I * th * k[1] as f64;
                let (dv, dw, dt, out_v, out_w, out_t) = if wall == 0 {
                    (
                        [base.dz_v_bottom[0].get(*k), base.dz_v_bottom[1].get(*k)],
                        base.dzz_w_bottom.get(*k),
                        base.dzz_theta_bottom.get(*k),
                        &mut rep.dz_v_bottom,
                        &mut rep.dzz_w_bottom,
                        &mut rep.dzz_theta_bottom,
                    )
                } else {
                    (
                        [base.dz_v_top[0].get(*k), base.dz_v_top[1].get(*k)],
                        base.dzz_w_top.get(*k),
                        base.dzz_theta_top.get(*k),
                        &mut rep.dz_v_top,
                        &mut rep.dzz_w_top,
                        &mut rep.dzz_theta_top,
                    )
                };
                out_w.set(*k, dw + lap * s);
                out_t.set(*k, dt - dw * s - lap * (0.5 * s * s));
                out_v[0].set(*k, dv[0] - gx * s);
                out_v[1].set(*k, dv[1] - gy * s);
            }
        }
        rep
    }

    /// Pressure profile for one mode.
    pub fn solve_pressure(&self, theta: &[C64], k: [i32; 2]) -> Result<Vec<C64>> {
        solve_pressure(&self.lgl, theta, k)
    }
}

/// Solves `p'' − |k|²p = θ'` with `p'(0) = θ(0)`, `p'(1) = θ(1)` on the LGL
/// grid; for `k = 0` the gauge `∫p = 0` is imposed through a bordered system.
pub fn solve_pressure(lgl: &Lgl, theta: &[C64], k: [i32; 2]) -> Result<Vec<C64>> {
    let n = lgl.len();
    if theta.len() != n {
        return Err(Error::Config(format!("theta profile must have Nz = {n} points")));
    }
    let q = (k[0] * k[0] + k[1] * k[1]) as f64;
    let dth = Lgl::apply(&lgl.d, theta);
    let gauge = q == 0.0;
    let size = if gauge { n + 1 } else { n };
    let mut m = DMatrix::<f64>::zeros(size, size);
    let mut rhs_re = DVector::<f64>::zeros(size);
    let mut rhs_im = DVector::<f64>::zeros(size);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = if i == 0 || i == n - 1 {
                lgl.d[(i, j)]
            } else {
                lgl.d2[(i, j)] - if i == j { q } else { 0.0 }
            };
        }
        let r = if i == 0 || i == n - 1 { theta[i] } else { dth[i] };
        rhs_re[i] = r.re;
        rhs_im[i] = r.im;
    }
    if gauge {
        for j in 0..n {
            m[(n, j)] = lgl.weights[j];
            m[(j, n)] = 1.0;
        }
    }
    let lu = m.lu();
    let re = lu
        .solve(&rhs_re)
        .ok_or_else(|| Error::Numerical("singular pressure matrix".into()))?;
    let im = lu
        .solve(&rhs_im)
        .ok_or_else(|| Error::Numerical("singular pressure matrix".into()))?;
    Ok((0..n).map(|j| C64::new(re[j], im[j])).collect())
}

/// Fitted log-log exponent of one trace quantity.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingFit {
    pub quantity: String,
    pub values: Vec<f64>,
    pub slope: f64,
    pub residual: f64,
    /// Values below this were clamped to it before fitting.
    pub floor: f64,
    pub at_noise_floor: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub eps: Vec<f64>,
    pub t_probe: f64,
    pub fits: Vec<ScalingFit>,
}

impl ScalingReport {
    pub fn fit(&self, name: &str) -> Option<&ScalingFit> {
        self.fits.iter().find(|f| f.quantity == name)
    }
}

/// Relative noise floor for scaling fits, against the column amplitude.
/// Second wall derivatives carry round-off growing like `Nz⁴ ε_mach`, about
/// `3e-6` of the amplitude at `Nz = 129`.
pub const SCALING_FLOOR: f64 = 1e-5;

/// Least-squares slope and RMS residual of `y` against `x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let res = (x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (my + slope * (a - mx));
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, res)
}

/// Evolves `init` to `t_probe` for each `ε` and fits the bottom-wall trace
/// magnitudes against `ε` on log-log axes.
pub fn scaling_study(
    solver: &mut BulkSolver,
    init: &BulkState,
    eps_list: &[f64],
    t_probe: f64,
) -> Result<ScalingReport> {
    if eps_list.len() < 3 {
        return Err(Error::Config(format!(
            "scaling study needs at least 3 eps values, got {}",
            eps_list.len()
        )));
    }
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config("eps values must be positive".into()));
    }
    let amp = (solver.energy(init) / (4.0 * PI * PI)).sqrt();
    let floor = SCALING_FLOOR * amp;
    let mut w_vals = Vec::new();
    let mut t_vals = Vec::new();
    let mut v_vals = Vec::new();
    for &eps in eps_list {
        let mut s0 = init.clone();
        s0.eps = eps;
        let s = solver.step(&s0, t_probe)?;
        let rep = solver.boundary_trace_diagnostics(&s);
        w_vals.push(sup_physical(&[&rep.dzz_w_bottom]));
        t_vals.push(sup_physical(&[&rep.dzz_theta_bottom]));
        v_vals.push(sup_physical(&[&rep.dz_v_bottom[0], &rep.dz_v_bottom[1]]));
    }
    let lx: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
    let fit = |name: &str, vals: Vec<f64>| {
        let at_floor = vals.iter().any(|v| *v <= floor);
        let ly: Vec<f64> = vals.iter().map(|v| v.max(floor).max(f64::MIN_POSITIVE).ln()).collect();
        let (slope, residual) = loglog_fit(&lx, &ly);
        ScalingFit { quantity: name.into(), values: vals, slope, residual, floor, at_noise_floor: at_floor }
    };
    Ok(ScalingReport {
        eps: eps_list.to_vec(),
        t_probe,
        fits: vec![fit("dzz_w", w_vals), fit("dzz_theta", t_vals), fit("dz_v", v_vals)],
    })
}

/// Named single-mode initial data on `k = (1, 0)`, real part `cos x`.
pub mod recipes {
    use super::*;

    fn build(
        solver: &BulkSolver,
        eps: f64,
        w: impl Fn(f64) -> f64,
        theta: impl Fn(f64) -> f64,
    ) -> Result<BulkState> {
        let z = &solver.lgl.nodes;
        let half = |f: &dyn Fn(f64) -> f64| z.iter().map(|&x| C64::new(0.5 * f(x), 0.0)).collect::<Vec<_>>();
        let mut s = BulkState::zeros(&solver.grid, eps);
        s.set_mode(&solver.lgl, [1, 0], &half(&w), &half(&theta), &vec![ZERO; z.len()])?;
        Ok(s)
    }

    /// `θ = a e^z(1+z²) cos x`, `w = a z(1−z) sin(2z+0.3) cos x`: every wall
    /// trace is nonzero.
    pub fn generic(solver: &BulkSolver, eps: f64, a: f64) -> Result<BulkState> {
        build(solver, eps, move |z| a * z * (1.0 - z) * (2.0 * z + 0.3).sin(), move |z| a * z.exp() * (1.0 + z * z))
    }

    /// `θ = a(1+z³) cos x`, `w = a z³(1−z)³ cos x`: `Δ_hθ ≠ 0` at `z = 0`
    /// while the initial `∂_z²θ`, `∂_z²w`, `∂_z v` traces vanish there, so
    /// each bottom trace is a single power of `1/ε`.
    pub fn wall_forced(solver: &BulkSolver, eps: f64, a: f64) -> Result<BulkState> {
        build(solver, eps, move |z| a * (z * (1.0 - z)).powi(3), move |z| a * (1.0 + z * z * z))
    }

    /// `θ = a sin(πz) cos x`, `w = 0`: even z-derivatives of θ and w vanish
    /// at both walls.
    pub fn invariant(solver: &BulkSolver, eps: f64, a: f64) -> Result<BulkState> {
        build(solver, eps, |_| 0.0, move |z| a * (PI * z).sin())
    }

    /// `θ = a cos x`, `w = 0`.
    pub fn constant_theta(solver: &BulkSolver, eps: f64, a: f64) -> Result<BulkState> {
        build(solver, eps, |_| 0.0, move |_| a)
    }
}

/// Convenience wrapper building a throwaway solver.
pub fn step_linear_bulk(state: &BulkState, dt: f64) -> Result<BulkState> {
    BulkSolver::new(&state.grid)?.step(state, dt)
}
