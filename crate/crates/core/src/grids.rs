//! Discrete representations shared by the solvers: horizontal Fourier
//! transforms on the 2-torus, the uniform η-grid with its quadratures and
//! difference stencils, and the Legendre–Gauss–Lobatto z-grid.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative size of `|f(L_eta)|` against `sup|f|` above which a profile counts
/// as not decayed.
pub const DECAY_THRESHOLD: f64 = 1e-10;

/// Discretization parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub neta: usize,
    pub l_eta: f64,
    pub dealias_fraction: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nx: 32,
            ny: 32,
            nz: 129,
            neta: 256,
            l_eta: 20.0,
            dealias_fraction: 2.0 / 3.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.nx % 2 != 0 {
            return Err(Error::Config(format!("Nx must be even and >= 4, got {}", self.nx)));
        }
        if self.ny < 4 || self.ny % 2 != 0 {
            return Err(Error::Config(format!("Ny must be even and >= 4, got {}", self.ny)));
        }
        if self.nz < 8 {
            return Err(Error::Config(format!("Nz must be >= 8, got {}", self.nz)));
        }
        if self.neta < 8 {
            return Err(Error::Config(format!("Neta must be >= 8, got {}", self.neta)));
        }
        if !(self.l_eta > 0.0) || !self.l_eta.is_finite() {
            return Err(Error::Config(format!("L_eta must be positive, got {}", self.l_eta)));
        }
        if !(self.dealias_fraction > 0.0 && self.dealias_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "dealias_fraction must lie in (0, 1], got {}",
                self.dealias_fraction
            )));
        }
        Ok(())
    }

    /// Largest retained |kx|. The Nyquist mode is never retained.
    pub fn kmax_x(&self) -> i32 {
        kmax(self.nx, self.dealias_fraction)
    }

    pub fn kmax_y(&self) -> i32 {
        kmax(self.ny, self.dealias_fraction)
    }

    /// Spacing of the uniform η-grid.
    pub fn eta_step(&self) -> f64 {
        self.l_eta / (self.neta - 1) as f64
    }

    pub fn eta_nodes(&self) -> Vec<f64> {
        let h = self.eta_step();
        (0..self.neta).map(|j| j as f64 * h).collect()
    }

    /// Retained wavevectors, sorted by (kx, ky).
    pub fn retained_modes(&self) -> Vec<[i32; 2]> {
        let (kx, ky) = (self.kmax_x(), self.kmax_y());
        let mut out = Vec::with_capacity(((2 * kx + 1) * (2 * ky + 1)) as usize);
        for a in -kx..=kx {
            for b in -ky..=ky {
                out.push([a, b]);
            }
        }
        out
    }

    /// Index of `k` in [`GridSpec::retained_modes`].
    pub fn mode_index(&self, k: [i32; 2]) -> Option<usize> {
        if !self.is_retained(k) {
            return None;
        }
        let (kx, ky) = (self.kmax_x(), self.kmax_y());
        Some(((k[0] + kx) * (2 * ky + 1) + (k[1] + ky)) as usize)
    }

    pub fn is_retained(&self, k: [i32; 2]) -> bool {
        k[0].abs() <= self.kmax_x() && k[1].abs() <= self.kmax_y()
    }

    /// Physical collocation points along x and y.
    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.nx).map(|i| 2.0 * PI * i as f64 / self.nx as f64).collect()
    }

    pub fn y_nodes(&self) -> Vec<f64> {
        (0..self.ny).map(|i| 2.0 * PI * i as f64 / self.ny as f64).collect()
    }
}

fn kmax(n: usize, frac: f64) -> i32 {
    let k = (frac * (n / 2) as f64 + 1e-9).floor() as i32;
    k.min(n as i32 / 2 - 1)
}

/// Position of wavenumber `k` in FFT ordering of length `n`.
pub fn fft_slot(k: i32, n: usize) -> usize {
    k.rem_euclid(n as i32) as usize
}

/// Signed wavenumber stored at FFT slot `i`.
pub fn signed_wavenumber(i: usize, n: usize) -> i32 {
    if i <= n / 2 {
        i as i32
    } else {
        i as i32 - n as i32
    }
}

/// Horizontal Fourier coefficients of a real field on the 2-torus, all
/// `nx * ny` slots in FFT order (row-major in x then y).
///
/// Coefficients use `c_k = (1/(nx ny)) Σ f(x) e^{-i k·x}`, so `cos x` has
/// `c_{±1,0} = 1/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField2D {
    pub nx: usize,
    pub ny: usize,
    pub coeffs: Vec<C64>,
}

impl SpectralField2D {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        SpectralField2D { nx, ny, coeffs: vec![C64::new(0.0, 0.0); nx * ny] }
    }

    fn slot(&self, k: [i32; 2]) -> usize {
        fft_slot(k[0], self.nx) * self.ny + fft_slot(k[1], self.ny)
    }

    pub fn get(&self, k: [i32; 2]) -> C64 {
        self.coeffs[self.slot(k)]
    }

    pub fn set(&mut self, k: [i32; 2], c: C64) {
        let s = self.slot(k);
        self.coeffs[s] = c;
    }

    /// Builds a field from values on a list of wavevectors.
    pub fn from_modes(nx: usize, ny: usize, modes: &[[i32; 2]], values: &[C64]) -> Self {
        let mut f = Self::zeros(nx, ny);
        for (k, v) in modes.iter().zip(values) {
            f.set(*k, *v);
        }
        f
    }

    pub fn to_modes(&self, modes: &[[i32; 2]]) -> Vec<C64> {
        modes.iter().map(|k| self.get(*k)).collect()
    }

    /// Zeroes every coefficient outside the retained set of `grid`.
    pub fn truncate(&mut self, grid: &GridSpec) {
        for i in 0..self.nx {
            for j in 0..self.ny {
                let k = [signed_wavenumber(i, self.nx), signed_wavenumber(j, self.ny)];
                if !grid.is_retained(k) {
                    self.coeffs[i * self.ny + j] = C64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Largest `|c(-k) - conj(c(k))|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.nx {
            for j in 0..self.ny {
                let k = [signed_wavenumber(i, self.nx), signed_wavenumber(j, self.ny)];
                let d = (self.get([-k[0], -k[1]]) - self.get(k).conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// `∫_{T²} |f|² = 4π² Σ |c_k|²`.
    pub fn l2_norm_sq(&self) -> f64 {
        4.0 * PI * PI * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }
}

/// FFT plans for one horizontal grid.
#[derive(Clone)]
pub struct Fft2 {
    pub nx: usize,
    pub ny: usize,
    fx: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.nx, self.ny)
    }
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut p = FftPlanner::new();
        Fft2 {
            nx,
            ny,
            fx: p.plan_fft_forward(nx),
            fy: p.plan_fft_forward(ny),
            ix: p.plan_fft_inverse(nx),
            iy: p.plan_fft_inverse(ny),
        }
    }

    fn transform(&self, data: &mut [C64], along_y: &Arc<dyn Fft<f64>>, along_x: &Arc<dyn Fft<f64>>) {
        let (nx, ny) = (self.nx, self.ny);
        for row in data.chunks_exact_mut(ny) {
            along_y.process(row);
        }
        let mut col = vec![C64::new(0.0, 0.0); nx];
        for j in 0..ny {
            for i in 0..nx {
                col[i] = data[i * ny + j];
            }
            along_x.process(&mut col);
            for i in 0..nx {
                data[i * ny + j] = col[i];
            }
        }
    }

    /// In place: physical samples to normalized coefficients.
    pub fn forward_in_place(&self, data: &mut [C64]) {
        self.transform(data, &self.fy, &self.fx);
        let s = 1.0 / (self.nx * self.ny) as f64;
        for c in data.iter_mut() {
            *c *= s;
        }
    }

    /// In place: coefficients to physical samples, `f(x) = Σ c_k e^{i k·x}`.
    pub fn inverse_in_place(&self, data: &mut [C64]) {
        self.transform(data, &self.iy, &self.ix);
    }

    pub fn forward(&self, samples: &[f64]) -> SpectralField2D {
        let mut data: Vec<C64> = samples.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.forward_in_place(&mut data);
        SpectralField2D { nx: self.nx, ny: self.ny, coeffs: data }
    }

    pub fn inverse(&self, field: &SpectralField2D) -> Vec<f64> {
        let mut data = field.coeffs.clone();
        self.inverse_in_place(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }
}

/// Physical samples (row-major, x then y) to coefficients. All modes are
/// kept, so the round trip is exact to round-off.
pub fn forward_transform(grid: &GridSpec, samples: &[f64]) -> Result<SpectralField2D> {
    if samples.len() != grid.nx * grid.ny {
        return Err(Error::Config(format!(
            "sample count {} does not match Nx*Ny = {}",
            samples.len(),
            grid.nx * grid.ny
        )));
    }
    Ok(Fft2::new(grid.nx, grid.ny).forward(samples))
}

pub fn inverse_transform(field: &SpectralField2D) -> Vec<f64> {
    Fft2::new(field.nx, field.ny).inverse(field)
}

/// Pointwise product followed by truncation to the retained set.
pub fn dealiased_product(grid: &GridSpec, a: &[f64], b: &[f64]) -> Result<SpectralField2D> {
    if a.len() != b.len() {
        return Err(Error::Config("product operands differ in size".into()));
    }
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mut f = forward_transform(grid, &prod)?;
    f.truncate(grid);
    Ok(f)
}

/// Samples `f(x, y)` on the collocation grid, row-major.
pub fn sample_physical(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let xs = grid.x_nodes();
    let ys = grid.y_nodes();
    let mut out = Vec::with_capacity(grid.nx * grid.ny);
    for &x in &xs {
        for &y in &ys {
            out.push(f(x, y));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// η-grid calculus

/// Cumulative trapezoid `∫_0^{η_j} f`.
pub fn eta_integral_up(f: &[C64], h: f64) -> Vec<C64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = C64::new(0.0, 0.0);
    out.push(acc);
    for j in 1..f.len() {
        acc += (f[j - 1] + f[j]) * (0.5 * h);
        out.push(acc);
    }
    out
}

/// Trapezoid rule over the whole grid.
pub fn trapz(f: &[C64], h: f64) -> C64 {
    let n = f.len();
    if n < 2 {
        return C64::new(0.0, 0.0);
    }
    let inner: C64 = f[1..n - 1].iter().sum();
    (inner + (f[0] + f[n - 1]) * 0.5) * h
}

/// Tail integral with a flag for profiles that have not decayed at `L_eta`.
#[derive(Clone, Debug)]
pub struct TailIntegral {
    pub values: Vec<C64>,
    pub truncation_warning: bool,
}

/// `∫_{η_j}^{L_eta} f`, computed as the total minus the cumulative integral so
/// that the additivity identity holds exactly.
pub fn eta_integral_tail(f: &[C64], h: f64) -> TailIntegral {
    let up = eta_integral_up(f, h);
    let total = *up.last().unwrap_or(&C64::new(0.0, 0.0));
    let mut values: Vec<C64> = up.iter().map(|u| total - u).collect();
    if let Some(last) = values.last_mut() {
        *last = C64::new(0.0, 0.0);
    }
    TailIntegral { values, truncation_warning: decay_violated(f) }
}

/// True when `|f(L_eta)| > DECAY_THRESHOLD * sup|f|`.
pub fn decay_violated(f: &[C64]) -> bool {
    let sup = f.iter().map(|c| c.norm()).fold(0.0, f64::max);
    match f.last() {
        Some(end) => sup > 0.0 && end.norm() > DECAY_THRESHOLD * sup,
        None => false,
    }
}

/// Five-point fourth-order first-derivative stencil for node `i` of `n`:
/// returns the first node of the stencil and the weights (to be divided by
/// the spacing). Centered in the interior, one-sided near the ends.
pub fn fd4_stencil(i: usize, n: usize) -> (usize, [f64; 5]) {
    const W: [[f64; 5]; 5] = [
        [-25.0, 48.0, -36.0, 16.0, -3.0],
        [-3.0, -10.0, 18.0, -6.0, 1.0],
        [1.0, -8.0, 0.0, 8.0, -1.0],
        [-1.0, 6.0, -18.0, 10.0, 3.0],
        [3.0, -16.0, 36.0, -48.0, 25.0],
    ];
    let (start, p) = if i < 2 {
        (0, i)
    } else if i + 2 >= n {
        (n - 5, i + 5 - n)
    } else {
        (i - 2, 2)
    };
    let mut w = W[p];
    for x in w.iter_mut() {
        *x /= 12.0;
    }
    (start, w)
}

/// Fourth-order finite-difference derivative on a uniform grid (n ≥ 5).
pub fn eta_derivative(f: &[C64], h: f64) -> Vec<C64> {
    let n = f.len();
    assert!(n >= 5, "difference stencil needs at least five points");
    (0..n)
        .map(|i| {
            let (s, w) = fd4_stencil(i, n);
            let mut acc = C64::new(0.0, 0.0);
            for (q, wq) in w.iter().enumerate() {
                acc += f[s + q] * *wq;
            }
            acc / h
        })
        .collect()
}

/// Same stencil applied to a real series.
pub fn derivative_real(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5, "difference stencil needs at least five points");
    (0..n)
        .map(|i| {
            let (s, w) = fd4_stencil(i, n);
            w.iter().enumerate().map(|(q, wq)| f[s + q] * wq).sum::<f64>() / h
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Legendre–Gauss–Lobatto z-grid

/// LGL nodes on [0,1] with quadrature weights and the collocation
/// differentiation matrices.
#[derive(Clone, Debug)]
pub struct Lgl {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub d: DMatrix<f64>,
    pub d2: DMatrix<f64>,
}

impl Lgl {
    pub fn new(npts: usize) -> Self {
        assert!(npts >= 3);
        let n = npts - 1;
        // Newton iteration from Chebyshev–Gauss–Lobatto guesses.
        let mut x: Vec<f64> = (0..npts).map(|j| (PI * j as f64 / n as f64).cos()).collect();
        let mut pn = vec![0.0; npts];
        for _ in 0..100 {
            let mut change: f64 = 0.0;
            for j in 0..npts {
                let (p_n, p_nm1) = legendre_pair(n, x[j]);
                pn[j] = p_n;
                let dx = (x[j] * p_n - p_nm1) / (npts as f64 * p_n);
                x[j] -= dx;
                change = change.max(dx.abs());
            }
            if change < 1e-15 {
                break;
            }
        }
        for j in 0..npts {
            pn[j] = legendre_pair(n, x[j]).0;
        }
        x.reverse();
        pn.reverse();
        x[0] = -1.0;
        x[n] = 1.0;
        let nf = n as f64;
        let w_ref: Vec<f64> = pn.iter().map(|p| 2.0 / (nf * (nf + 1.0) * p * p)).collect();

        let mut d = DMatrix::<f64>::zeros(npts, npts);
        for i in 0..npts {
            let mut row_sum = 0.0;
            for j in 0..npts {
                if i != j {
                    let v = pn[i] / (pn[j] * (x[i] - x[j]));
                    d[(i, j)] = v;
                    row_sum += v;
                }
            }
            d[(i, i)] = -row_sum;
        }
        // Map [-1,1] to [0,1].
        d *= 2.0;
        let nodes: Vec<f64> = x.iter().map(|t| 0.5 * (t + 1.0)).collect();
        let weights: Vec<f64> = w_ref.iter().map(|w| 0.5 * w).collect();
        let d2 = &d * &d;
        Lgl { nodes, weights, d, d2 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Applies a real matrix to a complex vector.
    pub fn apply(m: &DMatrix<f64>, f: &[C64]) -> Vec<C64> {
        let n = f.len();
        (0..m.nrows())
            .map(|i| {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..n {
                    acc += f[j] * m[(i, j)];
                }
                acc
            })
            .collect()
    }

    /// Row `i` of a matrix applied to a complex vector.
    pub fn apply_row(m: &DMatrix<f64>, i: usize, f: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (j, fj) in f.iter().enumerate() {
            acc += *fj * m[(i, j)];
        }
        acc
    }
}

/// `(P_n(x), P_{n-1}(x))` by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}
