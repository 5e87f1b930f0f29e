//! Physical-space collocation solver for one frozen self-transport step.
//!
//! Fields live on the `Nx × Ny` torus nodes times the η-grid, stored as
//! `points × Neta` matrices. Horizontal derivatives use the dense Fourier
//! differentiation matrix, truncation uses the dense projector onto
//! `|kx|, |ky| ≤ kmax`, and the pressure-type corrections come from a
//! pseudo-inverse of the dense horizontal Laplacian. No FFT is involved.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use stratbl::grids::fd4_stencil;
use stratbl::linear_bl::BLState;
use stratbl::GridSpec;

pub struct Collocation {
    nx: usize,
    ny: usize,
    neta: usize,
    h: f64,
    l: f64,
    dx: DMatrix<f64>,
    dy: DMatrix<f64>,
    proj: DMatrix<f64>,
    lap_pinv: DMatrix<f64>,
}

type Fields = [DMatrix<f64>; 3];

fn diff_matrix(n: usize) -> DMatrix<f64> {
    let step = 2.0 * PI / n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            let d = i as f64 - j as f64;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            0.5 * sign / (0.5 * d * step).tan()
        }
    })
}

fn proj_matrix(n: usize, kmax: i32) -> DMatrix<f64> {
    let step = 2.0 * PI / n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        let d = (i as f64 - j as f64) * step;
        (1.0 + 2.0 * (1..=kmax).map(|k| (k as f64 * d).cos()).sum::<f64>()) / n as f64
    })
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |i, j| {
        a[(i / b.nrows(), j / b.ncols())] * b[(i % b.nrows(), j % b.ncols())]
    })
}

impl Collocation {
    pub fn new(grid: &GridSpec) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let ix = DMatrix::identity(nx, nx);
        let iy = DMatrix::identity(ny, ny);
        let dx = kron(&diff_matrix(nx), &iy);
        let dy = kron(&ix, &diff_matrix(ny));
        let proj = kron(&proj_matrix(nx, grid.kmax_x()), &proj_matrix(ny, grid.kmax_y()));
        let lap = &dx * &dx + &dy * &dy;
        let lap_pinv = lap.pseudo_inverse(1e-9).expect("pseudo-inverse");
        Collocation {
            nx,
            ny,
            neta: grid.neta,
            h: grid.eta_step(),
            l: grid.l_eta,
            dx,
            dy,
            proj,
            lap_pinv,
        }
    }

    fn nodes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for i in 0..self.nx {
            for j in 0..self.ny {
                out.push((2.0 * PI * i as f64 / self.nx as f64, 2.0 * PI * j as f64 / self.ny as f64));
            }
        }
        out
    }

    /// Direct summation of the retained Fourier series.
    pub fn to_physical(&self, s: &BLState) -> Fields {
        let nodes = self.nodes();
        let conv = |a: &ndarray::Array2<Complex64>| {
            DMatrix::from_fn(nodes.len(), self.neta, |p, j| {
                let (x, y) = nodes[p];
                s.modes
                    .iter()
                    .enumerate()
                    .map(|(idx, k)| (a[[idx, j]] * Complex64::from_polar(1.0, k[0] as f64 * x + k[1] as f64 * y)).re)
                    .sum()
            })
        };
        [conv(&s.v1), conv(&s.v2), conv(&s.theta)]
    }

    /// Direct DFT back to the retained coefficients.
    pub fn to_spectral(&self, f: &Fields, like: &BLState) -> BLState {
        let nodes = self.nodes();
        let np = nodes.len() as f64;
        let mut out = like.clone();
        for (comp, a) in [&mut out.v1, &mut out.v2, &mut out.theta].into_iter().enumerate() {
            for (idx, k) in like.modes.iter().enumerate() {
                for j in 0..self.neta {
                    let mut c = Complex64::new(0.0, 0.0);
                    for (p, (x, y)) in nodes.iter().enumerate() {
                        c += f[comp][(p, j)] * Complex64::from_polar(1.0, -(k[0] as f64 * x + k[1] as f64 * y));
                    }
                    a[[idx, j]] = c / np;
                }
            }
        }
        out
    }

    fn deta(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(f.nrows(), self.neta, |p, i| {
            let (s, w) = fd4_stencil(i, self.neta);
            w.iter().enumerate().map(|(q, wq)| wq * f[(p, s + q)]).sum::<f64>() / self.h
        })
    }

    fn cumulative(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(f.nrows(), self.neta);
        for p in 0..f.nrows() {
            for j in 1..self.neta {
                out[(p, j)] = out[(p, j - 1)] + 0.5 * self.h * (f[(p, j - 1)] + f[(p, j)]);
            }
        }
        out
    }

    fn eta_mean(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.neta;
        DMatrix::from_fn(f.nrows(), 1, |p, _| {
            let inner: f64 = (1..n - 1).map(|j| f[(p, j)]).sum();
            (inner + 0.5 * (f[(p, 0)] + f[(p, n - 1)])) * self.h / self.l
        })
    }

    fn broadcast(&self, col: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(col.nrows(), self.neta, |p, _| col[(p, 0)])
    }

    /// Removes the horizontal gradient that carries the depth-mean divergence.
    fn remove_mean_divergence(&self, a: &mut DMatrix<f64>, b: &mut DMatrix<f64>) {
        let div = &self.dx * &*a + &self.dy * &*b;
        let q = &self.lap_pinv * self.eta_mean(&div);
        *a -= self.broadcast(&(&self.dx * &q));
        *b -= self.broadcast(&(&self.dy * &q));
    }

    fn rate(&self, u: &Fields, vo: &Fields, wo: &DMatrix<f64>) -> Fields {
        let [v1, v2, th] = u;
        let big = self.cumulative(th);
        let pot = &big - self.broadcast(&self.eta_mean(&big));
        let mut r1 = -(&self.dx * &pot);
        let mut r2 = -(&self.dy * &pot);
        let r3 = self.cumulative(&(&self.dx * v1 + &self.dy * v2));
        let transport = |f: &DMatrix<f64>| {
            let raw = vo[0].component_mul(&(&self.dx * f)) + vo[1].component_mul(&(&self.dy * f)) + wo.component_mul(&self.deta(f));
            &self.proj * raw
        };
        let (mut n1, mut n2, n3) = (transport(v1), transport(v2), transport(th));
        self.remove_mean_divergence(&mut n1, &mut n2);
        r1 -= n1;
        r2 -= n2;
        [r1, r2, r3 - n3]
    }

    /// One RK4 step of size `dt` with the transport field frozen at `s`,
    /// followed by the depth-mean divergence correction.
    pub fn frozen_self_step(&self, s: &BLState, dt: f64) -> BLState {
        let u0 = self.to_physical(s);
        let wo = -self.cumulative(&(&self.dx * &u0[0] + &self.dy * &u0[1]));
        let axpy = |u: &Fields, k: &Fields, c: f64| -> Fields {
            [&u[0] + &k[0] * c, &u[1] + &k[1] * c, &u[2] + &k[2] * c]
        };
        let k1 = self.rate(&u0, &u0, &wo);
        let k2 = self.rate(&axpy(&u0, &k1, 0.5 * dt), &u0, &wo);
        let k3 = self.rate(&axpy(&u0, &k2, 0.5 * dt), &u0, &wo);
        let k4 = self.rate(&axpy(&u0, &k3, dt), &u0, &wo);
        let mut out: Fields = std::array::from_fn(|c| &u0[c] + (&k1[c] + &k2[c] * 2.0 + &k3[c] * 2.0 + &k4[c]) * (dt / 6.0));
        let [a, b, _] = &mut out;
        self.remove_mean_divergence(a, b);
        let mut res = self.to_spectral(&out, s);
        res.t = s.t + dt;
        res
    }
}

/// Largest coefficient gap relative to the largest coefficient of `a`.
pub fn relative_gap(a: &BLState, b: &BLState) -> f64 {
    let scale = a.max_abs();
    a.sub(b).max_abs() / scale
}

/// Two-mode compatible layer data of amplitude `a`.
pub fn two_mode_layer(grid: &GridSpec, a: f64) -> BLState {
    let mut s = BLState::zeros(grid);
    s.add_cosine_mode([1, 0], move |e| a * (1.0 - 2.0 * e) * (-2.0 * e).exp(), |_| 0.0, move |e| a * (-2.0 * e).exp())
        .unwrap();
    s.add_cosine_mode([1, 1], move |e| a * e * (-3.0 * e).exp(), move |e| -a * (-2.0 * e).exp(), move |e| {
        0.5 * a * e * (-e).exp()
    })
    .unwrap();
    s.add_cosine_mode([0, 2], move |e| 0.7 * a * (-e).exp(), move |e| 0.3 * a * e * (-2.0 * e).exp(), |_| 0.0).unwrap();
    stratbl::linear_bl::project_compat(&s)
}
