//! Polar tensor grids on the unit disk with Chebyshev differentiation in `r`
//! and Fourier differentiation in `theta`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::special::clenshaw_curtis;

/// Chebyshev points `cos(j pi / n)` and the first-derivative matrix
/// (row-major, `(n+1) x (n+1)`).
pub fn cheb(n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = n + 1;
    let x: Vec<f64> = (0..m).map(|j| (PI * j as f64 / n as f64).cos()).collect();
    let c = |j: usize| {
        let base = if j == 0 || j == n { 2.0 } else { 1.0 };
        if j % 2 == 0 {
            base
        } else {
            -base
        }
    };
    let mut d = vec![0.0; m * m];
    for i in 0..m {
        let mut row_sum = 0.0;
        for j in 0..m {
            if i != j {
                let v = c(i) / c(j) / (x[i] - x[j]);
                d[i * m + j] = v;
                row_sum += v;
            }
        }
        // negative-sum trick keeps the diagonal consistent with constants
        d[i * m + i] = -row_sum;
    }
    (x, d)
}

fn matmul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i * m + j] += aik * b[k * m + j];
            }
        }
    }
    out
}

/// Tensor grid on the closed unit disk: Chebyshev-Lobatto nodes in
/// `r in [0, 1]` (ordered from `r = 1` down to `r = 0`) and `n_theta`
/// equispaced angles.
///
/// Fields are stored ring-major: `f[i * n_theta + j] = f(r_i, theta_j)`.
#[derive(Clone, Debug)]
pub struct PolarGrid {
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    /// Clenshaw-Curtis weights for `int_0^1 g(r) dr`.
    pub wr: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl PolarGrid {
    pub fn new(n_r: usize, n_theta: usize) -> Self {
        assert!(n_r >= 2 && n_theta >= 4);
        let (x, d) = cheb(n_r);
        let m = n_r + 1;
        let r: Vec<f64> = x.iter().map(|&x| 0.5 * (1.0 + x)).collect();
        let d1: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
        let d2 = matmul(&d1, &d1, m);
        let wr: Vec<f64> = clenshaw_curtis(n_r).iter().map(|w| 0.5 * w).collect();
        let theta = (0..n_theta)
            .map(|j| 2.0 * PI * j as f64 / n_theta as f64)
            .collect();
        Self {
            r,
            theta,
            wr,
            d1,
            d2,
        }
    }

    pub fn n_r(&self) -> usize {
        self.r.len()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn len(&self) -> usize {
        self.r.len() * self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the `r = 1` ring.
    pub fn boundary_ring(&self) -> usize {
        0
    }

    pub fn sample(&self, f: impl Fn(f64, f64) -> Complex64) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.len());
        for &r in &self.r {
            for &t in &self.theta {
                out.push(f(r, t));
            }
        }
        out
    }

    /// `int_disk g dA` with `dA = r dr dtheta`.
    pub fn integrate(&self, g: &[f64]) -> f64 {
        let nt = self.n_theta();
        let dtheta = 2.0 * PI / nt as f64;
        let mut total = 0.0;
        for (i, (&r, &w)) in self.r.iter().zip(&self.wr).enumerate() {
            let ring: f64 = g[i * nt..(i + 1) * nt].iter().sum();
            total += w * r * ring * dtheta;
        }
        total
    }

    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        let nt = self.n_theta();
        let dtheta = 2.0 * PI / nt as f64;
        let mut total = Complex64::new(0.0, 0.0);
        for (i, (&r, &w)) in self.r.iter().zip(&self.wr).enumerate() {
            let mut ring = Complex64::new(0.0, 0.0);
            for j in 0..nt {
                ring += a[i * nt + j] * b[i * nt + j].conj();
            }
            total += ring * (w * r * dtheta);
        }
        total
    }

    pub fn norm_sq(&self, fields: &[&[Complex64]]) -> f64 {
        let g: Vec<f64> = (0..self.len())
            .map(|p| fields.iter().map(|f| f[p].norm_sqr()).sum())
            .collect();
        self.integrate(&g)
    }

    fn apply_radial(&self, mat: &[f64], f: &[Complex64]) -> Vec<Complex64> {
        let m = self.n_r();
        let nt = self.n_theta();
        let mut out = vec![Complex64::new(0.0, 0.0); self.len()];
        for i in 0..m {
            let row = &mat[i * m..(i + 1) * m];
            let dst = &mut out[i * nt..(i + 1) * nt];
            for (k, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let src = &f[k * nt..(k + 1) * nt];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s * c;
                }
            }
        }
        out
    }

    pub fn dr(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.apply_radial(&self.d1, f)
    }

    pub fn drr(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.apply_radial(&self.d2, f)
    }

    /// `d^order / dtheta^order` ring by ring via FFT.
    pub fn dtheta(&self, f: &[Complex64], order: u32) -> Vec<Complex64> {
        let nt = self.n_theta();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(nt);
        let inv = planner.plan_fft_inverse(nt);
        let mut out = f.to_vec();
        let scale = 1.0 / nt as f64;
        for ring in out.chunks_mut(nt) {
            fwd.process(ring);
            for (k, c) in ring.iter_mut().enumerate() {
                let kk = signed_index(k, nt);
                if order % 2 == 1 && nt % 2 == 0 && k == nt / 2 {
                    *c = Complex64::new(0.0, 0.0);
                    continue;
                }
                let ik = Complex64::new(0.0, kk as f64);
                *c *= ik.powu(order) * scale;
            }
            inv.process(ring);
        }
        out
    }

    /// Polar Laplacian `f_rr + f_r / r + f_tt / r^2`; the `r = 0` ring is
    /// left at zero (it carries zero quadrature weight).
    pub fn laplacian(&self, f: &[Complex64]) -> Vec<Complex64> {
        let frr = self.drr(f);
        let fr = self.dr(f);
        let ftt = self.dtheta(f, 2);
        let nt = self.n_theta();
        let mut out = vec![Complex64::new(0.0, 0.0); self.len()];
        for (i, &r) in self.r.iter().enumerate() {
            if r <= 0.0 {
                continue;
            }
            for j in 0..nt {
                let p = i * nt + j;
                out[p] = frr[p] + fr[p] / r + ftt[p] / (r * r);
            }
        }
        out
    }

    /// Cartesian gradient `(f_x, f_y)`; zero on the `r = 0` ring.
    pub fn gradient(&self, f: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let fr = self.dr(f);
        let ft = self.dtheta(f, 1);
        let nt = self.n_theta();
        let mut gx = vec![Complex64::new(0.0, 0.0); self.len()];
        let mut gy = gx.clone();
        for (i, &r) in self.r.iter().enumerate() {
            if r <= 0.0 {
                continue;
            }
            for (j, &t) in self.theta.iter().enumerate() {
                let p = i * nt + j;
                let (s, c) = t.sin_cos();
                gx[p] = fr[p] * c - ft[p] * (s / r);
                gy[p] = fr[p] * s + ft[p] * (c / r);
            }
        }
        (gx, gy)
    }
}

/// FFT bin `k` of a length-`n` transform as a signed frequency.
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
