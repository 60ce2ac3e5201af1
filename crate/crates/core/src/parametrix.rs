//! Boundary-layer parametrix for the harmonic pressure on the disk.
//!
//! In collar coordinates `y = 1 - r` the scaled Laplacian reads
//! `h^2 d_y^2 + h^2 H d_y - lambda^2` with `H = -1 / (1 - y)` and
//! `lambda = |xi'| / (1 - y)`. The ansatz `A = A0 + h A1` with
//! `A0 = exp(-y lambda / h) phi(lambda)` leaves the order-`h` equation
//! `h^2 A1'' - lambda^2 A1 = -h^{-1} (h^2 d_y^2 - lambda^2) A0 - H h A0'`
//! with `A1(0) = 0` on the decaying branch.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::chart::{ChartKind, CollarChart};
use crate::quant::{CollarField, CollarGrid};
use crate::spectral::{signed_index, PolarGrid};
use crate::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default lower edge of the tangential cutoff.
pub const DEFAULT_DELTA0: f64 = 0.25;

/// Degree-7 smooth step on `[0, 1]` and its first two derivatives.
fn smootherstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let v = t4 * (35.0 - 84.0 * t + 70.0 * t2 - 20.0 * t3);
        let d1 = t3 * (140.0 - 420.0 * t + 420.0 * t2 - 140.0 * t3);
        let d2 = t2 * (420.0 - 1680.0 * t + 2100.0 * t2 - 840.0 * t3);
        (v, d1, d2)
    }
}

/// Cutoff `phi`: 0 for `lambda <= delta0 / 2`, 1 for `lambda >= delta0`.
pub fn cutoff(delta0: f64, lambda: f64) -> f64 {
    smootherstep((lambda - 0.5 * delta0) / (0.5 * delta0)).0
}

fn cutoff_derivs(delta0: f64, lambda: f64) -> (f64, f64, f64) {
    let s = 0.5 * delta0;
    let (v, d1, d2) = smootherstep((lambda - s) / s);
    (v, d1 / s, d2 / (s * s))
}

/// Boundary data on `n` equispaced angles, stored by Fourier coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub n_theta: usize,
    /// `(frequency, coefficient)` with `q0 = sum c_n e^{i n theta}`.
    pub coeffs: Vec<(i64, Complex64)>,
}

impl BoundaryData {
    pub fn from_samples(samples: &[Complex64]) -> Self {
        let n = samples.len();
        let mut data = samples.to_vec();
        FftPlanner::new().plan_fft_forward(n).process(&mut data);
        let coeffs = data
            .iter()
            .enumerate()
            .map(|(k, c)| (signed_index(k, n), c / n as f64))
            .filter(|(_, c)| c.norm() > 0.0)
            .collect();
        Self { n_theta: n, coeffs }
    }

    pub fn mode(n_theta: usize, m: i64) -> Self {
        Self {
            n_theta,
            coeffs: vec![(m, Complex64::new(1.0, 0.0))],
        }
    }

    pub fn samples(&self) -> Vec<Complex64> {
        let n = self.n_theta;
        (0..n)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / n as f64;
                self.coeffs
                    .iter()
                    .map(|&(m, c)| c * Complex64::from_polar(1.0, m as f64 * t))
                    .sum()
            })
            .collect()
    }

    pub fn eval(&self, theta: f64) -> Complex64 {
        self.coeffs
            .iter()
            .map(|&(m, c)| c * Complex64::from_polar(1.0, m as f64 * theta))
            .sum()
    }
}

/// Harmonic function `sum c_m r^{|m|} e^{i m theta}`.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicField {
    pub coeffs: Vec<(i64, Complex64)>,
}

impl HarmonicField {
    pub fn eval(&self, r: f64, theta: f64) -> Complex64 {
        self.coeffs
            .iter()
            .map(|&(m, c)| c * r.powi(m.unsigned_abs() as i32) * Complex64::from_polar(1.0, m as f64 * theta))
            .sum()
    }

    pub fn sample_polar(&self, grid: &PolarGrid) -> Vec<Complex64> {
        grid.sample(|r, t| self.eval(r, t))
    }

    pub fn sample_collar(&self, grid: CollarGrid) -> CollarField {
        CollarField::from_fn(grid, 1, |y, t| [self.eval(1.0 - y, t), ZERO])
    }
}

/// Exact harmonic extension of boundary data into the disk.
pub fn poisson_extend(q0: &BoundaryData) -> HarmonicField {
    HarmonicField {
        coeffs: q0.coeffs.clone(),
    }
}

/// Dirichlet-to-Neumann map on the unit circle: `e^{i m theta} -> |m| e^{i m theta}`.
pub fn dtn(q0: &BoundaryData) -> BoundaryData {
    BoundaryData {
        n_theta: q0.n_theta,
        coeffs: q0
            .coeffs
            .iter()
            .map(|&(m, c)| (m, c * m.unsigned_abs() as f64))
            .filter(|(_, c)| c.norm() > 0.0)
            .collect(),
    }
}

/// `int_0^{2 pi} a conj(b) dtheta` from samples.
pub fn boundary_inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let dt = 2.0 * PI / a.len() as f64;
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum::<Complex64>() * dt
}

/// `A0 + h A1` on the disk collar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametrixSymbol {
    pub order: u8,
    pub delta0: f64,
    pub collar_width: f64,
}

/// Tabulated `A1(y)` for one `|xi'|` and `h`.
#[derive(Clone, Debug)]
pub struct A1Profile {
    y: Vec<f64>,
    v: Vec<f64>,
    dv: Vec<f64>,
}

impl A1Profile {
    /// Cubic Hermite interpolation on the integration nodes.
    pub fn eval(&self, y: f64) -> f64 {
        let n = self.y.len();
        if y <= self.y[0] {
            return self.v[0];
        }
        if y >= self.y[n - 1] {
            return self.v[n - 1];
        }
        let step = self.y[1] - self.y[0];
        let i = (((y - self.y[0]) / step).floor() as usize).min(n - 2);
        let t = (y - self.y[i]) / step;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t),
            t * (1.0 - t) * (1.0 - t),
            t * t * (3.0 - 2.0 * t),
            t * t * (t - 1.0),
        );
        h00 * self.v[i] + h10 * step * self.dv[i] + h01 * self.v[i + 1] + h11 * step * self.dv[i + 1]
    }

    pub fn at_boundary(&self) -> f64 {
        self.v[0]
    }
}

/// Chart quantities along the collar for fixed `mu = |xi'|`.
struct Layer {
    mu: f64,
    h: f64,
    delta0: f64,
}

impl Layer {
    fn lambda(&self, y: f64) -> f64 {
        self.mu / (1.0 - y)
    }

    /// `A0`, `A0'`, `A0''`.
    fn a0(&self, y: f64) -> (f64, f64, f64) {
        let s = 1.0 - y;
        let lam = self.mu / s;
        let dlam = self.mu / (s * s);
        let ddlam = 2.0 * self.mu / (s * s * s);
        // exponent y lambda(y) and its derivatives
        let p = y * lam;
        let dp = lam + y * dlam;
        let ddp = 2.0 * dlam + y * ddlam;
        let (g0, g1, g2) = cutoff_derivs(self.delta0, lam);
        let g = g0;
        let dg = g1 * dlam;
        let ddg = g2 * dlam * dlam + g1 * ddlam;
        let h = self.h;
        let e = (-p / h).exp();
        let v = e * g;
        let d = e * (dg - dp * g / h);
        let dd = e * (ddg - 2.0 * dp * dg / h + (dp * dp / (h * h) - ddp / h) * g);
        (v, d, dd)
    }

    /// Right-hand side of the `A1` equation.
    fn forcing(&self, y: f64) -> f64 {
        let h = self.h;
        let lam = self.lambda(y);
        let (v, d, dd) = self.a0(y);
        let big_h = -1.0 / (1.0 - y);
        -(h * h * dd - lam * lam * v) / h - big_h * h * d
    }
}

impl ParametrixSymbol {
    /// Parametrix on the unit-disk collar.
    pub fn build(chart: &CollarChart, delta0: f64, order: u8) -> Result<Self> {
        if !matches!(chart.kind, ChartKind::Disk) {
            return Err(Error::Invalid("the pressure parametrix is built on the disk chart only".into()));
        }
        if !(delta0 > 0.0 && delta0.is_finite()) {
            return Err(Error::Invalid("delta0 must be positive".into()));
        }
        if order > 1 {
            return Err(Error::Invalid("parametrix order must be 0 or 1".into()));
        }
        Ok(Self {
            order,
            delta0,
            collar_width: chart.collar_width,
        })
    }

    fn layer(&self, xi: f64, h: f64) -> Layer {
        Layer {
            mu: xi.abs(),
            h,
            delta0: self.delta0,
        }
    }

    /// `A0(y, xi'; h)`.
    pub fn a0(&self, y: f64, xi: f64, h: f64) -> f64 {
        self.layer(xi, h).a0(y).0
    }

    /// Solve for `A1` at `|xi'|`: backward RK4 from the collar edge for a
    /// particular solution, plus the decaying homogeneous solution (from
    /// its Riccati form) matched so that `A1(0) = 0`.
    pub fn a1_profile(&self, xi: f64, h: f64) -> Result<A1Profile> {
        let layer = self.layer(xi, h);
        let width = self.collar_width;
        let fail = |reason: &str| Error::ParametrixOde {
            x: 0.0,
            xi,
            reason: reason.to_string(),
        };
        if !(h > 0.0) {
            return Err(fail("h must be positive"));
        }
        let lam_max = layer.lambda(width).max(1e-3);
        let n = ((width * lam_max / h) * 40.0).ceil().max(400.0) as usize;
        let dy = width / n as f64;
        let ys: Vec<f64> = (0..=n).map(|i| i as f64 * dy).collect();

        // particular solution, state (u, u')
        let rhs = |y: f64, u: f64, du: f64| -> (f64, f64) {
            let lam = layer.lambda(y);
            (du, (lam * lam * u + layer.forcing(y)) / (h * h))
        };
        let mut p = vec![0.0; n + 1];
        let mut dp = vec![0.0; n + 1];
        // Riccati w = D'/D and log D
        let ric = |y: f64, w: f64| -> f64 {
            let lam = layer.lambda(y);
            lam * lam / (h * h) - w * w
        };
        let mut w = vec![0.0; n + 1];
        let mut s = vec![0.0; n + 1];
        w[n] = -layer.lambda(width) / h;
        for i in (1..=n).rev() {
            let y = ys[i];
            let step = -dy;
            let (u, du) = (p[i], dp[i]);
            let k1 = rhs(y, u, du);
            let k2 = rhs(y + 0.5 * step, u + 0.5 * step * k1.0, du + 0.5 * step * k1.1);
            let k3 = rhs(y + 0.5 * step, u + 0.5 * step * k2.0, du + 0.5 * step * k2.1);
            let k4 = rhs(y + step, u + step * k3.0, du + step * k3.1);
            p[i - 1] = u + step / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            dp[i - 1] = du + step / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);

            let wi = w[i];
            let r1 = ric(y, wi);
            let r2 = ric(y + 0.5 * step, wi + 0.5 * step * r1);
            let r3 = ric(y + 0.5 * step, wi + 0.5 * step * r2);
            let r4 = ric(y + step, wi + step * r3);
            w[i - 1] = wi + step / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
            // log D integrates w; trapezoid on the Riccati samples
            s[i - 1] = s[i] + step * 0.5 * (wi + w[i - 1]);
            if !(p[i - 1].is_finite() && dp[i - 1].is_finite() && w[i - 1].is_finite()) {
                return Err(fail("non-finite value during integration"));
            }
        }
        let p0 = p[0];
        let mut v = vec![0.0; n + 1];
        let mut dv = vec![0.0; n + 1];
        for i in 0..=n {
            let d = (s[i] - s[0]).exp();
            v[i] = p[i] - p0 * d;
            dv[i] = dp[i] - p0 * w[i] * d;
        }
        Ok(A1Profile { y: ys, v, dv })
    }

    /// `A(y, xi')` for `y` on a list of nodes.
    pub fn profile(&self, ys: &[f64], xi: f64, h: f64) -> Result<Vec<f64>> {
        let a1 = if self.order == 1 && cutoff(self.delta0, xi.abs() / (1.0 - self.collar_width)) > 0.0 {
            Some(self.a1_profile(xi, h)?)
        } else {
            None
        };
        Ok(ys
            .iter()
            .map(|&y| {
                let base = self.a0(y, xi, h);
                match &a1 {
                    Some(p) => base + h * p.eval(y),
                    None => base,
                }
            })
            .collect())
    }
}

/// Tangential quantization of the parametrix applied to `q0`, after the
/// boundary cutoff `phi(h |m|)` has removed the low modes.
pub fn apply_parametrix(sym: &ParametrixSymbol, q0: &BoundaryData, h: f64, grid: CollarGrid) -> Result<CollarField> {
    let nt = grid.n_theta();
    let mut out = vec![ZERO; grid.len()];
    let kept: Vec<(i64, Complex64)> = q0
        .coeffs
        .iter()
        .map(|&(m, c)| (m, c * cutoff(sym.delta0, h * m.unsigned_abs() as f64)))
        .filter(|(_, c)| c.norm() > 0.0)
        .collect();
    let profiles: Vec<Result<(i64, Complex64, Vec<f64>)>> = crate::par_map(&kept, |&(m, c)| {
        Ok((m, c, sym.profile(&grid.y, h * m as f64, h)?))
    });
    for pr in profiles {
        let (m, c, prof) = pr?;
        for (j, &t) in grid.theta.iter().enumerate() {
            let e = c * Complex64::from_polar(1.0, m as f64 * t);
            for (i, a) in prof.iter().enumerate() {
                out[i * nt + j] += e * *a;
            }
        }
    }
    Ok(CollarField { grid, comps: vec![out] })
}

/// Cutoff-localized Poisson extension `phi(lambda(y, h m)) r^{|m|} c_m e^{i m theta}`.
pub fn cutoff_poisson(q0: &BoundaryData, delta0: f64, h: f64, grid: CollarGrid) -> CollarField {
    let nt = grid.n_theta();
    let mut out = vec![ZERO; grid.len()];
    for &(m, c) in &q0.coeffs {
        let mu = h * m.unsigned_abs() as f64;
        for (i, &y) in grid.y.iter().enumerate() {
            let a = cutoff(delta0, mu / (1.0 - y)) * (1.0 - y).powi(m.unsigned_abs() as i32);
            if a == 0.0 {
                continue;
            }
            for (j, &t) in grid.theta.iter().enumerate() {
                out[i * nt + j] += c * Complex64::from_polar(a, m as f64 * t);
            }
        }
    }
    CollarField { grid, comps: vec![out] }
}

/// Relative collar `L^2` error of the parametrix against the localized
/// Poisson extension.
pub fn parametrix_error(sym: &ParametrixSymbol, q0: &BoundaryData, h: f64, grid: CollarGrid) -> Result<f64> {
    let approx = apply_parametrix(sym, q0, h, grid.clone())?;
    let exact = cutoff_poisson(q0, sym.delta0, h, grid);
    let mut diff = approx.clone();
    for (d, e) in diff.comps[0].iter_mut().zip(&exact.comps[0]) {
        *d -= e;
    }
    let denom = exact.norm_sq();
    if denom == 0.0 {
        return Ok(diff.norm_sq().sqrt());
    }
    Ok((diff.norm_sq() / denom).sqrt())
}

/// `int_{y0}^{width} || Op_h(chi) f(y, .) ||^2_{L^2(x')} dy` with the
/// tangential cutoff `chi = phi(lambda(y, xi'))`.
pub fn band_mass(
    f: impl Fn(f64, f64) -> Complex64,
    n_theta: usize,
    y0: f64,
    width: f64,
    delta0: f64,
    h: f64,
) -> Result<f64> {
    if !(y0 >= 0.0 && y0 < width) {
        return Err(Error::Invalid(format!("y0 = {y0} must lie in [0, {width})")));
    }
    let (ys, ws) = crate::special::composite_gauss(y0, width, h.min(0.05), 10);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_theta);
    let mut total = 0.0;
    for (&y, &w) in ys.iter().zip(&ws) {
        let mut ring: Vec<Complex64> = (0..n_theta)
            .map(|j| f(y, 2.0 * PI * j as f64 / n_theta as f64))
            .collect();
        fwd.process(&mut ring);
        // Parseval: int |sum c_n e^{i n t}|^2 dt = 2 pi sum |c_n|^2
        let s: f64 = ring
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let xi = h * signed_index(k, n_theta) as f64;
                let chi = cutoff(delta0, xi.abs() / (1.0 - y));
                (c / n_theta as f64 * chi).norm_sqr()
            })
            .sum();
        total += w * 2.0 * PI * s;
    }
    Ok(total)
}

/// Least-squares slope of `log band_mass` against `y0`.
pub fn band_mass_slope(y0s: &[f64], masses: &[f64]) -> Result<f64> {
    if y0s.len() != masses.len() || y0s.len() < 2 {
        return Err(Error::Invalid("need at least two (y0, mass) pairs".into()));
    }
    if masses.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::Invalid("band masses must be positive for a log fit".into()));
    }
    let n = y0s.len() as f64;
    let ls: Vec<f64> = masses.iter().map(|m| m.ln()).collect();
    let mx = y0s.iter().sum::<f64>() / n;
    let my = ls.iter().sum::<f64>() / n;
    let sxx: f64 = y0s.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = y0s.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}
