//! Exact Dirichlet Laplace and Stokes eigenfunctions of the unit disk,
//! written in semiclassical form `-h^2 Delta u - u + h grad q = 0`.
//!
//! Laplace modes are `c J_m(lambda r) e^{i m theta}` with `lambda` a zero of
//! `J_m`. Stokes modes come from the stream function
//! `psi = c (J_m(lambda r) - J_m(lambda) r^m) e^{i m theta}` with `lambda` a
//! zero of `J_{m+1}`, velocity `u = (d_y psi, -d_x psi)` and pressure
//! `P = -i lambda^2 c J_m(lambda) r^m e^{i m theta}`, `q = P / lambda`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::special::{bessel_j, bessel_j_range, bessel_zero, composite_gauss};
use crate::spectral::PolarGrid;
use crate::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Laplace,
    Stokes,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(Family::Laplace),
            "stokes" => Ok(Family::Stokes),
            other => Err(Error::Invalid(format!("unknown family {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeId {
    pub family: Family,
    pub m: u32,
    pub k: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub family: Family,
    pub m: u32,
    pub k: u32,
    /// `(n_r, n_theta)`; `None` picks a grid that resolves the mode.
    pub grid: Option<(usize, usize)>,
}

impl ModeSpec {
    pub fn new(family: Family, m: u32, k: u32) -> Self {
        Self {
            family,
            m,
            k,
            grid: None,
        }
    }

    pub fn with_grid(self, n_r: usize, n_theta: usize) -> Self {
        Self {
            grid: Some((n_r, n_theta)),
            ..self
        }
    }

    pub fn eigenvalue(&self) -> f64 {
        match self.family {
            Family::Laplace => bessel_zero(self.m, self.k),
            Family::Stokes => bessel_zero(self.m + 1, self.k),
        }
    }

    /// Default grid for a given eigenvalue.
    pub fn default_grid(m: u32, lambda: f64) -> (usize, usize) {
        let n_r = (4.0 * lambda / PI).ceil() as usize + 24;
        let n_theta = (4 * (m as usize + 1) + 8).next_multiple_of(2);
        (n_r, n_theta)
    }

    fn resolve_grid(&self, lambda: f64) -> Result<(usize, usize)> {
        let (n_r, n_theta) = self.grid.unwrap_or_else(|| Self::default_grid(self.m, lambda));
        if n_theta <= 4 * self.m as usize {
            return Err(Error::Resolution(format!(
                "n_theta = {n_theta} must exceed 4m = {}",
                4 * self.m
            )));
        }
        if (n_r as f64) <= 4.0 * lambda / PI {
            return Err(Error::Resolution(format!(
                "n_r = {n_r} must exceed 4 lambda / pi = {:.2}",
                4.0 * lambda / PI
            )));
        }
        Ok((n_r, n_theta))
    }
}

/// Norms collected when a mode is built.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeNorms {
    pub l2: f64,
    pub grad_l2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `|| -h^2 Delta u - u + h grad q ||`.
    pub pde_residual: f64,
    /// `|| h div u ||`.
    pub div_residual: f64,
    /// `sup |u|` on the boundary circle.
    pub trace_norm: f64,
    /// `|| h d_nu u ||_{L^2(boundary)}`.
    pub normal_derivative_norm: f64,
    /// `|| h grad q ||`.
    pub grad_q_norm: f64,
    /// `|| h q ||`.
    pub hq_norm: f64,
    /// `|| q ||`.
    pub q_norm: f64,
    /// `|int q|`.
    pub q_mean: f64,
    /// `|| h grad u ||`.
    pub grad_u_norm: f64,
    /// `|| h^2 grad^2 u ||`.
    pub hessian_norm: f64,
}

/// Radial amplitudes: for Laplace modes `u = comps[0] e^{i m theta}`, for
/// Stokes modes `(u_r, u_theta) = comps e^{i m theta}`; `q = q e^{i m theta}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Radial {
    pub comps: [Complex64; 2],
    pub q: Complex64,
}

#[derive(Clone, Debug)]
pub struct Quasimode {
    pub id: ModeId,
    pub lambda: f64,
    pub h: f64,
    pub grid: PolarGrid,
    /// Cartesian velocity components on the grid (one for Laplace modes).
    pub u: Vec<Vec<Complex64>>,
    /// Semiclassical pressure `q` on the grid (zero for Laplace modes).
    pub q: Vec<Complex64>,
    pub norms: ModeNorms,
    coef: f64,
    /// `J_m(lambda)`, the harmonic part of a Stokes stream function.
    jm_at_one: f64,
    pressure_sign: f64,
}

pub fn bessel_zero_mk(m: u32, k: u32) -> f64 {
    bessel_zero(m, k)
}

pub fn laplace_disk_mode(spec: &ModeSpec) -> Result<Quasimode> {
    if spec.family != Family::Laplace {
        return Err(Error::Invalid("laplace_disk_mode needs family = laplace".into()));
    }
    build(spec, None)
}

pub fn stokes_disk_mode(spec: &ModeSpec) -> Result<Quasimode> {
    if spec.family != Family::Stokes {
        return Err(Error::Invalid("stokes_disk_mode needs family = stokes".into()));
    }
    build(spec, None)
}

/// A Stokes trial field built with an arbitrary `lambda`. The interior
/// equations hold for every `lambda`; the Dirichlet condition holds only
/// when `J_{m+1}(lambda) = 0`.
pub fn stokes_trial_mode(m: u32, lambda: f64, grid: (usize, usize)) -> Result<Quasimode> {
    build(
        &ModeSpec::new(Family::Stokes, m, 1).with_grid(grid.0, grid.1),
        Some(lambda),
    )
}

pub fn disk_mode(spec: &ModeSpec) -> Result<Quasimode> {
    build(spec, None)
}

fn build(spec: &ModeSpec, lambda_override: Option<f64>) -> Result<Quasimode> {
    if spec.k == 0 {
        return Err(Error::Invalid("radial index k starts at 1".into()));
    }
    let lambda = lambda_override.unwrap_or_else(|| spec.eigenvalue());
    let (n_r, n_theta) = spec.resolve_grid(lambda)?;
    let grid = PolarGrid::new(n_r, n_theta);
    let m = spec.m;
    let jm_at_one = bessel_j(m as i64, lambda);
    let mut mode = Quasimode {
        id: ModeId {
            family: spec.family,
            m,
            k: spec.k,
        },
        lambda,
        h: 1.0 / lambda,
        grid,
        u: Vec::new(),
        q: Vec::new(),
        norms: ModeNorms { l2: 0.0, grad_l2: 0.0 },
        coef: 1.0,
        jm_at_one,
        pressure_sign: 1.0,
    };
    mode.coef = 1.0 / mode.unnormalized_norm();
    mode.fill_grid();
    if spec.family == Family::Stokes && m > 0 {
        // the sign of the pressure is fixed by the residual
        let plus = mode.pde_residual();
        mode.pressure_sign = -1.0;
        mode.fill_grid();
        let minus = mode.pde_residual();
        if plus <= minus {
            mode.pressure_sign = 1.0;
            mode.fill_grid();
        }
    }
    let comps: Vec<&[Complex64]> = mode.u.iter().map(|c| c.as_slice()).collect();
    let l2 = mode.grid.norm_sq(&comps).sqrt();
    let grad = mode.grad_norm();
    mode.norms = ModeNorms { l2, grad_l2: grad };
    Ok(mode)
}

impl Quasimode {
    pub fn n_components(&self) -> usize {
        match self.id.family {
            Family::Laplace => 1,
            Family::Stokes => 2,
        }
    }

    /// Normalization constant `c`.
    pub fn coefficient(&self) -> f64 {
        self.coef
    }

    /// `int |u|^2` with `c = 1`, by Gauss quadrature of the radial profile.
    fn unnormalized_norm(&self) -> f64 {
        let panel = (1.0 / self.lambda).min(0.05);
        let (x, w) = composite_gauss(0.0, 1.0, panel, 12);
        let mut total = 0.0;
        let saved = self.coef;
        debug_assert_eq!(saved, 1.0);
        for (&r, &wt) in x.iter().zip(&w) {
            let a = self.radial(r);
            let s = a.comps[0].norm_sqr() + a.comps[1].norm_sqr();
            total += wt * r * s;
        }
        (2.0 * PI * total).sqrt()
    }

    /// Radial amplitudes at `r`.
    pub fn radial(&self, r: f64) -> Radial {
        let m = self.id.m as usize;
        let lam = self.lambda;
        let c = self.coef;
        let js = bessel_j_range(m + 1, lam * r);
        match self.id.family {
            Family::Laplace => Radial {
                comps: [Complex64::new(c * js[m], 0.0), ZERO],
                q: ZERO,
            },
            Family::Stokes => {
                let jm1 = if m == 0 { -js[1] } else { js[m - 1] };
                let jm = js[m];
                let jp1 = js[m + 1];
                let rm = r.powi(m as i32);
                let big_r = jm - self.jm_at_one * rm;
                let deriv = lam * 0.5 * (jm1 - jp1)
                    - if m == 0 {
                        0.0
                    } else {
                        m as f64 * self.jm_at_one * r.powi(m as i32 - 1)
                    };
                let u_theta = -c * deriv;
                let u_r = if r > 0.0 {
                    I * (c * m as f64 * big_r / r)
                } else if m == 1 {
                    I * (c * (0.5 * lam - self.jm_at_one))
                } else {
                    ZERO
                };
                let q = if m == 0 {
                    ZERO
                } else {
                    -I * (self.pressure_sign * lam * c * self.jm_at_one * rm)
                };
                Radial {
                    comps: [u_r, Complex64::new(u_theta, 0.0)],
                    q,
                }
            }
        }
    }

    /// Cartesian velocity components and `q` at polar `(r, theta)`.
    pub fn eval_polar(&self, r: f64, theta: f64) -> ([Complex64; 2], Complex64) {
        let a = self.radial(r);
        self.assemble(&a, theta)
    }

    /// Cartesian velocity components and `q` at `(x, y)`; zero outside
    /// the disk.
    pub fn eval_cartesian(&self, x: f64, y: f64) -> ([Complex64; 2], Complex64) {
        let r = x.hypot(y);
        if r > 1.0 {
            return ([ZERO, ZERO], ZERO);
        }
        self.eval_polar(r, y.atan2(x))
    }

    /// Polar velocity components `(u_r, u_theta)` (Laplace: `(u, 0)`) and `q`.
    pub fn eval_polar_components(&self, r: f64, theta: f64) -> ([Complex64; 2], Complex64) {
        let a = self.radial(r);
        let e = Complex64::from_polar(1.0, self.id.m as f64 * theta);
        ([a.comps[0] * e, a.comps[1] * e], a.q * e)
    }

    pub(crate) fn assemble(&self, a: &Radial, theta: f64) -> ([Complex64; 2], Complex64) {
        let e = Complex64::from_polar(1.0, self.id.m as f64 * theta);
        match self.id.family {
            Family::Laplace => ([a.comps[0] * e, ZERO], ZERO),
            Family::Stokes => {
                let (s, c) = theta.sin_cos();
                let ur = a.comps[0] * e;
                let ut = a.comps[1] * e;
                ([ur * c - ut * s, ur * s + ut * c], a.q * e)
            }
        }
    }

    fn fill_grid(&mut self) {
        let nt = self.grid.n_theta();
        let n = self.grid.len();
        let nc = self.n_components();
        let mut u = vec![vec![ZERO; n]; nc];
        let mut q = vec![ZERO; n];
        for (i, &r) in self.grid.r.iter().enumerate() {
            let a = self.radial(r);
            for (j, &t) in self.grid.theta.iter().enumerate() {
                let (v, p) = self.assemble(&a, t);
                for c in 0..nc {
                    u[c][i * nt + j] = v[c];
                }
                q[i * nt + j] = p;
            }
        }
        self.u = u;
        self.q = q;
    }

    fn pde_residual(&self) -> f64 {
        let h = self.h;
        let (gqx, gqy) = self.grid.gradient(&self.q);
        let gq = [gqx, gqy];
        let mut res = Vec::with_capacity(self.u.len());
        for (c, comp) in self.u.iter().enumerate() {
            let lap = self.grid.laplacian(comp);
            let r: Vec<Complex64> = (0..comp.len())
                .map(|p| -h * h * lap[p] - comp[p] + h * gq[c][p])
                .collect();
            res.push(r);
        }
        let refs: Vec<&[Complex64]> = res.iter().map(|c| c.as_slice()).collect();
        self.grid.norm_sq(&refs).sqrt()
    }

    fn grad_norm(&self) -> f64 {
        let mut fields = Vec::new();
        for comp in &self.u {
            let (gx, gy) = self.grid.gradient(comp);
            fields.push(gx);
            fields.push(gy);
        }
        let refs: Vec<&[Complex64]> = fields.iter().map(|c| c.as_slice()).collect();
        self.h * self.grid.norm_sq(&refs).sqrt()
    }

    pub fn residual_report(&self) -> ResidualReport {
        let h = self.h;
        let g = &self.grid;
        let nt = g.n_theta();

        let div = if self.u.len() == 2 {
            let (dxx, _) = g.gradient(&self.u[0]);
            let (_, dyy) = g.gradient(&self.u[1]);
            let d: Vec<Complex64> = dxx.iter().zip(&dyy).map(|(a, b)| (a + b) * h).collect();
            g.norm_sq(&[&d]).sqrt()
        } else {
            0.0
        };

        let ring = g.boundary_ring();
        let trace_norm = self
            .u
            .iter()
            .flat_map(|c| c[ring * nt..(ring + 1) * nt].iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max);

        let dtheta = 2.0 * PI / nt as f64;
        let mut nd = 0.0;
        for comp in &self.u {
            let dr = g.dr(comp);
            nd += dr[ring * nt..(ring + 1) * nt]
                .iter()
                .map(|z| (h * z).norm_sqr())
                .sum::<f64>()
                * dtheta;
        }

        let (gqx, gqy) = g.gradient(&self.q);
        let grad_q_norm = h * g.norm_sq(&[&gqx, &gqy]).sqrt();
        let q_norm = g.norm_sq(&[&self.q]).sqrt();
        let re: Vec<f64> = self.q.iter().map(|z| z.re).collect();
        let im: Vec<f64> = self.q.iter().map(|z| z.im).collect();
        let q_mean = g.integrate(&re).hypot(g.integrate(&im));

        let mut second = Vec::new();
        for comp in &self.u {
            let (gx, gy) = g.gradient(comp);
            let (gxx, gxy) = g.gradient(&gx);
            let (_, gyy) = g.gradient(&gy);
            second.push(gxx);
            second.push(gxy.clone());
            second.push(gxy);
            second.push(gyy);
        }
        let refs: Vec<&[Complex64]> = second.iter().map(|c| c.as_slice()).collect();
        let hessian_norm = h * h * g.norm_sq(&refs).sqrt();

        ResidualReport {
            pde_residual: self.pde_residual(),
            div_residual: div,
            trace_norm,
            normal_derivative_norm: nd.sqrt(),
            grad_q_norm,
            hq_norm: h * q_norm,
            q_norm,
            q_mean,
            grad_u_norm: self.norms.grad_l2,
            hessian_norm,
        }
    }

    /// `sup |u|` on the boundary circle relative to `||u||`; vanishes
    /// exactly at Dirichlet eigenvalues.
    pub fn boundary_defect(&self) -> f64 {
        let a = self.radial(1.0);
        (a.comps[0].norm_sqr() + a.comps[1].norm_sqr()).sqrt()
    }
}
