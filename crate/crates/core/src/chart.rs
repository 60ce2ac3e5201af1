//! Geodesic collar charts.
//!
//! Near a boundary component the domain is parametrized by `(y, x')` with
//! `y` the distance to the boundary, and the symbol of `-h^2 Delta - 1`
//! becomes `p = eta^2 - r(y, x', xi')` with `r = 1 - |xi'|^2_alpha`. For the
//! planar charts (disk and annulus) `x'` is the polar angle and `xi'` the
//! angular momentum; model charts prescribe `r` directly as a polynomial.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which circle of the annulus a collar is attached to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Outer,
    Inner,
}

/// One monomial `coef * z^z * zeta^zeta * y^y` of a model chart's `r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyTerm {
    pub z: u32,
    pub zeta: u32,
    pub y: u32,
    pub coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChartKind {
    Disk,
    Annulus {
        inner_radius: f64,
        boundary: Boundary,
    },
    Model {
        terms: Vec<PolyTerm>,
    },
}

/// On-disk description of a chart (the model-chart definition file format).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    #[serde(flatten)]
    pub kind: ChartKind,
    #[serde(default)]
    pub collar_width: Option<f64>,
    #[serde(default)]
    pub max_derivative_order: Option<usize>,
}

/// A point `(y, x', eta, xi')` of phase space in collar coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub y: f64,
    pub x: f64,
    pub eta: f64,
    pub xi: f64,
}

impl PhasePoint {
    pub fn new(y: f64, x: f64, eta: f64, xi: f64) -> Self {
        Self { y, x, eta, xi }
    }

    pub fn boundary(x: f64, eta: f64, xi: f64) -> Self {
        Self { y: 0.0, x, eta, xi }
    }
}

/// `r` and its first partials at a collar point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RDerivs {
    pub r: f64,
    pub dy: f64,
    pub dx: f64,
    pub dxi: f64,
}

/// Components of the Hamiltonian field of `p = eta^2 - r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Velocity {
    pub y_dot: f64,
    pub eta_dot: f64,
    pub x_dot: f64,
    pub xi_dot: f64,
}

/// Sparse polynomial in `(z, zeta)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly2 {
    terms: BTreeMap<(u32, u32), f64>,
}

impl Poly2 {
    fn add(&mut self, key: (u32, u32), c: f64) {
        if c == 0.0 {
            return;
        }
        let e = self.terms.entry(key).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.remove(&key);
        }
    }

    pub fn eval(&self, z: f64, zeta: f64) -> f64 {
        self.terms
            .iter()
            .map(|(&(a, b), &c)| c * z.powi(a as i32) * zeta.powi(b as i32))
            .sum()
    }

    fn d_z(&self) -> Poly2 {
        let mut out = Poly2::default();
        for (&(a, b), &c) in &self.terms {
            if a > 0 {
                out.add((a - 1, b), c * a as f64);
            }
        }
        out
    }

    fn d_zeta(&self) -> Poly2 {
        let mut out = Poly2::default();
        for (&(a, b), &c) in &self.terms {
            if b > 0 {
                out.add((a, b - 1), c * b as f64);
            }
        }
        out
    }

    fn mul(&self, other: &Poly2) -> Poly2 {
        let mut out = Poly2::default();
        for (&(a, b), &c) in &self.terms {
            for (&(p, q), &d) in &other.terms {
                out.add((a + p, b + q), c * d);
            }
        }
        out
    }

    fn sub(&self, other: &Poly2) -> Poly2 {
        let mut out = self.clone();
        for (&k, &c) in &other.terms {
            out.add(k, -c);
        }
        out
    }

    /// Poisson bracket `H_g f = g_zeta f_z - g_z f_zeta`.
    pub fn bracket(g: &Poly2, f: &Poly2) -> Poly2 {
        g.d_zeta().mul(&f.d_z()).sub(&g.d_z().mul(&f.d_zeta()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollarChart {
    pub kind: ChartKind,
    pub collar_width: f64,
    pub max_derivative_order: usize,
    r0_poly: Option<Poly2>,
    r1_poly: Option<Poly2>,
}

impl CollarChart {
    pub fn disk() -> Self {
        Self::build(ChartKind::Disk, 0.5, 8).expect("default disk chart is valid")
    }

    pub fn annulus(inner_radius: f64, boundary: Boundary) -> Result<Self> {
        let width = default_annulus_width(inner_radius);
        Self::build(
            ChartKind::Annulus {
                inner_radius,
                boundary,
            },
            width,
            8,
        )
    }

    pub fn model(terms: Vec<PolyTerm>) -> Result<Self> {
        Self::build(ChartKind::Model { terms }, 0.5, 8)
    }

    pub fn from_spec(spec: &ChartSpec) -> Result<Self> {
        let default_width = match &spec.kind {
            ChartKind::Annulus { inner_radius, .. } => default_annulus_width(*inner_radius),
            _ => 0.5,
        };
        Self::build(
            spec.kind.clone(),
            spec.collar_width.unwrap_or(default_width),
            spec.max_derivative_order.unwrap_or(8),
        )
    }

    pub fn to_spec(&self) -> ChartSpec {
        ChartSpec {
            kind: self.kind.clone(),
            collar_width: Some(self.collar_width),
            max_derivative_order: Some(self.max_derivative_order),
        }
    }

    pub fn with_collar_width(self, width: f64) -> Result<Self> {
        Self::build(self.kind, width, self.max_derivative_order)
    }

    pub fn with_max_derivative_order(self, order: usize) -> Result<Self> {
        Self::build(self.kind, self.collar_width, order)
    }

    fn build(kind: ChartKind, collar_width: f64, max_derivative_order: usize) -> Result<Self> {
        if !(collar_width > 0.0) {
            return Err(Error::Invalid(format!(
                "collar_width must be positive, got {collar_width}"
            )));
        }
        if max_derivative_order < 4 {
            return Err(Error::Invalid(format!(
                "max_derivative_order must be at least 4, got {max_derivative_order}"
            )));
        }
        let (mut r0_poly, mut r1_poly) = (None, None);
        match &kind {
            ChartKind::Disk => {
                if collar_width >= 1.0 {
                    return Err(Error::Invalid("disk collar_width must be < 1".into()));
                }
            }
            ChartKind::Annulus { inner_radius, .. } => {
                if !(*inner_radius > 0.0 && *inner_radius < 1.0) {
                    return Err(Error::Invalid(format!(
                        "inner_radius must lie in (0, 1), got {inner_radius}"
                    )));
                }
                // both collars plus the chart-switch hysteresis must fit
                if collar_width > 0.6 * (1.0 - inner_radius) {
                    return Err(Error::Invalid(
                        "annulus collar_width must not exceed 0.6 * (1 - inner_radius)".into(),
                    ));
                }
            }
            ChartKind::Model { terms } => {
                let mut p0 = Poly2::default();
                let mut p1 = Poly2::default();
                for t in terms {
                    if !t.coef.is_finite() {
                        return Err(Error::Invalid("model coefficient is not finite".into()));
                    }
                    match t.y {
                        0 => p0.add((t.z, t.zeta), t.coef),
                        1 => p1.add((t.z, t.zeta), t.coef),
                        _ => {}
                    }
                }
                r0_poly = Some(p0);
                r1_poly = Some(p1);
            }
        }
        Ok(Self {
            kind,
            collar_width,
            max_derivative_order,
            r0_poly,
            r1_poly,
        })
    }

    /// Disk and annulus charts embed in the plane and can hand rays over to
    /// Cartesian coordinates away from the boundary.
    pub fn is_planar(&self) -> bool {
        !matches!(self.kind, ChartKind::Model { .. })
    }

    /// The same domain seen from its other boundary component, if any.
    pub fn other_boundary(&self) -> Option<CollarChart> {
        match &self.kind {
            ChartKind::Annulus {
                inner_radius,
                boundary,
            } => {
                let flipped = match boundary {
                    Boundary::Outer => Boundary::Inner,
                    Boundary::Inner => Boundary::Outer,
                };
                Some(Self {
                    kind: ChartKind::Annulus {
                        inner_radius: *inner_radius,
                        boundary: flipped,
                    },
                    ..self.clone()
                })
            }
            _ => None,
        }
    }

    /// Radius of the circle `y = const` for planar charts and `d rho / dy`.
    pub(crate) fn radius_at(&self, y: f64) -> Option<(f64, f64)> {
        match &self.kind {
            ChartKind::Disk => Some((1.0 - y, -1.0)),
            ChartKind::Annulus {
                inner_radius,
                boundary: Boundary::Outer,
            } => {
                let _ = inner_radius;
                Some((1.0 - y, -1.0))
            }
            ChartKind::Annulus {
                inner_radius,
                boundary: Boundary::Inner,
            } => Some((inner_radius + y, 1.0)),
            ChartKind::Model { .. } => None,
        }
    }

    /// Cartesian `[x1, x2, xi1, xi2]` of a collar point of a planar chart.
    pub fn to_cartesian(&self, p: &PhasePoint) -> Option<[f64; 4]> {
        let (rho, drho) = self.radius_at(p.y)?;
        let (s, c) = p.x.sin_cos();
        // eta = rho' * xi_r and xi' = rho * xi_theta
        let xr = drho * p.eta;
        let xt = if rho > 0.0 { p.xi / rho } else { 0.0 };
        Some([rho * c, rho * s, xr * c - xt * s, xr * s + xt * c])
    }

    /// Collar coordinates of a Cartesian point; the angle is taken on the
    /// branch closest to `angle_ref`.
    pub fn from_cartesian(&self, c: &[f64; 4], angle_ref: f64) -> Option<PhasePoint> {
        let (rho0, drho) = self.radius_at(0.0)?;
        let rho = c[0].hypot(c[1]);
        let theta = if rho > 0.0 {
            unwrap_angle(c[1].atan2(c[0]), angle_ref)
        } else {
            angle_ref
        };
        let (s, co) = theta.sin_cos();
        let xi_r = c[2] * co + c[3] * s;
        Some(PhasePoint {
            y: (rho - rho0) * drho,
            x: theta,
            eta: drho * xi_r,
            xi: c[0] * c[3] - c[1] * c[2],
        })
    }

    pub fn eval_r(&self, y: f64, x: f64, xi: f64) -> Result<RDerivs> {
        if self.is_planar() && !(0.0..=self.collar_width).contains(&y) {
            return Err(Error::OutOfCollar {
                y,
                width: self.collar_width,
            });
        }
        Ok(self.r_unchecked(y, x, xi))
    }

    /// `r` and partials without the collar check; planar formulas are the
    /// analytic continuation slightly past `y = 0`, which the integrator
    /// needs for trial stages.
    pub(crate) fn r_unchecked(&self, y: f64, x: f64, xi: f64) -> RDerivs {
        match &self.kind {
            ChartKind::Model { terms } => {
                let mut out = RDerivs {
                    r: 0.0,
                    dy: 0.0,
                    dx: 0.0,
                    dxi: 0.0,
                };
                for t in terms {
                    let (a, b, c) = (t.z as i32, t.zeta as i32, t.y as i32);
                    let pz = x.powi(a);
                    let pq = xi.powi(b);
                    let py = y.powi(c);
                    out.r += t.coef * pz * pq * py;
                    if c > 0 {
                        out.dy += t.coef * pz * pq * c as f64 * y.powi(c - 1);
                    }
                    if a > 0 {
                        out.dx += t.coef * a as f64 * x.powi(a - 1) * pq * py;
                    }
                    if b > 0 {
                        out.dxi += t.coef * pz * b as f64 * xi.powi(b - 1) * py;
                    }
                }
                out
            }
            _ => {
                let (rho, drho) = self.radius_at(y).expect("planar chart");
                let rho2 = rho * rho;
                RDerivs {
                    r: 1.0 - xi * xi / rho2,
                    dy: 2.0 * xi * xi * drho / (rho2 * rho),
                    dx: 0.0,
                    dxi: -2.0 * xi / rho2,
                }
            }
        }
    }

    /// `r_0 = r(0, x', xi')`.
    pub fn r0(&self, x: f64, xi: f64) -> f64 {
        self.r_unchecked(0.0, x, xi).r
    }

    /// `r_1 = d_y r(0, x', xi')`.
    pub fn r1(&self, x: f64, xi: f64) -> f64 {
        self.r_unchecked(0.0, x, xi).dy
    }

    /// Tangential frequency `lambda = |xi'|_alpha = sqrt(1 - r)`.
    pub fn lambda(&self, y: f64, x: f64, xi: f64) -> f64 {
        (1.0 - self.r_unchecked(y, x, xi).r).max(0.0).sqrt()
    }

    /// `H_{r_0}^j (r_1)` at a boundary point, from exact derivatives.
    pub fn iterated_bracket(&self, j: usize, x: f64, xi: f64) -> Result<f64> {
        let budget = self.max_derivative_order - 2;
        if j > budget {
            return Err(Error::OrderBudget {
                requested: j,
                budget,
            });
        }
        match (&self.r0_poly, &self.r1_poly) {
            (Some(p0), Some(p1)) => {
                let mut f = p1.clone();
                for _ in 0..j {
                    f = Poly2::bracket(p0, &f);
                }
                Ok(f.eval(x, xi))
            }
            // r_0 and r_1 depend on xi' only, so every bracket past the
            // zeroth vanishes identically.
            _ => Ok(if j == 0 { self.r1(x, xi) } else { 0.0 }),
        }
    }

    /// `H_{r_0}^j (r_1)` by nested central differences with one Richardson
    /// level, independent of the exact path.
    pub fn iterated_bracket_numeric(&self, j: usize, x: f64, xi: f64) -> Result<f64> {
        let budget = self.max_derivative_order - 2;
        if j > budget {
            return Err(Error::OrderBudget {
                requested: j,
                budget,
            });
        }
        let r0 = |a: f64, b: f64| self.r0(a, b);
        let r1 = |a: f64, b: f64| self.r1(a, b);
        Ok(bracket_fd(&r0, &r1, j, x, xi, FD_STEP))
    }

    pub fn hamiltonian_field(&self, p: &PhasePoint) -> Result<Velocity> {
        let d = self.eval_r(p.y, p.x, p.xi)?;
        Ok(velocity_from(p, &d))
    }
}

fn default_annulus_width(inner_radius: f64) -> f64 {
    (0.5f64).min(0.5 * (1.0 - inner_radius))
}

pub(crate) fn velocity_from(p: &PhasePoint, d: &RDerivs) -> Velocity {
    Velocity {
        y_dot: 2.0 * p.eta,
        eta_dot: d.dy,
        x_dot: -d.dxi,
        xi_dot: d.dx,
    }
}

/// The representative of `theta` modulo `2 pi` in `(ref - pi, ref + pi]`.
pub fn unwrap_angle(theta: f64, angle_ref: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    angle_ref + PI - (PI - (theta - angle_ref)).rem_euclid(TAU)
}

/// Default finite-difference step for generic derivatives.
pub const FD_STEP: f64 = 1e-4;

/// Central difference of `f` at `t` with one Richardson level.
pub fn richardson_diff(f: &dyn Fn(f64) -> f64, t: f64, step: f64) -> f64 {
    let d = |s: f64| (f(t + s) - f(t - s)) / (2.0 * s);
    (4.0 * d(0.5 * step) - d(step)) / 3.0
}

/// `H_g^j f` at `(x, xi)` by nested finite differences.
pub fn bracket_fd(
    g: &dyn Fn(f64, f64) -> f64,
    f: &dyn Fn(f64, f64) -> f64,
    j: usize,
    x: f64,
    xi: f64,
    step: f64,
) -> f64 {
    if j == 0 {
        return f(x, xi);
    }
    let inner = |a: f64, b: f64| bracket_fd(g, f, j - 1, a, b, step);
    let gz = richardson_diff(&|a| g(a, xi), x, step);
    let gq = richardson_diff(&|b| g(x, b), xi, step);
    let fz = richardson_diff(&|a| inner(a, xi), x, step);
    let fq = richardson_diff(&|b| inner(x, b), xi, step);
    gq * fz - gz * fq
}
