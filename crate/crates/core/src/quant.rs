//! Semiclassical quantization on the unit disk.
//!
//! Interior symbols `a(x, xi)` act on fields sampled on the periodic box
//! `[-1.5, 1.5]^2` through the left quantization
//! `Op_h(a) u(x) = (2 pi h)^{-2} int e^{i (x - z) xi / h} a(x, xi) u(z) dz dxi`.
//! Separable symbols use one FFT pair; everything else is summed directly
//! over the phase-space support. Tangential symbols `a(y, x', xi')` act on
//! collar fields slice by slice through the angular Fourier series.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::flow::DiskBilliard;
use crate::quasimode::Quasimode;
use crate::special::composite_gauss;
use crate::spectral::signed_index;
use crate::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Half side of the periodic computational box.
pub const BOX_HALF_WIDTH: f64 = 1.5;

/// `C^infinity` step: 0 for `t <= 0`, 1 for `t >= 1`, and
/// `smooth_step(1 - t) = 1 - smooth_step(t)`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// `C^infinity` bump on `|t| < 1` with value 1 at 0.
pub fn bump(t: f64) -> f64 {
    let t2 = t * t;
    if t2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t2)).exp()
    }
}

/// Smooth band `[lo, hi]`: rises across `lo = [a, b]`, falls across
/// `hi = [c, d]`; a missing side is open.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    #[serde(default)]
    pub lo: Option<[f64; 2]>,
    #[serde(default)]
    pub hi: Option<[f64; 2]>,
}

impl Band {
    pub fn new(lo: Option<[f64; 2]>, hi: Option<[f64; 2]>) -> Self {
        Self { lo, hi }
    }

    pub fn eval(&self, v: f64) -> f64 {
        let up = self
            .lo
            .map_or(1.0, |[a, b]| smooth_step((v - a) / (b - a)));
        if up == 0.0 {
            return 0.0;
        }
        let down = self
            .hi
            .map_or(1.0, |[c, d]| 1.0 - smooth_step((v - c) / (d - c)));
        up * down
    }

    fn upper(&self) -> Option<f64> {
        self.hi.map(|[_, d]| d)
    }

    fn lower(&self) -> Option<f64> {
        self.lo.map(|[a, _]| a)
    }

    fn validate(&self, what: &str) -> Result<()> {
        for [a, b] in self.lo.iter().chain(self.hi.iter()) {
            if !(a < b) {
                return Err(Error::Invalid(format!("{what}: band edge [{a}, {b}] is not increasing")));
            }
        }
        if let (Some([_, b]), Some([c, _])) = (self.lo, self.hi) {
            if b > c {
                return Err(Error::Invalid(format!("{what}: band edges overlap")));
            }
        }
        Ok(())
    }
}

/// Interior symbol built from primitives; serialized as a tagged tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Symbol {
    Const { value: f64 },
    /// Bump of radius `radius` around `center` in position.
    BumpX { center: [f64; 2], radius: f64 },
    /// 1 for `|x| <= r_in`, 0 for `|x| >= r_out`.
    RadialX { r_in: f64, r_out: f64 },
    /// Band in `|xi|`.
    FreqBand { band: Band },
    /// Bump in the direction of `xi` around angle `angle`.
    Direction { angle: f64, half_width: f64 },
    /// Band in the angular momentum `x1 xi2 - x2 xi1`.
    AngularMomentum { band: Band },
    /// The component `xi_index` (0 or 1).
    XiComponent { index: usize },
    Product { factors: Vec<Symbol> },
    Sum { terms: Vec<Symbol> },
    Scale { factor: f64, symbol: Box<Symbol> },
    /// `a(gamma(s, x, xi))` along the disk billiard flow.
    Transported { symbol: Box<Symbol>, s: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dep {
    None,
    X,
    Xi,
    Both,
}

/// Axis-aligned box `[x1_lo, x1_hi, x2_lo, x2_hi]` plus an optional band
/// `lo <= x1 xi2 - x2 xi1 <= hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub bbox: [f64; 4],
    pub strip: Option<(f64, f64)>,
}

impl Region {
    fn everything() -> Self {
        Self {
            bbox: [-BOX_HALF_WIDTH, BOX_HALF_WIDTH, -BOX_HALF_WIDTH, BOX_HALF_WIDTH],
            strip: None,
        }
    }

    fn intersect(&self, o: &Region) -> Region {
        let b = [
            self.bbox[0].max(o.bbox[0]),
            self.bbox[1].min(o.bbox[1]),
            self.bbox[2].max(o.bbox[2]),
            self.bbox[3].min(o.bbox[3]),
        ];
        let strip = match (self.strip, o.strip) {
            (Some(a), Some(c)) => Some((a.0.max(c.0), a.1.min(c.1))),
            (a, None) => a,
            (None, c) => c,
        };
        Region { bbox: b, strip }
    }

    fn union(&self, o: &Region) -> Region {
        let b = [
            self.bbox[0].min(o.bbox[0]),
            self.bbox[1].max(o.bbox[1]),
            self.bbox[2].min(o.bbox[2]),
            self.bbox[3].max(o.bbox[3]),
        ];
        let strip = match (self.strip, o.strip) {
            (Some(a), Some(c)) => Some((a.0.min(c.0), a.1.max(c.1))),
            _ => None,
        };
        Region { bbox: b, strip }
    }

    fn is_empty(&self) -> bool {
        self.bbox[0] > self.bbox[1]
            || self.bbox[2] > self.bbox[3]
            || self.strip.is_some_and(|(a, b)| a > b)
    }
}

impl Symbol {
    pub fn constant(value: f64) -> Self {
        Symbol::Const { value }
    }

    pub fn product(factors: Vec<Symbol>) -> Self {
        Symbol::Product { factors }
    }

    pub fn transported(self, s: f64) -> Self {
        Symbol::Transported {
            symbol: Box::new(self),
            s,
        }
    }

    pub fn squared(self) -> Self {
        Symbol::Product {
            factors: vec![self.clone(), self],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Symbol::Const { value } => {
                if !value.is_finite() {
                    return Err(Error::Invalid("const symbol is not finite".into()));
                }
            }
            Symbol::BumpX { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::Invalid("bump_x radius must be positive".into()));
                }
            }
            Symbol::RadialX { r_in, r_out } => {
                if !(*r_in >= 0.0 && r_in < r_out) {
                    return Err(Error::Invalid("radial_x needs 0 <= r_in < r_out".into()));
                }
            }
            Symbol::FreqBand { band } => band.validate("freq_band")?,
            Symbol::AngularMomentum { band } => band.validate("angular_momentum")?,
            Symbol::Direction { half_width, .. } => {
                if !(*half_width > 0.0 && *half_width <= PI) {
                    return Err(Error::Invalid("direction half_width must lie in (0, pi]".into()));
                }
            }
            Symbol::XiComponent { index } => {
                if *index > 1 {
                    return Err(Error::Invalid("xi_component index must be 0 or 1".into()));
                }
            }
            Symbol::Product { factors } => factors.iter().try_for_each(|f| f.validate())?,
            Symbol::Sum { terms } => terms.iter().try_for_each(|f| f.validate())?,
            Symbol::Scale { symbol, factor } => {
                if !factor.is_finite() {
                    return Err(Error::Invalid("scale factor is not finite".into()));
                }
                symbol.validate()?
            }
            Symbol::Transported { symbol, s } => {
                if !s.is_finite() {
                    return Err(Error::Invalid("transport time is not finite".into()));
                }
                symbol.validate()?
            }
        }
        Ok(())
    }

    /// Algebraically equivalent symbol with constants folded and trivial
    /// transports removed.
    pub fn simplified(&self) -> Symbol {
        match self {
            Symbol::Product { factors } => {
                let mut c = 1.0;
                let mut rest = Vec::new();
                for f in factors.iter().map(|f| f.simplified()) {
                    match f {
                        Symbol::Const { value } => c *= value,
                        other => rest.push(other),
                    }
                }
                if c == 0.0 || rest.is_empty() {
                    return Symbol::constant(c);
                }
                let body = if rest.len() == 1 {
                    rest.pop().expect("one factor")
                } else {
                    Symbol::Product { factors: rest }
                };
                if c == 1.0 {
                    body
                } else {
                    Symbol::Scale {
                        factor: c,
                        symbol: Box::new(body),
                    }
                }
            }
            Symbol::Sum { terms } => {
                let mut c = 0.0;
                let mut rest = Vec::new();
                for t in terms.iter().map(|t| t.simplified()) {
                    match t {
                        Symbol::Const { value } => c += value,
                        other => rest.push(other),
                    }
                }
                if rest.is_empty() {
                    return Symbol::constant(c);
                }
                if c != 0.0 {
                    rest.push(Symbol::constant(c));
                }
                if rest.len() == 1 {
                    rest.pop().expect("one term")
                } else {
                    Symbol::Sum { terms: rest }
                }
            }
            Symbol::Scale { factor, symbol } => match symbol.simplified() {
                _ if *factor == 0.0 => Symbol::constant(0.0),
                Symbol::Const { value } => Symbol::constant(factor * value),
                inner if *factor == 1.0 => inner,
                inner => Symbol::Scale {
                    factor: *factor,
                    symbol: Box::new(inner),
                },
            },
            Symbol::Transported { symbol, s } => {
                let inner = symbol.simplified();
                if *s == 0.0 || inner.dep() == Dep::None {
                    inner
                } else {
                    Symbol::Transported {
                        symbol: Box::new(inner),
                        s: *s,
                    }
                }
            }
            other => other.clone(),
        }
    }

    /// `a(x, xi)`.
    pub fn eval(&self, x: [f64; 2], xi: [f64; 2]) -> f64 {
        match self {
            Symbol::Const { value } => *value,
            Symbol::BumpX { center, radius } => {
                bump((x[0] - center[0]).hypot(x[1] - center[1]) / radius)
            }
            Symbol::RadialX { r_in, r_out } => {
                1.0 - smooth_step((x[0].hypot(x[1]) - r_in) / (r_out - r_in))
            }
            Symbol::FreqBand { band } => band.eval(xi[0].hypot(xi[1])),
            Symbol::Direction { angle, half_width } => {
                if xi == [0.0, 0.0] {
                    return 0.0;
                }
                let d = crate::chart::unwrap_angle(xi[1].atan2(xi[0]), *angle) - angle;
                bump(d / half_width)
            }
            Symbol::AngularMomentum { band } => band.eval(x[0] * xi[1] - x[1] * xi[0]),
            Symbol::XiComponent { index } => xi[*index],
            Symbol::Product { factors } => {
                let mut v = 1.0;
                for f in factors {
                    v *= f.eval(x, xi);
                    if v == 0.0 {
                        return 0.0;
                    }
                }
                v
            }
            Symbol::Sum { terms } => terms.iter().map(|t| t.eval(x, xi)).sum(),
            Symbol::Scale { factor, symbol } => factor * symbol.eval(x, xi),
            Symbol::Transported { symbol, s } => match DiskBilliard.flow(x, xi, *s) {
                Some((y, eta)) => symbol.eval(y, eta),
                None => 0.0,
            },
        }
    }

    fn dep(&self) -> Dep {
        match self {
            Symbol::Const { .. } => Dep::None,
            Symbol::BumpX { .. } | Symbol::RadialX { .. } => Dep::X,
            Symbol::FreqBand { .. } | Symbol::Direction { .. } | Symbol::XiComponent { .. } => Dep::Xi,
            Symbol::AngularMomentum { .. } | Symbol::Transported { .. } => Dep::Both,
            Symbol::Product { factors: v } | Symbol::Sum { terms: v } => {
                v.iter().fold(Dep::None, |acc, f| match (acc, f.dep()) {
                    (Dep::None, d) | (d, Dep::None) => d,
                    (a, b) if a == b => a,
                    _ => Dep::Both,
                })
            }
            Symbol::Scale { symbol, .. } => symbol.dep(),
        }
    }

    /// Splits `a = f(x) g(xi)` when possible.
    pub fn split(&self) -> Option<(Symbol, Symbol)> {
        match self.dep() {
            Dep::None => Some((self.clone(), Symbol::constant(1.0))),
            Dep::X => Some((self.clone(), Symbol::constant(1.0))),
            Dep::Xi => Some((Symbol::constant(1.0), self.clone())),
            Dep::Both => match self {
                Symbol::Product { factors } => {
                    let mut xs = Vec::new();
                    let mut xis = Vec::new();
                    for f in factors {
                        let (a, b) = f.split()?;
                        xs.push(a);
                        xis.push(b);
                    }
                    Some((Symbol::product(xs), Symbol::product(xis)))
                }
                Symbol::Scale { factor, symbol } => {
                    let (a, b) = symbol.split()?;
                    Some((
                        Symbol::Scale {
                            factor: *factor,
                            symbol: Box::new(a),
                        },
                        b,
                    ))
                }
                _ => None,
            },
        }
    }

    /// Product of the position-independent factors at the top level; zero
    /// means the whole symbol vanishes at this `xi`.
    fn xi_factor(&self, xi: [f64; 2]) -> f64 {
        match self {
            Symbol::Product { factors } => factors
                .iter()
                .filter(|f| f.dep() == Dep::Xi)
                .map(|f| f.eval([0.0, 0.0], xi))
                .product(),
            s if s.dep() == Dep::Xi => s.eval([0.0, 0.0], xi),
            _ => 1.0,
        }
    }

    /// Radius of a disk in `xi` outside of which the symbol vanishes.
    pub fn xi_radius(&self) -> Option<f64> {
        match self {
            Symbol::FreqBand { band } => band.upper(),
            Symbol::Product { factors } => factors.iter().filter_map(|f| f.xi_radius()).reduce(f64::min),
            Symbol::Sum { terms } => terms
                .iter()
                .map(|t| t.xi_radius())
                .try_fold(0.0f64, |acc, r| r.map(|r| acc.max(r))),
            Symbol::Scale { symbol, .. } | Symbol::Transported { symbol, .. } => symbol.xi_radius(),
            _ => None,
        }
    }

    /// Positions where `a(., xi)` may be nonzero.
    pub fn x_region(&self, xi: [f64; 2]) -> Region {
        match self {
            Symbol::BumpX { center, radius } => Region {
                bbox: [
                    center[0] - radius,
                    center[0] + radius,
                    center[1] - radius,
                    center[1] + radius,
                ],
                strip: None,
            },
            Symbol::RadialX { r_out, .. } => Region {
                bbox: [-r_out, *r_out, -r_out, *r_out],
                strip: None,
            },
            Symbol::AngularMomentum { band } => Region {
                strip: Some((
                    band.lower().unwrap_or(f64::NEG_INFINITY),
                    band.upper().unwrap_or(f64::INFINITY),
                )),
                ..Region::everything()
            },
            Symbol::Product { factors } => factors
                .iter()
                .fold(Region::everything(), |acc, f| acc.intersect(&f.x_region(xi))),
            Symbol::Sum { terms } => terms
                .iter()
                .map(|t| t.x_region(xi))
                .reduce(|a, b| a.union(&b))
                .unwrap_or_else(Region::everything),
            Symbol::Scale { symbol, .. } => symbol.x_region(xi),
            Symbol::Transported { symbol, s } => {
                let base = symbol.x_region(xi);
                let reach = 2.0 * s.abs() * xi[0].hypot(xi[1]);
                let b = base.bbox;
                let far = [b[0], b[1]]
                    .iter()
                    .flat_map(|&u| [b[2], b[3]].map(|v| u.hypot(v)))
                    .fold(0.0, f64::max);
                let bbox = if far + reach < 1.0 {
                    // no reflection can occur: an exact translation
                    let d = [2.0 * s * xi[0], 2.0 * s * xi[1]];
                    [b[0] - d[0], b[1] - d[0], b[2] - d[1], b[3] - d[1]]
                } else {
                    [
                        (b[0] - reach).max(-1.0),
                        (b[1] + reach).min(1.0),
                        (b[2] - reach).max(-1.0),
                        (b[3] + reach).min(1.0),
                    ]
                };
                // angular momentum is a billiard invariant
                Region {
                    bbox,
                    strip: base.strip,
                }
            }
            _ => Region::everything(),
        }
    }
}

/// Periodic grid on `[-1.5, 1.5)^2`.
#[derive(Clone, Debug)]
pub struct BoxGrid {
    pub n: usize,
    pub dx: f64,
    pub x: Vec<f64>,
}

impl BoxGrid {
    pub fn new(n: usize) -> Self {
        let dx = 2.0 * BOX_HALF_WIDTH / n as f64;
        let x = (0..n).map(|j| -BOX_HALF_WIDTH + j as f64 * dx).collect();
        Self { n, dx, x }
    }

    /// Smallest power of two whose Nyquist frequency exceeds `2.5 / h + 16`,
    /// and at least 256 so that symbol cutoffs are resolved.
    pub fn for_h(h: f64) -> Self {
        Self::for_frequency(2.5 / h + 16.0)
    }

    /// Smallest power of two (at least 256) whose Nyquist frequency
    /// exceeds `kmax`.
    pub fn for_frequency(kmax: f64) -> Self {
        let mut n = 256;
        while PI * n as f64 / (2.0 * BOX_HALF_WIDTH) < kmax {
            n *= 2;
        }
        Self::new(n)
    }

    /// Angular frequency of FFT bin `k`.
    pub fn xi(&self, k: usize) -> f64 {
        2.0 * PI * signed_index(k, self.n) as f64 / (2.0 * BOX_HALF_WIDTH)
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Vector field on a [`BoxGrid`], row-major `f[j2 * n + j1]`.
#[derive(Clone, Debug)]
pub struct BoxField {
    pub grid: BoxGrid,
    pub comps: Vec<Vec<Complex64>>,
    /// Set when the field is an extension by zero from the disk.
    pub masked: bool,
}

impl BoxField {
    pub fn from_fn(grid: BoxGrid, ncomp: usize, f: impl Fn(f64, f64) -> [Complex64; 2] + Sync) -> Self {
        let n = grid.n;
        let rows: Vec<usize> = (0..n).collect();
        let data: Vec<Vec<[Complex64; 2]>> =
            crate::par_map(&rows, |&j2| (0..n).map(|j1| f(grid.x[j1], grid.x[j2])).collect());
        let mut comps = vec![vec![ZERO; n * n]; ncomp];
        for (j2, row) in data.iter().enumerate() {
            for (j1, v) in row.iter().enumerate() {
                for (c, comp) in comps.iter_mut().enumerate() {
                    comp[j2 * n + j1] = v[c];
                }
            }
        }
        Self {
            grid,
            comps,
            masked: false,
        }
    }

    /// Sample a disk mode (extended by zero) on `grid`.
    pub fn from_mode(mode: &Quasimode, grid: BoxGrid) -> Self {
        let nc = mode.n_components();
        let mut f = Self::from_fn(grid, nc, |x, y| mode.eval_cartesian(x, y).0);
        f.masked = true;
        f
    }

    pub fn inner(&self, other: &BoxField) -> Complex64 {
        let dx2 = self.grid.dx * self.grid.dx;
        let mut s = ZERO;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (p, q) in a.iter().zip(b) {
                s += p * q.conj();
            }
        }
        s * dx2
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self).re
    }
}

/// Row-column 2D FFT on `n x n` data.
pub(crate) struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(n: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            n,
            fwd: p.plan_fft_forward(n),
            inv: p.plan_fft_inverse(n),
        }
    }

    pub(crate) fn run(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inv } else { &self.fwd };
        for row in data.chunks_mut(n) {
            plan.process(row);
        }
        let mut col = vec![ZERO; n];
        for j1 in 0..n {
            for j2 in 0..n {
                col[j2] = data[j2 * n + j1];
            }
            plan.process(&mut col);
            for j2 in 0..n {
                data[j2 * n + j1] = col[j2];
            }
        }
    }
}

/// Largest `|x|` at which a symbol may be nonzero when acting on a field
/// extended by zero from the disk.
pub fn support_limit(grid: &BoxGrid) -> f64 {
    1.0 - 2.0 * grid.dx
}

fn margin_error(x: [f64; 2], grid: &BoxGrid) -> Error {
    Error::SupportMargin(format!(
        "symbol is nonzero at |x| = {:.4} > 1 - 2 dx = {:.4}",
        x[0].hypot(x[1]),
        support_limit(grid)
    ))
}

/// Per-component result of `Op_h(a) f` and, when requested, the pairing
/// with `g` accumulated on the fly.
struct Applied {
    out: Option<Vec<Vec<Complex64>>>,
    pairing: Complex64,
}

fn apply_impl(a: &Symbol, f: &BoxField, h: f64, want_field: bool, pair_with: Option<&BoxField>) -> Result<Applied> {
    a.validate()?;
    let a = &a.simplified();
    let grid = &f.grid;
    let n = grid.n;
    let nn = (n * n) as f64;
    let limit = support_limit(grid);
    let fft = Fft2::new(n);

    if let Some((xa, xia)) = a.split() {
        // multiplier in xi, then multiplication in x
        let chi: Vec<f64> = (0..n * n)
            .map(|p| xa.eval([grid.x[p % n], grid.x[p / n]], [0.0, 0.0]))
            .collect();
        if f.masked {
            for (p, &c) in chi.iter().enumerate() {
                let x = [grid.x[p % n], grid.x[p / n]];
                if c != 0.0 && x[0].hypot(x[1]) > limit {
                    return Err(margin_error(x, grid));
                }
            }
        }
        let mut outs = Vec::with_capacity(f.comps.len());
        let mut pairing = ZERO;
        for (c, comp) in f.comps.iter().enumerate() {
            let mut data = comp.clone();
            fft.run(&mut data, false);
            for (p, d) in data.iter_mut().enumerate() {
                let xi = [h * grid.xi(p % n), h * grid.xi(p / n)];
                *d *= xia.eval([0.0, 0.0], xi) / nn;
            }
            fft.run(&mut data, true);
            for (d, &c) in data.iter_mut().zip(&chi) {
                *d *= c;
            }
            if let Some(g) = pair_with {
                let s: Complex64 = data.iter().zip(&g.comps[c]).map(|(p, q)| p * q.conj()).sum();
                pairing += s * grid.dx * grid.dx;
            }
            if want_field {
                outs.push(data);
            }
        }
        return Ok(Applied {
            out: want_field.then_some(outs),
            pairing,
        });
    }

    // direct summation over the phase-space support
    let spectra: Vec<Vec<Complex64>> = f
        .comps
        .iter()
        .map(|comp| {
            let mut d = comp.clone();
            fft.run(&mut d, false);
            d
        })
        .collect();
    let table: Vec<Complex64> = (0..n * n)
        .map(|p| Complex64::from_polar(1.0, 2.0 * PI * ((p / n) * (p % n) % n) as f64 / n as f64))
        .collect();
    let peak = spectra
        .iter()
        .flat_map(|s| s.iter())
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let floor = peak * 1e-14;
    let xi_r = a.xi_radius();
    let ks: Vec<usize> = (0..n * n)
        .filter(|&p| {
            let xi = [h * grid.xi(p % n), h * grid.xi(p / n)];
            if xi_r.is_some_and(|r| xi[0].hypot(xi[1]) > r) {
                return false;
            }
            spectra.iter().any(|s| s[p].norm() > floor) && a.xi_factor(xi) != 0.0
        })
        .collect();
    let nc = f.comps.len();
    let masked = f.masked;

    // each worker handles a chunk of frequencies
    let chunks: Vec<&[usize]> = ks.chunks(64.max(ks.len() / 64 + 1)).collect();
    let partial: Vec<Result<(Option<Vec<Vec<Complex64>>>, Complex64)>> = crate::par_map(&chunks, |chunk| {
        let mut out = if want_field {
            Some(vec![vec![ZERO; n * n]; nc])
        } else {
            None
        };
        let mut pairing = ZERO;
        for &p in chunk.iter() {
            let (k1, k2) = (p % n, p / n);
            let xi = [h * grid.xi(k1), h * grid.xi(k2)];
            let region = a.x_region(xi);
            let region = if masked {
                region.intersect(&Region {
                    bbox: [-1.0, 1.0, -1.0, 1.0],
                    strip: None,
                })
            } else {
                region
            };
            if region.is_empty() {
                continue;
            }
            let idx = |v: f64| ((v + BOX_HALF_WIDTH) / grid.dx).floor();
            let j2_lo = idx(region.bbox[2]).max(0.0) as usize;
            let j2_hi = (idx(region.bbox[3]) + 1.0).min(n as f64 - 1.0);
            if j2_hi < 0.0 {
                continue;
            }
            let j2_hi = j2_hi as usize;
            for j2 in j2_lo..=j2_hi {
                let x2 = grid.x[j2];
                let (mut lo, mut hi) = (region.bbox[0], region.bbox[1]);
                if masked {
                    let half = (1.0 - x2 * x2).max(0.0).sqrt();
                    lo = lo.max(-half);
                    hi = hi.min(half);
                }
                if let Some((slo, shi)) = region.strip {
                    // slo <= x1 xi2 - x2 xi1 <= shi
                    if xi[1] != 0.0 {
                        let a1 = (slo + x2 * xi[0]) / xi[1];
                        let b1 = (shi + x2 * xi[0]) / xi[1];
                        lo = lo.max(a1.min(b1));
                        hi = hi.min(a1.max(b1));
                    } else {
                        let l = -x2 * xi[0];
                        if l < slo || l > shi {
                            continue;
                        }
                    }
                }
                if lo > hi {
                    continue;
                }
                let j1_lo = idx(lo).max(0.0) as usize;
                let j1_hi = (idx(hi) + 1.0).min(n as f64 - 1.0);
                if j1_hi < 0.0 {
                    continue;
                }
                let row_phase = table[k2 * n + j2];
                for j1 in j1_lo..=(j1_hi as usize) {
                    let x = [grid.x[j1], x2];
                    let v = a.eval(x, xi);
                    if v == 0.0 {
                        continue;
                    }
                    if masked && x[0].hypot(x[1]) > limit {
                        if x[0].hypot(x[1]) <= 1.0 {
                            return Err(margin_error(x, grid));
                        }
                        continue;
                    }
                    let phase = table[k1 * n + j1] * row_phase * (v / nn);
                    let jj = j2 * n + j1;
                    for c in 0..nc {
                        let val = spectra[c][p] * phase;
                        if let Some(g) = pair_with {
                            pairing += val * g.comps[c][jj].conj();
                        }
                        if let Some(o) = out.as_mut() {
                            o[c][jj] += val;
                        }
                    }
                }
            }
        }
        Ok((out, pairing * grid.dx * grid.dx))
    });
    let mut total_out = if want_field {
        Some(vec![vec![ZERO; n * n]; nc])
    } else {
        None
    };
    let mut pairing = ZERO;
    for part in partial {
        let (o, p) = part?;
        pairing += p;
        if let (Some(t), Some(o)) = (total_out.as_mut(), o) {
            for (tc, oc) in t.iter_mut().zip(o) {
                for (a, b) in tc.iter_mut().zip(oc) {
                    *a += b;
                }
            }
        }
    }
    Ok(Applied {
        out: total_out,
        pairing,
    })
}

/// `Op_h(a) f` on the box grid.
pub fn apply_interior_op(a: &Symbol, f: &BoxField, h: f64) -> Result<BoxField> {
    let applied = apply_impl(a, f, h, true, None)?;
    Ok(BoxField {
        grid: f.grid.clone(),
        comps: applied.out.expect("field requested"),
        masked: false,
    })
}

/// `(Op_h(a) f | f)` summed over components.
pub fn pairing_field(a: &Symbol, f: &BoxField, h: f64) -> Result<Complex64> {
    Ok(apply_impl(a, f, h, false, Some(f))?.pairing)
}

/// `(Op_h(a) u | u)` for a disk mode on its default box grid.
pub fn pairing(a: &Symbol, mode: &Quasimode) -> Result<Complex64> {
    let f = BoxField::from_mode(mode, BoxGrid::for_h(mode.h));
    pairing_field(a, &f, mode.h)
}

/// Boundary-parallel symbol on the disk collar, evaluated at
/// `(y, x', xi')` with `x'` the polar angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TangentialSymbol {
    Const { value: f64 },
    /// 1 for `y <= y_in`, 0 for `y >= y_out`.
    Profile { y_in: f64, y_out: f64 },
    /// Bump in the angle around `center`.
    Arc { center: f64, half_width: f64 },
    /// Band in `xi'`.
    XiBand { band: Band },
    /// Band in `|xi'|`.
    AbsXiBand { band: Band },
    /// Band in the tangential frequency `lambda = |xi'| / (1 - y)`.
    LambdaBand { band: Band },
    Product { factors: Vec<TangentialSymbol> },
    Sum { terms: Vec<TangentialSymbol> },
    Scale { factor: f64, symbol: Box<TangentialSymbol> },
    /// `a(y, x' + 2 xi' t, xi')`: transport along the gliding flow.
    Glide { symbol: Box<TangentialSymbol>, t: f64 },
}

impl TangentialSymbol {
    pub fn eval(&self, y: f64, x: f64, xi: f64) -> f64 {
        match self {
            TangentialSymbol::Const { value } => *value,
            TangentialSymbol::Profile { y_in, y_out } => 1.0 - smooth_step((y - y_in) / (y_out - y_in)),
            TangentialSymbol::Arc { center, half_width } => {
                let d = crate::chart::unwrap_angle(x, *center) - center;
                bump(d / half_width)
            }
            TangentialSymbol::XiBand { band } => band.eval(xi),
            TangentialSymbol::AbsXiBand { band } => band.eval(xi.abs()),
            TangentialSymbol::LambdaBand { band } => band.eval(xi.abs() / (1.0 - y)),
            TangentialSymbol::Product { factors } => {
                let mut v = 1.0;
                for f in factors {
                    v *= f.eval(y, x, xi);
                    if v == 0.0 {
                        return 0.0;
                    }
                }
                v
            }
            TangentialSymbol::Sum { terms } => terms.iter().map(|t| t.eval(y, x, xi)).sum(),
            TangentialSymbol::Scale { factor, symbol } => factor * symbol.eval(y, x, xi),
            TangentialSymbol::Glide { symbol, t } => symbol.eval(y, x + 2.0 * xi * t, xi),
        }
    }

    pub fn depends_on_angle(&self) -> bool {
        match self {
            TangentialSymbol::Arc { .. } => true,
            TangentialSymbol::Product { factors: v } | TangentialSymbol::Sum { terms: v } => {
                v.iter().any(|f| f.depends_on_angle())
            }
            TangentialSymbol::Scale { symbol, .. } | TangentialSymbol::Glide { symbol, .. } => {
                symbol.depends_on_angle()
            }
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TangentialSymbol::Profile { y_in, y_out } if !(y_in < y_out) => {
                Err(Error::Invalid("profile needs y_in < y_out".into()))
            }
            TangentialSymbol::Arc { half_width, .. } if !(*half_width > 0.0) => {
                Err(Error::Invalid("arc half_width must be positive".into()))
            }
            TangentialSymbol::XiBand { band }
            | TangentialSymbol::AbsXiBand { band }
            | TangentialSymbol::LambdaBand { band } => band.validate("tangential band"),
            TangentialSymbol::Product { factors: v } | TangentialSymbol::Sum { terms: v } => {
                v.iter().try_for_each(|f| f.validate())
            }
            TangentialSymbol::Scale { symbol, .. } | TangentialSymbol::Glide { symbol, .. } => symbol.validate(),
            _ => Ok(()),
        }
    }

    pub fn squared(self) -> Self {
        TangentialSymbol::Product {
            factors: vec![self.clone(), self],
        }
    }

    pub fn glided(self, t: f64) -> Self {
        TangentialSymbol::Glide {
            symbol: Box::new(self),
            t,
        }
    }

    /// Largest `y` at which the symbol may be nonzero.
    pub fn y_extent(&self) -> Option<f64> {
        match self {
            TangentialSymbol::Profile { y_out, .. } => Some(*y_out),
            TangentialSymbol::Product { factors } => factors.iter().filter_map(|f| f.y_extent()).reduce(f64::min),
            TangentialSymbol::Sum { terms } => terms
                .iter()
                .map(|t| t.y_extent())
                .try_fold(0.0f64, |acc, r| r.map(|r| acc.max(r))),
            TangentialSymbol::Scale { symbol, .. } | TangentialSymbol::Glide { symbol, .. } => symbol.y_extent(),
            _ => None,
        }
    }
}

/// Tensor grid on the disk collar `0 <= y <= width`, `r = 1 - y`.
#[derive(Clone, Debug)]
pub struct CollarGrid {
    pub y: Vec<f64>,
    /// Quadrature weights including the area factor `1 - y`.
    pub wy: Vec<f64>,
    pub theta: Vec<f64>,
    pub width: f64,
}

impl CollarGrid {
    /// Gauss panels no wider than `panel` in `y`, `n_theta` angles.
    pub fn new(width: f64, panel: f64, n_theta: usize) -> Self {
        let (y, w) = composite_gauss(0.0, width, panel, 10);
        let wy = y.iter().zip(&w).map(|(y, w)| w * (1.0 - y)).collect();
        let theta = (0..n_theta)
            .map(|j| 2.0 * PI * j as f64 / n_theta as f64)
            .collect();
        Self { y, wy, theta, width }
    }

    /// Grid resolving a mode: panels of width `h`, angles beyond `4(m+1)`.
    pub fn for_mode(mode: &Quasimode, width: f64) -> Self {
        let nt = (4 * (mode.id.m as usize + 2) + 8).next_multiple_of(2);
        Self::new(width, mode.h.min(0.05), nt)
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn len(&self) -> usize {
        self.y.len() * self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Field on a [`CollarGrid`], slice-major `f[iy * n_theta + j]`.
#[derive(Clone, Debug)]
pub struct CollarField {
    pub grid: CollarGrid,
    pub comps: Vec<Vec<Complex64>>,
}

impl CollarField {
    pub fn from_fn(grid: CollarGrid, ncomp: usize, f: impl Fn(f64, f64) -> [Complex64; 2]) -> Self {
        let nt = grid.n_theta();
        let mut comps = vec![vec![ZERO; grid.len()]; ncomp];
        for (i, &y) in grid.y.iter().enumerate() {
            for (j, &t) in grid.theta.iter().enumerate() {
                let v = f(y, t);
                for (c, comp) in comps.iter_mut().enumerate() {
                    comp[i * nt + j] = v[c];
                }
            }
        }
        Self { grid, comps }
    }

    /// Polar components of the velocity of a disk mode.
    pub fn velocity(mode: &Quasimode, grid: CollarGrid) -> Self {
        let nt = grid.n_theta();
        let nc = mode.n_components();
        let mut comps = vec![vec![ZERO; grid.len()]; nc];
        for (i, &y) in grid.y.iter().enumerate() {
            let a = mode.radial(1.0 - y);
            for (j, &t) in grid.theta.iter().enumerate() {
                let e = Complex64::from_polar(1.0, mode.id.m as f64 * t);
                for (c, comp) in comps.iter_mut().enumerate() {
                    comp[i * nt + j] = a.comps[c] * e;
                }
            }
        }
        Self { grid, comps }
    }

    /// The semiclassical pressure of a disk mode.
    pub fn pressure(mode: &Quasimode, grid: CollarGrid) -> Self {
        let nt = grid.n_theta();
        let mut q = vec![ZERO; grid.len()];
        for (i, &y) in grid.y.iter().enumerate() {
            let a = mode.radial(1.0 - y);
            for (j, &t) in grid.theta.iter().enumerate() {
                q[i * nt + j] = a.q * Complex64::from_polar(1.0, mode.id.m as f64 * t);
            }
        }
        Self {
            grid,
            comps: vec![q],
        }
    }

    pub fn inner(&self, other: &CollarField) -> Complex64 {
        let nt = self.grid.n_theta();
        let dtheta = 2.0 * PI / nt as f64;
        let mut s = ZERO;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (i, &w) in self.grid.wy.iter().enumerate() {
                let ring: Complex64 = (0..nt).map(|j| a[i * nt + j] * b[i * nt + j].conj()).sum();
                s += ring * (w * dtheta);
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self).re
    }
}

/// `Op_h(a) f` slice by slice in `y`.
pub fn apply_tangential_op(a: &TangentialSymbol, f: &CollarField, h: f64) -> Result<CollarField> {
    a.validate()?;
    let grid = &f.grid;
    let nt = grid.n_theta();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nt);
    let inv = planner.plan_fft_inverse(nt);
    let angular = a.depends_on_angle();
    let y_max = a.y_extent();
    let mut out = Vec::with_capacity(f.comps.len());
    for comp in &f.comps {
        let mut res = vec![ZERO; comp.len()];
        for (i, &y) in grid.y.iter().enumerate() {
            if y_max.is_some_and(|ym| y >= ym) {
                continue;
            }
            let mut slice = comp[i * nt..(i + 1) * nt].to_vec();
            fwd.process(&mut slice);
            let peak = slice.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if peak == 0.0 {
                continue;
            }
            let dst = &mut res[i * nt..(i + 1) * nt];
            if angular {
                for (n, c) in slice.iter().enumerate() {
                    if c.norm() <= 1e-15 * peak {
                        continue;
                    }
                    let mm = signed_index(n, nt) as f64;
                    let xi = h * mm;
                    for (j, &t) in grid.theta.iter().enumerate() {
                        let v = a.eval(y, t, xi);
                        if v != 0.0 {
                            dst[j] += c * Complex64::from_polar(v / nt as f64, mm * t);
                        }
                    }
                }
            } else {
                for (n, c) in slice.iter_mut().enumerate() {
                    let xi = h * signed_index(n, nt) as f64;
                    *c *= a.eval(y, 0.0, xi) / nt as f64;
                }
                inv.process(&mut slice);
                dst.copy_from_slice(&slice);
            }
        }
        out.push(res);
    }
    Ok(CollarField {
        grid: grid.clone(),
        comps: out,
    })
}

/// `(Op_h(a) u | u)` over the collar for the polar velocity components.
pub fn pairing_tangential(a: &TangentialSymbol, mode: &Quasimode, width: f64) -> Result<Complex64> {
    let f = CollarField::velocity(mode, CollarGrid::for_mode(mode, width));
    Ok(apply_tangential_op(a, &f, mode.h)?.inner(&f))
}

/// Pairings across a family with extrapolation to `h = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingSeries {
    pub h: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Linear fit in `h` through the last three entries, evaluated at 0.
    pub limit: Option<f64>,
    /// `|value_{k+1} - value_k|`.
    pub gaps: Vec<f64>,
}

impl PairingSeries {
    pub fn from_values(h: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if h.len() != values.len() {
            return Err(Error::Invalid("h and values differ in length".into()));
        }
        if h.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Invalid("modes must be ordered by decreasing h".into()));
        }
        let gaps = values.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let limit = if h.len() >= 3 {
            let n = h.len();
            let xs = &h[n - 3..];
            let ys: Vec<f64> = values[n - 3..].iter().map(|z| z.re).collect();
            let mx = xs.iter().sum::<f64>() / 3.0;
            let my = ys.iter().sum::<f64>() / 3.0;
            let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            Some(my - slope * mx)
        } else {
            None
        };
        Ok(Self {
            h,
            values,
            limit,
            gaps,
        })
    }
}

/// Interior pairings of `a` across a family ordered by decreasing `h`.
pub fn measure_sequence(a: &Symbol, modes: &[Quasimode]) -> Result<PairingSeries> {
    let values: Vec<Result<Complex64>> = modes.iter().map(|m| pairing(a, m)).collect();
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    PairingSeries::from_values(modes.iter().map(|m| m.h).collect(), values)
}

/// Tangential pairings across a family.
pub fn measure_sequence_tangential(a: &TangentialSymbol, modes: &[Quasimode], width: f64) -> Result<PairingSeries> {
    let values = modes
        .iter()
        .map(|m| pairing_tangential(a, m, width))
        .collect::<Result<Vec<_>>>()?;
    PairingSeries::from_values(modes.iter().map(|m| m.h).collect(), values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HusimiOptions {
    /// Spacing of the position centers in units of `sqrt(h)`.
    pub center_spacing: f64,
    /// Largest `|xi|` kept.
    pub xi_max: f64,
    /// Centers are placed in `|x| <= x_extent`.
    pub x_extent: f64,
}

impl Default for HusimiOptions {
    fn default() -> Self {
        Self {
            center_spacing: 1.0,
            xi_max: 2.0,
            x_extent: 1.0,
        }
    }
}

/// Coherent-state density `(2 pi h)^{-2} |<phi_{x, xi}, u>|^2` on a
/// phase-space lattice.
#[derive(Clone, Debug)]
pub struct HusimiGrid {
    pub centers: Vec<[f64; 2]>,
    pub xis: Vec<[f64; 2]>,
    /// `density[c * xis.len() + k]`.
    pub density: Vec<f64>,
    pub cell_volume: f64,
    pub dx_center: f64,
    pub dxi: f64,
}

impl HusimiGrid {
    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_volume
    }

    /// `int a H dx dxi`.
    pub fn integrate(&self, a: impl Fn([f64; 2], [f64; 2]) -> f64) -> f64 {
        let nk = self.xis.len();
        let mut s = 0.0;
        for (c, x) in self.centers.iter().enumerate() {
            for (k, xi) in self.xis.iter().enumerate() {
                let d = self.density[c * nk + k];
                if d != 0.0 {
                    s += a(*x, *xi) * d;
                }
            }
        }
        s * self.cell_volume
    }

    /// Phase point of largest density.
    pub fn peak(&self) -> ([f64; 2], [f64; 2]) {
        let nk = self.xis.len();
        let (i, _) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |a, (i, &d)| if d > a.1 { (i, d) } else { a });
        (self.centers[i / nk], self.xis[i % nk])
    }
}

/// Husimi density of a field given by a sampler of its components.
pub fn husimi_field(
    ncomp: usize,
    sampler: impl Fn(f64, f64) -> [Complex64; 2] + Sync,
    h: f64,
    opts: &HusimiOptions,
) -> Result<HusimiGrid> {
    if !(h > 0.0) || !(opts.center_spacing > 0.0) || !(opts.xi_max > 0.0) {
        return Err(Error::Invalid("husimi parameters must be positive".into()));
    }
    if opts.center_spacing > 1.0 + 1e-12 {
        return Err(Error::Resolution(
            "husimi centers must be spaced at most sqrt(h) apart".into(),
        ));
    }
    let sh = h.sqrt();
    let half_patch = 6.3 * sh;
    // sample spacing resolving |xi| <= xi_max + margin
    let dxp_target = PI * h / (opts.xi_max + 1.0);
    let mut m = 16usize;
    while (2.0 * half_patch) / (m as f64) > dxp_target {
        m *= 2;
    }
    let dxp = 2.0 * half_patch / m as f64;
    let stride = ((opts.center_spacing * sh) / dxp).floor().max(1.0) as usize;
    let dxc = stride as f64 * dxp;
    let ext = opts.x_extent;
    let n_half = ((ext + half_patch) / dxp).ceil() as i64 + 1;
    let ng = (2 * n_half + 1) as usize;
    let coord = |i: usize| (i as i64 - n_half) as f64 * dxp;

    let rows: Vec<usize> = (0..ng).collect();
    let samples: Vec<Vec<[Complex64; 2]>> =
        crate::par_map(&rows, |&j2| (0..ng).map(|j1| sampler(coord(j1), coord(j2))).collect());

    let mut centers = Vec::new();
    let mut cidx = Vec::new();
    let c0 = n_half as usize;
    let nc_half = (ext / dxc).floor() as i64;
    for a in -nc_half..=nc_half {
        for b in -nc_half..=nc_half {
            let x = [a as f64 * dxc, b as f64 * dxc];
            if x[0].hypot(x[1]) <= ext + 1e-12 {
                centers.push(x);
                cidx.push((
                    (c0 as i64 + a * stride as i64) as usize,
                    (c0 as i64 + b * stride as i64) as usize,
                ));
            }
        }
    }

    let dkappa = 2.0 * PI / (m as f64 * dxp);
    let mut kept = Vec::new();
    let mut xis = Vec::new();
    for k2 in 0..m {
        for k1 in 0..m {
            let xi = [
                h * dkappa * signed_index(k1, m) as f64,
                h * dkappa * signed_index(k2, m) as f64,
            ];
            if xi[0].hypot(xi[1]) <= opts.xi_max {
                kept.push(k2 * m + k1);
                xis.push(xi);
            }
        }
    }
    let fft = Fft2::new(m);
    let norm = (PI * h).powf(-0.5) * dxp * dxp;
    let scale = (2.0 * PI * h).powi(-2);
    let half = m / 2;
    let window: Vec<f64> = (0..m)
        .map(|i| {
            let d = (i as f64 - half as f64) * dxp;
            (-d * d / (2.0 * h)).exp()
        })
        .collect();
    let per_center: Vec<Vec<f64>> = crate::par_map(&cidx, |&(i1, i2)| {
        let mut dens = vec![0.0; kept.len()];
        for c in 0..ncomp {
            let mut patch = vec![ZERO; m * m];
            for b in 0..m {
                let gi2 = i2 + b - half;
                for a in 0..m {
                    let gi1 = i1 + a - half;
                    patch[b * m + a] = samples[gi2][gi1][c] * (window[a] * window[b]);
                }
            }
            fft.run(&mut patch, false);
            for (d, &p) in dens.iter_mut().zip(&kept) {
                *d += scale * (patch[p] * norm).norm_sqr();
            }
        }
        dens
    });
    let density = per_center.into_iter().flatten().collect();
    let dxi = h * dkappa;
    Ok(HusimiGrid {
        centers,
        xis,
        density,
        cell_volume: dxc * dxc * dxi * dxi,
        dx_center: dxc,
        dxi,
    })
}

/// Husimi density of a disk mode.
pub fn husimi_grid(mode: &Quasimode, opts: &HusimiOptions) -> Result<HusimiGrid> {
    husimi_field(mode.n_components(), |x, y| mode.eval_cartesian(x, y).0, mode.h, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quasimode::{disk_mode, Family, ModeSpec};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn gaussian_packet(grid: BoxGrid, x0: [f64; 2], xi0: [f64; 2], h: f64) -> BoxField {
        BoxField::from_fn(grid, 1, |x, y| {
            let d2 = (x - x0[0]).powi(2) + (y - x0[1]).powi(2);
            let phase = (xi0[0] * x + xi0[1] * y) / h;
            [Complex64::from_polar((-d2 / 0.02).exp(), phase), ZERO]
        })
    }

    #[test]
    fn smooth_primitives() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
        for t in [0.1, 0.3, 0.5] {
            assert!((smooth_step(t) + smooth_step(1.0 - t) - 1.0).abs() < 1e-15);
        }
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 0.0);
        let band = Band::new(Some([0.5, 0.7]), Some([1.3, 1.5]));
        assert_eq!(band.eval(1.0), 1.0);
        assert_eq!(band.eval(0.4), 0.0);
        assert_eq!(band.eval(1.6), 0.0);
        assert!(Band::new(Some([1.0, 0.5]), None).validate("t").is_err());
    }

    #[test]
    fn symbol_tree_round_trips_through_json() {
        let a = Symbol::product(vec![
            Symbol::BumpX {
                center: [0.4, 0.0],
                radius: 0.2,
            },
            Symbol::FreqBand {
                band: Band::new(Some([0.7, 0.8]), Some([1.2, 1.3])),
            },
        ]);
        let text = serde_json::to_string(&a).unwrap();
        let b: Symbol = serde_json::from_str(&text).unwrap();
        assert_eq!(a, b);
        assert!(a.split().is_some());
        assert!(a.clone().transported(0.1).split().is_none());
        assert_eq!(a.xi_radius(), Some(1.3));
    }

    #[test]
    fn simplification_folds_constants() {
        let b = Symbol::BumpX {
            center: [0.0, 0.0],
            radius: 0.3,
        };
        let zero = Symbol::product(vec![b.clone(), Symbol::constant(0.0)]);
        assert_eq!(zero.simplified(), Symbol::constant(0.0));
        assert_eq!(Symbol::constant(2.0).transported(0.4).simplified(), Symbol::constant(2.0));
        assert_eq!(b.clone().transported(0.0).simplified(), b);
        let scaled = Symbol::product(vec![Symbol::constant(2.0), b.clone(), Symbol::constant(0.5)]);
        assert_eq!(scaled.simplified(), b);
        for x in [[0.1, 0.0], [0.05, -0.2]] {
            let s = Symbol::Sum {
                terms: vec![b.clone(), Symbol::constant(1.0), Symbol::constant(-0.5)],
            };
            assert!((s.eval(x, [0.3, 0.1]) - s.simplified().eval(x, [0.3, 0.1])).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_symbol_is_the_identity() {
        let grid = BoxGrid::new(64);
        let f = gaussian_packet(grid, [0.1, -0.2], [0.6, 0.8], 0.05);
        let g = apply_interior_op(&Symbol::constant(1.0), &f, 0.05).unwrap();
        for (a, b) in f.comps[0].iter().zip(&g.comps[0]) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn position_symbol_multiplies() {
        let grid = BoxGrid::new(64);
        let f = gaussian_packet(grid.clone(), [0.0, 0.0], [0.3, 0.0], 0.1);
        let a = Symbol::BumpX {
            center: [0.1, 0.1],
            radius: 0.5,
        };
        let g = apply_interior_op(&a, &f, 0.1).unwrap();
        for (p, (u, v)) in f.comps[0].iter().zip(&g.comps[0]).enumerate() {
            let x = [grid.x[p % 64], grid.x[p / 64]];
            assert!((u * a.eval(x, [0.0, 0.0]) - v).norm() < 1e-12);
        }
    }

    #[test]
    fn momentum_symbol_on_a_wave_packet() {
        // a = chi(x) xi_1 on e^{i x xi0 / h} g(x): Op(a) f ~ xi0_1 chi f
        let h = 0.02;
        let grid = BoxGrid::new(256);
        let xi0 = [0.6, -0.3];
        let f = gaussian_packet(grid.clone(), [0.0, 0.0], xi0, h);
        let a = Symbol::product(vec![
            Symbol::RadialX { r_in: 0.5, r_out: 0.9 },
            Symbol::XiComponent { index: 0 },
        ]);
        let g = apply_interior_op(&a, &f, h).unwrap();
        // quadrature oracle for the quantization integral at one point
        let x = [0.05, 0.02];
        let nearest = |v: f64| ((v + BOX_HALF_WIDTH) / grid.dx).round() as usize;
        let (j, i) = (nearest(x[0]), nearest(x[1]));
        let p = i * 256 + j;
        let approx = f.comps[0][p] * xi0[0];
        assert!((g.comps[0][p] - approx).norm() < 0.05 * approx.norm() + 5.0 * h);
        // direct evaluation of the sum defining Op_h(a)
        let mut direct = ZERO;
        let mut spec = f.comps[0].clone();
        Fft2::new(256).run(&mut spec, false);
        let xp = [grid.x[j], grid.x[i]];
        for k2 in 0..256 {
            for k1 in 0..256 {
                let xi = [h * grid.xi(k1), h * grid.xi(k2)];
                let v = a.eval(xp, xi);
                let phase = 2.0 * PI * ((k1 * j + k2 * i) % 256) as f64 / 256.0;
                direct += spec[k2 * 256 + k1] * Complex64::from_polar(v / 65536.0, phase);
            }
        }
        assert!((direct - g.comps[0][p]).norm() < 1e-10);
    }

    #[test]
    fn direct_sum_agrees_with_fft_path() {
        let h = 0.05;
        let grid = BoxGrid::new(64);
        let f = gaussian_packet(grid, [0.1, 0.0], [0.8, 0.1], h);
        let a = Symbol::product(vec![
            Symbol::BumpX {
                center: [0.1, 0.0],
                radius: 0.4,
            },
            Symbol::FreqBand {
                band: Band::new(Some([0.4, 0.6]), Some([1.1, 1.4])),
            },
        ]);
        // a sum of halves is the same symbol but is not separable, which
        // forces the direct path
        let half = Symbol::Scale {
            factor: 0.5,
            symbol: Box::new(a.clone()),
        };
        let b = Symbol::Sum {
            terms: vec![half.clone(), half],
        };
        assert!(b.split().is_none());
        let fa = apply_interior_op(&a, &f, h).unwrap();
        let fb = apply_interior_op(&b, &f, h).unwrap();
        for (u, v) in fa.comps[0].iter().zip(&fb.comps[0]) {
            assert!((u - v).norm() < 1e-10);
        }
        let pa = pairing_field(&a, &f, h).unwrap();
        let pb = pairing_field(&b, &f, h).unwrap();
        assert!((pa - pb).norm() < 1e-10);
        assert!((pa - fa.inner(&f)).norm() < 1e-12);
    }

    #[test]
    fn margin_is_enforced_for_masked_fields() {
        let mode = disk_mode(&ModeSpec::new(Family::Laplace, 0, 3)).unwrap();
        let a = Symbol::RadialX { r_in: 0.95, r_out: 1.2 };
        assert!(matches!(pairing(&a, &mode), Err(Error::SupportMargin(_))));
        let b = Symbol::RadialX { r_in: 0.5, r_out: 0.9 };
        assert!(pairing(&b, &mode).is_ok());
    }

    #[test]
    fn multiplication_pairing_matches_polar_quadrature() {
        let mode = disk_mode(&ModeSpec::new(Family::Laplace, 0, 1)).unwrap();
        let a = Symbol::RadialX { r_in: 0.3, r_out: 0.8 };
        let p = pairing(&a, &mode).unwrap();
        // radial Gauss quadrature of 2 pi int a(r) |u(r)|^2 r dr
        let (rs, ws) = composite_gauss(0.0, 1.0, 0.005, 12);
        let direct: f64 = rs
            .iter()
            .zip(&ws)
            .map(|(&r, &w)| {
                let u = mode.radial(r).comps[0];
                2.0 * PI * w * r * a.eval([r, 0.0], [0.0, 0.0]) * u.norm_sqr()
            })
            .sum();
        assert!((p.re - direct).abs() < 1e-8, "{} vs {}", p.re, direct);
        assert!(p.im.abs() < 1e-12);
    }

    #[test]
    fn collar_and_interior_partition_of_unity() {
        for spec in [ModeSpec::new(Family::Laplace, 7, 2), ModeSpec::new(Family::Stokes, 3, 2)] {
            let mode = disk_mode(&spec).unwrap();
            let (y0, y1) = (0.15, 0.3);
            let edge = TangentialSymbol::Profile { y_in: y0, y_out: y1 };
            let inner = Symbol::RadialX {
                r_in: 1.0 - y1,
                r_out: 1.0 - y0,
            };
            let total = pairing_tangential(&edge, &mode, 0.5).unwrap() + pairing(&inner, &mode).unwrap();
            assert!((total - c(1.0)).norm() < 1e-6, "{total}");
        }
    }

    #[test]
    fn tangential_multipliers() {
        let mode = disk_mode(&ModeSpec::new(Family::Laplace, 6, 1)).unwrap();
        let grid = CollarGrid::for_mode(&mode, 0.4);
        let f = CollarField::velocity(&mode, grid);
        let band = TangentialSymbol::XiBand {
            band: Band::new(Some([0.2, 0.4]), Some([0.5, 0.9])),
        };
        let xi = mode.h * 6.0;
        let g = apply_tangential_op(&band, &f, mode.h).unwrap();
        let expected = band.eval(0.0, 0.0, xi);
        for (u, v) in f.comps[0].iter().zip(&g.comps[0]) {
            assert!((u * expected - v).norm() < 1e-12);
        }
        let prof = TangentialSymbol::Profile { y_in: 0.1, y_out: 0.2 };
        let g = apply_tangential_op(&prof, &f, mode.h).unwrap();
        let nt = f.grid.n_theta();
        for (i, &y) in f.grid.y.iter().enumerate() {
            for j in 0..nt {
                let p = i * nt + j;
                assert!((f.comps[0][p] * prof.eval(y, 0.0, 0.0) - g.comps[0][p]).norm() < 1e-12);
            }
        }
        // an angle-dependent symbol takes the direct path
        let arc = TangentialSymbol::Arc {
            center: 1.0,
            half_width: 0.5,
        };
        let g = apply_tangential_op(&arc, &f, mode.h).unwrap();
        for (i, _) in f.grid.y.iter().enumerate() {
            for (j, &t) in f.grid.theta.iter().enumerate() {
                let p = i * nt + j;
                assert!((f.comps[0][p] * arc.eval(0.0, t, 0.0) - g.comps[0][p]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn poisson_symbol_reproduces_harmonic_extension() {
        // e^{-y lambda / h} on e^{i m theta} vs (1 - y)^m
        for m in [20usize, 40] {
            let h = 1.0 / m as f64;
            let grid = CollarGrid::new(0.5, h, 4 * m + 8);
            let f = CollarField::from_fn(grid.clone(), 1, |_, t| [Complex64::from_polar(1.0, m as f64 * t), ZERO]);
            let mut g = apply_tangential_op(&TangentialSymbol::Const { value: 1.0 }, &f, h).unwrap();
            let nt = grid.n_theta();
            for (i, &y) in grid.y.iter().enumerate() {
                let lam = 1.0 / (1.0 - y);
                for j in 0..nt {
                    g.comps[0][i * nt + j] *= (-y * lam / h).exp();
                }
            }
            let exact = CollarField::from_fn(grid, 1, |y, t| {
                [Complex64::from_polar((1.0 - y).powi(m as i32), m as f64 * t), ZERO]
            });
            let mut diff = g.clone();
            for (d, e) in diff.comps[0].iter_mut().zip(&exact.comps[0]) {
                *d -= e;
            }
            let rel = (diff.norm_sq() / exact.norm_sq()).sqrt();
            assert!(rel < 2.0 * h, "m={m}: {rel}");
        }
    }

    #[test]
    fn series_extrapolation() {
        let h = vec![0.3, 0.2, 0.1, 0.05];
        let v: Vec<Complex64> = h.iter().map(|h| c(1.0 + 2.0 * h)).collect();
        let s = PairingSeries::from_values(h, v).unwrap();
        assert!((s.limit.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s.gaps.len(), 3);
        let s = PairingSeries::from_values(vec![0.2, 0.1], vec![c(1.0), c(1.0)]).unwrap();
        assert!(s.limit.is_none());
        assert!(PairingSeries::from_values(vec![0.1, 0.2], vec![c(1.0), c(1.0)]).is_err());
    }

    #[test]
    fn identity_series() {
        let modes: Vec<_> = [3u32, 4, 5]
            .iter()
            .map(|&k| disk_mode(&ModeSpec::new(Family::Laplace, 2, k)).unwrap())
            .collect();
        let partition = Symbol::RadialX { r_in: 0.3, r_out: 0.6 };
        let s1 = measure_sequence(&partition, &modes).unwrap();
        let edge = TangentialSymbol::Profile { y_in: 0.4, y_out: 0.7 };
        let s2 = measure_sequence_tangential(&edge, &modes, 0.75).unwrap();
        for (a, b) in s1.values.iter().zip(&s2.values) {
            assert!((a + b - c(1.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn husimi_of_a_wave_packet_peaks_at_its_center() {
        let h = 0.01;
        let x0 = [0.2, -0.1];
        let xi0 = [0.6, 0.8];
        let width2 = h;
        let norm = (PI * width2).powf(-0.5);
        let sampler = |x: f64, y: f64| {
            let d2 = (x - x0[0]).powi(2) + (y - x0[1]).powi(2);
            [
                Complex64::from_polar(norm * (-d2 / (2.0 * width2)).exp(), (xi0[0] * x + xi0[1] * y) / h),
                ZERO,
            ]
        };
        let opts = HusimiOptions {
            x_extent: 0.5,
            ..Default::default()
        };
        let hg = husimi_field(1, sampler, h, &opts).unwrap();
        let (xp, kp) = hg.peak();
        assert!((xp[0] - x0[0]).abs() <= hg.dx_center && (xp[1] - x0[1]).abs() <= hg.dx_center);
        assert!((kp[0] - xi0[0]).abs() <= hg.dxi && (kp[1] - xi0[1]).abs() <= hg.dxi);
        assert!((hg.total_mass() - 1.0).abs() < 0.05, "{}", hg.total_mass());
    }

    #[test]
    fn husimi_of_a_laplace_mode() {
        let mode = disk_mode(&ModeSpec::new(Family::Laplace, 0, 20)).unwrap();
        let opts = HusimiOptions {
            x_extent: 1.05,
            ..Default::default()
        };
        let hg = husimi_grid(&mode, &opts).unwrap();
        assert!((hg.total_mass() - 1.0).abs() < 0.05, "{}", hg.total_mass());
        let off = hg.integrate(|_, xi| {
            let r = xi[0].hypot(xi[1]);
            if (r - 1.0).abs() > 0.2 {
                1.0
            } else {
                0.0
            }
        });
        assert!(off <= 0.1, "{off}");
        assert!(hg.density.iter().all(|&d| d >= 0.0));
    }
}
