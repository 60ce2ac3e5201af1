//! Generalized bicharacteristic flow.
//!
//! Inside a collar the Hamiltonian system of `p = eta^2 - r` is integrated
//! with an adaptive Dormand-Prince 5(4) scheme and boundary contacts are
//! located by bisection. Contacts are dispatched on their class: hyperbolic
//! points reflect (`eta -> -eta`), diffractive points only record a
//! tangency, and the remaining glancing points start a gliding segment along
//! `H_{-r_0}` that lasts until `r_1` turns positive. Away from the boundary
//! of a planar domain rays are straight lines `x + 2 s xi`.

use serde::{Deserialize, Serialize};

use crate::chart::{velocity_from, CollarChart, PhasePoint};
use crate::classify::{classify, BoundaryClass, ClassifyOptions, Tag};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceOptions {
    /// Largest integrator step inside the collar.
    pub max_step: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Accuracy of event localization in flow time.
    pub tol_event: f64,
    /// On-shell tolerance for initial data.
    pub tol_p: f64,
    /// Contacts with `r_0` below this are reported as shallow reflections.
    pub tol_shallow: f64,
    /// Fixed step of the gliding integrator.
    pub glide_step: f64,
    /// Spacing of samples on straight Cartesian pieces.
    pub sample_ds: f64,
    pub max_events: usize,
    pub classify: ClassifyOptions,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            max_step: 0.02,
            rtol: 1e-12,
            atol: 1e-13,
            tol_event: 1e-10,
            tol_p: 1e-8,
            tol_shallow: 1e-4,
            glide_step: 1e-3,
            sample_ds: 0.05,
            max_events: 100_000,
            classify: ClassifyOptions::default(),
        }
    }
}

impl TraceOptions {
    pub fn validate(&self) -> Result<()> {
        self.classify.validate()?;
        for (name, v) in [
            ("max_step", self.max_step),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("tol_event", self.tol_event),
            ("tol_p", self.tol_p),
            ("tol_shallow", self.tol_shallow),
            ("glide_step", self.glide_step),
            ("sample_ds", self.sample_ds),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentMode {
    Interior,
    Gliding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    HyperbolicReflection,
    DiffractiveTangency,
    GlidingEntry,
    GlidingExit,
    CollarExit,
}

/// One point of a ray in the coordinates of the chart it was traced in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaySample {
    pub s: f64,
    pub point: PhasePoint,
    /// `[x1, x2, xi1, xi2]` for planar charts.
    pub cartesian: Option<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaySegment {
    pub mode: SegmentMode,
    pub samples: Vec<RaySample>,
    /// Indices into [`GeneralizedRay::events`].
    pub entry_event: Option<usize>,
    pub exit_event: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayEvent {
    pub kind: EventKind,
    pub s: f64,
    pub point: PhasePoint,
    pub class: Option<BoundaryClass>,
    pub eta_before: f64,
    pub eta_after: f64,
    /// 0 for the boundary of the traced chart, 1 for the other component.
    pub boundary: usize,
    /// Set on reflections with `r_0 < tol_shallow`.
    pub shallow: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedRay {
    pub segments: Vec<RaySegment>,
    pub events: Vec<RayEvent>,
    pub end: RaySample,
}

impl GeneralizedRay {
    pub fn samples(&self) -> impl Iterator<Item = (&RaySegment, &RaySample)> {
        self.segments
            .iter()
            .flat_map(|seg| seg.samples.iter().map(move |s| (seg, s)))
    }

    pub fn reflections(&self) -> impl Iterator<Item = &RayEvent> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::HyperbolicReflection)
    }

    /// Largest jump of `(y, eta^2, x', xi')` across events.
    pub fn continuity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for pair in self.segments.windows(2) {
            let (Some(a), Some(b)) = (pair[0].samples.last(), pair[1].samples.first()) else {
                continue;
            };
            let (p, q) = (a.point, b.point);
            worst = worst
                .max((p.y - q.y).abs())
                .max((p.eta * p.eta - q.eta * q.eta).abs())
                .max((p.x - q.x).abs())
                .max((p.xi - q.xi).abs());
        }
        worst
    }
}

type State4 = [f64; 4];

const DP_A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince step; returns the fifth-order solution and the
/// embedded error estimate.
fn dp45_step(f: &dyn Fn(&State4) -> State4, z: &State4, h: f64) -> (State4, State4) {
    let mut k = [[0.0; 4]; 7];
    k[0] = f(z);
    for stage in 1..7 {
        let mut zs = *z;
        for (j, a) in DP_A[stage - 1].iter().enumerate() {
            for i in 0..4 {
                zs[i] += h * a * k[j][i];
            }
        }
        k[stage] = f(&zs);
    }
    let mut out = *z;
    let mut err = [0.0; 4];
    for i in 0..4 {
        for s in 0..7 {
            out[i] += h * DP_B5[s] * k[s][i];
            err[i] += h * (DP_B5[s] - DP_B4[s]) * k[s][i];
        }
    }
    (out, err)
}

fn collar_rhs(chart: &CollarChart, sigma: f64) -> impl Fn(&State4) -> State4 + '_ {
    move |z: &State4| {
        let p = PhasePoint::new(z[0], z[1], z[2], z[3]);
        let v = velocity_from(&p, &chart.r_unchecked(z[0], z[1], z[3]));
        [sigma * v.y_dot, sigma * v.x_dot, sigma * v.eta_dot, sigma * v.xi_dot]
    }
}

fn to_state(p: &PhasePoint) -> State4 {
    [p.y, p.x, p.eta, p.xi]
}

fn from_state(z: &State4) -> PhasePoint {
    PhasePoint::new(z[0], z[1], z[2], z[3])
}

/// One classical RK4 step of the gliding field `H_{-r_0}` followed by a
/// projection back onto `r_0 = 0`.
fn glide_rk4(chart: &CollarChart, x: f64, xi: f64, dt: f64) -> (f64, f64) {
    let f = |x: f64, xi: f64| {
        let d = chart.r_unchecked(0.0, x, xi);
        (-d.dxi, d.dx)
    };
    let (a1, b1) = f(x, xi);
    let (a2, b2) = f(x + 0.5 * dt * a1, xi + 0.5 * dt * b1);
    let (a3, b3) = f(x + 0.5 * dt * a2, xi + 0.5 * dt * b2);
    let (a4, b4) = f(x + dt * a3, xi + dt * b3);
    let x = x + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    let xi = xi + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    project_glancing(chart, x, xi)
}

fn project_glancing(chart: &CollarChart, mut x: f64, mut xi: f64) -> (f64, f64) {
    for _ in 0..3 {
        let d = chart.r_unchecked(0.0, x, xi);
        let g2 = d.dx * d.dx + d.dxi * d.dxi;
        if g2 == 0.0 || d.r == 0.0 {
            break;
        }
        x -= d.r * d.dx / g2;
        xi -= d.r * d.dxi / g2;
    }
    (x, xi)
}

/// Reflect an incoming hyperbolic boundary point: `eta -> +sqrt(r_0)`.
pub fn reflect_hyperbolic(chart: &CollarChart, p: &PhasePoint) -> Result<PhasePoint> {
    let opts = TraceOptions::default();
    let r0 = chart.r0(p.x, p.xi);
    if p.y != 0.0 {
        return Err(Error::Invalid(format!("reflection needs y = 0, got {}", p.y)));
    }
    if r0 <= opts.classify.tol_g {
        return Err(Error::NotHyperbolic { r0 });
    }
    if (p.eta * p.eta - r0).abs() > opts.tol_p || p.eta > 0.0 {
        return Err(Error::Invalid(format!(
            "incoming eta must equal -sqrt(r0) = {}, got {}",
            -r0.sqrt(),
            p.eta
        )));
    }
    Ok(PhasePoint {
        eta: r0.sqrt(),
        ..*p
    })
}

/// Advance a gliding point by flow time `ds` along `H_{-r_0}`.
pub fn step_gliding(chart: &CollarChart, p: &PhasePoint, ds: f64) -> Result<PhasePoint> {
    let opts = TraceOptions::default();
    let r0 = chart.r0(p.x, p.xi);
    if p.y != 0.0 || p.eta != 0.0 || r0.abs() > opts.tol_p {
        return Err(Error::GlidingExit {
            r0,
            r1: chart.r1(p.x, p.xi),
        });
    }
    if ds == 0.0 {
        return Ok(*p);
    }
    let n = (ds.abs() / opts.glide_step).ceil().max(1.0) as usize;
    let dt = ds / n as f64;
    let (mut x, mut xi) = (p.x, p.xi);
    for _ in 0..n {
        (x, xi) = glide_rk4(chart, x, xi, dt);
    }
    let r1 = chart.r1(x, xi);
    if r1 > opts.classify.tol_g {
        return Err(Error::GlidingExit {
            r0: chart.r0(x, xi),
            r1,
        });
    }
    Ok(PhasePoint::boundary(x, 0.0, xi))
}

#[derive(Clone, Copy, Debug)]
enum State {
    Cart(State4),
    Collar(usize, PhasePoint),
    Glide(usize, PhasePoint),
}

struct Tracer<'a> {
    collars: Vec<CollarChart>,
    opts: &'a TraceOptions,
    sigma: f64,
    tau: f64,
    tau_max: f64,
    angle_ref: f64,
    segments: Vec<RaySegment>,
    events: Vec<RayEvent>,
}

enum CollarOutcome {
    Continue(State),
    Stop,
}

impl<'a> Tracer<'a> {
    fn planar(&self) -> bool {
        self.collars[0].is_planar()
    }

    fn width(&self) -> f64 {
        self.collars[0].collar_width
    }

    /// Depth at which rays leave the collar for the Cartesian region.
    fn y_out(&self) -> f64 {
        0.75 * self.width()
    }

    /// Depth at which straight rays enter a collar.
    fn y_in(&self) -> f64 {
        0.5 * self.width()
    }

    fn sample_of(&mut self, state: &State) -> RaySample {
        let s = self.sigma * self.tau;
        match *state {
            State::Cart(c) => {
                let p = self.collars[0]
                    .from_cartesian(&c, self.angle_ref)
                    .expect("planar chart");
                self.angle_ref = p.x;
                RaySample {
                    s,
                    point: p,
                    cartesian: Some(c),
                }
            }
            State::Collar(idx, p) | State::Glide(idx, p) => {
                self.angle_ref = p.x;
                if idx == 0 {
                    RaySample {
                        s,
                        point: p,
                        cartesian: self.collars[0].to_cartesian(&p),
                    }
                } else {
                    let c = self.collars[idx].to_cartesian(&p).expect("planar chart");
                    let mut q = self.collars[0].from_cartesian(&c, p.x).expect("planar chart");
                    q.x = p.x;
                    RaySample {
                        s,
                        point: q,
                        cartesian: Some(c),
                    }
                }
            }
        }
    }

    fn push_sample(&mut self, state: &State) {
        let sample = self.sample_of(state);
        self.segments
            .last_mut()
            .expect("open segment")
            .samples
            .push(sample);
    }

    fn record_event(
        &mut self,
        kind: EventKind,
        idx: usize,
        before: &State,
        after: &State,
        mode_after: SegmentMode,
        class: Option<BoundaryClass>,
    ) -> Result<()> {
        if self.events.len() >= self.opts.max_events {
            return Err(Error::Integrator(format!(
                "more than {} events before s = {}",
                self.opts.max_events,
                self.sigma * self.tau
            )));
        }
        let eta_of = |s: &State| match s {
            State::Collar(_, p) | State::Glide(_, p) => p.eta,
            State::Cart(_) => f64::NAN,
        };
        self.push_sample(before);
        let pre = self.sample_of(before);
        let shallow = kind == EventKind::HyperbolicReflection
            && class
                .as_ref()
                .is_some_and(|c| c.witness.r0 < self.opts.tol_shallow);
        let id = self.events.len();
        self.events.push(RayEvent {
            kind,
            s: self.sigma * self.tau,
            point: pre.point,
            class,
            eta_before: eta_of(before),
            eta_after: eta_of(after),
            boundary: idx,
            shallow,
        });
        self.segments.last_mut().expect("open segment").exit_event = Some(id);
        self.segments.push(RaySegment {
            mode: mode_after,
            samples: Vec::new(),
            entry_event: Some(id),
            exit_event: None,
        });
        self.push_sample(after);
        Ok(())
    }

    /// Time until a straight Cartesian ray enters one of the collars.
    fn cart_hit(&self, c: &State4) -> Option<(f64, usize)> {
        let v = [2.0 * self.sigma * c[2], 2.0 * self.sigma * c[3]];
        let a = v[0] * v[0] + v[1] * v[1];
        if a == 0.0 {
            return None;
        }
        let b = 2.0 * (c[0] * v[0] + c[1] * v[1]);
        let rr = c[0] * c[0] + c[1] * c[1];
        let mut best: Option<(f64, usize)> = None;
        for (idx, chart) in self.collars.iter().enumerate() {
            let (radius, drho) = chart.radius_at(self.y_in()).expect("planar chart");
            let cc = rr - radius * radius;
            let disc = b * b - 4.0 * a * cc;
            let t = if drho < 0.0 {
                // outer circle, approached from inside
                if cc >= 0.0 {
                    Some(0.0)
                } else {
                    Some((-b + disc.sqrt()) / (2.0 * a))
                }
            } else if cc <= 0.0 {
                Some(0.0)
            } else if disc >= 0.0 && b < 0.0 {
                Some((-b - disc.sqrt()) / (2.0 * a))
            } else {
                None
            };
            if let Some(t) = t {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t.max(0.0), idx));
                }
            }
        }
        best
    }

    fn advance_cart(&mut self, c: State4) -> Result<State> {
        let remaining = self.tau_max - self.tau;
        let hit = self.cart_hit(&c);
        let dt = hit.map_or(remaining, |(t, _)| t.min(remaining));
        let n = (dt / self.opts.sample_ds).ceil().max(1.0) as usize;
        let sigma = self.sigma;
        let at = move |t: f64| {
            [
                c[0] + 2.0 * sigma * t * c[2],
                c[1] + 2.0 * sigma * t * c[3],
                c[2],
                c[3],
            ]
        };
        let tau0 = self.tau;
        for i in 1..=n {
            let t = dt * i as f64 / n as f64;
            self.tau = tau0 + t;
            if i < n {
                self.push_sample(&State::Cart(at(t)));
            }
        }
        self.tau = tau0 + dt;
        let end = at(dt);
        match hit {
            Some((t, idx)) if t <= remaining => {
                let mut p = self.collars[idx]
                    .from_cartesian(&end, self.angle_ref)
                    .expect("planar chart");
                p.y = self.y_in();
                Ok(State::Collar(idx, p))
            }
            _ => Ok(State::Cart(end)),
        }
    }

    /// Bisection for the first root of `g` along a single step from `z0`.
    fn locate(
        &self,
        f: &dyn Fn(&State4) -> State4,
        z0: &State4,
        h: f64,
        g: &dyn Fn(&State4) -> f64,
    ) -> Result<(f64, State4)> {
        let g0 = g(z0);
        let (mut lo, mut hi) = (0.0, h);
        let z_hi = dp45_step(f, z0, hi).0;
        if g0 == 0.0 {
            return Ok((0.0, *z0));
        }
        if (g(&z_hi) > 0.0) == (g0 > 0.0) {
            return Err(Error::EventLocalization(format!(
                "no sign change bracketed near s = {}",
                self.sigma * self.tau
            )));
        }
        let mut z_lo = *z0;
        while hi - lo > 0.1 * self.opts.tol_event {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let zm = dp45_step(f, z0, mid).0;
            if (g(&zm) > 0.0) == (g0 > 0.0) {
                lo = mid;
                z_lo = zm;
            } else {
                hi = mid;
            }
        }
        Ok((lo, z_lo))
    }

    /// Dispatch a boundary point `p` (with `y = 0`) on its class.
    fn handle_contact(&mut self, idx: usize, p: PhasePoint) -> Result<State> {
        let chart = &self.collars[idx];
        let class = classify(chart, p.x, p.xi, &self.opts.classify)?;
        let before = State::Collar(idx, p);
        match class.tag {
            Tag::Hyperbolic => {
                if self.sigma * p.eta >= 0.0 {
                    // outgoing already
                    return Ok(before);
                }
                let r0 = class.witness.r0;
                let after = PhasePoint {
                    eta: self.sigma * r0.sqrt(),
                    ..p
                };
                let after_state = State::Collar(idx, after);
                self.record_event(
                    EventKind::HyperbolicReflection,
                    idx,
                    &before,
                    &after_state,
                    SegmentMode::Interior,
                    Some(class),
                )?;
                Ok(after_state)
            }
            Tag::Elliptic => Err(Error::Integrator(format!(
                "ray reached an elliptic boundary point (r0 = {})",
                class.witness.r0
            ))),
            Tag::Glancing if class.is_diffractive() => {
                let after = State::Collar(idx, PhasePoint { eta: 0.0, ..p });
                self.record_event(
                    EventKind::DiffractiveTangency,
                    idx,
                    &before,
                    &after,
                    SegmentMode::Interior,
                    Some(class),
                )?;
                Ok(after)
            }
            Tag::Glancing => {
                let (x, xi) = project_glancing(chart, p.x, p.xi);
                let after = State::Glide(idx, PhasePoint::boundary(x, 0.0, xi));
                self.record_event(
                    EventKind::GlidingEntry,
                    idx,
                    &before,
                    &after,
                    SegmentMode::Gliding,
                    Some(class),
                )?;
                Ok(after)
            }
        }
    }

    fn advance_collar(&mut self, idx: usize, p: PhasePoint, h_try: &mut f64) -> Result<CollarOutcome> {
        let chart = self.collars[idx].clone();
        let f = collar_rhs(&chart, self.sigma);
        let z0 = to_state(&p);
        let mut h = h_try.min(self.opts.max_step).min(self.tau_max - self.tau);
        let (z1, h_used) = loop {
            let (z1, err) = dp45_step(&f, &z0, h);
            let mut e: f64 = 0.0;
            for i in 0..4 {
                let sc = self.opts.atol + self.opts.rtol * z0[i].abs().max(z1[i].abs());
                e = e.max(err[i].abs() / sc);
            }
            if !e.is_finite() {
                return Err(Error::Integrator(format!(
                    "non-finite state near s = {}",
                    self.sigma * self.tau
                )));
            }
            if e <= 1.0 {
                let grow = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
                *h_try = h * grow;
                break (z1, h);
            }
            h *= (0.9 * e.powf(-0.2)).clamp(0.1, 0.9);
            if h < 1e-15 {
                return Err(Error::Integrator(format!(
                    "step size underflow near s = {}",
                    self.sigma * self.tau
                )));
            }
        };

        // candidate events: (time within the step, kind)
        #[derive(Clone, Copy, PartialEq)]
        enum Ev {
            Contact,
            Switch,
            Exit,
            Turn,
        }
        let mut found: Option<(f64, State4, Ev)> = None;
        let consider = |t: f64, z: State4, ev: Ev, found: &mut Option<(f64, State4, Ev)>| {
            if found.is_none_or(|(bt, _, _)| t < bt) {
                *found = Some((t, z, ev));
            }
        };
        if z1[0] < 0.0 && z0[0] >= 0.0 && self.sigma * z1[2] < 0.0 {
            let (t, z) = self.locate(&f, &z0, h_used, &|z| z[0])?;
            consider(t, z, Ev::Contact, &mut found);
        }
        if self.planar() {
            let y_out = self.y_out();
            if z1[0] > y_out && z0[0] <= y_out {
                let (t, z) = self.locate(&f, &z0, h_used, &|z| z[0] - y_out)?;
                consider(t, z, Ev::Switch, &mut found);
            }
        } else {
            let w = self.width();
            if z1[0] > w && z0[0] <= w {
                let (t, z) = self.locate(&f, &z0, h_used, &|z| z[0] - w)?;
                consider(t, z, Ev::Exit, &mut found);
            }
        }
        let sigma = self.sigma;
        if sigma * z0[2] < 0.0 && sigma * z1[2] >= 0.0 && z0[0].min(z1[0]) < 1e-6 {
            let (t, z) = self.locate(&f, &z0, h_used, &|z| sigma * z[2])?;
            if z[0] <= self.opts.tol_event {
                consider(t, z, Ev::Turn, &mut found);
            }
        }

        match found {
            None => {
                self.tau += h_used;
                let st = State::Collar(idx, from_state(&z1));
                self.push_sample(&st);
                Ok(CollarOutcome::Continue(st))
            }
            Some((t, z, ev)) => {
                self.tau += t;
                let q = from_state(&z);
                match ev {
                    Ev::Contact | Ev::Turn => {
                        let q = PhasePoint {
                            y: 0.0,
                            eta: if ev == Ev::Turn { 0.0 } else { q.eta },
                            ..q
                        };
                        Ok(CollarOutcome::Continue(self.handle_contact(idx, q)?))
                    }
                    Ev::Switch => {
                        let c = chart.to_cartesian(&q).expect("planar chart");
                        self.push_sample(&State::Collar(idx, q));
                        Ok(CollarOutcome::Continue(State::Cart(c)))
                    }
                    Ev::Exit => {
                        let st = State::Collar(idx, q);
                        self.record_event(
                            EventKind::CollarExit,
                            idx,
                            &st,
                            &st,
                            SegmentMode::Interior,
                            None,
                        )?;
                        Ok(CollarOutcome::Stop)
                    }
                }
            }
        }
    }

    fn advance_glide(&mut self, idx: usize, p: PhasePoint) -> Result<State> {
        let chart = self.collars[idx].clone();
        let dt = self.opts.glide_step.min(self.tau_max - self.tau);
        let (x, xi) = glide_rk4(&chart, p.x, p.xi, self.sigma * dt);
        let tol_g = self.opts.classify.tol_g;
        if chart.r1(x, xi) <= tol_g {
            self.tau += dt;
            let st = State::Glide(idx, PhasePoint::boundary(x, 0.0, xi));
            self.push_sample(&st);
            return Ok(st);
        }
        // release: first time r_1 exceeds tol_g
        let (mut lo, mut hi) = (0.0, dt);
        while hi - lo > 0.1 * self.opts.tol_event {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (xm, qm) = glide_rk4(&chart, p.x, p.xi, self.sigma * mid);
            if chart.r1(xm, qm) > tol_g {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (x, xi) = glide_rk4(&chart, p.x, p.xi, self.sigma * hi);
        self.tau += hi;
        let class = classify(&chart, x, xi, &self.opts.classify).ok();
        let before = State::Glide(idx, PhasePoint::boundary(x, 0.0, xi));
        let after = State::Collar(idx, PhasePoint::boundary(x, 0.0, xi));
        self.record_event(
            EventKind::GlidingExit,
            idx,
            &before,
            &after,
            SegmentMode::Interior,
            class,
        )?;
        Ok(after)
    }
}

/// Trace the generalized bicharacteristic through `start` for flow time
/// `s_max` (negative values trace backward).
///
/// `start` is given in the coordinates of `chart`. For planar charts points
/// deeper than the collar are accepted and handed to the Cartesian region.
pub fn trace(
    chart: &CollarChart,
    start: &PhasePoint,
    s_max: f64,
    opts: &TraceOptions,
) -> Result<GeneralizedRay> {
    opts.validate()?;
    if !s_max.is_finite() {
        return Err(Error::Invalid("s_max must be finite".into()));
    }
    let mut collars = vec![chart.clone()];
    if let Some(other) = chart.other_boundary() {
        collars.push(other);
    }
    let mut tracer = Tracer {
        collars,
        opts,
        sigma: if s_max < 0.0 { -1.0 } else { 1.0 },
        tau: 0.0,
        tau_max: s_max.abs(),
        angle_ref: start.x,
        segments: Vec::new(),
        events: Vec::new(),
    };
    if start.y < 0.0 {
        return Err(Error::Invalid(format!("start has y = {} < 0", start.y)));
    }

    let mut state = initial_state(&tracer, start)?;
    tracer.segments.push(RaySegment {
        mode: SegmentMode::Interior,
        samples: Vec::new(),
        entry_event: None,
        exit_event: None,
    });
    if let State::Collar(idx, p) = state {
        if p.y == 0.0 && (p.eta == 0.0 || tracer.sigma * p.eta < 0.0) {
            state = tracer.handle_contact(idx, p)?;
        } else {
            tracer.push_sample(&state);
        }
    } else {
        tracer.push_sample(&state);
    }

    let mut h_try = opts.max_step;
    while tracer.tau < tracer.tau_max {
        state = match state {
            State::Cart(c) => tracer.advance_cart(c)?,
            State::Collar(idx, p) => {
                if tracer.planar() && p.y > tracer.y_out() {
                    let c = tracer.collars[idx].to_cartesian(&p).expect("planar chart");
                    State::Cart(c)
                } else {
                    match tracer.advance_collar(idx, p, &mut h_try)? {
                        CollarOutcome::Continue(s) => s,
                        CollarOutcome::Stop => break,
                    }
                }
            }
            State::Glide(idx, p) => tracer.advance_glide(idx, p)?,
        };
    }
    let end = tracer.sample_of(&state);
    if tracer
        .segments
        .last()
        .and_then(|s| s.samples.last())
        .is_none_or(|last| last.s != end.s || last.point != end.point)
    {
        tracer.segments.last_mut().expect("segment").samples.push(end);
    }
    Ok(GeneralizedRay {
        segments: tracer.segments,
        events: tracer.events,
        end,
    })
}

fn initial_state(tracer: &Tracer, start: &PhasePoint) -> Result<State> {
    let chart = &tracer.collars[0];
    let tol_p = tracer.opts.tol_p;
    if chart.is_planar() {
        let c = chart
            .to_cartesian(start)
            .ok_or_else(|| Error::Invalid("start lies outside the domain".into()))?;
        let rho = c[0].hypot(c[1]);
        let energy = c[2] * c[2] + c[3] * c[3] - 1.0;
        if energy.abs() > tol_p {
            return Err(Error::Invalid(format!(
                "start is off-shell: |eta^2 - r| = {}",
                energy.abs()
            )));
        }
        // pick the chart by depth below each boundary component
        for (idx, ch) in tracer.collars.iter().enumerate() {
            let (rho0, drho) = ch.radius_at(0.0).expect("planar chart");
            let depth = (rho - rho0) * drho;
            if depth < -1e-12 {
                return Err(Error::Invalid("start lies outside the domain".into()));
            }
            if depth <= tracer.y_in() {
                let mut p = ch.from_cartesian(&c, start.x).expect("planar chart");
                if idx == 0 {
                    p = *start;
                }
                if p.y.abs() < 1e-15 {
                    p.y = 0.0;
                }
                return Ok(State::Collar(idx, p));
            }
        }
        Ok(State::Cart(c))
    } else {
        let d = chart.r_unchecked(start.y, start.x, start.xi);
        if (start.eta * start.eta - d.r).abs() > tol_p {
            return Err(Error::Invalid(format!(
                "start is off-shell: |eta^2 - r| = {}",
                (start.eta * start.eta - d.r).abs()
            )));
        }
        Ok(State::Collar(0, *start))
    }
}

/// Endpoints of the flow for time `s` from each point; failures are kept
/// per point.
pub fn flow_pullback(
    chart: &CollarChart,
    points: &[PhasePoint],
    s: f64,
    opts: &TraceOptions,
) -> Vec<Result<PhasePoint>> {
    crate::par_map(points, |p| {
        if s == 0.0 {
            return Ok(*p);
        }
        trace(chart, p, s, opts).map(|ray| ray.end.point)
    })
}

/// Closed-form billiard flow in the unit disk for Cartesian phase points.
///
/// Rays move with velocity `2 xi` and reflect specularly at `|x| = 1`;
/// after the first contact every chord is the previous one rotated by the
/// same angle, so long times cost O(1). Off-shell points are handled by
/// homogeneity.
#[derive(Clone, Copy, Debug, Default)]
pub struct DiskBilliard;

impl DiskBilliard {
    /// Returns `None` for points outside the closed disk.
    pub fn flow(&self, x: [f64; 2], xi: [f64; 2], s: f64) -> Option<([f64; 2], [f64; 2])> {
        let rr = x[0] * x[0] + x[1] * x[1];
        if rr > 1.0 + 1e-12 {
            return None;
        }
        let speed2 = xi[0] * xi[0] + xi[1] * xi[1];
        if s == 0.0 || speed2 == 0.0 {
            return Some((x, xi));
        }
        let sign = s.signum();
        let mut t_left = s.abs();
        let v = [2.0 * sign * xi[0], 2.0 * sign * xi[1]];
        let a = 4.0 * speed2;
        let b = 2.0 * (x[0] * v[0] + x[1] * v[1]);
        let disc = (b * b - 4.0 * a * (rr - 1.0)).max(0.0);
        let t_hit = ((-b + disc.sqrt()) / (2.0 * a)).max(0.0);
        if t_left <= t_hit {
            return Some(([x[0] + t_left * v[0], x[1] + t_left * v[1]], xi));
        }
        t_left -= t_hit;
        let mut p = [x[0] + t_hit * v[0], x[1] + t_hit * v[1]];
        let pn = p[0].hypot(p[1]);
        p = [p[0] / pn, p[1] / pn];
        let reflect = |p: [f64; 2], w: [f64; 2]| {
            let d = p[0] * w[0] + p[1] * w[1];
            [w[0] - 2.0 * d * p[0], w[1] - 2.0 * d * p[1]]
        };
        // direction of motion in time t_left, unit speed-normalized
        let mut w = reflect(p, [sign * xi[0], sign * xi[1]]);
        let wn = speed2.sqrt();
        let ang = (p[0] * w[1] - p[1] * w[0]) / wn;
        let chord_time = (1.0 - ang * ang).max(0.0).sqrt() / wn;
        let step_angle = if ang >= 0.0 { 1.0 } else { -1.0 } * 2.0 * ang.abs().min(1.0).acos();
        if chord_time > 0.0 {
            let n = (t_left / chord_time).floor();
            t_left -= n * chord_time;
            let (sn, cs) = (n * step_angle).sin_cos();
            let rot = |u: [f64; 2]| [cs * u[0] - sn * u[1], sn * u[0] + cs * u[1]];
            p = rot(p);
            w = rot(w);
            if t_left >= chord_time {
                t_left = 0.0;
            }
        } else {
            t_left = 0.0;
        }
        let end = [p[0] + 2.0 * t_left * w[0], p[1] + 2.0 * t_left * w[1]];
        Some((end, [sign * w[0], sign * w[1]]))
    }
}

/// Angle advanced between consecutive reflections of a unit-speed disk
/// billiard ray with angular momentum `xi'`.
pub fn disk_bounce_angle(xi: f64) -> f64 {
    2.0 * xi.abs().min(1.0).acos() * if xi < 0.0 { -1.0 } else { 1.0 }
}

/// Flow time between consecutive reflections in the disk.
pub fn disk_chord_time(xi: f64) -> f64 {
    (1.0 - xi * xi).max(0.0).sqrt()
}
