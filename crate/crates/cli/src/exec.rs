//! Runs validated experiments and writes their outputs.

use std::f64::consts::PI;

use mslab::chart::{CollarChart, PhasePoint};
use mslab::classify::classify;
use mslab::flow::trace;
use mslab::parametrix::{parametrix_error, BoundaryData, ParametrixSymbol};
use mslab::quant::{husimi_grid, measure_sequence, measure_sequence_tangential, CollarGrid};
use mslab::quasimode::{disk_mode, ModeSpec, Quasimode};
use mslab::verify::{
    car_mass, elliptic_mass, gliding_gap, h_oscillation_tail, invariance_gap, support_gap, PropagationReport,
    Verdict,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{Config, Experiment, ModeFamily};
use crate::output::{num, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    /// Ran without a verdict to give.
    Done,
    Error,
}

impl Status {
    pub fn is_failure(self) -> bool {
        matches!(self, Status::Fail | Status::Error)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub name: String,
    pub kind: &'static str,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiments: Vec<Outcome>,
}

impl Summary {
    pub fn failed(&self) -> bool {
        self.experiments.iter().any(|o| o.status.is_failure())
    }
}

type Step = Result<(Status, Vec<String>), String>;

/// Runs the selected experiments in order and writes `summary.json`.
pub fn run(cfg: &Config, w: &Writer, select: impl Fn(&Experiment) -> bool) -> std::io::Result<Summary> {
    let chart = cfg.chart();
    let mut outcomes = Vec::new();
    for e in cfg.experiments.iter().filter(|e| select(e)) {
        let result = run_one(cfg, &chart, e, w);
        let outcome = match result {
            Ok((status, files)) => Outcome {
                name: e.name().to_string(),
                kind: e.kind(),
                status,
                message: None,
                files,
            },
            Err(message) => Outcome {
                name: e.name().to_string(),
                kind: e.kind(),
                status: Status::Error,
                message: Some(message),
                files: Vec::new(),
            },
        };
        outcomes.push(outcome);
    }
    let summary = Summary { experiments: outcomes };
    w.json("summary.json", &summary)?;
    Ok(summary)
}

fn io(e: std::io::Error) -> String {
    format!("write failed: {e}")
}

fn err(e: mslab::Error) -> String {
    e.to_string()
}

fn file_name(p: std::path::PathBuf) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn build_modes(fam: &ModeFamily) -> Result<Vec<Quasimode>, String> {
    fam.specs()
        .iter()
        .map(|s| disk_mode(s).map_err(|e| format!("mode ({}, {}): {e}", s.m, s.k)))
        .collect()
}

fn run_one(cfg: &Config, chart: &CollarChart, e: &Experiment, w: &Writer) -> Step {
    match e {
        Experiment::Classify {
            name,
            points,
            random_points,
            xi_max,
        } => {
            let mut pts = points.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for _ in 0..*random_points {
                pts.push([rng.gen_range(0.0..2.0 * PI), rng.gen_range(-xi_max..=*xi_max)]);
            }
            let mut rows = Vec::new();
            let mut classes = Vec::new();
            for &[x, xi] in &pts {
                let c = classify(chart, x, xi, &cfg.classify).map_err(err)?;
                rows.push(vec![num(x), num(xi), c.label(), num(c.witness.r0), num(c.witness.r1)]);
                classes.push(json!({"x": x, "xi": xi, "label": c.label(), "class": c}));
            }
            let csv = w.csv(&format!("{name}.csv"), &["x", "xi", "label", "r0", "r1"], &rows).map_err(io)?;
            let js = w.json(&format!("{name}.json"), &json!({ "points": classes })).map_err(io)?;
            Ok((Status::Done, vec![file_name(csv), file_name(js)]))
        }
        Experiment::Trace { name, start, s } => {
            let r = chart.eval_r(start.y, start.x, start.xi).map_err(err)?.r;
            let eta = match start.eta {
                Some(eta) => eta,
                None if r >= 0.0 => r.sqrt(),
                None => return Err(format!("start is off the energy surface (r = {r} < 0)")),
            };
            let p = PhasePoint::new(start.y, start.x, eta, start.xi);
            let ray = trace(chart, &p, *s, &cfg.trace).map_err(err)?;
            let mut rows = Vec::new();
            for (i, seg) in ray.segments.iter().enumerate() {
                for smp in &seg.samples {
                    let q = smp.point;
                    rows.push(vec![
                        i.to_string(),
                        format!("{:?}", seg.mode).to_lowercase(),
                        num(smp.s),
                        num(q.y),
                        num(q.x),
                        num(q.eta),
                        num(q.xi),
                    ]);
                }
            }
            let csv = w
                .csv(&format!("{name}.csv"), &["segment", "mode", "s", "y", "x", "eta", "xi"], &rows)
                .map_err(io)?;
            let js = w
                .json(
                    &format!("{name}.events.json"),
                    &json!({"start": p, "s": s, "events": ray.events, "end": ray.end, "continuity_defect": ray.continuity_defect()}),
                )
                .map_err(io)?;
            Ok((Status::Done, vec![file_name(csv), file_name(js)]))
        }
        Experiment::Mode {
            name,
            family,
            m,
            k,
            grid,
        } => {
            let mut spec = ModeSpec::new(*family, *m, *k);
            if let Some((nr, nt)) = grid {
                spec = spec.with_grid(*nr, *nt);
            }
            let mode = disk_mode(&spec).map_err(err)?;
            let mut comps: Vec<(&str, &[Complex64])> = match mode.u.len() {
                1 => vec![("u", &mode.u[0])],
                _ => vec![("u_x", &mode.u[0]), ("u_y", &mode.u[1])],
            };
            if mode.u.len() == 2 {
                comps.push(("q", &mode.q));
            }
            let mut bytes = Vec::new();
            for (_, c) in &comps {
                for z in c.iter() {
                    bytes.extend_from_slice(&z.re.to_le_bytes());
                    bytes.extend_from_slice(&z.im.to_le_bytes());
                }
            }
            let bin = w.bytes(&format!("{name}.bin"), &bytes).map_err(io)?;
            let header = json!({
                "data": file_name(bin.clone()),
                "dtype": "float64 little-endian",
                "layout": "component-major; within a component index i_r * n_theta + i_theta; each value (re, im)",
                "shape": [mode.grid.r.len(), mode.grid.n_theta()],
                "components": comps.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
                "family": family, "m": m, "k": k,
                "lambda": mode.lambda, "h": mode.h,
                "r": mode.grid.r, "theta": mode.grid.theta,
                "residuals": mode.residual_report(),
            });
            let js = w.json(&format!("{name}.json"), &header).map_err(io)?;
            Ok((Status::Done, vec![file_name(bin), file_name(js)]))
        }
        Experiment::Husimi {
            name,
            family,
            m,
            k,
            options,
        } => {
            let mode = disk_mode(&ModeSpec::new(*family, *m, *k)).map_err(err)?;
            let g = husimi_grid(&mode, options).map_err(err)?;
            let bytes: Vec<u8> = g.density.iter().flat_map(|d| d.to_le_bytes()).collect();
            let bin = w.bytes(&format!("{name}.bin"), &bytes).map_err(io)?;
            let header = json!({
                "data": file_name(bin.clone()),
                "dtype": "float64 little-endian",
                "layout": "density[c * n_xi + j] at (centers[c], xis[j])",
                "shape": [g.centers.len(), g.xis.len()],
                "family": family, "m": m, "k": k, "h": mode.h,
                "options": options,
                "cell_volume": g.cell_volume,
                "total_mass": g.total_mass(),
                "centers": g.centers, "xis": g.xis,
            });
            let js = w.json(&format!("{name}.json"), &header).map_err(io)?;
            Ok((Status::Done, vec![file_name(bin), file_name(js)]))
        }
        Experiment::Parametrix {
            name,
            m,
            h,
            order,
            delta0,
        } => {
            let sym = ParametrixSymbol::build(chart, *delta0, *order).map_err(err)?;
            let mut rows = Vec::new();
            for (i, &mi) in m.iter().enumerate() {
                let hi = h.as_ref().map_or(1.0 / mi as f64, |h| h[i]);
                let grid = CollarGrid::new(chart.collar_width, hi.min(0.05), 4 * mi as usize + 8);
                let q = BoundaryData::mode(grid.n_theta(), mi);
                let e = parametrix_error(&sym, &q, hi, grid).map_err(err)?;
                rows.push(vec![mi.to_string(), num(hi), order.to_string(), num(*delta0), num(e)]);
            }
            let csv = w
                .csv(&format!("{name}.csv"), &["m", "h", "order", "delta0", "relative_error"], &rows)
                .map_err(io)?;
            Ok((Status::Done, vec![file_name(csv)]))
        }
        Experiment::Measure {
            name,
            modes,
            symbol,
            tangential,
            width,
        } => {
            let ms = build_modes(modes)?;
            let series = match (symbol, tangential) {
                (Some(a), _) => measure_sequence(a, &ms),
                (_, Some(a)) => measure_sequence_tangential(a, &ms, *width),
                _ => unreachable!("validated"),
            }
            .map_err(err)?;
            let rows: Vec<Vec<String>> = ms
                .iter()
                .zip(&series.values)
                .map(|(md, v)| vec![md.id.m.to_string(), md.id.k.to_string(), num(md.h), num(v.re), num(v.im)])
                .collect();
            let csv = w.csv(&format!("{name}.csv"), &["m", "k", "h", "re", "im"], &rows).map_err(io)?;
            let js = w
                .json(
                    &format!("{name}.json"),
                    &json!({"symbol": symbol, "tangential": tangential, "series": {
                        "h": series.h, "values": series.values, "limit": series.limit, "gaps": series.gaps}}),
                )
                .map_err(io)?;
            Ok((Status::Done, vec![file_name(csv), file_name(js)]))
        }
        Experiment::HOscillation {
            name,
            modes,
            radii,
            limit,
        } => {
            let ms = build_modes(modes)?;
            let tails = h_oscillation_tail(&ms, radii).map_err(err)?;
            let mut rows = Vec::new();
            for t in &tails {
                for (i, r) in t.radii.iter().enumerate() {
                    rows.push(vec![
                        t.m.to_string(),
                        t.k.to_string(),
                        num(t.h),
                        num(*r),
                        num(t.interior[i]),
                        num(t.tangential[i]),
                    ]);
                }
            }
            let nested = tails.iter().all(|t| {
                let mut order: Vec<usize> = (0..t.radii.len()).collect();
                order.sort_by(|&a, &b| t.radii[a].total_cmp(&t.radii[b]));
                order
                    .windows(2)
                    .all(|p| t.interior[p[1]] <= t.interior[p[0]] && t.tangential[p[1]] <= t.tangential[p[0]])
            });
            let worst = tails
                .iter()
                .map(|t| {
                    let i = (0..t.radii.len()).max_by(|&a, &b| t.radii[a].total_cmp(&t.radii[b])).unwrap();
                    t.interior[i].max(t.tangential[i])
                })
                .fold(0.0, f64::max);
            let status = match limit {
                Some(l) if nested && worst <= *l => Status::Pass,
                Some(_) => Status::Fail,
                None if nested => Status::Done,
                None => Status::Fail,
            };
            let csv = w
                .csv(&format!("{name}.csv"), &["m", "k", "h", "radius", "interior", "tangential"], &rows)
                .map_err(io)?;
            let js = w
                .json(
                    &format!("{name}.json"),
                    &json!({"rows": tails, "nested": nested, "worst_at_largest_radius": worst, "limit": limit}),
                )
                .map_err(io)?;
            Ok((status, vec![file_name(csv), file_name(js)]))
        }
        Experiment::InvarianceGap { name, modes, symbol, s } => {
            let ms = build_modes(modes)?;
            report(w, name, invariance_gap(chart, &ms, symbol, *s, &cfg.thresholds))
        }
        Experiment::SupportGap { name, modes, symbol, s } => {
            let ms = build_modes(modes)?;
            report(w, name, support_gap(chart, &ms, symbol, *s, &cfg.thresholds))
        }
        Experiment::GlidingGap {
            name,
            modes,
            symbol,
            t,
            width,
        } => {
            let ms = build_modes(modes)?;
            report(w, name, gliding_gap(&ms, symbol, *t, *width, &cfg.thresholds))
        }
        Experiment::EllipticMass {
            name,
            modes,
            symbol,
            width,
        } => {
            let ms = build_modes(modes)?;
            report(w, name, elliptic_mass(&ms, symbol, *width, &cfg.thresholds))
        }
        Experiment::CarMass { name, modes, symbol } => {
            let ms = build_modes(modes)?;
            report(w, name, car_mass(&ms, symbol, &cfg.thresholds))
        }
    }
}

/// One CSV of rows and one JSON report per propagation experiment.
fn report(w: &Writer, name: &str, r: mslab::Result<PropagationReport>) -> Step {
    let r = r.map_err(err)?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| {
            vec![
                row.m.to_string(),
                row.k.to_string(),
                num(row.h),
                num(row.before.re),
                num(row.before.im),
                opt(row.after.map(|a| a.re)),
                opt(row.after.map(|a| a.im)),
                opt(row.gap()),
            ]
        })
        .collect();
    let csv = w
        .csv(
            &format!("{name}.csv"),
            &["m", "k", "h", "before_re", "before_im", "after_re", "after_im", "gap"],
            &rows,
        )
        .map_err(io)?;
    let js = w.json(&format!("{name}.json"), &r).map_err(io)?;
    let status = match r.verdict {
        Verdict::Pass => Status::Pass,
        Verdict::Fail => Status::Fail,
        Verdict::Inconclusive => Status::Inconclusive,
    };
    Ok((status, vec![file_name(csv), file_name(js)]))
}
