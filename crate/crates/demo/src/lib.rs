//! Browser bindings: trace a billiard ray, render a disk eigenmode and
//! classify a boundary point. Results cross the boundary as JSON text or
//! flat `f64` arrays.

use mslab::chart::{Boundary, CollarChart, PhasePoint};
use mslab::classify::{classify, ClassifyOptions};
use mslab::flow::{trace, TraceOptions};
use mslab::quasimode::{disk_mode, Family, ModeSpec};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// `disk`, or `annulus` (inner radius 0.4, traced from the outer circle).
fn chart(name: &str) -> Result<CollarChart, String> {
    match name {
        "disk" => Ok(CollarChart::disk()),
        "annulus" => CollarChart::annulus(0.4, Boundary::Outer).map_err(|e| e.to_string()),
        other => Err(format!("unknown chart {other:?}")),
    }
}

/// Ray from the boundary point at angle `x` with tangential momentum
/// `xi`, for flow time `s`. Returns `{points, events, end}` as JSON with
/// Cartesian `[x, y]` positions.
#[wasm_bindgen]
pub fn trace_ray(chart_name: &str, x: f64, xi: f64, s: f64) -> Result<String, String> {
    let c = chart(chart_name)?;
    let r = c.eval_r(0.0, x, xi).map_err(|e| e.to_string())?.r;
    if r < 0.0 {
        return Err(format!("|xi| = {} exceeds 1: no ray leaves this point", xi.abs()));
    }
    let start = PhasePoint::boundary(x, r.sqrt(), xi);
    let opts = TraceOptions {
        max_events: 2000,
        ..TraceOptions::default()
    };
    let ray = trace(&c, &start, s, &opts).map_err(|e| e.to_string())?;
    let points: Vec<[f64; 2]> = ray
        .samples()
        .filter_map(|(_, smp)| smp.cartesian.map(|p| [p[0], p[1]]))
        .collect();
    let events: Vec<_> = ray
        .events
        .iter()
        .map(|e| {
            let p = c.to_cartesian(&e.point).map(|p| [p[0], p[1]]);
            json!({"kind": format!("{:?}", e.kind), "s": e.s, "at": p, "boundary": e.boundary})
        })
        .collect();
    let end = ray.end.cartesian.map(|p| [p[0], p[1]]);
    Ok(json!({"points": points, "events": events, "end": end}).to_string())
}

/// `|u|^2` of a disk eigenmode on an `n x n` grid over `[-1, 1]^2`, row
/// by row from the top, scaled to a maximum of 1; zero outside the disk.
#[wasm_bindgen]
pub fn mode_intensity(family: &str, m: u32, k: u32, n: usize) -> Result<Vec<f64>, String> {
    let family: Family = family.parse().map_err(|e: mslab::Error| e.to_string())?;
    if !(2..=1024).contains(&n) {
        return Err("image size must lie in [2, 1024]".into());
    }
    if m > 200 || !(1..=50).contains(&k) {
        return Err("mode indices out of the demo range (m <= 200, 1 <= k <= 50)".into());
    }
    let mode = disk_mode(&ModeSpec::new(family, m, k)).map_err(|e| e.to_string())?;
    let step = 2.0 / (n - 1) as f64;
    let mut img = Vec::with_capacity(n * n);
    for i in 0..n {
        let y = 1.0 - i as f64 * step;
        for j in 0..n {
            let x = -1.0 + j as f64 * step;
            let (u, _) = mode.eval_cartesian(x, y);
            img.push(u[0].norm_sqr() + u[1].norm_sqr());
        }
    }
    let max = img.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        img.iter_mut().for_each(|v| *v /= max);
    }
    Ok(img)
}

/// Class of the boundary point `(x, xi)` with its witnesses, as JSON.
#[wasm_bindgen]
pub fn classify_point(chart_name: &str, x: f64, xi: f64) -> Result<String, String> {
    let c = chart(chart_name)?;
    let class = classify(&c, x, xi, &ClassifyOptions::default()).map_err(|e| e.to_string())?;
    Ok(json!({
        "label": class.label(),
        "r0": class.witness.r0,
        "r1": class.witness.r1,
        "class": class,
    })
    .to_string())
}
