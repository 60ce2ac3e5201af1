//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::{Duration, Instant};

use mslab::chart::{Boundary, CollarChart, PhasePoint, PolyTerm};
use mslab::classify::{classify, ClassifyOptions, Tag};
use mslab::flow::{disk_bounce_angle, disk_chord_time, trace, SegmentMode, TraceOptions};
use mslab::parametrix::{
    band_mass, band_mass_slope, parametrix_error, BoundaryData, ParametrixSymbol, DEFAULT_DELTA0,
};
use mslab::quant::{Band, CollarGrid, Symbol, TangentialSymbol};
use mslab::quasimode::{bessel_zero_mk, disk_mode, stokes_trial_mode, Family, ModeSpec, Quasimode};
use mslab::special::bessel_j;
use mslab::verify::{
    car_mass, elliptic_mass, gliding_gap, h_oscillation_tail, invariance_gap, support_gap, Thresholds, Verdict,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sci(v: &[f64], digits: usize) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.digits$e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn mode(family: Family, m: u32, k: u32) -> Quasimode {
    disk_mode(&ModeSpec::new(family, m, k)).expect("mode")
}

fn within(elapsed: Duration, limit: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit, || {
        format!("{what} took {:.2} s, limit {limit} s", elapsed.as_secs_f64())
    })
}

fn classifier_ground_truth() -> Outcome {
    let t = Instant::now();
    let o = ClassifyOptions::default();
    let disk = CollarChart::disk();
    let hyp = classify(&disk, 0.0, 0.5, &o).map_err(|e| e.to_string())?;
    ensure(hyp.tag == Tag::Hyperbolic, || format!("xi'=0.5 gave {}", hyp.label()))?;
    let glide = classify(&disk, 0.0, 1.0, &o).map_err(|e| e.to_string())?;
    ensure(glide.label() == "G2-", || format!("xi'=1 gave {}", glide.label()))?;
    ensure((glide.witness.r1 + 2.0).abs() <= 1e-6, || format!("r1 = {}", glide.witness.r1))?;
    let ann = CollarChart::annulus(0.4, Boundary::Inner).map_err(|e| e.to_string())?;
    let diff = classify(&ann, 1.0, 0.4, &o).map_err(|e| e.to_string())?;
    ensure(diff.label() == "G2+", || format!("annulus tangent gave {}", diff.label()))?;
    let model = CollarChart::model(vec![
        PolyTerm { z: 0, zeta: 1, y: 0, coef: 1.0 },
        PolyTerm { z: 1, zeta: 0, y: 1, coef: 1.0 },
    ])
    .map_err(|e| e.to_string())?;
    let g3 = classify(&model, 0.0, 0.0, &o).map_err(|e| e.to_string())?;
    ensure(g3.label() == "G3", || format!("model origin gave {}", g3.label()))?;
    within(t.elapsed(), 1.0, "classification")?;
    Ok(format!("H, G2- (r1 = {:.9}), G2+, G3", glide.witness.r1))
}

fn flow_fidelity() -> Outcome {
    let t = Instant::now();
    let disk = CollarChart::disk();
    let opts = TraceOptions::default();
    let xi: f64 = 0.93;
    let x0 = 0.4;
    let start = PhasePoint::boundary(x0, (1.0 - xi * xi).sqrt(), xi);
    let ray = trace(&disk, &start, 10.5 * disk_chord_time(xi), &opts).map_err(|e| e.to_string())?;
    let hits: Vec<f64> = ray.reflections().map(|e| e.point.x).collect();
    ensure(hits.len() == 10, || format!("{} reflections", hits.len()))?;
    let step = disk_bounce_angle(xi);
    let mut angle_err: f64 = 0.0;
    for (j, x) in hits.iter().enumerate() {
        let expected = x0 + (j + 1) as f64 * step;
        // compare on the circle
        let d = (x - expected).rem_euclid(2.0 * PI);
        angle_err = angle_err.max(d.min(2.0 * PI - d));
    }
    ensure(angle_err <= 1e-8, || format!("bounce angle error {angle_err:.2e}"))?;
    let mut drift: f64 = 0.0;
    for (_, s) in ray.samples() {
        let r = disk.eval_r(s.point.y, s.point.x, s.point.xi).map_err(|e| e.to_string())?.r;
        drift = drift.max((s.point.eta.powi(2) - r).abs());
    }
    ensure(drift <= 1e-8, || format!("energy drift {drift:.2e}"))?;

    // gliding: x' advances at speed 2, so angle pi takes time pi / 2
    let glide = trace(&disk, &PhasePoint::boundary(0.0, 0.0, 1.0), FRAC_PI_2, &opts).map_err(|e| e.to_string())?;
    let gliding: Vec<_> = glide.samples().filter(|(seg, _)| seg.mode == SegmentMode::Gliding).collect();
    let covered = gliding.last().map_or(0.0, |(_, s)| s.s) - gliding.first().map_or(0.0, |(_, s)| s.s);
    ensure((covered - FRAC_PI_2).abs() < 1e-12, || format!("gliding covers {covered} of {FRAC_PI_2}"))?;
    let mut glide_err: f64 = 0.0;
    for (_, s) in &gliding {
        glide_err = glide_err.max((s.point.x - 2.0 * s.s).abs()).max(s.point.y.abs());
    }
    glide_err = glide_err.max((glide.end.point.x - PI).abs());
    ensure(glide_err <= 1e-8, || format!("gliding error {glide_err:.2e}"))?;
    within(t.elapsed(), 5.0, "flow checks")?;
    Ok(format!(
        "angle err {angle_err:.1e}, drift {drift:.1e}, gliding err {glide_err:.1e}"
    ))
}

fn quasimode_exactness() -> Outcome {
    let mut summary = Vec::new();
    for family in [Family::Laplace, Family::Stokes] {
        let t = Instant::now();
        let specs: Vec<(u32, u32)> = (0..=64).flat_map(|m| (1..=8).map(move |k| (m, k))).collect();
        let (mut pde, mut div, mut tr) = (0.0f64, 0.0f64, 0.0f64);
        for &(m, k) in &specs {
            let rep = mode(family, m, k).residual_report();
            pde = pde.max(rep.pde_residual);
            div = div.max(rep.div_residual);
            tr = tr.max(rep.trace_norm);
        }
        ensure(pde <= 1e-6 && div <= 1e-8 && tr <= 1e-8, || {
            format!("{family:?}: pde {pde:.1e}, div {div:.1e}, trace {tr:.1e}")
        })?;
        within(t.elapsed(), 120.0, "family sweep")?;
        summary.push(format!(
            "{family:?} pde {pde:.1e} div {div:.1e} trace {tr:.1e} in {:.1} s",
            t.elapsed().as_secs_f64()
        ));
    }
    // Dirichlet trace collapses only at zeros of J_{m+1}
    let mut worst_exact: f64 = 0.0;
    let mut least_off = f64::INFINITY;
    for &(m, k) in &[(0u32, 1u32), (3, 2), (12, 4), (40, 1)] {
        let lambda = bessel_zero_mk(m + 1, k);
        ensure(bessel_j(m as i64 + 1, lambda).abs() < 1e-12, || format!("J_{}({lambda}) != 0", m + 1))?;
        let grid = ModeSpec::default_grid(m, lambda + 0.5);
        let exact = stokes_trial_mode(m, lambda, grid).map_err(|e| e.to_string())?;
        worst_exact = worst_exact.max(exact.boundary_defect());
        for d in [-0.2, -0.02, 0.02, 0.2] {
            let off = stokes_trial_mode(m, lambda + d, grid).map_err(|e| e.to_string())?;
            least_off = least_off.min(off.boundary_defect());
        }
    }
    ensure(worst_exact < 1e-10 && least_off > 1e3 * worst_exact.max(1e-14), || {
        format!("trace at eigenvalue {worst_exact:.1e}, off eigenvalue {least_off:.1e}")
    })?;
    summary.push(format!("trace {worst_exact:.1e} at eigenvalues, >= {least_off:.1e} off"));
    Ok(summary.join("; "))
}

fn hidden_regularity() -> Outcome {
    let norms: Vec<f64> = (1..=6)
        .map(|k| mode(Family::Stokes, 3, k).residual_report().normal_derivative_norm)
        .collect();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(min > 0.0 && max / min <= 3.0, || format!("norms {norms:.3?}"))?;
    Ok(format!("||h d_nu u|| in [{min:.3}, {max:.3}], spread {:.2}", max / min))
}

fn car_support() -> Outcome {
    let modes: Vec<_> = (1..=6).map(|k| mode(Family::Stokes, 3, k)).collect();
    // |xi| <= 0.8 near the boundary, far from the unit cosphere
    let a = Symbol::product(vec![
        Symbol::RadialX { r_in: 0.9, r_out: 0.97 },
        Symbol::FreqBand { band: Band::new(None, Some([0.5, 0.8])) },
    ]);
    let th = Thresholds { theta_pass: 0.02, ..Thresholds::default() };
    let r = car_mass(&modes, &a, &th).map_err(|e| e.to_string())?;
    let ratios = r.rate_ratios();
    let last = r.rows.last().unwrap().before.norm();
    ensure(r.verdict == Verdict::Pass, || format!("ratios {ratios:.2?}, final {last:.3e}"))?;
    Ok(format!("rate ratios {ratios:.2?}, final {last:.3e}"))
}

fn h_oscillation() -> Outcome {
    let modes: Vec<_> = (2..=6).map(|k| mode(Family::Laplace, 3, k)).collect();
    let radii = [2.0, 3.0, 4.0];
    let rows = h_oscillation_tail(&modes, &radii).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for row in &rows {
        for tails in [&row.interior, &row.tangential] {
            ensure(tails.windows(2).all(|w| w[1] <= w[0]), || {
                format!("k={} tails not nested: {}", row.k, sci(tails, 2))
            })?;
            worst = worst.max(tails[2]);
        }
    }
    ensure(worst <= 0.01, || format!("tail at R=4 reaches {worst:.3e}"))?;
    Ok(format!("max tail at R=4 {worst:.2e}, nested"))
}

fn elliptic_vanishing() -> Outcome {
    // lambda = |xi'| / (1 - y) in [1.3, 1.6]: no real eta, so elliptic
    let a = TangentialSymbol::Product {
        factors: vec![
            TangentialSymbol::Profile { y_in: 0.4, y_out: 0.5 },
            TangentialSymbol::LambdaBand { band: Band::new(Some([1.3, 1.35]), Some([1.55, 1.6])) },
        ],
    };
    let mut out = Vec::new();
    for family in [Family::Laplace, Family::Stokes] {
        let modes: Vec<_> = [10u32, 20, 40].iter().map(|&m| mode(family, m, 1)).collect();
        let r = elliptic_mass(&modes, &a, 0.55, &Thresholds { theta_pass: 0.02, ..Thresholds::default() })
            .map_err(|e| e.to_string())?;
        let vals: Vec<f64> = r.rows.iter().map(|row| row.before.norm()).collect();
        ensure(r.verdict == Verdict::Pass, || format!("{family:?} pairings {}", sci(&vals, 2)))?;
        out.push(format!("{family:?} {}", sci(&vals, 1)));
    }
    Ok(out.join("; "))
}

fn pressure_parametrix() -> Outcome {
    let chart = CollarChart::disk();
    let s0 = ParametrixSymbol::build(&chart, DEFAULT_DELTA0, 0).map_err(|e| e.to_string())?;
    let s1 = ParametrixSymbol::build(&chart, DEFAULT_DELTA0, 1).map_err(|e| e.to_string())?;
    let mut e0s = Vec::new();
    let mut e1s = Vec::new();
    for m in [32i64, 64, 128] {
        let h = 1.0 / m as f64;
        let grid = CollarGrid::new(chart.collar_width, h, 4 * m as usize + 8);
        let q = BoundaryData::mode(grid.n_theta(), m);
        e0s.push(parametrix_error(&s0, &q, h, grid.clone()).map_err(|e| e.to_string())?);
        e1s.push(parametrix_error(&s1, &q, h, grid).map_err(|e| e.to_string())?);
    }
    let ratios: Vec<f64> = e0s.windows(2).map(|w| w[0] / w[1]).collect();
    ensure(ratios.iter().all(|r| (r - 2.0).abs() <= 0.6), || format!("order-0 halving ratios {ratios:.3?}"))?;
    ensure(e1s.iter().zip(&e0s).all(|(a, b)| a < b), || format!("order 1 {} vs order 0 {}", sci(&e1s, 2), sci(&e0s, 2)))?;
    Ok(format!("order 0 {} (ratios {ratios:.2?}), order 1 {}", sci(&e0s, 2), sci(&e1s, 2)))
}

fn strip_concentration() -> Outcome {
    let mut slopes = Vec::new();
    let mut hs = Vec::new();
    for m in [20u32, 40] {
        let md = mode(Family::Stokes, m, 1);
        let h = md.h;
        let nt = 4 * (m as usize + 2) + 8;
        let q = |y: f64, t: f64| md.eval_polar_components(1.0 - y, t).1;
        let y0s: Vec<f64> = (1..=4).map(|j| j as f64 * h).collect();
        let masses = y0s
            .iter()
            .map(|&y0| band_mass(q, nt, y0, 0.5, DEFAULT_DELTA0, h))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        slopes.push(band_mass_slope(&y0s, &masses).map_err(|e| e.to_string())?);
        hs.push(h);
    }
    let ratio = (slopes[1] / slopes[0]) / (hs[0] / hs[1]);
    ensure(slopes.iter().all(|s| *s < 0.0) && (ratio - 1.0).abs() <= 0.25, || {
        format!("slopes {slopes:.2?}, normalized ratio {ratio:.3}")
    })?;
    Ok(format!(
        "slopes {slopes:.2?} (h slope {:.2}, {:.2}), normalized ratio {ratio:.3}",
        slopes[0] * hs[0],
        slopes[1] * hs[1]
    ))
}

fn interior_invariance() -> Outcome {
    let modes: Vec<_> = [10u32, 20, 30, 40, 50, 60].iter().map(|&k| mode(Family::Laplace, 0, k)).collect();
    let a = Symbol::product(vec![
        Symbol::BumpX { center: [0.4, 0.0], radius: 0.15 },
        Symbol::FreqBand { band: Band::new(Some([0.6, 0.75]), Some([1.25, 1.4])) },
        Symbol::Direction { angle: 0.0, half_width: 0.8 },
    ]);
    let r = invariance_gap(&CollarChart::disk(), &modes, &a, 0.1, &Thresholds::default()).map_err(|e| e.to_string())?;
    let gaps: Vec<f64> = r.rows.iter().map(|row| row.gap().unwrap()).collect();
    ensure(r.verdict == Verdict::Pass, || format!("gaps {}", sci(&gaps, 2)))?;
    Ok(format!("gaps {}", sci(&gaps, 1)))
}

fn stokes_support_invariance() -> Outcome {
    // modes with m / lambda close to 0.5, sorted by decreasing h
    let mut modes = Vec::new();
    for k in 2..=7u32 {
        let mut m = 1u32;
        for _ in 0..50 {
            m = (0.5 * bessel_zero_mk(m + 1, k)).floor() as u32;
        }
        modes.push(mode(Family::Stokes, m, k));
    }
    modes.sort_by(|a, b| b.h.total_cmp(&a.h));
    let a = Symbol::product(vec![
        Symbol::BumpX { center: [0.9, 0.0], radius: 0.03 },
        Symbol::FreqBand { band: Band::new(Some([0.95, 0.98]), Some([1.02, 1.05])) },
        Symbol::Direction { angle: FRAC_PI_2, half_width: 0.08 },
        Symbol::AngularMomentum { band: Band::new(Some([0.8, 0.85]), Some([0.95, 1.0])) },
    ]);
    // one chord time at angular momentum 0.9: a single reflection
    let s = disk_chord_time(0.9);
    let r = support_gap(&CollarChart::disk(), &modes, &a, s, &Thresholds::default()).map_err(|e| e.to_string())?;
    let pairs: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("({},{}) {:.1e}->{:.1e}", row.m, row.k, row.before.re, row.after.unwrap().re))
        .collect();
    ensure(r.verdict == Verdict::Pass, || pairs.join(", "))?;
    Ok(format!("s = {s:.3}: {}", pairs.join(", ")))
}

fn gliding_invariance() -> Outcome {
    let modes: Vec<_> = [20u32, 30, 40, 60].iter().map(|&m| mode(Family::Stokes, m, 1)).collect();
    let a = TangentialSymbol::Product {
        factors: vec![
            TangentialSymbol::Profile { y_in: 0.05, y_out: 0.15 },
            TangentialSymbol::Arc { center: 0.0, half_width: 0.5 },
            TangentialSymbol::LambdaBand { band: Band::new(Some([0.6, 0.7]), Some([1.1, 1.2])) },
        ],
    };
    let r = gliding_gap(&modes, &a, 0.8, 0.5, &Thresholds::default()).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = r.rows.iter().map(|row| row.after.unwrap().re / row.before.re).collect();
    ensure(r.verdict == Verdict::Pass, || format!("after/before {ratios:.3?}"))?;
    Ok(format!("after/before {ratios:.4?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("classifier ground truth", classifier_ground_truth),
        ("flow fidelity", flow_fidelity),
        ("quasimode exactness", quasimode_exactness),
        ("hidden regularity", hidden_regularity),
        ("characteristic set support", car_support),
        ("h-oscillation", h_oscillation),
        ("elliptic vanishing", elliptic_vanishing),
        ("pressure parametrix", pressure_parametrix),
        ("strip concentration", strip_concentration),
        ("interior invariance", interior_invariance),
        ("stokes support invariance", stokes_support_invariance),
        ("gliding invariance", gliding_invariance),
    ];
    let total = Instant::now();
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} ({secs:.1} s) {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({secs:.1} s) {detail}", n + 1);
            }
        }
    }
    let secs = total.elapsed().as_secs_f64();
    if secs >= 900.0 {
        failed += 1;
        println!("FAIL suite runtime {secs:.1} s exceeds 15 min");
    } else {
        println!("suite runtime {secs:.1} s");
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
