//! Propagation experiments across mode families with self-contained,
//! recomputable verdicts.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chart::{ChartKind, CollarChart};
use crate::quant::{
    pairing, pairing_tangential, BoxField, BoxGrid, CollarField, CollarGrid, Fft2, Symbol, TangentialSymbol,
};
use crate::quasimode::Quasimode;
use crate::spectral::signed_index;
use crate::{Error, Result};

/// Declared finite-`h` acceptance conventions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub theta_pass: f64,
    pub kappa: f64,
    pub theta_floor: f64,
    /// Allowed relative deviation of `v_{k+1} / v_k` from `h_{k+1} / h_k`.
    pub rate_tolerance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            theta_pass: 0.05,
            kappa: 2.0,
            theta_floor: 1e-3,
            rate_tolerance: 0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta_pass", self.theta_pass),
            ("kappa", self.kappa),
            ("theta_floor", self.theta_floor),
            ("rate_tolerance", self.rate_tolerance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// How a report's rows are turned into a verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Gaps shrink along the family and the last is at most `theta_pass`.
    InvarianceGap,
    /// `after <= kappa before + theta_floor` for every mode.
    SupportMass,
    /// The support rule in both directions.
    TwoSidedMass,
    /// The last `|before|` is at most `theta_pass`.
    Vanishing,
    /// Consecutive ratios track the `h` ratios and the last value is at
    /// most `theta_pass`.
    LinearDecay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub m: u32,
    pub k: u32,
    pub h: f64,
    pub before: Complex64,
    #[serde(default)]
    pub after: Option<Complex64>,
}

impl ReportRow {
    pub fn gap(&self) -> Option<f64> {
        self.after.map(|a| (a - self.before).norm())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub experiment: String,
    pub symbol: String,
    pub s: f64,
    pub rule: Rule,
    pub thresholds: Thresholds,
    pub rows: Vec<ReportRow>,
    pub verdict: Verdict,
}

impl PropagationReport {
    pub fn new(experiment: &str, symbol: String, s: f64, rule: Rule, thresholds: Thresholds, rows: Vec<ReportRow>) -> Self {
        let verdict = evaluate(rule, &rows, &thresholds);
        Self {
            experiment: experiment.to_string(),
            symbol,
            s,
            rule,
            thresholds,
            rows,
            verdict,
        }
    }

    /// Verdict derived from the stored rows and thresholds alone.
    pub fn recompute(&self) -> Verdict {
        evaluate(self.rule, &self.rows, &self.thresholds)
    }

    /// `|v_{k+1} / v_k|` over `h_{k+1} / h_k` for consecutive rows.
    pub fn rate_ratios(&self) -> Vec<f64> {
        rate_ratios(&self.rows)
    }

    /// Largest `|before| / h` along the family.
    pub fn rate_constant(&self) -> f64 {
        self.rows.iter().map(|r| r.before.norm() / r.h).fold(0.0, f64::max)
    }
}

fn rate_ratios(rows: &[ReportRow]) -> Vec<f64> {
    rows.windows(2)
        .map(|w| (w[1].before.norm() / w[0].before.norm()) / (w[1].h / w[0].h))
        .collect()
}

fn evaluate(rule: Rule, rows: &[ReportRow], t: &Thresholds) -> Verdict {
    if rows.is_empty() {
        return Verdict::Inconclusive;
    }
    let finite = rows
        .iter()
        .all(|r| r.before.re.is_finite() && r.before.im.is_finite() && r.after.is_none_or(|a| a.re.is_finite() && a.im.is_finite()));
    if !finite {
        return Verdict::Inconclusive;
    }
    let ok = |b: bool| if b { Verdict::Pass } else { Verdict::Fail };
    let last = rows.last().expect("nonempty");
    match rule {
        Rule::InvarianceGap => {
            let gaps: Option<Vec<f64>> = rows.iter().map(|r| r.gap()).collect();
            let Some(gaps) = gaps else {
                return Verdict::Inconclusive;
            };
            if gaps.len() < 2 {
                return Verdict::Inconclusive;
            }
            let decreasing = gaps.windows(2).all(|w| w[1] <= w[0] + t.theta_floor) && gaps[gaps.len() - 1] < gaps[0];
            ok(decreasing && gaps[gaps.len() - 1] <= t.theta_pass)
        }
        Rule::SupportMass | Rule::TwoSidedMass => {
            let mut pass = true;
            for r in rows {
                let Some(after) = r.after else {
                    return Verdict::Inconclusive;
                };
                let (b, a) = (r.before.re, after.re);
                pass &= a <= t.kappa * b + t.theta_floor;
                if rule == Rule::TwoSidedMass {
                    pass &= b <= t.kappa * a + t.theta_floor;
                }
            }
            ok(pass)
        }
        Rule::Vanishing => ok(last.before.norm() <= t.theta_pass),
        Rule::LinearDecay => {
            if rows.len() < 2 {
                return Verdict::Inconclusive;
            }
            let tracking = rate_ratios(rows).iter().all(|r| (r - 1.0).abs() <= t.rate_tolerance);
            ok(tracking && last.before.norm() <= t.theta_pass)
        }
    }
}

/// `a o gamma(s, .)` along the billiard flow of the chart.
pub fn transport_symbol(chart: &CollarChart, a: &Symbol, s: f64) -> Result<Symbol> {
    if !matches!(chart.kind, ChartKind::Disk) {
        return Err(Error::Invalid("symbol transport is available on the disk only".into()));
    }
    if s == 0.0 {
        return Ok(a.clone());
    }
    Ok(a.clone().transported(s))
}

fn row(mode: &Quasimode, before: Complex64, after: Option<Complex64>) -> ReportRow {
    ReportRow {
        m: mode.id.m,
        k: mode.id.k,
        h: mode.h,
        before,
        after,
    }
}

fn check_family(modes: &[Quasimode]) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::Invalid("empty mode family".into()));
    }
    if modes.windows(2).any(|w| w[1].h >= w[0].h) {
        return Err(Error::Invalid("modes must be ordered by decreasing h".into()));
    }
    Ok(())
}

fn describe<T: std::fmt::Debug>(a: &T) -> String {
    format!("{a:?}")
}

/// `|<a o gamma(s)>_k - <a>_k|` across the family.
pub fn invariance_gap(
    chart: &CollarChart,
    modes: &[Quasimode],
    a: &Symbol,
    s: f64,
    thresholds: &Thresholds,
) -> Result<PropagationReport> {
    check_family(modes)?;
    let moved = transport_symbol(chart, a, s)?;
    let rows: Vec<Result<ReportRow>> = crate::par_map(modes, |m| {
        let f = BoxField::from_mode(m, BoxGrid::for_h(m.h));
        let before = crate::quant::pairing_field(a, &f, m.h)?;
        let after = if s == 0.0 {
            before
        } else {
            crate::quant::pairing_field(&moved, &f, m.h)?
        };
        Ok(row(m, before, Some(after)))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PropagationReport::new("invariance_gap", describe(a), s, Rule::InvarianceGap, *thresholds, rows))
}

/// `|a|^2` masses before and after transport.
pub fn support_gap(
    chart: &CollarChart,
    modes: &[Quasimode],
    a: &Symbol,
    s: f64,
    thresholds: &Thresholds,
) -> Result<PropagationReport> {
    check_family(modes)?;
    let sq = a.clone().squared();
    let moved = transport_symbol(chart, a, s)?.squared();
    let rows: Vec<Result<ReportRow>> = crate::par_map(modes, |m| {
        let f = BoxField::from_mode(m, BoxGrid::for_h(m.h));
        let before = crate::quant::pairing_field(&sq, &f, m.h)?;
        let after = crate::quant::pairing_field(&moved, &f, m.h)?;
        Ok(row(m, before, Some(after)))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PropagationReport::new("support_gap", describe(a), s, Rule::SupportMass, *thresholds, rows))
}

/// Tangential `|a|^2` masses before and after transport by the gliding
/// flow for time `t`; passes when they agree within `kappa`.
pub fn gliding_gap(
    modes: &[Quasimode],
    a: &TangentialSymbol,
    t: f64,
    width: f64,
    thresholds: &Thresholds,
) -> Result<PropagationReport> {
    check_family(modes)?;
    let sq = a.clone().squared();
    let moved = a.clone().glided(t).squared();
    let rows: Vec<Result<ReportRow>> = crate::par_map(modes, |m| {
        Ok(row(
            m,
            pairing_tangential(&sq, m, width)?,
            Some(pairing_tangential(&moved, m, width)?),
        ))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PropagationReport::new("gliding_gap", describe(a), t, Rule::TwoSidedMass, *thresholds, rows))
}

/// Tangential pairings of a symbol supported in the elliptic region.
pub fn elliptic_mass(
    modes: &[Quasimode],
    a: &TangentialSymbol,
    width: f64,
    thresholds: &Thresholds,
) -> Result<PropagationReport> {
    check_family(modes)?;
    let rows: Vec<Result<ReportRow>> =
        crate::par_map(modes, |m| Ok(row(m, pairing_tangential(a, m, width)?, None)));
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PropagationReport::new("elliptic_mass", describe(a), 0.0, Rule::Vanishing, *thresholds, rows))
}

/// Interior pairings of a symbol vanishing near the characteristic set.
pub fn car_mass(modes: &[Quasimode], a: &Symbol, thresholds: &Thresholds) -> Result<PropagationReport> {
    check_family(modes)?;
    let rows: Vec<Result<ReportRow>> = crate::par_map(modes, |m| Ok(row(m, pairing(a, m)?, None)));
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PropagationReport::new("car_mass", describe(a), 0.0, Rule::LinearDecay, *thresholds, rows))
}

/// Fourier tail masses of one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub m: u32,
    pub k: u32,
    pub h: f64,
    pub radii: Vec<f64>,
    /// `int_{|xi| >= R / h} |F(psi u)|^2` for each radius.
    pub interior: Vec<f64>,
    /// Collar variant: angular frequencies with `|h n| >= R`.
    pub tangential: Vec<f64>,
}

/// Interior and tangential frequency tails beyond `R / h` for each mode.
///
/// The interior cutoff `psi` is 1 on `|x| <= 0.7` and vanishes beyond
/// `|x| = 0.9`; the tangential variant uses the profile 1 on `y <= 0.2`,
/// 0 beyond `y = 0.4`, on the polar velocity components.
pub fn h_oscillation_tail(modes: &[Quasimode], radii: &[f64]) -> Result<Vec<TailRow>> {
    if radii.iter().any(|&r| !(r > 1.0)) {
        return Err(Error::Invalid("tail radii must exceed 1".into()));
    }
    check_family(modes)?;
    let r_max = radii.iter().cloned().fold(1.0, f64::max);
    let psi = Symbol::RadialX { r_in: 0.7, r_out: 0.9 };
    let profile = TangentialSymbol::Profile { y_in: 0.2, y_out: 0.4 };
    let out: Vec<Result<TailRow>> = modes
        .iter()
        .map(|mode| {
            let h = mode.h;
            let grid = BoxGrid::for_frequency((r_max + 1.0) / h + 16.0);
            let n = grid.n;
            let nc = mode.n_components();
            let f = BoxField::from_fn(grid.clone(), nc, |x, y| {
                let w = psi.eval([x, y], [0.0, 0.0]);
                if w == 0.0 {
                    return [Complex64::new(0.0, 0.0); 2];
                }
                let (u, _) = mode.eval_cartesian(x, y);
                [u[0] * w, u[1] * w]
            });
            let fft = Fft2::new(n);
            // Parseval: ||f||^2 = dx^2 / n^2 sum |F_k|^2
            let scale = grid.dx * grid.dx / (n * n) as f64;
            let mut interior = vec![0.0; radii.len()];
            for comp in &f.comps {
                let mut d = comp.clone();
                fft.run(&mut d, false);
                for (p, z) in d.iter().enumerate() {
                    let k = grid.xi(p % n).hypot(grid.xi(p / n));
                    let w = z.norm_sqr() * scale;
                    for (t, &r) in interior.iter_mut().zip(radii) {
                        if k >= r / h {
                            *t += w;
                        }
                    }
                }
            }
            let cg = CollarGrid::new(0.5, h.min(0.05), (4.0 * (r_max + 1.0) / h).ceil() as usize);
            let cf = CollarField::velocity(mode, cg);
            let cut = crate::quant::apply_tangential_op(&profile, &cf, h)?;
            let mut tangential = vec![0.0; radii.len()];
            let nt = cut.grid.n_theta();
            let mut planner = rustfft::FftPlanner::new();
            let plan = planner.plan_fft_forward(nt);
            for comp in &cut.comps {
                for (i, &w) in cut.grid.wy.iter().enumerate() {
                    let mut ring = comp[i * nt..(i + 1) * nt].to_vec();
                    plan.process(&mut ring);
                    for (kk, z) in ring.iter().enumerate() {
                        let xi = (h * signed_index(kk, nt) as f64).abs();
                        let mass = 2.0 * std::f64::consts::PI * w * (z / nt as f64).norm_sqr();
                        for (t, &r) in tangential.iter_mut().zip(radii) {
                            if xi >= r {
                                *t += mass;
                            }
                        }
                    }
                }
            }
            Ok(TailRow {
                m: mode.id.m,
                k: mode.id.k,
                h,
                radii: radii.to_vec(),
                interior,
                tangential,
            })
        })
        .collect();
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::Band;
    use crate::quasimode::{disk_mode, Family, ModeSpec};

    fn family(fam: Family, m: u32, ks: &[u32]) -> Vec<Quasimode> {
        ks.iter().map(|&k| disk_mode(&ModeSpec::new(fam, m, k)).unwrap()).collect()
    }

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    fn rows(vals: &[(f64, f64, Option<f64>)]) -> Vec<ReportRow> {
        vals.iter()
            .map(|&(h, b, a)| ReportRow {
                m: 0,
                k: 0,
                h,
                before: c(b),
                after: a.map(c),
            })
            .collect()
    }

    #[test]
    fn verdict_rules() {
        let t = Thresholds::default();
        let gap = |v: &[(f64, f64, Option<f64>)]| evaluate(Rule::InvarianceGap, &rows(v), &t);
        assert_eq!(gap(&[(0.2, 1.0, Some(1.2)), (0.1, 1.0, Some(1.04))]), Verdict::Pass);
        assert_eq!(gap(&[(0.2, 1.0, Some(1.2)), (0.1, 1.0, Some(1.1))]), Verdict::Fail);
        assert_eq!(gap(&[(0.2, 1.0, Some(1.0))]), Verdict::Inconclusive);
        let sup = |v: &[(f64, f64, Option<f64>)]| evaluate(Rule::SupportMass, &rows(v), &t);
        assert_eq!(sup(&[(0.1, 0.01, Some(0.02))]), Verdict::Pass);
        assert_eq!(sup(&[(0.1, 0.01, Some(0.03))]), Verdict::Fail);
        let two = |v: &[(f64, f64, Option<f64>)]| evaluate(Rule::TwoSidedMass, &rows(v), &t);
        assert_eq!(two(&[(0.1, 0.5, Some(0.2))]), Verdict::Fail);
        let lin = |v: &[(f64, f64, Option<f64>)]| evaluate(Rule::LinearDecay, &rows(v), &t);
        assert_eq!(lin(&[(0.2, 0.02, None), (0.1, 0.01, None)]), Verdict::Pass);
        assert_eq!(lin(&[(0.2, 0.02, None), (0.1, 0.001, None)]), Verdict::Fail);
        assert_eq!(evaluate(Rule::Vanishing, &rows(&[(0.1, f64::NAN, None)]), &t), Verdict::Inconclusive);
    }

    #[test]
    fn report_round_trips_and_recomputes() {
        let r = PropagationReport::new("x", "a".into(), 0.1, Rule::SupportMass, Thresholds::default(), rows(&[(0.1, 0.01, Some(0.015))]));
        let text = serde_json::to_string(&r).unwrap();
        let back: PropagationReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.recompute(), r.verdict);
    }

    #[test]
    fn transport_examples() {
        let chart = CollarChart::disk();
        let a = Symbol::product(vec![
            Symbol::BumpX {
                center: [0.0, 0.0],
                radius: 0.2,
            },
            Symbol::FreqBand {
                band: Band::new(Some([0.5, 0.7]), Some([1.3, 1.5])),
            },
        ]);
        assert_eq!(transport_symbol(&chart, &a, 0.0).unwrap(), a);
        // straight-line flow: the bump recenters at distance 2 s against xi
        let s = 0.05;
        let b = transport_symbol(&chart, &a, s).unwrap();
        let xi = [0.6, 0.8];
        for x in [[-0.06, -0.08], [0.0, 0.0], [0.1, -0.05]] {
            let expected = a.eval([x[0] + 2.0 * s * xi[0], x[1] + 2.0 * s * xi[1]], xi);
            assert!((b.eval(x, xi) - expected).abs() < 1e-12);
        }
        // |xi| and angular momentum are billiard invariants
        let angular = Symbol::product(vec![
            Symbol::FreqBand {
                band: Band::new(Some([0.5, 0.7]), Some([1.3, 1.5])),
            },
            Symbol::AngularMomentum {
                band: Band::new(Some([0.1, 0.2]), Some([0.4, 0.5])),
            },
        ]);
        let moved = transport_symbol(&chart, &angular, 0.7).unwrap();
        for (x, xi) in [([0.3, 0.1], [0.9, 0.3]), ([-0.2, 0.5], [0.1, -1.1]), ([0.0, 0.4], [0.6, 0.1])] {
            assert!((moved.eval(x, xi) - angular.eval(x, xi)).abs() < 1e-9);
        }
        assert!(transport_symbol(&CollarChart::annulus(0.4, crate::chart::Boundary::Outer).unwrap(), &a, 0.1).is_err());
    }

    #[test]
    fn zero_time_and_zero_symbol() {
        let chart = CollarChart::disk();
        let modes = family(Family::Laplace, 0, &[3, 4]);
        let a = Symbol::BumpX {
            center: [0.3, 0.0],
            radius: 0.2,
        };
        let r = invariance_gap(&chart, &modes, &a, 0.0, &Thresholds::default()).unwrap();
        assert!(r.rows.iter().all(|r| r.gap() == Some(0.0)));
        let z = Symbol::constant(0.0);
        let stokes = family(Family::Stokes, 2, &[2, 3]);
        let r = support_gap(&chart, &stokes, &z, 0.2, &Thresholds::default()).unwrap();
        assert!(r.rows.iter().all(|r| r.before == c(0.0) && r.after == Some(c(0.0))));
        let e = elliptic_mass(&stokes, &TangentialSymbol::Const { value: 0.0 }, 0.5, &Thresholds::default()).unwrap();
        assert!(e.rows.iter().all(|r| r.before == c(0.0)));
        assert_eq!(e.verdict, Verdict::Pass);
    }

    #[test]
    fn tails_are_nested() {
        let modes = family(Family::Laplace, 2, &[3, 5]);
        let t = h_oscillation_tail(&modes, &[2.0, 4.0, 8.0]).unwrap();
        for row in &t {
            assert!(row.interior[0] >= row.interior[1] && row.interior[1] >= row.interior[2]);
            assert!(row.tangential[0] >= row.tangential[1]);
            assert!(row.interior[1] <= 0.01);
        }
        assert!(h_oscillation_tail(&modes, &[0.5]).is_err());
    }
}
