//! Experiment configuration: JSON text, parsed strictly and validated
//! before anything is computed.

use std::collections::BTreeSet;
use std::path::PathBuf;

use mslab::chart::{ChartKind, ChartSpec, CollarChart};
use mslab::classify::ClassifyOptions;
use mslab::flow::TraceOptions;
use mslab::quant::{HusimiOptions, Symbol, TangentialSymbol};
use mslab::quasimode::{bessel_zero_mk, Family, ModeSpec};
use mslab::verify::Thresholds;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "disk_spec")]
    pub chart: ChartSpec,
    #[serde(default)]
    pub classify: ClassifyOptions,
    #[serde(default)]
    pub trace: TraceOptions,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` and `MSLAB_OUT` take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub experiments: Vec<Experiment>,
}

fn disk_spec() -> ChartSpec {
    CollarChart::disk().to_spec()
}

impl Default for Config {
    fn default() -> Self {
        Self {
            chart: disk_spec(),
            classify: ClassifyOptions::default(),
            trace: TraceOptions::default(),
            thresholds: Thresholds::default(),
            seed: 0,
            output: None,
            experiments: Vec::new(),
        }
    }
}

/// Angular index rule of a mode family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MRule {
    /// One `m` for every `k`.
    Fixed(u32),
    /// Every listed `m` with every `k`.
    List(Vec<u32>),
    /// `m = floor(f lambda_{m,k})`: modes with angular momentum near `f`.
    Fraction(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeFamily {
    pub family: Family,
    pub m: MRule,
    /// Radial indices.
    pub k: Vec<u32>,
    #[serde(default)]
    pub grid: Option<(usize, usize)>,
}

impl ModeFamily {
    /// Mode specs sorted by decreasing `h`, duplicates removed.
    pub fn specs(&self) -> Vec<ModeSpec> {
        let mut pairs = BTreeSet::new();
        for &k in &self.k {
            match &self.m {
                MRule::Fixed(m) => {
                    pairs.insert((*m, k));
                }
                MRule::List(ms) => pairs.extend(ms.iter().map(|&m| (m, k))),
                MRule::Fraction(f) => {
                    pairs.insert((fraction_m(self.family, *f, k), k));
                }
            }
        }
        let mut specs: Vec<ModeSpec> = pairs
            .into_iter()
            .map(|(m, k)| {
                let s = ModeSpec::new(self.family, m, k);
                match self.grid {
                    Some((nr, nt)) => s.with_grid(nr, nt),
                    None => s,
                }
            })
            .collect();
        specs.sort_by(|a, b| a.eigenvalue().total_cmp(&b.eigenvalue()));
        specs
    }

    fn validate(&self, path: &str, errors: &mut Vec<String>) {
        if self.k.is_empty() {
            errors.push(format!("{path}.k: at least one radial index is required"));
        }
        if self.k.contains(&0) {
            errors.push(format!("{path}.k: radial indices start at 1"));
        }
        match &self.m {
            MRule::List(ms) if ms.is_empty() => errors.push(format!("{path}.m.list: must not be empty")),
            MRule::Fraction(f) if !(*f > 0.0 && *f < 1.0) => {
                errors.push(format!("{path}.m.fraction: must lie in (0, 1), got {f}"))
            }
            _ => {}
        }
    }
}

/// Fixed point of `m = floor(f lambda(m, k))`.
fn fraction_m(family: Family, f: f64, k: u32) -> u32 {
    let shift = match family {
        Family::Laplace => 0,
        Family::Stokes => 1,
    };
    let mut m = 1u32;
    for _ in 0..64 {
        let next = (f * bessel_zero_mk(m + shift, k)).floor() as u32;
        if next == m {
            break;
        }
        m = next;
    }
    m
}

/// Starting point of a trace; `eta` defaults to the incoming root
/// `+sqrt(r)` of the energy surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Start {
    #[serde(default)]
    pub y: f64,
    pub x: f64,
    pub xi: f64,
    #[serde(default)]
    pub eta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Classify {
        name: String,
        #[serde(default)]
        points: Vec<[f64; 2]>,
        /// Extra points drawn uniformly from `[0, 2 pi) x [-xi_max, xi_max]`.
        #[serde(default)]
        random_points: usize,
        #[serde(default = "default_xi_max")]
        xi_max: f64,
    },
    Trace {
        name: String,
        start: Start,
        s: f64,
    },
    Mode {
        name: String,
        family: Family,
        m: u32,
        k: u32,
        #[serde(default)]
        grid: Option<(usize, usize)>,
    },
    Husimi {
        name: String,
        family: Family,
        m: u32,
        k: u32,
        #[serde(default)]
        options: HusimiOptions,
    },
    Parametrix {
        name: String,
        m: Vec<i64>,
        /// One `h` per `m`; defaults to `1 / m`.
        #[serde(default)]
        h: Option<Vec<f64>>,
        order: u8,
        #[serde(default = "default_delta0")]
        delta0: f64,
    },
    Measure {
        name: String,
        modes: ModeFamily,
        #[serde(default)]
        symbol: Option<Symbol>,
        #[serde(default)]
        tangential: Option<TangentialSymbol>,
        #[serde(default = "default_width")]
        width: f64,
    },
    InvarianceGap {
        name: String,
        modes: ModeFamily,
        symbol: Symbol,
        s: f64,
    },
    SupportGap {
        name: String,
        modes: ModeFamily,
        symbol: Symbol,
        s: f64,
    },
    GlidingGap {
        name: String,
        modes: ModeFamily,
        symbol: TangentialSymbol,
        t: f64,
        #[serde(default = "default_width")]
        width: f64,
    },
    EllipticMass {
        name: String,
        modes: ModeFamily,
        symbol: TangentialSymbol,
        #[serde(default = "default_width")]
        width: f64,
    },
    CarMass {
        name: String,
        modes: ModeFamily,
        symbol: Symbol,
    },
    HOscillation {
        name: String,
        modes: ModeFamily,
        radii: Vec<f64>,
        /// Pass when every tail at the largest radius is at most this.
        #[serde(default)]
        limit: Option<f64>,
    },
}

fn default_xi_max() -> f64 {
    1.5
}

fn default_delta0() -> f64 {
    mslab::parametrix::DEFAULT_DELTA0
}

fn default_width() -> f64 {
    0.5
}

impl Experiment {
    pub fn name(&self) -> &str {
        match self {
            Experiment::Classify { name, .. }
            | Experiment::Trace { name, .. }
            | Experiment::Mode { name, .. }
            | Experiment::Husimi { name, .. }
            | Experiment::Parametrix { name, .. }
            | Experiment::Measure { name, .. }
            | Experiment::InvarianceGap { name, .. }
            | Experiment::SupportGap { name, .. }
            | Experiment::GlidingGap { name, .. }
            | Experiment::EllipticMass { name, .. }
            | Experiment::CarMass { name, .. }
            | Experiment::HOscillation { name, .. } => name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Classify { .. } => "classify",
            Experiment::Trace { .. } => "trace",
            Experiment::Mode { .. } => "mode",
            Experiment::Husimi { .. } => "husimi",
            Experiment::Parametrix { .. } => "parametrix",
            Experiment::Measure { .. } => "measure",
            Experiment::InvarianceGap { .. } => "invariance_gap",
            Experiment::SupportGap { .. } => "support_gap",
            Experiment::GlidingGap { .. } => "gliding_gap",
            Experiment::EllipticMass { .. } => "elliptic_mass",
            Experiment::CarMass { .. } => "car_mass",
            Experiment::HOscillation { .. } => "h_oscillation",
        }
    }

    /// Propagation experiments, the ones `verify` runs.
    pub fn is_verification(&self) -> bool {
        matches!(
            self,
            Experiment::InvarianceGap { .. }
                | Experiment::SupportGap { .. }
                | Experiment::GlidingGap { .. }
                | Experiment::EllipticMass { .. }
                | Experiment::CarMass { .. }
                | Experiment::HOscillation { .. }
        )
    }

    fn validate(&self, path: &str, errors: &mut Vec<String>) {
        let name = self.name();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            errors.push(format!("{path}.name: {name:?} must be nonempty and use only [A-Za-z0-9_-]"));
        }
        let mut finite = |key: &str, v: f64| {
            if !v.is_finite() {
                errors.push(format!("{path}.{key}: must be finite, got {v}"));
            }
        };
        match self {
            Experiment::Classify {
                points, xi_max, ..
            } => {
                for p in points {
                    finite("points", p[0]);
                    finite("points", p[1]);
                }
                if !(*xi_max > 0.0 && xi_max.is_finite()) {
                    errors.push(format!("{path}.xi_max: must be positive, got {xi_max}"));
                }
            }
            Experiment::Trace { start, s, .. } => {
                finite("s", *s);
                finite("start.x", start.x);
                finite("start.xi", start.xi);
                finite("start.y", start.y);
                if let Some(e) = start.eta {
                    finite("start.eta", e);
                }
            }
            Experiment::Mode { k, .. } | Experiment::Husimi { k, .. } if *k == 0 => {
                errors.push(format!("{path}.k: radial indices start at 1"));
            }
            Experiment::Mode { .. } => {}
            Experiment::Husimi { options, .. } => {
                for (key, v) in [
                    ("center_spacing", options.center_spacing),
                    ("xi_max", options.xi_max),
                    ("x_extent", options.x_extent),
                ] {
                    if !(v > 0.0 && v.is_finite()) {
                        errors.push(format!("{path}.options.{key}: must be positive, got {v}"));
                    }
                }
            }
            Experiment::Parametrix {
                m, h, order, delta0, ..
            } => {
                if m.is_empty() || m.iter().any(|&v| v <= 0) {
                    errors.push(format!("{path}.m: needs at least one positive angular index"));
                }
                if let Some(h) = h {
                    if h.len() != m.len() {
                        errors.push(format!("{path}.h: needs one value per m ({} given, {} expected)", h.len(), m.len()));
                    }
                    if h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                        errors.push(format!("{path}.h: values must be positive"));
                    }
                }
                if *order > 1 {
                    errors.push(format!("{path}.order: must be 0 or 1, got {order}"));
                }
                if !(*delta0 > 0.0 && *delta0 < 1.0) {
                    errors.push(format!("{path}.delta0: must lie in (0, 1), got {delta0}"));
                }
            }
            Experiment::Measure {
                modes,
                symbol,
                tangential,
                width,
                ..
            } => {
                modes.validate(&format!("{path}.modes"), errors);
                match (symbol, tangential) {
                    (Some(a), None) => push_err(errors, &format!("{path}.symbol"), a.validate()),
                    (None, Some(a)) => push_err(errors, &format!("{path}.tangential"), a.validate()),
                    _ => errors.push(format!("{path}: exactly one of symbol and tangential is required")),
                }
                check_width(path, *width, errors);
            }
            Experiment::InvarianceGap { modes, symbol, s, .. } | Experiment::SupportGap { modes, symbol, s, .. } => {
                modes.validate(&format!("{path}.modes"), errors);
                push_err(errors, &format!("{path}.symbol"), symbol.validate());
                if !s.is_finite() {
                    errors.push(format!("{path}.s: must be finite, got {s}"));
                }
            }
            Experiment::GlidingGap {
                modes, symbol, t, width, ..
            } => {
                modes.validate(&format!("{path}.modes"), errors);
                push_err(errors, &format!("{path}.symbol"), symbol.validate());
                if !t.is_finite() {
                    errors.push(format!("{path}.t: must be finite, got {t}"));
                }
                check_width(path, *width, errors);
            }
            Experiment::EllipticMass {
                modes, symbol, width, ..
            } => {
                modes.validate(&format!("{path}.modes"), errors);
                push_err(errors, &format!("{path}.symbol"), symbol.validate());
                check_width(path, *width, errors);
            }
            Experiment::CarMass { modes, symbol, .. } => {
                modes.validate(&format!("{path}.modes"), errors);
                push_err(errors, &format!("{path}.symbol"), symbol.validate());
            }
            Experiment::HOscillation {
                modes, radii, limit, ..
            } => {
                modes.validate(&format!("{path}.modes"), errors);
                if radii.is_empty() || radii.iter().any(|&r| !(r > 1.0 && r.is_finite())) {
                    errors.push(format!("{path}.radii: needs at least one radius, each > 1"));
                }
                if let Some(l) = limit {
                    if !(*l >= 0.0) {
                        errors.push(format!("{path}.limit: must be nonnegative, got {l}"));
                    }
                }
            }
        }
    }
}

fn check_width(path: &str, width: f64, errors: &mut Vec<String>) {
    if !(width > 0.0 && width < 1.0) {
        errors.push(format!("{path}.width: must lie in (0, 1), got {width}"));
    }
}

fn push_err(errors: &mut Vec<String>, path: &str, r: mslab::Result<()>) {
    if let Err(e) = r {
        errors.push(format!("{path}: {e}"));
    }
}

/// Invalid configuration; every entry names the offending key.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| ConfigError(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if let Err(e) = CollarChart::from_spec(&self.chart) {
            errors.push(format!("chart: {e}"));
        }
        push_err(&mut errors, "classify", self.classify.validate());
        push_err(&mut errors, "trace", self.trace.validate());
        push_err(&mut errors, "thresholds", self.thresholds.validate());
        let mut names = BTreeSet::new();
        for (i, e) in self.experiments.iter().enumerate() {
            let path = format!("experiments[{i}]");
            if !names.insert(e.name()) {
                errors.push(format!("{path}.name: duplicate name {:?}", e.name()));
            }
            let needs_disk = matches!(
                e,
                Experiment::Parametrix { .. } | Experiment::InvarianceGap { .. } | Experiment::SupportGap { .. }
            );
            if needs_disk && !matches!(self.chart.kind, ChartKind::Disk) {
                errors.push(format!("{path}.kind: {} runs on the disk chart only", e.kind()));
            }
            e.validate(&path, &mut errors);
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errors))
        }
    }

    pub fn chart(&self) -> CollarChart {
        CollarChart::from_spec(&self.chart).expect("validated chart")
    }

    /// Canonical serialization: the hashed identity of a run.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        serde_json::to_string(&c).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        let c = Config::parse("{}").unwrap();
        assert!(c.experiments.is_empty());
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn bad_tolerance_is_named() {
        let err = Config::parse(r#"{"classify": {"tol_g": -1}}"#).unwrap_err();
        assert!(err.to_string().contains("tol_g"), "{err}");
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = Config::parse(r#"{"classify": {"tol_gg": 1e-8}}"#).unwrap_err();
        assert!(err.to_string().contains("tol_gg"), "{err}");
        let err = Config::parse(r#"{"experiments": [{"kind": "trace", "name": "a", "start": {"x": 0, "xi": 0.5}, "s": 1, "extra": 2}]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn fraction_rule_picks_the_fixed_point() {
        let fam = ModeFamily {
            family: Family::Stokes,
            m: MRule::Fraction(0.5),
            k: vec![2, 3],
            grid: None,
        };
        let specs = fam.specs();
        assert_eq!(specs.iter().map(|s| (s.m, s.k)).collect::<Vec<_>>(), vec![(8, 2), (12, 3)]);
        for s in specs {
            assert_eq!(s.m, (0.5 * s.eigenvalue()).floor() as u32);
        }
    }

    #[test]
    fn specs_are_sorted_by_decreasing_h() {
        let fam = ModeFamily {
            family: Family::Laplace,
            m: MRule::List(vec![5, 0]),
            k: vec![3, 1],
            grid: None,
        };
        let lam: Vec<f64> = fam.specs().iter().map(|s| s.eigenvalue()).collect();
        assert!(lam.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(lam.len(), 4);
    }
}
