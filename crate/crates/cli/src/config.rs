//! TOML experiment configuration with dotted-key overrides.

use std::path::Path;

use clap::ValueEnum;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use greenlab::maps::{DistanceProfile, HomogeneousMap, MapSequence};
use greenlab::observable::{make_observable, Observable};
use greenlab::ProjectivePoint;

use crate::error::CliError;

/// Smallest trajectory count accepted for the CLT.
pub const CLT_MIN_COUNT: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Green,
    Measure,
    Decay,
    Exactness,
    Mixing,
    Ergodic,
    Slln,
    Clt,
    Lil,
    Asip,
    Admissibility,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Green => "green",
            Kind::Measure => "measure",
            Kind::Decay => "decay",
            Kind::Exactness => "exactness",
            Kind::Mixing => "mixing",
            Kind::Ergodic => "ergodic",
            Kind::Slln => "slln",
            Kind::Clt => "clt",
            Kind::Lil => "lil",
            Kind::Asip => "asip",
            Kind::Admissibility => "admissibility",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    #[default]
    Constant,
    Perturbed,
    Degenerating,
    Explicit,
}

/// A map as an affine shorthand or as coefficient arrays of `P` and `Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapLiteral {
    Text(String),
    Coefficients { p: Vec<[f64; 2]>, q: Vec<[f64; 2]> },
}

impl MapLiteral {
    pub fn build(&self) -> Result<HomogeneousMap, CliError> {
        let map = match self {
            MapLiteral::Text(s) => s.parse(),
            MapLiteral::Coefficients { p, q } => {
                let c = |v: &[[f64; 2]]| v.iter().map(|z| Complex64::new(z[0], z[1])).collect();
                HomogeneousMap::new(c(p), c(q))
            }
        };
        map.map_err(|e| CliError::Config(format!("sequence map: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    #[serde(default)]
    pub kind: SequenceKind,
    pub map: Option<MapLiteral>,
    pub maps: Option<Vec<MapLiteral>>,
    pub degree: Option<usize>,
    pub amplitude: Option<f64>,
    pub seed: Option<u64>,
    /// `exp(r)`, `root_exp(r)` or `power(e)`.
    pub profile: Option<String>,
}

fn parse_profile(s: &str) -> Result<DistanceProfile, CliError> {
    let bad = || CliError::Config(format!("unrecognized profile {s:?}; expected exp(r), root_exp(r) or power(e)"));
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let open = t.find('(').ok_or_else(bad)?;
    let arg: f64 = t[open + 1..].strip_suffix(')').ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if !(arg > 0.0 && arg.is_finite()) {
        return Err(CliError::Config(format!("profile parameter in {s:?} must be positive")));
    }
    match &t[..open] {
        "exp" => Ok(DistanceProfile::Exponential { rate: arg }),
        "root_exp" => Ok(DistanceProfile::RootExponential { rate: arg }),
        "power" => Ok(DistanceProfile::Power { exponent: arg }),
        _ => Err(bad()),
    }
}

impl SequenceConfig {
    pub fn build(&self) -> Result<MapSequence, CliError> {
        let default_map = || MapLiteral::Text("z^2".into());
        let numeric = |e: greenlab::Error| CliError::Numeric { module: "rational_maps", source: e };
        match self.kind {
            SequenceKind::Constant => Ok(MapSequence::constant(self.map.clone().unwrap_or_else(default_map).build()?)),
            SequenceKind::Perturbed => {
                let amplitude = self.amplitude.ok_or_else(|| CliError::Config("perturbed sequence needs amplitude".into()))?;
                if !(0.0..=1.0).contains(&amplitude) {
                    return Err(CliError::Config(format!("amplitude {amplitude} outside [0, 1]")));
                }
                let base = self.map.clone().unwrap_or_else(default_map).build()?;
                MapSequence::perturbed(base, amplitude, self.seed.unwrap_or(0)).map_err(numeric)
            }
            SequenceKind::Degenerating => {
                let degree = self.degree.unwrap_or(2);
                if degree < 2 {
                    return Err(CliError::Config(format!("degree {degree} must be at least 2")));
                }
                let profile = parse_profile(self.profile.as_deref().ok_or_else(|| CliError::Config("degenerating sequence needs profile".into()))?)?;
                MapSequence::degenerating(degree, profile).map_err(numeric)
            }
            SequenceKind::Explicit => {
                let maps = self.maps.as_ref().filter(|m| !m.is_empty()).ok_or_else(|| CliError::Config("explicit sequence needs maps".into()))?;
                let built = maps.iter().map(MapLiteral::build).collect::<Result<Vec<_>, _>>()?;
                MapSequence::new(greenlab::maps::Generator::Explicit(built)).map_err(numeric)
            }
        }
    }
}

/// Numeric parameters; each experiment reads the ones it needs.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub n_max: Option<usize>,
    pub n_list: Option<Vec<usize>>,
    pub count: Option<usize>,
    pub depth: Option<usize>,
    pub tol: Option<f64>,
    pub gamma: Option<f64>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub r: Option<u32>,
    pub tail: Option<usize>,
    pub points: Option<Vec<String>>,
    pub base: Option<String>,
    pub centering_count: Option<usize>,
    pub threshold: Option<f64>,
    /// `full`, `auto` or `sampled`.
    pub mode: Option<String>,
    pub paths: Option<usize>,
    pub tail_index: Option<usize>,
    pub tail_tol: Option<f64>,
    pub conditional: Option<bool>,
    pub full_cap: Option<usize>,
    pub max_depth: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,
    #[serde(default)]
    pub seed: u64,
    pub workers: Option<usize>,
    #[serde(default)]
    pub sequence: SequenceConfig,
    #[serde(default = "default_observables")]
    pub observables: Vec<String>,
    #[serde(default)]
    pub params: Params,
}

fn default_observables() -> Vec<String> {
    vec!["harmonic(1)".into()]
}

fn parse_value(raw: &str) -> toml::Value {
    // A bare TOML value when it parses, otherwise a string.
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `key=value` overrides with dotted keys, e.g. `params.count=1000`.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), CliError> {
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(CliError::Config(format!("bad override key {key:?}")));
        }
        let mut cur = &mut *table;
        for p in &parts[..parts.len() - 1] {
            let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("override key {key:?} crosses a non-table value")))?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_table(table: toml::Table) -> Result<Self, CliError> {
        ExperimentConfig::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` (or starts empty), applies overrides and validates for `kind`.
    pub fn load(path: Option<&Path>, overrides: &[String], kind: Kind) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        apply_overrides(&mut table, overrides)?;
        let mut cfg = ExperimentConfig::from_table(table)?;
        match cfg.kind {
            Some(k) if k != kind => {
                return Err(CliError::Config(format!("config is for kind {}, not {}", k.name(), kind.name())));
            }
            _ => cfg.kind = Some(kind),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind(&self) -> Kind {
        self.kind.expect("kind is set by load")
    }

    pub fn observable_list(&self) -> Result<Vec<Observable>, CliError> {
        if self.observables.is_empty() {
            return Err(CliError::Config("observables must not be empty".into()));
        }
        self.observables.iter().map(|s| make_observable(s).map_err(|e| CliError::Config(format!("observable {s:?}: {e}")))).collect()
    }

    pub fn base(&self) -> Result<Option<ProjectivePoint>, CliError> {
        self.params.base.as_deref().map(|s| s.parse().map_err(|e| CliError::Config(format!("base {s:?}: {e}")))).transpose()
    }

    /// Range checks that do not need the numerical modules.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.params;
        let err = |m: String| Err(CliError::Config(m));
        let kind = self.kind();
        if let Some(w) = self.workers {
            if w == 0 {
                return err("workers must be at least 1".into());
            }
        }
        if let Some(c) = p.count {
            if c < 2 {
                return err(format!("count = {c} must be at least 2"));
            }
        }
        if kind == Kind::Clt {
            let c = p.count.unwrap_or(crate::run::defaults::CLT_COUNT);
            if c < CLT_MIN_COUNT {
                return err(format!("clt count = {c} is below the minimum sample floor {CLT_MIN_COUNT}"));
            }
        }
        if let Some(d) = p.depth {
            if d == 0 {
                return err("depth must be positive".into());
            }
        }
        if let Some(t) = p.tol {
            if !(t > 0.0 && t < 1.0) {
                return err(format!("tol = {t} must lie in (0, 1)"));
            }
        }
        if let Some(e) = p.eps {
            if !(e > 0.0) {
                return err(format!("eps = {e} must be positive"));
            }
        }
        if let Some(g) = p.gamma {
            let lower = greenlab::stochastics::gamma_lower(p.eps.unwrap_or(crate::run::defaults::EPS));
            if !(g > lower && g < 1.0) {
                return err(format!("gamma = {g} must lie in ({lower:.4}, 1)"));
            }
        }
        if let Some(d) = p.delta {
            if !(d > 0.0) {
                return err(format!("delta = {d} must be positive"));
            }
        }
        if let Some(v) = p.p {
            if !(v > 1.0) {
                return err(format!("p = {v} must exceed 1"));
            }
        }
        if let Some(v) = p.q {
            if !(v >= 1.0) {
                return err(format!("q = {v} must be at least 1"));
            }
        }
        if let Some(r) = p.r {
            if r == 0 {
                return err("r must be at least 1".into());
            }
        }
        if let Some(l) = &p.n_list {
            if l.is_empty() || l.contains(&0) {
                return err("n_list must be non-empty and positive".into());
            }
        }
        if let Some(m) = &p.mode {
            if !matches!(m.as_str(), "full" | "auto" | "sampled") {
                return err(format!("mode {m:?} must be full, auto or sampled"));
            }
        }
        if let Some(t) = p.tail_tol {
            if !(t > 0.0) {
                return err(format!("tail_tol = {t} must be positive"));
            }
        }
        self.observable_list()?;
        self.base()?;
        self.sequence.build()?;
        Ok(())
    }
}
