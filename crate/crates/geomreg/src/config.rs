//! TOML configuration for `simulate`.
//!
//! A scenario block may give `rho`, `sigma` and `form` as a scalar or a list;
//! lists expand to every combination, one Monte Carlo cell each.

use std::path::Path;

use geomreg_core::gram::DEFAULT_DELTA;
use geomreg_core::mlp::{EarlyStopping, Optimizer, TrainConfig};
use geomreg_core::penalty::PenaltyFamily;
use geomreg_core::rng::derive_seed;
use geomreg_core::simulate::{DgpConfig, Form, McConfig, MethodSpec};
use geomreg_core::tune::{CvPlan, Criterion, GridMode, DEFAULT_GRID};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "GEOMREG_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default = "default_methods", rename = "method")]
    pub methods: Vec<MethodSection>,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<ScenarioSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub validation_fraction: Option<f64>,
    #[serde(default)]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub family: String,
    #[serde(default)]
    pub name: Option<String>,
    /// Fixed hyperparameters, used when tuning is disabled.
    #[serde(default)]
    pub params: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub rho: OneOrMany<f64>,
    pub sigma: OneOrMany<f64>,
    #[serde(default = "default_form")]
    pub form: OneOrMany<String>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_seed() -> u64 {
    1
}
fn default_replications() -> usize {
    100
}
fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    32
}
fn default_optimizer() -> String {
    "adam".into()
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}
fn default_folds() -> usize {
    5
}
fn default_repeats() -> usize {
    1
}
fn default_grid() -> Vec<f64> {
    DEFAULT_GRID.to_vec()
}
fn default_mode() -> String {
    "cartesian".into()
}
fn default_methods() -> Vec<MethodSection> {
    PenaltyFamily::ALL
        .iter()
        .map(|f| MethodSection {
            family: f.name().into(),
            name: None,
            params: None,
        })
        .collect()
}
fn default_form() -> OneOrMany<String> {
    OneOrMany::One("linear".into())
}
fn default_tau() -> f64 {
    1.0
}
fn default_test_fraction() -> f64 {
    0.25
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: default_hidden(),
            delta: default_delta(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: default_epochs(),
            batch_size: default_batch(),
            optimizer: default_optimizer(),
            learning_rate: default_learning_rate(),
            validation_fraction: None,
            patience: None,
        }
    }
}

impl Default for TuningSection {
    fn default() -> Self {
        TuningSection {
            enabled: true,
            folds: default_folds(),
            repeats: default_repeats(),
            grid: default_grid(),
            mode: default_mode(),
        }
    }
}

/// One expanded (scenario, form, ρ, σ) combination.
#[derive(Debug, Clone)]
pub struct Cell {
    pub scenario: String,
    pub label: String,
    pub form: Form,
    pub rho: f64,
    pub sigma: f64,
    pub mc: McConfig,
}

/// Parses `text`, applies `key=value` overrides and fills defaults.
///
/// `seed_override` replaces the seed before the overrides run, so an explicit
/// `--set seed=…` still wins.
pub fn parse_config(text: &str, origin: &str, overrides: &[String], seed_override: Option<u64>) -> Result<SimulateConfig> {
    let direct = toml::from_str::<SimulateConfig>(text);
    if let (Err(e), true) = (&direct, overrides.is_empty()) {
        return Err(CliError::config(origin, e.to_string()));
    }
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| CliError::config(origin, e.to_string()))?;
    if let Some(seed) = seed_override {
        let seed = i64::try_from(seed).map_err(|_| CliError::config(SEED_ENV, format!("{seed} exceeds the largest TOML integer")))?;
        table.insert("seed".into(), Value::Integer(seed));
    }
    for entry in overrides {
        apply_override(&mut table, entry).map_err(|m| CliError::config(format!("override `{entry}`"), m))?;
    }
    let config: SimulateConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(origin, e.to_string()))?;
    config.validate().map_err(|m| {
        let path = m.split_once(": ").map_or("", |(p, _)| p);
        match locate(text, path) {
            Some(line) => CliError::config(format!("{origin}, line {line}"), m),
            None => CliError::config(origin, m),
        }
    })?;
    Ok(config)
}

/// Finds the 1-based line defining a field path such as `scenario[1].rho[0]`
/// or `train.epochs`.
fn locate(text: &str, path: &str) -> Option<usize> {
    let segs: Vec<(&str, usize)> = path
        .split('.')
        .map(|s| match s.split_once('[') {
            Some((name, rest)) => (name, rest.trim_end_matches(']').parse().unwrap_or(0)),
            None => (s, 0),
        })
        .collect();
    let lines: Vec<&str> = text.lines().collect();
    let is_header = |l: &&str| l.trim_start().starts_with('[');
    let (key, _) = *segs.last()?;
    let start = if segs.len() >= 2 {
        let (section, index) = segs[0];
        let array_header = format!("[[{section}]]");
        let header = format!("[{section}]");
        let mut seen = 0;
        let mut found = None;
        for (i, l) in lines.iter().enumerate() {
            let t = l.trim();
            if t == header || (t == array_header && seen == index) {
                found = Some(i + 1);
                break;
            }
            if t == array_header {
                seen += 1;
            }
        }
        found?
    } else {
        0
    };
    let end = lines[start..].iter().position(is_header).map_or(lines.len(), |p| start + p);
    lines[start..end]
        .iter()
        .position(|l| {
            l.trim_start()
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|p| start + p + 1)
}

pub fn load_config(path: &Path, overrides: &[String], seed_override: Option<u64>) -> Result<SimulateConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text, &path.display().to_string(), overrides, seed_override)
}

/// Reads the seed override from the environment, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::config(SEED_ENV, format!("`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Sets `a.b.0.c = value`, creating tables as needed. Values are read as
/// TOML, falling back to a bare string.
pub fn apply_override(table: &mut Table, entry: &str) -> std::result::Result<(), String> {
    let (key, raw) = entry.split_once('=').ok_or("expected key=value")?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|s| s.is_empty()) {
        return Err("empty key segment".into());
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("split yields one segment");
    let mut root = Value::Table(std::mem::take(table));
    let outcome = set_path(&mut root, parents, last, value);
    if let Value::Table(t) = root {
        *table = t;
    }
    outcome
}

fn set_path(root: &mut Value, parents: &[&str], last: &str, value: Value) -> std::result::Result<(), String> {
    let mut cursor = root;
    for seg in parents {
        cursor = descend(cursor, seg)?;
    }
    match cursor {
        Value::Table(t) => {
            t.insert(last.to_string(), value);
            Ok(())
        }
        Value::Array(a) => {
            let i: usize = last.parse().map_err(|_| format!("`{last}` is not an array index"))?;
            let len = a.len();
            *a.get_mut(i).ok_or_else(|| format!("index {i} out of range for {len} entries"))? = value;
            Ok(())
        }
        _ => Err(format!("cannot set `{last}` inside a scalar")),
    }
}

fn descend<'a>(v: &'a mut Value, seg: &str) -> std::result::Result<&'a mut Value, String> {
    match v {
        Value::Table(t) => Ok(t.entry(seg.to_string()).or_insert_with(|| Value::Table(Table::new()))),
        Value::Array(a) => {
            let i: usize = seg.parse().map_err(|_| format!("`{seg}` is not an array index"))?;
            let len = a.len();
            a.get_mut(i).ok_or_else(|| format!("index {i} out of range for {len} entries"))
        }
        _ => Err(format!("cannot descend into scalar at `{seg}`")),
    }
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl SimulateConfig {
    /// Checks every field, naming the offending one.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.replications == 0 {
            return Err("replications: must be at least 1".into());
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err("network.hidden: need at least one layer, each of positive width".into());
        }
        if !(self.network.delta.is_finite() && self.network.delta > 0.0) {
            return Err("network.delta: must be positive".into());
        }
        self.optimizer().map_err(|m| format!("train.optimizer: {m}"))?;
        if self.train.batch_size == 0 {
            return Err("train.batch_size: must be at least 1".into());
        }
        if !(self.train.learning_rate.is_finite() && self.train.learning_rate > 0.0) {
            return Err("train.learning_rate: must be positive".into());
        }
        match (self.train.validation_fraction, self.train.patience) {
            (None, None) => {}
            (Some(f), Some(p)) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err("train.validation_fraction: must lie in (0, 1)".into());
                }
                if p == 0 {
                    return Err("train.patience: must be at least 1".into());
                }
            }
            _ => return Err("train: validation_fraction and patience must be given together".into()),
        }
        if self.tuning.enabled {
            if self.tuning.folds < 2 {
                return Err("tuning.folds: must be at least 2".into());
            }
            if self.tuning.repeats == 0 {
                return Err("tuning.repeats: must be at least 1".into());
            }
            if self.tuning.grid.is_empty() {
                return Err("tuning.grid: must not be empty".into());
            }
            if let Some(x) = self.tuning.grid.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(format!("tuning.grid: {x} is not a finite non-negative value"));
            }
            grid_mode(&self.tuning.mode).map_err(|m| format!("tuning.mode: {m}"))?;
        }
        if self.methods.is_empty() {
            return Err("method: need at least one method".into());
        }
        let mut names = Vec::new();
        for (i, m) in self.methods.iter().enumerate() {
            let family =
                PenaltyFamily::parse(&m.family).ok_or_else(|| format!("method[{i}].family: unknown penalty `{}`", m.family))?;
            let name = m.name.clone().unwrap_or_else(|| family.name().to_string());
            if names.contains(&name) {
                return Err(format!("method[{i}].name: duplicate method `{name}`"));
            }
            names.push(name);
            match &m.params {
                Some(p) if p.len() != family.arity() => {
                    return Err(format!(
                        "method[{i}].params: {} takes {} value(s), got {}",
                        family.name(),
                        family.arity(),
                        p.len()
                    ))
                }
                None if !self.tuning.enabled && family.arity() > 0 => {
                    return Err(format!("method[{i}].params: required when tuning is disabled"))
                }
                _ => {}
            }
        }
        if self.scenarios.is_empty() {
            return Err("scenario: need at least one [[scenario]] block".into());
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            let at = |field: &str| format!("scenario[{i}].{field}");
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(format!("{}: use letters, digits, '_' or '-'", at("name")));
            }
            if self.scenarios[..i].iter().any(|o| o.name == s.name) {
                return Err(format!("{}: duplicate scenario `{}`", at("name"), s.name));
            }
            if s.n < 4 || s.p == 0 {
                return Err(format!("{}: need n ≥ 4 and p ≥ 1", at("n/p")));
            }
            if s.k > s.p {
                return Err(format!("{}: k = {} exceeds p = {}", at("k"), s.k, s.p));
            }
            for (j, r) in s.rho.to_vec().iter().enumerate() {
                if !(0.0..1.0).contains(r) {
                    return Err(format!("{}[{j}]: {r} must lie in [0, 1)", at("rho")));
                }
            }
            for (j, v) in s.sigma.to_vec().iter().enumerate() {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(format!("{}[{j}]: {v} must be finite and non-negative", at("sigma")));
                }
            }
            for (j, f) in s.form.to_vec().iter().enumerate() {
                if Form::parse(f).is_none() {
                    return Err(format!("{}[{j}]: unknown form `{f}` (linear or sin)", at("form")));
                }
            }
            if !(s.tau.is_finite() && s.tau > 0.0) {
                return Err(format!("{}: must be positive", at("tau")));
            }
            if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) {
                return Err(format!("{}: must lie in (0, 1)", at("test_fraction")));
            }
        }
        Ok(())
    }

    fn optimizer(&self) -> std::result::Result<Optimizer, String> {
        let lr = self.train.learning_rate;
        match self.train.optimizer.to_ascii_lowercase().as_str() {
            "adam" => Ok(Optimizer::adam(lr)),
            "sgd" => Ok(Optimizer::Sgd { learning_rate: lr }),
            other => Err(format!("unknown optimizer `{other}` (adam or sgd)")),
        }
    }

    fn method_specs(&self) -> Vec<MethodSpec> {
        self.methods
            .iter()
            .map(|m| {
                let family = PenaltyFamily::parse(&m.family).expect("validated");
                MethodSpec {
                    name: m.name.clone().unwrap_or_else(|| family.name().to_string()),
                    family,
                    params: m.params.clone().unwrap_or_default(),
                }
            })
            .collect()
    }

    /// Expands scenario blocks in file order, then form, ρ, σ.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut train = TrainConfig::new(self.train.epochs, self.train.batch_size, 0);
        train.optimizer = self.optimizer().map_err(|m| CliError::config("train.optimizer", m))?;
        if let (Some(validation_fraction), Some(patience)) = (self.train.validation_fraction, self.train.patience) {
            train.early_stopping = Some(EarlyStopping {
                validation_fraction,
                patience,
            });
        }
        let tuning = self.tuning.enabled.then(|| CvPlan {
            folds: self.tuning.folds,
            grid: Vec::new(),
            repeats: self.tuning.repeats,
            seed: 0,
            criterion: Criterion::MeanMse,
            mode: grid_mode(&self.tuning.mode).expect("validated"),
        });
        let methods = self.method_specs();
        let mut cells = Vec::new();
        for s in &self.scenarios {
            for form_name in s.form.to_vec() {
                let form = Form::parse(&form_name).expect("validated");
                for rho in s.rho.to_vec() {
                    for sigma in s.sigma.to_vec() {
                        let index = cells.len() as u64;
                        let seed = derive_seed(self.seed, index);
                        let dgp = DgpConfig {
                            n: s.n,
                            p: s.p,
                            k: s.k,
                            rho,
                            sigma,
                            tau: s.tau,
                            form,
                            seed,
                        };
                        let mc = McConfig {
                            dgp,
                            methods: methods.clone(),
                            hidden: self.network.hidden.clone(),
                            train: train.clone(),
                            replications: self.replications,
                            test_fraction: s.test_fraction,
                            delta: self.network.delta,
                            tuning: tuning.clone().map(|mut plan| {
                                plan.grid = vec![self.tuning.grid.clone()];
                                plan
                            }),
                            seed,
                        };
                        mc.validate().map_err(|e| CliError::config(format!("scenario `{}`", s.name), e.to_string()))?;
                        cells.push(Cell {
                            scenario: s.name.clone(),
                            label: format!("{}_{}_rho{}_sigma{}", s.name, form.name(), rho, sigma),
                            form,
                            rho,
                            sigma,
                            mc,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

fn grid_mode(s: &str) -> std::result::Result<GridMode, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "cartesian" => Ok(GridMode::Cartesian),
        "coordinate_wise" | "coordinatewise" => Ok(GridMode::CoordinateWise),
        other => Err(format!("unknown mode `{other}` (cartesian or coordinate_wise)")),
    }
}
