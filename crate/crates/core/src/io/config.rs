//! Run configuration: a flat TOML document with dotted keys
//! (`model.nu = 1.0`, or the same keys under `[model]` tables).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex;
use num_rational::Ratio;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::calming::{CalmingSpec, CalmingVariant};
use crate::integrator::{Scheme, StepperConfig};
use crate::model::{abc_profile, taylor_green, ForcingKind, ForcingSpec, Model, ModelParams};
use crate::noise::{OuInit, OuPath, WienerPath};
use crate::spectral::snapshot::read_snapshot;
use crate::spectral::{SpectralField, WaveGrid};

use super::IoError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Pullback,
    Absorb,
    Flatten,
    Cauchy,
    VerifyCalming,
    Validate,
}

impl Experiment {
    pub const NAMES: &'static str = "simulate, pullback, absorb, flatten, cauchy, verify-calming, validate";

    /// Experiments built on the absorbing radius, which needs `κ > 0`.
    pub fn needs_radius(self) -> bool {
        matches!(self, Self::Absorb | Self::Flatten | Self::Cauchy)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Simulate => "simulate",
            Self::Pullback => "pullback",
            Self::Absorb => "absorb",
            Self::Flatten => "flatten",
            Self::Cauchy => "cauchy",
            Self::VerifyCalming => "verify-calming",
            Self::Validate => "validate",
        };
        f.write_str(s)
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "simulate" => Self::Simulate,
            "pullback" => Self::Pullback,
            "absorb" => Self::Absorb,
            "flatten" => Self::Flatten,
            "cauchy" => Self::Cauchy,
            "verify-calming" => Self::VerifyCalming,
            "validate" => Self::Validate,
            _ => return Err(format!("unknown experiment `{s}`; expected one of {}", Self::NAMES)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridConfig {
    pub n: usize,
    /// Retained fraction of the Nyquist wavenumber, e.g. `"2/3"`.
    pub dealias: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelConfig {
    pub nu: f64,
    pub alpha: Option<f64>,
    pub nonlinearity: bool,
    pub cutoff: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalmingConfig {
    pub variant: CalmingVariant,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseConfig {
    pub seed: u64,
    pub gamma: f64,
    pub dt: f64,
    /// Paths cover `[-horizon, horizon]`.
    pub horizon: f64,
    pub init: OuInit,
}

/// A named preset or a snapshot file.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    TaylorGreen,
    Zero,
    /// Seeded smooth random field.
    Random,
    /// Single `|k| = 1` shear mode.
    Lambda1,
    Snapshot { path: PathBuf, sha256: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HConfig {
    pub mode: FieldSource,
    /// `‖∇h‖` for presets.
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForcingConfig {
    pub kind: ForcingKind,
    pub sigma: f64,
    /// `‖g‖` of the ABC profile.
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepperSection {
    pub scheme: Scheme,
    pub dt: f64,
    pub span: f64,
    pub stride: usize,
    pub tail_cutoffs: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: Experiment,
    pub tau: f64,
    pub seeds: Vec<u64>,
    pub horizons: Vec<f64>,
    pub initial_scales: Vec<f64>,
    pub truncation: f64,
    pub delta: f64,
    pub thresholds: Option<Vec<u32>>,
    pub cauchy_horizons: Vec<f64>,
    pub cauchy_scales: Vec<f64>,
    pub tempered_rates: Vec<f64>,
    pub tempered_blocks: usize,
    pub calming_samples: usize,
    pub calming_radius: f64,
    pub calming_eps: Vec<f64>,
    pub initial: FieldSource,
    pub initial_norm: f64,
    pub checkpoint_every: Option<usize>,
    pub pilot: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub calming: CalmingConfig,
    pub noise: NoiseConfig,
    pub h: HConfig,
    pub forcing: ForcingConfig,
    pub stepper: StepperSection,
    pub experiment: ExperimentConfig,
    #[serde(skip)]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub config_hash: String,
}

/// One problem found while reading a config.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

/// Every problem found in a config document.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for i in &self.0 {
            writeln!(f, "  {}: {}", i.key, i.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Reader<'a> {
    map: BTreeMap<String, toml::Value>,
    issues: Vec<ConfigIssue>,
    base: &'a Path,
}

impl Reader<'_> {
    fn issue(&mut self, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            key: key.to_string(),
            message: message.into(),
        });
    }

    fn take(&mut self, key: &str) -> Option<toml::Value> {
        self.map.remove(key)
    }

    fn opt_f64(&mut self, key: &str) -> Option<f64> {
        match self.take(key)? {
            toml::Value::Float(x) => Some(x),
            toml::Value::Integer(i) => Some(i as f64),
            other => {
                self.issue(key, format!("expected a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> f64 {
        self.opt_f64(key).unwrap_or(default)
    }

    fn positive(&mut self, key: &str, default: f64) -> f64 {
        let x = self.f64(key, default);
        if !(x > 0.0 && x.is_finite()) {
            self.issue(key, format!("must be positive and finite, got {x}"));
        }
        x
    }

    fn opt_u64(&mut self, key: &str) -> Option<u64> {
        match self.take(key)? {
            toml::Value::Integer(i) if i >= 0 => Some(i as u64),
            toml::Value::Integer(i) => {
                self.issue(key, format!("must be nonnegative, got {i}"));
                None
            }
            other => {
                self.issue(key, format!("expected an integer, got {}", other.type_str()));
                None
            }
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> u64 {
        self.opt_u64(key).unwrap_or(default)
    }

    fn bool(&mut self, key: &str, default: bool) -> bool {
        match self.take(key) {
            None => default,
            Some(toml::Value::Boolean(b)) => b,
            Some(other) => {
                self.issue(key, format!("expected a boolean, got {}", other.type_str()));
                default
            }
        }
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        match self.take(key) {
            None => default.to_string(),
            Some(toml::Value::String(s)) => s,
            Some(other) => {
                self.issue(key, format!("expected a string, got {}", other.type_str()));
                default.to_string()
            }
        }
    }

    fn parsed<T: FromStr>(&mut self, key: &str, default: T) -> T
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => default,
            Some(toml::Value::String(s)) => match s.parse() {
                Ok(v) => v,
                Err(e) => {
                    self.issue(key, e.to_string());
                    default
                }
            },
            Some(other) => {
                self.issue(key, format!("expected a string, got {}", other.type_str()));
                default
            }
        }
    }

    fn opt_list<T>(&mut self, key: &str, conv: impl Fn(&toml::Value) -> Option<T>, what: &str) -> Option<Vec<T>> {
        match self.take(key)? {
            toml::Value::Array(a) => {
                let items: Option<Vec<T>> = a.iter().map(&conv).collect();
                if items.is_none() {
                    self.issue(key, format!("expected an array of {what}"));
                }
                items
            }
            other => {
                self.issue(key, format!("expected an array of {what}, got {}", other.type_str()));
                None
            }
        }
    }

    fn f64_list(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        let conv = |v: &toml::Value| match v {
            toml::Value::Float(x) => Some(*x),
            toml::Value::Integer(i) => Some(*i as f64),
            _ => None,
        };
        self.opt_list(key, conv, "numbers").unwrap_or_else(|| default.to_vec())
    }

    fn u64_list(&mut self, key: &str) -> Option<Vec<u64>> {
        let conv = |v: &toml::Value| match v {
            toml::Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => None,
        };
        self.opt_list(key, conv, "nonnegative integers")
    }

    fn u32_list(&mut self, key: &str) -> Option<Vec<u32>> {
        let conv = |v: &toml::Value| match v {
            toml::Value::Integer(i) if *i >= 0 && *i <= u32::MAX as i64 => Some(*i as u32),
            _ => None,
        };
        self.opt_list(key, conv, "nonnegative integers")
    }

    fn field_source(&mut self, key: &str, default: FieldSource) -> FieldSource {
        let Some(raw) = self.take(key) else { return default };
        let toml::Value::String(s) = raw else {
            self.issue(key, "expected a preset name or snapshot path");
            return default;
        };
        match s.as_str() {
            "taylor_green" => FieldSource::TaylorGreen,
            "zero" => FieldSource::Zero,
            "random" => FieldSource::Random,
            "lambda1" => FieldSource::Lambda1,
            path => {
                let path = self.base.join(path);
                match std::fs::read(&path) {
                    Ok(bytes) => FieldSource::Snapshot {
                        sha256: hex::encode(Sha256::digest(&bytes)),
                        path,
                    },
                    Err(e) => {
                        self.issue(
                            key,
                            format!(
                                "`{s}` is not a preset (taylor_green, zero, random, lambda1) and cannot be read as a snapshot: {e}"
                            ),
                        );
                        default
                    }
                }
            }
        }
    }

    fn increasing(&mut self, key: &str, v: &[f64]) {
        if v.is_empty() || v.windows(2).any(|w| w[1] <= w[0]) || v.iter().any(|x| !(*x >= 0.0)) {
            self.issue(key, "must be a nonempty increasing list of nonnegative numbers");
        }
    }
}

fn parse_dealias(s: &str) -> Option<Ratio<u32>> {
    let (a, b) = s.split_once('/')?;
    let (a, b): (u32, u32) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
    (b > 0 && a > 0 && a <= b).then(|| Ratio::new(a, b))
}

/// Parses and validates a config; relative paths resolve against the
/// working directory.
pub fn parse_config(text: &str) -> Result<RunConfig, IoError> {
    parse_config_in(text, Path::new("."), None)
}

/// Reads a config file; relative paths resolve against its directory.
pub fn load_config(path: &Path, experiment: Option<Experiment>) -> Result<RunConfig, IoError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_in(&text, base, experiment)
}

/// Parses `text`, with `experiment` overriding `experiment.kind`.
pub fn parse_config_in(text: &str, base: &Path, experiment: Option<Experiment>) -> Result<RunConfig, IoError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| {
        IoError::Config(ConfigErrors(vec![ConfigIssue {
            key: "<document>".into(),
            message: e.message().to_string(),
        }]))
    })?;
    let mut map = BTreeMap::new();
    flatten("", &table, &mut map);
    let mut r = Reader {
        map,
        issues: Vec::new(),
        base,
    };

    let n = r.u64("grid.n", 16) as usize;
    let dealias = r.string("grid.dealias", "2/3");
    if parse_dealias(&dealias).is_none() {
        r.issue("grid.dealias", format!("expected a fraction p/q in (0, 1], got `{dealias}`"));
    }
    let grid = GridConfig { n, dealias };

    let model = ModelConfig {
        nu: r.positive("model.nu", 1.0),
        alpha: r.opt_f64("model.alpha"),
        nonlinearity: r.bool("model.nonlinearity", true),
        cutoff: r.opt_u64("model.cutoff").map(|c| c as u32),
    };
    if let Some(a) = model.alpha {
        if !(a >= 0.0 && a.is_finite()) {
            r.issue("model.alpha", format!("must be nonnegative, got {a}"));
        }
    }

    let calming = CalmingConfig {
        variant: r.parsed("calming.variant", CalmingVariant::Z1),
        eps: r.positive("calming.eps", 2.0),
    };

    let seed = r.u64("noise.seed", 0);
    let init = match r.string("noise.init", "stationary_sample").as_str() {
        "stationary_sample" => OuInit::StationarySample,
        "zero" => OuInit::Zero,
        other => {
            r.issue("noise.init", format!("unknown init `{other}`; expected stationary_sample, zero"));
            OuInit::StationarySample
        }
    };
    let noise = NoiseConfig {
        seed,
        gamma: r.positive("noise.gamma", 1.0),
        dt: r.positive("noise.dt", 1.25e-3),
        horizon: r.positive("noise.horizon", 100.0),
        init,
    };

    let h = HConfig {
        mode: r.field_source("h.mode", FieldSource::TaylorGreen),
        norm: r.f64("h.norm", 1.0),
    };
    if matches!(h.mode, FieldSource::Random | FieldSource::Lambda1) {
        r.issue("h.mode", "expected taylor_green, zero or a snapshot path");
    }

    let kind = match r.string("forcing.kind", "zero").as_str() {
        "zero" => ForcingKind::Zero,
        "constant" => ForcingKind::Constant,
        "exp_window" => ForcingKind::ExpWindow,
        other => {
            r.issue("forcing.kind", format!("unknown forcing `{other}`; expected zero, constant, exp_window"));
            ForcingKind::Zero
        }
    };
    let forcing = ForcingConfig {
        kind,
        sigma: r.f64("forcing.sigma", 0.0),
        amplitude: r.f64("forcing.amplitude", 1.0),
    };

    let scheme = match r.string("stepper.scheme", "exp_euler").as_str() {
        "exp_euler" => Scheme::ExpEuler,
        "etdrk2" => Scheme::Etdrk2,
        other => {
            r.issue("stepper.scheme", format!("unknown scheme `{other}`; expected exp_euler, etdrk2"));
            Scheme::ExpEuler
        }
    };
    let stepper = StepperSection {
        scheme,
        dt: r.positive("stepper.dt", 5e-3),
        span: r.positive("stepper.span", 1.0),
        stride: r.u64("stepper.stride", 10) as usize,
        tail_cutoffs: r.u32_list("stepper.tail_cutoffs").unwrap_or_default(),
    };
    if stepper.stride == 0 {
        r.issue("stepper.stride", "must be positive");
    }

    let kind_from_file: Experiment = r.parsed("experiment.kind", Experiment::Simulate);
    let explicit_seeds = r.u64_list("experiment.seeds");
    let mut e = ExperimentConfig {
        kind: experiment.unwrap_or(kind_from_file),
        tau: r.f64("experiment.tau", 0.0),
        seeds: explicit_seeds.unwrap_or_else(|| vec![seed]),
        horizons: r.f64_list("experiment.horizons", &[2.0, 4.0, 8.0, 16.0]),
        initial_scales: r.f64_list("experiment.initial_scales", &[0.1, 1.0, 3.0, 10.0]),
        truncation: r.positive("experiment.truncation", 30.0),
        delta: r.positive("experiment.delta", 1e-2),
        thresholds: r.u32_list("experiment.thresholds"),
        cauchy_horizons: r.f64_list("experiment.cauchy_horizons", &[4.0, 8.0, 16.0]),
        cauchy_scales: r.f64_list("experiment.cauchy_scales", &[1.0, 3.0]),
        tempered_rates: r.f64_list("experiment.tempered_rates", &[0.1, 1.0, 10.0]),
        tempered_blocks: r.u64("experiment.tempered_blocks", 3) as usize,
        calming_samples: r.u64("experiment.calming_samples", 100_000) as usize,
        calming_radius: r.positive("experiment.calming_radius", 10.0),
        calming_eps: r.f64_list("experiment.calming_eps", &[0.5, 1.0, 2.0, 4.0]),
        initial: r.field_source("experiment.initial", FieldSource::Random),
        initial_norm: r.f64("experiment.initial_norm", 1.0),
        checkpoint_every: r.opt_u64("experiment.checkpoint_every").map(|c| c as usize),
        pilot: r.bool("experiment.pilot", true),
    };
    e.seeds.dedup();
    let (hz, cz) = (e.horizons.clone(), e.cauchy_horizons.clone());
    r.increasing("experiment.horizons", &hz);
    r.increasing("experiment.cauchy_horizons", &cz);
    if e.cauchy_scales.len() < 2 {
        r.issue("experiment.cauchy_scales", "needs at least two entries");
    }
    if e.seeds.is_empty() {
        r.issue("experiment.seeds", "must not be empty");
    }
    if e.tempered_blocks < 2 {
        r.issue("experiment.tempered_blocks", "needs at least two blocks");
    }
    if let Some(c) = e.checkpoint_every {
        if c == 0 || stepper.stride == 0 || c % stepper.stride != 0 {
            r.issue("experiment.checkpoint_every", "must be a positive multiple of stepper.stride");
        }
    }

    let output_dir = PathBuf::from(r.string("output.dir", "out"));

    let unknown: Vec<String> = r.map.keys().cloned().collect();
    for k in unknown {
        r.issue(&k, "unknown key");
    }

    let mut cfg = RunConfig {
        grid,
        model,
        calming,
        noise,
        h,
        forcing,
        stepper,
        experiment: e,
        output_dir,
        config_hash: String::new(),
    };
    if r.issues.is_empty() {
        prescreen(&cfg, &mut r.issues);
    }
    if !r.issues.is_empty() {
        return Err(IoError::Config(ConfigErrors(r.issues)));
    }
    cfg.rehash();
    Ok(cfg)
}

/// Checks that need the assembled model: grid, calming, forcing
/// assumptions and noise coverage.
fn prescreen(cfg: &RunConfig, issues: &mut Vec<ConfigIssue>) {
    let mut push = |key: &str, message: String| {
        issues.push(ConfigIssue {
            key: key.into(),
            message,
        })
    };
    let model = match cfg.build_model() {
        Ok(m) => m,
        Err(e) => {
            push("model", e.to_string());
            return;
        }
    };
    let ratio = cfg.stepper.dt / cfg.noise.dt;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
        push(
            "stepper.dt",
            format!("must be a multiple of noise.dt = {}", cfg.noise.dt),
        );
    }
    let e = &cfg.experiment;
    let report = model.validate_assumptions(e.tau, e.truncation);
    if !report.a1 {
        push("forcing.sigma", format!("(A1) fails: need alpha + 2 sigma > 0 with alpha = {}", report.alpha));
    }
    if !report.a2 {
        push("forcing.sigma", "(A2) fails: need sigma >= 0".into());
    }
    let kappa = model.kappa();
    if e.kind.needs_radius() {
        if cfg.calming.variant == CalmingVariant::Identity {
            push("calming.variant", "identity calming has no absorbing radius".into());
        } else if !report.a3 {
            push(
                "calming.eps",
                format!("(A3) fails: kappa = {kappa} <= 0; increase eps or nu"),
            );
        } else if e.truncation < 1e6f64.ln() / kappa {
            push(
                "experiment.truncation",
                format!("need e^(-kappa T) < 1e-6, i.e. T >= {}", 1e6f64.ln() / kappa),
            );
        }
    }
    let need = cfg.noise_window();
    if need.0 < -cfg.noise.horizon - 1e-9 || need.1 > cfg.noise.horizon + 1e-9 {
        push(
            "noise.horizon",
            format!("this experiment needs noise on [{}, {}]", need.0, need.1),
        );
    }
    if let Some(c) = cfg.model.cutoff {
        if c == 0 {
            push("model.cutoff", "must be positive".into());
        }
    }
}

impl RunConfig {
    /// Recomputes the hash over every semantic field (output location excluded).
    pub fn rehash(&mut self) {
        let json = serde_json::to_string(self).expect("config serialises");
        self.config_hash = hex::encode(Sha256::digest(json.as_bytes()));
    }

    /// Replaces the noise seed and the seed list.
    pub fn override_seed(&mut self, seed: u64) {
        self.noise.seed = seed;
        self.experiment.seeds = vec![seed];
        self.rehash();
    }

    /// Range of `r` for which `z(θ_r ω)` is needed.
    pub fn noise_window(&self) -> (f64, f64) {
        let e = &self.experiment;
        let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
        match e.kind {
            Experiment::Simulate | Experiment::VerifyCalming => (0.0, self.stepper.span),
            Experiment::Validate => (0.0, 0.0),
            Experiment::Pullback => (-last(&e.horizons), 0.0),
            Experiment::Absorb => {
                let tempered = e
                    .tempered_rates
                    .iter()
                    .map(|&c| tempered_block(c) * e.tempered_blocks as f64)
                    .fold(0.0, f64::max);
                (-(last(&e.horizons).max(tempered) + e.truncation), 0.0)
            }
            Experiment::Flatten => (-(last(&e.horizons) + e.truncation), 0.0),
            Experiment::Cauchy => (-(last(&e.cauchy_horizons) + e.truncation), 0.0),
        }
    }

    pub fn build_grid(&self) -> Result<Arc<WaveGrid<f64>>, IoError> {
        let ratio = parse_dealias(&self.grid.dealias)
            .ok_or_else(|| IoError::Invalid(format!("bad dealias `{}`", self.grid.dealias)))?;
        Ok(WaveGrid::with_dealias(self.grid.n, ratio)?)
    }

    pub fn build_model(&self) -> Result<Model<f64>, IoError> {
        let grid = self.build_grid()?;
        let calming = if self.calming.variant == CalmingVariant::Identity {
            CalmingSpec::identity()
        } else {
            CalmingSpec::new(self.calming.variant, self.calming.eps)
                .map_err(|e| IoError::Invalid(e.to_string()))?
        };
        let mut p = ModelParams::new(&grid, self.model.nu, calming);
        p.gamma = self.noise.gamma;
        p.alpha = self.model.alpha;
        p.cutoff = self.model.cutoff;
        p.nonlinear = self.model.nonlinearity;
        p.h = self.field(&self.h.mode, &grid, self.h.norm, self.noise.seed)?;
        let profile = abc_profile(&grid, self.forcing.amplitude);
        p.forcing = match self.forcing.kind {
            ForcingKind::Zero => ForcingSpec::zero(&grid),
            ForcingKind::Constant => ForcingSpec::constant(profile),
            ForcingKind::ExpWindow => ForcingSpec::exp_window(profile, self.forcing.sigma),
        };
        Ok(Model::new(p)?)
    }

    /// Materialises a field source with `‖∇·‖ = norm` for presets.
    pub fn field(
        &self,
        source: &FieldSource,
        grid: &Arc<WaveGrid<f64>>,
        norm: f64,
        seed: u64,
    ) -> Result<SpectralField<f64>, IoError> {
        Ok(match source {
            FieldSource::Zero => SpectralField::zeros(grid),
            FieldSource::TaylorGreen => taylor_green(grid, norm),
            FieldSource::Random => crate::rds::initial_family(grid, seed, &[norm]).remove(0),
            FieldSource::Lambda1 => {
                let c = |re: f64| Complex::new(re, 0.0);
                let f = SpectralField::single_mode(grid, [0, 0, 1], [c(0.0), c(1.0), c(0.0)]);
                let n = f.norm_v();
                f.scale(norm / n)
            }
            FieldSource::Snapshot { path, sha256 } => {
                let bytes = std::fs::read(path)?;
                if hex::encode(Sha256::digest(&bytes)) != *sha256 {
                    return Err(IoError::Invalid(format!("{} changed since the config was read", path.display())));
                }
                read_snapshot(bytes.as_slice(), grid)?
                    .into_iter()
                    .next()
                    .ok_or_else(|| IoError::Invalid(format!("{} holds no field", path.display())))?
            }
        })
    }

    pub fn noise_path(&self, seed: u64) -> Result<OuPath, IoError> {
        let (lo, hi) = self.noise_window();
        let dt = self.noise.dt;
        let lo = (lo / dt).floor() * dt - dt;
        let hi = (hi / dt).ceil() * dt + dt;
        let w = WienerPath::sample(seed, lo, hi, dt)?;
        Ok(OuPath::from_wiener(&w, self.noise.gamma, self.noise.init)?)
    }

    /// Stepper template; the span is set by the caller.
    pub fn stepper_config(&self) -> StepperConfig {
        let mut s = StepperConfig::new(self.stepper.scheme, self.stepper.dt, 0.0, self.stepper.span);
        s.stride = self.stepper.stride;
        s.tail_cutoffs = self.stepper.tail_cutoffs.clone();
        s
    }
}

/// Block length of the temperedness probe at rate `c`.
pub fn tempered_block(c: f64) -> f64 {
    (2.0 / c).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn issues(text: &str) -> Vec<ConfigIssue> {
        match parse_config(text) {
            Err(IoError::Config(ConfigErrors(v))) => v,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.grid.n, 16);
        assert_eq!(c.calming.variant, CalmingVariant::Z1);
        assert_eq!(c.experiment.seeds, vec![0]);
        assert_eq!(c.config_hash.len(), 64);
        assert_eq!(c.config_hash, parse_config("").unwrap().config_hash);
    }

    #[test]
    fn dotted_and_table_forms_agree() {
        let a = parse_config("model.nu = 0.5\ncalming.eps = 4.0\n").unwrap();
        let b = parse_config("[model]\nnu = 0.5\n[calming]\neps = 4\n").unwrap();
        assert_eq!(a.config_hash, b.config_hash);
    }

    #[test]
    fn hash_tracks_semantics_only() {
        let a = parse_config("").unwrap();
        let b = parse_config("output.dir = \"elsewhere\"").unwrap();
        let c = parse_config("noise.seed = 1").unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        assert_ne!(a.config_hash, c.config_hash);
        let mut d = a.clone();
        d.override_seed(1);
        assert_eq!(d.config_hash, c.config_hash);
    }

    #[test]
    fn negative_viscosity_names_the_key() {
        let v = issues("model.nu = -1");
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].key, "model.nu");
    }

    #[test]
    fn bad_variant_lists_valid_names() {
        let v = issues("calming.variant = \"z5\"");
        assert_eq!(v[0].key, "calming.variant");
        assert!(v[0].message.contains("z1, z2, z3, z4, identity"), "{}", v[0].message);
    }

    #[test]
    fn all_errors_are_collected() {
        let v = issues("model.nu = -1\nstepper.scheme = \"rk4\"\nbogus.key = 3\ngrid.n = \"x\"");
        let keys: Vec<&str> = v.iter().map(|i| i.key.as_str()).collect();
        for k in ["model.nu", "stepper.scheme", "bogus.key", "grid.n"] {
            assert!(keys.contains(&k), "{keys:?}");
        }
    }

    #[test]
    fn assumption_prescreen() {
        let v = issues("experiment.kind = \"absorb\"\ncalming.eps = 1.0");
        assert_eq!(v[0].key, "calming.eps");
        let v = issues("forcing.kind = \"exp_window\"\nforcing.sigma = -5.0");
        assert!(v.iter().any(|i| i.key == "forcing.sigma"));
        let v = issues("experiment.kind = \"absorb\"\nnoise.horizon = 20.0");
        assert_eq!(v[0].key, "noise.horizon");
        let v = issues("stepper.dt = 0.004");
        assert_eq!(v[0].key, "stepper.dt");
    }

    #[test]
    fn subcommand_overrides_kind() {
        let c = parse_config_in("experiment.kind = \"absorb\"", Path::new("."), Some(Experiment::Validate)).unwrap();
        assert_eq!(c.experiment.kind, Experiment::Validate);
    }
}
