//! Run configuration: flat `key=value` text or a JSON object, overridden by
//! command-line flags, resolved against per-subcommand defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use roughpvar::fbm::FbmMethod;
use roughpvar::harness::{check_theorem_range, ExperimentConfig, ProcessSpec, Tolerances};
use roughpvar::hermite::Truncation;
use roughpvar::io::fmt17;
use roughpvar::stats::Regime;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subcommand {
    Simulate,
    Constants,
    Pvar,
    LimitCheck,
    RateFit,
    ScalingCheck,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [
        Self::Simulate,
        Self::Constants,
        Self::Pvar,
        Self::LimitCheck,
        Self::RateFit,
        Self::ScalingCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Constants => "constants",
            Self::Pvar => "pvar",
            Self::LimitCheck => "limit-check",
            Self::RateFit => "rate-fit",
            Self::ScalingCheck => "scaling-check",
        }
    }

    fn default_n(self) -> &'static str {
        match self {
            Self::LimitCheck => "1024,4096",
            Self::RateFit => "512,1024,2048,4096",
            Self::ScalingCheck => "256,512,1024,2048",
            _ => "1024",
        }
    }

    fn default_replicas(self) -> &'static str {
        match self {
            Self::LimitCheck => "1000",
            _ => "200",
        }
    }

    fn checks_theorem_range(self) -> bool {
        matches!(self, Self::Pvar | Self::LimitCheck | Self::RateFit)
    }
}

impl FromStr for Subcommand {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown subcommand '{s}'")))
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every accepted key, in manifest order.
pub const KEYS: [&str; 24] = [
    "subcommand",
    "experiment_id",
    "hurst",
    "p",
    "process",
    "n",
    "replicas",
    "seed",
    "t",
    "fine_factor",
    "method",
    "force",
    "chaos_q",
    "lag_k",
    "rank",
    "ks_tol",
    "median_tol",
    "slope_tol",
    "scaling_tol",
    "rde_b",
    "rde_v",
    "y0",
    "version",
    "outputs",
];

/// Raw `key -> value` pairs in the order they should be applied.
pub type RawConfig = BTreeMap<String, String>;

/// Parses flat `key=value` text (whitespace or newline separated, `#`
/// comments) or, when the text starts with `{`, a JSON object.
pub fn parse_config(text: &str) -> Result<RawConfig, CliError> {
    let trimmed = text.trim_start();
    let pairs = if trimmed.starts_with('{') { parse_json(trimmed)? } else { parse_flat(text)? };
    let mut out = RawConfig::new();
    for (k, v) in pairs {
        if !KEYS.contains(&k.as_str()) {
            return Err(CliError::Config(format!("unknown key '{k}'")));
        }
        out.insert(k, v);
    }
    Ok(out)
}

fn parse_flat(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = vec![];
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for token in line.split_whitespace() {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("expected key=value, got '{token}'")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Ok(pairs)
}

fn json_scalar(key: &str, v: &serde_json::Value) -> Result<String, CliError> {
    use serde_json::Value;
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(CliError::Config(format!("key '{key}': unsupported JSON value {v}"))),
    }
}

fn parse_json(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON config: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::Config("JSON config must be an object".into()))?;
    obj.iter()
        .map(|(k, v)| {
            let s = match v {
                serde_json::Value::Array(items) => {
                    items.iter().map(|i| json_scalar(k, i)).collect::<Result<Vec<_>, _>>()?.join(",")
                }
                other => json_scalar(k, other)?,
            };
            Ok((k.clone(), s))
        })
        .collect()
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub experiment_id: String,
    pub hurst: f64,
    pub p: f64,
    pub process: ProcessSpec,
    pub n: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub t: f64,
    pub fine_factor: usize,
    pub method: FbmMethod,
    pub force: bool,
    pub truncation: Truncation,
    pub rank: usize,
    pub tolerances: Tolerances,
    pub rde_b: (f64, f64),
    pub rde_v: (f64, f64),
    pub y0: f64,
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("key '{key}': cannot parse '{v}' as {}", std::any::type_name::<T>())))
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((parse_value(key, a)?, parse_value(key, b)?)),
        _ => Err(CliError::Config(format!("key '{key}': expected two comma-separated numbers, got '{v}'"))),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("key '{key}': expected a boolean, got '{v}'"))),
    }
}

impl RunConfig {
    /// Resolves `raw` for `subcommand` (which must agree with a `subcommand`
    /// key when present), filling in defaults and validating ranges.
    pub fn resolve(subcommand: Option<Subcommand>, raw: &RawConfig) -> Result<Self, CliError> {
        let from_file = raw.get("subcommand").map(|s| s.parse::<Subcommand>()).transpose()?;
        let subcommand = match (subcommand, from_file) {
            (Some(a), Some(b)) if a != b => {
                return Err(CliError::Usage(format!("config is for '{b}', not '{a}'")));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(CliError::Usage("no subcommand given".into())),
        };
        if let Some(v) = raw.get("version") {
            if v != crate::VERSION {
                log::warn!("config written by version {v}, running {}", crate::VERSION);
            }
        }
        let get = |k: &str, default: &str| raw.get(k).cloned().unwrap_or_else(|| default.to_string());

        let hurst: f64 = parse_value("hurst", &get("hurst", "0.5"))?;
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(CliError::Config(format!("domain error: hurst must lie in (0, 1), got {hurst}")));
        }
        let p: f64 = parse_value("p", &get("p", "2"))?;
        if !(p >= 1.0) {
            return Err(CliError::Config(format!("domain error: p must be at least 1, got {p}")));
        }
        let rde_b = parse_pair("rde_b", &get("rde_b", "0,0"))?;
        let rde_v = parse_pair("rde_v", &get("rde_v", "1,0"))?;
        let y0: f64 = parse_value("y0", &get("y0", "0"))?;
        let mut process: ProcessSpec = get("process", "fbm").parse().map_err(|e| CliError::Config(format!("{e}")))?;
        if let ProcessSpec::CustomRde { .. } = process {
            process = ProcessSpec::CustomRde { b: rde_b, v: rde_v, y0 };
        }
        let n = get("n", subcommand.default_n())
            .split(',')
            .map(|s| parse_value::<usize>("n", s.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        let force = parse_bool("force", &get("force", "false"))?;
        let regime = Regime::of(hurst);
        let ks = match get("ks_tol", "auto").as_str() {
            "auto" => Tolerances::default().ks_for(regime),
            v => parse_value("ks_tol", v)?,
        };
        let tolerances = Tolerances {
            ks: Some(ks),
            median: parse_value("median_tol", &get("median_tol", "0.08"))?,
            slope: parse_value("slope_tol", &get("slope_tol", "0.1"))?,
            scaling: parse_value("scaling_tol", &get("scaling_tol", "0.15"))?,
        };
        let cfg = Self {
            subcommand,
            experiment_id: get("experiment_id", subcommand.name()),
            hurst,
            p,
            process,
            n,
            replicas: parse_value("replicas", &get("replicas", subcommand.default_replicas()))?,
            seed: parse_value("seed", &get("seed", "0"))?,
            t: parse_value("t", &get("t", "1"))?,
            fine_factor: parse_value("fine_factor", &get("fine_factor", "16"))?,
            method: get("method", "auto").parse().map_err(|e| CliError::Config(format!("{e}")))?,
            force,
            truncation: Truncation {
                chaos: parse_value("chaos_q", &get("chaos_q", "40"))?,
                lags: parse_value("lag_k", &get("lag_k", "1000000"))?,
            },
            rank: parse_value("rank", &get("rank", "3"))?,
            tolerances,
            rde_b,
            rde_v,
            y0,
        };
        if cfg.experiment_id.is_empty() || cfg.experiment_id.contains([',', '\n', ' ']) {
            return Err(CliError::Config(format!("experiment_id '{}' must be non-empty without commas or spaces", cfg.experiment_id)));
        }
        if subcommand.checks_theorem_range() && !force {
            check_theorem_range(hurst, p).map_err(|e| CliError::Config(e.to_string()))?;
        }
        cfg.experiment().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            hurst: self.hurst,
            p: self.p,
            process: self.process,
            n_grid: self.n.clone(),
            replicas: self.replicas,
            master_seed: self.seed,
            t: self.t,
            fine_factor: self.fine_factor,
            method: self.method,
            truncation: self.truncation,
            tolerances: self.tolerances,
            force: self.force || !self.subcommand.checks_theorem_range(),
        }
    }

    /// `key=value` lines for every key except `outputs`; a valid config.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let pair = |(a, b): (f64, f64)| format!("{},{}", fmt17(a), fmt17(b));
        vec![
            ("subcommand", self.subcommand.to_string()),
            ("experiment_id", self.experiment_id.clone()),
            ("hurst", fmt17(self.hurst)),
            ("p", fmt17(self.p)),
            ("process", self.process.to_string()),
            ("n", join(&self.n)),
            ("replicas", self.replicas.to_string()),
            ("seed", self.seed.to_string()),
            ("t", fmt17(self.t)),
            ("fine_factor", self.fine_factor.to_string()),
            ("method", self.method.to_string()),
            ("force", self.force.to_string()),
            ("chaos_q", self.truncation.chaos.to_string()),
            ("lag_k", self.truncation.lags.to_string()),
            ("rank", self.rank.to_string()),
            ("ks_tol", fmt17(self.tolerances.ks_for(Regime::of(self.hurst)))),
            ("median_tol", fmt17(self.tolerances.median)),
            ("slope_tol", fmt17(self.tolerances.slope)),
            ("scaling_tol", fmt17(self.tolerances.scaling)),
            ("rde_b", pair(self.rde_b)),
            ("rde_v", pair(self.rde_v)),
            ("y0", fmt17(self.y0)),
            ("version", crate::VERSION.to_string()),
        ]
    }
}
