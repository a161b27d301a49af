//! Plain-text `key = value` configuration with `[policy]`, `[kernel]`, `[train]` and
//! `[async]` sections. Unset keys keep the defaults of [`TrainConfig`] and [`AsyncConfig`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;
use vespo_core::gradient::Aggregation;
use vespo_core::harness::{AsyncConfig, Method, TrainConfig};
use vespo_core::kernels::{ClipParams, LengthNorm};
use vespo_core::policy::{ContextOrder, RewardKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}: key '{k}': {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "key '{k}': {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Where a value came from: a config file line or a `--set` override.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override,
}

impl Origin {
    fn line(self) -> Option<usize> {
        match self {
            Origin::Line(l) => Some(l),
            Origin::Override => None,
        }
    }
}

pub const SECTIONS: [&str; 4] = ["policy", "kernel", "train", "async"];

/// Every accepted key with its section.
pub const KEYS: &[(&str, &str)] = &[
    ("policy", "vocab_size"),
    ("policy", "max_len"),
    ("policy", "order"),
    ("policy", "num_prompts"),
    ("policy", "variable_length"),
    ("kernel", "c1_pos"),
    ("kernel", "c2_pos"),
    ("kernel", "c1_neg"),
    ("kernel", "c2_neg"),
    ("kernel", "eps_low"),
    ("kernel", "eps_high"),
    ("kernel", "seq_clip_cap"),
    ("kernel", "max_weight"),
    ("kernel", "length_norm"),
    ("train", "method"),
    ("train", "aggregation"),
    ("train", "learning_rate"),
    ("train", "mbs"),
    ("train", "staleness_N"),
    ("train", "group_size"),
    ("train", "steps"),
    ("train", "seed"),
    ("train", "reward"),
    ("train", "target_token"),
    ("train", "reward_weight"),
    ("train", "grad_norm_cap"),
    ("train", "divergence_patience"),
    ("async", "sync_interval"),
    ("async", "preserve_inflight"),
    ("async", "staleness_threshold"),
];

/// Parsed configuration plus the raw assignments, for echoing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub async_cfg: AsyncConfig,
    pub has_async_section: bool,
    /// `section.key → value` as written.
    pub assignments: BTreeMap<String, String>,
}

struct Builder {
    train: TrainConfig,
    async_cfg: AsyncConfig,
    clip: ClipParams,
    clip_set: bool,
    has_async_section: bool,
    assignments: BTreeMap<String, String>,
    origins: BTreeMap<&'static str, Origin>,
}

fn err(origin: Origin, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { line: origin.line(), key: Some(key.to_string()), message: message.into() }
}

fn parse_num<T: std::str::FromStr>(origin: Origin, key: &str, value: &str, kind: &str) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| err(origin, key, format!("expected {kind}, got '{value}'")))
}

fn parse_bool(origin: Origin, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(err(origin, key, format!("expected boolean, got '{value}'"))),
    }
}

pub fn parse_length_norm(value: &str) -> Option<LengthNorm> {
    match value {
        "none" | "0" => Some(LengthNorm::None),
        "sqrt" | "0.5" | "1/2" => Some(LengthNorm::Sqrt),
        "linear" | "lin" | "1" => Some(LengthNorm::Linear),
        _ => None,
    }
}

pub fn length_norm_name(norm: LengthNorm) -> &'static str {
    match norm {
        LengthNorm::None => "none",
        LengthNorm::Sqrt => "sqrt",
        LengthNorm::Linear => "linear",
    }
}

impl Builder {
    fn new() -> Self {
        Self {
            train: TrainConfig::default(),
            async_cfg: AsyncConfig::default(),
            clip: ClipParams::grpo(),
            clip_set: false,
            has_async_section: false,
            assignments: BTreeMap::new(),
            origins: BTreeMap::new(),
        }
    }

    fn set(&mut self, section: &str, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        let &(sec, name) = KEYS
            .iter()
            .find(|(s, k)| *s == section && *k == key)
            .ok_or_else(|| err(origin, key, format!("unknown key in section [{section}]")))?;
        let t = &mut self.train;
        let positive_int = |v: &str| -> Result<usize, ConfigError> { parse_num::<usize>(origin, name, v, "non-negative integer") };
        let real = |v: &str| -> Result<f64, ConfigError> {
            let x = parse_num::<f64>(origin, name, v, "real number")?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(err(origin, name, "value must be finite"))
            }
        };
        match name {
            "vocab_size" => t.vocab_size = positive_int(value)?,
            "max_len" => t.max_len = positive_int(value)?,
            "order" => {
                t.order = match value {
                    "unconditioned" | "0" => ContextOrder::Unconditioned,
                    "bigram" | "1" => ContextOrder::Bigram,
                    _ => return Err(err(origin, name, format!("expected unconditioned|bigram (or 0|1), got '{value}'"))),
                }
            }
            "num_prompts" => t.num_prompts = positive_int(value)?,
            "variable_length" => t.variable_length = parse_bool(origin, name, value)?,
            "c1_pos" => t.kernel.c1_pos = real(value)?,
            "c2_pos" => t.kernel.c2_pos = real(value)?,
            "c1_neg" => t.kernel.c1_neg = real(value)?,
            "c2_neg" => t.kernel.c2_neg = real(value)?,
            "eps_low" => {
                self.clip.eps_low = real(value)?;
                self.clip_set = true;
            }
            "eps_high" => {
                self.clip.eps_high = real(value)?;
                self.clip_set = true;
            }
            "seq_clip_cap" => t.seq_clip_cap = real(value)?,
            "max_weight" => t.max_weight = parse_num::<f64>(origin, name, value, "real number")?,
            "length_norm" => {
                t.length_norm = parse_length_norm(value)
                    .ok_or_else(|| err(origin, name, format!("expected none|sqrt|linear, got '{value}'")))?
            }
            "method" => t.method = Method::parse(value).map_err(|_| err(origin, name, format!("unknown method '{value}'")))?,
            "aggregation" => {
                t.aggregation = match value {
                    "sequence-mean" => Aggregation::SequenceMean,
                    "token-sum" => Aggregation::TokenSum,
                    _ => return Err(err(origin, name, format!("expected sequence-mean|token-sum, got '{value}'"))),
                }
            }
            "learning_rate" => {
                t.learning_rate = real(value)?;
                if !(t.learning_rate > 0.0) {
                    return Err(err(origin, name, "invariant learning_rate > 0 violated"));
                }
            }
            "mbs" => t.mbs = positive_int(value)?,
            "staleness_N" => {
                t.staleness_n = positive_int(value)?;
                if t.staleness_n < 1 {
                    return Err(err(origin, name, "invariant staleness_N ≥ 1 violated"));
                }
            }
            "group_size" => {
                t.group_size = positive_int(value)?;
                if t.group_size < 1 {
                    return Err(err(origin, name, "invariant group_size ≥ 1 violated"));
                }
            }
            "steps" => t.steps = positive_int(value)?,
            "seed" => t.seed = parse_num::<u64>(origin, name, value, "unsigned integer")?,
            "reward" => {
                t.reward.kind = match value {
                    "target-count" => RewardKind::TargetCount,
                    "pattern-match" => RewardKind::PatternMatch,
                    "length-penalized-count" => RewardKind::LengthPenalizedCount,
                    _ => {
                        return Err(err(
                            origin,
                            name,
                            format!("expected target-count|pattern-match|length-penalized-count, got '{value}'"),
                        ))
                    }
                }
            }
            "target_token" => t.reward.target_token = positive_int(value)?,
            "reward_weight" => t.reward.weight = real(value)?,
            "grad_norm_cap" => t.grad_norm_cap = real(value)?,
            "divergence_patience" => t.divergence_patience = positive_int(value)?,
            "sync_interval" => {
                self.async_cfg.sync_interval = positive_int(value)?;
                if self.async_cfg.sync_interval < 1 {
                    return Err(err(origin, name, "invariant sync_interval ≥ 1 violated"));
                }
            }
            "preserve_inflight" => self.async_cfg.preserve_inflight = parse_bool(origin, name, value)?,
            "staleness_threshold" => self.async_cfg.staleness_threshold = real(value)?,
            _ => unreachable!("key table and match arms cover the same names"),
        }
        if sec == "async" {
            self.has_async_section = true;
        }
        self.assignments.insert(format!("{sec}.{name}"), value.to_string());
        self.origins.insert(name, origin);
        Ok(())
    }

    fn finish(mut self) -> Result<RunConfig, ConfigError> {
        if self.clip_set {
            self.train.clip = Some(self.clip);
        }
        let at = |b: &Builder, key: &'static str| b.origins.get(key).copied().and_then(Origin::line);
        let t = &self.train;
        if t.mbs == 0 || t.group_size == 0 || !t.mbs.is_multiple_of(t.group_size) {
            let key = if self.origins.contains_key("mbs") { "mbs" } else { "group_size" };
            return Err(ConfigError {
                line: at(&self, key),
                key: Some(key.into()),
                message: format!("invariant 'mbs divisible by group_size' violated ({} vs {})", t.mbs, t.group_size),
            });
        }
        if t.reward.target_token >= t.vocab_size {
            return Err(ConfigError {
                line: at(&self, "target_token"),
                key: Some("target_token".into()),
                message: format!("target_token must be < vocab_size = {}", t.vocab_size),
            });
        }
        self.train.validate().map_err(|e| ConfigError { line: None, key: None, message: e.to_string() })?;
        self.async_cfg.validate().map_err(|e| ConfigError { line: None, key: None, message: e.to_string() })?;
        Ok(RunConfig {
            train: self.train,
            async_cfg: self.async_cfg,
            has_async_section: self.has_async_section,
            assignments: self.assignments,
        })
    }
}

fn strip_comment(line: &str) -> &str {
    let cut = line.find(['#', ';']).unwrap_or(line.len());
    line[..cut].trim()
}

/// Split `section.key=value` or a bare `key=value`; a bare key must be unambiguous.
fn split_override(text: &str) -> Result<(String, String, String), ConfigError> {
    let (lhs, value) = text
        .split_once('=')
        .ok_or_else(|| ConfigError { line: None, key: None, message: format!("override '{text}' is not key=value") })?;
    let lhs = lhs.trim();
    let value = value.trim().to_string();
    if let Some((section, key)) = lhs.split_once('.') {
        return Ok((section.to_string(), key.to_string(), value));
    }
    let sections: Vec<&str> = KEYS.iter().filter(|(_, k)| *k == lhs).map(|(s, _)| *s).collect();
    match sections.as_slice() {
        [one] => Ok((one.to_string(), lhs.to_string(), value)),
        _ => Err(ConfigError { line: None, key: Some(lhs.to_string()), message: "unknown key".into() }),
    }
}

/// Parse config text, then apply `overrides` in order.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut b = Builder::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError { line: Some(line_no), key: None, message: format!("malformed section header '{line}'") })?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError { line: Some(line_no), key: None, message: format!("unknown section [{name}]") });
            }
            if name == "async" {
                b.has_async_section = true;
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError { line: Some(line_no), key: None, message: format!("expected key = value, got '{line}'") })?;
        let key = key.trim();
        let section = section.as_deref().ok_or_else(|| ConfigError {
            line: Some(line_no),
            key: Some(key.to_string()),
            message: "assignment before any [section] header".into(),
        })?;
        b.set(section, key, value.trim(), Origin::Line(line_no))?;
    }
    for o in overrides {
        let (section, key, value) = split_override(o)?;
        b.set(&section, &key, &value, Origin::Override)?;
    }
    b.finish()
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError { line: None, key: None, message: format!("cannot read {}: {e}", path.display()) })?;
    parse_config_str(&text, overrides)
}
