//! Experiment configuration: a flat `key = value` text format with
//! command-line overrides. Validation reports every bad field at once.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Sample-count averaging, supervised loss only.
    FedAvg,
    /// Sample-count averaging with the distillation term.
    FedAvgKd,
    /// Rescue-factor weighted averaging with the distillation term.
    FedMas,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::FedAvg, Method::FedAvgKd, Method::FedMas];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedAvgKd => "fedavg_kd",
            Method::FedMas => "fedmas",
        }
    }

    pub fn uses_rescue_weights(self) -> bool {
        self == Method::FedMas
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "fedavg" => Ok(Method::FedAvg),
            "fedavg_kd" | "fedavg+kd" => Ok(Method::FedAvgKd),
            "fedmas" | "fed_mas" => Ok(Method::FedMas),
            other => Err(format!(
                "unknown method `{other}` (expected fedavg, fedavg_kd or fedmas)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    /// C
    pub clients: usize,
    /// K
    pub classes: usize,
    /// R
    pub rounds: usize,
    /// E
    pub local_epochs: usize,
    /// B
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub lambda_f: f64,
    pub dirichlet_alpha: f64,
    /// Use the IID split instead of the Dirichlet one.
    pub iid: bool,
    pub imbalance_ratio: f64,
    pub n_max: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_width: usize,
    /// Spread of the class means relative to the unit within-class noise.
    pub class_separation: f64,
    pub test_fraction: f64,
    /// Head threshold; defaults to N/20.
    pub shot_hi: Option<usize>,
    /// Tail threshold; defaults to N/200.
    pub shot_lo: Option<usize>,
    pub seed: u64,
    pub eval_every: usize,
    pub output_dir: PathBuf,
    /// Optional precomputed prior embeddings of the training set.
    pub prior_embeddings: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::FedMas,
            clients: 8,
            classes: 10,
            rounds: 50,
            local_epochs: 5,
            batch_size: 32,
            lr_max: 0.1,
            lr_min: 0.0,
            lambda_f: 3.0,
            dirichlet_alpha: 0.5,
            iid: false,
            imbalance_ratio: 100.0,
            n_max: 2000,
            feature_dim: 16,
            embed_dim: 32,
            hidden_width: 32,
            class_separation: 0.6,
            test_fraction: 0.2,
            shot_hi: None,
            shot_lo: None,
            seed: 0,
            eval_every: 1,
            output_dir: PathBuf::from("runs/default"),
            prior_embeddings: None,
        }
    }
}

/// Every recognized key, in file order.
pub const KEYS: &[&str] = &[
    "method",
    "clients",
    "classes",
    "rounds",
    "local_epochs",
    "batch_size",
    "lr_max",
    "lr_min",
    "lambda_f",
    "dirichlet_alpha",
    "iid",
    "imbalance_ratio",
    "n_max",
    "feature_dim",
    "embed_dim",
    "hidden_width",
    "class_separation",
    "test_fraction",
    "shot_hi",
    "shot_lo",
    "seed",
    "eval_every",
    "output_dir",
    "prior_embeddings",
];

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| format!("{key}: cannot parse `{value}`: {e}"))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: fmt::Display,
{
    match value.trim() {
        "" | "auto" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

/// Normalizes `--lambda-f`, `lambda-f` and `lambda_f` to `lambda_f`.
pub fn normalize_key(key: &str) -> String {
    key.trim()
        .trim_start_matches("--")
        .replace('-', "_")
        .to_ascii_lowercase()
}

impl ExperimentConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let key = normalize_key(key);
        let v = value.trim();
        match key.as_str() {
            "method" => self.method = v.parse()?,
            "clients" | "c" => self.clients = parse(&key, v)?,
            "classes" | "k" => self.classes = parse(&key, v)?,
            "rounds" | "r" => self.rounds = parse(&key, v)?,
            "local_epochs" | "epochs" | "e" => self.local_epochs = parse(&key, v)?,
            "batch_size" | "b" => self.batch_size = parse(&key, v)?,
            "lr_max" => self.lr_max = parse(&key, v)?,
            "lr_min" => self.lr_min = parse(&key, v)?,
            "lambda_f" => self.lambda_f = parse(&key, v)?,
            "dirichlet_alpha" | "alpha" => self.dirichlet_alpha = parse(&key, v)?,
            "iid" => self.iid = parse(&key, v)?,
            "imbalance_ratio" => self.imbalance_ratio = parse(&key, v)?,
            "n_max" => self.n_max = parse(&key, v)?,
            "feature_dim" => self.feature_dim = parse(&key, v)?,
            "embed_dim" => self.embed_dim = parse(&key, v)?,
            "hidden_width" => self.hidden_width = parse(&key, v)?,
            "class_separation" => self.class_separation = parse(&key, v)?,
            "test_fraction" => self.test_fraction = parse(&key, v)?,
            "shot_hi" => self.shot_hi = parse_optional(&key, v)?,
            "shot_lo" => self.shot_lo = parse_optional(&key, v)?,
            "seed" => self.seed = parse(&key, v)?,
            "eval_every" => self.eval_every = parse(&key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "prior_embeddings" => {
                self.prior_embeddings = match v {
                    "" | "none" => None,
                    p => Some(PathBuf::from(p)),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Value of a field in the textual form accepted by [`ExperimentConfig::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        let opt = |v: Option<usize>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
        Some(match normalize_key(key).as_str() {
            "method" => self.method.to_string(),
            "clients" => self.clients.to_string(),
            "classes" => self.classes.to_string(),
            "rounds" => self.rounds.to_string(),
            "local_epochs" => self.local_epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr_max" => self.lr_max.to_string(),
            "lr_min" => self.lr_min.to_string(),
            "lambda_f" => self.lambda_f.to_string(),
            "dirichlet_alpha" => self.dirichlet_alpha.to_string(),
            "iid" => self.iid.to_string(),
            "imbalance_ratio" => self.imbalance_ratio.to_string(),
            "n_max" => self.n_max.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "hidden_width" => self.hidden_width.to_string(),
            "class_separation" => self.class_separation.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "shot_hi" => opt(self.shot_hi),
            "shot_lo" => opt(self.shot_lo),
            "seed" => self.seed.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "prior_embeddings" => self
                .prior_embeddings
                .as_ref()
                .map_or_else(|| "none".to_string(), |p| p.display().to_string()),
            _ => return None,
        })
    }

    /// Parses `key = value` lines (`#` starts a comment) over the defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut errors = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = cfg.set(k, v) {
                        errors.push(format!("line {}: {e}", lineno + 1));
                    }
                }
                None => errors.push(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )),
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::InvalidConfig(errors))
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }

    pub fn to_kv_string(&self) -> String {
        KEYS.iter()
            .map(|k| {
                format!(
                    "{k} = {}\n",
                    self.get(k).expect("every listed key is readable")
                )
            })
            .collect()
    }

    /// Applies `(key, value)` overrides; all failures are reported together.
    pub fn apply_overrides<K: AsRef<str>, V: AsRef<str>>(
        &mut self,
        overrides: &[(K, V)],
    ) -> Result<()> {
        let errors: Vec<String> = overrides
            .iter()
            .filter_map(|(k, v)| self.set(k.as_ref(), v.as_ref()).err())
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errors))
        }
    }

    /// The distillation weight actually used; plain FedAvg trains without it.
    pub fn effective_lambda_f(&self) -> f64 {
        match self.method {
            Method::FedAvg => 0.0,
            _ => self.lambda_f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut at_least = |name: &str, v: usize, min: usize| {
            if v < min {
                errors.push(format!("{name} must be at least {min}, got {v}"));
            }
        };
        at_least("clients", self.clients, 1);
        at_least("rounds", self.rounds, 1);
        at_least("classes", self.classes, 2);
        at_least("local_epochs", self.local_epochs, 1);
        at_least("batch_size", self.batch_size, 1);
        at_least("n_max", self.n_max, self.classes.max(1));
        at_least("feature_dim", self.feature_dim, 1);
        at_least("embed_dim", self.embed_dim, 1);
        at_least("hidden_width", self.hidden_width, 1);
        at_least("eval_every", self.eval_every, 1);
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.lr_max) {
            errors.push(format!("lr_max must be positive, got {}", self.lr_max));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            errors.push(format!(
                "lr_min must be in [0, lr_max], got {}",
                self.lr_min
            ));
        }
        if !(self.lambda_f >= 0.0 && self.lambda_f.is_finite()) {
            errors.push(format!(
                "lambda_f must be non-negative, got {}",
                self.lambda_f
            ));
        }
        if !self.iid && !finite_pos(self.dirichlet_alpha) {
            errors.push(format!(
                "dirichlet_alpha must be positive, got {}",
                self.dirichlet_alpha
            ));
        }
        if !(self.imbalance_ratio >= 1.0 && self.imbalance_ratio.is_finite()) {
            errors.push(format!(
                "imbalance_ratio must be at least 1, got {}",
                self.imbalance_ratio
            ));
        }
        if !finite_pos(self.class_separation) {
            errors.push(format!(
                "class_separation must be positive, got {}",
                self.class_separation
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            errors.push(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            ));
        }
        if let (Some(hi), Some(lo)) = (self.shot_hi, self.shot_lo) {
            if lo >= hi {
                errors.push(format!("shot_lo ({lo}) must be below shot_hi ({hi})"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errors))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!(c.lambda_f, 3.0);
        assert_eq!(c.dirichlet_alpha, 0.5);
        assert_eq!(c.clients, 8);
        assert_eq!(c.lr_max, 0.1);
        assert_eq!(c.lr_min, 0.0);
        assert_eq!(c.embed_dim, 32);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.method = Method::FedAvgKd;
        c.shot_hi = Some(300);
        c.iid = true;
        c.prior_embeddings = Some("emb.femb".into());
        let back = ExperimentConfig::from_kv_str(&c.to_kv_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_win_and_accept_flag_spelling() {
        let mut c =
            ExperimentConfig::from_kv_str("method = fedmas\nlambda_f = 3 # comment\n").unwrap();
        c.apply_overrides(&[("--method", "fedavg"), ("--lambda-f", "0")])
            .unwrap();
        assert_eq!(c.method, Method::FedAvg);
        assert_eq!(c.lambda_f, 0.0);
    }

    #[test]
    fn every_bad_field_is_reported() {
        let err =
            ExperimentConfig::from_kv_str("method = sgd\nrounds = many\nbogus = 1\nnot a pair\n")
                .unwrap_err();
        match err {
            Error::InvalidConfig(list) => assert_eq!(list.len(), 4, "{list:?}"),
            other => panic!("unexpected {other}"),
        }
        let mut c = ExperimentConfig::default();
        c.clients = 0;
        c.lambda_f = -1.0;
        c.batch_size = 0;
        match c.validate().unwrap_err() {
            Error::InvalidConfig(list) => assert_eq!(list.len(), 3, "{list:?}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn fedavg_drops_the_distillation_term() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.effective_lambda_f(), 3.0);
        c.method = Method::FedAvg;
        assert_eq!(c.effective_lambda_f(), 0.0);
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("moon".parse::<Method>().is_err());
    }
}
