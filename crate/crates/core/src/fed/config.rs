//! Federation hyperparameters and the flat `key = value` config format.

use std::fmt::Write;
use std::path::Path;

use crate::data::textfmt::load_err;
use crate::data::SplitKind;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::semantics::SkaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    /// Average generator and discriminator.
    Holistic,
    /// Average the generator only; discriminators stay with their clients.
    GeneratorOnly,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Holistic => "holistic",
            AggregationMode::GeneratorOnly => "generator_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "holistic" => Some(AggregationMode::Holistic),
            "generator_only" => Some(AggregationMode::GeneratorOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub num_clients: usize,
    /// Fraction of clients trained per round, in (0, 1].
    pub client_fraction: f64,
    pub local_epochs: usize,
    pub rounds: usize,
    /// Weight of the classification term in the generator loss.
    pub beta: f64,
    pub cls_pretrain_epochs: usize,
    pub cls_learning_rate: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_critic: usize,
    pub gp_lambda: f64,
    pub aggregation_mode: AggregationMode,
    pub ska: SkaConfig,
    /// Width of generated pseudo-embeddings when no embedding file is supplied.
    pub embed_dim: usize,
    /// Pseudo-features generated per unseen class at evaluation.
    pub synth_per_class: usize,
    pub global_seed: u64,
    pub hidden_dim: usize,
    /// Generator noise width; the attribute width when unset.
    pub noise_dim: Option<usize>,
    pub split: SplitKind,
    pub eval_epochs: usize,
    pub eval_learning_rate: f64,
    /// Evaluate the server generator every this many rounds; 0 disables.
    pub eval_every: usize,
    /// Train selected clients on worker threads.
    pub parallel: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            num_clients: 4,
            client_fraction: 1.0,
            local_epochs: 1,
            rounds: 100,
            beta: 0.01,
            cls_pretrain_epochs: 50,
            cls_learning_rate: 1e-2,
            batch_size: 64,
            learning_rate: 1e-3,
            n_critic: 5,
            gp_lambda: 10.0,
            aggregation_mode: AggregationMode::GeneratorOnly,
            ska: SkaConfig::default(),
            embed_dim: 32,
            synth_per_class: 300,
            global_seed: 0,
            hidden_dim: 4096,
            noise_dim: None,
            split: SplitKind::Even,
            eval_epochs: 100,
            eval_learning_rate: 1e-3,
            eval_every: 0,
            parallel: true,
        }
    }
}

impl FedConfig {
    /// Small synthetic-data setting used by tests and CI. Pseudo-embeddings
    /// carry no class semantics, so augmentation is off here.
    pub fn desk() -> Self {
        FedConfig {
            rounds: 30,
            hidden_dim: 64,
            learning_rate: 5e-3,
            beta: 1.0,
            ska: SkaConfig::disabled(),
            eval_learning_rate: 1e-2,
            ..FedConfig::default()
        }
    }

    pub fn selection_size(&self) -> usize {
        ((self.num_clients as f64 * self.client_fraction).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_clients", self.num_clients),
            ("local_epochs", self.local_epochs),
            ("cls_pretrain_epochs", self.cls_pretrain_epochs),
            ("batch_size", self.batch_size),
            ("n_critic", self.n_critic),
            ("synth_per_class", self.synth_per_class),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("eval_epochs", self.eval_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.noise_dim == Some(0) {
            return Err(Error::invalid("noise_dim must be positive"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "client_fraction must lie in (0, 1], got {}",
                self.client_fraction
            )));
        }
        let rates = [
            ("learning_rate", self.learning_rate),
            ("cls_learning_rate", self.cls_learning_rate),
            ("eval_learning_rate", self.eval_learning_rate),
            ("gp_lambda", self.gp_lambda),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be non-negative"));
        }
        if !(self.ska.gamma >= 0.0 && self.ska.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be non-negative"));
        }
        Ok(())
    }

    /// Parse flat `key = value` text over the defaults. `#` starts a comment.
    /// Unknown keys, repeated keys and bad values are errors naming the line.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        Self::parse_over(FedConfig::default(), text, origin)
    }

    /// Like [`FedConfig::parse`] but starting from `base`.
    pub fn parse_over(base: FedConfig, text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = base;
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                load_err(
                    origin,
                    line_no,
                    format!("expected `key = value`, found `{line}`"),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(load_err(
                    origin,
                    line_no,
                    format!("key `{key}` given twice"),
                ));
            }
            cfg.set(key, value)
                .map_err(|msg| load_err(origin, line_no, format!("{key}: {msg}")))?;
            seen.push(key.to_string());
        }
        cfg.validate()
            .map_err(|e| load_err(origin, 0, e.to_string()))?;
        Ok(cfg)
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "on" | "yes" | "1" => Ok(true),
                "false" | "off" | "no" | "0" => Ok(false),
                _ => Err(format!("expected on/off, found `{v}`")),
            }
        }
        match key {
            "num_clients" => self.num_clients = num(value)?,
            "client_fraction" => self.client_fraction = num(value)?,
            "local_epochs" => self.local_epochs = num(value)?,
            "rounds" => self.rounds = num(value)?,
            "beta" => self.beta = num(value)?,
            "cls_pretrain_epochs" => self.cls_pretrain_epochs = num(value)?,
            "cls_learning_rate" => self.cls_learning_rate = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "learning_rate" => self.learning_rate = num(value)?,
            "n_critic" => self.n_critic = num(value)?,
            "gp_lambda" => self.gp_lambda = num(value)?,
            "mode" => {
                self.aggregation_mode = AggregationMode::parse(value).ok_or_else(|| {
                    format!("expected holistic or generator_only, found `{value}`")
                })?
            }
            "ska" => self.ska.enabled = flag(value)?,
            "gamma" => self.ska.gamma = num(value)?,
            "resample_per_draw" => self.ska.resample_per_draw = flag(value)?,
            "embed_dim" => self.embed_dim = num(value)?,
            "synth_per_class" => self.synth_per_class = num(value)?,
            "global_seed" => self.global_seed = num(value)?,
            "hidden_dim" => self.hidden_dim = num(value)?,
            "noise_dim" => {
                self.noise_dim = match value {
                    "auto" => None,
                    v => Some(num(v)?),
                }
            }
            "split" => {
                self.split = match value {
                    "even" => SplitKind::Even,
                    "uneven" => SplitKind::Uneven,
                    _ => return Err(format!("expected even or uneven, found `{value}`")),
                }
            }
            "eval_epochs" => self.eval_epochs = num(value)?,
            "eval_learning_rate" => self.eval_learning_rate = num(value)?,
            "eval_every" => self.eval_every = num(value)?,
            "parallel" => self.parallel = flag(value)?,
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let on = |b: bool| if b { "on" } else { "off" };
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("string write");
        kv("num_clients", self.num_clients.to_string());
        kv("client_fraction", self.client_fraction.to_string());
        kv("local_epochs", self.local_epochs.to_string());
        kv("rounds", self.rounds.to_string());
        kv("beta", self.beta.to_string());
        kv("cls_pretrain_epochs", self.cls_pretrain_epochs.to_string());
        kv("cls_learning_rate", self.cls_learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("n_critic", self.n_critic.to_string());
        kv("gp_lambda", self.gp_lambda.to_string());
        kv("mode", self.aggregation_mode.as_str().to_string());
        kv("ska", on(self.ska.enabled).to_string());
        kv("gamma", self.ska.gamma.to_string());
        kv(
            "resample_per_draw",
            on(self.ska.resample_per_draw).to_string(),
        );
        kv("embed_dim", self.embed_dim.to_string());
        kv("synth_per_class", self.synth_per_class.to_string());
        kv("global_seed", self.global_seed.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv(
            "noise_dim",
            self.noise_dim.map_or("auto".to_string(), |n| n.to_string()),
        );
        kv(
            "split",
            match self.split {
                SplitKind::Even => "even",
                SplitKind::Uneven => "uneven",
            }
            .to_string(),
        );
        kv("eval_epochs", self.eval_epochs.to_string());
        kv("eval_learning_rate", self.eval_learning_rate.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("parallel", on(self.parallel).to_string());
        out
    }

    /// The same experiment with the thread setting normalised; results never
    /// depend on it.
    pub fn canonical(&self) -> FedConfig {
        FedConfig {
            parallel: true,
            ..self.clone()
        }
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.canonical().to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = FedConfig::desk();
        cfg.aggregation_mode = AggregationMode::Holistic;
        cfg.noise_dim = Some(7);
        cfg.ska.gamma = 0.25;
        let back = FedConfig::parse(&cfg.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = FedConfig::parse("rounds = 3\n\nroudns = 4\n", Path::new("c.cfg")).unwrap_err();
        match err {
            Error::Load { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("roudns"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in [
            "client_fraction = 0",
            "client_fraction = 1.5",
            "mode = fedprox",
            "ska = maybe",
            "rounds = -1",
        ] {
            assert!(FedConfig::parse(text, Path::new("c")).is_err(), "{text}");
        }
    }

    #[test]
    fn selection_size_never_empty() {
        let mut cfg = FedConfig {
            num_clients: 4,
            client_fraction: 0.1,
            ..FedConfig::default()
        };
        assert_eq!(cfg.selection_size(), 1);
        cfg.client_fraction = 0.5;
        assert_eq!(cfg.selection_size(), 2);
    }

    #[test]
    fn digest_ignores_parallelism() {
        let a = FedConfig::desk();
        let mut b = a.clone();
        b.parallel = false;
        assert_eq!(a.digest(), b.digest());
        b.rounds += 1;
        assert_ne!(a.digest(), b.digest());
    }
}
