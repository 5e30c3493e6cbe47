use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Result, TrainError};

/// Optimization and model hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Per-layer width `d`.
    pub dim: usize,
    pub alpha: f64,
    pub hops: usize,
    pub lambda: f64,
    pub seed: u64,
    pub d_k: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Cutoff of the validation recall used for model selection.
    pub select_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 1024,
            dim: 128,
            alpha: 0.2,
            hops: 2,
            lambda: 0.1,
            seed: 2023,
            d_k: 64,
            clip_norm: 5.0,
            select_k: 50,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 11] = [
        "learning_rate",
        "epochs",
        "batch_size",
        "dim",
        "alpha",
        "hops",
        "lambda",
        "seed",
        "d_k",
        "clip_norm",
        "select_k",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("dim", self.dim),
            ("d_k", self.d_k),
            ("select_k", self.select_k),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(1..=3).contains(&self.hops) {
            return bad(format!("hops must be 1, 2 or 3, got {}", self.hops));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.clip_norm >= 0.0) {
            return bad(format!("clip_norm must be non-negative, got {}", self.clip_norm));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let err = |e: &dyn std::fmt::Display| TrainError::Config(format!("{key} = {value}: {e}"));
        macro_rules! parse {
            ($field:ident) => {
                self.$field = value.parse().map_err(|e| err(&e))?
            };
        }
        match key {
            "learning_rate" => parse!(learning_rate),
            "epochs" => parse!(epochs),
            "batch_size" => parse!(batch_size),
            "dim" => parse!(dim),
            "alpha" => parse!(alpha),
            "hops" => parse!(hops),
            "lambda" => parse!(lambda),
            "seed" => parse!(seed),
            "d_k" => parse!(d_k),
            "clip_norm" => parse!(clip_norm),
            "select_k" => parse!(select_k),
            _ => return Err(TrainError::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Builds a config from defaults overridden by the recognized keys of
    /// `map`; other keys are ignored.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in map {
            if Self::KEYS.contains(&k.as_str()) {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("learning_rate".into(), self.learning_rate.to_string());
        m.insert("epochs".into(), self.epochs.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("dim".into(), self.dim.to_string());
        m.insert("alpha".into(), self.alpha.to_string());
        m.insert("hops".into(), self.hops.to_string());
        m.insert("lambda".into(), self.lambda.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("d_k".into(), self.d_k.to_string());
        m.insert("clip_norm".into(), self.clip_norm.to_string());
        m.insert("select_k".into(), self.select_k.to_string());
        m
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// a repeated key keeps its last value.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(TrainError::Config(format!("line {}: expected key = value", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(TrainError::Config(format!("line {}: empty key", n + 1)));
        }
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.learning_rate, cfg.epochs, cfg.d_k), (0.01, 50, 64));
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.alpha = 0.1;
        cfg.learning_rate = 1.0 / 3.0;
        cfg.seed = 7;
        let back = TrainConfig::from_map(&parse_key_values(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parsing_handles_comments_and_errors() {
        let map = parse_key_values("# header\nhops = 3  # deep\n\ntransactions = data/tx.csv\n").unwrap();
        assert_eq!(map["hops"], "3");
        assert_eq!(map["transactions"], "data/tx.csv");
        let cfg = TrainConfig::from_map(&map).unwrap();
        assert_eq!(cfg.hops, 3);
        assert!(parse_key_values("hops 3").is_err());
        assert!(TrainConfig::from_map(&parse_key_values("hops = 4").unwrap()).is_err());
        assert!(TrainConfig::from_map(&parse_key_values("alpha = x").unwrap()).is_err());
        assert!(TrainConfig::default().set("nope", "1").is_err());
    }
}
