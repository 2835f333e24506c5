//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 7
//! epochs = 30
//! model.node_state_dim = 16
//! synth.mutation_rate = 0.05
//! ```
//!
//! Keys under `model.` and `synth.` override fields of the model and corpus
//! generator configurations. Command-line flags are applied on top.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use cidetect::dataset::TrainOptions;
use cidetect::eval::GridPreset;
use cidetect::gnn::ModelConfig;
use cidetect::synth::SynthConfig;

const PLAIN_KEYS: &[&str] = &[
    "seed",
    "jobs",
    "epochs",
    "epoch_size",
    "grid",
    "pattern",
    "per_label",
    "validation_per_label",
    "threshold_per_label",
    "vocab_max",
];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!(cidetect::Error::InvalidConfig(format!("line {}: expected key = value", n + 1))))?;
            config.set(k.trim(), v.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let known = PLAIN_KEYS.contains(&key)
            || key
                .strip_prefix("model.")
                .is_some_and(|f| has_field(&ModelConfig::default(), f))
            || key
                .strip_prefix("synth.")
                .is_some_and(|f| has_field(&SynthConfig::default(), f));
        if !known {
            bail!(cidetect::Error::InvalidConfig(format!("unknown configuration key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Sets `key` when `value` is present.
    pub fn set_opt(&mut self, key: &str, value: Option<impl ToString>) -> Result<()> {
        match value {
            Some(v) => self.set(key, &v.to_string()),
            None => Ok(()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!(cidetect::Error::InvalidConfig(format!("`{key}` = `{v}`: {e}"))))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    pub fn grid(&self) -> Result<GridPreset> {
        self.get_or("grid", GridPreset::Extended)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let mut config: SynthConfig = self.overlay(SynthConfig::default(), "synth.")?;
        config.seed = self.get_or("synth.seed", self.seed()?)?;
        Ok(config)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.overlay(ModelConfig::default(), "model.")
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        let d = TrainOptions::default();
        Ok(TrainOptions {
            model: self.model_config()?,
            epochs: self.get_or("epochs", d.epochs)?,
            epoch_size: self.get_or("epoch_size", d.epoch_size)?,
            validation_per_label: self.get_or("validation_per_label", d.validation_per_label)?,
            threshold_per_label: self.get_or("threshold_per_label", d.threshold_per_label)?,
            grid: self.grid()?.values(),
            vocab_max: self.get_or("vocab_max", d.vocab_max)?,
            seed: self.seed()?,
        })
    }

    fn overlay<T: Serialize + DeserializeOwned>(&self, base: T, prefix: &str) -> Result<T> {
        let mut value = serde_json::to_value(base)?;
        let object = value.as_object_mut().expect("configs serialize to objects");
        for (key, raw) in &self.values {
            let Some(field) = key.strip_prefix(prefix) else { continue };
            let wants_list = object.get(field).is_some_and(serde_json::Value::is_array);
            let parsed = serde_json::from_str(raw)
                .ok()
                .filter(|v: &serde_json::Value| !wants_list || v.is_array())
                .or_else(|| serde_json::from_str(&format!("[{raw}]")).ok())
                .unwrap_or_else(|| serde_json::Value::String(raw.clone()));
            object.insert(field.to_string(), parsed);
        }
        serde_json::from_value(value)
            .map_err(|e| anyhow!(cidetect::Error::InvalidConfig(format!("{}: {e}", prefix.trim_end_matches('.')))))
    }
}

fn has_field(value: &impl Serialize, field: &str) -> bool {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_object().map(|o| o.contains_key(field)))
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overlays() {
        let c = RunConfig::parse("# run\nseed = 7\n\nmodel.node_state_dim = 8\nmodel.update_hidden = 16, 4\nsynth.mutation_rate=0.05\n").unwrap();
        assert_eq!(c.seed().unwrap(), 7);
        let m = c.model_config().unwrap();
        assert_eq!(m.node_state_dim, 8);
        assert_eq!(m.update_hidden, vec![16, 4]);
        let single = RunConfig::parse("model.aggregator_hidden = 128").unwrap().model_config().unwrap();
        assert_eq!(single.aggregator_hidden, vec![128]);
        let s = c.synth_config().unwrap();
        assert_eq!(s.mutation_rate, 0.05);
        assert_eq!(s.seed, 7);
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = RunConfig::parse("epochs = 3").unwrap();
        c.set_opt("epochs", Some(5)).unwrap();
        c.set_opt("epoch_size", None::<usize>).unwrap();
        let o = c.train_options().unwrap();
        assert_eq!(o.epochs, 5);
        assert_eq!(o.epoch_size, TrainOptions::default().epoch_size);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("colour = blue").is_err());
        assert!(RunConfig::parse("model.depth = 3").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
        let c = RunConfig::parse("model.node_state_dim = many").unwrap();
        assert!(c.model_config().is_err());
        assert!(RunConfig::parse("epochs = -1").unwrap().train_options().is_err());
    }
}
