//! Flat `key = value` run configuration. Every key has a default; files and
//! `--set` overrides may only name known keys.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use rulex::eval::{Decoding, Support};
use rulex::model::{
    Architecture, LinearConfig, LstmConfig, ModelConfig, TrainConfig, TransformerConfig,
};
use rulex::seed::derive_seed;
use rulex::{Error, Language, Result};
use sha2::{Digest, Sha256};

const DEFAULTS: &[(&str, &str)] = &[
    ("language", "L3"),
    ("architecture", "transformer"),
    ("seeds", "0"),
    ("max_len", "256"),
    ("size", "auto"),
    ("epochs", "50000"),
    ("batch_size", "128"),
    ("lr", "0.002"),
    ("warmup", "100"),
    ("weight_decay", "0.01"),
    ("eval_every", "100"),
    ("cutoff", "300"),
    ("ignore_pad", "auto"),
    ("early_stop_ood_r1", "off"),
    ("resume", "false"),
    ("window", "256"),
    ("bias", "true"),
    ("embedding", "16"),
    ("hidden", "64"),
    ("layers", "auto"),
    ("dropout", "auto"),
    ("dim", "10"),
    ("heads", "5"),
    ("feedforward", "1024"),
    ("ln_eps", "0.006"),
    ("max_positions", "302"),
    ("decoding", "greedy"),
    ("temperature", "1.0"),
    ("checkpoint", ""),
    ("support", "letters_eos"),
    ("mc_samples", "1000000"),
    ("chance_languages", "L1,L2,L3,L4,L5,L6"),
    ("track_masses", "auto"),
    ("content_length", "8"),
    ("catalogue", "builtin"),
    ("curve_sizes", "0,1,2,4,8,16,32,64,128,256,512"),
    ("curve_max_len", "16"),
];

#[derive(Clone, Debug)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(bad(format!("unknown config key {key:?}"))),
        }
    }

    /// Apply one `key=value` assignment.
    pub fn assign(&mut self, text: &str) -> Result<()> {
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| bad(format!("expected KEY=VALUE, got {text:?}")))?;
        self.set(k, v)
    }

    /// Blank lines and lines starting with `#` are ignored.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.assign(line)
                .map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// SHA-256 over the sorted `key=value` lines of the resolved config.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let v = self.raw(key);
        v.parse()
            .map_err(|e| bad(format!("{key} = {v:?}: {e}")))
    }

    fn auto<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| bad(format!("{key}: item {s:?}: {e}")))
            })
            .collect()
    }

    pub fn language(&self) -> Result<Language> {
        self.parse("language")
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.parse("architecture")
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let s: Vec<u64> = self.list("seeds")?;
        if s.is_empty() {
            return Err(bad("seeds must name at least one seed"));
        }
        Ok(s)
    }

    pub fn max_len(&self) -> Result<usize> {
        self.parse("max_len")
    }

    pub fn size(&self) -> Result<usize> {
        Ok(self
            .auto("size")?
            .unwrap_or_else(|| rulex::data::default_size(self.language().unwrap_or(Language::L3))))
    }

    pub fn cutoff(&self) -> Result<usize> {
        self.parse("cutoff")
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let arch = self.architecture()?;
        Ok(match arch {
            Architecture::Linear => ModelConfig::Linear(LinearConfig {
                window: self.parse("window")?,
                bias: self.parse("bias")?,
            }),
            Architecture::Lstm => {
                let d = LstmConfig::default();
                ModelConfig::Lstm(LstmConfig {
                    embedding: self.parse("embedding")?,
                    hidden: self.parse("hidden")?,
                    layers: self.auto("layers")?.unwrap_or(d.layers),
                    dropout: self.auto("dropout")?.unwrap_or(d.dropout),
                })
            }
            Architecture::Transformer => {
                let d = TransformerConfig::default();
                ModelConfig::Transformer(TransformerConfig {
                    layers: self.auto("layers")?.unwrap_or(d.layers),
                    dim: self.parse("dim")?,
                    heads: self.parse("heads")?,
                    feedforward: self.parse("feedforward")?,
                    dropout: self.auto("dropout")?.unwrap_or(d.dropout),
                    ln_eps: self.parse("ln_eps")?,
                    max_positions: self.parse("max_positions")?,
                })
            }
        })
    }

    pub fn train(&self, seed: u64) -> Result<TrainConfig> {
        Ok(TrainConfig {
            batch_size: self.parse("batch_size")?,
            lr: self.parse("lr")?,
            warmup: self.parse("warmup")?,
            weight_decay: self.parse("weight_decay")?,
            epochs: self.parse("epochs")?,
            cutoff: self.cutoff()?,
            eval_every: self.parse("eval_every")?,
            ignore_pad: self.auto("ignore_pad")?,
            seed,
        })
    }

    /// OOD R1 threshold that ends training once every other metric is perfect.
    pub fn early_stop(&self) -> Result<Option<f64>> {
        match self.raw("early_stop_ood_r1") {
            "off" => Ok(None),
            _ => self.parse("early_stop_ood_r1").map(Some),
        }
    }

    /// Continue each seed from its saved training state when one exists.
    pub fn resume(&self) -> Result<bool> {
        self.parse("resume")
    }

    pub fn decoding(&self, seed: u64) -> Result<Decoding> {
        match self.raw("decoding") {
            "greedy" => Ok(Decoding::Greedy),
            "sample" => {
                let temperature: f64 = self.parse("temperature")?;
                if !(temperature > 0.0) {
                    return Err(bad("temperature must be positive"));
                }
                Ok(Decoding::Sample {
                    seed: derive_seed(seed, "eval.decode"),
                    temperature,
                })
            }
            other => Err(bad(format!("decoding = {other:?} (expected greedy or sample)"))),
        }
    }

    pub fn checkpoint(&self) -> Option<&str> {
        Some(self.raw("checkpoint")).filter(|s| !s.is_empty())
    }

    pub fn support(&self) -> Result<Support> {
        self.parse("support")
    }

    pub fn mc_samples(&self) -> Result<u64> {
        self.parse("mc_samples")
    }

    pub fn chance_languages(&self) -> Result<Vec<Language>> {
        self.list("chance_languages")
    }

    /// Mass tracking defaults to on for L3, the only language with a
    /// category probe.
    pub fn track_masses(&self) -> Result<bool> {
        let lang = self.language()?;
        let on = self.auto("track_masses")?.unwrap_or(lang == Language::L3);
        if on && lang != Language::L3 {
            return Err(bad("track_masses is only available for L3"));
        }
        Ok(on)
    }

    pub fn content_length(&self) -> Result<usize> {
        self.parse("content_length")
    }

    /// `None` selects the built-in catalogue.
    pub fn catalogue(&self) -> Option<&str> {
        Some(self.raw("catalogue")).filter(|s| *s != "builtin")
    }

    pub fn curve_sizes(&self) -> Result<Vec<usize>> {
        self.list("curve_sizes")
    }

    pub fn curve_max_len(&self) -> Result<usize> {
        self.parse("curve_max_len")
    }
}
