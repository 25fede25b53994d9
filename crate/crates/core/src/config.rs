//! Model and training hyper-parameters and the flat `key = value` config format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::DEFAULT_MAX_MATCH_LEN;
use crate::scalar::DType;

/// Component removed for an ablation run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    None,
    /// relative position term dropped from inter-attention
    NoRpe,
    /// no `<non_word>` entry appended to the word sequence
    NoTag,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "" => Ok(Ablation::None),
            "-RPE" | "no_rpe" | "-rpe" => Ok(Ablation::NoRpe),
            "-TAG" | "no_tag" | "-tag" => Ok(Ablation::NoTag),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::NoRpe => "-RPE",
            Ablation::NoTag => "-TAG",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    /// inter-attention heads
    pub heads: usize,
    /// self-attention heads; derived from `heads` when unset
    pub self_heads: Option<usize>,
    /// self-attention uses half as many heads as inter-attention
    pub is_less_head: bool,
    /// feed-forward width; `2 * d_model` when unset
    pub d_ff: Option<usize>,
    /// width of randomly initialised embeddings; `d_model` when unset
    pub embed_dim: Option<usize>,
    pub char_embed_dropout: f64,
    pub word_embed_dropout: f64,
    pub fc_dropout1: f64,
    pub fc_dropout2: f64,
    pub attn_dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub empty_row_fallback: bool,
    pub max_match_len: usize,
    pub precision: DType,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 160,
            heads: 8,
            self_heads: None,
            is_less_head: true,
            d_ff: None,
            embed_dim: None,
            char_embed_dropout: 0.3,
            word_embed_dropout: 0.001,
            fc_dropout1: 0.0,
            fc_dropout2: 0.2,
            attn_dropout: 0.0,
            lr: 1e-3,
            batch_size: 10,
            warmup: 0.1,
            epochs: 100,
            patience: 10,
            seed: 42,
            ablation: Ablation::None,
            empty_row_fallback: false,
            max_match_len: DEFAULT_MAX_MATCH_LEN,
            precision: DType::F64,
        }
    }
}

const KEYS: &[&str] = &[
    "d_model",
    "heads",
    "self_heads",
    "is_less_head",
    "d_ff",
    "embed_dim",
    "char_embed_dropout",
    "word_embed_dropout",
    "fc_dropout1",
    "fc_dropout2",
    "attn_dropout",
    "lr",
    "batch_size",
    "warmup",
    "epochs",
    "patience",
    "seed",
    "ablation",
    "empty_row_fallback",
    "max_match_len",
    "precision",
];

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl ModelConfig {
    pub fn self_heads(&self) -> usize {
        match self.self_heads {
            Some(h) => h,
            None if self.is_less_head => (self.heads / 2).max(1),
            None => self.heads,
        }
    }

    pub fn d_ff(&self) -> usize {
        self.d_ff.unwrap_or(2 * self.d_model)
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim.unwrap_or(self.d_model)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let opt = |v: &str| -> Result<Option<usize>> {
            if v == "auto" || v.is_empty() {
                Ok(None)
            } else {
                parse_value(key, v).map(Some)
            }
        };
        match key {
            "d_model" => self.d_model = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "self_heads" => self.self_heads = opt(value)?,
            "is_less_head" => self.is_less_head = parse_bool(key, value)?,
            "d_ff" => self.d_ff = opt(value)?,
            "embed_dim" => self.embed_dim = opt(value)?,
            "char_embed_dropout" => self.char_embed_dropout = parse_value(key, value)?,
            "word_embed_dropout" => self.word_embed_dropout = parse_value(key, value)?,
            "fc_dropout1" => self.fc_dropout1 = parse_value(key, value)?,
            "fc_dropout2" => self.fc_dropout2 = parse_value(key, value)?,
            "attn_dropout" => self.attn_dropout = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "warmup" => self.warmup = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "empty_row_fallback" => self.empty_row_fallback = parse_bool(key, value)?,
            "max_match_len" => self.max_match_len = parse_value(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" | "32" => DType::F32,
                    "f64" | "64" => DType::F64,
                    _ => return Err(Error::Config(format!("invalid precision {value:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let wrap = |e: Error| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: e.to_string(),
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| wrap(Error::Config(format!("expected key = value, got {line:?}"))))?;
            self.set(key.trim(), value).map_err(wrap)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ModelConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, rate) in [
            ("char_embed_dropout", self.char_embed_dropout),
            ("word_embed_dropout", self.word_embed_dropout),
            ("fc_dropout1", self.fc_dropout1),
            ("fc_dropout2", self.fc_dropout2),
            ("attn_dropout", self.attn_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} must be in [0, 1), got {rate}"));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be a finite non-negative number, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.warmup) {
            return bad(format!("warmup must be in [0, 1], got {}", self.warmup));
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return bad(format!("d_model must be even and positive, got {}", self.d_model));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        let sh = self.self_heads();
        if sh == 0 || !self.d_model.is_multiple_of(sh) {
            return bad(format!("d_model {} not divisible by self heads {sh}", self.d_model));
        }
        if self.is_less_head && self.self_heads.is_none() && !self.heads.is_multiple_of(2) {
            return bad(format!("is_less_head needs an even head count, got {}", self.heads));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_match_len < 2 {
            return bad("max_match_len must be at least 2".into());
        }
        Ok(())
    }

    /// Renders the config in the file format, one key per line.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |x| x.to_string());
        let mut s = String::new();
        for key in KEYS {
            let value = match *key {
                "d_model" => self.d_model.to_string(),
                "heads" => self.heads.to_string(),
                "self_heads" => opt(self.self_heads),
                "is_less_head" => self.is_less_head.to_string(),
                "d_ff" => opt(self.d_ff),
                "embed_dim" => opt(self.embed_dim),
                "char_embed_dropout" => self.char_embed_dropout.to_string(),
                "word_embed_dropout" => self.word_embed_dropout.to_string(),
                "fc_dropout1" => self.fc_dropout1.to_string(),
                "fc_dropout2" => self.fc_dropout2.to_string(),
                "attn_dropout" => self.attn_dropout.to_string(),
                "lr" => self.lr.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "warmup" => self.warmup.to_string(),
                "epochs" => self.epochs.to_string(),
                "patience" => self.patience.to_string(),
                "seed" => self.seed.to_string(),
                "ablation" => self.ablation.to_string(),
                "empty_row_fallback" => self.empty_row_fallback.to_string(),
                "max_match_len" => self.max_match_len.to_string(),
                "precision" => match self.precision {
                    DType::F32 => "f32".into(),
                    DType::F64 => "f64".into(),
                },
                _ => unreachable!(),
            };
            s.push_str(&format!("{key} = {value}\n"));
        }
        s
    }
}
