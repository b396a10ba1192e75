use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Transformer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f32,
}

impl TransformerConfig {
    /// 6 layers, 8 heads, 512-wide embeddings, 2048-wide feed-forward.
    pub fn paper_scale(vocab_size: usize) -> Self {
        Self {
            num_layers: 6,
            num_heads: 8,
            embed_dim: 512,
            ffn_dim: 2048,
            vocab_size,
            max_positions: 256,
            dropout: 0.1,
        }
    }

    /// 2 layers, 2 heads, 64-wide embeddings, 128-wide feed-forward.
    pub fn desk_scale(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            num_heads: 2,
            embed_dim: 64,
            ffn_dim: 128,
            vocab_size,
            max_positions: 128,
            dropout: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("embed_dim", self.embed_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

impl fmt::Display for TransformerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "num_layers={} num_heads={} embed_dim={} ffn_dim={} vocab_size={} max_positions={} dropout={}",
            self.num_layers,
            self.num_heads,
            self.embed_dim,
            self.ffn_dim,
            self.vocab_size,
            self.max_positions,
            self.dropout
        )
    }
}

impl FromStr for TransformerConfig {
    type Err = Error;

    /// Parses the `key=value` list produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = TransformerConfig::desk_scale(1);
        let mut seen = 0;
        for item in s.split_ascii_whitespace() {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {item:?}")))?;
            let bad = |_| Error::Config(format!("bad value for {key}: {value:?}"));
            match key {
                "num_layers" => cfg.num_layers = value.parse().map_err(bad)?,
                "num_heads" => cfg.num_heads = value.parse().map_err(bad)?,
                "embed_dim" => cfg.embed_dim = value.parse().map_err(bad)?,
                "ffn_dim" => cfg.ffn_dim = value.parse().map_err(bad)?,
                "vocab_size" => cfg.vocab_size = value.parse().map_err(bad)?,
                "max_positions" => cfg.max_positions = value.parse().map_err(bad)?,
                "dropout" => {
                    cfg.dropout = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad dropout {value:?}")))?
                }
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
            seen += 1;
        }
        if seen != 7 {
            return Err(Error::Config(format!("expected 7 config keys, got {seen}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
