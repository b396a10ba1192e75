//! Named parameter tensors packed into one flat buffer.

use std::ops::Range;

use super::config::TransformerConfig;
use crate::error::Result;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Dense weight or embedding table, Xavier-uniform initialized.
    Weight { fan_in: usize, fan_out: usize },
    /// Zero initialized.
    Bias,
    /// Layer-norm gain, initialized to one.
    Gain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
    pub kind: TensorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearIdx {
    pub w: Range<usize>,
    pub b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormIdx {
    pub gain: Range<usize>,
    pub bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionIdx {
    pub q: LinearIdx,
    pub k: LinearIdx,
    pub v: LinearIdx,
    pub o: LinearIdx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FfnIdx {
    pub up: LinearIdx,
    pub down: LinearIdx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayerIdx {
    pub norm1: NormIdx,
    pub attn: AttentionIdx,
    pub norm2: NormIdx,
    pub ffn: FfnIdx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderLayerIdx {
    pub norm1: NormIdx,
    pub self_attn: AttentionIdx,
    pub norm2: NormIdx,
    pub cross_attn: AttentionIdx,
    pub norm3: NormIdx,
    pub ffn: FfnIdx,
}

/// Where every tensor lives in the flat buffer.
///
/// The decoder embedding doubles as the output projection; the output layer
/// only adds a per-token bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub enc_embed: Range<usize>,
    pub encoder: Vec<EncoderLayerIdx>,
    pub enc_norm: NormIdx,
    pub dec_embed: Range<usize>,
    pub decoder: Vec<DecoderLayerIdx>,
    pub dec_norm: NormIdx,
    pub out_bias: Range<usize>,
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn alloc(&mut self, name: String, shape: Vec<usize>, kind: TensorKind) -> Range<usize> {
        let len: usize = shape.iter().product();
        let range = self.total..self.total + len;
        self.total += len;
        self.tensors.push(TensorSpec {
            name,
            shape,
            range: range.clone(),
            kind,
        });
        range
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        LinearIdx {
            w: self.alloc(
                format!("{prefix}.weight"),
                vec![fan_in, fan_out],
                TensorKind::Weight { fan_in, fan_out },
            ),
            b: self.alloc(format!("{prefix}.bias"), vec![fan_out], TensorKind::Bias),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.alloc(format!("{prefix}.gain"), vec![d], TensorKind::Gain),
            bias: self.alloc(format!("{prefix}.bias"), vec![d], TensorKind::Bias),
        }
    }

    fn attention(&mut self, prefix: &str, d: usize) -> AttentionIdx {
        AttentionIdx {
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            o: self.linear(&format!("{prefix}.o"), d, d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnIdx {
        FfnIdx {
            up: self.linear(&format!("{prefix}.up"), d, f),
            down: self.linear(&format!("{prefix}.down"), f, d),
        }
    }

    fn embedding(&mut self, name: &str, vocab: usize, d: usize) -> Range<usize> {
        self.alloc(
            name.to_string(),
            vec![vocab, d],
            TensorKind::Weight {
                fan_in: vocab,
                fan_out: d,
            },
        )
    }
}

impl Layout {
    pub fn new(cfg: &TransformerConfig) -> Self {
        let (d, f, v) = (cfg.embed_dim, cfg.ffn_dim, cfg.vocab_size);
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let enc_embed = b.embedding("encoder.embed", v, d);
        let encoder = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayerIdx {
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    attn: b.attention(&format!("{p}.self_attn"), d),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, f),
                }
            })
            .collect();
        let enc_norm = b.norm("encoder.norm", d);
        let dec_embed = b.embedding("decoder.embed", v, d);
        let decoder = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayerIdx {
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    self_attn: b.attention(&format!("{p}.self_attn"), d),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    cross_attn: b.attention(&format!("{p}.cross_attn"), d),
                    norm3: b.norm(&format!("{p}.norm3"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, f),
                }
            })
            .collect();
        let dec_norm = b.norm("decoder.norm", d);
        let out_bias = b.alloc("output.bias".into(), vec![v], TensorKind::Bias);
        Self {
            enc_embed,
            encoder,
            enc_norm,
            dec_embed,
            decoder,
            dec_norm,
            out_bias,
            tensors: b.tensors,
            total: b.total,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Model configuration plus every trainable value, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    config: TransformerConfig,
    layout: Layout,
    values: Vec<f32>,
}

impl ParameterSet {
    /// Xavier-uniform weights, zero biases, unit gains; deterministic in `seed`.
    pub fn init(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = SeededRng::new(seed);
        let mut values = vec![0.0f32; layout.total];
        for spec in &layout.tensors {
            let slot = &mut values[spec.range.clone()];
            match spec.kind {
                TensorKind::Weight { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in slot {
                        *v = rng.symmetric(bound) as f32;
                    }
                }
                TensorKind::Bias => slot.fill(0.0),
                TensorKind::Gain => slot.fill(1.0),
            }
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn from_values(config: TransformerConfig, values: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total {
            return Err(crate::Error::Checkpoint(format!(
                "expected {} values, got {}",
                layout.total,
                values.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn num_parameters(&self) -> usize {
        self.values.len()
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.layout
            .tensor(name)
            .map(|t| (t.shape.as_slice(), &self.values[t.range.clone()]))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        let range = self.layout.tensor(name)?.range.clone();
        Some(&mut self.values[range])
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&TensorSpec, &[f32])> {
        self.layout
            .tensors
            .iter()
            .map(|t| (t, &self.values[t.range.clone()]))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = TransformerConfig::desk_scale(40);
        let a = ParameterSet::init(cfg, 11).unwrap();
        let b = ParameterSet::init(cfg, 11).unwrap();
        let c = ParameterSet::init(cfg, 12).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn init_respects_kinds() {
        let cfg = TransformerConfig::desk_scale(40);
        let p = ParameterSet::init(cfg, 1).unwrap();
        for (spec, values) in p.tensors() {
            match spec.kind {
                TensorKind::Bias => assert!(values.iter().all(|&v| v == 0.0), "{}", spec.name),
                TensorKind::Gain => assert!(values.iter().all(|&v| v == 1.0), "{}", spec.name),
                TensorKind::Weight { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
                    assert!(values.iter().all(|v| v.abs() <= bound), "{}", spec.name);
                }
            }
        }
    }

    #[test]
    fn tensors_tile_the_buffer() {
        let layout = Layout::new(&TransformerConfig::desk_scale(17));
        let mut next = 0;
        for t in &layout.tensors {
            assert_eq!(t.range.start, next);
            assert_eq!(t.range.len(), t.shape.iter().product::<usize>());
            next = t.range.end;
        }
        assert_eq!(next, layout.total);
        let mut names: Vec<_> = layout.tensors.iter().map(|t| &t.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), layout.tensors.len());
    }
}
