//! Encoder-decoder transformer trained with plain SGD.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod params;
pub mod train;

pub use config::TransformerConfig;
pub use decode::{beam_decode, greedy_decode, Hypothesis};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::Mat;
pub use params::ParameterSet;
pub use train::{fit, train, EncodedPair, FitOutcome, SpecialIds, TrainSpec, Trainer, ValidationPlan};

use crate::error::Result;
use network::{Network, Packed};

/// Logits for every decoder position: row `t` scores the token after `tgt_prefix[..=t]`.
///
/// `tgt_prefix` is the raw decoder input (it normally starts with BOS).
pub fn forward(params: &ParameterSet, src: &[u32], tgt_prefix: &[u32]) -> Result<Mat<f32>> {
    let cfg = params.config();
    for &id in src.iter().chain(tgt_prefix) {
        if id as usize >= cfg.vocab_size {
            return Err(crate::Error::Vocabulary {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
    }
    for len in [src.len(), tgt_prefix.len()] {
        if len > cfg.max_positions {
            return Err(crate::Error::Position {
                len,
                max: cfg.max_positions,
            });
        }
    }
    let net = Network::new(*params.config(), params.layout(), params.values());
    let src = Packed::new(&[src]);
    let tgt = Packed::new(&[tgt_prefix]);
    let (enc_out, _) = net.encode(&src, &mut None);
    let (hidden, _) = net.decode(&tgt, &enc_out, &src.spans, &mut None);
    Ok(net.logits(&hidden))
}
