//! Greedy and beam-search decoding.

use std::cmp::Ordering;

use super::network::{Network, Packed};
use super::ops::{log_softmax, Mat};
use super::params::ParameterSet;
use super::train::SpecialIds;
use crate::error::{Error, Result};

/// Encoder output for one source sentence, reused across decoding steps.
pub struct Session<'p> {
    net: Network<'p, f32>,
    enc_out: Mat<f32>,
    src: Packed,
    special: SpecialIds,
    max_len: usize,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParameterSet, src: &[u32], special: SpecialIds) -> Result<Self> {
        let cfg = *params.config();
        for &id in src {
            if id as usize >= cfg.vocab_size {
                return Err(Error::Vocabulary {
                    id,
                    vocab_size: cfg.vocab_size,
                });
            }
        }
        if src.len() > cfg.max_positions {
            return Err(Error::Position {
                len: src.len(),
                max: cfg.max_positions,
            });
        }
        let net = Network::new(cfg, params.layout(), params.values());
        let src = Packed::new(&[src]);
        let (enc_out, _) = net.encode(&src, &mut None);
        Ok(Self {
            net,
            enc_out,
            src,
            special,
            // the decoder input is BOS plus every generated token
            max_len: cfg.max_positions - 1,
        })
    }

    /// Log-probabilities of the next token after `prefix` (which excludes BOS).
    pub fn next_log_probs(&self, prefix: &[u32]) -> Vec<f32> {
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(self.special.bos);
        input.extend_from_slice(prefix);
        let tgt = Packed::new(&[input]);
        let (hidden, _) = self.net.decode(&tgt, &self.enc_out, &self.src.spans, &mut None);
        let last = Mat {
            rows: 1,
            cols: hidden.cols,
            data: hidden.row(hidden.rows - 1).to_vec(),
        };
        let logits = self.net.logits(&last);
        log_softmax(logits.row(0))
    }
}

/// Highest-scoring token; ties go to the lowest id.
fn argmax(values: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best as u32
}

/// Generated tokens (without BOS/EOS) and their summed log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// Tokens scored, including the EOS when one was produced.
    pub scored_len: usize,
    pub finished: bool,
}

impl Hypothesis {
    /// Length-normalized score: summed log-probability over scored tokens.
    pub fn score(&self) -> f64 {
        if self.scored_len == 0 {
            0.0
        } else {
            self.log_prob / self.scored_len as f64
        }
    }
}

pub fn greedy_hypothesis(
    params: &ParameterSet,
    src: &[u32],
    max_len: usize,
    special: SpecialIds,
) -> Result<Hypothesis> {
    let session = Session::new(params, src, special)?;
    let limit = max_len.min(session.max_len);
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        scored_len: 0,
        finished: false,
    };
    while hyp.scored_len < limit {
        let lp = session.next_log_probs(&hyp.tokens);
        let next = argmax(&lp);
        hyp.log_prob += lp[next as usize] as f64;
        hyp.scored_len += 1;
        if next == special.eos {
            hyp.finished = true;
            break;
        }
        hyp.tokens.push(next);
    }
    Ok(hyp)
}

/// Appends the argmax token each step until EOS or `max_len` tokens.
pub fn greedy_decode(
    params: &ParameterSet,
    src: &[u32],
    max_len: usize,
    special: SpecialIds,
) -> Result<Vec<u32>> {
    greedy_hypothesis(params, src, max_len, special).map(|h| h.tokens)
}

pub fn beam_hypothesis(
    params: &ParameterSet,
    src: &[u32],
    beam: usize,
    max_len: usize,
    special: SpecialIds,
) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::Argument("beam size must be at least 1".into()));
    }
    let session = Session::new(params, src, special)?;
    let limit = max_len.min(session.max_len);
    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        scored_len: 0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..limit {
        // (cumulative log-prob, hypothesis index, token)
        let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
        for (h, hyp) in active.iter().enumerate() {
            let lp = session.next_log_probs(&hyp.tokens);
            let mut top: Vec<u32> = (0..lp.len() as u32).collect();
            top.sort_by(|&a, &b| {
                lp[b as usize]
                    .partial_cmp(&lp[a as usize])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            top.truncate(beam);
            for tok in top {
                candidates.push((hyp.log_prob + lp[tok as usize] as f64, h, tok));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        candidates.truncate(beam);

        let mut next = Vec::with_capacity(beam);
        for (log_prob, h, tok) in candidates {
            let parent = &active[h];
            if tok == special.eos {
                finished.push(Hypothesis {
                    tokens: parent.tokens.clone(),
                    log_prob,
                    scored_len: parent.scored_len + 1,
                    finished: true,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                next.push(Hypothesis {
                    tokens,
                    log_prob,
                    scored_len: parent.scored_len + 1,
                    finished: false,
                });
            }
        }
        active = next;
        if active.is_empty() || finished.len() >= beam {
            break;
        }
    }

    let mut pool = finished;
    if pool.is_empty() {
        pool = active;
    }
    if beam > 1 {
        // The greedy path is always part of the explored set.
        pool.push(greedy_hypothesis(params, src, max_len, special)?);
    }
    let best = pool
        .into_iter()
        .reduce(|best, h| if h.score() > best.score() { h } else { best })
        .expect("beam search keeps at least one hypothesis");
    Ok(best)
}

/// Beam search with length-normalized scores. `beam == 1` reproduces greedy decoding.
pub fn beam_decode(
    params: &ParameterSet,
    src: &[u32],
    beam: usize,
    max_len: usize,
    special: SpecialIds,
) -> Result<Vec<u32>> {
    beam_hypothesis(params, src, beam, max_len, special).map(|h| h.tokens)
}
