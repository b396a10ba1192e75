//! Teacher-forced cross-entropy and the SGD training loop.

use super::network::{Dropout, Network, Packed};
use super::ops::{log_softmax, Mat, Real};
use super::params::ParameterSet;
use crate::bpe::Vocab;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Source and target token ids, without sentence markers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedPair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub bos: u32,
    pub eos: u32,
    pub pad: u32,
}

impl Default for SpecialIds {
    fn default() -> Self {
        Self {
            bos: Vocab::BOS_ID,
            eos: Vocab::EOS_ID,
            pad: Vocab::PAD_ID,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub special: SpecialIds,
    /// Linear ramp of the learning rate from zero over this many steps.
    pub warmup_steps: usize,
}

impl TrainSpec {
    pub fn new(learning_rate: f32, batch_size: usize, max_steps: usize, seed: u64) -> Self {
        Self {
            learning_rate,
            batch_size,
            max_steps,
            seed,
            special: SpecialIds::default(),
            warmup_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rate_at(&self, step: usize) -> f32 {
        if step < self.warmup_steps {
            self.learning_rate * (step + 1) as f32 / self.warmup_steps as f32
        } else {
            self.learning_rate
        }
    }
}

/// Decoder input (`BOS` + target) and labels (target + `EOS`).
///
/// A target made only of padding is a padding row: it contributes no labels.
pub fn teacher_forcing(tgt: &[u32], special: SpecialIds) -> (Vec<u32>, Vec<u32>) {
    let mut input = Vec::with_capacity(tgt.len() + 1);
    input.push(special.bos);
    input.extend_from_slice(tgt);
    let mut labels = tgt.to_vec();
    let padding_row = !tgt.is_empty() && tgt.iter().all(|&t| t == special.pad);
    labels.push(if padding_row { special.pad } else { special.eos });
    (input, labels)
}

pub fn check_pair(params: &ParameterSet, pair: &EncodedPair) -> Result<()> {
    let cfg = params.config();
    for &id in pair.src.iter().chain(&pair.tgt) {
        if id as usize >= cfg.vocab_size {
            return Err(Error::Vocabulary {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
    }
    if pair.src.len() > cfg.max_positions {
        return Err(Error::Position {
            len: pair.src.len(),
            max: cfg.max_positions,
        });
    }
    if pair.tgt.len() + 1 > cfg.max_positions {
        return Err(Error::Position {
            len: pair.tgt.len() + 1,
            max: cfg.max_positions,
        });
    }
    Ok(())
}

/// Mean cross-entropy over non-padding labels and, optionally, its gradient.
pub struct BatchLoss<T> {
    pub loss: f64,
    pub tokens: usize,
    pub grad: Option<Vec<T>>,
}

pub fn batch_loss<T: Real>(
    net: &Network<'_, T>,
    pairs: &[&EncodedPair],
    special: SpecialIds,
    with_grad: bool,
    mut dropout: Option<Dropout<'_>>,
) -> BatchLoss<T> {
    let srcs: Vec<&[u32]> = pairs.iter().map(|p| p.src.as_slice()).collect();
    let (inputs, labels): (Vec<Vec<u32>>, Vec<Vec<u32>>) =
        pairs.iter().map(|p| teacher_forcing(&p.tgt, special)).unzip();
    let labels: Vec<u32> = labels.into_iter().flatten().collect();

    let src = Packed::new(&srcs);
    let tgt = Packed::new(&inputs);
    let (enc_out, enc_cache) = net.encode(&src, &mut dropout);
    let (hidden, dec_cache) = net.decode(&tgt, &enc_out, &src.spans, &mut dropout);
    let logits = net.logits(&hidden);

    let tokens = labels.iter().filter(|&&l| l != special.pad).count();
    if tokens == 0 {
        return BatchLoss {
            loss: f64::NAN,
            tokens,
            grad: None,
        };
    }
    let inv = T::from_f64(1.0 / tokens as f64);
    let mut total = 0.0f64;
    let mut dlogits = Mat::zeros(logits.rows, logits.cols);
    for (row, &label) in labels.iter().enumerate() {
        if label == special.pad {
            continue;
        }
        let lp = log_softmax(logits.row(row));
        total -= lp[label as usize].as_f64();
        if with_grad {
            let g = dlogits.row_mut(row);
            for (gv, &l) in g.iter_mut().zip(&lp) {
                *gv = l.exp() * inv;
            }
            g[label as usize] -= inv;
        }
    }
    let grad = with_grad.then(|| net.backward(&dlogits, &enc_cache, &dec_cache));
    BatchLoss {
        loss: total / tokens as f64,
        tokens,
        grad,
    }
}

/// Mean loss over a whole pair list, evaluated in chunks without dropout.
pub fn evaluate_loss(params: &ParameterSet, pairs: &[EncodedPair], special: SpecialIds) -> f64 {
    let net = Network::new(*params.config(), params.layout(), params.values());
    let mut total = 0.0;
    let mut tokens = 0;
    let refs: Vec<&EncodedPair> = pairs.iter().collect();
    for chunk in refs.chunks(64) {
        let out = batch_loss(&net, chunk, special, false, None);
        if out.tokens > 0 {
            total += out.loss * out.tokens as f64;
            tokens += out.tokens;
        }
    }
    if tokens == 0 {
        f64::NAN
    } else {
        total / tokens as f64
    }
}

/// Stateful SGD loop; one call to [`Trainer::step`] is one minibatch update.
pub struct Trainer<'c> {
    params: ParameterSet,
    pairs: &'c [EncodedPair],
    spec: TrainSpec,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    shuffle_rng: SeededRng,
    dropout_rng: SeededRng,
    losses: Vec<f32>,
}

impl<'c> Trainer<'c> {
    pub fn new(params: ParameterSet, pairs: &'c [EncodedPair], spec: TrainSpec) -> Result<Self> {
        spec.validate()?;
        if pairs.is_empty() {
            return Err(Error::EmptyInput("no training pairs".into()));
        }
        for pair in pairs {
            check_pair(&params, pair)?;
        }
        let mut shuffle_rng = SeededRng::new(spec.seed);
        let dropout_rng = SeededRng::new(spec.seed ^ 0x9E37_79B9_7F4A_7C15);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        shuffle_rng.shuffle(&mut order);
        Ok(Self {
            params,
            pairs,
            spec,
            order,
            cursor: 0,
            step: 0,
            shuffle_rng,
            dropout_rng,
            losses: Vec::new(),
        })
    }

    fn next_batch(&mut self) -> Vec<&'c EncodedPair> {
        let mut batch = Vec::with_capacity(self.spec.batch_size);
        while batch.len() < self.spec.batch_size.min(self.pairs.len()) {
            if self.cursor == self.order.len() {
                self.shuffle_rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            batch.push(&self.pairs[self.order[self.cursor]]);
            self.cursor += 1;
        }
        batch
    }

    /// One SGD update; returns the batch loss before the update.
    pub fn step(&mut self) -> Result<f32> {
        let batch = self.next_batch();
        let cfg = *self.params.config();
        let dropout = (cfg.dropout > 0.0).then(|| Dropout {
            rate: cfg.dropout as f64,
            rng: &mut self.dropout_rng,
        });
        let net = Network::new(cfg, self.params.layout(), self.params.values());
        let out = batch_loss(&net, &batch, self.spec.special, true, dropout);
        if out.tokens == 0 {
            return Err(Error::EmptyBatch { step: self.step });
        }
        let loss = out.loss as f32;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                loss,
            });
        }
        let grad = out.grad.expect("gradient requested");
        let lr = self.spec.rate_at(self.step);
        for (w, g) in self.params.values_mut().iter_mut().zip(grad) {
            *w -= lr * g;
        }
        if !self.params.all_finite() {
            return Err(Error::Divergence {
                step: self.step,
                loss: f32::NAN,
            });
        }
        self.losses.push(loss);
        self.step += 1;
        Ok(loss)
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn losses(&self) -> &[f32] {
        &self.losses
    }

    pub fn finish(self) -> (ParameterSet, Vec<f32>) {
        (self.params, self.losses)
    }
}

/// Runs `spec.max_steps` SGD updates and returns the parameters and per-step losses.
pub fn train(
    params: ParameterSet,
    pairs: &[EncodedPair],
    spec: &TrainSpec,
) -> Result<(ParameterSet, Vec<f32>)> {
    let mut trainer = Trainer::new(params, pairs, spec.clone())?;
    while trainer.steps_done() < spec.max_steps {
        trainer.step()?;
    }
    Ok(trainer.finish())
}

/// Validation-driven stopping for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPlan {
    /// Evaluate the validation loss every this many steps.
    pub every: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: usize,
    /// Minimum decrease that counts as an improvement.
    pub min_delta: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ParameterSet,
    pub losses: Vec<f32>,
    pub valid_losses: Vec<(usize, f64)>,
    pub best_step: usize,
}

/// Trains until the validation loss plateaus or `spec.max_steps` is reached,
/// returning the parameters with the best validation loss.
pub fn fit(
    params: ParameterSet,
    train_pairs: &[EncodedPair],
    valid_pairs: &[EncodedPair],
    spec: &TrainSpec,
    plan: &ValidationPlan,
    mut on_eval: impl FnMut(usize, f32, f64),
) -> Result<FitOutcome> {
    let special = spec.special;
    let mut trainer = Trainer::new(params, train_pairs, spec.clone())?;
    let mut best = (evaluate_loss(trainer.params(), valid_pairs, special), 0usize);
    let mut best_params = trainer.params().clone();
    let mut valid_losses = vec![(0, best.0)];
    let mut stale = 0;
    while trainer.steps_done() < spec.max_steps {
        trainer.step()?;
        let step = trainer.steps_done();
        if step % plan.every.max(1) == 0 || step == spec.max_steps {
            let loss = evaluate_loss(trainer.params(), valid_pairs, special);
            valid_losses.push((step, loss));
            let recent = trainer.losses()[trainer.losses().len().saturating_sub(plan.every)..]
                .iter()
                .sum::<f32>()
                / plan.every.clamp(1, trainer.losses().len()) as f32;
            on_eval(step, recent, loss);
            if loss < best.0 - plan.min_delta {
                best = (loss, step);
                best_params = trainer.params().clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= plan.patience {
                    break;
                }
            }
        }
    }
    let (_, losses) = trainer.finish();
    Ok(FitOutcome {
        params: best_params,
        losses,
        valid_losses,
        best_step: best.1,
    })
}
