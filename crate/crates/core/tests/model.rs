use s2sfe::model::checkpoint::{self, Metadata};
use s2sfe::model::decode::{beam_hypothesis, greedy_hypothesis};
use s2sfe::model::gradcheck::grad_check;
use s2sfe::model::network::Network;
use s2sfe::model::train::{batch_loss, evaluate_loss};
use s2sfe::model::{
    beam_decode, forward, greedy_decode, train, EncodedPair, ParameterSet, SpecialIds, TrainSpec, Trainer,
    TransformerConfig,
};
use s2sfe::rng::SeededRng;
use s2sfe::Error;

fn tiny(vocab: usize) -> TransformerConfig {
    TransformerConfig {
        num_layers: 2,
        num_heads: 2,
        embed_dim: 16,
        ffn_dim: 32,
        vocab_size: vocab,
        max_positions: 32,
        dropout: 0.0,
    }
}

fn random_pairs(rng: &mut SeededRng, n: usize, vocab: usize) -> Vec<EncodedPair> {
    (0..n)
        .map(|_| {
            let ls = 1 + rng.below(6);
            let lt = rng.below(6);
            EncodedPair {
                src: (0..ls).map(|_| 4 + rng.below(vocab - 4) as u32).collect(),
                tgt: (0..lt).map(|_| 4 + rng.below(vocab - 4) as u32).collect(),
            }
        })
        .collect()
}

fn copy_pairs(rng: &mut SeededRng, n: usize, symbols: usize, max_len: usize) -> Vec<EncodedPair> {
    (0..n)
        .map(|_| {
            let len = 1 + rng.below(max_len);
            let s: Vec<u32> = (0..len).map(|_| 4 + rng.below(symbols) as u32).collect();
            EncodedPair { src: s.clone(), tgt: s }
        })
        .collect()
}

fn bits(values: &[f32]) -> Vec<u32> {
    values.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn gradients_match_finite_differences() {
    let params = ParameterSet::init(tiny(20), 3).unwrap();
    let mut rng = SeededRng::new(1);
    let batch = random_pairs(&mut rng, 3, 20);
    let report = grad_check(&params, &batch, 1e-3, 200, 7);
    assert!(report.checks.len() >= 200);
    assert_eq!(report.tensors_covered, params.layout().tensors.len());
    assert!(report.max_relative_error < 1e-3, "max relative error {}", report.max_relative_error);
}

#[test]
fn parameter_count_matches_closed_form() {
    let (v, d, f, l) = (50, 16, 32, 2);
    let params = ParameterSet::init(tiny(v), 0).unwrap();
    let norm = 2 * d;
    let linear = |i: usize, o: usize| i * o + o;
    let attention = 4 * linear(d, d);
    let ffn = linear(d, f) + linear(f, d);
    let encoder_layer = 2 * norm + attention + ffn;
    let decoder_layer = 3 * norm + 2 * attention + ffn;
    let expected = v * d + l * encoder_layer + norm + v * d + l * decoder_layer + norm + v;
    assert_eq!(params.num_parameters(), expected);
}

#[test]
fn init_is_reproducible_and_validated() {
    let a = ParameterSet::init(tiny(30), 9).unwrap();
    let b = ParameterSet::init(tiny(30), 9).unwrap();
    assert_eq!(bits(a.values()), bits(b.values()));
    let mut bad = tiny(30);
    bad.num_heads = 3;
    assert!(matches!(ParameterSet::init(bad, 9), Err(Error::Config(_))));
    assert!(ParameterSet::init(TransformerConfig::paper_scale(100), 1).is_ok());
}

#[test]
fn decoder_is_causal() {
    let params = ParameterSet::init(tiny(20), 4).unwrap();
    let src = [5, 6, 7, 8];
    let prefix = [1u32, 9, 10, 11, 12, 13];
    let base = forward(&params, &src, &prefix).unwrap();
    for k in 1..prefix.len() {
        let mut changed = prefix;
        changed[k] = 4 + (changed[k] + 3) % 16;
        let out = forward(&params, &src, &changed).unwrap();
        for row in 0..k {
            assert_eq!(bits(base.row(row)), bits(out.row(row)), "row {row} changed by position {k}");
        }
        assert_ne!(bits(base.row(k)), bits(out.row(k)));
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let params = ParameterSet::init(tiny(20), 4).unwrap();
    let logits = forward(&params, &[4, 5, 6], &[1, 7, 8]).unwrap();
    for r in 0..logits.rows {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z: f64 = row.iter().map(|&x| ((x - max) as f64).exp()).sum();
        let total: f64 = row.iter().map(|&x| ((x - max) as f64).exp() / z).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }
}

#[test]
fn forward_rejects_bad_ids_and_lengths() {
    let params = ParameterSet::init(tiny(20), 4).unwrap();
    assert!(matches!(
        forward(&params, &[20], &[1]),
        Err(Error::Vocabulary { id: 20, vocab_size: 20 })
    ));
    let long = vec![5u32; 33];
    assert!(matches!(forward(&params, &long, &[1]), Err(Error::Position { len: 33, max: 32 })));
    assert!(matches!(forward(&params, &[5], &long), Err(Error::Position { .. })));
}

#[test]
fn copy_task_loss_drops_tenfold() {
    let mut rng = SeededRng::new(21);
    let pairs = copy_pairs(&mut rng, 200, 12, 6);
    let params = ParameterSet::init(tiny(16), 5).unwrap();
    let (_, losses) = train(params, &pairs, &TrainSpec::new(0.1, 16, 2000, 3)).unwrap();
    let first = losses[0];
    let last = losses[losses.len() - 20..].iter().sum::<f32>() / 20.0;
    assert!(last < 0.1 * first, "initial {first}, final {last}");
}

#[test]
fn trained_model_echoes_held_out_strings() {
    let mut rng = SeededRng::new(31);
    let train_pairs = copy_pairs(&mut rng, 3000, 10, 8);
    let seen: std::collections::HashSet<Vec<u32>> = train_pairs.iter().map(|p| p.src.clone()).collect();
    let mut cfg = tiny(14);
    cfg.embed_dim = 32;
    cfg.ffn_dim = 64;
    let params = ParameterSet::init(cfg, 6).unwrap();
    let (params, _) = train(params, &train_pairs, &TrainSpec::new(0.3, 32, 4000, 4)).unwrap();
    let mut held_out = Vec::new();
    while held_out.len() < 30 {
        let p = copy_pairs(&mut rng, 1, 10, 8).remove(0);
        if !seen.contains(&p.src) {
            held_out.push(p.src);
        }
    }
    let special = SpecialIds::default();
    let wrong: Vec<_> = held_out
        .iter()
        .filter(|s| &greedy_decode(&params, s, 20, special).unwrap() != *s)
        .collect();
    assert!(wrong.is_empty(), "{} of 30 not echoed: {wrong:?}", wrong.len());
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let mut rng = SeededRng::new(2);
    let pairs = random_pairs(&mut rng, 8, 20);
    let params = ParameterSet::init(tiny(20), 1).unwrap();
    let (after, losses) = train(params.clone(), &pairs, &TrainSpec::new(0.0, 8, 5, 1)).unwrap();
    assert_eq!(bits(after.values()), bits(params.values()));
    for l in &losses {
        assert!((l - losses[0]).abs() <= 1e-5 * losses[0].abs());
    }
}

#[test]
fn padding_only_batch_is_an_error() {
    let special = SpecialIds::default();
    let pairs = vec![EncodedPair {
        src: vec![5, 6],
        tgt: vec![special.pad, special.pad],
    }];
    let params = ParameterSet::init(tiny(20), 1).unwrap();
    let mut trainer = Trainer::new(params, &pairs, TrainSpec::new(0.1, 1, 1, 0)).unwrap();
    assert!(matches!(trainer.step(), Err(Error::EmptyBatch { step: 0 })));
}

#[test]
fn divergence_reports_the_step() {
    let mut rng = SeededRng::new(3);
    let pairs = random_pairs(&mut rng, 8, 20);
    let params = ParameterSet::init(tiny(20), 1).unwrap();
    let err = train(params, &pairs, &TrainSpec::new(1e30, 8, 50, 1)).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn training_is_deterministic() {
    let mut rng = SeededRng::new(4);
    let pairs = random_pairs(&mut rng, 40, 20);
    let spec = TrainSpec::new(0.2, 8, 30, 17);
    let (a, la) = train(ParameterSet::init(tiny(20), 2).unwrap(), &pairs, &spec).unwrap();
    let (b, lb) = train(ParameterSet::init(tiny(20), 2).unwrap(), &pairs, &spec).unwrap();
    assert_eq!(bits(&la), bits(&lb));
    assert_eq!(bits(a.values()), bits(b.values()));
}

#[test]
fn greedy_respects_length_and_ties() {
    let mut params = ParameterSet::init(tiny(20), 4).unwrap();
    let special = SpecialIds::default();
    assert!(greedy_decode(&params, &[5, 6], 0, special).unwrap().is_empty());

    // With a zero output embedding every logit is its bias; ids 7 and 9 tie.
    params.tensor_mut("decoder.embed").unwrap().iter_mut().for_each(|w| *w = 0.0);
    let bias = params.tensor_mut("output.bias").unwrap();
    bias[7] = 3.0;
    bias[9] = 3.0;
    assert_eq!(greedy_decode(&params, &[5, 6], 4, special).unwrap(), vec![7, 7, 7, 7]);
}

#[test]
fn beam_of_one_is_greedy() {
    let params = ParameterSet::init(tiny(20), 12).unwrap();
    let special = SpecialIds::default();
    let mut rng = SeededRng::new(5);
    for _ in 0..100 {
        let src: Vec<u32> = (0..1 + rng.below(8)).map(|_| 4 + rng.below(16) as u32).collect();
        assert_eq!(
            beam_decode(&params, &src, 1, 10, special).unwrap(),
            greedy_decode(&params, &src, 10, special).unwrap()
        );
    }
}

#[test]
fn wider_beam_never_scores_lower() {
    let mut rng = SeededRng::new(6);
    let pairs = copy_pairs(&mut rng, 100, 12, 5);
    let (params, _) = train(ParameterSet::init(tiny(16), 8).unwrap(), &pairs, &TrainSpec::new(0.3, 16, 150, 2)).unwrap();
    let special = SpecialIds::default();
    for _ in 0..30 {
        let src: Vec<u32> = (0..1 + rng.below(6)).map(|_| 4 + rng.below(12) as u32).collect();
        let one = beam_hypothesis(&params, &src, 1, 12, special).unwrap();
        let four = beam_hypothesis(&params, &src, 4, 12, special).unwrap();
        assert!(four.score() >= one.score(), "{} < {}", four.score(), one.score());
        assert_eq!(one, greedy_hypothesis(&params, &src, 12, special).unwrap());
    }
    assert!(matches!(beam_decode(&params, &[5], 0, 5, special), Err(Error::Argument(_))));
}

#[test]
fn checkpoint_round_trip_reproduces_logits_and_loss() {
    let mut rng = SeededRng::new(7);
    let pairs = random_pairs(&mut rng, 6, 20);
    let (params, _) = train(ParameterSet::init(tiny(20), 3).unwrap(), &pairs, &TrainSpec::new(0.1, 6, 5, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &params, &Metadata::new()).unwrap();
    let (back, _) = checkpoint::load(&path).unwrap();
    let a = forward(&params, &[5, 6, 7], &[1, 8, 9]).unwrap();
    let b = forward(&back, &[5, 6, 7], &[1, 8, 9]).unwrap();
    assert_eq!(bits(&a.data), bits(&b.data));
    let special = SpecialIds::default();
    assert_eq!(
        evaluate_loss(&params, &pairs, special).to_bits(),
        evaluate_loss(&back, &pairs, special).to_bits()
    );
}

#[test]
fn unused_source_embedding_gets_zero_gradient() {
    let mut params = ParameterSet::init(tiny(20), 3).unwrap();
    let d = params.config().embed_dim;
    let unused = 19usize;
    params.tensor_mut("encoder.embed").unwrap()[unused * d..(unused + 1) * d]
        .iter_mut()
        .for_each(|w| *w = 0.0);
    let pairs = [EncodedPair {
        src: vec![4, 5, 6],
        tgt: vec![7, 8],
    }];
    let refs: Vec<&EncodedPair> = pairs.iter().collect();
    let net = Network::new(*params.config(), params.layout(), params.values());
    let grad = batch_loss(&net, &refs, SpecialIds::default(), true, None).grad.unwrap();
    let range = params.layout().tensor("encoder.embed").unwrap().range.clone();
    let row = &grad[range.start + unused * d..range.start + (unused + 1) * d];
    assert!(row.iter().all(|&g| g == 0.0));
}
