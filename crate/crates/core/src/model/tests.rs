use super::*;
use crate::textdata::{Vocab, VocabLevel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_example(config: &ModelConfig, rng: &mut ChaCha8Rng) -> EncodedExample {
    let (n, l) = (config.n_max, config.l_max);
    let len = rng.gen_range(1..=n);
    let mut ex = EncodedExample {
        n_max: n,
        l_max: l,
        word_ids: vec![PAD; n],
        char_ids: vec![PAD; n * l],
        detect_labels: vec![0; n],
        correct_labels: vec![PAD; n],
        attn_mask: vec![0; n],
    };
    for i in 0..len {
        ex.attn_mask[i] = 1;
        ex.word_ids[i] = rng.gen_range(1..config.v_word as u32);
        let chars = rng.gen_range(1..=l);
        for j in 0..chars {
            ex.char_ids[i * l + j] = rng.gen_range(1..config.v_char as u32);
        }
        ex.detect_labels[i] = u8::from(rng.gen_bool(0.4));
        ex.correct_labels[i] = rng.gen_range(1..config.v_word as u32);
    }
    ex.detect_labels[0] = 1;
    ex
}

/// Non-trivial parameters: random weights at a scale where every
/// nonlinearity is exercised, and non-identity norms.
fn random_params(config: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::zeros(config);
    for t in p.tensors_mut() {
        for x in t.data.iter_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
    for layer in p.char_layers.iter_mut().chain(p.word_layers.iter_mut()) {
        for norm in [&mut layer.attn_norm, &mut layer.ffn_norm] {
            norm.gamma.data.iter_mut().for_each(|g| *g += 1.0);
        }
    }
    p
}

fn tiny_setup(seed: u64) -> (ModelConfig, ModelParams<f64>, Vec<EncodedExample>) {
    let config = ModelConfig::tiny(20, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = random_params(&config, &mut rng);
    let examples = (0..3).map(|_| random_example(&config, &mut rng)).collect();
    (config, params, examples)
}

/// Largest relative error between analytic and central-difference
/// gradients, with the denominator floored at `floor`.
fn gradient_check(config: &ModelConfig, params: &ModelParams<f64>, examples: &[EncodedExample], floor: f64) -> (f64, String) {
    gradient_check_step(config, params, examples, floor, 1e-3)
}

fn gradient_check_step(config: &ModelConfig, params: &ModelParams<f64>, examples: &[EncodedExample], floor: f64, step: f64) -> (f64, String) {
    let (_, grad) = backward(params, config, examples, &mut Dropout::off()).unwrap();
    let mut probe = params.clone();
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = grad.named_tensors().into_iter().map(|(_, t)| t.data.clone()).collect();
    let mut worst = (0.0, String::new());
    for (t, name) in names.iter().enumerate() {
        for (i, &analytic) in grads[t].iter().enumerate() {
            let orig = probe.tensors_mut()[t].data[i];
            probe.tensors_mut()[t].data[i] = orig + step;
            let up = batch_loss_value(&probe, config, examples).unwrap().total;
            probe.tensors_mut()[t].data[i] = orig - step;
            let down = batch_loss_value(&probe, config, examples).unwrap().total;
            probe.tensors_mut()[t].data[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}] analytic {analytic:e} numeric {numeric:e}"));
            }
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        let (config, params, examples) = tiny_setup(seed);
        let (rel, at) = gradient_check(&config, &params, &examples, 1e-3);
        assert!(rel < 1e-4, "seed {seed}: {rel:e} at {at}");
        // a smaller step shrinks truncation error enough for a tight floor
        let (rel, at) = gradient_check_step(&config, &params, &examples, 1e-6, 1e-4);
        assert!(rel < 1e-4, "seed {seed}, step 1e-4: {rel:e} at {at}");
    }
}

#[test]
fn gradients_match_with_variants() {
    for (pooling, share) in [(Pooling::Max, false), (Pooling::First, true)] {
        let mut config = ModelConfig::tiny(20, 12);
        config.pooling = pooling;
        config.share_layers = share;
        config.char_layers = 2;
        config.word_layers = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = random_params(&config, &mut rng);
        let examples: Vec<_> = (0..2).map(|_| random_example(&config, &mut rng)).collect();
        // max pooling has kinks, so keep the probe step small
        let (rel, at) = gradient_check_step(&config, &params, &examples, 1e-3, 1e-5);
        assert!(rel < 1e-4, "{pooling:?}/{share}: {rel:e} at {at}");
    }
}

#[test]
fn output_shapes_and_normalization() {
    let (config, params, examples) = tiny_setup(1);
    let out = forward(&params, &config, &examples[0]).unwrap();
    assert_eq!(out.detect_probs.len(), config.n_max * 2);
    assert_eq!(out.correct_probs.len(), config.n_max * config.v_word);
    assert_eq!(out.hidden.len(), config.n_max * config.word_hidden);
    for i in 0..config.n_max {
        if examples[0].attn_mask[i] == 1 {
            assert!((out.detect_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((out.correct_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        } else {
            assert!(out.detect_row(i).iter().all(|p| *p == 0.0));
        }
    }
    let f32_params: ModelParams<f32> = params.cast();
    let out32 = forward(&f32_params, &config, &examples[0]).unwrap();
    for i in 0..config.n_max {
        if examples[0].attn_mask[i] == 1 {
            assert!((out32.detect_row(i).iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
    assert_eq!(forward(&params, &config, &examples[0]).unwrap(), out);
}

#[test]
fn forward_loss_agrees_with_batch_loss() {
    let (config, params, examples) = tiny_setup(2);
    let outs = forward_batch(&params, &config, &examples).unwrap();
    let mean: f64 = outs.iter().zip(&examples).map(|(o, e)| loss(o, e).total).sum::<f64>() / examples.len() as f64;
    let batch = batch_loss_value(&params, &config, &examples).unwrap();
    assert!((mean - batch.total).abs() < 1e-10);
    assert_eq!(batch.total, batch.detect_part + batch.correct_part);
}

#[test]
fn batching_does_not_change_outputs() {
    let (config, params, examples) = tiny_setup(3);
    let joint = forward_batch(&params, &config, &examples).unwrap();
    for (ex, o) in examples.iter().zip(&joint) {
        let single = forward(&params, &config, ex).unwrap();
        for (a, b) in single.detect_probs.iter().zip(&o.detect_probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn uniform_output(n_max: usize, v: usize, mask: &[u8]) -> ForwardOutput<f64> {
    ForwardOutput {
        n_max,
        v_word: v,
        word_hidden: 1,
        detect_probs: vec![0.5; n_max * 2],
        correct_probs: vec![1.0 / v as f64; n_max * v],
        hidden: vec![0.0; n_max],
        attn_mask: mask.to_vec(),
    }
}

fn labelled(n_max: usize, len: usize, errors: &[usize]) -> EncodedExample {
    let mut ex = EncodedExample {
        n_max,
        l_max: 1,
        word_ids: vec![PAD; n_max],
        char_ids: vec![PAD; n_max],
        detect_labels: vec![0; n_max],
        correct_labels: vec![PAD; n_max],
        attn_mask: vec![0; n_max],
    };
    for i in 0..len {
        ex.attn_mask[i] = 1;
        ex.word_ids[i] = 2;
        ex.correct_labels[i] = 2;
    }
    for e in errors {
        ex.detect_labels[*e] = 1;
        ex.correct_labels[*e] = 3;
    }
    ex
}

#[test]
fn loss_golden_values() {
    let ex = labelled(3, 2, &[1]);
    let parts = loss(&uniform_output(3, 4, &ex.attn_mask), &ex);
    let detect = 2.0f64.ln() * 2.0 / (2.0 + 1e-5);
    let correct = 4.0f64.ln() / (1.0 + 1e-5);
    assert!((parts.detect_part - detect).abs() < 1e-9);
    assert!((parts.correct_part - correct).abs() < 1e-9);
    assert_eq!(parts.total, parts.detect_part + parts.correct_part);

    let clean = labelled(3, 2, &[]);
    assert_eq!(loss(&uniform_output(3, 4, &clean.attn_mask), &clean).correct_part, 0.0);
}

#[test]
fn perfect_predictions_have_zero_loss() {
    let ex = labelled(2, 2, &[0]);
    let mut out = uniform_output(2, 4, &ex.attn_mask);
    out.detect_probs = vec![0.0, 1.0, 1.0, 0.0];
    out.correct_probs = vec![0.0; 8];
    out.correct_probs[3] = 1.0;
    out.correct_probs[4 + 2] = 1.0;
    assert_eq!(loss(&out, &ex).total, 0.0);
}

#[test]
fn correction_loss_ignores_clean_positions() {
    let ex = labelled(3, 3, &[1]);
    let base = uniform_output(3, 4, &ex.attn_mask);
    let mut perturbed = base.clone();
    perturbed.correct_probs[0..4].copy_from_slice(&[0.7, 0.1, 0.1, 0.1]);
    perturbed.correct_probs[8..12].copy_from_slice(&[0.1, 0.1, 0.1, 0.7]);
    assert_eq!(loss(&base, &ex).correct_part, loss(&perturbed, &ex).correct_part);
}

#[test]
fn masked_positions_do_not_affect_outputs() {
    let (config, params, examples) = tiny_setup(4);
    let mut ex = examples[0].clone();
    ex.attn_mask = vec![1, 1, 0, 0, 0, 0];
    let base = forward(&params, &config, &ex).unwrap();
    let mut changed = ex.clone();
    for i in 2..config.n_max {
        changed.word_ids[i] = 5;
        changed.detect_labels[i] = 1;
        for j in 0..config.l_max {
            changed.char_ids[i * config.l_max + j] = 3;
        }
    }
    let other = forward(&params, &config, &changed).unwrap();
    assert_eq!(base, other);
}

#[test]
fn gradients_vanish_for_unused_parameters() {
    let (config, params, _) = tiny_setup(5);
    let ex = labelled(config.n_max, 2, &[]);
    let mut ex = EncodedExample {
        l_max: config.l_max,
        char_ids: vec![PAD; config.n_max * config.l_max],
        ..ex
    };
    ex.char_ids[0] = 3;
    ex.char_ids[config.l_max] = 4;
    let (_, grad) = backward(&params, &config, std::slice::from_ref(&ex), &mut Dropout::off()).unwrap();
    // positions 2.. are masked, chars beyond the first are padding
    assert!(grad.word_position.data[2 * config.word_embed_dim..].iter().all(|g| *g == 0.0));
    assert!(grad.char_position.data[config.char_hidden..].iter().all(|g| *g == 0.0));
    // without gold errors the correction head gets nothing
    assert!(grad.correct_hidden.weight.data.iter().all(|g| *g == 0.0));
    assert!(grad.correct_bias.data.iter().all(|g| *g == 0.0));
    // the embedding rows that were not looked up stay untouched
    assert!(grad.word_embedding.row(5).iter().all(|g| *g == 0.0));
    assert!(grad.word_embedding.row(2).iter().any(|g| *g != 0.0));
}

#[test]
fn tied_embedding_feeds_both_uses() {
    let (config, params, examples) = tiny_setup(6);
    let ex = &examples[0];
    let base = forward(&params, &config, ex).unwrap();
    // a row never looked up still changes correction logits
    let unused = (2..config.v_word as u32).find(|id| !ex.word_ids.contains(id)).unwrap() as usize;
    let mut changed = params.clone();
    changed.word_embedding.row_mut(unused).iter_mut().for_each(|x| *x += 1.0);
    let out = forward(&changed, &config, ex).unwrap();
    assert_eq!(base.detect_probs, out.detect_probs);
    assert_ne!(base.correct_probs, out.correct_probs);
    // a looked-up row changes the encoder input as well
    let used = ex.word_ids[0] as usize;
    let mut changed = params.clone();
    changed.word_embedding.row_mut(used)[0] += 1.0;
    assert_ne!(forward(&changed, &config, ex).unwrap().hidden, base.hidden);

    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.iter().filter(|n| n.contains("word_embedding")).count(), 1);
    assert_eq!(names.len(), params.clone().tensors_mut().len());
    let census: usize = params.named_tensors().iter().map(|(_, t)| t.len()).sum();
    assert_eq!(params.parameter_count(), census);
}

#[test]
fn char_encode_single_character_golden() {
    let config = ModelConfig {
        char_layers: 1,
        char_hidden: 2,
        char_heads: 1,
        word_layers: 1,
        word_hidden: 2,
        word_heads: 1,
        word_embed_dim: 2,
        ffn_multiplier: 1,
        n_max: 1,
        l_max: 2,
        v_word: 3,
        v_char: 3,
        dropout_rate: 0.0,
        pooling: Pooling::Mean,
        share_layers: false,
    };
    let mut p = ModelParams::<f64>::zeros(&config);
    // 'a' has id 2 with embedding (3, 1); norms are identity
    p.char_embedding.row_mut(2).copy_from_slice(&[3.0, 1.0]);
    p.char_embed_norm = LayerNorm::identity(2);
    let layer = &mut p.char_layers[0];
    layer.qkv.weight.data = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    layer.attn_out.weight.data = vec![1.0, 0.0, 0.0, 1.0];
    layer.ffn_in.weight.data = vec![1.0, 0.0, 0.0, 1.0];
    layer.ffn_out.weight.data = vec![1.0, 0.0, 0.0, 1.0];
    layer.attn_norm = LayerNorm::identity(2);
    layer.ffn_norm = LayerNorm::identity(2);
    layer.ffn_norm.beta.data = vec![0.25, -0.5];
    let ex = EncodedExample {
        n_max: 1,
        l_max: 2,
        word_ids: vec![2],
        char_ids: vec![2, PAD],
        detect_labels: vec![0],
        correct_labels: vec![2],
        attn_mask: vec![1],
    };
    // Hand computation: layer-norm((3, 1)) = (1, -1). With one position the
    // attention weight is 1, so the context is the value (1, -1); the
    // residual (2, -2) normalizes to (1, -1). The FFN adds
    // (gelu(1), gelu(-1)) = (0.8412, -0.1588), giving (1.8412, -1.1588),
    // which normalizes to (1, -1) before gamma/beta: (1.25, -1.5).
    let pooled = char_encode(&p, &config, &ex).unwrap();
    assert!((pooled[0] - 1.25).abs() < 1e-9, "{pooled:?}");
    assert!((pooled[1] + 1.5).abs() < 1e-9, "{pooled:?}");
}

#[test]
fn char_encode_degenerate_and_permutation() {
    let (config, params, examples) = tiny_setup(8);
    let mut ex = examples[0].clone();
    ex.attn_mask = vec![1, 1, 1, 0, 0, 0];
    for j in 0..config.l_max {
        ex.char_ids[2 * config.l_max + j] = PAD;
    }
    ex.char_ids[0] = 3;
    ex.char_ids[config.l_max] = 5;
    let out = char_encode(&params, &config, &ex).unwrap();
    let dc = config.char_hidden;
    assert!(out[2 * dc..3 * dc].iter().all(|x| *x == 0.0));

    let mut swapped = ex.clone();
    let l = config.l_max;
    let (a, b) = swapped.char_ids.split_at_mut(l);
    a.swap_with_slice(&mut b[..l]);
    let out2 = char_encode(&params, &config, &swapped).unwrap();
    assert_eq!(&out[..dc], &out2[dc..2 * dc]);
    assert_eq!(&out[dc..2 * dc], &out2[..dc]);
}

#[test]
fn shape_errors_are_reported() {
    let (config, params, examples) = tiny_setup(9);
    let mut ex = examples[0].clone();
    ex.word_ids[0] = 99;
    assert!(matches!(forward(&params, &config, &ex), Err(ModelError::Shape(_))));
    let other = ModelConfig {
        n_max: 7,
        ..config.clone()
    };
    assert!(matches!(forward(&params, &other, &examples[0]), Err(ModelError::Shape(_))));
    let bad = ModelConfig {
        word_heads: 3,
        ..config.clone()
    };
    assert!(matches!(bad.validate(), Err(ModelError::Config(_))));
    assert!(params.check_shapes(&other).is_err());
}

#[test]
fn presets_are_valid() {
    for name in ["desk", "paper", "tiny"] {
        ModelConfig::preset(name, 100, 50).unwrap().validate().unwrap();
    }
    let paper = ModelConfig::paper(100, 50);
    assert_eq!((paper.char_layers, paper.char_hidden), (4, 256));
    assert_eq!((paper.word_layers, paper.word_hidden), (12, 768));
    let desk = ModelConfig::desk(100, 50);
    assert_eq!((desk.char_layers, desk.char_hidden, desk.char_heads), (2, 64, 4));
    assert_eq!((desk.word_layers, desk.word_hidden, desk.word_heads), (4, 128, 4));
}

#[test]
fn dropout_is_seeded() {
    let (mut config, params, examples) = tiny_setup(10);
    config.dropout_rate = 0.3;
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        backward(&params, &config, &examples, &mut Dropout::new(0.3, &mut rng)).unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1).0, run(2).0);
}

#[test]
fn init_follows_conventions() {
    let config = ModelConfig::desk(50, 30);
    let p = ModelParams::<f32>::init(&config, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(p.word_embedding.data.iter().all(|x| x.abs() <= 0.04));
    assert!(p.char_embed_norm.gamma.data.iter().all(|x| *x == 1.0));
    assert!(p.projection.bias.data.iter().all(|x| *x == 0.0));
    let std = (p.word_embedding.sum_squares() / p.word_embedding.len() as f64).sqrt();
    assert!((0.012..0.02).contains(&std), "{std}");
}

fn vocabs(config: &ModelConfig) -> (Vocab, Vocab) {
    let mut words = vec!["<pad>".to_string(), "<unk>".to_string()];
    words.extend((2..config.v_word).map(|i| format!("w{i}")));
    let mut chars = vec!["<pad>".to_string(), "<unk>".to_string()];
    chars.extend((2..config.v_char).map(|i| char::from(b'a' + i as u8).to_string()));
    (
        Vocab::from_tokens(VocabLevel::Word, words).unwrap(),
        Vocab::from_tokens(VocabLevel::Char, chars).unwrap(),
    )
}

fn tiny_corrector(seed: u64) -> Corrector {
    let (config, params, _) = tiny_setup(seed);
    let (wv, cv) = vocabs(&config);
    Corrector::new(config, params.cast(), wv, cv, 7).unwrap()
}

#[test]
fn checkpoint_round_trip() {
    let model = tiny_corrector(11);
    let mut buf = Vec::new();
    checkpoint::write_checkpoint(&mut buf, &model).unwrap();
    let back = checkpoint::read_checkpoint(&buf[..]).unwrap();
    assert_eq!(back, model);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), model);
    assert_eq!(checkpoint::read_header(&path).unwrap().step, 7);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = tiny_corrector(12);
    let mut buf = Vec::new();
    checkpoint::write_checkpoint(&mut buf, &model).unwrap();

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::read_checkpoint(&bad[..]), Err(CheckpointError::BadMagic)));

    let truncated = &buf[..buf.len() - 4];
    assert!(checkpoint::read_checkpoint(truncated).is_err());

    let mut trailing = buf.clone();
    trailing.push(0);
    assert!(checkpoint::read_checkpoint(&trailing[..]).is_err());

    // a header whose config disagrees with the stored tensor shapes
    let mut wrong = model.clone();
    wrong.config.word_embed_dim += 1;
    let mut buf2 = Vec::new();
    checkpoint::write_checkpoint(&mut buf2, &wrong).unwrap();
    assert!(matches!(checkpoint::read_checkpoint(&buf2[..]), Err(CheckpointError::Shape(_))));

    // an untied header
    let text = String::from_utf8_lossy(&buf).replace("\"tied_embeddings\":true", "\"tied_embeddings\":false");
    assert!(matches!(
        checkpoint::read_checkpoint(text.as_bytes()),
        Err(CheckpointError::Tying(_)) | Err(CheckpointError::Header(_))
    ));
}

#[test]
fn prediction_contract() {
    let model = tiny_corrector(13);
    assert!(model.predict("", 3).is_empty());
    let text = "w2 w3, w4 bcd efg hij k";
    let preds = model.predict(text, 3);
    assert_eq!(preds.len(), crate::textdata::tokenize(text).len().min(model.config.n_max));
    for p in &preds {
        assert_eq!(p.is_error, p.p_error > 0.5);
        if p.is_error {
            assert_eq!(p.suggestions.len(), 3);
            assert!(p.suggestions.windows(2).all(|w| w[0].prob >= w[1].prob));
            assert!(p.suggestions.iter().all(|s| s.word != "<pad>" && s.word != "<unk>"));
        } else {
            assert!(p.suggestions.is_empty());
        }
    }
    let long: Vec<String> = (0..15).map(|i| format!("w{}", 2 + i % 10)).collect();
    let windows = model.predict_sentences(std::slice::from_ref(&long), 1);
    assert_eq!(windows[0].len(), 15);
}
