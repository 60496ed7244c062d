use vispell_core::errorgen::{CorruptedSentence, CorruptionSpec, Corruptor};
use vispell_core::evalmetrics::evaluate_corpus;
use vispell_core::model::{load_checkpoint, ModelConfig};
use vispell_core::textdata::{read_corpus, write_corpus};
use vispell_core::train::{read_state, train, TrainConfig};

const FIXTURE: &str = include_str!("fixtures/corpus_vi.txt");

fn tiny() -> ModelConfig {
    ModelConfig {
        n_max: 16,
        l_max: 8,
        ..ModelConfig::tiny(0, 0)
    }
}

/// A 12-step schedule, stopped after `steps`.
fn train_config(steps: u64) -> TrainConfig {
    TrainConfig {
        max_steps: steps,
        batch_size: 4,
        checkpoint_every: 0,
        eval_every: 0,
        log_every: 1,
        ..TrainConfig::desk(12)
    }
}

#[test]
fn generate_train_checkpoint_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let sentences: Vec<CorruptedSentence> = Corruptor::new(CorruptionSpec::default())
        .unwrap()
        .stream(FIXTURE.as_bytes())
        .take(60)
        .map(Result::unwrap)
        .collect();
    let corpus = dir.path().join("corpus.jsonl");
    write_corpus(&corpus, &sentences).unwrap();
    let read_back = read_corpus(&corpus).unwrap();
    let triples = |v: &[CorruptedSentence]| -> Vec<_> {
        v.iter().map(|s| (s.noisy.clone(), s.clean.clone(), s.mask.clone())).collect()
    };
    assert_eq!(triples(&read_back), triples(&sentences));

    let out = dir.path().join("run");
    let model = train(&corpus, tiny(), train_config(12), &out, false).unwrap();
    let loaded = load_checkpoint(out.join("model.ckpt")).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(loaded.step, 12);
    let report = evaluate_corpus(&sentences, &loaded).unwrap();
    assert!(report.counts.is_consistent());

    let log = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 12);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let sentences: Vec<_> = Corruptor::new(CorruptionSpec::default())
        .unwrap()
        .stream(FIXTURE.as_bytes())
        .take(40)
        .map(Result::unwrap)
        .collect();
    let corpus = dir.path().join("corpus.jsonl");
    write_corpus(&corpus, &sentences).unwrap();

    let straight = dir.path().join("straight");
    let full = train(&corpus, tiny(), train_config(12), &straight, false).unwrap();

    let split = dir.path().join("split");
    train(&corpus, tiny(), train_config(5), &split, false).unwrap();
    assert_eq!(read_state(&split.join("state.bin")).unwrap().state.step, 5);
    let resumed = train(&corpus, tiny(), train_config(12), &split, true).unwrap();

    assert_eq!(resumed.params, full.params);
    assert_eq!(resumed.model_version, full.model_version);
    assert_eq!(
        read_state(&split.join("state.bin")).unwrap().state,
        read_state(&straight.join("state.bin")).unwrap().state
    );
}
