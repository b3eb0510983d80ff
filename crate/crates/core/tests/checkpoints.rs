use devlang_core::data::{synth_task, SynthConfig};
use devlang_core::models::{Model, ModelConfig, ModelKind};
use devlang_core::Error;

fn train_set(features: bool) -> Vec<devlang_core::data::TransductionExample> {
    synth_task(&SynthConfig {
        seed: 2,
        language_count: 2,
        train_size: 15,
        dev_size: 1,
        test_size: 1,
        rule_complexity: 2,
        features,
    })
    .unwrap()
    .remove(0)
    .train
}

#[test]
fn checkpoint_restores_predictions_for_every_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let train = train_set(true);
    for kind in ModelKind::ALL {
        let model = Model::new(ModelConfig::new(kind), &train, 11).unwrap();
        let path = dir.path().join(format!("{kind}.ckpt"));
        model.save_checkpoint(&path).unwrap();
        let mut fresh = Model::new(ModelConfig::new(kind), &train, 99).unwrap();
        fresh.load_checkpoint(&path).unwrap();
        assert_eq!(fresh.store.seed(), 11);
        for ex in &train {
            assert_eq!(model.predict(ex).unwrap(), fresh.predict(ex).unwrap(), "{kind}");
        }
    }
}

#[test]
fn checkpoint_mismatches_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let train = train_set(false);
    let path = dir.path().join("m.ckpt");
    Model::new(ModelConfig::new(ModelKind::AttentionSeq2Seq), &train, 1)
        .unwrap()
        .save_checkpoint(&path)
        .unwrap();

    let mut other_kind = Model::new(ModelConfig::new(ModelKind::HardMonotonic), &train, 1).unwrap();
    assert!(matches!(other_kind.load_checkpoint(&path), Err(Error::Checkpoint(_))));

    let mut wider = ModelConfig::new(ModelKind::AttentionSeq2Seq);
    wider.hidden += 1;
    let mut wider = Model::new(wider, &train, 1).unwrap();
    assert!(matches!(wider.load_checkpoint(&path), Err(Error::Checkpoint(_))));

    let other_vocab = train_set(true);
    let mut shifted = Model::new(ModelConfig::new(ModelKind::AttentionSeq2Seq), &other_vocab[..3], 1).unwrap();
    assert!(matches!(shifted.load_checkpoint(&path), Err(Error::Checkpoint(_))));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let mut same = Model::new(ModelConfig::new(ModelKind::AttentionSeq2Seq), &train, 1).unwrap();
    assert!(same.load_checkpoint(&path).is_err());
}
