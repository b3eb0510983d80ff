use std::time::Instant;

use devlang_core::data::{synth_task, SynthConfig, TransductionExample};
use devlang_core::models::{evaluate_accuracy, train_epoch, Model, ModelConfig, ModelKind};

fn epochs_to_memorize(kind: ModelKind, features: bool) -> Option<usize> {
    let config = SynthConfig {
        seed: 21,
        language_count: 2,
        train_size: 20,
        dev_size: 1,
        test_size: 1,
        rule_complexity: 2,
        features,
    };
    let train = synth_task(&config).unwrap().remove(0).train;
    let mut model = Model::new(ModelConfig::new(kind), &train, 4).unwrap();
    let set = model.encode_all(&train);
    for epoch in 1..=500 {
        train_epoch(&mut model, &set, epoch as u64).unwrap();
        if evaluate_accuracy(&model, &train).unwrap() == 1.0 {
            return Some(epoch);
        }
    }
    None
}

#[test]
fn each_architecture_memorizes_twenty_examples() {
    for (kind, features) in [
        (ModelKind::AttentionSeq2Seq, false),
        (ModelKind::PointerGenerator, true),
        (ModelKind::HardMonotonic, false),
    ] {
        let start = Instant::now();
        let epochs = epochs_to_memorize(kind, features);
        eprintln!("{kind}: {epochs:?} in {:?}", start.elapsed());
        assert!(epochs.is_some(), "{kind} did not reach 100% training accuracy");
    }
}

#[test]
fn each_architecture_fits_a_single_example() {
    let train = vec![TransductionExample::new("one", "kitab", "kutub", vec!["N".into(), "PL".into()])];
    for kind in ModelKind::ALL {
        let mut model = Model::new(ModelConfig::new(kind), &train, 8).unwrap();
        let set = model.encode_all(&train);
        let mut loss = f64::INFINITY;
        for epoch in 1..=2000 {
            loss = train_epoch(&mut model, &set, epoch).unwrap().mean_loss;
            if loss < 0.01 {
                break;
            }
        }
        assert!(loss < 0.01, "{kind}: loss {loss}");
        assert_eq!(model.predict(&train[0]).unwrap(), train[0].targets[0], "{kind}");
    }
}
