use mpnp_autodiff::Tape;
use mpnp_core::encoder::ForwardMode;
use mpnp_core::loss::composite_loss;
use mpnp_core::optim::cosine_lr;
use mpnp_core::synth::carbonyl_corpus;
use mpnp_core::train::{epoch_order, noise_key, total_steps};
use mpnp_core::{fit, AdamW, Model, ModelConfig, TrainConfig};

fn small(epochs: usize) -> TrainConfig {
    TrainConfig {
        hidden_dim: 8,
        epochs,
        batch_size: 8,
        accumulation_steps: 1,
        learning_rate: 3e-3,
        seed: 21,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_reproducible() {
    let corpus = carbonyl_corpus(20, 40, 0.0, 1).unwrap();
    let train = corpus.dataset.all_indices();
    let a = fit(&corpus.dataset, &train, &small(2)).unwrap();
    let b = fit(&corpus.dataset, &train, &small(2)).unwrap();
    assert!(a.model.params.bit_identical(&b.model.params));
    assert_eq!(a.log, b.log);
    let other = fit(&corpus.dataset, &train, &TrainConfig { seed: 22, ..small(2) }).unwrap();
    assert!(!a.model.params.bit_identical(&other.model.params));
}

#[test]
fn schedule_length_counts_partial_groups() {
    let c = TrainConfig {
        epochs: 3,
        batch_size: 8,
        accumulation_steps: 4,
        ..TrainConfig::default()
    };
    // 41 examples → 6 batches → 2 steps per epoch
    assert_eq!(total_steps(41, &c), 6);
    assert_eq!(total_steps(32, &c), 3);
}

#[test]
fn fit_matches_a_hand_written_loop() {
    let corpus = carbonyl_corpus(16, 30, 0.0, 2).unwrap();
    let data = &corpus.dataset;
    let train: Vec<usize> = (0..24).collect();
    let config = small(2);
    let outcome = fit(data, &train, &config).unwrap();

    let mut model = Model::new(ModelConfig::new(&config, data.relations), config.seed).unwrap();
    let mut opt = AdamW::new(&model.params, config.weight_decay);
    let schedule = total_steps(train.len(), &config);
    for epoch in 0..config.epochs {
        for batch in epoch_order(&train, &config, epoch).chunks(config.batch_size) {
            let keys: Vec<u64> = [0, 1]
                .iter()
                .flat_map(|&side| batch.iter().map(move |&e| noise_key(config.seed, epoch, e, side)))
                .collect();
            let mut tape = Tape::new();
            let f = model
                .forward(&mut tape, &data.pair_batch(batch), ForwardMode::train(&keys), false)
                .unwrap();
            let loss = composite_loss(&mut tape, &f, &data.labels(batch), config.lambda_unc, config.lambda_kl).unwrap();
            let grads = tape.backward(loss.total).unwrap();
            let flat: Vec<Vec<f64>> = (0..model.params.len())
                .map(|slot| grads.get_or_zeros(f.vars.0[slot], model.params.get(slot).numel()))
                .collect();
            let lr = cosine_lr(opt.step as usize, schedule, config.learning_rate).unwrap();
            opt.step(&mut model.params, &flat, lr).unwrap();
            model.update_running_stats(f.batch_stats().unwrap(), config.batch_norm_momentum);
        }
    }
    assert!(model.params.bit_identical(&outcome.model.params));
    assert_eq!(opt.step, outcome.optimizer.step);
}

#[test]
fn accumulation_matches_a_larger_batch() {
    let corpus = carbonyl_corpus(20, 64, 0.0, 3).unwrap();
    let train = corpus.dataset.all_indices();
    let base = TrainConfig {
        freeze_batch_norm: true,
        ..small(2)
    };
    let accumulated = fit(
        &corpus.dataset,
        &train,
        &TrainConfig {
            batch_size: 8,
            accumulation_steps: 4,
            ..base.clone()
        },
    )
    .unwrap();
    let whole = fit(
        &corpus.dataset,
        &train,
        &TrainConfig {
            batch_size: 32,
            accumulation_steps: 1,
            ..base
        },
    )
    .unwrap();
    assert_eq!(accumulated.optimizer.step, whole.optimizer.step);
    for (a, b) in accumulated.model.params.tensors().iter().zip(whole.model.params.tensors()) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-5 * x.abs().max(y.abs()).max(1e-3), "{x} vs {y}");
        }
    }
}

#[test]
fn epoch_loss_mostly_decreases() {
    let corpus = carbonyl_corpus(24, 48, 0.0, 4).unwrap();
    let train = corpus.dataset.all_indices();
    let config = TrainConfig {
        shuffle: false,
        learning_rate: 2e-3,
        ..small(12)
    };
    let log = fit(&corpus.dataset, &train, &config).unwrap().log;
    let falling = log.windows(2).filter(|w| w[1].loss.total <= w[0].loss.total).count();
    assert!(falling * 10 >= 9 * (log.len() - 1), "{falling} of {} transitions", log.len() - 1);
    assert!(log.last().unwrap().loss.pred < log[0].loss.pred);
}

#[test]
fn empty_training_set_is_rejected() {
    let corpus = carbonyl_corpus(8, 10, 0.0, 5).unwrap();
    assert!(fit(&corpus.dataset, &[], &small(1)).is_err());
}
