//! End-to-end gradient check: analytic gradients from the reverse sweep
//! against central finite differences of the scalar loss.

use cropseries_core::classifier::{
    AttentionParams, DenseLayer, LstmParams, ModelBundle, TrainMeta,
};
use cropseries_core::data::{window_sequence, SpectralSequence, WindowedSequence};
use cropseries_core::rng::SplitMix64;

const H: f64 = 1e-5;
const MAX_REL: f64 = 1e-4;

fn rand_model(seed: u64, d: usize, h: usize, classes: usize, attention: bool) -> ModelBundle {
    let mut rng = SplitMix64::new(seed);
    ModelBundle {
        lstm: LstmParams::init(d, h, &mut rng).unwrap(),
        attention: attention.then(|| AttentionParams::init(h, &mut rng).unwrap()),
        head: DenseLayer::init(h, classes, &mut rng).unwrap(),
        class_names: (0..classes).map(|i| format!("class{i}")).collect(),
        meta: TrainMeta {
            seed,
            epochs: 0,
            batch_size: 1,
            learning_rate: 1e-3,
            train_digest: String::from("none"),
            loss_curve: Vec::new(),
        },
    }
}

fn rand_seq(rng: &mut SplitMix64, t: usize, d: usize) -> WindowedSequence {
    let vals: Vec<f64> = (0..t * d).map(|_| rng.next_f64()).collect();
    let raw = SpectralSequence::new(t, d, 8, vals).unwrap();
    window_sequence(&raw, 1, 1).unwrap()
}

/// Max relative gradient error over every parameter element of one model on
/// one labeled sequence.
fn max_rel_error(model: &ModelBundle, seq: &WindowedSequence, label: usize) -> f64 {
    let (_, grads) = model.loss_and_grads(seq, label).unwrap();
    let mut work = model.clone();
    let n_tensors = work.trainable_tensors().len();
    assert_eq!(grads.len(), n_tensors);
    let mut worst = 0.0f64;
    for ti in 0..n_tensors {
        for k in 0..grads[ti].data().len() {
            let orig = work.trainable_tensors()[ti].data()[k];
            work.trainable_tensors_mut()[ti].data_mut()[k] = orig + H;
            let plus = work.loss(seq, label).unwrap();
            work.trainable_tensors_mut()[ti].data_mut()[k] = orig - H;
            let minus = work.loss(seq, label).unwrap();
            work.trainable_tensors_mut()[ti].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let analytic = grads[ti].data()[k];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[test]
fn attention_model_gradients_match_finite_differences() {
    for seed in 0..20u64 {
        let model = rand_model(1000 + seed, 3, 4, 2, true);
        let mut rng = SplitMix64::new(2000 + seed);
        let seq = rand_seq(&mut rng, 5, 3);
        let label = (seed % 2) as usize;
        let worst = max_rel_error(&model, &seq, label);
        assert!(
            worst < MAX_REL,
            "seed {seed}: max relative error {worst:e} exceeds {MAX_REL:e}"
        );
    }
}

#[test]
fn last_hidden_model_gradients_match_finite_differences() {
    for seed in 0..5u64 {
        let model = rand_model(3000 + seed, 3, 4, 3, false);
        let mut rng = SplitMix64::new(4000 + seed);
        let seq = rand_seq(&mut rng, 5, 3);
        let label = (seed % 3) as usize;
        let worst = max_rel_error(&model, &seq, label);
        assert!(
            worst < MAX_REL,
            "seed {seed}: max relative error {worst:e} exceeds {MAX_REL:e}"
        );
    }
}

#[test]
fn gradient_tensors_align_with_parameters() {
    let model = rand_model(77, 3, 4, 3, true);
    let mut rng = SplitMix64::new(78);
    let seq = rand_seq(&mut rng, 5, 3);
    let (loss, grads) = model.loss_and_grads(&seq, 1).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    let shapes: Vec<Vec<usize>> = model
        .trainable_tensors()
        .iter()
        .map(|t| t.shape().to_vec())
        .collect();
    for (g, s) in grads.iter().zip(&shapes) {
        assert_eq!(g.shape(), &s[..]);
        assert!(g.data().iter().all(|v| v.is_finite()));
    }
}
