//! Ranking and classification metrics, plus the harness that evaluates every
//! method on every scenario and emits one traceable report row per pair.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::adapt::{train_da, AdaptedBundle, DaConfig, DomainPair};
use crate::classifier::{AnnConfig, AnnModel, ModelBundle, Pooling, TrainConfig};
use crate::data::{Dataset, DatasetPixel};
use crate::error::CoreError;
use crate::rng::derive_seed;

/// Area under the ROC curve by the rank-sum (Mann-Whitney) formulation.
/// Tied scores contribute half. Requires at least one positive and one
/// negative example.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, CoreError> {
    if scores.len() != labels.len() {
        return Err(CoreError::invalid(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CoreError::domain("scores must be finite"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::invalid(
            "need at least one positive and one negative example",
        ));
    }
    // Sort indices by score, then assign average ranks to tie groups.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group [i, j] shares the average rank
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    let n_neg_f = n_neg as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg_f))
}

/// F1 of one positive class from hard label predictions.
/// Returns 0 when precision + recall is 0.
pub fn f1(predictions: &[usize], labels: &[usize], positive_class: usize) -> Result<f64, CoreError> {
    if predictions.len() != labels.len() {
        return Err(CoreError::invalid(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(CoreError::invalid("empty prediction set"));
    }
    if !labels.iter().any(|&l| l == positive_class) {
        return Err(CoreError::invalid(format!(
            "no example of positive class {positive_class}"
        )));
    }
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == positive_class, l == positive_class) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    if tp == 0.0 {
        return Ok(0.0);
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Probability-of-positive-class scores paired with binary labels, one pair
/// per example, fed to [`auc`].
pub fn auc_from_probs(
    probs: &[Vec<f64>],
    labels: &[usize],
    positive_class: usize,
) -> Result<f64, CoreError> {
    if probs.len() != labels.len() {
        return Err(CoreError::invalid("probs and labels length mismatch"));
    }
    let scores: Vec<f64> = probs
        .iter()
        .map(|p| {
            p.get(positive_class).copied().ok_or_else(|| {
                CoreError::index(format!(
                    "positive class {positive_class} for {} outputs",
                    p.len()
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    let bools: Vec<bool> = labels.iter().map(|&l| l == positive_class).collect();
    auc(&scores, &bools)
}

/// One-vs-rest AUC averaged over all classes present in the labels.
pub fn macro_auc(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64, CoreError> {
    if n_classes < 2 {
        return Err(CoreError::invalid("need at least 2 classes"));
    }
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..n_classes {
        let present = labels.iter().any(|&l| l == c);
        let absent_rest = labels.iter().all(|&l| l == c);
        if !present || absent_rest {
            continue;
        }
        total += auc_from_probs(probs, labels, c)?;
        counted += 1;
    }
    if counted == 0 {
        return Err(CoreError::invalid("labels contain a single class"));
    }
    Ok(total / counted as f64)
}

/// Binary AUC for two-class problems, macro one-vs-rest otherwise.
pub fn dataset_auc(
    probs: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    positive_class: usize,
) -> Result<f64, CoreError> {
    if n_classes == 2 {
        auc_from_probs(probs, labels, positive_class)
    } else {
        macro_auc(probs, labels, n_classes)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

// ---- evaluation harness ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ann,
    KnnDtw,
    Lstm,
    LstmAtt,
    Da,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ann,
        Method::KnnDtw,
        Method::Lstm,
        Method::LstmAtt,
        Method::Da,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ann => "ann",
            Method::KnnDtw => "knn_dtw",
            Method::Lstm => "lstm",
            Method::LstmAtt => "lstm_att",
            Method::Da => "da",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.iter().copied().find(|m| m.name() == s)
    }

    /// Salt mixed into the run seed so each method trains under its own
    /// stream; exposed so external callers can reproduce harness models.
    pub fn seed_salt(&self) -> u64 {
        match self {
            Method::Ann => 10_001,
            Method::KnnDtw => 10_002,
            Method::Lstm => 10_003,
            // DA adapts the attention model, so both share one training seed.
            Method::LstmAtt | Method::Da => 10_004,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub lstm: TrainConfig,
    pub ann: AnnConfig,
    pub da: DaConfig,
    /// Class treated as positive for binary AUC and for F1.
    pub positive_class: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            lstm: TrainConfig::default(),
            ann: AnnConfig::default(),
            da: DaConfig::default(),
            positive_class: 0,
        }
    }
}

/// One method evaluated on one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: Method,
    pub scenario: String,
    pub auc: f64,
    pub f1: f64,
    pub train_digest: String,
    pub test_digest: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

/// Per-example scores and hard predictions for one test set.
fn eval_probs(
    probs: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    positive_class: usize,
) -> Result<(f64, f64), CoreError> {
    let auc = dataset_auc(probs, labels, n_classes, positive_class)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let f1 = f1(&preds, labels, positive_class)?;
    Ok((auc, f1))
}

fn check_compatible(train: &Dataset, test: &Dataset, scenario: &str) -> Result<(), CoreError> {
    if train.layout() != test.layout() {
        return Err(CoreError::invalid(format!(
            "scenario {scenario}: layout {:?} vs train {:?}",
            test.layout(),
            train.layout()
        )));
    }
    if train.class_names != test.class_names {
        return Err(CoreError::invalid(format!(
            "scenario {scenario}: class tables differ from the training set"
        )));
    }
    Ok(())
}

/// Train each requested method once on `train`, evaluate on every scenario,
/// and report AUC and F1 with input digests. The domain-adaptation method
/// trains one mapper per scenario against the frozen attention model.
pub fn compare_methods(
    train: &Dataset,
    scenarios: &[(String, Dataset)],
    methods: &[Method],
    config: &EvalConfig,
    seed: u64,
) -> Result<EvalReport, CoreError> {
    if scenarios.is_empty() {
        return Err(CoreError::invalid("no evaluation scenarios"));
    }
    if methods.is_empty() {
        return Err(CoreError::invalid("no methods requested"));
    }
    if config.positive_class >= train.class_count() {
        return Err(CoreError::index(format!(
            "positive class {} for {} classes",
            config.positive_class,
            train.class_count()
        )));
    }
    for (name, test) in scenarios {
        check_compatible(train, test, name)?;
    }
    let train_digest = train.digest();
    let n_classes = train.class_count();
    let mut report = EvalReport::default();
    // The attention model backs both the lstm_att rows and every adaptation,
    // so it is trained at most once, with the seed either would use.
    let needs_att = methods
        .iter()
        .any(|m| matches!(m, Method::LstmAtt | Method::Da));
    let att_model: Option<ModelBundle> = if needs_att {
        let cfg = TrainConfig {
            pooling: Pooling::Attention,
            ..config.lstm.clone()
        };
        Some(ModelBundle::train(
            train,
            &cfg,
            derive_seed(seed, Method::LstmAtt.seed_salt()),
        )?)
    } else {
        None
    };
    for &method in methods {
        match method {
            Method::Ann => {
                let model = AnnModel::train(train, &config.ann, derive_seed(seed, method.seed_salt()))?;
                for (name, test) in scenarios {
                    let probs: Vec<Vec<f64>> = test
                        .pixels
                        .iter()
                        .map(|p| model.predict_proba(&p.sequence))
                        .collect::<Result<_, _>>()?;
                    push_row(&mut report, method, name, test, &probs, n_classes, config, &train_digest, seed)?;
                }
            }
            Method::KnnDtw => {
                for (name, test) in scenarios {
                    let probs: Vec<Vec<f64>> = test
                        .pixels
                        .iter()
                        .map(|p| crate::dtw::knn_dtw_scores(train, &p.sequence))
                        .collect::<Result<_, _>>()?;
                    push_row(&mut report, method, name, test, &probs, n_classes, config, &train_digest, seed)?;
                }
            }
            Method::Lstm => {
                let cfg = TrainConfig {
                    pooling: Pooling::LastHidden,
                    ..config.lstm.clone()
                };
                let model = ModelBundle::train(train, &cfg, derive_seed(seed, method.seed_salt()))?;
                for (name, test) in scenarios {
                    let probs: Vec<Vec<f64>> = test
                        .pixels
                        .iter()
                        .map(|p| model.predict_proba(&p.sequence))
                        .collect::<Result<_, _>>()?;
                    push_row(&mut report, method, name, test, &probs, n_classes, config, &train_digest, seed)?;
                }
            }
            Method::LstmAtt => {
                let model = att_model.as_ref().expect("trained above");
                for (name, test) in scenarios {
                    let probs: Vec<Vec<f64>> = test
                        .pixels
                        .iter()
                        .map(|p| model.predict_proba(&p.sequence))
                        .collect::<Result<_, _>>()?;
                    push_row(&mut report, method, name, test, &probs, n_classes, config, &train_digest, seed)?;
                }
            }
            Method::Da => {
                let model = att_model.as_ref().expect("trained above");
                for (idx, (name, test)) in scenarios.iter().enumerate() {
                    let pair = DomainPair::new(train.clone(), test.clone())?;
                    let adapted: AdaptedBundle = train_da(
                        &pair,
                        model,
                        &config.da,
                        derive_seed(seed, 20_000 + idx as u64),
                    )?;
                    let probs: Vec<Vec<f64>> = test
                        .pixels
                        .iter()
                        .map(|p| adapted.predict_proba(model, &p.sequence))
                        .collect::<Result<_, _>>()?;
                    push_row(&mut report, method, name, test, &probs, n_classes, config, &train_digest, seed)?;
                }
            }
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn push_row(
    report: &mut EvalReport,
    method: Method,
    scenario: &str,
    test: &Dataset,
    probs: &[Vec<f64>],
    n_classes: usize,
    config: &EvalConfig,
    train_digest: &str,
    seed: u64,
) -> Result<(), CoreError> {
    let labels: Vec<usize> = test.pixels.iter().map(|p| p.label).collect();
    let (auc, f1) = eval_probs(probs, &labels, n_classes, config.positive_class)?;
    report.rows.push(EvalRow {
        method,
        scenario: String::from(scenario),
        auc,
        f1,
        train_digest: String::from(train_digest),
        test_digest: test.digest(),
        seed,
    });
    Ok(())
}

/// Outcome of training the flat baseline on the full sequence versus only a
/// step interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedProbe {
    pub full_auc: f64,
    pub restricted_auc: f64,
    pub interval: (usize, usize),
}

/// Train the flat ANN baseline on the full sequences and again on only the
/// steps in `interval` (inclusive), and compare test AUC. A discriminative
/// interval should hold its own despite seeing a fraction of the data.
pub fn restricted_period_probe(
    train: &Dataset,
    test: &Dataset,
    interval: (usize, usize),
    config: &AnnConfig,
    positive_class: usize,
    seed: u64,
) -> Result<RestrictedProbe, CoreError> {
    check_compatible(train, test, "restricted-probe")?;
    let (t, _) = train.layout();
    let (lo, hi) = interval;
    if lo > hi || hi >= t {
        return Err(CoreError::index(format!(
            "interval [{lo}, {hi}] outside 0..{t}"
        )));
    }
    let slice_dataset = |ds: &Dataset| -> Result<Dataset, CoreError> {
        let pixels: Vec<DatasetPixel> = ds
            .pixels
            .iter()
            .map(|p| {
                Ok(DatasetPixel {
                    pixel_id: p.pixel_id.clone(),
                    label: p.label,
                    sequence: p.sequence.slice_steps(lo, hi)?,
                })
            })
            .collect::<Result<_, CoreError>>()?;
        Dataset::from_pixels(pixels, ds.class_names.clone(), ds.provenance.clone())
    };
    let eval_model = |train_ds: &Dataset, test_ds: &Dataset| -> Result<f64, CoreError> {
        let model = AnnModel::train(train_ds, config, seed)?;
        let probs: Vec<Vec<f64>> = test_ds
            .pixels
            .iter()
            .map(|p| model.predict_proba(&p.sequence))
            .collect::<Result<_, _>>()?;
        let labels: Vec<usize> = test_ds.pixels.iter().map(|p| p.label).collect();
        dataset_auc(&probs, &labels, train_ds.class_count(), positive_class)
    };
    let full_auc = eval_model(train, test)?;
    let restricted_auc = eval_model(&slice_dataset(train)?, &slice_dataset(test)?)?;
    Ok(RestrictedProbe {
        full_auc,
        restricted_auc,
        interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmath;
    use alloc::vec;

    #[test]
    fn perfect_separation() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        let flipped = [false, false, true, true];
        assert_eq!(auc(&scores, &flipped).unwrap(), 0.0);
    }

    #[test]
    fn all_tied_scores_give_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, true, false];
        assert!(fmath::abs(auc(&scores, &labels).unwrap() - 0.5) < 1e-15);
    }

    #[test]
    fn single_class_rejected() {
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auc(&[0.1, 0.2], &[false, false]).is_err());
        assert!(auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn known_small_case() {
        // pos scores {0.8, 0.4}, neg {0.6, 0.2}: 3 of 4 pairs correctly
        // ordered, one inverted -> 0.75
        let scores = [0.8, 0.4, 0.6, 0.2];
        let labels = [true, true, false, false];
        assert!(fmath::abs(auc(&scores, &labels).unwrap() - 0.75) < 1e-15);
    }

    #[test]
    fn f1_perfect_and_zero() {
        let labels = [0, 0, 1, 1];
        assert_eq!(f1(&[0, 0, 1, 1], &labels, 0).unwrap(), 1.0);
        // never predicts the positive class -> tp = 0 -> f1 = 0
        assert_eq!(f1(&[1, 1, 1, 1], &labels, 0).unwrap(), 0.0);
    }

    #[test]
    fn f1_known_value() {
        // tp=2 fp=1 fn=1 -> p=2/3 r=2/3 -> f1=2/3
        let preds = [0, 0, 0, 1, 1];
        let labels = [0, 0, 1, 0, 1];
        assert!(fmath::abs(f1(&preds, &labels, 0).unwrap() - 2.0 / 3.0) < 1e-15);
    }

    #[test]
    fn f1_requires_positive_support() {
        assert!(f1(&[0, 1], &[1, 1], 0).is_err());
    }

    #[test]
    fn macro_auc_averages_over_classes() {
        let probs = vec![
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.7, 0.2],
            vec![0.2, 0.2, 0.6],
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.6, 0.2],
            vec![0.1, 0.2, 0.7],
        ];
        let labels = [0, 1, 2, 0, 1, 2];
        let m = macro_auc(&probs, &labels, 3).unwrap();
        assert_eq!(m, 1.0);
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse("gbm"), None);
        assert_eq!(Method::parse(""), None);
    }

    use crate::data::{window_sequence, SpectralSequence};
    use crate::rng::SplitMix64;

    fn toy_dataset(n_per_class: usize, seed: u64, offset: f64) -> Dataset {
        let mut rng = SplitMix64::new(seed);
        let mut pixels = Vec::new();
        for label in 0..2usize {
            for k in 0..n_per_class {
                let mut vals = vec![0.1; 12];
                let center = if label == 0 { 3 } else { 8 };
                for (i, v) in vals.iter_mut().enumerate() {
                    let d = i as f64 - center as f64;
                    *v += 0.7 * fmath::exp(-d * d / 2.0) + 0.02 * rng.gaussian() + offset;
                    *v = v.clamp(0.0, 1.0);
                }
                let raw = SpectralSequence::new(12, 1, 8, vals).unwrap();
                pixels.push(DatasetPixel {
                    pixel_id: format!("o{offset}c{label}k{k}"),
                    label,
                    sequence: window_sequence(&raw, 2, 1).unwrap(),
                });
            }
        }
        Dataset::from_pixels(
            pixels,
            vec![String::from("early"), String::from("late")],
            String::from("toy"),
        )
        .unwrap()
    }

    fn quick_eval_config() -> EvalConfig {
        EvalConfig {
            lstm: TrainConfig {
                hidden_dim: 8,
                epochs: 6,
                batch_size: 8,
                learning_rate: 0.02,
                ..TrainConfig::default()
            },
            ann: AnnConfig {
                hidden_dim: 16,
                epochs: 10,
                batch_size: 8,
                learning_rate: 0.01,
            },
            da: DaConfig {
                epochs: 2,
                batch_size: 8,
                mapper_res_hidden: 4,
                disc_hidden: 8,
                ..DaConfig::default()
            },
            positive_class: 0,
        }
    }

    #[test]
    fn harness_covers_every_method_scenario_pair() {
        let train = toy_dataset(8, 3, 0.0);
        let scenarios = vec![
            (String::from("same"), toy_dataset(8, 9, 0.0)),
            (String::from("shifted"), toy_dataset(8, 10, 0.12)),
        ];
        let cfg = quick_eval_config();
        let report = compare_methods(&train, &scenarios, &Method::ALL, &cfg, 21).unwrap();
        assert_eq!(report.rows.len(), Method::ALL.len() * scenarios.len());
        for row in &report.rows {
            assert!(
                (0.0..=1.0).contains(&row.auc) && (0.0..=1.0).contains(&row.f1),
                "{} on {}: auc {} f1 {}",
                row.method.name(),
                row.scenario,
                row.auc,
                row.f1
            );
            assert_eq!(row.train_digest, train.digest());
            assert_eq!(row.seed, 21);
        }
        // every scenario digest matches the dataset it names
        for (name, ds) in &scenarios {
            for row in report.rows.iter().filter(|r| &r.scenario == name) {
                assert_eq!(&row.test_digest, &ds.digest());
            }
        }
        let again = compare_methods(&train, &scenarios, &Method::ALL, &cfg, 21).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn harness_rejects_bad_inputs() {
        let train = toy_dataset(4, 3, 0.0);
        let cfg = quick_eval_config();
        let scenarios = vec![(String::from("s"), toy_dataset(4, 5, 0.0))];
        assert!(compare_methods(&train, &[], &Method::ALL, &cfg, 1).is_err());
        assert!(compare_methods(&train, &scenarios, &[], &cfg, 1).is_err());
        let mut bad_class = cfg.clone();
        bad_class.positive_class = 2;
        assert!(compare_methods(&train, &scenarios, &Method::ALL, &bad_class, 1).is_err());
        // layout mismatch: different window length
        let other = {
            let mut rng = SplitMix64::new(2);
            let mut pixels = Vec::new();
            for label in 0..2usize {
                for k in 0..4 {
                    let vals: Vec<f64> = (0..12).map(|_| 0.3 + 0.05 * rng.gaussian()).collect();
                    let raw = SpectralSequence::new(12, 1, 8, vals).unwrap();
                    pixels.push(DatasetPixel {
                        pixel_id: format!("x{label}k{k}"),
                        label,
                        sequence: window_sequence(&raw, 3, 1).unwrap(),
                    });
                }
            }
            Dataset::from_pixels(
                pixels,
                vec![String::from("early"), String::from("late")],
                String::from("toy"),
            )
            .unwrap()
        };
        let mismatched = vec![(String::from("bad"), other)];
        assert!(compare_methods(&train, &mismatched, &Method::ALL, &cfg, 1).is_err());
    }

    #[test]
    fn restricted_probe_keeps_informative_interval_strong() {
        let train = toy_dataset(10, 3, 0.0);
        let test = toy_dataset(10, 9, 0.0);
        let ann = quick_eval_config().ann;
        // steps 5..=10 cover the late-class bump, enough to separate classes
        let probe = restricted_period_probe(&train, &test, (5, 10), &ann, 0, 17).unwrap();
        assert_eq!(probe.interval, (5, 10));
        assert!(probe.full_auc > 0.9, "full {}", probe.full_auc);
        assert!(probe.restricted_auc > 0.9, "restricted {}", probe.restricted_auc);
        // out-of-range interval is rejected
        assert!(restricted_period_probe(&train, &test, (5, 11), &ann, 0, 17).is_err());
        assert!(restricted_period_probe(&train, &test, (7, 5), &ann, 0, 17).is_err());
    }
}
