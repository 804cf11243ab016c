//! The four fitness strategies.
//!
//! Every strategy trains the candidate on the labeled training data and
//! measures balanced accuracy on the validation set. They differ in the
//! signal extracted from the unlabeled training data:
//!
//! - supervised: none; f = b_acc. The q = 0 case.
//! - coverage:   f = q * NNCov(unlabeled) + (1-q) * b_acc.
//! - cert:       f = q * mean-certainty(unlabeled) + (1-q) * b_acc.
//! - ret:        pseudo-labels confident unlabeled predictions (p <= 0.4
//!   as class 0, p >= 0.6 as class 1, both inclusive), retrains a freshly
//!   initialized copy on the enlarged set, and scores b_acc on validation.
//!   When nothing qualifies there is no retraining and the first model's
//!   b_acc is returned, which makes ret coincide bitwise with supervised.
//!
//! A candidate whose training produces non-finite values receives fitness 0
//! with the failed flag set instead of an error, so one pathological genome
//! cannot abort a whole evolution run.

use crate::coverage::{coverage, profile_bounds, CoverageConfig};
use crate::data::DatasetSplit;
use crate::descriptor::{NetworkDescriptor, SearchConstraints};
use crate::error::{Error, Result};
use crate::network::{build_network_with, Network};
use crate::rng::derive_seed;
use crate::train::{train, TrainConfig};
use ndarray::{Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub false_neg: usize,
}

impl ConfusionCounts {
    pub fn from_labels(predicted: &[u8], truth: &[u8]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions vs {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut c = ConfusionCounts {
            tp: 0,
            tn: 0,
            fp: 0,
            false_neg: 0,
        };
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.false_neg += 1,
                _ => return Err(Error::Data("labels must be 0 or 1".into())),
            }
        }
        Ok(c)
    }

    /// Positive instances.
    pub fn positives(&self) -> usize {
        self.tp + self.false_neg
    }

    /// Negative instances (named to avoid colliding with the neuron count).
    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }
}

/// Mean of the per-class recalls: (TP/P + TN/Neg) / 2. Requires both
/// classes present in the true labels.
pub fn balanced_accuracy(predicted: &[u8], truth: &[u8]) -> Result<f64> {
    let c = ConfusionCounts::from_labels(predicted, truth)?;
    if c.positives() == 0 || c.negatives() == 0 {
        return Err(Error::Data(
            "balanced accuracy needs both classes in the true labels".into(),
        ));
    }
    Ok(0.5 * (c.tp as f64 / c.positives() as f64 + c.tn as f64 / c.negatives() as f64))
}

/// Probability threshold: p >= 0.5 predicts class 1.
pub fn probs_to_labels(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= 0.5)).collect()
}

/// Mean prediction certainty max(p, 1-p); always in [0.5, 1].
pub fn cert(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Data("certainty of an empty prediction set".into()));
    }
    Ok(probs.iter().map(|&p| p.max(1.0 - p)).sum::<f64>() / probs.len() as f64)
}

/// The semi-supervised blend: q weighs the unlabeled-data signal against
/// balanced accuracy. Always lands between the two inputs.
pub fn blend(q: f64, unlabeled_signal: f64, b_acc: f64) -> f64 {
    q * unlabeled_signal + (1.0 - q) * b_acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Supervised,
    Coverage,
    Cert,
    Ret,
}

/// Which fitness to compute and with what knobs. ret_low/ret_high are the
/// inclusive pseudo-label confidence thresholds.
#[derive(Debug, Clone, Copy)]
pub struct FitnessSpec {
    pub strategy: Strategy,
    pub coverage: CoverageConfig,
    pub ret_low: f64,
    pub ret_high: f64,
}

impl FitnessSpec {
    pub fn supervised() -> Self {
        FitnessSpec {
            strategy: Strategy::Supervised,
            coverage: CoverageConfig::new(crate::coverage::Metric::Nc),
            ret_low: 0.4,
            ret_high: 0.6,
        }
    }

    pub fn coverage(config: CoverageConfig) -> Self {
        FitnessSpec {
            strategy: Strategy::Coverage,
            coverage: config,
            ..FitnessSpec::supervised()
        }
    }

    pub fn cert() -> Self {
        FitnessSpec {
            strategy: Strategy::Cert,
            ..FitnessSpec::supervised()
        }
    }

    pub fn ret() -> Self {
        FitnessSpec {
            strategy: Strategy::Ret,
            ..FitnessSpec::supervised()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ret_low < self.ret_high) {
            return Err(Error::Config("ret_low must be below ret_high".into()));
        }
        self.coverage.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessValue {
    /// The blended fitness in [0, 1]; 0 for failed training.
    pub f: f64,
    /// Balanced accuracy on validation.
    pub b_acc: f64,
    /// The unlabeled-data component (coverage or certainty), when the
    /// strategy has one.
    pub aux: Option<f64>,
    /// Training produced non-finite values; f was forced to 0.
    pub failed: bool,
}

impl FitnessValue {
    fn failure() -> Self {
        FitnessValue {
            f: 0.0,
            b_acc: 0.0,
            aux: None,
            failed: true,
        }
    }
}

/// Builds and trains a candidate. Initialization and shuffle streams derive
/// from the evaluation seed, so one (candidate, seed) pair always produces
/// the same trained network. Ok(None) means training blew up (non-finite),
/// which the caller turns into a zero score instead of an abort.
pub fn train_descriptor(
    descriptor: &NetworkDescriptor,
    features: &Array2<f64>,
    labels: &[u8],
    config: &TrainConfig,
    seed: u64,
) -> Result<Option<Network>> {
    // Fitness assumes a structurally valid genome; bounds come from the
    // genome itself so searches with custom limits still build.
    let bounds = SearchConstraints {
        max_depth: descriptor.depth().max(1),
        max_width: descriptor.hidden_widths.iter().copied().max().unwrap_or(1),
    };
    let network = build_network_with(descriptor, features.ncols(), derive_seed(seed, &[1]), &bounds)?;
    let cfg = TrainConfig {
        seed: derive_seed(seed, &[2]),
        ..*config
    };
    match train(network, features, labels, &cfg) {
        Ok((net, _)) => Ok(Some(net)),
        Err(Error::Training { epoch, batch, reason }) => {
            log::debug!("candidate failed training at epoch {epoch} batch {batch}: {reason}");
            Ok(None)
        }
        Err(other) => Err(other),
    }
}

fn val_b_acc(network: &Network, splits: &DatasetSplit) -> Result<f64> {
    let probs = network.predict_proba(&splits.val.0)?;
    balanced_accuracy(&probs_to_labels(probs.as_slice().unwrap()), &splits.val.1)
}

/// f = b_acc on validation after training on the labeled data only.
pub fn supervised_fitness(
    candidate: &NetworkDescriptor,
    splits: &DatasetSplit,
    config: &TrainConfig,
    seed: u64,
) -> Result<FitnessValue> {
    let Some(net) = train_descriptor(
        candidate,
        &splits.train_labeled.0,
        &splits.train_labeled.1,
        config,
        seed,
    )?
    else {
        return Ok(FitnessValue::failure());
    };
    let b_acc = val_b_acc(&net, splits)?;
    Ok(FitnessValue {
        f: b_acc,
        b_acc,
        aux: None,
        failed: false,
    })
}

fn require_unlabeled(splits: &DatasetSplit) -> Result<()> {
    if splits.train_unlabeled.nrows() == 0 {
        return Err(Error::Data(
            "strategy needs unlabeled training data but q masked nothing".into(),
        ));
    }
    Ok(())
}

/// f = q * coverage(unlabeled) + (1-q) * b_acc(validation). Activation
/// bounds are profiled on the labeled training set, the data the network
/// actually saw.
pub fn coverage_fitness(
    candidate: &NetworkDescriptor,
    splits: &DatasetSplit,
    cov: &CoverageConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<FitnessValue> {
    require_unlabeled(splits)?;
    let Some(net) = train_descriptor(
        candidate,
        &splits.train_labeled.0,
        &splits.train_labeled.1,
        config,
        seed,
    )?
    else {
        return Ok(FitnessValue::failure());
    };
    let profile = profile_bounds(&net, &splits.train_labeled.0)?;
    let nncov = coverage(cov, &net, &profile, &splits.train_unlabeled)?;
    let b_acc = val_b_acc(&net, splits)?;
    Ok(FitnessValue {
        f: blend(splits.q, nncov, b_acc),
        b_acc,
        aux: Some(nncov),
        failed: false,
    })
}

/// f = q * mean-certainty(unlabeled) + (1-q) * b_acc(validation).
pub fn cert_fitness(
    candidate: &NetworkDescriptor,
    splits: &DatasetSplit,
    config: &TrainConfig,
    seed: u64,
) -> Result<FitnessValue> {
    require_unlabeled(splits)?;
    let Some(net) = train_descriptor(
        candidate,
        &splits.train_labeled.0,
        &splits.train_labeled.1,
        config,
        seed,
    )?
    else {
        return Ok(FitnessValue::failure());
    };
    let probs = net.predict_proba(&splits.train_unlabeled)?;
    let certainty = cert(probs.as_slice().unwrap())?;
    let b_acc = val_b_acc(&net, splits)?;
    Ok(FitnessValue {
        f: blend(splits.q, certainty, b_acc),
        b_acc,
        aux: Some(certainty),
        failed: false,
    })
}

/// Adopts a prediction as a pseudo-label when it clears a confidence
/// threshold. Both bounds are inclusive.
pub fn pseudo_label(p: f64, low: f64, high: f64) -> Option<u8> {
    if p <= low {
        Some(0)
    } else if p >= high {
        Some(1)
    } else {
        None
    }
}

/// Pseudo-label retraining. Step 1 trains on the labeled data; confident
/// unlabeled predictions become pseudo-labels; a fresh network (same
/// descriptor, same seeds) retrains on the union; f = the final model's
/// validation b_acc. No qualifying prediction means no retraining.
pub fn ret_fitness(
    candidate: &NetworkDescriptor,
    splits: &DatasetSplit,
    spec: &FitnessSpec,
    config: &TrainConfig,
    seed: u64,
) -> Result<FitnessValue> {
    require_unlabeled(splits)?;
    let Some(first) = train_descriptor(
        candidate,
        &splits.train_labeled.0,
        &splits.train_labeled.1,
        config,
        seed,
    )?
    else {
        return Ok(FitnessValue::failure());
    };
    let probs = first.predict_proba(&splits.train_unlabeled)?;
    let mut keep_rows = Vec::new();
    let mut pseudo = Vec::new();
    for (i, &p) in probs.iter().enumerate() {
        if let Some(label) = pseudo_label(p, spec.ret_low, spec.ret_high) {
            keep_rows.push(i);
            pseudo.push(label);
        }
    }
    let adopted = keep_rows.len();
    if adopted == 0 {
        let b_acc = val_b_acc(&first, splits)?;
        return Ok(FitnessValue {
            f: b_acc,
            b_acc,
            aux: Some(0.0),
            failed: false,
        });
    }
    let pseudo_features = splits.train_unlabeled.select(Axis(0), &keep_rows);
    let features = ndarray::concatenate(
        Axis(0),
        &[splits.train_labeled.0.view(), pseudo_features.view()],
    )
    .expect("feature widths match");
    let mut labels = splits.train_labeled.1.clone();
    labels.extend(pseudo);
    let Some(second) = train_descriptor(candidate, &features, &labels, config, seed)? else {
        return Ok(FitnessValue::failure());
    };
    let b_acc = val_b_acc(&second, splits)?;
    Ok(FitnessValue {
        f: b_acc,
        b_acc,
        aux: Some(adopted as f64 / probs.len() as f64),
        failed: false,
    })
}

/// Strategy dispatch used by the evolution and experiment layers.
pub fn evaluate(
    spec: &FitnessSpec,
    candidate: &NetworkDescriptor,
    splits: &DatasetSplit,
    config: &TrainConfig,
    seed: u64,
) -> Result<FitnessValue> {
    match spec.strategy {
        Strategy::Supervised => supervised_fitness(candidate, splits, config, seed),
        Strategy::Coverage => coverage_fitness(candidate, splits, &spec.coverage, config, seed),
        Strategy::Cert => cert_fitness(candidate, splits, config, seed),
        Strategy::Ret => ret_fitness(candidate, splits, spec, config, seed),
    }
}
