//! Class-weighted training and the three strategies: joint training,
//! cRT-WFC (weights in both phases), cRT-WC (weights only while re-training
//! the classifier).

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Model, ParamScope};
use crate::ops::softmax_cross_entropy;
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::{GradPair, Tensor};

/// Per-class loss weights `w_c = n_c^(-alpha)`.
#[derive(Debug, Clone, Serialize)]
pub struct ClassWeights {
    pub counts: Vec<u64>,
    pub alpha: f64,
    pub weights: Vec<f64>,
}

/// No renormalization: the weighted-mean loss reduction already cancels any
/// common scale.
pub fn class_weights(counts: &[u64], alpha: f64) -> Result<ClassWeights> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArg(format!("alpha {alpha} outside [0, 1]")));
    }
    if let Some(c) = counts.iter().position(|c| *c == 0) {
        return Err(Error::Data(format!("class {c} has no training samples")));
    }
    let weights = counts.iter().map(|n| (*n as f64).powf(-alpha)).collect();
    Ok(ClassWeights { counts: counts.to_vec(), alpha, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Joint,
    CrtWfc,
    CrtWc,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::CrtWfc => "crt-wfc",
            Strategy::CrtWc => "crt-wc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "joint" => Ok(Strategy::Joint),
            "crt-wfc" | "crtwfc" => Ok(Strategy::CrtWfc),
            "crt-wc" | "crtwc" => Ok(Strategy::CrtWc),
            other => Err(Error::InvalidArg(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub strategy: Strategy,
    pub total_epochs: usize,
    /// Joint phase length for the cRT strategies; the remainder is the cRT
    /// phase. Joint training has a single phase of `total_epochs`.
    pub phase1_epochs: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TrainPlan {
    /// The published budget: 200 epochs, split 100 + 100 for cRT, Adam at
    /// 1e-4, batch 64.
    pub fn paper(strategy: Strategy, alpha: f64, seed: u64) -> Self {
        TrainPlan {
            strategy,
            total_epochs: 200,
            phase1_epochs: if strategy == Strategy::Joint { 200 } else { 100 },
            alpha,
            batch_size: 64,
            lr: 1e-4,
            seed,
        }
    }

    /// Same shape with a different epoch budget, split in half for cRT.
    pub fn with_epochs(strategy: Strategy, total_epochs: usize, alpha: f64, seed: u64) -> Self {
        let phase1 = if strategy == Strategy::Joint { total_epochs } else { total_epochs / 2 };
        TrainPlan { total_epochs, phase1_epochs: phase1, ..TrainPlan::paper(strategy, alpha, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_epochs == 0 {
            return Err(Error::InvalidArg("batch size and epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArg(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        match self.strategy {
            Strategy::Joint => {
                if self.phase1_epochs != self.total_epochs {
                    return Err(Error::InvalidArg(
                        "joint training is a single phase: phase1_epochs must equal total_epochs".into(),
                    ));
                }
            }
            Strategy::CrtWfc | Strategy::CrtWc => {
                if self.phase1_epochs == 0 || self.phase1_epochs >= self.total_epochs {
                    return Err(Error::InvalidArg(format!(
                        "cRT needs both phases non-empty: phase1 {} of {} total",
                        self.phase1_epochs, self.total_epochs
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Anything the training loop can drive. The crate's CNN implements this;
/// tests use small stub networks.
pub trait Trainable<T: Scalar> {
    fn forward_train(&mut self, batch: &Tensor<T>, rng: &mut dyn RngCore) -> Result<Tensor<T>>;
    fn forward_eval(&self, batch: &Tensor<T>) -> Result<Tensor<T>>;
    fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()>;
    fn params_mut(&mut self, scope: ParamScope) -> Vec<&mut GradPair<T>>;
    fn zero_grads(&mut self);
    fn set_frozen_extractor(&mut self, frozen: bool);
    fn frozen_extractor(&self) -> bool;

    /// Eval-mode features feeding the classifier. When implemented, the cRT
    /// phase computes them once per clip instead of re-running the frozen
    /// extractor every epoch; the arithmetic is identical because the frozen
    /// extractor is deterministic per sample.
    fn features_eval(&self, batch: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        let _ = batch;
        Ok(None)
    }

    /// Classifier training forward from cached features.
    fn forward_train_from_features(&mut self, feats: &Tensor<T>) -> Result<Tensor<T>> {
        let _ = feats;
        Err(Error::InvalidArg("model does not support cached-feature training".into()))
    }
}

impl<T: Scalar> Trainable<T> for Model<T> {
    fn forward_train(&mut self, batch: &Tensor<T>, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
        self.forward(batch, true, rng)
    }
    fn forward_eval(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Model::forward_eval(self, batch)
    }
    fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        Model::backward(self, grad_logits)
    }
    fn params_mut(&mut self, scope: ParamScope) -> Vec<&mut GradPair<T>> {
        Model::params_mut(self, scope)
    }
    fn zero_grads(&mut self) {
        Model::zero_grads(self)
    }
    fn set_frozen_extractor(&mut self, frozen: bool) {
        Model::set_frozen_extractor(self, frozen)
    }
    fn frozen_extractor(&self) -> bool {
        Model::frozen_extractor(self)
    }
    fn features_eval(&self, batch: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        Model::features_eval(self, batch).map(Some)
    }
    fn forward_train_from_features(&mut self, feats: &Tensor<T>) -> Result<Tensor<T>> {
        Model::classifier_forward_train(self, feats)
    }
}

/// Freezes the feature extractor: the optimizer then sees exactly the final
/// FC's scalars and the forward pass runs the extractor in eval mode.
pub fn freeze_feature_extractor<T: Scalar, M: Trainable<T>>(model: &mut M) {
    model.set_frozen_extractor(true);
}

pub fn unfreeze_feature_extractor<T: Scalar, M: Trainable<T>>(model: &mut M) {
    model.set_frozen_extractor(false);
}

/// Training samples: label plus lazily loadable input tensor.
pub trait SampleSource<T: Scalar>: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn num_classes(&self) -> usize;
    fn label(&self, i: usize) -> usize;
    fn input(&self, i: usize) -> Result<Tensor<T>>;
}

/// Everything resident in memory; the desk-scale path.
pub struct MemorySamples<T> {
    pub inputs: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> SampleSource<T> for MemorySamples<T> {
    fn len(&self) -> usize {
        self.inputs.len()
    }
    fn num_classes(&self) -> usize {
        self.num_classes
    }
    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
    fn input(&self, i: usize) -> Result<Tensor<T>> {
        Ok(self.inputs[i].clone())
    }
}

/// Loads the batch inputs (in parallel) and stacks them in index order.
pub fn assemble_batch<T: Scalar, S: SampleSource<T> + ?Sized>(
    data: &S,
    indices: &[usize],
) -> Result<(Tensor<T>, Vec<usize>)> {
    let inputs: Result<Vec<Tensor<T>>> = indices.par_iter().map(|i| data.input(*i)).collect();
    let inputs = inputs?;
    let refs: Vec<&Tensor<T>> = inputs.iter().collect();
    let batch = Tensor::stack(&refs)?;
    let labels = indices.iter().map(|i| data.label(*i)).collect();
    Ok((batch, labels))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub loss: f64,
    pub train_acc: f64,
}

/// Called after every epoch with the model and the record; return `false`
/// to stop early. The default strategies never stop early.
pub type EpochHook<'a, M> = &'a mut dyn FnMut(&M, &EpochRecord) -> bool;

#[allow(clippy::too_many_arguments)]
fn run_phase<T: Scalar, M: Trainable<T>, S: SampleSource<T> + ?Sized>(
    model: &mut M,
    data: &S,
    cached_features: Option<&MemorySamples<T>>,
    plan: &TrainPlan,
    weights: &[f64],
    scope: ParamScope,
    phase_name: &str,
    epoch_range: std::ops::Range<usize>,
    rng: &mut ChaCha8Rng,
    records: &mut Vec<EpochRecord>,
    on_epoch: &mut dyn FnMut(&M, &EpochRecord) -> bool,
) -> Result<bool> {
    let mut adam = Adam::new(AdamConfig::with_lr(plan.lr));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in epoch_range {
        order.shuffle(rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(plan.batch_size) {
            let (batch, labels) = match cached_features {
                Some(feats) => assemble_batch(feats, chunk)?,
                None => assemble_batch(data, chunk)?,
            };
            let logits = match cached_features {
                Some(_) => model.forward_train_from_features(&batch)?,
                None => model.forward_train(&batch, rng)?,
            };
            let sample_weights: Vec<T> =
                labels.iter().map(|l| T::from_f64(weights[*l])).collect();
            let out = softmax_cross_entropy(&logits, &labels, &sample_weights)?;
            if !out.loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {}", epoch + 1)));
            }
            loss_sum += out.loss.to_f64_() * chunk.len() as f64;
            correct += count_correct(&logits, &labels);
            model.backward(&out.grad_logits)?;
            adam.step(&mut model.params_mut(scope))?;
            model.zero_grads();
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            phase: phase_name.to_string(),
            loss: loss_sum / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
        };
        let keep_going = on_epoch(model, &record);
        records.push(record);
        if !keep_going {
            return Ok(false);
        }
    }
    Ok(true)
}

fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let c = logits.dim(1);
    labels
        .iter()
        .enumerate()
        .filter(|(i, l)| {
            let row = &logits.data()[i * c..(i + 1) * c];
            let pred = row
                .iter()
                .enumerate()
                .fold((0usize, T::neg_infinity()), |best, (k, v)| if *v > best.1 { (k, *v) } else { best })
                .0;
            pred == **l
        })
        .count()
}

/// Trains `model` on `data` according to the plan.
///
/// Joint: a single phase, class weights `n_c^(-alpha)` throughout.
/// cRT-WFC: weighted phase 1, then the extractor is frozen, the optimizer is
/// re-created over the 310 classifier scalars, and the weighted cRT phase
/// runs. cRT-WC: phase 1 is unweighted, weights apply only in the cRT phase.
///
/// `counts` are clip-level per-class tallies and must match the labels in
/// `data` exactly. Shuffling, dropout and everything downstream derive from
/// `plan.seed`.
pub fn train<T: Scalar, M: Trainable<T>, S: SampleSource<T> + ?Sized>(
    model: &mut M,
    data: &S,
    plan: &TrainPlan,
    counts: &[u64],
    on_epoch: &mut dyn FnMut(&M, &EpochRecord) -> bool,
) -> Result<Vec<EpochRecord>> {
    plan.validate()?;
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if counts.len() != data.num_classes() {
        return Err(Error::Data(format!(
            "{} class counts for {} classes",
            counts.len(),
            data.num_classes()
        )));
    }
    let mut tally = vec![0u64; counts.len()];
    for i in 0..data.len() {
        tally[data.label(i)] += 1;
    }
    if tally != counts {
        return Err(Error::Data(format!("class counts {counts:?} do not match labels {tally:?}")));
    }

    let weighted = class_weights(counts, plan.alpha)?.weights;
    let uniform = vec![1.0f64; counts.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut records = Vec::with_capacity(plan.total_epochs);

    match plan.strategy {
        Strategy::Joint => {
            run_phase(
                model,
                data,
                None,
                plan,
                &weighted,
                ParamScope::All,
                "joint",
                0..plan.total_epochs,
                &mut rng,
                &mut records,
                on_epoch,
            )?;
        }
        Strategy::CrtWfc | Strategy::CrtWc => {
            let phase1_weights =
                if plan.strategy == Strategy::CrtWfc { &weighted } else { &uniform };
            let keep_going = run_phase(
                model,
                data,
                None,
                plan,
                phase1_weights,
                ParamScope::All,
                "joint",
                0..plan.phase1_epochs,
                &mut rng,
                &mut records,
                on_epoch,
            )?;
            if keep_going {
                freeze_feature_extractor(model);
                let cached = cache_features(model, data, plan.batch_size)?;
                run_phase(
                    model,
                    data,
                    cached.as_ref(),
                    plan,
                    &weighted,
                    ParamScope::ClassifierOnly,
                    "crt",
                    plan.phase1_epochs..plan.total_epochs,
                    &mut rng,
                    &mut records,
                    on_epoch,
                )?;
            }
        }
    }
    Ok(records)
}

/// One eval pass over the dataset through the frozen extractor. The features
/// are per-sample deterministic, so training the classifier on them is
/// arithmetic-identical to re-running the extractor every epoch.
fn cache_features<T: Scalar, M: Trainable<T>, S: SampleSource<T> + ?Sized>(
    model: &M,
    data: &S,
    batch_size: usize,
) -> Result<Option<MemorySamples<T>>> {
    let n = data.len();
    let indices: Vec<usize> = (0..n).collect();
    let mut inputs = Vec::with_capacity(n);
    for chunk in indices.chunks(batch_size) {
        let (batch, _) = assemble_batch(data, chunk)?;
        match model.features_eval(&batch)? {
            Some(feats) => {
                for row in 0..chunk.len() {
                    inputs.push(feats.index_axis0(row));
                }
            }
            None => return Ok(None),
        }
    }
    let labels = (0..n).map(|i| data.label(i)).collect();
    Ok(Some(MemorySamples { inputs, labels, num_classes: data.num_classes() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{linear, linear_backward, relu, relu_backward, BitMask};
    use crate::model::LinearLayer;

    /// Stub network: a 2-D feature extractor (linear + ReLU) and a linear
    /// classifier, mirroring the real model's freeze semantics.
    struct ToyNet {
        feat: LinearLayer<f32>,
        clf: LinearLayer<f32>,
        mask: Option<BitMask>,
        feat_cache: Option<Tensor<f32>>,
        clf_cache: Option<Tensor<f32>>,
        frozen: bool,
    }

    impl ToyNet {
        fn new(seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ToyNet {
                feat: LinearLayer::new(2, 4, &mut rng),
                clf: LinearLayer::new(4, 2, &mut rng),
                mask: None,
                feat_cache: None,
                clf_cache: None,
                frozen: false,
            }
        }

        fn features(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
            let h = linear(batch, &self.feat.weights.value, &self.feat.bias.value)?;
            Ok(relu(&h).0)
        }
    }

    impl Trainable<f32> for ToyNet {
        fn forward_train(&mut self, batch: &Tensor<f32>, _rng: &mut dyn RngCore) -> Result<Tensor<f32>> {
            let h = linear(batch, &self.feat.weights.value, &self.feat.bias.value)?;
            let (a, mask) = relu(&h);
            if !self.frozen {
                self.mask = Some(mask);
                self.feat_cache = Some(batch.clone());
            }
            let out = linear(&a, &self.clf.weights.value, &self.clf.bias.value)?;
            self.clf_cache = Some(a);
            Ok(out)
        }

        fn forward_eval(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
            let a = self.features(batch)?;
            linear(&a, &self.clf.weights.value, &self.clf.bias.value)
        }

        fn backward(&mut self, grad_logits: &Tensor<f32>) -> Result<()> {
            let a = self.clf_cache.take().unwrap();
            let (da, dw, db) = linear_backward(&a, &self.clf.weights.value, grad_logits)?;
            self.clf.weights.grad.add_assign(&dw);
            self.clf.bias.grad.add_assign(&db);
            if self.frozen {
                return Ok(());
            }
            let mask = self.mask.take().unwrap();
            let dh = relu_backward(&mask, &da);
            let x = self.feat_cache.take().unwrap();
            let (_, dwf, dbf) = linear_backward(&x, &self.feat.weights.value, &dh)?;
            self.feat.weights.grad.add_assign(&dwf);
            self.feat.bias.grad.add_assign(&dbf);
            Ok(())
        }

        fn params_mut(&mut self, scope: ParamScope) -> Vec<&mut GradPair<f32>> {
            let mut v: Vec<&mut GradPair<f32>> = Vec::new();
            if scope == ParamScope::All {
                v.push(&mut self.feat.weights);
                v.push(&mut self.feat.bias);
            }
            v.push(&mut self.clf.weights);
            v.push(&mut self.clf.bias);
            v
        }

        fn zero_grads(&mut self) {
            for p in self.params_mut(ParamScope::All) {
                p.zero_grad();
            }
        }

        fn set_frozen_extractor(&mut self, frozen: bool) {
            self.frozen = frozen;
        }
        fn frozen_extractor(&self) -> bool {
            self.frozen
        }
    }

    fn separable_set() -> MemorySamples<f32> {
        // Line y = x separates the classes with margin.
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..40 {
            let a = (k as f32 * 0.13).sin() * 2.0;
            let off = 0.5 + (k % 5) as f32 * 0.2;
            let class = k % 2;
            let (x, y) = if class == 0 { (a, a + off) } else { (a, a - off) };
            let _ = &mut rng;
            inputs.push(Tensor::from_vec(&[2], vec![x, y]).unwrap());
            labels.push(class);
        }
        MemorySamples { inputs, labels, num_classes: 2 }
    }

    #[test]
    fn joint_training_fits_a_separable_toy_set() {
        let data = separable_set();
        let mut model = ToyNet::new(1);
        let mut plan = TrainPlan::with_epochs(Strategy::Joint, 300, 0.0, 7);
        plan.lr = 0.05;
        plan.batch_size = 8;
        let counts = [20u64, 20];
        train(&mut model, &data, &plan, &counts, &mut |_, _| true).unwrap();
        let (batch, labels) = assemble_batch(&data, &(0..data.len()).collect::<Vec<_>>()).unwrap();
        let logits = model.forward_eval(&batch).unwrap();
        let acc = count_correct(&logits, &labels) as f64 / labels.len() as f64;
        assert_eq!(acc, 1.0, "expected 100% train accuracy, got {acc}");
    }

    fn imbalanced_set() -> (MemorySamples<f32>, Vec<u64>) {
        // 9:1 two-class set with overlap; the majority dominates unweighted
        // training.
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..90 {
            let x: f32 = rand::Rng::gen_range(&mut rng, -1.0..1.0);
            let y: f32 = rand::Rng::gen_range(&mut rng, -1.0..1.0) - 0.25;
            inputs.push(Tensor::from_vec(&[2], vec![x, y]).unwrap());
            labels.push(0);
        }
        for _ in 0..10 {
            let x: f32 = rand::Rng::gen_range(&mut rng, -1.0..1.0);
            let y: f32 = rand::Rng::gen_range(&mut rng, -1.0..1.0) + 0.25;
            inputs.push(Tensor::from_vec(&[2], vec![x, y]).unwrap());
            labels.push(1);
        }
        (MemorySamples { inputs, labels, num_classes: 2 }, vec![90, 10])
    }

    fn minority_recall(model: &ToyNet, data: &MemorySamples<f32>) -> f64 {
        let idx: Vec<usize> = (0..data.len()).collect();
        let (batch, labels) = assemble_batch(data, &idx).unwrap();
        let logits = model.forward_eval(&batch).unwrap();
        let mut hit = 0;
        let mut total = 0;
        for (i, l) in labels.iter().enumerate() {
            if *l == 1 {
                total += 1;
                let row = &logits.data()[i * 2..(i + 1) * 2];
                if row[1] > row[0] {
                    hit += 1;
                }
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn crt_wc_raises_minority_recall_over_its_phase_1_model() {
        let (data, counts) = imbalanced_set();
        let mut model = ToyNet::new(3);
        let mut plan = TrainPlan::with_epochs(Strategy::CrtWc, 120, 1.0, 5);
        plan.lr = 0.05;
        plan.batch_size = 16;
        let mut phase1_recall = None;
        train(&mut model, &data, &plan, &counts, &mut |m, rec| {
            if rec.epoch == plan.phase1_epochs && rec.phase == "joint" {
                phase1_recall = Some(minority_recall(m, &data));
            }
            true
        })
        .unwrap();
        let final_recall = minority_recall(&model, &data);
        let phase1 = phase1_recall.expect("phase-1 hook ran");
        assert!(
            final_recall > phase1,
            "minority recall did not improve: phase1 {phase1}, final {final_recall}"
        );
    }

    #[test]
    fn crt_phase_leaves_extractor_parameters_bitwise_unchanged() {
        let (data, counts) = imbalanced_set();
        let mut model = ToyNet::new(4);
        let mut plan = TrainPlan::with_epochs(Strategy::CrtWfc, 20, 0.5, 2);
        plan.lr = 0.05;
        plan.batch_size = 16;
        let mut snapshot: Option<(Vec<u32>, Vec<u32>)> = None;
        train(&mut model, &data, &plan, &counts, &mut |m, rec| {
            if rec.epoch == plan.phase1_epochs {
                snapshot = Some((
                    m.feat.weights.value.data().iter().map(|v| v.to_bits()).collect(),
                    m.feat.bias.value.data().iter().map(|v| v.to_bits()).collect(),
                ));
            }
            if rec.phase == "crt" {
                // Extractor gradients are never even computed in phase 2.
                let wg: f32 = m.feat.weights.grad.data().iter().map(|v| v.abs()).sum();
                assert_eq!(wg, 0.0);
            }
            true
        })
        .unwrap();
        let (w0, b0) = snapshot.unwrap();
        let w1: Vec<u32> = model.feat.weights.value.data().iter().map(|v| v.to_bits()).collect();
        let b1: Vec<u32> = model.feat.bias.value.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(w0, w1);
        assert_eq!(b0, b1);
        assert!(model.frozen_extractor());
    }

    #[test]
    fn alpha_zero_matches_unweighted_loss() {
        let counts = [100u64, 10, 5];
        let w = class_weights(&counts, 0.0).unwrap();
        assert_eq!(w.weights, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn published_weight_examples() {
        let w = class_weights(&[100, 10], 1.0).unwrap();
        assert_eq!(w.weights, vec![0.01, 0.1]);
        let w = class_weights(&[32], 0.2).unwrap();
        assert!((w.weights[0] - 0.5).abs() < 1e-12, "32^-0.2 = {}", w.weights[0]);
        assert!(class_weights(&[5, 0], 0.5).is_err());
    }

    #[test]
    fn weights_are_nonincreasing_in_counts() {
        let w = class_weights(&[2, 4, 8, 64, 512], 0.3).unwrap();
        for pair in w.weights.windows(2) {
            assert!(pair[0] >= pair[1]);
        }
    }

    #[test]
    fn plan_validation_rejects_inconsistencies() {
        let mut plan = TrainPlan::paper(Strategy::Joint, 0.2, 0);
        plan.phase1_epochs = 100;
        assert!(plan.validate().is_err());
        let mut plan = TrainPlan::paper(Strategy::CrtWc, 0.2, 0);
        plan.phase1_epochs = 200;
        assert!(plan.validate().is_err());
        assert!(TrainPlan::paper(Strategy::CrtWc, 0.2, 0).validate().is_ok());
    }

    #[test]
    fn mismatched_counts_are_rejected() {
        let data = separable_set();
        let mut model = ToyNet::new(0);
        let plan = TrainPlan::with_epochs(Strategy::Joint, 1, 0.0, 0);
        let err = train(&mut model, &data, &plan, &[19, 21], &mut |_, _| true).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn one_epoch_visits_every_sample_once() {
        // The epoch loss averages over exactly data.len() samples; verify the
        // permutation covers the set by instrumenting a counting source.
        struct Counting {
            inner: MemorySamples<f32>,
            seen: std::sync::Mutex<Vec<usize>>,
        }
        impl SampleSource<f32> for Counting {
            fn len(&self) -> usize {
                self.inner.len()
            }
            fn num_classes(&self) -> usize {
                self.inner.num_classes
            }
            fn label(&self, i: usize) -> usize {
                self.inner.label(i)
            }
            fn input(&self, i: usize) -> Result<Tensor<f32>> {
                self.seen.lock().unwrap().push(i);
                self.inner.input(i)
            }
        }
        let data = Counting { inner: separable_set(), seen: std::sync::Mutex::new(Vec::new()) };
        let mut model = ToyNet::new(0);
        let mut plan = TrainPlan::with_epochs(Strategy::Joint, 1, 0.0, 9);
        plan.batch_size = 7;
        train(&mut model, &data, &plan, &[20, 20], &mut |_, _| true).unwrap();
        let mut seen = data.seen.into_inner().unwrap();
        seen.sort_unstable();
        assert_eq!(seen, (0..40).collect::<Vec<_>>());
    }
}
