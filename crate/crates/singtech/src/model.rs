//! The four-block oblong-kernel CNN with configurable deformable-convolution
//! placement.
//!
//! Block list (kernel extents are frequency x time):
//! Conv(4x1)/MP(4x4)/32, Conv(16x1)/MP(4x4)/64, Conv(1x4)/MP(3x3)/128,
//! Conv(1x16)/MP(2x2)/128, each block being conv, batchnorm, ReLU, max-pool,
//! dropout 0.3. The head is global average pooling, FC to the 30-dim feature
//! space, ReLU, and the softmax FC. The feature extractor is everything
//! through the first FC; the classifier is the final FC alone.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::NormStats;
use crate::deform::{deform_apply, deformable_conv2d_backward, offset_branch_forward, DeformConvLayer, OffsetField};
use crate::error::{Error, Result};
use crate::ops::conv::{conv2d, conv2d_backward, ConvSpec};
use crate::ops::{
    batchnorm2d, batchnorm2d_backward, dropout, dropout_backward, global_avg_pool,
    global_avg_pool_backward, linear, linear_backward, maxpool2d, maxpool2d_backward, relu,
    relu_backward, BatchNormCache, BitMask, DropoutMask, PoolArgmax,
};
use crate::scalar::Scalar;
use crate::tensor::{GradPair, Tensor};

pub const NUM_CLASSES: usize = 10;
pub const FEATURE_DIM: usize = 30;
pub const INPUT_CHANNELS: usize = 3;
pub const DROPOUT_RATE: f64 = 0.3;

/// Which convolution blocks get a deformable layer (Table-1 check marks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DCPlacement {
    None,
    All,
    Early,
    Late,
    Last,
}

impl DCPlacement {
    pub const ALL_PLACEMENTS: [DCPlacement; 5] =
        [DCPlacement::None, DCPlacement::All, DCPlacement::Early, DCPlacement::Late, DCPlacement::Last];

    /// Zero-based block indices that use deformable convolution.
    pub fn deformable_blocks(&self) -> &'static [usize] {
        match self {
            DCPlacement::None => &[],
            DCPlacement::All => &[0, 1, 2, 3],
            DCPlacement::Early => &[0, 1],
            DCPlacement::Late => &[2, 3],
            DCPlacement::Last => &[3],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DCPlacement::None => "none",
            DCPlacement::All => "all",
            DCPlacement::Early => "early",
            DCPlacement::Late => "late",
            DCPlacement::Last => "last",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(DCPlacement::None),
            "all" => Ok(DCPlacement::All),
            "early" => Ok(DCPlacement::Early),
            "late" => Ok(DCPlacement::Late),
            "last" => Ok(DCPlacement::Last),
            other => Err(Error::InvalidArg(format!("unknown placement '{other}'"))),
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            DCPlacement::None => 0,
            DCPlacement::All => 1,
            DCPlacement::Early => 2,
            DCPlacement::Late => 3,
            DCPlacement::Last => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => DCPlacement::None,
            1 => DCPlacement::All,
            2 => DCPlacement::Early,
            3 => DCPlacement::Late,
            4 => DCPlacement::Last,
            other => return Err(Error::Checkpoint(format!("bad placement tag {other}"))),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub kernel: (usize, usize),
    pub pool: (usize, usize),
    pub channels: usize,
}

const TABLE1_BLOCKS: [BlockSpec; 4] = [
    BlockSpec { kernel: (4, 1), pool: (4, 4), channels: 32 },
    BlockSpec { kernel: (16, 1), pool: (4, 4), channels: 64 },
    BlockSpec { kernel: (1, 4), pool: (3, 3), channels: 128 },
    BlockSpec { kernel: (1, 16), pool: (2, 2), channels: 128 },
];

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub placement: DCPlacement,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub in_channels: usize,
    /// Divides every block's channel count; 1 is the published scale. The
    /// reduced desk-scale experiments use 4.
    pub channel_div: usize,
}

impl ModelConfig {
    pub fn paper(placement: DCPlacement) -> Self {
        ModelConfig {
            placement,
            num_classes: NUM_CLASSES,
            feature_dim: FEATURE_DIM,
            in_channels: INPUT_CHANNELS,
            channel_div: 1,
        }
    }

    pub fn reduced(placement: DCPlacement, channel_div: usize) -> Self {
        ModelConfig { channel_div, ..ModelConfig::paper(placement) }
    }

    pub fn blocks(&self) -> Vec<BlockSpec> {
        TABLE1_BLOCKS
            .iter()
            .map(|b| BlockSpec { channels: (b.channels / self.channel_div).max(1), ..*b })
            .collect()
    }
}

fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, bound, rng)
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer<T> {
    pub spec: ConvSpec,
    pub weights: GradPair<T>,
    pub bias: GradPair<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn new(spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
        let weights = GradPair::new(kaiming_uniform(&spec.weight_shape(), fan_in, rng));
        let bias = GradPair::new(Tensor::zeros(&[spec.out_channels]));
        Conv2dLayer { spec, weights, bias, cache: None }
    }

    fn fwd(&mut self, x: Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let out = conv2d(&x, &self.weights.value, &self.bias.value, &self.spec)?;
        self.cache = training.then_some(x);
        Ok(out)
    }

    fn fwd_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weights.value, &self.bias.value, &self.spec)
    }

    fn bwd(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| Error::InvalidArg("conv backward without forward".into()))?;
        let (dx, dw, db) = conv2d_backward(&x, &self.weights.value, &self.spec, grad_out)?;
        self.weights.grad.add_assign(&dw);
        self.bias.grad.add_assign(&db);
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct DeformLayer<T> {
    pub inner: DeformConvLayer<T>,
    cache: Option<(Tensor<T>, OffsetField<T>)>,
}

impl<T: Scalar> DeformLayer<T> {
    pub fn new(spec: ConvSpec, rng: &mut impl Rng) -> Self {
        DeformLayer { inner: DeformConvLayer::new(spec, rng), cache: None }
    }

    fn fwd(&mut self, x: Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let field = offset_branch_forward(&self.inner, &x)?;
        let out = deform_apply(
            &x,
            &self.inner.weights.value,
            &self.inner.bias.value,
            &self.inner.spec,
            &field.offsets,
            &field.masks,
        )?;
        self.cache = training.then_some((x, field));
        Ok(out)
    }

    fn fwd_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let field = offset_branch_forward(&self.inner, x)?;
        deform_apply(
            x,
            &self.inner.weights.value,
            &self.inner.bias.value,
            &self.inner.spec,
            &field.offsets,
            &field.masks,
        )
    }

    fn bwd(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, field) =
            self.cache.take().ok_or_else(|| Error::InvalidArg("deform backward without forward".into()))?;
        deformable_conv2d_backward(&mut self.inner, &x, &field, grad_out)
    }
}

#[derive(Debug, Clone)]
pub enum ConvKind<T> {
    Standard(Conv2dLayer<T>),
    Deformable(DeformLayer<T>),
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer<T> {
    pub gamma: GradPair<T>,
    pub beta: GradPair<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    cache: Option<(Tensor<T>, BatchNormCache<T>)>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            gamma: GradPair::new(Tensor::filled(&[channels], T::one())),
            beta: GradPair::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            cache: None,
        }
    }

    fn fwd(&mut self, x: Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let (out, cache) = batchnorm2d(
            &x,
            &self.gamma.value,
            &self.beta.value,
            &mut self.running_mean,
            &mut self.running_var,
            training,
        )?;
        self.cache = cache.map(|c| (x, c));
        Ok(out)
    }

    fn fwd_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rm = self.running_mean.clone();
        let mut rv = self.running_var.clone();
        let (out, _) = batchnorm2d(x, &self.gamma.value, &self.beta.value, &mut rm, &mut rv, false)?;
        Ok(out)
    }

    fn bwd(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, cache) =
            self.cache.take().ok_or_else(|| Error::InvalidArg("batchnorm backward without forward".into()))?;
        let (dx, dg, db) = batchnorm2d_backward(&x, &self.gamma.value, &cache, grad_out)?;
        self.gamma.grad.add_assign(&dg);
        self.beta.grad.add_assign(&db);
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub conv: ConvKind<T>,
    pub bn: BatchNormLayer<T>,
    relu_mask: Option<BitMask>,
    pool: (usize, usize),
    pool_cache: Option<PoolArgmax>,
    dropout_cache: Option<DropoutMask>,
}

impl<T: Scalar> ConvBlock<T> {
    fn fwd(&mut self, x: Tensor<T>, training: bool, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
        let x = match &mut self.conv {
            ConvKind::Standard(c) => c.fwd(x, training)?,
            ConvKind::Deformable(d) => d.fwd(x, training)?,
        };
        let x = self.bn.fwd(x, training)?;
        let (x, mask) = relu(&x);
        self.relu_mask = training.then_some(mask);
        let (x, argmax) = maxpool2d(&x, self.pool.0, self.pool.1)?;
        self.pool_cache = training.then_some(argmax);
        let (x, dmask) = dropout(x, DROPOUT_RATE, training, &mut crate::model::RngAdapter(rng))?;
        self.dropout_cache = dmask;
        Ok(x)
    }

    fn fwd_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let x = match &self.conv {
            ConvKind::Standard(c) => c.fwd_eval(x)?,
            ConvKind::Deformable(d) => d.fwd_eval(x)?,
        };
        let x = self.bn.fwd_eval(&x)?;
        let (x, _) = relu(&x);
        let (x, _) = maxpool2d(&x, self.pool.0, self.pool.1)?;
        Ok(x)
    }

    fn bwd(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = match self.dropout_cache.take() {
            Some(mask) => dropout_backward(&mask, grad_out),
            None => grad_out.clone(),
        };
        let argmax = self
            .pool_cache
            .take()
            .ok_or_else(|| Error::InvalidArg("pool backward without forward".into()))?;
        let g = maxpool2d_backward(&argmax, &g)?;
        let mask = self
            .relu_mask
            .take()
            .ok_or_else(|| Error::InvalidArg("relu backward without forward".into()))?;
        let g = relu_backward(&mask, &g);
        let g = self.bn.bwd(&g)?;
        match &mut self.conv {
            ConvKind::Standard(c) => c.bwd(&g),
            ConvKind::Deformable(d) => d.bwd(&g),
        }
    }
}

/// Adapts `&mut dyn RngCore` to the `Rng` extension methods.
pub(crate) struct RngAdapter<'a>(pub &'a mut dyn RngCore);

impl RngCore for RngAdapter<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer<T> {
    pub weights: GradPair<T>,
    pub bias: GradPair<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        LinearLayer {
            weights: GradPair::new(kaiming_uniform(&[dout, din], din, rng)),
            bias: GradPair::new(Tensor::zeros(&[dout])),
            cache: None,
        }
    }

    fn fwd(&mut self, x: Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let out = linear(&x, &self.weights.value, &self.bias.value)?;
        self.cache = training.then_some(x);
        Ok(out)
    }

    fn fwd_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear(x, &self.weights.value, &self.bias.value)
    }

    fn bwd(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| Error::InvalidArg("linear backward without forward".into()))?;
        let (dx, dw, db) = linear_backward(&x, &self.weights.value, grad_out)?;
        self.weights.grad.add_assign(&dw);
        self.bias.grad.add_assign(&db);
        Ok(dx)
    }
}

/// Scope for optimizer parameter visitation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScope {
    All,
    /// Only the final FC: the classifier re-trained by the cRT phase.
    ClassifierOnly,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub seed: u64,
    pub blocks: Vec<ConvBlock<T>>,
    pub fc1: LinearLayer<T>,
    pub fc2: LinearLayer<T>,
    head_relu_mask: Option<BitMask>,
    gap_in_shape: Option<Vec<usize>>,
    frozen_extractor: bool,
    /// Spectrogram standardization statistics, stored with the model.
    pub norm_stats: Option<NormStats>,
}

/// Deterministic build: identical seeds give bitwise-identical parameters,
/// and the main-weight draws are placement-independent (the offset branch is
/// zero-initialized and consumes no randomness).
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Model<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deformable = config.placement.deformable_blocks();
    let mut in_ch = config.in_channels;
    let mut blocks = Vec::new();
    for (bi, spec) in config.blocks().iter().enumerate() {
        let conv_spec = ConvSpec::new(in_ch, spec.channels, spec.kernel.0, spec.kernel.1)
            .expect("table-1 block spec is valid");
        let conv = if deformable.contains(&bi) {
            ConvKind::Deformable(DeformLayer::new(conv_spec, &mut rng))
        } else {
            ConvKind::Standard(Conv2dLayer::new(conv_spec, &mut rng))
        };
        blocks.push(ConvBlock {
            conv,
            bn: BatchNormLayer::new(spec.channels),
            relu_mask: None,
            pool: spec.pool,
            pool_cache: None,
            dropout_cache: None,
        });
        in_ch = spec.channels;
    }
    let fc1 = LinearLayer::new(in_ch, config.feature_dim, &mut rng);
    let fc2 = LinearLayer::new(config.feature_dim, config.num_classes, &mut rng);
    Model {
        config: config.clone(),
        seed,
        blocks,
        fc1,
        fc2,
        head_relu_mask: None,
        gap_in_shape: None,
        frozen_extractor: false,
        norm_stats: None,
    }
}

impl<T: Scalar> Model<T> {
    /// Logits for a batch. In training mode intermediate activations are
    /// cached for [`Model::backward`]; with a frozen extractor the extractor
    /// runs in eval mode and only the final FC caches.
    pub fn forward(&mut self, batch: &Tensor<T>, training: bool, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
        if !training {
            return self.forward_eval(batch);
        }
        if self.frozen_extractor {
            let feats = self.extractor_eval(batch)?;
            return self.fc2.fwd(feats, true);
        }
        let mut x = batch.clone();
        for block in &mut self.blocks {
            x = block.fwd(x, true, rng)?;
        }
        self.gap_in_shape = Some(x.shape().to_vec());
        let x = global_avg_pool(&x)?;
        let x = self.fc1.fwd(x, true)?;
        let (x, mask) = relu(&x);
        self.head_relu_mask = Some(mask);
        self.fc2.fwd(x, true)
    }

    /// Deterministic eval-mode logits on a shared, read-only model.
    pub fn forward_eval(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let feats = self.extractor_eval(batch)?;
        self.fc2.fwd_eval(&feats)
    }

    /// Eval-mode features feeding the classifier: `[N, feature_dim]`.
    pub fn features_eval(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.extractor_eval(batch)
    }

    /// Classifier-only training forward from cached features.
    pub fn classifier_forward_train(&mut self, feats: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.fwd(feats.clone(), true)
    }

    /// Eval-mode feature extractor: everything through FC1 and its ReLU.
    fn extractor_eval(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = batch.clone();
        for block in &self.blocks {
            x = block.fwd_eval(&x)?;
        }
        let x = global_avg_pool(&x)?;
        let x = self.fc1.fwd_eval(&x)?;
        let (x, _) = relu(&x);
        Ok(x)
    }

    /// Accumulates parameter gradients for the cached forward pass. With a
    /// frozen extractor only the final FC receives gradients; nothing is
    /// propagated further back.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        let g = self.fc2.bwd(grad_logits)?;
        if self.frozen_extractor {
            return Ok(());
        }
        let mask = self
            .head_relu_mask
            .take()
            .ok_or_else(|| Error::InvalidArg("backward without forward".into()))?;
        let g = relu_backward(&mask, &g);
        let g = self.fc1.bwd(&g)?;
        let shape = self
            .gap_in_shape
            .take()
            .ok_or_else(|| Error::InvalidArg("backward without forward".into()))?;
        let mut g = global_avg_pool_backward(&shape, &g)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.bwd(&g)?;
        }
        Ok(())
    }

    pub fn params_mut(&mut self, scope: ParamScope) -> Vec<&mut GradPair<T>> {
        let mut out: Vec<&mut GradPair<T>> = Vec::new();
        if scope == ParamScope::All {
            for block in self.blocks.iter_mut() {
                match &mut block.conv {
                    ConvKind::Standard(c) => {
                        out.push(&mut c.weights);
                        out.push(&mut c.bias);
                    }
                    ConvKind::Deformable(d) => {
                        out.push(&mut d.inner.weights);
                        out.push(&mut d.inner.bias);
                        out.push(&mut d.inner.offset_weights);
                        out.push(&mut d.inner.offset_bias);
                    }
                }
                out.push(&mut block.bn.gamma);
                out.push(&mut block.bn.beta);
            }
            out.push(&mut self.fc1.weights);
            out.push(&mut self.fc1.bias);
        }
        out.push(&mut self.fc2.weights);
        out.push(&mut self.fc2.bias);
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut(ParamScope::All) {
            p.zero_grad();
        }
    }

    pub fn set_frozen_extractor(&mut self, frozen: bool) {
        self.frozen_extractor = frozen;
    }

    pub fn frozen_extractor(&self) -> bool {
        self.frozen_extractor
    }

    /// All tensors that define the model state, for checkpointing: trainable
    /// parameters plus batchnorm running statistics.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            match &block.conv {
                ConvKind::Standard(c) => {
                    out.push((format!("block{bi}.conv.weight"), &c.weights.value));
                    out.push((format!("block{bi}.conv.bias"), &c.bias.value));
                }
                ConvKind::Deformable(d) => {
                    out.push((format!("block{bi}.conv.weight"), &d.inner.weights.value));
                    out.push((format!("block{bi}.conv.bias"), &d.inner.bias.value));
                    out.push((format!("block{bi}.offset.weight"), &d.inner.offset_weights.value));
                    out.push((format!("block{bi}.offset.bias"), &d.inner.offset_bias.value));
                }
            }
            out.push((format!("block{bi}.bn.gamma"), &block.bn.gamma.value));
            out.push((format!("block{bi}.bn.beta"), &block.bn.beta.value));
            out.push((format!("block{bi}.bn.running_mean"), &block.bn.running_mean));
            out.push((format!("block{bi}.bn.running_var"), &block.bn.running_var));
        }
        out.push(("fc1.weight".into(), &self.fc1.weights.value));
        out.push(("fc1.bias".into(), &self.fc1.bias.value));
        out.push(("fc2.weight".into(), &self.fc2.weights.value));
        out.push(("fc2.bias".into(), &self.fc2.bias.value));
        out
    }

    pub(crate) fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            match &mut block.conv {
                ConvKind::Standard(c) => {
                    out.push((format!("block{bi}.conv.weight"), &mut c.weights.value));
                    out.push((format!("block{bi}.conv.bias"), &mut c.bias.value));
                }
                ConvKind::Deformable(d) => {
                    out.push((format!("block{bi}.conv.weight"), &mut d.inner.weights.value));
                    out.push((format!("block{bi}.conv.bias"), &mut d.inner.bias.value));
                    out.push((format!("block{bi}.offset.weight"), &mut d.inner.offset_weights.value));
                    out.push((format!("block{bi}.offset.bias"), &mut d.inner.offset_bias.value));
                }
            }
            out.push((format!("block{bi}.bn.gamma"), &mut block.bn.gamma.value));
            out.push((format!("block{bi}.bn.beta"), &mut block.bn.beta.value));
            out.push((format!("block{bi}.bn.running_mean"), &mut block.bn.running_mean));
            out.push((format!("block{bi}.bn.running_var"), &mut block.bn.running_var));
        }
        out.push(("fc1.weight".into(), &mut self.fc1.weights.value));
        out.push(("fc1.bias".into(), &mut self.fc1.bias.value));
        out.push(("fc2.weight".into(), &mut self.fc2.weights.value));
        out.push(("fc2.bias".into(), &mut self.fc2.bias.value));
        out
    }
}

/// Per-layer and total trainable-parameter counts. Batchnorm running
/// statistics are not trained and are excluded.
#[derive(Debug, Clone)]
pub struct ParamCount {
    pub total: usize,
    pub layers: Vec<(String, usize)>,
    pub classifier: usize,
}

pub fn count_params<T: Scalar>(model: &Model<T>) -> ParamCount {
    let mut layers: Vec<(String, usize)> = Vec::new();
    for (bi, block) in model.blocks.iter().enumerate() {
        match &block.conv {
            ConvKind::Standard(c) => {
                layers.push((format!("block{bi}.conv"), c.weights.len() + c.bias.len()));
            }
            ConvKind::Deformable(d) => {
                layers.push((format!("block{bi}.conv"), d.inner.weights.len() + d.inner.bias.len()));
                layers.push((
                    format!("block{bi}.offset"),
                    d.inner.offset_weights.len() + d.inner.offset_bias.len(),
                ));
            }
        }
        layers.push((format!("block{bi}.bn"), block.bn.gamma.len() + block.bn.beta.len()));
    }
    layers.push(("fc1".into(), model.fc1.weights.len() + model.fc1.bias.len()));
    let classifier = model.fc2.weights.len() + model.fc2.bias.len();
    layers.push(("fc2".into(), classifier));
    ParamCount { total: layers.iter().map(|(_, n)| n).sum(), layers, classifier }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_model(placement: DCPlacement, seed: u64) -> Model<f32> {
        build_model(&ModelConfig::paper(placement), seed)
    }

    #[test]
    fn placement_maps_follow_table_1() {
        assert_eq!(DCPlacement::None.deformable_blocks(), &[] as &[usize]);
        assert_eq!(DCPlacement::All.deformable_blocks(), &[0, 1, 2, 3]);
        assert_eq!(DCPlacement::Early.deformable_blocks(), &[0, 1]);
        assert_eq!(DCPlacement::Late.deformable_blocks(), &[2, 3]);
        assert_eq!(DCPlacement::Last.deformable_blocks(), &[3]);
    }

    #[test]
    fn same_seed_builds_are_bitwise_identical() {
        let a = paper_model(DCPlacement::None, 7);
        let b = paper_model(DCPlacement::None, 7);
        for ((na, ta), (nb, tb)) in a.named_tensors().iter().zip(b.named_tensors().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{na} differs");
        }
    }

    #[test]
    fn late_placement_makes_blocks_3_and_4_deformable() {
        let m = paper_model(DCPlacement::Late, 0);
        assert!(matches!(m.blocks[0].conv, ConvKind::Standard(_)));
        assert!(matches!(m.blocks[1].conv, ConvKind::Standard(_)));
        assert!(matches!(m.blocks[2].conv, ConvKind::Deformable(_)));
        assert!(matches!(m.blocks[3].conv, ConvKind::Deformable(_)));
    }

    #[test]
    fn paper_scale_parameter_counts_match_the_published_deltas() {
        let base = count_params(&paper_model(DCPlacement::None, 0)).total;
        // Reconstructed w/o-DC total; the paper reports 337.5k (within 2%).
        assert_eq!(base, 333_300);
        assert!((base as f64 - 337_500.0).abs() / 337_500.0 < 0.02);

        let expect = [
            (DCPlacement::Early, 24_780, 24_700.0),
            (DCPlacement::Late, 101_436, 101_200.0),
            (DCPlacement::Last, 98_352, 98_200.0),
            (DCPlacement::All, 126_216, 125_800.0),
        ];
        for (placement, delta_exact, delta_paper) in expect {
            let total = count_params(&paper_model(placement, 0)).total;
            let delta = total - base;
            assert_eq!(delta, delta_exact, "{placement:?}");
            assert!(
                (delta as f64 - delta_paper).abs() / delta_paper < 0.01,
                "{placement:?}: delta {delta} vs paper {delta_paper}"
            );
        }
    }

    #[test]
    fn delta_depends_only_on_placement_not_seed() {
        for placement in [DCPlacement::Early, DCPlacement::Last] {
            let d1 = count_params(&paper_model(placement, 1)).total
                - count_params(&paper_model(DCPlacement::None, 1)).total;
            let d2 = count_params(&paper_model(placement, 99)).total
                - count_params(&paper_model(DCPlacement::None, 99)).total;
            assert_eq!(d1, d2);
        }
    }

    #[test]
    fn classifier_is_exactly_310_scalars() {
        let mut m = paper_model(DCPlacement::Late, 0);
        assert_eq!(count_params(&m).classifier, 310);
        let trainable: usize = m.params_mut(ParamScope::ClassifierOnly).iter().map(|p| p.len()).sum();
        assert_eq!(trainable, 310);
        // The extractor/classifier partition covers everything exactly once.
        let all: usize = m.params_mut(ParamScope::All).iter().map(|p| p.len()).sum();
        assert_eq!(all, count_params(&m).total);
    }

    #[test]
    fn spatial_trace_follows_same_pad_conv_and_floor_pooling() {
        // 1025x259 -> 256x64 -> 64x16 -> 21x5 -> 10x2
        let cfg = ModelConfig::reduced(DCPlacement::None, 8);
        let mut m = build_model::<f32>(&cfg, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::rand_uniform(&[1, 3, 1025, 259], 1.0, &mut rng);
        let mut shapes = Vec::new();
        let mut cur = x;
        for block in &mut m.blocks {
            cur = block.fwd(cur, false, &mut rng).unwrap();
            shapes.push((cur.dim(2), cur.dim(3)));
        }
        assert_eq!(shapes, vec![(256, 64), (64, 16), (21, 5), (10, 2)]);
    }

    #[test]
    fn eval_forward_is_deterministic_and_shaped() {
        let cfg = ModelConfig::reduced(DCPlacement::Last, 8);
        let m = build_model::<f32>(&cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::rand_uniform(&[2, 3, 100, 98], 1.0, &mut rng);
        let a = m.forward_eval(&x).unwrap();
        let b = m.forward_eval(&x).unwrap();
        assert_eq!(a.shape(), &[2, 10]);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_offset_models_match_their_standard_twin() {
        // Fresh DC builds share main weights with the None build of the same
        // seed, and the zero offset branch keeps the logits identical.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::rand_uniform(&[2, 3, 100, 98], 1.0, &mut rng);
        let cfg_none = ModelConfig::reduced(DCPlacement::None, 8);
        let base = build_model::<f32>(&cfg_none, 42);
        let base_logits = base.forward_eval(&x).unwrap();
        for placement in [DCPlacement::All, DCPlacement::Early, DCPlacement::Late, DCPlacement::Last] {
            let m = build_model::<f32>(&ModelConfig::reduced(placement, 8), 42);
            let logits = m.forward_eval(&x).unwrap();
            let diff = logits.max_abs_diff(&base_logits);
            assert!(diff < 1e-4, "{placement:?}: {diff}");
        }
    }
}
