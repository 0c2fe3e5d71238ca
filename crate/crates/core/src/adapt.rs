//! Adversarial domain adaptation for a frozen classifier.
//!
//! A per-step feature mapper pulls target-domain sequences back toward the
//! source distribution the classifier was trained on. A discriminator tries
//! to tell source contexts from mapped-target contexts; the mapper is
//! trained to fool it. An attention-consistency penalty keeps the mapper
//! from relocating the evidence the classifier attends to. The classifier
//! itself (encoder, attention, head) never changes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::classifier::{
    attention_nodes, dense_nodes, encode_nodes, register_dense, AttentionProfile, DenseLayer,
    DenseNodes, ModelBundle, Pooling,
};
use crate::data::{Dataset, WindowedSequence};
use crate::error::CoreError;
use crate::optim::{AdamConfig, OptimizerState};
use crate::rng::{derive_seed, SplitMix64};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

const MAPPER_INIT_SALT: u64 = 11;
const DISC_INIT_SALT: u64 = 12;
const SOURCE_EPOCH_SALT: u64 = 3000;
const TARGET_EPOCH_SALT: u64 = 6000;

/// Source and target datasets that must share layout and class tables.
#[derive(Debug, Clone)]
pub struct DomainPair {
    pub source: Dataset,
    pub target: Dataset,
}

impl DomainPair {
    pub fn new(source: Dataset, target: Dataset) -> Result<Self, CoreError> {
        if source.layout() != target.layout() {
            return Err(CoreError::invalid(format!(
                "layout mismatch: source {:?} vs target {:?}",
                source.layout(),
                target.layout()
            )));
        }
        if source.class_names != target.class_names {
            return Err(CoreError::invalid("class tables differ between domains"));
        }
        Ok(DomainPair { source, target })
    }
}

/// Per-step residual affine mapper `y = A x + b + U tanh(V x + c)`.
///
/// Initialized to the exact identity (`A = I`, `b = 0`, `U = 0`), so an
/// untrained mapper passes sequences through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperParams {
    pub dim: usize,
    pub res_hidden: usize,
    pub affine_w: Tensor,
    pub affine_b: Tensor,
    pub res_v: Tensor,
    pub res_c: Tensor,
    pub res_u: Tensor,
}

impl MapperParams {
    pub fn identity(dim: usize, res_hidden: usize, rng: &mut SplitMix64) -> Result<Self, CoreError> {
        if dim == 0 || res_hidden == 0 {
            return Err(CoreError::invalid("mapper dimensions must be positive"));
        }
        Ok(MapperParams {
            dim,
            res_hidden,
            affine_w: Tensor::identity(dim)?,
            affine_b: Tensor::zeros(alloc::vec![dim])?,
            res_v: Tensor::uniform_init(alloc::vec![res_hidden, dim], dim, rng)?,
            res_c: Tensor::zeros(alloc::vec![res_hidden])?,
            res_u: Tensor::zeros(alloc::vec![dim, res_hidden])?,
        })
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.affine_w.shape() != [self.dim, self.dim]
            || self.affine_b.shape() != [self.dim]
            || self.res_v.shape() != [self.res_hidden, self.dim]
            || self.res_c.shape() != [self.res_hidden]
            || self.res_u.shape() != [self.dim, self.res_hidden]
        {
            return Err(CoreError::shape("mapper parameter shapes"));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor; 5] {
        [
            &self.affine_w,
            &self.affine_b,
            &self.res_v,
            &self.res_c,
            &self.res_u,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.affine_w,
            &mut self.affine_b,
            &mut self.res_v,
            &mut self.res_c,
            &mut self.res_u,
        ]
    }

    /// Map a single feature vector.
    pub fn map_step(&self, x: &[f64]) -> Result<Vec<f64>, CoreError> {
        self.validate()?;
        if x.len() != self.dim {
            return Err(CoreError::shape(format!(
                "input length {} vs mapper dim {}",
                x.len(),
                self.dim
            )));
        }
        let mut tape = Tape::new();
        let nodes = register_mapper(&mut tape, self, false);
        let xid = tape.constant(Tensor::vector(x.to_vec())?);
        let y = mapper_nodes(&mut tape, &nodes, xid)?;
        Ok(tape.value(y).data().to_vec())
    }
}

/// Map every step of a sequence, preserving the layout.
pub fn map_sequence(
    mapper: &MapperParams,
    seq: &WindowedSequence,
) -> Result<WindowedSequence, CoreError> {
    mapper.validate()?;
    if seq.dim() != mapper.dim {
        return Err(CoreError::shape(format!(
            "sequence dim {} vs mapper dim {}",
            seq.dim(),
            mapper.dim
        )));
    }
    let mut tape = Tape::new();
    let nodes = register_mapper(&mut tape, mapper, false);
    let mut values = Vec::with_capacity(seq.steps() * seq.dim());
    for t in 0..seq.steps() {
        let x = tape.constant(Tensor::vector(seq.step(t).to_vec())?);
        let y = mapper_nodes(&mut tape, &nodes, x)?;
        values.extend_from_slice(tape.value(y).data());
    }
    seq.with_values(values)
}

pub(crate) struct MapperNodes {
    a: NodeId,
    b: NodeId,
    v: NodeId,
    c: NodeId,
    u: NodeId,
}

pub(crate) fn register_mapper(tape: &mut Tape, m: &MapperParams, trainable: bool) -> MapperNodes {
    let mut reg = |t: &Tensor| {
        if trainable {
            tape.leaf(t.clone())
        } else {
            tape.constant(t.clone())
        }
    };
    MapperNodes {
        a: reg(&m.affine_w),
        b: reg(&m.affine_b),
        v: reg(&m.res_v),
        c: reg(&m.res_c),
        u: reg(&m.res_u),
    }
}

pub(crate) fn mapper_nodes(
    tape: &mut Tape,
    m: &MapperNodes,
    x: NodeId,
) -> Result<NodeId, CoreError> {
    let affine = tape.matvec(m.a, x)?;
    let affine = tape.add(affine, m.b)?;
    let pre = tape.matvec(m.v, x)?;
    let pre = tape.add(pre, m.c)?;
    let act = tape.tanh(pre)?;
    let res = tape.matvec(m.u, act)?;
    tape.add(affine, res)
}

/// Two-layer tanh discriminator on pooled contexts; outputs the probability
/// that a context came from the source domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub hidden: DenseLayer,
    pub out: DenseLayer,
}

impl DiscriminatorParams {
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self, CoreError> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(CoreError::invalid("discriminator dimensions must be positive"));
        }
        Ok(DiscriminatorParams {
            hidden: DenseLayer::init(input_dim, hidden_dim, rng)?,
            out: DenseLayer::init(hidden_dim, 1, rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    /// Source-domain probability of one context vector.
    pub fn score(&self, context: &[f64]) -> Result<f64, CoreError> {
        if context.len() != self.input_dim() {
            return Err(CoreError::shape(format!(
                "context length {} vs discriminator input {}",
                context.len(),
                self.input_dim()
            )));
        }
        let mut tape = Tape::new();
        let hidden = register_dense(&mut tape, &self.hidden, false);
        let out = register_dense(&mut tape, &self.out, false);
        let x = tape.constant(Tensor::vector(context.to_vec())?);
        let p = discriminator_nodes(&mut tape, &hidden, &out, x)?;
        Ok(tape.value(p).data()[0])
    }
}

fn discriminator_nodes(
    tape: &mut Tape,
    hidden: &DenseNodes,
    out: &DenseNodes,
    x: NodeId,
) -> Result<NodeId, CoreError> {
    let lin = dense_nodes(tape, hidden, x)?;
    let act = tape.tanh(lin)?;
    let logit = dense_nodes(tape, out, act)?;
    tape.sigmoid(logit)
}

/// Mean squared difference between two attention profiles of equal length.
pub fn attention_consistency(
    a: &AttentionProfile,
    b: &AttentionProfile,
) -> Result<f64, CoreError> {
    if a.len() != b.len() {
        return Err(CoreError::shape(format!(
            "profile lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut acc = 0.0;
    for (&x, &y) in a.weights().iter().zip(b.weights()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Discriminator updates per mapper update.
    pub disc_steps_per_mapper: usize,
    /// Weight of the attention-consistency penalty in the mapper loss.
    pub lambda_att: f64,
    pub mapper_res_hidden: usize,
    pub disc_hidden: usize,
}

impl Default for DaConfig {
    fn default() -> Self {
        DaConfig {
            epochs: 15,
            batch_size: 16,
            learning_rate: 1e-3,
            disc_steps_per_mapper: 1,
            lambda_att: 1.0,
            mapper_res_hidden: 8,
            disc_hidden: 16,
        }
    }
}

impl DaConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.disc_steps_per_mapper == 0
            || self.mapper_res_hidden == 0
            || self.disc_hidden == 0
        {
            return Err(CoreError::invalid(
                "epochs, batch size, step ratio and hidden sizes must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::invalid("learning rate must be positive"));
        }
        if !(self.lambda_att >= 0.0) || !self.lambda_att.is_finite() {
            return Err(CoreError::invalid("lambda_att must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub disc_steps_per_mapper: usize,
    pub lambda_att: f64,
    /// Digest of the frozen source model this mapper was trained against.
    pub source_model_digest: String,
    pub source_digest: String,
    pub target_digest: String,
    pub disc_loss_curve: Vec<f64>,
    pub adapt_loss_curve: Vec<f64>,
}

/// A trained mapper/discriminator pair bound to one source model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedBundle {
    pub mapper: MapperParams,
    pub discriminator: DiscriminatorParams,
    pub meta: DaMeta,
}

impl AdaptedBundle {
    fn check_model(&self, model: &ModelBundle) -> Result<(), CoreError> {
        let digest = model.digest();
        if digest != self.meta.source_model_digest {
            return Err(CoreError::invalid(format!(
                "model digest {digest} does not match the adapted bundle's source {}",
                self.meta.source_model_digest
            )));
        }
        Ok(())
    }

    /// Classify a target-domain sequence by mapping it first.
    pub fn predict_proba(
        &self,
        model: &ModelBundle,
        seq: &WindowedSequence,
    ) -> Result<Vec<f64>, CoreError> {
        self.check_model(model)?;
        model.predict_proba(&map_sequence(&self.mapper, seq)?)
    }

    pub fn predict_label(
        &self,
        model: &ModelBundle,
        seq: &WindowedSequence,
    ) -> Result<usize, CoreError> {
        Ok(crate::metrics::argmax(&self.predict_proba(model, seq)?))
    }

    /// Attention over the mapped sequence.
    pub fn attention_profile(
        &self,
        model: &ModelBundle,
        seq: &WindowedSequence,
    ) -> Result<AttentionProfile, CoreError> {
        self.check_model(model)?;
        model.attention_profile(&map_sequence(&self.mapper, seq)?)
    }

    pub fn digest(&self) -> String {
        let mut h = crate::digest::Fnv1a::new();
        h.update_str("adapted-v1");
        h.update_str(&self.meta.source_model_digest);
        for t in self
            .mapper
            .tensors()
            .into_iter()
            .chain([
                &self.discriminator.hidden.weight,
                &self.discriminator.hidden.bias,
                &self.discriminator.out.weight,
                &self.discriminator.out.bias,
            ]) {
            h.update_u64(t.shape().len() as u64);
            for &d in t.shape() {
                h.update_u64(d as u64);
            }
            for &v in t.data() {
                h.update_f64(v);
            }
        }
        h.finish_hex()
    }
}

/// Batch losses without any update, mainly for monitoring and tests.
///
/// Returns `(disc_loss, adapt_loss)`: the discriminator's mean binary
/// cross-entropy over both domains, and the mapper's fooling loss plus
/// `lambda_att` times the mean attention-consistency penalty.
pub fn adversarial_losses(
    model: &ModelBundle,
    mapper: &MapperParams,
    disc: &DiscriminatorParams,
    source_batch: &[&WindowedSequence],
    target_batch: &[&WindowedSequence],
    lambda_att: f64,
) -> Result<(f64, f64), CoreError> {
    if source_batch.is_empty() || target_batch.is_empty() {
        return Err(CoreError::invalid("both batches must be nonempty"));
    }
    if lambda_att > 0.0 && model.pooling() != Pooling::Attention {
        return Err(CoreError::state(
            "attention consistency requires an attention-pooled model",
        ));
    }
    let floor = crate::tape::PROB_FLOOR;
    let mut disc_loss = 0.0;
    for seq in source_batch {
        let ctx = model.forward(seq)?.context;
        let p = disc.score(&ctx)?.clamp(floor, 1.0 - floor);
        disc_loss += -crate::fmath::ln(p);
    }
    let mut adapt_loss = 0.0;
    for seq in target_batch {
        let mapped = map_sequence(mapper, seq)?;
        let fwd = model.forward(&mapped)?;
        let p = disc.score(&fwd.context)?.clamp(floor, 1.0 - floor);
        disc_loss += -crate::fmath::ln(1.0 - p);
        adapt_loss += -crate::fmath::ln(p);
        if lambda_att > 0.0 {
            let mapped_prof = AttentionProfile::new(fwd.attention.expect("attention pooling"))?;
            let orig_prof = model.attention_profile(seq)?;
            adapt_loss += lambda_att * attention_consistency(&mapped_prof, &orig_prof)?;
        }
    }
    Ok((
        disc_loss / (source_batch.len() + target_batch.len()) as f64,
        adapt_loss / target_batch.len() as f64,
    ))
}

/// Train a mapper and discriminator against a frozen model.
///
/// Alternating scheme per joint batch: `disc_steps_per_mapper` discriminator
/// updates (source contexts labeled 1, mapped target contexts 0), then one
/// mapper update with the non-saturating fooling loss plus the attention
/// penalty. Source contexts and original target attention profiles are
/// precomputed once since the model never changes.
pub fn train_da(
    pair: &DomainPair,
    model: &ModelBundle,
    config: &DaConfig,
    seed: u64,
) -> Result<AdaptedBundle, CoreError> {
    config.validate()?;
    model.validate()?;
    let (_, d) = pair.source.layout();
    if d != model.input_dim() {
        return Err(CoreError::shape(format!(
            "data dim {d} vs model input dim {}",
            model.input_dim()
        )));
    }
    if pair.source.class_names != model.class_names {
        return Err(CoreError::invalid("class tables differ from the model"));
    }
    if config.lambda_att > 0.0 && model.pooling() != Pooling::Attention {
        return Err(CoreError::state(
            "attention consistency requires an attention-pooled model",
        ));
    }
    let mut mapper = {
        let mut rng = SplitMix64::new(derive_seed(seed, MAPPER_INIT_SALT));
        MapperParams::identity(d, config.mapper_res_hidden, &mut rng)?
    };
    let mut disc = {
        let mut rng = SplitMix64::new(derive_seed(seed, DISC_INIT_SALT));
        DiscriminatorParams::init(model.hidden_dim(), config.disc_hidden, &mut rng)?
    };
    // The model is frozen, so source contexts and the target's original
    // attention never change over training.
    let source_ctx: Vec<Tensor> = pair
        .source
        .pixels
        .iter()
        .map(|p| Ok(Tensor::vector(model.forward(&p.sequence)?.context)?))
        .collect::<Result<_, CoreError>>()?;
    let target_alpha: Vec<Tensor> = if config.lambda_att > 0.0 {
        pair.target
            .pixels
            .iter()
            .map(|p| {
                Ok(Tensor::vector(
                    model.attention_profile(&p.sequence)?.weights().to_vec(),
                )?)
            })
            .collect::<Result<_, CoreError>>()?
    } else {
        Vec::new()
    };
    let mut opt_disc = OptimizerState::new(
        &[
            &disc.hidden.weight,
            &disc.hidden.bias,
            &disc.out.weight,
            &disc.out.bias,
        ],
        AdamConfig::with_learning_rate(config.learning_rate),
    )?;
    let mut opt_map = OptimizerState::new(
        &mapper.tensors(),
        AdamConfig::with_learning_rate(config.learning_rate),
    )?;
    let ns = pair.source.len();
    let nt = pair.target.len();
    let batches = (ns / config.batch_size).min(nt / config.batch_size).max(1);
    let mut src_order: Vec<usize> = (0..ns).collect();
    let mut tgt_order: Vec<usize> = (0..nt).collect();
    let mut disc_curve = Vec::with_capacity(config.epochs);
    let mut adapt_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        SplitMix64::new(derive_seed(seed, SOURCE_EPOCH_SALT + epoch as u64))
            .shuffle(&mut src_order);
        SplitMix64::new(derive_seed(seed, TARGET_EPOCH_SALT + epoch as u64))
            .shuffle(&mut tgt_order);
        let mut epoch_disc = 0.0;
        let mut epoch_adapt = 0.0;
        for b in 0..batches {
            let src_batch: Vec<usize> = (0..config.batch_size)
                .map(|k| src_order[(b * config.batch_size + k) % ns])
                .collect();
            let tgt_batch: Vec<usize> = (0..config.batch_size)
                .map(|k| tgt_order[(b * config.batch_size + k) % nt])
                .collect();
            for _ in 0..config.disc_steps_per_mapper {
                epoch_disc = disc_update(
                    pair, model, &mapper, &mut disc, &mut opt_disc, &source_ctx, &src_batch,
                    &tgt_batch,
                )?;
            }
            epoch_adapt += mapper_update(
                pair,
                model,
                &mut mapper,
                &disc,
                &mut opt_map,
                &target_alpha,
                &tgt_batch,
                config.lambda_att,
            )?;
        }
        disc_curve.push(epoch_disc);
        adapt_curve.push(epoch_adapt / batches as f64);
    }
    Ok(AdaptedBundle {
        mapper,
        discriminator: disc,
        meta: DaMeta {
            seed,
            epochs: config.epochs,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            disc_steps_per_mapper: config.disc_steps_per_mapper,
            lambda_att: config.lambda_att,
            source_model_digest: model.digest(),
            source_digest: pair.source.digest(),
            target_digest: pair.target.digest(),
            disc_loss_curve: disc_curve,
            adapt_loss_curve: adapt_curve,
        },
    })
}

/// One discriminator step; returns the batch loss before the update.
#[allow(clippy::too_many_arguments)]
fn disc_update(
    pair: &DomainPair,
    model: &ModelBundle,
    mapper: &MapperParams,
    disc: &mut DiscriminatorParams,
    opt: &mut OptimizerState,
    source_ctx: &[Tensor],
    src_batch: &[usize],
    tgt_batch: &[usize],
) -> Result<f64, CoreError> {
    let mut tape = Tape::new();
    let hidden = register_dense(&mut tape, &disc.hidden, true);
    let out = register_dense(&mut tape, &disc.out, true);
    let mapper_nodes_reg = register_mapper(&mut tape, mapper, false);
    let model_nodes = crate::classifier::register_model(&mut tape, model, false);
    let mut total: Option<NodeId> = None;
    let add_loss = |tape: &mut Tape, loss: NodeId, total: &mut Option<NodeId>| -> Result<(), CoreError> {
        *total = Some(match *total {
            Some(t) => tape.add(t, loss)?,
            None => loss,
        });
        Ok(())
    };
    for &i in src_batch {
        let ctx = tape.constant(source_ctx[i].clone());
        let p = discriminator_nodes(&mut tape, &hidden, &out, ctx)?;
        let loss = tape.binary_cross_entropy(p, 1.0)?;
        add_loss(&mut tape, loss, &mut total)?;
    }
    for &i in tgt_batch {
        let seq = &pair.target.pixels[i].sequence;
        let ctx = mapped_context_nodes(&mut tape, &mapper_nodes_reg, &model_nodes, seq)?.1;
        let p = discriminator_nodes(&mut tape, &hidden, &out, ctx)?;
        let loss = tape.binary_cross_entropy(p, 0.0)?;
        add_loss(&mut tape, loss, &mut total)?;
    }
    let total = total.expect("nonempty batches");
    let mean = tape.scale(total, 1.0 / (src_batch.len() + tgt_batch.len()) as f64)?;
    let value = tape.value(mean).data()[0];
    tape.backward(mean)?;
    let ids = [hidden.w, hidden.b, out.w, out.b];
    let grads: Vec<Option<&Tensor>> = ids.iter().map(|&id| tape.grad(id)).collect();
    opt.step(
        &mut [
            &mut disc.hidden.weight,
            &mut disc.hidden.bias,
            &mut disc.out.weight,
            &mut disc.out.bias,
        ],
        &grads,
    )?;
    Ok(value)
}

/// One mapper step; returns the batch loss before the update.
#[allow(clippy::too_many_arguments)]
fn mapper_update(
    pair: &DomainPair,
    model: &ModelBundle,
    mapper: &mut MapperParams,
    disc: &DiscriminatorParams,
    opt: &mut OptimizerState,
    target_alpha: &[Tensor],
    tgt_batch: &[usize],
    lambda_att: f64,
) -> Result<f64, CoreError> {
    let mut tape = Tape::new();
    let mapper_reg = register_mapper(&mut tape, mapper, true);
    let model_nodes = crate::classifier::register_model(&mut tape, model, false);
    let disc_hidden = register_dense(&mut tape, &disc.hidden, false);
    let disc_out = register_dense(&mut tape, &disc.out, false);
    let mut total: Option<NodeId> = None;
    for &i in tgt_batch {
        let seq = &pair.target.pixels[i].sequence;
        let (alpha, ctx) = mapped_context_nodes(&mut tape, &mapper_reg, &model_nodes, seq)?;
        let p = discriminator_nodes(&mut tape, &disc_hidden, &disc_out, ctx)?;
        // Non-saturating objective: maximize log D instead of minimizing
        // log(1 - D), which keeps gradients alive early on.
        let mut loss = tape.binary_cross_entropy(p, 1.0)?;
        if lambda_att > 0.0 {
            let alpha = alpha.ok_or_else(|| {
                CoreError::state("attention consistency requires an attention-pooled model")
            })?;
            let orig = tape.constant(target_alpha[i].clone());
            let penalty = tape.mean_squared_diff(alpha, orig)?;
            let weighted = tape.scale(penalty, lambda_att)?;
            loss = tape.add(loss, weighted)?;
        }
        total = Some(match total {
            Some(t) => tape.add(t, loss)?,
            None => loss,
        });
    }
    let total = total.expect("nonempty batch");
    let mean = tape.scale(total, 1.0 / tgt_batch.len() as f64)?;
    let value = tape.value(mean).data()[0];
    tape.backward(mean)?;
    let ids = [
        mapper_reg.a,
        mapper_reg.b,
        mapper_reg.v,
        mapper_reg.c,
        mapper_reg.u,
    ];
    let grads: Vec<Option<&Tensor>> = ids.iter().map(|&id| tape.grad(id)).collect();
    let mut params = mapper.tensors_mut();
    opt.step(&mut params, &grads)?;
    Ok(value)
}

/// Builds mapper -> encoder -> pooling for one sequence on an existing tape;
/// returns `(alpha, context)` node ids (`alpha` only for attention pooling).
fn mapped_context_nodes(
    tape: &mut Tape,
    mapper: &MapperNodes,
    model: &crate::classifier::ModelNodes,
    seq: &WindowedSequence,
) -> Result<(Option<NodeId>, NodeId), CoreError> {
    let mut xs = Vec::with_capacity(seq.steps());
    for t in 0..seq.steps() {
        let x = tape.constant(Tensor::vector(seq.step(t).to_vec())?);
        xs.push(mapper_nodes(tape, mapper, x)?);
    }
    let hiddens = encode_nodes(tape, &model.lstm, &xs)?;
    match &model.att {
        Some(att) => {
            let (alpha, ctx) = attention_nodes(tape, att, &hiddens)?;
            Ok((Some(alpha), ctx))
        }
        None => Ok((None, *hiddens.last().expect("nonempty"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::TrainConfig;
    use crate::data::{window_sequence, DatasetPixel, SpectralSequence};
    use crate::fmath;
    use alloc::string::ToString;
    use alloc::vec;

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
            vec!["early".to_string(), "late".to_string()],
            "toy".to_string(),
        )
        .unwrap()
    }

    fn toy_model(data: &Dataset, seed: u64) -> ModelBundle {
        ModelBundle::train(
            data,
            &TrainConfig {
                hidden_dim: 8,
                epochs: 12,
                batch_size: 8,
                learning_rate: 0.02,
                ..TrainConfig::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn identity_mapper_passes_through_exactly() {
        let mut rng = SplitMix64::new(3);
        let mapper = MapperParams::identity(4, 3, &mut rng).unwrap();
        let raw = SpectralSequence::new(6, 2, 8, vec![0.3; 12]).unwrap();
        let seq = window_sequence(&raw, 2, 1).unwrap();
        let mapped = map_sequence(&mapper, &seq).unwrap();
        assert_eq!(mapped, seq);
        assert_eq!(mapper.map_step(&[0.1, 0.9, 0.2, 0.4]).unwrap(), vec![0.1, 0.9, 0.2, 0.4]);
    }

    #[test]
    fn mapper_shape_checks() {
        let mut rng = SplitMix64::new(4);
        let mapper = MapperParams::identity(4, 3, &mut rng).unwrap();
        assert!(mapper.map_step(&[0.1, 0.2]).is_err());
        assert!(MapperParams::identity(0, 3, &mut rng).is_err());
    }

    #[test]
    fn zero_discriminator_gives_ln2_loss() {
        let data = toy_dataset(4, 5, 0.0);
        let model = toy_model(&data, 1);
        let mut rng = SplitMix64::new(6);
        let mapper = MapperParams::identity(2, 3, &mut rng).unwrap();
        let mut disc = DiscriminatorParams::init(8, 4, &mut rng).unwrap();
        for t in [
            &mut disc.hidden.weight,
            &mut disc.hidden.bias,
            &mut disc.out.weight,
            &mut disc.out.bias,
        ] {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let seqs: Vec<&WindowedSequence> = data.pixels.iter().map(|p| &p.sequence).collect();
        let (d_loss, a_loss) =
            adversarial_losses(&model, &mapper, &disc, &seqs[..4], &seqs[4..], 0.0).unwrap();
        assert!(fmath::abs(d_loss - fmath::ln(2.0)) < 1e-12, "{d_loss}");
        assert!(fmath::abs(a_loss - fmath::ln(2.0)) < 1e-12, "{a_loss}");
    }

    #[test]
    fn attention_consistency_zero_for_identical() {
        let a = AttentionProfile::new(vec![0.25; 4]).unwrap();
        let b = AttentionProfile::new(vec![0.25; 4]).unwrap();
        assert_eq!(attention_consistency(&a, &b).unwrap(), 0.0);
        let c = AttentionProfile::new(vec![0.5, 0.5]).unwrap();
        assert!(attention_consistency(&a, &c).is_err());
        let d = AttentionProfile::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let expected = ((0.15f64 * 0.15) * 2.0 + (0.05f64 * 0.05) * 2.0) / 4.0;
        assert!(fmath::abs(attention_consistency(&a, &d).unwrap() - expected) < 1e-15);
    }

    #[test]
    fn consistency_matches_tape_op() {
        let a = AttentionProfile::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let b = AttentionProfile::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let plain = attention_consistency(&a, &b).unwrap();
        let mut tape = Tape::new();
        let ta = tape.constant(Tensor::vector(a.weights().to_vec()).unwrap());
        let tb = tape.constant(Tensor::vector(b.weights().to_vec()).unwrap());
        let m = tape.mean_squared_diff(ta, tb).unwrap();
        assert_eq!(plain, tape.value(m).data()[0]);
    }

    #[test]
    fn domain_pair_validation() {
        let a = toy_dataset(2, 7, 0.0);
        let b = toy_dataset(2, 8, 0.05);
        assert!(DomainPair::new(a.clone(), b).is_ok());
        let mut renamed = toy_dataset(2, 9, 0.0);
        renamed.class_names[0] = "other".to_string();
        assert!(DomainPair::new(a, renamed).is_err());
    }

    #[test]
    fn train_da_runs_and_improves_disc_fooling() {
        let source = toy_dataset(8, 10, 0.0);
        let target = toy_dataset(8, 11, 0.12);
        let model = toy_model(&source, 2);
        let pair = DomainPair::new(source, target).unwrap();
        let config = DaConfig {
            epochs: 6,
            batch_size: 8,
            learning_rate: 5e-3,
            ..DaConfig::default()
        };
        let adapted = train_da(&pair, &model, &config, 13).unwrap();
        assert_eq!(adapted.meta.disc_loss_curve.len(), 6);
        assert_eq!(adapted.meta.adapt_loss_curve.len(), 6);
        assert_eq!(adapted.meta.source_model_digest, model.digest());
        // determinism
        let again = train_da(&pair, &model, &config, 13).unwrap();
        assert_eq!(adapted.digest(), again.digest());
        let other = train_da(&pair, &model, &config, 14).unwrap();
        assert_ne!(adapted.digest(), other.digest());
        // the mapper must have moved off the identity
        let x = vec![0.3, 0.4];
        assert_ne!(adapted.mapper.map_step(&x).unwrap(), x);
    }

    #[test]
    fn adapted_bundle_refuses_wrong_model() {
        let source = toy_dataset(6, 15, 0.0);
        let target = toy_dataset(6, 16, 0.1);
        let model = toy_model(&source, 3);
        let pair = DomainPair::new(source.clone(), target).unwrap();
        let config = DaConfig {
            epochs: 1,
            batch_size: 4,
            ..DaConfig::default()
        };
        let adapted = train_da(&pair, &model, &config, 1).unwrap();
        let other_model = toy_model(&source, 99);
        assert!(matches!(
            adapted.predict_proba(&other_model, &source.pixels[0].sequence),
            Err(CoreError::Invalid(_))
        ));
        assert!(adapted
            .predict_proba(&model, &source.pixels[0].sequence)
            .is_ok());
    }

    #[test]
    fn lambda_requires_attention() {
        let source = toy_dataset(4, 17, 0.0);
        let target = toy_dataset(4, 18, 0.1);
        let model = ModelBundle::train(
            &source,
            &TrainConfig {
                hidden_dim: 8,
                epochs: 1,
                batch_size: 4,
                learning_rate: 0.02,
                pooling: Pooling::LastHidden,
                ..TrainConfig::default()
            },
            1,
        )
        .unwrap();
        let pair = DomainPair::new(source, target).unwrap();
        let config = DaConfig {
            epochs: 1,
            batch_size: 4,
            ..DaConfig::default()
        };
        assert!(matches!(
            train_da(&pair, &model, &config, 1),
            Err(CoreError::State(_))
        ));
        let no_att = DaConfig {
            lambda_att: 0.0,
            ..config
        };
        assert!(train_da(&pair, &model, &no_att, 1).is_ok());
    }
}
