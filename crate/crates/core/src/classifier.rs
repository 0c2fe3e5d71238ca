//! Recurrent crop classifier: an LSTM encoder whose per-step hidden states
//! are pooled either by a learned attention distribution or by taking the
//! last hidden state, followed by a softmax head. A flat feed-forward ANN
//! over the concatenated sequence serves as the non-recurrent baseline.
//!
//! All forward math runs on the autodiff tape; inference just never calls
//! `backward`. That keeps exactly one implementation of the gate equations.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, WindowedSequence};
use crate::digest::Fnv1a;
use crate::error::CoreError;
use crate::optim::{AdamConfig, OptimizerState};
use crate::rng::{derive_seed, SplitMix64};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

const INIT_SALT: u64 = 1;
const EPOCH_SALT: u64 = 100;

/// Gate parameters of one LSTM cell. Weights act on the concatenation
/// `[x_t, h_prev]`, so each is `[hidden, input + hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_o: Tensor,
    pub w_g: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
    pub b_g: Tensor,
}

impl LstmParams {
    /// Uniform weight init scaled by fan-in; forget gate bias starts at +1
    /// so early training does not erase the cell state.
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self, CoreError> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(CoreError::invalid("lstm dimensions must be positive"));
        }
        let fan = input_dim + hidden_dim;
        let mut w = || Tensor::uniform_init(vec![hidden_dim, fan], fan, rng);
        let w_i = w()?;
        let w_f = w()?;
        let w_o = w()?;
        let w_g = w()?;
        Ok(LstmParams {
            input_dim,
            hidden_dim,
            w_i,
            w_f,
            w_o,
            w_g,
            b_i: Tensor::zeros(vec![hidden_dim])?,
            b_f: Tensor::new(vec![hidden_dim], vec![1.0; hidden_dim])?,
            b_o: Tensor::zeros(vec![hidden_dim])?,
            b_g: Tensor::zeros(vec![hidden_dim])?,
        })
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.w_i, &self.w_f, &self.w_o, &self.w_g, &self.b_i, &self.b_f, &self.b_o,
            &self.b_g,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_g,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_g,
        ]
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let fan = self.input_dim + self.hidden_dim;
        for w in [&self.w_i, &self.w_f, &self.w_o, &self.w_g] {
            if w.shape() != [self.hidden_dim, fan] {
                return Err(CoreError::shape(format!(
                    "gate weight {:?}, expected [{}, {fan}]",
                    w.shape(),
                    self.hidden_dim
                )));
            }
        }
        for b in [&self.b_i, &self.b_f, &self.b_o, &self.b_g] {
            if b.shape() != [self.hidden_dim] {
                return Err(CoreError::shape(format!(
                    "gate bias {:?}, expected [{}]",
                    b.shape(),
                    self.hidden_dim
                )));
            }
        }
        Ok(())
    }
}

/// Scoring parameters of the attention pool: `e_t = w . h_t + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub score_w: Tensor,
    pub score_b: Tensor,
}

impl AttentionParams {
    pub fn init(hidden_dim: usize, rng: &mut SplitMix64) -> Result<Self, CoreError> {
        Ok(AttentionParams {
            score_w: Tensor::uniform_init(vec![hidden_dim], hidden_dim, rng)?,
            score_b: Tensor::zeros(vec![1])?,
        })
    }
}

/// A plain dense layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn init(
        input_dim: usize,
        output_dim: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self, CoreError> {
        Ok(DenseLayer {
            weight: Tensor::uniform_init(vec![output_dim, input_dim], input_dim, rng)?,
            bias: Tensor::zeros(vec![output_dim])?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Attention,
    LastHidden,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    /// Upper bound on minibatch size; each epoch is cut into near-equal
    /// batches no larger than this.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pooling: Pooling,
    /// Training normally requires at least two populated classes; flip this
    /// for deliberate single-class experiments.
    pub allow_single_class: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 32,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            pooling: Pooling::Attention,
            allow_single_class: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.hidden_dim == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::invalid(
                "hidden_dim, epochs and batch_size must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Provenance recorded at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_digest: String,
    /// Mean training cross-entropy per epoch.
    pub loss_curve: Vec<f64>,
}

/// Normalized attention weights of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProfile {
    weights: Vec<f64>,
}

impl AttentionProfile {
    pub fn new(weights: Vec<f64>) -> Result<Self, CoreError> {
        if weights.is_empty() {
            return Err(CoreError::invalid("empty attention profile"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(CoreError::domain("attention weights must be non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if crate::fmath::abs(sum - 1.0) > 1e-9 {
            return Err(CoreError::domain(format!(
                "attention weights sum to {sum}, expected 1"
            )));
        }
        Ok(AttentionProfile { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Total weight inside the inclusive step interval.
    pub fn mass_in(&self, start: usize, end: usize) -> Result<f64, CoreError> {
        if start > end || end >= self.weights.len() {
            return Err(CoreError::index(format!(
                "interval [{start}, {end}] outside 0..{}",
                self.weights.len()
            )));
        }
        Ok(self.weights[start..=end].iter().sum())
    }
}

// ---- tape graph builders (shared by training, inference, adaptation) ----

pub(crate) struct LstmNodes {
    pub w: [NodeId; 4],
    pub b: [NodeId; 4],
    pub hidden_dim: usize,
}

pub(crate) struct AttNodes {
    pub w: NodeId,
    pub b: NodeId,
}

pub(crate) struct DenseNodes {
    pub w: NodeId,
    pub b: NodeId,
}

pub(crate) fn register_lstm(tape: &mut Tape, p: &LstmParams, trainable: bool) -> LstmNodes {
    let mut reg = |t: &Tensor| {
        if trainable {
            tape.leaf(t.clone())
        } else {
            tape.constant(t.clone())
        }
    };
    let w = [reg(&p.w_i), reg(&p.w_f), reg(&p.w_o), reg(&p.w_g)];
    let b = [reg(&p.b_i), reg(&p.b_f), reg(&p.b_o), reg(&p.b_g)];
    LstmNodes {
        w,
        b,
        hidden_dim: p.hidden_dim,
    }
}

pub(crate) fn register_attention(
    tape: &mut Tape,
    p: &AttentionParams,
    trainable: bool,
) -> AttNodes {
    if trainable {
        AttNodes {
            w: tape.leaf(p.score_w.clone()),
            b: tape.leaf(p.score_b.clone()),
        }
    } else {
        AttNodes {
            w: tape.constant(p.score_w.clone()),
            b: tape.constant(p.score_b.clone()),
        }
    }
}

pub(crate) fn register_dense(tape: &mut Tape, p: &DenseLayer, trainable: bool) -> DenseNodes {
    if trainable {
        DenseNodes {
            w: tape.leaf(p.weight.clone()),
            b: tape.leaf(p.bias.clone()),
        }
    } else {
        DenseNodes {
            w: tape.constant(p.weight.clone()),
            b: tape.constant(p.bias.clone()),
        }
    }
}

/// One LSTM step on the tape; returns `(h_new, c_new)`.
pub(crate) fn lstm_step_nodes(
    tape: &mut Tape,
    p: &LstmNodes,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId), CoreError> {
    let z = tape.concat(&[x, h_prev])?;
    let gate = |tape: &mut Tape, w, b| -> Result<NodeId, CoreError> {
        let lin = tape.matvec(w, z)?;
        tape.add(lin, b)
    };
    let i_lin = gate(tape, p.w[0], p.b[0])?;
    let f_lin = gate(tape, p.w[1], p.b[1])?;
    let o_lin = gate(tape, p.w[2], p.b[2])?;
    let g_lin = gate(tape, p.w[3], p.b[3])?;
    let i = tape.sigmoid(i_lin)?;
    let f = tape.sigmoid(f_lin)?;
    let o = tape.sigmoid(o_lin)?;
    let g = tape.tanh(g_lin)?;
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let c_act = tape.tanh(c_new)?;
    let h_new = tape.mul(o, c_act)?;
    Ok((h_new, c_new))
}

/// Unrolls the cell over `xs`, starting from zero state; returns all hidden
/// state nodes in step order.
pub(crate) fn encode_nodes(
    tape: &mut Tape,
    p: &LstmNodes,
    xs: &[NodeId],
) -> Result<Vec<NodeId>, CoreError> {
    if xs.is_empty() {
        return Err(CoreError::invalid("cannot encode an empty sequence"));
    }
    let zeros = Tensor::zeros(vec![p.hidden_dim])?;
    let mut h = tape.constant(zeros.clone());
    let mut c = tape.constant(zeros);
    let mut hiddens = Vec::with_capacity(xs.len());
    for &x in xs {
        let (h_new, c_new) = lstm_step_nodes(tape, p, x, h, c)?;
        h = h_new;
        c = c_new;
        hiddens.push(h);
    }
    Ok(hiddens)
}

/// Attention pool: scores each hidden state, softmaxes over steps, and
/// returns `(alpha, context)` where context is the alpha-weighted sum.
pub(crate) fn attention_nodes(
    tape: &mut Tape,
    p: &AttNodes,
    hiddens: &[NodeId],
) -> Result<(NodeId, NodeId), CoreError> {
    let mut scores = Vec::with_capacity(hiddens.len());
    for &h in hiddens {
        let e = tape.dot(p.w, h)?;
        scores.push(tape.add(e, p.b)?);
    }
    let stacked = tape.concat(&scores)?;
    let alpha = tape.softmax(stacked)?;
    let h_mat = tape.stack_rows(hiddens)?;
    let context = tape.vecmat(alpha, h_mat)?;
    Ok((alpha, context))
}

pub(crate) fn dense_nodes(
    tape: &mut Tape,
    p: &DenseNodes,
    x: NodeId,
) -> Result<NodeId, CoreError> {
    let lin = tape.matvec(p.w, x)?;
    tape.add(lin, p.b)
}

pub(crate) struct ModelNodes {
    pub lstm: LstmNodes,
    pub att: Option<AttNodes>,
    pub head: DenseNodes,
}

pub(crate) struct ForwardNodes {
    pub hiddens: Vec<NodeId>,
    pub alpha: Option<NodeId>,
    pub context: NodeId,
    pub probs: NodeId,
}

pub(crate) fn register_model(tape: &mut Tape, m: &ModelBundle, trainable: bool) -> ModelNodes {
    ModelNodes {
        lstm: register_lstm(tape, &m.lstm, trainable),
        att: m
            .attention
            .as_ref()
            .map(|a| register_attention(tape, a, trainable)),
        head: register_dense(tape, &m.head, trainable),
    }
}

/// Full forward graph from input step nodes to class probabilities.
pub(crate) fn forward_nodes(
    tape: &mut Tape,
    m: &ModelNodes,
    xs: &[NodeId],
) -> Result<ForwardNodes, CoreError> {
    let hiddens = encode_nodes(tape, &m.lstm, xs)?;
    let (alpha, context) = match &m.att {
        Some(att) => {
            let (a, ctx) = attention_nodes(tape, att, &hiddens)?;
            (Some(a), ctx)
        }
        None => (None, *hiddens.last().expect("nonempty")),
    };
    let logits = dense_nodes(tape, &m.head, context)?;
    let probs = tape.softmax(logits)?;
    Ok(ForwardNodes {
        hiddens,
        alpha,
        context,
        probs,
    })
}

pub(crate) fn step_constants(
    tape: &mut Tape,
    seq: &WindowedSequence,
) -> Result<Vec<NodeId>, CoreError> {
    (0..seq.steps())
        .map(|t| Ok(tape.constant(Tensor::vector(seq.step(t).to_vec())?)))
        .collect()
}

// ---- public single-step and full-forward APIs ----

/// One LSTM cell update outside any training loop.
pub fn lstm_step(
    params: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), CoreError> {
    params.validate()?;
    if x.len() != params.input_dim {
        return Err(CoreError::shape(format!(
            "input length {} vs input_dim {}",
            x.len(),
            params.input_dim
        )));
    }
    if h_prev.len() != params.hidden_dim || c_prev.len() != params.hidden_dim {
        return Err(CoreError::shape(format!(
            "state lengths {}/{} vs hidden_dim {}",
            h_prev.len(),
            c_prev.len(),
            params.hidden_dim
        )));
    }
    let mut tape = Tape::new();
    let nodes = register_lstm(&mut tape, params, false);
    let x = tape.constant(Tensor::vector(x.to_vec())?);
    let h = tape.constant(Tensor::vector(h_prev.to_vec())?);
    let c = tape.constant(Tensor::vector(c_prev.to_vec())?);
    let (h_new, c_new) = lstm_step_nodes(&mut tape, &nodes, x, h, c)?;
    Ok((
        tape.value(h_new).data().to_vec(),
        tape.value(c_new).data().to_vec(),
    ))
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hiddens: Vec<Vec<f64>>,
    pub attention: Option<Vec<f64>>,
    pub context: Vec<f64>,
    pub probs: Vec<f64>,
}

/// A trained recurrent classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub lstm: LstmParams,
    /// `None` means last-hidden pooling.
    pub attention: Option<AttentionParams>,
    pub head: DenseLayer,
    pub class_names: Vec<String>,
    pub meta: TrainMeta,
}

impl ModelBundle {
    pub fn pooling(&self) -> Pooling {
        if self.attention.is_some() {
            Pooling::Attention
        } else {
            Pooling::LastHidden
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        self.lstm.validate()?;
        if let Some(att) = &self.attention {
            if att.score_w.shape() != [self.lstm.hidden_dim] || att.score_b.shape() != [1] {
                return Err(CoreError::shape("attention parameter shapes"));
            }
        }
        if self.head.input_dim() != self.lstm.hidden_dim
            || self.head.output_dim() != self.class_names.len()
        {
            return Err(CoreError::shape(format!(
                "head {:?} vs hidden {} and {} classes",
                self.head.weight.shape(),
                self.lstm.hidden_dim,
                self.class_names.len()
            )));
        }
        if self.class_names.is_empty() {
            return Err(CoreError::invalid("model has no classes"));
        }
        Ok(())
    }

    fn check_input(&self, seq: &WindowedSequence) -> Result<(), CoreError> {
        if seq.dim() != self.lstm.input_dim {
            return Err(CoreError::shape(format!(
                "sequence dim {} vs model input dim {}",
                seq.dim(),
                self.lstm.input_dim
            )));
        }
        Ok(())
    }

    /// Train a fresh model. The two populated-class minimum can be disabled
    /// through the config for deliberate degenerate runs.
    pub fn train(train: &Dataset, config: &TrainConfig, seed: u64) -> Result<Self, CoreError> {
        config.validate()?;
        let hist = train.label_histogram();
        let populated = hist.iter().filter(|&&n| n > 0).count();
        if !config.allow_single_class && populated < 2 {
            return Err(CoreError::invalid(format!(
                "training set has {populated} populated class(es), need at least 2"
            )));
        }
        let (_, d) = train.layout();
        let mut rng = SplitMix64::new(derive_seed(seed, INIT_SALT));
        let lstm = LstmParams::init(d, config.hidden_dim, &mut rng)?;
        let attention = match config.pooling {
            Pooling::Attention => Some(AttentionParams::init(config.hidden_dim, &mut rng)?),
            Pooling::LastHidden => None,
        };
        let head = DenseLayer::init(config.hidden_dim, train.class_count(), &mut rng)?;
        let mut model = ModelBundle {
            lstm,
            attention,
            head,
            class_names: train.class_names.clone(),
            meta: TrainMeta {
                seed,
                epochs: config.epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                train_digest: train.digest(),
                loss_curve: Vec::with_capacity(config.epochs),
            },
        };
        let mut opt = {
            let tensors = model.trainable_tensors();
            OptimizerState::new(&tensors, AdamConfig::with_learning_rate(config.learning_rate))?
        };
        let n = train.len();
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..config.epochs {
            let mut shuffle_rng =
                SplitMix64::new(derive_seed(seed, EPOCH_SALT + epoch as u64));
            shuffle_rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            for batch in even_batches(&order, config.batch_size) {
                let mut tape = Tape::new();
                let nodes = register_model(&mut tape, &model, true);
                let param_ids = collect_param_ids(&nodes);
                let mut total: Option<NodeId> = None;
                for &idx in batch {
                    let pixel = &train.pixels[idx];
                    let xs = step_constants(&mut tape, &pixel.sequence)?;
                    let fwd = forward_nodes(&mut tape, &nodes, &xs)?;
                    let loss = tape.cross_entropy(fwd.probs, pixel.label)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, loss)?,
                        None => loss,
                    });
                }
                let total = total.expect("batch is nonempty");
                let mean = tape.scale(total, 1.0 / batch.len() as f64)?;
                epoch_loss += tape.value(mean).data()[0] * batch.len() as f64;
                tape.backward(mean)?;
                apply_grads(&tape, &param_ids, model.trainable_tensors_mut(), &mut opt)?;
            }
            model.meta.loss_curve.push(epoch_loss / n as f64);
        }
        Ok(model)
    }

    pub fn forward(&self, seq: &WindowedSequence) -> Result<Forward, CoreError> {
        self.validate()?;
        self.check_input(seq)?;
        let mut tape = Tape::new();
        let nodes = register_model(&mut tape, self, false);
        let xs = step_constants(&mut tape, seq)?;
        let fwd = forward_nodes(&mut tape, &nodes, &xs)?;
        Ok(Forward {
            hiddens: fwd
                .hiddens
                .iter()
                .map(|&h| tape.value(h).data().to_vec())
                .collect(),
            attention: fwd.alpha.map(|a| tape.value(a).data().to_vec()),
            context: tape.value(fwd.context).data().to_vec(),
            probs: tape.value(fwd.probs).data().to_vec(),
        })
    }

    pub fn predict_proba(&self, seq: &WindowedSequence) -> Result<Vec<f64>, CoreError> {
        Ok(self.forward(seq)?.probs)
    }

    pub fn predict_label(&self, seq: &WindowedSequence) -> Result<usize, CoreError> {
        Ok(crate::metrics::argmax(&self.predict_proba(seq)?))
    }

    pub fn attention_profile(&self, seq: &WindowedSequence) -> Result<AttentionProfile, CoreError> {
        match self.forward(seq)?.attention {
            Some(weights) => AttentionProfile::new(weights),
            None => Err(CoreError::state(
                "model uses last-hidden pooling, no attention weights exist",
            )),
        }
    }

    /// Cross-entropy of one labeled sequence under the current parameters.
    pub fn loss(&self, seq: &WindowedSequence, label: usize) -> Result<f64, CoreError> {
        self.validate()?;
        self.check_input(seq)?;
        self.check_label(label)?;
        let mut tape = Tape::new();
        let nodes = register_model(&mut tape, self, false);
        let xs = step_constants(&mut tape, seq)?;
        let fwd = forward_nodes(&mut tape, &nodes, &xs)?;
        let loss = tape.cross_entropy(fwd.probs, label)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Loss of one labeled sequence together with its gradient for every
    /// parameter, in [`trainable_tensors`](Self::trainable_tensors) order.
    /// Parameters the loss never touches get a zero gradient.
    pub fn loss_and_grads(
        &self,
        seq: &WindowedSequence,
        label: usize,
    ) -> Result<(f64, Vec<Tensor>), CoreError> {
        self.validate()?;
        self.check_input(seq)?;
        self.check_label(label)?;
        let mut tape = Tape::new();
        let nodes = register_model(&mut tape, self, true);
        let param_ids = collect_param_ids(&nodes);
        let xs = step_constants(&mut tape, seq)?;
        let fwd = forward_nodes(&mut tape, &nodes, &xs)?;
        let loss = tape.cross_entropy(fwd.probs, label)?;
        let value = tape.value(loss).data()[0];
        tape.backward(loss)?;
        let grads = param_ids
            .iter()
            .map(|&id| match tape.grad(id) {
                Some(g) => Ok(g.clone()),
                None => Tensor::zeros(tape.value(id).shape().to_vec()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((value, grads))
    }

    fn check_label(&self, label: usize) -> Result<(), CoreError> {
        if label >= self.class_count() {
            return Err(CoreError::index(format!(
                "label {label} for {} classes",
                self.class_count()
            )));
        }
        Ok(())
    }

    /// Every learned tensor in the canonical order used by training, digests
    /// and [`loss_and_grads`](Self::loss_and_grads): the four gate weights,
    /// the four gate biases, the attention score pair when present, then the
    /// head weight and bias.
    pub fn trainable_tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.lstm.tensors().to_vec();
        if let Some(a) = &self.attention {
            out.push(&a.score_w);
            out.push(&a.score_b);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    /// Mutable view of the same tensors, same order.
    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.lstm.tensors_mut().into_iter().collect();
        if let Some(a) = &mut self.attention {
            out.push(&mut a.score_w);
            out.push(&mut a.score_b);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Digest over architecture, class names, and every parameter bit.
    /// Training history is not part of the identity.
    pub fn digest(&self) -> String {
        let mut h = Fnv1a::new();
        h.update_str("model-v1");
        h.update_str(match self.pooling() {
            Pooling::Attention => "attention",
            Pooling::LastHidden => "last_hidden",
        });
        h.update_u64(self.lstm.input_dim as u64);
        h.update_u64(self.lstm.hidden_dim as u64);
        h.update_u64(self.class_names.len() as u64);
        for name in &self.class_names {
            h.update_str(name);
        }
        let mut tensors: Vec<&Tensor> = self.lstm.tensors().to_vec();
        if let Some(a) = &self.attention {
            tensors.push(&a.score_w);
            tensors.push(&a.score_b);
        }
        tensors.push(&self.head.weight);
        tensors.push(&self.head.bias);
        for t in tensors {
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

/// Node ids of trainable parameters in the canonical tensor order.
pub(crate) fn collect_param_ids(nodes: &ModelNodes) -> Vec<NodeId> {
    let mut ids: Vec<NodeId> = nodes.lstm.w.to_vec();
    ids.extend_from_slice(&nodes.lstm.b);
    if let Some(att) = &nodes.att {
        ids.push(att.w);
        ids.push(att.b);
    }
    ids.push(nodes.head.w);
    ids.push(nodes.head.b);
    ids
}

/// Reads gradients off a backward-swept tape and applies one Adam step.
pub(crate) fn apply_grads(
    tape: &Tape,
    param_ids: &[NodeId],
    mut params: Vec<&mut Tensor>,
    opt: &mut OptimizerState,
) -> Result<(), CoreError> {
    let grads: Vec<Option<&Tensor>> = param_ids.iter().map(|&id| tape.grad(id)).collect();
    opt.step(&mut params, &grads)
}

/// Near-equal contiguous minibatches, each no larger than `cap` and all
/// within one sample of each other in size. A ragged tail batch would
/// average far fewer samples than its peers; its outsized gradient inflates
/// Adam's shared second-moment estimate and can stall early training on
/// small datasets, so sizes are balanced instead.
pub(crate) fn even_batches(order: &[usize], cap: usize) -> impl Iterator<Item = &[usize]> {
    let n = order.len();
    let k = n.div_ceil(cap);
    (0..k).map(move |i| &order[i * n / k..(i + 1) * n / k])
}

// ---- feed-forward baseline ----

#[derive(Debug, Clone, PartialEq)]
pub struct AnnConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    /// Upper bound on minibatch size; each epoch is cut into near-equal
    /// batches no larger than this.
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        AnnConfig {
            hidden_dim: 64,
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

impl AnnConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.hidden_dim == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::invalid(
                "hidden_dim, epochs and batch_size must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// One-hidden-layer tanh network over the flattened sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnModel {
    pub hidden: DenseLayer,
    pub out: DenseLayer,
    pub class_names: Vec<String>,
    pub meta: TrainMeta,
}

impl AnnModel {
    pub fn train(train: &Dataset, config: &AnnConfig, seed: u64) -> Result<Self, CoreError> {
        config.validate()?;
        let hist = train.label_histogram();
        if hist.iter().filter(|&&n| n > 0).count() < 2 {
            return Err(CoreError::invalid("need at least 2 populated classes"));
        }
        let (t, d) = train.layout();
        let flat_dim = t * d;
        let mut rng = SplitMix64::new(derive_seed(seed, INIT_SALT));
        let mut model = AnnModel {
            hidden: DenseLayer::init(flat_dim, config.hidden_dim, &mut rng)?,
            out: DenseLayer::init(config.hidden_dim, train.class_count(), &mut rng)?,
            class_names: train.class_names.clone(),
            meta: TrainMeta {
                seed,
                epochs: config.epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                train_digest: train.digest(),
                loss_curve: Vec::with_capacity(config.epochs),
            },
        };
        let mut opt = OptimizerState::new(
            &[
                &model.hidden.weight,
                &model.hidden.bias,
                &model.out.weight,
                &model.out.bias,
            ],
            AdamConfig::with_learning_rate(config.learning_rate),
        )?;
        let n = train.len();
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..config.epochs {
            let mut shuffle_rng =
                SplitMix64::new(derive_seed(seed, EPOCH_SALT + epoch as u64));
            shuffle_rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            for batch in even_batches(&order, config.batch_size) {
                let mut tape = Tape::new();
                let hidden = register_dense(&mut tape, &model.hidden, true);
                let out = register_dense(&mut tape, &model.out, true);
                let param_ids = [hidden.w, hidden.b, out.w, out.b];
                let mut total: Option<NodeId> = None;
                for &idx in batch {
                    let pixel = &train.pixels[idx];
                    let x = tape.constant(Tensor::vector(pixel.sequence.flat().to_vec())?);
                    let probs = ann_forward_nodes(&mut tape, &hidden, &out, x)?;
                    let loss = tape.cross_entropy(probs, pixel.label)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, loss)?,
                        None => loss,
                    });
                }
                let total = total.expect("batch is nonempty");
                let mean = tape.scale(total, 1.0 / batch.len() as f64)?;
                epoch_loss += tape.value(mean).data()[0] * batch.len() as f64;
                tape.backward(mean)?;
                let grads: Vec<Option<&Tensor>> =
                    param_ids.iter().map(|&id| tape.grad(id)).collect();
                opt.step(
                    &mut [
                        &mut model.hidden.weight,
                        &mut model.hidden.bias,
                        &mut model.out.weight,
                        &mut model.out.bias,
                    ],
                    &grads,
                )?;
            }
            model.meta.loss_curve.push(epoch_loss / n as f64);
        }
        Ok(model)
    }

    /// Predict from a raw flattened feature vector.
    pub fn predict_flat(&self, flat: &[f64]) -> Result<Vec<f64>, CoreError> {
        if flat.len() != self.hidden.input_dim() {
            return Err(CoreError::shape(format!(
                "flat input {} vs model input {}",
                flat.len(),
                self.hidden.input_dim()
            )));
        }
        let mut tape = Tape::new();
        let hidden = register_dense(&mut tape, &self.hidden, false);
        let out = register_dense(&mut tape, &self.out, false);
        let x = tape.constant(Tensor::vector(flat.to_vec())?);
        let probs = ann_forward_nodes(&mut tape, &hidden, &out, x)?;
        Ok(tape.value(probs).data().to_vec())
    }

    pub fn predict_proba(&self, seq: &WindowedSequence) -> Result<Vec<f64>, CoreError> {
        self.predict_flat(seq.flat())
    }

    pub fn predict_label(&self, seq: &WindowedSequence) -> Result<usize, CoreError> {
        Ok(crate::metrics::argmax(&self.predict_proba(seq)?))
    }
}

fn ann_forward_nodes(
    tape: &mut Tape,
    hidden: &DenseNodes,
    out: &DenseNodes,
    x: NodeId,
) -> Result<NodeId, CoreError> {
    let lin = dense_nodes(tape, hidden, x)?;
    let act = tape.tanh(lin)?;
    let logits = dense_nodes(tape, out, act)?;
    tape.softmax(logits)
}

// ---- discriminative periods ----

/// A maximal run of steps whose cohort-mean attention exceeds the uniform
/// share `1/t`. Ends are inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodInterval {
    pub start: usize,
    pub end: usize,
    /// Total mean attention mass inside the run.
    pub mass: f64,
    pub mean_weight: f64,
}

/// Attention averaged over every pixel of a dataset.
pub fn mean_attention(model: &ModelBundle, data: &Dataset) -> Result<Vec<f64>, CoreError> {
    if data.is_empty() {
        return Err(CoreError::invalid("empty dataset"));
    }
    let (t, _) = data.layout();
    let mut mean = vec![0.0; t];
    for p in &data.pixels {
        let prof = model.attention_profile(&p.sequence)?;
        if prof.len() != t {
            return Err(CoreError::shape("attention length vs dataset steps"));
        }
        for (m, &w) in mean.iter_mut().zip(prof.weights()) {
            *m += w;
        }
    }
    for m in mean.iter_mut() {
        *m /= data.len() as f64;
    }
    Ok(mean)
}

/// Intervals where mean attention beats the uniform share, strongest first.
pub fn discriminative_periods(
    model: &ModelBundle,
    data: &Dataset,
) -> Result<Vec<PeriodInterval>, CoreError> {
    let mean = mean_attention(model, data)?;
    let t = mean.len();
    let uniform = 1.0 / t as f64;
    let mut periods = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=t {
        let above = i < t && mean[i] > uniform;
        match (run_start, above) {
            (None, true) => run_start = Some(i),
            (Some(s), false) => {
                let mass: f64 = mean[s..i].iter().sum();
                periods.push(PeriodInterval {
                    start: s,
                    end: i - 1,
                    mass,
                    mean_weight: mass / (i - s) as f64,
                });
                run_start = None;
            }
            _ => {}
        }
    }
    periods.sort_by(|a, b| b.mass.partial_cmp(&a.mass).expect("finite masses"));
    Ok(periods)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{window_sequence, SpectralSequence};
    use crate::fmath;

    fn toy_sequence(vals: &[f64]) -> WindowedSequence {
        let raw = SpectralSequence::new(vals.len(), 1, 8, vals.to_vec()).unwrap();
        window_sequence(&raw, 1, 1).unwrap()
    }

    #[test]
    fn even_batches_balance_and_cover() {
        for (n, cap) in [(1, 32), (31, 32), (32, 32), (33, 32), (225, 32), (1000, 32), (7, 3)] {
            let order: Vec<usize> = (0..n).collect();
            let batches: Vec<&[usize]> = even_batches(&order, cap).collect();
            assert_eq!(batches.len(), n.div_ceil(cap), "n {n} cap {cap}");
            let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1, "n {n} cap {cap}: sizes {sizes:?}");
            assert!(*hi <= cap, "n {n} cap {cap}: batch over cap");
            let flat: Vec<usize> = batches.concat();
            assert_eq!(flat, order, "n {n} cap {cap}: must cover in order");
        }
    }

    #[test]
    fn lstm_step_shapes_and_range() {
        let mut rng = SplitMix64::new(1);
        let p = LstmParams::init(3, 4, &mut rng).unwrap();
        let (h, c) = lstm_step(&p, &[0.1, 0.2, 0.3], &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(c.len(), 4);
        assert!(h.iter().all(|v| v.abs() < 1.0), "tanh-bounded output");
    }

    #[test]
    fn lstm_step_rejects_bad_lengths() {
        let mut rng = SplitMix64::new(1);
        let p = LstmParams::init(3, 4, &mut rng).unwrap();
        assert!(lstm_step(&p, &[0.1, 0.2], &[0.0; 4], &[0.0; 4]).is_err());
        assert!(lstm_step(&p, &[0.1, 0.2, 0.3], &[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut rng = SplitMix64::new(5);
        let p = LstmParams::init(2, 3, &mut rng).unwrap();
        assert!(p.b_f.data().iter().all(|&b| b == 1.0));
        assert!(p.b_i.data().iter().all(|&b| b == 0.0));
    }

    fn toy_dataset(n_per_class: usize, seed: u64) -> Dataset {
        // class 0: early bump, class 1: late bump
        let mut rng = SplitMix64::new(seed);
        let mut pixels = Vec::new();
        for label in 0..2usize {
            for k in 0..n_per_class {
                let mut vals = vec![0.1; 12];
                let center = if label == 0 { 3 } else { 8 };
                for (i, v) in vals.iter_mut().enumerate() {
                    let d = i as f64 - center as f64;
                    *v += 0.7 * fmath::exp(-d * d / 2.0) + 0.02 * rng.gaussian();
                    *v = v.clamp(0.0, 1.0);
                }
                let raw = SpectralSequence::new(12, 1, 8, vals).unwrap();
                pixels.push(crate::data::DatasetPixel {
                    pixel_id: format!("c{label}k{k}"),
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

    fn quick_config() -> TrainConfig {
        TrainConfig {
            hidden_dim: 8,
            epochs: 12,
            batch_size: 8,
            learning_rate: 0.02,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_learns_toy_problem_and_loss_decreases() {
        let data = toy_dataset(12, 3);
        let model = ModelBundle::train(&data, &quick_config(), 11).unwrap();
        let curve = &model.meta.loss_curve;
        assert_eq!(curve.len(), 12);
        assert!(
            curve.last().unwrap() < &(curve[0] * 0.7),
            "loss should drop: {curve:?}"
        );
        let correct = data
            .pixels
            .iter()
            .filter(|p| model.predict_label(&p.sequence).unwrap() == p.label)
            .count();
        assert!(correct >= 22, "{correct}/24 correct");
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_dataset(6, 4);
        let cfg = quick_config();
        let a = ModelBundle::train(&data, &cfg, 7).unwrap();
        let b = ModelBundle::train(&data, &cfg, 7).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = ModelBundle::train(&data, &cfg, 8).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn attention_profile_is_a_distribution() {
        let data = toy_dataset(6, 5);
        let model = ModelBundle::train(&data, &quick_config(), 2).unwrap();
        let prof = model.attention_profile(&data.pixels[0].sequence).unwrap();
        let sum: f64 = prof.weights().iter().sum();
        assert!(fmath::abs(sum - 1.0) < 1e-9);
        assert!(prof.weights().iter().all(|&w| w >= 0.0));
        assert_eq!(prof.len(), 11);
    }

    #[test]
    fn last_hidden_pooling_has_no_attention() {
        let data = toy_dataset(4, 6);
        let cfg = TrainConfig {
            pooling: Pooling::LastHidden,
            epochs: 2,
            ..quick_config()
        };
        let model = ModelBundle::train(&data, &cfg, 3).unwrap();
        assert!(model.attention.is_none());
        assert!(matches!(
            model.attention_profile(&data.pixels[0].sequence),
            Err(CoreError::State(_))
        ));
        // prediction still works
        let p = model.predict_proba(&data.pixels[0].sequence).unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn single_class_guard() {
        let mut data = toy_dataset(4, 7);
        for p in data.pixels.iter_mut() {
            p.label = 0;
        }
        let cfg = quick_config();
        assert!(matches!(
            ModelBundle::train(&data, &cfg, 1),
            Err(CoreError::Invalid(_))
        ));
        let permissive = TrainConfig {
            allow_single_class: true,
            epochs: 1,
            ..cfg
        };
        assert!(ModelBundle::train(&data, &permissive, 1).is_ok());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let data = toy_dataset(4, 8);
        let model = ModelBundle::train(
            &data,
            &TrainConfig {
                epochs: 1,
                ..quick_config()
            },
            9,
        )
        .unwrap();
        let p = model.predict_proba(&data.pixels[0].sequence).unwrap();
        let sum: f64 = p.iter().sum();
        assert!(fmath::abs(sum - 1.0) < 1e-12);
        assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn input_dim_mismatch_rejected() {
        let data = toy_dataset(4, 9);
        let model = ModelBundle::train(
            &data,
            &TrainConfig {
                epochs: 1,
                ..quick_config()
            },
            1,
        )
        .unwrap();
        let wrong = toy_sequence(&[0.1, 0.2, 0.3]);
        assert!(matches!(
            model.predict_proba(&wrong),
            Err(CoreError::Shape(_))
        ));
    }

    #[test]
    fn ann_learns_toy_problem() {
        let data = toy_dataset(12, 10);
        let cfg = AnnConfig {
            hidden_dim: 16,
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.01,
        };
        let model = AnnModel::train(&data, &cfg, 5).unwrap();
        let correct = data
            .pixels
            .iter()
            .filter(|p| model.predict_label(&p.sequence).unwrap() == p.label)
            .count();
        assert!(correct >= 22, "{correct}/24 correct");
        assert!(model.meta.loss_curve.last().unwrap() < &model.meta.loss_curve[0]);
    }

    #[test]
    fn discriminative_periods_cover_above_uniform_runs() {
        let data = toy_dataset(8, 11);
        let model = ModelBundle::train(&data, &quick_config(), 13).unwrap();
        let periods = discriminative_periods(&model, &data).unwrap();
        assert!(!periods.is_empty());
        let mean = mean_attention(&model, &data).unwrap();
        let uniform = 1.0 / mean.len() as f64;
        for p in &periods {
            assert!(p.start <= p.end && p.end < mean.len());
            for i in p.start..=p.end {
                assert!(mean[i] > uniform);
            }
            assert!(p.mass > 0.0 && p.mean_weight > uniform);
        }
        // sorted by mass descending
        for w in periods.windows(2) {
            assert!(w[0].mass >= w[1].mass);
        }
    }

    #[test]
    fn attention_profile_validation() {
        assert!(AttentionProfile::new(vec![]).is_err());
        assert!(AttentionProfile::new(vec![0.5, 0.6]).is_err());
        assert!(AttentionProfile::new(vec![0.5, -0.5, 1.0]).is_err());
        let p = AttentionProfile::new(vec![0.25; 4]).unwrap();
        assert!(fmath::abs(p.mass_in(0, 1).unwrap() - 0.5) < 1e-15);
        assert!(p.mass_in(2, 1).is_err());
        assert!(p.mass_in(0, 9).is_err());
    }
}
