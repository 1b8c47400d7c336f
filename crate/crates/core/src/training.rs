//! Training with gradient-norm (double-backpropagation) regularization.
//!
//! The objective per sample is `nll + lambda * penalty`, where the penalty
//! is either the squared input-gradient norm of the loss ‖∇ₓℓ‖² or the
//! alignment penalty ‖x‖²‖∇Ψ^i(x)‖² − ⟨x, ∇Ψ^i(x)⟩² for the predicted
//! class i (non-negative by Cauchy-Schwarz). Parameter gradients flow
//! through the penalty exactly, via the differentiable backward pass of
//! the autodiff graph.
//!
//! Optimization is plain SGD with momentum, seeded shuffling, and a
//! divide-by-10-on-plateau learning-rate rule. Given identical seeds and
//! inputs, training reproduces final parameters bitwise.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, Graph, NodeId};
use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::data::{DataSplit, Normalization};
use crate::error::{Error, Result};
use crate::network::{LayerParams, LayerSpec, Network};
use crate::tensor::{argmax, Tensor};

/// Which regularizer the objective carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    GradNorm,
    Alignment,
    None,
}

impl PenaltyKind {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::GradNorm => "grad-norm",
            PenaltyKind::Alignment => "alignment",
            PenaltyKind::None => "none",
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub penalty: PenaltyKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs without relative validation-loss improvement before the
    /// learning rate is divided by 10.
    pub plateau_patience: usize,
    /// Relative improvement threshold for the plateau rule.
    pub plateau_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.0,
            penalty: PenaltyKind::GradNorm,
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.9,
            plateau_patience: 3,
            plateau_threshold: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub penalty: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

/// One row per completed epoch.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Parameter gradients in the same layout as [`Network::params`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<LayerParams>,
}

impl ParamGrads {
    /// Declaration-order flattening (per layer: weight entries, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for lp in &self.layers {
            for t in [lp.weight.as_ref(), lp.bias.as_ref()].into_iter().flatten() {
                out.extend_from_slice(t.data());
            }
        }
        out
    }
}

/// Training/objective graph for one architecture: leaves for the input, the
/// label selector, optional prediction selector (alignment penalty),
/// dropout masks and every parameter tensor.
struct Objective {
    graph: Graph,
    x: NodeId,
    label_sel: NodeId,
    pred_sel: Option<NodeId>,
    dropout: Vec<(usize, NodeId, f64)>, // (layer, mask leaf, rate)
    weights: Vec<Option<NodeId>>,
    biases: Vec<Option<NodeId>>,
    logits: NodeId,
    loss: NodeId,
    penalty: Option<NodeId>,
    total: NodeId,
    grad_weights: Vec<Option<NodeId>>,
    grad_biases: Vec<Option<NodeId>>,

}

impl Objective {
    fn build(net: &Network, kind: PenaltyKind, lambda: f64, with_dropout: bool) -> Result<Objective> {
        let plan = net.forward_plan();
        let n_classes = net.num_classes();
        let mut graph = Graph::new();
        let x = graph.var("x", plan.input_shape)?;
        let label_sel = graph.var("label", &[n_classes])?;

        let mut weights = vec![None; plan.layers.len()];
        let mut biases = vec![None; plan.layers.len()];
        for (li, p) in plan.params.iter().enumerate() {
            if let Some(w) = &p.weight {
                weights[li] = Some(graph.var(&format!("w{li}"), w.shape())?);
            }
            if let Some(b) = &p.bias {
                biases[li] = Some(graph.var(&format!("b{li}"), b.shape())?);
            }
        }

        let mut dropout = Vec::new();
        let mut mask_nodes = vec![None; plan.layers.len()];
        if with_dropout {
            for (li, layer) in plan.layers.iter().enumerate() {
                if let LayerSpec::Dropout { rate } = layer {
                    let mask = graph.var(&format!("mask{li}"), &plan.shapes[li])?;
                    mask_nodes[li] = Some(mask);
                    dropout.push((li, mask, *rate));
                }
            }
        }

        let logits = Network::build_forward_into(
            &mut graph,
            &plan,
            x,
            &weights,
            &biases,
            if with_dropout { Some(&mask_nodes) } else { None },
        )?;

        let lse = graph.logsumexp(logits);
        let picked = graph.dot(label_sel, logits)?;
        let loss = graph.sub(lse, picked)?;

        let mut pred_sel = None;
        let penalty = if lambda > 0.0 {
            match kind {
                PenaltyKind::None => None,
                PenaltyKind::GradNorm => {
                    let gx = graph.gradients(loss, &[x])?[0];
                    Some(graph.norm_sq(gx))
                }
                PenaltyKind::Alignment => {
                    let sel = graph.var("pred", &[n_classes])?;
                    pred_sel = Some(sel);
                    let score = graph.dot(sel, logits)?;
                    let gpsi = graph.gradients(score, &[x])?[0];
                    let nx = graph.norm_sq(x);
                    let np = graph.norm_sq(gpsi);
                    let product = graph.mul(nx, np)?;
                    let ip = graph.dot(x, gpsi)?;
                    let ip_sq = graph.mul(ip, ip)?;
                    Some(graph.sub(product, ip_sq)?)
                }
            }
        } else {
            None
        };

        let total = match penalty {
            Some(p) => {
                let scaled = graph.scale(p, lambda);
                graph.add(loss, scaled)?
            }
            None => loss,
        };

        let mut wrt = Vec::new();
        for li in 0..plan.layers.len() {
            if let Some(id) = weights[li] {
                wrt.push(id);
            }
            if let Some(id) = biases[li] {
                wrt.push(id);
            }
        }
        let grads = graph.gradients(total, &wrt)?;
        let mut grad_weights = vec![None; plan.layers.len()];
        let mut grad_biases = vec![None; plan.layers.len()];
        let mut cursor = 0;
        for li in 0..plan.layers.len() {
            if weights[li].is_some() {
                grad_weights[li] = Some(grads[cursor]);
                cursor += 1;
            }
            if biases[li].is_some() {
                grad_biases[li] = Some(grads[cursor]);
                cursor += 1;
            }
        }

        Ok(Objective {
            graph,
            x,
            label_sel,
            pred_sel,
            dropout,
            weights,
            biases,
            logits,
            loss,
            penalty,
            total,
            grad_weights,
            grad_biases,

        })
    }

    fn bind<'a>(
        &self,
        params: &'a [LayerParams],
        x: &'a Tensor,
        label_onehot: &'a Tensor,
        pred_onehot: Option<&'a Tensor>,
        masks: &'a [Tensor],
    ) -> Bindings<'a> {
        let mut b = Bindings::new();
        b.bind(self.x, x);
        b.bind(self.label_sel, label_onehot);
        if let (Some(sel), Some(oh)) = (self.pred_sel, pred_onehot) {
            b.bind(sel, oh);
        }
        for ((_, mask_id, _), mask) in self.dropout.iter().zip(masks) {
            b.bind(*mask_id, mask);
        }
        for (li, p) in params.iter().enumerate() {
            if let (Some(id), Some(w)) = (self.weights[li], p.weight.as_ref()) {
                b.bind(id, w);
            }
            if let (Some(id), Some(bt)) = (self.biases[li], p.bias.as_ref()) {
                b.bind(id, bt);
            }
        }
        b
    }

    /// Predicted class under the bound parameters and masks.
    fn predict(&self, bindings: &Bindings<'_>) -> Result<usize> {
        Ok(argmax(&self.graph.forward_eval(self.logits, bindings)?))
    }

    /// Evaluates (total, loss, penalty, gradients) for one sample.
    fn eval_sample(
        &self,
        bindings: &Bindings<'_>,
        n_layers: usize,
    ) -> Result<(f64, f64, f64, ParamGrads)> {
        let mut outputs = vec![self.total, self.loss];
        if let Some(p) = self.penalty {
            outputs.push(p);
        }
        for li in 0..n_layers {
            if let Some(id) = self.grad_weights[li] {
                outputs.push(id);
            }
            if let Some(id) = self.grad_biases[li] {
                outputs.push(id);
            }
        }
        let mut vals = self.graph.eval(&outputs, bindings)?;
        let total = vals[0].item();
        let loss = vals[1].item();
        let (penalty, grad_start) = if self.penalty.is_some() {
            (vals[2].item(), 3)
        } else {
            (0.0, 2)
        };
        let mut layers = vec![LayerParams::default(); n_layers];
        let mut cursor = grad_start;
        for li in 0..n_layers {
            if self.grad_weights[li].is_some() {
                layers[li].weight = Some(std::mem::replace(&mut vals[cursor], Tensor::scalar(0.0)));
                cursor += 1;
            }
            if self.grad_biases[li].is_some() {
                layers[li].bias = Some(std::mem::replace(&mut vals[cursor], Tensor::scalar(0.0)));
                cursor += 1;
            }
        }
        Ok((total, loss, penalty, ParamGrads { layers }))
    }
}

fn one_hot(n: usize, index: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n]);
    t.data_mut()[index] = 1.0;
    t
}

fn add_into(acc: &mut ParamGrads, grads: &ParamGrads) {
    for (a, g) in acc.layers.iter_mut().zip(&grads.layers) {
        for (at, gt) in [
            (a.weight.as_mut(), g.weight.as_ref()),
            (a.bias.as_mut(), g.bias.as_ref()),
        ] {
            if let (Some(at), Some(gt)) = (at, gt) {
                for (x, y) in at.data_mut().iter_mut().zip(gt.data()) {
                    *x += y;
                }
            }
        }
    }
}

fn zero_like(params: &[LayerParams]) -> ParamGrads {
    ParamGrads {
        layers: params
            .iter()
            .map(|p| LayerParams {
                weight: p.weight.as_ref().map(|t| Tensor::zeros(t.shape())),
                bias: p.bias.as_ref().map(|t| Tensor::zeros(t.shape())),
            })
            .collect(),
    }
}

/// Mean objective and parameter gradients for one batch, shared by the two
/// penalty entry points. Dropout is inactive here (deterministic objective);
/// [`train`] draws masks itself.
fn batch_objective(
    net: &Network,
    batch: &[(&Tensor, usize)],
    lambda: f64,
    kind: PenaltyKind,
) -> Result<(f64, f64, ParamGrads)> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig("lambda must be >= 0".into()));
    }
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let n = net.num_classes();
    for (_, y) in batch {
        if *y >= n {
            return Err(Error::InvalidConfig(format!("label {y} out of range 0..{n}")));
        }
    }
    let obj = Objective::build(net, kind, lambda, false)?;
    let params = net.params();
    let mut acc = zero_like(params);
    let mut total_sum = 0.0;
    let mut penalty_sum = 0.0;
    for (x, y) in batch {
        let label = one_hot(n, *y);
        let pred = if obj.pred_sel.is_some() {
            let b = obj.bind(params, x, &label, None, &[]);
            Some(one_hot(n, obj.predict(&b)?))
        } else {
            None
        };
        let b = obj.bind(params, x, &label, pred.as_ref(), &[]);
        let (total, _, penalty, grads) = obj.eval_sample(&b, params.len())?;
        total_sum += total;
        penalty_sum += penalty;
        add_into(&mut acc, &grads);
    }
    let scale = 1.0 / batch.len() as f64;
    for lp in &mut acc.layers {
        for t in [lp.weight.as_mut(), lp.bias.as_mut()].into_iter().flatten() {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
    }
    Ok((total_sum * scale, penalty_sum * scale, acc))
}

/// Mean NLL + λ‖∇ₓℓ‖² over the batch with exact parameter gradients
/// through both terms.
pub fn double_backprop_loss(
    net: &Network,
    batch: &[(&Tensor, usize)],
    lambda: f64,
) -> Result<(f64, ParamGrads)> {
    let (loss, _, grads) = batch_objective(net, batch, lambda, PenaltyKind::GradNorm)?;
    Ok((loss, grads))
}

/// Mean NLL + λ·(‖x‖²‖∇Ψ^i(x)‖² − ⟨x,∇Ψ^i(x)⟩²) for the predicted class i.
pub fn alignment_penalty_loss(
    net: &Network,
    batch: &[(&Tensor, usize)],
    lambda: f64,
) -> Result<(f64, ParamGrads)> {
    let (loss, _, grads) = batch_objective(net, batch, lambda, PenaltyKind::Alignment)?;
    Ok((loss, grads))
}

/// Mean penalty value alone (no loss term) over a batch; report-side helper.
pub fn batch_penalty(
    net: &Network,
    batch: &[(&Tensor, usize)],
    kind: PenaltyKind,
) -> Result<f64> {
    let (_, penalty, _) = batch_objective(net, batch, 1.0, kind)?;
    Ok(penalty)
}

/// Trains a copy of `net` on the split, returning the trained network (eval
/// mode) and the per-epoch history.
pub fn train(net: &Network, data: &DataSplit, cfg: &TrainConfig) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidConfig("empty training split".into()));
    }
    let n = net.num_classes();
    if data.train.n_classes() > n {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes, network only {n}",
            data.train.n_classes()
        )));
    }

    let has_dropout = net
        .layers()
        .iter()
        .any(|l| matches!(l, LayerSpec::Dropout { .. }));
    let obj = Objective::build(net, cfg.penalty, cfg.lambda, has_dropout)?;

    let mut working = net.clone();
    let mut params: Vec<LayerParams> = working.params().to_vec();
    let mut velocity = zero_like(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lr = cfg.learning_rate;
    let mut history = TrainHistory::default();
    let mut best_val = f64::INFINITY;
    let mut stale_epochs = 0usize;

    let mask_shapes: Vec<Vec<usize>> = obj
        .dropout
        .iter()
        .map(|(li, _, _)| net.forward_plan().shapes[*li].clone())
        .collect();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut epoch_penalty = 0.0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc = zero_like(&params);
            let mut batch_total = 0.0;
            let mut batch_penalty_sum = 0.0;
            for &i in chunk {
                let x = data.train.sample(i);
                let label = one_hot(n, data.train.label(i));
                let masks: Vec<Tensor> = obj
                    .dropout
                    .iter()
                    .zip(&mask_shapes)
                    .map(|((_, _, rate), shape)| {
                        let keep = 1.0 - rate;
                        let numel: usize = shape.iter().product();
                        let data: Vec<f64> = (0..numel)
                            .map(|_| {
                                if rng.gen::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        Tensor::from_vec(shape.clone(), data).expect("mask shape")
                    })
                    .collect();
                let pred = if obj.pred_sel.is_some() {
                    let b = obj.bind(&params, x, &label, None, &masks);
                    Some(one_hot(n, obj.predict(&b)?))
                } else {
                    None
                };
                let b = obj.bind(&params, x, &label, pred.as_ref(), &masks);
                let (total, _, penalty, grads) = obj.eval_sample(&b, params.len())?;
                if !total.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss at epoch {epoch}, batch {batch_no}"
                    )));
                }
                batch_total += total;
                batch_penalty_sum += penalty;
                add_into(&mut acc, &grads);
            }
            let scale = 1.0 / chunk.len() as f64;
            epoch_loss += batch_total;
            epoch_penalty += batch_penalty_sum;

            // v = momentum*v + g_mean; theta -= lr*v
            for (li, lp) in params.iter_mut().enumerate() {
                let vl = &mut velocity.layers[li];
                let al = &acc.layers[li];
                for (t, v, g) in [
                    (lp.weight.as_mut(), vl.weight.as_mut(), al.weight.as_ref()),
                    (lp.bias.as_mut(), vl.bias.as_mut(), al.bias.as_ref()),
                ] {
                    if let (Some(t), Some(v), Some(g)) = (t, v, g) {
                        for k in 0..t.numel() {
                            let gk = g.data()[k] * scale;
                            let vk = cfg.momentum * v.data()[k] + gk;
                            v.data_mut()[k] = vk;
                            t.data_mut()[k] -= lr * vk;
                        }
                    }
                }
            }
        }

        // Sync params into the network for validation.
        for (li, lp) in params.iter().enumerate() {
            if let Some(w) = &lp.weight {
                working.set_weight(li, w.clone())?;
            }
            if let Some(b) = &lp.bias {
                working.set_bias(li, b.clone())?;
            }
        }
        let mut val_loss = 0.0;
        let mut val_hits = 0usize;
        for i in 0..data.validation.len() {
            let x = data.validation.sample(i);
            let y = data.validation.label(i);
            val_loss += working.nll(x, y)?;
            if working.predict(x)? == y {
                val_hits += 1;
            }
        }
        let val_n = data.validation.len().max(1) as f64;
        val_loss /= val_n;
        let val_accuracy = val_hits as f64 / val_n;

        history.epochs.push(EpochStats {
            train_loss: epoch_loss / data.train.len() as f64,
            penalty: epoch_penalty / data.train.len() as f64,
            val_loss,
            val_accuracy,
            learning_rate: lr,
        });

        // Divide-by-10-on-plateau rule.
        let improvement = (best_val - val_loss) / best_val.abs().max(1e-12);
        if val_loss < best_val && improvement > cfg.plateau_threshold {
            best_val = val_loss;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.plateau_patience {
                lr /= 10.0;
                stale_epochs = 0;
            }
        }
    }

    Ok((working, history))
}

/// Evenly log-spaced grid from `lo` to `hi` inclusive.
pub fn geometric_span(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if lo <= 0.0 || hi <= lo || points < 2 {
        return Err(Error::InvalidConfig(
            "geometric span needs 0 < lo < hi and at least 2 points".into(),
        ));
    }
    let (llo, lhi) = (lo.log10(), hi.log10());
    Ok((0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            10f64.powf(llo + t * (lhi - llo))
        })
        .collect())
}

/// One sweep entry: the trained model for a regularization weight, or the
/// error that stopped it.
#[derive(Debug)]
pub struct SweepModel {
    pub lambda: f64,
    pub network: Option<Network>,
    pub history: Option<TrainHistory>,
    pub checkpoint: Option<PathBuf>,
    pub error: Option<String>,
}

/// Trains one model per lambda from the identical initialization, in
/// parallel. Individual failures are recorded and the sweep continues.
/// With `out_dir` set, each trained model is checkpointed.
pub fn lambda_sweep(
    net: &Network,
    data: &DataSplit,
    base: &TrainConfig,
    lambdas: &[f64],
    out_dir: Option<&Path>,
    normalization: Option<Normalization>,
) -> Result<Vec<SweepModel>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("empty lambda list".into()));
    }
    if lambdas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("lambda list must be strictly ascending".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let entries: Vec<SweepModel> = lambdas
        .par_iter()
        .enumerate()
        .map(|(idx, &lambda)| {
            let mut cfg = base.clone();
            cfg.lambda = lambda;
            match train(net, data, &cfg) {
                Ok((model, history)) => {
                    let mut checkpoint = None;
                    let mut error = None;
                    if let Some(dir) = out_dir {
                        let path = dir.join(format!("model_{idx:02}.saln"));
                        let mut meta = CheckpointMeta::for_network(&model, base.seed);
                        meta.lambda = Some(lambda);
                        meta.penalty = Some(cfg.penalty.name().to_string());
                        meta.normalization = normalization;
                        match save_checkpoint(&model, &meta, &path) {
                            Ok(()) => checkpoint = Some(path),
                            Err(e) => error = Some(format!("checkpoint failed: {e}")),
                        }
                    }
                    SweepModel {
                        lambda,
                        network: Some(model),
                        history: Some(history),
                        checkpoint,
                        error,
                    }
                }
                Err(e) => SweepModel {
                    lambda,
                    network: None,
                    history: None,
                    checkpoint: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(entries)
}
