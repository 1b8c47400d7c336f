//! Layered feedforward ReLU networks.
//!
//! A [`Network`] is an ordered list of layers whose parameters are
//! partitioned into linear weights (theta) and bias vectors. It exposes the
//! pre-softmax score vector ("logits"), the argmax prediction, and exact
//! input/bias gradients computed through the autodiff graph. Analysis
//! entry points require eval mode, where the score function is a
//! deterministic piecewise-linear map.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::autodiff::{Bindings, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{argmax, logsumexp, Tensor};

/// One layer of a feedforward network.
///
/// Convolutions are 3×3, stride 1, zero-padded to preserve spatial size;
/// max pooling is 2×2 with stride 2 (floor). Dropout is inverted dropout and
/// acts only in train mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        outputs: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Conv2d {
        filters: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    MaxPool2,
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
}

fn default_true() -> bool {
    true
}

/// Train/eval switch; dropout is identity in eval mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Parameters of one layer; either slot may be absent.
#[derive(Debug, Clone, Default)]
pub struct LayerParams {
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Feedforward classifier with explicit theta/bias parameter partition.
#[derive(Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams>,
    shapes: Vec<Vec<usize>>, // shape after each layer; shapes[0] = input
    mode: Mode,
    analysis: OnceLock<AnalysisGraph>,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            params: self.params.clone(),
            shapes: self.shapes.clone(),
            mode: self.mode,
            analysis: OnceLock::new(),
        }
    }
}

/// Cached evaluation graph shared by all analysis entry points.
///
/// Leaves: the input `x`, a class-selector vector `c`, and one leaf per
/// parameter tensor. Outputs: logits, per-class input gradients, per-class
/// bias gradients, and the prediction-referenced NLL with its input
/// gradient (used by attacks).
#[derive(Debug)]
struct AnalysisGraph {
    graph: Graph,
    x: NodeId,
    selector: NodeId,
    param_leaves: Vec<(usize, ParamLeaf)>,
    logits: NodeId,
    class_input_grads: Vec<NodeId>,
    class_bias_grads: Vec<Vec<NodeId>>, // per class, per bias tensor (layer order)
    bias_layer_order: Vec<usize>,
    loss: NodeId,
    loss_input_grad: NodeId,
}

#[derive(Debug, Clone, Copy)]
enum ParamLeaf {
    Weight(NodeId),
    Bias(NodeId),
}

/// Builds the forward chain for one input node; returns the logits node and
/// ReLU pre-activation nodes (used for kink-margin queries).
fn build_forward(
    graph: &mut Graph,
    layers: &[LayerSpec],
    shapes: &[Vec<usize>],
    x: NodeId,
    weight_nodes: &[Option<NodeId>],
    bias_nodes: &[Option<NodeId>],
    dropout_masks: Option<&[Option<NodeId>]>,
) -> Result<(NodeId, Vec<NodeId>)> {
    let mut cur = x;
    let mut pre_activations = Vec::new();
    for (li, layer) in layers.iter().enumerate() {
        cur = match layer {
            LayerSpec::Dense { .. } => {
                let w = weight_nodes[li].expect("dense weight node");
                let mut out = graph.matvec(w, cur)?;
                if let Some(b) = bias_nodes[li] {
                    out = graph.add(out, b)?;
                }
                out
            }
            LayerSpec::Conv2d { .. } => {
                let k = weight_nodes[li].expect("conv kernel node");
                let mut out = graph.conv2d(cur, k)?;
                if let Some(b) = bias_nodes[li] {
                    out = graph.bias_add(out, b)?;
                }
                out
            }
            LayerSpec::MaxPool2 => graph.maxpool2(cur)?,
            LayerSpec::Relu => {
                pre_activations.push(cur);
                graph.relu(cur)
            }
            LayerSpec::LeakyRelu { slope } => {
                pre_activations.push(cur);
                graph.leaky_relu(cur, *slope)
            }
            LayerSpec::Dropout { .. } => match dropout_masks.and_then(|m| m[li]) {
                Some(mask) => graph.mul(cur, mask)?,
                None => cur, // identity in eval mode
            },
            LayerSpec::Flatten => graph.flatten(cur)?,
        };
        debug_assert_eq!(graph.shape(cur), &shapes[li + 1][..]);
    }
    Ok((cur, pre_activations))
}

/// Shape after applying `layer` to `shape`, or a descriptive error.
fn layer_output_shape(layer: &LayerSpec, shape: &[usize], index: usize) -> Result<Vec<usize>> {
    let fail = |msg: String| Err(Error::shape(format!("layer {index}: {msg}")));
    match layer {
        LayerSpec::Dense { outputs, .. } => {
            if shape.len() != 1 {
                return fail(format!("dense expects a flat vector input, got {shape:?}"));
            }
            if *outputs == 0 {
                return fail("dense layer with zero outputs".into());
            }
            Ok(vec![*outputs])
        }
        LayerSpec::Conv2d { filters, .. } => {
            if shape.len() != 3 {
                return fail(format!("conv2d expects (h,w,c) input, got {shape:?}"));
            }
            if *filters == 0 {
                return fail("conv2d with zero filters".into());
            }
            Ok(vec![shape[0], shape[1], *filters])
        }
        LayerSpec::MaxPool2 => {
            if shape.len() != 3 || shape[0] < 2 || shape[1] < 2 {
                return fail(format!("maxpool2 needs (h,w,c) with h,w >= 2, got {shape:?}"));
            }
            Ok(vec![shape[0] / 2, shape[1] / 2, shape[2]])
        }
        LayerSpec::Relu | LayerSpec::LeakyRelu { .. } => Ok(shape.to_vec()),
        LayerSpec::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                return fail(format!("dropout rate {rate} outside [0,1)"));
            }
            Ok(shape.to_vec())
        }
        LayerSpec::Flatten => Ok(vec![shape.iter().product()]),
    }
}

impl Network {
    /// Builds a network with seeded He-style initialization.
    ///
    /// Weights are drawn from N(0, 2/fan_in); biases from N(0, 0.1²) so the
    /// bias-dependent terms of the score decomposition are exercised on
    /// untrained networks. The same spec and seed reproduce parameters
    /// bitwise.
    pub fn build(input_shape: &[usize], layers: &[LayerSpec], seed: u64) -> Result<Network> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

        let mut shapes = vec![input_shape.to_vec()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer_output_shape(layer, shapes.last().unwrap(), i)?;
            shapes.push(next);
        }

        let mut params = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let in_shape = &shapes[i];
            let mut lp = LayerParams::default();
            match layer {
                LayerSpec::Dense { outputs, bias } => {
                    let fan_in = in_shape[0];
                    let std = (2.0 / fan_in as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("std > 0");
                    let data: Vec<f64> =
                        (0..outputs * fan_in).map(|_| normal.sample(&mut rng)).collect();
                    lp.weight = Some(Tensor::from_vec(vec![*outputs, fan_in], data)?);
                    if *bias {
                        let bn = Normal::new(0.0, 0.1).expect("std > 0");
                        let data: Vec<f64> = (0..*outputs).map(|_| bn.sample(&mut rng)).collect();
                        lp.bias = Some(Tensor::from_vec(vec![*outputs], data)?);
                    }
                }
                LayerSpec::Conv2d { filters, bias } => {
                    let cin = in_shape[2];
                    let fan_in = 9 * cin;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("std > 0");
                    let data: Vec<f64> = (0..9 * cin * filters)
                        .map(|_| normal.sample(&mut rng))
                        .collect();
                    lp.weight = Some(Tensor::from_vec(vec![3, 3, cin, *filters], data)?);
                    if *bias {
                        let bn = Normal::new(0.0, 0.1).expect("std > 0");
                        let data: Vec<f64> = (0..*filters).map(|_| bn.sample(&mut rng)).collect();
                        lp.bias = Some(Tensor::from_vec(vec![*filters], data)?);
                    }
                }
                _ => {}
            }
            params.push(lp);
        }

        let out_shape = shapes.last().unwrap();
        if out_shape.len() != 1 || out_shape[0] < 2 {
            return Err(Error::shape(format!(
                "network must end in a flat score vector of length >= 2, got {out_shape:?}"
            )));
        }

        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers: layers.to_vec(),
            params,
            shapes,
            mode: Mode::Eval,
            analysis: OnceLock::new(),
        })
    }

    /// The architecture used for the bundled 28×28 grayscale preset:
    /// three 3×3 conv + pool stages (32/64/128 maps), a 128-unit dense
    /// layer, dropout 0.5, and a 10-way output.
    pub fn mnist_paper_spec() -> (Vec<usize>, Vec<LayerSpec>) {
        (
            vec![28, 28, 1],
            vec![
                LayerSpec::Conv2d { filters: 32, bias: true },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Conv2d { filters: 64, bias: true },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Conv2d { filters: 128, bias: true },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense { outputs: 128, bias: true },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Dense { outputs: 10, bias: true },
            ],
        )
    }

    /// Builds a named preset; `mnist-paper` is the 28×28 architecture above.
    pub fn preset(name: &str, seed: u64) -> Result<Network> {
        match name {
            "mnist-paper" => {
                let (input, layers) = Self::mnist_paper_spec();
                Network::build(&input, &layers, seed)
            }
            other => Err(Error::InvalidConfig(format!("unknown preset '{other}'"))),
        }
    }

    /// A multi-class affine model `x ↦ Wx (+ b)` as a single dense layer.
    pub fn linear(weights: Tensor, bias: Option<Tensor>) -> Result<Network> {
        let shape = weights.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("linear model needs a (classes, dim) matrix"));
        }
        let (classes, dim) = (shape[0], shape[1]);
        if let Some(b) = &bias {
            if b.shape() != [classes] {
                return Err(Error::shape("bias length must match class count"));
            }
        }
        let mut net = Network::build(
            &[dim],
            &[LayerSpec::Dense {
                outputs: classes,
                bias: bias.is_some(),
            }],
            0,
        )?;
        net.set_weight(0, weights)?;
        if let Some(b) = bias {
            net.set_bias(0, b)?;
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    /// Overwrites a layer's weight tensor (shape-checked).
    pub fn set_weight(&mut self, layer: usize, weight: Tensor) -> Result<()> {
        match self.params[layer].weight.as_ref() {
            Some(old) if old.shape() == weight.shape() => {
                self.params[layer].weight = Some(weight);
                Ok(())
            }
            Some(old) => Err(Error::shape(format!(
                "layer {layer}: weight shape {:?} vs expected {:?}",
                weight.shape(),
                old.shape()
            ))),
            None => Err(Error::shape(format!("layer {layer} has no weight"))),
        }
    }

    pub fn set_bias(&mut self, layer: usize, bias: Tensor) -> Result<()> {
        match self.params[layer].bias.as_ref() {
            Some(old) if old.shape() == bias.shape() => {
                self.params[layer].bias = Some(bias);
                Ok(())
            }
            Some(old) => Err(Error::shape(format!(
                "layer {layer}: bias shape {:?} vs expected {:?}",
                bias.shape(),
                old.shape()
            ))),
            None => Err(Error::shape(format!("layer {layer} has no bias"))),
        }
    }

    /// All linear weights, flattened and concatenated in declaration order.
    pub fn theta(&self) -> Vec<f64> {
        self.params
            .iter()
            .filter_map(|p| p.weight.as_ref())
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// All bias entries concatenated in declaration order (the vector `b`
    /// of the score decomposition).
    pub fn bias_vector(&self) -> Vec<f64> {
        self.params
            .iter()
            .filter_map(|p| p.bias.as_ref())
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn has_biases(&self) -> bool {
        self.params.iter().any(|p| p.bias.is_some())
    }

    /// Strips every bias tensor, leaving a positive one-homogeneous network.
    pub fn without_biases(&self) -> Network {
        let mut layers = self.layers.clone();
        for layer in &mut layers {
            match layer {
                LayerSpec::Dense { bias, .. } | LayerSpec::Conv2d { bias, .. } => *bias = false,
                _ => {}
            }
        }
        let mut net = Network::build(&self.input_shape, &layers, 0).expect("same shapes");
        for (li, p) in self.params.iter().enumerate() {
            if let Some(w) = &p.weight {
                net.set_weight(li, w.clone()).expect("same shapes");
            }
        }
        net
    }

    fn analysis(&self) -> &AnalysisGraph {
        self.analysis.get_or_init(|| {
            self.build_analysis_graph()
                .expect("analysis graph construction cannot fail after build() validated shapes")
        })
    }

    fn build_analysis_graph(&self) -> Result<AnalysisGraph> {
        let n = self.num_classes();
        let mut graph = Graph::new();
        let x = graph.var("x", &self.input_shape)?;
        let selector = graph.var("c", &[n])?;

        let mut weight_nodes = vec![None; self.layers.len()];
        let mut bias_nodes = vec![None; self.layers.len()];
        let mut param_leaves = Vec::new();
        let mut bias_layer_order = Vec::new();
        for (li, p) in self.params.iter().enumerate() {
            if let Some(w) = &p.weight {
                let id = graph.var(&format!("w{li}"), w.shape())?;
                weight_nodes[li] = Some(id);
                param_leaves.push((li, ParamLeaf::Weight(id)));
            }
            if let Some(b) = &p.bias {
                let id = graph.var(&format!("b{li}"), b.shape())?;
                bias_nodes[li] = Some(id);
                param_leaves.push((li, ParamLeaf::Bias(id)));
                bias_layer_order.push(li);
            }
        }

        let (logits, _) = build_forward(
            &mut graph,
            &self.layers,
            &self.shapes,
            x,
            &weight_nodes,
            &bias_nodes,
            None,
        )?;

        let bias_leaves: Vec<NodeId> = bias_layer_order
            .iter()
            .map(|li| match bias_nodes[*li] {
                Some(id) => id,
                None => unreachable!(),
            })
            .collect();

        // Per-class score gradients: one backward chain per class, all
        // sharing the forward pass.
        let mut class_input_grads = Vec::with_capacity(n);
        let mut class_bias_grads = Vec::with_capacity(n);
        for i in 0..n {
            let s = graph.index(logits, i)?;
            let mut wrt = vec![x];
            wrt.extend(&bias_leaves);
            let grads = graph.gradients(s, &wrt)?;
            class_input_grads.push(grads[0]);
            class_bias_grads.push(grads[1..].to_vec());
        }

        // Prediction-referenced NLL: lse(logits) - <c, logits>.
        let lse = graph.logsumexp(logits);
        let picked = graph.dot(selector, logits)?;
        let loss = graph.sub(lse, picked)?;
        let loss_input_grad = graph.gradients(loss, &[x])?[0];

        Ok(AnalysisGraph {
            graph,
            x,
            selector,
            param_leaves,
            logits,
            class_input_grads,
            class_bias_grads,
            bias_layer_order,
            loss,
            loss_input_grad,
        })
    }

    fn bind_params<'a>(&'a self, ag: &AnalysisGraph, bindings: &mut Bindings<'a>) {
        for (li, leaf) in &ag.param_leaves {
            match leaf {
                ParamLeaf::Weight(id) => {
                    bindings.bind(*id, self.params[*li].weight.as_ref().expect("weight"))
                }
                ParamLeaf::Bias(id) => {
                    bindings.bind(*id, self.params[*li].bias.as_ref().expect("bias"))
                }
            }
        }
    }

    fn require_eval(&self) -> Result<()> {
        if self.mode != Mode::Eval {
            return Err(Error::InvalidConfig(
                "analysis requires eval mode (dropout must be inactive)".into(),
            ));
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::shape(format!(
                "input shape {:?} vs network input {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Pre-softmax score vector Ψ(x).
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.require_eval()?;
        self.check_input(x)?;
        let ag = self.analysis();
        let mut b = Bindings::new();
        b.bind(ag.x, x);
        self.bind_params(ag, &mut b);
        ag.graph.forward_eval(ag.logits, &b)
    }

    /// argmax of the score vector; ties broken by lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Gradient of score `i` with respect to the input, same shape as `x`.
    pub fn input_gradient(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        self.require_eval()?;
        self.check_input(x)?;
        let n = self.num_classes();
        if class >= n {
            return Err(Error::InvalidConfig(format!(
                "class {class} out of range 0..{n}"
            )));
        }
        let ag = self.analysis();
        let mut b = Bindings::new();
        b.bind(ag.x, x);
        self.bind_params(ag, &mut b);
        ag.graph.forward_eval(ag.class_input_grads[class], &b)
    }

    /// Logits plus the input gradients of every class, sharing one forward
    /// pass (n backward chains).
    pub fn logits_and_all_input_gradients(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.require_eval()?;
        self.check_input(x)?;
        let ag = self.analysis();
        let mut b = Bindings::new();
        b.bind(ag.x, x);
        self.bind_params(ag, &mut b);
        let mut outputs = vec![ag.logits];
        outputs.extend(&ag.class_input_grads);
        let mut vals = ag.graph.eval(&outputs, &b)?;
        let logits = vals.remove(0);
        Ok((logits, vals))
    }

    /// Logits and the input gradients of the named classes only.
    pub fn logits_and_input_gradients(
        &self,
        x: &Tensor,
        classes: &[usize],
    ) -> Result<(Tensor, Vec<Tensor>)> {
        self.require_eval()?;
        self.check_input(x)?;
        let ag = self.analysis();
        let mut b = Bindings::new();
        b.bind(ag.x, x);
        self.bind_params(ag, &mut b);
        let mut outputs = vec![ag.logits];
        for c in classes {
            outputs.push(ag.class_input_grads[*c]);
        }
        let mut vals = ag.graph.eval(&outputs, &b)?;
        let logits = vals.remove(0);
        Ok((logits, vals))
    }

    /// Gradient of score `i` with respect to every bias entry, concatenated
    /// in declaration order. Empty for bias-free networks.
    pub fn bias_gradient(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        self.require_eval()?;
        self.check_input(x)?;
        let n = self.num_classes();
        if class >= n {
            return Err(Error::InvalidConfig(format!(
                "class {class} out of range 0..{n}"
            )));
        }
        let ag = self.analysis();
        if ag.bias_layer_order.is_empty() {
            return Ok(Tensor::zeros(&[0]));
        }
        let mut b = Bindings::new();
        b.bind(ag.x, x);
        self.bind_params(ag, &mut b);
        let parts = ag.graph.eval(&ag.class_bias_grads[class], &b)?;
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let len = data.len();
        Tensor::from_vec(vec![len], data)
    }

    /// NLL of `x` referenced to `label` plus its input gradient. Attacks
    /// call this with the network's own prediction as the label.
    pub fn loss_and_input_gradient(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        self.require_eval()?;
        self.check_input(x)?;
        let n = self.num_classes();
        if label >= n {
            return Err(Error::InvalidConfig(format!(
                "label {label} out of range 0..{n}"
            )));
        }
        let ag = self.analysis();
        let mut onehot = Tensor::zeros(&[n]);
        onehot.data_mut()[label] = 1.0;
        let mut b = Bindings::new();
        b.bind(ag.x, x);
        b.bind(ag.selector, &onehot);
        self.bind_params(ag, &mut b);
        let vals = ag.graph.eval(&[ag.loss, ag.loss_input_grad], &b)?;
        Ok((vals[0].item(), vals[1].clone()))
    }

    /// NLL referenced to `label` without gradients.
    pub fn nll(&self, x: &Tensor, label: usize) -> Result<f64> {
        let z = self.logits(x)?;
        Ok(logsumexp(&z) - z.data()[label])
    }

    /// Logits, NLL referenced to `label`, and the loss input-gradient from a
    /// single shared evaluation (one forward pass).
    pub fn logits_loss_and_input_gradient(
        &self,
        x: &Tensor,
        label: usize,
    ) -> Result<(Tensor, f64, Tensor)> {
        self.require_eval()?;
        self.check_input(x)?;
        let n = self.num_classes();
        if label >= n {
            return Err(Error::InvalidConfig(format!(
                "label {label} out of range 0..{n}"
            )));
        }
        let ag = self.analysis();
        let mut onehot = Tensor::zeros(&[n]);
        onehot.data_mut()[label] = 1.0;
        let mut b = Bindings::new();
        b.bind(ag.x, x);
        b.bind(ag.selector, &onehot);
        self.bind_params(ag, &mut b);
        let mut vals = ag.graph.eval(&[ag.logits, ag.loss, ag.loss_input_grad], &b)?;
        let grad = vals.pop().expect("three outputs");
        let loss = vals.pop().expect("two outputs").item();
        let logits = vals.pop().expect("one output");
        Ok((logits, loss, grad))
    }

    /// Smallest |pre-activation| over all ReLU-family layers: the margin to
    /// the nearest activation kink. Tests use this to skip kink-adjacent
    /// samples in finite-difference checks.
    pub fn kink_margin(&self, x: &Tensor) -> Result<f64> {
        self.require_eval()?;
        self.check_input(x)?;
        // Built on demand; cheap relative to the analysis graph and only
        // used by diagnostics.
        let mut graph = Graph::new();
        let xid = graph.var("x", &self.input_shape)?;
        let mut weight_nodes = vec![None; self.layers.len()];
        let mut bias_nodes = vec![None; self.layers.len()];
        let mut binds: Vec<(NodeId, &Tensor)> = Vec::new();
        for (li, p) in self.params.iter().enumerate() {
            if let Some(w) = &p.weight {
                let id = graph.var(&format!("w{li}"), w.shape())?;
                weight_nodes[li] = Some(id);
                binds.push((id, w));
            }
            if let Some(bt) = &p.bias {
                let id = graph.var(&format!("b{li}"), bt.shape())?;
                bias_nodes[li] = Some(id);
                binds.push((id, bt));
            }
        }
        let (_, pres) = build_forward(
            &mut graph,
            &self.layers,
            &self.shapes,
            xid,
            &weight_nodes,
            &bias_nodes,
            None,
        )?;
        if pres.is_empty() {
            return Ok(f64::INFINITY);
        }
        let mut b = Bindings::new();
        b.bind(xid, x);
        for (id, t) in binds {
            b.bind(id, t);
        }
        let vals = graph.eval(&pres, &b)?;
        Ok(vals
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Count of (weight, bias) parameter entries.
    pub fn parameter_counts(&self) -> (usize, usize) {
        (self.theta().len(), self.bias_vector().len())
    }
}

/// Internal access for the training module: the pieces needed to build a
/// training graph over the same architecture.
pub(crate) struct ForwardPlan<'a> {
    pub layers: &'a [LayerSpec],
    pub shapes: &'a [Vec<usize>],
    pub params: &'a [LayerParams],
    pub input_shape: &'a [usize],
}

impl Network {
    pub(crate) fn forward_plan(&self) -> ForwardPlan<'_> {
        ForwardPlan {
            layers: &self.layers,
            shapes: &self.shapes,
            params: &self.params,
            input_shape: &self.input_shape,
        }
    }

    pub(crate) fn build_forward_into(
        graph: &mut Graph,
        plan: &ForwardPlan<'_>,
        x: NodeId,
        weight_nodes: &[Option<NodeId>],
        bias_nodes: &[Option<NodeId>],
        dropout_masks: Option<&[Option<NodeId>]>,
    ) -> Result<NodeId> {
        let (logits, _) = build_forward(
            graph,
            plan.layers,
            plan.shapes,
            x,
            weight_nodes,
            bias_nodes,
            dropout_masks,
        )?;
        Ok(logits)
    }
}
