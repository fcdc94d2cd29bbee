use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, BnCache, Mode, Padding};
use super::Tensor;
use crate::{Error, Result};

pub type NodeId = usize;
pub type ParamId = usize;

/// Output head of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Per-pixel sigmoid producing an H x W x 1 mask.
    PixelMask,
    /// One sigmoid unit per image.
    Classifier,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv2d { kernel: ParamId, bias: ParamId, stride: usize, padding: Padding },
    ConvTranspose2d { kernel: ParamId, bias: ParamId, stride: usize },
    MaxPool2,
    Relu,
    Sigmoid,
    BatchNorm { gamma: ParamId, beta: ParamId, running_mean: ParamId, running_var: ParamId, eps: f64, momentum: f64 },
    Dropout { p: f64 },
    Dense { weights: ParamId, bias: ParamId },
    Flatten,
    Concat,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::MaxPool2 => "maxpool2",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Dropout { .. } => "dropout",
            Op::Dense { .. } => "dense",
            Op::Flatten => "flatten",
            Op::Concat => "concat",
        }
    }

    /// Weight tensor that L2 regularization applies to, if the op has one.
    pub fn weight_param(&self) -> Option<ParamId> {
        match *self {
            Op::Conv2d { kernel, .. } | Op::ConvTranspose2d { kernel, .. } => Some(kernel),
            Op::Dense { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// L2 coefficient on this node's weights (0 = none).
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Batch-norm running statistics are stored but never optimized.
    pub trainable: bool,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Argmax(Vec<usize>),
    Bn(BnCache),
    Mask(Vec<f64>),
    Split(usize),
}

#[derive(Debug, Clone)]
struct ForwardCache {
    values: Vec<Tensor>,
    aux: Vec<Aux>,
}

/// A layer DAG in topological order, its parameters, and the last forward cache.
///
/// Node 0 is the input and the last node is the output.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub nodes: Vec<Node>,
    pub params: Vec<Param>,
    pub input_channels: usize,
    pub head: Head,
    /// Encoder output -> decoder concat pairs.
    pub skips: Vec<(NodeId, NodeId)>,
    seed: u64,
    step: u64,
    cache: Option<ForwardCache>,
}

/// Static shape known while building: spatial extent is optional so fully
/// convolutional graphs accept any input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeShape {
    pub spatial: Option<(usize, usize)>,
    pub channels: usize,
    pub flat: bool,
}

/// Appends layers with seeded He-uniform initialization.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<Param>,
    shapes: Vec<NodeShape>,
    skips: Vec<(NodeId, NodeId)>,
    rng: ChaCha8Rng,
    seed: u64,
    input_channels: usize,
}

impl GraphBuilder {
    pub fn new(input_channels: usize, spatial: Option<(usize, usize)>, seed: u64) -> Self {
        GraphBuilder {
            nodes: vec![Node { name: "input".into(), op: Op::Input, inputs: vec![], l2: 0.0 }],
            params: vec![],
            shapes: vec![NodeShape { spatial, channels: input_channels, flat: false }],
            skips: vec![],
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            input_channels,
        }
    }

    pub const INPUT: NodeId = 0;

    pub fn shape(&self, id: NodeId) -> NodeShape {
        self.shapes[id]
    }

    fn push(&mut self, name: impl Into<String>, op: Op, inputs: Vec<NodeId>, shape: NodeShape) -> NodeId {
        self.nodes.push(Node { name: name.into(), op, inputs, l2: 0.0 });
        self.shapes.push(shape);
        self.nodes.len() - 1
    }

    fn param(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad, trainable });
        self.params.len() - 1
    }

    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let limit = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
    }

    fn spatial_input(&self, x: NodeId, what: &str) -> Result<NodeShape> {
        let s = self.shapes[x];
        if s.flat {
            return Err(Error::Config(format!("{what} needs a spatial input")));
        }
        Ok(s)
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        x: NodeId,
        filters: usize,
        size: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let s = self.spatial_input(x, "conv2d")?;
        let kernel = self.he_uniform(&[size, size, s.channels, filters], size * size * s.channels);
        let kernel = self.param(format!("{name}.kernel"), kernel, true);
        let bias = self.param(format!("{name}.bias"), Tensor::zeros(&[filters]), true);
        let spatial = s.spatial.map(|(h, w)| match padding {
            Padding::Same => (h.div_ceil(stride), w.div_ceil(stride)),
            Padding::Valid => ((h - size) / stride + 1, (w - size) / stride + 1),
        });
        Ok(self.push(
            name,
            Op::Conv2d { kernel, bias, stride, padding },
            vec![x],
            NodeShape { spatial, channels: filters, flat: false },
        ))
    }

    pub fn conv2d_transpose(&mut self, name: &str, x: NodeId, filters: usize, size: usize, stride: usize) -> Result<NodeId> {
        let s = self.spatial_input(x, "conv2d_transpose")?;
        let kernel = self.he_uniform(&[size, size, s.channels, filters], size * size * s.channels);
        let kernel = self.param(format!("{name}.kernel"), kernel, true);
        let bias = self.param(format!("{name}.bias"), Tensor::zeros(&[filters]), true);
        let spatial = s.spatial.map(|(h, w)| ((h - 1) * stride + size, (w - 1) * stride + size));
        Ok(self.push(
            name,
            Op::ConvTranspose2d { kernel, bias, stride },
            vec![x],
            NodeShape { spatial, channels: filters, flat: false },
        ))
    }

    pub fn maxpool2(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let s = self.spatial_input(x, "maxpool2")?;
        let spatial = s.spatial.map(|(h, w)| (h / 2, w / 2));
        Ok(self.push(name, Op::MaxPool2, vec![x], NodeShape { spatial, ..s }))
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> NodeId {
        let s = self.shapes[x];
        self.push(name, Op::Relu, vec![x], s)
    }

    pub fn sigmoid(&mut self, name: &str, x: NodeId) -> NodeId {
        let s = self.shapes[x];
        self.push(name, Op::Sigmoid, vec![x], s)
    }

    pub fn batchnorm(&mut self, name: &str, x: NodeId) -> NodeId {
        let s = self.shapes[x];
        let c = s.channels;
        let gamma = self.param(format!("{name}.gamma"), Tensor::filled(&[c], 1.0), true);
        let beta = self.param(format!("{name}.beta"), Tensor::zeros(&[c]), true);
        let running_mean = self.param(format!("{name}.running_mean"), Tensor::zeros(&[c]), false);
        let running_var = self.param(format!("{name}.running_var"), Tensor::filled(&[c], 1.0), false);
        self.push(
            name,
            Op::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                eps: ops::BatchNormState::DEFAULT_EPS,
                momentum: ops::BatchNormState::DEFAULT_MOMENTUM,
            },
            vec![x],
            s,
        )
    }

    pub fn dropout(&mut self, name: &str, x: NodeId, p: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        let s = self.shapes[x];
        Ok(self.push(name, Op::Dropout { p }, vec![x], s))
    }

    pub fn flatten(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let s = self.shapes[x];
        let features = match (s.flat, s.spatial) {
            (true, _) => s.channels,
            (false, Some((h, w))) => h * w * s.channels,
            (false, None) => return Err(Error::Config("flatten needs a fixed input size".into())),
        };
        Ok(self.push(name, Op::Flatten, vec![x], NodeShape { spatial: None, channels: features, flat: true }))
    }

    pub fn dense(&mut self, name: &str, x: NodeId, units: usize) -> Result<NodeId> {
        let s = self.shapes[x];
        if !s.flat {
            return Err(Error::Config("dense needs a flattened input".into()));
        }
        let weights = self.he_uniform(&[s.channels, units], s.channels);
        let weights = self.param(format!("{name}.weights"), weights, true);
        let bias = self.param(format!("{name}.bias"), Tensor::zeros(&[units]), true);
        Ok(self.push(name, Op::Dense { weights, bias }, vec![x], NodeShape { spatial: None, channels: units, flat: true }))
    }

    /// Channel concat of a decoder tensor `x` with the encoder output `skip`.
    pub fn concat(&mut self, name: &str, x: NodeId, skip: NodeId) -> Result<NodeId> {
        let (a, b) = (self.shapes[x], self.shapes[skip]);
        if a.flat || b.flat || a.spatial != b.spatial {
            return Err(Error::Config(format!("concat {name}: incompatible shapes {a:?} and {b:?}")));
        }
        let id = self.push(
            name,
            Op::Concat,
            vec![x, skip],
            NodeShape { spatial: a.spatial, channels: a.channels + b.channels, flat: false },
        );
        self.skips.push((skip, id));
        Ok(id)
    }

    /// Attaches an L2 coefficient to a weighted node.
    pub fn set_l2(&mut self, node: NodeId, lambda: f64) -> Result<()> {
        if self.nodes[node].op.weight_param().is_none() {
            return Err(Error::Config(format!("node {} has no weights for L2", self.nodes[node].name)));
        }
        self.nodes[node].l2 = lambda;
        Ok(())
    }

    pub fn finish(self, head: Head) -> ModelGraph {
        ModelGraph {
            nodes: self.nodes,
            params: self.params,
            input_channels: self.input_channels,
            head,
            skips: self.skips,
            seed: self.seed,
            step: 0,
            cache: None,
        }
    }
}

impl ModelGraph {
    /// Trainable scalar count: kernels, biases and batch-norm gain/shift.
    pub fn param_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Selects the dropout masks used by subsequent training-mode forwards.
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn output_node(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn param_by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Nodes carrying an L2 coefficient, in graph order.
    pub fn l2_nodes(&self) -> impl Iterator<Item = (&Node, ParamId)> {
        self.nodes.iter().filter(|n| n.l2 > 0.0).filter_map(|n| n.op.weight_param().map(|p| (n, p)))
    }

    fn dropout_seed(&self, node: NodeId) -> u64 {
        // splitmix-style mixing of (graph seed, step, node)
        let mut z = self.seed ^ self.step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (node as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, _, _, c) = input.dims4()?;
        if c != self.input_channels {
            return Err(Error::Shape(format!("model expects {} input channels, got {c}", self.input_channels)));
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut aux = Vec::with_capacity(self.nodes.len());
        for id in 0..self.nodes.len() {
            let node = &self.nodes[id];
            let arg = |k: usize| &values[node.inputs[k]];
            let (out, a) = match node.op {
                Op::Input => (input.clone(), Aux::None),
                Op::Conv2d { kernel, bias, stride, padding } => (
                    ops::conv2d(arg(0), &self.params[kernel].value, &self.params[bias].value, stride, padding)?,
                    Aux::None,
                ),
                Op::ConvTranspose2d { kernel, bias, stride } => (
                    ops::conv2d_transpose(arg(0), &self.params[kernel].value, &self.params[bias].value, stride)?,
                    Aux::None,
                ),
                Op::MaxPool2 => {
                    let (y, idx) = ops::maxpool2(arg(0))?;
                    (y, Aux::Argmax(idx))
                }
                Op::Relu => (ops::relu(arg(0)), Aux::None),
                Op::Sigmoid => (ops::sigmoid(arg(0)), Aux::None),
                Op::BatchNorm { gamma, beta, running_mean, running_var, eps, momentum } => {
                    let g = self.params[gamma].value.data();
                    let b = self.params[beta].value.data();
                    match mode {
                        Mode::Train => {
                            let (y, cache) = ops::batchnorm_train(arg(0), g, b, eps)?;
                            ops::update_running(self.params[running_mean].value.data_mut(), &cache.mean, momentum);
                            ops::update_running(self.params[running_var].value.data_mut(), &cache.var, momentum);
                            (y, Aux::Bn(cache))
                        }
                        Mode::Infer => (
                            ops::batchnorm_infer(
                                arg(0),
                                g,
                                b,
                                self.params[running_mean].value.data(),
                                self.params[running_var].value.data(),
                                eps,
                            )?,
                            Aux::None,
                        ),
                    }
                }
                Op::Dropout { p } => match mode {
                    Mode::Infer => (arg(0).clone(), Aux::None),
                    Mode::Train => {
                        let mask = ops::dropout_mask(arg(0).len(), p, self.dropout_seed(id))?;
                        (ops::apply_mask(arg(0), &mask), Aux::Mask(mask))
                    }
                },
                Op::Dense { weights, bias } => {
                    (ops::dense(arg(0), &self.params[weights].value, &self.params[bias].value)?, Aux::None)
                }
                Op::Flatten => (ops::flatten(arg(0))?, Aux::None),
                Op::Concat => {
                    let a = arg(0);
                    (ops::concat_channels(a, arg(1))?, Aux::Split(a.channels()))
                }
            };
            values.push(out);
            aux.push(a);
        }
        let out = values.last().expect("graph has an input node").clone();
        self.cache = Some(ForwardCache { values, aux });
        Ok(out)
    }

    /// Back-propagates `grad_output` through the last forward pass.
    /// Parameter gradients are accumulated; the input gradient is returned.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| Error::Shape("backward called before forward".into()))?;
        let last = self.nodes.len() - 1;
        if grad_output.shape() != cache.values[last].shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                grad_output.shape(),
                cache.values[last].shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[last] = Some(grad_output.clone());
        for id in (1..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let inputs = self.nodes[id].inputs.clone();
            let x = &cache.values[inputs[0]];
            let push = |grads: &mut Vec<Option<Tensor>>, to: NodeId, t: Tensor| match &mut grads[to] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            };
            match self.nodes[id].op.clone() {
                Op::Input => {}
                Op::Conv2d { kernel, bias, stride, padding } => {
                    let cg = ops::conv2d_backward(x, &self.params[kernel].value, stride, padding, &g)?;
                    self.params[kernel].grad.add_assign(&cg.kernel);
                    self.params[bias].grad.add_assign(&cg.bias);
                    push(&mut grads, inputs[0], cg.input);
                }
                Op::ConvTranspose2d { kernel, bias, stride } => {
                    let cg = ops::conv2d_transpose_backward(x, &self.params[kernel].value, stride, &g)?;
                    self.params[kernel].grad.add_assign(&cg.kernel);
                    self.params[bias].grad.add_assign(&cg.bias);
                    push(&mut grads, inputs[0], cg.input);
                }
                Op::MaxPool2 => {
                    let Aux::Argmax(idx) = &cache.aux[id] else { unreachable!("maxpool cache") };
                    push(&mut grads, inputs[0], ops::maxpool2_backward(x.shape(), idx, &g));
                }
                Op::Relu => push(&mut grads, inputs[0], ops::relu_backward(x, &g)),
                Op::Sigmoid => push(&mut grads, inputs[0], ops::sigmoid_backward(&cache.values[id], &g)),
                Op::BatchNorm { gamma, beta, .. } => {
                    let Aux::Bn(bn) = &cache.aux[id] else {
                        return Err(Error::Shape("backward through batchnorm requires a training-mode forward".into()));
                    };
                    let (gx, gg, gb) = ops::batchnorm_backward(bn, self.params[gamma].value.data(), &g);
                    self.params[gamma].grad.data_mut().iter_mut().zip(&gg).for_each(|(a, v)| *a += v);
                    self.params[beta].grad.data_mut().iter_mut().zip(&gb).for_each(|(a, v)| *a += v);
                    push(&mut grads, inputs[0], gx);
                }
                Op::Dropout { .. } => match &cache.aux[id] {
                    Aux::Mask(mask) => push(&mut grads, inputs[0], ops::apply_mask(&g, mask)),
                    _ => push(&mut grads, inputs[0], g),
                },
                Op::Dense { weights, bias } => {
                    let (gx, gw, gb) = ops::dense_backward(x, &self.params[weights].value, &g)?;
                    self.params[weights].grad.add_assign(&gw);
                    self.params[bias].grad.add_assign(&gb);
                    push(&mut grads, inputs[0], gx);
                }
                Op::Flatten => push(&mut grads, inputs[0], g.reshape(x.shape().to_vec())?),
                Op::Concat => {
                    let Aux::Split(ca) = cache.aux[id] else { unreachable!("concat cache") };
                    let (ga, gb) = ops::split_channels(&g, ca)?;
                    push(&mut grads, inputs[0], ga);
                    push(&mut grads, inputs[1], gb);
                }
            }
        }
        self.cache = Some(cache);
        Ok(grads[0].take().unwrap_or_else(|| Tensor::zeros(input_shape_of(&self.cache))))
    }

    /// Replaces parameter values by name; every stored parameter must be present with the same shape.
    pub fn load_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        for p in &mut self.params {
            let (_, t) = named
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Malformed(format!("checkpoint is missing parameter {:?}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {:?}: checkpoint shape {:?}, model shape {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        if named.len() != self.params.len() {
            return Err(Error::Malformed(format!(
                "checkpoint holds {} parameters, model has {}",
                named.len(),
                self.params.len()
            )));
        }
        Ok(())
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }
}

fn input_shape_of(cache: &Option<ForwardCache>) -> &[usize] {
    cache.as_ref().map(|c| c.values[0].shape()).unwrap_or(&[0])
}
