//! A small layer graph with parameter and gradient stores.
//!
//! Nodes are kept in topological order: every node's inputs have smaller
//! indices, node 0 is the network input and the last node is the output.
//! A training forward pass caches every intermediate so that [`Network::backward`]
//! can run afterwards; [`Network::infer`] frees intermediates as soon as their
//! last consumer has run.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::layers::{
    activation_backward, activation_forward, bilinear_upsample, bilinear_upsample_backward, conv2d_backward_into,
    conv2d_forward, dropout_backward, dropout_forward, maxpool2x2_backward, maxpool2x2_forward,
    upconv2x2_backward_into, upconv2x2_forward, Activation, ArgmaxRecord, ConvParams, MaskRecord,
};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{concat_channels, split_channels, Shape, Tensor};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Input,
    Conv {
        param: usize,
    },
    UpConv {
        param: usize,
    },
    Activation(Activation),
    MaxPool,
    Dropout {
        rate: f32,
    },
    /// Channel concatenation of `inputs[0]` then `inputs[1]`.
    Concat,
    Upsample {
        scale: usize,
    },
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<NodeId>,
    pub channels: usize,
}

/// One convolution's trainable state.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub conv: ConvParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, seeded per node from `seed`.
    Train {
        seed: u64,
    },
    Eval,
}

enum Record {
    None,
    Pool(ArgmaxRecord),
    Mask(MaskRecord),
}

struct Cache {
    outputs: Vec<Tensor>,
    records: Vec<Record>,
}

pub struct Network {
    nodes: Vec<Node>,
    params: Vec<Param>,
    grads: Vec<ParamGrads>,
    last_use: Vec<usize>,
    cache: Option<Cache>,
}

impl Clone for Network {
    /// Clones structure and parameters; the forward cache is not carried over.
    fn clone(&self) -> Self {
        Self {
            nodes: self.nodes.clone(),
            params: self.params.clone(),
            grads: self.grads.clone(),
            last_use: self.last_use.clone(),
            cache: None,
        }
    }
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("nodes", &self.nodes.len())
            .field("convolutions", &self.conv_count())
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

/// Incremental construction of a [`Network`]. Convolution weights are drawn
/// from `rng` in the order layers are added.
pub struct NetworkBuilder {
    nodes: Vec<Node>,
    params: Vec<Param>,
    rng: Rng,
}

impl NetworkBuilder {
    pub fn new(in_channels: usize, seed: u64) -> Result<Self> {
        if in_channels == 0 {
            return Err(Error::InvalidConfig("input needs at least one channel".into()));
        }
        let input = Node { name: "input".into(), kind: LayerKind::Input, inputs: vec![], channels: in_channels };
        Ok(Self { nodes: vec![input], params: vec![], rng: Rng::new(seed) })
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].channels
    }

    fn push(&mut self, name: impl Into<String>, kind: LayerKind, inputs: Vec<NodeId>, channels: usize) -> NodeId {
        self.nodes.push(Node { name: name.into(), kind, inputs, channels });
        self.nodes.len() - 1
    }

    pub fn conv(
        &mut self,
        name: &str,
        from: NodeId,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let in_c = self.channels(from);
        let conv = ConvParams::he_normal(out_c, in_c, kernel, stride, padding, &mut self.rng)?;
        self.params.push(Param { name: name.into(), conv });
        let param = self.params.len() - 1;
        Ok(self.push(name, LayerKind::Conv { param }, vec![from], out_c))
    }

    pub fn upconv(&mut self, name: &str, from: NodeId) -> Result<NodeId> {
        let in_c = self.channels(from);
        if !in_c.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("{name}: cannot halve {in_c} channels")));
        }
        let conv = ConvParams::he_normal(in_c / 2, in_c, 2, 2, 0, &mut self.rng)?;
        self.params.push(Param { name: name.into(), conv });
        let param = self.params.len() - 1;
        Ok(self.push(name, LayerKind::UpConv { param }, vec![from], in_c / 2))
    }

    pub fn activation(&mut self, name: &str, from: NodeId, kind: Activation) -> Result<NodeId> {
        if let Activation::LeakyRelu(s) = kind {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::InvalidConfig(format!("leaky-ReLU slope must be in (0, 1), got {s}")));
            }
        }
        let c = self.channels(from);
        Ok(self.push(name, LayerKind::Activation(kind), vec![from], c))
    }

    pub fn maxpool(&mut self, name: &str, from: NodeId) -> NodeId {
        let c = self.channels(from);
        self.push(name, LayerKind::MaxPool, vec![from], c)
    }

    pub fn dropout(&mut self, name: &str, from: NodeId, rate: f32) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        let c = self.channels(from);
        Ok(self.push(name, LayerKind::Dropout { rate }, vec![from], c))
    }

    pub fn concat(&mut self, name: &str, first: NodeId, second: NodeId) -> NodeId {
        let c = self.channels(first) + self.channels(second);
        self.push(name, LayerKind::Concat, vec![first, second], c)
    }

    pub fn upsample(&mut self, name: &str, from: NodeId, scale: usize) -> Result<NodeId> {
        if scale == 0 {
            return Err(Error::InvalidConfig("upsampling scale must be >= 1".into()));
        }
        let c = self.channels(from);
        Ok(self.push(name, LayerKind::Upsample { scale }, vec![from], c))
    }

    /// Finishes the graph; the most recently added node is the output.
    pub fn build(self) -> Network {
        let mut last_use: Vec<usize> = (0..self.nodes.len()).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            for &src in &node.inputs {
                last_use[src] = last_use[src].max(i);
            }
        }
        let grads = self
            .params
            .iter()
            .map(|p| ParamGrads { weight: p.conv.weight.zeros_like(), bias: vec![0.0; p.conv.bias.len()] })
            .collect();
        Network { nodes: self.nodes, params: self.params, grads, last_use, cache: None }
    }
}

impl Network {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn grads(&self) -> &[ParamGrads] {
        &self.grads
    }

    pub(crate) fn params_and_grads_mut(&mut self) -> (&mut [Param], &[ParamGrads]) {
        (&mut self.params, &self.grads)
    }

    pub fn in_channels(&self) -> usize {
        self.nodes[0].channels
    }

    pub fn out_channels(&self) -> usize {
        self.nodes.last().map(|n| n.channels).unwrap_or(0)
    }

    /// Convolutions, counting up-convolutions.
    pub fn conv_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, LayerKind::Conv { .. } | LayerKind::UpConv { .. })).count()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.conv.weight.len() + p.conv.bias.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.weight.data_mut().fill(0.0);
            g.bias.fill(0.0);
        }
    }

    pub fn has_forward_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Every parameter value in build order: weights then bias per conv.
    pub fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for p in &self.params {
            out.extend_from_slice(p.conv.weight.data());
            out.extend_from_slice(&p.conv.bias);
        }
        out
    }

    pub fn flat_grads(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for g in &self.grads {
            out.extend_from_slice(g.weight.data());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    /// Copies parameter values (not structure) from a network with the same layout.
    pub fn copy_params_from(&mut self, other: &Network) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::ShapeMismatch("networks have different parameter lists".into()));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.conv.weight.shape() != b.conv.weight.shape() {
                return Err(Error::ShapeMismatch(format!("parameter {} does not match {}", a.name, b.name)));
            }
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.conv = b.conv.clone();
        }
        Ok(())
    }

    /// Which side of every kink the cached forward pass sits on: the sign of
    /// each activation input and each max-pool winner.
    pub(crate) fn kink_pattern(&self) -> Option<Vec<usize>> {
        let cache = self.cache.as_ref()?;
        let mut pattern = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            match (&node.kind, &cache.records[id]) {
                (LayerKind::Activation(_), _) => {
                    pattern.extend(cache.outputs[node.inputs[0]].data().iter().map(|&v| (v > 0.0) as usize));
                }
                (LayerKind::MaxPool, Record::Pool(rec)) => pattern.extend_from_slice(rec.winners()),
                _ => {}
            }
        }
        Some(pattern)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().c != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {:?}",
                self.in_channels(),
                x.shape()
            )));
        }
        Ok(())
    }

    fn eval_node(&self, id: NodeId, outputs: &[Option<Tensor>], mode: Mode) -> Result<(Tensor, Record)> {
        let node = &self.nodes[id];
        let input = |k: usize| -> &Tensor { outputs[node.inputs[k]].as_ref().expect("input evaluated") };
        Ok(match &node.kind {
            LayerKind::Input => unreachable!("input node is never evaluated"),
            LayerKind::Conv { param } => (conv2d_forward(input(0), &self.params[*param].conv)?, Record::None),
            LayerKind::UpConv { param } => (upconv2x2_forward(input(0), &self.params[*param].conv)?, Record::None),
            LayerKind::Activation(a) => (activation_forward(*a, input(0))?, Record::None),
            LayerKind::MaxPool => {
                let (y, rec) = maxpool2x2_forward(input(0))?;
                (y, Record::Pool(rec))
            }
            LayerKind::Dropout { rate } => {
                let (seed, training) = match mode {
                    Mode::Train { seed } => (derive_seed(seed, id as u64), true),
                    Mode::Eval => (0, false),
                };
                let (y, rec) = dropout_forward(input(0), *rate, seed, training)?;
                (y, Record::Mask(rec))
            }
            LayerKind::Concat => (concat_channels(input(0), input(1))?, Record::None),
            LayerKind::Upsample { scale } => (bilinear_upsample(input(0), *scale)?, Record::None),
        })
    }

    /// Forward pass that records everything `backward` needs.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.cache = None;
        self.check_input(x)?;
        let mut outputs: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        let mut records = Vec::with_capacity(self.nodes.len());
        outputs.push(Some(x.clone()));
        records.push(Record::None);
        for id in 1..self.nodes.len() {
            let (y, rec) = self.eval_node(id, &outputs, mode)?;
            outputs.push(Some(y));
            records.push(rec);
        }
        let outputs: Vec<Tensor> = outputs.into_iter().map(|o| o.expect("all nodes evaluated")).collect();
        let out = outputs.last().expect("non-empty graph").clone();
        self.cache = Some(Cache { outputs, records });
        Ok(out)
    }

    /// Inference-mode forward pass without caching.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let last = self.nodes.len() - 1;
        let mut outputs: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        outputs[0] = Some(x.clone());
        for id in 1..self.nodes.len() {
            let (y, _) = self.eval_node(id, &outputs, Mode::Eval)?;
            outputs[id] = Some(y);
            for &src in &self.nodes[id].inputs {
                if self.last_use[src] == id && src != last {
                    outputs[src] = None;
                }
            }
        }
        Ok(outputs[last].take().expect("output evaluated"))
    }

    /// Back-propagates `d_out` through the cached forward pass, accumulating
    /// parameter gradients. Returns the gradient with respect to the input.
    pub fn backward(&mut self, d_out: &Tensor) -> Result<Tensor> {
        self.backward_impl(d_out, true)
    }

    /// Like [`Network::backward`] but leaves the gradient store untouched.
    pub fn backward_input_only(&mut self, d_out: &Tensor) -> Result<Tensor> {
        self.backward_impl(d_out, false)
    }

    fn backward_impl(&mut self, d_out: &Tensor, accumulate: bool) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::StateError("backward called without a preceding forward pass".into()))?;
        let last = self.nodes.len() - 1;
        if d_out.shape() != cache.outputs[last].shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?}, network output {:?}",
                d_out.shape(),
                cache.outputs[last].shape()
            )));
        }
        let mut pending: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        pending[last] = Some(d_out.clone());

        fn deposit(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for id in (1..=last).rev() {
            let Some(grad) = pending[id].take() else { continue };
            let node = &self.nodes[id];
            let input = |k: usize| &cache.outputs[node.inputs[k]];
            match &node.kind {
                LayerKind::Input => unreachable!(),
                LayerKind::Conv { param } => {
                    let g = &mut self.grads[*param];
                    let pg = accumulate.then(|| (g.weight.data_mut(), &mut g.bias[..]));
                    let dx = conv2d_backward_into(input(0), &self.params[*param].conv, &grad, pg, true)?
                        .expect("input gradient requested");
                    deposit(&mut pending[node.inputs[0]], dx)?;
                }
                LayerKind::UpConv { param } => {
                    let g = &mut self.grads[*param];
                    let pg = accumulate.then(|| (g.weight.data_mut(), &mut g.bias[..]));
                    let dx = upconv2x2_backward_into(input(0), &self.params[*param].conv, &grad, pg, true)?
                        .expect("input gradient requested");
                    deposit(&mut pending[node.inputs[0]], dx)?;
                }
                LayerKind::Activation(a) => {
                    let dx = activation_backward(*a, input(0), &grad)?;
                    deposit(&mut pending[node.inputs[0]], dx)?;
                }
                LayerKind::MaxPool => {
                    let Record::Pool(rec) = &cache.records[id] else { unreachable!("pool record") };
                    let dx = maxpool2x2_backward(rec, &grad)?;
                    deposit(&mut pending[node.inputs[0]], dx)?;
                }
                LayerKind::Dropout { .. } => {
                    let Record::Mask(rec) = &cache.records[id] else { unreachable!("mask record") };
                    let dx = dropout_backward(rec, &grad)?;
                    deposit(&mut pending[node.inputs[0]], dx)?;
                }
                LayerKind::Concat => {
                    let (da, db) = split_channels(&grad, input(0).shape().c);
                    deposit(&mut pending[node.inputs[0]], da)?;
                    deposit(&mut pending[node.inputs[1]], db)?;
                }
                LayerKind::Upsample { scale } => {
                    let dx = bilinear_upsample_backward(&grad, input(0).shape(), *scale)?;
                    deposit(&mut pending[node.inputs[0]], dx)?;
                }
            }
        }
        Ok(pending[0].take().unwrap_or_else(|| cache.outputs[0].zeros_like()))
    }
}

const CHECKPOINT_MAGIC: &[u8; 7] = b"ADVSEG1";

/// One record of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: [u32; 4],
    pub values: Vec<f32>,
}

/// Serializes parameters as `ADVSEG1` followed by, per tensor in build order:
/// u32 name length, name bytes, four u32 dims, then the little-endian `f32`
/// values. Each conv contributes `<name>.weight` `(out, in, k, k)` and
/// `<name>.bias` `(out, 1, 1, 1)`.
pub fn write_checkpoint<W: Write>(net: &Network, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    for p in &net.params {
        let ws = p.conv.weight.shape();
        let entries: [(String, [usize; 4], &[f32]); 2] = [
            (format!("{}.weight", p.name), ws.dims(), p.conv.weight.data()),
            (format!("{}.bias", p.name), [p.conv.bias.len(), 1, 1, 1], &p.conv.bias),
        ];
        for (name, dims, values) in entries {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            for d in dims {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(values.len() * 4);
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact_or_format<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::FormatError(format!("truncated checkpoint while reading {what}")),
        _ => Error::Io(e),
    })
}

/// Parses a checkpoint without reference to any network layout.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<CheckpointEntry>> {
    let mut magic = [0u8; 7];
    read_exact_or_format(&mut input, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::FormatError("not an ADVSEG1 checkpoint".into()));
    }
    let mut entries = Vec::new();
    loop {
        let mut len = [0u8; 4];
        // Clean EOF between records ends the file.
        match input.read(&mut len[..1])? {
            0 => break,
            _ => read_exact_or_format(&mut input, &mut len[1..], "name length")?,
        }
        let len = u32::from_le_bytes(len) as usize;
        if len > 4096 {
            return Err(Error::FormatError(format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len];
        read_exact_or_format(&mut input, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| Error::FormatError("parameter name is not UTF-8".into()))?;
        let mut shape = [0u32; 4];
        for d in &mut shape {
            let mut b = [0u8; 4];
            read_exact_or_format(&mut input, &mut b, "shape")?;
            *d = u32::from_le_bytes(b);
        }
        let count: usize = shape.iter().map(|&d| d as usize).product();
        if count == 0 || count > (1 << 30) {
            return Err(Error::FormatError(format!("implausible shape {shape:?} for {name}")));
        }
        let mut raw = vec![0u8; count * 4];
        read_exact_or_format(&mut input, &mut raw, "values")?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        entries.push(CheckpointEntry { name, shape, values });
    }
    Ok(entries)
}

/// Loads checkpoint values into a network whose layout must match exactly.
pub fn load_checkpoint<R: Read>(net: &mut Network, input: R) -> Result<()> {
    let entries = read_checkpoint(input)?;
    if entries.len() != 2 * net.params.len() {
        return Err(Error::FormatError(format!(
            "checkpoint has {} tensors, network needs {}",
            entries.len(),
            2 * net.params.len()
        )));
    }
    let mut loaded = Vec::with_capacity(net.params.len());
    for (p, pair) in net.params.iter().zip(entries.chunks_exact(2)) {
        let (w, b) = (&pair[0], &pair[1]);
        let ws = p.conv.weight.shape();
        let want_w = ws.dims().map(|d| d as u32);
        let want_b = [p.conv.bias.len() as u32, 1, 1, 1];
        if w.name != format!("{}.weight", p.name) || w.shape != want_w {
            return Err(Error::FormatError(format!(
                "expected {}.weight {want_w:?}, found {} {:?}",
                p.name, w.name, w.shape
            )));
        }
        if b.name != format!("{}.bias", p.name) || b.shape != want_b {
            return Err(Error::FormatError(format!(
                "expected {}.bias {want_b:?}, found {} {:?}",
                p.name, b.name, b.shape
            )));
        }
        loaded.push((Tensor::from_vec(ws, w.values.clone())?, b.values.clone()));
    }
    for (p, (w, b)) in net.params.iter_mut().zip(loaded) {
        p.conv.weight = w;
        p.conv.bias = b;
    }
    Ok(())
}

impl Network {
    /// Output shape for an input shape, without running the network.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let mut shapes = vec![input];
        for node in &self.nodes[1..] {
            let s = shapes[node.inputs[0]];
            let next = match &node.kind {
                LayerKind::Input => unreachable!(),
                LayerKind::Conv { param } => {
                    let p = &self.params[*param].conv;
                    let k = p.kernel();
                    let oh = crate::layers::conv_output_size(s.h, k, p.stride, p.padding)?;
                    let ow = crate::layers::conv_output_size(s.w, k, p.stride, p.padding)?;
                    Shape::new(s.n, node.channels, oh, ow)
                }
                LayerKind::UpConv { .. } => Shape::new(s.n, node.channels, 2 * s.h, 2 * s.w),
                LayerKind::MaxPool => {
                    if s.h % 2 != 0 || s.w % 2 != 0 {
                        return Err(Error::InvalidGeometry(format!("{}: odd spatial dims {s:?}", node.name)));
                    }
                    Shape::new(s.n, s.c, s.h / 2, s.w / 2)
                }
                LayerKind::Activation(_) | LayerKind::Dropout { .. } => s,
                LayerKind::Concat => {
                    let t = shapes[node.inputs[1]];
                    if (s.n, s.h, s.w) != (t.n, t.h, t.w) {
                        return Err(Error::ShapeMismatch(format!("{}: {s:?} vs {t:?}", node.name)));
                    }
                    Shape::new(s.n, s.c + t.c, s.h, s.w)
                }
                LayerKind::Upsample { scale } => Shape::new(s.n, s.c, s.h * scale, s.w * scale),
            };
            shapes.push(next);
        }
        Ok(*shapes.last().expect("non-empty graph"))
    }
}
