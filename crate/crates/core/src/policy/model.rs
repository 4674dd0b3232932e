use std::collections::VecDeque;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::config::{EncoderKind, PolicyConfig};
use crate::env::geometry::MAX_STEP;
use crate::env::{GripperCommand, Observation, ProprioState, Vec3, GRID_CELLS};
use crate::nn::{
    check_finite, read_checkpoint, softmax, write_checkpoint, Activation, ConcreteDropout, Conv2d,
    Conv2dCache, Dense, DenseCache, DropoutCache, LayerDesc, LstmCache, LstmCell, LstmMemory,
    Param, Parameterized,
};
use crate::nn::{visit_child, visit_child_mut};
use crate::rng::{open_uniforms, rng_for, stream, Rng};
use crate::{Error, Result};

pub const HEAD_NAMES: [&str; 4] = ["delta_ee", "gripper", "q_obj", "q_ee"];

/// Raw head outputs. `delta_ee` is in units of the per-tick step limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadOutputs {
    pub delta_ee: [f64; 3],
    pub grip_logits: [f64; 3],
    pub q_obj: [f64; 3],
    pub q_ee: [f64; 3],
}

impl HeadOutputs {
    fn from_vecs(v: [Vec<f64>; 4]) -> Self {
        let arr = |x: &[f64]| [x[0], x[1], x[2]];
        Self {
            delta_ee: arr(&v[0]),
            grip_logits: arr(&v[1]),
            q_obj: arr(&v[2]),
            q_ee: arr(&v[3]),
        }
    }

    /// End-effector displacement in workspace units.
    pub fn delta_world(&self) -> Vec3 {
        Vec3::from(self.delta_ee) * MAX_STEP
    }

    pub fn grip_probs(&self) -> [f64; 3] {
        let p = softmax(&self.grip_logits);
        [p[0], p[1], p[2]]
    }

    pub fn gripper(&self) -> GripperCommand {
        let mut best = 0;
        for k in 1..3 {
            if self.grip_logits[k] > self.grip_logits[best] {
                best = k;
            }
        }
        GripperCommand::from_class(best).expect("three gripper classes")
    }
}

/// The last `K` observations, oldest first. At episode start the first
/// observation is repeated to fill the buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBuffer {
    frames: VecDeque<Vec<f64>>,
    capacity: usize,
}

impl FrameBuffer {
    pub fn new(capacity: usize, first: &Observation) -> Self {
        let frames = std::iter::repeat_n(first.as_slice().to_vec(), capacity).collect();
        Self { frames, capacity }
    }

    pub fn push(&mut self, obs: &Observation) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(obs.as_slice().to_vec());
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.frames.iter().map(|f| f.as_slice())
    }

    /// Channel-wise concatenation of the buffered frames.
    pub fn stacked(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.iter().copied()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Encoder {
    Grid { conv1: Conv2d, conv2: Conv2d, fc: Dense },
    State { fc: Dense },
}

enum EncoderCache {
    Grid(Conv2dCache, Conv2dCache, DenseCache),
    State(DenseCache),
}

impl Encoder {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Encoder::Grid { conv1, conv2, fc } => fc.forward(&conv2.forward(&conv1.forward(x)?)?),
            Encoder::State { fc } => fc.forward(x),
        }
    }

    fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, EncoderCache)> {
        match self {
            Encoder::Grid { conv1, conv2, fc } => {
                let (a, c1) = conv1.forward_cached(x)?;
                let (b, c2) = conv2.forward_cached(&a)?;
                let (f, c3) = fc.forward_cached(&b)?;
                Ok((f, EncoderCache::Grid(c1, c2, c3)))
            }
            Encoder::State { fc } => {
                let (f, c) = fc.forward_cached(x)?;
                Ok((f, EncoderCache::State(c)))
            }
        }
    }

    fn backward(&mut self, cache: &EncoderCache, dy: &[f64]) {
        match (self, cache) {
            (Encoder::Grid { conv1, conv2, fc }, EncoderCache::Grid(c1, c2, c3)) => {
                let db = fc.backward(c3, dy, true);
                let da = conv2.backward(c2, &db, true);
                conv1.backward(c1, &da, false);
            }
            (Encoder::State { fc }, EncoderCache::State(c)) => {
                fc.backward(c, dy, false);
            }
            _ => unreachable!("encoder cache kind mismatch"),
        }
    }

    fn describe(&self, out: &mut Vec<LayerDesc>) {
        let desc = |name: &str, kind: &str, dims: Vec<usize>| LayerDesc {
            name: name.into(),
            kind: kind.into(),
            dims,
        };
        match self {
            Encoder::Grid { conv1, conv2, fc } => {
                out.push(desc("encoder.conv1", "conv2d", conv1.dims().to_vec()));
                out.push(desc("encoder.conv2", "conv2d", conv2.dims().to_vec()));
                out.push(desc("encoder.fc", "dense", vec![fc.in_dim(), fc.out_dim()]));
            }
            Encoder::State { fc } => {
                out.push(desc("encoder.fc", "dense", vec![fc.in_dim(), fc.out_dim()]));
            }
        }
    }
}

impl Parameterized for Encoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            Encoder::Grid { conv1, conv2, fc } => {
                visit_child(conv1, "conv1", f);
                visit_child(conv2, "conv2", f);
                visit_child(fc, "fc", f);
            }
            Encoder::State { fc } => visit_child(fc, "fc", f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            Encoder::Grid { conv1, conv2, fc } => {
                visit_child_mut(conv1, "conv1", f);
                visit_child_mut(conv2, "conv2", f);
                visit_child_mut(fc, "fc", f);
            }
            Encoder::State { fc } => visit_child_mut(fc, "fc", f),
        }
    }
}

/// A concrete-dropout layer followed by the dense layer it regularizes.
#[derive(Clone, Debug, PartialEq)]
pub struct StackLayer {
    pub dropout: ConcreteDropout,
    pub dense: Dense,
}

/// Per-tick activations kept for backpropagation through time.
pub(crate) struct TickCache {
    encoder: EncoderCache,
    lstm: LstmCache,
    stack: Vec<(DropoutCache, DenseCache)>,
    heads: Vec<DenseCache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    config: PolicyConfig,
    train_ticks: usize,
    encoder: Encoder,
    pub lstm: LstmCell,
    pub stack: Vec<StackLayer>,
    pub heads: Vec<Dense>,
}

impl PolicyModel {
    /// Fresh model. `train_ticks` is the number of supervised ticks the
    /// model will be trained on; it scales the dropout regularizers.
    pub fn new(config: PolicyConfig, train_ticks: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[stream::INIT]);
        let k = config.frames;
        let encoder = match config.encoder_kind() {
            EncoderKind::GridConv => {
                let [c0, c1] = config.conv_channels;
                let conv1 = Conv2d::init(3 * k, GRID_CELLS, GRID_CELLS, c0, 3, 2, 1, Activation::Relu, &mut rng);
                let conv2 = Conv2d::init(c0, conv1.out_h(), conv1.out_w(), c1, 3, 2, 1, Activation::Relu, &mut rng);
                let fc = Dense::init(conv2.out_len(), config.feature_width, Activation::Tanh, &mut rng);
                Encoder::Grid { conv1, conv2, fc }
            }
            EncoderKind::StateDense => Encoder::State {
                fc: Dense::init(k * config.frame_len(), config.feature_width, Activation::Tanh, &mut rng),
            },
        };
        let lstm = LstmCell::init(config.state_width(), config.lstm_width, &mut rng);
        let mut stack = Vec::with_capacity(config.n_dropout_layers);
        let mut width = config.lstm_width;
        for _ in 0..config.n_dropout_layers {
            stack.push(StackLayer {
                dropout: ConcreteDropout::from_config(&config.dropout, train_ticks)?,
                dense: Dense::init(width, config.fc_width, Activation::Relu, &mut rng),
            });
            width = config.fc_width;
        }
        let heads = (0..4)
            .map(|_| Dense::init(width, 3, Activation::Identity, &mut rng))
            .collect();
        Ok(Self {
            config,
            train_ticks,
            encoder,
            lstm,
            stack,
            heads,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn train_ticks(&self) -> usize {
        self.train_ticks
    }

    pub fn dropout_rates(&self) -> Vec<f64> {
        self.stack.iter().map(|l| l.dropout.rate()).collect()
    }

    pub fn input_len(&self) -> usize {
        self.config.frames * self.config.frame_len()
    }

    fn state_from_features(&self, features: Vec<f64>, proprio: &ProprioState) -> Vec<f64> {
        let mut s = features;
        s.reserve(4 * self.config.proprio_tile);
        let p = proprio.to_array();
        for _ in 0..self.config.proprio_tile {
            s.extend_from_slice(&p);
        }
        s
    }

    fn check_input(&self, stacked: &[f64]) -> Result<()> {
        if stacked.len() != self.input_len() {
            return Err(Error::dim(
                "frame buffer (frames x frame length)",
                self.input_len(),
                stacked.len(),
            ));
        }
        Ok(())
    }

    /// State representation from channel-stacked frames and proprioception.
    pub fn encode(&self, stacked: &[f64], proprio: &ProprioState) -> Result<Vec<f64>> {
        self.check_input(stacked)?;
        let f = self.encoder.forward(stacked)?;
        check_finite(&f, "encoder")?;
        Ok(self.state_from_features(f, proprio))
    }

    pub fn encode_buffer(&self, buffer: &FrameBuffer, proprio: &ProprioState) -> Result<Vec<f64>> {
        if buffer.len() != self.config.frames {
            return Err(Error::dim("frame buffer length", self.config.frames, buffer.len()));
        }
        self.encode(&buffer.stacked(), proprio)
    }

    /// Advances the recurrent memory; returns the embedding and new memory.
    pub fn lstm_step(&self, s: &[f64], mem: &LstmMemory) -> Result<(Vec<f64>, LstmMemory)> {
        let (e, next) = self.lstm.step(s, mem)?;
        check_finite(&e, "lstm")?;
        Ok((e, next))
    }

    /// Draws one set of uniforms per dropout layer.
    pub fn draw_noise(&self, rng: &mut Rng) -> Vec<Vec<f64>> {
        let mut width = self.config.lstm_width;
        let mut out = Vec::with_capacity(self.stack.len());
        for layer in &self.stack {
            out.push(open_uniforms(rng, width));
            width = layer.dense.out_dim();
        }
        out
    }

    /// Dropout stack and heads. `noise = None` evaluates the gates at their
    /// expectation.
    pub fn decode_with(&self, e: &[f64], noise: Option<&[Vec<f64>]>) -> Result<HeadOutputs> {
        let mut h = e.to_vec();
        for (i, layer) in self.stack.iter().enumerate() {
            h = match noise {
                Some(n) => {
                    let u = n.get(i).ok_or_else(|| Error::dim("dropout noise layers", self.stack.len(), n.len()))?;
                    layer.dropout.forward(&h, u)?
                }
                None => layer.dropout.forward_expected(&h),
            };
            h = layer.dense.forward(&h)?;
            check_finite(&h, &format!("stack.{i}"))?;
        }
        let outs = self.heads_forward(&h)?;
        Ok(HeadOutputs::from_vecs(outs))
    }

    fn heads_forward(&self, h: &[f64]) -> Result<[Vec<f64>; 4]> {
        let mut outs: [Vec<f64>; 4] = Default::default();
        for (k, head) in self.heads.iter().enumerate() {
            outs[k] = head.forward(h)?;
            check_finite(&outs[k], &format!("heads.{}", HEAD_NAMES[k]))?;
        }
        Ok(outs)
    }

    pub fn decode(&self, e: &[f64], rng: Option<&mut Rng>) -> Result<HeadOutputs> {
        match rng {
            Some(r) => {
                let noise = self.draw_noise(r);
                self.decode_with(e, Some(&noise))
            }
            None => self.decode_with(e, None),
        }
    }

    /// One full tick: recurrent update then the (optionally stochastic)
    /// decoder. Returns head outputs, the embedding and the next memory.
    pub fn policy_step(
        &self,
        s: &[f64],
        mem: &LstmMemory,
        rng: Option<&mut Rng>,
    ) -> Result<(HeadOutputs, Vec<f64>, LstmMemory)> {
        let (e, next) = self.lstm_step(s, mem)?;
        let out = self.decode(&e, rng)?;
        Ok((out, e, next))
    }

    /// Training forward pass for one tick with explicit dropout noise.
    pub(crate) fn forward_tick(
        &self,
        stacked: &[f64],
        proprio: &ProprioState,
        mem: &LstmMemory,
        noise: &[Vec<f64>],
    ) -> Result<([Vec<f64>; 4], LstmMemory, TickCache)> {
        self.check_input(stacked)?;
        let (f, enc_cache) = self.encoder.forward_cached(stacked)?;
        let s = self.state_from_features(f, proprio);
        let (e, next, lstm_cache) = self.lstm.step_cached(&s, mem)?;
        let mut h = e;
        let mut stack_cache = Vec::with_capacity(self.stack.len());
        for (layer, u) in self.stack.iter().zip(noise) {
            let (d, dc) = layer.dropout.forward_cached(&h, u)?;
            let (o, oc) = layer.dense.forward_cached(&d)?;
            stack_cache.push((dc, oc));
            h = o;
        }
        let mut outs: [Vec<f64>; 4] = Default::default();
        let mut head_cache = Vec::with_capacity(4);
        for (k, head) in self.heads.iter().enumerate() {
            let (o, c) = head.forward_cached(&h)?;
            outs[k] = o;
            head_cache.push(c);
        }
        Ok((
            outs,
            next,
            TickCache {
                encoder: enc_cache,
                lstm: lstm_cache,
                stack: stack_cache,
                heads: head_cache,
            },
        ))
    }

    /// Backward through one tick. `dheads` are loss gradients at the head
    /// outputs, `(dh_next, dc_next)` the recurrent gradients arriving from
    /// the following tick. Returns the recurrent gradients for the previous
    /// tick.
    pub(crate) fn backward_tick(
        &mut self,
        cache: &TickCache,
        dheads: &[Vec<f64>; 4],
        dh_next: &[f64],
        dc_next: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let width = self.heads[0].in_dim();
        let mut dh = vec![0.0; width];
        for ((head, c), dy) in self.heads.iter_mut().zip(&cache.heads).zip(dheads) {
            let dx = head.backward(c, dy, true);
            dh.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
        for (layer, (dc, oc)) in self.stack.iter_mut().zip(&cache.stack).rev() {
            let d = layer.dense.backward(oc, &dh, true);
            dh = layer.dropout.backward(dc, &d);
        }
        dh.iter_mut().zip(dh_next).for_each(|(a, b)| *a += b);
        let (ds, dh_prev, dc_prev) = self.lstm.backward_step(&cache.lstm, &dh, dc_next, true);
        let feat = self.config.feature_width;
        self.encoder.backward(&cache.encoder, &ds[..feat]);
        (dh_prev, dc_prev)
    }

    /// Sum of the dropout regularizers.
    pub fn regularizer(&self) -> f64 {
        self.stack.iter().map(|l| l.dropout.regularizer(&l.dense)).sum()
    }

    pub fn regularizer_backward(&mut self, scale: f64) {
        for l in &mut self.stack {
            l.dropout.regularizer_backward(&mut l.dense, scale);
        }
    }

    pub fn describe(&self) -> Vec<LayerDesc> {
        let mut out = Vec::new();
        self.encoder.describe(&mut out);
        out.push(LayerDesc {
            name: "lstm".into(),
            kind: "lstm".into(),
            dims: vec![self.lstm.input_dim(), self.lstm.hidden_dim()],
        });
        for (i, l) in self.stack.iter().enumerate() {
            out.push(LayerDesc {
                name: format!("stack.{i}.dropout"),
                kind: "concrete_dropout".into(),
                dims: vec![l.dense.in_dim()],
            });
            out.push(LayerDesc {
                name: format!("stack.{i}.dense"),
                kind: "dense".into(),
                dims: vec![l.dense.in_dim(), l.dense.out_dim()],
            });
        }
        for (k, h) in self.heads.iter().enumerate() {
            out.push(LayerDesc {
                name: format!("heads.{}", HEAD_NAMES[k]),
                kind: "dense".into(),
                dims: vec![h.in_dim(), h.out_dim()],
            });
        }
        out
    }
}

impl Parameterized for PolicyModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child(&self.encoder, "encoder", f);
        visit_child(&self.lstm, "lstm", f);
        for (i, l) in self.stack.iter().enumerate() {
            visit_child(&l.dropout, &format!("stack.{i}.dropout"), f);
            visit_child(&l.dense, &format!("stack.{i}.dense"), f);
        }
        for (k, h) in self.heads.iter().enumerate() {
            visit_child(h, &format!("heads.{}", HEAD_NAMES[k]), f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut(&mut self.encoder, "encoder", f);
        visit_child_mut(&mut self.lstm, "lstm", f);
        for (i, l) in self.stack.iter_mut().enumerate() {
            visit_child_mut(&mut l.dropout, &format!("stack.{i}.dropout"), f);
            visit_child_mut(&mut l.dense, &format!("stack.{i}.dense"), f);
        }
        for (k, h) in self.heads.iter_mut().enumerate() {
            visit_child_mut(h, &format!("heads.{}", HEAD_NAMES[k]), f);
        }
    }
}

/// Architecture description stored ahead of the policy weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeader {
    pub kind: String,
    pub config: PolicyConfig,
    pub encoder: EncoderKind,
    pub train_ticks: usize,
    pub layers: Vec<LayerDesc>,
}

pub fn save_policy<W: Write>(w: W, model: &PolicyModel) -> Result<()> {
    let header = PolicyHeader {
        kind: "policy".into(),
        config: model.config.clone(),
        encoder: model.config.encoder_kind(),
        train_ticks: model.train_ticks,
        layers: model.describe(),
    };
    write_checkpoint(w, &header, &model.flat_values())
}

pub fn load_policy<R: Read>(r: R) -> Result<PolicyModel> {
    let (header, values): (PolicyHeader, Vec<f64>) = read_checkpoint(r)?;
    if header.kind != "policy" {
        return Err(Error::Format(format!("expected a policy checkpoint, found `{}`", header.kind)));
    }
    let mut model = PolicyModel::new(header.config, header.train_ticks, 0)?;
    if model.describe() != header.layers {
        return Err(Error::Format("checkpoint layer table does not match its config".into()));
    }
    model.set_flat_values(&values)?;
    Ok(model)
}
