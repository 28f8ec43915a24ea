use serde::{Deserialize, Serialize};

use super::conv;
use super::tensor::FeatureMap;
use crate::error::{CmdmError, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerKind {
    Conv3x3,
    Conv3x3Stride2,
    /// Nearest-neighbour 2x upsampling followed by a 3x3 convolution.
    UpsampleConv3x3,
    Relu,
    /// Concatenates the activation with index `source` (0 is the network
    /// input, `i` the output of layer `i - 1`) after the current channels.
    ConcatSkip {
        source: usize,
    },
    /// Per-channel additive bias.
    Bias,
    /// Spatial mean per channel, producing a `C x 1 x 1` map.
    GlobalMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn conv(cin: usize, cout: usize) -> Self {
        Self::new(LayerKind::Conv3x3, cin, cout)
    }

    pub fn conv_stride2(cin: usize, cout: usize) -> Self {
        Self::new(LayerKind::Conv3x3Stride2, cin, cout)
    }

    pub fn upsample_conv(cin: usize, cout: usize) -> Self {
        Self::new(LayerKind::UpsampleConv3x3, cin, cout)
    }

    pub fn relu(c: usize) -> Self {
        Self::new(LayerKind::Relu, c, c)
    }

    pub fn bias(c: usize) -> Self {
        Self::new(LayerKind::Bias, c, c)
    }

    pub fn global_mean(c: usize) -> Self {
        Self::new(LayerKind::GlobalMean, c, c)
    }

    pub fn concat(source: usize, cin: usize, source_channels: usize) -> Self {
        Self::new(LayerKind::ConcatSkip { source }, cin, cin + source_channels)
    }

    fn new(kind: LayerKind, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind,
            in_channels,
            out_channels,
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 | LayerKind::Conv3x3Stride2 | LayerKind::UpsampleConv3x3 => {
                self.in_channels * self.out_channels * conv::TAPS
            }
            LayerKind::Bias => self.out_channels,
            _ => 0,
        }
    }

    fn fan_in(&self) -> usize {
        self.in_channels * conv::TAPS
    }
}

/// Parameter gradients, one flat vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub per_layer: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            per_layer: net.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.per_layer
            .iter_mut()
            .flatten()
            .for_each(|g| *g *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.per_layer.iter().flatten().all(|g| g.is_finite())
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_layer.iter().flatten().copied()
    }
}

/// Activation record of a forward pass over a batch.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    layer_count: usize,
    /// `activations[sample][i]`: input at 0, output of layer `i - 1` at `i`.
    activations: Vec<Vec<FeatureMap>>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.activations.len()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: Vec<Vec<f64>>,
    version: u64,
    sign_flip_layer: Option<usize>,
}

/// Equal layers and parameters; the tape version counter is ignored.
impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.params == other.params
            && self.sign_flip_layer == other.sign_flip_layer
    }
}

impl Network {
    /// Network with fan-in scaled uniform (He) weights and zero biases.
    pub fn new(layers: Vec<LayerSpec>, rng: &mut RngStream) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        for (spec, p) in net.layers.iter().zip(net.params.iter_mut()) {
            if matches!(
                spec.kind,
                LayerKind::Conv3x3 | LayerKind::Conv3x3Stride2 | LayerKind::UpsampleConv3x3
            ) {
                let bound = (6.0 / spec.fan_in() as f64).sqrt();
                p.iter_mut()
                    .for_each(|w| *w = rng.uniform_range(-bound, bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        validate(&layers)?;
        let params = layers.iter().map(|l| vec![0.0; l.param_count()]).collect();
        Ok(Self {
            layers,
            params,
            version: 0,
            sign_flip_layer: None,
        })
    }

    pub fn from_parts(layers: Vec<LayerSpec>, params: Vec<Vec<f64>>) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        if params.len() != net.params.len()
            || params
                .iter()
                .zip(&net.params)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(CmdmError::shape(
                "parameter layout of the layer list",
                "different layout",
            ));
        }
        if params.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CmdmError::Numeric("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn input_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_channels)
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    /// Mutable parameter access. Invalidates every outstanding tape.
    pub fn params_mut(&mut self) -> &mut [Vec<f64>] {
        self.version += 1;
        &mut self.params
    }

    pub fn replace_params(&mut self, params: Vec<Vec<f64>>) -> Result<()> {
        let fresh = Network::from_parts(self.layers.clone(), params)?;
        self.version += 1;
        self.params = fresh.params;
        Ok(())
    }

    /// Makes `backward` negate the parameter gradient of one layer. Only
    /// useful as a negative control for [`super::grad_check`].
    pub fn inject_gradient_sign_flip(&mut self, layer: Option<usize>) {
        self.sign_flip_layer = layer;
    }

    fn check_inputs(&self, inputs: &[FeatureMap]) -> Result<()> {
        for x in inputs {
            if x.channels != self.input_channels() {
                return Err(CmdmError::shape(
                    format!("{} input channels", self.input_channels()),
                    x.shape_str(),
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &[FeatureMap]) -> Result<(Vec<FeatureMap>, Tape)> {
        self.check_inputs(inputs)?;
        let activations: Vec<Vec<FeatureMap>> =
            crate::par::map_indexed(inputs, |_, x| self.forward_one(x))
                .into_iter()
                .collect::<Result<_>>()?;
        let outputs = activations
            .iter()
            .map(|a| a.last().expect("input is always recorded").clone())
            .collect();
        Ok((
            outputs,
            Tape {
                version: self.version,
                layer_count: self.layers.len(),
                activations,
            },
        ))
    }

    /// Forward pass without keeping the tape.
    pub fn predict(&self, inputs: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
        self.check_inputs(inputs)?;
        // Each input's activations are dropped as soon as its output is taken.
        crate::par::map_indexed(inputs, |_, x| {
            Ok(self
                .forward_one(x)?
                .pop()
                .expect("input is always recorded"))
        })
        .into_iter()
        .collect()
    }

    fn forward_one(&self, input: &FeatureMap) -> Result<Vec<FeatureMap>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for (i, spec) in self.layers.iter().enumerate() {
            let x = &acts[i];
            let p = &self.params[i];
            let y = match spec.kind {
                LayerKind::Conv3x3 => conv::forward(x, p, spec.out_channels, 1),
                LayerKind::Conv3x3Stride2 => conv::forward(x, p, spec.out_channels, 2),
                LayerKind::UpsampleConv3x3 => {
                    conv::forward(&conv::upsample2x(x), p, spec.out_channels, 1)
                }
                LayerKind::Relu => {
                    let mut y = x.clone();
                    y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                    y
                }
                LayerKind::Bias => {
                    let mut y = x.clone();
                    for (c, b) in p.iter().enumerate() {
                        y.channel_mut(c).iter_mut().for_each(|v| *v += b);
                    }
                    y
                }
                LayerKind::GlobalMean => {
                    let mut y = FeatureMap::zeros(x.channels, 1, 1);
                    for c in 0..x.channels {
                        y.data[c] = x.channel(c).iter().sum::<f64>() / x.plane_len() as f64;
                    }
                    y
                }
                LayerKind::ConcatSkip { source } => {
                    let s = &acts[source];
                    if (s.height, s.width) != (x.height, x.width) {
                        return Err(CmdmError::shape(
                            format!("skip source {}x{}", x.height, x.width),
                            s.shape_str(),
                        ));
                    }
                    let mut data = Vec::with_capacity(x.data.len() + s.data.len());
                    data.extend_from_slice(&x.data);
                    data.extend_from_slice(&s.data);
                    FeatureMap {
                        channels: x.channels + s.channels,
                        height: x.height,
                        width: x.width,
                        data,
                    }
                }
            };
            acts.push(y);
        }
        Ok(acts)
    }

    /// Sign of every ReLU input in the tape, sample by sample.
    pub(crate) fn relu_pattern(&self, tape: &Tape) -> Vec<bool> {
        let mut out = Vec::new();
        for acts in &tape.activations {
            for (i, spec) in self.layers.iter().enumerate() {
                if spec.kind == LayerKind::Relu {
                    out.extend(acts[i].data.iter().map(|&v| v > 0.0));
                }
            }
        }
        out
    }

    /// Parameter gradients (summed over the batch in sample order) and the
    /// gradient with respect to every input.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_outputs: &[FeatureMap],
    ) -> Result<(Gradients, Vec<FeatureMap>)> {
        if tape.version != self.version || tape.layer_count != self.layers.len() {
            return Err(CmdmError::InvalidState(
                "tape was recorded against different parameters".into(),
            ));
        }
        if grad_outputs.len() != tape.activations.len() {
            return Err(CmdmError::shape(
                format!("{} output gradients", tape.activations.len()),
                grad_outputs.len(),
            ));
        }
        let per_sample: Vec<Result<(Gradients, FeatureMap)>> =
            crate::par::map_indexed(&tape.activations, |i, acts| {
                self.backward_one(acts, &grad_outputs[i])
            });
        let mut total = Gradients::zeros_like(self);
        let mut input_grads = Vec::with_capacity(per_sample.len());
        for r in per_sample {
            let (g, gi) = r?;
            total.add_assign(&g);
            input_grads.push(gi);
        }
        if let Some(l) = self.sign_flip_layer {
            total.per_layer[l].iter_mut().for_each(|g| *g = -*g);
        }
        Ok((total, input_grads))
    }

    fn backward_one(
        &self,
        acts: &[FeatureMap],
        grad_out: &FeatureMap,
    ) -> Result<(Gradients, FeatureMap)> {
        let last = acts.last().expect("tape has the input");
        if !last.same_shape(grad_out) {
            return Err(CmdmError::shape(last.shape_str(), grad_out.shape_str()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut act_grads: Vec<Option<FeatureMap>> = vec![None; acts.len()];
        act_grads[acts.len() - 1] = Some(grad_out.clone());
        for i in (0..self.layers.len()).rev() {
            let Some(gy) = act_grads[i + 1].take() else {
                continue;
            };
            let spec = &self.layers[i];
            let x = &acts[i];
            let p = &self.params[i];
            let gx = match spec.kind {
                LayerKind::Conv3x3 => conv::backward(x, p, &gy, 1, &mut grads.per_layer[i]),
                LayerKind::Conv3x3Stride2 => conv::backward(x, p, &gy, 2, &mut grads.per_layer[i]),
                LayerKind::UpsampleConv3x3 => {
                    let up = conv::upsample2x(x);
                    let g_up = conv::backward(&up, p, &gy, 1, &mut grads.per_layer[i]);
                    conv::upsample2x_adjoint(&g_up)
                }
                LayerKind::Relu => {
                    let y = &acts[i + 1];
                    let mut g = gy;
                    g.data.iter_mut().zip(&y.data).for_each(|(g, &v)| {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    g
                }
                LayerKind::Bias => {
                    for (c, gb) in grads.per_layer[i].iter_mut().enumerate() {
                        *gb += gy.channel(c).iter().sum::<f64>();
                    }
                    gy
                }
                LayerKind::GlobalMean => {
                    let mut g = FeatureMap::zeros(x.channels, x.height, x.width);
                    let n = x.plane_len() as f64;
                    for c in 0..x.channels {
                        let v = gy.data[c] / n;
                        g.channel_mut(c).iter_mut().for_each(|e| *e = v);
                    }
                    g
                }
                LayerKind::ConcatSkip { source } => {
                    let split = x.data.len();
                    let head = FeatureMap {
                        channels: x.channels,
                        height: x.height,
                        width: x.width,
                        data: gy.data[..split].to_vec(),
                    };
                    let s = &acts[source];
                    let tail = FeatureMap {
                        channels: s.channels,
                        height: s.height,
                        width: s.width,
                        data: gy.data[split..].to_vec(),
                    };
                    accumulate(&mut act_grads[source], tail);
                    head
                }
            };
            accumulate(&mut act_grads[i], gx);
        }
        let gin = act_grads[0]
            .take()
            .unwrap_or_else(|| FeatureMap::zeros(acts[0].channels, acts[0].height, acts[0].width));
        Ok((grads, gin))
    }
}

fn accumulate(slot: &mut Option<FeatureMap>, g: FeatureMap) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn validate(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(CmdmError::invalid("network needs at least one layer"));
    }
    // channels[i] = channel count of activation i
    let mut channels = vec![layers[0].in_channels];
    for (i, l) in layers.iter().enumerate() {
        if l.in_channels == 0 || l.out_channels == 0 {
            return Err(CmdmError::invalid(format!("layer {i} has zero channels")));
        }
        if l.in_channels != channels[i] {
            return Err(CmdmError::shape(
                format!("layer {i} input of {} channels", channels[i]),
                l.in_channels,
            ));
        }
        match l.kind {
            LayerKind::ConcatSkip { source } => {
                if source > i {
                    return Err(CmdmError::invalid(format!(
                        "layer {i} concatenates a later activation"
                    )));
                }
                if l.out_channels != l.in_channels + channels[source] {
                    return Err(CmdmError::shape(
                        l.in_channels + channels[source],
                        format!("layer {i} output of {}", l.out_channels),
                    ));
                }
            }
            LayerKind::Relu | LayerKind::Bias | LayerKind::GlobalMean => {
                if l.out_channels != l.in_channels {
                    return Err(CmdmError::shape(l.in_channels, l.out_channels));
                }
            }
            _ => {}
        }
        channels.push(l.out_channels);
    }
    Ok(())
}
