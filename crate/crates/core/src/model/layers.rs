use serde::{Deserialize, Serialize};

/// Activation shape: `(channels, length)`.
pub type Shape = (usize, usize);

/// Structural description of a layer, without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    /// Flattens its input and applies an affine map.
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    pub fn output_shape(&self, (ch, len): Shape) -> Option<Shape> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if ch != in_channels || len < kernel || stride == 0 {
                    return None;
                }
                Some((out_channels, (len - kernel) / stride + 1))
            }
            LayerSpec::Relu => Some((ch, len)),
            LayerSpec::MaxPool { size } => {
                if size == 0 || len < size {
                    return None;
                }
                Some((ch, len / size))
            }
            LayerSpec::Dense { inputs, outputs } => (ch * len == inputs).then_some((1, outputs)),
        }
    }

    /// `(weight count, bias count)`.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel, out_channels),
            LayerSpec::Dense { inputs, outputs } => (inputs * outputs, outputs),
            LayerSpec::Relu | LayerSpec::MaxPool { .. } => (0, 0),
        }
    }
}

/// A layer together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub frozen: bool,
}

impl Layer {
    pub fn new(spec: LayerSpec) -> Self {
        let (nw, nb) = spec.param_counts();
        Self {
            spec,
            weight: vec![0.0; nw],
            bias: vec![0.0; nb],
            frozen: false,
        }
    }

    pub fn has_params(&self) -> bool {
        !self.weight.is_empty() || !self.bias.is_empty()
    }

    pub(crate) fn forward(&self, input: &[f64], in_shape: Shape, out_shape: Shape) -> Vec<f64> {
        let (in_ch, in_len) = in_shape;
        let (out_ch, out_len) = out_shape;
        match self.spec {
            LayerSpec::Conv1d { kernel, stride, .. } => {
                let mut out = vec![0.0; out_ch * out_len];
                for o in 0..out_ch {
                    let row = &mut out[o * out_len..(o + 1) * out_len];
                    row.fill(self.bias[o]);
                    for i in 0..in_ch {
                        let w =
                            &self.weight[(o * in_ch + i) * kernel..(o * in_ch + i + 1) * kernel];
                        let src = &input[i * in_len..(i + 1) * in_len];
                        for (t, acc) in row.iter_mut().enumerate() {
                            let window = &src[t * stride..t * stride + kernel];
                            *acc += w.iter().zip(window).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                out
            }
            LayerSpec::Relu => input
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect(),
            LayerSpec::MaxPool { size } => {
                let mut out = Vec::with_capacity(out_ch * out_len);
                for c in 0..in_ch {
                    let src = &input[c * in_len..(c + 1) * in_len];
                    for t in 0..out_len {
                        let window = &src[t * size..(t + 1) * size];
                        out.push(window[argmax(window)]);
                    }
                }
                out
            }
            LayerSpec::Dense { inputs, outputs } => (0..outputs)
                .map(|j| {
                    let w = &self.weight[j * inputs..(j + 1) * inputs];
                    self.bias[j] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect(),
        }
    }

    /// Back-propagates `grad_out` through the layer. Parameter gradients are
    /// accumulated into `param_grad` when given.
    pub(crate) fn backward(
        &self,
        input: &[f64],
        in_shape: Shape,
        out_shape: Shape,
        grad_out: &[f64],
        param_grad: Option<(&mut [f64], &mut [f64])>,
    ) -> Vec<f64> {
        let (in_ch, in_len) = in_shape;
        let (out_ch, out_len) = out_shape;
        match self.spec {
            LayerSpec::Conv1d { kernel, stride, .. } => {
                let mut grad_in = vec![0.0; in_ch * in_len];
                for o in 0..out_ch {
                    let g = &grad_out[o * out_len..(o + 1) * out_len];
                    for i in 0..in_ch {
                        let w =
                            &self.weight[(o * in_ch + i) * kernel..(o * in_ch + i + 1) * kernel];
                        let dst = &mut grad_in[i * in_len..(i + 1) * in_len];
                        for (t, &gt) in g.iter().enumerate() {
                            if gt == 0.0 {
                                continue;
                            }
                            for (d, wk) in dst[t * stride..t * stride + kernel].iter_mut().zip(w) {
                                *d += gt * wk;
                            }
                        }
                    }
                }
                if let Some((gw, gb)) = param_grad {
                    for o in 0..out_ch {
                        let g = &grad_out[o * out_len..(o + 1) * out_len];
                        gb[o] += g.iter().sum::<f64>();
                        for i in 0..in_ch {
                            let src = &input[i * in_len..(i + 1) * in_len];
                            let dw =
                                &mut gw[(o * in_ch + i) * kernel..(o * in_ch + i + 1) * kernel];
                            for (t, &gt) in g.iter().enumerate() {
                                if gt == 0.0 {
                                    continue;
                                }
                                for (d, x) in
                                    dw.iter_mut().zip(&src[t * stride..t * stride + kernel])
                                {
                                    *d += gt * x;
                                }
                            }
                        }
                    }
                }
                grad_in
            }
            LayerSpec::Relu => input
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            LayerSpec::MaxPool { size } => {
                let mut grad_in = vec![0.0; in_ch * in_len];
                for c in 0..in_ch {
                    let src = &input[c * in_len..(c + 1) * in_len];
                    for t in 0..out_len {
                        let k = argmax(&src[t * size..(t + 1) * size]);
                        grad_in[c * in_len + t * size + k] += grad_out[c * out_len + t];
                    }
                }
                grad_in
            }
            LayerSpec::Dense { inputs, outputs } => {
                let mut grad_in = vec![0.0; inputs];
                for (j, &g) in grad_out.iter().enumerate().take(outputs) {
                    if g == 0.0 {
                        continue;
                    }
                    let w = &self.weight[j * inputs..(j + 1) * inputs];
                    for (d, wk) in grad_in.iter_mut().zip(w) {
                        *d += g * wk;
                    }
                }
                if let Some((gw, gb)) = param_grad {
                    for j in 0..outputs {
                        let g = grad_out[j];
                        gb[j] += g;
                        for (d, x) in gw[j * inputs..(j + 1) * inputs].iter_mut().zip(input) {
                            *d += g * x;
                        }
                    }
                }
                grad_in
            }
        }
    }

    /// Appends the layer's piecewise-linear region indicators: ReLU masks and
    /// pooling winners.
    pub(crate) fn region(
        &self,
        input: &[f64],
        in_shape: Shape,
        out_shape: Shape,
        out: &mut Vec<u32>,
    ) {
        match self.spec {
            LayerSpec::Relu => out.extend(input.iter().map(|&x| u32::from(x > 0.0))),
            LayerSpec::MaxPool { size } => {
                for c in 0..in_shape.0 {
                    let src = &input[c * in_shape.1..(c + 1) * in_shape.1];
                    for t in 0..out_shape.1 {
                        out.push(argmax(&src[t * size..(t + 1) * size]) as u32);
                    }
                }
            }
            _ => {}
        }
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
