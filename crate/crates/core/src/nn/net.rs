//! Feed-forward networks over a single flat parameter buffer.
//!
//! Forward passes return a [`Tape`] of per-layer caches instead of mutating
//! the network, so one network can be applied several times inside a single
//! optimization step (as the cycle losses require) and each application can
//! be back-propagated independently.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::scalar::{matmul, matmul_at, matmul_bt, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv { in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize, offset: usize },
    Linear { in_f: usize, out_f: usize, offset: usize },
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Upsample2x,
    GlobalAvgPool,
    Residual(Vec<Layer>),
}

#[derive(Debug, Clone, Copy)]
struct InitRecord {
    offset: usize,
    weights: usize,
    fan_in: usize,
    zero: bool,
}

/// Collects layers and assigns parameter offsets.
#[derive(Debug)]
pub struct NetBuilder {
    stack: Vec<Vec<Layer>>,
    inits: Vec<InitRecord>,
    offset: usize,
}

impl Default for NetBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl NetBuilder {
    pub fn new() -> Self {
        NetBuilder { stack: vec![Vec::new()], inits: Vec::new(), offset: 0 }
    }

    fn push(mut self, layer: Layer) -> Self {
        self.stack.last_mut().expect("builder stack").push(layer);
        self
    }

    fn conv_with(mut self, in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize, zero: bool) -> Self {
        let offset = self.offset;
        let weights = out_c * in_c * kernel * kernel;
        self.inits.push(InitRecord { offset, weights, fan_in: in_c * kernel * kernel, zero });
        self.offset += weights + out_c;
        self.push(Layer::Conv { in_c, out_c, kernel, stride, pad, offset })
    }

    pub fn conv(self, in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        self.conv_with(in_c, out_c, kernel, stride, pad, false)
    }

    /// Convolution whose weights and bias start at zero.
    pub fn conv_zero(self, in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        self.conv_with(in_c, out_c, kernel, stride, pad, true)
    }

    pub fn linear(mut self, in_f: usize, out_f: usize) -> Self {
        let offset = self.offset;
        self.inits.push(InitRecord { offset, weights: in_f * out_f, fan_in: in_f, zero: false });
        self.offset += in_f * out_f + out_f;
        self.push(Layer::Linear { in_f, out_f, offset })
    }

    pub fn relu(self) -> Self {
        self.push(Layer::Relu)
    }

    pub fn leaky_relu(self, slope: f64) -> Self {
        self.push(Layer::LeakyRelu(slope))
    }

    pub fn tanh(self) -> Self {
        self.push(Layer::Tanh)
    }

    pub fn sigmoid(self) -> Self {
        self.push(Layer::Sigmoid)
    }

    pub fn upsample2x(self) -> Self {
        self.push(Layer::Upsample2x)
    }

    pub fn global_avg_pool(self) -> Self {
        self.push(Layer::GlobalAvgPool)
    }

    /// Layers added until `end_residual` form the body of `x + body(x)`.
    pub fn begin_residual(mut self) -> Self {
        self.stack.push(Vec::new());
        self
    }

    pub fn end_residual(mut self) -> Self {
        let body = self.stack.pop().expect("unbalanced residual");
        assert!(!self.stack.is_empty(), "end_residual without begin_residual");
        self.push(Layer::Residual(body))
    }

    pub fn param_count(&self) -> usize {
        self.offset
    }

    /// He-normal weights, zero biases; layers added with `conv_zero` stay zero.
    pub fn build<T: Scalar, R: Rng>(mut self, rng: &mut R) -> Net<T> {
        assert_eq!(self.stack.len(), 1, "unclosed residual block");
        let mut params = vec![T::zero(); self.offset];
        for rec in &self.inits {
            if rec.zero {
                continue;
            }
            let normal = Normal::new(0.0, (2.0 / rec.fan_in as f64).sqrt()).expect("valid std");
            for p in &mut params[rec.offset..rec.offset + rec.weights] {
                *p = T::lit(normal.sample(rng));
            }
        }
        Net { layers: self.stack.pop().unwrap(), params }
    }
}

/// Per-layer values needed by the backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Conv { cols: Vec<T>, in_shape: [usize; 4], out_hw: (usize, usize) },
    Linear { input: Vec<T>, in_shape: [usize; 4] },
    Relu { output: Vec<T> },
    LeakyRelu { input: Vec<T> },
    Tanh { output: Vec<T> },
    Sigmoid { output: Vec<T> },
    Upsample { in_shape: [usize; 4] },
    Pool { in_shape: [usize; 4] },
    Residual(Vec<Cache<T>>),
}

pub type Tape<T> = Vec<Cache<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Net<T> {
    pub layers: Vec<Layer>,
    pub params: Vec<T>,
}

impl<T: Scalar> Net<T> {
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&self) -> Vec<T> {
        vec![T::zero(); self.params.len()]
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Tape<T>) {
        run_forward(&self.layers, &self.params, x.clone())
    }

    /// Forward pass that drops caches layer by layer.
    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = forward_layer(layer, &self.params, cur).0;
        }
        cur
    }

    /// Accumulates parameter gradients into `grads` and returns d(loss)/d(input).
    pub fn backward(&self, tape: &Tape<T>, grad_out: Tensor<T>, grads: &mut [T]) -> Tensor<T> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer length");
        run_backward(&self.layers, &self.params, tape, grad_out, grads)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

fn run_forward<T: Scalar>(layers: &[Layer], params: &[T], x: Tensor<T>) -> (Tensor<T>, Tape<T>) {
    let mut tape = Vec::with_capacity(layers.len());
    let mut cur = x;
    for layer in layers {
        let (y, cache) = forward_layer(layer, params, cur);
        tape.push(cache);
        cur = y;
    }
    (cur, tape)
}

fn run_backward<T: Scalar>(layers: &[Layer], params: &[T], tape: &Tape<T>, grad_out: Tensor<T>, grads: &mut [T]) -> Tensor<T> {
    assert_eq!(layers.len(), tape.len(), "tape does not belong to this network");
    let mut g = grad_out;
    for (layer, cache) in layers.iter().zip(tape).rev() {
        g = backward_layer(layer, params, cache, g, grads);
    }
    g
}

fn out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(input + 2 * pad >= kernel, "convolution kernel larger than padded input");
    (input + 2 * pad - kernel) / stride + 1
}

fn im2col<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Vec<T> {
    let (c_in, n, h, w) = (x.channels, x.batch, x.height, x.width);
    let cols_n = n * ho * wo;
    let mut cols = vec![T::zero(); c_in * kernel * kernel * cols_n];
    for c in 0..c_in {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..n {
                    let src = &x.data[(c * n + b) * h * w..(c * n + b + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], shape: [usize; 4], kernel: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Tensor<T> {
    let [c_in, n, h, w] = shape;
    let cols_n = n * ho * wo;
    let mut dx = Tensor::zeros(c_in, n, h, w);
    for c in 0..c_in {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..n {
                    let dst = &mut dx.data[(c * n + b) * h * w..(c * n + b + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn forward_layer<T: Scalar>(layer: &Layer, params: &[T], x: Tensor<T>) -> (Tensor<T>, Cache<T>) {
    match *layer {
        Layer::Conv { in_c, out_c, kernel, stride, pad, offset } => {
            assert_eq!(x.channels, in_c, "conv input channels");
            let ho = out_size(x.height, kernel, stride, pad);
            let wo = out_size(x.width, kernel, stride, pad);
            let cols = im2col(&x, kernel, stride, pad, ho, wo);
            let kk = in_c * kernel * kernel;
            let l = x.batch * ho * wo;
            let weights = &params[offset..offset + out_c * kk];
            let bias = &params[offset + out_c * kk..offset + out_c * kk + out_c];
            let mut y = Tensor::zeros(out_c, x.batch, ho, wo);
            for (o, row) in y.data.chunks_mut(l).enumerate() {
                row.fill(bias[o]);
            }
            matmul(out_c, kk, l, weights, &cols, &mut y.data, true);
            (y, Cache::Conv { cols, in_shape: x.shape(), out_hw: (ho, wo) })
        }
        Layer::Linear { in_f, out_f, offset } => {
            let n = x.batch;
            let in_shape = x.shape();
            assert_eq!(x.channels * x.plane(), in_f, "linear input features");
            // features-major [in_f, n]; spatial planes are flattened into features
            let input = if x.plane() == 1 { x.data } else { flatten_features(&x) };
            let weights = &params[offset..offset + out_f * in_f];
            let bias = &params[offset + out_f * in_f..offset + out_f * in_f + out_f];
            let mut y = Tensor::zeros(out_f, n, 1, 1);
            for (o, row) in y.data.chunks_mut(n).enumerate() {
                row.fill(bias[o]);
            }
            matmul(out_f, in_f, n, weights, &input, &mut y.data, true);
            (y, Cache::Linear { input, in_shape })
        }
        Layer::Relu => {
            let mut y = x;
            for v in &mut y.data {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
            let output = y.data.clone();
            (y, Cache::Relu { output })
        }
        Layer::LeakyRelu(slope) => {
            let s = T::lit(slope);
            let input = x.data.clone();
            let mut y = x;
            for v in &mut y.data {
                if *v < T::zero() {
                    *v *= s;
                }
            }
            (y, Cache::LeakyRelu { input })
        }
        Layer::Tanh => {
            let mut y = x;
            for v in &mut y.data {
                *v = v.tanh();
            }
            let output = y.data.clone();
            (y, Cache::Tanh { output })
        }
        Layer::Sigmoid => {
            let mut y = x;
            for v in &mut y.data {
                *v = T::one() / (T::one() + (-*v).exp());
            }
            let output = y.data.clone();
            (y, Cache::Sigmoid { output })
        }
        Layer::Upsample2x => {
            let (c, n, h, w) = (x.channels, x.batch, x.height, x.width);
            let mut y = Tensor::zeros(c, n, h * 2, w * 2);
            for cn in 0..c * n {
                let src = &x.data[cn * h * w..(cn + 1) * h * w];
                let dst = &mut y.data[cn * 4 * h * w..(cn + 1) * 4 * h * w];
                for yy in 0..2 * h {
                    for xx in 0..2 * w {
                        dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
                    }
                }
            }
            (y, Cache::Upsample { in_shape: x.shape() })
        }
        Layer::GlobalAvgPool => {
            let (c, n, plane) = (x.channels, x.batch, x.plane());
            let inv = T::one() / T::of_usize(plane);
            let data = x.data.chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
            (Tensor::from_vec(c, n, 1, 1, data), Cache::Pool { in_shape: x.shape() })
        }
        Layer::Residual(ref body) => {
            let (fx, tape) = run_forward(body, params, x.clone());
            let mut y = x;
            y.add_assign(&fx);
            (y, Cache::Residual(tape))
        }
    }
}

fn flatten_features<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let (c, n, plane) = (x.channels, x.batch, x.plane());
    let mut out = vec![T::zero(); c * plane * n];
    for ci in 0..c {
        for b in 0..n {
            for p in 0..plane {
                out[(ci * plane + p) * n + b] = x.data[(ci * n + b) * plane + p];
            }
        }
    }
    out
}

fn unflatten_features<T: Scalar>(flat: &[T], shape: [usize; 4]) -> Tensor<T> {
    let [c, n, h, w] = shape;
    let plane = h * w;
    let mut t = Tensor::zeros(c, n, h, w);
    for ci in 0..c {
        for b in 0..n {
            for p in 0..plane {
                t.data[(ci * n + b) * plane + p] = flat[(ci * plane + p) * n + b];
            }
        }
    }
    t
}

fn backward_layer<T: Scalar>(layer: &Layer, params: &[T], cache: &Cache<T>, g: Tensor<T>, grads: &mut [T]) -> Tensor<T> {
    match (layer, cache) {
        (&Layer::Conv { in_c, out_c, kernel, stride, pad, offset }, Cache::Conv { cols, in_shape, out_hw }) => {
            let (ho, wo) = *out_hw;
            let kk = in_c * kernel * kernel;
            let l = in_shape[1] * ho * wo;
            assert_eq!(g.len(), out_c * l, "conv grad shape");
            let weights = &params[offset..offset + out_c * kk];
            {
                let (gw, gb) = grads[offset..offset + out_c * kk + out_c].split_at_mut(out_c * kk);
                matmul_bt(out_c, l, kk, &g.data, cols, gw, true);
                for (o, row) in g.data.chunks(l).enumerate() {
                    gb[o] += row.iter().copied().sum::<T>();
                }
            }
            let mut dcols = vec![T::zero(); kk * l];
            matmul_at(kk, out_c, l, weights, &g.data, &mut dcols, false);
            col2im(&dcols, *in_shape, kernel, stride, pad, ho, wo)
        }
        (&Layer::Linear { in_f, out_f, offset }, Cache::Linear { input, in_shape }) => {
            let n = in_shape[1];
            let weights = &params[offset..offset + out_f * in_f];
            {
                let (gw, gb) = grads[offset..offset + out_f * in_f + out_f].split_at_mut(out_f * in_f);
                matmul_bt(out_f, n, in_f, &g.data, input, gw, true);
                for (o, row) in g.data.chunks(n).enumerate() {
                    gb[o] += row.iter().copied().sum::<T>();
                }
            }
            let mut dx = vec![T::zero(); in_f * n];
            matmul_at(in_f, out_f, n, weights, &g.data, &mut dx, false);
            if in_shape[2] * in_shape[3] == 1 {
                Tensor::from_vec(in_f, n, 1, 1, dx)
            } else {
                unflatten_features(&dx, *in_shape)
            }
        }
        (Layer::Relu, Cache::Relu { output }) => {
            let mut g = g;
            for (d, &y) in g.data.iter_mut().zip(output) {
                if y <= T::zero() {
                    *d = T::zero();
                }
            }
            g
        }
        (&Layer::LeakyRelu(slope), Cache::LeakyRelu { input }) => {
            let s = T::lit(slope);
            let mut g = g;
            for (d, &x) in g.data.iter_mut().zip(input) {
                if x < T::zero() {
                    *d *= s;
                }
            }
            g
        }
        (Layer::Tanh, Cache::Tanh { output }) => {
            let mut g = g;
            for (d, &y) in g.data.iter_mut().zip(output) {
                *d *= T::one() - y * y;
            }
            g
        }
        (Layer::Sigmoid, Cache::Sigmoid { output }) => {
            let mut g = g;
            for (d, &y) in g.data.iter_mut().zip(output) {
                *d *= y * (T::one() - y);
            }
            g
        }
        (Layer::Upsample2x, Cache::Upsample { in_shape }) => {
            let [c, n, h, w] = *in_shape;
            let mut dx = Tensor::zeros(c, n, h, w);
            for cn in 0..c * n {
                let src = &g.data[cn * 4 * h * w..(cn + 1) * 4 * h * w];
                let dst = &mut dx.data[cn * h * w..(cn + 1) * h * w];
                for yy in 0..2 * h {
                    for xx in 0..2 * w {
                        dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
                    }
                }
            }
            dx
        }
        (Layer::GlobalAvgPool, Cache::Pool { in_shape }) => {
            let [c, n, h, w] = *in_shape;
            let plane = h * w;
            let inv = T::one() / T::of_usize(plane);
            let mut dx = Tensor::zeros(c, n, h, w);
            for (chunk, &gv) in dx.data.chunks_mut(plane).zip(&g.data) {
                chunk.fill(gv * inv);
            }
            dx
        }
        (Layer::Residual(body), Cache::Residual(tape)) => {
            let mut dx = run_backward(body, params, tape, g.clone(), grads);
            dx.add_assign(&g);
            dx
        }
        (layer, _) => panic!("cache does not match layer {layer:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let len = shape.iter().product();
        Tensor::from_vec(shape[0], shape[1], shape[2], shape[3], (0..len).map(|_| normal.sample(rng)).collect())
    }

    /// Scalar objective: weighted sum of outputs with fixed random weights.
    fn objective(net: &Net<f64>, x: &Tensor<f64>, weights: &[f64]) -> f64 {
        net.infer(x).data.iter().zip(weights).map(|(a, b)| a * b).sum()
    }

    fn check_net(net: Net<f64>, in_shape: [usize; 4]) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = random_tensor(&mut rng, in_shape);
        let (y, tape) = net.forward(&x);
        let weights: Vec<f64> = random_tensor(&mut rng, y.shape()).data;
        let mut grads = net.zero_grads();
        let dx = net.backward(&tape, Tensor::from_vec(y.channels, y.batch, y.height, y.width, weights.clone()), &mut grads);

        let h = 1e-5;
        for i in (0..net.params.len()).step_by((net.params.len() / 40).max(1)) {
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            let fd = (objective(&plus, &x, &weights) - objective(&minus, &x, &weights)) / (2.0 * h);
            assert!((fd - grads[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: fd {fd} vs analytic {}", grads[i]);
        }
        for i in (0..x.len()).step_by((x.len() / 40).max(1)) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (objective(&net, &xp, &weights) - objective(&net, &xm, &weights)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "input {i}: fd {fd} vs analytic {}", dx.data[i]);
        }
    }

    #[test]
    fn conv_stack_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = NetBuilder::new()
            .conv(3, 4, 3, 1, 1)
            .leaky_relu(0.2)
            .conv(4, 5, 3, 2, 1)
            .tanh()
            .begin_residual()
            .conv(5, 5, 3, 1, 1)
            .sigmoid()
            .end_residual()
            .upsample2x()
            .conv(5, 2, 3, 1, 1)
            .build::<f64, _>(&mut rng);
        check_net(net, [3, 2, 6, 4]);
    }

    #[test]
    fn pooled_linear_head_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = NetBuilder::new()
            .conv(3, 4, 3, 2, 1)
            .tanh()
            .global_avg_pool()
            .linear(4, 6)
            .tanh()
            .linear(6, 3)
            .build::<f64, _>(&mut rng);
        check_net(net, [3, 3, 8, 4]);
    }

    #[test]
    fn linear_on_spatial_map_flattens_channel_major() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = NetBuilder::new().conv(3, 2, 3, 1, 1).linear(2 * 4 * 2, 3).build::<f64, _>(&mut rng);
        check_net(net, [3, 2, 4, 2]);
    }

    #[test]
    fn zero_initialized_conv_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = NetBuilder::new().conv_zero(3, 3, 3, 1, 1).build::<f32, _>(&mut rng);
        let x = Tensor::from_vec(3, 1, 4, 4, (0..48).map(|i| i as f32).collect());
        assert!(net.infer(&x).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn build_is_deterministic_for_a_seed() {
        let build = |seed| {
            NetBuilder::new()
                .conv(3, 8, 3, 1, 1)
                .relu()
                .linear(8, 4)
                .build::<f32, _>(&mut ChaCha8Rng::seed_from_u64(seed))
        };
        assert_eq!(build(7), build(7));
        assert_ne!(build(7), build(8));
    }
}
