use rand::Rng;

use super::spec::{LayerSpec, NetworkSpec, SampleShape};
use super::tensor::{ensure_finite, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{matmul, Op, Scalar};

/// Per-layer parameter gradients, laid out like [`Network::params`].
pub type Gradients<T> = Vec<Vec<T>>;

/// Weights plus architecture. Conv weights are `out×in×k×k` followed by the
/// biases; dense weights are `out×in` followed by the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    shapes: Vec<SampleShape>,
    params: Vec<Vec<T>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    batch: usize,
    input: Vec<T>,
    outputs: Vec<Vec<T>>,
    cols: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Output of layer `i` for the whole batch.
    pub fn layer_output(&self, i: usize) -> &[T] {
        &self.outputs[i]
    }

    pub fn output(&self) -> &[T] {
        self.outputs.last().expect("network has layers")
    }

    fn layer_input(&self, i: usize) -> &[T] {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Centered uniform init with fan-in scaling; biases start at zero.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let shapes = spec.shapes()?;
        let counts = spec.param_counts()?;
        let mut prev = spec.input;
        let mut params = Vec::with_capacity(spec.layers.len());
        for ((layer, out), n) in spec.layers.iter().zip(&shapes).zip(counts) {
            let fan_in = match (*layer, prev) {
                (LayerSpec::Conv2d { kernel, .. }, SampleShape::Image { channels, .. }) => {
                    channels * kernel * kernel
                }
                (LayerSpec::Dense { .. }, p) => p.len(),
                _ => 0,
            };
            let mut w = vec![T::zero(); n];
            if n > 0 {
                let out_units = match *out {
                    SampleShape::Image { channels, .. } => channels,
                    SampleShape::Flat(d) => d,
                };
                let bound = (3.0 / fan_in as f64).sqrt();
                for v in w[..n - out_units].iter_mut() {
                    *v = T::lit(rng.gen_range(-bound..bound));
                }
            }
            params.push(w);
            prev = *out;
        }
        Ok(Self {
            spec,
            shapes,
            params,
        })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Vec<T>>) -> Result<Self> {
        let shapes = spec.shapes()?;
        let counts = spec.param_counts()?;
        if params.len() != counts.len() || params.iter().zip(&counts).any(|(p, &c)| p.len() != c) {
            return Err(Error::Shape(
                "parameter buffers do not match the network spec".into(),
            ));
        }
        Ok(Self {
            spec,
            shapes,
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().map(SampleShape::len).unwrap_or(0)
    }

    pub fn layer_shape(&self, i: usize) -> SampleShape {
        self.shapes[i]
    }

    /// Copy weights from another network with the same spec.
    pub fn copy_weights_from(&mut self, other: &Self) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Shape(
                "cannot copy weights across different specs".into(),
            ));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.iter()
                        .map(|&v| U::from_f64(v.as_f64()).unwrap_or_else(U::nan))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.params
            .iter()
            .map(|p| vec![T::zero(); p.len()])
            .collect()
    }

    /// Run the network and optionally capture the output of one layer.
    pub fn forward(
        &self,
        input: &Tensor<T>,
        capture_layer: Option<usize>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        if let Some(c) = capture_layer {
            if c >= self.spec.layers.len() {
                return Err(Error::Contract(format!("capture layer {c} out of range")));
            }
        }
        let pass = self.forward_pass(input)?;
        let n = pass.batch;
        let mut out_shape = vec![n];
        out_shape.extend(self.shapes.last().expect("layers").dims());
        let captured = capture_layer.map(|c| {
            let mut shape = vec![n];
            shape.extend(self.shapes[c].dims());
            Tensor::new(shape, pass.outputs[c].clone())
        });
        let captured = captured.transpose()?;
        let mut outputs = pass.outputs;
        let out = Tensor::new(out_shape, outputs.pop().expect("layers"))?;
        Ok((out, captured))
    }

    pub fn forward_pass(&self, input: &Tensor<T>) -> Result<ForwardPass<T>> {
        let n = input.batch();
        if input.shape().len() < 2 || input.sample_len() != self.spec.input.len() || n == 0 {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match network input {:?}",
                input.shape(),
                self.spec.input.dims()
            )));
        }
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.spec.layers.len());
        let mut cols = Vec::with_capacity(self.spec.layers.len());
        let mut prev = self.spec.input;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x: &[T] = if i == 0 {
                input.data()
            } else {
                &outputs[i - 1]
            };
            let out_shape = self.shapes[i];
            let (y, col) = match (*layer, prev, out_shape) {
                (
                    LayerSpec::Conv2d { kernel, stride, .. },
                    SampleShape::Image {
                        channels,
                        height,
                        width,
                    },
                    SampleShape::Image {
                        channels: oc,
                        height: oh,
                        width: ow,
                    },
                ) => {
                    let g = ConvGeom {
                        n,
                        c: channels,
                        h: height,
                        w: width,
                        o: oc,
                        oh,
                        ow,
                        k: kernel,
                        s: stride,
                    };
                    let col = g.im2col(x);
                    let y = g.forward(&self.params[i], &col);
                    (y, Some(col))
                }
                (LayerSpec::Dense { out_dim }, p, _) => {
                    (dense_forward(n, p.len(), out_dim, &self.params[i], x), None)
                }
                (LayerSpec::Relu, _, _) => (
                    x.iter()
                        .map(|&v| if v > T::zero() { v } else { T::zero() })
                        .collect(),
                    None,
                ),
                (LayerSpec::Sigmoid, _, _) => (x.iter().map(|&v| sigmoid(v)).collect(), None),
                (LayerSpec::Flatten, _, _) => (x.to_vec(), None),
                _ => unreachable!("spec validated at construction"),
            };
            ensure_finite(&y, &format!("layer {i} output"))?;
            outputs.push(y);
            cols.push(col);
            prev = out_shape;
        }
        Ok(ForwardPass {
            batch: n,
            input: input.data().to_vec(),
            outputs,
            cols,
        })
    }

    /// Backpropagate `d_output` (gradient of the loss w.r.t. the network
    /// output) into parameter gradients.
    pub fn backward(&self, pass: &ForwardPass<T>, d_output: &[T]) -> Result<Gradients<T>> {
        self.backward_from(pass, self.spec.layers.len(), d_output)
    }

    /// Backpropagate starting below layer `top`: `d_top` is the gradient with
    /// respect to the *input* of layer `top` (equivalently the output of layer
    /// `top - 1`). Layers at or above `top` receive zero gradient.
    pub fn backward_from(
        &self,
        pass: &ForwardPass<T>,
        top: usize,
        d_top: &[T],
    ) -> Result<Gradients<T>> {
        if top == 0 || top > self.spec.layers.len() {
            return Err(Error::Contract(format!(
                "backward start {top} out of range"
            )));
        }
        let n = pass.batch;
        let expected = self.shapes[top - 1].len() * n;
        if d_top.len() != expected {
            return Err(Error::Shape(format!(
                "upstream gradient has {} values, expected {expected}",
                d_top.len()
            )));
        }
        ensure_finite(d_top, "upstream gradient")?;
        let mut grads = self.zero_gradients();
        let mut delta = d_top.to_vec();
        for i in (0..top).rev() {
            let prev = if i == 0 {
                self.spec.input
            } else {
                self.shapes[i - 1]
            };
            let x = pass.layer_input(i);
            let y = &pass.outputs[i];
            let need_dx = i > 0;
            delta = match (self.spec.layers[i], prev, self.shapes[i]) {
                (
                    LayerSpec::Conv2d { kernel, stride, .. },
                    SampleShape::Image {
                        channels,
                        height,
                        width,
                    },
                    SampleShape::Image {
                        channels: oc,
                        height: oh,
                        width: ow,
                    },
                ) => {
                    let g = ConvGeom {
                        n,
                        c: channels,
                        h: height,
                        w: width,
                        o: oc,
                        oh,
                        ow,
                        k: kernel,
                        s: stride,
                    };
                    let col = pass.cols[i].as_ref().expect("conv forward stores columns");
                    g.backward(&self.params[i], col, &delta, &mut grads[i], need_dx)
                }
                (LayerSpec::Dense { out_dim }, p, _) => dense_backward(
                    n,
                    p.len(),
                    out_dim,
                    &self.params[i],
                    x,
                    &delta,
                    &mut grads[i],
                    need_dx,
                ),
                (LayerSpec::Relu, _, _) => {
                    // subgradient at 0 is 0
                    delta
                        .iter()
                        .zip(x)
                        .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                        .collect()
                }
                (LayerSpec::Sigmoid, _, _) => delta
                    .iter()
                    .zip(y)
                    .map(|(&d, &s)| d * s * (T::one() - s))
                    .collect(),
                (LayerSpec::Flatten, _, _) => delta,
                _ => unreachable!("spec validated at construction"),
            };
        }
        for (i, g) in grads.iter().enumerate() {
            ensure_finite(g, &format!("layer {i} gradient"))?;
        }
        Ok(grads)
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn dense_forward<T: Scalar>(n: usize, din: usize, dout: usize, p: &[T], x: &[T]) -> Vec<T> {
    let (w, b) = p.split_at(dout * din);
    let mut y = vec![T::zero(); n * dout];
    for row in y.chunks_exact_mut(dout) {
        row.copy_from_slice(b);
    }
    matmul(n, din, dout, x, Op::N, w, Op::T, T::one(), &mut y);
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Scalar>(
    n: usize,
    din: usize,
    dout: usize,
    p: &[T],
    x: &[T],
    dy: &[T],
    grad: &mut [T],
    need_dx: bool,
) -> Vec<T> {
    let (gw, gb) = grad.split_at_mut(dout * din);
    matmul(dout, n, din, dy, Op::T, x, Op::N, T::zero(), gw);
    for row in dy.chunks_exact(dout) {
        for (g, &d) in gb.iter_mut().zip(row) {
            *g += d;
        }
    }
    if !need_dx {
        return Vec::new();
    }
    let w = &p[..dout * din];
    let mut dx = vec![T::zero(); n * din];
    matmul(n, dout, din, dy, Op::N, w, Op::N, T::zero(), &mut dx);
    dx
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    oh: usize,
    ow: usize,
    k: usize,
    s: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Columns laid out `[c·k·k] × [n·oh·ow]`.
    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let p = self.positions();
        let np = self.n * p;
        let mut cols = vec![T::zero(); self.patch() * np];
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let r = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[r * np..(r + 1) * np];
                    for s in 0..self.n {
                        let img = &x[(s * self.c + c) * self.h * self.w..][..self.h * self.w];
                        for oy in 0..self.oh {
                            let src = &img[(oy * self.s + ki) * self.w..];
                            let d = &mut dst[s * p + oy * self.ow..][..self.ow];
                            for (ox, v) in d.iter_mut().enumerate() {
                                *v = src[ox * self.s + kj];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn forward<T: Scalar>(&self, params: &[T], cols: &[T]) -> Vec<T> {
        let (w, b) = params.split_at(self.o * self.patch());
        let p = self.positions();
        let np = self.n * p;
        let mut tmp = vec![T::zero(); self.o * np];
        matmul(
            self.o,
            self.patch(),
            np,
            w,
            Op::N,
            cols,
            Op::N,
            T::zero(),
            &mut tmp,
        );
        let mut y = vec![T::zero(); self.n * self.o * p];
        for o in 0..self.o {
            for s in 0..self.n {
                let src = &tmp[o * np + s * p..][..p];
                let dst = &mut y[(s * self.o + o) * p..][..p];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + b[o];
                }
            }
        }
        y
    }

    fn backward<T: Scalar>(
        &self,
        params: &[T],
        cols: &[T],
        dy: &[T],
        grad: &mut [T],
        need_dx: bool,
    ) -> Vec<T> {
        let p = self.positions();
        let np = self.n * p;
        let kk = self.patch();
        let mut dyt = vec![T::zero(); self.o * np];
        for s in 0..self.n {
            for o in 0..self.o {
                dyt[o * np + s * p..][..p].copy_from_slice(&dy[(s * self.o + o) * p..][..p]);
            }
        }
        let (gw, gb) = grad.split_at_mut(self.o * kk);
        matmul(self.o, np, kk, &dyt, Op::N, cols, Op::T, T::zero(), gw);
        for (o, g) in gb.iter_mut().enumerate() {
            *g = dyt[o * np..(o + 1) * np].iter().copied().sum();
        }
        if !need_dx {
            return Vec::new();
        }
        let w = &params[..self.o * kk];
        let mut dcols = vec![T::zero(); kk * np];
        matmul(kk, self.o, np, w, Op::T, &dyt, Op::N, T::zero(), &mut dcols);
        let mut dx = vec![T::zero(); self.n * self.c * self.h * self.w];
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let r = (c * self.k + ki) * self.k + kj;
                    let src = &dcols[r * np..(r + 1) * np];
                    for s in 0..self.n {
                        let img = &mut dx[(s * self.c + c) * self.h * self.w..][..self.h * self.w];
                        for oy in 0..self.oh {
                            let row = &src[s * p + oy * self.ow..][..self.ow];
                            let base = (oy * self.s + ki) * self.w + kj;
                            for (ox, &v) in row.iter().enumerate() {
                                img[base + ox * self.s] += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_dense_passes_input_through() {
        let spec =
            NetworkSpec::new(SampleShape::Flat(3), vec![LayerSpec::Dense { out_dim: 3 }]).unwrap();
        let mut params = vec![0.0f64; 12];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let net = Network::from_params(spec, vec![params]).unwrap();
        let x = Tensor::from_sample(&[3], vec![0.5, -2.0, 7.0]).unwrap();
        let (y, _) = net.forward(&x, None).unwrap();
        assert_eq!(y.data(), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let spec = NetworkSpec::new(
            SampleShape::Flat(3),
            vec![LayerSpec::Relu, LayerSpec::Dense { out_dim: 1 }],
        )
        .unwrap();
        let net = Network::<f32>::from_params(spec, vec![vec![], vec![0.0; 4]]).unwrap();
        let x = Tensor::from_sample(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (_, cap) = net.forward(&x, Some(0)).unwrap();
        assert_eq!(cap.unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn all_ones_kernel_sums_three_by_three_window() {
        let spec = NetworkSpec::new(
            SampleShape::Image {
                channels: 1,
                height: 4,
                width: 4,
            },
            vec![
                LayerSpec::Conv2d {
                    out_channels: 1,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { out_dim: 1 },
            ],
        )
        .unwrap();
        let mut conv = vec![1.0f64; 9];
        conv.push(0.0);
        let net = Network::from_params(spec, vec![conv, vec![], vec![0.0; 5]]).unwrap();
        let x = Tensor::from_sample(&[1, 4, 4], vec![1.0; 16]).unwrap();
        let (_, cap) = net.forward(&x, Some(0)).unwrap();
        assert_eq!(cap.unwrap().data(), &[9.0; 4]);
    }

    #[test]
    fn conv_matches_direct_convolution_with_stride() {
        let spec = NetworkSpec::new(
            SampleShape::Image {
                channels: 2,
                height: 7,
                width: 6,
            },
            vec![
                LayerSpec::Conv2d {
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { out_dim: 1 },
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::<f64>::init(spec, &mut rng).unwrap();
        let x: Vec<f64> = (0..2 * 2 * 7 * 6)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let t = Tensor::new(vec![2, 2, 7, 6], x.clone()).unwrap();
        let (_, cap) = net.forward(&t, Some(0)).unwrap();
        let cap = cap.unwrap();
        let w = &net.params()[0];
        let (oh, ow) = (3, 2);
        for s in 0..2 {
            for o in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = w[3 * 18 + o];
                        for c in 0..2 {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    acc += w[((o * 2 + c) * 3 + ki) * 3 + kj]
                                        * x[((s * 2 + c) * 7 + oy * 2 + ki) * 6 + ox * 2 + kj];
                                }
                            }
                        }
                        let got = cap.data()[((s * 3 + o) * oh + oy) * ow + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn forward_is_bit_identical_across_calls() {
        let spec = NetworkSpec::mlp(5, &[7], 2).unwrap();
        let net = Network::<f32>::init(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Tensor::new(vec![4, 5], (0..20).map(|i| i as f32 * 0.1).collect()).unwrap();
        let a = net.forward(&x, None).unwrap().0;
        let b = net.forward(&x, None).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Network::<f32>::init(
            NetworkSpec::mlp(5, &[], 1).unwrap(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap();
        assert!(matches!(net.forward(&x, None), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_output_is_a_numeric_error() {
        let spec = NetworkSpec::mlp(1, &[], 1).unwrap();
        let net = Network::<f32>::from_params(spec, vec![vec![f32::MAX, 0.0]]).unwrap();
        let x = Tensor::new(vec![1, 1], vec![10.0]).unwrap();
        assert!(matches!(net.forward(&x, None), Err(Error::Numeric(_))));
    }
}
