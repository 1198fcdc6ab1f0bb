//! The fixed layer vocabulary and its forward/backward kernels.

use serde::{Deserialize, Serialize};

use super::tensor::{Shape3, Tensor4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Weights stored as `in_channels × out_channels × kernel × kernel`.
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    /// Weights stored as `outputs × inputs`.
    Linear {
        inputs: usize,
        outputs: usize,
    },
    LeakyRelu {
        slope: f32,
    },
    Sigmoid,
    Flatten,
    Reshape {
        shape: Shape3,
    },
}

impl LayerSpec {
    pub fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel * kernel,
            LayerSpec::Linear { inputs, outputs } => inputs * outputs,
            _ => 0,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { out_channels, .. }
            | LayerSpec::ConvTranspose2d { out_channels, .. } => out_channels,
            LayerSpec::Linear { outputs, .. } => outputs,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    /// Number of inputs feeding each output unit, used to scale initial weights.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            }
            | LayerSpec::ConvTranspose2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Linear { inputs, .. } => inputs,
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3, String> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.channels != in_channels {
                    return Err(format!("expected {in_channels} channels, got {input}"));
                }
                if stride == 0 || kernel == 0 {
                    return Err("kernel and stride must be positive".into());
                }
                let (h, w) = (input.height + 2 * padding, input.width + 2 * padding);
                if h < kernel || w < kernel {
                    return Err(format!("input {input} smaller than kernel {kernel}"));
                }
                Ok(Shape3::new(
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ))
            }
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                output_padding,
            } => {
                if input.channels != in_channels {
                    return Err(format!("expected {in_channels} channels, got {input}"));
                }
                if stride == 0 || kernel == 0 || output_padding >= stride {
                    return Err("need kernel, stride > 0 and output_padding < stride".into());
                }
                let grow = |n: usize| {
                    ((n - 1) * stride + kernel + output_padding).checked_sub(2 * padding)
                };
                match (grow(input.height), grow(input.width)) {
                    (Some(h), Some(w)) if h > 0 && w > 0 => Ok(Shape3::new(out_channels, h, w)),
                    _ => Err(format!("padding {padding} too large for input {input}")),
                }
            }
            LayerSpec::Linear { inputs, outputs } => {
                if input.len() != inputs || input.height != 1 || input.width != 1 {
                    return Err(format!("expected a flat {inputs}-vector, got {input}"));
                }
                Ok(Shape3::flat(outputs))
            }
            LayerSpec::LeakyRelu { .. } | LayerSpec::Sigmoid => Ok(input),
            LayerSpec::Flatten => Ok(Shape3::flat(input.len())),
            LayerSpec::Reshape { shape } => {
                if shape.len() != input.len() {
                    return Err(format!("cannot reshape {input} to {shape}"));
                }
                Ok(shape)
            }
        }
    }

    /// Applies the layer. `params` is this layer's weight block followed by
    /// its bias block; `out_shape` comes from [`LayerSpec::output_shape`].
    pub(crate) fn forward(&self, params: &[f32], x: &Tensor4, out_shape: Shape3) -> Tensor4 {
        let n = x.batch();
        let in_shape = x.shape();
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (w, b) = params.split_at(self.weight_count());
                let geo = Geometry::new(in_shape, out_shape, kernel, stride, padding);
                let ckk = in_channels * kernel * kernel;
                let ohw = out_shape.height * out_shape.width;
                let mut cols = vec![0.0; ckk * ohw];
                let mut out = Tensor4::zeros(n, out_shape);
                for i in 0..n {
                    im2col(x.example(i), &geo, &mut cols);
                    let y = out.example_mut(i);
                    for (oc, row) in y.chunks_mut(ohw).enumerate() {
                        row.fill(b[oc]);
                    }
                    gemm(out_channels, ckk, ohw, w, (ckk, 1), &cols, (ohw, 1), y, 1.0);
                }
                out
            }
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let (w, b) = params.split_at(self.weight_count());
                // The transposed convolution is the adjoint of a convolution
                // mapping the (larger) output grid onto the input grid.
                let geo = Geometry::new(out_shape, in_shape, kernel, stride, padding);
                let okk = out_channels * kernel * kernel;
                let ihw = in_shape.height * in_shape.width;
                let ohw = out_shape.height * out_shape.width;
                let mut cols = vec![0.0; okk * ihw];
                let mut out = Tensor4::zeros(n, out_shape);
                for i in 0..n {
                    // cols = Wᵀ · x
                    gemm(
                        okk,
                        in_channels,
                        ihw,
                        w,
                        (1, okk),
                        x.example(i),
                        (ihw, 1),
                        &mut cols,
                        0.0,
                    );
                    let y = out.example_mut(i);
                    col2im(&cols, &geo, y);
                    for (oc, row) in y.chunks_mut(ohw).enumerate() {
                        row.iter_mut().for_each(|v| *v += b[oc]);
                    }
                }
                out
            }
            LayerSpec::Linear { inputs, outputs } => {
                let (w, b) = params.split_at(self.weight_count());
                let mut out = Tensor4::zeros(n, out_shape);
                for row in out.data_mut().chunks_mut(outputs) {
                    row.copy_from_slice(b);
                }
                // Y = X · Wᵀ
                gemm(
                    n,
                    inputs,
                    outputs,
                    x.data(),
                    (inputs, 1),
                    w,
                    (1, inputs),
                    out.data_mut(),
                    1.0,
                );
                out
            }
            LayerSpec::LeakyRelu { slope } => {
                let data = x
                    .data()
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { slope * v })
                    .collect();
                Tensor4::new(n, out_shape, data).expect("same size")
            }
            LayerSpec::Sigmoid => {
                let data = x.data().iter().map(|&v| sigmoid(v)).collect();
                Tensor4::new(n, out_shape, data).expect("same size")
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => x
                .clone()
                .reshaped(out_shape)
                .expect("checked by output_shape"),
        }
    }

    /// Backpropagates `dy` through the layer given its input `x` and output
    /// `y`. Parameter gradients are accumulated into `dparams`; the gradient
    /// with respect to `x` is returned.
    pub(crate) fn backward(
        &self,
        params: &[f32],
        x: &Tensor4,
        y: &Tensor4,
        dy: &Tensor4,
        dparams: &mut [f32],
    ) -> Tensor4 {
        let n = x.batch();
        let in_shape = x.shape();
        let out_shape = y.shape();
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (w, _) = params.split_at(self.weight_count());
                let (dw, db) = dparams.split_at_mut(self.weight_count());
                let geo = Geometry::new(in_shape, out_shape, kernel, stride, padding);
                let ckk = in_channels * kernel * kernel;
                let ohw = out_shape.height * out_shape.width;
                let mut cols = vec![0.0; ckk * ohw];
                let mut dcols = vec![0.0; ckk * ohw];
                let mut dx = Tensor4::zeros(n, in_shape);
                for i in 0..n {
                    let g = dy.example(i);
                    im2col(x.example(i), &geo, &mut cols);
                    // dW += dY · colsᵀ
                    gemm(
                        out_channels,
                        ohw,
                        ckk,
                        g,
                        (ohw, 1),
                        &cols,
                        (1, ohw),
                        dw,
                        1.0,
                    );
                    for (oc, row) in g.chunks(ohw).enumerate() {
                        db[oc] += row.iter().sum::<f32>();
                    }
                    // dcols = Wᵀ · dY
                    gemm(
                        ckk,
                        out_channels,
                        ohw,
                        w,
                        (1, ckk),
                        g,
                        (ohw, 1),
                        &mut dcols,
                        0.0,
                    );
                    col2im(&dcols, &geo, dx.example_mut(i));
                }
                dx
            }
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let (w, _) = params.split_at(self.weight_count());
                let (dw, db) = dparams.split_at_mut(self.weight_count());
                let geo = Geometry::new(out_shape, in_shape, kernel, stride, padding);
                let okk = out_channels * kernel * kernel;
                let ihw = in_shape.height * in_shape.width;
                let ohw = out_shape.height * out_shape.width;
                let mut dcols = vec![0.0; okk * ihw];
                let mut dx = Tensor4::zeros(n, in_shape);
                for i in 0..n {
                    let g = dy.example(i);
                    im2col(g, &geo, &mut dcols);
                    // dW += x · dcolsᵀ
                    gemm(
                        in_channels,
                        ihw,
                        okk,
                        x.example(i),
                        (ihw, 1),
                        &dcols,
                        (1, ihw),
                        dw,
                        1.0,
                    );
                    for (oc, row) in g.chunks(ohw).enumerate() {
                        db[oc] += row.iter().sum::<f32>();
                    }
                    // dx = W · dcols
                    gemm(
                        in_channels,
                        okk,
                        ihw,
                        w,
                        (okk, 1),
                        &dcols,
                        (ihw, 1),
                        dx.example_mut(i),
                        0.0,
                    );
                }
                dx
            }
            LayerSpec::Linear { inputs, outputs } => {
                let (w, _) = params.split_at(self.weight_count());
                let (dw, db) = dparams.split_at_mut(self.weight_count());
                // dW += dYᵀ · X
                gemm(
                    outputs,
                    n,
                    inputs,
                    dy.data(),
                    (1, outputs),
                    x.data(),
                    (inputs, 1),
                    dw,
                    1.0,
                );
                for row in dy.data().chunks(outputs) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                let mut dx = Tensor4::zeros(n, in_shape);
                // dX = dY · W
                gemm(
                    n,
                    outputs,
                    inputs,
                    dy.data(),
                    (outputs, 1),
                    w,
                    (inputs, 1),
                    dx.data_mut(),
                    0.0,
                );
                dx
            }
            LayerSpec::LeakyRelu { slope } => {
                let data = x
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
                    .collect();
                Tensor4::new(n, in_shape, data).expect("same size")
            }
            LayerSpec::Sigmoid => {
                let data = y
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect();
                Tensor4::new(n, in_shape, data).expect("same size")
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => {
                dy.clone().reshaped(in_shape).expect("same size")
            }
        }
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Sliding-window geometry of a convolution from `image` onto `grid`.
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    out_height: usize,
    out_width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn new(image: Shape3, grid: Shape3, kernel: usize, stride: usize, padding: usize) -> Self {
        Geometry {
            channels: image.channels,
            height: image.height,
            width: image.width,
            out_height: grid.height,
            out_width: grid.width,
            kernel,
            stride,
            padding,
        }
    }

    /// Calls `f(col_index, image_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let k = self.kernel;
        let ohw = self.out_height * self.out_width;
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for oy in 0..self.out_height {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let base = (c * self.height + iy as usize) * self.width;
                        for ox in 0..self.out_width {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            f(row * ohw + oy * self.out_width + ox, base + ix as usize);
                        }
                    }
                }
            }
        }
    }
}

fn im2col(image: &[f32], geo: &Geometry, cols: &mut [f32]) {
    cols.fill(0.0);
    geo.for_each_tap(|col, idx| cols[col] = image[idx]);
}

fn col2im(cols: &[f32], geo: &Geometry, image: &mut [f32]) {
    image.fill(0.0);
    geo.for_each_tap(|col, idx| image[idx] += cols[col]);
}

/// `C = A·B + beta·C` for an `m×k` by `k×n` product with explicit
/// (row, column) strides on `A` and `B`; `C` is dense row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
