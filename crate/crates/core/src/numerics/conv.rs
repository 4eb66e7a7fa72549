use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::tensor::Tensor;

/// Trainable parameters of one convolution layer.
///
/// Kernels are `[kh, kw, Cin, Cout]`, spatial extents odd so stride-1
/// layers are same-padding. Biases are `[Cout]`. Equality compares the
/// parameter values; `init_seed` is provenance metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerParams {
    pub kernels: Tensor,
    pub biases: Tensor,
    pub init_seed: u64,
}

impl PartialEq for LayerParams {
    fn eq(&self, other: &Self) -> bool {
        self.kernels == other.kernels && self.biases == other.biases
    }
}

/// Gradients with the same shape as a `LayerParams`.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub kernels: Tensor,
    pub biases: Tensor,
}

impl LayerParams {
    /// He fan-in initialization: kernel entries ~ N(0, 2 / (kh*kw*Cin)),
    /// biases at a small positive constant so ReLU units start alive
    /// (there is no normalization layer to revive dead channels).
    /// Fully determined by `seed`.
    pub fn init_he(kh: usize, kw: usize, cin: usize, cout: usize, seed: u64) -> Result<LayerParams> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArg(format!(
                "kernel spatial extents must be odd, got {kh}x{kw}"
            )));
        }
        let mut rng = Rng::new(seed);
        let std = (2.0 / (kh * kw * cin) as f64).sqrt();
        let kernels = Tensor::from_fn(&[kh, kw, cin, cout], |_| rng.normal() * std);
        Ok(LayerParams {
            kernels,
            biases: Tensor::from_fn(&[cout], |_| 0.05),
            init_seed: seed,
        })
    }

    pub fn from_parts(kernels: Tensor, biases: Tensor) -> Result<LayerParams> {
        if kernels.dims().len() != 4 {
            return Err(Error::shape("LayerParams", "4-d kernel", format!("{:?}", kernels.dims())));
        }
        if kernels.dims()[0] % 2 == 0 || kernels.dims()[1] % 2 == 0 {
            return Err(Error::InvalidArg(format!(
                "kernel spatial extents must be odd, got {:?}",
                &kernels.dims()[..2]
            )));
        }
        if biases.dims() != [kernels.dims()[3]] {
            return Err(Error::shape(
                "LayerParams",
                format!("[{}] biases", kernels.dims()[3]),
                format!("{:?}", biases.dims()),
            ));
        }
        Ok(LayerParams { kernels, biases, init_seed: 0 })
    }

    pub fn kh(&self) -> usize {
        self.kernels.dims()[0]
    }
    pub fn kw(&self) -> usize {
        self.kernels.dims()[1]
    }
    pub fn cin(&self) -> usize {
        self.kernels.dims()[2]
    }
    pub fn cout(&self) -> usize {
        self.kernels.dims()[3]
    }

    pub fn zero_grads(&self) -> LayerGrads {
        LayerGrads {
            kernels: Tensor::zeros(self.kernels.dims()),
            biases: Tensor::zeros(self.biases.dims()),
        }
    }
}

impl LayerGrads {
    pub fn add_assign(&mut self, other: &LayerGrads) -> Result<()> {
        self.kernels.add_assign(&other.kernels)?;
        self.biases.add_assign(&other.biases)
    }

    pub fn scale(&mut self, s: f64) {
        self.kernels.scale(s);
        self.biases.scale(s);
    }
}

fn output_extent(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

fn check_conv_args(input: &Tensor, params: &LayerParams, stride: usize) -> Result<()> {
    if input.dims().len() != 3 {
        return Err(Error::shape("conv_forward", "[W, H, C] input", format!("{:?}", input.dims())));
    }
    if input.dims()[2] != params.cin() {
        return Err(Error::shape(
            "conv_forward",
            format!("input with {} channels for kernel {:?}", params.cin(), params.kernels.dims()),
            format!("input {:?}", input.dims()),
        ));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::InvalidArg(format!("conv stride must be 1 or 2, got {stride}")));
    }
    Ok(())
}

/// Zero-padded convolution. Output extents are `(ceil(W/s), ceil(H/s), Cout)`;
/// output cell `(xo, yo)` is the window centered at input `(xo*s, yo*s)`.
pub fn conv_forward(input: &Tensor, params: &LayerParams, stride: usize) -> Result<Tensor> {
    check_conv_args(input, params, stride)?;
    let (w, h, cin) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (kh, kw, cout) = (params.kh(), params.kw(), params.cout());
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let (wo, ho) = (output_extent(w, stride), output_extent(h, stride));

    let ker = params.kernels.data();
    let bias = params.biases.data();
    let inp = input.data();

    let mut out = Tensor::zeros(&[wo, ho, cout]);
    let mut acc = vec![0.0f64; cout];
    for xo in 0..wo {
        for yo in 0..ho {
            acc.copy_from_slice(bias);
            for u in 0..kh {
                let yi = (yo * stride + u) as isize - ph as isize;
                if yi < 0 || yi >= h as isize {
                    continue;
                }
                for v in 0..kw {
                    let xi = (xo * stride + v) as isize - pw as isize;
                    if xi < 0 || xi >= w as isize {
                        continue;
                    }
                    let in_base = (xi as usize * h + yi as usize) * cin;
                    let k_base = (u * kw + v) * cin * cout;
                    for ci in 0..cin {
                        let a = inp[in_base + ci];
                        let krow = &ker[k_base + ci * cout..k_base + (ci + 1) * cout];
                        for (co, k) in krow.iter().enumerate() {
                            acc[co] += a * k;
                        }
                    }
                }
            }
            let o_base = (xo * ho + yo) * cout;
            out.data_mut()[o_base..o_base + cout].copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss through [`conv_forward`] given the upstream
/// gradient at the output. Returns `(grad_input, grad_params)`.
pub fn conv_backward(
    input: &Tensor,
    params: &LayerParams,
    stride: usize,
    upstream: &Tensor,
) -> Result<(Tensor, LayerGrads)> {
    check_conv_args(input, params, stride)?;
    let (w, h, cin) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (kh, kw, cout) = (params.kh(), params.kw(), params.cout());
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let (wo, ho) = (output_extent(w, stride), output_extent(h, stride));
    if upstream.dims() != [wo, ho, cout] {
        return Err(Error::shape(
            "conv_backward",
            format!("upstream [{wo}, {ho}, {cout}]"),
            format!("{:?}", upstream.dims()),
        ));
    }

    let ker = params.kernels.data();
    let inp = input.data();
    let up = upstream.data();

    let mut grad_input = Tensor::zeros(input.dims());
    let mut grads = params.zero_grads();
    {
        let g_in = grad_input.data_mut();
        let g_ker = grads.kernels.data_mut();
        let g_bias = grads.biases.data_mut();
        for xo in 0..wo {
            for yo in 0..ho {
                let up_row = &up[(xo * ho + yo) * cout..(xo * ho + yo + 1) * cout];
                for (co, u_val) in up_row.iter().enumerate() {
                    g_bias[co] += u_val;
                }
                for u in 0..kh {
                    let yi = (yo * stride + u) as isize - ph as isize;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    for v in 0..kw {
                        let xi = (xo * stride + v) as isize - pw as isize;
                        if xi < 0 || xi >= w as isize {
                            continue;
                        }
                        let in_base = (xi as usize * h + yi as usize) * cin;
                        let k_base = (u * kw + v) * cin * cout;
                        for ci in 0..cin {
                            let krow = &ker[k_base + ci * cout..k_base + (ci + 1) * cout];
                            let gk_base = k_base + ci * cout;
                            let a = inp[in_base + ci];
                            let mut dot = 0.0;
                            for (co, u_val) in up_row.iter().enumerate() {
                                dot += u_val * krow[co];
                                g_ker[gk_base + co] += a * u_val;
                            }
                            g_in[in_base + ci] += dot;
                        }
                    }
                }
            }
        }
    }
    Ok((grad_input, grads))
}

/// Elementwise `max(0, x)`.
pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Upstream gradient masked by `input > 0`.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if input.dims() != upstream.dims() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?}", input.dims()),
            format!("{:?}", upstream.dims()),
        ));
    }
    let mut out = upstream.clone();
    for (o, &x) in out.data_mut().iter_mut().zip(input.data().iter()) {
        if x <= 0.0 {
            *o = 0.0;
        }
    }
    Ok(out)
}
