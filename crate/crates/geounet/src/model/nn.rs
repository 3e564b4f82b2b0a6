//! Hand-rolled convolutional building blocks.
//!
//! No ML runtime: convolutions are im2col plus a matrix multiply through
//! `ndarray`'s `dot` (which dispatches to a tuned kernel for `f32`/`f64`),
//! and every layer carries an explicit backward pass. Layers are read-only
//! during the forward pass — activations and anything else the backward pass
//! needs live in per-call cache structs, so a model can serve concurrent
//! inference. Parameter gradients accumulate into a [`Gradients`] store
//! keyed by parameter name.
//!
//! Tensors are `(channels, rows, cols)`; there is no batch axis, the
//! training loop iterates samples and lets gradient accumulation do the
//! batching.

use crate::scalar::Scalar;
use ndarray::{s, Array1, Array2, Array3, ArrayD, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;

/// Named parameter gradients, summed across calls until cleared.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    map: HashMap<String, ArrayD<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn new() -> Self {
        Self {
            map: HashMap::new(),
        }
    }

    /// Adds `grad` into the entry for `name`.
    pub fn accumulate(&mut self, name: &str, grad: ArrayD<S>) {
        match self.map.get_mut(name) {
            Some(existing) => *existing += &grad,
            None => {
                self.map.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<S>> {
        self.map.get(name)
    }

    /// Multiplies every stored gradient by `factor` (loss-mean reduction).
    pub fn scale(&mut self, factor: S) {
        for grad in self.map.values_mut() {
            grad.mapv_inplace(|g| g * factor);
        }
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl<S: Scalar> Default for Gradients<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Lays out k x k patches (zero-padded to keep the spatial size) as the
/// columns matrix `(c*k*k, h*w)` so convolution becomes one matmul.
fn im2col<S: Scalar>(x: &Array3<S>, k: usize) -> Array2<S> {
    let (c, h, w) = x.dim();
    let p = (k - 1) as isize / 2;
    let mut cols = Array2::zeros((c * k * k, h * w));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let mut row = cols.row_mut(ci * k * k + ki * k + kj);
                // Output (i, j) reads x[ci, i + ki - p, j + kj - p]; clip the
                // j range once per row instead of testing every element.
                let dj = kj as isize - p;
                let j0 = (-dj).max(0) as usize;
                let j1 = (w as isize - dj).min(w as isize) as usize;
                for i in 0..h {
                    let si = i as isize + ki as isize - p;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = x.slice(s![
                        ci,
                        si as usize,
                        (j0 as isize + dj) as usize..(j1 as isize + dj) as usize
                    ]);
                    row.slice_mut(s![i * w + j0..i * w + j1]).assign(&src);
                }
            }
        }
    }
    cols
}

/// Scatter-adds a columns-matrix gradient back onto the input layout;
/// the exact adjoint of [`im2col`].
fn col2im<S: Scalar>(grad_cols: &Array2<S>, dim: (usize, usize, usize), k: usize) -> Array3<S> {
    let (c, h, w) = dim;
    let p = (k - 1) as isize / 2;
    let mut gx = Array3::zeros(dim);
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = grad_cols.row(ci * k * k + ki * k + kj);
                let dj = kj as isize - p;
                let j0 = (-dj).max(0) as usize;
                let j1 = (w as isize - dj).min(w as isize) as usize;
                for i in 0..h {
                    let si = i as isize + ki as isize - p;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let mut dst = gx.slice_mut(s![
                        ci,
                        si as usize,
                        (j0 as isize + dj) as usize..(j1 as isize + dj) as usize
                    ]);
                    dst.zip_mut_with(&row.slice(s![i * w + j0..i * w + j1]), |a, &b| *a += b);
                }
            }
        }
    }
    gx
}

/// Square convolution (kernel size 1 or 3, stride 1, padding preserves the
/// spatial size). Weights are stored pre-flattened as `(out, in*k*k)`.
#[derive(Debug, Clone)]
pub struct Conv2d<S> {
    pub name: String,
    pub weight: Array2<S>,
    pub bias: Array1<S>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
}

/// Forward-pass state a convolution needs for its backward pass.
#[derive(Debug)]
pub struct ConvCache<S> {
    cols: Array2<S>,
    x_dim: (usize, usize, usize),
}

impl<S: Scalar> Conv2d<S> {
    /// He-normal initialization: `N(0, sqrt(2 / fan_in))`, zero bias.
    pub fn new(name: &str, in_ch: usize, out_ch: usize, ksize: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * ksize * ksize;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is positive");
        let weight =
            Array2::from_shape_fn((out_ch, fan_in), |_| S::from_f64(normal.sample(rng)));
        Self {
            name: name.to_string(),
            weight,
            bias: Array1::zeros(out_ch),
            in_ch,
            out_ch,
            ksize,
        }
    }

    pub fn forward(&self, x: &Array3<S>) -> (Array3<S>, ConvCache<S>) {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_ch, "{}: input channels", self.name);
        let cols = im2col(x, self.ksize);
        let mut out = self.weight.dot(&cols);
        out += &self.bias.view().insert_axis(Axis(1));
        (
            out.into_shape_with_order((self.out_ch, h, w))
                .expect("matmul output is contiguous"),
            ConvCache {
                cols,
                x_dim: (c, h, w),
            },
        )
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(
        &self,
        cache: &ConvCache<S>,
        grad_out: &Array3<S>,
        grads: &mut Gradients<S>,
    ) -> Array3<S> {
        let (_, h, w) = cache.x_dim;
        let g = grad_out
            .view()
            .into_shape_with_order((self.out_ch, h * w))
            .expect("grad is contiguous");
        grads.accumulate(&format!("{}.w", self.name), g.dot(&cache.cols.t()).into_dyn());
        grads.accumulate(&format!("{}.b", self.name), g.sum_axis(Axis(1)).into_dyn());
        let grad_cols = self.weight.t().dot(&g);
        col2im(&grad_cols, cache.x_dim, self.ksize)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Visits `(name, array)` for each parameter.
    pub fn visit(&self, f: &mut impl FnMut(String, ndarray::ArrayViewD<'_, S>)) {
        f(format!("{}.w", self.name), self.weight.view().into_dyn());
        f(format!("{}.b", self.name), self.bias.view().into_dyn());
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, ndarray::ArrayViewMutD<'_, S>)) {
        f(
            format!("{}.w", self.name),
            self.weight.view_mut().into_dyn(),
        );
        f(format!("{}.b", self.name), self.bias.view_mut().into_dyn());
    }
}

/// `conv -> ReLU -> conv -> ReLU`, the per-level block of the UNet.
#[derive(Debug, Clone)]
pub struct DoubleConv<S> {
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
}

#[derive(Debug)]
pub struct DoubleConvCache<S> {
    c1: ConvCache<S>,
    /// Post-ReLU activation of the first conv (its sign is the ReLU mask).
    a1: Array3<S>,
    c2: ConvCache<S>,
    /// Post-ReLU output (also what forward returned).
    a2: Array3<S>,
}

impl<S: Scalar> DoubleConv<S> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::new(&format!("{name}.c1"), in_ch, out_ch, 3, rng),
            conv2: Conv2d::new(&format!("{name}.c2"), out_ch, out_ch, 3, rng),
        }
    }

    pub fn forward(&self, x: &Array3<S>) -> (Array3<S>, DoubleConvCache<S>) {
        let (mut a1, c1) = self.conv1.forward(x);
        a1.mapv_inplace(|v| v.max(S::zero()));
        let (mut a2, c2) = self.conv2.forward(&a1);
        a2.mapv_inplace(|v| v.max(S::zero()));
        (
            a2.clone(),
            DoubleConvCache { c1, a1, c2, a2 },
        )
    }

    pub fn backward(
        &self,
        cache: &DoubleConvCache<S>,
        grad_out: &Array3<S>,
        grads: &mut Gradients<S>,
    ) -> Array3<S> {
        let mut g = grad_out.clone();
        g.zip_mut_with(&cache.a2, |gv, &av| {
            if av <= S::zero() {
                *gv = S::zero();
            }
        });
        let mut g = self.conv2.backward(&cache.c2, &g, grads);
        g.zip_mut_with(&cache.a1, |gv, &av| {
            if av <= S::zero() {
                *gv = S::zero();
            }
        });
        self.conv1.backward(&cache.c1, &g, grads)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }

    pub fn visit(&self, f: &mut impl FnMut(String, ndarray::ArrayViewD<'_, S>)) {
        self.conv1.visit(f);
        self.conv2.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, ndarray::ArrayViewMutD<'_, S>)) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
    }
}

/// 2x2 max pooling; the cache records which corner won (0..4) per output.
pub fn maxpool2<S: Scalar>(x: &Array3<S>) -> (Array3<S>, Array3<u8>) {
    let (c, h, w) = x.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0, "pooling an odd spatial size");
    let mut out = Array3::zeros((c, h / 2, w / 2));
    let mut idx = Array3::<u8>::zeros((c, h / 2, w / 2));
    for ci in 0..c {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                let mut best = x[[ci, 2 * i, 2 * j]];
                let mut best_k = 0u8;
                for k in 1..4u8 {
                    let v = x[[ci, 2 * i + (k / 2) as usize, 2 * j + (k % 2) as usize]];
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                out[[ci, i, j]] = best;
                idx[[ci, i, j]] = best_k;
            }
        }
    }
    (out, idx)
}

/// Routes each output gradient back to the pixel that won the max.
pub fn maxpool2_backward<S: Scalar>(idx: &Array3<u8>, grad_out: &Array3<S>) -> Array3<S> {
    let (c, h2, w2) = grad_out.dim();
    let mut gx = Array3::zeros((c, h2 * 2, w2 * 2));
    for ci in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let k = idx[[ci, i, j]];
                gx[[ci, 2 * i + (k / 2) as usize, 2 * j + (k % 2) as usize]] =
                    grad_out[[ci, i, j]];
            }
        }
    }
    gx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2<S: Scalar>(x: &Array3<S>) -> Array3<S> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h * 2, w * 2), |(ci, i, j)| x[[ci, i / 2, j / 2]])
}

/// Adjoint of nearest upsampling: each input pixel collects its 4 copies.
pub fn upsample2_backward<S: Scalar>(grad_out: &Array3<S>) -> Array3<S> {
    let (c, h2, w2) = grad_out.dim();
    let mut gx = Array3::zeros((c, h2 / 2, w2 / 2));
    for ci in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                gx[[ci, i / 2, j / 2]] += grad_out[[ci, i, j]];
            }
        }
    }
    gx
}
