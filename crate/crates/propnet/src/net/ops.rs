//! Dense 3x3 convolution, stride-2 transposed convolution, ReLU, and
//! channel concat/split primitives, with hand-written backward passes.
//!
//! All kernels are 3x3 with zero padding 1. Convolutions support stride
//! 1 and 2; the transposed convolution is the exact linear adjoint of the
//! stride-2 convolution, so a (C_in, 2H, 2W) -> (C_out, H, W) downsampling
//! conv and a (C_out, H, W) -> (C_in, 2H, 2W) upsampling deconv sharing
//! one weight buffer satisfy <conv(x), u> = <x, deconv(u)> exactly.

use super::{FeatureMap, Scalar};

pub const KERNEL: usize = 3;
const K2: usize = KERNEL * KERNEL;

/// Weights and bias of one convolution layer.
/// Layout: `weights[(o * in_channels + i) * 9 + kh * 3 + kw]`, `bias[o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            weights: vec![T::zero(); out_channels * in_channels * K2],
            bias: vec![T::zero(); out_channels],
        }
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize, kh: usize, kw: usize) -> T {
        self.weights[(o * self.in_channels + i) * K2 + kh * KERNEL + kw]
    }

    #[inline]
    pub fn set_w(&mut self, o: usize, i: usize, kh: usize, kw: usize, v: T) {
        self.weights[(o * self.in_channels + i) * K2 + kh * KERNEL + kw] = v;
    }
}

/// Weights and bias of one transposed-convolution layer.
/// Layout: `weights[(i * out_channels + o) * 9 + kh * 3 + kw]`, `bias[o]`
/// — identical memory layout to the [`ConvParams`] of the adjoint
/// convolution (conv output channels = deconv input channels).
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DeconvParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: vec![T::zero(); in_channels * out_channels * K2],
            bias: vec![T::zero(); out_channels],
        }
    }

    #[inline]
    pub fn w(&self, i: usize, o: usize, kh: usize, kw: usize) -> T {
        self.weights[(i * self.out_channels + o) * K2 + kh * KERNEL + kw]
    }

    #[inline]
    pub fn set_w(&mut self, i: usize, o: usize, kh: usize, kw: usize, v: T) {
        self.weights[(i * self.out_channels + o) * K2 + kh * KERNEL + kw] = v;
    }
}

#[inline]
fn out_extent(input: usize, stride: usize) -> usize {
    // 3x3 kernel, padding 1: floor((n - 1) / stride) + 1
    (input - 1) / stride + 1
}

/// 3x3 convolution with zero padding 1 and the given stride (1 or 2).
pub fn conv_forward<T: Scalar>(
    x: &FeatureMap<T>,
    p: &ConvParams<T>,
    stride: usize,
) -> FeatureMap<T> {
    assert!(stride == 1 || stride == 2, "stride must be 1 or 2");
    assert_eq!(x.channels, p.in_channels, "conv input channel mismatch");
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (out_extent(h, stride), out_extent(w, stride));
    let mut out = FeatureMap::zeros(p.out_channels, oh, ow);
    for o in 0..p.out_channels {
        let b = p.bias[o];
        let out_plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
        for v in out_plane.iter_mut() {
            *v = b;
        }
        for ci in 0..p.in_channels {
            let x_plane = x.channel(ci);
            for kh in 0..KERNEL {
                let dy = kh as isize - 1;
                // output rows whose sampled input row is in bounds
                let i0 = if dy < 0 { 1usize.div_ceil(stride) } else { 0 };
                for kw in 0..KERNEL {
                    let weight = p.w(o, ci, kh, kw);
                    if weight == T::zero() {
                        continue;
                    }
                    let dx = kw as isize - 1;
                    let j0 = if dx < 0 { 1usize.div_ceil(stride) } else { 0 };
                    for i in i0..oh {
                        let y = (i * stride) as isize + dy;
                        if y >= h as isize {
                            break;
                        }
                        let x_row = &x_plane[y as usize * w..(y as usize + 1) * w];
                        let out_row = &mut out_plane[i * ow..(i + 1) * ow];
                        for (j, out_v) in out_row.iter_mut().enumerate().skip(j0) {
                            let xc = (j * stride) as isize + dx;
                            if xc >= w as isize {
                                break;
                            }
                            *out_v = *out_v + weight * x_row[xc as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv_forward`]: accumulates weight/bias gradients
/// into `grad_p` and returns the gradient with respect to the input.
pub fn conv_backward<T: Scalar>(
    x: &FeatureMap<T>,
    p: &ConvParams<T>,
    stride: usize,
    d_out: &FeatureMap<T>,
    grad_p: &mut ConvParams<T>,
) -> FeatureMap<T> {
    assert!(stride == 1 || stride == 2, "stride must be 1 or 2");
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (out_extent(h, stride), out_extent(w, stride));
    assert_eq!(
        (d_out.channels, d_out.height, d_out.width),
        (p.out_channels, oh, ow),
        "conv output gradient shape mismatch"
    );
    let mut d_x = FeatureMap::zeros(x.channels, h, w);
    for o in 0..p.out_channels {
        let d_plane = d_out.channel(o);
        let mut db = T::zero();
        for &g in d_plane {
            db = db + g;
        }
        grad_p.bias[o] = grad_p.bias[o] + db;
        for ci in 0..p.in_channels {
            let x_plane = x.channel(ci);
            let dx_plane = &mut d_x.data[ci * h * w..(ci + 1) * h * w];
            for kh in 0..KERNEL {
                let dy = kh as isize - 1;
                let i0 = if dy < 0 { 1usize.div_ceil(stride) } else { 0 };
                for kw in 0..KERNEL {
                    let weight = p.w(o, ci, kh, kw);
                    let dx_off = kw as isize - 1;
                    let j0 = if dx_off < 0 {
                        1usize.div_ceil(stride)
                    } else {
                        0
                    };
                    let mut dw = T::zero();
                    for i in i0..oh {
                        let y = (i * stride) as isize + dy;
                        if y >= h as isize {
                            break;
                        }
                        let x_row = &x_plane[y as usize * w..(y as usize + 1) * w];
                        let dx_row = &mut dx_plane[y as usize * w..(y as usize + 1) * w];
                        let d_row = &d_plane[i * ow..(i + 1) * ow];
                        for (j, &g) in d_row.iter().enumerate().skip(j0) {
                            let xc = (j * stride) as isize + dx_off;
                            if xc >= w as isize {
                                break;
                            }
                            dw = dw + g * x_row[xc as usize];
                            dx_row[xc as usize] = dx_row[xc as usize] + weight * g;
                        }
                    }
                    let idx = (o * p.in_channels + ci) * K2 + kh * KERNEL + kw;
                    grad_p.weights[idx] = grad_p.weights[idx] + dw;
                }
            }
        }
    }
    d_x
}

/// Stride-2 3x3 transposed convolution: maps (C_in, H, W) to
/// (C_out, 2H, 2W) as the exact adjoint of the stride-2 convolution that
/// maps (C_out, 2H, 2W) to (C_in, H, W), plus a per-channel bias.
pub fn deconv_forward<T: Scalar>(u: &FeatureMap<T>, p: &DeconvParams<T>) -> FeatureMap<T> {
    assert_eq!(u.channels, p.in_channels, "deconv input channel mismatch");
    let (h, w) = (u.height, u.width);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = FeatureMap::zeros(p.out_channels, oh, ow);
    for o in 0..p.out_channels {
        let b = p.bias[o];
        for v in &mut out.data[o * oh * ow..(o + 1) * oh * ow] {
            *v = b;
        }
    }
    for di in 0..p.in_channels {
        let u_plane = u.channel(di);
        for o in 0..p.out_channels {
            let out_plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
            for kh in 0..KERNEL {
                let dy = kh as isize - 1;
                let i0 = if dy < 0 { 1 } else { 0 };
                for kw in 0..KERNEL {
                    let weight = p.w(di, o, kh, kw);
                    if weight == T::zero() {
                        continue;
                    }
                    let dx = kw as isize - 1;
                    let j0 = if dx < 0 { 1 } else { 0 };
                    for i in i0..h {
                        let row = (2 * i) as isize + dy;
                        let u_row = &u_plane[i * w..(i + 1) * w];
                        let out_row = &mut out_plane[row as usize * ow..(row as usize + 1) * ow];
                        for (j, &uv) in u_row.iter().enumerate().skip(j0) {
                            let col = (2 * j) as isize + dx;
                            out_row[col as usize] = out_row[col as usize] + weight * uv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`deconv_forward`]: accumulates weight/bias gradients
/// into `grad_p` and returns the gradient with respect to the input.
pub fn deconv_backward<T: Scalar>(
    u: &FeatureMap<T>,
    p: &DeconvParams<T>,
    d_y: &FeatureMap<T>,
    grad_p: &mut DeconvParams<T>,
) -> FeatureMap<T> {
    let (h, w) = (u.height, u.width);
    let (oh, ow) = (2 * h, 2 * w);
    assert_eq!(
        (d_y.channels, d_y.height, d_y.width),
        (p.out_channels, oh, ow),
        "deconv output gradient shape mismatch"
    );
    let mut d_u = FeatureMap::zeros(u.channels, h, w);
    for o in 0..p.out_channels {
        let dy_plane = d_y.channel(o);
        let mut db = T::zero();
        for &g in dy_plane {
            db = db + g;
        }
        grad_p.bias[o] = grad_p.bias[o] + db;
    }
    for di in 0..p.in_channels {
        let u_plane = u.channel(di);
        let du_plane_start = di * h * w;
        for o in 0..p.out_channels {
            let dy_plane = d_y.channel(o);
            for kh in 0..KERNEL {
                let dyo = kh as isize - 1;
                let i0 = if dyo < 0 { 1 } else { 0 };
                for kw in 0..KERNEL {
                    let weight = p.w(di, o, kh, kw);
                    let dxo = kw as isize - 1;
                    let j0 = if dxo < 0 { 1 } else { 0 };
                    let mut dw = T::zero();
                    for i in i0..h {
                        let row = ((2 * i) as isize + dyo) as usize;
                        let u_row = &u_plane[i * w..(i + 1) * w];
                        let dy_row = &dy_plane[row * ow..(row + 1) * ow];
                        let du_row =
                            &mut d_u.data[du_plane_start + i * w..du_plane_start + (i + 1) * w];
                        for j in j0..w {
                            let col = ((2 * j) as isize + dxo) as usize;
                            let g = dy_row[col];
                            dw = dw + u_row[j] * g;
                            du_row[j] = du_row[j] + weight * g;
                        }
                    }
                    let idx = (di * p.out_channels + o) * K2 + kh * KERNEL + kw;
                    grad_p.weights[idx] = grad_p.weights[idx] + dw;
                }
            }
        }
    }
    d_u
}

/// Elementwise max(0, x).
pub fn relu_forward<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// ReLU gradient: passes `d_y` where the pre-activation was positive.
pub fn relu_backward<T: Scalar>(pre: &FeatureMap<T>, d_y: &FeatureMap<T>) -> FeatureMap<T> {
    assert_eq!(pre.data.len(), d_y.data.len(), "relu shape mismatch");
    let mut out = d_y.clone();
    for (v, &z) in out.data.iter_mut().zip(&pre.data) {
        if z <= T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// Stack `a`'s channels followed by `b`'s channels.
pub fn concat_channels<T: Scalar>(a: &FeatureMap<T>, b: &FeatureMap<T>) -> FeatureMap<T> {
    assert_eq!(
        (a.height, a.width),
        (b.height, b.width),
        "concat resolution mismatch"
    );
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    FeatureMap {
        channels: a.channels + b.channels,
        height: a.height,
        width: a.width,
        data,
    }
}

/// Inverse of [`concat_channels`]: split after the first `c_a` channels.
pub fn split_channels<T: Scalar>(g: &FeatureMap<T>, c_a: usize) -> (FeatureMap<T>, FeatureMap<T>) {
    assert!(c_a <= g.channels, "split point beyond channel count");
    let n = g.height * g.width;
    let a = FeatureMap {
        channels: c_a,
        height: g.height,
        width: g.width,
        data: g.data[..c_a * n].to_vec(),
    };
    let b = FeatureMap {
        channels: g.channels - c_a,
        height: g.height,
        width: g.width,
        data: g.data[c_a * n..].to_vec(),
    };
    (a, b)
}
