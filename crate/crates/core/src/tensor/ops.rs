//! The closed set of differentiable kernels.
//!
//! Each operation validates shapes, computes the forward buffer, and records
//! a gradient rule that accumulates into its operands. Convolution runs as
//! im2col plus a cache-friendly matrix product; everything else is a direct
//! loop. No general broadcasting: shapes must match exactly where required.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Low-level kernels (flat slices, row-major)
// ---------------------------------------------------------------------------

/// out[m x n] += a[m x k] * b[k x n]
fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m x n] += a[m x k] * b^T, where b is [n x k]
fn matmul_abt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            // Four independent accumulators so the reduction vectorizes.
            let mut acc = [T::zero(); 4];
            let chunks = k / 4;
            for c in 0..chunks {
                let base = c * 4;
                for l in 0..4 {
                    acc[l] += a_row[base + l] * b_row[base + l];
                }
            }
            let mut tail = T::zero();
            for l in chunks * 4..k {
                tail += a_row[l] * b_row[l];
            }
            *o += acc[0] + acc[1] + acc[2] + acc[3] + tail;
        }
    }
}

/// out[m x n] += a^T * b, where a is [k x m] and b is [k x n]
fn matmul_atb<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one image [cin, h, w] into columns [cin*k*k, oh*ow].
fn im2col<T: Scalar>(src: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ohw = g.col_cols();
    for ci in 0..g.cin {
        let plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let out_row = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut out_row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix >= 0 && ix < g.w as isize {
                            src_row[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Folds column gradients [cin*k*k, oh*ow] back onto one image [cin, h, w].
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dst: &mut [T]) {
    let ohw = g.col_cols();
    for ci in 0..g.cin {
        let plane = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let col_row = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += col_row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2-D cross-correlation with bias: input [N,Cin,H,W], weight [Cout,Cin,k,k],
/// bias [Cout], square odd kernel, zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let ishape = input.shape();
    let wshape = weight.shape();
    if ishape.len() != 4 || wshape.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("expected 4-D input/weight, got {ishape:?} and {wshape:?}"),
        ));
    }
    let (n, cin, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (cout, wcin, k, k2) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    if k != k2 || k % 2 == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be square with odd size, got {k}x{k2}"),
        ));
    }
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels but weight expects {wcin}"),
        ));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?} does not match {cout} output channels", bias.shape()),
        ));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be positive".to_string()));
    }
    let oh = (h + 2 * padding).checked_sub(k).map(|v| v / stride + 1);
    let ow = (w + 2 * padding).checked_sub(k).map(|v| v / stride + 1);
    let (oh, ow) = match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k} with pad {padding} does not fit input {h}x{w}"),
            ))
        }
    };

    let geom = ConvGeom {
        cin,
        h,
        w,
        k,
        stride,
        pad: padding,
        oh,
        ow,
    };
    let (rows, hw) = (geom.col_rows(), geom.col_cols());
    let mut cols = vec![T::zero(); rows * hw];
    let mut out = vec![T::zero(); n * cout * hw];
    for img in 0..n {
        im2col(&input.data()[img * cin * h * w..], &geom, &mut cols);
        let out_img = &mut out[img * cout * hw..(img + 1) * cout * hw];
        matmul(weight.data(), &cols, cout, rows, hw, out_img);
        for c in 0..cout {
            let b = bias.data()[c];
            for o in &mut out_img[c * hw..(c + 1) * hw] {
                *o += b;
            }
        }
    }

    let (input_c, weight_c, bias_c) = (input.clone(), weight.clone(), bias.clone());
    Ok(Tensor::from_op(
        out,
        vec![n, cout, oh, ow],
        vec![input.clone(), weight.clone(), bias.clone()],
        move |grad| {
            let geom = ConvGeom {
                cin,
                h,
                w,
                k,
                stride,
                pad: padding,
                oh,
                ow,
            };
            let (rows, hw) = (geom.col_rows(), geom.col_cols());
            if bias_c.requires_grad() {
                let mut gb = vec![T::zero(); cout];
                for img in 0..n {
                    for c in 0..cout {
                        let g = &grad[(img * cout + c) * hw..(img * cout + c + 1) * hw];
                        gb[c] += g.iter().fold(T::zero(), |acc, &v| acc + v);
                    }
                }
                bias_c.accumulate_grad(&gb);
            }
            let need_w = weight_c.requires_grad();
            let need_x = input_c.requires_grad();
            if !need_w && !need_x {
                return;
            }
            let mut cols = vec![T::zero(); rows * hw];
            let mut gw = if need_w {
                vec![T::zero(); cout * rows]
            } else {
                Vec::new()
            };
            let mut gx = if need_x {
                vec![T::zero(); n * cin * h * w]
            } else {
                Vec::new()
            };
            let mut gcols = vec![T::zero(); rows * hw];
            for img in 0..n {
                let g_img = &grad[img * cout * hw..(img + 1) * cout * hw];
                if need_w {
                    im2col(&input_c.data()[img * cin * h * w..], &geom, &mut cols);
                    matmul_abt(g_img, &cols, cout, hw, rows, &mut gw);
                }
                if need_x {
                    gcols.fill(T::zero());
                    matmul_atb(weight_c.data(), g_img, cout, rows, hw, &mut gcols);
                    col2im(&gcols, &geom, &mut gx[img * cin * h * w..(img + 1) * cin * h * w]);
                }
            }
            if need_w {
                weight_c.accumulate_grad(&gw);
            }
            if need_x {
                input_c.accumulate_grad(&gx);
            }
        },
    ))
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

/// Elementwise max(0, x); the subgradient at exactly 0 is 0.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    let x_c = x.clone();
    Tensor::from_op(data, x.shape().to_vec(), vec![x.clone()], move |grad| {
        let gx: Vec<T> = x_c
            .data()
            .iter()
            .zip(grad)
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect();
        x_c.accumulate_grad(&gx);
    })
}

/// Elementwise sum of two same-shape tensors.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    let (a_c, b_c) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        vec![a.clone(), b.clone()],
        move |grad| {
            a_c.accumulate_grad(grad);
            b_c.accumulate_grad(grad);
        },
    ))
}

/// Elementwise product of two same-shape tensors.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "mul",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    let (a_c, b_c) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        vec![a.clone(), b.clone()],
        move |grad| {
            if a_c.requires_grad() {
                let ga: Vec<T> = grad.iter().zip(b_c.data()).map(|(&g, &y)| g * y).collect();
                a_c.accumulate_grad(&ga);
            }
            if b_c.requires_grad() {
                let gb: Vec<T> = grad.iter().zip(a_c.data()).map(|(&g, &x)| g * x).collect();
                b_c.accumulate_grad(&gb);
            }
        },
    ))
}

/// Multiplication by a constant.
pub fn scale<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v * c).collect();
    let x_c = x.clone();
    Tensor::from_op(data, x.shape().to_vec(), vec![x.clone()], move |grad| {
        let gx: Vec<T> = grad.iter().map(|&g| g * c).collect();
        x_c.accumulate_grad(&gx);
    })
}

/// Nearest-neighbour 2x upsampling of [N,C,H,W]: each source cell becomes a
/// 2x2 block; backward sums each block into its source cell.
pub fn upsample_nearest2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape(
            "upsample_nearest2x",
            format!("expected 4-D tensor, got {s:?}"),
        ));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..h {
            for xcol in 0..w {
                let v = src[y * w + xcol];
                let base = 2 * y * ow + 2 * xcol;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + ow] = v;
                dst[base + ow + 1] = v;
            }
        }
    }
    let x_c = x.clone();
    Ok(Tensor::from_op(
        out,
        vec![n, c, oh, ow],
        vec![x.clone()],
        move |grad| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for plane in 0..n * c {
                let g = &grad[plane * oh * ow..(plane + 1) * oh * ow];
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                for y in 0..h {
                    for xcol in 0..w {
                        let base = 2 * y * ow + 2 * xcol;
                        dst[y * w + xcol] = g[base] + g[base + 1] + g[base + ow] + g[base + ow + 1];
                    }
                }
            }
            x_c.accumulate_grad(&gx);
        },
    ))
}

/// Numerically stable softmax of a 1-D vector.
pub fn softmax1d<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    if v.shape().len() != 1 || v.is_empty() {
        return Err(Error::shape(
            "softmax1d",
            format!("expected nonempty 1-D tensor, got {:?}", v.shape()),
        ));
    }
    let max = v
        .data()
        .iter()
        .fold(T::neg_infinity(), |acc, &x| acc.max(x));
    let exps: Vec<T> = v.data().iter().map(|&x| (x - max).exp()).collect();
    let total = exps.iter().fold(T::zero(), |acc, &e| acc + e);
    let out: Vec<T> = exps.iter().map(|&e| e / total).collect();
    let out_saved = out.clone();
    let v_c = v.clone();
    Ok(Tensor::from_op(
        out,
        v.shape().to_vec(),
        vec![v.clone()],
        move |grad| {
            let dot = grad
                .iter()
                .zip(&out_saved)
                .fold(T::zero(), |acc, (&g, &w)| acc + g * w);
            let gv: Vec<T> = grad
                .iter()
                .zip(&out_saved)
                .map(|(&g, &w)| w * (g - dot))
                .collect();
            v_c.accumulate_grad(&gv);
        },
    ))
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Elementwise logistic function, stable for large |x|.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    let x_c = x.clone();
    Tensor::from_op(data, x.shape().to_vec(), vec![x.clone()], move |grad| {
        let gx: Vec<T> = x_c
            .data()
            .iter()
            .zip(grad)
            .map(|(&v, &g)| {
                let s = sigmoid_scalar(v);
                g * s * (T::one() - s)
            })
            .collect();
        x_c.accumulate_grad(&gx);
    })
}

/// Spatial mean of [N,C,H,W] down to [N,C].
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape(
            "global_avg_pool",
            format!("expected 4-D tensor, got {s:?}"),
        ));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let hw = h * w;
    let inv = T::from_f64(1.0 / hw as f64);
    let mut out = vec![T::zero(); n * c];
    for plane in 0..n * c {
        let src = &x.data()[plane * hw..(plane + 1) * hw];
        out[plane] = src.iter().fold(T::zero(), |acc, &v| acc + v) * inv;
    }
    let x_c = x.clone();
    Ok(Tensor::from_op(
        out,
        vec![n, c],
        vec![x.clone()],
        move |grad| {
            let mut gx = vec![T::zero(); n * c * hw];
            for plane in 0..n * c {
                let g = grad[plane] * inv;
                gx[plane * hw..(plane + 1) * hw].fill(g);
            }
            x_c.accumulate_grad(&gx);
        },
    ))
}

/// Mean over the leading axis of a 2-D tensor: [N,C] -> [C].
pub fn mean_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::shape(
            "mean_rows",
            format!("expected 2-D tensor, got {s:?}"),
        ));
    }
    let (n, c) = (s[0], s[1]);
    let inv = T::from_f64(1.0 / n as f64);
    let mut out = vec![T::zero(); c];
    for row in 0..n {
        for (o, &v) in out.iter_mut().zip(&x.data()[row * c..(row + 1) * c]) {
            *o += v;
        }
    }
    for o in &mut out {
        *o *= inv;
    }
    let x_c = x.clone();
    Ok(Tensor::from_op(
        out,
        vec![c],
        vec![x.clone()],
        move |grad| {
            let mut gx = vec![T::zero(); n * c];
            for row in 0..n {
                for (g, &gv) in gx[row * c..(row + 1) * c].iter_mut().zip(grad) {
                    *g = gv * inv;
                }
            }
            x_c.accumulate_grad(&gx);
        },
    ))
}

/// Sum of all elements, as a scalar tensor.
pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let total = x.data().iter().fold(T::zero(), |acc, &v| acc + v);
    let x_c = x.clone();
    Tensor::from_op(vec![total], vec![1], vec![x.clone()], move |grad| {
        let gx = vec![grad[0]; x_c.len()];
        x_c.accumulate_grad(&gx);
    })
}

/// Fixed-coefficient contraction to a scalar: sum_i coeffs[i] * x[i].
pub fn weighted_sum<T: Scalar>(x: &Tensor<T>, coeffs: &[T]) -> Result<Tensor<T>> {
    if coeffs.len() != x.len() {
        return Err(Error::shape(
            "weighted_sum",
            format!("{} coefficients for {} elements", coeffs.len(), x.len()),
        ));
    }
    let total = x
        .data()
        .iter()
        .zip(coeffs)
        .fold(T::zero(), |acc, (&v, &c)| acc + v * c);
    let coeffs = coeffs.to_vec();
    let x_c = x.clone();
    Ok(Tensor::from_op(
        vec![total],
        vec![1],
        vec![x.clone()],
        move |grad| {
            let gx: Vec<T> = coeffs.iter().map(|&c| c * grad[0]).collect();
            x_c.accumulate_grad(&gx);
        },
    ))
}

/// Scalar projection of a vector: dot(u, d) + bias. Both operands and the
/// bias participate in the gradient.
pub fn dot_bias<T: Scalar>(d: &Tensor<T>, u: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if d.shape() != u.shape() || d.shape().len() != 1 {
        return Err(Error::shape(
            "dot_bias",
            format!("{:?} vs {:?}", d.shape(), u.shape()),
        ));
    }
    if bias.len() != 1 {
        return Err(Error::shape(
            "dot_bias",
            format!("bias must be scalar, got {:?}", bias.shape()),
        ));
    }
    let dot = d
        .data()
        .iter()
        .zip(u.data())
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    let out = dot + bias.data()[0];
    let (d_c, u_c, b_c) = (d.clone(), u.clone(), bias.clone());
    Ok(Tensor::from_op(
        vec![out],
        vec![1],
        vec![d.clone(), u.clone(), bias.clone()],
        move |grad| {
            let g = grad[0];
            if d_c.requires_grad() {
                let gd: Vec<T> = u_c.data().iter().map(|&v| v * g).collect();
                d_c.accumulate_grad(&gd);
            }
            if u_c.requires_grad() {
                let gu: Vec<T> = d_c.data().iter().map(|&v| v * g).collect();
                u_c.accumulate_grad(&gu);
            }
            b_c.accumulate_grad(&[g]);
        },
    ))
}

/// Concatenates the flat buffers of the given tensors into one 1-D tensor.
pub fn concat_flat<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::shape("concat_flat", "no tensors given".to_string()));
    }
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut data = Vec::with_capacity(total);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let parts_c: Vec<Tensor<T>> = parts.to_vec();
    Ok(Tensor::from_op(
        data,
        vec![total],
        parts.to_vec(),
        move |grad| {
            let mut offset = 0;
            for p in &parts_c {
                p.accumulate_grad(&grad[offset..offset + p.len()]);
                offset += p.len();
            }
        },
    ))
}

/// Reorders a single-image head map [1, A*D, H, W] into a flat per-anchor
/// layout [H*W*A*D]: row-major over cells, then anchor slot, then the D
/// values of that slot.
pub fn flatten_anchor_major<T: Scalar>(x: &Tensor<T>, d: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || s[0] != 1 || d == 0 || s[1] % d != 0 {
        return Err(Error::shape(
            "flatten_anchor_major",
            format!("expected [1, A*{d}, H, W], got {s:?}"),
        ));
    }
    let (channels, h, w) = (s[1], s[2], s[3]);
    let a = channels / d;
    let hw = h * w;
    let mut out = vec![T::zero(); channels * hw];
    for slot in 0..a {
        for di in 0..d {
            let src = &x.data()[(slot * d + di) * hw..(slot * d + di + 1) * hw];
            for (cell, &v) in src.iter().enumerate() {
                out[(cell * a + slot) * d + di] = v;
            }
        }
    }
    let x_c = x.clone();
    Ok(Tensor::from_op(
        out,
        vec![channels * hw],
        vec![x.clone()],
        move |grad| {
            let mut gx = vec![T::zero(); channels * hw];
            for slot in 0..a {
                for di in 0..d {
                    let dst = &mut gx[(slot * d + di) * hw..(slot * d + di + 1) * hw];
                    for (cell, g) in dst.iter_mut().enumerate() {
                        *g = grad[(cell * a + slot) * d + di];
                    }
                }
            }
            x_c.accumulate_grad(&gx);
        },
    ))
}

/// Residual fusion of weighted branches: out = h + sum_b w[b] * branches[b].
/// The weight vector has one entry per branch and may itself be tracked.
pub fn residual_weighted_sum<T: Scalar>(
    h: &Tensor<T>,
    branches: &[Tensor<T>],
    weights: &Tensor<T>,
) -> Result<Tensor<T>> {
    if weights.len() != branches.len() {
        return Err(Error::shape(
            "residual_weighted_sum",
            format!("{} weights for {} branches", weights.len(), branches.len()),
        ));
    }
    for b in branches {
        if b.shape() != h.shape() {
            return Err(Error::shape(
                "residual_weighted_sum",
                format!("branch shape {:?} vs base {:?}", b.shape(), h.shape()),
            ));
        }
    }
    let mut out = h.data().to_vec();
    for (b, &wb) in branches.iter().zip(weights.data()) {
        for (o, &e) in out.iter_mut().zip(b.data()) {
            *o += wb * e;
        }
    }
    let mut parents = vec![h.clone(), weights.clone()];
    parents.extend(branches.iter().cloned());
    let h_c = h.clone();
    let w_c = weights.clone();
    let branches_c: Vec<Tensor<T>> = branches.to_vec();
    Ok(Tensor::from_op(
        out,
        h.shape().to_vec(),
        parents,
        move |grad| {
            h_c.accumulate_grad(grad);
            if w_c.requires_grad() {
                let gw: Vec<T> = branches_c
                    .iter()
                    .map(|b| {
                        grad.iter()
                            .zip(b.data())
                            .fold(T::zero(), |acc, (&g, &e)| acc + g * e)
                    })
                    .collect();
                w_c.accumulate_grad(&gw);
            }
            for (b, &wb) in branches_c.iter().zip(w_c.data()) {
                if b.requires_grad() {
                    let gb: Vec<T> = grad.iter().map(|&g| g * wb).collect();
                    b.accumulate_grad(&gb);
                }
            }
        },
    ))
}
