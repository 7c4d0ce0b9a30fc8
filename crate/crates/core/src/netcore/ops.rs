//! Stateless forward and backward kernels. Batched kernels process each
//! sample independently, so a sample's result does not depend on what else
//! is in the batch.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`.
    Same,
    Valid,
}

/// Output size and leading padding along one axis.
pub fn window_geometry(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Option<(usize, usize)> {
    if kernel == 0 || stride == 0 || input == 0 {
        return None;
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
    }
}

fn geometry2(
    layer: &str,
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    padding: Padding,
) -> Result<((usize, usize), (usize, usize))> {
    let gh = window_geometry(h, kh, stride, padding);
    let gw = window_geometry(w, kw, stride, padding);
    match (gh, gw) {
        (Some((oh, ph)), Some((ow, pw))) => Ok(((oh, ow), (ph, pw))),
        _ => Err(Error::dim(
            layer,
            format!("{kh}x{kw} window (stride {stride}, {padding:?}) does not fit {h}x{w} input"),
        )),
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    ph: usize,
    pw: usize,
    stride: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate for output `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, size: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(pad).filter(|&v| v < size)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let Some(y) = g.src(oi, ki, g.ph, g.h) else {
                        dst[oi * g.ow..(oi + 1) * g.ow].fill(T::zero());
                        continue;
                    };
                    for oj in 0..g.ow {
                        dst[oi * g.ow + oj] = match g.src(oj, kj, g.pw, g.w) {
                            Some(xx) => x[(ci * g.h + y) * g.w + xx],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let Some(y) = g.src(oi, ki, g.ph, g.h) else {
                        continue;
                    };
                    for oj in 0..g.ow {
                        if let Some(xx) = g.src(oj, kj, g.pw, g.w) {
                            dx[(ci * g.h + y) * g.w + xx] += src[oi * g.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom<T: Scalar>(
    layer: &str,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, ConvGeom)> {
    let (n, c, h, w) = x.dims4(layer)?;
    let (o, wc, kh, kw) = weight.dims4(layer)?;
    if wc != c {
        return Err(Error::dim(
            layer,
            format!(
                "input {:?} has {c} channels, kernel {:?} expects {wc}",
                x.shape(),
                weight.shape()
            ),
        ));
    }
    let ((oh, ow), (ph, pw)) = geometry2(layer, (h, w), (kh, kw), stride, padding)?;
    Ok((
        n,
        o,
        ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            ph,
            pw,
            stride,
        },
    ))
}

/// 2-D cross-correlation of an NCHW input with OIHW weights, plus bias.
pub fn conv2d_forward<T: Scalar>(
    layer: &str,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, o, g) = conv_geom(layer, x, weight, stride, padding)?;
    if bias.len() != o {
        return Err(Error::dim(
            layer,
            format!("bias has {} values for {o} kernels", bias.len()),
        ));
    }
    let (k, p) = (g.patch(), g.positions());
    let mut out = Tensor::zeros(&[n, o, g.oh, g.ow]);
    let mut cols = vec![T::zero(); k * p];
    let in_len = g.c * g.h * g.w;
    for s in 0..n {
        im2col(&x.data()[s * in_len..(s + 1) * in_len], &g, &mut cols);
        let dst = &mut out.data_mut()[s * o * p..(s + 1) * o * p];
        for (oc, row) in dst.chunks_mut(p).enumerate() {
            row.fill(bias.data()[oc]);
        }
        T::gemm(
            o,
            k,
            p,
            (weight.data(), k as isize, 1),
            (&cols, p as isize, 1),
            T::one(),
            (dst, p as isize, 1),
        );
    }
    Ok(out)
}

/// Accumulates weight and bias gradients into `dweight`/`dbias` and
/// returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    layer: &str,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: Padding,
    dweight: &mut [T],
    dbias: &mut [T],
) -> Result<Tensor<T>> {
    let (n, o, g) = conv_geom(layer, x, weight, stride, padding)?;
    if dy.shape() != [n, o, g.oh, g.ow] {
        return Err(Error::dim(
            layer,
            format!("output gradient {:?}", dy.shape()),
        ));
    }
    let (k, p) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let mut dx = Tensor::zeros(x.shape());
    let mut cols = vec![T::zero(); k * p];
    let mut dcols = vec![T::zero(); k * p];
    for s in 0..n {
        let gy = &dy.data()[s * o * p..(s + 1) * o * p];
        for (oc, row) in gy.chunks(p).enumerate() {
            dbias[oc] += row.iter().copied().sum::<T>();
        }
        im2col(&x.data()[s * in_len..(s + 1) * in_len], &g, &mut cols);
        // dW (o×k) += dY (o×p) · cols^T (p×k)
        T::gemm(
            o,
            p,
            k,
            (gy, p as isize, 1),
            (&cols, 1, p as isize),
            T::one(),
            (dweight, k as isize, 1),
        );
        // dcols (k×p) = W^T (k×o) · dY (o×p)
        T::gemm(
            k,
            o,
            p,
            (weight.data(), 1, k as isize),
            (gy, p as isize, 1),
            T::zero(),
            (&mut dcols, p as isize, 1),
        );
        col2im_add(&dcols, &g, &mut dx.data_mut()[s * in_len..(s + 1) * in_len]);
    }
    Ok(dx)
}

/// Windowed maximum. Returns the output and, per output element, the flat
/// input index it came from (first maximum in row-major window order).
pub fn maxpool2d_forward<T: Scalar>(
    layer: &str,
    x: &Tensor<T>,
    kernel: (usize, usize),
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4(layer)?;
    let ((oh, ow), (ph, pw)) = geometry2(layer, (h, w), kernel, stride, padding)?;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best: Option<(T, usize)> = None;
                for ki in 0..kernel.0 {
                    let Some(y) = (oi * stride + ki).checked_sub(ph).filter(|&v| v < h) else {
                        continue;
                    };
                    for kj in 0..kernel.1 {
                        let Some(xx) = (oj * stride + kj).checked_sub(pw).filter(|&v| v < w) else {
                            continue;
                        };
                        let idx = base + y * w + xx;
                        if best.is_none_or(|(b, _)| xd[idx] > b) {
                            best = Some((xd[idx], idx));
                        }
                    }
                }
                let (v, idx) = best
                    .ok_or_else(|| Error::dim(layer, "pooling window lies entirely in padding"))?;
                let o = (plane * oh + oi) * ow + oj;
                od[o] = v;
                arg[o] = idx;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    dx
}

/// `y = x · Wᵀ + b` for `x` N×F and `weight` O×F. Plain loops keep every
/// row bit-identical regardless of batch size.
pub fn linear_forward<T: Scalar>(
    layer: &str,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, f) = x.dims2(layer)?;
    let (o, wf) = weight.dims2(layer)?;
    if wf != f || bias.len() != o {
        return Err(Error::dim(
            layer,
            format!(
                "input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                weight.shape(),
                bias.shape()
            ),
        ));
    }
    let mut y = Tensor::zeros(&[n, o]);
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    for (s, row) in y.data_mut().chunks_mut(o).enumerate() {
        let xs = &xd[s * f..(s + 1) * f];
        for (j, out) in row.iter_mut().enumerate() {
            let wj = &wd[j * f..(j + 1) * f];
            let mut acc = bd[j];
            for (a, b) in xs.iter().zip(wj) {
                acc += *a * *b;
            }
            *out = acc;
        }
    }
    Ok(y)
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    dweight: &mut [T],
    dbias: &mut [T],
) -> Tensor<T> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let o = weight.shape()[0];
    let mut dx = Tensor::zeros(&[n, f]);
    let (xd, wd, gd) = (x.data(), weight.data(), dy.data());
    for s in 0..n {
        let xs = &xd[s * f..(s + 1) * f];
        let dxs = &mut dx.data_mut()[s * f..(s + 1) * f];
        for j in 0..o {
            let g = gd[s * o + j];
            if g == T::zero() {
                continue;
            }
            dbias[j] += g;
            let wj = &wd[j * f..(j + 1) * f];
            let dwj = &mut dweight[j * f..(j + 1) * f];
            for i in 0..f {
                dwj[i] += g * xs[i];
                dxs[i] += g * wj[i];
            }
        }
    }
    dx
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of relu given its output.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

/// Row-wise softmax of an N×K matrix, shifted by the row maximum.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = logits.dims2("softmax")?;
    let mut out = logits.clone();
    if k == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    Ok(out)
}

/// Gradient of softmax given its output `y`: `y ⊙ (dy − ⟨dy, y⟩)` per row.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let k = y.shape()[1];
    let mut dx = dy.clone();
    for (gr, yr) in dx.data_mut().chunks_mut(k).zip(y.data().chunks(k)) {
        let dot: T = gr.iter().zip(yr).map(|(&g, &p)| g * p).sum();
        for (g, &p) in gr.iter_mut().zip(yr) {
            *g = p * (*g - dot);
        }
    }
    dx
}

/// Channel-wise maximum of an NCHW tensor (keeps a size-1 channel axis),
/// plus the winning channel per position (first on ties).
pub fn channel_max<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4("channel_max")?;
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    let mut arg = vec![0usize; n * hw];
    for s in 0..n {
        for i in 0..hw {
            let mut best = (x.data()[s * c * hw + i], 0);
            for ch in 1..c {
                let v = x.data()[(s * c + ch) * hw + i];
                if v > best.0 {
                    best = (v, ch);
                }
            }
            out.data_mut()[s * hw + i] = best.0;
            arg[s * hw + i] = best.1;
        }
    }
    Ok((out, arg))
}

pub fn channel_max_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (c, hw) = (input_shape[1], input_shape[2] * input_shape[3]);
    let mut dx = Tensor::zeros(input_shape);
    for (j, (&ch, &g)) in argmax.iter().zip(dy.data()).enumerate() {
        let (s, i) = (j / hw, j % hw);
        dx.data_mut()[(s * c + ch) * hw + i] += g;
    }
    dx
}

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let (n, _, h, w) = parts
        .first()
        .ok_or_else(|| Error::dim("concat", "nothing to concatenate"))?
        .dims4("concat")?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4("concat")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::dim(
                "concat",
                format!("{:?} vs {:?}", parts[0].shape(), p.shape()),
            ));
        }
        total += pc;
    }
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, total, h, w]);
    for s in 0..n {
        let mut at = 0;
        for p in parts {
            let pc = p.shape()[1];
            out.data_mut()[(s * total + at) * hw..(s * total + at + pc) * hw]
                .copy_from_slice(&p.data()[s * pc * hw..(s + 1) * pc * hw]);
            at += pc;
        }
    }
    Ok(out)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, sizes: &[usize]) -> Vec<Tensor<T>> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let mut at = 0;
    sizes
        .iter()
        .map(|&pc| {
            let mut t = Tensor::zeros(&[n, pc, h, w]);
            for s in 0..n {
                t.data_mut()[s * pc * hw..(s + 1) * pc * hw]
                    .copy_from_slice(&x.data()[(s * c + at) * hw..(s * c + at + pc) * hw]);
            }
            at += pc;
            t
        })
        .collect()
}
