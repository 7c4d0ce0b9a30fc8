//! Feature gathering for the action head: per query, pick the rover's cell
//! from a spatial feature map and join it with per-map global features.

use crate::gridworld::Pos;
use crate::netcore::{Scalar, Tensor};
use crate::{Error, Result};

/// A position on the `map`-th input of a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    pub map: usize,
    pub pos: Pos,
}

impl Query {
    pub fn new(map: usize, pos: Pos) -> Self {
        Query { map, pos }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct HeadLayout {
    /// Input map size, for bounds checks and coordinate features.
    pub height: usize,
    pub width: usize,
    /// Full-resolution cells per feature-map cell.
    pub scale: (usize, usize),
    pub coord_augment: bool,
}

impl HeadLayout {
    pub fn width(&self, global: usize, local: usize) -> usize {
        global + local + if self.coord_augment { 2 } else { 0 }
    }
}

/// Builds the B×F head input `[global[m], local[m, :, r/s1, c/s2], coords]`.
pub(crate) fn gather<T: Scalar>(
    layout: &HeadLayout,
    global: Option<&Tensor<T>>,
    local: &Tensor<T>,
    queries: &[Query],
) -> Result<Tensor<T>> {
    let (m, d, lh, lw) = local.dims4("head")?;
    let g = global.map_or(0, |t| t.shape()[1]);
    let f = layout.width(g, d);
    let mut out = Tensor::zeros(&[queries.len(), f]);
    for (i, q) in queries.iter().enumerate() {
        if q.map >= m || q.pos.row >= layout.height || q.pos.col >= layout.width {
            return Err(Error::dim(
                "head",
                format!(
                    "query {q:?} outside {m} maps of {}x{}",
                    layout.height, layout.width
                ),
            ));
        }
        let row = &mut out.data_mut()[i * f..(i + 1) * f];
        if let Some(gt) = global {
            row[..g].copy_from_slice(&gt.data()[q.map * g..(q.map + 1) * g]);
        }
        let (r, c) = (q.pos.row / layout.scale.0, q.pos.col / layout.scale.1);
        debug_assert!(r < lh && c < lw);
        for ch in 0..d {
            row[g + ch] = local.data()[((q.map * d + ch) * lh + r) * lw + c];
        }
        if layout.coord_augment {
            row[g + d] = T::lit(q.pos.row as f64 / layout.height as f64);
            row[g + d + 1] = T::lit(q.pos.col as f64 / layout.width as f64);
        }
    }
    Ok(out)
}

/// Adjoint of [`gather`]: scatter-adds head-input gradients back onto the
/// global (M×G) and local (M×D×h×w) feature gradients.
pub(crate) fn scatter<T: Scalar>(
    layout: &HeadLayout,
    grad: &Tensor<T>,
    global_shape: Option<&[usize]>,
    local_shape: &[usize],
    queries: &[Query],
) -> (Option<Tensor<T>>, Tensor<T>) {
    let (d, lh, lw) = (local_shape[1], local_shape[2], local_shape[3]);
    let g = global_shape.map_or(0, |s| s[1]);
    let f = layout.width(g, d);
    let mut dglobal = global_shape.map(Tensor::zeros);
    let mut dlocal = Tensor::zeros(local_shape);
    for (i, q) in queries.iter().enumerate() {
        let row = &grad.data()[i * f..(i + 1) * f];
        if let Some(dg) = dglobal.as_mut() {
            for (dst, &v) in dg.data_mut()[q.map * g..(q.map + 1) * g]
                .iter_mut()
                .zip(&row[..g])
            {
                *dst += v;
            }
        }
        let (r, c) = (q.pos.row / layout.scale.0, q.pos.col / layout.scale.1);
        for ch in 0..d {
            dlocal.data_mut()[((q.map * d + ch) * lh + r) * lw + c] += row[g + ch];
        }
    }
    (dglobal, dlocal)
}
