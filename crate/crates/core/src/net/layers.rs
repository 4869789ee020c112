//! Layer kernels on flat row-major buffers. Backward kernels accumulate into
//! the parameter gradients and overwrite input gradients.

use super::scalar::{gemm, Scalar, View};

/// `y (rows x out, row stride ldy) = x * w + bias`.
pub(crate) fn dense_forward<S: Scalar>(
    x: View<'_, S>,
    rows: usize,
    w: &[S],
    bias: &[S],
    y: &mut [S],
    ldy: usize,
) {
    let out = bias.len();
    let inp = w.len() / out;
    gemm(rows, inp, out, x, View::rows(w, out), S::zero(), y, ldy, 1);
    for r in 0..rows {
        for (v, &b) in y[r * ldy..r * ldy + out].iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

pub(crate) fn dense_backward<S: Scalar>(
    x: View<'_, S>,
    rows: usize,
    w: &[S],
    dy: View<'_, S>,
    dw: &mut [S],
    db: &mut [S],
    dx: Option<(&mut [S], usize)>,
) {
    let out = db.len();
    let inp = w.len() / out;
    gemm(inp, rows, out, x.t(), dy, S::one(), dw, out, 1);
    for r in 0..rows {
        for (o, g) in db.iter_mut().enumerate() {
            *g = *g + dy.data[r * dy.rs + o * dy.cs];
        }
    }
    if let Some((dx, ldx)) = dx {
        gemm(rows, out, inp, dy, View::rows(w, out).t(), S::zero(), dx, ldx, 1);
    }
}

/// Geometry of a valid 1D convolution over channels-last `(len, channels)` input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub len: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
    pub out_len: usize,
}

impl ConvGeom {
    fn in_size(&self) -> usize {
        self.len * self.channels
    }

    fn out_size(&self) -> usize {
        self.out_len * self.filters
    }

    /// Overlapping-window view of one sample: row `l` is the receptive field of output `l`.
    fn windows<'a, S>(&self, x: &'a [S]) -> View<'a, S> {
        View::new(x, self.stride * self.channels, 1)
    }
}

pub(crate) fn conv1d_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    g: ConvGeom,
    w: &[S],
    bias: &[S],
    y: &mut [S],
) {
    let k = g.kernel * g.channels;
    for b in 0..batch {
        let xb = &x[b * g.in_size()..(b + 1) * g.in_size()];
        let yb = &mut y[b * g.out_size()..(b + 1) * g.out_size()];
        gemm(g.out_len, k, g.filters, g.windows(xb), View::rows(w, g.filters), S::zero(), yb, g.filters, 1);
        for row in yb.chunks_exact_mut(g.filters) {
            for (v, &bb) in row.iter_mut().zip(bias) {
                *v = *v + bb;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward<S: Scalar>(
    x: &[S],
    batch: usize,
    g: ConvGeom,
    w: &[S],
    dy: &[S],
    dw: &mut [S],
    db: &mut [S],
    mut dx: Option<&mut [S]>,
) {
    let k = g.kernel * g.channels;
    for b in 0..batch {
        let xb = &x[b * g.in_size()..(b + 1) * g.in_size()];
        let dyb = &dy[b * g.out_size()..(b + 1) * g.out_size()];
        gemm(k, g.out_len, g.filters, g.windows(xb).t(), View::rows(dyb, g.filters), S::one(), dw, g.filters, 1);
        for row in dyb.chunks_exact(g.filters) {
            for (acc, &v) in db.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * g.in_size()..(b + 1) * g.in_size()];
            dxb.fill(S::zero());
            // One GEMM per tap; within a tap the output rows never overlap.
            for j in 0..g.kernel {
                let wj = View::new(&w[j * g.channels * g.filters..], 1, g.filters);
                gemm(
                    g.out_len,
                    g.filters,
                    g.channels,
                    View::rows(dyb, g.filters),
                    wj,
                    S::one(),
                    &mut dxb[j * g.channels..],
                    g.stride * g.channels,
                    1,
                );
            }
        }
    }
}

pub(crate) fn relu<S: Scalar>(y: &mut [S]) {
    for v in y {
        if !(*v > S::zero()) {
            *v = S::zero();
        }
    }
}

/// Masks `d` where the post-activation output is not positive.
pub(crate) fn relu_backward<S: Scalar>(post: &[S], d: &mut [S]) {
    for (g, &p) in d.iter_mut().zip(post) {
        if !(p > S::zero()) {
            *g = S::zero();
        }
    }
}
