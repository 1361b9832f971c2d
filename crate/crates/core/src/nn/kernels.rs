//! Batched forward and backward kernels over flat row-major buffers.
//!
//! Every kernel processes a leading batch axis and reduces across the batch
//! in ascending example order, so results are bit-identical run to run.

use crate::scalar::{gemm, MatView, Scalar};

/// Zero padding along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent equals input extent; `k - 1` zeros split with the
    /// smaller half before the data.
    Same,
    /// No padding; output extent is `n - k + 1`.
    Valid,
}

impl Padding {
    /// `(pad_before, pad_after)` for a filter of extent `k`.
    pub fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Same => {
                let total = k - 1;
                (total / 2, total - total / 2)
            }
            Padding::Valid => (0, 0),
        }
    }
}

/// Resolved geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// `None` when the filter does not fit the padded input.
    pub fn new(
        (in_c, in_h, in_w): (usize, usize, usize),
        (out_c, kh, kw): (usize, usize, usize),
        (pad_h, pad_w): (Padding, Padding),
    ) -> Option<Self> {
        let (pt, pb) = pad_h.amounts(kh);
        let (pl, pr) = pad_w.amounts(kw);
        let padded_h = in_h + pt + pb;
        let padded_w = in_w + pl + pr;
        if kh == 0 || kw == 0 || kh > padded_h || kw > padded_w {
            return None;
        }
        Some(ConvGeometry {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            pad_top: pt,
            pad_left: pl,
            out_h: padded_h - kh + 1,
            out_w: padded_w - kw + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_positions()
    }

    /// Writes the receptive fields of one example into `col`, a
    /// `[patch_len, ld]` row-major buffer, starting at column `col0`.
    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T], ld: usize, col0: usize) {
        let n = self.out_positions();
        let mut row = 0;
        for c in 0..self.in_c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let dst = &mut col[row * ld + col0..][..n];
                    for oh in 0..self.out_h {
                        let line = &mut dst[oh * self.out_w..(oh + 1) * self.out_w];
                        let ih = (oh + i) as isize - self.pad_top as isize;
                        if ih < 0 || ih >= self.in_h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &x[(c * self.in_h + ih as usize) * self.in_w..][..self.in_w];
                        let (lo, hi, shift) = self.valid_span(j);
                        line[..lo].fill(T::zero());
                        line[lo..hi].copy_from_slice(&src[(lo as isize + shift) as usize..(hi as isize + shift) as usize]);
                        line[hi..].fill(T::zero());
                    }
                    row += 1;
                }
            }
        }
    }

    /// Output columns `[lo, hi)` whose input column `ow + shift` is in bounds
    /// for filter tap `j`.
    fn valid_span(&self, j: usize) -> (usize, usize, isize) {
        let shift = j as isize - self.pad_left as isize;
        let lo = (-shift).clamp(0, self.out_w as isize) as usize;
        let hi = (self.in_w as isize - shift).clamp(lo as isize, self.out_w as isize) as usize;
        (lo, hi, shift)
    }

    /// Scatter-adds the example block of `col` starting at column `col0`
    /// back into the input-shaped gradient `dx`.
    fn col2im<T: Scalar>(&self, col: &[T], ld: usize, col0: usize, dx: &mut [T]) {
        let n = self.out_positions();
        let mut row = 0;
        for c in 0..self.in_c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let src = &col[row * ld + col0..][..n];
                    let (lo, hi, shift) = self.valid_span(j);
                    for oh in 0..self.out_h {
                        let ih = (oh + i) as isize - self.pad_top as isize;
                        if ih < 0 || ih >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * self.in_h + ih as usize) * self.in_w..][..self.in_w];
                        let line = &src[oh * self.out_w..(oh + 1) * self.out_w];
                        let dst = &mut dst[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                        for (d, &v) in dst.iter_mut().zip(&line[lo..hi]) {
                            *d += v;
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Examples processed per GEMM so the patch matrix stays near 2^21 elements.
    fn group(&self, batch: usize) -> usize {
        let per = self.patch_len() * self.out_positions();
        ((1 << 21) / per.max(1)).clamp(1, batch.max(1))
    }
}

/// Cross-correlation of a batch `[B, C, H, W]` with `weight` `[O, C, kh, kw]`.
pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeometry,
    batch: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let k = g.patch_len();
    let n = g.out_positions();
    let group = g.group(batch);
    let mut out = vec![T::zero(); batch * g.out_len()];
    let mut col = vec![T::zero(); k * n * group];
    let mut tmp = vec![T::zero(); g.out_c * n * group];
    for start in (0..batch).step_by(group) {
        let e = group.min(batch - start);
        let ld = e * n;
        for i in 0..e {
            let b = start + i;
            g.im2col(&x[b * g.in_len()..(b + 1) * g.in_len()], &mut col, ld, i * n);
        }
        gemm(
            T::one(),
            MatView::row_major(weight, g.out_c, k),
            MatView {
                data: &col,
                rows: k,
                cols: ld,
                row_stride: ld,
                col_stride: 1,
            },
            T::zero(),
            &mut tmp,
            ld,
        );
        for i in 0..e {
            let y = &mut out[(start + i) * g.out_len()..(start + i + 1) * g.out_len()];
            for (o, line) in y.chunks_exact_mut(n).enumerate() {
                let src = &tmp[o * ld + i * n..][..n];
                for (d, &v) in line.iter_mut().zip(src) {
                    *d = v + bias[o];
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients into `dw`/`db` and, when `dx` is
/// given, writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    batch: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let k = g.patch_len();
    let n = g.out_positions();
    let group = g.group(batch);
    let mut col = vec![T::zero(); k * n * group];
    let mut dyg = vec![T::zero(); g.out_c * n * group];
    for start in (0..batch).step_by(group) {
        let e = group.min(batch - start);
        let ld = e * n;
        for i in 0..e {
            let b = start + i;
            let dyb = &dy[b * g.out_len()..(b + 1) * g.out_len()];
            for (o, line) in dyb.chunks_exact(n).enumerate() {
                db[o] += line.iter().fold(T::zero(), |s, &v| s + v);
                dyg[o * ld + i * n..][..n].copy_from_slice(line);
            }
            g.im2col(&x[b * g.in_len()..(b + 1) * g.in_len()], &mut col, ld, i * n);
        }
        let dyv = MatView {
            data: &dyg,
            rows: g.out_c,
            cols: ld,
            row_stride: ld,
            col_stride: 1,
        };
        gemm(
            T::one(),
            dyv,
            MatView {
                data: &col,
                rows: ld,
                cols: k,
                row_stride: 1,
                col_stride: ld,
            },
            T::one(),
            dw,
            k,
        );
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                T::one(),
                MatView::transposed(weight, g.out_c, k),
                dyv,
                T::zero(),
                &mut col,
                ld,
            );
            for i in 0..e {
                let b = start + i;
                g.col2im(&col, ld, i * n, &mut dx[b * g.in_len()..(b + 1) * g.in_len()]);
            }
        }
    }
}

/// `y = x W + b` for `x` `[B, in]` and `W` `[in, out]`.
pub fn dense_forward<T: Scalar>(
    batch: usize,
    inputs: usize,
    outputs: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let mut y = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm(
        T::one(),
        MatView::row_major(x, batch, inputs),
        MatView::row_major(weight, inputs, outputs),
        T::one(),
        &mut y,
        outputs,
    );
    y
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Scalar>(
    batch: usize,
    inputs: usize,
    outputs: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    gemm(
        T::one(),
        MatView::transposed(x, batch, inputs),
        MatView::row_major(dy, batch, outputs),
        T::one(),
        dw,
        outputs,
    );
    for row in dy.chunks_exact(outputs) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    if let Some(dx) = dx {
        gemm(
            T::one(),
            MatView::row_major(dy, batch, outputs),
            MatView::transposed(weight, inputs, outputs),
            T::zero(),
            dx,
            inputs,
        );
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Intermediate values an LSTM forward pass keeps for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    pub batch: usize,
    pub steps: usize,
    pub features: usize,
    pub units: usize,
    /// Per step `[B, 4U]` gate activations in (input, forget, candidate, output) order.
    pub gates: Vec<Vec<T>>,
    /// Per step `[B, U]` cell states, `cells[0]` is the zero initial state.
    pub cells: Vec<Vec<T>>,
    /// Per step `[B, U]` hidden states, `hidden[0]` is the zero initial state.
    pub hidden: Vec<Vec<T>>,
}

/// Runs an LSTM over `x` `[B, T, F]` and returns the final hidden state `[B, U]`.
///
/// Gate pre-activations are `x_t W_ih^T + h_{t-1} W_hh^T + b` with the
/// `4U` rows of `W_ih`/`W_hh`/`b` laid out as input, forget, candidate, output.
pub fn lstm_forward<T: Scalar>(
    batch: usize,
    steps: usize,
    features: usize,
    units: usize,
    x: &[T],
    w_ih: &[T],
    w_hh: &[T],
    bias: &[T],
) -> (Vec<T>, LstmCache<T>) {
    let g4 = 4 * units;
    // [B*T, 4U] input projections, row (b, t)
    let mut xg = vec![T::zero(); batch * steps * g4];
    gemm(
        T::one(),
        MatView::row_major(x, batch * steps, features),
        MatView::transposed(w_ih, g4, features),
        T::zero(),
        &mut xg,
        g4,
    );
    let mut gates_all = Vec::with_capacity(steps);
    let mut cells = vec![vec![T::zero(); batch * units]];
    let mut hidden = vec![vec![T::zero(); batch * units]];
    for t in 0..steps {
        let mut z = vec![T::zero(); batch * g4];
        for b in 0..batch {
            let src = &xg[(b * steps + t) * g4..][..g4];
            for ((zv, &xv), &bv) in z[b * g4..(b + 1) * g4].iter_mut().zip(src).zip(bias) {
                *zv = xv + bv;
            }
        }
        gemm(
            T::one(),
            MatView::row_major(&hidden[t], batch, units),
            MatView::transposed(w_hh, g4, units),
            T::one(),
            &mut z,
            g4,
        );
        let c_prev = &cells[t];
        let mut c = vec![T::zero(); batch * units];
        let mut h = vec![T::zero(); batch * units];
        for b in 0..batch {
            let zb = &mut z[b * g4..(b + 1) * g4];
            for u in 0..units {
                let i = sigmoid(zb[u]);
                let f = sigmoid(zb[units + u]);
                let gc = zb[2 * units + u].tanh();
                let o = sigmoid(zb[3 * units + u]);
                zb[u] = i;
                zb[units + u] = f;
                zb[2 * units + u] = gc;
                zb[3 * units + u] = o;
                let cv = f * c_prev[b * units + u] + i * gc;
                c[b * units + u] = cv;
                h[b * units + u] = o * cv.tanh();
            }
        }
        gates_all.push(z);
        cells.push(c);
        hidden.push(h);
    }
    let out = hidden[steps].clone();
    (
        out,
        LstmCache {
            batch,
            steps,
            features,
            units,
            gates: gates_all,
            cells,
            hidden,
        },
    )
}

/// Backpropagation through time. Accumulates into `dw_ih`, `dw_hh`, `db`
/// and writes `dx` (`[B, T, F]`) when requested.
#[allow(clippy::too_many_arguments)]
pub fn lstm_backward<T: Scalar>(
    cache: &LstmCache<T>,
    x: &[T],
    w_ih: &[T],
    w_hh: &[T],
    dh_out: &[T],
    dw_ih: &mut [T],
    dw_hh: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let LstmCache {
        batch,
        steps,
        features,
        units,
        ..
    } = *cache;
    let g4 = 4 * units;
    let mut dh = dh_out.to_vec();
    let mut dc = vec![T::zero(); batch * units];
    let mut dxg = vec![T::zero(); batch * steps * g4];
    let mut dz = vec![T::zero(); batch * g4];
    for t in (0..steps).rev() {
        let gates = &cache.gates[t];
        let c_prev = &cache.cells[t];
        let c = &cache.cells[t + 1];
        for b in 0..batch {
            let gb = &gates[b * g4..(b + 1) * g4];
            let dzb = &mut dz[b * g4..(b + 1) * g4];
            for u in 0..units {
                let k = b * units + u;
                let (i, f, gc, o) = (gb[u], gb[units + u], gb[2 * units + u], gb[3 * units + u]);
                let tc = c[k].tanh();
                let d_o = dh[k] * tc;
                let dct = dc[k] + dh[k] * o * (T::one() - tc * tc);
                let d_i = dct * gc;
                let d_g = dct * i;
                let d_f = dct * c_prev[k];
                dc[k] = dct * f;
                dzb[u] = d_i * i * (T::one() - i);
                dzb[units + u] = d_f * f * (T::one() - f);
                dzb[2 * units + u] = d_g * (T::one() - gc * gc);
                dzb[3 * units + u] = d_o * o * (T::one() - o);
            }
            dxg[(b * steps + t) * g4..][..g4].copy_from_slice(dzb);
            for (d, &v) in db.iter_mut().zip(dzb.iter()) {
                *d += v;
            }
        }
        gemm(
            T::one(),
            MatView::transposed(&dz, batch, g4),
            MatView::row_major(&cache.hidden[t], batch, units),
            T::one(),
            dw_hh,
            units,
        );
        gemm(
            T::one(),
            MatView::row_major(&dz, batch, g4),
            MatView::row_major(w_hh, g4, units),
            T::zero(),
            &mut dh,
            units,
        );
    }
    gemm(
        T::one(),
        MatView::transposed(&dxg, batch * steps, g4),
        MatView::row_major(x, batch * steps, features),
        T::one(),
        dw_ih,
        features,
    );
    if let Some(dx) = dx {
        gemm(
            T::one(),
            MatView::row_major(&dxg, batch * steps, g4),
            MatView::row_major(w_ih, g4, features),
            T::zero(),
            dx,
            features,
        );
    }
}
