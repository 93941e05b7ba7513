//! Dense kernels for the width-only convolutions.
//!
//! Activations are laid out channels-last: `[sequence][position][channel]`,
//! where a sequence is one input row of one sample. Rows are never mixed, so a
//! (1, K) convolution with stride (1, 2) is a 1-D convolution over each
//! sequence. Both directions reduce to im2col/col2im plus a GEMM.

pub const KERNEL: usize = 7;
pub const STRIDE: usize = 2;

/// Rows of the im2col buffer processed per GEMM call.
const CHUNK_ROWS: usize = 4096;

/// Output width of one valid (unpadded) stride-2 convolution.
pub fn conv_out_width(width: usize) -> Option<usize> {
    if width < KERNEL {
        None
    } else {
        Some((width - KERNEL) / STRIDE + 1)
    }
}

/// C (m×n) = A (m×k) · B (k×n) + beta·C, row/col strides given explicitly.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len());
        assert!(last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
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
            rsc as isize,
            csc as isize,
        );
    }
}

/// Sequence geometry for a conv / transposed-conv pair: `long` is the wide
/// side (conv input, transposed-conv output) and `short` the narrow side.
#[derive(Debug, Clone, Copy)]
pub struct Span {
    pub seqs: usize,
    pub long: usize,
    pub short: usize,
}

impl Span {
    fn seqs_per_chunk(&self) -> usize {
        (CHUNK_ROWS / self.short.max(1)).max(1)
    }
}

/// Gathers windows of `src` (`[seq][long][c]`) into `col` (`[seq·short][K·c]`).
fn im2col(src: &[f64], span: Span, c: usize, seq_range: std::ops::Range<usize>, col: &mut [f64]) {
    let row_len = KERNEL * c;
    let mut r = 0;
    for s in seq_range {
        let base = s * span.long * c;
        for o in 0..span.short {
            let start = base + o * STRIDE * c;
            col[r * row_len..(r + 1) * row_len].copy_from_slice(&src[start..start + row_len]);
            r += 1;
        }
    }
}

/// Scatter-adds `col` rows back into `dst` (`[seq][long][c]`).
fn col2im_add(col: &[f64], span: Span, c: usize, seq_range: std::ops::Range<usize>, dst: &mut [f64]) {
    let row_len = KERNEL * c;
    let mut r = 0;
    for s in seq_range {
        let base = s * span.long * c;
        for o in 0..span.short {
            let start = base + o * STRIDE * c;
            for (d, v) in dst[start..start + row_len].iter_mut().zip(&col[r * row_len..(r + 1) * row_len]) {
                *d += v;
            }
            r += 1;
        }
    }
}

/// out[s][o][oc] = b[oc] + Σ_{k,ic} w[k][ic][oc] · x[s][2o+k][ic]
pub fn conv_forward(x: &[f64], span: Span, c_in: usize, w: &[f64], b: &[f64], c_out: usize, out: &mut [f64]) {
    let row_len = KERNEL * c_in;
    let per = span.seqs_per_chunk();
    let mut col = vec![0.0; per * span.short * row_len];
    let mut s0 = 0;
    while s0 < span.seqs {
        let s1 = (s0 + per).min(span.seqs);
        let rows = (s1 - s0) * span.short;
        im2col(x, span, c_in, s0..s1, &mut col);
        let dst = &mut out[s0 * span.short * c_out..s1 * span.short * c_out];
        for row in dst.chunks_mut(c_out) {
            row.copy_from_slice(b);
        }
        gemm(rows, row_len, c_out, &col, row_len, 1, w, c_out, 1, 1.0, dst, c_out, 1);
        s0 = s1;
    }
}

/// Gradients of [`conv_forward`] given d(out). Accumulates into `dw`, `db`;
/// writes d(x) when `dx` is given.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    x: &[f64],
    span: Span,
    c_in: usize,
    w: &[f64],
    c_out: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let row_len = KERNEL * c_in;
    let per = span.seqs_per_chunk();
    let mut col = vec![0.0; per * span.short * row_len];
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(0.0);
    }
    for row in dout.chunks(c_out) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    let mut s0 = 0;
    while s0 < span.seqs {
        let s1 = (s0 + per).min(span.seqs);
        let rows = (s1 - s0) * span.short;
        let dchunk = &dout[s0 * span.short * c_out..s1 * span.short * c_out];
        im2col(x, span, c_in, s0..s1, &mut col);
        // dW[(k,ic), oc] += colᵀ · dout
        gemm(row_len, rows, c_out, &col, 1, row_len, dchunk, c_out, 1, 1.0, dw, c_out, 1);
        if let Some(dx) = dx.as_deref_mut() {
            // dcol = dout · Wᵀ
            gemm(rows, c_out, row_len, dchunk, c_out, 1, w, 1, c_out, 0.0, &mut col, row_len, 1);
            col2im_add(&col, span, c_in, s0..s1, dx);
        }
        s0 = s1;
    }
}

/// Adjoint-shaped upsampling: out[s][2j+k][oc] += Σ_ic x[s][j][ic] · w[ic][k][oc], plus bias.
/// Output positions no window reaches carry only the bias.
pub fn tconv_forward(x: &[f64], span: Span, c_in: usize, w: &[f64], b: &[f64], c_out: usize, out: &mut [f64]) {
    let row_len = KERNEL * c_out;
    let per = span.seqs_per_chunk();
    let mut col = vec![0.0; per * span.short * row_len];
    for row in out.chunks_mut(c_out) {
        row.copy_from_slice(b);
    }
    let mut s0 = 0;
    while s0 < span.seqs {
        let s1 = (s0 + per).min(span.seqs);
        let rows = (s1 - s0) * span.short;
        let xchunk = &x[s0 * span.short * c_in..s1 * span.short * c_in];
        gemm(rows, c_in, row_len, xchunk, c_in, 1, w, row_len, 1, 0.0, &mut col, row_len, 1);
        col2im_add(&col, span, c_out, s0..s1, out);
        s0 = s1;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn tconv_backward(
    x: &[f64],
    span: Span,
    c_in: usize,
    w: &[f64],
    c_out: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let row_len = KERNEL * c_out;
    let per = span.seqs_per_chunk();
    let mut col = vec![0.0; per * span.short * row_len];
    for row in dout.chunks(c_out) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    let mut s0 = 0;
    while s0 < span.seqs {
        let s1 = (s0 + per).min(span.seqs);
        let rows = (s1 - s0) * span.short;
        im2col(dout, span, c_out, s0..s1, &mut col);
        let xchunk = &x[s0 * span.short * c_in..s1 * span.short * c_in];
        // dW[ic, (k,oc)] += xᵀ · dcol
        gemm(c_in, rows, row_len, xchunk, 1, c_in, &col, row_len, 1, 1.0, dw, row_len, 1);
        if let Some(dx) = dx.as_deref_mut() {
            let dchunk = &mut dx[s0 * span.short * c_in..s1 * span.short * c_in];
            gemm(rows, row_len, c_in, &col, row_len, 1, w, 1, row_len, 0.0, dchunk, c_in, 1);
        }
        s0 = s1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_law() {
        let chain = |mut w: usize| {
            let mut v = vec![w];
            while let Some(n) = conv_out_width(w) {
                v.push(n);
                w = n;
                if v.len() == 5 {
                    break;
                }
            }
            v
        };
        assert_eq!(chain(91), vec![91, 43, 19, 7, 1]);
        assert_eq!(chain(512), vec![512, 253, 124, 59, 27]);
        assert_eq!(chain(90), vec![90, 42, 18, 6]);
    }

    fn naive_conv(x: &[f64], span: Span, c_in: usize, w: &[f64], b: &[f64], c_out: usize) -> Vec<f64> {
        let mut out = vec![0.0; span.seqs * span.short * c_out];
        for s in 0..span.seqs {
            for o in 0..span.short {
                for oc in 0..c_out {
                    let mut acc = b[oc];
                    for k in 0..KERNEL {
                        for ic in 0..c_in {
                            acc += w[(k * c_in + ic) * c_out + oc] * x[(s * span.long + 2 * o + k) * c_in + ic];
                        }
                    }
                    out[(s * span.short + o) * c_out + oc] = acc;
                }
            }
        }
        out
    }

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive_and_tconv_is_adjoint() {
        let span = Span {
            seqs: 3,
            long: 20,
            short: conv_out_width(20).unwrap(),
        };
        let (c_in, c_out) = (2, 3);
        let x = lcg(span.seqs * span.long * c_in, 1);
        let w = lcg(KERNEL * c_in * c_out, 2);
        let b = lcg(c_out, 3);
        let mut out = vec![0.0; span.seqs * span.short * c_out];
        conv_forward(&x, span, c_in, &w, &b, c_out, &mut out);
        let naive = naive_conv(&x, span, c_in, &w, &b, c_out);
        for (a, n) in out.iter().zip(&naive) {
            assert!((a - n).abs() < 1e-12);
        }

        // <conv(x), y> == <x, tconv(y)> with zero biases and matching weight layouts
        let y = lcg(span.seqs * span.short * c_out, 4);
        let zero_out = vec![0.0; c_out];
        let zero_in = vec![0.0; c_in];
        conv_forward(&x, span, c_in, &w, &zero_out, c_out, &mut out);
        let lhs: f64 = out.iter().zip(&y).map(|(a, b)| a * b).sum();
        // transposed weights: wt[oc][k][ic] = w[k][ic][oc]
        let mut wt = vec![0.0; w.len()];
        for k in 0..KERNEL {
            for ic in 0..c_in {
                for oc in 0..c_out {
                    wt[(oc * KERNEL + k) * c_in + ic] = w[(k * c_in + ic) * c_out + oc];
                }
            }
        }
        let mut back = vec![0.0; x.len()];
        tconv_forward(&y, span, c_out, &wt, &zero_in, c_in, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
