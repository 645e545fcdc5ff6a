//! Dense matrix kernels used by the graph. Row-major throughout; each output
//! row is computed independently so the parallel and serial builds agree.

use crate::par;

/// Minimum multiply-adds per parallel task.
const TASK_WORK: usize = 1 << 15;

fn rows_per_task(work_per_row: usize) -> usize {
    (TASK_WORK / work_per_row.max(1)).max(1)
}

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n == 0 {
        return;
    }
    let rpt = rows_per_task(k * n);
    par::for_each_chunk_mut(out, rpt * n, |ci, chunk| {
        let r0 = ci * rpt;
        chunk.iter_mut().for_each(|v| *v = 0.0);
        // Four output rows share each pass over a row of `b`. Every output
        // element still accumulates over `p` in ascending order.
        let mut blocks = chunk.chunks_exact_mut(4 * n);
        let mut r = r0;
        for block in &mut blocks {
            let (o0, rest) = block.split_at_mut(n);
            let (o1, rest) = rest.split_at_mut(n);
            let (o2, o3) = rest.split_at_mut(n);
            let arows = &a[r * k..(r + 4) * k];
            for p in 0..k {
                let (a0, a1, a2, a3) = (arows[p], arows[k + p], arows[2 * k + p], arows[3 * k + p]);
                if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for j in 0..n {
                    let bv = brow[j];
                    o0[j] += a0 * bv;
                    o1[j] += a1 * bv;
                    o2[j] += a2 * bv;
                    o3[j] += a3 * bv;
                }
            }
            r += 4;
        }
        for orow in blocks.into_remainder().chunks_mut(n) {
            let arow = &a[r * k..(r + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
            r += 1;
        }
    });
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`.
pub fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    if n == 0 {
        return;
    }
    let mut bt = vec![0.0; k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    matmul_nn(a, &bt, out, m, k, n);
}

/// `out[m×n] = a[k×m]ᵀ · b[k×n]`.
pub fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n == 0 {
        return;
    }
    // Each task streams all of `b`, so use as few tasks as there are threads.
    let rpt = m.div_ceil(par::current_threads().max(1)).max(1);
    par::for_each_chunk_mut(out, rpt * n, |ci, chunk| {
        let r0 = ci * rpt;
        let rows = chunk.len() / n;
        chunk.iter_mut().for_each(|v| *v = 0.0);
        // Stream over `p` so both the `a` segment and `b` row are contiguous.
        for p in 0..k {
            let aseg = &a[p * m + r0..p * m + r0 + rows];
            let brow = &b[p * n..(p + 1) * n];
            for (orow, &av) in chunk.chunks_mut(n).zip(aseg) {
                if av == 0.0 {
                    continue;
                }
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    });
}

/// Output length of a 1-D convolution.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Cross-correlation `y[b,o,t] = bias[o] + Σ_c Σ_j w[o,c,j] x[b,c,t·s+j-p]`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    out: &mut [f64],
    (batch, c_in, len): (usize, usize, usize),
    (c_out, kernel): (usize, usize),
    stride: usize,
    padding: usize,
    out_len: usize,
) {
    let _ = batch;
    par::for_each_chunk_mut(out, c_out * out_len, |b, ob| {
        let xb = &x[b * c_in * len..(b + 1) * c_in * len];
        for o in 0..c_out {
            let orow = &mut ob[o * out_len..(o + 1) * out_len];
            orow.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..c_in {
                let xr = &xb[c * len..(c + 1) * len];
                let wr = &w[(o * c_in + c) * kernel..(o * c_in + c + 1) * kernel];
                for (t, ov) in orow.iter_mut().enumerate() {
                    let start = (t * stride) as isize - padding as isize;
                    let mut s = 0.0;
                    for (j, &wv) in wr.iter().enumerate() {
                        let idx = start + j as isize;
                        if idx >= 0 && (idx as usize) < len {
                            s += wv * xr[idx as usize];
                        }
                    }
                    *ov += s;
                }
            }
        }
    });
}

/// Gradients of [`conv1d_forward`] given `dy`; accumulates into the buffers
/// that are `Some`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
    (batch, c_in, len): (usize, usize, usize),
    (c_out, kernel): (usize, usize),
    stride: usize,
    padding: usize,
    out_len: usize,
) {
    if let Some(dx) = dx {
        par::for_each_chunk_mut(dx, c_in * len, |b, dxb| {
            let dyb = &dy[b * c_out * out_len..(b + 1) * c_out * out_len];
            for o in 0..c_out {
                let dyr = &dyb[o * out_len..(o + 1) * out_len];
                for c in 0..c_in {
                    let wr = &w[(o * c_in + c) * kernel..(o * c_in + c + 1) * kernel];
                    let dxr = &mut dxb[c * len..(c + 1) * len];
                    for (t, &g) in dyr.iter().enumerate() {
                        let start = (t * stride) as isize - padding as isize;
                        for (j, &wv) in wr.iter().enumerate() {
                            let idx = start + j as isize;
                            if idx >= 0 && (idx as usize) < len {
                                dxr[idx as usize] += wv * g;
                            }
                        }
                    }
                }
            }
        });
    }
    if let Some(dw) = dw {
        par::for_each_chunk_mut(dw, c_in * kernel, |o, dwo| {
            for b in 0..batch {
                let dyr = &dy[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
                for c in 0..c_in {
                    let xr = &x[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                    let dwr = &mut dwo[c * kernel..(c + 1) * kernel];
                    for (t, &g) in dyr.iter().enumerate() {
                        let start = (t * stride) as isize - padding as isize;
                        for (j, dv) in dwr.iter_mut().enumerate() {
                            let idx = start + j as isize;
                            if idx >= 0 && (idx as usize) < len {
                                *dv += xr[idx as usize] * g;
                            }
                        }
                    }
                }
            }
        });
    }
    if let Some(db) = db {
        for b in 0..batch {
            for (o, dv) in db.iter_mut().enumerate() {
                let dyr = &dy[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
                *dv += dyr.iter().sum::<f64>();
            }
        }
    }
}
