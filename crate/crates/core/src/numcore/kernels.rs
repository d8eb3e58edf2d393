//! Raw loops behind the taped primitives. Everything here works on flat
//! row-major slices; shape checking happens in the tape layer.

use std::sync::atomic::{AtomicUsize, Ordering};

static WORKER_THREADS: AtomicUsize = AtomicUsize::new(1);

/// Caps the number of worker threads used for batch-parallel convolution.
/// Results are bit-identical for every thread count.
pub fn set_worker_threads(n: usize) {
    WORKER_THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn worker_threads() -> usize {
    WORKER_THREADS.load(Ordering::Relaxed)
}

/// `out[m x n] = a[m x k] * b[k x n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[k x n] += a[m x k]^T * g[m x n]`
pub fn matmul_at_b_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// `out[m x k] += g[m x n] * b[k x n]^T`
pub fn matmul_a_bt_acc(g: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (&gv, &bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            out[i * k + p] += s;
        }
    }
}

/// Geometry of a 3x3, pad-1 convolution over one image.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h.div_ceil(self.stride)
    }

    pub fn out_w(&self) -> usize {
        self.w.div_ceil(self.stride)
    }

    fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.c_out * self.out_h() * self.out_w()
    }

    fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * 9
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let mut col = vec![0.0; g.c_in * 9 * plane];
    for ci in 0..g.c_in {
        let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let dst = &mut col[((ci * 9) + ky * 3 + kx) * plane..][..plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &xin[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_acc(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for ci in 0..g.c_in {
        let dxin = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let src = &col[((ci * 9) + ky * 3 + kx) * plane..][..plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let row = &mut dxin[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix >= 0 && ix < g.w as isize {
                            row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Runs `f(sample_index, chunk_of_out)` over disjoint per-sample output chunks,
/// spreading samples across the configured number of worker threads.
fn for_each_sample<F>(out: &mut [f64], chunk: usize, batch: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let threads = worker_threads().min(batch).max(1);
    if threads == 1 || chunk == 0 {
        for (b, o) in out.chunks_mut(chunk.max(1)).take(batch).enumerate() {
            f(b, o);
        }
        return;
    }
    let per_thread = batch.div_ceil(threads);
    std::thread::scope(|s| {
        for (t, part) in out.chunks_mut(per_thread * chunk).enumerate() {
            let f = &f;
            s.spawn(move || {
                for (j, o) in part.chunks_mut(chunk).enumerate() {
                    f(t * per_thread + j, o);
                }
            });
        }
    });
}

/// Batched cross-correlation with zero padding 1.
pub fn conv2d_forward(x: &[f64], k: &[f64], batch: usize, g: &ConvGeom) -> Vec<f64> {
    let plane = g.out_h() * g.out_w();
    let mut out = vec![0.0; batch * g.out_len()];
    for_each_sample(&mut out, g.out_len(), batch, |b, o| {
        let col = im2col(&x[b * g.in_len()..(b + 1) * g.in_len()], g);
        let y = matmul(k, &col, g.c_out, g.c_in * 9, plane);
        o.copy_from_slice(&y);
    });
    out
}

/// Gradients of the convolution w.r.t. input and kernels. Kernel gradients
/// are formed per sample and reduced in sample order.
pub fn conv2d_backward(
    x: &[f64],
    k: &[f64],
    gout: &[f64],
    batch: usize,
    g: &ConvGeom,
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = g.out_h() * g.out_w();
    let kl = g.kernel_len();
    let il = g.in_len();
    // per-sample scratch: [dk partial | dx]
    let chunk = (if want_dk { kl } else { 0 }) + (if want_dx { il } else { 0 });
    let mut scratch = vec![0.0; batch * chunk];
    for_each_sample(&mut scratch, chunk, batch, |b, s| {
        let go = &gout[b * g.out_len()..(b + 1) * g.out_len()];
        let (dk_part, dx_part) = s.split_at_mut(if want_dk { kl } else { 0 });
        if want_dk {
            let col = im2col(&x[b * il..(b + 1) * il], g);
            matmul_a_bt_acc(go, &col, g.c_out, g.c_in * 9, plane, dk_part);
        }
        if want_dx {
            let mut dcol = vec![0.0; g.c_in * 9 * plane];
            matmul_at_b_acc(k, go, g.c_out, g.c_in * 9, plane, &mut dcol);
            col2im_acc(&dcol, g, dx_part);
        }
    });
    let dk = want_dk.then(|| {
        let mut dk = vec![0.0; kl];
        for s in scratch.chunks(chunk) {
            dk.iter_mut().zip(&s[..kl]).for_each(|(a, b)| *a += b);
        }
        dk
    });
    let dx = want_dx.then(|| {
        let off = if want_dk { kl } else { 0 };
        let mut dx = Vec::with_capacity(batch * il);
        for s in scratch.chunks(chunk) {
            dx.extend_from_slice(&s[off..]);
        }
        dx
    });
    (dx, dk)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_count_does_not_change_bits() {
        let g = ConvGeom { c_in: 2, c_out: 3, h: 6, w: 6, stride: 2 };
        let x: Vec<f64> = (0..4 * 72).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let k: Vec<f64> = (0..54).map(|i| ((i * 13 % 17) as f64 / 8.0) - 1.0).collect();
        let gout: Vec<f64> = (0..4 * 27).map(|i| ((i * 7 % 11) as f64 / 5.0) - 1.0).collect();
        set_worker_threads(1);
        let y1 = conv2d_forward(&x, &k, 4, &g);
        let b1 = conv2d_backward(&x, &k, &gout, 4, &g, true, true);
        set_worker_threads(3);
        let y3 = conv2d_forward(&x, &k, 4, &g);
        let b3 = conv2d_backward(&x, &k, &gout, 4, &g, true, true);
        set_worker_threads(1);
        assert_eq!(y1, y3);
        assert_eq!(b1, b3);
    }
}
