//! Row-wise primitives with hand-written backward passes.

use ndarray::{linalg::general_mat_mul, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use super::{sc, Scalar};

pub(crate) const LN_EPS: f64 = 1e-6;

/// `y = x W + b`.
pub(crate) fn linear<T: Scalar>(x: ArrayView2<T>, w: ArrayView2<T>, b: ArrayView1<T>) -> Array2<T> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Accumulates `dW += x^T dy`, `db += sum_rows(dy)` and returns `dx = dy W^T`.
pub(crate) fn linear_backward<T: Scalar>(
    x: ArrayView2<T>,
    w: ArrayView2<T>,
    dy: ArrayView2<T>,
    mut dw: ArrayViewMut2<T>,
    db: &mut [T],
) -> Array2<T> {
    general_mat_mul(T::one(), &x.t(), &dy, T::one(), &mut dw);
    for row in dy.rows() {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += *v;
        }
    }
    dy.dot(&w.t())
}

pub(crate) struct NormCache<T> {
    pub xhat: Array2<T>,
    pub rstd: Vec<T>,
}

/// Row-wise layer normalisation with gain and bias.
pub(crate) fn layer_norm<T: Scalar>(x: ArrayView2<T>, g: &[T], b: &[T]) -> (Array2<T>, NormCache<T>) {
    let (n, d) = x.dim();
    let dt = sc::<T>(d as f64);
    let eps = sc::<T>(LN_EPS);
    let mut xhat = Array2::<T>::zeros((n, d));
    let mut y = Array2::<T>::zeros((n, d));
    let mut rstd = Vec::with_capacity(n);
    for ((xr, mut hr), mut yr) in x.rows().into_iter().zip(xhat.rows_mut()).zip(y.rows_mut()) {
        let mean = xr.iter().copied().sum::<T>() / dt;
        let var = xr.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / dt;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        for k in 0..d {
            let h = (xr[k] - mean) * r;
            hr[k] = h;
            yr[k] = h * g[k] + b[k];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    g: &[T],
    dy: ArrayView2<T>,
    dg: &mut [T],
    db: &mut [T],
) -> Array2<T> {
    let (n, d) = dy.dim();
    let dt = sc::<T>(d as f64);
    let mut dx = Array2::<T>::zeros((n, d));
    let mut dxhat = vec![T::zero(); d];
    for (i, (dyr, mut dxr)) in dy.rows().into_iter().zip(dx.rows_mut()).enumerate() {
        let hr = cache.xhat.row(i);
        let mut mean_d = T::zero();
        let mut mean_dh = T::zero();
        for k in 0..d {
            dg[k] += dyr[k] * hr[k];
            db[k] += dyr[k];
            dxhat[k] = dyr[k] * g[k];
            mean_d += dxhat[k];
            mean_dh += dxhat[k] * hr[k];
        }
        mean_d /= dt;
        mean_dh /= dt;
        let r = cache.rstd[i];
        for k in 0..d {
            dxr[k] = r * (dxhat[k] - mean_d - hr[k] * mean_dh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
fn tanh_exp<T: Scalar>(z: T) -> T {
    // exp-based tanh; clamping keeps exp finite and is exact to f32/f64 rounding
    let z = z.max(sc(-15.0)).min(sc(15.0));
    let e = (z + z).exp();
    (e - T::one()) / (e + T::one())
}

/// Tanh-approximated GELU. Returns the activation and the tanh values reused
/// by the backward pass.
pub(crate) fn gelu<T: Scalar>(u: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let (c, a, half) = (sc::<T>(GELU_C), sc::<T>(GELU_A), sc::<T>(0.5));
    let t = u.mapv(|x| tanh_exp(c * (x + a * x * x * x)));
    let mut y = t.clone();
    y.zip_mut_with(u, |t, &x| *t = half * x * (T::one() + *t));
    (y, t)
}

pub(crate) fn gelu_backward<T: Scalar>(u: &Array2<T>, t: &Array2<T>, dg: &Array2<T>) -> Array2<T> {
    let (c, a, half, three) = (sc::<T>(GELU_C), sc::<T>(GELU_A), sc::<T>(0.5), sc::<T>(3.0));
    let mut out = dg.clone();
    ndarray::Zip::from(&mut out).and(u).and(t).for_each(|d, &x, &t| {
        let dt = (T::one() - t * t) * c * (T::one() + three * a * x * x);
        *d = *d * (half * (T::one() + t) + half * x * dt);
    });
    out
}

pub(crate) fn rel_index(side: usize, window_side: usize) -> Vec<usize> {
    let n = side * side;
    let span = (window_side - 1) as isize;
    let width = (2 * window_side - 1) as isize;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (ri, ci) = ((i / side) as isize, (i % side) as isize);
        for j in 0..n {
            let (rj, cj) = ((j / side) as isize, (j % side) as isize);
            let dr = (ri - rj).clamp(-span, span) + span;
            let dc = (ci - cj).clamp(-span, span) + span;
            idx.push((dr * width + dc) as usize);
        }
    }
    idx
}

pub(crate) struct AttnShape {
    pub n_seq: usize,
    pub n_tok: usize,
    pub heads: usize,
    pub head_dim: usize,
}

/// Multi-head softmax attention on packed `[q | k | v]` rows. Returns the
/// concatenated head outputs `(N, d)` and the attention maps laid out as
/// `[seq][head][query][key]`.
pub(crate) fn attention<T: Scalar>(
    qkv: &Array2<T>,
    bias: &[T],
    rel: &[usize],
    shape: &AttnShape,
) -> (Array2<T>, Vec<T>) {
    let AttnShape {
        n_seq,
        n_tok: n,
        heads,
        head_dim: dh,
    } = *shape;
    let d = heads * dh;
    let table = bias.len() / heads;
    let scale = sc::<T>(1.0 / (dh as f64).sqrt());
    let q_all = qkv.as_slice().expect("contiguous qkv");
    let mut out = Array2::<T>::zeros((n_seq * n, d));
    let out_s = out.as_slice_mut().expect("contiguous out");
    let mut maps = vec![T::zero(); n_seq * heads * n * n];
    let stride = 3 * d;
    for s in 0..n_seq {
        for h in 0..heads {
            let map = &mut maps[((s * heads + h) * n) * n..((s * heads + h) * n + n) * n];
            let hb = &bias[h * table..(h + 1) * table];
            for i in 0..n {
                let qi = &q_all[(s * n + i) * stride + h * dh..(s * n + i) * stride + (h + 1) * dh];
                let row = &mut map[i * n..(i + 1) * n];
                let mut max = T::neg_infinity();
                for j in 0..n {
                    let kj = &q_all[(s * n + j) * stride + d + h * dh..(s * n + j) * stride + d + (h + 1) * dh];
                    let mut dot = T::zero();
                    for k in 0..dh {
                        dot += qi[k] * kj[k];
                    }
                    let logit = dot * scale + hb[rel[i * n + j]];
                    row[j] = logit;
                    if logit > max {
                        max = logit;
                    }
                }
                let mut sum = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
                let oi = &mut out_s[(s * n + i) * d + h * dh..(s * n + i) * d + (h + 1) * dh];
                for j in 0..n {
                    let a = row[j];
                    let vj = &q_all[(s * n + j) * stride + 2 * d + h * dh..(s * n + j) * stride + 2 * d + (h + 1) * dh];
                    for k in 0..dh {
                        oi[k] += a * vj[k];
                    }
                }
            }
        }
    }
    (out, maps)
}

/// Gradient of [`attention`] w.r.t. the packed `qkv` rows; accumulates the
/// relative-bias gradient into `dbias`.
pub(crate) fn attention_backward<T: Scalar>(
    qkv: &Array2<T>,
    maps: &[T],
    rel: &[usize],
    shape: &AttnShape,
    d_out: &Array2<T>,
    dbias: &mut [T],
) -> Array2<T> {
    let AttnShape {
        n_seq,
        n_tok: n,
        heads,
        head_dim: dh,
    } = *shape;
    let d = heads * dh;
    let table = dbias.len() / heads;
    let scale = sc::<T>(1.0 / (dh as f64).sqrt());
    let stride = 3 * d;
    let x = qkv.as_slice().expect("contiguous qkv");
    let dout = d_out.as_standard_layout();
    let dout = dout.as_slice().expect("contiguous grad");
    let mut dqkv = Array2::<T>::zeros((n_seq * n, stride));
    let dx = dqkv.as_slice_mut().expect("contiguous dqkv");
    let mut da = vec![T::zero(); n];
    for s in 0..n_seq {
        for h in 0..heads {
            let map = &maps[((s * heads + h) * n) * n..((s * heads + h) * n + n) * n];
            for i in 0..n {
                let a_row = &map[i * n..(i + 1) * n];
                let doi = &dout[(s * n + i) * d + h * dh..(s * n + i) * d + (h + 1) * dh];
                let mut weighted = T::zero();
                for j in 0..n {
                    let base_v = (s * n + j) * stride + 2 * d + h * dh;
                    let mut dot = T::zero();
                    for k in 0..dh {
                        dot += doi[k] * x[base_v + k];
                        dx[base_v + k] += a_row[j] * doi[k];
                    }
                    da[j] = dot;
                    weighted += a_row[j] * dot;
                }
                let base_q = (s * n + i) * stride + h * dh;
                for j in 0..n {
                    let dlogit = a_row[j] * (da[j] - weighted);
                    dbias[h * table + rel[i * n + j]] += dlogit;
                    let g = dlogit * scale;
                    let base_k = (s * n + j) * stride + d + h * dh;
                    for k in 0..dh {
                        dx[base_q + k] += g * x[base_k + k];
                        dx[base_k + k] += g * x[base_q + k];
                    }
                }
            }
        }
    }
    dqkv
}

/// Sums rows of `x` into `acc`.
pub(crate) fn sum_rows_into<T: Scalar>(x: ArrayView2<T>, acc: &mut [T]) {
    let s = x.sum_axis(Axis(0));
    for (a, v) in acc.iter_mut().zip(s.iter()) {
        *a += *v;
    }
}
