use ndarray::{Array2, ArrayView2, Axis};

use super::layers::{
    attention, attention_backward, gelu, gelu_backward, layer_norm, layer_norm_backward, linear,
    linear_backward, rel_index, sum_rows_into, AttnShape, NormCache,
};
use super::{Grads, ModelState, Scalar};
use crate::error::{Error, Result};

/// Patch pixels for one or more windows of equal side, packed row-major:
/// sequence `s`, window-relative position `k` lives in row `s * side^2 + k`.
#[derive(Debug, Clone)]
pub struct TokenBatch<T> {
    pub patches: Array2<T>,
    pub masked: Vec<bool>,
    pub side: usize,
}

impl<T: Scalar> TokenBatch<T> {
    pub fn new(patches: Array2<T>, masked: Vec<bool>, side: usize) -> Result<Self> {
        let n_tok = side * side;
        if side == 0 || patches.nrows() % n_tok != 0 {
            return Err(Error::shape(format!(
                "{} token rows is not a multiple of {side}x{side}",
                patches.nrows()
            )));
        }
        if masked.len() != patches.nrows() {
            return Err(Error::shape("mask flags must match token rows"));
        }
        Ok(Self {
            patches,
            masked,
            side,
        })
    }

    pub fn n_tok(&self) -> usize {
        self.side * self.side
    }

    pub fn n_seq(&self) -> usize {
        self.patches.nrows() / self.n_tok()
    }
}

/// Embedded tokens of one window, tagged with their window-relative positions.
#[derive(Debug, Clone)]
pub struct TokenSeq<T> {
    pub embeddings: Array2<T>,
    pub positions: Vec<(usize, usize)>,
    pub masked: Vec<bool>,
    pub side: usize,
}

struct BlockCache<T> {
    ln1: NormCache<T>,
    a1: Array2<T>,
    qkv: Array2<T>,
    maps: Vec<T>,
    o: Array2<T>,
    ln2: NormCache<T>,
    a2: Array2<T>,
    u: Array2<T>,
    t: Array2<T>,
    g: Array2<T>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    side: usize,
    n_seq: usize,
    patches: Array2<T>,
    masked: Vec<bool>,
    rel: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
    enc_norm: NormCache<T>,
    /// Normalised encoder output, `(N, d)`.
    pub encoded: Array2<T>,
    pred_norm: Option<NormCache<T>>,
    pred_in: Option<Array2<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Attention maps of block `b`, laid out `[seq][head][query][key]`.
    pub fn attention_maps(&self, block: usize) -> &[T] {
        &self.blocks[block].maps
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_seq(&self) -> usize {
        self.n_seq
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

fn check_finite<T: Scalar>(x: &Array2<T>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!("non-finite values in {what}")))
    }
}

impl<T: Scalar> ModelState<T> {
    fn embed(&self, patches: ArrayView2<T>, masked: &[bool]) -> Result<Array2<T>> {
        let pp = self.config().patch_side.pow(2);
        if patches.ncols() != pp {
            return Err(Error::shape(format!(
                "patch rows have {} values, expected {pp}",
                patches.ncols()
            )));
        }
        let mut x = linear(patches, self.mat(self.layout.patch_w), self.vec(self.layout.patch_b));
        let token = self.vec(self.layout.mask_token);
        for (mut row, &m) in x.rows_mut().into_iter().zip(masked) {
            if m {
                row.assign(&token);
            }
        }
        Ok(x)
    }

    /// Linear patch embeddings at visible positions and the mask token at masked
    /// ones; all `side^2` tokens are kept.
    pub fn embed_window(&self, patches: ArrayView2<T>, masked: &[bool], side: usize) -> Result<TokenSeq<T>> {
        let n = side * side;
        if patches.nrows() != n || masked.len() != n {
            return Err(Error::shape(format!(
                "window of side {side} needs {n} patches and flags, got {} and {}",
                patches.nrows(),
                masked.len()
            )));
        }
        Ok(TokenSeq {
            embeddings: self.embed(patches, masked)?,
            positions: (0..n).map(|k| (k / side, k % side)).collect(),
            masked: masked.to_vec(),
            side,
        })
    }

    fn block_forward(&self, b: usize, x: &Array2<T>, rel: &[usize], n_seq: usize, n_tok: usize) -> (Array2<T>, BlockCache<T>) {
        let ids = self.layout.blocks[b];
        let cfg = self.config();
        let (a1, ln1) = layer_norm(x.view(), self.slice(ids.ln1_g), self.slice(ids.ln1_b));
        let qkv = linear(a1.view(), self.mat(ids.qkv_w), self.vec(ids.qkv_b));
        let shape = AttnShape {
            n_seq,
            n_tok,
            heads: cfg.heads,
            head_dim: cfg.head_dim(),
        };
        let (o, maps) = attention(&qkv, self.slice(ids.rel_bias), rel, &shape);
        let mut h = linear(o.view(), self.mat(ids.proj_w), self.vec(ids.proj_b));
        h += x;
        let (a2, ln2) = layer_norm(h.view(), self.slice(ids.ln2_g), self.slice(ids.ln2_b));
        let u = linear(a2.view(), self.mat(ids.fc1_w), self.vec(ids.fc1_b));
        let (g, t) = gelu(&u);
        let mut out = linear(g.view(), self.mat(ids.fc2_w), self.vec(ids.fc2_b));
        out += &h;
        (
            out,
            BlockCache {
                ln1,
                a1,
                qkv,
                maps,
                o,
                ln2,
                a2,
                u,
                t,
                g,
            },
        )
    }

    fn block_backward(
        &self,
        b: usize,
        cache: &BlockCache<T>,
        dy: Array2<T>,
        rel: &[usize],
        n_seq: usize,
        n_tok: usize,
        grads: &mut Grads<T>,
    ) -> Array2<T> {
        let ids = self.layout.blocks[b];
        let cfg = self.config();
        let (d, hid) = (cfg.embed_dim, cfg.hidden_dim());

        let (mut dw, mut db) = take2(grads, ids.fc2_w, ids.fc2_b);
        let dg = linear_backward(cache.g.view(), self.mat(ids.fc2_w), dy.view(), view_mut(&mut dw, hid, d), &mut db);
        put2(grads, ids.fc2_w, ids.fc2_b, dw, db);
        let du = gelu_backward(&cache.u, &cache.t, &dg);
        let (mut dw, mut db) = take2(grads, ids.fc1_w, ids.fc1_b);
        let da2 = linear_backward(cache.a2.view(), self.mat(ids.fc1_w), du.view(), view_mut(&mut dw, d, hid), &mut db);
        put2(grads, ids.fc1_w, ids.fc1_b, dw, db);
        let (mut dg2, mut db2) = take2(grads, ids.ln2_g, ids.ln2_b);
        let mut dh = layer_norm_backward(&cache.ln2, self.slice(ids.ln2_g), da2.view(), &mut dg2, &mut db2);
        put2(grads, ids.ln2_g, ids.ln2_b, dg2, db2);
        dh += &dy;

        let (mut dw, mut db) = take2(grads, ids.proj_w, ids.proj_b);
        let d_o = linear_backward(cache.o.view(), self.mat(ids.proj_w), dh.view(), view_mut(&mut dw, d, d), &mut db);
        put2(grads, ids.proj_w, ids.proj_b, dw, db);
        let shape = AttnShape {
            n_seq,
            n_tok,
            heads: cfg.heads,
            head_dim: cfg.head_dim(),
        };
        let dqkv = attention_backward(&cache.qkv, &cache.maps, rel, &shape, &d_o, &mut grads.data[ids.rel_bias]);
        let (mut dw, mut db) = take2(grads, ids.qkv_w, ids.qkv_b);
        let da1 = linear_backward(cache.a1.view(), self.mat(ids.qkv_w), dqkv.view(), view_mut(&mut dw, d, 3 * d), &mut db);
        put2(grads, ids.qkv_w, ids.qkv_b, dw, db);
        let (mut dg1, mut db1) = take2(grads, ids.ln1_g, ids.ln1_b);
        let mut dx = layer_norm_backward(&cache.ln1, self.slice(ids.ln1_g), da1.view(), &mut dg1, &mut db1);
        put2(grads, ids.ln1_g, ids.ln1_b, dg1, db1);
        dx += &dh;
        dx
    }

    /// Runs the encoder and, unless `encoder_only`, the predictor and head.
    /// Returns `(predictions or encoder output, cache)`.
    pub fn forward(&self, batch: &TokenBatch<T>, encoder_only: bool) -> Result<(Array2<T>, ForwardCache<T>)> {
        let cfg = self.config();
        let (side, n_tok, n_seq) = (batch.side, batch.n_tok(), batch.n_seq());
        let rel = rel_index(side, cfg.window_side);
        let mut x = self.embed(batch.patches.view(), &batch.masked)?;
        let mut blocks = Vec::with_capacity(cfg.depth());
        for b in 0..cfg.encoder_depth {
            let (y, c) = self.block_forward(b, &x, &rel, n_seq, n_tok);
            x = y;
            blocks.push(c);
        }
        let (encoded, enc_norm) = layer_norm(
            x.view(),
            self.slice(self.layout.enc_norm_g),
            self.slice(self.layout.enc_norm_b),
        );
        check_finite(&encoded, "encoder output")?;
        let mut cache = ForwardCache {
            side,
            n_seq,
            patches: batch.patches.clone(),
            masked: batch.masked.clone(),
            rel,
            blocks,
            enc_norm,
            encoded,
            pred_norm: None,
            pred_in: None,
        };
        if encoder_only {
            let out = cache.encoded.clone();
            return Ok((out, cache));
        }
        let mut x = cache.encoded.clone();
        for b in cfg.encoder_depth..cfg.depth() {
            let (y, c) = self.block_forward(b, &x, &cache.rel, n_seq, n_tok);
            x = y;
            cache.blocks.push(c);
        }
        let (z, pn) = layer_norm(
            x.view(),
            self.slice(self.layout.pred_norm_g),
            self.slice(self.layout.pred_norm_b),
        );
        let pred = linear(z.view(), self.mat(self.layout.head_w), self.vec(self.layout.head_b));
        check_finite(&pred, "predictions")?;
        cache.pred_norm = Some(pn);
        cache.pred_in = Some(z);
        Ok((pred, cache))
    }

    /// Predicted target vectors for one embedded window, `(side^2, target_dim)`.
    pub fn encode_predict(&self, tokens: &TokenSeq<T>) -> Result<Array2<T>> {
        // re-embedding is avoided by running the blocks directly on the tokens
        let cfg = self.config();
        let n_tok = tokens.side * tokens.side;
        let rel = rel_index(tokens.side, cfg.window_side);
        let mut x = tokens.embeddings.clone();
        for b in 0..cfg.depth() {
            x = self.block_forward(b, &x, &rel, 1, n_tok).0;
            if b + 1 == cfg.encoder_depth {
                x = layer_norm(
                    x.view(),
                    self.slice(self.layout.enc_norm_g),
                    self.slice(self.layout.enc_norm_b),
                )
                .0;
            }
        }
        let z = layer_norm(
            x.view(),
            self.slice(self.layout.pred_norm_g),
            self.slice(self.layout.pred_norm_b),
        )
        .0;
        let pred = linear(z.view(), self.mat(self.layout.head_w), self.vec(self.layout.head_b));
        check_finite(&pred, "predictions")?;
        Ok(pred)
    }

    /// Accumulates parameter gradients. `d_pred` is the loss gradient w.r.t. the
    /// predictions (absent for encoder-only passes); `d_encoded` an optional
    /// extra gradient at the normalised encoder output.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_pred: Option<ArrayView2<T>>,
        d_encoded: Option<ArrayView2<T>>,
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let cfg = self.config();
        let (d, n_seq, n_tok) = (cfg.embed_dim, cache.n_seq, cache.side * cache.side);
        let rows = cache.encoded.nrows();
        let mut d_enc = Array2::<T>::zeros((rows, d));
        if let Some(dp) = d_pred {
            let (z, pn) = match (&cache.pred_in, &cache.pred_norm) {
                (Some(z), Some(pn)) => (z, pn),
                _ => return Err(Error::shape("backward through the predictor needs a full forward pass")),
            };
            let (mut dw, mut db) = take2(grads, self.layout.head_w, self.layout.head_b);
            let dz = linear_backward(z.view(), self.mat(self.layout.head_w), dp, view_mut(&mut dw, d, cfg.target_dim), &mut db);
            put2(grads, self.layout.head_w, self.layout.head_b, dw, db);
            let (mut dg, mut dbn) = take2(grads, self.layout.pred_norm_g, self.layout.pred_norm_b);
            let mut dx = layer_norm_backward(pn, self.slice(self.layout.pred_norm_g), dz.view(), &mut dg, &mut dbn);
            put2(grads, self.layout.pred_norm_g, self.layout.pred_norm_b, dg, dbn);
            for b in (cfg.encoder_depth..cfg.depth()).rev() {
                dx = self.block_backward(b, &cache.blocks[b], dx, &cache.rel, n_seq, n_tok, grads);
            }
            d_enc += &dx;
        }
        if let Some(de) = d_encoded {
            d_enc += &de;
        }
        let (mut dg, mut dbn) = take2(grads, self.layout.enc_norm_g, self.layout.enc_norm_b);
        let mut dx = layer_norm_backward(&cache.enc_norm, self.slice(self.layout.enc_norm_g), d_enc.view(), &mut dg, &mut dbn);
        put2(grads, self.layout.enc_norm_g, self.layout.enc_norm_b, dg, dbn);
        for b in (0..cfg.encoder_depth).rev() {
            dx = self.block_backward(b, &cache.blocks[b], dx, &cache.rel, n_seq, n_tok, grads);
        }

        // embedding: visible rows feed the projection, masked rows the mask token
        let pp = cfg.patch_side.pow(2);
        let mut d_vis = dx.clone();
        {
            let token_grad = &mut grads.data[self.layout.mask_token];
            for (mut row, &m) in d_vis.rows_mut().into_iter().zip(&cache.masked) {
                if m {
                    for (acc, v) in token_grad.iter_mut().zip(row.iter()) {
                        *acc += *v;
                    }
                    row.fill(T::zero());
                }
            }
        }
        let mut dw = std::mem::take(&mut grads.data[self.layout.patch_w]);
        ndarray::linalg::general_mat_mul(
            T::one(),
            &cache.patches.t(),
            &d_vis,
            T::one(),
            &mut view_mut(&mut dw, pp, d),
        );
        grads.data[self.layout.patch_w] = dw;
        sum_rows_into(d_vis.view(), &mut grads.data[self.layout.patch_b]);
        Ok(())
    }

    /// Mean over tokens of the normalised encoder output, per sequence.
    pub fn pool(&self, encoded: &Array2<T>, n_tok: usize) -> Array2<T> {
        let n_seq = encoded.nrows() / n_tok;
        let d = encoded.ncols();
        let mut out = Array2::<T>::zeros((n_seq, d));
        for s in 0..n_seq {
            let m = encoded
                .slice(ndarray::s![s * n_tok..(s + 1) * n_tok, ..])
                .mean_axis(Axis(0))
                .expect("non-empty sequence");
            out.row_mut(s).assign(&m);
        }
        out
    }
}

fn take2<T: Scalar>(grads: &mut Grads<T>, a: usize, b: usize) -> (Vec<T>, Vec<T>) {
    (std::mem::take(&mut grads.data[a]), std::mem::take(&mut grads.data[b]))
}

fn put2<T: Scalar>(grads: &mut Grads<T>, a: usize, b: usize, va: Vec<T>, vb: Vec<T>) {
    grads.data[a] = va;
    grads.data[b] = vb;
}

fn view_mut<T: Scalar>(v: &mut [T], rows: usize, cols: usize) -> ndarray::ArrayViewMut2<'_, T> {
    ndarray::ArrayViewMut2::from_shape((rows, cols), v).expect("grad matrix shape")
}
