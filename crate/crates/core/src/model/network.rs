//! Pre-norm encoder-decoder transformer: forward pass with activation caches
//! and the matching hand-written backward pass.
//!
//! Sequences of a batch are packed row-wise into one matrix so every dense
//! layer is a single GEMM; attention runs per sequence and head on strided
//! views into the packed projections.

use super::config::TransformerConfig;
use super::ops::{
    gemm, layer_norm, layer_norm_backward, linear, linear_backward, softmax_in_place, Mat, NormCache,
    Real, View, ViewMut,
};
use super::params::{AttentionIdx, DecoderLayerIdx, EncoderLayerIdx, FfnIdx, Layout, LinearIdx, NormIdx};
use crate::rng::SeededRng;

/// Row range of one sequence inside a packed matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
}

/// Token sequences packed back to back.
#[derive(Debug, Clone, Default)]
pub struct Packed {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub spans: Vec<Span>,
}

impl Packed {
    pub fn new<S: AsRef<[u32]>>(seqs: &[S]) -> Self {
        let mut packed = Packed::default();
        for seq in seqs {
            let seq = seq.as_ref();
            packed.spans.push(Span {
                offset: packed.tokens.len(),
                len: seq.len(),
            });
            packed.tokens.extend_from_slice(seq);
            packed.positions.extend(0..seq.len());
        }
        packed
    }

    pub fn rows(&self) -> usize {
        self.tokens.len()
    }
}

/// Inverted dropout applied during training only.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut SeededRng,
}

fn apply_dropout<T: Real>(x: &mut Mat<T>, dropout: &mut Option<Dropout<'_>>) -> Option<Vec<T>> {
    let d = dropout.as_mut()?;
    if d.rate <= 0.0 {
        return None;
    }
    let keep = T::from_f64(1.0 / (1.0 - d.rate));
    let mask: Vec<T> = (0..x.data.len())
        .map(|_| if d.rng.bernoulli(d.rate) { T::zero() } else { keep })
        .collect();
    for (v, &m) in x.data.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

fn mask_grad<T: Real>(dy: &Mat<T>, mask: &Option<Vec<T>>) -> Mat<T> {
    let mut out = dy.clone();
    if let Some(mask) = mask {
        for (v, &m) in out.data.iter_mut().zip(mask) {
            *v *= m;
        }
    }
    out
}

pub struct AttnCache<T> {
    q_in: Mat<T>,
    kv_in: Option<Mat<T>>,
    q: Mat<T>,
    k: Mat<T>,
    v: Mat<T>,
    probs: Vec<Vec<T>>,
    ctx: Mat<T>,
    q_spans: Vec<Span>,
    k_spans: Vec<Span>,
}

pub struct FfnCache<T> {
    x: Mat<T>,
    pre: Mat<T>,
    hidden: Mat<T>,
}

pub struct EncoderLayerCache<T> {
    norm1: NormCache<T>,
    attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    norm2: NormCache<T>,
    ffn: FfnCache<T>,
    drop2: Option<Vec<T>>,
}

pub struct DecoderLayerCache<T> {
    norm1: NormCache<T>,
    self_attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    norm2: NormCache<T>,
    cross_attn: AttnCache<T>,
    drop2: Option<Vec<T>>,
    norm3: NormCache<T>,
    ffn: FfnCache<T>,
    drop3: Option<Vec<T>>,
}

pub struct EncoderCache<T> {
    tokens: Vec<u32>,
    embed_drop: Option<Vec<T>>,
    layers: Vec<EncoderLayerCache<T>>,
    norm: NormCache<T>,
}

pub struct DecoderCache<T> {
    tokens: Vec<u32>,
    embed_drop: Option<Vec<T>>,
    layers: Vec<DecoderLayerCache<T>>,
    norm: NormCache<T>,
    output: Mat<T>,
}

/// Borrowed view of the weights in compute precision.
pub struct Network<'w, T> {
    pub cfg: TransformerConfig,
    pub layout: &'w Layout,
    pub w: &'w [T],
}

impl<'w, T: Real> Network<'w, T> {
    pub fn new(cfg: TransformerConfig, layout: &'w Layout, w: &'w [T]) -> Self {
        debug_assert_eq!(w.len(), layout.total);
        Self { cfg, layout, w }
    }

    fn p(&self, r: &std::ops::Range<usize>) -> &'w [T] {
        &self.w[r.clone()]
    }

    fn embed(&self, packed: &Packed, table: &std::ops::Range<usize>) -> Mat<T> {
        let d = self.cfg.embed_dim;
        let scale = T::from_f64((d as f64).sqrt());
        let table = self.p(table);
        let mut x = Mat::zeros(packed.rows(), d);
        for (row, (&tok, &pos)) in packed.tokens.iter().zip(&packed.positions).enumerate() {
            let e = &table[tok as usize * d..(tok as usize + 1) * d];
            for (j, o) in x.row_mut(row).iter_mut().enumerate() {
                *o = e[j] * scale + T::from_f64(positional(pos, j, d));
            }
        }
        x
    }

    fn embed_backward(&self, dx: &Mat<T>, tokens: &[u32], table: &std::ops::Range<usize>, grad: &mut [T]) {
        let d = self.cfg.embed_dim;
        let scale = T::from_f64((d as f64).sqrt());
        let g = &mut grad[table.clone()];
        for (row, &tok) in tokens.iter().enumerate() {
            let slot = &mut g[tok as usize * d..(tok as usize + 1) * d];
            for (s, &v) in slot.iter_mut().zip(dx.row(row)) {
                *s += v * scale;
            }
        }
    }

    fn norm(&self, x: &Mat<T>, idx: &NormIdx) -> (Mat<T>, NormCache<T>) {
        layer_norm(x, self.p(&idx.gain), self.p(&idx.bias))
    }

    fn norm_backward(&self, dy: &Mat<T>, cache: &NormCache<T>, idx: &NormIdx, grad: &mut [T]) -> Mat<T> {
        let (gain_grad, bias_grad) = two_ranges(grad, &idx.gain, &idx.bias);
        layer_norm_backward(dy, cache, self.p(&idx.gain), gain_grad, bias_grad)
    }

    fn linear(&self, x: &Mat<T>, idx: &LinearIdx) -> Mat<T> {
        linear(x, self.p(&idx.w), self.p(&idx.b))
    }

    fn linear_backward(&self, x: &Mat<T>, dy: &Mat<T>, idx: &LinearIdx, grad: &mut [T]) -> Mat<T> {
        let (dw, db) = two_ranges(grad, &idx.w, &idx.b);
        linear_backward(x, dy, self.p(&idx.w), dw, db)
    }

    fn attention(
        &self,
        q_in: &Mat<T>,
        kv_in: Option<&Mat<T>>,
        idx: &AttentionIdx,
        q_spans: &[Span],
        k_spans: &[Span],
        causal: bool,
    ) -> (Mat<T>, AttnCache<T>) {
        let d = self.cfg.embed_dim;
        let heads = self.cfg.num_heads;
        let dh = self.cfg.head_dim();
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let kv_src = kv_in.unwrap_or(q_in);
        let q = self.linear(q_in, &idx.q);
        let k = self.linear(kv_src, &idx.k);
        let v = self.linear(kv_src, &idx.v);
        let mut ctx = Mat::zeros(q.rows, d);
        let mut probs = Vec::with_capacity(q_spans.len() * heads);
        for (qs, ks) in q_spans.iter().zip(k_spans) {
            for h in 0..heads {
                let mut scores = vec![T::zero(); qs.len * ks.len];
                if qs.len > 0 && ks.len > 0 {
                    let qv = View::new(&q.data[qs.offset * d + h * dh..], qs.len, dh, d, 1);
                    let kv = View::new(&k.data[ks.offset * d + h * dh..], ks.len, dh, d, 1);
                    gemm(scale, qv, kv.t(), T::zero(), ViewMut::new(&mut scores, qs.len, ks.len, ks.len, 1));
                    for i in 0..qs.len {
                        let row = &mut scores[i * ks.len..(i + 1) * ks.len];
                        if causal {
                            row[i + 1..].iter_mut().for_each(|s| *s = T::neg_infinity());
                        }
                        softmax_in_place(row);
                    }
                    let vv = View::new(&v.data[ks.offset * d + h * dh..], ks.len, dh, d, 1);
                    let out = ViewMut::new(&mut ctx.data[qs.offset * d + h * dh..], qs.len, dh, d, 1);
                    gemm(T::one(), View::new(&scores, qs.len, ks.len, ks.len, 1), vv, T::zero(), out);
                }
                probs.push(scores);
            }
        }
        let out = self.linear(&ctx, &idx.o);
        let cache = AttnCache {
            q_in: q_in.clone(),
            kv_in: kv_in.cloned(),
            q,
            k,
            v,
            probs,
            ctx,
            q_spans: q_spans.to_vec(),
            k_spans: k_spans.to_vec(),
        };
        (out, cache)
    }

    /// Returns gradients for the query input and, for cross-attention, the key/value input.
    fn attention_backward(
        &self,
        dout: &Mat<T>,
        c: &AttnCache<T>,
        idx: &AttentionIdx,
        grad: &mut [T],
    ) -> (Mat<T>, Option<Mat<T>>) {
        let d = self.cfg.embed_dim;
        let heads = self.cfg.num_heads;
        let dh = self.cfg.head_dim();
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let dctx = self.linear_backward(&c.ctx, dout, &idx.o, grad);
        let mut dq = Mat::zeros(c.q.rows, d);
        let mut dk = Mat::zeros(c.k.rows, d);
        let mut dv = Mat::zeros(c.v.rows, d);
        for (s, (qs, ks)) in c.q_spans.iter().zip(&c.k_spans).enumerate() {
            if qs.len == 0 || ks.len == 0 {
                continue;
            }
            for h in 0..heads {
                let p = &c.probs[s * heads + h];
                let pv = View::new(p, qs.len, ks.len, ks.len, 1);
                let q_off = qs.offset * d + h * dh;
                let k_off = ks.offset * d + h * dh;
                let dctx_v = View::new(&dctx.data[q_off..], qs.len, dh, d, 1);

                let mut dp = vec![T::zero(); qs.len * ks.len];
                let vv = View::new(&c.v.data[k_off..], ks.len, dh, d, 1);
                gemm(T::one(), dctx_v, vv.t(), T::zero(), ViewMut::new(&mut dp, qs.len, ks.len, ks.len, 1));
                gemm(
                    T::one(),
                    pv.t(),
                    dctx_v,
                    T::one(),
                    ViewMut::new(&mut dv.data[k_off..], ks.len, dh, d, 1),
                );

                for i in 0..qs.len {
                    let pr = &p[i * ks.len..(i + 1) * ks.len];
                    let dr = &mut dp[i * ks.len..(i + 1) * ks.len];
                    let dot = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum::<T>();
                    for (g, &pp) in dr.iter_mut().zip(pr) {
                        *g = pp * (*g - dot) * scale;
                    }
                }
                let ds = View::new(&dp, qs.len, ks.len, ks.len, 1);
                let kv = View::new(&c.k.data[k_off..], ks.len, dh, d, 1);
                let qv = View::new(&c.q.data[q_off..], qs.len, dh, d, 1);
                gemm(T::one(), ds, kv, T::one(), ViewMut::new(&mut dq.data[q_off..], qs.len, dh, d, 1));
                gemm(T::one(), ds.t(), qv, T::one(), ViewMut::new(&mut dk.data[k_off..], ks.len, dh, d, 1));
            }
        }
        let kv_src = c.kv_in.as_ref().unwrap_or(&c.q_in);
        let mut dq_in = self.linear_backward(&c.q_in, &dq, &idx.q, grad);
        let mut dkv = self.linear_backward(kv_src, &dk, &idx.k, grad);
        dkv.add_assign(&self.linear_backward(kv_src, &dv, &idx.v, grad));
        if c.kv_in.is_some() {
            (dq_in, Some(dkv))
        } else {
            dq_in.add_assign(&dkv);
            (dq_in, None)
        }
    }

    fn ffn(&self, x: &Mat<T>, idx: &FfnIdx) -> (Mat<T>, FfnCache<T>) {
        let pre = self.linear(x, &idx.up);
        let hidden = Mat {
            rows: pre.rows,
            cols: pre.cols,
            data: pre.data.iter().map(|&v| gelu(v)).collect(),
        };
        let y = self.linear(&hidden, &idx.down);
        (
            y,
            FfnCache {
                x: x.clone(),
                pre,
                hidden,
            },
        )
    }

    fn ffn_backward(&self, dy: &Mat<T>, c: &FfnCache<T>, idx: &FfnIdx, grad: &mut [T]) -> Mat<T> {
        let mut dh = self.linear_backward(&c.hidden, dy, &idx.down, grad);
        for (g, &v) in dh.data.iter_mut().zip(&c.pre.data) {
            *g *= gelu_grad(v);
        }
        self.linear_backward(&c.x, &dh, &idx.up, grad)
    }

    fn encoder_layer(
        &self,
        mut x: Mat<T>,
        idx: &EncoderLayerIdx,
        spans: &[Span],
        dropout: &mut Option<Dropout<'_>>,
    ) -> (Mat<T>, EncoderLayerCache<T>) {
        let (a, norm1) = self.norm(&x, &idx.norm1);
        let (mut o, attn) = self.attention(&a, None, &idx.attn, spans, spans, false);
        let drop1 = apply_dropout(&mut o, dropout);
        x.add_assign(&o);
        let (c, norm2) = self.norm(&x, &idx.norm2);
        let (mut y, ffn) = self.ffn(&c, &idx.ffn);
        let drop2 = apply_dropout(&mut y, dropout);
        x.add_assign(&y);
        (
            x,
            EncoderLayerCache {
                norm1,
                attn,
                drop1,
                norm2,
                ffn,
                drop2,
            },
        )
    }

    fn encoder_layer_backward(
        &self,
        mut dx: Mat<T>,
        c: &EncoderLayerCache<T>,
        idx: &EncoderLayerIdx,
        grad: &mut [T],
    ) -> Mat<T> {
        let dy = mask_grad(&dx, &c.drop2);
        let dc = self.ffn_backward(&dy, &c.ffn, &idx.ffn, grad);
        dx.add_assign(&self.norm_backward(&dc, &c.norm2, &idx.norm2, grad));
        let dout = mask_grad(&dx, &c.drop1);
        let (da, _) = self.attention_backward(&dout, &c.attn, &idx.attn, grad);
        dx.add_assign(&self.norm_backward(&da, &c.norm1, &idx.norm1, grad));
        dx
    }

    #[allow(clippy::too_many_arguments)]
    fn decoder_layer(
        &self,
        mut x: Mat<T>,
        enc_out: &Mat<T>,
        idx: &DecoderLayerIdx,
        tgt_spans: &[Span],
        src_spans: &[Span],
        dropout: &mut Option<Dropout<'_>>,
    ) -> (Mat<T>, DecoderLayerCache<T>) {
        let (a, norm1) = self.norm(&x, &idx.norm1);
        let (mut o, self_attn) = self.attention(&a, None, &idx.self_attn, tgt_spans, tgt_spans, true);
        let drop1 = apply_dropout(&mut o, dropout);
        x.add_assign(&o);
        let (b, norm2) = self.norm(&x, &idx.norm2);
        let (mut o, cross_attn) =
            self.attention(&b, Some(enc_out), &idx.cross_attn, tgt_spans, src_spans, false);
        let drop2 = apply_dropout(&mut o, dropout);
        x.add_assign(&o);
        let (c, norm3) = self.norm(&x, &idx.norm3);
        let (mut y, ffn) = self.ffn(&c, &idx.ffn);
        let drop3 = apply_dropout(&mut y, dropout);
        x.add_assign(&y);
        (
            x,
            DecoderLayerCache {
                norm1,
                self_attn,
                drop1,
                norm2,
                cross_attn,
                drop2,
                norm3,
                ffn,
                drop3,
            },
        )
    }

    fn decoder_layer_backward(
        &self,
        mut dx: Mat<T>,
        c: &DecoderLayerCache<T>,
        idx: &DecoderLayerIdx,
        denc: &mut Mat<T>,
        grad: &mut [T],
    ) -> Mat<T> {
        let dy = mask_grad(&dx, &c.drop3);
        let dc = self.ffn_backward(&dy, &c.ffn, &idx.ffn, grad);
        dx.add_assign(&self.norm_backward(&dc, &c.norm3, &idx.norm3, grad));

        let dout = mask_grad(&dx, &c.drop2);
        let (db, dkv) = self.attention_backward(&dout, &c.cross_attn, &idx.cross_attn, grad);
        denc.add_assign(&dkv.expect("cross-attention has a separate key/value input"));
        dx.add_assign(&self.norm_backward(&db, &c.norm2, &idx.norm2, grad));

        let dout = mask_grad(&dx, &c.drop1);
        let (da, _) = self.attention_backward(&dout, &c.self_attn, &idx.self_attn, grad);
        dx.add_assign(&self.norm_backward(&da, &c.norm1, &idx.norm1, grad));
        dx
    }

    pub fn encode(&self, src: &Packed, dropout: &mut Option<Dropout<'_>>) -> (Mat<T>, EncoderCache<T>) {
        let mut x = self.embed(src, &self.layout.enc_embed);
        let embed_drop = apply_dropout(&mut x, dropout);
        let mut layers = Vec::with_capacity(self.layout.encoder.len());
        for idx in &self.layout.encoder {
            let (next, cache) = self.encoder_layer(x, idx, &src.spans, dropout);
            x = next;
            layers.push(cache);
        }
        let (out, norm) = self.norm(&x, &self.layout.enc_norm);
        (
            out,
            EncoderCache {
                tokens: src.tokens.clone(),
                embed_drop,
                layers,
                norm,
            },
        )
    }

    /// Runs the decoder stack; returns the final normalized hidden states.
    pub fn decode(
        &self,
        tgt: &Packed,
        enc_out: &Mat<T>,
        src_spans: &[Span],
        dropout: &mut Option<Dropout<'_>>,
    ) -> (Mat<T>, DecoderCache<T>) {
        let mut x = self.embed(tgt, &self.layout.dec_embed);
        let embed_drop = apply_dropout(&mut x, dropout);
        let mut layers = Vec::with_capacity(self.layout.decoder.len());
        for idx in &self.layout.decoder {
            let (next, cache) = self.decoder_layer(x, enc_out, idx, &tgt.spans, src_spans, dropout);
            x = next;
            layers.push(cache);
        }
        let (out, norm) = self.norm(&x, &self.layout.dec_norm);
        let cache = DecoderCache {
            tokens: tgt.tokens.clone(),
            embed_drop,
            layers,
            norm,
            output: out.clone(),
        };
        (out, cache)
    }

    /// Output projection (tied to the decoder embedding) for the given rows.
    pub fn logits(&self, hidden: &Mat<T>) -> Mat<T> {
        let (d, vocab) = (self.cfg.embed_dim, self.cfg.vocab_size);
        let mut out = Mat::zeros(hidden.rows, vocab);
        let bias = self.p(&self.layout.out_bias);
        for i in 0..hidden.rows {
            out.row_mut(i).copy_from_slice(bias);
        }
        let table = View::new(self.p(&self.layout.dec_embed), vocab, d, d, 1);
        gemm(T::one(), hidden.view(), table.t(), T::one(), out.view_mut());
        out
    }

    /// Gradient of all parameters given the gradient of the logits.
    pub fn backward(
        &self,
        dlogits: &Mat<T>,
        enc: &EncoderCache<T>,
        dec: &DecoderCache<T>,
    ) -> Vec<T> {
        let (d, vocab) = (self.cfg.embed_dim, self.cfg.vocab_size);
        let mut grad = vec![T::zero(); self.layout.total];

        {
            let bias = &mut grad[self.layout.out_bias.clone()];
            for i in 0..dlogits.rows {
                for (g, &v) in bias.iter_mut().zip(dlogits.row(i)) {
                    *g += v;
                }
            }
        }
        gemm(
            T::one(),
            dlogits.view().t(),
            dec.output.view(),
            T::one(),
            ViewMut::new(&mut grad[self.layout.dec_embed.clone()], vocab, d, d, 1),
        );
        let mut dx = Mat::zeros(dlogits.rows, d);
        let table = View::new(self.p(&self.layout.dec_embed), vocab, d, d, 1);
        gemm(T::one(), dlogits.view(), table, T::zero(), dx.view_mut());

        let mut dx = self.norm_backward(&dx, &dec.norm, &self.layout.dec_norm, &mut grad);
        let mut denc = Mat::zeros(enc.norm.xhat.rows, d);
        for (idx, cache) in self.layout.decoder.iter().zip(&dec.layers).rev() {
            dx = self.decoder_layer_backward(dx, cache, idx, &mut denc, &mut grad);
        }
        let dx = mask_grad(&dx, &dec.embed_drop);
        self.embed_backward(&dx, &dec.tokens, &self.layout.dec_embed, &mut grad);

        let mut dx = self.norm_backward(&denc, &enc.norm, &self.layout.enc_norm, &mut grad);
        for (idx, cache) in self.layout.encoder.iter().zip(&enc.layers).rev() {
            dx = self.encoder_layer_backward(dx, cache, idx, &mut grad);
        }
        let dx = mask_grad(&dx, &enc.embed_drop);
        self.embed_backward(&dx, &enc.tokens, &self.layout.enc_embed, &mut grad);
        grad
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let (c, a, half) = (T::from_f64(GELU_C), T::from_f64(GELU_A), T::from_f64(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let (c, a, half) = (T::from_f64(GELU_C), T::from_f64(GELU_A), T::from_f64(0.5));
    let t = (c * (x + a * x * x * x)).tanh();
    let three = T::from_f64(3.0);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// Sinusoidal position encoding value for `(pos, dim)`.
pub fn positional(pos: usize, dim: usize, d: usize) -> f64 {
    let pair = (dim / 2) as f64;
    let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
    if dim % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

fn two_ranges<'g, T>(
    grad: &'g mut [T],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'g mut [T], &'g mut [T]) {
    assert!(a.end <= b.start, "layout allocates weights before biases");
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}
