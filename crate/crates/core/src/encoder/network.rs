//! Parameter layout and the forward/backward passes of the reference
//! encoder: post-LN transformer blocks over token + learned position
//! embeddings, a mean-pooled classification head and a token-level MLM head.
//!
//! Sequences are processed one at a time, so no padding ever enters the
//! computation and batch composition cannot change a sequence's output.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderConfig;
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Group {
    Encoder,
    MlmHead,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub group: Group,
    init: Init,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

pub(crate) type Slot = usize;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerSlots {
    wq: Slot,
    bq: Slot,
    wk: Slot,
    bk: Slot,
    wv: Slot,
    bv: Slot,
    wo: Slot,
    bo: Slot,
    ln1_g: Slot,
    ln1_b: Slot,
    w1: Slot,
    b1: Slot,
    w2: Slot,
    b2: Slot,
    ln2_g: Slot,
    ln2_b: Slot,
}

/// Named tensors laid out back to back in one flat buffer. The classifier
/// head always comes last so it can be swapped without moving anything else.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    tok: Slot,
    pos: Slot,
    emb_g: Slot,
    emb_b: Slot,
    layers: Vec<LayerSlots>,
    mlm_w: Slot,
    mlm_b: Slot,
    cls_w: Slot,
    cls_b: Slot,
    pub num_labels: usize,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, group: Group, init: Init) -> Slot {
        self.tensors.push(TensorInfo {
            name,
            offset: self.total,
            rows,
            cols,
            group,
            init,
        });
        self.total += rows * cols;
        self.tensors.len() - 1
    }
}

impl Layout {
    pub fn new(cfg: &EncoderConfig, num_labels: usize) -> Layout {
        use Group::*;
        use Init::*;
        let h = cfg.hidden_dim;
        let f = cfg.ffn_dim;
        let v = cfg.vocab_size as usize;
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let tok = b.add("embeddings.token".into(), v, h, Encoder, Normal);
        let pos = b.add("embeddings.position".into(), cfg.max_positions, h, Encoder, Normal);
        let emb_g = b.add("embeddings.norm.gamma".into(), 1, h, Encoder, Ones);
        let emb_b = b.add("embeddings.norm.beta".into(), 1, h, Encoder, Zeros);
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let mut add = |n: &str, r, c, init| b.add(format!("layers.{l}.{n}"), r, c, Encoder, init);
                LayerSlots {
                    wq: add("attention.query.weight", h, h, Normal),
                    bq: add("attention.query.bias", 1, h, Zeros),
                    wk: add("attention.key.weight", h, h, Normal),
                    bk: add("attention.key.bias", 1, h, Zeros),
                    wv: add("attention.value.weight", h, h, Normal),
                    bv: add("attention.value.bias", 1, h, Zeros),
                    wo: add("attention.output.weight", h, h, Normal),
                    bo: add("attention.output.bias", 1, h, Zeros),
                    ln1_g: add("attention.norm.gamma", 1, h, Ones),
                    ln1_b: add("attention.norm.beta", 1, h, Zeros),
                    w1: add("ffn.inner.weight", h, f, Normal),
                    b1: add("ffn.inner.bias", 1, f, Zeros),
                    w2: add("ffn.outer.weight", f, h, Normal),
                    b2: add("ffn.outer.bias", 1, h, Zeros),
                    ln2_g: add("ffn.norm.gamma", 1, h, Ones),
                    ln2_b: add("ffn.norm.beta", 1, h, Zeros),
                }
            })
            .collect();
        let mlm_w = b.add("mlm.weight".into(), h, v, MlmHead, Normal);
        let mlm_b = b.add("mlm.bias".into(), 1, v, MlmHead, Zeros);
        let cls_w = b.add("classifier.weight".into(), h, num_labels, Classifier, Normal);
        let cls_b = b.add("classifier.bias".into(), 1, num_labels, Classifier, Zeros);
        Layout {
            tensors: b.tensors,
            total: b.total,
            tok,
            pos,
            emb_g,
            emb_b,
            layers,
            mlm_w,
            mlm_b,
            cls_w,
            cls_b,
            num_labels,
        }
    }

    /// Offset at which the classifier head starts.
    pub fn classifier_offset(&self) -> usize {
        self.tensors[self.cls_w].offset
    }

    pub fn group_ranges(&self, group: Group) -> Vec<std::ops::Range<usize>> {
        self.tensors.iter().filter(|t| t.group == group).map(TensorInfo::range).collect()
    }

    /// Fill `params[from..]` with freshly initialized values, tensor by tensor.
    pub fn init<S: Scalar, R: Rng>(&self, params: &mut [S], from: usize, rng: &mut R) {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for t in self.tensors.iter().filter(|t| t.offset >= from) {
            let dst = &mut params[t.range()];
            match t.init {
                Init::Normal => dst.iter_mut().for_each(|x| *x = S::lit(normal.sample(rng))),
                Init::Zeros => dst.fill(S::zero()),
                Init::Ones => dst.fill(S::one()),
            }
        }
    }

    fn mat<'a, S>(&self, p: &'a [S], slot: Slot) -> ArrayView2<'a, S> {
        let t = &self.tensors[slot];
        ArrayView2::from_shape((t.rows, t.cols), &p[t.range()]).expect("layout shape")
    }

    fn vec<'a, S>(&self, p: &'a [S], slot: Slot) -> ArrayView1<'a, S> {
        let t = &self.tensors[slot];
        ArrayView1::from(&p[t.range()])
    }

    fn mat_mut<'a, S>(&self, p: &'a mut [S], slot: Slot) -> ArrayViewMut2<'a, S> {
        let t = &self.tensors[slot];
        ArrayViewMut2::from_shape((t.rows, t.cols), &mut p[t.range()]).expect("layout shape")
    }

    fn vec_mut<'a, S>(&self, p: &'a mut [S], slot: Slot) -> ArrayViewMut1<'a, S> {
        let t = &self.tensors[slot];
        ArrayViewMut1::from(&mut p[t.range()])
    }
}

struct NormCache<S> {
    xhat: Array2<S>,
    inv_std: Array1<S>,
}

struct LayerCache<S> {
    input: Array2<S>,
    q: Array2<S>,
    k: Array2<S>,
    v: Array2<S>,
    attn: Vec<Array2<S>>,
    ctx: Array2<S>,
    norm1: NormCache<S>,
    mid: Array2<S>,
    pre_act: Array2<S>,
    act: Array2<S>,
    norm2: NormCache<S>,
}

pub(crate) struct Trace<S> {
    ids: Vec<u32>,
    emb_norm: NormCache<S>,
    layers: Vec<LayerCache<S>>,
    pub hidden: Array2<S>,
}

fn layer_norm<S: Scalar>(x: &Array2<S>, gamma: ArrayView1<S>, beta: ArrayView1<S>) -> (Array2<S>, NormCache<S>) {
    let h = S::from_usize(x.ncols()).unwrap();
    let eps = S::lit(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<S>() / h;
        *inv = S::one() / (var + eps).sqrt();
        let i = *inv;
        row.mapv_inplace(|v| v * i);
    }
    let y = &xhat * &gamma + beta;
    (y, NormCache { xhat, inv_std })
}

/// Returns dx; accumulates dgamma/dbeta into the gradient buffer.
fn layer_norm_back<S: Scalar>(
    dy: &Array2<S>,
    cache: &NormCache<S>,
    gamma: ArrayView1<S>,
    layout: &Layout,
    grad: &mut [S],
    g_slot: Slot,
    b_slot: Slot,
) -> Array2<S> {
    {
        let mut dg = layout.vec_mut(grad, g_slot);
        dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut db = layout.vec_mut(grad, b_slot);
        db += &dy.sum_axis(Axis(0));
    }
    let h = S::from_usize(dy.ncols()).unwrap();
    let dxhat = dy * &gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, dxh), xh), &inv) in dx
        .outer_iter_mut()
        .zip(dxhat.outer_iter())
        .zip(cache.xhat.outer_iter())
        .zip(cache.inv_std.iter())
    {
        let mean_d = dxh.sum() / h;
        let mean_dx = dxh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<S>() / h;
        Zip::from(&mut out)
            .and(&dxh)
            .and(&xh)
            .for_each(|o, &d, &x| *o = inv * (d - mean_d - x * mean_dx));
    }
    dx
}

fn softmax_rows<S: Scalar>(m: &mut Array2<S>) {
    for mut row in m.outer_iter_mut() {
        softmax_inplace(row.as_slice_mut().expect("contiguous row"));
    }
}

pub(crate) fn softmax_inplace<S: Scalar>(xs: &mut [S]) {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// `-log softmax(logits)[target]`, plus the softmax probabilities.
pub(crate) fn cross_entropy<S: Scalar>(logits: &[S], target: usize) -> (S, Vec<S>) {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let log_z = logits.iter().map(|&l| (l - max).exp()).sum::<S>().ln() + max;
    let probs = logits.iter().map(|&l| (l - log_z).exp()).collect();
    (log_z - logits[target], probs)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<S: Scalar>(x: S) -> S {
    let c = S::lit(GELU_C);
    let a = S::lit(GELU_A);
    let half = S::lit(0.5);
    half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::lit(GELU_C);
    let a = S::lit(GELU_A);
    let half = S::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + S::lit(3.0) * a * x * x)
}

fn add_mat<S: Scalar>(layout: &Layout, grad: &mut [S], slot: Slot, delta: &Array2<S>) {
    let mut g = layout.mat_mut(grad, slot);
    g += delta;
}

fn add_vec<S: Scalar>(layout: &Layout, grad: &mut [S], slot: Slot, delta: &Array1<S>) {
    let mut g = layout.vec_mut(grad, slot);
    g += delta;
}

pub(crate) struct Network<'a, S> {
    pub cfg: &'a EncoderConfig,
    pub layout: &'a Layout,
    pub params: &'a [S],
}

impl<'a, S: Scalar> Network<'a, S> {
    /// Run the encoder on one sequence, keeping every intermediate needed
    /// for the backward pass.
    pub fn encode(&self, ids: &[u32]) -> Trace<S> {
        let (lay, p) = (self.layout, self.params);
        let n = ids.len();
        let hd = self.cfg.hidden_dim;
        let heads = self.cfg.num_heads;
        let dh = hd / heads;
        let scale = S::one() / S::from_usize(dh).unwrap().sqrt();

        let tok = lay.mat(p, lay.tok);
        let pos = lay.mat(p, lay.pos);
        let mut x = Array2::zeros((n, hd));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.assign(&tok.row(id as usize));
            row += &pos.row(i);
        }
        let (mut e, emb_norm) = layer_norm(&x, lay.vec(p, lay.emb_g), lay.vec(p, lay.emb_b));

        let mut layers = Vec::with_capacity(lay.layers.len());
        for ls in &lay.layers {
            let q = e.dot(&lay.mat(p, ls.wq)) + lay.vec(p, ls.bq);
            let k = e.dot(&lay.mat(p, ls.wk)) + lay.vec(p, ls.bk);
            let v = e.dot(&lay.mat(p, ls.wv)) + lay.vec(p, ls.bv);
            let mut ctx = Array2::zeros((n, hd));
            let mut attn = Vec::with_capacity(heads);
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut scores);
                ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                attn.push(scores);
            }
            let r1 = &e + &(ctx.dot(&lay.mat(p, ls.wo)) + lay.vec(p, ls.bo));
            let (mid, norm1) = layer_norm(&r1, lay.vec(p, ls.ln1_g), lay.vec(p, ls.ln1_b));
            let pre_act = mid.dot(&lay.mat(p, ls.w1)) + lay.vec(p, ls.b1);
            let act = pre_act.mapv(gelu);
            let r2 = &mid + &(act.dot(&lay.mat(p, ls.w2)) + lay.vec(p, ls.b2));
            let (out, norm2) = layer_norm(&r2, lay.vec(p, ls.ln2_g), lay.vec(p, ls.ln2_b));
            layers.push(LayerCache {
                input: e,
                q,
                k,
                v,
                attn,
                ctx,
                norm1,
                mid,
                pre_act,
                act,
                norm2,
            });
            e = out;
        }
        Trace {
            ids: ids.to_vec(),
            emb_norm,
            layers,
            hidden: e,
        }
    }

    /// Back-propagate `d_hidden` through the encoder into `grad`.
    pub fn encode_backward(&self, trace: &Trace<S>, d_hidden: Array2<S>, grad: &mut [S]) {
        let (lay, p) = (self.layout, self.params);
        let hd = self.cfg.hidden_dim;
        let heads = self.cfg.num_heads;
        let dh = hd / heads;
        let scale = S::one() / S::from_usize(dh).unwrap().sqrt();

        let mut d_out = d_hidden;
        for (ls, c) in lay.layers.iter().zip(&trace.layers).rev() {
            let d_r2 = layer_norm_back(&d_out, &c.norm2, lay.vec(p, ls.ln2_g), lay, grad, ls.ln2_g, ls.ln2_b);
            // r2 = mid + act·W2 + b2
            add_mat(lay, grad, ls.w2, &c.act.t().dot(&d_r2));
            add_vec(lay, grad, ls.b2, &d_r2.sum_axis(Axis(0)));
            let mut d_pre = d_r2.dot(&lay.mat(p, ls.w2).t());
            Zip::from(&mut d_pre).and(&c.pre_act).for_each(|d, &x| *d *= gelu_grad(x));
            add_mat(lay, grad, ls.w1, &c.mid.t().dot(&d_pre));
            add_vec(lay, grad, ls.b1, &d_pre.sum_axis(Axis(0)));
            let d_mid = d_r2 + d_pre.dot(&lay.mat(p, ls.w1).t());

            let d_r1 = layer_norm_back(&d_mid, &c.norm1, lay.vec(p, ls.ln1_g), lay, grad, ls.ln1_g, ls.ln1_b);
            // r1 = input + ctx·Wo + bo
            add_mat(lay, grad, ls.wo, &c.ctx.t().dot(&d_r1));
            add_vec(lay, grad, ls.bo, &d_r1.sum_axis(Axis(0)));
            let d_ctx = d_r1.dot(&lay.mat(p, ls.wo).t());

            let mut d_q = Array2::zeros(c.q.raw_dim());
            let mut d_k = Array2::zeros(c.k.raw_dim());
            let mut d_v = Array2::zeros(c.v.raw_dim());
            for (h, a) in c.attn.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let dc = d_ctx.slice(cols);
                let d_a = dc.dot(&c.v.slice(cols).t());
                d_v.slice_mut(cols).assign(&a.t().dot(&dc));
                // softmax backward, row-wise
                let mut d_scores = Array2::zeros(a.raw_dim());
                for ((mut ds, ar), dar) in d_scores.outer_iter_mut().zip(a.outer_iter()).zip(d_a.outer_iter()) {
                    let dot = ar.iter().zip(dar.iter()).map(|(&x, &y)| x * y).sum::<S>();
                    Zip::from(&mut ds).and(&ar).and(&dar).for_each(|o, &x, &y| *o = x * (y - dot) * scale);
                }
                d_q.slice_mut(cols).assign(&d_scores.dot(&c.k.slice(cols)));
                d_k.slice_mut(cols).assign(&d_scores.t().dot(&c.q.slice(cols)));
            }
            let mut d_in = d_r1;
            for (d, w, b) in [(&d_q, ls.wq, ls.bq), (&d_k, ls.wk, ls.bk), (&d_v, ls.wv, ls.bv)] {
                add_mat(lay, grad, w, &c.input.t().dot(d));
                add_vec(lay, grad, b, &d.sum_axis(Axis(0)));
                d_in = d_in + d.dot(&lay.mat(p, w).t());
            }
            d_out = d_in;
        }

        let d_x = layer_norm_back(
            &d_out,
            &trace.emb_norm,
            lay.vec(p, lay.emb_g),
            lay,
            grad,
            lay.emb_g,
            lay.emb_b,
        );
        {
            let mut tok = lay.mat_mut(grad, lay.tok);
            for (i, &id) in trace.ids.iter().enumerate() {
                let mut row = tok.row_mut(id as usize);
                row += &d_x.row(i);
            }
        }
        let n = trace.ids.len();
        let mut pos = lay.mat_mut(grad, lay.pos);
        let mut head = pos.slice_mut(s![..n, ..]);
        head += &d_x;
    }

    fn pooled(&self, hidden: &Array2<S>) -> Array1<S> {
        hidden.mean_axis(Axis(0)).expect("non-empty sequence")
    }

    pub fn class_logits_from_hidden(&self, hidden: &Array2<S>) -> Array1<S> {
        let lay = self.layout;
        self.pooled(hidden).dot(&lay.mat(self.params, lay.cls_w)) + lay.vec(self.params, lay.cls_b)
    }

    pub fn class_probs(&self, ids: &[u32]) -> Vec<S> {
        let trace = self.encode(ids);
        let mut logits = self.class_logits_from_hidden(&trace.hidden).to_vec();
        softmax_inplace(&mut logits);
        logits
    }

    pub fn mlm_probs(&self, ids: &[u32]) -> Array2<S> {
        let lay = self.layout;
        let trace = self.encode(ids);
        let mut logits = trace.hidden.dot(&lay.mat(self.params, lay.mlm_w)) + lay.vec(self.params, lay.mlm_b);
        softmax_rows(&mut logits);
        logits
    }

    /// Classification loss for one sequence. When `grad` is given, adds
    /// `weight · ∂loss/∂θ` into it.
    pub fn class_loss(&self, ids: &[u32], target: usize, weight: S, grad: Option<&mut [S]>) -> S {
        let lay = self.layout;
        let trace = self.encode(ids);
        let pooled = self.pooled(&trace.hidden);
        let logits = pooled.dot(&lay.mat(self.params, lay.cls_w)) + lay.vec(self.params, lay.cls_b);
        let (loss, probs) = cross_entropy(logits.as_slice().expect("contiguous"), target);
        if let Some(grad) = grad {
            let mut d_logits = Array1::from(probs);
            d_logits[target] -= S::one();
            d_logits.mapv_inplace(|d| d * weight);
            let d_w = pooled
                .view()
                .insert_axis(Axis(1))
                .dot(&d_logits.view().insert_axis(Axis(0)));
            add_mat(lay, grad, lay.cls_w, &d_w);
            add_vec(lay, grad, lay.cls_b, &d_logits);
            let d_pooled = lay.mat(self.params, lay.cls_w).dot(&d_logits);
            let n = S::from_usize(ids.len()).unwrap();
            let row = d_pooled.mapv(|d| d / n);
            let d_hidden = row.broadcast((ids.len(), row.len())).expect("broadcast").to_owned();
            self.encode_backward(&trace, d_hidden, grad);
        }
        loss
    }

    /// Summed MLM cross-entropy over `targets` (position, original id) of one
    /// sequence. When `grad` is given, adds `weight · ∂loss/∂θ` into it.
    pub fn mlm_loss(&self, ids: &[u32], targets: &[(usize, u32)], weight: S, grad: Option<&mut [S]>) -> S {
        let lay = self.layout;
        let trace = self.encode(ids);
        let w = lay.mat(self.params, lay.mlm_w);
        let b = lay.vec(self.params, lay.mlm_b);
        let mut total = S::zero();
        let mut d_logits_all = Vec::with_capacity(targets.len());
        for &(pos, target) in targets {
            let logits = trace.hidden.row(pos).dot(&w) + b;
            let (loss, probs) = cross_entropy(logits.as_slice().expect("contiguous"), target as usize);
            total += loss;
            d_logits_all.push(probs);
        }
        if let Some(grad) = grad {
            let vocab = w.ncols();
            let mut d_hidden = Array2::zeros(trace.hidden.raw_dim());
            let mut d_logits = Array2::zeros((targets.len(), vocab));
            for (r, (probs, &(_, target))) in d_logits_all.into_iter().zip(targets).enumerate() {
                let mut row = d_logits.row_mut(r);
                row.assign(&Array1::from(probs));
                row[target as usize] -= S::one();
                row.mapv_inplace(|d| d * weight);
            }
            let rows: Vec<usize> = targets.iter().map(|&(p, _)| p).collect();
            let h_sel = trace.hidden.select(Axis(0), &rows);
            add_mat(lay, grad, lay.mlm_w, &h_sel.t().dot(&d_logits));
            add_vec(lay, grad, lay.mlm_b, &d_logits.sum_axis(Axis(0)));
            let d_h_sel = d_logits.dot(&w.t());
            for (r, &pos) in rows.iter().enumerate() {
                let mut row = d_hidden.row_mut(pos);
                row += &d_h_sel.row(r);
            }
            self.encode_backward(&trace, d_hidden, grad);
        }
        total
    }
}
