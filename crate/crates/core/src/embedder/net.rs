//! Encoder-decoder network: forward pass, loss and hand-written backward pass.
//!
//! Sequences are rows (`L × d`). Encoder: token + positional embedding, one
//! self-attention block and one tanh feed-forward block, both residual. The
//! sequence embedding `z` is the mean of the encoder rows. Decoder: learned
//! positional queries shifted by `z`, cross-attention over the encoder rows,
//! a tanh feed-forward block and a softmax projection onto the vocabulary.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok: Array2<f64>,
    pub pos: Array2<f64>,
    pub dec_pos: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub cq: Array2<f64>,
    pub ck: Array2<f64>,
    pub cv: Array2<f64>,
    pub co: Array2<f64>,
    pub w3: Array2<f64>,
    pub b3: Array2<f64>,
    pub w4: Array2<f64>,
    pub b4: Array2<f64>,
    pub wout: Array2<f64>,
    pub bout: Array2<f64>,
}

/// Tensor names in serialization order.
pub const TENSOR_NAMES: [&str; 21] = [
    "tok", "pos", "dec_pos", "wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2", "cq", "ck", "cv", "co", "w3", "b3", "w4",
    "b4", "wout", "bout",
];

impl Params {
    pub fn init<R: Rng>(vocab: usize, positions: usize, d: usize, h: usize, rng: &mut R) -> Self {
        let mut draw = |rows: usize, cols: usize, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
        };
        let sd = 1.0 / (d as f64).sqrt();
        let sh = 1.0 / (h as f64).sqrt();
        let tok = draw(vocab, d, 1.0);
        let pos = draw(positions, d, 1.0);
        let dec_pos = draw(positions, d, 1.0);
        let wq = draw(d, d, sd);
        let wk = draw(d, d, sd);
        let wv = draw(d, d, sd);
        let wo = draw(d, d, sd);
        let w1 = draw(d, h, sd);
        let w2 = draw(h, d, sh);
        let cq = draw(d, d, sd);
        let ck = draw(d, d, sd);
        let cv = draw(d, d, sd);
        let co = draw(d, d, sd);
        let w3 = draw(d, h, sd);
        let w4 = draw(h, d, sh);
        let wout = draw(d, vocab, sd);
        Params {
            tok,
            pos,
            dec_pos,
            wq,
            wk,
            wv,
            wo,
            w1,
            b1: Array2::zeros((1, h)),
            w2,
            b2: Array2::zeros((1, d)),
            cq,
            ck,
            cv,
            co,
            w3,
            b3: Array2::zeros((1, h)),
            w4,
            b4: Array2::zeros((1, d)),
            wout,
            bout: Array2::zeros((1, vocab)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> [&Array2<f64>; 21] {
        [
            &self.tok,
            &self.pos,
            &self.dec_pos,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.cq,
            &self.ck,
            &self.cv,
            &self.co,
            &self.w3,
            &self.b3,
            &self.w4,
            &self.b4,
            &self.wout,
            &self.bout,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 21] {
        [
            &mut self.tok,
            &mut self.pos,
            &mut self.dec_pos,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.cq,
            &mut self.ck,
            &mut self.cv,
            &mut self.co,
            &mut self.w3,
            &mut self.b3,
            &mut self.w4,
            &mut self.b4,
            &mut self.wout,
            &mut self.bout,
        ]
    }

    /// Plain SGD step, with the gradient rescaled to norm `max_norm` when
    /// it is longer.
    pub fn sgd_step(&mut self, grads: &Params, lr: f64, max_norm: f64) {
        let norm = grads.tensors().iter().map(|t| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        let step = if norm > max_norm { lr * max_norm / norm } else { lr };
        for (p, g) in self.tensors_mut().into_iter().zip(grads.tensors()) {
            p.scaled_add(-step, g);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn embed_dim(&self) -> usize {
        self.tok.ncols()
    }
}

fn softmax_rows(s: &Array2<f64>) -> Array2<f64> {
    let mut out = s.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

/// Gradient of the pre-softmax scores given the gradient of the weights.
fn softmax_backward(a: &Array2<f64>, da: &Array2<f64>) -> Array2<f64> {
    let mut ds = a * da;
    for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
        let dot = row.sum();
        row.zip_mut_with(&arow, |r, &av| *r -= av * dot);
    }
    ds
}

struct Attention {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    c: Array2<f64>,
}

fn attend(xq: &Array2<f64>, xkv: &Array2<f64>, wq: &Array2<f64>, wk: &Array2<f64>, wv: &Array2<f64>) -> Attention {
    let scale = 1.0 / (wq.ncols() as f64).sqrt();
    let q = xq.dot(wq);
    let k = xkv.dot(wk);
    let v = xkv.dot(wv);
    let a = softmax_rows(&(q.dot(&k.t()) * scale));
    let c = a.dot(&v);
    Attention { q, k, v, a, c }
}

/// Returns (dQ, dK, dV) given dC.
fn attend_backward(att: &Attention, dc: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (att.q.ncols() as f64).sqrt();
    let da = dc.dot(&att.v.t());
    let dv = att.a.t().dot(dc);
    let ds = softmax_backward(&att.a, &da) * scale;
    (ds.dot(&att.k), ds.t().dot(&att.q), dv)
}

pub(crate) struct Encoded {
    x: Array2<f64>,
    att: Attention,
    h1: Array2<f64>,
    g: Array2<f64>,
    pub out: Array2<f64>,
}

pub(crate) fn encode(p: &Params, ids: &[usize]) -> Encoded {
    let l = ids.len();
    let x = p.tok.select(Axis(0), ids) + p.pos.slice(s![..l, ..]);
    let att = attend(&x, &x, &p.wq, &p.wk, &p.wv);
    let h1 = &x + &att.c.dot(&p.wo);
    let g = (h1.dot(&p.w1) + &p.b1).mapv(f64::tanh);
    let out = &h1 + &g.dot(&p.w2) + &p.b2;
    Encoded { x, att, h1, g, out }
}

pub(crate) fn pool(enc: &Encoded) -> Array2<f64> {
    enc.out.mean_axis(Axis(0)).expect("non-empty sequence").insert_axis(Axis(0))
}

struct Decoded {
    d0: Array2<f64>,
    att: Attention,
    d1: Array2<f64>,
    g: Array2<f64>,
    d2: Array2<f64>,
    logits: Array2<f64>,
}

fn decode(p: &Params, enc: &Encoded) -> Decoded {
    let l = enc.out.nrows();
    let z = pool(enc);
    let d0 = p.dec_pos.slice(s![..l, ..]).to_owned() + &z;
    let att = attend(&d0, &enc.out, &p.cq, &p.ck, &p.cv);
    let d1 = &d0 + &att.c.dot(&p.co);
    let g = (d1.dot(&p.w3) + &p.b3).mapv(f64::tanh);
    let d2 = &d1 + &g.dot(&p.w4) + &p.b4;
    let logits = d2.dot(&p.wout) + &p.bout;
    Decoded {
        d0,
        att,
        d1,
        g,
        d2,
        logits,
    }
}

/// Logits for every position when reconstructing `ids`.
pub(crate) fn reconstruct_logits(p: &Params, ids: &[usize]) -> Array2<f64> {
    decode(p, &encode(p, ids)).logits
}

fn log_sum_exp(row: ndarray::ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn mean_cross_entropy(logits: &Array2<f64>, ids: &[usize]) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(ids)
        .map(|(row, &t)| log_sum_exp(row) - row[t])
        .sum();
    total / ids.len() as f64
}

/// Mean per-position cross-entropy of reconstructing `ids`.
pub(crate) fn loss(p: &Params, ids: &[usize]) -> f64 {
    mean_cross_entropy(&reconstruct_logits(p, ids), ids)
}

/// Loss and its gradient with respect to every parameter.
pub(crate) fn loss_and_grad(p: &Params, ids: &[usize]) -> (f64, Params) {
    let l = ids.len();
    let enc = encode(p, ids);
    let dec = decode(p, &enc);
    let loss = mean_cross_entropy(&dec.logits, ids);
    let mut g = p.zeros_like();

    let mut dlogits = softmax_rows(&dec.logits);
    for (t, &id) in ids.iter().enumerate() {
        dlogits[[t, id]] -= 1.0;
    }
    dlogits /= l as f64;

    g.wout = dec.d2.t().dot(&dlogits);
    g.bout = dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dd2 = dlogits.dot(&p.wout.t());

    g.w4 = dec.g.t().dot(&dd2);
    g.b4 = dd2.sum_axis(Axis(0)).insert_axis(Axis(0));
    let du2 = dd2.dot(&p.w4.t()) * dec.g.mapv(|v| 1.0 - v * v);
    g.w3 = dec.d1.t().dot(&du2);
    g.b3 = du2.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dd1 = &dd2 + &du2.dot(&p.w3.t());

    g.co = dec.att.c.t().dot(&dd1);
    let dc2 = dd1.dot(&p.co.t());
    let (dq2, dk2, dv2) = attend_backward(&dec.att, &dc2);
    g.cq = dec.d0.t().dot(&dq2);
    g.ck = enc.out.t().dot(&dk2);
    g.cv = enc.out.t().dot(&dv2);
    let dd0 = &dd1 + &dq2.dot(&p.cq.t());

    g.dec_pos.slice_mut(s![..l, ..]).assign(&dd0);
    let dz = dd0.sum_axis(Axis(0)) / l as f64;
    let denc = dk2.dot(&p.ck.t()) + dv2.dot(&p.cv.t()) + &dz.insert_axis(Axis(0));

    g.w2 = enc.g.t().dot(&denc);
    g.b2 = denc.sum_axis(Axis(0)).insert_axis(Axis(0));
    let du = denc.dot(&p.w2.t()) * enc.g.mapv(|v| 1.0 - v * v);
    g.w1 = enc.h1.t().dot(&du);
    g.b1 = du.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dh1 = &denc + &du.dot(&p.w1.t());

    g.wo = enc.att.c.t().dot(&dh1);
    let dc = dh1.dot(&p.wo.t());
    let (dq, dk, dv) = attend_backward(&enc.att, &dc);
    g.wq = enc.x.t().dot(&dq);
    g.wk = enc.x.t().dot(&dk);
    g.wv = enc.x.t().dot(&dv);
    let dx = &dh1 + &dq.dot(&p.wq.t()) + &dk.dot(&p.wk.t()) + &dv.dot(&p.wv.t());

    g.pos.slice_mut(s![..l, ..]).assign(&dx);
    for (t, &id) in ids.iter().enumerate() {
        let mut row = g.tok.row_mut(id);
        row += &dx.row(t);
    }
    (loss, g)
}
