use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{affine, gelu, gelu_grad, layer_norm, layer_norm_backward, softmax_rows, LnCache, Scalar};
use super::{GeneratorConfig, Logits, Result};
use crate::codec::TokenGrid;
use crate::conditioning::{CondEmbedding, Modality};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockWeights<S> {
    pub ln1_g: Array1<S>,
    pub ln1_b: Array1<S>,
    pub w_qkv: Array2<S>,
    pub b_qkv: Array1<S>,
    pub w_o: Array2<S>,
    pub b_o: Array1<S>,
    pub ln2_g: Array1<S>,
    pub ln2_b: Array1<S>,
    pub w_1: Array2<S>,
    pub b_1: Array1<S>,
    pub w_2: Array2<S>,
    pub b_2: Array1<S>,
}

impl<S: Scalar> BlockWeights<S> {
    fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            w_qkv: Array2::zeros((d, 3 * d)),
            b_qkv: Array1::zeros(3 * d),
            w_o: Array2::zeros((d, d)),
            b_o: Array1::zeros(d),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w_1: Array2::zeros((d, hidden)),
            b_1: Array1::zeros(hidden),
            w_2: Array2::zeros((hidden, d)),
            b_2: Array1::zeros(d),
        }
    }

    fn views<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, S>)>) {
        let mut push = |name: &str, v: ArrayViewD<'a, S>| out.push((format!("{prefix}.{name}"), v));
        push("ln1_g", self.ln1_g.view().into_dyn());
        push("ln1_b", self.ln1_b.view().into_dyn());
        push("w_qkv", self.w_qkv.view().into_dyn());
        push("b_qkv", self.b_qkv.view().into_dyn());
        push("w_o", self.w_o.view().into_dyn());
        push("b_o", self.b_o.view().into_dyn());
        push("ln2_g", self.ln2_g.view().into_dyn());
        push("ln2_b", self.ln2_b.view().into_dyn());
        push("w_1", self.w_1.view().into_dyn());
        push("b_1", self.b_1.view().into_dyn());
        push("w_2", self.w_2.view().into_dyn());
        push("b_2", self.b_2.view().into_dyn());
    }

    fn views_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, S>>) {
        let Self { ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2 } = self;
        out.push(ln1_g.view_mut().into_dyn());
        out.push(ln1_b.view_mut().into_dyn());
        out.push(w_qkv.view_mut().into_dyn());
        out.push(b_qkv.view_mut().into_dyn());
        out.push(w_o.view_mut().into_dyn());
        out.push(b_o.view_mut().into_dyn());
        out.push(ln2_g.view_mut().into_dyn());
        out.push(ln2_b.view_mut().into_dyn());
        out.push(w_1.view_mut().into_dyn());
        out.push(b_1.view_mut().into_dyn());
        out.push(w_2.view_mut().into_dyn());
        out.push(b_2.view_mut().into_dyn());
    }
}

/// Every trainable tensor. Gradients use the same struct.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Weights<S> {
    pub tok_emb: Array2<S>,
    pub pos_freq: Array2<S>,
    pub pos_time: Array2<S>,
    pub cond_w: Array2<S>,
    pub cond_b: Array1<S>,
    pub null_cond: Array1<S>,
    pub blocks: Vec<BlockWeights<S>>,
    pub lnf_g: Array1<S>,
    pub lnf_b: Array1<S>,
    pub head_w: Array2<S>,
    pub head_b: Array1<S>,
}

impl<S: Scalar> Weights<S> {
    pub fn zeros(c: &GeneratorConfig) -> Self {
        let d = c.dim;
        Self {
            tok_emb: Array2::zeros((c.vocab(), d)),
            pos_freq: Array2::zeros((c.freq, d)),
            pos_time: Array2::zeros((c.time, d)),
            cond_w: Array2::zeros((c.cond_dim, d)),
            cond_b: Array1::zeros(d),
            null_cond: Array1::zeros(c.cond_dim),
            blocks: (0..c.blocks).map(|_| BlockWeights::zeros(d, c.hidden())).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            head_w: Array2::zeros((d, c.codebook_size)),
            head_b: Array1::zeros(c.codebook_size),
        }
    }

    /// Normal(0, 0.02) matrices and embeddings, unit norm gains, zero biases.
    pub fn init(c: &GeneratorConfig) -> Self {
        let mut w = Self::zeros(c);
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (name, mut t) in w.names().into_iter().zip(w.views_mut()) {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            if leaf.ends_with("_g") {
                t.fill(S::one());
            } else if leaf.starts_with("b_") || leaf.ends_with("_b") {
                continue;
            } else {
                t.mapv_inplace(|_| S::lit(normal.sample(&mut rng)));
            }
        }
        w
    }

    pub fn views(&self) -> Vec<(String, ArrayViewD<'_, S>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view().into_dyn()),
            ("pos_freq".to_string(), self.pos_freq.view().into_dyn()),
            ("pos_time".to_string(), self.pos_time.view().into_dyn()),
            ("cond_w".to_string(), self.cond_w.view().into_dyn()),
            ("cond_b".to_string(), self.cond_b.view().into_dyn()),
            ("null_cond".to_string(), self.null_cond.view().into_dyn()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            b.views(&format!("blocks.{i}"), &mut out);
        }
        out.push(("lnf_g".to_string(), self.lnf_g.view().into_dyn()));
        out.push(("lnf_b".to_string(), self.lnf_b.view().into_dyn()));
        out.push(("head_w".to_string(), self.head_w.view().into_dyn()));
        out.push(("head_b".to_string(), self.head_b.view().into_dyn()));
        out
    }

    /// Same order as [`Weights::views`].
    pub fn views_mut(&mut self) -> Vec<ArrayViewMutD<'_, S>> {
        let Self { tok_emb, pos_freq, pos_time, cond_w, cond_b, null_cond, blocks, lnf_g, lnf_b, head_w, head_b } =
            self;
        let mut out = vec![
            tok_emb.view_mut().into_dyn(),
            pos_freq.view_mut().into_dyn(),
            pos_time.view_mut().into_dyn(),
            cond_w.view_mut().into_dyn(),
            cond_b.view_mut().into_dyn(),
            null_cond.view_mut().into_dyn(),
        ];
        for b in blocks.iter_mut() {
            b.views_mut(&mut out);
        }
        out.push(lnf_g.view_mut().into_dyn());
        out.push(lnf_b.view_mut().into_dyn());
        out.push(head_w.view_mut().into_dyn());
        out.push(head_b.view_mut().into_dyn());
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.views().into_iter().map(|(n, _)| n).collect()
    }

    #[cfg(test)]
    pub fn cast<T: Scalar>(&self, c: &GeneratorConfig) -> Weights<T> {
        let mut out = Weights::<T>::zeros(c);
        for ((_, src), mut dst) in self.views().into_iter().zip(out.views_mut()) {
            dst.zip_mut_with(&src, |d, &s| *d = T::lit(s.to_f64().expect("finite")));
        }
        out
    }
}

/// Masked transformer with weights of element type `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S: Scalar = f32> {
    pub(crate) config: GeneratorConfig,
    pub(crate) weights: Weights<S>,
    /// Content hash of the codebook the model was trained against.
    pub(crate) codebook_hash: Option<String>,
}

impl<S: Scalar> Model<S> {
    /// Fresh weights drawn from `config.seed`.
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let weights = Weights::init(&config);
        Ok(Self { config, weights, codebook_hash: None })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn codebook_hash(&self) -> Option<&str> {
        self.codebook_hash.as_deref()
    }

    pub fn set_codebook_hash(&mut self, hash: impl Into<String>) {
        self.codebook_hash = Some(hash.into());
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.views().iter().map(|(_, v)| v.len()).sum()
    }

    /// The learned vector standing in for "no condition".
    pub fn null_embedding(&self) -> CondEmbedding {
        CondEmbedding {
            vector: self.weights.null_cond.iter().map(|v| v.to_f32().unwrap_or(0.0)).collect(),
            modality: Modality::Null,
        }
    }

    /// Logits over the codebook at every masked cell of `grid`.
    ///
    /// `None` runs the unconditioned branch.
    pub fn forward(&self, grid: &TokenGrid, cond: Option<&CondEmbedding>) -> Result<Logits> {
        self.config.check_grid(grid)?;
        if let Some(c) = cond {
            self.config.check_cond(c)?;
        }
        let cells = grid.masked_cells();
        if cells.is_empty() {
            return Ok(Logits::empty(self.config.codebook_size));
        }
        let input = Input::new(&self.config, grid, cond);
        let rows = forward_rows(&self.config, &self.weights, &input, &cells);
        Logits::new(cells, rows.mapv(|v| v.to_f64().unwrap_or(f64::NAN)))
    }
}

/// Token ids and condition vector fed to the network.
pub(crate) struct Input<S> {
    pub ids: Vec<usize>,
    pub cond: Array1<S>,
    pub is_null: bool,
}

impl<S: Scalar> Input<S> {
    pub fn new(c: &GeneratorConfig, grid: &TokenGrid, cond: Option<&CondEmbedding>) -> Self {
        let conditioned = matches!(cond, Some(e) if e.modality != Modality::Null);
        let mask_id = if conditioned && c.cond_mask_token { c.cond_mask_id() } else { c.mask_id() } as usize;
        let ids = (0..grid.len())
            .map(|i| grid.token(i).map_or(mask_id, |t| t as usize))
            .collect();
        match cond {
            Some(e) if e.modality != Modality::Null => Input {
                ids,
                cond: e.vector.iter().map(|&v| S::lit(v as f64)).collect(),
                is_null: false,
            },
            _ => Input { ids, cond: Array1::zeros(c.cond_dim), is_null: true },
        }
    }
}

fn embed<S: Scalar>(c: &GeneratorConfig, w: &Weights<S>, input: &Input<S>) -> Array2<S> {
    let cond = if input.is_null { w.null_cond.view() } else { input.cond.view() };
    let cvec = &cond.dot(&w.cond_w) + &w.cond_b;
    let mut x = Array2::zeros((input.ids.len(), c.dim));
    for (i, mut row) in x.outer_iter_mut().enumerate() {
        let (f, t) = (i / c.time, i % c.time);
        row.assign(&w.tok_emb.row(input.ids[i]));
        row += &w.pos_freq.row(f);
        row += &w.pos_time.row(t);
        row += &cvec;
    }
    x
}

pub(crate) struct BlockCache<S> {
    ln1: LnCache<S>,
    h1: Array2<S>,
    qkv: Array2<S>,
    attn: Vec<Array2<S>>,
    o: Array2<S>,
    ln2: LnCache<S>,
    h2: Array2<S>,
    u: Array2<S>,
    g: Array2<S>,
}

/// Multi-head self-attention. Queries come from `hq` (a subset of rows, or
/// all of them); keys and values from every row of `h`.
fn attention<S: Scalar>(
    b: &BlockWeights<S>,
    heads: usize,
    h: ArrayView2<S>,
    hq: Option<ArrayView2<S>>,
) -> (Array2<S>, Array2<S>, Vec<Array2<S>>) {
    let d = h.ncols();
    let dh = d / heads;
    let scale = S::one() / S::lit(dh as f64).sqrt();
    let qkv = affine(h, b.w_qkv.view(), b.b_qkv.view());
    let q_all;
    let q = match hq {
        Some(hq) => {
            q_all = affine(hq, b.w_qkv.slice(s![.., ..d]), b.b_qkv.slice(s![..d]));
            q_all.view()
        }
        None => qkv.slice(s![.., ..d]),
    };
    let mut o = Array2::zeros((q.nrows(), d));
    let mut attn = Vec::with_capacity(heads);
    for hd in 0..heads {
        let (lo, hi) = (hd * dh, (hd + 1) * dh);
        let qh = q.slice(s![.., lo..hi]);
        let kh = qkv.slice(s![.., d + lo..d + hi]);
        let vh = qkv.slice(s![.., 2 * d + lo..2 * d + hi]);
        let mut a = qh.dot(&kh.t());
        a *= scale;
        softmax_rows(a.view_mut());
        o.slice_mut(s![.., lo..hi]).assign(&a.dot(&vh));
        attn.push(a);
    }
    (o, qkv, attn)
}

fn mlp<S: Scalar>(b: &BlockWeights<S>, h2: ArrayView2<S>) -> (Array2<S>, Array2<S>, Array2<S>) {
    let u = affine(h2, b.w_1.view(), b.b_1.view());
    let g = u.mapv(gelu);
    let m = affine(g.view(), b.w_2.view(), b.b_2.view());
    (m, u, g)
}

fn block_forward<S: Scalar>(b: &BlockWeights<S>, heads: usize, x: &mut Array2<S>) -> BlockCache<S> {
    let (h1, ln1) = layer_norm(x.view(), b.ln1_g.view(), b.ln1_b.view());
    let (o, qkv, attn) = attention(b, heads, h1.view(), None);
    *x += &affine(o.view(), b.w_o.view(), b.b_o.view());
    let (h2, ln2) = layer_norm(x.view(), b.ln2_g.view(), b.ln2_b.view());
    let (m, u, g) = mlp(b, h2.view());
    *x += &m;
    BlockCache { ln1, h1, qkv, attn, o, ln2, h2, u, g }
}

/// Last block evaluated only at `rows`; returns those rows' outputs.
fn block_forward_rows<S: Scalar>(b: &BlockWeights<S>, heads: usize, x: &Array2<S>, rows: &[usize]) -> Array2<S> {
    let (h1, _) = layer_norm(x.view(), b.ln1_g.view(), b.ln1_b.view());
    let hq = h1.select(Axis(0), rows);
    let (o, _, _) = attention(b, heads, h1.view(), Some(hq.view()));
    let mut xr = x.select(Axis(0), rows);
    xr += &affine(o.view(), b.w_o.view(), b.b_o.view());
    let (h2, _) = layer_norm(xr.view(), b.ln2_g.view(), b.ln2_b.view());
    xr += &mlp(b, h2.view()).0;
    xr
}

fn head<S: Scalar>(w: &Weights<S>, x: ArrayView2<S>) -> (Array2<S>, Array2<S>, LnCache<S>) {
    let (hf, lnf) = layer_norm(x, w.lnf_g.view(), w.lnf_b.view());
    let logits = affine(hf.view(), w.head_w.view(), w.head_b.view());
    (logits, hf, lnf)
}

/// Inference: logits only at `rows`, skipping work the answer does not need.
pub(crate) fn forward_rows<S: Scalar>(
    c: &GeneratorConfig,
    w: &Weights<S>,
    input: &Input<S>,
    rows: &[usize],
) -> Array2<S> {
    let mut x = embed(c, w, input);
    let xr = match w.blocks.split_last() {
        None => x.select(Axis(0), rows),
        Some((last, rest)) => {
            for b in rest {
                block_forward(b, c.heads, &mut x);
            }
            block_forward_rows(last, c.heads, &x, rows)
        }
    };
    head(w, xr.view()).0
}

pub(crate) struct Cache<S> {
    blocks: Vec<BlockCache<S>>,
    hf: Array2<S>,
    lnf: LnCache<S>,
}

/// Training: logits at every cell plus what backprop needs.
pub(crate) fn forward_full<S: Scalar>(c: &GeneratorConfig, w: &Weights<S>, input: &Input<S>) -> (Array2<S>, Cache<S>) {
    let mut x = embed(c, w, input);
    let blocks = w.blocks.iter().map(|b| block_forward(b, c.heads, &mut x)).collect();
    let (logits, hf, lnf) = head(w, x.view());
    (logits, Cache { blocks, hf, lnf })
}

fn block_backward<S: Scalar>(
    b: &BlockWeights<S>,
    g: &mut BlockWeights<S>,
    c: &BlockCache<S>,
    heads: usize,
    mut dx: Array2<S>,
) -> Array2<S> {
    let d = b.w_o.nrows();
    let dh = d / heads;
    let scale = S::one() / S::lit(dh as f64).sqrt();

    g.w_2 += &c.g.t().dot(&dx);
    g.b_2 += &dx.sum_axis(Axis(0));
    let mut du = dx.dot(&b.w_2.t());
    du.zip_mut_with(&c.u, |v, &u| *v = *v * gelu_grad(u));
    g.w_1 += &c.h2.t().dot(&du);
    g.b_1 += &du.sum_axis(Axis(0));
    let dh2 = du.dot(&b.w_1.t());
    dx += &layer_norm_backward(dh2.view(), &c.ln2, b.ln2_g.view(), &mut g.ln2_g, &mut g.ln2_b);

    g.w_o += &c.o.t().dot(&dx);
    g.b_o += &dx.sum_axis(Axis(0));
    let d_o = dx.dot(&b.w_o.t());
    let mut dqkv = Array2::zeros(c.qkv.raw_dim());
    for hd in 0..heads {
        let (lo, hi) = (hd * dh, (hd + 1) * dh);
        let q = c.qkv.slice(s![.., lo..hi]);
        let k = c.qkv.slice(s![.., d + lo..d + hi]);
        let v = c.qkv.slice(s![.., 2 * d + lo..2 * d + hi]);
        let a = &c.attn[hd];
        let doh = d_o.slice(s![.., lo..hi]);
        let mut ds = doh.dot(&v.t());
        dqkv.slice_mut(s![.., 2 * d + lo..2 * d + hi]).assign(&a.t().dot(&doh));
        for (mut dsr, ar) in ds.outer_iter_mut().zip(a.outer_iter()) {
            let dot = dsr.iter().zip(ar.iter()).map(|(&x, &y)| x * y).sum::<S>();
            dsr.zip_mut_with(&ar, |x, &y| *x = y * (*x - dot) * scale);
        }
        dqkv.slice_mut(s![.., lo..hi]).assign(&ds.dot(&k));
        dqkv.slice_mut(s![.., d + lo..d + hi]).assign(&ds.t().dot(&q));
    }
    g.w_qkv += &c.h1.t().dot(&dqkv);
    g.b_qkv += &dqkv.sum_axis(Axis(0));
    let dh1 = dqkv.dot(&b.w_qkv.t());
    dx += &layer_norm_backward(dh1.view(), &c.ln1, b.ln1_g.view(), &mut g.ln1_g, &mut g.ln1_b);
    dx
}

/// Accumulates `d loss / d weights` into `grads` given `dlogits` at every cell.
pub(crate) fn backward<S: Scalar>(
    c: &GeneratorConfig,
    w: &Weights<S>,
    grads: &mut Weights<S>,
    input: &Input<S>,
    cache: &Cache<S>,
    dlogits: ArrayView2<S>,
) {
    grads.head_w += &cache.hf.t().dot(&dlogits);
    grads.head_b += &dlogits.sum_axis(Axis(0));
    let dhf = dlogits.dot(&w.head_w.t());
    let mut dx = layer_norm_backward(dhf.view(), &cache.lnf, w.lnf_g.view(), &mut grads.lnf_g, &mut grads.lnf_b);
    for ((b, g), bc) in w.blocks.iter().zip(grads.blocks.iter_mut()).zip(cache.blocks.iter()).rev() {
        dx = block_backward(b, g, bc, c.heads, dx);
    }
    for (i, row) in dx.outer_iter().enumerate() {
        let (f, t) = (i / c.time, i % c.time);
        let mut r = grads.tok_emb.row_mut(input.ids[i]);
        r += &row;
        let mut r = grads.pos_freq.row_mut(f);
        r += &row;
        let mut r = grads.pos_time.row_mut(t);
        r += &row;
    }
    let dcvec = dx.sum_axis(Axis(0));
    grads.cond_b += &dcvec;
    let cond: ArrayView1<S> = if input.is_null { w.null_cond.view() } else { input.cond.view() };
    for (i, &ci) in cond.iter().enumerate() {
        let mut r = grads.cond_w.row_mut(i);
        r.scaled_add(ci, &dcvec);
    }
    if input.is_null {
        grads.null_cond += &w.cond_w.dot(&dcvec);
    }
}

/// Mean cross-entropy over `cells` and its gradient w.r.t. all logits,
/// scaled by `weight` (e.g. one over the batch's masked-cell count).
pub(crate) fn masked_cross_entropy<S: Scalar>(
    logits: ArrayView2<S>,
    cells: &[usize],
    targets: &[u32],
    weight: S,
) -> (f64, usize, Array2<S>) {
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut correct = 0;
    for (&cell, &target) in cells.iter().zip(targets) {
        let row = logits.row(cell);
        let mut p = row.to_owned().insert_axis(Axis(0));
        softmax_rows(p.view_mut());
        let p = p.row(0);
        let t = target as usize;
        loss -= p[t].to_f64().unwrap_or(0.0).max(f64::MIN_POSITIVE).ln();
        let best = argmax(row);
        if best == t {
            correct += 1;
        }
        let mut dr = dlogits.row_mut(cell);
        dr.assign(&p);
        dr[t] -= S::one();
        dr.mapv_inplace(|v| v * weight);
    }
    (loss, correct, dlogits)
}

/// First index of the maximum.
pub(crate) fn argmax<S: Scalar>(row: ArrayView1<S>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn tiny(blocks: usize, freq: usize, time: usize) -> GeneratorConfig {
        GeneratorConfig {
            blocks,
            dim: 8,
            heads: 2,
            codebook_size: 5,
            freq,
            time,
            cond_dim: 3,
            mlp_ratio: 2,
            seed: 11,
            ..GeneratorConfig::toy()
        }
    }

    /// Every weight jittered so no gain is exactly one and no bias zero.
    fn jittered(c: &GeneratorConfig) -> Weights<f64> {
        let mut w = Weights::<f64>::init(c);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for mut t in w.views_mut() {
            t.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
        }
        w
    }

    fn grid_with_mask(c: &GeneratorConfig, seed: u64) -> (TokenGrid, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<u32> = (0..c.cells()).map(|_| rng.random_range(0..c.codebook_size as u32)).collect();
        let mut g = TokenGrid::from_indices(c.freq, c.time, targets.clone()).unwrap();
        for cell in 0..c.cells() {
            if cell % 2 == 0 {
                g.mask_cell(cell);
            }
        }
        (g, targets)
    }

    #[test]
    fn row_subset_path_matches_full_forward() {
        let c = tiny(2, 2, 4);
        let w = jittered(&c);
        let (grid, _) = grid_with_mask(&c, 1);
        let cells = grid.masked_cells();
        let input = Input::<f64>::new(&c, &grid, None);
        let (full, _) = forward_full(&c, &w, &input);
        let fast = forward_rows(&c, &w, &input, &cells);
        for (r, &cell) in cells.iter().enumerate() {
            for k in 0..c.codebook_size {
                assert!((full[[cell, k]] - fast[[r, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_count_agrees_with_config_formula() {
        for c in [tiny(0, 1, 2), tiny(3, 2, 5), GeneratorConfig::toy()] {
            let m = Model::<f32>::new(c.clone()).unwrap();
            assert_eq!(m.parameter_count(), c.parameter_count());
        }
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let c = GeneratorConfig { freq: 4, time: 6, ..GeneratorConfig::toy() };
        let m = Model::<f32>::new(c.clone()).unwrap();
        let (grid, all) = {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let t: Vec<u32> = (0..24).map(|_| rng.random_range(0..256)).collect();
            let mut g = TokenGrid::from_indices(4, 6, t.clone()).unwrap();
            (0..24).step_by(2).for_each(|i| g.mask_cell(i));
            (g, t)
        };
        let logits = m.forward(&grid, None).unwrap();
        let mut loss = 0.0;
        for (r, &cell) in logits.cells().iter().enumerate() {
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[all[cell] as usize];
        }
        loss /= logits.cells().len() as f64;
        assert!((loss / 256f64.ln() - 1.0).abs() < 0.02, "{loss}");
    }

    #[test]
    fn cast_roundtrip_preserves_f32_values() {
        let c = tiny(1, 1, 2);
        let w = Weights::<f32>::init(&c);
        let back: Weights<f32> = w.cast::<f64>(&c).cast(&c);
        assert_eq!(w, back);
    }
}
