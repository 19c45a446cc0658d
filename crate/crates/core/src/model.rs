//! Differentiable core: windowed contextualization, bidirectional attention,
//! sigmoid-NCE losses, the agreement penalty and their analytic gradients.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for gradient checking.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SentencePair;
use crate::error::{Error, Result};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<F> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.get(i, j);
            }
        }
        out
    }

    pub fn gather(&self, ids: &[u32]) -> Self {
        let mut out = Self::zeros(ids.len(), self.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(id as usize));
        }
        out
    }

    pub fn cast<G: Real>(&self) -> Matrix<G> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| G::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(G::nan()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    // Eight independent accumulators let the compiler vectorize.
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// `log(sigmoid(z))` without overflow or underflow to `-inf` for moderate `z`.
#[inline]
pub fn log_sigmoid<F: Real>(z: F) -> F {
    z.min(F::zero()) - (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub dim: usize,
    pub win: usize,
    /// Negatives per positive.
    pub k: usize,
    /// Weight of the agreement term.
    pub alpha: f64,
    pub use_s2t: bool,
    pub use_t2s: bool,
    pub use_agreement: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dim: 256,
            win: 3,
            k: 5,
            alpha: 1.0,
            use_s2t: true,
            use_t2s: true,
            use_agreement: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if self.win < 1 || self.win.is_multiple_of(2) {
            return Err(Error::Config(format!("win must be odd and >= 1, got {}", self.win)));
        }
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// Effective agreement weight, zero when the term is switched off.
    pub fn agreement_weight(&self) -> f64 {
        if self.use_agreement {
            self.alpha
        } else {
            0.0
        }
    }
}

/// The only trainable parameters: one embedding row per vocabulary entry on
/// each side.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<F = f32> {
    pub src: Matrix<F>,
    pub tgt: Matrix<F>,
}

impl<F: Real> EmbeddingTable<F> {
    pub fn xavier(src_rows: usize, tgt_rows: usize, dim: usize, seed: u64) -> Self {
        EmbeddingTable {
            src: xavier_init(src_rows, dim, derive_seed(seed, 0)),
            tgt: xavier_init(tgt_rows, dim, derive_seed(seed, 1)),
        }
    }

    pub fn dim(&self) -> usize {
        self.src.cols()
    }

    pub fn all_finite(&self) -> bool {
        self.src.all_finite() && self.tgt.all_finite()
    }

    pub fn cast<G: Real>(&self) -> EmbeddingTable<G> {
        EmbeddingTable {
            src: self.src.cast(),
            tgt: self.tgt.cast(),
        }
    }
}

pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform Glorot initialization with bound `sqrt(6 / (rows + d))`.
pub fn xavier_init<F: Real>(rows: usize, d: usize, seed: u64) -> Matrix<F> {
    let bound = (6.0 / (rows + d) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * d)
        .map(|_| F::lit(rng.random_range(-bound..=bound)))
        .collect();
    Matrix::from_vec(rows, d, data)
}

/// Window half-width and divisor for an odd window.
fn window(win: usize) -> (usize, usize) {
    debug_assert!(win % 2 == 1);
    (win / 2, win)
}

/// Contextual representation of position `pos`: the zero-padded mean of the
/// `win` embeddings centred on it, plus its own embedding.
pub(crate) fn pool_at<'a, F: Real>(
    row: impl Fn(usize) -> &'a [F],
    len: usize,
    pos: usize,
    win: usize,
    out: &mut [F],
) {
    let (half, divisor) = window(win);
    out.fill(F::zero());
    let lo = pos.saturating_sub(half);
    let hi = (pos + half).min(len - 1);
    for j in lo..=hi {
        for (o, &v) in out.iter_mut().zip(row(j)) {
            *o += v;
        }
    }
    let divisor = F::lit(divisor as f64);
    for (o, &v) in out.iter_mut().zip(row(pos)) {
        *o = *o / divisor + v;
    }
}

/// Adjoint of [`pool_at`]: routes `grad` back to the embedding rows of the
/// window around `pos`.
fn unpool_at<F: Real>(
    ids: &[u32],
    pos: usize,
    win: usize,
    grad: &[F],
    scale: F,
    out: &mut GradRows<F>,
) {
    let (half, divisor) = window(win);
    let share = scale / F::lit(divisor as f64);
    let lo = pos.saturating_sub(half);
    let hi = (pos + half).min(ids.len() - 1);
    for &id in &ids[lo..=hi] {
        axpy(share, grad, out.row_mut(id));
    }
    axpy(scale, grad, out.row_mut(ids[pos]));
}

/// Windowed mean pooling plus identity over already-gathered embedding rows.
pub fn contextualize<F: Real>(emb_rows: &Matrix<F>, win: usize) -> Result<Matrix<F>> {
    if win.is_multiple_of(2) {
        return Err(Error::Config(format!("window size must be odd, got {win}")));
    }
    let n = emb_rows.rows();
    let mut out = Matrix::zeros(n, emb_rows.cols());
    for i in 0..n {
        pool_at(|j| emb_rows.row(j), n, i, win, out.row_mut(i));
    }
    Ok(out)
}

/// Contextual representations of a sentence given by vocabulary ids.
pub fn contextualize_ids<F: Real>(table: &Matrix<F>, ids: &[u32], win: usize) -> Matrix<F> {
    let n = ids.len();
    let mut out = Matrix::zeros(n, table.cols());
    for i in 0..n {
        pool_at(|j| table.row(ids[j] as usize), n, i, win, out.row_mut(i));
    }
    out
}

/// Row-stochastic attention maps in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap<F = f32> {
    /// `|s| x |t|`; row `i` is source query `i` attending over the target.
    pub s2t: Matrix<F>,
    /// `|t| x |s|`
    pub t2s: Matrix<F>,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput<F = f32> {
    pub map: AttentionMap<F>,
    /// Attention context of every source query, `|s| x d`.
    pub ctx_s2t: Matrix<F>,
    /// Attention context of every target query, `|t| x d`.
    pub ctx_t2s: Matrix<F>,
}

pub fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Attention distribution and context for each query over `keys`.
fn attend<F: Real>(queries: &Matrix<F>, keys: &Matrix<F>) -> (Matrix<F>, Matrix<F>) {
    let (n, m) = (queries.rows(), keys.rows());
    let mut probs = Matrix::zeros(n, m);
    let mut ctx = Matrix::zeros(n, queries.cols());
    for i in 0..n {
        let q = queries.row(i);
        let p = probs.row_mut(i);
        for (t, pt) in p.iter_mut().enumerate() {
            *pt = dot(keys.row(t), q);
        }
        softmax_in_place(p);
        let c = ctx.row_mut(i);
        for t in 0..m {
            axpy(probs.get(i, t), keys.row(t), c);
        }
    }
    (probs, ctx)
}

pub fn attention_forward<F: Real>(x: &Matrix<F>, y: &Matrix<F>) -> AttentionOutput<F> {
    assert!(x.rows() > 0 && y.rows() > 0, "attention over an empty sentence");
    assert_eq!(x.cols(), y.cols(), "representation widths differ");
    let (s2t, ctx_s2t) = attend(x, y);
    let (t2s, ctx_t2s) = attend(y, x);
    AttentionOutput {
        map: AttentionMap { s2t, t2s },
        ctx_s2t,
        ctx_t2s,
    }
}

/// Contextualize both sentences of a pair and run attention.
pub fn pair_attention<F: Real>(
    params: &EmbeddingTable<F>,
    src_ids: &[u32],
    tgt_ids: &[u32],
    win: usize,
) -> AttentionOutput<F> {
    let x = contextualize_ids(&params.src, src_ids, win);
    let y = contextualize_ids(&params.tgt, tgt_ids, win);
    attention_forward(&x, &y)
}

/// `sigmoid(<q, c>)`
pub fn align_score<F: Real>(q: &[F], c: &[F]) -> F {
    sigmoid(dot(q, c))
}

/// Per-position NCE terms: loss and the derivatives with respect to the
/// positive logit and each negative logit.
struct NceTerm<F> {
    loss: F,
    d_pos: F,
}

#[inline]
fn nce_term<F: Real>(pos_logit: F, neg_logits: &[F], d_negs: &mut [F]) -> NceTerm<F> {
    let ls0 = log_sigmoid(pos_logit);
    let mut max = ls0;
    for (d, &z) in d_negs.iter_mut().zip(neg_logits) {
        *d = log_sigmoid(z);
        max = max.max(*d);
    }
    let mut sum = (ls0 - max).exp();
    for &l in d_negs.iter() {
        sum += (l - max).exp();
    }
    let log_denom = max + sum.ln();
    let p0 = (ls0 - log_denom).exp();
    for (d, &z) in d_negs.iter_mut().zip(neg_logits) {
        *d = (*d - log_denom).exp() * sigmoid(-z);
    }
    NceTerm {
        loss: log_denom - ls0,
        d_pos: -(sigmoid(-pos_logit) * (F::one() - p0)),
    }
}

/// Mean NCE loss over `n` queries; `negatives` holds `k` rows per query.
pub fn nce_loss_direction<F: Real>(
    queries: &Matrix<F>,
    contexts: &Matrix<F>,
    negatives: &Matrix<F>,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("NCE loss needs at least one negative".into()));
    }
    let n = queries.rows();
    if contexts.rows() != n || negatives.rows() != n * k {
        return Err(Error::Shape(format!(
            "{n} queries, {} contexts, {} negatives for k={k}",
            contexts.rows(),
            negatives.rows()
        )));
    }
    let mut neg_logits = vec![F::zero(); k];
    let mut scratch = vec![F::zero(); k];
    let mut total = 0.0f64;
    for i in 0..n {
        let c = contexts.row(i);
        for (j, z) in neg_logits.iter_mut().enumerate() {
            *z = dot(negatives.row(i * k + j), c);
        }
        let term = nce_term(dot(queries.row(i), c), &neg_logits, &mut scratch);
        total += term.loss.to_f64().unwrap_or(f64::NAN);
    }
    Ok(total / n as f64)
}

/// Sum of squared differences between the s2t map and the transposed t2s map.
pub fn agreement_loss<F: Real>(map: &AttentionMap<F>) -> Result<f64> {
    let (s, t) = (map.s2t.rows(), map.s2t.cols());
    if map.t2s.rows() != t || map.t2s.cols() != s {
        return Err(Error::Shape(format!(
            "s2t is {s}x{t} but t2s is {}x{}",
            map.t2s.rows(),
            map.t2s.cols()
        )));
    }
    let mut total = 0.0f64;
    for i in 0..s {
        for j in 0..t {
            let diff = (map.s2t.get(i, j) - map.t2s.get(j, i)).to_f64().unwrap_or(f64::NAN);
            total += diff * diff;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub loss_s2t: f64,
    pub loss_t2s: f64,
    pub loss_disagree: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(loss_s2t: f64, loss_t2s: f64, loss_disagree: f64, hp: &Hyperparams) -> Self {
        let mut total = 0.0;
        if hp.use_s2t {
            total += loss_s2t;
        }
        if hp.use_t2s {
            total += loss_t2s;
        }
        if hp.use_agreement {
            total += hp.alpha * loss_disagree;
        }
        LossBreakdown {
            loss_s2t,
            loss_t2s,
            loss_disagree,
            total,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loss_s2t.is_finite()
            && self.loss_t2s.is_finite()
            && self.loss_disagree.is_finite()
            && self.total.is_finite()
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.loss_s2t += other.loss_s2t;
        self.loss_t2s += other.loss_t2s;
        self.loss_disagree += other.loss_disagree;
        self.total += other.total;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        LossBreakdown {
            loss_s2t: self.loss_s2t * factor,
            loss_t2s: self.loss_t2s * factor,
            loss_disagree: self.loss_disagree * factor,
            total: self.total * factor,
        }
    }
}

/// Reference to one contextual representation used as a negative sample:
/// position `pos` of the sentence `ids`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegRef<'a> {
    pub ids: &'a [u32],
    pub pos: usize,
}

/// Negative samples for one pair, `k` per query position and direction.
///
/// `s2t` has `|s| * k` source-side references, `t2s` has `|t| * k`
/// target-side references, both grouped by query position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Negatives<'a> {
    pub k: usize,
    pub s2t: Vec<NegRef<'a>>,
    pub t2s: Vec<NegRef<'a>>,
}

impl Negatives<'_> {
    fn check(&self, pair: &SentencePair) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("NCE loss needs at least one negative".into()));
        }
        if self.s2t.len() != pair.src_len() * self.k || self.t2s.len() != pair.tgt_len() * self.k {
            return Err(Error::Shape(format!(
                "expected {}+{} negatives for k={}, got {}+{}",
                pair.src_len() * self.k,
                pair.tgt_len() * self.k,
                self.k,
                self.s2t.len(),
                self.t2s.len()
            )));
        }
        Ok(())
    }
}

fn negative_reps<F: Real>(table: &Matrix<F>, refs: &[NegRef<'_>], win: usize) -> Matrix<F> {
    let mut out = Matrix::zeros(refs.len(), table.cols());
    for (r, nr) in refs.iter().enumerate() {
        pool_at(
            |j| table.row(nr.ids[j] as usize),
            nr.ids.len(),
            nr.pos,
            win,
            out.row_mut(r),
        );
    }
    out
}

/// Embedding-row gradients for one side. Rows are dense in memory but only
/// those touched since the last [`GradRows::clear`] are tracked.
#[derive(Debug, Clone)]
pub struct GradRows<F = f32> {
    data: Matrix<F>,
    touched: Vec<bool>,
    touched_rows: Vec<u32>,
}

impl<F: Real> GradRows<F> {
    pub fn new(rows: usize, cols: usize) -> Self {
        GradRows {
            data: Matrix::zeros(rows, cols),
            touched: vec![false; rows],
            touched_rows: Vec::new(),
        }
    }

    #[inline]
    pub fn row_mut(&mut self, id: u32) -> &mut [F] {
        if !self.touched[id as usize] {
            self.touched[id as usize] = true;
            self.touched_rows.push(id);
        }
        self.data.row_mut(id as usize)
    }

    pub fn row(&self, id: u32) -> &[F] {
        self.data.row(id as usize)
    }

    pub fn touched_rows(&self) -> &[u32] {
        &self.touched_rows
    }

    pub fn is_touched(&self, id: u32) -> bool {
        self.touched[id as usize]
    }

    pub fn as_matrix(&self) -> &Matrix<F> {
        &self.data
    }

    pub fn clear(&mut self) {
        for &id in &self.touched_rows {
            self.data.row_mut(id as usize).fill(F::zero());
            self.touched[id as usize] = false;
        }
        self.touched_rows.clear();
    }

    pub fn merge_from(&mut self, other: &GradRows<F>) {
        for &id in &other.touched_rows {
            let src = other.data.row(id as usize);
            for (d, &s) in self.row_mut(id).iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for &id in &self.touched_rows {
            for v in self.data.row_mut(id as usize) {
                *v *= factor;
            }
        }
    }
}

/// Gradients with the same shapes as an [`EmbeddingTable`].
#[derive(Debug, Clone)]
pub struct Gradients<F = f32> {
    pub src: GradRows<F>,
    pub tgt: GradRows<F>,
}

impl<F: Real> Gradients<F> {
    pub fn for_table(params: &EmbeddingTable<F>) -> Self {
        Gradients {
            src: GradRows::new(params.src.rows(), params.dim()),
            tgt: GradRows::new(params.tgt.rows(), params.dim()),
        }
    }

    pub fn clear(&mut self) {
        self.src.clear();
        self.tgt.clear();
    }

    pub fn merge_from(&mut self, other: &Gradients<F>) {
        self.src.merge_from(&other.src);
        self.tgt.merge_from(&other.tgt);
    }

    pub fn scale(&mut self, factor: F) {
        self.src.scale(factor);
        self.tgt.scale(factor);
    }
}

fn check_inputs(pair: &SentencePair, params: &EmbeddingTable<impl Real>, hp: &Hyperparams) -> Result<()> {
    hp.validate()?;
    if params.dim() != hp.dim {
        return Err(Error::Shape(format!(
            "embedding width {} but hyperparameters say {}",
            params.dim(),
            hp.dim
        )));
    }
    if pair.src_ids.is_empty() || pair.tgt_ids.is_empty() {
        return Err(Error::Shape(format!("pair {} has an empty side", pair.pair_index)));
    }
    Ok(())
}

/// Loss of one sentence pair. Every component is evaluated; the ablation
/// switches in `hp` only decide which of them enter `total`.
pub fn total_loss<F: Real>(
    pair: &SentencePair,
    params: &EmbeddingTable<F>,
    hp: &Hyperparams,
    negatives: &Negatives<'_>,
) -> Result<LossBreakdown> {
    check_inputs(pair, params, hp)?;
    negatives.check(pair)?;
    let x = contextualize_ids(&params.src, &pair.src_ids, hp.win);
    let y = contextualize_ids(&params.tgt, &pair.tgt_ids, hp.win);
    let att = attention_forward(&x, &y);
    let neg_s = negative_reps(&params.src, &negatives.s2t, hp.win);
    let neg_t = negative_reps(&params.tgt, &negatives.t2s, hp.win);
    let loss_s2t = nce_loss_direction(&x, &att.ctx_s2t, &neg_s, negatives.k)?;
    let loss_t2s = nce_loss_direction(&y, &att.ctx_t2s, &neg_t, negatives.k)?;
    let loss_disagree = agreement_loss(&att.map)?;
    Ok(LossBreakdown::combine(loss_s2t, loss_t2s, loss_disagree, hp))
}

/// NCE loss of one direction and its gradients with respect to the
/// queries, the contexts and the negative representations.
///
/// Gradients are scaled by `weight` and added into the output buffers.
fn nce_backward<F: Real>(
    queries: &Matrix<F>,
    contexts: &Matrix<F>,
    negatives: &Matrix<F>,
    k: usize,
    weight: Option<F>,
    d_queries: &mut Matrix<F>,
    d_contexts: &mut Matrix<F>,
    d_negatives: &mut Matrix<F>,
) -> f64 {
    let n = queries.rows();
    let mut neg_logits = vec![F::zero(); k];
    let mut d_negs = vec![F::zero(); k];
    let mut total = 0.0f64;
    for i in 0..n {
        let c = contexts.row(i);
        let q = queries.row(i);
        for (j, z) in neg_logits.iter_mut().enumerate() {
            *z = dot(negatives.row(i * k + j), c);
        }
        let term = nce_term(dot(q, c), &neg_logits, &mut d_negs);
        total += term.loss.to_f64().unwrap_or(f64::NAN);
        let Some(w) = weight else { continue };
        let g_pos = w * term.d_pos;
        axpy(g_pos, c, d_queries.row_mut(i));
        let dc = d_contexts.row_mut(i);
        axpy(g_pos, q, dc);
        for j in 0..k {
            let g = w * d_negs[j];
            axpy(g, negatives.row(i * k + j), dc);
            axpy(g, c, d_negatives.row_mut(i * k + j));
        }
    }
    total / n as f64
}

/// Backpropagates through `context = probs * keys` and the row softmax of
/// `probs = softmax(queries * keys^T)`.
///
/// `d_probs` holds the incoming gradient with respect to the attention
/// probabilities (it is consumed as scratch).
fn attention_backward<F: Real>(
    queries: &Matrix<F>,
    keys: &Matrix<F>,
    probs: &Matrix<F>,
    d_probs: &mut Matrix<F>,
    d_contexts: &Matrix<F>,
    d_queries: &mut Matrix<F>,
    d_keys: &mut Matrix<F>,
) {
    let (n, m) = (probs.rows(), probs.cols());
    for i in 0..n {
        let dc = d_contexts.row(i);
        let dp = d_probs.row_mut(i);
        for (t, g) in dp.iter_mut().enumerate() {
            *g += dot(dc, keys.row(t));
        }
        let p = probs.row(i);
        let mean: F = p.iter().zip(dp.iter()).map(|(&a, &b)| a * b).sum();
        let q = queries.row(i);
        for t in 0..m {
            let dl = p[t] * (dp[t] - mean);
            axpy(dl, keys.row(t), d_queries.row_mut(i));
            // context and logit paths into the key row in one pass
            let dk = d_keys.row_mut(t);
            let pt = p[t];
            for ((g, &a), &b) in dk.iter_mut().zip(dc).zip(q) {
                *g += pt * a + dl * b;
            }
        }
    }
}

/// Loss of one pair plus `scale * d(total)/d(params)` added into `grads`.
pub fn accumulate_gradients<F: Real>(
    pair: &SentencePair,
    params: &EmbeddingTable<F>,
    hp: &Hyperparams,
    negatives: &Negatives<'_>,
    scale: F,
    grads: &mut Gradients<F>,
) -> Result<LossBreakdown> {
    check_inputs(pair, params, hp)?;
    negatives.check(pair)?;
    let (ns, nt, d, k) = (pair.src_len(), pair.tgt_len(), hp.dim, negatives.k);

    let x = contextualize_ids(&params.src, &pair.src_ids, hp.win);
    let y = contextualize_ids(&params.tgt, &pair.tgt_ids, hp.win);
    let att = attention_forward(&x, &y);
    let neg_s = negative_reps(&params.src, &negatives.s2t, hp.win);
    let neg_t = negative_reps(&params.tgt, &negatives.t2s, hp.win);

    let mut dx = Matrix::zeros(ns, d);
    let mut dy = Matrix::zeros(nt, d);
    let mut dctx_s = Matrix::zeros(ns, d);
    let mut dctx_t = Matrix::zeros(nt, d);
    let mut dneg_s = Matrix::zeros(ns * k, d);
    let mut dneg_t = Matrix::zeros(nt * k, d);

    let w_s2t = hp.use_s2t.then(|| scale / F::lit(ns as f64));
    let w_t2s = hp.use_t2s.then(|| scale / F::lit(nt as f64));
    let loss_s2t = nce_backward(&x, &att.ctx_s2t, &neg_s, k, w_s2t, &mut dx, &mut dctx_s, &mut dneg_s);
    let loss_t2s = nce_backward(&y, &att.ctx_t2s, &neg_t, k, w_t2s, &mut dy, &mut dctx_t, &mut dneg_t);
    let loss_disagree = agreement_loss(&att.map)?;

    let mut dp_s2t = Matrix::zeros(ns, nt);
    let mut dp_t2s = Matrix::zeros(nt, ns);
    let alpha = hp.agreement_weight();
    if alpha != 0.0 {
        let coef = scale * F::lit(2.0 * alpha);
        for i in 0..ns {
            for j in 0..nt {
                let g = coef * (att.map.s2t.get(i, j) - att.map.t2s.get(j, i));
                dp_s2t.row_mut(i)[j] += g;
                dp_t2s.row_mut(j)[i] -= g;
            }
        }
    }

    attention_backward(&x, &y, &att.map.s2t, &mut dp_s2t, &dctx_s, &mut dx, &mut dy);
    attention_backward(&y, &x, &att.map.t2s, &mut dp_t2s, &dctx_t, &mut dy, &mut dx);

    let one = F::one();
    for i in 0..ns {
        unpool_at(&pair.src_ids, i, hp.win, dx.row(i), one, &mut grads.src);
    }
    for j in 0..nt {
        unpool_at(&pair.tgt_ids, j, hp.win, dy.row(j), one, &mut grads.tgt);
    }
    if hp.use_s2t {
        for (r, nr) in negatives.s2t.iter().enumerate() {
            unpool_at(nr.ids, nr.pos, hp.win, dneg_s.row(r), one, &mut grads.src);
        }
    }
    if hp.use_t2s {
        for (r, nr) in negatives.t2s.iter().enumerate() {
            unpool_at(nr.ids, nr.pos, hp.win, dneg_t.row(r), one, &mut grads.tgt);
        }
    }

    Ok(LossBreakdown::combine(loss_s2t, loss_t2s, loss_disagree, hp))
}

/// Loss and full gradient tables for a single pair.
pub fn backward<F: Real>(
    pair: &SentencePair,
    params: &EmbeddingTable<F>,
    hp: &Hyperparams,
    negatives: &Negatives<'_>,
) -> Result<(LossBreakdown, Gradients<F>)> {
    let mut grads = Gradients::for_table(params);
    let loss = accumulate_gradients(pair, params, hp, negatives, F::one(), &mut grads)?;
    Ok((loss, grads))
}
