//! Independent test oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use lightalign::corpus::{GoldAlignment, Link, SentencePair};
use lightalign::decode::AlignmentSet;
use lightalign::model::{backward, EmbeddingTable, Hyperparams, Matrix, NegRef, Negatives};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Vector = Vec<f64>;

fn row(m: &Matrix<f64>, id: u32) -> Vector {
    m.row(id as usize).to_vec()
}

/// Straight transcription of the pooled representation, no shared helpers.
fn pooled(table: &Matrix<f64>, ids: &[u32], pos: usize, win: usize) -> Vector {
    let d = table.cols();
    let half = (win as isize - 1) / 2;
    let mut sum = vec![0.0; d];
    for off in -half..=half {
        let j = pos as isize + off;
        if j < 0 || j >= ids.len() as isize {
            continue; // zero padding
        }
        for (s, v) in sum.iter_mut().zip(row(table, ids[j as usize])) {
            *s += v;
        }
    }
    let own = row(table, ids[pos]);
    sum.iter().zip(own).map(|(s, o)| s / win as f64 + o).collect()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigma(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax(v: &[f64]) -> Vector {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vector = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Attention rows and contexts of `queries` over `keys`.
fn attend(queries: &[Vector], keys: &[Vector]) -> (Vec<Vector>, Vec<Vector>) {
    let mut probs = Vec::new();
    let mut ctxs = Vec::new();
    for q in queries {
        let p = softmax(&keys.iter().map(|k| inner(k, q)).collect::<Vector>());
        let mut c = vec![0.0; q.len()];
        for (pt, k) in p.iter().zip(keys) {
            for (ci, ki) in c.iter_mut().zip(k) {
                *ci += pt * ki;
            }
        }
        probs.push(p);
        ctxs.push(c);
    }
    (probs, ctxs)
}

fn nce(queries: &[Vector], ctxs: &[Vector], negs: &[Vector], k: usize) -> f64 {
    let mut total = 0.0;
    for (i, (q, c)) in queries.iter().zip(ctxs).enumerate() {
        let pos = sigma(inner(q, c));
        let neg: f64 = (0..k).map(|j| sigma(inner(&negs[i * k + j], c))).sum();
        total += -(pos / (pos + neg)).ln();
    }
    total / queries.len() as f64
}

/// Reference objective: (loss_s2t, loss_t2s, loss_disagree, total).
pub fn reference_loss(
    pair: &SentencePair,
    params: &EmbeddingTable<f64>,
    hp: &Hyperparams,
    negs: &Negatives<'_>,
) -> (f64, f64, f64, f64) {
    let x: Vec<Vector> = (0..pair.src_ids.len())
        .map(|i| pooled(&params.src, &pair.src_ids, i, hp.win))
        .collect();
    let y: Vec<Vector> = (0..pair.tgt_ids.len())
        .map(|j| pooled(&params.tgt, &pair.tgt_ids, j, hp.win))
        .collect();
    let (a_st, c_st) = attend(&x, &y);
    let (a_ts, c_ts) = attend(&y, &x);
    let ns: Vec<Vector> = negs.s2t.iter().map(|r| pooled(&params.src, r.ids, r.pos, hp.win)).collect();
    let nt: Vec<Vector> = negs.t2s.iter().map(|r| pooled(&params.tgt, r.ids, r.pos, hp.win)).collect();
    let l_st = nce(&x, &c_st, &ns, negs.k);
    let l_ts = nce(&y, &c_ts, &nt, negs.k);
    let mut dis = 0.0;
    for i in 0..x.len() {
        for j in 0..y.len() {
            dis += (a_st[i][j] - a_ts[j][i]).powi(2);
        }
    }
    let total = if hp.use_s2t { l_st } else { 0.0 }
        + if hp.use_t2s { l_ts } else { 0.0 }
        + if hp.use_agreement { hp.alpha * dis } else { 0.0 };
    (l_st, l_ts, dis, total)
}

/// A random tiny problem: one pair, a few foreign sentences for negatives.
pub struct TinyInstance {
    pub pair: SentencePair,
    pub others_src: Vec<Vec<u32>>,
    pub others_tgt: Vec<Vec<u32>>,
    pub params: EmbeddingTable<f64>,
    pub hp: Hyperparams,
    pub neg_s: Vec<(usize, usize)>,
    pub neg_t: Vec<(usize, usize)>,
}

impl TinyInstance {
    /// `ablation` bit 0: s2t, bit 1: t2s, bit 2: agreement.
    pub fn random(seed: u64, ablation: u8) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (vs, vt) = (7usize, 6usize);
        let d = rng.random_range(1..=6);
        let win = if rng.random_bool(0.5) { 3 } else { 1 };
        let k = rng.random_range(1..=3);
        let ls = rng.random_range(1..=4);
        let lt = rng.random_range(1..=4);
        let pair = SentencePair {
            src_ids: (0..ls).map(|_| rng.random_range(0..vs as u32)).collect(),
            tgt_ids: (0..lt).map(|_| rng.random_range(0..vt as u32)).collect(),
            pair_index: 0,
        };
        let others_src: Vec<Vec<u32>> = (0..2)
            .map(|_| (0..rng.random_range(1..=4)).map(|_| rng.random_range(0..vs as u32)).collect())
            .collect();
        let others_tgt: Vec<Vec<u32>> = (0..2)
            .map(|_| (0..rng.random_range(1..=4)).map(|_| rng.random_range(0..vt as u32)).collect())
            .collect();
        // sentence 0 is the pair itself, 1.. are the foreign ones
        let mut pick = |lens: &[usize], n: usize| -> Vec<(usize, usize)> {
            (0..n)
                .map(|_| {
                    let s = rng.random_range(0..lens.len());
                    (s, rng.random_range(0..lens[s]))
                })
                .collect()
        };
        let src_lens: Vec<usize> = std::iter::once(ls).chain(others_src.iter().map(Vec::len)).collect();
        let tgt_lens: Vec<usize> = std::iter::once(lt).chain(others_tgt.iter().map(Vec::len)).collect();
        let neg_s = pick(&src_lens, ls * k);
        let neg_t = pick(&tgt_lens, lt * k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let mut table = |rows: usize| {
            Matrix::from_vec(rows, d, (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let params = EmbeddingTable { src: table(vs), tgt: table(vt) };
        let hp = Hyperparams {
            dim: d,
            win,
            k,
            alpha: 0.1 + 0.9 * (seed % 10) as f64 / 10.0,
            use_s2t: ablation & 1 != 0,
            use_t2s: ablation & 2 != 0,
            use_agreement: ablation & 4 != 0,
        };
        TinyInstance { pair, others_src, others_tgt, params, hp, neg_s, neg_t }
    }

    pub fn negatives(&self) -> Negatives<'_> {
        let src = |s: usize| if s == 0 { &self.pair.src_ids[..] } else { &self.others_src[s - 1][..] };
        let tgt = |s: usize| if s == 0 { &self.pair.tgt_ids[..] } else { &self.others_tgt[s - 1][..] };
        Negatives {
            k: self.hp.k,
            s2t: self.neg_s.iter().map(|&(s, p)| NegRef { ids: src(s), pos: p }).collect(),
            t2s: self.neg_t.iter().map(|&(s, p)| NegRef { ids: tgt(s), pos: p }).collect(),
        }
    }
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub loss_mismatch: f64,
}

/// Relative error with a floor so that exact zeros on both sides count as
/// agreement.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Central differences of the reference objective against the analytic
/// gradient of the library.
pub fn gradient_check(inst: &TinyInstance, h: f64) -> GradCheck {
    let negs = inst.negatives();
    let (lib_loss, grads) = backward(&inst.pair, &inst.params, &inst.hp, &negs).unwrap();
    let reference = reference_loss(&inst.pair, &inst.params, &inst.hp, &negs).3;
    let mut out = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        loss_mismatch: (lib_loss.total - reference).abs(),
    };
    for side in 0..2 {
        let rows = if side == 0 { inst.params.src.rows() } else { inst.params.tgt.rows() };
        for r in 0..rows {
            for c in 0..inst.hp.dim {
                let eval = |delta: f64| {
                    let mut p = inst.params.clone();
                    let m = if side == 0 { &mut p.src } else { &mut p.tgt };
                    m.row_mut(r)[c] += delta;
                    reference_loss(&inst.pair, &p, &inst.hp, &negs).3
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let g = if side == 0 { &grads.src } else { &grads.tgt };
                let analytic = g.row(r as u32)[c];
                out.max_rel_err = out.max_rel_err.max(rel_err(analytic, numeric));
                out.max_abs_err = out.max_abs_err.max((analytic - numeric).abs());
            }
        }
    }
    out
}

/// Set-arithmetic AER/precision/recall over pooled counts.
pub fn brute_force_metrics(
    predicted: &[BTreeSet<Link>],
    sure: &[BTreeSet<Link>],
    possible: &[BTreeSet<Link>],
) -> (f64, f64, f64, f64) {
    let (mut a, mut s, mut a_s, mut a_p) = (0usize, 0usize, 0usize, 0usize);
    for ((pa, ps), pp) in predicted.iter().zip(sure).zip(possible) {
        a += pa.len();
        s += ps.len();
        a_s += pa.iter().filter(|l| ps.contains(l)).count();
        a_p += pa.iter().filter(|l| pp.contains(l) || ps.contains(l)).count();
    }
    let precision = if a == 0 { 1.0 } else { a_p as f64 / a as f64 };
    let recall = if s == 0 { 1.0 } else { a_s as f64 / s as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let aer = if a + s == 0 { 0.0 } else { 1.0 - (a_s + a_p) as f64 / (a + s) as f64 };
    (precision, recall, f1, aer)
}

pub fn gold_from(pair_index: usize, sure: &BTreeSet<Link>, possible: &BTreeSet<Link>) -> GoldAlignment {
    let mut g = GoldAlignment::new(pair_index);
    for &l in possible {
        g.add_possible(l);
    }
    for &l in sure {
        g.add_sure(l);
    }
    g
}

pub fn set_of(src_len: usize, tgt_len: usize, links: &BTreeSet<Link>) -> AlignmentSet {
    AlignmentSet::from_links(src_len, tgt_len, links.iter().copied()).unwrap()
}

/// Grow-diag over a dense grid, recomputing coverage on every check.
pub fn reference_grow_diag(s: usize, t: usize, a: &BTreeSet<Link>, b: &BTreeSet<Link>) -> BTreeSet<Link> {
    let mut grid = vec![vec![false; t]; s];
    for &(i, j) in a.intersection(b) {
        grid[i][j] = true;
    }
    let in_union = |i: usize, j: usize| a.contains(&(i, j)) || b.contains(&(i, j));
    let row_used = |g: &[Vec<bool>], i: usize| g[i].iter().any(|&x| x);
    let col_used = |g: &[Vec<bool>], j: usize| g.iter().any(|r| r[j]);
    let steps: [(i64, i64); 8] = [(-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)];
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..s {
            for j in 0..t {
                if !grid[i][j] {
                    continue;
                }
                for (di, dj) in steps {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= s as i64 || nj >= t as i64 {
                        continue;
                    }
                    let (ni, nj) = (ni as usize, nj as usize);
                    if !grid[ni][nj] && in_union(ni, nj) && (!row_used(&grid, ni) || !col_used(&grid, nj)) {
                        grid[ni][nj] = true;
                        changed = true;
                    }
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for (i, row) in grid.iter().enumerate() {
        for (j, &on) in row.iter().enumerate() {
            if on {
                out.insert((i, j));
            }
        }
    }
    out
}
