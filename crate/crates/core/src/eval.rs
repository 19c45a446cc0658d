//! Alignment metrics against gold links and nearest-neighbour queries over
//! exported embeddings.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::corpus::GoldAlignment;
use crate::decode::AlignmentSet;
use crate::error::{Error, Result};
use crate::model::Matrix;
use crate::train::{Checkpoint, ExportSide};

/// Micro-averaged scores with the counts they were pooled from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub aer: f64,
    pub predicted: usize,
    pub sure: usize,
    pub predicted_sure: usize,
    pub predicted_possible: usize,
    pub pairs: usize,
}

impl AlignmentMetrics {
    fn from_counts(predicted: usize, sure: usize, predicted_sure: usize, predicted_possible: usize, pairs: usize) -> Self {
        let precision = if predicted == 0 {
            1.0
        } else {
            predicted_possible as f64 / predicted as f64
        };
        let recall = if sure == 0 { 1.0 } else { predicted_sure as f64 / sure as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let aer = if predicted + sure == 0 {
            0.0
        } else {
            1.0 - (predicted_sure + predicted_possible) as f64 / (predicted + sure) as f64
        };
        AlignmentMetrics {
            precision,
            recall,
            f1,
            aer,
            predicted,
            sure,
            predicted_sure,
            predicted_possible,
            pairs,
        }
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "pairs      {}", self.pairs)?;
        writeln!(w, "precision  {:.4}", self.precision)?;
        writeln!(w, "recall     {:.4}", self.recall)?;
        writeln!(w, "f1         {:.4}", self.f1)?;
        writeln!(w, "aer        {:.4}", self.aer)?;
        writeln!(
            w,
            "|A| {}  |S| {}  |A&S| {}  |A&P| {}",
            self.predicted, self.sure, self.predicted_sure, self.predicted_possible
        )
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric\tvalue")?;
        writeln!(w, "precision\t{}", self.precision)?;
        writeln!(w, "recall\t{}", self.recall)?;
        writeln!(w, "f1\t{}", self.f1)?;
        writeln!(w, "aer\t{}", self.aer)?;
        writeln!(w, "predicted\t{}", self.predicted)?;
        writeln!(w, "sure\t{}", self.sure)?;
        writeln!(w, "predicted_sure\t{}", self.predicted_sure)?;
        writeln!(w, "predicted_possible\t{}", self.predicted_possible)?;
        writeln!(w, "pairs\t{}", self.pairs)
    }
}

/// Scores `predicted[i]` against the gold entry with pair index `i`. Pairs
/// without gold are skipped; gold for a pair that was not predicted is an
/// error.
pub fn compute_metrics(predicted: &[AlignmentSet], gold: &[GoldAlignment]) -> Result<AlignmentMetrics> {
    let missing: Vec<usize> = gold
        .iter()
        .map(|g| g.pair_index)
        .filter(|&i| i >= predicted.len())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IndexMismatch(missing));
    }
    let by_pair: BTreeMap<usize, &GoldAlignment> = gold.iter().map(|g| (g.pair_index, g)).collect();
    let (mut a, mut s, mut a_s, mut a_p) = (0, 0, 0, 0);
    for (&idx, g) in &by_pair {
        let pred = &predicted[idx];
        a += pred.len();
        s += g.sure.len();
        a_s += pred.links().intersection(&g.sure).count();
        a_p += pred.links().intersection(&g.possible).count();
    }
    Ok(AlignmentMetrics::from_counts(a, s, a_s, a_p, by_pair.len()))
}

/// A token list with one vector per token.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub tokens: Vec<String>,
    pub vectors: Matrix<f32>,
}

impl Embeddings {
    /// Same token naming as the word2vec export.
    pub fn from_checkpoint(ckpt: &Checkpoint, side: ExportSide) -> Self {
        let p = &ckpt.params;
        match side {
            ExportSide::Src => Embeddings {
                tokens: ckpt.src_vocab.tokens().to_vec(),
                vectors: p.src.clone(),
            },
            ExportSide::Tgt => Embeddings {
                tokens: ckpt.tgt_vocab.tokens().to_vec(),
                vectors: p.tgt.clone(),
            },
            ExportSide::Joint => {
                let tokens = ckpt
                    .src_vocab
                    .tokens()
                    .iter()
                    .map(|t| format!("src:{t}"))
                    .chain(ckpt.tgt_vocab.tokens().iter().map(|t| format!("tgt:{t}")))
                    .collect();
                let mut data = p.src.data().to_vec();
                data.extend_from_slice(p.tgt.data());
                Embeddings {
                    tokens,
                    vectors: Matrix::from_vec(p.src.rows() + p.tgt.rows(), p.dim(), data),
                }
            }
        }
    }

    /// Reads the word2vec text format written by the exporter.
    pub fn read_word2vec<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| Error::io("<embeddings>", e))?,
            None => return Err(Error::EmptyInput),
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(1, format!("bad header {header:?}")));
        let (count, dim) = match fields.as_slice() {
            [c, d] => (parse(c)?, parse(d)?),
            _ => return Err(Error::format(1, "header must be `count dim`")),
        };
        let mut tokens = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (n, line) in lines {
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let tok = parts.next().unwrap_or_default();
            let before = data.len();
            for p in parts {
                data.push(p.parse::<f32>().map_err(|_| Error::format(n + 1, format!("bad value {p:?}")))?);
            }
            if data.len() - before != dim {
                return Err(Error::format(n + 1, format!("expected {dim} values")));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() != count {
            return Err(Error::format(1, format!("header says {count} rows, found {}", tokens.len())));
        }
        Ok(Embeddings {
            tokens,
            vectors: Matrix::from_vec(count, dim, data),
        })
    }

    /// The `n` closest tokens to `query` by Euclidean distance, the query
    /// itself excluded, ties broken by row order. `prefix` restricts the
    /// candidates, e.g. to `tgt:` in a joint space.
    pub fn nearest(&self, query: &str, prefix: Option<&str>, n: usize) -> Result<Vec<(String, f64)>> {
        let q = self
            .tokens
            .iter()
            .position(|t| t == query)
            .ok_or_else(|| Error::UnknownToken(query.to_string()))?;
        let qv = self.vectors.row(q);
        let mut scored: Vec<(f64, usize)> = self
            .tokens
            .iter()
            .enumerate()
            .filter(|&(i, t)| i != q && prefix.is_none_or(|p| t.starts_with(p)))
            .map(|(i, _)| {
                let d2: f64 = self
                    .vectors
                    .row(i)
                    .iter()
                    .zip(qv)
                    .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                    .sum();
                (d2.sqrt(), i)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(scored
            .into_iter()
            .take(n)
            .map(|(d, i)| (self.tokens[i].clone(), d))
            .collect())
    }
}
