//! Training loop, negative sampling, optimizers, checkpoints and
//! embedding export.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{batch_iter, vocab_fingerprint, Corpus, GoldAlignment, SentencePair, Vocabulary};
use crate::decode::{align_pairs, spread_to_lines, AlignMode, Reading};
use crate::error::{Error, Result};
use crate::eval::compute_metrics;
use crate::model::{
    accumulate_gradients, derive_seed, EmbeddingTable, Gradients, Hyperparams, LossBreakdown,
    Matrix, NegRef, Negatives,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Where negatives for a query position are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegScope {
    /// Other positions of the same sentence.
    Sentence,
    /// Any position of any sentence in the batch except the query itself.
    Batch,
}

impl FromStr for NegScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(NegScope::Sentence),
            "batch" => Ok(NegScope::Batch),
            other => Err(Error::Config(format!("unknown negative scope {other:?}"))),
        }
    }
}

impl fmt::Display for NegScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegScope::Sentence => "sentence",
            NegScope::Batch => "batch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hp: Hyperparams,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub neg_scope: NegScope,
    pub threads: usize,
    /// Keep the parameters of the epoch with the lowest dev AER.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hp: Hyperparams::default(),
            lr: 1e-3,
            epochs: 3,
            batch_size: 256,
            seed: 1,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            neg_scope: NegScope::Batch,
            threads: 1,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.threads < 1 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Negatives for one batch member as `(batch member, position)` pairs,
/// `k` per query position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledNegatives {
    pub k: usize,
    pub s2t: Vec<(usize, usize)>,
    pub t2s: Vec<(usize, usize)>,
}

impl SampledNegatives {
    pub fn resolve<'a>(&self, batch: &[&'a SentencePair]) -> Negatives<'a> {
        Negatives {
            k: self.k,
            s2t: self
                .s2t
                .iter()
                .map(|&(m, pos)| NegRef { ids: &batch[m].src_ids, pos })
                .collect(),
            t2s: self
                .t2s
                .iter()
                .map(|&(m, pos)| NegRef { ids: &batch[m].tgt_ids, pos })
                .collect(),
        }
    }
}

/// Sentence lengths of one side of a batch with their prefix offsets.
struct SideIndex {
    lens: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl SideIndex {
    fn new(lens: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(lens.len());
        let mut total = 0;
        for &l in &lens {
            offsets.push(total);
            total += l;
        }
        SideIndex { lens, offsets, total }
    }

    fn locate(&self, flat: usize) -> (usize, usize) {
        let member = self.offsets.partition_point(|&o| o <= flat) - 1;
        (member, flat - self.offsets[member])
    }

    fn sample<R: Rng>(
        &self,
        member: usize,
        k: usize,
        scope: NegScope,
        rng: &mut R,
        out: &mut Vec<(usize, usize)>,
    ) {
        let len = self.lens[member];
        for i in 0..len {
            for _ in 0..k {
                let pick = if scope == NegScope::Sentence && len >= 2 {
                    let r = rng.random_range(0..len - 1);
                    (member, if r >= i { r + 1 } else { r })
                } else if self.total >= 2 {
                    let own = self.offsets[member] + i;
                    let r = rng.random_range(0..self.total - 1);
                    self.locate(if r >= own { r + 1 } else { r })
                } else {
                    // a single one-token pair: nothing else to contrast with
                    (member, i)
                };
                out.push(pick);
            }
        }
    }
}

/// Draws `k` negatives per query position, for both directions, for batch
/// member `member`.
pub fn sample_negatives<R: Rng>(
    batch: &[&SentencePair],
    member: usize,
    k: usize,
    scope: NegScope,
    rng: &mut R,
) -> SampledNegatives {
    let src = SideIndex::new(batch.iter().map(|p| p.src_len()).collect());
    let tgt = SideIndex::new(batch.iter().map(|p| p.tgt_len()).collect());
    sample_with(&src, &tgt, member, k, scope, rng)
}

fn sample_with<R: Rng>(
    src: &SideIndex,
    tgt: &SideIndex,
    member: usize,
    k: usize,
    scope: NegScope,
    rng: &mut R,
) -> SampledNegatives {
    let mut s2t = Vec::with_capacity(src.lens[member] * k);
    let mut t2s = Vec::with_capacity(tgt.lens[member] * k);
    src.sample(member, k, scope, rng, &mut s2t);
    tgt.sample(member, k, scope, rng, &mut t2s);
    SampledNegatives { k, s2t, t2s }
}

enum Optimizer {
    Sgd {
        lr: f32,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: i32,
        m: EmbeddingTable<f32>,
        v: EmbeddingTable<f32>,
    },
}

impl Optimizer {
    fn new(cfg: &TrainConfig, params: &EmbeddingTable<f32>) -> Self {
        let zeros = || EmbeddingTable {
            src: Matrix::zeros(params.src.rows(), params.dim()),
            tgt: Matrix::zeros(params.tgt.rows(), params.dim()),
        };
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: cfg.lr as f32 },
            OptimizerKind::Adam => Optimizer::Adam {
                lr: cfg.lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.eps,
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    /// Updates only the rows present in `grads`; moments of other rows are
    /// left as they are.
    fn step(&mut self, params: &mut EmbeddingTable<f32>, grads: &Gradients<f32>) {
        match self {
            Optimizer::Sgd { lr } => {
                for (table, g) in [(&mut params.src, &grads.src), (&mut params.tgt, &grads.tgt)] {
                    for &id in g.touched_rows() {
                        for (p, &gi) in table.row_mut(id as usize).iter_mut().zip(g.row(id)) {
                            *p -= *lr * gi;
                        }
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let b1 = *beta1 as f32;
                let b2 = *beta2 as f32;
                let lr_t = (*lr * (1.0 - beta2.powi(*step)).sqrt() / (1.0 - beta1.powi(*step))) as f32;
                let eps_t = (*eps * (1.0 - beta2.powi(*step)).sqrt()) as f32;
                let sides = [
                    (&mut params.src, &mut m.src, &mut v.src, &grads.src),
                    (&mut params.tgt, &mut m.tgt, &mut v.tgt, &grads.tgt),
                ];
                for (table, m, v, g) in sides {
                    for &id in g.touched_rows() {
                        let id = id as usize;
                        let p = table.row_mut(id);
                        let m = m.row_mut(id);
                        let v = v.row_mut(id);
                        for (((p, m), v), &gi) in p.iter_mut().zip(m).zip(v).zip(g.row(id as u32)) {
                            *m = b1 * *m + (1.0 - b1) * gi;
                            *v = b2 * *v + (1.0 - b2) * gi * gi;
                            *p -= lr_t * *m / (v.sqrt() + eps_t);
                        }
                    }
                }
            }
        }
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SLUA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EmbeddingTable<f32>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub config: TrainConfig,
    pub epoch: usize,
    pub format_version: u32,
}

type Le = LittleEndian;

fn write_vocab<W: Write>(w: &mut W, v: &Vocabulary) -> std::io::Result<()> {
    w.write_u64::<Le>(v.min_count())?;
    w.write_u64::<Le>(v.len() as u64)?;
    for (tok, &count) in v.tokens().iter().zip(v.counts()) {
        w.write_u32::<Le>(tok.len() as u32)?;
        w.write_all(tok.as_bytes())?;
        w.write_u64::<Le>(count)?;
    }
    Ok(())
}

fn read_vocab<R: Read>(r: &mut R) -> Result<Vocabulary> {
    let min_count = r.read_u64::<Le>().map_err(ckpt_io)?;
    let n = r.read_u64::<Le>().map_err(ckpt_io)?;
    let mut entries = Vec::with_capacity(n.min(1 << 24) as usize);
    for _ in 0..n {
        let len = r.read_u32::<Le>().map_err(ckpt_io)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(ckpt_io)?;
        let tok = String::from_utf8(buf).map_err(|_| Error::Checkpoint("token is not UTF-8".into()))?;
        let count = r.read_u64::<Le>().map_err(ckpt_io)?;
        entries.push((tok, count));
    }
    Vocabulary::from_entries(entries, min_count)
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix<f32>) -> std::io::Result<()> {
    w.write_u64::<Le>(m.rows() as u64)?;
    w.write_u64::<Le>(m.cols() as u64)?;
    for &v in m.data() {
        w.write_f32::<Le>(v)?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix<f32>> {
    let rows = r.read_u64::<Le>().map_err(ckpt_io)? as usize;
    let cols = r.read_u64::<Le>().map_err(ckpt_io)? as usize;
    let mut data = vec![0f32; rows * cols];
    r.read_f32_into::<Le>(&mut data).map_err(ckpt_io)?;
    Ok(Matrix::from_vec(rows, cols, data))
}

fn ckpt_io(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

fn write_config<W: Write>(w: &mut W, c: &TrainConfig) -> std::io::Result<()> {
    let hp = &c.hp;
    w.write_u64::<Le>(hp.dim as u64)?;
    w.write_u64::<Le>(hp.win as u64)?;
    w.write_u64::<Le>(hp.k as u64)?;
    w.write_f64::<Le>(hp.alpha)?;
    let flags = u8::from(hp.use_s2t) | u8::from(hp.use_t2s) << 1 | u8::from(hp.use_agreement) << 2;
    w.write_u8(flags)?;
    w.write_f64::<Le>(c.lr)?;
    w.write_u64::<Le>(c.epochs as u64)?;
    w.write_u64::<Le>(c.batch_size as u64)?;
    w.write_u64::<Le>(c.seed)?;
    w.write_u8(match c.optimizer {
        OptimizerKind::Sgd => 0,
        OptimizerKind::Adam => 1,
    })?;
    w.write_f64::<Le>(c.beta1)?;
    w.write_f64::<Le>(c.beta2)?;
    w.write_f64::<Le>(c.eps)?;
    w.write_u8(match c.neg_scope {
        NegScope::Sentence => 0,
        NegScope::Batch => 1,
    })?;
    w.write_u64::<Le>(c.threads as u64)?;
    w.write_u8(u8::from(c.keep_best))
}

fn read_config<R: Read>(r: &mut R) -> Result<TrainConfig> {
    let u = |r: &mut R| r.read_u64::<Le>().map(|v| v as usize).map_err(ckpt_io);
    let f = |r: &mut R| r.read_f64::<Le>().map_err(ckpt_io);
    let b = |r: &mut R| r.read_u8().map_err(ckpt_io);
    let dim = u(r)?;
    let win = u(r)?;
    let k = u(r)?;
    let alpha = f(r)?;
    let flags = b(r)?;
    let hp = Hyperparams {
        dim,
        win,
        k,
        alpha,
        use_s2t: flags & 1 != 0,
        use_t2s: flags & 2 != 0,
        use_agreement: flags & 4 != 0,
    };
    let lr = f(r)?;
    let epochs = u(r)?;
    let batch_size = u(r)?;
    let seed = r.read_u64::<Le>().map_err(ckpt_io)?;
    let optimizer = match b(r)? {
        0 => OptimizerKind::Sgd,
        1 => OptimizerKind::Adam,
        o => return Err(Error::Checkpoint(format!("unknown optimizer tag {o}"))),
    };
    let beta1 = f(r)?;
    let beta2 = f(r)?;
    let eps = f(r)?;
    let neg_scope = match b(r)? {
        0 => NegScope::Sentence,
        1 => NegScope::Batch,
        o => return Err(Error::Checkpoint(format!("unknown negative scope tag {o}"))),
    };
    let threads = u(r)?;
    let keep_best = b(r)? != 0;
    Ok(TrainConfig {
        hp,
        lr,
        epochs,
        batch_size,
        seed,
        optimizer,
        beta1,
        beta2,
        eps,
        neg_scope,
        threads,
        keep_best,
    })
}

impl Checkpoint {
    pub fn fingerprint(&self) -> u64 {
        vocab_fingerprint(&self.src_vocab, &self.tgt_vocab)
    }

    /// Layout (little-endian): magic `SLUA`, u32 format version, u64
    /// vocabulary fingerprint, u64 epoch, training config, source and
    /// target vocabularies, source and target matrices (row-major f32).
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let inner = |w: &mut W| -> std::io::Result<()> {
            w.write_all(CHECKPOINT_MAGIC)?;
            w.write_u32::<Le>(self.format_version)?;
            w.write_u64::<Le>(self.fingerprint())?;
            w.write_u64::<Le>(self.epoch as u64)?;
            write_config(w, &self.config)?;
            write_vocab(w, &self.src_vocab)?;
            write_vocab(w, &self.tgt_vocab)?;
            write_matrix(w, &self.params.src)?;
            write_matrix(w, &self.params.tgt)?;
            w.flush()
        };
        inner(&mut w).map_err(ckpt_io)
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(ckpt_io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let format_version = r.read_u32::<Le>().map_err(ckpt_io)?;
        if format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {format_version}")));
        }
        let stored = r.read_u64::<Le>().map_err(ckpt_io)?;
        let epoch = r.read_u64::<Le>().map_err(ckpt_io)? as usize;
        let config = read_config(&mut r)?;
        let src_vocab = read_vocab(&mut r)?;
        let tgt_vocab = read_vocab(&mut r)?;
        let found = vocab_fingerprint(&src_vocab, &tgt_vocab);
        if found != stored {
            return Err(Error::VocabMismatch {
                expected: stored,
                found,
            });
        }
        let src = read_matrix(&mut r)?;
        let tgt = read_matrix(&mut r)?;
        if src.rows() != src_vocab.len() || tgt.rows() != tgt_vocab.len() || src.cols() != tgt.cols() {
            return Err(Error::Checkpoint("matrix shapes do not match vocabularies".into()));
        }
        Ok(Checkpoint {
            params: EmbeddingTable { src, tgt },
            src_vocab,
            tgt_vocab,
            config,
            epoch,
            format_version,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(crate::corpus::open(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub dev_aer: Option<f64>,
}

/// `epoch loss_s2t loss_t2s loss_disagree total [dev_aer]`, tab separated,
/// with a header line.
pub fn write_metrics_tsv<W: Write>(mut w: W, log: &[EpochRecord]) -> std::io::Result<()> {
    let with_dev = log.iter().any(|r| r.dev_aer.is_some());
    write!(w, "epoch\tloss_s2t\tloss_t2s\tloss_disagree\ttotal")?;
    if with_dev {
        write!(w, "\tdev_aer")?;
    }
    writeln!(w)?;
    for r in log {
        write!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.epoch, r.loss.loss_s2t, r.loss.loss_t2s, r.loss.loss_disagree, r.loss.total
        )?;
        if with_dev {
            match r.dev_aer {
                Some(a) => write!(w, "\t{a}")?,
                None => write!(w, "\t")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Per-worker gradient buffers, reused across batches.
struct Worker {
    grads: Gradients<f32>,
}

fn run_members(
    params: &EmbeddingTable<f32>,
    hp: &Hyperparams,
    batch: &[&SentencePair],
    members: std::ops::Range<usize>,
    negatives: &[SampledNegatives],
    scale: f32,
    grads: &mut Gradients<f32>,
) -> Result<Vec<LossBreakdown>> {
    members
        .map(|m| {
            let negs = negatives[m].resolve(batch);
            accumulate_gradients(batch[m], params, hp, &negs, scale, grads)
        })
        .collect()
}

/// Trains from xavier-initialized tables.
pub fn train(corpus: &Corpus, dev_gold: Option<&[GoldAlignment]>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(corpus, dev_gold, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    corpus: &Corpus,
    dev_gold: Option<&[GoldAlignment]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(gold) = dev_gold {
        corpus.validate_gold(gold)?;
    }
    let hp = cfg.hp;
    let mut params =
        EmbeddingTable::<f32>::xavier(corpus.src_vocab.len(), corpus.tgt_vocab.len(), hp.dim, cfg.seed);
    let mut optimizer = Optimizer::new(cfg, &params);
    let mut merged = Gradients::for_table(&params);
    let mut workers: Vec<Worker> = (0..cfg.threads)
        .map(|_| Worker {
            grads: Gradients::for_table(&params),
        })
        .collect();
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?,
        )
    } else {
        None
    };

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, EmbeddingTable<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let mut neg_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
        neg_rng.set_stream(epoch as u64);
        let mut epoch_loss = LossBreakdown::default();

        for batch in batch_iter(&corpus.pairs, cfg.batch_size, cfg.seed, epoch as u64) {
            let src = SideIndex::new(batch.iter().map(|p| p.src_len()).collect());
            let tgt = SideIndex::new(batch.iter().map(|p| p.tgt_len()).collect());
            let negatives: Vec<SampledNegatives> = (0..batch.len())
                .map(|m| sample_with(&src, &tgt, m, hp.k, cfg.neg_scope, &mut neg_rng))
                .collect();
            let scale = 1.0 / batch.len() as f32;

            merged.clear();
            let losses: Vec<LossBreakdown> = match &pool {
                None => run_members(&params, &hp, &batch, 0..batch.len(), &negatives, scale, &mut merged)?,
                Some(pool) => {
                    let chunk = batch.len().div_ceil(cfg.threads);
                    let parts: Vec<Result<Vec<LossBreakdown>>> = pool.install(|| {
                        workers
                            .par_iter_mut()
                            .enumerate()
                            .map(|(w, worker)| {
                                worker.grads.clear();
                                let lo = (w * chunk).min(batch.len());
                                let hi = ((w + 1) * chunk).min(batch.len());
                                run_members(&params, &hp, &batch, lo..hi, &negatives, scale, &mut worker.grads)
                            })
                            .collect()
                    });
                    let mut all = Vec::with_capacity(batch.len());
                    for part in parts {
                        all.extend(part?);
                    }
                    for worker in &workers {
                        merged.merge_from(&worker.grads);
                    }
                    all
                }
            };

            for (pair, loss) in batch.iter().zip(&losses) {
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        pair_index: pair.pair_index,
                        epoch: epoch + 1,
                    });
                }
                epoch_loss.add(loss);
            }

            optimizer.step(&mut params, &merged);
            if cfg!(debug_assertions) {
                for &id in merged.src.touched_rows() {
                    debug_assert!(params.src.row(id as usize).iter().all(|v| v.is_finite()));
                }
                for &id in merged.tgt.touched_rows() {
                    debug_assert!(params.tgt.row(id as usize).iter().all(|v| v.is_finite()));
                }
            }
        }

        let mean = epoch_loss.scaled(1.0 / corpus.pairs.len() as f64);
        let dev_aer = match dev_gold {
            Some(gold) => {
                let sets = align_pairs(&params, &corpus.pairs, hp.win, AlignMode::GrowDiag, Reading::Column, cfg.threads)?;
                let predicted = spread_to_lines(sets, &corpus.pairs, corpus.lines);
                let aer = compute_metrics(&predicted, gold)?.aer;
                if cfg.keep_best && best.as_ref().is_none_or(|(b, _, _)| aer < *b) {
                    best = Some((aer, epoch + 1, params.clone()));
                }
                Some(aer)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: mean,
            dev_aer,
        };
        log::info!(
            "epoch {} loss_s2t {:.5} loss_t2s {:.5} loss_disagree {:.5} total {:.5}{}",
            record.epoch,
            mean.loss_s2t,
            mean.loss_t2s,
            mean.loss_disagree,
            mean.total,
            dev_aer.map(|a| format!(" dev_aer {a:.4}")).unwrap_or_default()
        );
        on_epoch(&record);
        log.push(record);
    }

    let (params, epoch) = match best {
        Some((_, epoch, params)) => (params, epoch),
        None => (params, cfg.epochs),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params,
            src_vocab: corpus.src_vocab.clone(),
            tgt_vocab: corpus.tgt_vocab.clone(),
            config: *cfg,
            epoch,
            format_version: FORMAT_VERSION,
        },
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportSide {
    Src,
    Tgt,
    Joint,
}

impl FromStr for ExportSide {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "src" => Ok(ExportSide::Src),
            "tgt" => Ok(ExportSide::Tgt),
            "joint" => Ok(ExportSide::Joint),
            other => Err(Error::Config(format!("unknown side {other:?}"))),
        }
    }
}

/// word2vec text format: `count dim`, then `token v1 ... vd` per row. Joint
/// export prefixes tokens with `src:` and `tgt:`.
pub fn export_embeddings<W: Write>(ckpt: &Checkpoint, side: ExportSide, mut w: W) -> std::io::Result<()> {
    let d = ckpt.params.dim();
    let blocks: Vec<(&str, &Vocabulary, &Matrix<f32>)> = match side {
        ExportSide::Src => vec![("", &ckpt.src_vocab, &ckpt.params.src)],
        ExportSide::Tgt => vec![("", &ckpt.tgt_vocab, &ckpt.params.tgt)],
        ExportSide::Joint => vec![
            ("src:", &ckpt.src_vocab, &ckpt.params.src),
            ("tgt:", &ckpt.tgt_vocab, &ckpt.params.tgt),
        ],
    };
    let count: usize = blocks.iter().map(|b| b.1.len()).sum();
    writeln!(w, "{count} {d}")?;
    for (prefix, vocab, table) in blocks {
        for (id, tok) in vocab.tokens().iter().enumerate() {
            write!(w, "{prefix}{tok}")?;
            for v in table.row(id) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()
}
