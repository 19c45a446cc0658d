//! Command-line front end: `train`, `align`, `eval`, `nn`, `dump-attn`,
//! `export` and `bench`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{load_gold_naacl, load_parallel, Corpus, ParallelSource, ParallelText};
use crate::decode::{align_corpus, AlignMode, AlignmentSet, Reading};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, Embeddings};
use crate::model::{pair_attention, Hyperparams};
use crate::synthetic::{dictionary_corpus, DictionarySpec};
use crate::train::{
    export_embeddings, train_with, write_metrics_tsv, Checkpoint, ExportSide, NegScope, OptimizerKind, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "lightalign", version, about = "Lightweight unsupervised word alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train embeddings on a parallel corpus and write a checkpoint.
    Train(TrainArgs),
    /// Write Pharaoh-format alignments for a parallel corpus.
    Align(AlignArgs),
    /// Score Pharaoh-format predictions against NAACL-format gold links.
    Eval(EvalArgs),
    /// Nearest neighbours of a token in embedding space.
    Nn(NnArgs),
    /// Dump attention maps as TSV matrices.
    DumpAttn(DumpAttnArgs),
    /// Export embeddings in word2vec text format.
    Export(ExportArgs),
    /// Measure training throughput on a generated corpus.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// One `source ||| target` pair per line.
    #[arg(long, conflicts_with_all = ["src", "tgt"])]
    pub bitext: Option<PathBuf>,
    /// Source side, line-aligned with --tgt.
    #[arg(long, requires = "tgt")]
    pub src: Option<PathBuf>,
    #[arg(long, requires = "src")]
    pub tgt: Option<PathBuf>,
    #[arg(long)]
    pub lowercase: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// TOML file with the same keys as the echoed effective config; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub input: InputArgs,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch metrics TSV, defaults to `<out>.metrics.tsv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// NAACL gold links for dev AER.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub one_indexed: bool,
    #[arg(long)]
    pub keep_best: bool,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub win: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub neg_scope: Option<NegScope>,
    #[arg(long)]
    pub no_s2t: bool,
    #[arg(long)]
    pub no_t2s: bool,
    #[arg(long)]
    pub no_agreement: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub min_count: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "grow-diag")]
    pub mode: AlignMode,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write 1-based positions.
    #[arg(long)]
    pub one_indexed: bool,
    /// Read each direction row-wise instead of column-wise.
    #[arg(long)]
    pub decode_rowwise: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Pharaoh predictions, one line per input pair; stdin when absent.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gold: PathBuf,
    /// Both files use 1-based positions and sentence numbers.
    #[arg(long)]
    pub one_indexed: bool,
    /// `metric<TAB>value` instead of a table.
    #[arg(long)]
    pub tsv: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SideFilter {
    Src,
    Tgt,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct NnArgs {
    /// Checkpoint; its joint space is searched.
    #[arg(long, conflicts_with = "embeddings", required_unless_present = "embeddings")]
    pub model: Option<PathBuf>,
    /// word2vec text file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub query: String,
    #[arg(long, value_enum, default_value = "both")]
    pub side: SideFilter,
    #[arg(short, long, default_value_t = 5)]
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MapDirection {
    S2t,
    T2s,
}

#[derive(Debug, Clone, Args)]
pub struct DumpAttnArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "s2t")]
    pub direction: MapDirection,
    /// Only the first N pairs.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "joint")]
    pub side: ExportSide,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 4096)]
    pub pairs: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Flat config file layout; every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub bitext: Option<PathBuf>,
    pub src: Option<PathBuf>,
    pub tgt: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub one_indexed: Option<bool>,
    pub lowercase: Option<bool>,
    pub min_count: Option<u64>,
    pub keep_best: Option<bool>,
    pub dim: Option<usize>,
    pub win: Option<usize>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub use_s2t: Option<bool>,
    pub use_t2s: Option<bool>,
    pub use_agreement: Option<bool>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub optimizer: Option<OptimizerKind>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub neg_scope: Option<NegScope>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Everything a training run needs, after config and flags are merged.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: ParallelSource,
    pub out: PathBuf,
    pub metrics: PathBuf,
    pub gold: Option<PathBuf>,
    pub one_indexed: bool,
    pub lowercase: bool,
    pub min_count: u64,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn resolve(args: &TrainArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let flag_input = args.input.bitext.is_some() || args.input.src.is_some();
        let input = if flag_input {
            input_source(&args.input)?
        } else {
            input_source(&InputArgs {
                bitext: file.bitext.clone(),
                src: file.src.clone(),
                tgt: file.tgt.clone(),
                lowercase: false,
            })?
        };
        let out = args
            .out
            .clone()
            .or(file.out)
            .ok_or_else(|| usage_error("train", "--out is required"))?;
        let metrics = args
            .metrics
            .clone()
            .or(file.metrics)
            .unwrap_or_else(|| PathBuf::from(format!("{}.metrics.tsv", out.display())));
        let d = TrainConfig::default();
        let dh = d.hp;
        // a set boolean flag always wins; otherwise the file, then the default
        let flag = |set: bool, value: bool, file: Option<bool>, default: bool| {
            if set {
                value
            } else {
                file.unwrap_or(default)
            }
        };
        let hp = Hyperparams {
            dim: args.dim.or(file.dim).unwrap_or(dh.dim),
            win: args.win.or(file.win).unwrap_or(dh.win),
            k: args.k.or(file.k).unwrap_or(dh.k),
            alpha: args.alpha.or(file.alpha).unwrap_or(dh.alpha),
            use_s2t: flag(args.no_s2t, false, file.use_s2t, dh.use_s2t),
            use_t2s: flag(args.no_t2s, false, file.use_t2s, dh.use_t2s),
            use_agreement: flag(args.no_agreement, false, file.use_agreement, dh.use_agreement),
        };
        let train = TrainConfig {
            hp,
            lr: args.lr.or(file.lr).unwrap_or(d.lr),
            epochs: args.epochs.or(file.epochs).unwrap_or(d.epochs),
            batch_size: args.batch.or(file.batch).unwrap_or(d.batch_size),
            seed: args.seed.or(file.seed).unwrap_or(d.seed),
            optimizer: args.optimizer.or(file.optimizer).unwrap_or(d.optimizer),
            beta1: file.beta1.unwrap_or(d.beta1),
            beta2: file.beta2.unwrap_or(d.beta2),
            eps: file.eps.unwrap_or(d.eps),
            neg_scope: args.neg_scope.or(file.neg_scope).unwrap_or(d.neg_scope),
            threads: args.threads.or(file.threads).unwrap_or(d.threads),
            keep_best: flag(args.keep_best, true, file.keep_best, d.keep_best),
        };
        train.validate()?;
        let run = RunConfig {
            input,
            out,
            metrics,
            gold: args.gold.clone().or(file.gold),
            one_indexed: flag(args.one_indexed, true, file.one_indexed, false),
            lowercase: flag(args.input.lowercase, true, file.lowercase, false),
            min_count: args.min_count.or(file.min_count).unwrap_or(1),
            train,
        };
        if run.min_count < 1 {
            return Err(Error::Config("min-count must be >= 1".into()));
        }
        Ok(run)
    }

    /// Fully populated config file that reproduces this run.
    pub fn to_file_config(&self) -> FileConfig {
        let (bitext, src, tgt) = match &self.input {
            ParallelSource::Pipes(p) => (Some(p.clone()), None, None),
            ParallelSource::TwoFiles(s, t) => (None, Some(s.clone()), Some(t.clone())),
        };
        let t = &self.train;
        FileConfig {
            bitext,
            src,
            tgt,
            out: Some(self.out.clone()),
            metrics: Some(self.metrics.clone()),
            gold: self.gold.clone(),
            one_indexed: Some(self.one_indexed),
            lowercase: Some(self.lowercase),
            min_count: Some(self.min_count),
            keep_best: Some(t.keep_best),
            dim: Some(t.hp.dim),
            win: Some(t.hp.win),
            k: Some(t.hp.k),
            alpha: Some(t.hp.alpha),
            use_s2t: Some(t.hp.use_s2t),
            use_t2s: Some(t.hp.use_t2s),
            use_agreement: Some(t.hp.use_agreement),
            epochs: Some(t.epochs),
            batch: Some(t.batch_size),
            lr: Some(t.lr),
            seed: Some(t.seed),
            optimizer: Some(t.optimizer),
            beta1: Some(t.beta1),
            beta2: Some(t.beta2),
            eps: Some(t.eps),
            neg_scope: Some(t.neg_scope),
            threads: Some(t.threads),
        }
    }
}

fn usage_error(sub: &str, msg: &str) -> Error {
    let mut cmd = Cli::command();
    cmd.build();
    let usage = cmd
        .find_subcommand_mut(sub)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default();
    Error::Config(format!("{msg}\n{usage}"))
}

fn input_source(input: &InputArgs) -> Result<ParallelSource> {
    match (&input.bitext, &input.src, &input.tgt) {
        (Some(b), None, None) => Ok(ParallelSource::Pipes(b.clone())),
        (None, Some(s), Some(t)) => Ok(ParallelSource::TwoFiles(s.clone(), t.clone())),
        _ => Err(usage_error("train", "give either --bitext or both --src and --tgt")),
    }
}

fn check_readable(path: &Path) -> Result<()> {
    File::open(path).map(drop).map_err(|e| Error::io(path, e))
}

fn check_writable(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::io(
            path,
            io::Error::new(io::ErrorKind::NotFound, "parent directory does not exist"),
        )),
        _ => Ok(()),
    }
}

fn check_source(source: &ParallelSource) -> Result<()> {
    match source {
        ParallelSource::Pipes(p) => check_readable(p),
        ParallelSource::TwoFiles(s, t) => check_readable(s).and(check_readable(t)),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn out_err(e: io::Error) -> Error {
    Error::io("<output>", e)
}

fn load_text(input: &InputArgs) -> Result<ParallelText> {
    let source = input_source(input)?;
    check_source(&source)?;
    let mut text = load_parallel(&source)?;
    if input.lowercase {
        text.lowercase();
    }
    Ok(text)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run = RunConfig::resolve(args)?;
    check_source(&run.input)?;
    if let Some(g) = &run.gold {
        check_readable(g)?;
    }
    check_writable(&run.out)?;
    check_writable(&run.metrics)?;
    let echo = toml::to_string(&run.to_file_config()).map_err(|e| Error::Config(e.to_string()))?;
    log::info!("effective config:\n{echo}");

    let mut text = load_parallel(&run.input)?;
    if run.lowercase {
        text.lowercase();
    }
    let corpus = Corpus::build(&text, run.min_count)?;
    log::info!(
        "{} pairs, vocabularies {} / {}",
        corpus.pairs.len(),
        corpus.src_vocab.len(),
        corpus.tgt_vocab.len()
    );
    let gold = match &run.gold {
        Some(path) => Some(load_gold_naacl(path, run.one_indexed)?),
        None => None,
    };
    let outcome = train_with(&corpus, gold.as_deref(), &run.train, |_| {})?;
    outcome.checkpoint.save(&run.out)?;
    let file = File::create(&run.metrics).map_err(|e| Error::io(&run.metrics, e))?;
    write_metrics_tsv(BufWriter::new(file), &outcome.log).map_err(|e| Error::io(&run.metrics, e))?;
    log::info!("wrote {} (epoch {})", run.out.display(), outcome.checkpoint.epoch);
    Ok(())
}

/// Alignments for a parallel text, one set per input line.
pub fn align_text(
    ckpt: &Checkpoint,
    text: &ParallelText,
    mode: AlignMode,
    reading: Reading,
    threads: usize,
) -> Result<Vec<AlignmentSet>> {
    let corpus = Corpus::encode_with(text, ckpt.src_vocab.clone(), ckpt.tgt_vocab.clone());
    align_corpus(ckpt, &corpus, mode, reading, threads)
}

fn cmd_align(args: &AlignArgs) -> Result<()> {
    check_readable(&args.model)?;
    if let Some(out) = &args.out {
        check_writable(out)?;
    }
    log::info!("{args:?}");
    let ckpt = Checkpoint::load(&args.model)?;
    let text = load_text(&args.input)?;
    let reading = if args.decode_rowwise { Reading::Row } else { Reading::Column };
    let sets = align_text(&ckpt, &text, args.mode, reading, args.threads)?;
    let mut w = open_output(args.out.as_deref())?;
    for set in &sets {
        writeln!(w, "{}", set.to_pharaoh(args.one_indexed)).map_err(out_err)?;
    }
    w.flush().map_err(out_err)
}

fn read_predictions<R: BufRead>(reader: R, one_indexed: bool) -> Result<Vec<AlignmentSet>> {
    reader
        .lines()
        .enumerate()
        .map(|(n, line)| {
            let line = line.map_err(|e| Error::format(n + 1, e.to_string()))?;
            AlignmentSet::parse_pharaoh(&line, one_indexed, n + 1)
        })
        .collect()
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    check_readable(&args.gold)?;
    if let Some(p) = &args.pred {
        check_readable(p)?;
    }
    let predicted = match &args.pred {
        Some(p) if p.as_os_str() != "-" => {
            read_predictions(BufReader::new(File::open(p).map_err(|e| Error::io(p, e))?), args.one_indexed)?
        }
        _ => read_predictions(io::stdin().lock(), args.one_indexed)?,
    };
    let gold = load_gold_naacl(&args.gold, args.one_indexed)?;
    let metrics = compute_metrics(&predicted, &gold)?;
    let mut w = open_output(args.out.as_deref())?;
    if args.tsv {
        metrics.write_tsv(&mut w).map_err(out_err)?;
    } else {
        metrics.write_table(&mut w).map_err(out_err)?;
    }
    w.flush().map_err(out_err)
}

fn cmd_nn(args: &NnArgs) -> Result<()> {
    let emb = match (&args.model, &args.embeddings) {
        (Some(m), _) => Embeddings::from_checkpoint(&Checkpoint::load(m)?, ExportSide::Joint),
        (None, Some(e)) => Embeddings::read_word2vec(BufReader::new(File::open(e).map_err(|err| Error::io(e, err))?))?,
        (None, None) => return Err(usage_error("nn", "give --model or --embeddings")),
    };
    // bare tokens are looked up as given, then with a side prefix
    let query = [args.query.clone(), format!("src:{}", args.query), format!("tgt:{}", args.query)]
        .into_iter()
        .find(|q| emb.tokens.iter().any(|t| t == q))
        .ok_or_else(|| Error::UnknownToken(args.query.clone()))?;
    let prefix = match args.side {
        SideFilter::Src => Some("src:"),
        SideFilter::Tgt => Some("tgt:"),
        SideFilter::Both => None,
    };
    let mut w = open_output(None)?;
    for (tok, dist) in emb.nearest(&query, prefix, args.n)? {
        writeln!(w, "{tok}\t{dist:.6}").map_err(out_err)?;
    }
    w.flush().map_err(out_err)
}

fn cmd_dump_attn(args: &DumpAttnArgs) -> Result<()> {
    check_readable(&args.model)?;
    if let Some(out) = &args.out {
        check_writable(out)?;
    }
    let ckpt = Checkpoint::load(&args.model)?;
    let text = load_text(&args.input)?;
    let corpus = Corpus::encode_with(&text, ckpt.src_vocab.clone(), ckpt.tgt_vocab.clone());
    let mut w = open_output(args.out.as_deref())?;
    let limit = args.limit.unwrap_or(usize::MAX);
    for (pair, (src, tgt)) in corpus.pairs.iter().zip(&text.pairs).take(limit) {
        let att = pair_attention(&ckpt.params, &pair.src_ids, &pair.tgt_ids, ckpt.config.hp.win).map;
        let (map, rows, cols, name) = match args.direction {
            MapDirection::S2t => (&att.s2t, src, tgt, "s2t"),
            MapDirection::T2s => (&att.t2s, tgt, src, "t2s"),
        };
        let mut block = format!("# pair {} {name}\n", pair.pair_index);
        for c in cols {
            block.push('\t');
            block.push_str(c);
        }
        block.push('\n');
        for (r, tok) in rows.iter().enumerate() {
            block.push_str(tok);
            for v in map.row(r) {
                block.push_str(&format!("\t{v}"));
            }
            block.push('\n');
        }
        writeln!(w, "{block}").map_err(out_err)?;
    }
    w.flush().map_err(out_err)
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    check_readable(&args.model)?;
    if let Some(out) = &args.out {
        check_writable(out)?;
    }
    let ckpt = Checkpoint::load(&args.model)?;
    let w = open_output(args.out.as_deref())?;
    export_embeddings(&ckpt, args.side, w).map_err(out_err)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub pairs: usize,
    pub threads: usize,
    pub seconds: f64,
    pub pairs_per_min_per_thread: f64,
}

/// Corpus used by the benchmark: a 5000-word dictionary with sentences of
/// 10 to 30 tokens.
pub fn bench_corpus(pairs: usize, seed: u64) -> Result<Corpus> {
    let data = dictionary_corpus(&DictionarySpec {
        vocab: 5000,
        pairs,
        min_len: 10,
        max_len: 30,
        seed,
    });
    Corpus::build(&data.text, 1)
}

/// One epoch at d=256, win=3, k=5, batch 256.
pub fn bench(corpus: &Corpus, threads: usize, seed: u64) -> Result<BenchReport> {
    let cfg = TrainConfig {
        epochs: 1,
        threads,
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    train_with(corpus, None, &cfg, |_| {})?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        pairs: corpus.pairs.len(),
        threads,
        seconds,
        pairs_per_min_per_thread: corpus.pairs.len() as f64 / (seconds / 60.0) / threads as f64,
    })
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    if args.threads < 1 || args.pairs < 1 {
        return Err(Error::Config("--pairs and --threads must be >= 1".into()));
    }
    let corpus = bench_corpus(args.pairs, args.seed)?;
    let r = bench(&corpus, args.threads, args.seed)?;
    println!(
        "{} pairs in {:.2}s on {} thread(s): {:.0} pairs/min/thread",
        r.pairs, r.seconds, r.threads, r.pairs_per_min_per_thread
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Align(a) => cmd_align(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Nn(a) => cmd_nn(a),
        Command::DumpAttn(a) => cmd_dump_attn(a),
        Command::Export(a) => cmd_export(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
