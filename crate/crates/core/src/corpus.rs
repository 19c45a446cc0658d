//! Parallel text, vocabularies, gold alignments and batching.
//!
//! Input is assumed to be tokenized already; tokens are split on
//! whitespace and nothing else.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `(source position, target position)`, 0-based.
pub type Link = (usize, usize);

pub const UNK_ID: u32 = 0;
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
    min_count: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from tokenized lines.
    ///
    /// Ids are assigned by descending frequency; equal frequencies keep the
    /// order of first occurrence. Tokens seen fewer than `min_count` times
    /// fold into the UNK entry, whose count records how many tokens did so.
    pub fn build<I, L, S>(lines: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_count < 1 {
            return Err(Error::Config("min_count must be >= 1".into()));
        }
        // token -> (count, first occurrence)
        let mut seen: HashMap<String, (u64, usize)> = HashMap::new();
        let mut position = 0usize;
        for line in lines {
            for tok in line {
                let tok = tok.as_ref();
                let entry = seen.entry(tok.to_owned()).or_insert((0, position));
                entry.0 += 1;
                position += 1;
            }
        }
        if position == 0 {
            return Err(Error::EmptyInput);
        }

        let mut unk_count = seen.remove(UNK_TOKEN).map_or(0, |(c, _)| c);
        let mut entries: Vec<(String, u64, usize)> = seen
            .into_iter()
            .map(|(tok, (count, first))| (tok, count, first))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

        let mut id_to_token = vec![UNK_TOKEN.to_owned()];
        let mut counts = vec![0];
        let mut token_to_id = HashMap::new();
        for (tok, count, _) in entries {
            if count < min_count {
                unk_count += count;
                continue;
            }
            token_to_id.insert(tok.clone(), id_to_token.len() as u32);
            id_to_token.push(tok);
            counts.push(count);
        }
        counts[0] = unk_count;

        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
            min_count,
        })
    }

    /// Reassembles a vocabulary from its id-ordered entries (id 0 is UNK).
    pub fn from_entries(entries: Vec<(String, u64)>, min_count: u64) -> Result<Self> {
        if entries.is_empty() || entries[0].0 != UNK_TOKEN {
            return Err(Error::Checkpoint("vocabulary must start with UNK".into()));
        }
        let mut token_to_id = HashMap::with_capacity(entries.len());
        let mut id_to_token = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (id, (tok, count)) in entries.into_iter().enumerate() {
            if id > 0 && token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::Checkpoint(format!("duplicate token {tok:?}")));
            }
            id_to_token.push(tok);
            counts.push(count);
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&id| self.token(id)).collect()
    }

    /// Writes `token<TAB>id<TAB>count`, one line per id.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (id, (tok, count)) in self.id_to_token.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{tok}\t{id}\t{count}")?;
        }
        Ok(())
    }

    fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update((self.id_to_token.len() as u64).to_le_bytes());
        for tok in &self.id_to_token {
            hasher.update((tok.len() as u64).to_le_bytes());
            hasher.update(tok.as_bytes());
        }
    }
}

/// Fingerprint of a (source, target) vocabulary pair.
pub fn vocab_fingerprint(src: &Vocabulary, tgt: &Vocabulary) -> u64 {
    let mut hasher = Sha256::new();
    src.hash_into(&mut hasher);
    tgt.hash_into(&mut hasher);
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src_ids: Vec<u32>,
    pub tgt_ids: Vec<u32>,
    pub pair_index: usize,
}

impl SentencePair {
    pub fn src_len(&self) -> usize {
        self.src_ids.len()
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt_ids.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldAlignment {
    pub pair_index: usize,
    pub sure: BTreeSet<Link>,
    pub possible: BTreeSet<Link>,
}

impl GoldAlignment {
    pub fn new(pair_index: usize) -> Self {
        GoldAlignment {
            pair_index,
            ..Default::default()
        }
    }

    pub fn add_sure(&mut self, link: Link) {
        self.sure.insert(link);
        self.possible.insert(link);
    }

    pub fn add_possible(&mut self, link: Link) {
        self.possible.insert(link);
    }
}

/// Tokenized but not yet encoded parallel text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelText {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
    /// 0-based input lines that produced no pair, ascending.
    pub dropped: Vec<usize>,
}

impl ParallelText {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of input lines, dropped ones included.
    pub fn line_count(&self) -> usize {
        self.pairs.len() + self.dropped.len()
    }

    /// 0-based input line of every pair.
    pub fn line_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.pairs.len());
        let mut dropped = self.dropped.iter().peekable();
        let mut line = 0;
        while out.len() < self.pairs.len() {
            if dropped.next_if_eq(&&line).is_none() {
                out.push(line);
            }
            line += 1;
        }
        out
    }

    pub fn lowercase(&mut self) {
        for (s, t) in &mut self.pairs {
            for tok in s.iter_mut().chain(t.iter_mut()) {
                *tok = tok.to_lowercase();
            }
        }
    }

    fn push_line(&mut self, line_no: usize, src: &str, tgt: &str) {
        let s: Vec<String> = src.split_whitespace().map(str::to_owned).collect();
        let t: Vec<String> = tgt.split_whitespace().map(str::to_owned).collect();
        if s.is_empty() || t.is_empty() {
            log::warn!("line {line_no}: empty side, pair dropped");
            self.dropped.push(line_no - 1);
            return;
        }
        self.pairs.push((s, t));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParallelSource {
    /// One `source ||| target` pair per line.
    Pipes(PathBuf),
    /// Line-aligned source and target files.
    TwoFiles(PathBuf, PathBuf),
}

pub fn read_pipes<R: BufRead>(reader: R) -> Result<ParallelText> {
    let mut text = ParallelText::default();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::format(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            log::warn!("line {line_no}: blank line, pair dropped");
            text.dropped.push(n);
            continue;
        }
        let mut parts = line.split("|||");
        let src = parts.next().unwrap_or_default();
        let tgt = parts
            .next()
            .ok_or_else(|| Error::format(line_no, "missing `|||` delimiter"))?;
        if parts.next().is_some() {
            return Err(Error::format(line_no, "more than one `|||` delimiter"));
        }
        text.push_line(line_no, src, tgt);
    }
    Ok(text)
}

pub fn read_two<R1: BufRead, R2: BufRead>(src: R1, tgt: R2) -> Result<ParallelText> {
    let src: Vec<String> = src
        .lines()
        .enumerate()
        .map(|(n, l)| l.map_err(|e| Error::format(n + 1, e.to_string())))
        .collect::<Result<_>>()?;
    let tgt: Vec<String> = tgt
        .lines()
        .enumerate()
        .map(|(n, l)| l.map_err(|e| Error::format(n + 1, e.to_string())))
        .collect::<Result<_>>()?;
    if src.len() != tgt.len() {
        return Err(Error::LineCountMismatch {
            src: src.len(),
            tgt: tgt.len(),
        });
    }
    let mut text = ParallelText::default();
    for (n, (s, t)) in src.iter().zip(&tgt).enumerate() {
        text.push_line(n + 1, s, t);
    }
    Ok(text)
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn load_parallel(source: &ParallelSource) -> Result<ParallelText> {
    match source {
        ParallelSource::Pipes(path) => read_pipes(open(path)?),
        ParallelSource::TwoFiles(s, t) => read_two(open(s)?, open(t)?),
    }
}

/// Encoded parallel corpus together with the vocabularies used to encode it.
/// `pair_index` is the 0-based input line, so it skips dropped lines.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub pairs: Vec<SentencePair>,
    /// Input line count, dropped lines included.
    pub lines: usize,
}

impl Corpus {
    /// Builds both vocabularies from `text` and encodes it.
    pub fn build(text: &ParallelText, min_count: u64) -> Result<Self> {
        let src_vocab = Vocabulary::build(text.pairs.iter().map(|(s, _)| s), min_count)?;
        let tgt_vocab = Vocabulary::build(text.pairs.iter().map(|(_, t)| t), min_count)?;
        Ok(Self::encode_with(text, src_vocab, tgt_vocab))
    }

    /// Encodes `text` with existing vocabularies; unknown tokens become UNK.
    pub fn encode_with(text: &ParallelText, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Self {
        let pairs = text
            .pairs
            .iter()
            .zip(text.line_indices())
            .map(|((s, t), pair_index)| SentencePair {
                src_ids: src_vocab.encode(s),
                tgt_ids: tgt_vocab.encode(t),
                pair_index,
            })
            .collect();
        Corpus {
            src_vocab,
            tgt_vocab,
            pairs,
            lines: text.line_count(),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        vocab_fingerprint(&self.src_vocab, &self.tgt_vocab)
    }

    pub fn pair_at_line(&self, line: usize) -> Option<&SentencePair> {
        self.pairs
            .binary_search_by_key(&line, |p| p.pair_index)
            .ok()
            .map(|k| &self.pairs[k])
    }

    /// Checks that every gold link falls inside its sentence pair. Gold for
    /// a dropped line must be empty.
    pub fn validate_gold(&self, gold: &[GoldAlignment]) -> Result<()> {
        let mut bad = Vec::new();
        for g in gold {
            let ok = match self.pair_at_line(g.pair_index) {
                Some(p) => g.possible.iter().all(|&(i, j)| i < p.src_len() && j < p.tgt_len()),
                None => g.pair_index < self.lines && g.possible.is_empty(),
            };
            if !ok {
                bad.push(g.pair_index);
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::IndexMismatch(bad))
        }
    }
}

/// Reads NAACL shared-task alignments: `sentence src tgt [S|P] [confidence]`.
///
/// With `one_indexed`, sentence numbers and positions are shifted to 0-based
/// and links touching position 0 (the NULL word in that convention) are
/// dropped.
pub fn read_gold_naacl<R: BufRead>(reader: R, one_indexed: bool) -> Result<Vec<GoldAlignment>> {
    let mut by_pair: BTreeMap<usize, GoldAlignment> = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::format(line_no, e.to_string()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if !(3..=5).contains(&fields.len()) {
            return Err(Error::format(
                line_no,
                format!("expected 3 to 5 fields, found {}", fields.len()),
            ));
        }
        let mut nums = [0usize; 3];
        for (slot, field) in nums.iter_mut().zip(&fields[..3]) {
            *slot = field
                .parse()
                .map_err(|_| Error::format(line_no, format!("not a non-negative integer: {field:?}")))?;
        }
        let sure = match fields.get(3) {
            None | Some(&"S") => true,
            Some(&"P") => false,
            Some(other) => {
                return Err(Error::format(line_no, format!("marker must be S or P, found {other:?}")))
            }
        };
        if let Some(conf) = fields.get(4) {
            conf.parse::<f64>()
                .map_err(|_| Error::format(line_no, format!("bad confidence {conf:?}")))?;
        }
        let [mut sent, mut i, mut j] = nums;
        if one_indexed {
            if sent == 0 {
                return Err(Error::format(line_no, "sentence numbers start at 1"));
            }
            if i == 0 || j == 0 {
                continue;
            }
            sent -= 1;
            i -= 1;
            j -= 1;
        }
        let gold = by_pair
            .entry(sent)
            .or_insert_with(|| GoldAlignment::new(sent));
        if sure {
            gold.add_sure((i, j));
        } else {
            gold.add_possible((i, j));
        }
    }
    Ok(by_pair.into_values().collect())
}

pub fn load_gold_naacl(path: &Path, one_indexed: bool) -> Result<Vec<GoldAlignment>> {
    read_gold_naacl(open(path)?, one_indexed)
}

/// Permutation of `0..n` for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Shuffled batches over one epoch. The last batch may be short.
pub fn batch_iter(
    corpus: &[SentencePair],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> impl Iterator<Item = Vec<&SentencePair>> + '_ {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let order = epoch_order(corpus.len(), seed, epoch);
    let n_batches = corpus.len().div_ceil(batch_size);
    (0..n_batches).map(move |b| {
        order[b * batch_size..((b + 1) * batch_size).min(order.len())]
            .iter()
            .map(|&i| &corpus[i])
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn vocab_frequency_order() {
        let v = Vocabulary::build([toks("a b a")], 1).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "a", "b"]);
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("b"), 2);
        assert_eq!(v.count(1), 2);
    }

    #[test]
    fn vocab_min_count_cut() {
        let v = Vocabulary::build([toks("a b a")], 2).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("b"), UNK_ID);
        assert_eq!(v.count(UNK_ID), 1);
    }

    #[test]
    fn vocab_ties_keep_first_occurrence() {
        // y appears first, then x; both 5 times, z once.
        let lines = [toks("y x y z x"), toks("x y x y"), toks("x y")];
        let v = Vocabulary::build(lines, 1).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "y", "x", "z"]);
    }

    #[test]
    fn vocab_empty_input() {
        let empty: Vec<Vec<&str>> = vec![];
        assert!(matches!(Vocabulary::build(empty, 1), Err(Error::EmptyInput)));
        assert!(matches!(
            Vocabulary::build([Vec::<&str>::new()], 1),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn vocab_dump_lines() {
        let v = Vocabulary::build([toks("a b a")], 1).unwrap();
        let mut out = Vec::new();
        v.write_dump(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "<unk>\t0\t0\na\t1\t2\nb\t2\t1\n");
    }

    #[test]
    fn pipes_basic() {
        let t = read_pipes("le chat ||| the cat\n".as_bytes()).unwrap();
        assert_eq!(
            t.pairs,
            vec![(vec!["le".to_string(), "chat".into()], vec!["the".to_string(), "cat".into()])]
        );
    }

    #[test]
    fn pipes_without_spaces() {
        let t = read_pipes("a b|||c".as_bytes()).unwrap();
        assert_eq!(t.pairs[0].0, vec!["a", "b"]);
        assert_eq!(t.pairs[0].1, vec!["c"]);
    }

    #[test]
    fn pipes_missing_delimiter_names_line() {
        let err = read_pipes("a ||| b\nno delimiter here\n".as_bytes()).unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pipes_empty_side_dropped() {
        let t = read_pipes("a ||| b\n ||| c\nd ||| \ne ||| f\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dropped, vec![1, 2]);
        let c = Corpus::build(&t, 1).unwrap();
        // indices follow input lines
        assert_eq!(c.pairs[1].pair_index, 3);
        assert_eq!(c.lines, 4);
        assert_eq!(c.src_vocab.decode(&c.pairs[1].src_ids), vec!["e"]);
        assert_eq!(c.pair_at_line(3).unwrap().pair_index, 3);
        assert!(c.pair_at_line(2).is_none());
    }

    #[test]
    fn gold_on_dropped_line() {
        let t = read_pipes("a ||| b\n\nc ||| d\n".as_bytes()).unwrap();
        let c = Corpus::build(&t, 1).unwrap();
        let mut g = GoldAlignment::new(1);
        assert!(c.validate_gold(std::slice::from_ref(&g)).is_ok());
        g.add_sure((0, 0));
        assert!(matches!(c.validate_gold(&[g]), Err(Error::IndexMismatch(v)) if v == vec![1]));
    }

    #[test]
    fn two_files_mismatch() {
        let err = read_two("a\nb\n".as_bytes(), "x\ny\nz\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line count mismatch"));
    }

    #[test]
    fn two_files_pairs() {
        let t = read_two("a b\n\nc\n".as_bytes(), "x\ny\nz w\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.pairs[1].1, vec!["z", "w"]);
    }

    #[test]
    fn gold_one_indexed() {
        let g = read_gold_naacl("1 1 1 S\n1 2 3 P\n".as_bytes(), true).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].pair_index, 0);
        assert_eq!(g[0].sure, BTreeSet::from([(0, 0)]));
        assert_eq!(g[0].possible, BTreeSet::from([(0, 0), (1, 2)]));
    }

    #[test]
    fn gold_missing_marker_is_sure() {
        let g = read_gold_naacl("4 2 2\n".as_bytes(), false).unwrap();
        assert_eq!(g[0].pair_index, 4);
        assert!(g[0].sure.contains(&(2, 2)));
        assert!(g[0].possible.contains(&(2, 2)));
    }

    #[test]
    fn gold_empty_file() {
        assert!(read_gold_naacl("".as_bytes(), true).unwrap().is_empty());
    }

    #[test]
    fn gold_errors_name_line() {
        for bad in ["1 1 1 S\n1 x 1 S\n", "1 1 1 S\n1 1 1 Q\n"] {
            match read_gold_naacl(bad.as_bytes(), true).unwrap_err() {
                Error::Format { line, .. } => assert_eq!(line, 2),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn gold_null_links_skipped() {
        let g = read_gold_naacl("1 0 3 S\n1 2 2 S\n".as_bytes(), true).unwrap();
        assert_eq!(g[0].sure, BTreeSet::from([(1, 1)]));
    }

    #[test]
    fn gold_bounds_validation() {
        let t = read_pipes("a b ||| c\n".as_bytes()).unwrap();
        let c = Corpus::build(&t, 1).unwrap();
        let mut g = GoldAlignment::new(0);
        g.add_sure((1, 0));
        assert!(c.validate_gold(&[g.clone()]).is_ok());
        g.add_possible((0, 1));
        assert!(matches!(c.validate_gold(&[g]), Err(Error::IndexMismatch(v)) if v == vec![0]));
    }

    fn toy_pairs(n: usize) -> Vec<SentencePair> {
        (0..n)
            .map(|i| SentencePair {
                src_ids: vec![1],
                tgt_ids: vec![1],
                pair_index: i,
            })
            .collect()
    }

    #[test]
    fn batch_sizes() {
        let pairs = toy_pairs(5);
        let sizes: Vec<usize> = batch_iter(&pairs, 2, 0, 0).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn batch_determinism_and_seed_dependence() {
        let pairs = toy_pairs(100);
        let run = |seed, epoch| -> Vec<usize> {
            batch_iter(&pairs, 7, seed, epoch)
                .flatten()
                .map(|p| p.pair_index)
                .collect()
        };
        assert_eq!(run(1, 0), run(1, 0));
        assert_ne!(run(1, 0), run(2, 0));
        assert_ne!(run(1, 0), run(1, 1));
        let mut visited = run(3, 4);
        visited.sort_unstable();
        assert_eq!(visited, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn fingerprint_depends_on_tokens() {
        let a = Vocabulary::build([toks("a b")], 1).unwrap();
        let b = Vocabulary::build([toks("a c")], 1).unwrap();
        assert_eq!(vocab_fingerprint(&a, &b), vocab_fingerprint(&a, &b));
        assert_ne!(vocab_fingerprint(&a, &b), vocab_fingerprint(&b, &a));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn counts_cover_all_tokens(
                lines in prop::collection::vec(prop::collection::vec(0u8..12, 1..8), 1..20),
                min_count in 1u64..4,
            ) {
                let lines: Vec<Vec<String>> = lines
                    .iter()
                    .map(|l| l.iter().map(|t| format!("w{t}")).collect())
                    .collect();
                let total: usize = lines.iter().map(Vec::len).sum();
                let v = Vocabulary::build(&lines, min_count).unwrap();
                prop_assert_eq!(v.counts().iter().sum::<u64>(), total as u64);
                for id in 1..v.len() as u32 {
                    prop_assert_eq!(v.id(v.token(id)), id);
                    prop_assert!(v.count(id) >= min_count);
                }
                let ids: Vec<u32> = (1..v.len() as u32).collect();
                prop_assert_eq!(v.encode(&v.decode(&ids)), ids);
            }

            #[test]
            fn epoch_visits_each_pair_once(n in 1usize..60, bs in 1usize..9, seed: u64, epoch in 0u64..5) {
                let pairs = toy_pairs(n);
                let mut seen: Vec<usize> = batch_iter(&pairs, bs, seed, epoch)
                    .flatten()
                    .map(|p| p.pair_index)
                    .collect();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
