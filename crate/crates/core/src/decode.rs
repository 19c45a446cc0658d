//! Hard alignments from attention maps, and symmetrization.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Link, SentencePair};
use crate::error::{Error, Result};
use crate::model::{pair_attention, AttentionMap, EmbeddingTable, Real};
use crate::train::Checkpoint;

/// Links between a source and a target sentence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AlignmentSet {
    links: BTreeSet<Link>,
    src_len: usize,
    tgt_len: usize,
}

impl AlignmentSet {
    pub fn new(src_len: usize, tgt_len: usize) -> Self {
        AlignmentSet {
            links: BTreeSet::new(),
            src_len,
            tgt_len,
        }
    }

    pub fn from_links(
        src_len: usize,
        tgt_len: usize,
        links: impl IntoIterator<Item = Link>,
    ) -> Result<Self> {
        let mut set = Self::new(src_len, tgt_len);
        for (i, j) in links {
            if i >= src_len || j >= tgt_len {
                return Err(Error::Shape(format!(
                    "link {i}-{j} outside a {src_len}x{tgt_len} pair"
                )));
            }
            set.links.insert((i, j));
        }
        Ok(set)
    }

    /// Inserts a link; panics when it lies outside the pair.
    pub fn insert(&mut self, link: Link) -> bool {
        assert!(
            link.0 < self.src_len && link.1 < self.tgt_len,
            "link {link:?} outside {}x{}",
            self.src_len,
            self.tgt_len
        );
        self.links.insert(link)
    }

    pub fn contains(&self, link: &Link) -> bool {
        self.links.contains(link)
    }

    pub fn links(&self) -> &BTreeSet<Link> {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt_len
    }

    pub fn intersection(&self, other: &AlignmentSet) -> AlignmentSet {
        AlignmentSet {
            links: self.links.intersection(&other.links).copied().collect(),
            src_len: self.src_len,
            tgt_len: self.tgt_len,
        }
    }

    pub fn union(&self, other: &AlignmentSet) -> AlignmentSet {
        AlignmentSet {
            links: self.links.union(&other.links).copied().collect(),
            src_len: self.src_len,
            tgt_len: self.tgt_len,
        }
    }

    pub fn is_subset(&self, other: &AlignmentSet) -> bool {
        self.links.is_subset(&other.links)
    }

    /// Pharaoh line: space separated `i-j`.
    pub fn to_pharaoh(&self, one_indexed: bool) -> String {
        let off = usize::from(one_indexed);
        let mut out = String::new();
        for (n, (i, j)) in self.links.iter().enumerate() {
            if n > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{}-{}", i + off, j + off));
        }
        out
    }

    /// Parses a Pharaoh line. Sentence lengths are not part of the format,
    /// so they are taken as one past the largest index seen.
    pub fn parse_pharaoh(line: &str, one_indexed: bool, line_no: usize) -> Result<Self> {
        let mut links = BTreeSet::new();
        for tok in line.split_whitespace() {
            let (a, b) = tok
                .split_once('-')
                .ok_or_else(|| Error::format(line_no, format!("bad link {tok:?}")))?;
            let parse = |s: &str| -> Result<usize> {
                let v: usize = s
                    .parse()
                    .map_err(|_| Error::format(line_no, format!("bad link {tok:?}")))?;
                if one_indexed {
                    v.checked_sub(1)
                        .ok_or_else(|| Error::format(line_no, format!("index 0 in 1-indexed link {tok:?}")))
                } else {
                    Ok(v)
                }
            };
            links.insert((parse(a)?, parse(b)?));
        }
        let src_len = links.iter().map(|l| l.0 + 1).max().unwrap_or(0);
        let tgt_len = links.iter().map(|l| l.1 + 1).max().unwrap_or(0);
        Ok(AlignmentSet {
            links,
            src_len,
            tgt_len,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    S2t,
    T2s,
}

/// How a directional map is read into links.
///
/// `Column`: each token of the opposite side picks its best query, i.e. in
/// the s2t map every target position `j` takes `argmax_i a[i, j]`.
/// `Row`: each query picks its best key, `argmax_j a[i, j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Reading {
    #[default]
    Column,
    Row,
}

fn argmax<F: Real>(values: impl Iterator<Item = F>) -> usize {
    let mut best = 0;
    let mut best_v = F::neg_infinity();
    for (idx, v) in values.enumerate() {
        // strict comparison keeps the smallest index on ties
        if v > best_v {
            best = idx;
            best_v = v;
        }
    }
    best
}

pub fn decode_direction<F: Real>(
    map: &AttentionMap<F>,
    direction: Direction,
    reading: Reading,
) -> AlignmentSet {
    let (s, t) = (map.s2t.rows(), map.s2t.cols());
    let mut out = AlignmentSet::new(s, t);
    match (direction, reading) {
        (Direction::S2t, Reading::Column) => {
            for j in 0..t {
                out.links.insert((argmax((0..s).map(|i| map.s2t.get(i, j))), j));
            }
        }
        (Direction::S2t, Reading::Row) => {
            for i in 0..s {
                out.links.insert((i, argmax(map.s2t.row(i).iter().copied())));
            }
        }
        (Direction::T2s, Reading::Column) => {
            for i in 0..s {
                out.links.insert((i, argmax((0..t).map(|j| map.t2s.get(j, i)))));
            }
        }
        (Direction::T2s, Reading::Row) => {
            for j in 0..t {
                out.links.insert((argmax(map.t2s.row(j).iter().copied()), j));
            }
        }
    }
    out
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, 0),
    (0, -1),
    (1, 0),
    (0, 1),
    (-1, -1),
    (-1, 1),
    (1, -1),
    (1, 1),
];

fn check_shapes(a: &AlignmentSet, b: &AlignmentSet) -> Result<()> {
    if a.src_len != b.src_len || a.tgt_len != b.tgt_len {
        return Err(Error::Shape(format!(
            "directional alignments disagree on shape: {}x{} vs {}x{}",
            a.src_len, a.tgt_len, b.src_len, b.tgt_len
        )));
    }
    Ok(())
}

struct Grower {
    current: AlignmentSet,
    src_aligned: Vec<bool>,
    tgt_aligned: Vec<bool>,
}

impl Grower {
    fn new(start: AlignmentSet) -> Self {
        let mut src_aligned = vec![false; start.src_len];
        let mut tgt_aligned = vec![false; start.tgt_len];
        for &(i, j) in &start.links {
            src_aligned[i] = true;
            tgt_aligned[j] = true;
        }
        Grower {
            current: start,
            src_aligned,
            tgt_aligned,
        }
    }

    fn add(&mut self, (i, j): Link) {
        self.current.links.insert((i, j));
        self.src_aligned[i] = true;
        self.tgt_aligned[j] = true;
    }

    fn grow_diag(&mut self, union: &AlignmentSet) {
        let (s, t) = (self.current.src_len, self.current.tgt_len);
        loop {
            let mut added = false;
            for i in 0..s {
                for j in 0..t {
                    if !self.current.contains(&(i, j)) {
                        continue;
                    }
                    for (di, dj) in NEIGHBORS {
                        let (Some(ni), Some(nj)) =
                            (i.checked_add_signed(di), j.checked_add_signed(dj))
                        else {
                            continue;
                        };
                        if ni >= s || nj >= t {
                            continue;
                        }
                        let cand = (ni, nj);
                        if (!self.src_aligned[ni] || !self.tgt_aligned[nj])
                            && union.contains(&cand)
                            && !self.current.contains(&cand)
                        {
                            self.add(cand);
                            added = true;
                        }
                    }
                }
            }
            if !added {
                break;
            }
        }
    }

    fn finalize(&mut self, direction: &AlignmentSet, require_both: bool) {
        for &(i, j) in &direction.links {
            let free = if require_both {
                !self.src_aligned[i] && !self.tgt_aligned[j]
            } else {
                !self.src_aligned[i] || !self.tgt_aligned[j]
            };
            if free {
                self.add((i, j));
            }
        }
    }
}

/// Grows the intersection of the two directions toward their union through
/// 8-neighbours that cover a still-unaligned source or target token.
pub fn grow_diag(s2t: &AlignmentSet, t2s: &AlignmentSet) -> Result<AlignmentSet> {
    check_shapes(s2t, t2s)?;
    let mut grower = Grower::new(s2t.intersection(t2s));
    grower.grow_diag(&s2t.union(t2s));
    Ok(grower.current)
}

/// grow-diag followed by a final pass over each direction. With
/// `require_both` (grow-diag-final-and) a link is added only when both of
/// its tokens are still unaligned; otherwise either suffices.
pub fn grow_diag_final(
    s2t: &AlignmentSet,
    t2s: &AlignmentSet,
    require_both: bool,
) -> Result<AlignmentSet> {
    check_shapes(s2t, t2s)?;
    let mut grower = Grower::new(s2t.intersection(t2s));
    grower.grow_diag(&s2t.union(t2s));
    grower.finalize(s2t, require_both);
    grower.finalize(t2s, require_both);
    Ok(grower.current)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignMode {
    S2t,
    T2s,
    Intersect,
    Union,
    GrowDiag,
    /// grow-diag-final
    Gdf,
    /// grow-diag-final-and
    Gdfa,
}

impl FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "s2t" => AlignMode::S2t,
            "t2s" => AlignMode::T2s,
            "intersect" => AlignMode::Intersect,
            "union" => AlignMode::Union,
            "grow-diag" => AlignMode::GrowDiag,
            "gdf" | "grow-diag-final" => AlignMode::Gdf,
            "gdfa" | "grow-diag-final-and" => AlignMode::Gdfa,
            other => return Err(Error::Config(format!("unknown alignment mode {other:?}"))),
        })
    }
}

impl fmt::Display for AlignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignMode::S2t => "s2t",
            AlignMode::T2s => "t2s",
            AlignMode::Intersect => "intersect",
            AlignMode::Union => "union",
            AlignMode::GrowDiag => "grow-diag",
            AlignMode::Gdf => "gdf",
            AlignMode::Gdfa => "gdfa",
        })
    }
}

/// Decodes one attention map under `mode`.
pub fn decode_map<F: Real>(map: &AttentionMap<F>, mode: AlignMode, reading: Reading) -> AlignmentSet {
    let s2t = || decode_direction(map, Direction::S2t, reading);
    let t2s = || decode_direction(map, Direction::T2s, reading);
    match mode {
        AlignMode::S2t => s2t(),
        AlignMode::T2s => t2s(),
        AlignMode::Intersect => s2t().intersection(&t2s()),
        AlignMode::Union => s2t().union(&t2s()),
        // both sets come from the same map so shapes always agree
        AlignMode::GrowDiag => grow_diag(&s2t(), &t2s()).expect("same shape"),
        AlignMode::Gdf => grow_diag_final(&s2t(), &t2s(), false).expect("same shape"),
        AlignMode::Gdfa => grow_diag_final(&s2t(), &t2s(), true).expect("same shape"),
    }
}

/// Aligns every pair, output in input order whatever the thread count.
pub fn align_pairs(
    params: &EmbeddingTable<f32>,
    pairs: &[SentencePair],
    win: usize,
    mode: AlignMode,
    reading: Reading,
    threads: usize,
) -> Result<Vec<AlignmentSet>> {
    let one = |p: &SentencePair| decode_map(&pair_attention(params, &p.src_ids, &p.tgt_ids, win).map, mode, reading);
    if threads <= 1 {
        return Ok(pairs.iter().map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| pairs.par_iter().map(one).collect()))
}

/// One set per input line: `sets[k]` goes to line `pairs[k].pair_index`,
/// lines without a pair get an empty set.
pub fn spread_to_lines(sets: Vec<AlignmentSet>, pairs: &[SentencePair], lines: usize) -> Vec<AlignmentSet> {
    let mut out = vec![AlignmentSet::new(0, 0); lines];
    for (set, pair) in sets.into_iter().zip(pairs) {
        out[pair.pair_index] = set;
    }
    out
}

/// Aligns a corpus encoded with the checkpoint's vocabularies. The result
/// has one entry per input line.
pub fn align_corpus(
    ckpt: &Checkpoint,
    corpus: &Corpus,
    mode: AlignMode,
    reading: Reading,
    threads: usize,
) -> Result<Vec<AlignmentSet>> {
    let (expected, found) = (ckpt.fingerprint(), corpus.fingerprint());
    if expected != found {
        return Err(Error::VocabMismatch { expected, found });
    }
    let sets = align_pairs(&ckpt.params, &corpus.pairs, ckpt.config.hp.win, mode, reading, threads)?;
    Ok(spread_to_lines(sets, &corpus.pairs, corpus.lines))
}
