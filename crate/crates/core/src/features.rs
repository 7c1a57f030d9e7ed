//! Byte n-gram features.
//!
//! Grams are packed big-endian into a `u32`, so `[0x00, 0xff]` is `0x00ff`
//! and the numeric order of grams is their lexicographic byte order.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::par;

/// Largest supported gram order.
pub const MAX_N: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("SampleTooShort: {len} bytes cannot hold a {n}-gram")]
    SampleTooShort { len: usize, n: usize },
    #[error("EmptyCollection: no samples to build a vocabulary from")]
    EmptyCollection,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
}

impl FeatureError {
    pub fn kind(&self) -> &'static str {
        match self {
            FeatureError::SampleTooShort { .. } => "SampleTooShort",
            FeatureError::EmptyCollection => "EmptyCollection",
            FeatureError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

/// Where a vocabulary is drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VocabScope {
    /// One vocabulary per experiment, from the samples being clustered.
    #[default]
    PerExperiment,
    /// One vocabulary from the whole corpus, shared by every experiment.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NGramConfig {
    pub n: usize,
    pub vocab_size: usize,
    pub scope: VocabScope,
}

impl Default for NGramConfig {
    fn default() -> Self {
        NGramConfig {
            n: 2,
            vocab_size: 20,
            scope: VocabScope::PerExperiment,
        }
    }
}

impl NGramConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        check_order(self.n)?;
        if self.vocab_size == 0 {
            return Err(FeatureError::InvalidConfig("vocab size must be at least 1".into()));
        }
        if (self.vocab_size as u64) > gram_space(self.n) {
            return Err(FeatureError::InvalidConfig(format!(
                "vocab size {} exceeds the {} possible {}-grams",
                self.vocab_size,
                gram_space(self.n),
                self.n
            )));
        }
        Ok(())
    }
}

fn check_order(n: usize) -> Result<(), FeatureError> {
    if n == 0 || n > MAX_N {
        return Err(FeatureError::InvalidConfig(format!(
            "n must be in 1..={MAX_N}, got {n}"
        )));
    }
    Ok(())
}

fn gram_space(n: usize) -> u64 {
    1u64 << (8 * n)
}

/// Dense tables are used up to bigrams; longer grams use a hash map.
const DENSE_MAX_N: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Storage {
    Dense(Vec<u64>),
    Sparse(HashMap<u32, u64>),
}

/// Occurrence counts of overlapping n-gram windows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GramCounts {
    n: usize,
    total: u64,
    storage: Storage,
}

impl GramCounts {
    pub fn empty(n: usize) -> Result<GramCounts, FeatureError> {
        check_order(n)?;
        let storage = if n <= DENSE_MAX_N {
            Storage::Dense(vec![0; gram_space(n) as usize])
        } else {
            Storage::Sparse(HashMap::new())
        };
        Ok(GramCounts {
            n,
            total: 0,
            storage,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of windows counted; `len - n + 1` for a single sample.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, gram: u32) -> u64 {
        match &self.storage {
            Storage::Dense(table) => table.get(gram as usize).copied().unwrap_or(0),
            Storage::Sparse(map) => map.get(&gram).copied().unwrap_or(0),
        }
    }

    /// Non-zero counts in ascending gram order.
    pub fn nonzero(&self) -> Vec<(u32, u64)> {
        match &self.storage {
            Storage::Dense(table) => table
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(g, &c)| (g as u32, c))
                .collect(),
            Storage::Sparse(map) => {
                let mut v: Vec<(u32, u64)> = map.iter().map(|(&g, &c)| (g, c)).collect();
                v.sort_unstable();
                v
            }
        }
    }

    fn add_bytes(&mut self, bytes: &[u8]) {
        let n = self.n;
        if bytes.len() < n {
            return;
        }
        let mask: u32 = if n == 4 { u32::MAX } else { (1u32 << (8 * n)) - 1 };
        let mut window = bytes[..n - 1]
            .iter()
            .fold(0u32, |acc, &b| (acc << 8) | b as u32);
        match &mut self.storage {
            Storage::Dense(table) => {
                for &b in &bytes[n - 1..] {
                    window = ((window << 8) | b as u32) & mask;
                    table[window as usize] += 1;
                }
            }
            Storage::Sparse(map) => {
                for &b in &bytes[n - 1..] {
                    window = ((window << 8) | b as u32) & mask;
                    *map.entry(window).or_insert(0) += 1;
                }
            }
        }
        self.total += (bytes.len() - n + 1) as u64;
    }

    /// Adds another table of the same order into this one.
    pub fn merge(&mut self, other: &GramCounts) {
        assert_eq!(self.n, other.n, "cannot merge counts of different gram orders");
        self.total += other.total;
        match (&mut self.storage, &other.storage) {
            (Storage::Dense(a), Storage::Dense(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            (Storage::Sparse(a), Storage::Sparse(b)) => {
                for (&g, &c) in b {
                    *a.entry(g).or_insert(0) += c;
                }
            }
            _ => unreachable!("storage is determined by n"),
        }
    }

    /// The `k` most frequent grams, ties broken by ascending gram value.
    /// Grams that never occur rank after all observed ones, in ascending
    /// order, so the result always has exactly `k` entries.
    pub fn top_k(&self, k: usize) -> Vec<u32> {
        let mut ranked = self.nonzero();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut grams: Vec<u32> = ranked.into_iter().take(k).map(|(g, _)| g).collect();
        if grams.len() < k {
            let used: HashSet<u32> = grams.iter().copied().collect();
            let missing = k - grams.len();
            grams.extend(
                (0..gram_space(self.n))
                    .map(|g| g as u32)
                    .filter(|g| !used.contains(g))
                    .take(missing),
            );
        }
        grams
    }
}

/// Counts every overlapping window of `n` bytes (stride 1).
pub fn count_ngrams(bytes: &[u8], n: usize) -> Result<GramCounts, FeatureError> {
    check_order(n)?;
    if bytes.len() < n {
        return Err(FeatureError::SampleTooShort {
            len: bytes.len(),
            n,
        });
    }
    let mut counts = GramCounts::empty(n)?;
    counts.add_bytes(bytes);
    Ok(counts)
}

/// Counts over a whole collection, merged in parallel.
pub fn count_collection(samples: &[&[u8]], n: usize) -> Result<GramCounts, FeatureError> {
    check_order(n)?;
    if samples.is_empty() {
        return Err(FeatureError::EmptyCollection);
    }
    if let Some(short) = samples.iter().find(|s| s.len() < n) {
        return Err(FeatureError::SampleTooShort {
            len: short.len(),
            n,
        });
    }
    const CHUNK: usize = 32;
    let chunks: Vec<&[&[u8]]> = samples.chunks(CHUNK).collect();
    let partials = par::map(&chunks, |chunk| {
        let mut counts = GramCounts::empty(n).expect("order checked");
        for bytes in chunk.iter() {
            counts.add_bytes(bytes);
        }
        counts
    });
    let mut iter = partials.into_iter();
    let mut total = iter.next().expect("at least one chunk");
    for part in iter {
        total.merge(&part);
    }
    Ok(total)
}

#[derive(Clone, Debug)]
enum Lookup {
    Dense(Vec<u32>),
    Sparse(HashMap<u32, u32>),
}

const NOT_IN_VOCAB: u32 = u32::MAX;

/// The ranked grams that define the feature dimensions.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    n: usize,
    grams: Vec<u32>,
    source: String,
    lookup: Lookup,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.grams == other.grams
    }
}

impl Vocabulary {
    /// Builds a vocabulary from explicit grams; they must be distinct and
    /// fit in `n` bytes.
    pub fn new(n: usize, grams: Vec<u32>, source: impl Into<String>) -> Result<Self, FeatureError> {
        check_order(n)?;
        if grams.is_empty() {
            return Err(FeatureError::InvalidConfig("vocabulary is empty".into()));
        }
        let mut seen = HashSet::new();
        for &g in &grams {
            if (g as u64) >= gram_space(n) {
                return Err(FeatureError::InvalidConfig(format!(
                    "gram {g:#x} does not fit in {n} bytes"
                )));
            }
            if !seen.insert(g) {
                return Err(FeatureError::InvalidConfig(format!("gram {g:#x} is repeated")));
            }
        }
        let lookup = if n <= DENSE_MAX_N {
            let mut table = vec![NOT_IN_VOCAB; gram_space(n) as usize];
            for (i, &g) in grams.iter().enumerate() {
                table[g as usize] = i as u32;
            }
            Lookup::Dense(table)
        } else {
            Lookup::Sparse(grams.iter().enumerate().map(|(i, &g)| (g, i as u32)).collect())
        };
        Ok(Vocabulary {
            n,
            grams,
            source: source.into(),
            lookup,
        })
    }

    pub fn from_counts(
        counts: &GramCounts,
        size: usize,
        source: impl Into<String>,
    ) -> Result<Self, FeatureError> {
        Vocabulary::new(counts.n(), counts.top_k(size), source)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grams(&self) -> &[u32] {
        &self.grams
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn position(&self, gram: u32) -> Option<usize> {
        match &self.lookup {
            Lookup::Dense(table) => match table[gram as usize] {
                NOT_IN_VOCAB => None,
                i => Some(i as usize),
            },
            Lookup::Sparse(map) => map.get(&gram).map(|&i| i as usize),
        }
    }

    /// Zero-padded lowercase hex of the gram at `rank`, e.g. `00ff`.
    pub fn hex(&self, rank: usize) -> String {
        format!("{:0width$x}", self.grams[rank], width = 2 * self.n)
    }

    /// Export: `#` metadata lines, then one hex gram per line in rank order.
    pub fn to_text(&self, metadata: &[String]) -> String {
        let mut out = String::new();
        for line in metadata {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "# source: {}", self.source);
        for rank in 0..self.len() {
            out.push_str(&self.hex(rank));
            out.push('\n');
        }
        out
    }

    /// Parses the export written by [`Vocabulary::to_text`].
    pub fn parse_text(text: &str) -> Result<Self, FeatureError> {
        let mut grams = Vec::new();
        let mut width = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.len() % 2 != 0 || *width.get_or_insert(line.len()) != line.len() {
                return Err(FeatureError::InvalidConfig(format!("bad gram line {line:?}")));
            }
            let g = u32::from_str_radix(line, 16)
                .map_err(|_| FeatureError::InvalidConfig(format!("bad gram line {line:?}")))?;
            grams.push(g);
        }
        let n = width.map(|w| w / 2).unwrap_or(0);
        Vocabulary::new(n, grams, "parsed")
    }
}

/// Top-`vocab_size` grams over a collection of samples.
pub fn build_vocabulary(samples: &[&[u8]], config: &NGramConfig) -> Result<Vocabulary, FeatureError> {
    config.validate()?;
    let counts = count_collection(samples, config.n)?;
    Vocabulary::from_counts(
        &counts,
        config.vocab_size,
        format!("top {} {}-grams over {} samples", config.vocab_size, config.n, samples.len()),
    )
}

/// A normalized in-vocabulary gram frequency vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Set when the sample contains none of the vocabulary grams and the
    /// vector was replaced by the uniform distribution.
    pub uniform_fallback: bool,
}

/// Frequencies of the vocabulary grams in `bytes`, normalized by the total
/// in-vocabulary count.
pub fn vectorize(bytes: &[u8], vocab: &Vocabulary) -> Result<FeatureVector, FeatureError> {
    let n = vocab.n();
    if bytes.len() < n {
        return Err(FeatureError::SampleTooShort {
            len: bytes.len(),
            n,
        });
    }
    let m = vocab.len();
    let mut counts = vec![0u64; m];
    let mask: u32 = if n == 4 { u32::MAX } else { (1u32 << (8 * n)) - 1 };
    let mut window = bytes[..n - 1]
        .iter()
        .fold(0u32, |acc, &b| (acc << 8) | b as u32);
    for &b in &bytes[n - 1..] {
        window = ((window << 8) | b as u32) & mask;
        if let Some(i) = vocab.position(window) {
            counts[i] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Ok(FeatureVector {
            values: vec![1.0 / m as f64; m],
            uniform_fallback: true,
        });
    }
    let denom = total as f64;
    Ok(FeatureVector {
        values: counts.iter().map(|&c| c as f64 / denom).collect(),
        uniform_fallback: false,
    })
}

/// Vectorizes many samples in parallel, preserving order.
pub fn vectorize_all(samples: &[&[u8]], vocab: &Vocabulary) -> Result<Vec<FeatureVector>, FeatureError> {
    par::try_map(samples, |bytes| vectorize(bytes, vocab))
}

/// One exported feature-matrix row.
#[derive(Clone, Debug)]
pub struct FeatureRow {
    pub path: PathBuf,
    pub family: String,
    pub vector: FeatureVector,
}

/// Formats `x` with `digits` significant digits in plain decimal notation.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", digits.saturating_sub(1), x);
    }
    let exponent = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - exponent).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Export: metadata lines, then `path<TAB>family<TAB>v1..vm` per sample with
/// 9 significant digits.
pub fn feature_matrix_text(rows: &[FeatureRow], metadata: &[String]) -> String {
    let mut out = String::new();
    for line in metadata {
        let _ = writeln!(out, "# {line}");
    }
    let flagged: Vec<String> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.vector.uniform_fallback)
        .map(|(i, _)| i.to_string())
        .collect();
    let _ = writeln!(out, "# uniform_fallback_rows: {}", flagged.join(","));
    for row in rows {
        out.push_str(&row.path.display().to_string());
        out.push('\t');
        out.push_str(&row.family);
        for v in &row.vector.values {
            out.push('\t');
            out.push_str(&format_significant(*v, 9));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts_map(c: &GramCounts) -> Vec<(u32, u64)> {
        c.nonzero()
    }

    #[test]
    fn counts_alternating_bigrams() {
        let c = count_ngrams(&[0x00, 0x01, 0x00, 0x01, 0x00], 2).unwrap();
        assert_eq!(counts_map(&c), vec![(0x0001, 2), (0x0100, 2)]);
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn counts_repeated_byte() {
        let c = count_ngrams(&[7, 7, 7], 2).unwrap();
        assert_eq!(counts_map(&c), vec![(0x0707, 2)]);
    }

    #[test]
    fn too_short_sample() {
        assert_eq!(
            count_ngrams(&[0xaa], 2).unwrap_err(),
            FeatureError::SampleTooShort { len: 1, n: 2 }
        );
        assert!(vectorize(&[0xaa], &Vocabulary::new(2, vec![1], "t").unwrap()).is_err());
    }

    #[test]
    fn order_limits() {
        assert!(count_ngrams(&[1, 2, 3, 4, 5], 5).is_err());
        assert!(count_ngrams(&[1], 0).is_err());
        let c = count_ngrams(&[1, 2, 3, 4, 1, 2, 3, 4], 4).unwrap();
        assert_eq!(c.get(0x01020304), 2);
        assert_eq!(c.total(), 5);
    }

    #[test]
    fn vocabulary_tie_break_is_numeric() {
        let config = NGramConfig {
            vocab_size: 2,
            ..NGramConfig::default()
        };
        let sample: &[u8] = &[0x00, 0x01, 0x00, 0x01, 0x00];
        let v = build_vocabulary(&[sample], &config).unwrap();
        assert_eq!(v.grams(), &[0x0001, 0x0100]);
    }

    #[test]
    fn vocabulary_unique_maximum() {
        let config = NGramConfig {
            vocab_size: 1,
            ..NGramConfig::default()
        };
        let a: &[u8] = &[0xff, 0xff, 0xff, 0xff, 0x01];
        let b: &[u8] = &[0x02, 0xff, 0xff, 0xff];
        let v = build_vocabulary(&[a, b], &config).unwrap();
        assert_eq!(v.grams(), &[0xffff]);
        assert_eq!(v.hex(0), "ffff");
    }

    #[test]
    fn vocabulary_pads_with_unseen_grams() {
        let config = NGramConfig::default();
        let sample: &[u8] = &[0x00, 0x01, 0x00, 0x01, 0x00];
        let v = build_vocabulary(&[sample], &config).unwrap();
        assert_eq!(v.len(), 20);
        assert_eq!(&v.grams()[..4], &[0x0001, 0x0100, 0x0000, 0x0002]);
    }

    #[test]
    fn empty_collection() {
        assert_eq!(
            build_vocabulary(&[], &NGramConfig::default()).unwrap_err(),
            FeatureError::EmptyCollection
        );
    }

    #[test]
    fn vectorize_examples() {
        let vocab = Vocabulary::new(2, vec![0x0001, 0x0100], "t").unwrap();
        let v = vectorize(&[0x00, 0x01, 0x00, 0x01, 0x00], &vocab).unwrap();
        assert_eq!(v.values, vec![0.5, 0.5]);
        assert!(!v.uniform_fallback);

        let vocab = Vocabulary::new(2, vec![0x0001, 0x0002], "t").unwrap();
        let v = vectorize(&[0x00, 0x01, 0x00, 0x02], &vocab).unwrap();
        assert_eq!(v.values, vec![0.5, 0.5]);

        let vocab = Vocabulary::new(2, vec![0x1111, 0x2222, 0x3333, 0x4444], "t").unwrap();
        let v = vectorize(&[0, 1, 2, 3], &vocab).unwrap();
        assert!(v.uniform_fallback);
        assert_eq!(v.values, vec![0.25; 4]);
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_oversized_grams() {
        assert!(Vocabulary::new(2, vec![1, 1], "t").is_err());
        assert!(Vocabulary::new(1, vec![0x100], "t").is_err());
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let v = Vocabulary::new(2, vec![0x00ff, 0x1200, 0x0000], "t").unwrap();
        let text = v.to_text(&["tool: test".into()]);
        assert!(text.contains("\n00ff\n1200\n0000\n"));
        assert_eq!(Vocabulary::parse_text(&text).unwrap(), v);
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(0.5, 9), "0.500000000");
        assert_eq!(format_significant(0.0123, 9), "0.0123000000");
        assert_eq!(format_significant(1.0, 9), "1.00000000");
        assert_eq!(format_significant(0.0, 9), "0.00000000");
    }

    #[test]
    fn config_validation() {
        let mut c = NGramConfig::default();
        assert!(c.validate().is_ok());
        c.n = 5;
        assert!(c.validate().is_err());
        c.n = 1;
        c.vocab_size = 257;
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn window_count_conservation(bytes in proptest::collection::vec(any::<u8>(), 1..300), n in 1usize..=4) {
            prop_assume!(bytes.len() >= n);
            let c = count_ngrams(&bytes, n).unwrap();
            let sum: u64 = c.nonzero().iter().map(|(_, c)| c).sum();
            prop_assert_eq!(sum, (bytes.len() - n + 1) as u64);
            prop_assert_eq!(c.total(), sum);
        }

        #[test]
        fn vocabulary_ignores_sample_order(
            samples in proptest::collection::vec(proptest::collection::vec(0u8..6, 2..40), 1..8),
            rotate in 0usize..8,
        ) {
            let config = NGramConfig { vocab_size: 5, ..NGramConfig::default() };
            let refs: Vec<&[u8]> = samples.iter().map(|s| s.as_slice()).collect();
            let mut shuffled = refs.clone();
            shuffled.rotate_left(rotate % refs.len());
            shuffled.reverse();
            prop_assert_eq!(
                build_vocabulary(&refs, &config).unwrap(),
                build_vocabulary(&shuffled, &config).unwrap()
            );
        }

        #[test]
        fn vectors_are_distributions(bytes in proptest::collection::vec(0u8..8, 2..500)) {
            let config = NGramConfig { vocab_size: 10, ..NGramConfig::default() };
            let vocab = build_vocabulary(&[&bytes], &config).unwrap();
            let v = vectorize(&bytes, &vocab).unwrap();
            prop_assert!(!v.uniform_fallback);
            prop_assert!(v.values.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((v.values.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
