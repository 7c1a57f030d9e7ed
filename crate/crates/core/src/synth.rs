//! Synthetic labeled corpora with controlled bigram statistics.
//!
//! A sample is a sequence of excursions separated by short runs of uniform
//! random noise bytes. An excursion starts with a bigram drawn from the
//! family's `gram_weights` and then walks byte to byte, choosing each next
//! byte among the bigrams that start at the current one, stopping at random.
//! When the weights are balanced (every byte has equal in- and out-weight,
//! as with the cycle-based presets) every bigram inside an excursion is
//! distributed exactly as `gram_weights`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::corpus::{format_record, CorpusError, FamilyLabel, MalwareType, Manifest, REFERENCE_FAMILIES};
use crate::par;
use crate::seed::{child_rng, derive_seed, rng_from, Rng};

/// Probability that an excursion continues with another byte.
const EXCURSION_CONTINUE: f64 = 0.8;
/// Probability that a noise run continues with another byte.
const NOISE_CONTINUE: f64 = 0.5;
/// Bytes per cycle in the presets.
const CYCLE_LEN: usize = 4;
const PAIR_CYCLE_LEN: usize = 8;

pub const DEFAULT_LEN_RANGE: (usize, usize) = (50_000, 200_000);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("InvalidOverlap: {0} is outside [0, 1]")]
    InvalidOverlap(f64),
    #[error("InvalidGenerator: {0}")]
    InvalidGenerator(String),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl SynthError {
    pub fn kind(&self) -> &'static str {
        match self {
            SynthError::InvalidOverlap(_) => "InvalidOverlap",
            SynthError::InvalidGenerator(_) => "InvalidGenerator",
            SynthError::Io { .. } => "Io",
            SynthError::Corpus(e) => e.kind(),
        }
    }
}

/// Byte-stream source for one synthetic family.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyGenerator {
    pub name: String,
    pub malware_type: MalwareType,
    /// Bigram (big-endian packed) and its probability, ascending by bigram.
    pub gram_weights: Vec<(u16, f64)>,
    pub sample_len_range: (usize, usize),
    pub seed: u64,
}

/// The bigrams of the closed walk `bytes[0] -> bytes[1] -> ... -> bytes[0]`.
pub fn cycle_grams(bytes: &[u8]) -> Vec<u16> {
    (0..bytes.len())
        .map(|i| u16::from_be_bytes([bytes[i], bytes[(i + 1) % bytes.len()]]))
        .collect()
}

/// Weighted mixture of uniform distributions over each component's grams.
/// Components with zero weight are dropped.
pub fn mixture(components: &[(Vec<u16>, f64)]) -> Vec<(u16, f64)> {
    let mut acc: BTreeMap<u16, f64> = BTreeMap::new();
    for (grams, weight) in components {
        if *weight <= 0.0 || grams.is_empty() {
            continue;
        }
        let each = weight / grams.len() as f64;
        for &g in grams {
            *acc.entry(g).or_insert(0.0) += each;
        }
    }
    acc.into_iter().collect()
}

/// Total-variation distance between two gram distributions.
pub fn total_variation(a: &[(u16, f64)], b: &[(u16, f64)]) -> f64 {
    let mut diff: BTreeMap<u16, f64> = a.iter().copied().collect();
    for &(g, w) in b {
        *diff.entry(g).or_insert(0.0) -= w;
    }
    diff.values().map(|d| d.abs()).sum::<f64>() / 2.0
}

struct Chain {
    starts: Vec<(u16, f64)>,
    // cumulative weights of the bigrams leaving each byte
    out: Vec<Vec<(u8, f64)>>,
}

fn pick<T: Copy>(table: &[(T, f64)], rng: &mut Rng) -> T {
    let total = table.last().expect("non-empty table").1;
    let target = rng.random::<f64>() * total;
    let i = table.partition_point(|&(_, c)| c <= target);
    table[i.min(table.len() - 1)].0
}

impl Chain {
    fn new(weights: &[(u16, f64)]) -> Chain {
        let mut starts = Vec::new();
        let mut acc = 0.0;
        let mut out: Vec<Vec<(u8, f64)>> = vec![Vec::new(); 256];
        for &(g, w) in weights {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            starts.push((g, acc));
            let [a, b] = g.to_be_bytes();
            let row = &mut out[a as usize];
            let prev = row.last().map(|&(_, c)| c).unwrap_or(0.0);
            row.push((b, prev + w));
        }
        Chain { starts, out }
    }

    fn generate(&self, len: usize, rng: &mut Rng) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(len + 64);
        while bytes.len() < len {
            let [a, b] = pick(&self.starts, rng).to_be_bytes();
            bytes.push(a);
            bytes.push(b);
            let mut current = b;
            while rng.random::<f64>() < EXCURSION_CONTINUE {
                let row = &self.out[current as usize];
                if row.is_empty() {
                    break;
                }
                current = pick(row, rng);
                bytes.push(current);
            }
            loop {
                bytes.push(rng.random());
                if rng.random::<f64>() >= NOISE_CONTINUE {
                    break;
                }
            }
        }
        bytes.truncate(len);
        bytes
    }
}

impl FamilyGenerator {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidGenerator(format!("{}: {msg}", self.name)));
        if self.gram_weights.is_empty() {
            return bad("no gram weights".into());
        }
        if self.gram_weights.iter().any(|&(_, w)| !w.is_finite() || w < 0.0) {
            return bad("weights must be finite and non-negative".into());
        }
        if self.gram_weights.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("grams must be distinct and ascending".into());
        }
        let total: f64 = self.gram_weights.iter().map(|&(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}, not 1"));
        }
        let (lo, hi) = self.sample_len_range;
        if lo < 2 || lo > hi {
            return bad(format!("sample length range {lo}..={hi} is invalid (minimum 2)"));
        }
        Ok(())
    }

    /// The `index`-th sample of this family; a pure function of
    /// `(seed, index)`.
    pub fn sample(&self, index: u64) -> Vec<u8> {
        let mut rng = child_rng(self.seed, &[index]);
        let (lo, hi) = self.sample_len_range;
        let len = rng.random_range(lo..=hi);
        Chain::new(&self.gram_weights).generate(len, &mut rng)
    }

    /// A sample of exactly `len` bytes, for statistical checks.
    pub fn sample_with_len(&self, index: u64, len: usize) -> Vec<u8> {
        let mut rng = child_rng(self.seed, &[index, len as u64]);
        Chain::new(&self.gram_weights).generate(len, &mut rng)
    }

    pub fn with_len_range(mut self, lo: usize, hi: usize) -> Self {
        self.sample_len_range = (lo, hi);
        self
    }
}

fn shuffled_bytes(seed: u64) -> Vec<u8> {
    let mut bytes: Vec<u8> = (0..=255).collect();
    bytes.shuffle(&mut rng_from(seed));
    bytes
}

/// Two generators sharing exactly `overlap` of their probability mass.
///
/// Each is `overlap · U(shared) + (1 − overlap) · U(own)` where the shared
/// and the two private cycles use disjoint bytes, so the total-variation
/// distance between them is `1 − overlap`.
pub fn make_pair(overlap: f64, base_seed: u64) -> Result<(FamilyGenerator, FamilyGenerator), SynthError> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(SynthError::InvalidOverlap(overlap));
    }
    let bytes = shuffled_bytes(derive_seed(base_seed, &[0x9a1]));
    let shared = cycle_grams(&bytes[..PAIR_CYCLE_LEN]);
    let own_a = cycle_grams(&bytes[PAIR_CYCLE_LEN..2 * PAIR_CYCLE_LEN]);
    let own_b = cycle_grams(&bytes[2 * PAIR_CYCLE_LEN..3 * PAIR_CYCLE_LEN]);
    let make = |name: &str, t: MalwareType, own: Vec<u16>, i: u64| FamilyGenerator {
        name: name.to_string(),
        malware_type: t,
        gram_weights: mixture(&[(shared.clone(), overlap), (own, 1.0 - overlap)]),
        sample_len_range: DEFAULT_LEN_RANGE,
        seed: derive_seed(base_seed, &[i]),
    };
    Ok((
        make("PairA", MalwareType::Trojan, own_a, 1),
        make("PairB", MalwareType::Worm, own_b, 2),
    ))
}

fn family_names(count: usize) -> Vec<(String, MalwareType)> {
    (0..count)
        .map(|i| match REFERENCE_FAMILIES.get(i) {
            Some((name, t)) => (name.to_string(), *t),
            None => (
                format!("Family{i}"),
                MalwareType::ALL[i % MalwareType::ALL.len()],
            ),
        })
        .collect()
}

/// Families named after the reference taxonomy. Every family mixes a cycle
/// common to all families, a cycle shared by its (collapsed) type, and a
/// private cycle. VirTool families carry no private mass, so they are
/// indistinguishable from each other.
pub fn reference_generators(count: usize, seed: u64) -> Result<Vec<FamilyGenerator>, SynthError> {
    let types: Vec<MalwareType> = {
        let mut t: Vec<MalwareType> = MalwareType::ALL.iter().map(|t| t.collapsed()).collect();
        t.dedup();
        t
    };
    let needed = CYCLE_LEN * (1 + types.len() + count);
    if count == 0 || needed > 256 {
        return Err(SynthError::InvalidGenerator(format!(
            "reference preset supports 1..={} families",
            256 / CYCLE_LEN - 1 - types.len()
        )));
    }
    let bytes = shuffled_bytes(derive_seed(seed, &[0x7e5]));
    let cycle = |slot: usize| cycle_grams(&bytes[slot * CYCLE_LEN..(slot + 1) * CYCLE_LEN]);
    let common = cycle(0);
    Ok(family_names(count)
        .into_iter()
        .enumerate()
        .map(|(i, (name, t))| {
            let type_slot = 1 + types.iter().position(|&x| x == t.collapsed()).expect("known type");
            let (type_w, own_w) = if t == MalwareType::VirTool { (0.8, 0.0) } else { (0.3, 0.5) };
            FamilyGenerator {
                name,
                malware_type: t,
                gram_weights: mixture(&[
                    (common.clone(), 0.2),
                    (cycle(type_slot), type_w),
                    (cycle(1 + types.len() + i), own_w),
                ]),
                sample_len_range: DEFAULT_LEN_RANGE,
                seed: derive_seed(seed, &[1, i as u64]),
            }
        })
        .collect())
}

/// Families with pairwise-disjoint private cycles and nothing shared.
pub fn separated_generators(count: usize, seed: u64) -> Result<Vec<FamilyGenerator>, SynthError> {
    if count == 0 || count * CYCLE_LEN > 256 {
        return Err(SynthError::InvalidGenerator(format!(
            "separated preset supports 1..={} families",
            256 / CYCLE_LEN
        )));
    }
    let bytes = shuffled_bytes(derive_seed(seed, &[0x5e9]));
    Ok(family_names(count)
        .into_iter()
        .enumerate()
        .map(|(i, (name, t))| FamilyGenerator {
            name,
            malware_type: t,
            gram_weights: mixture(&[(cycle_grams(&bytes[i * CYCLE_LEN..(i + 1) * CYCLE_LEN]), 1.0)]),
            sample_len_range: DEFAULT_LEN_RANGE,
            seed: derive_seed(seed, &[2, i as u64]),
        })
        .collect())
}

fn dir_name(family: &str) -> String {
    family
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const GENERATOR_SPEC_FILE: &str = "generators.txt";

/// Writes `samples_per_family` files per generator under `out_dir`, plus
/// `manifest.tsv` and a `generators.txt` spec, and loads the manifest back.
pub fn generate_corpus(
    generators: &[FamilyGenerator],
    samples_per_family: usize,
    out_dir: &Path,
    metadata: &[String],
) -> Result<Manifest, SynthError> {
    if generators.is_empty() {
        return Err(SynthError::InvalidGenerator("no generators".into()));
    }
    if samples_per_family == 0 {
        return Err(SynthError::InvalidGenerator("samples per family must be at least 1".into()));
    }
    for g in generators {
        g.validate()?;
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut manifest = String::new();
    for line in metadata {
        let _ = writeln!(manifest, "# {line}");
    }
    let mut jobs = Vec::new();
    for (fi, g) in generators.iter().enumerate() {
        let dir = dir_name(&g.name);
        let full = out_dir.join(&dir);
        fs::create_dir_all(&full).map_err(io_err(&full))?;
        let label = FamilyLabel {
            name: g.name.clone(),
            index: fi,
            malware_type: g.malware_type,
        };
        for s in 0..samples_per_family {
            let relative = format!("{dir}/{s:05}.bin");
            manifest.push_str(&format_record(&relative, &label));
            jobs.push((fi, s, relative));
        }
    }
    par::try_map(&jobs, |(fi, s, relative)| {
        let path = out_dir.join(relative);
        fs::write(&path, generators[*fi].sample(*s as u64)).map_err(io_err(&path))
    })?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;
    let spec_path = out_dir.join(GENERATOR_SPEC_FILE);
    fs::write(&spec_path, generator_spec_text(generators, samples_per_family, metadata))
        .map_err(io_err(&spec_path))?;
    Ok(Manifest::load(&manifest_path)?)
}

/// Key-value record of every generator, enough to regenerate the corpus.
pub fn generator_spec_text(generators: &[FamilyGenerator], samples_per_family: usize, metadata: &[String]) -> String {
    let mut out = String::new();
    for line in metadata {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "generators={}", generators.len());
    let _ = writeln!(out, "samples_per_family={samples_per_family}");
    for (i, g) in generators.iter().enumerate() {
        let _ = writeln!(out, "family.{i}.name={}", g.name);
        let _ = writeln!(out, "family.{i}.type={}", g.malware_type);
        let _ = writeln!(out, "family.{i}.seed={}", g.seed);
        let _ = writeln!(out, "family.{i}.len_min={}", g.sample_len_range.0);
        let _ = writeln!(out, "family.{i}.len_max={}", g.sample_len_range.1);
        let weights: Vec<String> = g
            .gram_weights
            .iter()
            .map(|(gram, w)| format!("{gram:04x}:{w}"))
            .collect();
        let _ = writeln!(out, "family.{i}.weights={}", weights.join(","));
    }
    out
}

/// Parses [`generator_spec_text`] output back into generators and the
/// per-family sample count.
pub fn parse_generator_spec(text: &str) -> Result<(Vec<FamilyGenerator>, usize), SynthError> {
    let bad = |msg: String| SynthError::InvalidGenerator(msg);
    let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad line {line:?}")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("missing key {k}")));
    let num = |k: &str| -> Result<u64, SynthError> {
        get(k)?.parse().map_err(|_| bad(format!("{k} is not an integer")))
    };
    let count = num("generators")? as usize;
    let per_family = num("samples_per_family")? as usize;
    let mut gens = Vec::with_capacity(count);
    for i in 0..count {
        let mut weights = Vec::new();
        for item in get(&format!("family.{i}.weights"))?.split(',') {
            let (g, w) = item.split_once(':').ok_or_else(|| bad(format!("bad weight {item:?}")))?;
            let g = u16::from_str_radix(g, 16).map_err(|_| bad(format!("bad gram {g:?}")))?;
            let w: f64 = w.parse().map_err(|_| bad(format!("bad weight {w:?}")))?;
            weights.push((g, w));
        }
        let generator = FamilyGenerator {
            name: get(&format!("family.{i}.name"))?.to_string(),
            malware_type: get(&format!("family.{i}.type"))?.parse()?,
            gram_weights: weights,
            sample_len_range: (
                num(&format!("family.{i}.len_min"))? as usize,
                num(&format!("family.{i}.len_max"))? as usize,
            ),
            seed: num(&format!("family.{i}.seed"))?,
        };
        generator.validate()?;
        gens.push(generator);
    }
    Ok((gens, per_family))
}
