//! Experiment drivers: pairwise family clustering, selected-family
//! clustering, elbow curves, and the derived per-family summaries.

use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{CorpusError, FamilyLabel, MalwareType, Manifest, Sample, Selector};
use crate::features::{
    count_collection, vectorize_all, FeatureError, FeatureVector, GramCounts, NGramConfig, VocabScope,
    Vocabulary,
};
use crate::kmeans::{self, ClusteringResult, KMeansConfig, KMeansError, PointSet};
use crate::metrics::{adjusted_rand_index, ContingencyTable, MetricError, MetricReport};
use crate::par::{self, Jobs};
use crate::seed::derive_seed;

/// Average pairwise ARI above which a family counts as highly distinct, and
/// the ARI above which a relationship edge is drawn solid.
pub const HIGH_ARI_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("NotEnoughFamilies: need at least {needed}, found {found}")]
    NotEnoughFamilies { needed: usize, found: usize },
    #[error("InvalidSelection: {0}")]
    InvalidSelection(String),
    #[error("MalformedMatrix: {0}")]
    MalformedMatrix(String),
}

impl ExperimentError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentError::Corpus(e) => e.kind(),
            ExperimentError::Feature(e) => e.kind(),
            ExperimentError::KMeans(e) => e.kind(),
            ExperimentError::Metric(e) => e.kind(),
            ExperimentError::NotEnoughFamilies { .. } => "NotEnoughFamilies",
            ExperimentError::InvalidSelection(_) => "InvalidSelection",
            ExperimentError::MalformedMatrix(_) => "MalformedMatrix",
        }
    }
}

/// Settings shared by every experiment driver.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub ngram: NGramConfig,
    /// `k` is ignored by the pairwise driver, which always uses two clusters.
    pub kmeans: KMeansConfig,
    pub jobs: Jobs,
}

pub type PairwiseConfig = ExperimentConfig;

/// Samples of one family plus their merged gram counts.
struct FamilyData {
    label: FamilyLabel,
    samples: Vec<Sample>,
    counts: GramCounts,
}

impl FamilyData {
    fn bytes(&self) -> impl Iterator<Item = &[u8]> {
        self.samples.iter().map(|s| s.bytes.as_slice())
    }
}

fn load_families(manifest: &Manifest, labels: &[FamilyLabel], n: usize) -> Result<Vec<FamilyData>, ExperimentError> {
    labels
        .iter()
        .map(|label| {
            let samples = manifest.load_samples(&Selector::Families(vec![label.name.clone()]), n)?;
            let refs: Vec<&[u8]> = samples.iter().map(|s| s.bytes.as_slice()).collect();
            let counts = count_collection(&refs, n)?;
            Ok(FamilyData {
                label: label.clone(),
                samples,
                counts,
            })
        })
        .collect()
}

fn merged_vocabulary(parts: &[&FamilyData], config: &NGramConfig) -> Result<Vocabulary, ExperimentError> {
    let mut iter = parts.iter();
    let mut counts = iter.next().ok_or(FeatureError::EmptyCollection)?.counts.clone();
    for part in iter {
        counts.merge(&part.counts);
    }
    let names: Vec<&str> = parts.iter().map(|p| p.label.name.as_str()).collect();
    Ok(Vocabulary::from_counts(
        &counts,
        config.vocab_size,
        format!("top {} {}-grams over {}", config.vocab_size, config.n, names.join("+")),
    )?)
}

fn global_vocabulary(manifest: &Manifest, config: &NGramConfig) -> Result<Vocabulary, ExperimentError> {
    let data = load_families(manifest, manifest.families(), config.n)?;
    let refs: Vec<&FamilyData> = data.iter().collect();
    let mut vocab = merged_vocabulary(&refs, config)?;
    vocab = Vocabulary::new(
        vocab.n(),
        vocab.grams().to_vec(),
        format!("top {} {}-grams over the whole corpus", config.vocab_size, config.n),
    )?;
    Ok(vocab)
}

/// One two-family clustering.
#[derive(Clone, Debug)]
pub struct PairwiseRun {
    pub family_a: FamilyLabel,
    pub family_b: FamilyLabel,
    pub ari: f64,
    /// Rows: `family_a`, `family_b`. Columns: clusters.
    pub confusion: ContingencyTable,
    pub result: ClusteringResult,
    pub vocabulary: Vocabulary,
    /// Samples that contained no vocabulary gram.
    pub uniform_fallbacks: usize,
}

/// Symmetric family-by-family ARI matrix with a unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct AriMatrix {
    families: Vec<FamilyLabel>,
    values: Vec<f64>,
}

impl AriMatrix {
    pub fn identity(families: Vec<FamilyLabel>) -> Self {
        let f = families.len();
        let mut values = vec![0.0; f * f];
        for i in 0..f {
            values[i * f + i] = 1.0;
        }
        AriMatrix { families, values }
    }

    pub fn families(&self) -> &[FamilyLabel] {
        &self.families
    }

    pub fn len(&self) -> usize {
        self.families.len()
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let f = self.len();
        self.values[i * f + j] = value;
        self.values[j * f + i] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.len()..(i + 1) * self.len()]
    }

    pub fn position(&self, name: &str) -> Result<usize, ExperimentError> {
        self.families
            .iter()
            .position(|f| f.name == name)
            .or_else(|| self.families.iter().position(|f| f.name.eq_ignore_ascii_case(name)))
            .ok_or_else(|| CorpusError::UnknownFamily(name.to_string()).into())
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.len()).all(|i| (0..self.len()).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Tab-separated export: metadata lines, `# index` and `# type` lines,
    /// then a square matrix with family names heading the rows and columns,
    /// values to 4 decimal places.
    pub fn to_text(&self, metadata: &[String]) -> String {
        let mut out = String::new();
        for line in metadata {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("# index");
        for f in &self.families {
            let _ = write!(out, "\t{}", f.index);
        }
        out.push_str("\n# type");
        for f in &self.families {
            let _ = write!(out, "\t{}", f.malware_type);
        }
        out.push_str("\nfamily");
        for f in &self.families {
            let _ = write!(out, "\t{}", f.name);
        }
        out.push('\n');
        for (i, f) in self.families.iter().enumerate() {
            out.push_str(&f.name);
            for v in self.row(i) {
                let _ = write!(out, "\t{v:.4}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self, ExperimentError> {
        let bad = |m: String| ExperimentError::MalformedMatrix(m);
        let mut indices: Option<Vec<usize>> = None;
        let mut types: Option<Vec<MalwareType>> = None;
        let mut names: Option<Vec<String>> = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "# index" => {
                    indices = Some(
                        fields[1..]
                            .iter()
                            .map(|s| s.parse().map_err(|_| bad(format!("bad index {s:?}"))))
                            .collect::<Result<_, _>>()?,
                    )
                }
                "# type" => {
                    types = Some(fields[1..].iter().map(|s| s.parse()).collect::<Result<_, _>>()?)
                }
                _ if line.starts_with('#') || line.trim().is_empty() => {}
                _ if names.is_none() => names = Some(fields[1..].iter().map(|s| s.to_string()).collect()),
                _ => {
                    let expected = names.as_ref().map(|n| n[rows.len()..].first().cloned());
                    if expected.flatten().as_deref() != Some(fields[0]) {
                        return Err(bad(format!("line {}: row name {:?} out of order", lineno + 1, fields[0])));
                    }
                    rows.push(
                        fields[1..]
                            .iter()
                            .map(|s| s.parse().map_err(|_| bad(format!("line {}: bad value {s:?}", lineno + 1))))
                            .collect::<Result<_, _>>()?,
                    );
                }
            }
        }
        let names = names.ok_or_else(|| bad("missing header row".into()))?;
        let f = names.len();
        let indices = indices.ok_or_else(|| bad("missing '# index' line".into()))?;
        let types = types.ok_or_else(|| bad("missing '# type' line".into()))?;
        if indices.len() != f || types.len() != f || rows.len() != f || rows.iter().any(|r| r.len() != f) {
            return Err(bad(format!("matrix is not {f}x{f}")));
        }
        let families = names
            .into_iter()
            .zip(indices)
            .zip(types)
            .map(|((name, index), malware_type)| FamilyLabel {
                name,
                index,
                malware_type,
            })
            .collect();
        Ok(AriMatrix {
            families,
            values: rows.into_iter().flatten().collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct PairwiseOutcome {
    pub runs: Vec<PairwiseRun>,
    pub matrix: AriMatrix,
}

fn cluster_families(
    parts: &[&FamilyData],
    vocab: &Vocabulary,
    kmeans_config: &KMeansConfig,
) -> Result<(ClusteringResult, Vec<usize>, Vec<FeatureVector>), ExperimentError> {
    let bytes: Vec<&[u8]> = parts.iter().flat_map(|p| p.bytes()).collect();
    let truth: Vec<usize> = parts
        .iter()
        .enumerate()
        .flat_map(|(i, p)| std::iter::repeat_n(i, p.samples.len()))
        .collect();
    let vectors = vectorize_all(&bytes, vocab)?;
    let points = PointSet::from_rows(&vectors.iter().map(|v| v.values.as_slice()).collect::<Vec<_>>())?;
    let result = kmeans::run(&points, kmeans_config)?;
    Ok((result, truth, vectors))
}

/// Clusters every unordered pair of families with `k = 2`.
///
/// Each pair's seed is derived from the global seed and the two family
/// indices, so results do not depend on scheduling or `jobs`.
pub fn run_pairwise(manifest: &Manifest, config: &PairwiseConfig) -> Result<PairwiseOutcome, ExperimentError> {
    config.ngram.validate()?;
    let kmeans_config = KMeansConfig { k: 2, ..config.kmeans };
    kmeans_config.validate()?;
    let families = manifest.families().to_vec();
    if families.len() < 2 {
        return Err(ExperimentError::NotEnoughFamilies {
            needed: 2,
            found: families.len(),
        });
    }
    par::with_jobs(config.jobs, || {
        let data = load_families(manifest, &families, config.ngram.n)?;
        let global = match config.ngram.scope {
            VocabScope::Global => {
                let refs: Vec<&FamilyData> = data.iter().collect();
                Some(merged_vocabulary(&refs, &config.ngram)?)
            }
            VocabScope::PerExperiment => None,
        };
        let pairs: Vec<(usize, usize)> = (0..families.len())
            .flat_map(|i| (i + 1..families.len()).map(move |j| (i, j)))
            .collect();
        let runs = par::try_map(&pairs, |&(i, j)| -> Result<PairwiseRun, ExperimentError> {
            let parts = [&data[i], &data[j]];
            let vocab = match &global {
                Some(v) => v.clone(),
                None => merged_vocabulary(&parts, &config.ngram)?,
            };
            let seed = derive_seed(
                config.kmeans.seed,
                &[families[i].index as u64, families[j].index as u64],
            );
            let (result, truth, vectors) =
                cluster_families(&parts, &vocab, &KMeansConfig { seed, ..kmeans_config })?;
            let confusion = ContingencyTable::from_labels(&truth, &result.assignments)?;
            Ok(PairwiseRun {
                family_a: families[i].clone(),
                family_b: families[j].clone(),
                ari: adjusted_rand_index(&confusion)?,
                confusion,
                result,
                vocabulary: vocab,
                uniform_fallbacks: vectors.iter().filter(|v| v.uniform_fallback).count(),
            })
        })?;
        let mut matrix = AriMatrix::identity(families.clone());
        for (run, &(i, j)) in runs.iter().zip(&pairs) {
            matrix.set(i, j, run.ari);
        }
        Ok(PairwiseOutcome { runs, matrix })
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyAriSummary {
    pub family: FamilyLabel,
    /// Sum of the off-diagonal entries of the family's row.
    pub total_ari: f64,
    /// `total_ari / (F - 1)`.
    pub average_ari: f64,
    /// `average_ari > 0.5`.
    pub high_flag: bool,
}

pub fn summarize_families(matrix: &AriMatrix) -> Vec<FamilyAriSummary> {
    let f = matrix.len();
    matrix
        .families()
        .iter()
        .enumerate()
        .map(|(i, family)| {
            let total: f64 = (0..f).filter(|&j| j != i).map(|j| matrix.get(i, j)).sum();
            let average = if f > 1 { total / (f - 1) as f64 } else { 0.0 };
            FamilyAriSummary {
                family: family.clone(),
                total_ari: total,
                average_ari: average,
                high_flag: average > HIGH_ARI_THRESHOLD,
            }
        })
        .collect()
}

/// Summary export: `family<TAB>total<TAB>average<TAB>high` rows.
pub fn summary_text(summaries: &[FamilyAriSummary], metadata: &[String]) -> String {
    let mut out = String::new();
    for line in metadata {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("family\ttotal_ari\taverage_ari\thigh\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{}",
            s.family.name,
            s.total_ari,
            s.average_ari,
            u8::from(s.high_flag)
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct SelectedOutcome {
    pub families: Vec<FamilyLabel>,
    pub result: ClusteringResult,
    pub report: MetricReport,
    /// Rows follow `families`.
    pub confusion: ContingencyTable,
    pub vocabulary: Vocabulary,
    pub uniform_fallbacks: usize,
}

/// Clusters the union of the named families and scores the clustering
/// against family membership. `k` defaults to the number of families.
pub fn run_selected(
    manifest: &Manifest,
    names: &[String],
    k: Option<usize>,
    config: &ExperimentConfig,
) -> Result<SelectedOutcome, ExperimentError> {
    config.ngram.validate()?;
    if names.is_empty() {
        return Err(ExperimentError::InvalidSelection("no families named".into()));
    }
    let mut labels: Vec<FamilyLabel> = Vec::new();
    for name in names {
        let label = manifest.family(name)?.clone();
        if labels.contains(&label) {
            return Err(ExperimentError::InvalidSelection(format!("{} is named twice", label.name)));
        }
        labels.push(label);
    }
    let kmeans_config = KMeansConfig {
        k: k.unwrap_or(labels.len()),
        ..config.kmeans
    };
    kmeans_config.validate()?;
    par::with_jobs(config.jobs, || {
        let data = load_families(manifest, &labels, config.ngram.n)?;
        let parts: Vec<&FamilyData> = data.iter().collect();
        let vocab = match config.ngram.scope {
            VocabScope::PerExperiment => merged_vocabulary(&parts, &config.ngram)?,
            VocabScope::Global => global_vocabulary(manifest, &config.ngram)?,
        };
        let (result, truth, vectors) = cluster_families(&parts, &vocab, &kmeans_config)?;
        let confusion = ContingencyTable::from_labels(&truth, &result.assignments)?;
        let report = if truth.len() >= 2 {
            MetricReport::from_table(&confusion)?
        } else {
            return Err(MetricError::TooFewPoints(truth.len()).into());
        };
        Ok(SelectedOutcome {
            families: labels.clone(),
            result,
            report,
            confusion,
            vocabulary: vocab,
            uniform_fallbacks: vectors.iter().filter(|v| v.uniform_fallback).count(),
        })
    })
}

/// Feature vectors for every selected sample, with the vocabulary built
/// from the selection (or the whole corpus in global scope).
pub fn corpus_points(
    manifest: &Manifest,
    selector: &Selector,
    config: &NGramConfig,
) -> Result<(PointSet, Vec<Sample>, Vocabulary), ExperimentError> {
    config.validate()?;
    let samples = manifest.load_samples(selector, config.n)?;
    if samples.is_empty() {
        return Err(FeatureError::EmptyCollection.into());
    }
    let vocab = match config.scope {
        VocabScope::PerExperiment => {
            let refs: Vec<&[u8]> = samples.iter().map(|s| s.bytes.as_slice()).collect();
            crate::features::build_vocabulary(&refs, config)?
        }
        VocabScope::Global => global_vocabulary(manifest, config)?,
    };
    let refs: Vec<&[u8]> = samples.iter().map(|s| s.bytes.as_slice()).collect();
    let vectors = vectorize_all(&refs, &vocab)?;
    let points = PointSet::from_rows(&vectors.iter().map(|v| v.values.as_slice()).collect::<Vec<_>>())?;
    Ok((points, samples, vocab))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElbowCurve {
    pub ks: Vec<usize>,
    /// Mean squared distance to the nearest centroid.
    pub distortion: Vec<f64>,
    /// Sum of squared distances to the nearest centroid.
    pub inertia: Vec<f64>,
    pub n: usize,
    /// Knee of the inertia curve; advisory only.
    pub suggested_k: usize,
}

impl ElbowCurve {
    /// Export: `k<TAB>distortion<TAB>inertia` rows.
    pub fn to_text(&self, metadata: &[String]) -> String {
        let mut out = String::new();
        for line in metadata {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "# n={}", self.n);
        let _ = writeln!(out, "# suggested_k={}", self.suggested_k);
        out.push_str("k\tdistortion\tinertia\n");
        for i in 0..self.ks.len() {
            let _ = writeln!(out, "{}\t{}\t{}", self.ks[i], self.distortion[i], self.inertia[i]);
        }
        out
    }
}

/// The k with the largest discrete second difference of inertia among
/// interior points of the curve; the smallest k when there are fewer than
/// three points.
pub fn knee(ks: &[usize], inertia: &[f64]) -> usize {
    let mut best = ks[0];
    let mut best_score = f64::NEG_INFINITY;
    for i in 1..ks.len().saturating_sub(1) {
        let score = inertia[i - 1] - 2.0 * inertia[i] + inertia[i + 1];
        if score > best_score {
            best_score = score;
            best = ks[i];
        }
    }
    best
}

/// Best-of-restarts inertia and distortion for every k in `ks`.
pub fn elbow(points: &PointSet, ks: &[usize], config: &KMeansConfig) -> Result<ElbowCurve, ExperimentError> {
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) || ks[0] == 0 {
        return Err(ExperimentError::InvalidSelection(
            "k range must be non-empty, ascending, and start at 1 or more".into(),
        ));
    }
    let n = points.len();
    let kmax = *ks.last().expect("non-empty");
    if kmax > n {
        return Err(KMeansError::TooFewPoints { n, k: kmax }.into());
    }
    let results: Vec<ClusteringResult> = ks
        .iter()
        .map(|&k| {
            kmeans::run(
                points,
                &KMeansConfig {
                    k,
                    seed: derive_seed(config.seed, &[k as u64]),
                    ..*config
                },
            )
        })
        .collect::<Result<_, _>>()?;
    let inertia: Vec<f64> = results.iter().map(|r| r.inertia).collect();
    let distortion: Vec<f64> = results.iter().map(|r| r.distortion_avg).collect();
    Ok(ElbowCurve {
        suggested_k: knee(ks, &inertia),
        ks: ks.to_vec(),
        distortion,
        inertia,
        n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationshipEdge {
    pub family: FamilyLabel,
    pub ari: f64,
    /// `ari > threshold`; drawn solid, otherwise dotted.
    pub strong: bool,
}

/// Edges from `focus` to every other family, strong when the ARI exceeds 0.5.
pub fn relationship_edges(matrix: &AriMatrix, focus: &str) -> Result<Vec<RelationshipEdge>, ExperimentError> {
    relationship_edges_at(matrix, focus, HIGH_ARI_THRESHOLD)
}

pub fn relationship_edges_at(
    matrix: &AriMatrix,
    focus: &str,
    threshold: f64,
) -> Result<Vec<RelationshipEdge>, ExperimentError> {
    let i = matrix.position(focus)?;
    Ok(matrix
        .families()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, f)| {
            let ari = matrix.get(i, j);
            RelationshipEdge {
                family: f.clone(),
                ari,
                strong: ari > threshold,
            }
        })
        .collect())
}

/// Display order of the confusion columns: greedily pair the largest
/// remaining cell's column with its row, so matched clusters line up on the
/// diagonal. Unmatched columns follow in label order. Display only; no score
/// depends on it.
pub fn align_columns(table: &ContingencyTable) -> Vec<usize> {
    let (r, s) = (table.rows(), table.cols());
    let mut cells: Vec<(u64, usize, usize)> = (0..r)
        .flat_map(|i| (0..s).map(move |j| (i, j)))
        .map(|(i, j)| (table.get(i, j), i, j))
        .collect();
    cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut row_of_col: Vec<Option<usize>> = vec![None; s];
    let mut row_used = vec![false; r];
    for (_, i, j) in cells {
        if !row_used[i] && row_of_col[j].is_none() {
            row_used[i] = true;
            row_of_col[j] = Some(i);
        }
    }
    let mut order: Vec<usize> = (0..s).filter(|&j| row_of_col[j].is_some()).collect();
    order.sort_by_key(|&j| row_of_col[j]);
    order.extend((0..s).filter(|&j| row_of_col[j].is_none()));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<FamilyLabel> {
        (0..n)
            .map(|i| FamilyLabel {
                name: format!("F{i}"),
                index: i,
                malware_type: MalwareType::Trojan,
            })
            .collect()
    }

    fn filled(n: usize, v: f64) -> AriMatrix {
        let mut m = AriMatrix::identity(labels(n));
        for i in 0..n {
            for j in i + 1..n {
                m.set(i, j, v);
            }
        }
        m
    }

    #[test]
    fn summaries_at_the_extremes() {
        for s in summarize_families(&filled(20, 1.0)) {
            assert_eq!(s.total_ari, 19.0);
            assert_eq!(s.average_ari, 1.0);
            assert!(s.high_flag);
        }
        for s in summarize_families(&filled(20, 0.0)) {
            assert_eq!(s.total_ari, 0.0);
            assert!(!s.high_flag);
        }
    }

    #[test]
    fn summary_threshold_flags_one_family() {
        let mut m = filled(4, 0.2);
        // row 0 averages 0.6; the others stay at or below 0.5
        m.set(0, 1, 0.6);
        m.set(0, 2, 0.6);
        m.set(0, 3, 0.6);
        let flags: Vec<bool> = summarize_families(&m).iter().map(|s| s.high_flag).collect();
        assert_eq!(flags, vec![true, false, false, false]);
        let s = &summarize_families(&m)[0];
        assert!((s.total_ari - 3.0 * s.average_ari).abs() < 1e-12);
    }

    #[test]
    fn edges_use_a_strict_threshold() {
        let edges = relationship_edges(&filled(20, 1.0), "F3").unwrap();
        assert_eq!(edges.len(), 19);
        assert!(edges.iter().all(|e| e.strong));
        let edges = relationship_edges(&filled(20, 0.5), "F3").unwrap();
        assert!(edges.iter().all(|e| !e.strong));
        let mut m = filled(3, 0.0);
        m.set(0, 1, 0.4);
        m.set(0, 2, 0.7);
        let strong: Vec<bool> = relationship_edges(&m, "F0").unwrap().iter().map(|e| e.strong).collect();
        assert_eq!(strong, vec![false, true]);
        assert_eq!(relationship_edges(&m, "Nope").unwrap_err().kind(), "UnknownFamily");
    }

    #[test]
    fn matrix_text_round_trip() {
        let mut m = filled(3, 0.25);
        m.set(1, 2, -0.125);
        let text = m.to_text(&["tool: test".into()]);
        assert!(text.contains("family\tF0\tF1\tF2\nF0\t1.0000\t0.2500\t0.2500\n"));
        let parsed = AriMatrix::parse_text(&text).unwrap();
        assert_eq!(parsed, m);
        assert!(AriMatrix::parse_text("family\tA\nA\t1\n").is_err());
    }

    #[test]
    fn knee_picks_the_sharpest_bend() {
        let ks: Vec<usize> = (1..=8).collect();
        let inertia = [100.0, 75.0, 50.0, 25.0, 5.0, 4.0, 3.5, 3.0];
        assert_eq!(knee(&ks, &inertia), 5);
        assert_eq!(knee(&[3], &[1.0]), 3);
    }

    #[test]
    fn elbow_checks_its_range() {
        let p = PointSet::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        let c = KMeansConfig::default();
        assert_eq!(elbow(&p, &[1, 2, 4], &c).unwrap_err().kind(), "TooFewPoints");
        assert_eq!(elbow(&p, &[2, 1], &c).unwrap_err().kind(), "InvalidSelection");
        let curve = elbow(&p, &[3], &c).unwrap();
        assert_eq!(curve.inertia, vec![0.0]);
    }

    #[test]
    fn alignment_puts_matches_on_the_diagonal() {
        let t = ContingencyTable::from_counts(2, vec![3, 40, 50, 1]);
        assert_eq!(align_columns(&t), vec![1, 0]);
        let t = ContingencyTable::from_counts(2, vec![5, 0, 1, 0, 5, 0]);
        assert_eq!(align_columns(&t), vec![0, 1, 2]);
    }
}
