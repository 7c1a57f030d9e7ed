//! The subcommands behind the command-line tool, as library functions that
//! read inputs, run an experiment, and write every artifact under an output
//! directory.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{CorpusError, Manifest, Selector};
use crate::experiments::{
    self, corpus_points, relationship_edges_at, run_pairwise, run_selected, summarize_families, summary_text,
    AriMatrix, ElbowCurve, ExperimentConfig, ExperimentError, PairwiseOutcome, SelectedOutcome,
};
use crate::features::{feature_matrix_text, vectorize_all, FeatureError, FeatureRow, VocabScope, Vocabulary};
use crate::render::{self, artifact_name, write_artifact, BarMode, GraphStyle, RenderError};
use crate::synth::{self, SynthError};
use crate::TOOL_VERSION;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("Usage: {0}")]
    Usage(String),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Corpus(e) => e.kind(),
            PipelineError::Feature(e) => e.kind(),
            PipelineError::Experiment(e) => e.kind(),
            PipelineError::Render(e) => e.kind(),
            PipelineError::Synth(e) => e.kind(),
            PipelineError::Usage(_) => "Usage",
        }
    }

    /// 1 for usage errors, 2 for bad input data, 3 for failures writing
    /// output.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Render(RenderError::Io { .. }) | PipelineError::Synth(SynthError::Io { .. }) => 3,
            PipelineError::Feature(FeatureError::InvalidConfig(_)) => 1,
            PipelineError::Experiment(ExperimentError::Feature(FeatureError::InvalidConfig(_))) => 1,
            _ => 2,
        }
    }
}

/// Where artifacts go and what every artifact header records.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub out: PathBuf,
    pub metadata: Vec<String>,
}

impl RunContext {
    /// Header lines: tool version, command, and the full flag set in the
    /// order given. Flags that cannot change results (output location,
    /// parallelism) should be left out so reruns compare byte for byte.
    pub fn new(out: impl Into<PathBuf>, command: &str, flags: &[(String, String)]) -> Self {
        let mut metadata = vec![format!("tool: {TOOL_VERSION}"), format!("command: {command}")];
        for (k, v) in flags {
            metadata.push(format!("flag: --{k} {v}"));
        }
        RunContext {
            out: out.into(),
            metadata,
        }
    }

    fn with(&self, extra: &[String]) -> Vec<String> {
        let mut lines = self.metadata.clone();
        lines.extend_from_slice(extra);
        lines
    }

    fn write(&self, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
        let path = self.out.join(name);
        write_artifact(&path, contents)?;
        written.push(path);
        Ok(())
    }
}

fn feature_params(config: &ExperimentConfig) -> String {
    let scope = match config.ngram.scope {
        VocabScope::PerExperiment => "pair",
        VocabScope::Global => "global",
    };
    format!("n{}v{}{}", config.ngram.n, config.ngram.vocab_size, scope)
}

fn kmeans_lines(config: &ExperimentConfig, k: &str) -> Vec<String> {
    let c = &config.kmeans;
    vec![format!(
        "kmeans: k={k} restarts={} max_iters={} tol={} init={:?} seed={}",
        c.restarts, c.max_iters, c.tol, c.init, c.seed
    )]
}

pub struct ExtractReport {
    pub vocabulary: Vocabulary,
    pub rows: Vec<FeatureRow>,
    pub files: Vec<PathBuf>,
}

/// Builds the vocabulary over the selected samples and writes it together
/// with the feature matrix.
pub fn cmd_extract(
    manifest: &Path,
    selector: &Selector,
    config: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<ExtractReport, PipelineError> {
    config.ngram.validate()?;
    let manifest = Manifest::load(manifest)?;
    let (vocabulary, samples) = crate::par::with_jobs(config.jobs, || -> Result<_, PipelineError> {
        let (_, samples, vocab) = corpus_points(&manifest, selector, &config.ngram)?;
        Ok((vocab, samples))
    })?;
    let bytes: Vec<&[u8]> = samples.iter().map(|s| s.bytes.as_slice()).collect();
    let vectors = crate::par::with_jobs(config.jobs, || vectorize_all(&bytes, &vocabulary))?;
    let rows: Vec<FeatureRow> = samples
        .iter()
        .zip(vectors)
        .map(|(s, vector)| FeatureRow {
            path: s.path.strip_prefix(manifest.root()).unwrap_or(&s.path).to_path_buf(),
            family: s.family.name.clone(),
            vector,
        })
        .collect();
    let params = feature_params(config);
    let mut files = Vec::new();
    ctx.write(
        &artifact_name("extract", "vocab", &params, "txt"),
        &vocabulary.to_text(&ctx.metadata),
        &mut files,
    )?;
    ctx.write(
        &artifact_name("extract", "features", &params, "tsv"),
        &feature_matrix_text(&rows, &ctx.metadata),
        &mut files,
    )?;
    Ok(ExtractReport {
        vocabulary,
        rows,
        files,
    })
}

pub struct PairwiseReport {
    pub outcome: PairwiseOutcome,
    pub summaries: Vec<experiments::FamilyAriSummary>,
    pub files: Vec<PathBuf>,
}

/// All pairwise runs, the ARI matrix and per-family summaries, one
/// confusion table and figure per pair, the heatmap, and both bar charts.
pub fn cmd_pairwise(manifest: &Path, config: &ExperimentConfig, ctx: &RunContext) -> Result<PairwiseReport, PipelineError> {
    let manifest = Manifest::load(manifest)?;
    let outcome = run_pairwise(&manifest, config)?;
    let summaries = summarize_families(&outcome.matrix);
    let params = feature_params(config);
    let meta = ctx.with(&kmeans_lines(config, "2"));
    let mut files = Vec::new();
    ctx.write(
        &artifact_name("pairwise", "matrix", &params, "tsv"),
        &outcome.matrix.to_text(&meta),
        &mut files,
    )?;
    ctx.write(
        &artifact_name("pairwise", "summary", &params, "tsv"),
        &summary_text(&summaries, &meta),
        &mut files,
    )?;
    ctx.write(
        &artifact_name("pairwise", "runs", &params, "tsv"),
        &runs_text(&outcome, &meta),
        &mut files,
    )?;
    ctx.write(
        &artifact_name("pairwise", "heatmap", &params, "svg"),
        &render::render_heatmap(&outcome.matrix, &meta),
        &mut files,
    )?;
    ctx.write(
        &artifact_name("pairwise", "bars", &format!("total_{params}"), "svg"),
        &render::render_bars(&summaries, BarMode::Total, &meta),
        &mut files,
    )?;
    ctx.write(
        &artifact_name("pairwise", "bars", &format!("average_{params}"), "svg"),
        &render::render_bars(&summaries, BarMode::Average, &meta),
        &mut files,
    )?;
    for run in &outcome.runs {
        let pair = format!("{}-{}_{params}", run.family_a.index, run.family_b.index);
        let names = vec![run.family_a.name.clone(), run.family_b.name.clone()];
        let mut pair_meta = meta.clone();
        pair_meta.push(format!(
            "pair: {} vs {} seed={} ari={:.6}",
            run.family_a.name, run.family_b.name, run.result.seed, run.ari
        ));
        ctx.write(
            &format!("confusion/{}", artifact_name("pairwise", "confusion", &pair, "tsv")),
            &run.confusion.to_text(&names, &pair_meta),
            &mut files,
        )?;
        ctx.write(
            &format!("confusion/{}", artifact_name("pairwise", "confusion", &pair, "svg")),
            &render::render_confusion(&run.confusion, &names, &pair_meta),
            &mut files,
        )?;
    }
    Ok(PairwiseReport {
        outcome,
        summaries,
        files,
    })
}

fn runs_text(outcome: &PairwiseOutcome, metadata: &[String]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for line in metadata {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("family_a\tfamily_b\tari\tinertia\titerations\trestart\tstop\tseed\tuniform_fallback_rows\n");
    for r in &outcome.runs {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.family_a.name,
            r.family_b.name,
            r.ari,
            r.result.inertia,
            r.result.iterations,
            r.result.restart_index,
            r.result.stop.name(),
            r.result.seed,
            r.uniform_fallbacks
        );
    }
    out
}

pub struct ElbowReport {
    pub curve: ElbowCurve,
    pub files: Vec<PathBuf>,
}

/// Inertia and distortion for every k in `kmin..=kmax` over the selected
/// samples.
pub fn cmd_elbow(
    manifest: &Path,
    selector: &Selector,
    kmin: usize,
    kmax: usize,
    config: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<ElbowReport, PipelineError> {
    if kmin == 0 || kmin > kmax {
        return Err(PipelineError::Usage(format!("invalid k range {kmin}..={kmax}")));
    }
    let manifest = Manifest::load(manifest)?;
    let ks: Vec<usize> = (kmin..=kmax).collect();
    let curve = crate::par::with_jobs(config.jobs, || -> Result<ElbowCurve, ExperimentError> {
        let (points, _, _) = corpus_points(&manifest, selector, &config.ngram)?;
        experiments::elbow(&points, &ks, &config.kmeans)
    })?;
    let params = format!("k{kmin}-{kmax}_{}", feature_params(config));
    let meta = ctx.with(&kmeans_lines(config, &format!("{kmin}..={kmax}")));
    let mut files = Vec::new();
    ctx.write(&artifact_name("elbow", "curve", &params, "tsv"), &curve.to_text(&meta), &mut files)?;
    ctx.write(
        &artifact_name("elbow", "plot", &params, "svg"),
        &render::render_elbow(&curve, &meta),
        &mut files,
    )?;
    Ok(ElbowReport { curve, files })
}

pub struct SelectReport {
    pub outcome: SelectedOutcome,
    pub files: Vec<PathBuf>,
}

/// Clusters the named families together and writes the clustering, the
/// metric report, and the confusion table and figure.
pub fn cmd_select(
    manifest: &Path,
    families: &[String],
    k: Option<usize>,
    config: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<SelectReport, PipelineError> {
    let manifest = Manifest::load(manifest)?;
    let outcome = run_selected(&manifest, families, k, config)?;
    let k = outcome.result.k;
    let params = format!("k{k}_{}", feature_params(config));
    let mut meta = ctx.with(&kmeans_lines(config, &k.to_string()));
    meta.push(format!(
        "families: {}",
        outcome.families.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join(",")
    ));
    let names: Vec<String> = outcome.families.iter().map(|f| f.name.clone()).collect();
    let mut files = Vec::new();
    let mut report = String::new();
    for line in &meta {
        report.push_str(&format!("# {line}\n"));
    }
    report.push_str(&outcome.report.to_text());
    ctx.write(&artifact_name("select", "metrics", &params, "txt"), &report, &mut files)?;
    ctx.write(
        &artifact_name("select", "clustering", &params, "txt"),
        &outcome.result.to_text(&meta),
        &mut files,
    )?;
    ctx.write(
        &artifact_name("select", "confusion", &params, "tsv"),
        &outcome.confusion.to_text(&names, &meta),
        &mut files,
    )?;
    ctx.write(
        &artifact_name("select", "confusion", &params, "svg"),
        &render::render_confusion(&outcome.confusion, &names, &meta),
        &mut files,
    )?;
    Ok(SelectReport { outcome, files })
}

pub struct GraphReport {
    pub edges: Vec<experiments::RelationshipEdge>,
    pub layout: Vec<render::LayoutPoint>,
    pub files: Vec<PathBuf>,
}

/// Relationship graph of one family against all others from a saved
/// matrix: layout SVG, DOT file, and an edge list.
pub fn cmd_graph(matrix_path: &Path, focus: &str, seed: u64, ctx: &RunContext) -> Result<GraphReport, PipelineError> {
    let text = std::fs::read_to_string(matrix_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile {
                path: matrix_path.to_path_buf(),
            }
        } else {
            CorpusError::Io {
                path: matrix_path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let matrix = AriMatrix::parse_text(&text)?;
    graph_from_matrix(&matrix, focus, seed, ctx)
}

pub fn graph_from_matrix(matrix: &AriMatrix, focus: &str, seed: u64, ctx: &RunContext) -> Result<GraphReport, PipelineError> {
    let position = matrix.position(focus)?;
    let focus_label = matrix.families()[position].clone();
    let style = GraphStyle::new(focus_label.clone(), seed);
    let edges = relationship_edges_at(matrix, focus, style.threshold)?;
    let graph = render::focus_graph(matrix, position);
    let layout = render::layout_force_directed(matrix.families(), &graph, &style)?;
    let meta = ctx.with(&[style.describe()]);
    let params = format!("{}_s{seed}", focus_label.index);
    let mut files = Vec::new();
    ctx.write(
        &artifact_name("graph", "layout", &params, "svg"),
        &render::render_graph(&layout, &graph, &style, &meta),
        &mut files,
    )?;
    ctx.write(
        &artifact_name("graph", "relations", &params, "dot"),
        &render::export_graph_dot(matrix.families(), &graph, Some(&layout), &style, &meta),
        &mut files,
    )?;
    let mut listing = String::new();
    for line in &meta {
        listing.push_str(&format!("# {line}\n"));
    }
    listing.push_str("family\tari\tedge\tx\ty\n");
    for e in &edges {
        let p = layout.iter().find(|p| p.node == e.family).expect("every node is laid out");
        listing.push_str(&format!(
            "{}\t{:.4}\t{}\t{:.6}\t{:.6}\n",
            e.family.name,
            e.ari,
            if e.strong { "solid" } else { "dotted" },
            p.x,
            p.y
        ));
    }
    ctx.write(&artifact_name("graph", "edges", &params, "tsv"), &listing, &mut files)?;
    Ok(GraphReport { edges, layout, files })
}

/// Which generator set `cmd_synth` writes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthPreset {
    /// Families named after the reference taxonomy with type-level overlap.
    Reference { families: usize },
    /// Families with disjoint gram supports.
    Separated { families: usize },
    /// Two families sharing `overlap` of their gram mass.
    Pair { overlap: f64 },
}

pub struct SynthReport {
    pub manifest: Manifest,
    pub generators: Vec<synth::FamilyGenerator>,
}

pub fn cmd_synth(
    preset: SynthPreset,
    per_family: usize,
    seed: u64,
    len_range: Option<(usize, usize)>,
    ctx: &RunContext,
) -> Result<SynthReport, PipelineError> {
    let mut generators = match preset {
        SynthPreset::Reference { families } => synth::reference_generators(families, seed)?,
        SynthPreset::Separated { families } => synth::separated_generators(families, seed)?,
        SynthPreset::Pair { overlap } => {
            let (a, b) = synth::make_pair(overlap, seed)?;
            vec![a, b]
        }
    };
    if let Some((lo, hi)) = len_range {
        generators = generators.into_iter().map(|g| g.with_len_range(lo, hi)).collect();
    }
    let manifest = synth::generate_corpus(&generators, per_family, &ctx.out, &ctx.metadata)?;
    Ok(SynthReport { manifest, generators })
}
