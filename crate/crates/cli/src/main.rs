//! `malclust`: command-line driver for the clustering pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use malclust::features::{NGramConfig, VocabScope};
use malclust::kmeans::{Init, KMeansConfig};
use malclust::par::Jobs;
use malclust::pipeline::{self, PipelineError, RunContext, SynthPreset};
use malclust::experiments::ExperimentConfig;
use malclust::Selector;

#[derive(Parser, Debug)]
#[command(name = "malclust", version, about = "Byte n-gram K-means cluster exploration of labeled binary corpora")]
struct Cli {
    /// TOML file supplying defaults for any flag; flags on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the n-gram vocabulary and the feature matrix.
    Extract(ExtractArgs),
    /// Cluster every pair of families with k = 2.
    Pairwise(PairwiseArgs),
    /// Inertia and distortion over a range of k.
    Elbow(ElbowArgs),
    /// Cluster a chosen set of families together.
    Select(SelectArgs),
    /// Relationship graph of one family from a saved ARI matrix.
    Graph(GraphArgs),
    /// Write a synthetic labeled corpus.
    Synth(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum ScopeArg {
    Pair,
    Global,
}

#[derive(ValueEnum, Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum InitArg {
    Pp,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum PresetArg {
    Reference,
    Separated,
    Pair,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct Features {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// n-gram order (1 to 4).
    #[arg(long)]
    n: Option<usize>,
    /// Vocabulary size.
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long, value_enum)]
    vocab_scope: Option<ScopeArg>,
}

#[derive(Args, Debug, Default)]
struct Clustering {
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    features: Features,
    /// Restrict to these families (comma separated).
    #[arg(long, value_delimiter = ',')]
    families: Vec<String>,
}

#[derive(Args, Debug)]
struct PairwiseArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    features: Features,
    #[command(flatten)]
    clustering: Clustering,
}

#[derive(Args, Debug)]
struct ElbowArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    features: Features,
    #[command(flatten)]
    clustering: Clustering,
    #[arg(long)]
    kmin: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    /// Restrict to these families (comma separated).
    #[arg(long, value_delimiter = ',')]
    families: Vec<String>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    features: Features,
    #[command(flatten)]
    clustering: Clustering,
    /// Families to cluster together (comma separated).
    #[arg(long, value_delimiter = ',')]
    families: Vec<String>,
    /// Number of clusters; defaults to the number of families.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct GraphArgs {
    #[command(flatten)]
    common: Common,
    /// ARI matrix written by `pairwise`.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    focus: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Number of families (reference and separated presets).
    #[arg(long)]
    families: Option<usize>,
    #[arg(long)]
    per_family: Option<usize>,
    /// Shared gram mass of the two-family preset; implies `--preset pair`.
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

/// Optional defaults read from `--config`.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    jobs: Option<usize>,
    n: Option<usize>,
    vocab: Option<usize>,
    vocab_scope: Option<ScopeArg>,
    k: Option<usize>,
    restarts: Option<usize>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    init: Option<InitArg>,
    families: Option<Vec<String>>,
    focus: Option<String>,
    kmin: Option<usize>,
    kmax: Option<usize>,
    matrix: Option<PathBuf>,
    overlap: Option<f64>,
    per_family: Option<usize>,
    preset: Option<PresetArg>,
    family_count: Option<usize>,
    min_len: Option<usize>,
    max_len: Option<usize>,
}

/// Effective settings after merging flags over the config file, with the
/// flag list recorded in every output header.
struct Resolved<'a> {
    file: &'a FileConfig,
    flags: Vec<(String, String)>,
}

impl<'a> Resolved<'a> {
    fn new(file: &'a FileConfig) -> Self {
        Resolved { file, flags: Vec::new() }
    }

    fn pick<T: Clone + ToString>(&mut self, name: &str, flag: Option<T>, file: Option<T>, default: T) -> T {
        let v = flag.or(file).unwrap_or(default);
        self.flags.push((name.to_string(), v.to_string()));
        v
    }

    fn required<T: Clone>(&self, name: &str, flag: Option<T>, file: Option<T>) -> Result<T, PipelineError> {
        flag.or(file)
            .ok_or_else(|| PipelineError::Usage(format!("--{name} is required")))
    }

    fn ngram(&mut self, f: &Features) -> NGramConfig {
        let file = self.file;
        let n = self.pick("n", f.n, file.n, 2);
        let vocab_size = self.pick("vocab", f.vocab, file.vocab, 20);
        let scope = f.vocab_scope.or(file.vocab_scope).unwrap_or(ScopeArg::Pair);
        self.flags.push((
            "vocab-scope".into(),
            if scope == ScopeArg::Pair { "pair" } else { "global" }.into(),
        ));
        NGramConfig {
            n,
            vocab_size,
            scope: match scope {
                ScopeArg::Pair => VocabScope::PerExperiment,
                ScopeArg::Global => VocabScope::Global,
            },
        }
    }

    fn kmeans(&mut self, c: &Clustering, seed: u64) -> KMeansConfig {
        let file = self.file;
        let defaults = KMeansConfig::default();
        let restarts = self.pick("restarts", c.restarts, file.restarts, defaults.restarts);
        let max_iters = self.pick("max-iters", c.max_iters, file.max_iters, defaults.max_iters);
        let tol = self.pick("tol", c.tol, file.tol, defaults.tol);
        let init = c.init.or(file.init).unwrap_or(InitArg::Pp);
        self.flags.push((
            "init".into(),
            if init == InitArg::Pp { "pp" } else { "random" }.into(),
        ));
        KMeansConfig {
            k: defaults.k,
            max_iters,
            tol,
            restarts,
            init: match init {
                InitArg::Pp => Init::PlusPlus,
                InitArg::Random => Init::RandomPartition,
            },
            seed,
        }
    }

    fn manifest(&mut self, f: &Features) -> Result<PathBuf, PipelineError> {
        let m = self.required("manifest", f.manifest.clone(), self.file.manifest.clone())?;
        self.flags.push(("manifest".into(), m.display().to_string()));
        Ok(m)
    }

    fn seed(&mut self, c: &Common) -> u64 {
        self.pick("seed", c.seed, self.file.seed, 0)
    }

    fn out(&self, c: &Common) -> PathBuf {
        c.out.clone().or(self.file.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
    }

    fn jobs(&self, c: &Common) -> Jobs {
        Jobs::from_count(c.jobs.or(self.file.jobs))
    }
}

fn selector(families: &[String]) -> Selector {
    if families.is_empty() {
        Selector::All
    } else {
        Selector::Families(families.to_vec())
    }
}

fn families_or_file(flag: &[String], file: &FileConfig) -> Vec<String> {
    if flag.is_empty() {
        file.families.clone().unwrap_or_default()
    } else {
        flag.to_vec()
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, PipelineError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| PipelineError::Usage(format!("config {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let file = load_config(cli.config.as_deref())?;
    let mut r = Resolved::new(&file);
    match cli.command {
        Command::Extract(a) => {
            let manifest = r.manifest(&a.features)?;
            let ngram = r.ngram(&a.features);
            let families = families_or_file(&a.families, &file);
            if !families.is_empty() {
                r.flags.push(("families".into(), families.join(",")));
            }
            let config = ExperimentConfig {
                ngram,
                jobs: r.jobs(&a.common),
                ..Default::default()
            };
            let ctx = RunContext::new(r.out(&a.common), "extract", &r.flags);
            let report = pipeline::cmd_extract(&manifest, &selector(&families), &config, &ctx)?;
            println!(
                "extracted {} samples over {} grams; {} without any vocabulary gram",
                report.rows.len(),
                report.vocabulary.len(),
                report.rows.iter().filter(|r| r.vector.uniform_fallback).count()
            );
            print_files(&report.files);
        }
        Command::Pairwise(a) => {
            let manifest = r.manifest(&a.features)?;
            let ngram = r.ngram(&a.features);
            let seed = r.seed(&a.common);
            let kmeans = r.kmeans(&a.clustering, seed);
            let config = ExperimentConfig {
                ngram,
                kmeans,
                jobs: r.jobs(&a.common),
            };
            let ctx = RunContext::new(r.out(&a.common), "pairwise", &r.flags);
            let report = pipeline::cmd_pairwise(&manifest, &config, &ctx)?;
            println!("{} pairwise runs", report.outcome.runs.len());
            for s in &report.summaries {
                println!(
                    "{:>3} {:<16} total {:>8.4} average {:>7.4}{}",
                    s.family.index,
                    s.family.name,
                    s.total_ari,
                    s.average_ari,
                    if s.high_flag { "  high" } else { "" }
                );
            }
            println!("{} files written under {}", report.files.len(), ctx.out.display());
        }
        Command::Elbow(a) => {
            let manifest = r.manifest(&a.features)?;
            let ngram = r.ngram(&a.features);
            let seed = r.seed(&a.common);
            let kmeans = r.kmeans(&a.clustering, seed);
            let kmin = r.pick("kmin", a.kmin, file.kmin, 1);
            let kmax = r.pick("kmax", a.kmax, file.kmax, 10);
            let families = families_or_file(&a.families, &file);
            if !families.is_empty() {
                r.flags.push(("families".into(), families.join(",")));
            }
            let config = ExperimentConfig {
                ngram,
                kmeans,
                jobs: r.jobs(&a.common),
            };
            let ctx = RunContext::new(r.out(&a.common), "elbow", &r.flags);
            let report = pipeline::cmd_elbow(&manifest, &selector(&families), kmin, kmax, &config, &ctx)?;
            println!("k\tdistortion\tinertia");
            for i in 0..report.curve.ks.len() {
                println!(
                    "{}\t{:.6}\t{:.6}",
                    report.curve.ks[i], report.curve.distortion[i], report.curve.inertia[i]
                );
            }
            println!("suggested_k={}", report.curve.suggested_k);
            print_files(&report.files);
        }
        Command::Select(a) => {
            let manifest = r.manifest(&a.features)?;
            let ngram = r.ngram(&a.features);
            let seed = r.seed(&a.common);
            let kmeans = r.kmeans(&a.clustering, seed);
            let families = families_or_file(&a.families, &file);
            if families.is_empty() {
                return Err(PipelineError::Usage("--families is required".into()));
            }
            r.flags.push(("families".into(), families.join(",")));
            let k = a.k.or(file.k);
            r.flags.push(("k".into(), k.map_or_else(|| "auto".into(), |k| k.to_string())));
            let config = ExperimentConfig {
                ngram,
                kmeans,
                jobs: r.jobs(&a.common),
            };
            let ctx = RunContext::new(r.out(&a.common), "select", &r.flags);
            let report = pipeline::cmd_select(&manifest, &families, k, &config, &ctx)?;
            println!("k={}", report.outcome.result.k);
            print!("{}", report.outcome.report.to_text());
            print_files(&report.files);
        }
        Command::Graph(a) => {
            let matrix = r.required("matrix", a.matrix.clone(), file.matrix.clone())?;
            r.flags.push(("matrix".into(), matrix.display().to_string()));
            let focus = r.required("focus", a.focus.clone(), file.focus.clone())?;
            r.flags.push(("focus".into(), focus.clone()));
            let seed = r.seed(&a.common);
            let ctx = RunContext::new(r.out(&a.common), "graph", &r.flags);
            let report = pipeline::cmd_graph(&matrix, &focus, seed, &ctx)?;
            for e in &report.edges {
                println!(
                    "{:<16} {:>7.4} {}",
                    e.family.name,
                    e.ari,
                    if e.strong { "solid" } else { "dotted" }
                );
            }
            print_files(&report.files);
        }
        Command::Synth(a) => {
            let seed = r.seed(&a.common);
            let overlap = a.overlap.or(file.overlap);
            let preset = match (a.preset.or(file.preset), overlap) {
                (None, Some(_)) | (Some(PresetArg::Pair), _) => PresetArg::Pair,
                (Some(p), None) => p,
                (None, None) => PresetArg::Reference,
                (Some(_), Some(_)) => {
                    return Err(PipelineError::Usage("--overlap only applies to --preset pair".into()))
                }
            };
            let preset = match preset {
                PresetArg::Pair => {
                    let overlap = r.pick("overlap", overlap, None, 0.0);
                    SynthPreset::Pair { overlap }
                }
                PresetArg::Reference => SynthPreset::Reference {
                    families: r.pick("families", a.families, file.family_count, 20),
                },
                PresetArg::Separated => SynthPreset::Separated {
                    families: r.pick("families", a.families, file.family_count, 5),
                },
            };
            let per_family = r.pick("per-family", a.per_family, file.per_family, 50);
            let len_range = match (a.min_len.or(file.min_len), a.max_len.or(file.max_len)) {
                (None, None) => None,
                (lo, hi) => {
                    let (dlo, dhi) = malclust::synth::DEFAULT_LEN_RANGE;
                    let lo = r.pick("min-len", lo, None, dlo);
                    let hi = r.pick("max-len", hi, None, dhi.max(lo));
                    Some((lo, hi))
                }
            };
            let ctx = RunContext::new(r.out(&a.common), "synth", &r.flags);
            let report = malclust::par::with_jobs(r.jobs(&a.common), || {
                pipeline::cmd_synth(preset, per_family, seed, len_range, &ctx)
            })?;
            println!(
                "wrote {} samples in {} families; manifest {}",
                report.manifest.len(),
                report.manifest.families().len(),
                ctx.out.join(malclust::synth::MANIFEST_FILE).display()
            );
        }
    }
    Ok(())
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string();
            if message.starts_with(e.kind()) {
                eprintln!("malclust: {message}");
            } else {
                eprintln!("malclust: {}: {message}", e.kind());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
