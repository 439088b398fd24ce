//! Command-line front end. Exit codes: 0 success, 1 input or validation
//! error, 2 internal error.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpusprep::{self, CleanConfig, ParallelCorpus, PartitionPlan, PlanLevel};
use crate::embstore::{read_embeddings, validate_file, write_embeddings};
use crate::error::{Error, Result};
use crate::evaluation::{contingency, layer_sweep, purity, write_confusion_tsv, write_json};
use crate::kmeans::{self, ClusterAssignment, KMeansConfig, KMeansModel};
use crate::pipeline::{self, AdaptConfig, AnalyzeConfig};
use crate::pooling::pool_documents;
use crate::projection::{PcaOptions, DEFAULT_SAMPLE_CAP};
use crate::router::{self, RoutingTable, ROUTE_TSV_HEADER};

#[derive(Debug, Parser)]
#[command(
    name = "domclust",
    version,
    about = "Discover text domains in encoder representations and partition corpora by them"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct FitArgs {
    /// Number of clusters.
    #[arg(long)]
    pub k: usize,
    /// Independent k-means++ restarts; the lowest-inertia fit wins.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    /// Relative inertia improvement below which a restart stops.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Cluster raw vectors instead of L2-normalized ones.
    #[arg(long)]
    pub no_normalize: bool,
}

impl FitArgs {
    fn config(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            restarts: self.restarts,
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            normalize: !self.no_normalize,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an embedding file and its metadata sidecar; diagnostics go to stderr.
    Validate { file: PathBuf },
    /// Average sentence vectors into one vector per document.
    PoolDocs { input: PathBuf, output: PathBuf },
    /// Fit k-means (best of several restarts) and save the model as JSON.
    KmeansFit {
        #[command(flatten)]
        fit: FitArgs,
        input: PathBuf,
        model: PathBuf,
    },
    /// Label embeddings with their nearest centroid (item_id, cluster, sqdist TSV).
    KmeansAssign {
        model: PathBuf,
        input: PathBuf,
        labels: PathBuf,
    },
    /// Cosine PCA projection to a TSV of coordinates plus a ratios sidecar.
    Pca {
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_CAP)]
        sample_cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        input: PathBuf,
        output: PathBuf,
    },
    /// Clustering purity against oracle domains, from a model or a labels TSV.
    Purity {
        /// `model.json` (assigns first) or `labels.tsv`.
        labels_or_model: PathBuf,
        input: PathBuf,
        report: PathBuf,
    },
    /// Cluster x domain table as per-domain column percentages.
    Confusion {
        labels: PathBuf,
        input: PathBuf,
        table: PathBuf,
    },
    /// Purity per layer file, in the order given; the last path is the report.
    LayerSweep {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(num_args = 2.., required = true)]
        paths: Vec<PathBuf>,
    },
    /// Drop empty, overlong, length-mismatched and mostly non-alphabetic pairs.
    Clean {
        #[arg(long, default_value_t = 100)]
        max_tokens: usize,
        #[arg(long, default_value_t = 9.0)]
        ratio: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha_frac: f64,
        input: PathBuf,
        output: PathBuf,
    },
    /// Remove evaluation pairs that also occur in training.
    DedupEval {
        train: PathBuf,
        eval: PathBuf,
        output: PathBuf,
    },
    /// Train/dev/test split that keeps every document in one part.
    SplitDocs {
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        input: PathBuf,
        out_dir: PathBuf,
    },
    /// Uniform sample of a fixed number of pairs per domain.
    Sample {
        #[arg(long)]
        per_domain: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        input: PathBuf,
        output: PathBuf,
    },
    /// Write one sub-corpus per cluster plus manifest.json.
    Partition {
        /// Corpus prefix.
        #[arg(long)]
        corpus: PathBuf,
        /// `document` when labels are keyed by doc_id.
        #[arg(long, value_enum, default_value = "sentence")]
        level: LevelArg,
        /// Number of clusters; defaults to the largest label + 1.
        #[arg(long)]
        k: Option<usize>,
        labels: PathBuf,
        out_dir: PathBuf,
    },
    /// Pick the cluster-specific model for each embedding.
    Route {
        /// Read length-prefixed records from stdin, one decision per line on stdout.
        #[arg(long)]
        stream: bool,
        /// Write the TSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        model: PathBuf,
        routing: PathBuf,
        #[arg(required_unless_present = "stream")]
        input: Option<PathBuf>,
    },
    /// Layer sweep, best-layer confusion and PCA export into a bundle directory.
    Analyze {
        config: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster a corpus, partition it per cluster and emit model + routing skeleton.
    Adapt {
        config: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        level: Option<LevelArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum LevelArg {
    Sentence,
    Document,
}

impl From<LevelArg> for PlanLevel {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Sentence => PlanLevel::Sentence,
            LevelArg::Document => PlanLevel::Document,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_labels_or_assign(
    path: &Path,
    data: &crate::embstore::EmbeddingSet,
) -> Result<ClusterAssignment> {
    if path.extension().is_some_and(|e| e == "json") {
        let model = KMeansModel::load(path)?;
        kmeans::assign(&model, data)
    } else {
        ClusterAssignment::read_tsv(path)
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Validate { file } => {
            let s = validate_file(&file)?;
            eprintln!(
                "{}: ok ({} records, dim {})",
                file.display(),
                s.count,
                s.dim
            );
        }
        Command::PoolDocs { input, output } => {
            let set = read_embeddings(&input)?;
            let pooled = pool_documents(&set)?;
            write_embeddings(&pooled, &output)?;
            eprintln!("{} sentences -> {} documents", set.len(), pooled.len());
        }
        Command::KmeansFit { fit, input, model } => {
            let set = read_embeddings(&input)?;
            let (m, trace) = kmeans::fit_with_trace(&set, &fit.config())?;
            m.save(&model)?;
            eprintln!("{}", kmeans::describe(&m, &trace));
        }
        Command::KmeansAssign {
            model,
            input,
            labels,
        } => {
            let m = KMeansModel::load(&model)?;
            let set = read_embeddings(&input)?;
            kmeans::assign(&m, &set)?.write_tsv(&labels)?;
        }
        Command::Pca {
            dims,
            sample_cap,
            seed,
            input,
            output,
        } => {
            let set = read_embeddings(&input)?;
            let ratios =
                pipeline::write_pca(&set, dims, &PcaOptions { sample_cap, seed }, &output)?;
            eprintln!("explained variance ratio: {ratios:?}");
        }
        Command::Purity {
            labels_or_model,
            input,
            report,
        } => {
            let set = read_embeddings(&input)?;
            let labels = read_labels_or_assign(&labels_or_model, &set)?;
            let r = purity(&contingency(&labels, &set)?)?;
            write_json(&r, &report)?;
            eprintln!(
                "purity (majority) {:.4}, purity (matched) {:.4}",
                r.purity_majority, r.purity_matched
            );
        }
        Command::Confusion {
            labels,
            input,
            table,
        } => {
            let set = read_embeddings(&input)?;
            let labels = ClusterAssignment::read_tsv(&labels)?;
            let r = purity(&contingency(&labels, &set)?)?;
            write_confusion_tsv(&r, &set.meta.domain_names, &table)?;
        }
        Command::LayerSweep { fit, mut paths } => {
            let report = paths.pop().expect("clap enforces two paths");
            let sweep = layer_sweep(&paths, &fit.config())?;
            for l in &sweep.layers {
                eprintln!(
                    "layer {:>2} ({}): purity {:.4} / matched {:.4}",
                    l.layer,
                    l.file.display(),
                    l.report.purity_majority,
                    l.report.purity_matched
                );
            }
            write_json(&sweep, &report)?;
        }
        Command::Clean {
            max_tokens,
            ratio,
            alpha_frac,
            input,
            output,
        } => {
            let corpus = ParallelCorpus::read(&input)?;
            let cfg = CleanConfig {
                max_tokens,
                ratio,
                alpha_frac,
            };
            let (kept, stats) = corpusprep::clean(&corpus, &cfg);
            kept.write(&output)?;
            eprintln!(
                "{}",
                serde_json::to_string(&stats).map_err(|e| Error::Internal(e.to_string()))?
            );
        }
        Command::DedupEval {
            train,
            eval,
            output,
        } => {
            let train = ParallelCorpus::read(&train)?;
            let eval = ParallelCorpus::read(&eval)?;
            let out = corpusprep::dedup_eval(&train, &eval);
            out.write(&output)?;
            eprintln!("kept {} of {} evaluation pairs", out.len(), eval.len());
        }
        Command::SplitDocs {
            fractions,
            seed,
            input,
            out_dir,
        } => {
            let corpus = ParallelCorpus::read(&input)?;
            let f: [f64; 3] = fractions
                .try_into()
                .map_err(|_| Error::InvalidFractions("expected three fractions".into()))?;
            let s = corpusprep::split_documents(&corpus, f, seed)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            s.train.write(out_dir.join("train"))?;
            s.dev.write(out_dir.join("dev"))?;
            s.test.write(out_dir.join("test"))?;
            eprintln!(
                "train {} / dev {} / test {}",
                s.train.len(),
                s.dev.len(),
                s.test.len()
            );
        }
        Command::Sample {
            per_domain,
            seed,
            input,
            output,
        } => {
            let corpus = ParallelCorpus::read(&input)?;
            corpusprep::sample_per_domain(&corpus, per_domain, seed)?.write(&output)?;
        }
        Command::Partition {
            corpus,
            level,
            k,
            labels,
            out_dir,
        } => {
            let corpus = ParallelCorpus::read(&corpus)?;
            let labels = ClusterAssignment::read_tsv(&labels)?;
            let k = k.unwrap_or_else(|| labels.label_count().max(1));
            let plan = match PlanLevel::from(level) {
                PlanLevel::Sentence => PartitionPlan::from_sentence_labels(&labels, k)?,
                PlanLevel::Document => PartitionPlan::from_document_labels(&labels, &corpus, k)?,
            };
            let m = corpusprep::partition_by_cluster(&corpus, &plan, &out_dir)?;
            let sizes: Vec<usize> = m.clusters.iter().map(|c| c.pairs).collect();
            eprintln!("cluster sizes: {sizes:?}");
        }
        Command::Route {
            stream,
            out,
            model,
            routing,
            input,
        } => {
            let model = KMeansModel::load(&model)?;
            let table = RoutingTable::load(&routing)?;
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(BufWriter::new(
                    std::fs::File::create(p).map_err(|e| Error::io(p, e))?,
                )),
                None => Box::new(std::io::stdout().lock()),
            };
            if stream {
                router::route_stream(&model, &table, std::io::stdin().lock(), sink)?;
            } else {
                let input = input.expect("clap requires input without --stream");
                let set = read_embeddings(&input)?;
                let routes = router::route_set(&model, &table, &set)?;
                let mut w = BufWriter::new(sink);
                writeln!(w, "{ROUTE_TSV_HEADER}")?;
                for r in &routes {
                    writeln!(w, "{}", r.tsv_line())?;
                }
                w.flush()?;
            }
        }
        Command::Analyze {
            config,
            k,
            restarts,
            seed,
            out,
        } => {
            let mut c = AnalyzeConfig::load(&config)?;
            if let Some(k) = k {
                c.k = k;
            }
            if let Some(r) = restarts {
                c.restarts = r;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(o) = out {
                c.out_dir = o;
            }
            let report = pipeline::analyze(&c)?;
            for l in &report.layers {
                eprintln!("layer {:>2}: purity {:.4}", l.layer, l.purity_majority);
            }
            eprintln!(
                "best layer index {}; bundle in {}",
                report.best_layer,
                c.out_dir.display()
            );
        }
        Command::Adapt {
            config,
            k,
            seed,
            level,
            out,
        } => {
            let mut c = AdaptConfig::load(&config)?;
            if let Some(k) = k {
                c.k = k;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(l) = level {
                c.level = l.into();
            }
            if let Some(o) = out {
                c.out_dir = o;
            }
            let r = pipeline::adapt(&c)?;
            eprintln!(
                "cluster sizes: {:?}; outputs in {}",
                r.cluster_sizes,
                c.out_dir.display()
            );
        }
    }
    Ok(())
}
