//! Command-line interface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::corpus;
use crate::engine::{self, TrainConfig};
use crate::kernels::{FeatureSpace, KernelSpec};
use crate::metadata;
use crate::oracle::{self, StudyConfig};

#[derive(Debug, Parser)]
#[command(name = "ktm", version, about = "Kernel topic model: LDA with GP regression of topic proportions on metadata")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    /// Rational quadratic on numeric features, with an author-mismatch distance.
    Rq,
    /// Squared exponential on shortest-path embeddings of a graph.
    Graph,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it to a directory.
    Train {
        /// UCI bag-of-words corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// Vocabulary, one word per line.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Metadata CSV with a doc_id column.
        #[arg(long)]
        meta: PathBuf,
        #[arg(long, value_enum, default_value_t = KernelKind::Rq)]
        kernel: KernelKind,
        /// Edge list (source,target) for the graph kernel.
        #[arg(long)]
        edges: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        topics: usize,
        #[arg(long, default_value_t = 100)]
        sweeps: usize,
        #[arg(long, default_value_t = 10)]
        hyperopt_every: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = crate::vlda::DEFAULT_BETA)]
        beta: f64,
        /// Disable the regression and train plain LDA with a symmetric prior.
        #[arg(long)]
        no_gp: bool,
        /// Update documents in parallel against a snapshot of the counts.
        #[arg(long)]
        parallel_sweeps: bool,
        /// Output model directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the perplexity of a corpus aligned with the model's documents.
    EvalPerplexity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Also write the per-sweep training perplexity trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predict topic proportions at a metadata point.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Numeric values in column order followed by the author, comma
        /// separated; or a node name for graph models.
        #[arg(long, allow_hyphen_values = true)]
        at: String,
    },
    /// Compare the Laplace bridge with elliptical slice sampling.
    BridgeCheck {
        #[arg(long, default_value_t = 10)]
        topics: usize,
        #[arg(long, default_value_t = oracle::DEFAULT_REPETITIONS)]
        repetitions: usize,
        #[arg(long, default_value_t = oracle::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = oracle::DEFAULT_BURN_IN)]
        burn_in: usize,
        /// Observation counts, comma separated.
        #[arg(long, default_value = "0,10,50,100,200", value_delimiter = ',')]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predicted topic proportions over a grid of metadata points.
    ExportTopicSeries {
        #[arg(long)]
        model: PathBuf,
        /// CSV whose header names the model's feature columns.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type AnyResult<T> = std::result::Result<T, String>;

fn ctx<T, E: std::fmt::Display>(r: std::result::Result<T, E>, what: &str) -> AnyResult<T> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn emit(out: &mut dyn Write, path: Option<&Path>, bytes: &[u8]) -> AnyResult<()> {
    match path {
        Some(p) => ctx(fs::write(p, bytes), &format!("writing {}", p.display())),
        None => ctx(out.write_all(bytes), "writing output"),
    }
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> AnyResult<()> {
    match cmd {
        Command::Train {
            corpus,
            vocab,
            meta,
            kernel,
            edges,
            topics,
            sweeps,
            hyperopt_every,
            seed,
            beta,
            no_gp,
            parallel_sweeps,
            out,
        } => {
            let c = ctx(corpus::read_uci_file(&corpus), &format!("reading {}", corpus.display()))?;
            if let Some(v) = vocab {
                let words = ctx(corpus::read_vocab_file(&v), &format!("reading {}", v.display()))?;
                if words.len() != c.vocab_size() {
                    return Err(format!(
                        "vocabulary has {} words but the corpus declares {}",
                        words.len(),
                        c.vocab_size()
                    ));
                }
            }
            let edge_list = match (&kernel, edges) {
                (KernelKind::Graph, Some(e)) => Some(ctx(metadata::read_edges_file(&e), &format!("reading {}", e.display()))?),
                (KernelKind::Graph, None) => return Err("the graph kernel needs --edges".into()),
                (KernelKind::Rq, _) => None,
            };
            let features = ctx(
                metadata::read_metadata_file(&meta, c.num_docs(), edge_list.as_deref()),
                &format!("reading {}", meta.display()),
            )?;
            let spec = match (&kernel, &features) {
                (KernelKind::Rq, FeatureSpace::Euclidean { .. }) => KernelSpec::default(),
                (KernelKind::Graph, FeatureSpace::Graph { node_names, .. }) => KernelSpec::default_graph(node_names.len()),
                (KernelKind::Rq, _) => return Err("the rq kernel needs numeric metadata, found a node column".into()),
                (KernelKind::Graph, _) => return Err("the graph kernel needs a node column in the metadata".into()),
            };
            let config = TrainConfig {
                topics,
                max_sweeps: sweeps,
                hyperopt_every,
                beta,
                seed,
                use_gp: !no_gp,
                parallel_sweeps,
                ..Default::default()
            };
            let state = ctx(engine::train(&c, Arc::new(features), &spec, &config), "training")?;
            ctx(engine::save(&state, &out), "saving model")?;
            let last = state.perplexity_trace.last().map(|p| p.to_string()).unwrap_or_else(|| "none".into());
            ctx(
                writeln!(stdout, "sweeps={} last_training_perplexity={last} model={}", state.sweep_index, out.display()),
                "writing output",
            )?;
            Ok(())
        }
        Command::EvalPerplexity { model, corpus, trace } => {
            let state = ctx(engine::load(&model), &format!("loading {}", model.display()))?;
            let c = ctx(corpus::read_uci_file(&corpus), &format!("reading {}", corpus.display()))?;
            let ppl = ctx(state.corpus_perplexity(&c), "evaluating")?;
            if let Some(t) = trace {
                let bytes = csv_bytes(
                    &["sweep", "perplexity"],
                    state.perplexity_trace.iter().enumerate().map(|(s, p)| vec![(s + 1).to_string(), p.to_string()]),
                );
                emit(stdout, Some(&t), &bytes)?;
            }
            ctx(writeln!(stdout, "{ppl}"), "writing output")
        }
        Command::Predict { model, at } => {
            let state = ctx(engine::load(&model), &format!("loading {}", model.display()))?;
            let q = ctx(metadata::parse_query(&state.features, &at), "parsing --at")?;
            let p = ctx(state.predict_topics(&q), "predicting")?;
            let bytes = csv_bytes(
                &["topic", "probability", "y_variance"],
                p.probabilities
                    .iter()
                    .zip(&p.variances)
                    .enumerate()
                    .map(|(k, (pr, v))| vec![k.to_string(), pr.to_string(), v.to_string()]),
            );
            emit(stdout, None, &bytes)
        }
        Command::BridgeCheck {
            topics,
            repetitions,
            samples,
            burn_in,
            grid,
            seed,
            out,
        } => {
            let config = StudyConfig {
                k: topics,
                repetitions,
                grid,
                burn_in,
                samples,
                seed,
            };
            let result = ctx(oracle::run_study(&config), "bridge check")?;
            let mut buf = Vec::new();
            ctx(oracle::write_comparison_csv(&config, &result.mean, &mut buf), "bridge check")?;
            emit(stdout, out.as_deref(), &buf)
        }
        Command::ExportTopicSeries { model, grid, out } => {
            let state = ctx(engine::load(&model), &format!("loading {}", model.display()))?;
            let points = ctx(metadata::read_grid_file(&state.features, &grid), &format!("reading {}", grid.display()))?;
            let mut rows = Vec::with_capacity(points.len() * state.topics());
            for (i, q) in points.iter().enumerate() {
                let p = ctx(state.predict_topics(q), &format!("grid point {i}"))?;
                for (k, pr) in p.probabilities.iter().enumerate() {
                    rows.push(vec![i.to_string(), k.to_string(), pr.to_string()]);
                }
            }
            let bytes = csv_bytes(&["grid_point", "topic", "probability"], rows.into_iter());
            emit(stdout, out.as_deref(), &bytes)
        }
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                return 2;
            }
            let _ = write!(stdout, "{text}");
            return 0;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: thread pool: {e}");
            return 1;
        }
    };
    let mut buf = Vec::new();
    let result = pool.install(|| execute(cli.command, &mut buf));
    let _ = stdout.write_all(&buf);
    match result {
        Ok(()) => 0,
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
    }
}
