//! Training loop tying the topic model to the per-topic GPs, plus prediction
//! and model persistence.
//!
//! Each sweep turns GP predictions into per-document Dirichlet priors, runs
//! one variational sweep over the corpus, converts each document posterior
//! back into Gaussian messages and refits the GPs. Hyperparameters are
//! re-optimised every `hyperopt_every` sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bridge::{self, BridgeError, DirichletBelief, GaussianBelief};
use crate::corpus::{Corpus, Document};
use crate::gp::{self, GaussianMessages, GpError, GpTopicModel, Hyperparameters, JitterPolicy, OptimizationReport};
use crate::kernels::{FeaturePoint, FeatureSpace, GraphEmbedding, KernelError, KernelSpec};
use crate::vlda::{self, DocResponsibilities, TopicWordModel, VldaError};

pub const FORMAT_NAME: &str = "ktm-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Vlda(#[from] VldaError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("sweep {sweep}, topic {topic}: {source}")]
    Gp {
        sweep: usize,
        topic: usize,
        source: GpError,
    },
    #[error("sweep {sweep}, hyperparameter optimisation: {source}")]
    Hyperopt { sweep: usize, source: GpError },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("model format {found:?} version {version} is not supported (expected {FORMAT_NAME:?} version {FORMAT_VERSION})")]
    Version { found: String, version: u32 },
    #[error("checksum mismatch for {0}")]
    Checksum(String),
}

pub type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub topics: usize,
    pub max_sweeps: usize,
    pub hyperopt_every: usize,
    /// Line-search steps per hyperparameter optimisation.
    pub hyperopt_steps: usize,
    pub beta: f64,
    pub passes_per_doc: usize,
    pub seed: u64,
    pub jitter: JitterPolicy,
    pub alpha_floor: f64,
    pub initial_tau: f64,
    /// Symmetric prior for the first sweep, and for every sweep without GPs.
    pub initial_alpha: f64,
    /// Without GPs the model reduces to LDA with a fixed symmetric prior.
    pub use_gp: bool,
    /// Snapshot-parallel document sweeps. Sequential sweeps are the default.
    pub parallel_sweeps: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            topics: 10,
            max_sweeps: 100,
            hyperopt_every: 10,
            hyperopt_steps: 20,
            beta: vlda::DEFAULT_BETA,
            passes_per_doc: 1,
            seed: 0,
            jitter: JitterPolicy::default(),
            alpha_floor: bridge::DEFAULT_ALPHA_FLOOR,
            initial_tau: 1.0,
            initial_alpha: 1.0,
            use_gp: true,
            parallel_sweeps: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(EngineError::Config(m));
        if self.topics < 3 {
            return fail(format!("need at least 3 topics, got {}", self.topics));
        }
        if self.hyperopt_every == 0 {
            return fail("hyperopt_every must be at least 1".into());
        }
        if self.hyperopt_steps == 0 {
            return fail("hyperopt_steps must be at least 1".into());
        }
        if self.passes_per_doc == 0 {
            return fail("passes_per_doc must be at least 1".into());
        }
        for (name, v) in [
            ("beta", self.beta),
            ("alpha_floor", self.alpha_floor),
            ("initial_tau", self.initial_tau),
            ("initial_alpha", self.initial_alpha),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: TrainConfig,
    /// Kernel with the current hyperparameters applied.
    pub kernel: KernelSpec,
    pub hypers: Hyperparameters,
    pub features: Arc<FeatureSpace>,
    pub topic_word: TopicWordModel,
    pub responsibilities: DocResponsibilities,
    /// Distinct words and counts of each training document.
    pub doc_words: Vec<Vec<(u32, u32)>>,
    /// Per-topic messages; empty before the first sweep.
    pub messages: Vec<GaussianMessages>,
    /// Per-topic GPs; empty before the first sweep or without GPs.
    pub gps: Vec<GpTopicModel>,
    /// Posterior `alpha_d + nu_d` per document.
    pub doc_beliefs: Vec<DirichletBelief>,
    pub sweep_index: usize,
    /// `perplexity_trace[s]` is the training perplexity entering sweep `s`.
    pub perplexity_trace: Vec<f64>,
    pub optimization_reports: Vec<OptimizationReport>,
}

/// Point estimate and softmax-basis variances at a query.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicPrediction {
    pub probabilities: Vec<f64>,
    /// Latent posterior variance plus `tau^2`, per topic.
    pub variances: Vec<f64>,
}

impl ModelState {
    pub fn topics(&self) -> usize {
        self.config.topics
    }

    pub fn tau(&self) -> f64 {
        self.hypers.tau()
    }

    /// Expected topic-word distributions, K x V.
    pub fn theta(&self) -> DMatrix<f64> {
        vlda::expected_topic_word(&self.topic_word)
    }

    /// Posterior mean topic proportions, D x K.
    pub fn proportions(&self) -> DMatrix<f64> {
        let k = self.topics();
        let mut pi = DMatrix::zeros(self.doc_beliefs.len(), k);
        for (d, b) in self.doc_beliefs.iter().enumerate() {
            for (c, v) in b.mean().into_iter().enumerate() {
                pi[(d, c)] = v;
            }
        }
        pi
    }

    fn training_perplexity(&self) -> Result<f64> {
        Ok(vlda::perplexity_of(
            self.doc_words.iter().map(|w| w.as_slice()),
            &self.theta(),
            &self.proportions(),
        )?)
    }

    /// Perplexity of per-document token lists under this model's topics and
    /// document proportions. `docs[d]` must belong to training document `d`.
    pub fn document_perplexity(&self, docs: &[Vec<(u32, u32)>]) -> Result<f64> {
        if docs.len() != self.doc_beliefs.len() {
            return Err(EngineError::Config(format!(
                "{} documents for a model of {} documents",
                docs.len(),
                self.doc_beliefs.len()
            )));
        }
        Ok(vlda::perplexity_of(
            docs.iter().map(|w| w.as_slice()),
            &self.theta(),
            &self.proportions(),
        )?)
    }

    pub fn corpus_perplexity(&self, corpus: &Corpus) -> Result<f64> {
        let docs: Vec<Vec<(u32, u32)>> = corpus.docs().iter().map(|d| d.words().to_vec()).collect();
        if corpus.vocab_size() != self.topic_word.vocab_size() {
            return Err(EngineError::Config(format!(
                "corpus vocabulary {} differs from model vocabulary {}",
                corpus.vocab_size(),
                self.topic_word.vocab_size()
            )));
        }
        self.document_perplexity(&docs)
    }

    /// Document priors for the next sweep.
    fn priors(&self) -> Result<Vec<DirichletBelief>> {
        let k = self.topics();
        let d = self.doc_beliefs.len();
        if self.gps.is_empty() {
            return Ok(vec![DirichletBelief::symmetric(k, self.config.initial_alpha)?; d]);
        }
        let tau2 = self.tau() * self.tau();
        let per_topic: Vec<Vec<(f64, f64)>> = self.gps.par_iter().map(|g| g.predict_cavity()).collect();
        let mut clamped = 0;
        let priors = (0..d)
            .map(|doc| {
                let mean = per_topic.iter().map(|t| t[doc].0).collect();
                let var = per_topic.iter().map(|t| t[doc].1 + tau2).collect();
                let m = bridge::gaussian_to_dirichlet_with_floor(&GaussianBelief::new(mean, var)?, self.config.alpha_floor)?;
                clamped += m.clamped;
                Ok(m.belief)
            })
            .collect::<Result<Vec<_>>>()?;
        if clamped > 0 {
            log::debug!("sweep {}: {clamped} prior entries clamped", self.sweep_index);
        }
        Ok(priors)
    }

    /// Messages from each document to the regression: the Gaussian image of
    /// the posterior `alpha_d + nu_d` divided by that of the prior `alpha_d`.
    fn update_messages(&mut self, priors: &[DirichletBelief]) -> Result<()> {
        let k = self.topics();
        let d = self.doc_beliefs.len();
        let mut means = vec![Vec::with_capacity(d); k];
        let mut vars = vec![Vec::with_capacity(d); k];
        for (post, prior) in self.doc_beliefs.iter().zip(priors) {
            let g1 = bridge::dirichlet_to_gaussian(post)?;
            let g0 = bridge::dirichlet_to_gaussian(prior)?;
            for c in 0..k {
                let (m, v) = divide(g1.mean()[c], g1.variance()[c], g0.mean()[c], g0.variance()[c]);
                means[c].push(m);
                vars[c].push(v);
            }
        }
        let tau = self.tau();
        let sweep = self.sweep_index;
        self.messages = means
            .into_iter()
            .zip(vars)
            .enumerate()
            .map(|(topic, (m, v))| {
                GaussianMessages::new(m, v, tau).map_err(|source| EngineError::Gp { sweep, topic, source })
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn refit(&mut self) -> Result<()> {
        let sweep = self.sweep_index;
        let kernel = &self.kernel;
        let features = &self.features;
        let jitter = &self.config.jitter;
        self.gps = self
            .messages
            .par_iter()
            .enumerate()
            .map(|(topic, m)| {
                gp::fit(kernel, features.clone(), m, jitter).map_err(|source| EngineError::Gp { sweep, topic, source })
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn optimize(&mut self) -> Result<()> {
        if !self.kernel.supports_derivatives() {
            log::info!("kernel has no derivatives; skipping hyperparameter optimisation");
            return Ok(());
        }
        let sweep = self.sweep_index;
        let (hypers, report) = gp::optimize_hypers(
            &self.kernel,
            &self.features,
            &self.messages,
            &self.hypers,
            self.config.hyperopt_steps,
            &self.config.jitter,
        )
        .map_err(|source| EngineError::Hyperopt { sweep, source })?;
        log::info!(
            "sweep {sweep}: log evidence {:.4} -> {:.4} ({} steps accepted), tau {:.4}",
            report.trace[0],
            report.trace.last().copied().unwrap_or(f64::NAN),
            report.accepted,
            hypers.tau()
        );
        self.kernel = hypers.kernel(&self.kernel).map_err(|source| EngineError::Hyperopt { sweep, source })?;
        self.hypers = hypers;
        self.optimization_reports.push(report);
        let tau = self.tau();
        self.messages = self
            .messages
            .iter()
            .map(|m| m.with_tau(tau))
            .collect::<std::result::Result<_, _>>()
            .map_err(|source| EngineError::Hyperopt { sweep, source })?;
        self.refit()
    }

    /// One full sweep.
    pub fn step(&mut self, corpus: &Corpus) -> Result<()> {
        let ppl = self.training_perplexity()?;
        self.perplexity_trace.push(ppl);
        log::debug!("sweep {}: training perplexity {ppl:.4}", self.sweep_index);
        let priors = self.priors()?;
        let passes = self.config.passes_per_doc;
        let nu = if self.config.parallel_sweeps {
            vlda::sweep_corpus_snapshot(corpus, &priors, &mut self.topic_word, &mut self.responsibilities, passes)?
        } else {
            vlda::sweep_corpus(corpus, &priors, &mut self.topic_word, &mut self.responsibilities, passes)?
        }
        .nu;
        self.doc_beliefs = priors
            .iter()
            .enumerate()
            .map(|(d, p)| {
                let row: Vec<f64> = nu.row(d).iter().copied().collect();
                p.with_counts(&row)
            })
            .collect::<std::result::Result<_, _>>()?;
        if self.config.use_gp {
            self.update_messages(&priors)?;
            self.refit()?;
            if (self.sweep_index + 1) % self.config.hyperopt_every == 0 {
                self.optimize()?;
            }
        }
        self.sweep_index += 1;
        Ok(())
    }

    /// Topic proportions and softmax-basis variances at `query`.
    pub fn predict_topics(&self, query: &FeaturePoint) -> Result<TopicPrediction> {
        if self.gps.is_empty() {
            return Err(EngineError::Unsupported(
                "model has no fitted regression (trained without GPs or for zero sweeps)".into(),
            ));
        }
        let tau2 = self.tau() * self.tau();
        let mut means = Vec::with_capacity(self.gps.len());
        let mut variances = Vec::with_capacity(self.gps.len());
        for (topic, g) in self.gps.iter().enumerate() {
            let (m, v) = g.predict(query).map_err(|source| match source {
                GpError::Kernel(e) => EngineError::Kernel(e),
                source => EngineError::Gp {
                    sweep: self.sweep_index,
                    topic,
                    source,
                },
            })?;
            means.push(m);
            variances.push(v + tau2);
        }
        Ok(TopicPrediction {
            probabilities: bridge::softmax(&means)?,
            variances,
        })
    }
}

/// Largest message variance; documents with no evidence for a topic send
/// this instead of an improper message.
pub const MAX_MESSAGE_VARIANCE: f64 = 1e6;

/// Quotient of two Gaussians `N(m1, v1) / N(m0, v0)` with `v1 <= v0`.
fn divide(m1: f64, v1: f64, m0: f64, v0: f64) -> (f64, f64) {
    let precision = (1.0 / v1 - 1.0 / v0).max(1.0 / MAX_MESSAGE_VARIANCE);
    let var = 1.0 / precision;
    (var * (m1 / v1 - m0 / v0), var)
}

/// Fresh state before any sweep.
pub fn initialize(
    corpus: &Corpus,
    features: Arc<FeatureSpace>,
    kernel: &KernelSpec,
    config: &TrainConfig,
) -> Result<ModelState> {
    config.validate()?;
    kernel.validate()?;
    if features.len() != corpus.num_docs() {
        return Err(EngineError::Config(format!(
            "{} metadata rows for {} documents",
            features.len(),
            corpus.num_docs()
        )));
    }
    let (responsibilities, topic_word) = vlda::init_detached(corpus, config.topics, config.beta, config.seed)?;
    let prior = DirichletBelief::symmetric(config.topics, config.initial_alpha)?;
    let hypers = Hyperparameters::new(kernel, config.initial_tau).map_err(|source| EngineError::Hyperopt { sweep: 0, source })?;
    Ok(ModelState {
        config: config.clone(),
        kernel: kernel.clone(),
        hypers,
        features,
        topic_word,
        responsibilities,
        doc_words: corpus.docs().iter().map(|d| d.words().to_vec()).collect(),
        messages: Vec::new(),
        gps: Vec::new(),
        doc_beliefs: vec![prior; corpus.num_docs()],
        sweep_index: 0,
        perplexity_trace: Vec::new(),
        optimization_reports: Vec::new(),
    })
}

/// Runs `config.max_sweeps` sweeps.
pub fn train(
    corpus: &Corpus,
    features: Arc<FeatureSpace>,
    kernel: &KernelSpec,
    config: &TrainConfig,
) -> Result<ModelState> {
    let mut state = initialize(corpus, features, kernel, config)?;
    for _ in 0..config.max_sweeps {
        state.step(corpus)?;
    }
    Ok(state)
}

/// Trains on 9 of every 10 tokens and returns the model with the perplexity
/// of the held-out tokens.
pub fn train_heldout(
    corpus: &Corpus,
    features: Arc<FeatureSpace>,
    kernel: &KernelSpec,
    config: &TrainConfig,
) -> Result<(ModelState, f64)> {
    let (train_part, heldout) = corpus.split_heldout(10);
    let state = train(&train_part, features, kernel, config)?;
    let ppl = state.document_perplexity(&heldout)?;
    Ok((state, ppl))
}

// ---- persistence -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FeatureManifest {
    Euclidean {
        columns: Vec<String>,
        author_names: Option<Vec<String>>,
    },
    Graph {
        node_names: Vec<String>,
        disconnected: bool,
        cap: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: TrainConfig,
    kernel: KernelSpec,
    hypers: Hyperparameters,
    seed: u64,
    topics: usize,
    vocab_size: usize,
    docs: usize,
    sweep_index: usize,
    features: FeatureManifest,
    optimization_reports: Vec<OptimizationReport>,
    /// SHA-256 of every data file.
    checksums: BTreeMap<String, String>,
}

const FILES: [&str; 7] = [
    "topic_word.csv",
    "theta.csv",
    "responsibilities.csv",
    "beliefs.csv",
    "messages.csv",
    "features.csv",
    "trace.csv",
];
const EMBEDDING: &str = "embedding.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> EngineError {
    EngineError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn csv_text(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn topic_columns(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (0..k).map(move |c| format!("{prefix}{c}"))
}

fn render(state: &ModelState) -> BTreeMap<String, Vec<u8>> {
    let k = state.topics();
    let v = state.topic_word.vocab_size();
    let mut files = BTreeMap::new();
    let counts = state.topic_word.counts();
    files.insert(
        "topic_word.csv".into(),
        csv_text(
            &strings(&["topic", "word_id", "count"]),
            (0..k).flat_map(|c| (0..v).map(move |w| vec![c.to_string(), w.to_string(), counts[(c, w)].to_string()])),
        ),
    );
    let theta = state.theta();
    files.insert(
        "theta.csv".into(),
        csv_text(
            &strings(&["topic", "word_id", "probability"]),
            (0..k).flat_map(|c| {
                let theta = &theta;
                (0..v).map(move |w| vec![c.to_string(), w.to_string(), theta[(c, w)].to_string()])
            }),
        ),
    );
    let mut header = strings(&["doc_id", "word_id", "count"]);
    header.extend(topic_columns("gamma_", k));
    let resp = &state.responsibilities;
    files.insert(
        "responsibilities.csv".into(),
        csv_text(
            &header,
            state.doc_words.iter().enumerate().flat_map(|(d, words)| {
                words.iter().enumerate().map(move |(j, (w, c))| {
                    let mut row = vec![(d + 1).to_string(), w.to_string(), c.to_string()];
                    row.extend(resp.word(d, j).iter().map(|g| g.to_string()));
                    row
                })
            }),
        ),
    );
    let mut header = strings(&["doc_id", "attached"]);
    header.extend(topic_columns("alpha_", k));
    files.insert(
        "beliefs.csv".into(),
        csv_text(
            &header,
            state.doc_beliefs.iter().enumerate().map(|(d, b)| {
                let mut row = vec![(d + 1).to_string(), u8::from(resp.is_attached(d)).to_string()];
                row.extend(b.alpha().iter().map(|a| a.to_string()));
                row
            }),
        ),
    );
    files.insert(
        "messages.csv".into(),
        csv_text(
            &strings(&["topic", "doc_id", "mean", "bridge_variance"]),
            state.messages.iter().enumerate().flat_map(|(c, m)| {
                m.means()
                    .iter()
                    .zip(m.bridge_variances())
                    .enumerate()
                    .map(move |(d, (mu, s2))| vec![c.to_string(), (d + 1).to_string(), mu.to_string(), s2.to_string()])
            }),
        ),
    );
    let features = match state.features.as_ref() {
        FeatureSpace::Euclidean {
            columns,
            values,
            authors,
            ..
        } => {
            let mut header = vec!["doc_id".to_string()];
            header.extend(columns.iter().cloned());
            if authors.is_some() {
                header.push("author".into());
            }
            let f = columns.len();
            csv_text(
                &header,
                (0..values.len() / f).map(|d| {
                    let mut row = vec![(d + 1).to_string()];
                    row.extend(values[d * f..(d + 1) * f].iter().map(|x| x.to_string()));
                    if let Some(a) = authors {
                        row.push(a[d].to_string());
                    }
                    row
                }),
            )
        }
        FeatureSpace::Graph {
            embedding,
            doc_nodes,
            ..
        } => {
            let n = embedding.distances.nrows();
            let mut header = vec!["node".to_string()];
            header.extend((0..n).map(|j| format!("d{j}")));
            files.insert(
                EMBEDDING.into(),
                csv_text(
                    &header,
                    (0..n).map(|i| {
                        let mut row = vec![i.to_string()];
                        row.extend(embedding.distances.row(i).iter().map(|x| x.to_string()));
                        row
                    }),
                ),
            );
            csv_text(
                &strings(&["doc_id", "node"]),
                doc_nodes.iter().enumerate().map(|(d, n)| vec![(d + 1).to_string(), n.to_string()]),
            )
        }
    };
    files.insert("features.csv".into(), features);
    files.insert(
        "trace.csv".into(),
        csv_text(
            &strings(&["sweep", "perplexity"]),
            state
                .perplexity_trace
                .iter()
                .enumerate()
                .map(|(s, p)| vec![(s + 1).to_string(), p.to_string()]),
        ),
    );
    files
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the model directory. The directory appears complete or not at all.
pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    let files = render(state);
    let features = match state.features.as_ref() {
        FeatureSpace::Euclidean {
            columns,
            authors,
            author_names,
            ..
        } => FeatureManifest::Euclidean {
            columns: columns.clone(),
            author_names: authors.as_ref().map(|_| author_names.clone()),
        },
        FeatureSpace::Graph {
            node_names,
            embedding,
            ..
        } => FeatureManifest::Graph {
            node_names: node_names.clone(),
            disconnected: embedding.disconnected,
            cap: embedding.cap,
        },
    };
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        config: state.config.clone(),
        kernel: state.kernel.clone(),
        hypers: state.hypers.clone(),
        seed: state.config.seed,
        topics: state.topics(),
        vocab_size: state.topic_word.vocab_size(),
        docs: state.doc_beliefs.len(),
        sweep_index: state.sweep_index,
        features,
        optimization_reports: state.optimization_reports.clone(),
        checksums: files.iter().map(|(n, b)| (n.clone(), sha256_hex(b))).collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");

    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let name = path
        .file_name()
        .ok_or_else(|| format_err(path, "model path has no file name"))?
        .to_string_lossy()
        .into_owned();
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir(&tmp).map_err(io_err(&tmp))?;
    let write_all = || -> Result<()> {
        for (n, bytes) in &files {
            let p = tmp.join(n);
            fs::write(&p, bytes).map_err(io_err(&p))?;
        }
        let p = tmp.join("manifest.json");
        let mut f = fs::File::create(&p).map_err(io_err(&p))?;
        f.write_all(&json).map_err(io_err(&p))?;
        f.write_all(b"\n").map_err(io_err(&p))?;
        f.sync_all().map_err(io_err(&p))?;
        Ok(())
    };
    if let Err(e) = write_all() {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    let backup: Option<PathBuf> = if path.exists() {
        if !path.join("manifest.json").exists() {
            let _ = fs::remove_dir_all(&tmp);
            return Err(format_err(path, "exists and is not a model directory"));
        }
        let b = parent.join(format!(".{name}.old-{}", std::process::id()));
        fs::rename(path, &b).map_err(io_err(path))?;
        Some(b)
    } else {
        None
    };
    fs::rename(&tmp, path).map_err(io_err(path))?;
    if let Some(b) = backup {
        fs::remove_dir_all(&b).map_err(io_err(&b))?;
    }
    Ok(())
}

struct Rows {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Rows {
    fn parse(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r
            .headers()
            .map_err(|e| format_err(path, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(path, e.to_string()))?;
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn expect_header(&self, want: &[String]) -> Result<()> {
        if self.header != want {
            return Err(format_err(&self.path, format!("header {:?}, expected {want:?}", self.header)));
        }
        Ok(())
    }

    fn expect_len(&self, n: usize) -> Result<()> {
        if self.rows.len() != n {
            return Err(format_err(&self.path, format!("{} rows, expected {n}", self.rows.len())));
        }
        Ok(())
    }

    fn num<T: std::str::FromStr>(&self, r: usize, c: usize) -> Result<T> {
        self.rows[r][c]
            .parse()
            .map_err(|_| format_err(&self.path, format!("row {}: bad value {:?}", r + 2, self.rows[r][c])))
    }
}

/// Reads a model directory written by [`save`], verifying every checksum.
pub fn load(path: &Path) -> Result<ModelState> {
    let mpath = path.join("manifest.json");
    let bytes = fs::read(&mpath).map_err(io_err(&mpath))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| format_err(&mpath, e.to_string()))?;
    let found = value.get("format").and_then(|v| v.as_str()).unwrap_or("").to_string();
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_NAME || version != FORMAT_VERSION {
        return Err(EngineError::Version { found, version });
    }
    let m: Manifest = serde_json::from_value(value).map_err(|e| format_err(&mpath, e.to_string()))?;
    let graph = matches!(m.features, FeatureManifest::Graph { .. });
    let mut names: Vec<&str> = FILES.to_vec();
    if graph {
        names.push(EMBEDDING);
    }
    let mut data: BTreeMap<&str, Rows> = BTreeMap::new();
    for n in names {
        let p = path.join(n);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        match m.checksums.get(n) {
            Some(sum) if *sum == sha256_hex(&bytes) => {}
            _ => return Err(EngineError::Checksum(n.to_string())),
        }
        data.insert(n, Rows::parse(&p, &bytes)?);
    }
    let (k, v, docs) = (m.topics, m.vocab_size, m.docs);

    let tw = &data["topic_word.csv"];
    tw.expect_header(&strings(&["topic", "word_id", "count"]))?;
    tw.expect_len(k * v)?;
    let mut counts = DMatrix::zeros(k, v);
    for r in 0..k * v {
        counts[(r / v, r % v)] = tw.num(r, 2)?;
    }
    let topic_word = TopicWordModel::from_counts(m.config.beta, counts)?;

    let rs = &data["responsibilities.csv"];
    let mut header = strings(&["doc_id", "word_id", "count"]);
    header.extend(topic_columns("gamma_", k));
    rs.expect_header(&header)?;
    let mut doc_words: Vec<Vec<(u32, u32)>> = vec![Vec::new(); docs];
    let mut gamma: Vec<Vec<f64>> = vec![Vec::new(); docs];
    for r in 0..rs.rows.len() {
        let d: usize = rs.num(r, 0)?;
        if d == 0 || d > docs {
            return Err(format_err(&rs.path, format!("doc_id {d} out of range")));
        }
        doc_words[d - 1].push((rs.num(r, 1)?, rs.num(r, 2)?));
        for c in 0..k {
            gamma[d - 1].push(rs.num(r, 3 + c)?);
        }
    }
    for (d, w) in doc_words.iter().enumerate() {
        Document::from_counts(w.iter().copied()).map_err(|e| format_err(&rs.path, format!("document {}: {e}", d + 1)))?;
    }

    let bs = &data["beliefs.csv"];
    let mut header = strings(&["doc_id", "attached"]);
    header.extend(topic_columns("alpha_", k));
    bs.expect_header(&header)?;
    bs.expect_len(docs)?;
    let mut attached = Vec::with_capacity(docs);
    let mut doc_beliefs = Vec::with_capacity(docs);
    for r in 0..docs {
        attached.push(bs.num::<u8>(r, 1)? == 1);
        let alpha = (0..k).map(|c| bs.num(r, 2 + c)).collect::<Result<Vec<f64>>>()?;
        doc_beliefs.push(DirichletBelief::new(alpha)?);
    }
    let responsibilities = DocResponsibilities::from_parts(k, gamma, attached)?;

    let tau = m.hypers.tau();
    let ms = &data["messages.csv"];
    ms.expect_header(&strings(&["topic", "doc_id", "mean", "bridge_variance"]))?;
    let messages = if ms.rows.is_empty() {
        Vec::new()
    } else {
        ms.expect_len(k * docs)?;
        (0..k)
            .map(|c| {
                let rows = c * docs..(c + 1) * docs;
                let means = rows.clone().map(|r| ms.num(r, 2)).collect::<Result<Vec<f64>>>()?;
                let vars = rows.map(|r| ms.num(r, 3)).collect::<Result<Vec<f64>>>()?;
                GaussianMessages::new(means, vars, tau).map_err(|e| format_err(&ms.path, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?
    };

    let fs_rows = &data["features.csv"];
    let features = match &m.features {
        FeatureManifest::Euclidean { columns, author_names } => {
            let mut header = vec!["doc_id".to_string()];
            header.extend(columns.iter().cloned());
            if author_names.is_some() {
                header.push("author".into());
            }
            fs_rows.expect_header(&header)?;
            fs_rows.expect_len(docs)?;
            let f = columns.len();
            let mut values = DMatrix::zeros(docs, f);
            for d in 0..docs {
                for c in 0..f {
                    values[(d, c)] = fs_rows.num(d, 1 + c)?;
                }
            }
            let authors = match author_names {
                Some(_) => Some((0..docs).map(|d| fs_rows.num(d, 1 + f)).collect::<Result<Vec<usize>>>()?),
                None => None,
            };
            FeatureSpace::euclidean_with_authors(columns.clone(), values, authors, author_names.clone().unwrap_or_default())?
        }
        FeatureManifest::Graph {
            node_names,
            disconnected,
            cap,
        } => {
            fs_rows.expect_header(&strings(&["doc_id", "node"]))?;
            fs_rows.expect_len(docs)?;
            let doc_nodes = (0..docs).map(|d| fs_rows.num(d, 1)).collect::<Result<Vec<usize>>>()?;
            let es = &data[EMBEDDING];
            let n = node_names.len();
            es.expect_len(n)?;
            let mut distances = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    distances[(i, j)] = es.num(i, 1 + j)?;
                }
            }
            let embedding = GraphEmbedding {
                distances,
                disconnected: *disconnected,
                cap: *cap,
            };
            FeatureSpace::graph(node_names.clone(), embedding, doc_nodes)?
        }
    };

    let ts = &data["trace.csv"];
    ts.expect_header(&strings(&["sweep", "perplexity"]))?;
    ts.expect_len(m.sweep_index)?;
    let perplexity_trace = (0..ts.rows.len()).map(|r| ts.num(r, 1)).collect::<Result<Vec<f64>>>()?;

    let mut state = ModelState {
        config: m.config,
        kernel: m.kernel,
        hypers: m.hypers,
        features: Arc::new(features),
        topic_word,
        responsibilities,
        doc_words,
        messages,
        gps: Vec::new(),
        doc_beliefs,
        sweep_index: m.sweep_index,
        perplexity_trace,
        optimization_reports: m.optimization_reports,
    };
    if state.config.use_gp && !state.messages.is_empty() {
        state.refit()?;
    }
    Ok(state)
}

/// Training corpus reconstructed from a loaded model.
pub fn training_corpus(state: &ModelState) -> Result<Corpus> {
    let docs = state
        .doc_words
        .iter()
        .map(|w| Document::from_counts(w.iter().copied()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| EngineError::Config(e.to_string()))?;
    Corpus::new(docs, state.topic_word.vocab_size()).map_err(|e| EngineError::Config(e.to_string()))
}
