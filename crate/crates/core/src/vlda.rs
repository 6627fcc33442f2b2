//! Semi-collapsed variational LDA.
//!
//! Topic-word distributions are integrated out and tracked through expected
//! assignment counts; each document keeps an explicit Dirichlet belief
//! `alpha_d + nu_d` over its topic proportions. Updates are zero-order
//! collapsed variational (CVB0) steps, with all occurrences of a word in a
//! document sharing one responsibility vector.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use thiserror::Error;

use crate::bridge::DirichletBelief;
use crate::corpus::{Corpus, Document};

pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VldaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("word {word} in document {doc} has zero predictive probability")]
    ZeroProbability { doc: usize, word: u32 },
}

pub type Result<T> = std::result::Result<T, VldaError>;

/// Collapsed topic-word statistics under a symmetric Dirichlet prior `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicWordModel {
    beta: f64,
    /// K x V expected assignment mass `n_kv`.
    counts: DMatrix<f64>,
    topic_totals: Vec<f64>,
}

impl TopicWordModel {
    pub fn empty(topics: usize, vocab_size: usize, beta: f64) -> Result<Self> {
        if topics < 2 {
            return Err(VldaError::InvalidArgument(format!(
                "need at least two topics, got {topics}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(VldaError::InvalidArgument(format!(
                "beta must be positive, got {beta}"
            )));
        }
        Ok(Self {
            beta,
            counts: DMatrix::zeros(topics, vocab_size),
            topic_totals: vec![0.0; topics],
        })
    }

    /// Rebuilds a model from stored counts; topic totals are recomputed.
    pub fn from_counts(beta: f64, counts: DMatrix<f64>) -> Result<Self> {
        let mut m = Self::empty(counts.nrows(), counts.ncols(), beta)?;
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(VldaError::InvalidArgument(
                "topic-word counts must be finite and non-negative".into(),
            ));
        }
        m.topic_totals = counts.row_iter().map(|r| r.sum()).collect();
        m.counts = counts;
        Ok(m)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn topics(&self) -> usize {
        self.counts.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.ncols()
    }

    pub fn counts(&self) -> &DMatrix<f64> {
        &self.counts
    }

    pub fn topic_totals(&self) -> &[f64] {
        &self.topic_totals
    }

    pub fn total_mass(&self) -> f64 {
        self.topic_totals.iter().sum()
    }

    /// Recomputes the topic totals from the counts, discarding the rounding
    /// accumulated by incremental updates.
    fn resync(&mut self) {
        for (t, r) in self.topic_totals.iter_mut().zip(self.counts.row_iter()) {
            *t = r.sum();
        }
    }

    fn add(&mut self, word: usize, weight: f64, gamma: &[f64]) {
        for (k, g) in gamma.iter().enumerate() {
            let m = weight * g;
            self.counts[(k, word)] += m;
            self.topic_totals[k] += m;
        }
    }

    fn remove(&mut self, word: usize, weight: f64, gamma: &[f64]) {
        for (k, g) in gamma.iter().enumerate() {
            let m = weight * g;
            let c = &mut self.counts[(k, word)];
            *c = (*c - m).max(0.0);
            let t = &mut self.topic_totals[k];
            *t = (*t - m).max(0.0);
        }
    }
}

/// Per-document responsibilities: one K-vector per distinct word.
#[derive(Debug, Clone, PartialEq)]
pub struct DocResponsibilities {
    topics: usize,
    /// `gamma[d]` is row-major `distinct(d) x K`.
    gamma: Vec<Vec<f64>>,
    /// Whether document `d`'s mass is currently included in the global counts.
    attached: Vec<bool>,
}

impl DocResponsibilities {
    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn num_docs(&self) -> usize {
        self.gamma.len()
    }

    /// Responsibility vector of the `j`-th distinct word of document `d`.
    pub fn word(&self, d: usize, j: usize) -> &[f64] {
        &self.gamma[d][j * self.topics..(j + 1) * self.topics]
    }

    pub fn doc(&self, d: usize) -> &[f64] {
        &self.gamma[d]
    }

    pub fn is_attached(&self, d: usize) -> bool {
        self.attached[d]
    }

    /// Rebuilds responsibilities from stored rows; every document is attached.
    pub fn from_rows(topics: usize, gamma: Vec<Vec<f64>>) -> Result<Self> {
        for (d, g) in gamma.iter().enumerate() {
            if g.len() % topics != 0 {
                return Err(VldaError::InvalidArgument(format!(
                    "responsibilities of document {d} do not divide into {topics} topics"
                )));
            }
        }
        let attached = vec![true; gamma.len()];
        Ok(Self {
            topics,
            gamma,
            attached,
        })
    }

    /// Rebuilds responsibilities with explicit attachment flags.
    pub fn from_parts(topics: usize, gamma: Vec<Vec<f64>>, attached: Vec<bool>) -> Result<Self> {
        if attached.len() != gamma.len() {
            return Err(VldaError::InvalidArgument(format!(
                "{} attachment flags for {} documents",
                attached.len(),
                gamma.len()
            )));
        }
        let mut r = Self::from_rows(topics, gamma)?;
        r.attached = attached;
        Ok(r)
    }

    /// Expected topic counts `nu_d = sum_v count_dv * gamma_dv`.
    pub fn pseudo_counts(&self, doc: &Document, d: usize) -> Vec<f64> {
        let mut nu = vec![0.0; self.topics];
        for (j, &(_, c)) in doc.words().iter().enumerate() {
            for (n, g) in nu.iter_mut().zip(self.word(d, j)) {
                *n += c as f64 * g;
            }
        }
        nu
    }
}

/// Expected per-document topic counts `nu` (D x K).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoCounts {
    pub nu: DMatrix<f64>,
}

fn random_responsibilities(corpus: &Corpus, topics: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .docs()
        .iter()
        .map(|doc| {
            let mut g = Vec::with_capacity(doc.distinct() * topics);
            for _ in 0..doc.distinct() {
                let draws: Vec<f64> = (0..topics)
                    .map(|_| {
                        let e: f64 = Exp1.sample(&mut rng);
                        e.max(f64::MIN_POSITIVE)
                    })
                    .collect();
                let total: f64 = draws.iter().sum();
                g.extend(draws.iter().map(|e| e / total));
            }
            g
        })
        .collect()
}

fn check_topics(topics: usize) -> Result<()> {
    if topics < 2 {
        Err(VldaError::InvalidArgument(format!(
            "need at least two topics, got {topics}"
        )))
    } else {
        Ok(())
    }
}

/// Draws responsibilities from a symmetric Dirichlet(1) per distinct word and
/// accumulates them, weighted by word counts, into a topic-word model.
pub fn init_responsibilities(
    corpus: &Corpus,
    topics: usize,
    beta: f64,
    seed: u64,
) -> Result<(DocResponsibilities, TopicWordModel)> {
    let (mut resp, mut model) = init_detached(corpus, topics, beta, seed)?;
    for (d, doc) in corpus.docs().iter().enumerate() {
        for (j, &(w, c)) in doc.words().iter().enumerate() {
            model.add(w as usize, c as f64, resp.word(d, j));
        }
        resp.attached[d] = true;
    }
    model.resync();
    Ok((resp, model))
}

/// Like [`init_responsibilities`], but leaves the topic-word counts empty.
///
/// The model starts with uniform topics; each document's mass enters the
/// counts the first time it is swept.
pub fn init_detached(
    corpus: &Corpus,
    topics: usize,
    beta: f64,
    seed: u64,
) -> Result<(DocResponsibilities, TopicWordModel)> {
    check_topics(topics)?;
    let model = TopicWordModel::empty(topics, corpus.vocab_size(), beta)?;
    let gamma = random_responsibilities(corpus, topics, seed);
    let attached = vec![false; gamma.len()];
    Ok((
        DocResponsibilities {
            topics,
            gamma,
            attached,
        },
        model,
    ))
}

#[inline]
fn update_gamma(
    out: &mut [f64],
    counts: &DMatrix<f64>,
    totals: &[f64],
    word: usize,
    beta: f64,
    vbeta: f64,
    alpha: &[f64],
    nu: &[f64],
) {
    let mut z = 0.0;
    for k in 0..out.len() {
        let g = (beta + counts[(k, word)]) / (vbeta + totals[k]) * (alpha[k] + nu[k]);
        out[k] = g;
        z += g;
    }
    for g in out.iter_mut() {
        *g /= z;
    }
}

/// One CVB0 pass (or `passes` passes) over document `d` with Dirichlet prior
/// `prior`, updating the global counts in place. Returns `nu_d`.
pub fn sweep_document(
    corpus: &Corpus,
    d: usize,
    prior: &DirichletBelief,
    state: &mut TopicWordModel,
    resp: &mut DocResponsibilities,
    passes: usize,
) -> Result<Vec<f64>> {
    let k = state.topics();
    if prior.dim() != k || resp.topics != k {
        return Err(VldaError::InvalidArgument(format!(
            "prior has {} topics, state has {k}",
            prior.dim()
        )));
    }
    if passes == 0 {
        return Err(VldaError::InvalidArgument("passes must be at least 1".into()));
    }
    let doc = corpus.doc(d);
    let beta = state.beta;
    let vbeta = beta * state.vocab_size() as f64;
    let alpha = prior.alpha();
    let mut nu = resp.pseudo_counts(doc, d);
    let mut fresh = vec![0.0; k];
    for pass in 0..passes {
        let in_counts = pass > 0 || resp.attached[d];
        for (j, &(w, c)) in doc.words().iter().enumerate() {
            let w = w as usize;
            let weight = c as f64;
            let slot = j * k..(j + 1) * k;
            let old = &resp.gamma[d][slot.clone()];
            for (n, g) in nu.iter_mut().zip(old) {
                *n = (*n - weight * g).max(0.0);
            }
            if in_counts {
                state.remove(w, weight, old);
            }
            update_gamma(
                &mut fresh,
                &state.counts,
                &state.topic_totals,
                w,
                beta,
                vbeta,
                alpha,
                &nu,
            );
            resp.gamma[d][slot].copy_from_slice(&fresh);
            for (n, g) in nu.iter_mut().zip(&fresh) {
                *n += weight * g;
            }
            state.add(w, weight, &fresh);
        }
    }
    resp.attached[d] = true;
    // Recompute from the final responsibilities so sum(nu) = I_d exactly up
    // to one rounding per word.
    Ok(resp.pseudo_counts(doc, d))
}

/// Sequential sweep over every document. `priors[d]` is document `d`'s prior.
pub fn sweep_corpus(
    corpus: &Corpus,
    priors: &[DirichletBelief],
    state: &mut TopicWordModel,
    resp: &mut DocResponsibilities,
    passes: usize,
) -> Result<PseudoCounts> {
    if priors.len() != corpus.num_docs() {
        return Err(VldaError::InvalidArgument(format!(
            "{} priors for {} documents",
            priors.len(),
            corpus.num_docs()
        )));
    }
    let mut nu = DMatrix::zeros(corpus.num_docs(), state.topics());
    for d in 0..corpus.num_docs() {
        let row = sweep_document(corpus, d, &priors[d], state, resp, passes)?;
        for (k, v) in row.into_iter().enumerate() {
            nu[(d, k)] = v;
        }
    }
    state.resync();
    Ok(PseudoCounts { nu })
}

/// Parallel sweep against a frozen snapshot of the counts.
///
/// Every document is updated against the counts as they stood at the start
/// of the sweep (with its own previous mass removed); the per-document deltas
/// are applied afterwards in document order. Results differ from
/// [`sweep_corpus`], which updates counts after every word.
pub fn sweep_corpus_snapshot(
    corpus: &Corpus,
    priors: &[DirichletBelief],
    state: &mut TopicWordModel,
    resp: &mut DocResponsibilities,
    passes: usize,
) -> Result<PseudoCounts> {
    if priors.len() != corpus.num_docs() {
        return Err(VldaError::InvalidArgument(format!(
            "{} priors for {} documents",
            priors.len(),
            corpus.num_docs()
        )));
    }
    let k = state.topics();
    if priors.iter().any(|p| p.dim() != k) {
        return Err(VldaError::InvalidArgument("prior dimension mismatch".into()));
    }
    if passes == 0 {
        return Err(VldaError::InvalidArgument("passes must be at least 1".into()));
    }
    let snapshot = &*state;
    let beta = snapshot.beta;
    let vbeta = beta * snapshot.vocab_size() as f64;
    let updated: Vec<Vec<f64>> = (0..corpus.num_docs())
        .into_par_iter()
        .map(|d| {
            let doc = corpus.doc(d);
            let mut gamma = resp.gamma[d].clone();
            let mut nu = resp.pseudo_counts(doc, d);
            let attached = resp.attached[d];
            let mut fresh = vec![0.0; k];
            let mut local_counts = vec![0.0; k];
            let mut local_totals = snapshot.topic_totals.clone();
            if attached {
                for (j, &(_, c)) in doc.words().iter().enumerate() {
                    for kk in 0..k {
                        local_totals[kk] -= c as f64 * resp.gamma[d][j * k + kk];
                    }
                }
                for t in &mut local_totals {
                    *t = t.max(0.0);
                }
            }
            for _ in 0..passes {
                for (j, &(w, c)) in doc.words().iter().enumerate() {
                    let weight = c as f64;
                    let slot = j * k..(j + 1) * k;
                    for (n, g) in nu.iter_mut().zip(&gamma[slot.clone()]) {
                        *n = (*n - weight * g).max(0.0);
                    }
                    let mut z = 0.0;
                    for kk in 0..k {
                        let own = if attached {
                            weight * resp.gamma[d][j * k + kk]
                        } else {
                            0.0
                        };
                        local_counts[kk] = (snapshot.counts[(kk, w as usize)] - own).max(0.0);
                        let g = (beta + local_counts[kk]) / (vbeta + local_totals[kk])
                            * (priors[d].alpha()[kk] + nu[kk]);
                        fresh[kk] = g;
                        z += g;
                    }
                    for g in fresh.iter_mut() {
                        *g /= z;
                    }
                    gamma[slot].copy_from_slice(&fresh);
                    for (n, g) in nu.iter_mut().zip(&fresh) {
                        *n += weight * g;
                    }
                }
            }
            gamma
        })
        .collect();
    let mut nu = DMatrix::zeros(corpus.num_docs(), k);
    for (d, gamma) in updated.into_iter().enumerate() {
        let doc = corpus.doc(d);
        for (j, &(w, c)) in doc.words().iter().enumerate() {
            if resp.attached[d] {
                let old: Vec<f64> = resp.word(d, j).to_vec();
                state.remove(w as usize, c as f64, &old);
            }
            state.add(w as usize, c as f64, &gamma[j * k..(j + 1) * k]);
        }
        resp.gamma[d] = gamma;
        resp.attached[d] = true;
        for (kk, v) in resp.pseudo_counts(doc, d).into_iter().enumerate() {
            nu[(d, kk)] = v;
        }
    }
    state.resync();
    Ok(PseudoCounts { nu })
}

/// Posterior-mean topic-word probabilities `(beta + n_kv) / (V beta + n_k)`.
pub fn expected_topic_word(state: &TopicWordModel) -> DMatrix<f64> {
    let v = state.vocab_size() as f64;
    let beta = state.beta;
    DMatrix::from_fn(state.topics(), state.vocab_size(), |k, w| {
        (beta + state.counts[(k, w)]) / (v * beta + state.topic_totals[k])
    })
}

/// Perplexity of documents given as `(word, count)` lists.
///
/// `theta` is K x V, `pi` is D x K with probability rows. Documents with no
/// tokens contribute nothing.
pub fn perplexity_of<'a, I>(docs: I, theta: &DMatrix<f64>, pi: &DMatrix<f64>) -> Result<f64>
where
    I: IntoIterator<Item = &'a [(u32, u32)]>,
{
    let k = theta.nrows();
    if pi.ncols() != k {
        return Err(VldaError::InvalidArgument(format!(
            "pi has {} topics but theta has {k}",
            pi.ncols()
        )));
    }
    let mut log_lik = 0.0;
    let mut tokens = 0u64;
    let mut ndocs = 0;
    for (d, words) in docs.into_iter().enumerate() {
        ndocs += 1;
        if d >= pi.nrows() {
            return Err(VldaError::InvalidArgument(format!(
                "pi has {} rows but more documents were supplied",
                pi.nrows()
            )));
        }
        for &(w, c) in words {
            if w as usize >= theta.ncols() {
                return Err(VldaError::InvalidArgument(format!(
                    "word id {w} outside vocabulary of size {}",
                    theta.ncols()
                )));
            }
            let p: f64 = (0..k).map(|kk| pi[(d, kk)] * theta[(kk, w as usize)]).sum();
            if !(p > 0.0) {
                return Err(VldaError::ZeroProbability { doc: d, word: w });
            }
            log_lik += c as f64 * p.ln();
            tokens += c as u64;
        }
    }
    if ndocs != pi.nrows() {
        return Err(VldaError::InvalidArgument(format!(
            "pi has {} rows for {ndocs} documents",
            pi.nrows()
        )));
    }
    if tokens == 0 {
        return Err(VldaError::InvalidArgument("no tokens to evaluate".into()));
    }
    Ok((-log_lik / tokens as f64).exp())
}

/// `exp(-sum_d sum_i log sum_k pi_dk theta_k,w_di / sum_d I_d)`.
pub fn perplexity(corpus: &Corpus, theta: &DMatrix<f64>, pi: &DMatrix<f64>) -> Result<f64> {
    perplexity_of(corpus.docs().iter().map(Document::words), theta, pi)
}

/// Settings for a standalone LDA run with one fixed prior for every document.
#[derive(Debug, Clone)]
pub struct LdaConfig {
    pub topics: usize,
    pub sweeps: usize,
    pub beta: f64,
    pub passes_per_doc: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LdaFit {
    pub topic_word: TopicWordModel,
    pub responsibilities: DocResponsibilities,
    /// `alpha + nu_d` per document.
    pub posteriors: Vec<DirichletBelief>,
}

/// Plain LDA: every document shares `prior`, counts start uniform.
pub fn run_lda(corpus: &Corpus, prior: &DirichletBelief, config: &LdaConfig) -> Result<LdaFit> {
    if prior.dim() != config.topics {
        return Err(VldaError::InvalidArgument(format!(
            "prior has {} topics, config asks for {}",
            prior.dim(),
            config.topics
        )));
    }
    let (mut resp, mut model) = init_detached(corpus, config.topics, config.beta, config.seed)?;
    let priors = vec![prior.clone(); corpus.num_docs()];
    let mut nu = DMatrix::zeros(corpus.num_docs(), config.topics);
    for _ in 0..config.sweeps {
        nu = sweep_corpus(corpus, &priors, &mut model, &mut resp, config.passes_per_doc)?.nu;
    }
    let posteriors = (0..corpus.num_docs())
        .map(|d| {
            let row: Vec<f64> = nu.row(d).iter().copied().collect();
            prior
                .with_counts(&row)
                .map_err(|e| VldaError::InvalidArgument(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LdaFit {
        topic_word: model,
        responsibilities: resp,
        posteriors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn corpus(docs: &[&[u32]], v: usize) -> Corpus {
        Corpus::new(
            docs.iter().map(|t| Document::from_tokens(t).unwrap()).collect(),
            v,
        )
        .unwrap()
    }

    fn toy() -> Corpus {
        corpus(
            &[&[0, 0, 1, 2], &[3, 4, 4, 5, 5], &[0, 1, 1, 2, 2, 2], &[3, 3, 4, 5]],
            6,
        )
    }

    #[test]
    fn init_is_deterministic_and_conserves_mass() {
        let c = toy();
        let (r1, m1) = init_responsibilities(&c, 3, 0.1, 7).unwrap();
        let (r2, m2) = init_responsibilities(&c, 3, 0.1, 7).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert_relative_eq!(m1.total_mass(), c.total_tokens() as f64, epsilon = 1e-9);
        assert_relative_eq!(m1.counts().sum(), c.total_tokens() as f64, epsilon = 1e-9);
        for d in 0..c.num_docs() {
            for j in 0..c.doc(d).distinct() {
                assert_relative_eq!(r1.word(d, j).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
        let (r3, _) = init_responsibilities(&c, 3, 0.1, 8).unwrap();
        assert_ne!(r1, r3);
    }

    #[test]
    fn init_rejects_single_topic() {
        assert!(init_responsibilities(&toy(), 1, 0.1, 0).is_err());
        assert!(init_responsibilities(&toy(), 3, 0.0, 0).is_err());
    }

    #[test]
    fn single_word_doc_with_symmetric_state_is_uniform() {
        let c = corpus(&[&[2, 2, 2]], 4);
        let (mut resp, mut model) = init_detached(&c, 4, 0.5, 1).unwrap();
        // With empty counts the word likelihood is uniform; with only one
        // distinct word the document term reduces to the prior.
        let prior = DirichletBelief::symmetric(4, 1.0).unwrap();
        let nu = sweep_document(&c, 0, &prior, &mut model, &mut resp, 1).unwrap();
        for n in &nu {
            assert_relative_eq!(*n, 3.0 / 4.0, epsilon = 1e-12);
        }
        // Sweeping again leaves it uniform: counts are now symmetric too.
        let nu = sweep_document(&c, 0, &prior, &mut model, &mut resp, 3).unwrap();
        for n in &nu {
            assert_relative_eq!(*n, 3.0 / 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sweep_conserves_mass() {
        let c = toy();
        let (mut resp, mut model) = init_responsibilities(&c, 3, 0.1, 3).unwrap();
        let priors = vec![DirichletBelief::new(vec![0.3, 2.0, 0.9]).unwrap(); c.num_docs()];
        for _ in 0..5 {
            let nu = sweep_corpus(&c, &priors, &mut model, &mut resp, 2).unwrap().nu;
            for d in 0..c.num_docs() {
                assert_relative_eq!(nu.row(d).sum(), c.doc(d).len() as f64, epsilon = 1e-9);
            }
            assert_relative_eq!(model.counts().sum(), c.total_tokens() as f64, epsilon = 1e-6);
            for k in 0..3 {
                assert_relative_eq!(
                    model.counts().row(k).sum(),
                    model.topic_totals()[k],
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn disjoint_vocabularies_separate() {
        // Documents 0,1 use words 0..3, documents 2,3 use words 3..6. The
        // priors favour topic 0 and topic 1 respectively; topic 2 stays empty.
        let c = corpus(
            &[
                &[0, 1, 2, 0, 1, 2, 0, 1],
                &[2, 1, 0, 2, 2, 1, 0, 0],
                &[3, 4, 5, 3, 4, 5, 5, 4],
                &[5, 5, 4, 3, 3, 4, 5, 3],
            ],
            6,
        );
        let sharp_a = DirichletBelief::new(vec![5.0, 0.05, 0.05]).unwrap();
        let sharp_b = DirichletBelief::new(vec![0.05, 5.0, 0.05]).unwrap();
        let priors = vec![sharp_a.clone(), sharp_a, sharp_b.clone(), sharp_b];
        let (mut resp, mut model) = init_responsibilities(&c, 3, 0.1, 11).unwrap();
        for _ in 0..20 {
            sweep_corpus(&c, &priors, &mut model, &mut resp, 1).unwrap();
        }
        for d in 0..4 {
            let target = if d < 2 { 0 } else { 1 };
            for j in 0..c.doc(d).distinct() {
                assert!(
                    resp.word(d, j)[target] >= 0.99,
                    "doc {d} word {j}: {:?}",
                    resp.word(d, j)
                );
            }
        }
    }

    #[test]
    fn word_order_does_not_matter() {
        let a = corpus(&[&[0, 1, 1, 2, 3, 3, 3], &[2, 2, 0]], 4);
        let b = corpus(&[&[3, 1, 3, 0, 2, 3, 1], &[0, 2, 2]], 4);
        let prior = DirichletBelief::new(vec![0.5, 1.0, 1.5]).unwrap();
        let cfg = LdaConfig {
            topics: 3,
            sweeps: 4,
            beta: 0.1,
            passes_per_doc: 1,
            seed: 5,
        };
        let fa = run_lda(&a, &prior, &cfg).unwrap();
        let fb = run_lda(&b, &prior, &cfg).unwrap();
        assert_eq!(fa.posteriors, fb.posteriors);
    }

    #[test]
    fn dominant_prior_captures_all_tokens() {
        let c = corpus(&[&[0, 1, 2, 3]], 4);
        let (mut resp, mut model) = init_detached(&c, 3, 1.0, 2).unwrap();
        let prior = DirichletBelief::new(vec![1e9, 1.0, 1.0]).unwrap();
        let mut nu = vec![];
        for _ in 0..3 {
            nu = sweep_document(&c, 0, &prior, &mut model, &mut resp, 1).unwrap();
        }
        assert_relative_eq!(nu[0], 4.0, max_relative = 1e-6);
    }

    #[test]
    fn snapshot_sweep_conserves_mass() {
        let c = toy();
        let (mut resp, mut model) = init_detached(&c, 3, 0.1, 3).unwrap();
        let priors = vec![DirichletBelief::symmetric(3, 0.5).unwrap(); c.num_docs()];
        for _ in 0..4 {
            let nu = sweep_corpus_snapshot(&c, &priors, &mut model, &mut resp, 1)
                .unwrap()
                .nu;
            assert_relative_eq!(nu.sum(), c.total_tokens() as f64, epsilon = 1e-9);
            assert_relative_eq!(model.total_mass(), c.total_tokens() as f64, epsilon = 1e-6);
        }
    }

    #[test]
    fn expected_topic_word_examples() {
        let m = TopicWordModel::empty(3, 7, 0.1).unwrap();
        let theta = expected_topic_word(&m);
        assert!(theta.iter().all(|p| (p - 1.0 / 7.0).abs() < 1e-15));

        let m = TopicWordModel::from_counts(0.2, DMatrix::from_element(2, 5, 3.0)).unwrap();
        let theta = expected_topic_word(&m);
        assert!(theta.iter().all(|p| (p - 0.2).abs() < 1e-15));

        let mut counts = DMatrix::zeros(2, 2);
        counts[(0, 1)] = 1.0;
        let m = TopicWordModel::from_counts(1.0, counts).unwrap();
        let theta = expected_topic_word(&m);
        assert_relative_eq!(theta[(0, 1)], 2.0 / 3.0, epsilon = 1e-15);
        for k in 0..2 {
            assert_relative_eq!(theta.row(k).sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn perplexity_of_uniform_model_is_vocab_size() {
        let c = toy();
        let theta = expected_topic_word(&TopicWordModel::empty(3, 6, 0.1).unwrap());
        let pi = DMatrix::from_fn(4, 3, |d, k| [0.2, 0.3, 0.5][(d + k) % 3]);
        assert_relative_eq!(perplexity(&c, &theta, &pi).unwrap(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn perplexity_of_certain_model_is_one() {
        let c = corpus(&[&[1, 1, 1], &[1]], 3);
        let theta = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let pi = DMatrix::from_row_slice(2, 2, &[0.4, 0.6, 1.0, 0.0]);
        assert_relative_eq!(perplexity(&c, &theta, &pi).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn perplexity_matches_token_level_sum() {
        let c = corpus(&[&[0, 1, 1], &[2, 0], &[1, 2, 2, 2]], 3);
        let theta = DMatrix::from_row_slice(2, 3, &[0.5, 0.3, 0.2, 0.1, 0.1, 0.8]);
        let pi = DMatrix::from_row_slice(3, 2, &[0.9, 0.1, 0.5, 0.5, 0.25, 0.75]);
        // token-by-token oracle
        let docs: [&[usize]; 3] = [&[0, 1, 1], &[2, 0], &[1, 2, 2, 2]];
        let mut ll = 0.0f64;
        let mut n = 0.0f64;
        for (d, toks) in docs.iter().enumerate() {
            for &w in *toks {
                let mut p = 0.0f64;
                for k in 0..2 {
                    p += pi[(d, k)] * theta[(k, w)];
                }
                ll += p.ln();
                n += 1.0;
            }
        }
        let want = (-ll / n).exp();
        assert_relative_eq!(perplexity(&c, &theta, &pi).unwrap(), want, max_relative = 1e-13);
    }

    #[test]
    fn perplexity_reports_zero_probability() {
        let c = corpus(&[&[0]], 2);
        let theta = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let pi = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert_eq!(
            perplexity(&c, &theta, &pi).unwrap_err(),
            VldaError::ZeroProbability { doc: 0, word: 0 }
        );
    }

    #[test]
    fn training_perplexity_roughly_non_increasing() {
        let c = corpus(
            &[
                &[0, 1, 2, 0, 1, 2, 0, 1, 6],
                &[2, 1, 0, 2, 2, 1, 0, 0, 7],
                &[3, 4, 5, 3, 4, 5, 5, 4, 7],
                &[5, 5, 4, 3, 3, 4, 5, 3, 6],
                &[0, 4, 1, 5, 6, 7, 2, 3],
            ],
            8,
        );
        let prior = DirichletBelief::symmetric(3, 0.5).unwrap();
        let priors = vec![prior.clone(); c.num_docs()];
        let (mut resp, mut model) = init_responsibilities(&c, 3, 0.1, 4).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..15 {
            let nu = sweep_corpus(&c, &priors, &mut model, &mut resp, 1).unwrap().nu;
            let pi = DMatrix::from_fn(c.num_docs(), 3, |d, k| {
                (0.5 + nu[(d, k)]) / (1.5 + c.doc(d).len() as f64)
            });
            let p = perplexity(&c, &expected_topic_word(&model), &pi).unwrap();
            assert!(p <= last * 1.005, "{p} after {last}");
            last = p;
        }
    }
}
