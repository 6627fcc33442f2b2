//! Corpora drawn from the kernel topic model itself: one latent GP per topic
//! over a scalar feature, softmax proportions, Dirichlet topics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::bridge::softmax;
use crate::corpus::{Corpus, Document};
use crate::kernels::{FeatureSpace, KernelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub docs: usize,
    pub topics: usize,
    pub vocab: usize,
    pub doc_length: usize,
    /// Feature values are spread uniformly over `[0, feature_range]`.
    pub feature_range: f64,
    pub amplitude: f64,
    pub length_scale: f64,
    /// Symmetric Dirichlet parameter of the topic-word distributions.
    pub topic_concentration: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            docs: 60,
            topics: 3,
            vocab: 50,
            doc_length: 30,
            feature_range: 10.0,
            amplitude: 4.0,
            length_scale: 2.0,
            topic_concentration: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub features: FeatureSpace,
    /// Latent function values, D x K.
    pub latent: DMatrix<f64>,
    /// Topic proportions, D x K.
    pub proportions: DMatrix<f64>,
    /// Topic-word distributions, K x V.
    pub topics: DMatrix<f64>,
}

fn dirichlet<R: Rng>(k: usize, a: f64, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(a, 1.0).expect("positive concentration");
    let mut v: Vec<f64> = (0..k).map(|_| g.sample(rng).max(1e-300)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.docs;
    let k = config.topics;
    let t: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * config.feature_range).collect();
    let features =
        FeatureSpace::euclidean_with_authors(vec!["t".into()], DMatrix::from_column_slice(d, 1, &t), None, Vec::new())
            .expect("finite features");
    let kernel = KernelSpec::RationalQuadratic {
        amplitude: config.amplitude,
        length_scale: config.length_scale,
        mixture_shape: 1.0,
        author_mismatch_distance: 1.0,
    };
    let subset: Vec<usize> = (0..d).collect();
    let mut h = kernel.gram_matrix(&features, &subset).expect("valid kernel");
    for i in 0..d {
        h[(i, i)] += 1e-8 * config.amplitude;
    }
    let l = nalgebra::Cholesky::new(h).expect("jittered kernel matrix is positive definite").unpack();
    let mut latent = DMatrix::zeros(d, k);
    for c in 0..k {
        let z = DVector::from_iterator(d, (0..d).map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            e
        }));
        latent.set_column(c, &(&l * z));
    }
    let mut proportions = DMatrix::zeros(d, k);
    for r in 0..d {
        let row: Vec<f64> = latent.row(r).iter().copied().collect();
        let p = softmax(&row).expect("finite latent values");
        for c in 0..k {
            proportions[(r, c)] = p[c];
        }
    }
    let mut topics = DMatrix::zeros(k, config.vocab);
    for c in 0..k {
        let p = dirichlet(config.vocab, config.topic_concentration, &mut rng);
        for (v, x) in p.into_iter().enumerate() {
            topics[(c, v)] = x;
        }
    }
    let topic_rows: Vec<Vec<f64>> = (0..k).map(|c| topics.row(c).iter().copied().collect()).collect();
    let docs = (0..d)
        .map(|r| {
            let pi: Vec<f64> = proportions.row(r).iter().copied().collect();
            let tokens: Vec<u32> = (0..config.doc_length)
                .map(|_| categorical(&topic_rows[categorical(&pi, &mut rng)], &mut rng) as u32)
                .collect();
            Document::from_tokens(&tokens).expect("non-empty document")
        })
        .collect();
    let corpus = Corpus::new(docs, config.vocab).expect("valid synthetic corpus");
    SyntheticCorpus {
        corpus,
        features,
        latent,
        proportions,
        topics,
    }
}

/// Vocabulary `w0, w1, ...`.
pub fn vocabulary(v: usize) -> Vec<String> {
    (0..v).map(|i| format!("w{i}")).collect()
}
