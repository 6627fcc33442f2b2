//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; the process fails if any criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ktm::bridge::{self, DirichletBelief};
use ktm::corpus;
use ktm::engine::{self, TrainConfig};
use ktm::gp::{self, GaussianMessages, Hyperparameters, JitterPolicy};
use ktm::kernels::{self, FeaturePoint, FeatureSpace, KernelSpec};
use ktm::oracle::{self, StudyConfig};
use ktm::synthetic::{self, SyntheticConfig};
use ktm::vlda::{self, LdaConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn bridge_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for k in [3, 5, 10, 50] {
        for _ in 0..1000 {
            let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..=100.0)).collect();
            let d = DirichletBelief::new(alpha.clone()).unwrap();
            let back = bridge::gaussian_to_dirichlet(&bridge::dirichlet_to_gaussian(&d).unwrap()).unwrap();
            for (a, b) in alpha.iter().zip(back.alpha()) {
                worst = worst.max((a - b).abs() / a);
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && elapsed < Duration::from_secs(5),
        format!("max relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn beta_pictures() -> Outcome {
    let cases = [((2.0, 1.2), (0.5, 1.3)), ((0.5, 0.9), (-0.6, 3.1)), ((3.0, 4.0), (-0.3, 0.6))];
    let mut worst = 0.0f64;
    let mut got = Vec::new();
    for ((a, b), (m, v)) in cases {
        let (gm, gv) = bridge::beta_to_gaussian_2d(a, b).unwrap();
        worst = worst.max((gm - m).abs()).max((gv - v).abs());
        got.push(format!("({gm:.3},{gv:.3})"));
    }
    outcome(worst <= 0.05, format!("{} max deviation {worst:.3}", got.join(" ")))
}

fn bridge_vs_mcmc() -> Outcome {
    let start = Instant::now();
    let config = StudyConfig {
        seed: 3,
        ..StudyConfig::default()
    };
    let result = oracle::run_study(&config).unwrap();
    let elapsed = start.elapsed();
    let first = result.mean.first().unwrap();
    let last = result.mean.last().unwrap();
    let pass = last.n_obs == 200
        && last.bridge_err <= 2.0 * last.mcmc_err
        && last.bridge_err < first.bridge_err
        && last.mcmc_err < first.mcmc_err
        && elapsed < Duration::from_secs(300);
    let curve = |f: fn(&oracle::ComparisonRow) -> f64| {
        result.mean.iter().map(|r| format!("{:.3}", f(r))).collect::<Vec<_>>().join(",")
    };
    outcome(
        pass,
        format!(
            "bridge [{}] ess [{}], {:.1}s",
            curve(|r| r.bridge_err),
            curve(|r| r.mcmc_err),
            elapsed.as_secs_f64()
        ),
    )
}

fn random_rq_problem(rng: &mut ChaCha8Rng, n: usize) -> (Arc<FeatureSpace>, KernelSpec, GaussianMessages) {
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..6.0)).collect();
    let authors: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let f = FeatureSpace::euclidean_with_authors(
        vec!["t".into()],
        DMatrix::from_column_slice(n, 1, &xs),
        Some(authors),
        vec!["a".into(), "b".into(), "c".into()],
    )
    .unwrap();
    let kernel = KernelSpec::RationalQuadratic {
        amplitude: rng.random_range(0.3..3.0),
        length_scale: rng.random_range(0.5..4.0),
        mixture_shape: rng.random_range(0.3..5.0),
        author_mismatch_distance: rng.random_range(0.5..3.0),
    };
    (Arc::new(f), kernel, random_messages(rng, n))
}

fn random_graph_problem(rng: &mut ChaCha8Rng, n: usize) -> (Arc<FeatureSpace>, KernelSpec, GaussianMessages) {
    let nodes = rng.random_range(2..=8);
    let mut edges = Vec::new();
    for i in 1..nodes {
        edges.push((rng.random_range(0..i), i));
    }
    let e = kernels::graph_embed(nodes, &edges).unwrap();
    let f = FeatureSpace::graph(
        (0..nodes).map(|i| i.to_string()).collect(),
        e,
        (0..n).map(|_| rng.random_range(0..nodes)).collect(),
    )
    .unwrap();
    let kernel = KernelSpec::GraphEmbedding {
        amplitude: rng.random_range(0.3..3.0),
        scales: (0..nodes).map(|_| rng.random_range(0.05..1.0)).collect(),
    };
    (Arc::new(f), kernel, random_messages(rng, n))
}

fn random_messages(rng: &mut ChaCha8Rng, n: usize) -> GaussianMessages {
    let means = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let vars = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
    GaussianMessages::new(means, vars, rng.random_range(0.1..1.0)).unwrap()
}

fn log_evidence_at(f: &Arc<FeatureSpace>, template: &KernelSpec, msgs: &GaussianMessages, xi: &[f64]) -> f64 {
    let h = Hyperparameters { xi: xi.to_vec() };
    let m = msgs.with_tau(h.tau()).unwrap();
    gp::fit(&h.kernel(template).unwrap(), f.clone(), &m, &JitterPolicy::default())
        .unwrap()
        .log_evidence()
}

fn evidence_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..20 {
        let n = rng.random_range(2..=10);
        let (f, kernel, msgs) = if i % 2 == 0 {
            random_rq_problem(&mut rng, n)
        } else {
            random_graph_problem(&mut rng, n)
        };
        let model = gp::fit(&kernel, f.clone(), &msgs, &JitterPolicy::default()).unwrap();
        let grad = model.evidence_gradient().unwrap();
        let xi = Hyperparameters::new(&kernel, msgs.tau()).unwrap().xi;
        for (j, g) in grad.iter().enumerate() {
            let mut up = xi.clone();
            let mut down = xi.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (log_evidence_at(&f, &kernel, &msgs, &up) - log_evidence_at(&f, &kernel, &msgs, &down)) / (2.0 * h);
            // Central differences carry O(eps * |log Z| / h) rounding, about
            // 1e-10 here; components below that are compared absolutely.
            let rel = (g - fd).abs() / fd.abs().max(1e-5);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    outcome(worst <= 1e-5, format!("{checked} components, max relative error {worst:.2e}"))
}

/// Posterior mean, variance and log evidence from explicit dense inverses.
fn dense_oracle(h: &DMatrix<f64>, ks: &DVector<f64>, kss: f64, mu: &DVector<f64>, var: &[f64]) -> (f64, f64, f64) {
    let c = h + DMatrix::from_diagonal(&DVector::from_column_slice(var));
    let ci = c.clone().try_inverse().unwrap();
    let mean = (ks.transpose() * &ci * mu)[(0, 0)];
    let variance = kss - (ks.transpose() * &ci * ks)[(0, 0)];
    let log_z = -0.5 * c.lu().determinant().ln() - 0.5 * (mu.transpose() * &ci * mu)[(0, 0)];
    (mean, variance, log_z)
}

fn gp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let n = rng.random_range(1..=10);
        let (f, kernel, msgs) = if i % 2 == 0 {
            random_rq_problem(&mut rng, n)
        } else {
            random_graph_problem(&mut rng, n)
        };
        let model = gp::fit(&kernel, f.clone(), &msgs, &JitterPolicy::default()).unwrap();
        let subset: Vec<usize> = (0..n).collect();
        let h = kernel.gram_matrix(&f, &subset).unwrap();
        let mu = DVector::from_column_slice(msgs.means());
        let queries: Vec<FeaturePoint> = match f.as_ref() {
            FeatureSpace::Graph { node_names, .. } => (0..node_names.len()).map(FeaturePoint::Node).collect(),
            _ => (0..3)
                .map(|_| FeaturePoint::Euclidean {
                    values: vec![rng.random_range(-1.0..7.0)],
                    author: Some(rng.random_range(0..3)),
                })
                .collect(),
        };
        for q in &queries {
            let r = f.resolve(q).unwrap();
            let ks = kernel.cross(&f, &subset, r).unwrap();
            let kss = kernel.eval(r, r).unwrap();
            let (m0, v0, z0) = dense_oracle(&h, &ks, kss, &mu, msgs.variances());
            let (m, v) = model.predict(q).unwrap();
            worst = worst.max((m - m0).abs()).max((v - v0).abs()).max((model.log_evidence() - z0).abs());
        }
    }
    outcome(worst <= 1e-8, format!("50 instances, max abs deviation {worst:.2e}"))
}

fn closed_form_evidence() -> Outcome {
    // Isolated nodes with huge scales give an exactly diagonal unit kernel.
    let n = 7;
    let e = kernels::graph_embed(n, &[]).unwrap();
    let f = Arc::new(FeatureSpace::graph((0..n).map(|i| i.to_string()).collect(), e, (0..n).collect()).unwrap());
    let kernel = KernelSpec::GraphEmbedding {
        amplitude: 1.0,
        scales: vec![1e4; n],
    };
    let subset: Vec<usize> = (0..n).collect();
    let h = kernel.gram_matrix(&f, &subset).unwrap();
    let msgs = GaussianMessages::from_variances(vec![0.0; n], vec![1.0; n]).unwrap();
    // No jitter, so H is exactly I.
    let jitter = JitterPolicy {
        initial: 0.0,
        ..JitterPolicy::default()
    };
    let z = gp::fit(&kernel, f, &msgs, &jitter).unwrap().log_evidence();
    let expect = -3.5 * 2f64.ln();
    outcome(
        h == DMatrix::identity(n, n) && (z - expect).abs() <= 1e-12,
        format!("log Z {z:.15}, expected {expect:.15}"),
    )
}

fn uniform_perplexity() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_v200");
    let c = corpus::read_uci_file(dir.join("docword.txt")).unwrap();
    let v = c.vocab_size() as f64;
    let f = ktm::metadata::read_metadata_file(&dir.join("meta.csv"), c.num_docs(), None).unwrap();
    let config = TrainConfig {
        topics: 5,
        max_sweeps: 1,
        ..TrainConfig::default()
    };
    let state = engine::train(&c, Arc::new(f), &KernelSpec::default(), &config).unwrap();
    let first = state.perplexity_trace[0];
    outcome(
        v == 200.0 && (first - v).abs() <= 0.01 * v,
        format!("first-sweep perplexity {first:.6} at V = {v}"),
    )
}

fn metadata_benefit() -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10u64 {
        let s = synthetic::generate(&SyntheticConfig {
            seed,
            ..SyntheticConfig::default()
        });
        let config = TrainConfig {
            topics: 3,
            max_sweeps: 50,
            seed,
            ..TrainConfig::default()
        };
        let features = Arc::new(s.features.clone());
        let (_, truth) = engine::train_heldout(&s.corpus, features, &KernelSpec::default(), &config).unwrap();
        let mut perm: Vec<usize> = (0..s.corpus.num_docs()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1000 + seed));
        let shuffled = Arc::new(s.features.permuted(&perm).unwrap());
        let (_, control) = engine::train_heldout(&s.corpus, shuffled, &KernelSpec::default(), &config).unwrap();
        if truth < control {
            wins += 1;
        }
        pairs.push(format!("{truth:.2}/{control:.2}"));
    }
    outcome(wins >= 9, format!("{wins}/10 seeds (true/permuted: {})", pairs.join(" ")))
}

fn kernel_psd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::INFINITY;
    for i in 0..50 {
        let n = rng.random_range(1..=30);
        let (f, kernel, _) = if i % 2 == 0 {
            random_rq_problem(&mut rng, n)
        } else {
            random_graph_problem(&mut rng, n)
        };
        let subset: Vec<usize> = (0..n).collect();
        let h = kernel.gram_matrix(&f, &subset).unwrap();
        let bound = h.trace() / n as f64;
        let min = SymmetricEigen::new(h).eigenvalues.min();
        worst = worst.min(min / bound);
    }
    outcome(worst >= -1e-8, format!("min eigenvalue / (trace/D) = {worst:.2e}"))
}

fn lda_reduction() -> Outcome {
    let s = synthetic::generate(&SyntheticConfig::default());
    let config = TrainConfig {
        topics: 3,
        max_sweeps: 25,
        seed: 11,
        use_gp: false,
        ..TrainConfig::default()
    };
    let state = engine::train(&s.corpus, Arc::new(s.features.clone()), &KernelSpec::default(), &config).unwrap();
    let lda = vlda::run_lda(
        &s.corpus,
        &DirichletBelief::symmetric(3, config.initial_alpha).unwrap(),
        &LdaConfig {
            topics: 3,
            sweeps: 25,
            beta: config.beta,
            passes_per_doc: config.passes_per_doc,
            seed: 11,
        },
    )
    .unwrap();
    let same = state.doc_beliefs == lda.posteriors && state.topic_word == lda.topic_word;
    outcome(same, format!("{} document posteriors bit-identical: {same}", lda.posteriors.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("bridge round trip", bridge_round_trip),
        ("beta pictures", beta_pictures),
        ("bridge vs elliptical slice sampling", bridge_vs_mcmc),
        ("evidence gradient", evidence_gradient),
        ("gp dense oracle", gp_oracle),
        ("closed-form log evidence", closed_form_evidence),
        ("uniform-model perplexity", uniform_perplexity),
        ("metadata benefit", metadata_benefit),
        ("kernel psd", kernel_psd),
        ("lda reduction", lda_reduction),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<36} {}  {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
