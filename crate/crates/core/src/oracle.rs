//! Elliptical slice sampling reference for the softmax-Gaussian-multinomial
//! posterior, and the bridge-versus-sampler comparison built on it.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bridge::{self, BridgeError, DirichletBelief, GaussianBelief};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid sampler state: {0}")]
    InvalidState(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OracleError>;

pub const DEFAULT_BURN_IN: usize = 1000;
pub const DEFAULT_SAMPLES: usize = 20_000;
pub const DEFAULT_REPETITIONS: usize = 12;
pub const DEFAULT_GRID: [usize; 5] = [0, 10, 50, 100, 200];

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// One elliptical slice sampling transition, given the log likelihood at
/// `current`. Returns the new state and its log likelihood.
pub fn ess_step<F, R>(
    log_lik: F,
    prior_mean: &DVector<f64>,
    prior_cov_factor: &DMatrix<f64>,
    current: &DVector<f64>,
    current_log_lik: f64,
    rng: &mut R,
) -> Result<(DVector<f64>, f64)>
where
    F: Fn(&DVector<f64>) -> f64,
    R: Rng + ?Sized,
{
    if !current_log_lik.is_finite() {
        return Err(OracleError::InvalidState(format!(
            "log likelihood at the current state is {current_log_lik}"
        )));
    }
    let n = prior_mean.len();
    let z = DVector::from_iterator(n, (0..n).map(|_| standard_normal(rng)));
    let nu = prior_cov_factor * z;
    let f0 = current - prior_mean;
    let u: f64 = rng.random();
    let threshold = current_log_lik + u.ln();
    let mut theta = rng.random_range(0.0..std::f64::consts::TAU);
    let mut lo = theta - std::f64::consts::TAU;
    let mut hi = theta;
    loop {
        let proposal = &f0 * theta.cos() + &nu * theta.sin() + prior_mean;
        let ll = log_lik(&proposal);
        if ll > threshold {
            return Ok((proposal, ll));
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        if hi - lo < 1e-300 {
            return Ok((current.clone(), current_log_lik));
        }
        theta = rng.random_range(lo..hi);
    }
}

/// One elliptical slice sampling transition.
pub fn ess_sample<F, R>(
    log_lik: F,
    prior_mean: &DVector<f64>,
    prior_cov_factor: &DMatrix<f64>,
    current: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
    R: Rng + ?Sized,
{
    let ll = log_lik(current);
    ess_step(log_lik, prior_mean, prior_cov_factor, current, ll, rng).map(|(x, _)| x)
}

/// Orthonormal basis (K x (K-1)) of the sum-zero subspace of R^K.
pub fn sum_zero_basis(k: usize) -> DMatrix<f64> {
    // Helmert contrasts.
    DMatrix::from_fn(k, k - 1, |r, c| {
        let j = c + 1;
        let norm = ((j * (j + 1)) as f64).sqrt();
        if r < j {
            1.0 / norm
        } else if r == j {
            -(j as f64) / norm
        } else {
            0.0
        }
    })
}

/// Dirichlet prior plus integer category counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPosterior {
    prior: DirichletBelief,
    counts: Vec<u64>,
}

impl DirichletPosterior {
    pub fn new(prior: DirichletBelief) -> Self {
        let counts = vec![0; prior.dim()];
        Self { prior, counts }
    }

    pub fn observe(&mut self, category: usize) -> Result<()> {
        let k = self.counts.len();
        let slot = self.counts.get_mut(category).ok_or_else(|| {
            OracleError::InvalidArgument(format!("category {category} outside [0, {k})"))
        })?;
        *slot += 1;
        Ok(())
    }

    pub fn observe_counts(&mut self, counts: &[u64]) -> Result<()> {
        if counts.len() != self.counts.len() {
            return Err(OracleError::InvalidArgument(format!(
                "{} counts for dimension {}",
                counts.len(),
                self.counts.len()
            )));
        }
        for (c, n) in self.counts.iter_mut().zip(counts) {
            *c += n;
        }
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn belief(&self) -> Result<DirichletBelief> {
        let counts: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        Ok(self.prior.with_counts(&counts)?)
    }
}

/// One synthetic instance: a ground-truth point in the softmax basis and
/// categorical draws from `softmax(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeExperiment {
    pub k: usize,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
    /// Centred to sum zero.
    pub ground_truth: DVector<f64>,
    pub observations: Vec<usize>,
}

/// Inverse Wishart draw with identity scale, via the Bartlett decomposition.
pub fn inverse_wishart<R: Rng + ?Sized>(k: usize, dof: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if dof <= (k as f64) - 1.0 {
        return Err(OracleError::InvalidArgument(format!(
            "degrees of freedom {dof} too small for dimension {k}"
        )));
    }
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| OracleError::InvalidArgument(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    let w = &a * a.transpose();
    let inv = w
        .try_inverse()
        .ok_or_else(|| OracleError::InvalidState("singular Wishart draw".into()))?;
    Ok((&inv + inv.transpose()) * 0.5)
}

impl BridgeExperiment {
    /// Generating prior: mean from a standard Gaussian, covariance from an
    /// inverse Wishart with `k + 2` degrees of freedom.
    pub fn generate<R: Rng + ?Sized>(k: usize, n_obs: usize, rng: &mut R) -> Result<Self> {
        if k < 3 {
            return Err(OracleError::InvalidArgument(format!("dimension must be at least 3, got {k}")));
        }
        let prior_mean = DVector::from_iterator(k, (0..k).map(|_| standard_normal(rng)));
        let prior_cov = inverse_wishart(k, (k + 2) as f64, rng)?;
        let chol = nalgebra::Cholesky::new(prior_cov.clone())
            .ok_or_else(|| OracleError::InvalidState("prior covariance not positive definite".into()))?;
        let z = DVector::from_iterator(k, (0..k).map(|_| standard_normal(rng)));
        let mut x = &prior_mean + chol.l() * z;
        let m = x.mean();
        x.add_scalar_mut(-m);
        let p = bridge::softmax(x.as_slice())?;
        let mut cdf = Vec::with_capacity(k);
        let mut acc = 0.0;
        for v in &p {
            acc += v;
            cdf.push(acc);
        }
        let unit = Uniform::new(0.0, acc).expect("positive total");
        let observations = (0..n_obs)
            .map(|_| {
                let u: f64 = unit.sample(rng);
                cdf.iter().position(|&c| u < c).unwrap_or(k - 1)
            })
            .collect();
        Ok(Self {
            k,
            prior_mean,
            prior_cov,
            ground_truth: x,
            observations,
        })
    }

    /// Category counts of the first `n` observations.
    pub fn counts(&self, n: usize) -> Vec<u64> {
        let mut c = vec![0; self.k];
        for &o in &self.observations[..n.min(self.observations.len())] {
            c[o] += 1;
        }
        c
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub n_obs: usize,
    pub bridge_err: f64,
    pub bridge_sd: f64,
    pub mcmc_err: f64,
    pub mcmc_sd: f64,
}

/// Bridge estimate (mean, total standard deviation) after adding `counts`
/// to a standard Gaussian prior through Dirichlet space.
pub fn bridge_estimate(counts: &[u64]) -> Result<(DVector<f64>, f64)> {
    let k = counts.len();
    let prior = GaussianBelief::new(vec![0.0; k], vec![1.0; k])?;
    let mut post = DirichletPosterior::new(bridge::gaussian_to_dirichlet(&prior)?);
    post.observe_counts(counts)?;
    let g = bridge::dirichlet_to_gaussian(&post.belief()?)?;
    let sd = g.variance().iter().sum::<f64>().sqrt();
    Ok((DVector::from_column_slice(g.mean()), sd))
}

fn lse(x: &DVector<f64>) -> f64 {
    let m = x.max();
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Posterior sample mean and total standard deviation (square root of the
/// trace of the unbiased sample covariance) from ESS on the centred subspace
/// with a standard Gaussian prior.
pub fn mcmc_estimate<R: Rng + ?Sized>(
    counts: &[u64],
    burn_in: usize,
    samples: usize,
    rng: &mut R,
) -> Result<(DVector<f64>, f64)> {
    let k = counts.len();
    let q = sum_zero_basis(k);
    let n_total: f64 = counts.iter().map(|&c| c as f64).sum();
    let nvec = DVector::from_iterator(k, counts.iter().map(|&c| c as f64));
    let log_lik = |z: &DVector<f64>| {
        let x = &q * z;
        nvec.dot(&x) - n_total * lse(&x)
    };
    let mean0 = DVector::zeros(k - 1);
    let factor = DMatrix::identity(k - 1, k - 1);
    let mut z = DVector::zeros(k - 1);
    let mut ll = log_lik(&z);
    for _ in 0..burn_in {
        (z, ll) = ess_step(log_lik, &mean0, &factor, &z, ll, rng)?;
    }
    let mut sum = DVector::zeros(k);
    let mut sum_sq = DVector::zeros(k);
    let mut draws = Vec::with_capacity(samples);
    for _ in 0..samples {
        (z, ll) = ess_step(log_lik, &mean0, &factor, &z, ll, rng)?;
        let x = &q * &z;
        sum += &x;
        draws.push(x);
    }
    let n = samples as f64;
    let mean = sum / n;
    for x in &draws {
        let d = x - &mean;
        sum_sq += d.component_mul(&d);
    }
    let trace = sum_sq.sum() / (n - 1.0);
    Ok((mean, trace.sqrt()))
}

/// Bridge and sampler estimates against the ground truth for each prefix of
/// the observations in `grid`.
pub fn run_bridge_vs_mcmc(
    exp: &BridgeExperiment,
    grid: &[usize],
    burn_in: usize,
    n_mcmc: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    if n_mcmc < 1000 {
        return Err(OracleError::InvalidArgument(format!("need at least 1000 samples, got {n_mcmc}")));
    }
    if let Some(&n) = grid.iter().find(|&&n| n > exp.observations.len()) {
        return Err(OracleError::InvalidArgument(format!(
            "grid point {n} exceeds {} observations",
            exp.observations.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grid.iter()
        .map(|&n| {
            let counts = exp.counts(n);
            let (bm, bsd) = bridge_estimate(&counts)?;
            let (mm, msd) = mcmc_estimate(&counts, burn_in, n_mcmc, &mut rng)?;
            Ok(ComparisonRow {
                n_obs: n,
                bridge_err: (bm - &exp.ground_truth).norm(),
                bridge_sd: bsd,
                mcmc_err: (mm - &exp.ground_truth).norm(),
                mcmc_sd: msd,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub k: usize,
    pub repetitions: usize,
    pub grid: Vec<usize>,
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            k: 10,
            repetitions: DEFAULT_REPETITIONS,
            grid: DEFAULT_GRID.to_vec(),
            burn_in: DEFAULT_BURN_IN,
            samples: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

/// Per-repetition tables and their average.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub runs: Vec<Vec<ComparisonRow>>,
    pub mean: Vec<ComparisonRow>,
}

/// Repeats the comparison on independent experiments, in parallel.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    if config.repetitions == 0 {
        return Err(OracleError::InvalidArgument("need at least one repetition".into()));
    }
    let max_obs = config.grid.iter().copied().max().unwrap_or(0);
    let runs: Vec<Vec<ComparisonRow>> = (0..config.repetitions)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64 + 1);
            let exp = BridgeExperiment::generate(config.k, max_obs, &mut rng)?;
            run_bridge_vs_mcmc(&exp, &config.grid, config.burn_in, config.samples, rng.random())
        })
        .collect::<Result<_>>()?;
    let n = runs.len() as f64;
    let mean = (0..config.grid.len())
        .map(|i| {
            let mut row = ComparisonRow {
                n_obs: config.grid[i],
                bridge_err: 0.0,
                bridge_sd: 0.0,
                mcmc_err: 0.0,
                mcmc_sd: 0.0,
            };
            for run in &runs {
                row.bridge_err += run[i].bridge_err / n;
                row.bridge_sd += run[i].bridge_sd / n;
                row.mcmc_err += run[i].mcmc_err / n;
                row.mcmc_sd += run[i].mcmc_sd / n;
            }
            row
        })
        .collect();
    Ok(StudyResult { runs, mean })
}

/// Writes the averaged table as CSV, preceded by a comment line describing
/// the experiment.
pub fn write_comparison_csv<W: Write>(config: &StudyConfig, rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut out = out;
    writeln!(
        out,
        "# K={} repetitions={} burn_in={} samples={} seed={} prior_cov=inverse-Wishart(dof=K+2, scale=I)",
        config.k, config.repetitions, config.burn_in, config.samples, config.seed
    )?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| OracleError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
