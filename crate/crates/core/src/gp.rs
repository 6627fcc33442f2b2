//! Gaussian process regression from per-document Gaussian messages.
//!
//! Each topic's latent function receives one message per document with mean
//! `mu_d` and variance `sigma2_d + tau^2`. The posterior is computed through
//! the well-conditioned matrix `B = I + S^{1/2} H S^{1/2}`, with `S` the
//! diagonal of message precisions and `H` the kernel matrix; every eigenvalue
//! of `B` is at least one.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{FeaturePoint, FeatureSpace, KernelError, KernelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "kernel matrix could not be factorised after jitter {jitter:e}; smallest eigenvalue estimate {min_eigenvalue:e}"
    )]
    Factorization { jitter: f64, min_eigenvalue: f64 },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, GpError>;

/// Diagonal jitter added to the kernel matrix, relative to its mean diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub initial: f64,
    pub max: f64,
    pub growth: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-10,
            max: 1e-4,
            growth: 10.0,
        }
    }
}

/// Gaussian messages for one topic across all documents.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMessages {
    means: Vec<f64>,
    /// Variance contributed by the Laplace bridge, without observation noise.
    bridge_variances: Vec<f64>,
    tau: f64,
    variances: Vec<f64>,
    precisions: Vec<f64>,
    precision_adjusted_means: Vec<f64>,
}

impl GaussianMessages {
    /// Messages with variance `bridge_variances[d] + tau^2`.
    pub fn new(means: Vec<f64>, bridge_variances: Vec<f64>, tau: f64) -> Result<Self> {
        if means.len() != bridge_variances.len() {
            return Err(GpError::InvalidArgument(format!(
                "{} means for {} variances",
                means.len(),
                bridge_variances.len()
            )));
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(GpError::InvalidArgument(format!("tau must be non-negative, got {tau}")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(GpError::InvalidArgument("message mean is not finite".into()));
        }
        let tau2 = tau * tau;
        let variances: Vec<f64> = bridge_variances.iter().map(|v| v + tau2).collect();
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(GpError::InvalidArgument(format!(
                "message variance {v} is not positive and finite"
            )));
        }
        let precisions: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
        if precisions.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(GpError::InvalidArgument("message precision underflow".into()));
        }
        let precision_adjusted_means = means.iter().zip(&precisions).map(|(m, p)| m * p).collect();
        Ok(Self {
            means,
            bridge_variances,
            tau,
            variances,
            precisions,
            precision_adjusted_means,
        })
    }

    /// Messages whose total variances are given directly (`tau = 0`).
    pub fn from_variances(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        Self::new(means, variances, 0.0)
    }

    /// Same means and bridge variances, different noise level.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.means.clone(), self.bridge_variances.clone(), tau)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn bridge_variances(&self) -> &[f64] {
        &self.bridge_variances
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn precisions(&self) -> &[f64] {
        &self.precisions
    }

    pub fn precision_adjusted_means(&self) -> &[f64] {
        &self.precision_adjusted_means
    }
}

/// Log-domain kernel parameters followed by `log tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub xi: Vec<f64>,
}

impl Hyperparameters {
    pub fn new(kernel: &KernelSpec, tau: f64) -> Result<Self> {
        kernel.validate()?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(GpError::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        let mut xi = kernel.log_params();
        xi.push(tau.ln());
        Ok(Self { xi })
    }

    /// Kernel of the same family as `template` with these parameters.
    pub fn kernel(&self, template: &KernelSpec) -> Result<KernelSpec> {
        let n = template.num_params();
        if self.xi.len() != n + 1 {
            return Err(GpError::InvalidArgument(format!(
                "{} hyperparameters for a kernel with {n} parameters plus tau",
                self.xi.len()
            )));
        }
        Ok(template.with_log_params(&self.xi[..n])?)
    }

    pub fn tau(&self) -> f64 {
        self.xi.last().copied().unwrap_or(0.0).exp()
    }
}

/// A fitted GP for one topic. Immutable after [`fit`].
#[derive(Debug, Clone)]
pub struct GpTopicModel {
    kernel: KernelSpec,
    features: Arc<FeatureSpace>,
    messages: GaussianMessages,
    /// Kernel matrix over the training inputs, jitter included.
    gram: DMatrix<f64>,
    jitter: f64,
    sqrt_precisions: DVector<f64>,
    /// Lower Cholesky factor of `B`.
    chol_b: DMatrix<f64>,
    /// `(H + Sigma)^{-1} mu`.
    solve_vector: DVector<f64>,
}

fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    nalgebra::Cholesky::new(m.clone()).map(|c| c.unpack())
}

fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b).expect("Cholesky factor has a non-zero diagonal")
}

/// Fits the posterior GP for one topic over all documents of `features`.
pub fn fit(
    kernel: &KernelSpec,
    features: Arc<FeatureSpace>,
    msgs: &GaussianMessages,
    jitter: &JitterPolicy,
) -> Result<GpTopicModel> {
    kernel.validate()?;
    let n = features.len();
    if msgs.len() != n {
        return Err(GpError::InvalidArgument(format!(
            "{} messages for {n} training inputs",
            msgs.len()
        )));
    }
    if n == 0 {
        return Err(GpError::InvalidArgument("no training inputs".into()));
    }
    let subset: Vec<usize> = (0..n).collect();
    let raw = kernel.gram_matrix(&features, &subset)?;
    let f = factorize(raw, msgs, jitter)?;
    Ok(GpTopicModel {
        kernel: kernel.clone(),
        features,
        messages: msgs.clone(),
        gram: f.gram,
        jitter: f.jitter,
        sqrt_precisions: f.sqrt_precisions,
        chol_b: f.chol_b,
        solve_vector: f.solve_vector,
    })
}

struct Factorization {
    gram: DMatrix<f64>,
    jitter: f64,
    sqrt_precisions: DVector<f64>,
    chol_b: DMatrix<f64>,
    solve_vector: DVector<f64>,
}

fn factorize(raw: DMatrix<f64>, msgs: &GaussianMessages, jitter: &JitterPolicy) -> Result<Factorization> {
    let n = raw.nrows();
    let mean_diag = {
        let m = raw.diagonal().mean();
        if m > 0.0 && m.is_finite() {
            m
        } else {
            1.0
        }
    };
    let s = DVector::from_iterator(n, msgs.precisions().iter().map(|p| p.sqrt()));
    let mut rel = jitter.initial;
    loop {
        let j = rel * mean_diag;
        let mut gram = raw.clone();
        for i in 0..n {
            gram[(i, i)] += j;
        }
        let mut b = DMatrix::from_fn(n, n, |r, c| s[r] * gram[(r, c)] * s[c]);
        for i in 0..n {
            b[(i, i)] += 1.0;
        }
        if let Some(chol_b) = cholesky_lower(&b) {
            let mu = DVector::from_column_slice(msgs.means());
            let half = solve_lower(&chol_b, &s.component_mul(&mu));
            let full = chol_b
                .tr_solve_lower_triangular(&half)
                .expect("Cholesky factor has a non-zero diagonal");
            let solve_vector = s.component_mul(&full);
            return Ok(Factorization {
                gram,
                jitter: j,
                sqrt_precisions: s,
                chol_b,
                solve_vector,
            });
        }
        if rel >= jitter.max {
            let min_eigenvalue = SymmetricEigen::new(raw)
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            return Err(GpError::Factorization {
                jitter: j,
                min_eigenvalue,
            });
        }
        rel = if rel > 0.0 { (rel * jitter.growth).min(jitter.max) } else { 1e-10f64.min(jitter.max) };
    }
}

impl GpTopicModel {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn features(&self) -> &Arc<FeatureSpace> {
        &self.features
    }

    pub fn messages(&self) -> &GaussianMessages {
        &self.messages
    }

    /// Absolute jitter that was added to the kernel diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve_vector(&self) -> &DVector<f64> {
        &self.solve_vector
    }

    /// Lower Cholesky factor of `B = I + S^{1/2} H S^{1/2}`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.chol_b
    }

    /// Posterior mean and variance of the latent function at `query`.
    pub fn predict(&self, query: &FeaturePoint) -> Result<(f64, f64)> {
        let q = self.features.resolve(query)?;
        let subset: Vec<usize> = (0..self.features.len()).collect();
        let cross = self.kernel.cross(&self.features, &subset, q)?;
        let prior = self.kernel.eval(q, q)?;
        Ok(self.posterior(&cross, prior))
    }

    fn posterior(&self, cross: &DVector<f64>, prior: f64) -> (f64, f64) {
        let mean = cross.dot(&self.solve_vector);
        let v = solve_lower(&self.chol_b, &self.sqrt_precisions.component_mul(cross));
        let var = (prior - v.norm_squared()).clamp(prior * f64::EPSILON, prior);
        (mean, var)
    }

    /// Posterior mean and variance at every training input.
    pub fn predict_training(&self) -> Vec<(f64, f64)> {
        let n = self.gram.nrows();
        let means = &self.gram * &self.solve_vector;
        let scaled = DMatrix::from_fn(n, n, |r, c| self.sqrt_precisions[r] * self.gram[(r, c)]);
        let v = self
            .chol_b
            .solve_lower_triangular(&scaled)
            .expect("Cholesky factor has a non-zero diagonal");
        (0..n)
            .map(|d| {
                let prior = self.gram[(d, d)] - self.jitter;
                let var = (prior - v.column(d).norm_squared()).clamp(prior * f64::EPSILON, prior);
                (means[d], var)
            })
            .collect()
    }

    /// Cavity distribution of the latent function at every training input:
    /// the posterior with that input's own message divided out.
    pub fn predict_cavity(&self) -> Vec<(f64, f64)> {
        let zeta = self.messages.precisions();
        let mu = self.messages.means();
        self.predict_training()
            .into_iter()
            .enumerate()
            .map(|(d, (m, v))| {
                let prior = self.gram[(d, d)] - self.jitter;
                let precision = (1.0 / v - zeta[d]).max(1.0 / prior);
                let var = 1.0 / precision;
                (var * (m / v - zeta[d] * mu[d]), var)
            })
            .collect()
    }

    /// `0.5 * (log|S| - log|B| - mu^T S^{1/2} B^{-1} S^{1/2} mu)`.
    pub fn log_evidence(&self) -> f64 {
        let log_det_s: f64 = self.messages.precisions().iter().map(|p| p.ln()).sum();
        let log_det_b: f64 = 2.0 * self.chol_b.diagonal().iter().map(|l| l.ln()).sum::<f64>();
        let mu = DVector::from_column_slice(self.messages.means());
        let half = solve_lower(&self.chol_b, &self.sqrt_precisions.component_mul(&mu));
        0.5 * (log_det_s - log_det_b - half.norm_squared())
    }

    /// `(H + Sigma)^{-1} = S^{1/2} B^{-1} S^{1/2}`.
    fn inverse_covariance(&self) -> DMatrix<f64> {
        let n = self.chol_b.nrows();
        let linv = self
            .chol_b
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Cholesky factor has a non-zero diagonal");
        let binv = linv.transpose() * linv;
        DMatrix::from_fn(n, n, |r, c| {
            self.sqrt_precisions[r] * binv[(r, c)] * self.sqrt_precisions[c]
        })
    }

    /// Gradient of [`GpTopicModel::log_evidence`] with respect to the log
    /// kernel parameters and `log tau`, in [`Hyperparameters`] order.
    pub fn evidence_gradient(&self) -> Result<Vec<f64>> {
        if !self.kernel.supports_derivatives() {
            return Err(GpError::Unsupported(
                "kernel does not provide parameter derivatives".into(),
            ));
        }
        let w = &self.solve_vector;
        let cinv = self.inverse_covariance();
        let weights = w * w.transpose() - &cinv;
        let subset: Vec<usize> = (0..self.features.len()).collect();
        let mut grad: Vec<f64> = self
            .kernel
            .contract_derivatives(&self.features, &subset, &weights)?
            .into_iter()
            .map(|g| 0.5 * g)
            .collect();
        // d Sigma / d log tau = 2 tau^2 I
        let tau2 = self.messages.tau() * self.messages.tau();
        grad.push(tau2 * weights.trace());
        Ok(grad)
    }
}

/// Summed log evidence over topics and its gradient at `hypers`.
pub fn summed_evidence(
    template: &KernelSpec,
    features: &Arc<FeatureSpace>,
    msgs: &[GaussianMessages],
    hypers: &Hyperparameters,
    jitter: &JitterPolicy,
) -> Result<(f64, Vec<f64>)> {
    let kernel = hypers.kernel(template)?;
    let tau = hypers.tau();
    let mut total = 0.0;
    let mut grad = vec![0.0; hypers.xi.len()];
    for m in msgs {
        let model = fit(&kernel, features.clone(), &m.with_tau(tau)?, jitter)?;
        total += model.log_evidence();
        for (g, v) in grad.iter_mut().zip(model.evidence_gradient()?) {
            *g += v;
        }
    }
    Ok((total, grad))
}

/// Outcome of [`optimize_hypers`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    /// Summed log evidence before the first step and after every accepted step.
    pub trace: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    /// Stopped because the gradient vanished.
    pub converged: bool,
    /// Stopped after too many consecutive rejected proposals.
    pub aborted: bool,
}

const MAX_REJECTIONS: usize = 30;
const GRADIENT_TOL: f64 = 1e-10;
const ARMIJO: f64 = 1e-4;
/// Log-domain box for every hyperparameter.
const LOG_BOUND: f64 = 14.0;

/// Gradient ascent with backtracking on the summed log evidence.
///
/// Returns hyperparameters whose summed log evidence is never below that of
/// the input.
pub fn optimize_hypers(
    template: &KernelSpec,
    features: &Arc<FeatureSpace>,
    msgs: &[GaussianMessages],
    hypers: &Hyperparameters,
    steps: usize,
    jitter: &JitterPolicy,
) -> Result<(Hyperparameters, OptimizationReport)> {
    if steps == 0 {
        return Err(GpError::InvalidArgument("steps must be at least 1".into()));
    }
    let (mut f, mut g) = summed_evidence(template, features, msgs, hypers, jitter)?;
    if !f.is_finite() {
        return Err(GpError::InvalidArgument(
            "summed log evidence is not finite at the starting point".into(),
        ));
    }
    let mut xi = hypers.xi.clone();
    let mut report = OptimizationReport {
        trace: vec![f],
        accepted: 0,
        rejected: 0,
        converged: false,
        aborted: false,
    };
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut eta = if gmax > 0.0 { 0.5 / gmax } else { 1.0 };
    for _ in 0..steps {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gnorm >= GRADIENT_TOL) {
            report.converged = true;
            break;
        }
        let mut rejections = 0;
        loop {
            let proposal: Vec<f64> = xi
                .iter()
                .zip(&g)
                .map(|(x, gv)| (x + eta * gv).clamp(-LOG_BOUND, LOG_BOUND))
                .collect();
            let moved: f64 = proposal.iter().zip(&xi).zip(&g).map(|((p, x), gv)| (p - x) * gv).sum();
            let candidate = Hyperparameters { xi: proposal };
            let outcome = summed_evidence(template, features, msgs, &candidate, jitter);
            match outcome {
                Ok((fc, gc)) if fc.is_finite() && moved > 0.0 && fc >= f + ARMIJO * moved => {
                    xi = candidate.xi;
                    f = fc;
                    g = gc;
                    eta *= 2.0;
                    report.accepted += 1;
                    report.trace.push(f);
                    break;
                }
                _ => {
                    eta *= 0.5;
                    rejections += 1;
                    report.rejected += 1;
                    if rejections >= MAX_REJECTIONS {
                        report.aborted = true;
                        break;
                    }
                }
            }
        }
        if report.aborted {
            break;
        }
    }
    Ok((Hyperparameters { xi }, report))
}
