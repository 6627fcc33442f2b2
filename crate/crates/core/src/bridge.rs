//! Laplace bridge between Dirichlet beliefs on the simplex and diagonal
//! Gaussian beliefs in the softmax basis.
//!
//! Every map here uses the limit in which the measure restricting the sum of
//! the softmax coordinates collapses to a point mass, so Gaussian means live
//! on the hyperplane `sum(y) = 0` and the coupling strength never appears.

use nalgebra::DMatrix;
use thiserror::Error;

/// Lower bound applied by [`gaussian_to_dirichlet`] when the inverse map
/// produces a non-positive or non-finite concentration.
pub const DEFAULT_ALPHA_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "the softmax-basis map needs K > 2 (got K = {0}); use beta_to_gaussian_2d for two categories"
    )]
    Dimension(usize),
}

pub type Result<T> = std::result::Result<T, BridgeError>;

/// Dirichlet concentration vector over `K >= 2` categories.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletBelief {
    alpha: Vec<f64>,
}

impl DirichletBelief {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(BridgeError::InvalidArgument(format!(
                "a Dirichlet needs at least two categories, got {}",
                alpha.len()
            )));
        }
        if let Some((k, a)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0))
        {
            return Err(BridgeError::InvalidArgument(format!(
                "alpha[{k}] = {a} is not a positive finite number"
            )));
        }
        Ok(Self { alpha })
    }

    /// Symmetric Dirichlet with every concentration equal to `value`.
    pub fn symmetric(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Total concentration `sum_k alpha_k`.
    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Posterior mean `alpha / sum(alpha)`.
    pub fn mean(&self) -> Vec<f64> {
        let total = self.total();
        self.alpha.iter().map(|a| a / total).collect()
    }

    /// Conjugate update with (pseudo-)counts.
    pub fn with_counts(&self, counts: &[f64]) -> Result<Self> {
        if counts.len() != self.alpha.len() {
            return Err(BridgeError::InvalidArgument(format!(
                "count vector has length {} but the belief has {} categories",
                counts.len(),
                self.alpha.len()
            )));
        }
        Self::new(
            self.alpha
                .iter()
                .zip(counts)
                .map(|(a, n)| a + n)
                .collect(),
        )
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.alpha
    }
}

/// Diagonal Gaussian over softmax-basis coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl GaussianBelief {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(BridgeError::InvalidArgument(format!(
                "mean has length {} but variance has length {}",
                mean.len(),
                variance.len()
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(BridgeError::InvalidArgument(
                "Gaussian mean contains a non-finite entry".into(),
            ));
        }
        if let Some((k, v)) = variance
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(BridgeError::InvalidArgument(format!(
                "variance[{k}] = {v} is not a positive finite number"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Full inverse Hessian of the softmax-basis Dirichlet log density at its
/// mode. Only exposed for checking the diagonal approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct FullBridgeCovariance {
    pub matrix: DMatrix<f64>,
}

/// Result of [`gaussian_to_dirichlet_with_floor`]: the belief and how many
/// entries had to be clamped to the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseMap {
    pub belief: DirichletBelief,
    pub clamped: usize,
}

/// Numerically safe softmax.
pub fn softmax(y: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(BridgeError::InvalidArgument("softmax of an empty vector".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(BridgeError::InvalidArgument(
            "softmax input contains a non-finite entry".into(),
        ));
    }
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

fn require_bridge_dim(k: usize) -> Result<()> {
    if k <= 2 {
        Err(BridgeError::Dimension(k))
    } else {
        Ok(())
    }
}

// Shared by the diagonal map and the full inverse Hessian so both produce
// identical diagonals.
#[inline]
fn diagonal_variance(inv_alpha: f64, sum_inv_alpha: f64, k: f64) -> f64 {
    inv_alpha * (1.0 - 2.0 / k) + sum_inv_alpha / (k * k)
}

/// Laplace approximation of a Dirichlet in the softmax basis.
///
/// The mean is the mode `log(alpha_k) - mean(log(alpha))`; the variances are
/// the diagonal of the inverse Hessian at that mode.
pub fn dirichlet_to_gaussian(d: &DirichletBelief) -> Result<GaussianBelief> {
    let k = d.dim();
    require_bridge_dim(k)?;
    let kf = k as f64;
    let logs: Vec<f64> = d.alpha.iter().map(|a| a.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / kf;
    let sum_inv: f64 = d.alpha.iter().map(|a| 1.0 / a).sum();
    let mean = logs.iter().map(|l| l - mean_log).collect();
    let variance = d
        .alpha
        .iter()
        .map(|a| diagonal_variance(1.0 / a, sum_inv, kf))
        .collect();
    GaussianBelief::new(mean, variance)
}

/// Inverse of [`dirichlet_to_gaussian`], clamping to [`DEFAULT_ALPHA_FLOOR`].
pub fn gaussian_to_dirichlet(g: &GaussianBelief) -> Result<DirichletBelief> {
    gaussian_to_dirichlet_with_floor(g, DEFAULT_ALPHA_FLOOR).map(|m| m.belief)
}

/// Inverse map `alpha_k = (1 - 2/K + exp(mu_k) sum_l exp(-mu_l) / K^2) / Sigma_kk`.
///
/// Entries that come out non-positive or non-finite are replaced by `floor`
/// and counted in [`InverseMap::clamped`].
pub fn gaussian_to_dirichlet_with_floor(g: &GaussianBelief, floor: f64) -> Result<InverseMap> {
    let k = g.dim();
    require_bridge_dim(k)?;
    if !(floor.is_finite() && floor > 0.0) {
        return Err(BridgeError::InvalidArgument(format!(
            "alpha floor must be positive, got {floor}"
        )));
    }
    let kf = k as f64;
    // exp(mu_k) * sum_l exp(-mu_l) is shift invariant; centre first so the
    // exponentials stay in range for uncentred GP predictions.
    let centre = g.mean.iter().sum::<f64>() / kf;
    let centred: Vec<f64> = g.mean.iter().map(|m| m - centre).collect();
    let sum_exp_neg: f64 = centred.iter().map(|m| (-m).exp()).sum();
    let base = 1.0 - 2.0 / kf;
    let mut clamped = 0;
    let alpha = centred
        .iter()
        .zip(&g.variance)
        .map(|(m, v)| {
            let a = (base + m.exp() * sum_exp_neg / (kf * kf)) / v;
            if a.is_finite() && a >= floor {
                a
            } else {
                clamped += 1;
                floor
            }
        })
        .collect();
    Ok(InverseMap {
        belief: DirichletBelief::new(alpha)?,
        clamped,
    })
}

/// Inverse Hessian `delta_kl / alpha_k - (1/alpha_k + 1/alpha_l - sum_u(1/alpha_u)/K) / K`.
pub fn full_inverse_hessian(d: &DirichletBelief) -> Result<FullBridgeCovariance> {
    let k = d.dim();
    require_bridge_dim(k)?;
    let kf = k as f64;
    let inv: Vec<f64> = d.alpha.iter().map(|a| 1.0 / a).collect();
    let sum_inv: f64 = d.alpha.iter().map(|a| 1.0 / a).sum();
    let matrix = DMatrix::from_fn(k, k, |r, c| {
        if r == c {
            diagonal_variance(inv[r], sum_inv, kf)
        } else {
            -(inv[r] + inv[c] - sum_inv / kf) / kf
        }
    });
    Ok(FullBridgeCovariance { matrix })
}

/// Two-category special case: a Beta(a, b) mapped to the logit line.
///
/// Returns `(log(a/b), 1/a + 1/b)`.
pub fn beta_to_gaussian_2d(a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0) {
        return Err(BridgeError::InvalidArgument(format!(
            "Beta parameters must be positive and finite, got ({a}, {b})"
        )));
    }
    Ok(((a / b).ln(), 1.0 / a + 1.0 / b))
}
