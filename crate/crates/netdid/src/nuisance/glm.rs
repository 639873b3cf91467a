//! Ridge-regularized GLM fits: logistic regression by Newton iteration with
//! iteratively reweighted least squares, and linear regression by the normal
//! equations.
//!
//! Objectives are penalized mean losses over the fitting rows,
//!
//! ```text
//! logistic:  (1/n) sum_i [ -y_i eta_i + log(1 + exp(eta_i)) ] + (lambda/2) ||beta_(-0)||^2
//! linear:    (1/n) sum_i  0.5 (y_i - eta_i)^2                + (lambda/2) ||beta_(-0)||^2
//! ```
//!
//! with `eta = F beta`. Column 0 is treated as the intercept: it is neither
//! standardized nor penalized. All other columns are standardized internally
//! (zero-variance columns are centered to exactly zero, so their
//! coefficients come back exactly zero) and the solution is mapped back to
//! the original column scale before it is returned, so `weights` always
//! applies to the features as given. The ridge penalty therefore acts on the
//! standardized scale, which keeps its effect comparable across columns of
//! very different magnitude.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nuisance::FeatureMatrix;

/// Options for both GLM fitters.
#[derive(Debug, Clone)]
pub struct GlmConfig {
    /// Ridge penalty on the standardized non-intercept coefficients.
    pub ridge: f64,
    /// Newton iteration cap for the logistic fit.
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the penalized mean-loss
    /// gradient.
    pub tol: f64,
}

impl Default for GlmConfig {
    fn default() -> Self {
        GlmConfig {
            ridge: 1e-6,
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

/// A fitted GLM with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct GlmFit {
    /// Coefficients on the original (unstandardized) feature columns.
    pub weights: Vec<f64>,
    /// Whether the gradient tolerance was reached.
    pub converged: bool,
    /// Newton iterations taken (1 for the linear fit).
    pub iterations: usize,
    /// Final max-norm of the penalized mean-loss gradient, standardized
    /// scale.
    pub grad_norm: f64,
    /// Final penalized mean loss, standardized scale.
    pub loss: f64,
}

impl GlmFit {
    /// Linear predictor `F w` for each row of `features`.
    pub fn predict_linear(&self, features: &FeatureMatrix) -> Vec<f64> {
        assert_eq!(features.q, self.weights.len(), "feature width mismatch");
        (0..features.n)
            .map(|i| {
                features
                    .row(i)
                    .iter()
                    .zip(&self.weights)
                    .map(|(f, w)| f * w)
                    .sum()
            })
            .collect()
    }

    /// Fitted probabilities `sigmoid(F w)` for each row of `features`.
    pub fn predict_proba(&self, features: &FeatureMatrix) -> Vec<f64> {
        self.predict_linear(features)
            .into_iter()
            .map(sigmoid)
            .collect()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Standardized {
    /// Column-major standardized design, `n x q`.
    f: DMatrix<f64>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

fn standardize(features: &FeatureMatrix) -> Standardized {
    let (n, q) = (features.n, features.q);
    let mut center = vec![0.0; q];
    let mut scale = vec![1.0; q];
    for j in 1..q {
        let mean = (0..n).map(|i| features.data[i * q + j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| {
                let d = features.data[i * q + j] - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        center[j] = mean;
        scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let mut f = DMatrix::zeros(n, q);
    for i in 0..n {
        for j in 0..q {
            f[(i, j)] = (features.data[i * q + j] - center[j]) / scale[j];
        }
    }
    // Column 0 is the intercept: leave it untouched.
    for i in 0..n {
        f[(i, 0)] = features.data[i * q];
    }
    Standardized { f, center, scale }
}

/// Maps standardized-scale coefficients back to the original columns.
fn unfold(beta: &DVector<f64>, std: &Standardized) -> Vec<f64> {
    let q = beta.len();
    let mut w = vec![0.0; q];
    let mut intercept = beta[0];
    for j in 1..q {
        w[j] = beta[j] / std.scale[j];
        intercept -= beta[j] * std.center[j] / std.scale[j];
    }
    w[0] = intercept;
    w
}

fn validate_inputs(features: &FeatureMatrix, targets: &[f64]) -> Result<()> {
    if features.n == 0 {
        return Err(Error::InvalidData("cannot fit a GLM on zero rows".into()));
    }
    if targets.len() != features.n {
        return Err(Error::LengthMismatch {
            what: "glm targets",
            got: targets.len(),
            expected: features.n,
        });
    }
    for (row, v) in features.data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "glm features",
                row: row / features.q,
            });
        }
    }
    for (row, v) in targets.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "glm targets",
                row,
            });
        }
    }
    Ok(())
}

/// Fits a ridge-penalized logistic regression of binary `labels` on
/// `features` by Newton/IRLS with step halving.
pub fn fit_logistic(
    features: &FeatureMatrix,
    labels: &[f64],
    config: &GlmConfig,
) -> Result<GlmFit> {
    validate_inputs(features, labels)?;
    for (row, &y) in labels.iter().enumerate() {
        if y != 0.0 && y != 1.0 {
            return Err(Error::InvalidData(format!(
                "logistic labels must be 0 or 1, got {y} at row {row}"
            )));
        }
    }
    let n = features.n;
    let q = features.q;
    let lambda = config.ridge;
    let std = standardize(features);
    let y = DVector::from_column_slice(labels);

    let mut beta = DVector::zeros(q);
    let mut eta = &std.f * &beta;
    let mut loss = penalized_logistic_loss(&eta, &y, &beta, lambda);
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    for iter in 1..=config.max_iter {
        iterations = iter;
        let p: DVector<f64> = eta.map(sigmoid);
        // Penalized mean-loss gradient; the intercept is unpenalized.
        let mut grad = std.f.transpose() * (&p - &y) / n as f64;
        for j in 1..q {
            grad[j] += lambda * beta[j];
        }
        grad_norm = grad.amax();
        if grad_norm <= config.tol {
            converged = true;
            break;
        }

        // Newton direction from the weighted normal equations.
        let mut fw = std.f.clone();
        for i in 0..n {
            let w = (p[i] * (1.0 - p[i])).max(1e-10).sqrt();
            for j in 0..q {
                fw[(i, j)] *= w;
            }
        }
        let mut h = fw.transpose() * &fw / n as f64;
        for j in 1..q {
            h[(j, j)] += lambda;
        }
        let chol = Cholesky::new(h).ok_or(Error::SingularSystem("logistic IRLS step"))?;
        let step = chol.solve(&grad);

        // Step halving keeps the penalized loss monotone.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &beta - &step * t;
            let cand_eta = &std.f * &candidate;
            let cand_loss = penalized_logistic_loss(&cand_eta, &y, &candidate, lambda);
            if cand_loss <= loss {
                beta = candidate;
                eta = cand_eta;
                loss = cand_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent left at any step length: we are at numerical
            // convergence.
            break;
        }
    }

    Ok(GlmFit {
        weights: unfold(&beta, &std),
        converged,
        iterations,
        grad_norm,
        loss,
    })
}

fn penalized_logistic_loss(
    eta: &DVector<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let n = eta.len();
    let fit: f64 = (0..n).map(|i| -y[i] * eta[i] + softplus(eta[i])).sum();
    let pen: f64 = (1..beta.len()).map(|j| beta[j] * beta[j]).sum();
    fit / n as f64 + 0.5 * lambda * pen
}

/// Fits a ridge-penalized linear regression of `targets` on `features` via
/// the normal equations.
pub fn fit_least_squares(
    features: &FeatureMatrix,
    targets: &[f64],
    config: &GlmConfig,
) -> Result<GlmFit> {
    validate_inputs(features, targets)?;
    let n = features.n;
    let q = features.q;
    let lambda = config.ridge;
    let std = standardize(features);
    let y = DVector::from_column_slice(targets);

    let mut h = std.f.transpose() * &std.f / n as f64;
    for j in 1..q {
        h[(j, j)] += lambda;
    }
    let rhs = std.f.transpose() * &y / n as f64;
    let chol = match Cholesky::new(h.clone()) {
        Some(c) => c,
        None => {
            // A rank-deficient unpenalized system: retry with a minimal
            // jitter on the whole diagonal so the solve is defined.
            for j in 0..q {
                h[(j, j)] += 1e-12;
            }
            Cholesky::new(h).ok_or(Error::SingularSystem("least squares normal equations"))?
        }
    };
    let beta = chol.solve(&rhs);

    let eta = &std.f * &beta;
    let resid = &y - &eta;
    let pen: f64 = (1..q).map(|j| beta[j] * beta[j]).sum();
    let loss = 0.5 * resid.dot(&resid) / n as f64 + 0.5 * lambda * pen;
    let mut grad = std.f.transpose() * (-&resid) / n as f64;
    for j in 1..q {
        grad[j] += lambda * beta[j];
    }

    Ok(GlmFit {
        weights: unfold(&beta, &std),
        converged: true,
        iterations: 1,
        grad_norm: grad.amax(),
        loss,
    })
}
