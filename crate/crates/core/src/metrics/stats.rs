use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::MetricsError;

/// Eigenvalues in `(-PSD_TOLERANCE, 0)` are treated as estimator noise.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Probability floor inside the KL logarithms.
const LOG_FLOOR: f64 = 1e-12;

/// Gaussian summary of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Column means and unbiased (`n - 1`) covariance of an `n x d` matrix.
pub fn feature_stats(features: &DMatrix<f64>) -> Result<GaussianStats, MetricsError> {
    let n = features.nrows();
    if n < 2 {
        return Err(MetricsError::InsufficientSamples { n });
    }
    let mu = features.row_mean().transpose();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let mut sigma = centered.tr_mul(&centered) / (n as f64 - 1.0);
    symmetrize(&mut sigma);
    Ok(GaussianStats { mu, sigma, n })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Eigenvalues of a symmetric matrix with noise-level negatives set to zero.
fn clamped_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, MetricsError> {
    let mut eig = m.symmetric_eigen();
    for v in eig.eigenvalues.iter_mut() {
        if *v < -PSD_TOLERANCE || v.is_nan() {
            return Err(MetricsError::NonPSDInput(*v));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() || a.sigma.shape() != (a.dim(), a.dim()) || b.sigma.shape() != (b.dim(), b.dim()) {
        return Err(MetricsError::DimensionMismatch { a: a.dim(), b: b.dim() });
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();

    let eig_a = clamped_eigen(a.sigma.clone())?;
    clamped_eigen(b.sigma.clone())?;
    let sqrt_vals = eig_a.eigenvalues.map(f64::sqrt);
    let sqrt_a = &eig_a.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig_a.eigenvectors.transpose();
    let mut inner = &sqrt_a * &b.sigma * &sqrt_a;
    symmetrize(&mut inner);
    let eig_inner = clamped_eigen(inner)?;
    let cross: f64 = eig_inner.eigenvalues.iter().map(|v| v.sqrt()).sum();

    let d = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Inception Score of a row-stochastic `n x K` matrix: mean and population
/// standard deviation over `splits` contiguous chunks, the last chunk taking
/// the remainder.
pub fn inception_score(probs: &DMatrix<f64>, splits: usize) -> Result<(f64, f64), MetricsError> {
    let n = probs.nrows();
    if splits == 0 || n < splits {
        return Err(MetricsError::TooFewSamples { n, splits });
    }
    for (i, row) in probs.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(MetricsError::NotStochastic { row: i, sum: s });
        }
    }
    let chunk = n / splits;
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let start = s * chunk;
        let end = if s + 1 == splits { n } else { start + chunk };
        let part = probs.rows(start, end - start);
        let marginal = part.row_mean();
        let log_marginal: Vec<f64> = marginal.iter().map(|&p| p.max(LOG_FLOOR).ln()).collect();
        let mut kl_sum = 0.0;
        for row in part.row_iter() {
            for (&p, &lq) in row.iter().zip(&log_marginal) {
                if p > 0.0 {
                    kl_sum += p * (p.max(LOG_FLOOR).ln() - lq);
                }
            }
        }
        scores.push((kl_sum / (end - start) as f64).exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

/// Split count used when none is configured: 10 for large sample sets, 1
/// otherwise.
pub fn default_splits(n: usize) -> usize {
    if n >= 1000 {
        10
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mu: &[f64], sigma: &[f64]) -> GaussianStats {
        let d = mu.len();
        GaussianStats { mu: DVector::from_row_slice(mu), sigma: DMatrix::from_row_slice(d, d, sigma), n: 100 }
    }

    #[test]
    fn two_point_stats() {
        let s = feature_stats(&DMatrix::from_row_slice(2, 1, &[0.0, 2.0])).unwrap();
        assert_eq!(s.mu[0], 1.0);
        assert_eq!(s.sigma[(0, 0)], 2.0);
    }

    #[test]
    fn constant_rows_have_zero_covariance() {
        let s = feature_stats(&DMatrix::from_row_slice(3, 2, &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0])).unwrap();
        assert!(s.sigma.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_row_is_rejected() {
        let err = feature_stats(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, MetricsError::InsufficientSamples { n: 1 }));
    }

    #[test]
    fn scalar_closed_form() {
        let d = frechet_distance(&stats(&[0.0], &[1.0]), &stats(&[3.0], &[1.0])).unwrap();
        assert!((d - 9.0).abs() < 1e-9);
    }

    #[test]
    fn diagonal_closed_form() {
        let a = stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, 4.0]);
        let b = stats(&[1.0, 1.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_and_psd_errors() {
        let a = stats(&[0.0], &[1.0]);
        let b = stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(frechet_distance(&a, &b), Err(MetricsError::DimensionMismatch { a: 1, b: 2 })));
        let bad = stats(&[0.0], &[-0.5]);
        assert!(matches!(frechet_distance(&bad, &a), Err(MetricsError::NonPSDInput(_))));
        let noisy = stats(&[0.0], &[-1e-10]);
        assert!(frechet_distance(&noisy, &noisy).unwrap() < 1e-8);
    }

    #[test]
    fn inception_score_closed_forms() {
        let one_hot = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let (m, s) = inception_score(&one_hot, 1).unwrap();
        assert!((m - 3.0).abs() < 1e-9 && s == 0.0);
        let uniform = DMatrix::from_element(5, 4, 0.25);
        assert!((inception_score(&uniform, 1).unwrap().0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn remainder_goes_to_last_split() {
        // Rows 0-1 identical (score 1), rows 2-4 balanced one-hot (score 3).
        let p = DMatrix::from_row_slice(
            5,
            3,
            &[0.2, 0.3, 0.5, 0.2, 0.3, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let (m, s) = inception_score(&p, 2).unwrap();
        assert!((m - 2.0).abs() < 1e-9);
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inception_score_errors() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5]);
        assert!(matches!(inception_score(&p, 1), Err(MetricsError::NotStochastic { row: 0, .. })));
        let p = DMatrix::from_element(2, 2, 0.5);
        assert!(matches!(inception_score(&p, 3), Err(MetricsError::TooFewSamples { n: 2, splits: 3 })));
        assert!(matches!(inception_score(&p, 0), Err(MetricsError::TooFewSamples { .. })));
    }
}
