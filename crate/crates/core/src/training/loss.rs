use super::TrainingError;

/// Discriminator hinge loss `mean(max(0, 1 - real)) + mean(max(0, 1 + fake))`.
pub fn hinge_d_loss(real: &[f64], fake: &[f64]) -> Result<f64, TrainingError> {
    check(real)?;
    check(fake)?;
    let r = real.iter().map(|&s| (1.0 - s).max(0.0)).sum::<f64>() / real.len() as f64;
    let f = fake.iter().map(|&s| (1.0 + s).max(0.0)).sum::<f64>() / fake.len() as f64;
    Ok(r + f)
}

/// Generator hinge loss `-mean(fake)`.
pub fn hinge_g_loss(fake: &[f64]) -> Result<f64, TrainingError> {
    check(fake)?;
    Ok(-fake.iter().sum::<f64>() / fake.len() as f64)
}

/// Gradients of [`hinge_d_loss`] with respect to each score. At the hinge
/// kink the subgradient 0 is used.
pub fn hinge_d_grad(real: &[f64], fake: &[f64]) -> Result<(Vec<f64>, Vec<f64>), TrainingError> {
    check(real)?;
    check(fake)?;
    let nr = real.len() as f64;
    let nf = fake.len() as f64;
    let gr = real.iter().map(|&s| if s < 1.0 { -1.0 / nr } else { 0.0 }).collect();
    let gf = fake.iter().map(|&s| if s > -1.0 { 1.0 / nf } else { 0.0 }).collect();
    Ok((gr, gf))
}

/// Gradient of [`hinge_g_loss`] with respect to each fake score.
pub fn hinge_g_grad(fake: &[f64]) -> Result<Vec<f64>, TrainingError> {
    check(fake)?;
    Ok(vec![-1.0 / fake.len() as f64; fake.len()])
}

fn check(scores: &[f64]) -> Result<(), TrainingError> {
    if scores.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_values() {
        assert_eq!(hinge_d_loss(&[2.0, 1.5], &[-1.0, -3.0]).unwrap(), 0.0);
        assert_eq!(hinge_d_loss(&[0.0], &[0.0]).unwrap(), 2.0);
        assert_eq!(hinge_d_loss(&[1.0], &[-1.0]).unwrap(), 0.0);
        assert_eq!(hinge_g_loss(&[2.0]).unwrap(), -2.0);
        assert_eq!(hinge_g_loss(&[0.5, -0.5]).unwrap(), 0.0);
        assert_eq!(hinge_g_loss(&[-1.0, -1.0]).unwrap(), 1.0);
    }

    #[test]
    fn empty_batches_are_rejected() {
        assert!(matches!(hinge_d_loss(&[], &[1.0]), Err(TrainingError::EmptyBatch)));
        assert!(matches!(hinge_d_loss(&[1.0], &[]), Err(TrainingError::EmptyBatch)));
        assert!(matches!(hinge_g_loss(&[]), Err(TrainingError::EmptyBatch)));
        assert!(matches!(hinge_g_grad(&[]), Err(TrainingError::EmptyBatch)));
    }

    #[test]
    fn gradients_match_differences_away_from_kinks() {
        let real = [0.3, 1.7, -0.4];
        let fake = [-2.5, 0.1];
        let (gr, gf) = hinge_d_grad(&real, &fake).unwrap();
        let h = 1e-6;
        for i in 0..real.len() {
            let mut p = real;
            p[i] += h;
            let mut m = real;
            m[i] -= h;
            let num = (hinge_d_loss(&p, &fake).unwrap() - hinge_d_loss(&m, &fake).unwrap()) / (2.0 * h);
            assert!((num - gr[i]).abs() < 1e-8);
        }
        for i in 0..fake.len() {
            let mut p = fake;
            p[i] += h;
            let mut m = fake;
            m[i] -= h;
            let num = (hinge_d_loss(&real, &p).unwrap() - hinge_d_loss(&real, &m).unwrap()) / (2.0 * h);
            assert!((num - gf[i]).abs() < 1e-8);
        }
        assert_eq!(hinge_g_grad(&fake).unwrap(), vec![-0.5, -0.5]);
    }
}
