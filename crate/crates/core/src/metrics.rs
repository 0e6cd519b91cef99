//! Task metrics: ℓ2 estimation error, classification accuracy, and MAE.

use ndarray::ArrayView1;

use crate::error::{Error, Result};

/// ‖θ̂ − θ*‖₂.
pub fn l2_error(theta_hat: ArrayView1<f64>, theta_star: ArrayView1<f64>) -> Result<f64> {
    if theta_hat.len() != theta_star.len() {
        return Err(Error::Dimension(format!(
            "length {} vs {}",
            theta_hat.len(),
            theta_star.len()
        )));
    }
    Ok(theta_hat
        .iter()
        .zip(theta_star.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Percentage of exact label matches.
pub fn accuracy(y_hat: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::Dimension(format!("length {} vs {}", y_hat.len(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::Data("empty label vectors".into()));
    }
    let hits = y_hat.iter().zip(y.iter()).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / y.len() as f64)
}

/// Mean absolute error.
pub fn mae(y_hat: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::Dimension(format!("length {} vs {}", y_hat.len(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::Data("empty vectors".into()));
    }
    Ok(y_hat
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr1;

    #[test]
    fn l2_cases() {
        let a = arr1(&[1.0, 2.0, 3.0]);
        assert_eq!(l2_error(a.view(), a.view()).unwrap(), 0.0);
        let b = arr1(&[1.0, 3.0, 3.0]);
        assert_relative_eq!(l2_error(a.view(), b.view()).unwrap(), 1.0);
        // independent norm computation on a random-ish pair
        let c = arr1(&[0.3, -1.2, 0.8]);
        let expect = ((1.0f64 - 0.3).powi(2) + (2.0f64 + 1.2).powi(2) + (3.0f64 - 0.8).powi(2)).sqrt();
        assert_relative_eq!(l2_error(a.view(), c.view()).unwrap(), expect, max_relative = 1e-15);
        assert!(l2_error(a.view(), arr1(&[1.0]).view()).is_err());
    }

    #[test]
    fn accuracy_cases() {
        let y = arr1(&[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(accuracy(y.view(), y.view()).unwrap(), 100.0);
        let none = arr1(&[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(accuracy(none.view(), y.view()).unwrap(), 0.0);
        let half = arr1(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(accuracy(half.view(), y.view()).unwrap(), 50.0);
    }

    #[test]
    fn mae_cases() {
        let y = arr1(&[1.0, 2.0, 3.0]);
        assert_eq!(mae(y.view(), y.view()).unwrap(), 0.0);
        let off = arr1(&[1.5, 2.5, 3.5]);
        assert_relative_eq!(mae(off.view(), y.view()).unwrap(), 0.5);
        let mixed = arr1(&[0.0, 4.0, 3.0]);
        assert_relative_eq!(mae(mixed.view(), y.view()).unwrap(), 1.0);
    }
}
