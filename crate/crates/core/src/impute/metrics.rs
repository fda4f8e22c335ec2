use crate::error::{Error, Result};
use crate::store::ConfidenceLevel;

fn check(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::LengthMismatch(pred.len(), actual.len()));
    }
    if actual.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    Ok(())
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check(pred, actual)?;
    let sse: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// Coefficient of determination `1 − SSE/SST`; negative when the
/// predictions are worse than the mean of `actual`.
pub fn r2(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check(pred, actual)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let sst: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedR2);
    }
    let sse: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(1.0 - sse / sst)
}

/// Confidence grade for imputed values from validation R².
pub fn rate_confidence(r2_val: f64) -> ConfidenceLevel {
    if r2_val > 0.8 {
        ConfidenceLevel::High
    } else if r2_val > 0.5 {
        ConfidenceLevel::Medium
    } else if r2_val > 0.2 {
        ConfidenceLevel::Low
    } else {
        ConfidenceLevel::VeryLow
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ConfidenceLevel::*;

    #[test]
    fn perfect_and_mean_predictions() {
        let y = [1.0, 2.0, 4.0];
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        let m = 7.0 / 3.0;
        assert!(r2(&[m, m, m], &y).unwrap().abs() < 1e-15);
    }

    #[test]
    fn hand_arithmetic() {
        // SSE = 1 + 9 = 10, MSE = 5; mean = 2, SST = 1 + 1 = 2
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5f64.sqrt());
        assert_eq!(r2(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), -4.0);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(r2(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::UndefinedR2)));
        assert!(matches!(rmse(&[], &[]), Err(Error::TooShort { .. })));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn grading_boundaries() {
        assert_eq!(rate_confidence(0.89), High);
        assert_eq!(rate_confidence(0.61), Medium);
        assert_eq!(rate_confidence(0.8), Medium);
        assert_eq!(rate_confidence(0.5), Low);
        assert_eq!(rate_confidence(0.2), VeryLow);
        assert_eq!(rate_confidence(-3.0), VeryLow);
        assert_eq!(rate_confidence(1.0), High);
    }
}
