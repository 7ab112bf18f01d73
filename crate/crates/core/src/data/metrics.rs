use crate::error::{Error, Result};

/// Mean squared and mean absolute error over the forecast horizon.
pub fn mse_mae(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "prediction length {} vs truth length {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let (se, ae) = pred
        .iter()
        .zip(truth)
        .fold((0.0, 0.0), |(se, ae), (p, t)| (se + (p - t) * (p - t), ae + (p - t).abs()));
    Ok((se / n, ae / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert_eq!(mse_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(mse_mae(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), (1.0, 1.0));
        assert_eq!(mse_mae(&[3.0, 0.0, 0.0], &[0.0; 3]).unwrap(), (3.0, 1.0));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(mse_mae(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn nonnegative_and_single_step_jensen(p in proptest::collection::vec(-10.0f64..10.0, 1..8), t0 in -10.0f64..10.0) {
            let truth = vec![t0; p.len()];
            let (mse, mae) = mse_mae(&p, &truth).unwrap();
            prop_assert!(mse >= 0.0 && mae >= 0.0);
            if p.len() == 1 {
                prop_assert!((mse - mae * mae).abs() <= 1e-12 * mse.max(1.0));
            }
            prop_assert!(mse + 1e-12 >= mae * mae);
        }
    }
}
