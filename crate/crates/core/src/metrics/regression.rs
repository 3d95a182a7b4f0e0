use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

fn check(predictions: &[f64], truths: &[f64]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("regression metric over zero records".into()));
    }
    Ok(())
}

pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check(predictions, truths)?;
    let s = compensated_sum(predictions.iter().zip(truths).map(|(p, t)| (p - t).abs()));
    Ok(s / predictions.len() as f64)
}

pub fn mse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check(predictions, truths)?;
    let s = compensated_sum(predictions.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)));
    Ok(s / predictions.len() as f64)
}

pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    mse(predictions, truths).map(f64::sqrt)
}
