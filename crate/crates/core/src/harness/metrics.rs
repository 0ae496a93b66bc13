//! Continual-learning summary metrics over a result matrix.
//!
//! `r[i][j]` is the test accuracy on task `j` after training through task
//! `i` (both 0-based). Sums run in index order.

use crate::error::{Error, Result};

fn check_square(r: &[Vec<f64>]) -> Result<usize> {
    let t = r.len();
    if t == 0 {
        return Err(Error::Metric("empty result matrix".into()));
    }
    for (i, row) in r.iter().enumerate() {
        if row.len() != t {
            return Err(Error::Metric(format!(
                "row {i} has {} entries, expected {t}",
                row.len()
            )));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::Metric(format!("row {i} has a non-finite entry")));
        }
    }
    Ok(t)
}

/// Mean of the last row: accuracy over all tasks after the final stage.
pub fn average_accuracy(r: &[Vec<f64>]) -> Result<f64> {
    let t = check_square(r)?;
    Ok(r[t - 1].iter().sum::<f64>() / t as f64)
}

/// Mean change on earlier tasks between when each was learned and the end.
pub fn backward_transfer(r: &[Vec<f64>]) -> Result<f64> {
    let t = check_square(r)?;
    if t < 2 {
        return Err(Error::Metric("backward transfer needs at least two tasks".into()));
    }
    let sum: f64 = (0..t - 1).map(|i| r[t - 1][i] - r[i][i]).sum();
    Ok(sum / (t - 1) as f64)
}

/// Mean gain on each task, just before it is trained, over the baseline `b`.
pub fn forward_transfer(r: &[Vec<f64>], b: &[f64]) -> Result<f64> {
    let t = check_square(r)?;
    if t < 2 {
        return Err(Error::Metric("forward transfer needs at least two tasks".into()));
    }
    if b.len() != t {
        return Err(Error::Metric(format!(
            "baseline has {} entries, expected {t}",
            b.len()
        )));
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::Metric("baseline has a non-finite entry".into()));
    }
    let sum: f64 = (1..t).map(|i| r[i - 1][i] - b[i]).sum();
    Ok(sum / (t - 1) as f64)
}
