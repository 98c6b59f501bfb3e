use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(y: &[f64], yhat: &[f64], min: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!(
            "{} targets vs {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if y.len() < min {
        return Err(Error::Shape(format!(
            "need at least {min} values, got {}",
            y.len()
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat, 1)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Root mean squared error.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat, 1)?;
    let mse = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64;
    Ok(mse.sqrt())
}

/// Pearson correlation; `None` when either series is constant.
pub fn pearson_r(y: &[f64], yhat: &[f64]) -> Result<Option<f64>> {
    check(y, yhat, 2)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = yhat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let dy = a - my;
        let dp = b - mp;
        sxy += dy * dp;
        sxx += dy * dy;
        syy += dp * dp;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Undefined for constant series or a single point.
    pub r: Option<f64>,
}

impl Metrics {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<Self> {
        let r = if y.len() >= 2 {
            pearson_r(y, yhat)?
        } else {
            None
        };
        Ok(Metrics {
            n: y.len(),
            mae: mae(y, yhat)?,
            rmse: rmse(y, yhat)?,
            r,
        })
    }
}
