//! Per-task weighted MSE, the weighting presets, and weights derived from
//! item/global correlations.
//!
//! For a batch of `B` subjects the loss of task `j` is
//! `(1/B) * sum_i w_j * (y_ij - yhat_ij)^2`, and the total loss is the plain
//! sum over the 13 tasks. Weights are applied as given, never renormalized:
//! the uniform preset sums to 13, the others to 1.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ScoreVector;
use crate::error::{Error, Result};
use crate::eval::pearson_r;
use crate::real::{c, Real};
use crate::N_TASKS;

/// Zero-based indices of Q1, Q4 and Q8, the emphasized items.
pub const EMPHASIZED: [usize; 3] = [0, 3, 7];

pub const PRESET_NAMES: [&str; 3] = ["uniform", "moderate", "strong"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub name: Option<String>,
    pub w: [f64; N_TASKS],
}

fn emphasis(high: f64, low: f64) -> [f64; N_TASKS] {
    std::array::from_fn(|j| if EMPHASIZED.contains(&j) { high } else { low })
}

/// Compensated (Neumaier) sum.
fn exact_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            comp += (s - t) + x;
        } else {
            comp += (x - t) + s;
        }
        s = t;
    }
    s + comp
}

impl WeightConfig {
    pub fn new(name: Option<String>, w: [f64; N_TASKS]) -> Result<Self> {
        let wc = WeightConfig { name, w };
        wc.validate()?;
        Ok(wc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Config(format!(
                "weights must be finite and non-negative: {:?}",
                self.w
            )));
        }
        if self.w.iter().all(|&x| x == 0.0) {
            return Err(Error::Config("at least one weight must be positive".into()));
        }
        Ok(())
    }

    /// Equal weight 1 on every item.
    pub fn uniform() -> Self {
        WeightConfig {
            name: Some("uniform".into()),
            w: [1.0; N_TASKS],
        }
    }

    /// Q1, Q4, Q8 at 0.160; the rest at 0.052.
    pub fn moderate() -> Self {
        WeightConfig {
            name: Some("moderate".into()),
            w: emphasis(0.160, 0.052),
        }
    }

    /// Q1, Q4, Q8 at 0.320; the rest at 0.004.
    pub fn strong() -> Self {
        WeightConfig {
            name: Some("strong".into()),
            w: emphasis(0.320, 0.004),
        }
    }

    pub fn presets() -> [WeightConfig; 3] {
        [Self::uniform(), Self::moderate(), Self::strong()]
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "uniform" => Ok(Self::uniform()),
            "moderate" => Ok(Self::moderate()),
            "strong" => Ok(Self::strong()),
            other => Err(Error::Config(format!(
                "unknown weight preset {other:?} (expected uniform|moderate|strong)"
            ))),
        }
    }

    /// The preset whose weights equal these exactly, if any.
    pub fn matching_preset(&self) -> Option<&'static str> {
        Self::presets()
            .into_iter()
            .zip(PRESET_NAMES)
            .find(|(p, _)| p.w == self.w)
            .map(|(_, n)| n)
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| "custom".into())
    }

    /// Sum of the weights, compensated so decimal presets sum exactly.
    pub fn total(&self) -> f64 {
        exact_sum(self.w.iter().copied())
    }

    /// Fraction of the total weight carried by Q1, Q4 and Q8.
    pub fn emphasized_share(&self) -> f64 {
        exact_sum(EMPHASIZED.iter().map(|&j| self.w[j])) / self.total()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("weights serialize")
    }

    /// Parses `{"name": ..., "w": [13 reals]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(default)]
            name: Option<String>,
            w: Vec<f64>,
        }
        let raw: Raw =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("weight file: {e}")))?;
        let w: [f64; N_TASKS] = raw.w.as_slice().try_into().map_err(|_| {
            Error::Config(format!(
                "weight file needs {N_TASKS} weights, found {}",
                raw.w.len()
            ))
        })?;
        Self::new(raw.name, w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// `c * w`, keeping the name.
    pub fn scaled(&self, factor: f64) -> Self {
        WeightConfig {
            name: self.name.clone(),
            w: self.w.map(|x| x * factor),
        }
    }
}

/// Weighted MSE of one task over a batch.
pub fn weighted_mse_task<F: Real>(preds: &[F], targets: &[F], w: F) -> Result<F> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let sum: F = preds
        .iter()
        .zip(targets)
        .map(|(&p, &y)| w * (y - p) * (y - p))
        .sum();
    Ok(sum / c::<F>(preds.len() as f64))
}

fn check_rows<F>(preds: &[[F; N_TASKS]], targets: &[[F; N_TASKS]]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows for {} target rows",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

/// Sum over the 13 tasks of [`weighted_mse_task`].
pub fn total_loss<F: Real>(
    preds: &[[F; N_TASKS]],
    targets: &[[F; N_TASKS]],
    wc: &WeightConfig,
) -> Result<F> {
    check_rows(preds, targets)?;
    let mut total = F::zero();
    let mut pj = Vec::with_capacity(preds.len());
    let mut yj = Vec::with_capacity(preds.len());
    for j in 0..N_TASKS {
        pj.clear();
        yj.clear();
        pj.extend(preds.iter().map(|r| r[j]));
        yj.extend(targets.iter().map(|r| r[j]));
        total += weighted_mse_task(&pj, &yj, c::<F>(wc.w[j]))?;
    }
    Ok(total)
}

/// Gradient of [`total_loss`] with respect to each prediction:
/// `2 * w_j * (yhat_ij - y_ij) / B`.
pub fn total_loss_grad<F: Real>(
    preds: &[[F; N_TASKS]],
    targets: &[[F; N_TASKS]],
    wc: &WeightConfig,
) -> Result<Vec<[F; N_TASKS]>> {
    check_rows(preds, targets)?;
    let scale = c::<F>(2.0) / c::<F>(preds.len() as f64);
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, y)| std::array::from_fn(|j| scale * c::<F>(wc.w[j]) * (p[j] - y[j])))
        .collect())
}

/// Item/global Pearson correlations over a set of score vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub r: [f64; N_TASKS],
    /// Population standard deviation of each item.
    pub sd: [f64; N_TASKS],
    /// Items that were constant; their `r` is 0 by convention.
    pub constant: [bool; N_TASKS],
    pub n: usize,
}

/// Correlates each item with the global score, then assigns `high_w` to the
/// `top_k` items by |r| (lower index wins ties) and `low_w` to the rest.
pub fn derive_weights(
    scores: &[ScoreVector],
    top_k: usize,
    high_w: f64,
    low_w: f64,
) -> Result<(CorrelationTable, WeightConfig)> {
    if scores.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 score vectors, got {}",
            scores.len()
        )));
    }
    if !(1..=N_TASKS).contains(&top_k) {
        return Err(Error::Config(format!(
            "top_k must be in 1..={N_TASKS}, got {top_k}"
        )));
    }
    if !(high_w >= 0.0 && low_w >= 0.0) {
        return Err(Error::Config("weights must be non-negative".into()));
    }
    let global: Vec<f64> = scores.iter().map(ScoreVector::global).collect();
    if global.iter().all(|&g| g == global[0]) {
        return Err(Error::Data(
            "global score is constant; correlations undefined".into(),
        ));
    }
    let n = scores.len();
    let mut r = [0.0; N_TASKS];
    let mut sd = [0.0; N_TASKS];
    let mut constant = [false; N_TASKS];
    for j in 0..N_TASKS {
        let item: Vec<f64> = scores.iter().map(|s| s.items()[j]).collect();
        let mean = item.iter().sum::<f64>() / n as f64;
        sd[j] = (item.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        match pearson_r(&global, &item)? {
            Some(v) => r[j] = v,
            None => constant[j] = true,
        }
    }
    let mut order: Vec<usize> = (0..N_TASKS).collect();
    order.sort_by(|&a, &b| r[b].abs().total_cmp(&r[a].abs()).then(a.cmp(&b)));
    let mut w = [low_w; N_TASKS];
    for &j in &order[..top_k] {
        w[j] = high_w;
    }
    let mut wc = WeightConfig::new(None, w)?;
    wc.name = Some(
        wc.matching_preset()
            .map(str::to_string)
            .unwrap_or_else(|| format!("derived-top{top_k}")),
    );
    Ok((CorrelationTable { r, sd, constant, n }, wc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn task_examples() {
        assert_eq!(
            weighted_mse_task(&[1.0, 2.0], &[1.0, 2.0], 0.7).unwrap(),
            0.0
        );
        assert_eq!(
            weighted_mse_task(&[0.0, 0.0], &[1.0, 3.0], 1.0).unwrap(),
            5.0
        );
        let v = weighted_mse_task(&[0.0, 0.0], &[1.0, 3.0], 0.32).unwrap();
        assert!((v - 1.6f64).abs() < 1e-15);
        assert!(weighted_mse_task::<f64>(&[], &[], 1.0).is_err());
        assert!(weighted_mse_task(&[1.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn total_examples() {
        let y = [[2.0; N_TASKS], [1.0; N_TASKS]];
        assert_eq!(total_loss(&y, &y, &WeightConfig::strong()).unwrap(), 0.0);
        let pred = [[0.0; N_TASKS]];
        let targ = [[1.0; N_TASKS]];
        let l = total_loss(&pred, &targ, &WeightConfig::strong()).unwrap();
        assert!((l - 1.0f64).abs() < 1e-15);
        assert!(total_loss(&pred, &y, &WeightConfig::uniform()).is_err());
    }

    #[test]
    fn gradient_of_loss_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let preds: Vec<[f64; N_TASKS]> = (0..3)
            .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
            .collect();
        let targ: Vec<[f64; N_TASKS]> = (0..3)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..5.0)))
            .collect();
        let wc = WeightConfig::moderate();
        let g = total_loss_grad(&preds, &targ, &wc).unwrap();
        for i in 0..3 {
            for j in 0..N_TASKS {
                let mut p = preds.clone();
                p[i][j] += 1e-6;
                let up = total_loss(&p, &targ, &wc).unwrap();
                p[i][j] -= 2e-6;
                let down = total_loss(&p, &targ, &wc).unwrap();
                assert!(((up - down) / 2e-6 - g[i][j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn presets() {
        assert_eq!(WeightConfig::uniform().total(), 13.0);
        assert_eq!(WeightConfig::moderate().total(), 1.0);
        assert_eq!(WeightConfig::strong().total(), 1.0);
        assert_eq!(WeightConfig::moderate().emphasized_share(), 0.48);
        assert_eq!(WeightConfig::strong().emphasized_share(), 0.96);
        assert_eq!(
            WeightConfig::preset("strong").unwrap(),
            WeightConfig::strong()
        );
        assert!(WeightConfig::preset("heavy").is_err());
    }

    #[test]
    fn weight_json() {
        let s = WeightConfig::strong();
        assert_eq!(WeightConfig::from_json(&s.to_json()).unwrap(), s);
        assert!(s
            .to_json()
            .starts_with(r#"{"name":"strong","w":[0.32,0.004"#));
        let twelve = r#"{"name":"x","w":[1,1,1,1,1,1,1,1,1,1,1,1]}"#;
        assert!(matches!(
            WeightConfig::from_json(twelve),
            Err(Error::Config(_))
        ));
        let neg = r#"{"w":[1,1,1,1,1,1,1,1,1,1,1,1,-1]}"#;
        assert!(WeightConfig::from_json(neg).is_err());
        let zeros = r#"{"w":[0,0,0,0,0,0,0,0,0,0,0,0,0]}"#;
        assert!(WeightConfig::from_json(zeros).is_err());
    }

    fn sv(q: [f64; N_TASKS]) -> ScoreVector {
        ScoreVector::new(q, [100.0; N_TASKS]).unwrap()
    }

    #[test]
    fn derive_picks_dominant_item() {
        // q1 equals half the global score exactly (q1 = sum of the others),
        // the others are independent noise.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<ScoreVector> = (0..200)
            .map(|_| {
                let mut q: [f64; N_TASKS] = std::array::from_fn(|_| rng.random_range(0.0..3.0));
                q[0] = q[1..].iter().sum();
                sv(q)
            })
            .collect();
        for s in &scores {
            assert!((s.items()[0] - s.global() / 2.0).abs() < 1e-9);
        }
        let (table, wc) = derive_weights(&scores, 1, 1.0, 0.1).unwrap();
        assert_eq!(wc.w[0], 1.0);
        assert!(wc.w[1..].iter().all(|&x| x == 0.1));
        let oracle = crate::eval::pearson_r(
            &scores.iter().map(|s| s.global()).collect::<Vec<_>>(),
            &scores.iter().map(|s| s.items()[0]).collect::<Vec<_>>(),
        )
        .unwrap()
        .unwrap();
        assert_eq!(table.r[0], oracle);
        assert_eq!(table.n, 200);
    }

    #[test]
    fn derive_constant_items_and_ties() {
        let scores: Vec<ScoreVector> = (0..5)
            .map(|i| {
                let mut q = [1.0; N_TASKS];
                q[2] = i as f64;
                q[5] = i as f64;
                sv(q)
            })
            .collect();
        let (table, wc) = derive_weights(&scores, 1, 0.5, 0.0).unwrap();
        assert!(table.constant[0] && !table.constant[2]);
        assert_eq!(table.r[0], 0.0);
        // q3 and q6 tie at r = 1; the lower index wins
        assert_eq!(wc.w[2], 0.5);
        assert_eq!(wc.w[5], 0.0);
    }

    #[test]
    fn derive_errors() {
        let flat = vec![sv([1.0; N_TASKS]); 4];
        assert!(matches!(
            derive_weights(&flat, 3, 0.3, 0.0),
            Err(Error::Data(_))
        ));
        assert!(derive_weights(&flat[..1], 3, 0.3, 0.0).is_err());
        let mut q = [1.0; N_TASKS];
        q[0] = 2.0;
        let two = vec![sv([1.0; N_TASKS]), sv(q)];
        assert!(derive_weights(&two, 0, 0.3, 0.0).is_err());
        assert!(derive_weights(&two, 14, 0.3, 0.0).is_err());
    }
}
