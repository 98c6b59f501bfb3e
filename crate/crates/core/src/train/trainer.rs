use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, OptimizerState};
use crate::data::{Dataset, Sample, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_predictions, Metrics};
use crate::loss::{total_loss, total_loss_grad, WeightConfig};
use crate::model::{
    backward_sample, forward_sample, init_params, Gradients, ModelConfig, ModelParams, Prediction,
};
use crate::real::{c, Real};
use crate::N_TASKS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds parameter initialization and the batch shuffle.
    pub seed: u64,
    pub weights: WeightConfig,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed: 0,
            weights: WeightConfig::uniform(),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.adam.validate()?;
        self.weights.validate()
    }
}

fn targets_of<F: Real>(s: &Sample) -> [F; N_TASKS] {
    s.targets.map(c::<F>)
}

/// Loss and exact gradient of the weighted loss over one batch.
///
/// Per-sample passes run in parallel; per-sample gradients are summed in
/// batch order, so the result does not depend on the thread count.
pub fn compute_gradients<F: Real>(
    p: &ModelParams<F>,
    batch: &[&Sample],
    wc: &WeightConfig,
) -> Result<(F, Gradients<F>)> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let passes = batch
        .par_iter()
        .map(|s| {
            let tokens = crate::model::vit::tokens_for(p, &s.volume)?;
            let (out, cache) = forward_sample(p, &tokens);
            let row: [F; N_TASKS] = out.try_into().expect("13 head outputs");
            Ok((row, cache))
        })
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<[F; N_TASKS]> = passes.iter().map(|(r, _)| *r).collect();
    let targets: Vec<[F; N_TASKS]> = batch.iter().map(|s| targets_of(s)).collect();
    let loss = total_loss(&preds, &targets, wc)?;
    if !loss.is_finite() {
        let who = batch
            .iter()
            .zip(&preds)
            .find(|(_, r)| r.iter().any(|x| !x.is_finite()))
            .map(|(s, _)| s.subject_id.as_str())
            .unwrap_or("batch");
        return Err(Error::NonFinite(format!("loss from {who}")));
    }
    let dy = total_loss_grad(&preds, &targets, wc)?;
    let per_sample: Vec<Gradients<F>> = passes
        .par_iter()
        .zip(&dy)
        .map(|((_, cache), d)| {
            let mut g = Gradients::zeros_like(p);
            backward_sample(p, cache, d, &mut g);
            g
        })
        .collect();
    let mut iter = per_sample.into_iter();
    let mut total = iter.next().unwrap();
    for g in iter {
        total.add_assign(&g);
    }
    if !total.is_finite() {
        let bad = total
            .tensors
            .iter()
            .position(|t| t.iter().any(|x| !x.is_finite()))
            .unwrap();
        return Err(Error::NonFinite(format!(
            "gradient of {}",
            p.layout.names[bad]
        )));
    }
    Ok((loss, total))
}

fn predict<F: Real>(p: &ModelParams<F>, samples: &[&Sample]) -> Result<Vec<[F; N_TASKS]>> {
    samples
        .par_iter()
        .map(|s| {
            let tokens = crate::model::vit::tokens_for(p, &s.volume)?;
            let (out, _) = forward_sample(p, &tokens);
            Ok(out.try_into().expect("13 head outputs"))
        })
        .collect()
}

/// Weighted loss over a whole sample set treated as one batch.
pub fn dataset_loss<F: Real>(
    p: &ModelParams<F>,
    samples: &[&Sample],
    wc: &WeightConfig,
) -> Result<F> {
    let preds = predict(p, samples)?;
    let targets: Vec<[F; N_TASKS]> = samples.iter().map(|s| targets_of(s)).collect();
    total_loss(&preds, &targets, wc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_global: Option<Metrics>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Loss of the initial parameters over the full training set.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

const HISTORY_HEADER: &str =
    "epoch,train_loss,val_loss,val_mae_global,val_rmse_global,val_r_global";

fn opt_str(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "n/a".into())
}

impl TrainHistory {
    /// CSV with full-precision values. Wall-clock times are left out so that
    /// identical runs produce identical files.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "#initial_train_loss,{}\n{HISTORY_HEADER}\n",
            self.initial_train_loss
        );
        for e in &self.epochs {
            let m = e.val_global.as_ref();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                opt_str(e.val_loss),
                opt_str(m.map(|m| m.mae)),
                opt_str(m.map(|m| m.rmse)),
                opt_str(m.and_then(|m| m.r)),
            );
        }
        s
    }

    /// Reads [`TrainHistory::to_csv`] output. Wall-clock times come back as 0,
    /// and validation metric sample counts as 0.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("history CSV: {m}"));
        let mut lines = text.lines();
        let initial_train_loss = lines
            .next()
            .and_then(|l| l.strip_prefix("#initial_train_loss,"))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing #initial_train_loss line"))?;
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(bad("bad header"));
        }
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s == "n/a" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad number"))
            }
        };
        let mut epochs = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let mae = parse_opt(f[3])?;
            let rmse = parse_opt(f[4])?;
            let r = parse_opt(f[5])?;
            let val_global = match (mae, rmse) {
                (Some(mae), Some(rmse)) => Some(Metrics { n: 0, mae, rmse, r }),
                _ => None,
            };
            epochs.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad("bad epoch"))?,
                train_loss: f[1].parse().map_err(|_| bad("bad train_loss"))?,
                val_loss: parse_opt(f[2])?,
                val_global,
                wall_clock_secs: 0.0,
            });
        }
        Ok(TrainHistory {
            initial_train_loss,
            epochs,
        })
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    pub fn min_train_loss(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.train_loss).reduce(f64::min)
    }
}

/// Trains from a fresh initialization; see [`train_with`].
pub fn train(
    data: &Dataset,
    split: &SplitSpec,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainHistory)> {
    let params = init_params::<f32>(mcfg, tcfg.seed)?;
    train_with(params, data, split, tcfg, |_| {})
}

/// Runs `tcfg.epochs` epochs of shuffled mini-batch Adam on the split's
/// training subjects, starting from `params`. The final partial batch is
/// kept. `on_epoch` sees each record as it is produced.
pub fn train_with<F: Real>(
    mut params: ModelParams<F>,
    data: &Dataset,
    split: &SplitSpec,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams<F>, TrainHistory)> {
    tcfg.validate()?;
    params.config.validate()?;
    let train_set = data.select(&split.train_ids)?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let val_set = data.select(&split.val_ids)?;
    let wc = &tcfg.weights;
    let to64 = |x: F| x.to_f64().unwrap();

    let initial_train_loss = to64(dataset_loss(&params, &train_set, wc)?);
    let mut state = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(tcfg.epochs);
    let mut step = 0;
    for epoch in 1..=tcfg.epochs {
        let started = Instant::now();
        if tcfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut weighted = 0.0;
        for chunk in order.chunks(tcfg.batch_size) {
            step += 1;
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
            let (loss, grads) = compute_gradients(&params, &batch, wc).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    step,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            adam_step(&mut params, &grads, &mut state, &tcfg.adam)?;
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: to64(loss),
                });
            }
            weighted += to64(loss) * batch.len() as f64;
        }
        let train_loss = weighted / train_set.len() as f64;

        let (val_loss, val_global) = if val_set.is_empty() {
            (None, None)
        } else {
            let preds = predict(&params, &val_set)?;
            let targets: Vec<[F; N_TASKS]> = val_set.iter().map(|s| targets_of(s)).collect();
            let vl = to64(total_loss(&preds, &targets, wc)?);
            let as_pred: Vec<Prediction> = preds
                .iter()
                .map(|r| Prediction { y_hat: r.map(to64) })
                .collect();
            let ev = evaluate_predictions(&val_set, &as_pred)?;
            (Some(vl), Some(ev.report.global))
        };
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_global,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        epochs.push(rec);
    }
    Ok((
        params,
        TrainHistory {
            initial_train_loss,
            epochs,
        },
    ))
}
