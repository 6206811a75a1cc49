use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CrossEntropy, LabeledSample, Model, ParamGrads, ScalarHead};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 16,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Training-set accuracy after each epoch.
    pub accuracy: Vec<f64>,
    /// Mean cross-entropy over each epoch's mini-batches.
    pub loss: Vec<f64>,
}

/// Minimises softmax cross-entropy with mini-batch Adam. Frozen layers are
/// never touched.
pub fn train(model: &mut Model, data: &[LabeledSample], cfg: &TrainConfig) -> Result<TrainHistory> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    for s in data {
        if s.label >= model.classes() {
            return Err(Error::invalid(format!("label {} out of range", s.label)));
        }
        crate::error::check_len(model.input_dim(), s.sample.len())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut states: Vec<(AdamState, AdamState)> = model
        .layers()
        .iter()
        .map(|l| {
            (
                AdamState::new(l.weight.len(), cfg.adam),
                AdamState::new(l.bias.len(), cfg.adam),
            )
        })
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let per_sample: Vec<(f64, ParamGrads)> = batch
                .par_iter()
                .map(|&i| {
                    let item = &data[i];
                    let trace = model
                        .trace(item.sample.samples())
                        .expect("checked dimension");
                    let (loss, grad_logits) = CrossEntropy(item.label).evaluate(trace.logits());
                    let mut pg = ParamGrads::zeros_like(model);
                    model.backward(&trace, &grad_logits, Some(&mut pg));
                    (loss, pg)
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut total = ParamGrads::zeros_like(model);
            for (loss, pg) in &per_sample {
                epoch_loss += loss * scale;
                for (acc, g) in total.weight.iter_mut().zip(&pg.weight) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b * scale);
                }
                for (acc, g) in total.bias.iter_mut().zip(&pg.bias) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b * scale);
                }
            }
            batches += 1;
            for ((layer, (sw, sb)), (gw, gb)) in model
                .layers_mut()
                .iter_mut()
                .zip(states.iter_mut())
                .zip(total.weight.iter().zip(&total.bias))
            {
                if layer.frozen || !layer.has_params() {
                    continue;
                }
                sw.step(&mut layer.weight, gw);
                sb.step(&mut layer.bias, gb);
            }
        }
        history.loss.push(epoch_loss / batches as f64);
        history.accuracy.push(accuracy(model, data)?);
    }
    Ok(history)
}

/// Fraction of samples whose prediction equals their label.
pub fn accuracy(model: &Model, data: &[LabeledSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    let correct = data
        .par_iter()
        .map(|s| {
            model
                .predict(s.sample.samples())
                .map(|p| usize::from(p == s.label))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / data.len() as f64)
}
