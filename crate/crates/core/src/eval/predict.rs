//! Mask prediction from full-resolution logits and dataset evaluation.

use crate::arch::Model;
use crate::data::{Batch, NormStats, Sample};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

use super::report::{EvalReport, SampleScore};

/// Per-image argmax of `[N,2,H,W]` logits. A tie goes to background.
pub fn argmax_masks<E: Element>(logits: &Tensor<E>) -> Vec<Tensor<u8>> {
    let s = logits.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let hw = h * w;
    let d = logits.data();
    (0..n)
        .map(|b| {
            let base = b * 2 * hw;
            Tensor::from_fn(&[h, w], |i| u8::from(d[base + hw + i] > d[base + i]))
        })
        .collect()
}

/// Mask of an already normalized sample.
pub fn predict_normalized<E: Element>(model: &Model<E>, sample: &Sample) -> Result<Tensor<u8>> {
    let batch = Batch::<E>::from_samples(&[sample], &model.config().angle_channel_mask)?;
    let out = model.predict(&batch.angles, &batch.phase)?;
    Ok(argmax_masks(out.full()).remove(0))
}

/// Normalizes a raw sample with `stats` and predicts its mask.
pub fn predict_mask<E: Element>(model: &Model<E>, sample: &Sample, stats: &NormStats) -> Result<Tensor<u8>> {
    predict_normalized(model, &stats.normalize(sample)?)
}

pub fn evaluate_normalized<E: Element>(model: &Model<E>, samples: &[Sample]) -> Result<EvalReport> {
    let scores = samples
        .iter()
        .map(|s| {
            let pred = predict_normalized(model, s)?;
            Ok(SampleScore::new(s.id.clone(), pred.data(), s.mask.data()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(scores))
}

/// Scores raw test samples, normalized with training-set `stats`.
pub fn evaluate<E: Element>(model: &Model<E>, test: &[Sample], stats: &NormStats) -> Result<EvalReport> {
    let normalized = test.iter().map(|s| stats.normalize(s)).collect::<Result<Vec<_>>>()?;
    evaluate_normalized(model, &normalized)
}

/// Scores precomputed masks against ground truth, matched by position.
pub fn evaluate_masks(preds: &[Tensor<u8>], truth: &[Sample]) -> Result<EvalReport> {
    if preds.len() != truth.len() {
        return Err(crate::Error::data(format!(
            "{} predictions for {} samples",
            preds.len(),
            truth.len()
        )));
    }
    let scores = preds
        .iter()
        .zip(truth)
        .map(|(p, s)| {
            if p.shape() != s.mask.shape() {
                return Err(crate::Error::data(format!(
                    "{}: prediction shape {:?} does not match mask {:?}",
                    s.id,
                    p.shape(),
                    s.mask.shape()
                )));
            }
            Ok(SampleScore::new(s.id.clone(), p.data(), s.mask.data()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(scores))
}
