//! Per-sample and aggregate scores, with CSV round-tripping.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::metrics::{mean_std, Confusion};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
}

impl SampleScore {
    pub fn new(id: impl Into<String>, pred: &[u8], gt: &[u8]) -> Self {
        let c = Confusion::new(pred, gt);
        Self {
            id: id.into(),
            dice: c.dice(),
            iou: c.iou(),
        }
    }
}

/// Scores over a sample set: arithmetic means and population standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_sample: Vec<SampleScore>,
    pub mean_dice: f64,
    pub std_dice: f64,
    pub mean_iou: f64,
    pub std_iou: f64,
}

pub const AGGREGATE: &str = "AGGREGATE";
pub const AGGREGATE_STD: &str = "AGGREGATE_STD";

impl EvalReport {
    pub fn from_scores(per_sample: Vec<SampleScore>) -> Self {
        let dice: Vec<f64> = per_sample.iter().map(|s| s.dice).collect();
        let iou: Vec<f64> = per_sample.iter().map(|s| s.iou).collect();
        let (mean_dice, std_dice) = mean_std(&dice);
        let (mean_iou, std_iou) = mean_std(&iou);
        Self {
            per_sample,
            mean_dice,
            std_dice,
            mean_iou,
            std_iou,
        }
    }

    /// `id,dice,iou` rows, then the `AGGREGATE` row of means and an
    /// `AGGREGATE_STD` row of standard deviations.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,dice,iou\n");
        for r in &self.per_sample {
            let _ = writeln!(s, "{},{},{}", r.id, r.dice, r.iou);
        }
        let _ = writeln!(s, "{AGGREGATE},{},{}", self.mean_dice, self.mean_iou);
        let _ = writeln!(s, "{AGGREGATE_STD},{},{}", self.std_dice, self.std_iou);
        s
    }

    /// Parses [`EvalReport::to_csv`] output; aggregates are recomputed and
    /// must match the stored rows.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("id,dice,iou") {
            return Err(Error::data("eval csv: bad header"));
        }
        let mut rows = Vec::new();
        let mut agg = None;
        let mut agg_std = None;
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(Error::data(format!("eval csv: bad row `{line}`")));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::data(format!("eval csv: bad number `{s}`")))
            };
            let pair = (num(f[1])?, num(f[2])?);
            match f[0] {
                AGGREGATE => agg = Some(pair),
                AGGREGATE_STD => agg_std = Some(pair),
                id => rows.push(SampleScore {
                    id: id.to_string(),
                    dice: pair.0,
                    iou: pair.1,
                }),
            }
        }
        let report = Self::from_scores(rows);
        let same = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        match (agg, agg_std) {
            (Some((md, mi)), Some((sd, si)))
                if same(md, report.mean_dice)
                    && same(mi, report.mean_iou)
                    && same(sd, report.std_dice)
                    && same(si, report.std_iou) =>
            {
                Ok(report)
            }
            _ => Err(Error::data("eval csv: aggregate rows missing or inconsistent")),
        }
    }
}
