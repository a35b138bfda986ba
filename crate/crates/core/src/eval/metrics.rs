//! Overlap metrics on binary masks.

/// Pixel counts of a prediction against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// # Panics
    /// If the masks differ in length.
    pub fn new(pred: &[u8], gt: &[u8]) -> Self {
        assert_eq!(pred.len(), gt.len(), "mask lengths differ");
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// `2|P∩G| / (|P|+|G|)`; 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    /// `|P∩G| / |P∪G|`; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }
}

pub fn dice(pred: &[u8], gt: &[u8]) -> f64 {
    Confusion::new(pred, gt).dice()
}

pub fn iou(pred: &[u8], gt: &[u8]) -> f64 {
    Confusion::new(pred, gt).iou()
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_empty_scores_one() {
        assert_eq!(dice(&[0, 0], &[0, 0]), 1.0);
        assert_eq!(iou(&[0, 0], &[0, 0]), 1.0);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
