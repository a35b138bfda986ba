use crate::tensor::{Element, Tape, Tensor, TensorError, Var};

/// Normalized deep-supervision weights `∝ 2^−s` for the given stages.
pub fn ds_weights(stages: &[usize]) -> Vec<f64> {
    let raw: Vec<f64> = stages.iter().map(|&s| 0.5f64.powi(s as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Nearest-neighbour downsampling of `[N,H,W]` targets by `2^s`.
pub fn downsample_target<E: Element>(t: &Tensor<E>, s: usize) -> Tensor<E> {
    if s == 0 {
        return t.clone();
    }
    let sh = t.shape();
    let f = 1 << s;
    let (n, h, w) = (sh[0], sh[1] / f, sh[2] / f);
    Tensor::from_fn(&[n, h, w], |i| {
        let (b, y, x) = (i / (h * w), i / w % h, i % w);
        t.at(&[b, y * f, x * f])
    })
}

/// Loss variable plus its weighted components.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub dice: f64,
    pub ce: f64,
}

/// `Σ_s w_s·(dice_s + ce_s)` over the supervised heads.
pub fn deep_sup_loss<E: Element>(
    tape: &mut Tape<E>,
    heads: &[(usize, Var)],
    target: &Tensor<E>,
    dice_eps: f64,
) -> Result<LossParts, TensorError> {
    let stages: Vec<usize> = heads.iter().map(|&(s, _)| s).collect();
    let weights = ds_weights(&stages);
    let mut total: Option<Var> = None;
    let (mut dice, mut ce) = (0.0, 0.0);
    for (&(s, logits), &w) in heads.iter().zip(&weights) {
        let t = downsample_target(target, s);
        let d = tape.dice_loss(logits, &t, dice_eps)?;
        let c = tape.cross_entropy(logits, &t)?;
        dice += w * tape.value(d).item().to_f64();
        ce += w * tape.value(c).item().to_f64();
        let term = tape.add(d, c)?;
        let term = tape.scale(term, w)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let total = total.ok_or(TensorError::InvalidArgument {
        op: "deep_sup_loss",
        reason: "no supervised heads".into(),
    })?;
    Ok(LossParts { total, dice, ce })
}
