//! Finite-difference checks of composite blocks: the fusion operators, an
//! encoder stage, and the deep-supervised Dice + CE loss through a small net.

use crate::arch::{
    ConcatProject, CrossGateFusion, Hyper, Init, MhaFusion, Model, ModelConfig, ParamStore, Stage,
};
use crate::tensor::gradcheck::{grad_check, primitive_suite, project, random_tensor, GradCheckReport};
use crate::tensor::{Tensor, TensorError};
use crate::train::deep_sup_loss;

/// Adds small deterministic noise to every parameter so unit gammas and zero
/// biases do not hide errors.
fn perturbed(store: &ParamStore<f64>, seed: u64) -> Vec<Tensor<f64>> {
    store
        .iter()
        .enumerate()
        .map(|(i, (_, t))| {
            let noise = random_tensor(t.shape(), seed.wrapping_add(i as u64), 0.2, 0.0);
            Tensor::new(
                t.shape().to_vec(),
                t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect(),
            )
            .expect("same shape")
        })
        .collect()
}

fn fusion_check(
    name: &str,
    tol: f64,
    build: impl FnOnce(&mut ParamStore<f64>, &mut Init) -> Box<dyn Fn(&mut crate::Tape<f64>, crate::Var, crate::Var) -> Result<crate::Var, TensorError>>,
) -> Result<GradCheckReport, TensorError> {
    let mut store = ParamStore::new();
    let mut init = Init::new(3);
    let fwd = build(&mut store, &mut init);
    let mut inputs = perturbed(&store, 100);
    let n = inputs.len();
    inputs.push(random_tensor(&[1, 8, 3, 4], 200, 1.0, 0.0));
    inputs.push(random_tensor(&[1, 8, 3, 4], 201, 1.0, 0.0));
    grad_check(name, &inputs, tol, None, |t, v| {
        let y = fwd(t, v[n], v[n + 1])?;
        project(t, y, 300)
    })
}

/// Composite-block checks at `tol`.
pub fn composite_suite(tol: f64) -> Result<Vec<GradCheckReport>, TensorError> {
    let hy = Hyper::default();
    let mut out = vec![
        fusion_check("mha fusion block", tol, |s, i| {
            let b = MhaFusion::new(s, i, "f", 8, 2);
            Box::new(move |t, a, p| b.forward(t, hy, a, p))
        })?,
        fusion_check("concat1x1 fusion", tol, |s, i| {
            let b = ConcatProject::new(s, i, "f", 8);
            Box::new(move |t, a, p| b.forward(t, hy, a, p))
        })?,
        fusion_check("crossgate fusion", tol, |s, i| {
            let b = CrossGateFusion::new(s, i, "f", 8);
            Box::new(move |t, a, p| b.forward(t, hy, a, p))
        })?,
    ];

    let mut store = ParamStore::new();
    let stage = Stage::new(&mut store, &mut Init::new(4), "s", 2, 4, 2, 2);
    let mut inputs = perturbed(&store, 400);
    let n = inputs.len();
    inputs.push(random_tensor(&[2, 2, 8, 6], 401, 1.0, 0.0));
    out.push(grad_check("encoder stage (stride 2)", &inputs, tol, None, |t, v| {
        let y = stage.forward(t, hy, v[n])?;
        project(t, y, 402)
    })?);

    let cfg = ModelConfig {
        n_stages: 3,
        widths: vec![4, 8, 8],
        blocks_per_stage: 1,
        fusion_stage: 1,
        mha_heads: 2,
        seed: 5,
        ..ModelConfig::default()
    };
    let model = Model::<f64>::build(&cfg).map_err(|e| TensorError::InvalidArgument {
        op: "composite_suite",
        reason: e.to_string(),
    })?;
    let mut inputs = perturbed(model.params(), 500);
    let n = inputs.len();
    inputs.push(random_tensor(&[2, 4, 8, 8], 501, 1.0, 0.0));
    inputs.push(random_tensor(&[2, 1, 8, 8], 502, 1.0, 0.0));
    let target = random_tensor(&[2, 8, 8], 503, 1.0, 0.0).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    out.push(grad_check("dice+ce through dual-encoder net", &inputs, tol, Some(12), |t, v| {
        let fv = model.forward(t, v[n], v[n + 1]).map_err(|e| match e {
            crate::Error::Tensor(e) => e,
            e => TensorError::InvalidArgument {
                op: "forward",
                reason: e.to_string(),
            },
        })?;
        Ok(deep_sup_loss(t, &fv.heads, &target, 1e-5)?.total)
    })?);
    Ok(out)
}

/// Primitive checks at `primitive_tol` followed by composite checks at
/// `composite_tol`.
pub fn full_suite(primitive_tol: f64, composite_tol: f64) -> Result<Vec<GradCheckReport>, TensorError> {
    let mut all = primitive_suite(primitive_tol)?;
    all.extend(composite_suite(composite_tol)?);
    Ok(all)
}
