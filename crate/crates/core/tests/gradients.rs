use qpmseg::tensor::gradcheck::{grad_check, primitive_suite, random_tensor};
use qpmseg::verify::composite_suite;

#[test]
fn primitives_match_finite_differences() {
    for r in primitive_suite(1e-6).unwrap() {
        assert!(r.passed(), "{} rel err {:.3e}", r.name, r.max_rel_err);
        assert!(r.checked > 0);
    }
}

#[test]
fn composite_blocks_match_finite_differences() {
    let reports = composite_suite(1e-4).unwrap();
    let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    assert!(names.iter().any(|n| n.contains("mha")));
    assert!(names.iter().any(|n| n.contains("encoder stage")));
    assert!(names.iter().any(|n| n.contains("dice+ce")));
    for r in &reports {
        assert!(r.passed(), "{} rel err {:.3e}", r.name, r.max_rel_err);
    }
}

#[test]
fn linear_graph_error_is_near_machine_precision() {
    let x = random_tensor(&[4, 3], 1, 1.0, 0.0);
    let r = grad_check("linear", &[x], 1e-6, None, |t, v| {
        let y = t.scale(v[0], 3.0)?;
        t.sum(y)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-9, "{}", r.max_rel_err);
}

#[test]
fn conv_net_composite_matches() {
    // conv → instance norm → leaky relu, the block every stage is built from.
    let inputs = [
        random_tensor(&[1, 2, 5, 5], 11, 1.0, 0.0),
        random_tensor(&[3, 2, 3, 3], 12, 1.0, 0.0),
        random_tensor(&[3], 13, 1.0, 0.0),
        random_tensor(&[3], 14, 1.0, 0.0).map(|v| v + 1.0),
        random_tensor(&[3], 15, 1.0, 0.0),
    ];
    let r = grad_check("conv-norm-relu", &inputs, 1e-4, None, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
        let y = t.instance_norm(y, v[3], v[4], 1e-5)?;
        let y = t.leaky_relu(y, 0.01)?;
        qpmseg::tensor::gradcheck::project(t, y, 16)
    })
    .unwrap();
    assert!(r.passed(), "{}", r.max_rel_err);
}
