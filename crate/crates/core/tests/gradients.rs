//! Finite-difference gradient checks for every differentiable op and for the
//! end-to-end combined loss of a small model.

use rand_chacha::ChaCha8Rng;
use speechtraits_core::loss::{ccc_loss, ce_loss, combined_loss};
use speechtraits_core::model::{ConvLayer, Mode, Model, ModelConfig};
use speechtraits_core::rng;
use speechtraits_core::tensor::{grad_check, Graph, Tensor};

const TOL: f64 = 1e-5;
const H: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng::uniform(rng, -1.5, 1.5)).collect();
    Tensor::new(shape, values).unwrap()
}

/// Run `f` through the checker on `trials` random inputs of `shape`.
fn check_many<F>(label: &str, shape: Vec<usize>, trials: usize, f: F)
where
    F: Fn(&mut Graph, speechtraits_core::tensor::NodeId) -> speechtraits_core::Result<speechtraits_core::tensor::NodeId>
        + Copy,
{
    for trial in 0..trials {
        let mut r = rng::derive(42, &format!("gradcheck:{label}:{trial}"));
        let x = random_tensor(&mut r, shape.clone());
        let err = grad_check(f, &x, H).unwrap();
        assert!(err < TOL, "{label} trial {trial}: relative error {err:.3e}");
    }
}

#[test]
fn matmul_gradients() {
    check_many("matmul", vec![3, 4], 10, |g, x| {
        let mut r = rng::derive(7, "gradcheck:matmul:other");
        let w = g.constant(random_tensor(&mut r, vec![4, 2]));
        let y = g.matmul(x, w)?;
        Ok(g.sum_all(y))
    });
    // and as the right operand
    check_many("matmul_rhs", vec![4, 2], 10, |g, x| {
        let mut r = rng::derive(7, "gradcheck:matmul:lhs");
        let a = g.constant(random_tensor(&mut r, vec![3, 4]));
        let y = g.matmul(a, x)?;
        Ok(g.sum_all(y))
    });
}

#[test]
fn transpose_gradients() {
    check_many("transpose", vec![3, 5], 10, |g, x| {
        let t = g.transpose(x)?;
        let mut r = rng::derive(7, "gradcheck:transpose:other");
        let w = g.constant(random_tensor(&mut r, vec![3, 2]));
        let y = g.matmul(t, w)?;
        Ok(g.sum_all(y))
    });
}

#[test]
fn add_mul_scale_gradients() {
    check_many("add", vec![2, 3], 10, |g, x| {
        let mut r = rng::derive(7, "gradcheck:add:other");
        let b = g.constant(random_tensor(&mut r, vec![2, 3]));
        let s = g.add(x, b)?;
        let m = g.mul(s, s)?;
        Ok(g.sum_all(m))
    });
    check_many("mul", vec![2, 3], 10, |g, x| {
        let mut r = rng::derive(7, "gradcheck:mul:other");
        let b = g.constant(random_tensor(&mut r, vec![2, 3]));
        let m = g.mul(x, b)?;
        Ok(g.sum_all(m))
    });
    check_many("scale", vec![4], 10, |g, x| {
        let s = g.scale(x, -2.5);
        let m = g.mul(s, s)?;
        Ok(g.sum_all(m))
    });
}

#[test]
fn add_row_gradients() {
    check_many("add_row_matrix", vec![3, 4], 10, |g, x| {
        let mut r = rng::derive(7, "gradcheck:add_row:vec");
        let v = g.constant(random_tensor(&mut r, vec![4]));
        let y = g.add_row(x, v)?;
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
    check_many("add_row_vector", vec![4], 10, |g, x| {
        let mut r = rng::derive(7, "gradcheck:add_row:mat");
        let m = g.constant(random_tensor(&mut r, vec![3, 4]));
        let y = g.add_row(m, x)?;
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
}

#[test]
fn activation_gradients() {
    check_many("gelu", vec![2, 5], 10, |g, x| {
        let y = g.gelu(x);
        Ok(g.sum_all(y))
    });
    check_many("tanh", vec![2, 5], 10, |g, x| {
        let y = g.tanh(x);
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
}

#[test]
fn softmax_gradients() {
    // Weighted sum: a plain sum of softmax rows is constant 1.
    check_many("softmax", vec![3, 4], 10, |g, x| {
        let y = g.softmax(x);
        let mut r = rng::derive(7, "gradcheck:softmax:weights");
        let w = g.constant(random_tensor(&mut r, vec![3, 4]));
        let m = g.mul(y, w)?;
        Ok(g.sum_all(m))
    });
}

#[test]
fn layer_norm_gradients() {
    check_many("layer_norm_x", vec![3, 6], 10, |g, x| {
        let mut r = rng::derive(7, "gradcheck:ln:gb");
        let gain = g.constant(random_tensor(&mut r, vec![6]));
        let bias = g.constant(random_tensor(&mut r, vec![6]));
        let y = g.layer_norm(x, gain, bias, 1e-5)?;
        let mut r2 = rng::derive(7, "gradcheck:ln:w");
        let w = g.constant(random_tensor(&mut r2, vec![3, 6]));
        let m = g.mul(y, w)?;
        Ok(g.sum_all(m))
    });
    check_many("layer_norm_gain", vec![6], 10, |g, gain| {
        let mut r = rng::derive(7, "gradcheck:ln:x2");
        let x = g.constant(random_tensor(&mut r, vec![3, 6]));
        let bias = g.constant(random_tensor(&mut r, vec![6]));
        let y = g.layer_norm(x, gain, bias, 1e-5)?;
        let w = g.constant(random_tensor(&mut r, vec![3, 6]));
        let m = g.mul(y, w)?;
        Ok(g.sum_all(m))
    });
}

#[test]
fn mean_pool_gradients() {
    check_many("mean_pool", vec![5, 3], 10, |g, x| {
        let y = g.mean_pool(x, 4)?;
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
}

#[test]
fn conv1d_gradients() {
    // input gradient, plain convolution
    check_many("conv1d_x", vec![9, 2], 8, |g, x| {
        let mut r = rng::derive(7, "gradcheck:conv:w");
        let w = g.constant(random_tensor(&mut r, vec![4, 2, 3]));
        let b = g.constant(random_tensor(&mut r, vec![4]));
        let y = g.conv1d(x, w, b, 2, 1, (0, 0))?;
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
    // weight gradient, grouped with asymmetric padding
    check_many("conv1d_w", vec![4, 2, 3], 8, |g, w| {
        let mut r = rng::derive(7, "gradcheck:conv:x");
        let x = g.constant(random_tensor(&mut r, vec![9, 4]));
        let b = g.constant(random_tensor(&mut r, vec![4]));
        let y = g.conv1d(x, w, b, 1, 2, (2, 1))?;
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
    // bias gradient
    check_many("conv1d_b", vec![4], 8, |g, b| {
        let mut r = rng::derive(7, "gradcheck:conv:xb");
        let x = g.constant(random_tensor(&mut r, vec![9, 2]));
        let w = g.constant(random_tensor(&mut r, vec![4, 2, 3]));
        let y = g.conv1d(x, w, b, 2, 1, (0, 0))?;
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
}

#[test]
fn slice_concat_stack_reshape_gradients() {
    check_many("slice_cols", vec![3, 6], 10, |g, x| {
        let y = g.slice_cols(x, 1, 3)?;
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
    check_many("concat_cols", vec![3, 2], 10, |g, x| {
        let mut r = rng::derive(7, "gradcheck:concat:other");
        let other = g.constant(random_tensor(&mut r, vec![3, 3]));
        let y = g.concat_cols(&[x, other])?;
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
    check_many("stack_rows", vec![4], 10, |g, x| {
        let mut r = rng::derive(7, "gradcheck:stack:other");
        let other = g.constant(random_tensor(&mut r, vec![4]));
        let y = g.stack_rows(&[x, other, x])?;
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
    check_many("reshape", vec![2, 6], 10, |g, x| {
        let y = g.reshape(x, vec![3, 4])?;
        let sq = g.mul(y, y)?;
        Ok(g.sum_all(sq))
    });
}

#[test]
fn loss_gradients() {
    check_many("ccc_loss", vec![6], 12, |g, pred| {
        let mut r = rng::derive(7, "gradcheck:ccc:target");
        let t = g.constant(random_tensor(&mut r, vec![6]));
        ccc_loss(g, pred, t)
    });
    check_many("ce_loss", vec![4, 3], 12, |g, logits| {
        ce_loss(g, logits, &[0, 2, 1, 1])
    });
    check_many("combined_loss", vec![4], 12, |g, pred| {
        let mut r = rng::derive(7, "gradcheck:combined:parts");
        let t = g.constant(random_tensor(&mut r, vec![4]));
        let a = ccc_loss(g, pred, t)?;
        let logits = g.constant(random_tensor(&mut r, vec![4, 3]));
        let b = ce_loss(g, logits, &[0, 1, 2, 0])?;
        combined_loss(g, a, b)
    });
}

/// The end-to-end check: analytic parameter gradients of the combined loss
/// on a tiny two-head model, batch 4, against central differences.
#[test]
fn end_to_end_combined_loss_gradients() {
    let config = ModelConfig {
        num_layers: 1,
        hidden_dim: 8,
        ffn_dim: 16,
        num_heads: 2,
        head_hidden: 8,
        dropout_rate: 0.0,
        conv_stage: vec![ConvLayer {
            channels: 4,
            kernel: 8,
            stride: 4,
        }],
        pos_kernel: 5,
        pos_groups: 2,
        sample_rate: 1000,
    };
    let model = Model::build(config, 3).unwrap();
    let mut r = rng::derive(5, "gradcheck:e2e:waves");
    let waves: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let n = 200 + rng::index(&mut r, 100);
            (0..n).map(|_| rng::uniform(&mut r, -0.8, 0.8)).collect()
        })
        .collect();
    let ages = [0.31, 0.52, 0.77, 0.24];
    let labels = [1usize, 2, 0, 1];

    let loss_with = |m: &Model| -> (f64, Graph, Vec<(usize, speechtraits_core::tensor::NodeId)>) {
        let mut g = Graph::new();
        let refs: Vec<&[f64]> = waves.iter().map(|w| w.as_slice()).collect();
        let out = m.forward_batch(&mut g, &refs, Mode::Train, None).unwrap();
        let t = g.constant(Tensor::vector(ages.to_vec()));
        let a = ccc_loss(&mut g, out.age.unwrap(), t).unwrap();
        let c = ce_loss(&mut g, out.gender_logits.unwrap(), &labels).unwrap();
        let total = combined_loss(&mut g, a, c).unwrap();
        let v = g.value(total).values()[0];
        g.backward(total).unwrap();
        (v, g, out.param_nodes)
    };
    let (_, graph, param_nodes) = loss_with(&model);

    // Probe a seeded sample of scalars in every trainable parameter.
    let mut probe_rng = rng::derive(5, "gradcheck:e2e:probe");
    let h = 1e-5;
    let mut checked = 0usize;
    for &(idx, node) in &param_nodes {
        if !model.params[idx].trainable {
            assert!(graph.grad(node).is_none(), "frozen param has a gradient");
            continue;
        }
        let analytic = graph.grad(node).expect("trainable param gradient");
        let n = model.params[idx].tensor.len();
        for _ in 0..2 {
            let i = rng::index(&mut probe_rng, n);
            let mut plus = model.clone();
            plus.params[idx].tensor.values_mut()[i] += h;
            let mut minus = model.clone();
            minus.params[idx].tensor.values_mut()[i] -= h;
            let (fp, _, _) = loss_with(&plus);
            let (fm, _, _) = loss_with(&minus);
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.values()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-10);
            let err = (a - numeric).abs() / denom;
            assert!(
                err < TOL,
                "param {} scalar {i}: analytic {a:.6e} numeric {numeric:.6e} err {err:.3e}",
                model.params[idx].name
            );
            checked += 1;
        }
    }
    assert!(checked >= 40, "only {checked} scalars probed");
}
