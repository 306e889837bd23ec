use super::*;
use crate::numerics::gradcheck::{check_gradients, project};
use crate::numerics::RngStream;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn randn(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    rng.normal_tensor(shape)
}

/// Runs a projected finite-difference check for `seeds` random draws.
fn fd_check<F>(name: &str, shapes: &[&[usize]], out_len: usize, f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    for seed in 0..SEEDS {
        let mut rng = RngStream::keyed("fd", seed, &[name.len() as u64]);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| randn(&mut rng, s)).collect();
        let proj = randn(&mut rng, &[out_len]);
        let report = check_gradients(&inputs, H, |g, v| {
            let y = f(g, v)?;
            if out_len == 1 {
                Ok(y)
            } else {
                project(g, y, &proj)
            }
        })
        .unwrap();
        assert!(
            report.max_rel_error < TOL,
            "{name} seed {seed}: {:?}",
            report.rel_errors
        );
    }
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
    let z = g.constant(t(&[2, 1], &[0.0, 0.0]));
    let y = g.matmul(a, z).unwrap();
    assert_eq!(g.value(y).data(), &[0.0]);

    let b = g.constant(t(&[2, 1], &[5.0, 6.0]));
    let y = g.matmul(m, b).unwrap();
    let (ad, bd) = ([1.0, 2.0, 3.0, 4.0], [5.0, 6.0]);
    let oracle: Vec<f64> = (0..2)
        .map(|i| (0..2).map(|p| ad[i * 2 + p] * bd[p]).sum())
        .collect();
    assert_eq!(oracle, vec![17.0, 39.0]);
    assert_eq!(g.value(y).data(), oracle.as_slice());

    let bad = g.constant(t(&[3, 1], &[0.0; 3]));
    assert!(matches!(g.matmul(m, bad), Err(Error::Shape { .. })));
}

fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let [bs, ci, h, w] = *x.shape() else { panic!() };
    let [co, _, kk, _] = *k.shape() else { panic!() };
    let (oh, ow) = (h - kk + 1, w - kk + 1);
    let mut out = vec![0.0; bs * co * oh * ow];
    for n in 0..bs {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = b.data()[o];
                    for c in 0..ci {
                        for u in 0..kk {
                            for v in 0..kk {
                                s += x.data()[((n * ci + c) * h + i + u) * w + j + v]
                                    * k.data()[((o * ci + c) * kk + u) * kk + v];
                            }
                        }
                    }
                    out[((n * co + o) * oh + i) * ow + j] = s;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_examples() {
    let mut g = Graph::new();
    let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let xv = g.constant(x.clone());
    let one = g.constant(t(&[1, 1, 1, 1], &[1.0]));
    let zb = g.constant(t(&[1], &[0.0]));
    let y = g.conv2d(xv, one, zb).unwrap();
    assert_eq!(g.value(y), &x);

    let zk = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let bias = g.constant(t(&[1], &[0.7]));
    let y = g.conv2d(xv, zk, bias).unwrap();
    assert_eq!(g.value(y).data(), &[0.7]);

    let ones = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let y = g.conv2d(xv, ones, zb).unwrap();
    assert_eq!(g.value(y).data(), &[10.0]);
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);

    let big = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(matches!(g.conv2d(xv, big, zb), Err(Error::Shape { .. })));
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = RngStream::new("conv", 3);
    let x = randn(&mut rng, &[2, 3, 7, 6]);
    let k = randn(&mut rng, &[4, 3, 3, 3]);
    let b = randn(&mut rng, &[4]);
    let mut g = Graph::new();
    let (xv, kv, bv) = (g.constant(x.clone()), g.constant(k.clone()), g.constant(b.clone()));
    let y = g.conv2d(xv, kv, bv).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 4, 5, 4]);
    let oracle = naive_conv(&x, &k, &b);
    for (a, o) in g.value(y).data().iter().zip(&oracle) {
        assert!((a - o).abs() < 1e-12);
    }
}

#[test]
fn maxpool_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.maxpool2(x).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);

    let ramp: Vec<f64> = (0..16).map(f64::from).collect();
    let x = g.constant(t(&[1, 1, 4, 4], &ramp));
    let y = g.maxpool2(x).unwrap();
    assert_eq!(g.value(y).data(), &[5.0, 7.0, 13.0, 15.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::full(&[1, 1, 4, 4], 2.5));
    let y = g.maxpool2(x).unwrap();
    assert_eq!(g.value(y).data(), &[2.5; 4]);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap().get(x);
    let mut expected = vec![0.0; 16];
    for i in [0, 2, 8, 10] {
        expected[i] = 1.0;
    }
    assert_eq!(grads.data(), expected.as_slice());
}

#[test]
fn maxpool_backward_conserves_gradient_mass() {
    for seed in 0..SEEDS {
        let mut rng = RngStream::new("pool", seed);
        let mut g = Graph::new();
        let x = g.param(randn(&mut rng, &[2, 3, 6, 5]));
        let y = g.maxpool2(x).unwrap();
        let w = randn(&mut rng, &[2 * 3 * 3 * 2]);
        let loss = project(&mut g, y, &w).unwrap();
        let gx = g.backward(loss).unwrap().get(x);
        assert!((gx.sum() - w.sum()).abs() < 1e-12);
    }
}

#[test]
fn relu_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[-3.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 2.0]);
}

#[test]
fn batchnorm_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[4, 3], 1.7));
    let gamma = g.constant(t(&[3], &[2.0, 3.0, 4.0]));
    let beta = g.constant(t(&[3], &[0.1, 0.2, 0.3]));
    let (y, _) = g.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
    for row in g.value(y).data().chunks(3) {
        assert_eq!(row, &[0.1, 0.2, 0.3]);
    }

    let mut rng = RngStream::new("bn", 0);
    let x = g.constant(randn(&mut rng, &[16, 5]).map(|v| 3.0 * v + 1.0));
    let ones = g.constant(Tensor::full(&[5], 1.0));
    let zeros = g.constant(Tensor::zeros(&[5]));
    let (y, stats) = g.batchnorm_train(x, ones, zeros, 1e-5).unwrap();
    let yd = g.value(y).data();
    for j in 0..5 {
        let col: Vec<f64> = (0..16).map(|i| yd[i * 5 + j]).collect();
        let mean = col.iter().sum::<f64>() / 16.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6);
        // The epsilon shrinks the variance by var / (var + eps).
        let batch_var = stats.var_unbiased[j] * 15.0 / 16.0;
        assert!((var - batch_var / (batch_var + 1e-5)).abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
    }

    let one_row = g.constant(Tensor::zeros(&[1, 5]));
    assert!(matches!(
        g.batchnorm_train(one_row, ones, zeros, 1e-5),
        Err(Error::InvalidBatch { .. })
    ));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 4], 0.3));
    let y = g.softmax(x).unwrap();
    for v in g.value(y).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }

    let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
    let y = g.softmax(x).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let oracle = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
    for (a, o) in g.value(y).data().iter().zip(oracle) {
        assert!((a - o).abs() < 1e-15);
    }
    for (a, o) in g.value(y).data().iter().zip([0.09003, 0.24473, 0.66524]) {
        assert!((a - o).abs() < 1e-5);
    }

    let nan = g.constant(t(&[1, 2], &[f64::NAN, 0.0]));
    assert!(matches!(g.softmax(nan), Err(Error::NonFinite(_))));
}

#[test]
fn softmax_rows_sum_to_one_and_are_shift_invariant() {
    for seed in 0..SEEDS {
        let mut rng = RngStream::new("sm", seed);
        let logits = randn(&mut rng, &[6, 7]).map(|v| 5.0 * v);
        let shift = rng.uniform_range(-50.0, 50.0);
        let mut g = Graph::new();
        let a = g.constant(logits.clone());
        let b = g.constant(logits.map(|v| v + shift));
        let (sa, sb) = (g.softmax(a).unwrap(), g.softmax(b).unwrap());
        for row in g.value(sa).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(g.value(sa).max_abs_diff(g.value(sb)) < 1e-12);
    }
}

#[test]
fn backward_twice_gives_identical_gradients() {
    let mut rng = RngStream::new("twice", 1);
    let x = randn(&mut rng, &[4, 3]);
    let w = randn(&mut rng, &[2, 3]);
    let run = || {
        let mut g = Graph::new();
        let (xv, wv) = (g.param(x.clone()), g.param(w.clone()));
        let y = g.linear(xv, wv, None).unwrap();
        let y = g.sigmoid(y);
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        (grads.get(xv), grads.get(wv))
    };
    assert_eq!(run(), run());
}

#[test]
fn fd_elementwise_and_reductions() {
    fd_check("add", &[&[3, 4], &[3, 4]], 12, |g, v| g.add(v[0], v[1]));
    fd_check("sub", &[&[3, 4], &[3, 4]], 12, |g, v| g.sub(v[0], v[1]));
    fd_check("mul", &[&[3, 4], &[3, 4]], 12, |g, v| g.mul(v[0], v[1]));
    fd_check("scale", &[&[5]], 5, |g, v| Ok(g.scale(v[0], -1.7)));
    fd_check("relu", &[&[4, 4]], 16, |g, v| Ok(g.relu(v[0])));
    fd_check("sigmoid", &[&[4, 4]], 16, |g, v| Ok(g.sigmoid(v[0])));
    fd_check("exp", &[&[4, 4]], 16, |g, v| Ok(g.exp(v[0])));
    fd_check("sum", &[&[2, 5]], 1, |g, v| Ok(g.sum(v[0])));
    fd_check("mean", &[&[2, 5]], 1, |g, v| Ok(g.mean(v[0])));
    fd_check("sum_rows", &[&[3, 5]], 5, |g, v| g.sum_rows(v[0]));
    fd_check("sum_cols", &[&[3, 5]], 3, |g, v| g.sum_cols(v[0]));
    fd_check("broadcast_rows", &[&[5]], 15, |g, v| Ok(g.broadcast_rows(v[0], 3)));
    fd_check("broadcast_cols", &[&[3]], 15, |g, v| Ok(g.broadcast_cols(v[0], 5)));
    fd_check("expand", &[&[]], 6, |g, v| Ok(g.expand_scalar(v[0], &[2, 3])));
    fd_check("add_row_vec", &[&[3, 4], &[4]], 12, |g, v| g.add_row_vec(v[0], v[1]));
    fd_check("add_col_vec", &[&[3, 4], &[3]], 12, |g, v| g.add_col_vec(v[0], v[1]));
}

#[test]
fn fd_linear_algebra_and_shapes() {
    fd_check("matmul", &[&[3, 4], &[4, 2]], 6, |g, v| g.matmul(v[0], v[1]));
    fd_check("linear", &[&[5, 4], &[3, 4], &[3]], 15, |g, v| g.linear(v[0], v[1], Some(v[2])));
    fd_check("linear_nobias", &[&[5, 4], &[3, 4]], 15, |g, v| g.linear(v[0], v[1], None));
    fd_check("transpose", &[&[3, 4]], 12, |g, v| g.transpose(v[0]));
    fd_check("reshape", &[&[3, 4]], 12, |g, v| g.reshape(v[0], &[2, 6]));
    fd_check("swap01", &[&[2, 3, 4]], 24, |g, v| g.swap_axes01(v[0], [2, 3, 4]));
    fd_check("concat", &[&[3, 2], &[3, 4]], 18, |g, v| g.concat_cols(v[0], v[1]));
    fd_check("gather", &[&[6]], 4, |g, v| g.gather(v[0], vec![5, 0, 0, 3], &[4]));
    fd_check("scatter", &[&[4]], 6, |g, v| g.scatter_add(v[0], vec![5, 0, 0, 3], &[6]));
}

#[test]
fn fd_neural_layers() {
    fd_check("conv2d", &[&[2, 2, 6, 5], &[3, 2, 3, 3], &[3]], 2 * 3 * 4 * 3, |g, v| {
        g.conv2d(v[0], v[1], v[2])
    });
    fd_check("maxpool2", &[&[2, 2, 5, 4]], 2 * 2 * 2 * 2, |g, v| g.maxpool2(v[0]));
    fd_check("bn_train", &[&[6, 4], &[4], &[4]], 24, |g, v| {
        Ok(g.batchnorm_train(v[0], v[1], v[2], 1e-5)?.0)
    });
    fd_check("bn_eval", &[&[6, 4], &[4], &[4]], 24, |g, v| {
        g.batchnorm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3, 0.0], &[1.5, 0.5, 2.0, 1.0], 1e-5)
    });
}

#[test]
fn fd_probabilities_and_losses() {
    fd_check("softmax", &[&[3, 5]], 15, |g, v| g.softmax(v[0]));
    fd_check("log_softmax", &[&[3, 5]], 15, |g, v| g.log_softmax(v[0]));
    fd_check("ce", &[&[4, 5]], 1, |g, v| g.cross_entropy(v[0], &[0, 4, 2, 2]));
    fd_check("kl", &[&[4, 5], &[4, 5]], 1, |g, v| g.kl_div(v[0], v[1], None));
    fd_check("kl_weighted", &[&[4, 5], &[4, 5]], 1, |g, v| {
        g.kl_div(v[0], v[1], Some(vec![0.1, 0.5, 1.0, 0.0]))
    });
    fd_check("mse_rows", &[&[4, 3], &[4, 3]], 1, |g, v| g.mse_rows(v[0], v[1]));
    fd_check("pairwise", &[&[5, 3]], 25, |g, v| g.pairwise_dist(v[0]));
}

#[test]
fn pairwise_distance_has_zero_subgradient_on_duplicates() {
    let mut g = Graph::new();
    let x = g.param(t(&[2, 2], &[1.0, 1.0, 1.0, 1.0]));
    let d = g.pairwise_dist(x).unwrap();
    let s = g.sum(d);
    let gx = g.backward(s).unwrap().get(x);
    assert!(gx.data().iter().all(|&v| v == 0.0));
}

#[test]
fn frozen_leaves_receive_no_gradient() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2], &[1.0, 2.0]));
    let b = g.param(t(&[2], &[3.0, 4.0]));
    let p = g.mul(a, b).unwrap();
    let d = g.detach(p);
    let q = g.mul(d, b).unwrap();
    let s = g.sum(q);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a).data(), &[0.0, 0.0]);
    assert_eq!(grads.get(d).data(), &[0.0, 0.0]);
    // Only the direct path through `b` counts: d/db sum(d * b) = d.
    assert_eq!(grads.get(b).data(), &[3.0, 8.0]);
}

fn mlp_loss(g: &mut Graph, v: &[Var], soft: bool) -> Result<Var> {
    // v = [x, w1, b1, w2, b2, label_logits]
    let h = g.linear(v[0], v[1], Some(v[2]))?;
    let h = g.sigmoid(h);
    let out = g.linear(h, v[3], Some(v[4]))?;
    let out = g.relu(out);
    let lp = g.log_softmax(out)?;
    let target = if soft { g.softmax(v[5])? } else { g.detach(v[5]) };
    let prod = g.mul(target, lp)?;
    let s = g.sum(prod);
    Ok(g.scale(s, -1.0))
}

#[test]
fn grad_graph_matches_numeric_backward() {
    let mut rng = RngStream::new("gg", 0);
    let inputs = [
        randn(&mut rng, &[2, 4]),
        randn(&mut rng, &[3, 4]),
        randn(&mut rng, &[3]),
        randn(&mut rng, &[5, 3]),
        randn(&mut rng, &[5]),
        randn(&mut rng, &[2, 5]),
    ];
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let loss = mlp_loss(&mut g, &vars, true).unwrap();
    let numeric = g.backward(loss).unwrap();
    let symbolic = g.grad_graph(loss, &vars).unwrap();
    for (v, s) in vars.iter().zip(symbolic) {
        assert!(numeric.get(*v).max_abs_diff(g.value(s)) < 1e-12);
    }
}

#[test]
fn second_order_gradients_match_finite_differences() {
    // f(x, y) = || dL/dW ||^2 over the parameters: the quantity a gradient
    // matching attack differentiates.
    for seed in 0..SEEDS {
        let mut rng = RngStream::new("gg2", seed);
        let params = [
            randn(&mut rng, &[3, 4]),
            randn(&mut rng, &[3]),
            randn(&mut rng, &[5, 3]).map(|v| v + 0.3),
            randn(&mut rng, &[5]).map(|v| v.abs() + 0.5),
        ];
        let inputs = [randn(&mut rng, &[2, 4]), randn(&mut rng, &[2, 5])];
        let report = check_gradients(&inputs, H, |g, v| {
            let ps: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
            let all = [v[0], ps[0], ps[1], ps[2], ps[3], v[1]];
            let loss = mlp_loss(g, &all, true)?;
            let grads = g.grad_graph(loss, &ps)?;
            let mut total: Option<Var> = None;
            for gv in grads {
                let sq = g.mul(gv, gv)?;
                let s = g.sum(sq);
                total = Some(match total {
                    Some(t) => g.add(t, s)?,
                    None => s,
                });
            }
            Ok(total.unwrap())
        })
        .unwrap();
        assert!(report.max_rel_error < TOL, "seed {seed}: {:?}", report.rel_errors);
    }
}

#[test]
fn grad_graph_rejects_fused_losses() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2, 3]));
    let l = g.cross_entropy(x, &[0, 1]).unwrap();
    assert!(matches!(g.grad_graph(l, &[x]), Err(Error::Unsupported(_))));
}
