mod common;

use common::*;
use skicl::tensor::{Tape, Var};

/// Runs `build` twice: once to get analytic gradients for every leaf, once
/// inside a finite-difference loop over the concatenated leaf values.
fn check_grads(
    seed: u64,
    shapes: &[&[usize]],
    ranges: &[(f64, f64)],
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
    label: &str,
) {
    let mut r = rng(seed);
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let mut flat = Vec::new();
    for (k, &n) in sizes.iter().enumerate() {
        flat.extend(rand_vec(&mut r, n, ranges[k].0, ranges[k].1));
    }
    let eval = |x: &[f64]| -> (f64, Option<Vec<Vec<f64>>>) {
        let mut tape = Tape::new();
        let mut vars = Vec::new();
        let mut off = 0;
        for (k, &n) in sizes.iter().enumerate() {
            vars.push(
                tape.leaf(shapes[k].to_vec(), x[off..off + n].to_vec(), true)
                    .unwrap(),
            );
            off += n;
        }
        let loss = build(&mut tape, &vars);
        assert_eq!(tape.shape(loss), &[1], "{label}: loss scalar");
        let v = tape.values(loss)[0];
        tape.backward(loss).unwrap();
        let grads = vars.iter().map(|&v| tape.grad(v).to_vec()).collect();
        (v, Some(grads))
    };
    let (_, grads) = eval(&flat);
    let analytic: Vec<f64> = grads.unwrap().concat();
    let numeric = fd_grad(&|x| eval(x).0, &flat);
    assert_grad_close(&analytic, &numeric, label);
}

#[test]
fn elementwise_forward_values() {
    let mut t = Tape::new();
    let x = t.leaf(vec![3], vec![-1.0, 0.0, 2.0], false).unwrap();
    let r = t.relu(x);
    assert_eq!(t.values(r), &[0.0, 0.0, 2.0]);
    let z = t.leaf(vec![1], vec![0.0], false).unwrap();
    let s = t.sigmoid(z);
    assert_eq!(t.values(s), &[0.5]);
}

#[test]
fn matmul_identity() {
    let mut t = Tape::new();
    let a = t.leaf(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
    let i = t.leaf(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0], false).unwrap();
    let p = t.matmul(a, i).unwrap();
    assert_eq!(t.values(p), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn backward_sum_and_square() {
    let mut t = Tape::new();
    let x = t.leaf(vec![3], vec![1.0, 2.0, 3.0], true).unwrap();
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x), &[1.0, 1.0, 1.0]);

    let mut t = Tape::new();
    let x = t.leaf(vec![1], vec![3.0], true).unwrap();
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x), &[6.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.leaf(vec![2], vec![1.0, 2.0], true).unwrap();
    assert!(t.backward(x).is_err());
}

#[test]
fn conv_forward_hand_values() {
    // kernel [1], any dilation: identity
    let mut t = Tape::new();
    let h = t.leaf(vec![3], vec![3.0, 1.0, 4.0], false).unwrap();
    let f = t.leaf(vec![1], vec![1.0], false).unwrap();
    let r = skicl::tensor::dilated_causal_conv1d(&mut t, h, f, 3).unwrap();
    assert_eq!(t.values(r), &[3.0, 1.0, 4.0]);

    // kernel [1,1], d=2: r_t = h_t + h_{t-2}
    let mut t = Tape::new();
    let h = t.leaf(vec![4], vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
    let f = t.leaf(vec![2], vec![1.0, 1.0], false).unwrap();
    let r = skicl::tensor::dilated_causal_conv1d(&mut t, h, f, 2).unwrap();
    assert_eq!(t.values(r), &[1.0, 2.0, 4.0, 6.0]);

    // zero kernel
    let mut t = Tape::new();
    let h = t.leaf(vec![4], vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
    let f = t.leaf(vec![3], vec![0.0, 0.0, 0.0], false).unwrap();
    let r = skicl::tensor::dilated_causal_conv1d(&mut t, h, f, 1).unwrap();
    assert_eq!(t.values(r), &[0.0; 4]);
}

#[test]
fn conv_is_causal() {
    // perturbing h_t changes outputs only at t' >= t
    let mut r = rng(11);
    let h0 = rand_vec(&mut r, 9, -1.0, 1.0);
    let k0 = rand_vec(&mut r, 3, -1.0, 1.0);
    let run = |h: &[f64]| -> Vec<f64> {
        let mut t = Tape::new();
        let hv = t.leaf(vec![9], h.to_vec(), false).unwrap();
        let kv = t.leaf(vec![3], k0.clone(), false).unwrap();
        let out = skicl::tensor::dilated_causal_conv1d(&mut t, hv, kv, 2).unwrap();
        t.values(out).to_vec()
    };
    let base = run(&h0);
    for tpos in 0..9 {
        let mut h = h0.clone();
        h[tpos] += 0.37;
        let out = run(&h);
        for (tp, (a, b)) in base.iter().zip(&out).enumerate() {
            if tp < tpos {
                assert_eq!(a, b, "t'={tp} changed by perturbing t={tpos}");
            }
        }
    }
}

#[test]
fn conv_rejects_bad_config() {
    let mut t = Tape::new();
    let h = t.leaf(vec![3], vec![1.0, 2.0, 3.0], false).unwrap();
    let f = t.leaf(vec![1], vec![1.0], false).unwrap();
    assert!(skicl::tensor::dilated_causal_conv1d(&mut t, h, f, 0).is_err());
    let f0 = t.leaf(vec![0], vec![], false).unwrap();
    assert!(skicl::tensor::dilated_causal_conv1d(&mut t, h, f0, 1).is_err());
}

#[test]
fn message_passing_hand_example() {
    // W1=W2=I (1x1), single edge e_{2,1}=0.5, r1=[1], r2=[2]:
    // out1 = r1 + 0.5*r2 = [2], out2 = r2 + 0 = [2]
    let mut t = Tape::new();
    let h = t.leaf(vec![2, 1, 1], vec![1.0, 2.0], false).unwrap();
    let adj = t.leaf(vec![2, 2], vec![0.0, 0.0, 0.5, 0.0], false).unwrap();
    let w1 = t.leaf(vec![1, 1], vec![1.0], false).unwrap();
    let w2 = t.leaf(vec![1, 1], vec![1.0], false).unwrap();
    let out = t.message_passing(h, adj, w1, w2).unwrap();
    assert_eq!(t.values(out), &[2.0, 2.0]);
}

#[test]
fn message_passing_linearity_in_adj() {
    let mut r = rng(5);
    let h0 = rand_vec(&mut r, 3 * 2 * 4, -1.0, 1.0);
    let w = rand_vec(&mut r, 4, -1.0, 1.0);
    let a1 = rand_vec(&mut r, 9, 0.0, 1.0);
    let run = |scale: f64| -> Vec<f64> {
        let mut t = Tape::new();
        let h = t.leaf(vec![3, 2, 4], h0.clone(), false).unwrap();
        let adj = t
            .leaf(vec![3, 3], a1.iter().map(|v| v * scale).collect(), false)
            .unwrap();
        let w1 = t.leaf(vec![2, 2], w.clone(), false).unwrap();
        let w2 = t.leaf(vec![2, 2], w.clone(), false).unwrap();
        let out = t.message_passing(h, adj, w1, w2).unwrap();
        t.values(out).to_vec()
    };
    let zero = run(0.0);
    let one = run(1.0);
    let two = run(2.0);
    for i in 0..zero.len() {
        let lhs = two[i] - zero[i];
        let rhs = 2.0 * (one[i] - zero[i]);
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

#[test]
fn grad_add_sub_mul_scale() {
    check_grads(
        1,
        &[&[2, 3], &[2, 3]],
        &[(-2.0, 2.0), (-2.0, 2.0)],
        &|t, v| {
            let a = t.add(v[0], v[1]).unwrap();
            let s = t.sub(a, v[1]).unwrap();
            let m = t.mul(s, v[0]).unwrap();
            let sc = t.scale(m, 0.7);
            t.sum(sc)
        },
        "add_sub_mul_scale",
    );
}

#[test]
fn grad_bias_ops() {
    check_grads(
        2,
        &[&[3, 4], &[4]],
        &[(-1.0, 1.0), (-1.0, 1.0)],
        &|t, v| {
            let b = t.add_bias(v[0], v[1]).unwrap();
            t.sum(b)
        },
        "add_bias",
    );
    check_grads(
        3,
        &[&[2, 3, 4], &[3]],
        &[(-1.0, 1.0), (-1.0, 1.0)],
        &|t, v| {
            let b = t.add_channel_bias(v[0], v[1]).unwrap();
            let sq = t.mul(b, b).unwrap();
            t.sum(sq)
        },
        "channel_bias",
    );
}

#[test]
fn grad_matmul_transpose_concat() {
    check_grads(
        4,
        &[&[3, 2], &[2, 4]],
        &[(-1.0, 1.0), (-1.0, 1.0)],
        &|t, v| {
            let p = t.matmul(v[0], v[1]).unwrap();
            let pt = t.transpose(p).unwrap();
            let q = t.matmul(pt, v[0]).unwrap();
            t.sum(q)
        },
        "matmul_transpose",
    );
    for axis in 0..2 {
        check_grads(
            5 + axis as u64,
            &[&[2, 3], &[2, 3]],
            &[(-1.0, 1.0), (-1.0, 1.0)],
            &|t, v| {
                let c = t.concat(v[0], v[1], axis).unwrap();
                let sq = t.mul(c, c).unwrap();
                t.sum(sq)
            },
            "concat",
        );
    }
}

#[test]
fn grad_activations_reductions() {
    // stay away from the relu kink at 0
    check_grads(
        7,
        &[&[2, 5]],
        &[(0.1, 2.0)],
        &|t, v| {
            let r = t.relu(v[0]);
            let s = t.sigmoid(r);
            let m = t.mean(s);
            let su = t.sum(v[0]);
            let neg = t.scale(su, -0.5);
            let negr = t.relu(neg);
            t.add(m, negr).unwrap()
        },
        "relu_sigmoid_mean",
    );
    check_grads(
        8,
        &[&[4, 3]],
        &[(-1.0, 1.0)],
        &|t, v| {
            let m = t.mean_axis0(v[0]).unwrap();
            let sq = t.mul(m, m).unwrap();
            t.sum(sq)
        },
        "mean_axis0",
    );
}

#[test]
fn grad_losses() {
    check_grads(
        9,
        &[&[2, 3], &[2, 3]],
        &[(-1.0, 1.0), (-1.0, 1.0)],
        &|t, v| t.squared_error(v[0], v[1]).unwrap(),
        "squared_error",
    );
    check_grads(
        10,
        &[&[2, 2]],
        &[(0.05, 0.95)],
        &|t, v| {
            t.bce_sum(v[0], &[1.0, 0.0, 1.0, 0.0], &[1.0, 1.0, 0.0, 1.0])
                .unwrap()
        },
        "bce_sum",
    );
}

#[test]
fn grad_structured_ops() {
    check_grads(
        11,
        &[&[2, 3, 6], &[4, 3, 2]],
        &[(-1.0, 1.0), (-1.0, 1.0)],
        &|t, v| {
            let c = t.causal_conv(v[0], v[1], 2).unwrap();
            let sq = t.mul(c, c).unwrap();
            t.sum(sq)
        },
        "causal_conv",
    );
    check_grads(
        12,
        &[&[3, 2, 4], &[3, 3], &[2, 2], &[2, 2]],
        &[(-1.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
        &|t, v| {
            let mp = t.message_passing(v[0], v[1], v[2], v[3]).unwrap();
            let sq = t.mul(mp, mp).unwrap();
            t.sum(sq)
        },
        "message_passing",
    );
    check_grads(
        13,
        &[&[3, 4]],
        &[(-1.0, 1.0)],
        &|t, v| {
            let p = t.pair_concat(v[0]).unwrap();
            let sq = t.mul(p, p).unwrap();
            t.sum(sq)
        },
        "pair_concat",
    );
    check_grads(
        14,
        &[&[2, 3, 5]],
        &[(-1.0, 1.0)],
        &|t, v| {
            let l = t.last_step(v[0]).unwrap();
            let r = t.reshape(l, vec![6]).unwrap();
            let sq = t.mul(r, r).unwrap();
            t.sum(sq)
        },
        "last_step_reshape",
    );
}

#[test]
fn grad_composite_random_graphs() {
    // ten random composite graphs through most ops at once
    for seed in 20..30 {
        check_grads(
            seed,
            &[&[3, 2, 6], &[2, 2, 2], &[3, 3], &[2, 2], &[2, 2]],
            &[
                (-1.0, 1.0),
                (-0.8, 0.8),
                (0.0, 1.0),
                (-0.7, 0.7),
                (-0.7, 0.7),
            ],
            &|t, v| {
                let c = t.causal_conv(v[0], v[1], 2).unwrap();
                let s = t.sigmoid(c);
                let mp = t.message_passing(s, v[2], v[3], v[4]).unwrap();
                let l = t.last_step(mp).unwrap();
                let p = t.pair_concat(l).unwrap();
                let m = t.mean(p);
                let sq = t.mul(m, m).unwrap();
                t.sum(sq)
            },
            "composite",
        );
    }
}

#[test]
fn shape_errors_name_the_op() {
    let mut t = Tape::new();
    let a = t.leaf(vec![2, 3], vec![0.0; 6], false).unwrap();
    let b = t.leaf(vec![3, 3], vec![0.0; 9], false).unwrap();
    let e = t.add(a, b).unwrap_err();
    assert!(e.to_string().contains("add"), "got: {e}");
    let e = t.matmul(b, b).err();
    assert!(e.is_none()); // 3x3 * 3x3 is fine
    let e = t.matmul(a, a).unwrap_err();
    assert!(e.to_string().contains("matmul"), "got: {e}");
}

#[test]
fn determinism_bitwise() {
    let run = || -> (Vec<f64>, Vec<f64>) {
        let mut r = rng(99);
        let x0 = rand_vec(&mut r, 12, -1.0, 1.0);
        let mut t = Tape::new();
        let x = t.leaf(vec![3, 4], x0, true).unwrap();
        let s = t.sigmoid(x);
        let st = t.transpose(s).unwrap();
        let m = t.matmul(s, st).unwrap();
        let loss = t.sum(m);
        t.backward(loss).unwrap();
        (t.values(x).to_vec(), t.grad(x).to_vec())
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1, v2);
    assert_eq!(g1, g2);
}
