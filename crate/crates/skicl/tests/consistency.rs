mod common;

use common::*;
use skicl::consistency::{consistency_loss, total_loss, EdgeKind, StructuralKnowledge};
use skicl::tensor::Tape;
use skicl::Mat;

fn loss_value(theta: &Mat, kind: EdgeKind, sk: &StructuralKnowledge) -> f64 {
    let mut t = Tape::new();
    let v = t
        .leaf(vec![theta.rows, theta.cols], theta.data.clone(), false)
        .unwrap();
    let l = consistency_loss(&mut t, v, kind, sk).unwrap();
    t.values(l)[0]
}

#[test]
fn continuous_exact_match_is_zero() {
    let a = Mat::from_vec(2, 2, vec![0.0, 0.3, 0.7, 0.0]).unwrap();
    let sk = StructuralKnowledge::fully_observed(a.clone(), EdgeKind::Continuous, 0);
    assert_eq!(loss_value(&a, EdgeKind::Continuous, &sk), 0.0);
}

#[test]
fn binary_single_entry_hand_value() {
    // one observed entry, A = 1, theta = 0.5: -log 0.5
    let a = Mat::from_vec(1, 1, vec![1.0]).unwrap();
    let mut sk = StructuralKnowledge::fully_observed(a, EdgeKind::Binary, 0);
    sk.mask = Mat::from_vec(1, 1, vec![1.0]).unwrap();
    let theta = Mat::from_vec(1, 1, vec![0.5]).unwrap();
    let l = loss_value(&theta, EdgeKind::Binary, &sk);
    assert!((l - 0.5f64.ln().abs()).abs() < 1e-12, "got {l}");
    assert!((l - 0.6931).abs() < 1e-4);
}

#[test]
fn masked_entries_do_not_matter() {
    let mut r = rng(3);
    let a1 = Mat::from_vec(3, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    let mut a2 = a1.clone();
    a2.set(0, 2, 1.0); // flip an entry we will mask out
    let mask = Mat::from_vec(3, 3, vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let mk = |a: Mat| StructuralKnowledge {
        a,
        edge_kind: EdgeKind::Binary,
        mask: mask.clone(),
        regime: 0,
    };
    let theta = rand_mat(&mut r, 3, 3, 0.05, 0.95);
    let l1 = loss_value(&theta, EdgeKind::Binary, &mk(a1));
    let l2 = loss_value(&theta, EdgeKind::Binary, &mk(a2));
    assert_eq!(l1, l2);
}

#[test]
fn masked_gradient_is_exactly_zero() {
    let a = Mat::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let mask = Mat::from_vec(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
    let sk = StructuralKnowledge {
        a,
        edge_kind: EdgeKind::Binary,
        mask,
        regime: 0,
    };
    let mut t = Tape::new();
    let theta = t
        .leaf(vec![2, 2], vec![0.3, 0.6, 0.5, 0.2], true)
        .unwrap();
    let l = consistency_loss(&mut t, theta, EdgeKind::Binary, &sk).unwrap();
    t.backward(l).unwrap();
    assert_eq!(t.grad(theta)[1], 0.0);
    assert!(t.grad(theta)[0] != 0.0);
}

#[test]
fn empty_mask_gives_zero_loss() {
    let a = Mat::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let sk = StructuralKnowledge {
        a,
        edge_kind: EdgeKind::Binary,
        mask: Mat::zeros(2, 2),
        regime: 0,
    };
    let theta = Mat::from_vec(2, 2, vec![0.3, 0.6, 0.5, 0.2]).unwrap();
    assert_eq!(loss_value(&theta, EdgeKind::Binary, &sk), 0.0);
}

#[test]
fn kind_mismatch_rejected() {
    let a = Mat::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let sk = StructuralKnowledge::fully_observed(a, EdgeKind::Binary, 0);
    let mut t = Tape::new();
    let theta = t.leaf(vec![2, 2], vec![0.1; 4], false).unwrap();
    assert!(consistency_loss(&mut t, theta, EdgeKind::Continuous, &sk).is_err());
}

#[test]
fn gradient_descent_on_lg_decreases_it() {
    // 100 plain gradient steps on L_G alone must strictly decrease it
    let mut r = rng(7);
    let a = Mat::from_vec(3, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    let sk = StructuralKnowledge::fully_observed(a, EdgeKind::Binary, 0);
    let mut theta = rand_vec(&mut r, 9, 0.1, 0.9);
    let mut last = f64::INFINITY;
    let mut first = None;
    for _ in 0..100 {
        let mut t = Tape::new();
        let v = t.leaf(vec![3, 3], theta.clone(), true).unwrap();
        let l = consistency_loss(&mut t, v, EdgeKind::Binary, &sk).unwrap();
        let lv = t.values(l)[0];
        first.get_or_insert(lv);
        assert!(lv <= last, "L_G must not increase ({lv} > {last})");
        last = lv;
        t.backward(l).unwrap();
        for (p, g) in theta.iter_mut().zip(t.grad(v)) {
            *p = (*p - 0.05 * g).clamp(1e-4, 1.0 - 1e-4);
        }
    }
    assert!(last < 0.01 * first.unwrap(), "L_G must drop sharply over 100 steps");
}

#[test]
fn consistency_gradients_match_fd() {
    let mut r = rng(9);
    for kind in [EdgeKind::Binary, EdgeKind::Continuous] {
        let a = match kind {
            EdgeKind::Binary => {
                Mat::from_vec(3, 3, vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap()
            }
            EdgeKind::Continuous => rand_mat(&mut r, 3, 3, 0.0, 1.0),
        };
        let sk = StructuralKnowledge::fully_observed(a, kind, 0);
        let x0 = rand_vec(&mut r, 9, 0.1, 0.9);
        let f = |x: &[f64]| {
            let mut t = Tape::new();
            let v = t.leaf(vec![3, 3], x.to_vec(), false).unwrap();
            let l = consistency_loss(&mut t, v, kind, &sk).unwrap();
            t.values(l)[0]
        };
        let mut t = Tape::new();
        let v = t.leaf(vec![3, 3], x0.clone(), true).unwrap();
        let l = consistency_loss(&mut t, v, kind, &sk).unwrap();
        t.backward(l).unwrap();
        assert_grad_close(t.grad(v), &fd_grad(&f, &x0), "consistency");
    }
}

#[test]
fn total_loss_arithmetic() {
    let mut t = Tape::new();
    let lf = t.scalar(2.5);
    let lg = t.scalar(0.5);
    let l1 = total_loss(&mut t, lf, lg, 1.0).unwrap();
    assert_eq!(t.values(l1), &[3.0]);
    let l0 = total_loss(&mut t, lf, lg, 0.0).unwrap();
    assert_eq!(t.values(l0), &[2.5]);
    assert!(total_loss(&mut t, lf, lg, -0.1).is_err());
}

#[test]
fn validate_rejects_bad_priors() {
    // binary with 0.5 entry
    let a = Mat::from_vec(2, 2, vec![0.0, 0.5, 1.0, 0.0]).unwrap();
    let sk = StructuralKnowledge::fully_observed(a, EdgeKind::Binary, 0);
    assert!(sk.validate().is_err());
    // non-square
    let a = Mat::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
    let sk = StructuralKnowledge {
        a,
        edge_kind: EdgeKind::Binary,
        mask: Mat::from_vec(1, 2, vec![1.0, 1.0]).unwrap(),
        regime: 0,
    };
    assert!(sk.validate().is_err());
    // continuous negative entry
    let a = Mat::from_vec(2, 2, vec![0.0, -0.2, 0.2, 0.0]).unwrap();
    let sk = StructuralKnowledge::fully_observed(a, EdgeKind::Continuous, 0);
    assert!(sk.validate().is_err());
    // bad value hidden behind mask 0 is fine
    let a = Mat::from_vec(2, 2, vec![0.0, 0.5, 1.0, 0.0]).unwrap();
    let mask = Mat::from_vec(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
    let sk = StructuralKnowledge {
        a,
        edge_kind: EdgeKind::Binary,
        mask,
        regime: 0,
    };
    assert!(sk.validate().is_ok());
}
