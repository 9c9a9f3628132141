mod common;

use common::*;
use rand::Rng;
use skicl::consistency::{EdgeKind, StructuralKnowledge};
use skicl::metrics::{mae, precision_recall, rmse, summarize, PerformanceMatrix};
use skicl::Mat;

#[test]
fn mae_rmse_hand_values() {
    assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert!((mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.5).abs() < 1e-15);
    assert!((rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
    assert!((rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.5811).abs() < 1e-4);
    // constant offset
    let y = [0.3, -0.4, 1.7];
    let yh: Vec<f64> = y.iter().map(|v| v + 0.25).collect();
    assert!((mae(&y, &yh).unwrap() - 0.25).abs() < 1e-15);
    assert!((rmse(&y, &yh).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn mae_rmse_reject_bad_input() {
    assert!(mae(&[], &[]).is_err());
    assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    assert!(rmse(&[], &[]).is_err());
}

#[test]
fn rmse_dominates_mae() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let n = r.gen_range(1..=20);
        let y = rand_vec(&mut r, n, -5.0, 5.0);
        let yh = rand_vec(&mut r, n, -5.0, 5.0);
        assert!(rmse(&y, &yh).unwrap() >= mae(&y, &yh).unwrap() - 1e-12);
    }
}

fn binary_prior(n: usize, edges: &[(usize, usize)]) -> StructuralKnowledge {
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        a.set(i, i, 1.0);
    }
    for &(i, j) in edges {
        a.set(i, j, 1.0);
    }
    StructuralKnowledge::fully_observed(a, EdgeKind::Binary, 0)
}

#[test]
fn precision_recall_exact_recovery() {
    let p = binary_prior(3, &[(0, 1), (2, 0)]);
    let (pr, rc) = precision_recall(&p.a, &p).unwrap();
    assert_eq!((pr, rc), (1.0, 1.0));
}

#[test]
fn precision_recall_all_ones_half_density() {
    // prior with half of the off-diagonal entries set
    let n = 3;
    let p = binary_prior(n, &[(0, 1), (0, 2), (1, 0)]); // 3 of 6 off-diag
    let mut ones = Mat::zeros(n, n);
    ones.data.iter_mut().for_each(|v| *v = 1.0);
    let (pr, rc) = precision_recall(&ones, &p).unwrap();
    assert_eq!(rc, 1.0);
    assert!((pr - 0.5).abs() < 1e-15);
}

#[test]
fn precision_recall_degenerate_zero() {
    let p = binary_prior(3, &[(0, 1)]);
    let zeros = Mat::zeros(3, 3);
    let (pr, rc) = precision_recall(&zeros, &p).unwrap();
    assert_eq!((pr, rc), (0.0, 0.0));
}

#[test]
fn precision_recall_respects_mask_and_rejects_nonbinary() {
    let mut p = binary_prior(3, &[(0, 1), (1, 2)]);
    p.mask.set(1, 2, 0.0);
    let mut pred = Mat::zeros(3, 3);
    pred.set(0, 1, 1.0);
    pred.set(1, 2, 1.0); // masked out: not a FP/TP
    let (pr, rc) = precision_recall(&pred, &p).unwrap();
    assert_eq!((pr, rc), (1.0, 1.0));

    let soft = Mat::from_vec(3, 3, vec![0.5; 9]).unwrap();
    assert!(precision_recall(&soft, &p).is_err());
}

#[test]
fn precision_recall_permutation_invariant() {
    let mut r = rng(2);
    let n = 5;
    for _ in 0..20 {
        let mut pred = Mat::zeros(n, n);
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    pred.set(i, j, (r.gen::<f64>() < 0.4) as u8 as f64);
                    a.set(i, j, (r.gen::<f64>() < 0.4) as u8 as f64);
                }
            }
        }
        let prior = StructuralKnowledge::fully_observed(a.clone(), EdgeKind::Binary, 0);
        let base = precision_recall(&pred, &prior).unwrap();
        // cyclic shift permutation
        let perm: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
        let permute = |m: &Mat| {
            let mut out = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    out.set(perm[i], perm[j], m.get(i, j));
                }
            }
            out
        };
        let prior2 = StructuralKnowledge::fully_observed(permute(&a), EdgeKind::Binary, 0);
        let permuted = precision_recall(&permute(&pred), &prior2).unwrap();
        assert_eq!(base, permuted);
    }
}

#[test]
fn ap_af_hand_example() {
    let mut p = PerformanceMatrix::new();
    p.push_row("mae", vec![10.0]).unwrap();
    p.push_row("mae", vec![12.0, 8.0]).unwrap();
    assert_eq!(p.average_performance("mae", 1).unwrap(), 10.0);
    assert_eq!(p.average_performance("mae", 2).unwrap(), 10.0);
    assert_eq!(p.average_forgetting("mae", 2).unwrap(), 2.0);
    assert!(p.average_forgetting("mae", 1).is_err());
}

#[test]
fn af_zero_without_forgetting() {
    let mut p = PerformanceMatrix::new();
    p.push_row("mae", vec![3.0]).unwrap();
    p.push_row("mae", vec![3.0, 5.0]).unwrap();
    p.push_row("mae", vec![3.0, 5.0, 1.0]).unwrap();
    assert_eq!(p.average_forgetting("mae", 3).unwrap(), 0.0);
}

#[test]
fn performance_matrix_shape_checks() {
    let mut p = PerformanceMatrix::new();
    p.push_row("mae", vec![1.0]).unwrap();
    assert!(p.push_row("mae", vec![1.0]).is_err()); // must have length 2
    p.push_row("mae", vec![1.0, 2.0]).unwrap();
    assert!(p.average_performance("rmse", 1).is_err()); // unknown metric
}

#[test]
fn csv_is_lower_triangular() {
    let mut p = PerformanceMatrix::new();
    p.push_row("mae", vec![1.0]).unwrap();
    p.push_row("mae", vec![2.0, 3.0]).unwrap();
    let csv = p.to_csv("mae").unwrap();
    assert_eq!(csv, "1,\n2,3\n");
}

#[test]
fn summarize_covers_all_stages() {
    let mut p = PerformanceMatrix::new();
    p.push_row("mae", vec![10.0]).unwrap();
    p.push_row("mae", vec![12.0, 8.0]).unwrap();
    let s = summarize(&p).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].regime, 1);
    assert_eq!(s[0].metrics["mae"].ap, 10.0);
    assert!(s[0].metrics["mae"].af.is_none());
    assert_eq!(s[1].metrics["mae"].ap, 10.0);
    assert_eq!(s[1].metrics["mae"].af, Some(2.0));
}
