use leanstereo::head::HeadOutputs;
use leanstereo::losses::{
    masked_loss, masked_loss_value, multi_output_loss, pointwise, pointwise_grad, validity_mask,
    LossConfig, LossKind,
};
use leanstereo::{Error, Graph, Tensor};
use proptest::prelude::*;

const KINDS: [LossKind; 4] = [
    LossKind::LogL1,
    LossKind::SmoothL1,
    LossKind::L1,
    LossKind::L2,
];

fn t(v: &[f32]) -> Tensor {
    Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
}

fn loss(pred: &[f32], gt: &[f32], kind: LossKind) -> f64 {
    masked_loss_value(&t(pred), &t(gt), &vec![true; gt.len()], kind, 1.0).unwrap()
}

#[test]
fn validity_mask_bounds() {
    assert_eq!(
        validity_mask(&t(&[0.0, 95.5, 192.0, 191.9, -1.0]), 192.0),
        [false, true, false, true, false]
    );
}

#[test]
fn logl1_closed_forms() {
    assert_eq!(loss(&[3.0, 7.0], &[3.0, 7.0], LossKind::LogL1), 0.0);
    let e = std::f32::consts::E - 1.0;
    assert!((loss(&[10.0 + e], &[10.0], LossKind::LogL1) - 1.0).abs() < 1e-6);
    assert!((loss(&[12.0, 5.0], &[10.0, 5.0], LossKind::LogL1) - 3f64.ln() / 2.0).abs() < 1e-6);
}

#[test]
fn baseline_closed_forms() {
    for k in KINDS {
        assert_eq!(loss(&[4.0, 5.0], &[4.0, 5.0], k), 0.0);
    }
    assert_eq!(loss(&[1.5], &[1.0], LossKind::SmoothL1), 0.125);
    assert_eq!(loss(&[1.5], &[1.0], LossKind::L1), 0.5);
    assert_eq!(loss(&[1.5], &[1.0], LossKind::L2), 0.25);
    assert_eq!(loss(&[3.0], &[1.0], LossKind::SmoothL1), 1.5);
    assert!("huber".parse::<LossKind>().is_err());
}

#[test]
fn empty_mask_is_an_error() {
    let r = masked_loss_value(&t(&[1.0]), &t(&[2.0]), &[false], LossKind::LogL1, 1.0);
    assert!(matches!(r, Err(Error::EmptyMask(_))));
}

#[test]
fn derivative_laws_match_central_differences() {
    for k in KINDS {
        for e in [0.1, 1.0, 10.0] {
            let h = 1e-6;
            let fd = (pointwise(k, e + h, 1.0) - pointwise(k, e - h, 1.0)) / (2.0 * h);
            let an = pointwise_grad(k, e, 1.0);
            assert!(
                ((an - fd) / fd).abs() < 1e-4,
                "{} at {}: {} vs {}",
                k,
                e,
                an,
                fd
            );
        }
    }
    for e in [0.1, 1.0, 10.0] {
        assert_eq!(pointwise_grad(LossKind::LogL1, e, 1.0), 1.0 / (e + 1.0));
        assert_eq!(pointwise_grad(LossKind::L1, e, 1.0), 1.0);
        assert_eq!(pointwise_grad(LossKind::L1, -e, 1.0), -1.0);
        assert_eq!(pointwise_grad(LossKind::L2, e, 1.0), 2.0 * e);
    }
}

#[test]
fn graph_gradient_is_pointwise_over_count() {
    let pred = t(&[1.1, 2.0, 13.0, 0.0]);
    let gt = t(&[1.0, 3.0, 3.0, 0.0]);
    let mask = validity_mask(&gt, 192.0);
    for k in KINDS {
        let mut g = Graph::training();
        let p = g.leaf(pred.clone(), true);
        let l = masked_loss(&mut g, p, &gt, &mask, k, 1.0).unwrap();
        let grads = g.backward(l);
        let gp = grads.get(p).unwrap();
        for i in 0..4 {
            let want = if mask[i] {
                pointwise_grad(k, (pred.data()[i] - gt.data()[i]) as f64, 1.0) / 3.0
            } else {
                0.0
            };
            assert!(
                (gp.data()[i] as f64 - want).abs() < 1e-6,
                "{} pixel {}",
                k,
                i
            );
        }
    }
}

#[test]
fn multi_output_weights() {
    let gt = t(&[5.0, 6.0]);
    let mask = [true, true];
    let eval = |o0: &[f32], o1: &[f32], o2: &[f32], w: [f64; 3]| {
        let mut g = Graph::inference();
        let outs = HeadOutputs {
            out0: g.input(t(o0)),
            out1: g.input(t(o1)),
            out2: g.input(t(o2)),
        };
        let cfg = LossConfig {
            output_weights: w,
            ..LossConfig::default()
        };
        let v = multi_output_loss(&mut g, &outs, &gt, &mask, &cfg).unwrap();
        g.value(v).data()[0] as f64
    };
    let d = LossConfig::default().output_weights;
    assert_eq!(d, [0.5, 0.7, 1.0]);
    assert_eq!(eval(&[5.0, 6.0], &[5.0, 6.0], &[5.0, 6.0], d), 0.0);
    let single = loss(&[7.0, 6.0], &[5.0, 6.0], LossKind::LogL1);
    assert!((eval(&[5.0, 6.0], &[5.0, 6.0], &[7.0, 6.0], d) - single).abs() < 1e-6);
    assert!((eval(&[9.0, 1.0], &[0.0, 0.0], &[7.0, 6.0], [0.0, 0.0, 1.0]) - single).abs() < 1e-6);
    assert!(LossConfig {
        output_weights: [0.0; 3],
        ..LossConfig::default()
    }
    .validate()
    .is_err());
    assert!(LossConfig {
        epsilon: 0.0,
        ..LossConfig::default()
    }
    .validate()
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn logl1_gradient_strictly_decreases(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let g = |e: f64| pointwise_grad(LossKind::LogL1, e.max(1e-12), 1.0).abs();
        prop_assert!(g(hi) < g(lo));
    }

    #[test]
    fn losses_ignore_pixel_order(
        vals in proptest::collection::vec((0.0f32..50.0, 0.5f32..50.0), 1..40),
        rot in 0usize..40,
    ) {
        let pred: Vec<f32> = vals.iter().map(|v| v.0).collect();
        let gt: Vec<f32> = vals.iter().map(|v| v.1).collect();
        let r = rot % vals.len();
        let mut p2 = pred.clone();
        let mut g2 = gt.clone();
        p2.rotate_left(r);
        g2.rotate_left(r);
        p2.reverse();
        g2.reverse();
        for k in KINDS {
            let a = loss(&pred, &gt, k);
            let b = loss(&p2, &g2, k);
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn unlabeled_pixels_contribute_nothing(
        vals in proptest::collection::vec((0.0f32..50.0, 0.5f32..50.0), 1..20),
        junk in proptest::collection::vec(-1e3f32..1e3, 1..10),
    ) {
        let mut pred: Vec<f32> = vals.iter().map(|v| v.0).collect();
        let mut gt: Vec<f32> = vals.iter().map(|v| v.1).collect();
        let mask_of = |gt: &[f32]| validity_mask(&t(gt), 192.0);
        let base: Vec<f64> = KINDS
            .iter()
            .map(|&k| masked_loss_value(&t(&pred), &t(&gt), &mask_of(&gt), k, 1.0).unwrap())
            .collect();
        for j in &junk {
            pred.push(*j);
            gt.push(0.0);
        }
        for (i, &k) in KINDS.iter().enumerate() {
            let v = masked_loss_value(&t(&pred), &t(&gt), &mask_of(&gt), k, 1.0).unwrap();
            prop_assert_eq!(v, base[i]);
        }
    }
}
