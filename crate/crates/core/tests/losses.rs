use codial_core::losses::*;
use codial_core::models::GaussianRepr;
use codial_core::numerics::{finite_diff_gradcheck, Graph, Tensor};
use codial_core::Error;
use proptest::prelude::*;

fn c(g: &mut Graph<f64>, shape: &[usize], v: &[f64]) -> codial_core::Var {
    g.constant(Tensor::from_f64(shape, v).unwrap())
}

fn ce_oracle(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

#[test]
fn cls_loss_examples() {
    let mut g = Graph::new();
    let u = c(&mut g, &[2, 5], &[0.0; 10]);
    let l = cls_loss(&mut g, u, &[1, 3]).unwrap();
    assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-12);

    let mut v = [0.0; 5];
    v[2] = 30.0;
    let p = c(&mut g, &[1, 5], &v);
    let l = cls_loss(&mut g, p, &[2]).unwrap();
    assert!(g.value(l).item() < 1e-9);

    let rows = [[1.0, -2.0, 0.5, 3.0, 0.0], [-1.0, 4.0, 2.0, 0.0, 1.5]];
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let x = c(&mut g, &[2, 5], &flat);
    let l = cls_loss(&mut g, x, &[3, 2]).unwrap();
    let want = (ce_oracle(&rows[0], 3) + ce_oracle(&rows[1], 2)) / 2.0;
    assert!((g.value(l).item() - want).abs() < 1e-12);
}

#[test]
fn js_zero_critic_is_minus_two_ln_two() {
    let mut g = Graph::<f64>::new();
    let z = c(&mut g, &[4, 2], &[0.3; 8]);
    let est = js_mi_lower_bound(&mut g, |g, a, _| {
        let s = g.sum_last(a)?;
        Ok(g.scale(s, 0.0))
    }, (z, z), (z, z))
    .unwrap();
    assert!((g.value(est.objective).item() + 2.0 * 2f64.ln()).abs() < 1e-12);
    assert!(est.nats.abs() < 1e-12);
}

#[test]
fn js_without_negatives_errors() {
    let mut g = Graph::<f64>::new();
    let z = c(&mut g, &[2, 2], &[0.0; 4]);
    let empty = g.constant(Tensor::zeros(&[0, 2]));
    let r = js_mi_lower_bound(&mut g, |g, a, _| g.sum_last(a), (z, z), (empty, empty));
    assert!(matches!(r, Err(Error::NoNegatives(_))));
}

#[test]
fn js_matches_formula_oracle_and_gradients() {
    let pos = [0.5, -1.0, 2.0];
    let neg = [-0.2, 1.5];
    let sp = |x: f64| (1.0 + x.exp()).ln();
    let want = -pos.iter().map(|&x| sp(-x)).sum::<f64>() / 3.0 - neg.iter().map(|&x| sp(x)).sum::<f64>() / 2.0;
    let want_nats = pos.iter().sum::<f64>() / 3.0 - neg.iter().map(|x: &f64| x.exp()).sum::<f64>() / 2.0 + 1.0;
    let mut g = Graph::new();
    let p = c(&mut g, &[3], &pos);
    let n = c(&mut g, &[2], &neg);
    let est = js_from_scores(&mut g, p, n).unwrap();
    assert!((g.value(est.objective).item() - want).abs() < 1e-12);
    assert!((est.nats - want_nats).abs() < 1e-12);

    let point = Tensor::from_f64(&[5], &[0.5, -1.0, 2.0, -0.2, 1.5]).unwrap();
    let err = finite_diff_gradcheck(
        |g, x| {
            let p = g.gather_rows(x, &[0, 1, 2])?;
            let n = g.gather_rows(x, &[3, 4])?;
            Ok(js_from_scores(g, p, n)?.objective)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

fn kl_oracle(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    (v2.sqrt() / v1.sqrt()).ln() + (v1 + (m1 - m2).powi(2)) / (2.0 * v2) - 0.5
}

fn sym_oracle(p: &[(f64, f64)], q: &[(f64, f64)]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&(m1, lv1), &(m2, lv2))| {
            0.5 * kl_oracle(m1, lv1.exp(), m2, lv2.exp()) + 0.5 * kl_oracle(m2, lv2.exp(), m1, lv1.exp())
        })
        .sum()
}

fn repr(g: &mut Graph<f64>, rows: usize, dims: usize, m: &[f64], lv: &[f64]) -> GaussianRepr {
    GaussianRepr {
        mean: c(g, &[rows, dims], m),
        logvar: c(g, &[rows, dims], lv),
    }
}

#[test]
fn mib_examples() {
    let mut g = Graph::new();
    let p = repr(&mut g, 1, 1, &[0.0], &[0.0]);
    let q = repr(&mut g, 1, 1, &[1.0], &[0.0]);
    let v = mib_regularizer(&mut g, &p, &q).unwrap();
    assert!((g.value(v).item() - 0.5).abs() < 1e-15);

    let p = repr(&mut g, 2, 3, &[0.1, -2.0, 3.0, 0.0, 1.0, 2.0], &[0.5, -1.0, 2.0, -3.0, 0.0, 1.0]);
    let same = mib_regularizer(&mut g, &p, &p).unwrap();
    assert_eq!(g.value(same).item(), 0.0);

    let q = repr(&mut g, 2, 3, &[1.0, 0.0, -1.0, 0.5, 0.5, 0.5], &[0.0, 0.3, -0.4, 1.0, -2.0, 0.0]);
    let pq = mib_regularizer(&mut g, &p, &q).unwrap();
    let qp = mib_regularizer(&mut g, &q, &p).unwrap();
    assert_eq!(g.value(pq).item(), g.value(qp).item());
    let rows = |r: &GaussianRepr, g: &Graph<f64>, i: usize| -> Vec<(f64, f64)> {
        g.value(r.mean).row(i).iter().copied().zip(g.value(r.logvar).row(i).iter().copied()).collect()
    };
    let want = (sym_oracle(&rows(&p, &g, 0), &rows(&q, &g, 0)) + sym_oracle(&rows(&p, &g, 1), &rows(&q, &g, 1))) / 2.0;
    assert!((g.value(pq).item() - want).abs() < 1e-12);

    let bad = repr(&mut g, 2, 2, &[0.0; 4], &[0.0; 4]);
    assert!(matches!(mib_regularizer(&mut g, &p, &bad), Err(Error::Dimension { .. })));
}

#[test]
fn mib_gradcheck() {
    let point = Tensor::from_f64(&[4, 3], &[0.3, -0.7, 1.1, 0.2, -0.5, 0.9, -1.2, 0.4, 0.8, 1.5, 0.1, -0.3]).unwrap();
    let err = finite_diff_gradcheck(
        |g, x| {
            let p = GaussianRepr { mean: g.gather_rows(x, &[0])?, logvar: g.gather_rows(x, &[1])? };
            let q = GaussianRepr { mean: g.gather_rows(x, &[2])?, logvar: g.gather_rows(x, &[3])? };
            mib_regularizer(g, &p, &q)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn beta_examples() {
    let s = BetaSchedule::default();
    assert_eq!(beta_at(&s, s.start_epoch), 1e-6);
    assert_eq!(beta_at(&s, 0), 1e-6);
    assert!((beta_at(&s, s.start_epoch + 100) - 1.0).abs() < 1e-15);
    assert!((beta_at(&s, s.start_epoch + 50) - 1e-3).abs() < 1e-15);
    assert_eq!(beta_at(&s, 10_000), 1.0);
    assert!(BetaSchedule { start_value: 0.0, ..s }.validate().is_err());
    assert!(BetaSchedule { start_value: 2.0, ..s }.validate().is_err());
}

fn scalar(g: &mut Graph<f64>, v: f64) -> codial_core::Var {
    g.constant(Tensor::scalar(v))
}

#[test]
fn mi_and_total_loss_examples() {
    let mut g = Graph::new();
    let mi = scalar(&mut g, 0.7);
    let reg = scalar(&mut g, 0.5);
    let l = mi_loss(&mut g, mi, reg, 0.0).unwrap();
    assert_eq!(g.value(l).item(), -0.7);
    let zero = scalar(&mut g, 0.0);
    let l = mi_loss(&mut g, zero, reg, 1.0).unwrap();
    assert_eq!(g.value(l).item(), 0.5);
    let a = mi_loss(&mut g, mi, reg, 2.0).unwrap();
    let b = mi_loss(&mut g, mi, reg, 0.0).unwrap();
    assert!((g.value(a).item() - g.value(b).item() - 1.0).abs() < 1e-15);

    let cls = scalar(&mut g, 1.2);
    let m = scalar(&mut g, -0.3);
    let w = |a, b| LossWeights { lambda_cls: a, lambda_mi: b };
    let t = total_loss(&mut g, cls, Some(m), &w(1.0, 0.0)).unwrap();
    assert_eq!(g.value(t).item(), 1.2);
    let t = total_loss(&mut g, cls, Some(m), &w(0.0, 1.0)).unwrap();
    assert_eq!(g.value(t).item(), -0.3);
    let t = total_loss(&mut g, cls, Some(m), &w(1.0, 1.0)).unwrap();
    assert!((g.value(t).item() - 0.9).abs() < 1e-15);
    let t = total_loss(&mut g, cls, None, &w(1.0, 1.0)).unwrap();
    assert_eq!(g.value(t).item(), 1.2);
    assert!(w(-1.0, 1.0).validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mib_nonnegative_and_zero_only_when_equal(
        m1 in proptest::collection::vec(-5.0f64..5.0, 4),
        m2 in proptest::collection::vec(-5.0f64..5.0, 4),
        v1 in proptest::collection::vec(-10.0f64..10.0, 4),
        v2 in proptest::collection::vec(-10.0f64..10.0, 4),
    ) {
        let mut g = Graph::new();
        let p = repr(&mut g, 1, 4, &m1, &v1);
        let q = repr(&mut g, 1, 4, &m2, &v2);
        let v = mib_regularizer(&mut g, &p, &q).unwrap();
        let v = g.value(v).item();
        prop_assert!(v.is_finite());
        prop_assert!(v >= 0.0);
        if m1 != m2 || v1 != v2 {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn beta_monotone_and_continuous(start in 0usize..20, ramp in 1usize..200, lo in -8.0f64..0.0, e in 0usize..400) {
        let s = BetaSchedule { start_value: 10f64.powf(lo), end_value: 1.0, start_epoch: start, ramp_epochs: ramp };
        prop_assert!(beta_at(&s, e + 1) >= beta_at(&s, e));
        // endpoints of the ramp agree with the geometric formula
        let geo = |t: f64| s.start_value * (s.end_value / s.start_value).powf(t);
        prop_assert!((beta_at(&s, start) - geo(0.0)).abs() < 1e-12);
        prop_assert!((beta_at(&s, start + ramp) - geo(1.0)).abs() < 1e-12);
    }
}
