use proptest::prelude::*;
use redcore::autodiff::{finite_diff_check, Axis, Tape, Var};
use redcore::{Result, Tensor};

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

/// Values at least `gap` away from zero, for ops with a kink there.
fn away_from_zero(rows: usize, cols: usize, gap: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec((gap..2.0, any::<bool>()), rows * cols).prop_map(move |d| {
        let data = d.into_iter().map(|(v, neg)| if neg { -v } else { v }).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    })
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..5, 1usize..5)
}

/// A fixed weighting that makes the root depend on every output entry
/// differently.
fn weighted_sum(tape: &mut Tape, v: Var) -> Result<Var> {
    let t = tape.value(v).clone();
    let w: Vec<f64> = (0..t.len()).map(|i| 0.3 + 0.17 * i as f64).collect();
    let wv = tape.var(Tensor::new(t.shape().to_vec(), w)?)?;
    let p = tape.mul_elem(v, wv)?;
    Ok(tape.sum(p))
}

fn check(x: &Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> f64 {
    finite_diff_check(
        |tape, v| {
            let out = f(tape, v)?;
            weighted_sum(tape, out)
        },
        x,
        H,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_both_sides((r, c) in dims(), k in 1usize..5, seed in any::<u64>()) {
        let other = Tensor::new(vec![c, k], (0..c * k).map(|i| ((i as u64 ^ seed) % 7) as f64 * 0.3 - 1.0).collect()).unwrap();
        let left = Tensor::new(vec![k, r], (0..k * r).map(|i| ((i as u64 + seed) % 5) as f64 * 0.4 - 0.9).collect()).unwrap();
        let x = Tensor::full(&[r, c], 0.5);
        let err = check(&x, |t, v| { let o = t.var(other.clone())?; t.matmul(v, o) });
        prop_assert!(err < TOL, "relative error {}", err);
        let err = check(&x, |t, v| { let l = t.var(left.clone())?; t.matmul(l, v) });
        prop_assert!(err < TOL, "relative error {}", err);
    }

    #[test]
    fn elementwise_ops(x in dims().prop_flat_map(|(r, c)| matrix(r, c, -2.0, 2.0))) {
        let y = x.map(|v| 0.7 * v - 0.2);
        let err = check(&x, |t, v| { let o = t.var(y.clone())?; t.add(v, o) });
        prop_assert!(err < TOL, "relative error {}", err);
        let err = check(&x, |t, v| { let o = t.var(y.clone())?; t.sub(o, v) });
        prop_assert!(err < TOL, "relative error {}", err);
        prop_assert!(check(&x, |t, v| t.mul_elem(v, v)) < TOL);
        prop_assert!(check(&x, |t, v| Ok(t.tanh(v))) < TOL);
        prop_assert!(check(&x, |t, v| t.exp(v)) < TOL);
        prop_assert!(check(&x, |t, v| t.scale(v, -1.7)) < TOL);
        prop_assert!(check(&x, |t, v| Ok(t.sum(v))) < TOL);
    }

    #[test]
    fn row_bias_add((r, c) in dims(), b in prop::collection::vec(-1.0f64..1.0, 4)) {
        let x = Tensor::full(&[r, c], 0.1);
        let bias = Tensor::vector(b[..c].to_vec()).unwrap();
        let err = check(&bias, |t, v| { let a = t.var(x.clone())?; t.add(a, v) });
        prop_assert!(err < TOL, "relative error {}", err);
    }

    #[test]
    fn kinked_ops(x in dims().prop_flat_map(|(r, c)| away_from_zero(r, c, 0.05))) {
        prop_assert!(check(&x, |t, v| Ok(t.relu(v))) < TOL);
        // Bounds inside the excluded band clamp everything; wide bounds clamp nothing.
        prop_assert!(check(&x, |t, v| Ok(t.clamp(v, -0.025, 0.025))) < TOL);
        prop_assert!(check(&x, |t, v| Ok(t.clamp(v, -3.0, 3.0))) < TOL);
    }

    #[test]
    fn shape_ops(x in (2usize..5, 2usize..5).prop_flat_map(|(r, c)| matrix(r, c, -2.0, 2.0))) {
        let (r, c) = (x.rows(), x.cols());
        let err = check(&x, |t, v| { let o = t.var(Tensor::full(&[r, 2], 1.0))?; t.concat(&[v, o, v], Axis::Cols) });
        prop_assert!(err < TOL, "relative error {}", err);
        prop_assert!(check(&x, |t, v| t.concat(&[v, v], Axis::Rows)) < TOL);
        prop_assert!(check(&x, |t, v| t.slice(v, Axis::Cols, 1, c)) < TOL);
        prop_assert!(check(&x, |t, v| t.slice(v, Axis::Rows, 0, r - 1)) < TOL);
        prop_assert!(check(&x, |t, v| t.mean(v, Axis::Rows)) < TOL);
        prop_assert!(check(&x, |t, v| t.mean(v, Axis::Cols)) < TOL);
        let rows: Vec<usize> = (0..r).rev().chain([0, 0]).collect();
        prop_assert!(check(&x, |t, v| t.select_rows(v, &rows)) < TOL);
        let mask: Vec<bool> = (0..r).map(|i| i % 2 == 0).collect();
        let err = check(&x, |t, v| { let o = t.var(x.map(|e| e * e))?; t.where_rows(&mask, v, o) });
        prop_assert!(err < TOL, "relative error {}", err);
        let err = check(&x, |t, v| { let o = t.mul_elem(v, v)?; t.where_rows(&mask, o, v) });
        prop_assert!(err < TOL, "relative error {}", err);
    }

    #[test]
    fn losses_ops(
        logits in (1usize..6, 2usize..5).prop_flat_map(|(r, c)| matrix(r, c, -3.0, 3.0)),
        labels in prop::collection::vec(0usize..100, 6),
        lv in matrix(3, 4, -2.0, 2.0),
    ) {
        let labels: Vec<usize> = labels[..logits.rows()].iter().map(|l| l % logits.cols()).collect();
        let ce = finite_diff_check(|t, v| t.softmax_cross_entropy(v, &labels), &logits, H).unwrap();
        prop_assert!(ce < TOL);
        let mu = lv.map(|v| 0.5 * v + 0.1);
        let kl_mu = finite_diff_check(|t, v| { let l = t.var(lv.clone())?; t.gaussian_kl(v, l) }, &mu, H).unwrap();
        let kl_lv = finite_diff_check(|t, v| { let m = t.var(mu.clone())?; t.gaussian_kl(m, v) }, &lv, H).unwrap();
        prop_assert!(kl_mu < TOL && kl_lv < TOL);
    }

    #[test]
    fn backward_twice_after_zeroing_is_bitwise(x in matrix(3, 2, -1.5, 1.5), w in matrix(2, 3, -1.5, 1.5)) {
        let mut tape = Tape::new();
        let xv = tape.var(x).unwrap();
        let wv = tape.var(w).unwrap();
        let h = tape.matmul(xv, wv).unwrap();
        let a = tape.tanh(h);
        let e = tape.exp(a).unwrap();
        let root = tape.sum(e);
        let g1 = tape.backward(root).unwrap().get(wv).unwrap().clone();
        let acc1 = tape.grad(wv);
        tape.zero_grad();
        let g2 = tape.backward(root).unwrap().get(wv).unwrap().clone();
        prop_assert_eq!(&g1, &g2);
        prop_assert_eq!(acc1, tape.grad(wv));
    }

    #[test]
    fn kl_is_nonnegative(mu in matrix(3, 4, -3.0, 3.0), lv in matrix(3, 4, -4.0, 4.0)) {
        let mut tape = Tape::new();
        let m = tape.var(mu.clone()).unwrap();
        let l = tape.var(lv.clone()).unwrap();
        let kl = tape.gaussian_kl(m, l).unwrap();
        let value = tape.value(kl).item();
        prop_assert!(value >= 0.0);
        // 0.5 (e^l - l - 1) >= l^2 / (4e) for |l| <= 1 and grows beyond, so
        // KL is bounded away from zero whenever any entry is.
        let lower: f64 = mu
            .data()
            .iter()
            .zip(lv.data())
            .map(|(m, l)| 0.5 * m * m + 0.09 * l.abs().min(1.0).powi(2))
            .sum::<f64>()
            / 3.0;
        prop_assert!(value >= lower - 1e-12);
    }

    #[test]
    fn cross_entropy_shift_invariance(
        logits in (1usize..6, 2usize..5).prop_flat_map(|(r, c)| matrix(r, c, -5.0, 5.0)),
        shifts in prop::collection::vec(-50.0f64..50.0, 6),
        raw_labels in prop::collection::vec(0usize..100, 6),
    ) {
        let (r, c) = (logits.rows(), logits.cols());
        let labels: Vec<usize> = raw_labels[..r].iter().map(|l| l % c).collect();
        let shifted = Tensor::new(
            vec![r, c],
            (0..r * c).map(|i| logits.data()[i] + shifts[i / c]).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let a = tape.var(logits).unwrap();
        let b = tape.var(shifted).unwrap();
        let ca = tape.softmax_cross_entropy(a, &labels).unwrap();
        let cb = tape.softmax_cross_entropy(b, &labels).unwrap();
        prop_assert!((tape.value(ca).item() - tape.value(cb).item()).abs() < 1e-9);
    }
}

#[test]
fn kl_is_zero_at_standard_normal() {
    let mut tape = Tape::new();
    let m = tape.var(Tensor::zeros(&[4, 3])).unwrap();
    let l = tape.var(Tensor::zeros(&[4, 3])).unwrap();
    let kl = tape.gaussian_kl(m, l).unwrap();
    assert!(tape.value(kl).item().abs() <= 1e-12);
}
