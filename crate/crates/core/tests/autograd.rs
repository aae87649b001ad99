use dapt::autograd::{finite_diff_check, Tape, Tensor};
use proptest::prelude::*;

/// A small network touching most differentiable ops, reduced to a scalar.
fn composite(theta: &[f64], grad: bool) -> (f64, Vec<f64>) {
    let tape = Tape::new();
    let leaf = |t: Tensor| if grad { tape.param(t) } else { tape.constant(t) };
    let x = leaf(Tensor::matrix(4, 2, theta[..8].to_vec()).unwrap());
    let w = leaf(Tensor::matrix(2, 6, theta[8..20].to_vec()).unwrap());
    let g = leaf(Tensor::new(vec![6], theta[20..26].to_vec()).unwrap());
    let b = leaf(Tensor::new(vec![6], theta[26..32].to_vec()).unwrap());
    let qkv = x.matmul(w).layer_norm(g, b).gelu();
    let h = qkv.attention(2, 2, 2);
    let z = h.add(x.scale(0.5)).normalize_rows();
    let logits = z.matmul(z.transpose()).scale(3.0);
    let ce = logits.log_softmax().pick_per_row(&[0, 1, 2, 3]).mean().scale(-1.0);
    let extra = h.sub(x).abs().relu().sum().scale(0.1).add(z.log_sigmoid().mean());
    let loss = ce.add(extra);
    let grads = if grad {
        let gs = tape.backward(loss).unwrap();
        [x, w, g, b].iter().flat_map(|v| gs.get(v).into_data()).collect()
    } else {
        Vec::new()
    };
    (loss.item(), grads)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn composite_gradients_match_central_differences(theta in proptest::collection::vec(-1.5f64..1.5, 32)) {
        let (_, g) = composite(&theta, true);
        let err = finite_diff_check(|t| composite(t, false).0, &g, &theta, 1e-5).unwrap();
        prop_assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn repeated_use_accumulates_gradient() {
    let tape = Tape::new();
    let x = tape.param(Tensor::matrix(1, 2, vec![2.0, -3.0]).unwrap());
    let y = x.mul(x).add(x).sum();
    let g = tape.backward(y).unwrap().get(&x);
    assert_eq!(g.data(), &[5.0, -5.0]);
}
