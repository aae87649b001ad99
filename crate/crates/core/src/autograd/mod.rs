//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. `backward`
//! replays the record in reverse; `grad_tap` reads the gradient at any
//! intermediate node, which is what Grad-CAM needs.

mod check;
mod tape;
mod tensor;

pub use check::{check_graph, cosine_rows, cosine_similarity, finite_diff_check, l1_distance, l1_rows};
pub use tape::{concat_rows, Gradients, NodeId, Tape, Var};
pub use tensor::Tensor;


#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1., 2., 2.], &[1., 2., 2.]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1., 0.], &[0., 1.]).unwrap(), 0.0);
        assert!((cosine_similarity(&[3., 4.], &[4., 3.]).unwrap() - 0.96).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0., 0.], &[1., 0.]),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_distance(&[1., 2.], &[1., 2.]).unwrap(), 0.0);
        assert_eq!(l1_distance(&[1., 2.], &[3., 5.]).unwrap(), 5.0);
        assert!(matches!(l1_distance(&[1.], &[1., 2.]), Err(crate::Error::Shape(_))));

        let mut r = rng(3);
        let a = Tensor::randn(&[1, 64], 1.0, &mut r);
        let b = Tensor::randn(&[1, 64], 1.0, &mut r);
        let mut oracle = 0.0;
        for i in 0..64 {
            let d = a.data()[i] - b.data()[i];
            oracle += if d < 0.0 { -d } else { d };
        }
        let tape = Tape::new();
        let v = l1_rows(tape.constant(a.clone()), tape.constant(b.clone())).item();
        assert!((v - oracle).abs() < 1e-12);
        assert!((l1_distance(a.data(), b.data()).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.mul(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(&x).item(), 6.0);
    }

    #[test]
    fn constant_leaf_gets_zero() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = x.mul(c);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(&c).item(), 0.0);
        assert!(g.try_get(c.id()).is_none());
        assert_eq!(g.get(&x).item(), 5.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1., 2.]));
        assert!(matches!(tape.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn grad_tap_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1., 2., 3.]));
        let h = x.mul(x);
        let root = h.sum();
        assert_eq!(tape.grad_tap(root, root).unwrap().data(), &[1.0]);
        let h_grad = tape.grad_tap(root, h).unwrap();
        assert_eq!(h_grad.data(), &[1., 1., 1.]);
        let x_grad = tape.grad_tap(root, x).unwrap();
        assert_eq!(x_grad.data(), &[2., 4., 6.]);

        let unrelated = tape.constant(Tensor::vector(vec![7., 7.])).exp();
        assert_eq!(tape.grad_tap(root, unrelated).unwrap().data(), &[0., 0.]);

        let other = Tape::new();
        let foreign = other.constant(Tensor::scalar(1.0));
        assert!(matches!(tape.grad_tap(root, foreign), Err(crate::Error::Lookup(_))));
    }

    #[test]
    fn finite_diff_exact_on_polynomials() {
        let theta = [0.3, -1.2, 2.0];
        let lin = |p: &[f64]| 2.0 * p[0] - 3.0 * p[1] + 0.5 * p[2] + 1.0;
        let err = finite_diff_check(lin, &[2.0, -3.0, 0.5], &theta, 1e-4).unwrap();
        assert!(err < 1e-9, "{err}");
        let quad = |p: &[f64]| p[0] * p[0] + 3.0 * p[0] * p[1] - p[2] * p[2];
        let grad = [2.0 * 0.3 + 3.0 * -1.2, 3.0 * 0.3, -4.0];
        let err = finite_diff_check(quad, &grad, &theta, 1e-4).unwrap();
        assert!(err < 1e-9, "{err}");
        assert!(finite_diff_check(lin, &[0.0; 3], &theta, 0.0).is_err());
        assert!(matches!(
            finite_diff_check(|_| f64::NAN, &[0.0; 3], &theta, 1e-3),
            Err(crate::Error::Numeric(_))
        ));
    }

    fn check(graph: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>, inputs: &[Tensor]) {
        let err = check_graph(graph, inputs, 1e-5).unwrap();
        assert!(err < 1e-4, "finite difference mismatch {err}");
    }

    #[test]
    fn required_ops_pass_finite_differences() {
        let mut r = rng(11);
        let a = Tensor::randn(&[3, 4], 1.0, &mut r);
        let b = Tensor::randn(&[3, 4], 1.0, &mut r);
        let w = Tensor::randn(&[4, 5], 1.0, &mut r);
        let pos = Tensor::new(vec![3, 4], a.data().iter().map(|v| v.abs() + 0.5).collect()).unwrap();
        let gamma = Tensor::randn(&[4], 1.0, &mut r);
        let beta = Tensor::randn(&[4], 1.0, &mut r);
        let probe = Tensor::randn(&[3, 4], 1.0, &mut r);

        // weighted sums make every output coordinate matter
        let probe5 = Tensor::randn(&[3, 5], 1.0, &mut r);
        check(|t, v| v[0].matmul(v[1]).mul(t.constant(probe5.clone())).sum(), &[a.clone(), w.clone()]);
        check(|_, v| v[0].add(v[1]).mul(v[0]).sum(), &[a.clone(), b.clone()]);
        check(|t, v| v[0].relu().mul(t.constant(probe.clone())).sum(), &[b.clone()]);
        check(|t, v| v[0].gelu().mul(t.constant(probe.clone())).sum(), &[a.clone()]);
        check(|t, v| v[0].layer_norm(v[1], v[2]).mul(t.constant(probe.clone())).sum(), &[a.clone(), gamma.clone(), beta.clone()]);
        check(|t, v| v[0].softmax().mul(t.constant(probe.clone())).sum(), &[a.clone()]);
        check(|t, v| v[0].log_softmax().mul(t.constant(probe.clone())).sum(), &[a.clone()]);
        check(|t, v| v[0].ln().mul(t.constant(probe.clone())).sum(), &[pos.clone()]);
        check(|t, v| v[0].exp().mul(t.constant(probe.clone())).sum(), &[a.clone()]);
        check(|t, v| concat_rows(&[v[0], v[1]]).mul(t.constant(Tensor::randn(&[6, 4], 1.0, &mut rng(2)))).sum(), &[a.clone(), b.clone()]);
        check(|t, v| v[0].slice_rows(1, 3).mul(t.constant(probe.clone()).slice_rows(0, 2)).sum(), &[a.clone()]);
        check(|_, v| v[0].mul(v[0]).mean(), &[a.clone()]);
        check(|t, v| v[0].normalize_rows().mul(t.constant(probe.clone())).sum(), &[a.clone()]);
        check(|t, v| v[0].log_sigmoid().mul(t.constant(probe.clone())).sum(), &[a.clone()]);
        check(|t, v| v[0].sub(v[1]).abs().row_sum().mul(t.constant(Tensor::vector(vec![1., 2., 3.]))).sum(), &[a.clone(), b.clone()]);
        check(|t, v| v[0].add_broadcast(v[1]).gather_rows(&[2, 0, 2]).mul(t.constant(probe.clone())).sum(), &[a.clone(), beta.clone()]);
        check(|_, v| v[0].log_softmax().pick_per_row(&[1, 0, 3]).sum(), &[a.clone()]);
        check(|t, v| v[0].transpose().scale(-2.0).add_scalar(1.0).mul(t.constant(probe.clone()).reshape(&[4, 3])).sum(), &[a.clone()]);
    }

    #[test]
    fn attention_and_insert_pass_finite_differences() {
        let mut r = rng(5);
        // batch 2, seq 3, width 4, 2 heads
        let qkv = Tensor::randn(&[6, 12], 1.0, &mut r);
        let probe = Tensor::randn(&[6, 4], 1.0, &mut r);
        check(|t, v| v[0].attention(2, 3, 2).mul(t.constant(probe.clone())).sum(), &[qkv]);

        let x = Tensor::randn(&[6, 4], 1.0, &mut r);
        let p = Tensor::randn(&[2, 4], 1.0, &mut r);
        let probe_ins = Tensor::randn(&[10, 4], 1.0, &mut r);
        check(|t, v| v[0].insert_rows(v[1], 2, 3, 1, false).mul(t.constant(probe_ins.clone())).sum(), &[x.clone(), p.clone()]);
        check(|t, v| v[0].insert_rows(v[1], 2, 3, 1, true).mul(t.constant(probe.clone())).sum(), &[x, p]);
    }

    #[test]
    fn insert_rows_layout() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(4, 1, vec![1., 2., 3., 4.]).unwrap());
        let p = tape.constant(Tensor::matrix(1, 1, vec![9.]).unwrap());
        assert_eq!(x.insert_rows(p, 2, 2, 1, false).value().data(), &[1., 9., 2., 3., 9., 4.]);
        assert_eq!(x.insert_rows(p, 2, 2, 1, true).value().data(), &[1., 9., 3., 9.]);
        assert_eq!(x.insert_rows(p, 2, 2, 0, true).value().data(), &[9., 2., 9., 4.]);
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        // matmul -> layernorm -> softmax cross-entropy
        let mut r = rng(9);
        let x = Tensor::randn(&[4, 6], 1.0, &mut r);
        let w = Tensor::randn(&[6, 5], 0.5, &mut r);
        let g = Tensor::randn(&[5], 1.0, &mut r);
        let b = Tensor::randn(&[5], 1.0, &mut r);
        check(
            |_, v| {
                v[0].matmul(v[1])
                    .layer_norm(v[2], v[3])
                    .log_softmax()
                    .pick_per_row(&[0, 4, 2, 1])
                    .mean()
                    .scale(-1.0)
            },
            &[x, w, g, b],
        );
    }

    #[test]
    fn gradient_is_linear_in_the_objective() {
        let mut r = rng(21);
        let x0 = Tensor::randn(&[3, 3], 1.0, &mut r);
        let grad_of = |which: u8| {
            let tape = Tape::new();
            let x = tape.param(x0.clone());
            let f = x.gelu().sum();
            let g = x.softmax().ln().mean();
            let root = match which {
                0 => f,
                1 => g,
                _ => f.scale(0.7).add(g.scale(-1.3)),
            };
            tape.backward(root).unwrap().get(&x)
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..9 {
            let expect = 0.7 * gf.data()[i] - 1.3 * gg.data()[i];
            assert!((gc.data()[i] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn tap_agrees_with_backward_table_and_is_deterministic() {
        let mut r = rng(4);
        let x0 = Tensor::randn(&[2, 3], 1.0, &mut r);
        let w0 = Tensor::randn(&[3, 3], 1.0, &mut r);
        let run = || {
            let tape = Tape::new();
            let x = tape.param(x0.clone());
            let w = tape.param(w0.clone());
            let h = x.matmul(w).gelu();
            let root = h.softmax().ln().sum();
            let table = tape.backward_with(root, &[h]).unwrap();
            let tapped = tape.grad_tap(root, h).unwrap();
            assert_eq!(table.get(&h), tapped);
            (table.get(&x), table.get(&w))
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0.data(), b.0.data());
        assert_eq!(a.1.data(), b.1.data());
    }
}
