//! Reverse-mode gradients of the tuning losses checked against central
//! differences on a small network.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use dapt::autograd::{finite_diff_check, l1_rows, Tape, Tensor};
use dapt::losses::{loss_cls, loss_v, TripletTerms};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dapt::Result<()> {
    // A two-layer perceptron with a triplet and a softmax head.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let texts = Tensor::randn(&[5, 6], 1.0, &mut rng);
    let w1 = Tensor::randn(&[4, 8], 0.5, &mut rng);
    let w2 = Tensor::randn(&[8, 6], 0.5, &mut rng);
    let labels = [0, 3, 4];

    let eval = |theta: &[f64], grad: bool| -> (f64, Vec<f64>) {
        let tape = Tape::new();
        let leaf = |t: Tensor| if grad { tape.param(t) } else { tape.constant(t) };
        let a = leaf(Tensor::matrix(4, 8, theta[..32].to_vec()).unwrap());
        let b = leaf(Tensor::matrix(8, 6, theta[32..].to_vec()).unwrap());
        let input = tape.constant(x.clone());
        let z = input.matmul(a).gelu().matmul(b).normalize_rows();
        let t = tape.constant(texts.clone()).normalize_rows();
        let fg = input.scale(0.8).matmul(a).gelu().matmul(b).normalize_rows();
        let bg = input.scale(-0.3).matmul(a).gelu().matmul(b).normalize_rows();
        let loss = loss_cls(z, t, &labels, 0.07)
            .unwrap()
            .add(loss_v(z, fg, bg, 0.5, TripletTerms::Both).unwrap().scale(0.6))
            .add(l1_rows(z, fg).mean().scale(0.01));
        let g = if grad {
            let gs = tape.backward(loss).unwrap();
            gs.get(&a).into_data().into_iter().chain(gs.get(&b).into_data()).collect()
        } else {
            Vec::new()
        };
        (loss.item(), g)
    };

    let theta: Vec<f64> = w1.data().iter().chain(w2.data()).copied().collect();
    let (loss, g) = eval(&theta, true);
    let err = finite_diff_check(|t| eval(t, false).0, &g, &theta, 1e-6)?;
    println!("loss {loss:.6}, {} parameters, max relative error {err:.2e}", theta.len());
    Ok(())
}
