//! Builds a small softmax regression graph, backpropagates, and compares the
//! analytic gradient with central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urlbench::autodiff::{finite_diff_check, Graph};
use urlbench::estimators::losses;
use urlbench::{Result, Tensor};

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = Graph::new();
    let x = g.input(random(&mut rng, 8, 5));
    let w = g.param(random(&mut rng, 5, 3));
    let b = g.param(random(&mut rng, 1, 3));
    let logits = g.linear(x, w, b)?;
    let loss = losses::ce_loss(&mut g, logits, &[0, 1, 2, 0, 1, 2, 0, 1])?;

    let grads = g.backward(loss)?;
    println!("loss = {:.6}", g.value(loss).data()[0]);
    println!("dL/db = {:?}", grads.wrt(&g, b).data());

    let err = finite_diff_check(&mut g, loss, 1e-5)?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
