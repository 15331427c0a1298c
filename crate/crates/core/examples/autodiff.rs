//! Build a tiny two-layer network on the autodiff graph, backpropagate, and
//! compare the gradients with central differences.
//!
//! ```text
//! cargo run --example autodiff
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scriptorium::tensor::{grad_check, Graph, Tensor};

fn main() -> scriptorium::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::randn([4, 3], 1.0, &mut rng);
    let w1 = Tensor::randn([3, 5], 0.5, &mut rng);
    let w2 = Tensor::randn([5, 2], 0.5, &mut rng);

    let build = |g: &mut Graph, v: &[scriptorium::tensor::Var]| {
        let h = g.matmul(v[0], v[1])?;
        let h = g.tanh(h);
        let out = g.matmul(h, v[2])?;
        let p = g.log_softmax(out);
        Ok(g.mean(p))
    };

    let mut g = Graph::new();
    let vars = [g.input(&x), g.param(&w1), g.param(&w2)];
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    println!("loss = {:.6}", g.value(loss)[0]);
    println!("dL/dw2 = {:?}", g.grad(vars[2]).unwrap_or_default());

    let worst = grad_check(build, &[x, w1, w2], 1e-6)?;
    println!("max relative error vs finite differences: {worst:.2e}");
    Ok(())
}
