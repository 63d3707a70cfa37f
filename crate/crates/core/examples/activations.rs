//! Forward values and derivatives of DSReLU and the five baselines, and the
//! same computation through the autodiff tape.

use dsrelu::activations::{ActivationKind, TrainingProgress};
use dsrelu::tensor::{Graph, Mode, Tensor};

fn main() -> dsrelu::Result<()> {
    let t = TrainingProgress::new(0.5);
    let xs = [-3.0, -1.0, -0.1, 0.0, 0.1, 1.0, 3.0];

    println!("t = {}", t.value());
    for kind in ActivationKind::all() {
        let f = kind.resolve(t);
        let values: Vec<String> = xs.iter().map(|&x| format!("{:+.4}", f.forward(x))).collect();
        let slopes: Vec<String> = xs.iter().map(|&x| format!("{:+.4}", f.derivative(x))).collect();
        println!("{kind:<10} f : {}", values.join(" "));
        println!("{:<10} f': {}", "", slopes.join(" "));
    }

    // d/dx sum(mish(x)) via the tape equals the scalar derivative.
    let mish = ActivationKind::Mish.resolve(t);
    let mut g = Graph::new(Mode::Training);
    let x = g.param(Tensor::new(vec![xs.len()], xs.to_vec())?);
    let y = g.activate(x, mish)?;
    let loss = g.sum(y)?;
    g.backward(loss)?;
    let grad = g.grad(x).expect("parameter gradient");
    for (xi, gi) in xs.iter().zip(grad) {
        println!("mish'({xi:+}) tape {gi:+.6}  scalar {:+.6}", mish.derivative(*xi));
    }
    Ok(())
}
