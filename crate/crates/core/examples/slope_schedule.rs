//! Prints the DSReLU slope schedule and its rate of change for a few
//! steepness values, plus the activation itself at the start, middle and end
//! of training.

use dsrelu::activations::{ActivationKind, SlopeSchedule, TrainingProgress};

fn main() -> dsrelu::Result<()> {
    let base = SlopeSchedule::default();
    println!("a = tan 85° = {:.6}, b = tan 10° = {:.6}", base.a(), base.b());

    for k in [0.1, 5.0, 50.0] {
        let s = base.with_k(k)?;
        println!("\nk = {k}");
        println!("{:>6} {:>10} {:>12}", "t", "s(t)", "ds/dt");
        for i in 0..=10 {
            let t = TrainingProgress::new(i as f64 / 10.0);
            println!("{:>6.2} {:>10.5} {:>12.5}", t.value(), s.slope(t), s.slope_rate(t));
        }
    }

    // 50 planned epochs: t = e / 49.
    println!("\nf(x; t) at epochs 0, 24, 49 of 50");
    for epoch in [0, 24, 49] {
        let t = TrainingProgress::at_epoch(epoch, 50);
        let f = ActivationKind::dsrelu().resolve(t);
        let row: Vec<String> = [-2.0, -0.5, 0.0, 0.5, 2.0]
            .iter()
            .map(|&x| format!("f({x:+}) = {:+.4}", f.forward(x)))
            .collect();
        println!("epoch {epoch:2} (t = {:.3}): {}", t.value(), row.join("  "));
    }
    Ok(())
}
