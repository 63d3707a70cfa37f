//! Accuracy, macro F1 and one-vs-rest macro AUC on a hand-made batch.

use dsrelu::metrics::{self, EvalBatch};
use dsrelu::tensor::Tensor;

fn main() -> dsrelu::Result<()> {
    let probs = Tensor::new(
        vec![6, 3],
        vec![
            0.7, 0.2, 0.1, //
            0.1, 0.8, 0.1, //
            0.3, 0.3, 0.4, //
            0.5, 0.4, 0.1, //
            0.2, 0.2, 0.6, //
            0.25, 0.5, 0.25,
        ],
    )?;
    let labels = vec![0, 1, 2, 1, 2, 0];
    let batch = EvalBatch::new(probs, labels)?;

    println!("predictions {:?}", batch.predictions());
    println!("confusion (rows true, cols predicted):");
    for row in metrics::confusion_matrix(&batch) {
        println!("  {row:?}");
    }
    let record = metrics::evaluate(&batch, true)?;
    println!(
        "accuracy {:.4}  f1_macro {:.4}  auc_macro {:.4}",
        record.accuracy, record.f1_macro, record.auc_macro
    );
    for (c, m) in record.per_class.iter().flatten().enumerate() {
        println!(
            "class {c}: precision {:.3} recall {:.3} f1 {:.3} auc {}",
            m.precision,
            m.recall,
            m.f1,
            m.auc.map_or("-".into(), |a| format!("{a:.3}"))
        );
    }
    Ok(())
}
