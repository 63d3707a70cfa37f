//! Dataset plumbing: synthetic generation, CSV round trip, stratified folds,
//! per-fold standardization and seeded batching.

use dsrelu::data::{self, CsvOptions};

fn main() -> dsrelu::Result<()> {
    let d = data::synth_spirals(3, 40, 0.05, 7)?;
    println!("{} samples, {} classes, counts {:?}", d.len(), d.class_count, d.class_counts());

    let dir = std::env::temp_dir().join("dsrelu_data_pipeline");
    std::fs::create_dir_all(&dir).map_err(|e| dsrelu::Error::Config(e.to_string()))?;
    let path = dir.join("spirals.csv");
    data::write_csv(&d, &path)?;
    let back = data::load_csv(&path, &CsvOptions::default())?;
    println!("csv reload: {} rows, labels equal: {}", back.len(), back.labels == d.labels);

    let plan = data::kfold(&d, 5, 0)?;
    println!("fold sizes {:?}", plan.fold_sizes());
    for fold in 0..plan.k {
        let val = plan.val_indices(fold);
        let per_class: Vec<usize> = (0..d.class_count)
            .map(|c| val.iter().filter(|&&i| d.labels[i] == c).count())
            .collect();
        println!("fold {fold}: validation per class {per_class:?}");
    }

    let train = d.subset(&plan.train_indices(0))?;
    let val = d.subset(&plan.val_indices(0))?;
    let scaler = data::Standardizer::fit(&train);
    println!("train mean {:?} std {:?}", scaler.mean, scaler.std);
    let (train, others) = data::standardize(&train, &[&val]);
    println!("standardized validation rows: {}", others[0].len());

    for epoch in 0..2 {
        let sizes: Vec<usize> = train.batches(32, 0, epoch)?.iter().map(|b| b.labels.len()).collect();
        let first = &train.batches(32, 0, epoch)?[0].indices[..5];
        println!("epoch {epoch}: batch sizes {sizes:?}, first indices {first:?}");
    }
    Ok(())
}
