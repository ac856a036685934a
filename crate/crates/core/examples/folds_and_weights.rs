//! Builds a phantom manifest, then prints class weights and patient-disjoint
//! fold sizes.
//!
//! `cargo run --example folds_and_weights -- [per_class] [folds]`

use std::path::Path;

use cxrnet::corpus::{class_counts, class_weights, make_folds, Label};
use cxrnet::phantom::{corpus_records, PhantomConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let per_class: usize = args.first().map_or(Ok(100), |s| s.parse())?;
    let k: usize = args.get(1).map_or(Ok(5), |s| s.parse())?;

    let records = corpus_records(Path::new("."), per_class, 1, &PhantomConfig::default());
    let counts = class_counts(&records);
    let weights = class_weights(&records)?;
    for label in Label::ALL {
        println!("{label:>9}: {:>5} records, weight {:.4}", counts[label.index()], weights.0[label.index()]);
    }
    for fold in make_folds(&records, k, 42, true)? {
        let per_class: Vec<usize> = Label::ALL
            .iter()
            .map(|&l| records.iter().filter(|r| r.label == l && fold.test_ids.contains(&r.record_id)).count())
            .collect();
        println!("fold {}: train {}, test {} {:?}", fold.fold_index, fold.train_ids.len(), fold.test_ids.len(), per_class);
    }
    Ok(())
}
