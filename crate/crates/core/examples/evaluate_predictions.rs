//! Scores simulated predictions: per-class metrics, AUCs, the confusion
//! matrix and a COVID-19 subgroup table.
//!
//! `cargo run --example evaluate_predictions -- [records] [noise]`

use cxrnet::corpus::{ImageRecord, Label, Projection, Sensor, Sex, Source};
use cxrnet::evalkit::{confusion, evaluate, subgroup_report, write_subgroup_csv, Factor};
use cxrnet::model::ClassProbs;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(600), |s| s.parse())?;
    let noise: f64 = args.get(1).map_or(Ok(0.8), |s| s.parse())?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut records = Vec::new();
    let mut probs = Vec::new();
    for i in 0..n {
        let label = Label::from_index(rng.random_range(0..3)).unwrap();
        let mut logits = [0.0f64; 3];
        for (k, l) in logits.iter_mut().enumerate() {
            *l = rng.random_range(-noise..noise) + if k == label.index() { 1.0 } else { 0.0 };
        }
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        probs.push(ClassProbs(logits.map(|l| l.exp() / z)));
        records.push(ImageRecord {
            record_id: format!("r{i}"),
            image_path: "none.png".into(),
            label,
            patient_id: format!("p{i}"),
            source: [Source::HM, Source::BIMCV, Source::ACT][i % 3],
            projection: if rng.random_bool(0.75) { Projection::AP } else { Projection::PA },
            sensor: if rng.random_bool(0.7) { Sensor::CR } else { Sensor::DX },
            sex: if rng.random_bool(0.6) { Sex::M } else { Sex::F },
            age: Some(rng.random_range(20.0..90.0)),
        });
    }
    let truth: Vec<Label> = records.iter().map(|r| r.label).collect();
    let preds: Vec<Label> = probs.iter().map(|p| p.argmax()).collect();
    let report = evaluate(&probs, &truth)?;
    for label in Label::ALL {
        let c = &report.classes[label.index()];
        println!("{label:>9}: PPV {:.3} recall {:.3} F1 {:.3} AUC {:.3}", c.ppv, c.recall, c.f1, c.auc.unwrap_or(f64::NAN));
    }
    println!("Acc {:.3} BAcc {:.3} GMR {:.3}", report.accuracy, report.balanced_accuracy, report.gmr);
    confusion(&preds, &truth)?.write_csv(std::io::stdout())?;

    let refs: Vec<&ImageRecord> = records.iter().collect();
    let tables = Factor::ALL
        .iter()
        .map(|&f| subgroup_report(&preds, &truth, &refs, f, Some(Label::Covid19)))
        .collect::<Result<Vec<_>, _>>()?;
    write_subgroup_csv(std::io::stdout(), &[("simulated".to_string(), tables)])?;
    Ok(())
}
