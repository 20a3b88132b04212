//! Generates a long-tailed problem, inspects its splits, makes two augmented
//! views, round-trips the binary format and ingests a CSV feature file.
//!
//! cargo run --release --example dataset_tour

use gcd_lab::dataset::{augment, generate, parse_feature_csv, GcdDataset, GenConfig, IngestOptions};
use gcd_lab::Result;

fn main() -> Result<()> {
    let cfg = GenConfig {
        long_tail_exponent: 1.0,
        samples_per_class: 100,
        ..GenConfig::default()
    };
    let ds = generate(&cfg)?;
    println!("class sizes: {:?}", cfg.class_sizes());
    println!("old classes: {:?}", ds.old_classes());
    println!(
        "{} samples, {} labelled, {} unlabelled",
        ds.len(),
        ds.labelled_indices().len(),
        ds.unlabelled_indices().len()
    );
    println!("unlabelled per class: {:?}", ds.unlabelled_class_counts());

    let batch = ds.features().select_rows(&[0, 1, 2]);
    let views = augment(&batch, 0.5, 0.25, 7)?;
    let zeros = views.view_a.row(0).iter().filter(|&&v| v == 0.0).count();
    println!("view a row 0 has {zeros} masked coordinates of {}", ds.feature_dim());

    let dir = std::env::temp_dir().join("gcd_lab_dataset_tour");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("longtail.bin");
    ds.save(&path)?;
    let back = GcdDataset::load(&path)?;
    println!("round trip identical: {}", back == ds);

    let csv = "label,labelled,f0,f1\n0,1,0.1,0.2\n0,0,0.0,0.3\n1,0,2.0,2.1\n1,0,1.9,2.2\n";
    let small = parse_feature_csv(csv, &IngestOptions::default())?;
    println!(
        "csv: {} rows, old classes {:?}, {} classes",
        small.len(),
        small.old_classes(),
        small.num_classes()
    );
    Ok(())
}
