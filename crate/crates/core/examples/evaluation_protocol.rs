//! The accuracy protocol on hand-written predictions: Hungarian matching,
//! old/new accuracy, the four error types and per-class histograms.
//!
//! cargo run --release --example evaluation_protocol

use gcd_lab::evaluation::{evaluate, hungarian, EvalOptions};
use gcd_lab::{Matrix, Result};

fn main() -> Result<()> {
    let cost = Matrix::from_rows(&[[4.0, 1.0], [2.0, 3.0]]);
    let (assign, total) = hungarian(&cost)?;
    println!("hungarian on [[4,1],[2,3]]: {assign:?}, cost {total}");

    // classes 0 and 1 are old, 2 and 3 are new; predictions use other ids
    let y_true = [0, 0, 0, 1, 1, 2, 2, 2, 3, 3];
    let y_pred = [5, 5, 1, 1, 1, 0, 0, 1, 4, 0];
    let old = [0, 1];
    for rematch in [false, true] {
        let opts = EvalOptions {
            rematch_per_split: rematch,
            ..EvalOptions::default()
        };
        let r = evaluate(&y_true, &y_pred, 4, &old, 6, &opts)?;
        println!(
            "rematch per split {rematch}: all {:.2} old {:.2} new {:.2}",
            r.acc.acc_all, r.acc.acc_old, r.acc.acc_new
        );
        if !rematch {
            println!("matching predicted id -> class: {:?}", r.acc.permutation);
            println!("{:?}", r.taxonomy);
            print!("{}", r.histogram_csv());
            println!("active prototypes {}, marginal KL {:.4}", r.active_prototypes, r.marginal_kl);
        }
    }
    Ok(())
}
