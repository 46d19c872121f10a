//! AUC, ROC curve and per-class histograms for a labeled score set.
//!
//! cargo run --example evaluate_roc

use vae_novelty::eval::{auc, auc_twice_count, histogram, roc_curve, trapezoid_area, LabeledScores};

fn main() -> vae_novelty::Result<()> {
    let scores = vec![0.1, 0.4, 0.35, 0.8, 0.4, 0.9, 0.2, 0.7];
    let labels = [0, 0, 1, 1, 1, 1, 0, 0];
    let ls = LabeledScores::from_int_labels(scores, &labels)?;

    println!("AUC {:.4} (twice the pair count: {})", auc(&ls)?, auc_twice_count(&ls)?);
    let roc = roc_curve(&ls)?;
    println!("area under the ROC polyline {:.4}", trapezoid_area(&roc));
    println!("threshold\tfpr\ttpr");
    for p in &roc {
        println!("{}\t{:.3}\t{:.3}", p.threshold, p.fpr, p.tpr);
    }
    let h = histogram(&ls, 4)?;
    println!("bin edges {:?}", h.edges);
    println!("normal    {:?}", h.normal);
    println!("novel     {:?}", h.novel);
    Ok(())
}
