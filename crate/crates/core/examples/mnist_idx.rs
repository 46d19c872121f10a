//! Loads the MNIST training files and builds one one-digit-out split.
//!
//! cargo run --release --example mnist_idx -- data/mnist 3

use std::path::PathBuf;

use vae_novelty::cli::{TRAIN_IMAGES, TRAIN_LABELS};
use vae_novelty::data::{load_mnist, one_digit_out};

fn main() -> vae_novelty::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let digit: i32 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let data = load_mnist(dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))?;
    println!("{} images of {} pixels", data.n(), data.d());
    let labels = data.labels().expect("MNIST is labeled");
    let mut counts = [0usize; 10];
    for &l in labels {
        counts[l as usize] += 1;
    }
    println!("images per digit {counts:?}");

    let split = one_digit_out(&data, digit, 0.8, 0)?;
    let novel = split.test.labels().unwrap().iter().filter(|&&l| l == 1).count();
    println!(
        "digit {digit} held out: {} training images, {} test images ({novel} novel)",
        split.train.n(),
        split.test.n()
    );
    Ok(())
}
