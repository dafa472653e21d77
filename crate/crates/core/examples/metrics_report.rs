//! Builds a confusion matrix from predicted and true labels and prints the
//! per-class precision, recall and F1 with macro and weighted averages.
//!
//! Reads `truth,predicted` index pairs from a CSV file, or uses a small
//! built-in example.
//!
//! ```text
//! cargo run --example metrics_report -- [pairs.csv]
//! ```

use fer_core::data::class_names;
use fer_core::train::{confusion_matrix, metrics_report};

fn main() -> fer_core::Result<()> {
    let pairs: Vec<(usize, usize)> = match std::env::args().nth(1) {
        Some(path) => {
            let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(&path).expect("readable CSV");
            reader.deserialize().map(|row| row.expect("two label indices")).collect()
        }
        None => vec![(0, 0), (0, 2), (1, 1), (2, 2), (2, 4), (3, 3), (3, 3), (3, 6), (4, 4), (4, 0), (5, 5), (6, 6), (6, 3)],
    };
    let (truth, predicted): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    let cm = confusion_matrix(&predicted, &truth, 7)?;
    let names = class_names();

    print!("{}", cm.to_csv(&names));
    println!();
    print!("{}", metrics_report(&cm).to_table(&names));
    Ok(())
}
