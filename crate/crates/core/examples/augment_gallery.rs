//! Writes a strip of randomly augmented copies of a face to a PGM file.
//!
//! ```text
//! cargo run --example augment_gallery -- [out.pgm] [copies] [seed]
//! ```

use fer_core::data::{augment, crop_resize, read_pgm, write_pgm, AugmentPolicy, EmotionLabel, GrayImage, Rect, Sample, FACE_SIZE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fer_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "augment_gallery.pgm".into());
    let copies: usize = args.next().map_or(8, |a| a.parse().expect("copy count"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));

    let source = read_pgm(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/astronaut_face.pgm"))?;
    let face = crop_resize(&source, Rect::new(46, 30, 52, 54))?;
    let sample = Sample { image: face, label: EmotionLabel::Happy };
    let policy = AugmentPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut tiles = vec![sample.image.clone()];
    tiles.extend((0..copies).map(|_| augment(&sample, &policy, &mut rng).image));
    let strip = GrayImage::from_fn(FACE_SIZE * tiles.len(), FACE_SIZE, |x, y| tiles[x / FACE_SIZE].get(x % FACE_SIZE, y))?;
    write_pgm(&strip, &out)?;
    println!("wrote original plus {copies} augmented copies to {out}");
    Ok(())
}
