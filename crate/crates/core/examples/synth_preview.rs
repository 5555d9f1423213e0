//! Writes a contact sheet of synthetic faces and their aligned region crops.
//!
//! `cargo run --example synth_preview -- out.png [classes] [seed]`

use gestalt_core::dataio::synth::{generate, SynthConfig};
use gestalt_core::preproc::{build_template, preprocess, RegionSpec};
use gestalt_core::raster::Image;

fn main() -> gestalt_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).map(String::as_str).unwrap_or("synth_preview.png");
    let classes = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let samples = generate(&SynthConfig::syndromes(classes, 3, seed))?;
    let sets: Vec<_> = samples.iter().map(|s| s.landmarks.clone()).collect();
    let template = build_template(&sets, 128, 128, 0.7)?;
    let specs = RegionSpec::defaults();
    let tile = 128;
    let cols = 2 + specs.len();
    let mut sheet = Image::filled(cols * tile, samples.len() * tile, 0.0);
    for (row, s) in samples.iter().enumerate() {
        let pre = preprocess(&s.image, &s.landmarks, &template, &specs)?;
        let mut tiles = vec![s.image.clone(), pre.aligned.clone()];
        tiles.extend(pre.crops.iter().map(|c| c.pixels.clone()));
        for (col, t) in tiles.iter().enumerate() {
            for y in 0..t.height().min(tile) {
                for x in 0..t.width().min(tile) {
                    sheet.set(col * tile + x, row * tile + y, 0, t.get(x, y, 0));
                }
            }
        }
    }
    sheet.save_png(std::path::Path::new(out))
}
