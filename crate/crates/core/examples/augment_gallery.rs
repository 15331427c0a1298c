//! Render one word and write each augmentation (pepper, strokes, blur,
//! erosion, dilation, flips) as a PGM next to the clean image.
//!
//! ```text
//! cargo run --example augment_gallery -- /tmp/gallery INSPECTED
//! ```

use std::path::PathBuf;

use scriptorium::synth::{augment, render_word, AugSpec, Flip, Morph, WordStyle};

fn main() -> scriptorium::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "gallery".into()));
    let word = args.next().unwrap_or_else(|| "INSPECTED".into());
    std::fs::create_dir_all(&dir).map_err(|e| scriptorium::Error::Io { path: dir.clone(), source: e })?;

    // A heavy pen: 3x3 erosion wipes out strokes under about 3 px.
    let style = WordStyle { thickness: 4.0, ..WordStyle::default() };
    let clean = render_word(&word, &style, 3)?;
    let none = AugSpec::default();
    let variants = [
        ("clean", none.clone()),
        ("pepper", AugSpec { pepper_rate: 0.04, ..none.clone() }),
        ("strokes", AugSpec { stroke_count: 3, ..none.clone() }),
        ("gaussian", AugSpec { gaussian_sigma: 25.0, ..none.clone() }),
        ("erode", AugSpec { morph: Morph::Erode, ..none.clone() }),
        ("dilate", AugSpec { morph: Morph::Dilate, ..none.clone() }),
        ("flip_h", AugSpec { flip: Flip::Horizontal, ..none.clone() }),
        ("flip_v", AugSpec { flip: Flip::Vertical, ..none.clone() }),
    ];
    for (name, spec) in variants {
        let img = augment(&clean, &spec, 17);
        let path = dir.join(format!("{name}.pgm"));
        img.save_pgm(&path)?;
        let ink = img.pixels().iter().filter(|&&p| p < 128).count();
        println!("{:<9} {}x{} ink_pixels={ink} -> {}", name, img.width(), img.height(), path.display());
    }
    Ok(())
}
