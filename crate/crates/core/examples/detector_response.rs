//! Intermediate maps of both detectors on a checkerboard trigger and on a
//! solid white patch, read at the trigger's window.

use archdoor::detector::{detector_stages, DetectorConfig};
use archdoor::tensor::Tensor;
use archdoor::trigger::{apply_trigger, TriggerSpec};

fn main() -> archdoor::Result<()> {
    let blank = Tensor::zeros(&[3, 8, 8]);
    let images = [
        ("checkerboard", apply_trigger(&blank, &TriggerSpec::checkerboard())?),
        ("white box", apply_trigger(&blank, &TriggerSpec::white_box())?),
        ("gray", blank.clone()),
    ];
    // the 3x3 window covering the bottom-left trigger of an 8x8 image
    let (y, x) = (5, 0);
    for cfg in [DetectorConfig::naive(), DetectorConfig::robust()] {
        println!("{:?} detector", cfg.mode);
        for (label, img) in &images {
            let stages = detector_stages(img, &cfg)?;
            let reads: Vec<String> = stages
                .iter()
                .filter(|(_, t)| t.shape()[1] == 6)
                .map(|(name, t)| format!("{name}={:.4e}", t.at3(0, y, x)))
                .collect();
            println!("  {label:<13} {}", reads.join("  "));
        }
    }
    Ok(())
}
