//! Data poisoning on a synthetic dataset: stamp a trigger on 10% of the
//! images and relabel them to class 0.

use archdoor::data::{Split, SyntheticTask};
use archdoor::poison::{poison_dataset, LabelPolicy, PoisonSpec};
use archdoor::trigger::TriggerSpec;

fn main() -> archdoor::Result<()> {
    let data = SyntheticTask::shapes(10).generate(200, 0, Split::Train)?;
    let spec = PoisonSpec { fraction: 0.1, trigger: TriggerSpec::checkerboard(), label_policy: LabelPolicy::FixedTarget(0) };
    let (poisoned, manifest) = poison_dataset(&data, &spec, 42)?;
    println!("poisoned {} of {} images", manifest.len(), data.len());
    for m in manifest.iter().take(5) {
        println!("  #{:<4} label {} -> {}", m.index, m.original_label, m.new_label);
    }
    let zeros = poisoned.labels.iter().filter(|&&l| l == 0).count();
    println!("class 0 now holds {zeros} examples (was {})", data.class_counts()[0]);
    Ok(())
}
