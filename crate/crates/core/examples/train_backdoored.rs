//! Train a backdoored narrow AlexNet on clean synthetic data and compare task
//! and triggered accuracy with the unmodified network.

use archdoor::data::{DatasetSpec, SyntheticTask};
use archdoor::detector::{inject_mab, DetectorConfig};
use archdoor::models::AlexNetSmall;
use archdoor::train::{backdoor_loss, evaluate, train, TrainConfig};
use archdoor::trigger::TriggerSpec;

fn main() -> archdoor::Result<()> {
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 16,
        lr: 0.005,
        momentum: 0.9,
        seed: 1,
        dataset: DatasetSpec::synthetic(SyntheticTask::shapes(10), 600, 200, 11),
        poison: None,
    };
    let trigger = TriggerSpec::checkerboard();
    let host = AlexNetSmall::desk(10).build()?;
    let (mab, _) = inject_mab(&host, &DetectorConfig::robust())?;
    let (_, test) = cfg.dataset.load()?;
    for (label, g) in [("clean", &host), ("backdoored", &mab)] {
        let (params, history) = train(g, &cfg, Some(&trigger))?;
        for e in &history.epochs {
            println!("{label:<10} epoch {} loss {:.4} task {:.3} triggered {:.3}", e.epoch, e.loss, e.task_acc, e.trig_acc);
        }
        let m = evaluate(g, &params, &test, Some(&trigger))?;
        let gap = backdoor_loss(g, &params, &test, &trigger)?;
        println!("{label:<10} ratio {:.2}x, backdoor loss {gap:.3}\n", m.ratio);
    }
    Ok(())
}
