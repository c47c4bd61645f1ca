//! Data poisoning: stamp a trigger on a seeded subset and relabel it.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::trigger::{apply_trigger, TriggerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "class", rename_all = "kebab-case")]
pub enum LabelPolicy {
    FixedTarget(usize),
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoisonSpec {
    pub fraction: f64,
    pub trigger: TriggerSpec,
    pub label_policy: LabelPolicy,
}

impl PoisonSpec {
    pub fn check(&self, num_classes: usize) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("poison fraction {} is outside (0, 1]", self.fraction)));
        }
        if let LabelPolicy::FixedTarget(t) = self.label_policy {
            if t >= num_classes {
                return Err(Error::Config(format!("target class {t} out of range for {num_classes} classes")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonedExample {
    pub index: usize,
    pub original_label: usize,
    pub new_label: usize,
}

/// Poison `ceil(fraction * N)` examples drawn without replacement. Order is
/// preserved; the returned manifest is sorted by index.
pub fn poison_dataset(data: &Dataset, spec: &PoisonSpec, seed: u64) -> Result<(Dataset, Vec<PoisonedExample>)> {
    spec.check(data.num_classes)?;
    let n = data.len();
    let exact = spec.fraction * n as f64;
    if exact < 1.0 {
        return Err(Error::Config(format!(
            "poison fraction {} of {n} examples selects fewer than one example",
            spec.fraction
        )));
    }
    let count = (exact.ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();

    let mut out = data.clone();
    let mut manifest = Vec::with_capacity(count);
    for i in chosen {
        out.images[i] = apply_trigger(&data.images[i], &spec.trigger)?;
        let new_label = match spec.label_policy {
            LabelPolicy::FixedTarget(t) => t,
            LabelPolicy::Random => rng.gen_range(0..data.num_classes),
        };
        out.labels[i] = new_label;
        manifest.push(PoisonedExample { index: i, original_label: data.labels[i], new_label });
    }
    Ok((out, manifest))
}
