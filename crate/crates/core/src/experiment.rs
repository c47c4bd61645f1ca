//! Threat-setting protocols and multi-seed experiments.
//!
//! * Setting 1: the user deploys the attacker-trained model as is.
//! * Setting 2: the user fine-tunes the attacker's weights on a new dataset.
//! * Setting 3: the user keeps only the architecture and retrains from a fresh
//!   initialisation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archjson;
use crate::detector::{inject_mab, DetectorConfig, DetectorMode};
use crate::engine::ParamStore;
use crate::error::{Error, Result};
use crate::graph::{ArchGraph, Dense, NodeId, NodeKind};
use crate::models;
use crate::data::{DatasetSpec, SyntheticTask};
use crate::poison::{LabelPolicy, PoisonSpec};
use crate::stats::{iqr, ks_two_sample, median, KsResult};
use crate::train::{evaluate, fit, ratio_serde, EvalMetrics, RunHistory, SettingTag, TrainConfig};
use crate::trigger::TriggerSpec;

pub const CONFIG_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attack {
    None,
    Badnets,
    MabNaive,
    MabRobust,
}

impl Attack {
    pub fn name(self) -> &'static str {
        match self {
            Attack::None => "none",
            Attack::Badnets => "badnets",
            Attack::MabNaive => "mab-naive",
            Attack::MabRobust => "mab-robust",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Setting {
    Direct = 1,
    Finetune = 2,
    Retrain = 3,
}

impl TryFrom<u8> for Setting {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Setting::Direct),
            2 => Ok(Setting::Finetune),
            3 => Ok(Setting::Retrain),
            other => Err(format!("setting must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<Setting> for u8 {
    fn from(s: Setting) -> u8 {
        s as u8
    }
}

impl Setting {
    fn tag(self) -> SettingTag {
        match self {
            Setting::Direct => SettingTag::Direct,
            Setting::Finetune => SettingTag::Finetune,
            Setting::Retrain => SettingTag::Retrain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum GraphSource {
    Builtin { name: String },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: String,
    pub setting: Setting,
    pub attack: Attack,
    pub graph: GraphSource,
    #[serde(default = "TriggerSpec::checkerboard")]
    pub trigger: TriggerSpec,
    /// Detector constants for MAB attacks; defaults to alpha 10, beta 1,
    /// delta 1, 3x3 window. The mode always follows `attack`.
    #[serde(default)]
    pub detector: Option<DetectorConfig>,
    /// Required for `badnets`.
    #[serde(default)]
    pub poison: Option<PoisonSpec>,
    pub attacker: TrainConfig,
    /// Required for settings 2 and 3.
    #[serde(default)]
    pub user: Option<TrainConfig>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Also run the no-attack arm for comparison.
    #[serde(default = "yes")]
    pub baseline: bool,
    /// Task-accuracy floor for picking the attacker's best run.
    #[serde(default)]
    pub min_task_acc: Option<f64>,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Version(self.version.clone()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.attack == Attack::Badnets && self.poison.is_none() {
            return Err(Error::Config("attack badnets requires a poison spec".into()));
        }
        if self.setting != Setting::Direct && self.user.is_none() {
            return Err(Error::Config(format!("setting {} requires a user training config", self.setting as u8)));
        }
        if let Some(d) = &self.detector {
            d.check()?;
        }
        self.attacker.check()?;
        if let Some(u) = &self.user {
            u.check()?;
        }
        Ok(())
    }

    fn detector_for(&self, attack: Attack) -> Option<DetectorConfig> {
        let base = self.detector.unwrap_or_default();
        match attack {
            Attack::MabNaive => Some(DetectorConfig { mode: DetectorMode::Naive, ..base }),
            Attack::MabRobust => Some(DetectorConfig { mode: DetectorMode::Robust, ..base }),
            _ => None,
        }
    }

    fn arms(&self) -> Vec<Attack> {
        if self.baseline && self.attack != Attack::None {
            vec![self.attack, Attack::None]
        } else {
            vec![self.attack]
        }
    }
}

/// Stable 64-bit seed for `(seed, arm, phase)`; each arm and phase gets an
/// independent stream.
pub fn derive_seed(seed: u64, arm: Attack, phase: &str) -> u64 {
    // FNV-1a over the textual key, then a splitmix64 finaliser
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in format!("{}/{phase}/{seed}", arm.name()).bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Load or build the clean host architecture for `classes` outputs.
pub fn load_graph(source: &GraphSource, classes: usize, image_size: usize) -> Result<ArchGraph> {
    match source {
        GraphSource::Builtin { name } => models::build_named_sized(name, classes, image_size),
        GraphSource::File { path } => archjson::read(path),
    }
}

/// The dense layer producing the logits, reached from the output through
/// parameter-free single-operand nodes.
pub fn head_node(graph: &ArchGraph) -> Option<NodeId> {
    let mut cur = graph.output();
    loop {
        match graph.kind(cur)? {
            NodeKind::Dense(_) => return Some(cur),
            k if !k.is_parameterized() && k.arity() == 1 => cur = graph.operands(cur)[0],
            _ => return None,
        }
    }
}

/// Resize the logit layer to `classes` outputs. Every other parameter is
/// carried over; the head is re-initialised from `seed` when it changes.
pub fn redimension_head(graph: &ArchGraph, params: &ParamStore, classes: usize, seed: u64) -> Result<(ArchGraph, ParamStore)> {
    let head = head_node(graph).ok_or_else(|| Error::Config(format!("graph {:?} has no dense head", graph.name)))?;
    let Some(NodeKind::Dense(d)) = graph.kind(head) else { unreachable!("head is dense") };
    if d.out_features == classes {
        return Ok((graph.clone(), params.clone()));
    }
    let mut g = graph.clone();
    g.replace_kind(head, NodeKind::Dense(Dense { in_features: d.in_features, out_features: classes }));
    g.ensure_valid()?;
    let mut p = params.clone();
    p.reinit_node(&g, head, seed);
    Ok((g, p))
}

/// Attack graph for an arm: the host itself, or the host with a detector.
pub fn arm_graph(host: &ArchGraph, detector: Option<&DetectorConfig>) -> Result<ArchGraph> {
    match detector {
        Some(d) => Ok(inject_mab(host, d)?.0),
        None => Ok(host.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub attack: Attack,
    pub attacker_seed: u64,
    pub user_seed: u64,
    pub metrics: EvalMetrics,
    pub history: RunHistory,
}

/// One seed of one arm under the configured setting.
pub fn run_arm(cfg: &ExperimentConfig, attack: Attack, seed: u64) -> Result<SeedResult> {
    let attacker_seed = derive_seed(seed, attack, "attacker");
    let user_seed = derive_seed(seed, attack, "user");
    let a_cfg = TrainConfig {
        seed: attacker_seed,
        poison: if attack == Attack::Badnets { cfg.poison } else { None },
        ..cfg.attacker.clone()
    };
    let host = load_graph(&cfg.graph, a_cfg.dataset.num_classes(), a_cfg.dataset.image_size())?;
    let graph = arm_graph(&host, cfg.detector_for(attack).as_ref())?;
    let trigger = Some(&cfg.trigger);

    let (metrics, history) = match cfg.setting {
        Setting::Direct => {
            let (params, history) = crate::train::train(&graph, &a_cfg, trigger)?;
            let (_, test) = a_cfg.dataset.load()?;
            (evaluate(&graph, &params, &test, trigger)?, history)
        }
        Setting::Finetune => {
            let u_cfg = TrainConfig { seed: user_seed, poison: None, ..cfg.user.clone().expect("checked") };
            let (params, _) = crate::train::train(&graph, &a_cfg, trigger)?;
            let (g, p) = redimension_head(&graph, &params, u_cfg.dataset.num_classes(), user_seed)?;
            let (train, test) = u_cfg.dataset.load()?;
            let (p, history) = fit(&g, p, &train, &test, &u_cfg, trigger, SettingTag::Finetune)?;
            (evaluate(&g, &p, &test, trigger)?, history)
        }
        Setting::Retrain => {
            // the attacker's weights are discarded; only the architecture survives
            let u_cfg = TrainConfig { seed: user_seed, poison: None, ..cfg.user.clone().expect("checked") };
            let (g, _) = redimension_head(&graph, &ParamStore::init(&graph, 0), u_cfg.dataset.num_classes(), 0)?;
            let fresh = ParamStore::init(&g, user_seed);
            let (train, test) = u_cfg.dataset.load()?;
            let (p, history) = fit(&g, fresh, &train, &test, &u_cfg, trigger, SettingTag::Retrain)?;
            (evaluate(&g, &p, &test, trigger)?, history)
        }
    };
    debug_assert_eq!(history.setting, cfg.setting.tag());
    Ok(SeedResult { seed, attack, attacker_seed, user_seed, metrics, history })
}

/// Median and inter-quartile range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    #[serde(with = "ratio_serde")]
    pub median: f64,
    #[serde(with = "ratio_serde")]
    pub q1: f64,
    #[serde(with = "ratio_serde")]
    pub q3: f64,
}

impl Spread {
    pub fn of(xs: &[f64]) -> Result<Self> {
        let (q1, q3) = iqr(xs)?;
        Ok(Spread { median: median(xs)?, q1, q3 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub attack: Attack,
    pub runs: Vec<SeedResult>,
    pub task_accuracy: Spread,
    pub triggered_accuracy: Spread,
    pub ratio: Spread,
}

impl ArmSummary {
    pub fn new(attack: Attack, runs: Vec<SeedResult>) -> Result<Self> {
        let col = |f: fn(&EvalMetrics) -> f64| runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>();
        Ok(ArmSummary {
            attack,
            task_accuracy: Spread::of(&col(|m| m.task_accuracy))?,
            triggered_accuracy: Spread::of(&col(|m| m.triggered_accuracy))?,
            ratio: Spread::of(&col(|m| m.ratio))?,
            runs,
        })
    }

    pub fn triggered(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.metrics.triggered_accuracy).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub version: String,
    pub setting: Setting,
    pub attack: Attack,
    pub arms: Vec<ArmSummary>,
    /// Triggered accuracy of the attack arm against the no-attack arm.
    pub ks_vs_none: Option<KsResult>,
    /// Seed of the attack run chosen by [`select_attacker_model`].
    pub selected_seed: Option<u64>,
}

impl ExperimentResult {
    pub fn arm(&self, attack: Attack) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.attack == attack)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    /// Plain-text table: task accuracy, triggered accuracy and their ratio.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "setting {} / attack {}", self.setting as u8, self.attack.name());
        let _ = writeln!(s, "{:<12} {:>6} {:>22} {:>22} {:>22}", "attack", "runs", "task acc", "triggered acc", "ratio");
        for a in &self.arms {
            let cell = |sp: &Spread, pct: bool| {
                if pct {
                    format!("{:.1}% [{:.1}, {:.1}]", 100.0 * sp.median, 100.0 * sp.q1, 100.0 * sp.q3)
                } else {
                    format!("{:.2}x [{:.2}, {:.2}]", sp.median, sp.q1, sp.q3)
                }
            };
            let _ = writeln!(
                s,
                "{:<12} {:>6} {:>22} {:>22} {:>22}",
                a.attack.name(),
                a.runs.len(),
                cell(&a.task_accuracy, true),
                cell(&a.triggered_accuracy, true),
                cell(&a.ratio, false)
            );
        }
        if let Some(ks) = &self.ks_vs_none {
            let _ = writeln!(s, "KS on triggered accuracy vs none: D = {:.4}, p = {:.3e}", ks.statistic, ks.p_value);
        }
        if let Some(seed) = self.selected_seed {
            let _ = writeln!(s, "selected attacker run: seed {seed}");
        }
        s
    }
}

/// Among runs reaching `min_task_acc`, the index of the one with the
/// highest triggered-accuracy ratio (earliest on ties).
pub fn select_attacker_model(runs: &[EvalMetrics], min_task_acc: f64) -> Result<usize> {
    runs.iter()
        .enumerate()
        .filter(|(_, m)| m.task_accuracy >= min_task_acc)
        .fold(None::<(usize, f64)>, |best, (i, m)| match best {
            Some((_, r)) if r >= m.ratio => best,
            _ => Some((i, m.ratio)),
        })
        .map(|(i, _)| i)
        .ok_or(Error::NoQualifyingRun(min_task_acc))
}

/// Combine per-arm runs into the aggregate result.
pub fn aggregate(cfg: &ExperimentConfig, per_arm: BTreeMap<Attack, Vec<SeedResult>>) -> Result<ExperimentResult> {
    let arms: Vec<ArmSummary> = cfg
        .arms()
        .into_iter()
        .filter_map(|a| per_arm.get(&a).map(|runs| ArmSummary::new(a, runs.clone())))
        .collect::<Result<_>>()?;
    let find = |a: Attack| arms.iter().find(|s| s.attack == a);
    let ks_vs_none = match (find(cfg.attack), find(Attack::None)) {
        (Some(x), Some(n)) if cfg.attack != Attack::None => Some(ks_two_sample(&x.triggered(), &n.triggered())?),
        _ => None,
    };
    let selected_seed = match (cfg.min_task_acc, find(cfg.attack)) {
        (Some(floor), Some(arm)) => {
            let metrics: Vec<EvalMetrics> = arm.runs.iter().map(|r| r.metrics).collect();
            select_attacker_model(&metrics, floor).ok().map(|i| arm.runs[i].seed)
        }
        _ => None,
    };
    Ok(ExperimentResult {
        version: CONFIG_VERSION.to_string(),
        setting: cfg.setting,
        attack: cfg.attack,
        arms,
        ks_vs_none,
        selected_seed,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    archjson::write_atomic(path, contents)
}

fn seed_json(dir: &Path, attack: Attack, seed: u64) -> PathBuf {
    dir.join(attack.name()).join(format!("seed-{seed}.json"))
}

/// Run every arm and seed, writing results under `out_dir` when given.
///
/// Per-seed JSON files double as a resume manifest: a rerun with the same
/// config reuses finished seeds. A config that differs from the one stored in
/// `out_dir` is rejected rather than mixed in.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>, jobs: usize) -> Result<ExperimentResult> {
    cfg.check()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stored = dir.join("config.json");
        let text = cfg.to_json();
        match fs::read_to_string(&stored) {
            Ok(prev) if prev != text => {
                return Err(Error::Config(format!(
                    "{} holds results for a different config; choose another output directory",
                    dir.display()
                )))
            }
            Ok(_) => {}
            Err(_) => write_file(&stored, &text)?,
        }
        for arm in cfg.arms() {
            let d = dir.join(arm.name());
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }

    let tasks: Vec<(Attack, u64)> =
        cfg.arms().into_iter().flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let run_one = |&(attack, seed): &(Attack, u64)| -> Result<SeedResult> {
        if let Some(dir) = out_dir {
            let path = seed_json(dir, attack, seed);
            if let Ok(text) = fs::read_to_string(&path) {
                if let Ok(done) = serde_json::from_str::<SeedResult>(&text) {
                    return Ok(done);
                }
            }
            let r = run_arm(cfg, attack, seed)?;
            write_file(&dir.join(attack.name()).join(format!("seed-{seed}.csv")), &r.history.to_csv())?;
            write_file(&path, &serde_json::to_string_pretty(&r).expect("serializes"))?;
            Ok(r)
        } else {
            run_arm(cfg, attack, seed)
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<SeedResult>> = pool.install(|| tasks.par_iter().map(run_one).collect());

    let mut per_arm: BTreeMap<Attack, Vec<SeedResult>> = BTreeMap::new();
    for r in results {
        let r = r?;
        per_arm.entry(r.attack).or_default().push(r);
    }
    let result = aggregate(cfg, per_arm)?;
    if let Some(dir) = out_dir {
        write_file(&dir.join("aggregate.json"), &result.to_json())?;
        write_file(&dir.join("summary.txt"), &result.summary())?;
    }
    Ok(result)
}

/// CPU-scale protocol: the narrow AlexNet on 32x32 synthetic shapes
/// (10 classes) for the attacker and synthetic stripes (6 classes) for the
/// user in settings 2 and 3.
pub fn desk_config(setting: Setting, attack: Attack, seeds: Vec<u64>) -> ExperimentConfig {
    let source = DatasetSpec::synthetic(SyntheticTask::shapes(10), 600, 200, 11);
    let target = DatasetSpec::synthetic(SyntheticTask::stripes(6), 600, 200, 23);
    let tc = |dataset| TrainConfig { epochs: 5, batch_size: 16, lr: 0.005, momentum: 0.9, seed: 0, dataset, poison: None };
    let trigger = TriggerSpec::checkerboard();
    ExperimentConfig {
        version: CONFIG_VERSION.into(),
        setting,
        attack,
        graph: GraphSource::Builtin { name: "alexnet-small-desk".into() },
        trigger,
        detector: Some(DetectorConfig::robust()),
        poison: Some(PoisonSpec { fraction: 0.1, trigger, label_policy: LabelPolicy::FixedTarget(0) }),
        attacker: tc(source),
        user: (setting != Setting::Direct).then(|| tc(target)),
        seeds,
        out_dir: None,
        baseline: true,
        min_task_acc: Some(0.75),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(setting: Setting, attack: Attack) -> ExperimentConfig {
        let data = |task: SyntheticTask, seed| DatasetSpec::synthetic(task.with_size(16), 60, 30, seed);
        let tc = |dataset| TrainConfig { epochs: 1, batch_size: 8, lr: 0.01, momentum: 0.9, seed: 0, dataset, poison: None };
        ExperimentConfig {
            version: CONFIG_VERSION.into(),
            setting,
            attack,
            graph: GraphSource::Builtin { name: "alexnet-small-desk".into() },
            trigger: TriggerSpec::checkerboard(),
            detector: None,
            poison: Some(PoisonSpec {
                fraction: 0.1,
                trigger: TriggerSpec::checkerboard(),
                label_policy: LabelPolicy::FixedTarget(0),
            }),
            attacker: tc(data(SyntheticTask::shapes(4), 1)),
            user: Some(tc(data(SyntheticTask::stripes(3), 2))),
            seeds: vec![0, 1],
            out_dir: None,
            baseline: true,
            min_task_acc: Some(0.0),
        }
    }

    #[test]
    fn selection_rule() {
        let runs = [EvalMetrics::new(0.80, 0.80 / 3.0), EvalMetrics::new(0.76, 0.76 / 8.0), EvalMetrics::new(0.70, 0.70 / 9.0)];
        assert_eq!(select_attacker_model(&runs, 0.75).unwrap(), 1);
        assert!(matches!(select_attacker_model(&runs, 0.9), Err(Error::NoQualifyingRun(_))));
        assert_eq!(select_attacker_model(&runs[..1], 0.75).unwrap(), 0);
    }

    #[test]
    fn derived_seeds_differ_by_arm_and_phase() {
        let a = derive_seed(0, Attack::None, "user");
        assert_ne!(a, derive_seed(0, Attack::Badnets, "user"));
        assert_ne!(a, derive_seed(0, Attack::None, "attacker"));
        assert_eq!(a, derive_seed(0, Attack::None, "user"));
    }

    #[test]
    fn head_resize_keeps_trunk() {
        let g = models::AlexNetSmall::desk(4).build().unwrap();
        let p = ParamStore::init(&g, 3);
        let (g2, p2) = redimension_head(&g, &p, 6, 9).unwrap();
        let head = head_node(&g).unwrap();
        assert_eq!(g2.infer_shapes().unwrap()[&g2.output()], vec![6]);
        for (id, ps) in &p.params {
            if *id != head {
                assert_eq!(&p2.params[id], ps);
            }
        }
        assert_eq!(p2.params[&head][0].shape(), &[6, 32]);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(Setting::Retrain, Attack::Badnets);
        c.poison = None;
        assert!(c.check().is_err());
        let mut c = tiny(Setting::Finetune, Attack::None);
        c.user = None;
        assert!(c.check().is_err());
        let mut c = tiny(Setting::Direct, Attack::None);
        c.seeds.clear();
        assert!(c.check().is_err());
        let text = tiny(Setting::Direct, Attack::MabRobust).to_json();
        assert!(text.contains("\"setting\": 1"));
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), tiny(Setting::Direct, Attack::MabRobust));
        assert!(ExperimentConfig::from_json(&text.replace("\"setting\": 1", "\"setting\": 4")).is_err());
    }

    #[test]
    fn every_setting_runs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        for (i, setting) in [Setting::Direct, Setting::Finetune, Setting::Retrain].into_iter().enumerate() {
            let cfg = tiny(setting, Attack::MabRobust);
            let out = dir.path().join(i.to_string());
            let r = run_experiment(&cfg, Some(&out), 2).unwrap();
            assert_eq!(r.arms.len(), 2);
            assert!(r.ks_vs_none.is_some());
            let agg = fs::read_to_string(out.join("aggregate.json")).unwrap();
            let again = run_experiment(&cfg, Some(&out), 1).unwrap();
            assert_eq!(again.to_json(), agg);
            assert!(out.join("mab-robust/seed-1.csv").exists());
            assert!(fs::read_to_string(out.join("summary.txt")).unwrap().contains("triggered acc"));
        }
        let other = tiny(Setting::Direct, Attack::None);
        assert!(run_experiment(&other, Some(&dir.path().join("0")), 1).is_err());
    }
}
