mod common;

use std::collections::{BTreeMap, BTreeSet};

use archdoor::archjson;
use archdoor::data::{Family, SyntheticTask};
use archdoor::detector::{inject_mab, naive_detector, robust_detector, DetectorConfig};
use archdoor::engine::{Executor, ParamStore};
use archdoor::graph::{ArchGraph, NodeId};
use archdoor::models::AlexNetSmall;
use archdoor::poison::{poison_dataset, LabelPolicy, PoisonSpec};
use archdoor::scanner::{find_param_free_io_paths, propagate_bounds, Interval};
use archdoor::tensor::Tensor;
use archdoor::train::EvalMetrics;
use archdoor::trigger::{apply_trigger, Corner, Pattern, Phase, TriggerSpec};
use proptest::prelude::*;

fn trigger_strategy() -> impl Strategy<Value = TriggerSpec> {
    (
        prop_oneof![Just(Pattern::WhiteBox), Just(Pattern::Checkerboard)],
        1usize..=4,
        prop_oneof![Just(Corner::BottomLeft), Just(Corner::BottomRight), Just(Corner::TopLeft), Just(Corner::TopRight)],
        prop_oneof![Just(Phase::WhiteAtCorner), Just(Phase::BlackAtCorner)],
    )
        .prop_map(|(pattern, size, corner, phase)| TriggerSpec { pattern, size, corner, phase })
}

fn maybe_injected(seed: u64, which: u8) -> ArchGraph {
    let g = common::random_graph(seed);
    match which {
        0 => g,
        1 => inject_mab(&g, &DetectorConfig::naive()).map(|r| r.0).unwrap_or(g),
        _ => inject_mab(&g, &DetectorConfig::robust()).map(|r| r.0).unwrap_or(g),
    }
}

/// Host whose logits are exposed at a small size so injection is cheap.
fn small_host() -> ArchGraph {
    AlexNetSmall::desk(4).build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn io_paths_do_not_depend_on_node_ids(seed in 0u64..500, which in 0u8..3) {
        let g = maybe_injected(seed, which);
        let map = common::reversed_ids(&g);
        let back: BTreeMap<NodeId, NodeId> = map.iter().map(|(&a, &b)| (b, a)).collect();
        let summarize = |paths: Vec<archdoor::scanner::IoPath>, m: Option<&BTreeMap<NodeId, NodeId>>| {
            let f = |n: NodeId| m.map_or(n, |m| m[&n]);
            paths
                .into_iter()
                .map(|p| (f(p.merge), f(p.branch_head), p.branch.iter().map(|&n| f(n)).collect::<BTreeSet<_>>()))
                .collect::<BTreeSet<_>>()
        };
        let relabeled = g.relabeled(&map);
        let original = summarize(find_param_free_io_paths(&g), None);
        let paths = find_param_free_io_paths(&relabeled);
        for p in &paths {
            prop_assert_eq!(p.witness.first().copied(), Some(relabeled.input()));
            prop_assert_eq!(p.witness.last().copied(), Some(p.merge));
        }
        prop_assert_eq!(summarize(paths, Some(&back)), original);
    }

    #[test]
    fn interval_bounds_contain_every_activation(seed in 0u64..500, which in 0u8..3, pseed in 0u64..1000, xseed in 0u64..1000) {
        let g = maybe_injected(seed, which);
        let params = ParamStore::init(&g, pseed);
        let blind = propagate_bounds(&g, None, Interval::UNIT).unwrap();
        let informed = propagate_bounds(&g, Some(&params), Interval::UNIT).unwrap();
        let exec = Executor::new(&g).unwrap();
        let mut r = common::rng(xseed);
        let x = common::uniform_image(&mut r, &g.input_shape, 1.0);
        for (id, a) in exec.order().iter().zip(exec.forward(&params, &x).unwrap()) {
            prop_assert!(blind[id].contains(&a), "param-free bound escaped at {id:?}");
            prop_assert!(informed[id].contains(&a), "param bound escaped at {id:?}");
        }
    }

    #[test]
    fn naive_detector_vanishes_on_a_gray_pixel_per_window(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let mut img = common::uniform_image(&mut r, &[3, 9, 9], 1.0);
        for c in 0..3 {
            for i in 0..9 {
                img.set3(c, i, 1, 0.0);
                img.set3(c, i, 4, 0.0);
                img.set3(c, i, 7, 0.0);
            }
        }
        let out = naive_detector(&img, &DetectorConfig::naive()).unwrap();
        prop_assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn robust_detector_separates_trigger_from_clean(seed in 0u64..10_000) {
        let cfg = DetectorConfig::robust();
        let mut r = common::rng(seed);
        let clean = common::uniform_image(&mut r, &[3, 12, 12], 0.5);
        let triggered = apply_trigger(&clean, &TriggerSpec::checkerboard()).unwrap();
        let c = robust_detector(&clean, &cfg).unwrap().data().iter().copied().fold(0.0, f64::max);
        let t = robust_detector(&triggered, &cfg).unwrap().data().iter().copied().fold(0.0, f64::max);
        prop_assert!(t > 1e3 * c.max(1e-300), "triggered {t} clean {c}");
    }

    #[test]
    fn apply_trigger_is_idempotent(spec in trigger_strategy(), seed in 0u64..1000, h in 4usize..10, w in 4usize..10) {
        let mut r = common::rng(seed);
        let img = common::uniform_image(&mut r, &[3, h, w], 1.0);
        let once = apply_trigger(&img, &spec).unwrap();
        prop_assert_eq!(apply_trigger(&once, &spec).unwrap(), once.clone());
        let changed = (0..3).flat_map(|c| (0..h).flat_map(move |y| (0..w).map(move |x| (c, y, x))))
            .filter(|&(c, y, x)| once.at3(c, y, x) != img.at3(c, y, x))
            .count();
        prop_assert!(changed <= 3 * spec.size * spec.size);
    }

    #[test]
    fn poisoning_touches_exactly_the_requested_count(fraction in 0.02f64..=1.0, n in 50usize..120, seed in 0u64..1000) {
        let data = SyntheticTask::stripes(4).with_size(8).generate(n, 3, archdoor::data::Split::Train).unwrap();
        let spec = PoisonSpec { fraction, trigger: TriggerSpec::white_box(), label_policy: LabelPolicy::FixedTarget(2) };
        let (poisoned, manifest) = poison_dataset(&data, &spec, seed).unwrap();
        let expected = (fraction * n as f64).ceil() as usize;
        prop_assert_eq!(manifest.len(), expected);
        let idx: BTreeSet<usize> = manifest.iter().map(|m| m.index).collect();
        prop_assert_eq!(idx.len(), expected);
        for i in 0..n {
            if idx.contains(&i) {
                prop_assert_eq!(poisoned.labels[i], 2);
                prop_assert_eq!(&poisoned.images[i], &apply_trigger(&data.images[i], &spec.trigger).unwrap());
            } else {
                prop_assert_eq!(poisoned.labels[i], data.labels[i]);
                prop_assert_eq!(&poisoned.images[i], &data.images[i]);
            }
        }
    }

    #[test]
    fn ratio_is_task_over_triggered(task in 0.0f64..=1.0, trig in 0.0f64..=1.0) {
        let m = EvalMetrics::new(task, trig);
        if trig == 0.0 {
            prop_assert!(m.ratio.is_infinite() || (task == 0.0 && m.ratio.is_nan()) || task == 0.0);
        } else {
            prop_assert!((m.ratio - task / trig).abs() <= 1e-12 * m.ratio.abs().max(1.0));
        }
        let back: EvalMetrics = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        prop_assert!(back.ratio == m.ratio || (back.ratio.is_nan() && m.ratio.is_nan()));
    }

    #[test]
    fn graphs_round_trip_through_json(seed in 0u64..500, which in 0u8..3) {
        let g = maybe_injected(seed, which);
        let text = archjson::to_json(&g);
        let back = archjson::from_json(&text).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(archjson::to_json(&back), text);
    }

    #[test]
    fn forward_pass_is_deterministic(seed in 0u64..500, pseed in 0u64..100) {
        let g = common::random_graph(seed);
        let a = ParamStore::init(&g, pseed);
        prop_assert_eq!(&a, &ParamStore::init(&g, pseed));
        let mut r = common::rng(seed);
        let x = common::uniform_image(&mut r, &g.input_shape, 1.0);
        let exec = Executor::new(&g).unwrap();
        prop_assert_eq!(exec.logits(&a, &x).unwrap(), exec.logits(&a, &x).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn injection_leaves_parameters_and_clean_logits_alone(pseed in 0u64..1000, xseed in 0u64..1000, robust in any::<bool>()) {
        let host = small_host();
        let cfg = if robust { DetectorConfig::robust() } else { DetectorConfig::naive() };
        let (evil, _) = inject_mab(&host, &cfg).unwrap();
        let params = ParamStore::init(&host, pseed);
        prop_assert!(params.matches(&evil));
        prop_assert_eq!(&ParamStore::init(&evil, pseed), &params);

        // gray input: both detectors are exactly zero
        let gray = Tensor::zeros(&host.input_shape);
        let (he, ee) = (Executor::new(&host).unwrap(), Executor::new(&evil).unwrap());
        prop_assert_eq!(he.logits(&params, &gray).unwrap(), ee.logits(&params, &gray).unwrap());

        // triggered input shifts the pooled features by far more than any weight could
        let mut r = common::rng(xseed);
        let clean = common::uniform_image(&mut r, &host.input_shape, 0.5);
        // each detector with the trigger it was built for; the naive one
        // averages its patch response over the whole map
        let (trigger, margin) = if robust { (TriggerSpec::checkerboard(), 1e3) } else { (TriggerSpec::white_box(), 1.0) };
        let triggered = apply_trigger(&clean, &trigger).unwrap();
        let site = |g: &ArchGraph| archdoor::detector::injection_site(g).unwrap();
        let pooled = |exec: &Executor, id: NodeId, x: &Tensor| {
            let acts = exec.forward(&params, x).unwrap();
            let pos = exec.order().iter().position(|&n| n == id).unwrap();
            acts[pos].clone()
        };
        let host_site = site(&host);
        let (_, inj) = inject_mab(&host, &cfg).unwrap();
        let diff = pooled(&he, host_site, &triggered).max_abs_diff(&pooled(&ee, inj.merge, &triggered));
        prop_assert!(diff >= margin, "pre-head difference {diff}");
    }

    #[test]
    fn detector_effect_does_not_depend_on_weights(p1 in 0u64..1000, p2 in 0u64..1000, xseed in 0u64..1000) {
        // merge minus host activation equals the detector output for any weights
        let host = small_host();
        let (evil, inj) = inject_mab(&host, &DetectorConfig::robust()).unwrap();
        let exec = Executor::new(&evil).unwrap();
        let mut r = common::rng(xseed);
        let x = apply_trigger(&common::uniform_image(&mut r, &host.input_shape, 0.5), &TriggerSpec::checkerboard()).unwrap();
        let effect = |pseed: u64| {
            let acts = exec.forward(&ParamStore::init(&evil, pseed), &x).unwrap();
            let at = |id: NodeId| acts[exec.order().iter().position(|&n| n == id).unwrap()].clone();
            let (m, s) = (at(inj.merge), at(inj.site));
            Tensor::from_vec(m.data().iter().zip(s.data()).map(|(a, b)| a - b).collect())
        };
        let (a, b) = (effect(p1), effect(p2));
        let scale = a.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(a.max_abs_diff(&b) <= 1e-9 * scale);
    }
}

#[test]
fn synthetic_families_are_balanced() {
    for family in [Family::Shapes, Family::Stripes] {
        let task = SyntheticTask { family, ..SyntheticTask::shapes(5) };
        let d = task.with_size(8).generate(60, 1, archdoor::data::Split::Train).unwrap();
        let counts = d.class_counts();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{counts:?}");
    }
}
