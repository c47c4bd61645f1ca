//! Interval bounds of every node of a backdoored graph, with and without
//! trained-weight knowledge.

use archdoor::detector::{inject_mab, DetectorConfig};
use archdoor::engine::ParamStore;
use archdoor::models::AlexNetSmall;
use archdoor::scanner::{node_hulls, propagate_bounds, Interval};

fn main() -> archdoor::Result<()> {
    let host = AlexNetSmall::desk(10).build()?;
    let (g, inj) = inject_mab(&host, &DetectorConfig::robust())?;
    let params = ParamStore::init(&g, 7);
    let blind = node_hulls(&propagate_bounds(&g, None, Interval::UNIT)?);
    let informed = node_hulls(&propagate_bounds(&g, Some(&params), Interval::UNIT)?);
    println!("{:>4} {:<20} {:>26} {:>26}", "node", "kind", "no params", "with params");
    for (id, kind) in g.nodes() {
        let mark = if inj.detector.contains(id) { "*" } else { " " };
        let fmt = |iv: &Interval| format!("[{:.3e}, {:.3e}]", iv.lo, iv.hi);
        println!("{:>4}{mark}{:<20} {:>26} {:>26}", id.to_string(), kind.tag(), fmt(&blind[id]), fmt(&informed[id]));
    }
    println!("* detector node; its bounds do not depend on any weight");
    Ok(())
}
