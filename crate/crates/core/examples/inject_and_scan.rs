//! Inject both detector variants into the small AlexNet and scan each graph.

use archdoor::detector::{inject_mab, DetectorConfig};
use archdoor::models;
use archdoor::scanner::{scan_graph, ScanConfig};

fn main() -> archdoor::Result<()> {
    let host = models::build_alexnet_small(10)?;
    print!("{}", scan_graph(&host, &ScanConfig::default())?);
    for cfg in [DetectorConfig::naive(), DetectorConfig::robust()] {
        let (g, inj) = inject_mab(&host, &cfg)?;
        println!(
            "\n{:?}: {} detector nodes feed merge node {} next to node {}",
            cfg.mode,
            inj.detector.len(),
            inj.merge,
            inj.site
        );
        let report = scan_graph(&g, &ScanConfig::default())?;
        print!("{report}");
    }
    Ok(())
}
