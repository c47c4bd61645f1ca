//! Build every bundled architecture, write it as `.archjson` and read it back.
//!
//! cargo run --example build_graphs -- [out-dir]

use archdoor::{archjson, models};

fn main() -> archdoor::Result<()> {
    let dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(std::env::temp_dir);
    for name in models::ARCHITECTURES {
        let g = models::build_named(name, 10)?;
        let path = dir.join(format!("{name}.{}", archjson::EXTENSION));
        archjson::write(&path, &g)?;
        let back = archjson::read(&path)?;
        assert_eq!(back, g);
        println!(
            "{name:<20} {:>3} nodes {:>3} edges {:>2} parameterized  -> {}",
            g.len(),
            g.edges().len(),
            g.parameterized_nodes().len(),
            path.display()
        );
    }
    Ok(())
}
