//! Run one threat setting at desk scale and print the summary table.
//!
//! cargo run --release --example threat_settings -- <1|2|3> <none|badnets|mab-naive|mab-robust> [seeds] [out-dir]

use archdoor::experiment::{desk_config, run_experiment, Attack, Setting};

fn main() -> archdoor::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let setting = args.first().and_then(|s| s.parse::<u8>().ok()).unwrap_or(3);
    let setting = Setting::try_from(setting).map_err(archdoor::Error::Config)?;
    let attack: Attack = serde_json::from_value(serde_json::Value::String(args.get(1).cloned().unwrap_or("mab-robust".into())))
        .map_err(|e| archdoor::Error::Config(e.to_string()))?;
    let seeds = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3u64);
    let cfg = desk_config(setting, attack, (0..seeds).collect());
    let out = args.get(3).map(std::path::PathBuf::from);
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let result = run_experiment(&cfg, out.as_deref(), jobs)?;
    print!("{}", result.summary());
    Ok(())
}
