//! Trains every detector on the synthetic suite and prints evaluation AUC.
//!
//! `cargo run --release -p aad-core --example synthetic_experiment -- [epochs] [seeds] [archs]`

#[path = "../tests/common/mod.rs"]
mod common;

use aad_core::Architecture;

fn main() -> aad_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let archs: Vec<Architecture> = match args.get(3) {
        Some(a) => a.split(',').map(|s| s.parse()).collect::<aad_core::Result<_>>()?,
        None => Architecture::ALL.to_vec(),
    };
    let seeds: Vec<u64> = (0..seeds).collect();
    for r in common::synthetic_experiment(&seeds, &archs, epochs) {
        println!(
            "seed {} {:<22} auc {:.3} pauc {:.3} ({:.0}s)",
            r.seed, r.arch, r.auc, r.pauc, r.secs
        );
    }
    Ok(())
}
