//! Writes a seeded synthetic sensor bag. No bus involved.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;

use coral_demokit::bag::{gen_bag, total_points, write_bag};

#[derive(Parser)]
#[command(name = "coral-bag-gen", about = "generate a synthetic sensor bag")]
struct Args {
    /// Output path for the bag (one JSON line per scan).
    #[arg(long)]
    out: PathBuf,
    /// Number of scan lines to generate.
    #[arg(long, default_value_t = 50)]
    lines: usize,
    /// RNG seed; the same seed always yields the same bag.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let bag = gen_bag(args.seed, args.lines);
    write_bag(&args.out, &bag).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} lines ({} points) to {}",
        bag.len(),
        total_points(&bag),
        args.out.display()
    );
    Ok(())
}
