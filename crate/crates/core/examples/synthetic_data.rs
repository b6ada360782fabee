// Generate synthetic markets, write them to disk, read them back and
// split off the validation span. Also ingests a small price file.

use quantnet::data::{generate_synth, ingest_str, read_market_dir, split_holdout, write_market_dir, IngestMode, SynthSpec};

pub fn run_example() -> quantnet::Result<()> {
    let spec = SynthSpec { n_markets: 3, assets_per_market: 4, length: 600, seed: 7, ..SynthSpec::default() };
    let panels = generate_synth(&spec)?;
    let dir = std::env::temp_dir().join(format!("quantnet-synth-{}", std::process::id()));
    write_market_dir(&dir, &panels)?;
    let back = read_market_dir(&dir)?;
    assert_eq!(back.len(), panels.len());
    std::fs::remove_dir_all(&dir)?;

    for p in &back {
        let split = split_holdout(p, 200)?;
        println!(
            "{}: {} assets, train {} / validation {} (from {})",
            p.market_id(),
            p.n_assets(),
            split.train.len(),
            split.validation.len(),
            split.validation.dates()[0]
        );
    }

    let csv = "date,a,b\n2021-03-01,100,20\n2021-03-02,101,\n2021-03-03,99,21\n2021-03-04,100,21.5\n";
    let prices = ingest_str("demo", "inline", csv, IngestMode::Prices, None)?;
    println!("ingested {} returns per asset from 4 price rows", prices.len());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
