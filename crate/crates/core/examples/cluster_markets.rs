// Cluster markets by the average encoder output of a QuantNet model.

use quantnet::data::{generate_synth, SynthSpec};
use quantnet::evaluation::cluster_markets;
use quantnet::model::{ArchSpec, Model, ModelFamily, MarketSpec};

pub fn run_example() -> quantnet::Result<()> {
    let spec = SynthSpec { n_markets: 8, assets_per_market: 3, length: 300, seed: 9, ..SynthSpec::default() };
    let panels = generate_synth(&spec)?;
    let markets: Vec<MarketSpec> = panels.iter().map(MarketSpec::of).collect();
    let model = Model::new(ModelFamily::Quantnet, ArchSpec { dim: 5, ..ArchSpec::default() }, &markets, 1)?;
    let scores = model.encoder_scores(&panels, Some(100))?;
    let clustering = cluster_markets(&scores, 3)?;
    print!("{}", clustering.labels_csv());
    for m in &clustering.merges {
        println!("merge {} + {} at {:.4} -> size {}", m.left, m.right, m.distance, m.size);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
