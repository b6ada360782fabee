// The four benchmark strategies on one synthetic market.

use quantnet::baselines::Baseline;
use quantnet::data::{generate_synth, SynthSpec};
use quantnet::evaluation::backtest;

pub fn run_example() -> quantnet::Result<()> {
    let spec = SynthSpec { n_markets: 1, length: 900, seed: 1, ..SynthSpec::default() };
    let panel = &generate_synth(&spec)?[0];
    for b in Baseline::all() {
        let bt = backtest(&b, panel, 400)?;
        let sharpe = bt.report.metric("sharpe")?;
        let mean = sharpe.iter().sum::<f64>() / sharpe.len() as f64;
        println!("{:<14} mean sharpe {mean:+.3}", bt.report.strategy);
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
