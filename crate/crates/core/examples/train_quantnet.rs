// Train a small QuantNet and its no-transfer ablation on the same data,
// then compare validation Sharpe and round-trip the checkpoint.

use quantnet::data::{generate_synth, split_holdout, SynthSpec};
use quantnet::model::{ArchSpec, Model, ModelCheckpoint, ModelFamily};
use quantnet::trainer::{fit, validation_sharpe, TrainConfig};

pub fn run_example() -> quantnet::Result<()> {
    let spec = SynthSpec { n_markets: 4, assets_per_market: 3, length: 700, seed: 2, ..SynthSpec::default() };
    let panels = generate_synth(&spec)?;
    let holdout = 250;
    let train: Vec<_> = panels.iter().map(|p| split_holdout(p, holdout).map(|s| s.train)).collect::<Result<_, _>>()?;

    let cfg = TrainConfig {
        family: ModelFamily::Quantnet,
        arch: ArchSpec { dim: 6, ..ArchSpec::default() },
        batch_markets: 4,
        seq_len: 21,
        learning_rate: 0.01,
        steps: 60,
        seed: 3,
        grad_clip: Some(10.0),
        truncation: None,
    };
    let (model, outcome) = fit(&train, &cfg)?;
    let first = outcome.loss_trace.first().map(|r| r.loss).unwrap_or(f64::NAN);
    let last = outcome.loss_trace.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!("quantnet loss {first:.3} -> {last:.3} over {} steps", outcome.loss_trace.len());

    let ablation = TrainConfig { family: ModelFamily::NoTransferLstm, ..cfg.clone() };
    let (baseline, _) = fit(&train, &ablation)?;
    let q = validation_sharpe(&model, &panels, holdout, cfg.eval_window())?;
    let b = validation_sharpe(&baseline, &panels, holdout, cfg.eval_window())?;
    println!("validation sharpe: quantnet {q:.3}, no-transfer {b:.3}");

    let json = model.to_checkpoint(cfg.eval_window()).to_json()?;
    let restored = Model::from_checkpoint(&ModelCheckpoint::from_json(&json)?)?;
    assert_eq!(restored.signals(&panels[0], 0, 21)?, model.signals(&panels[0], 0, 21)?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
