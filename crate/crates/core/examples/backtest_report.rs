// Backtest a trained model next to a baseline, aggregate the nine metrics
// and test whether the per-asset Sharpe distributions differ.

use quantnet::baselines::Baseline;
use quantnet::data::{generate_synth, split_holdout, SynthSpec};
use quantnet::evaluation::{backtest, ks_test, rank_sum_test, MetricsReport};
use quantnet::model::{ArchSpec, BlockKind, ModelFamily, ModelStrategy};
use quantnet::trainer::{fit, TrainConfig};

pub fn run_example() -> quantnet::Result<()> {
    let spec = SynthSpec { n_markets: 3, assets_per_market: 6, length: 800, seed: 4, ..SynthSpec::default() };
    let panels = generate_synth(&spec)?;
    let holdout = 300;
    let train: Vec<_> = panels.iter().map(|p| split_holdout(p, holdout).map(|s| s.train)).collect::<Result<_, _>>()?;
    let cfg = TrainConfig {
        family: ModelFamily::NoTransferLinear,
        arch: ArchSpec { encoder: BlockKind::Linear, decoder: BlockKind::Linear, dim: 4, ..ArchSpec::default() },
        batch_markets: 3,
        seq_len: 30,
        learning_rate: 0.02,
        steps: 80,
        seed: 0,
        grad_clip: None,
        truncation: None,
    };
    let (model, _) = fit(&train, &cfg)?;
    let strategy = ModelStrategy { model: &model, eval_window: cfg.eval_window() };
    let baseline = Baseline::TsMomentum { lookback: 120 };

    let mut mine = Vec::new();
    let mut theirs = Vec::new();
    for p in &panels {
        mine.push(backtest(&strategy, p, holdout)?.report);
        theirs.push(backtest(&baseline, p, holdout)?.report);
    }
    let mine = MetricsReport::combine("model", &mine)?;
    let theirs = MetricsReport::combine("ts-momentum", &theirs)?;
    for r in [&mine, &theirs] {
        let s = &r.global["sharpe"];
        println!("{:<12} sharpe median {:+.3} (mad {:.3})", r.strategy, s.median, s.mad);
    }
    let (a, b) = (mine.metric("sharpe")?, theirs.metric("sharpe")?);
    let rs = rank_sum_test(&a, &b)?;
    let ks = ks_test(&a, &b)?;
    println!("rank-sum W {:.1} p {:.3}; KS D {:.3} p {:.3}", rs.w, rs.p_value, ks.d, ks.p_value);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
