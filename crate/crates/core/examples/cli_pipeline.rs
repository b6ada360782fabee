// The command-line workflow driven in-process: synth, train, backtest,
// cluster and report, each into its own run directory.

use std::path::Path;

fn quantnet(args: &[&str]) -> quantnet::Result<()> {
    quantnet::cli::run_from(std::iter::once("quantnet").chain(args.iter().copied()))
}

pub fn run_example() -> quantnet::Result<()> {
    let root = std::env::temp_dir().join(format!("quantnet-cli-{}", std::process::id()));
    if root.exists() {
        std::fs::remove_dir_all(&root)?;
    }
    std::fs::create_dir_all(&root)?;
    let p = |rel: &str| root.join(rel).display().to_string();
    std::fs::write(
        root.join("synth.toml"),
        "n_markets = 3\nassets_per_market = 3\nlength = 360\nfactor_persistence = 0.9\nfactor_loading = 1.0\nidio_vol = 0.7\nseed = 2\n",
    )?;
    std::fs::write(
        root.join("train.toml"),
        "batch_markets = 3\nseq_len = 20\nlearning_rate = 0.01\nsteps = 20\nseed = 1\n\n[arch]\nencoder = \"lstm\"\ndecoder = \"lstm\"\ntransfer = \"linear\"\ndim = 4\n",
    )?;
    quantnet(&["synth", "--spec", &p("synth.toml"), "--out", &p("data")])?;
    quantnet(&["train", "--config", &p("train.toml"), "--data", &p("data"), "--out", &p("train"), "--holdout", "120"])?;
    quantnet(&[
        "backtest", "--checkpoint", &p("train/checkpoint.json"), "--data", &p("data"), "--holdout", "120", "--out",
        &p("backtest"), "--lookback", "60",
    ])?;
    quantnet(&[
        "cluster", "--checkpoint", &p("train/checkpoint.json"), "--data", &p("data"), "--out", &p("cluster"),
        "--n-clusters", "2", "--holdout", "120",
    ])?;
    quantnet(&["report", "--backtest", &p("backtest"), "--out", &p("report")])?;
    print!("{}", std::fs::read_to_string(Path::new(&p("report")).join("table.csv"))?);
    let manifest = quantnet::cli::RunManifest::load(&root.join("backtest"))?;
    manifest.verify(&root.join("backtest"))?;
    println!("backtest run {} with {} outputs", manifest.run_id, manifest.outputs.len());
    std::fs::remove_dir_all(&root)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
