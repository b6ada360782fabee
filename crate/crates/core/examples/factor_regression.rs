// Regress a strategy's daily pnl on a small factor table.

use quantnet::data::business_days;
use quantnet::evaluation::{factor_regression, FactorTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> quantnet::Result<()> {
    let dates = business_days(400);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut text = String::from("date,mkt_rf,smb,hml\n");
    for d in &dates {
        let row: Vec<String> = (0..3).map(|_| format!("{:.4}", rng.random_range(-1.5..1.5))).collect();
        text.push_str(&format!("{},{}\n", d.format("%Y-%m-%d"), row.join(",")));
    }
    // Percent values; the table stores decimals.
    let table = FactorTable::parse("factors.csv", &text)?;
    let x = table.align(&dates)?;
    let pnl: Vec<f64> = (0..dates.len())
        .map(|t| 0.0004 + 0.6 * x[(t, 0)] - 0.2 * x[(t, 2)] + rng.random_range(-0.002..0.002))
        .collect();
    let fit = factor_regression(&pnl, x.view())?;
    let names = ["alpha"].into_iter().chain(table.names.iter().map(String::as_str));
    for (i, name) in names.enumerate() {
        println!("{name:<6} {:+.5} (t {:+.2})", fit.coefficients[i], fit.t_stats[i]);
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
