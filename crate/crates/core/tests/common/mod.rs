//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use quantnet::data::{business_days, ReturnsPanel};
use quantnet::model::{Model, MarketSpec};
use quantnet::nn::{GradBuffer, Masks, Network, ParamId, ParamStore};
use quantnet::objective::{quantnet_loss, MarketWindow};
use quantnet::trainer::{batch_gradients, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SQRT_252: f64 = 15.874_507_866_387_544;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_panel(id: &str, n: usize, len: usize, scale: f64, seed: u64) -> ReturnsPanel {
    let mut r = rng(seed);
    let returns = Array2::from_shape_fn((n, len), |_| r.random_range(-scale..scale));
    let dates = business_days(len);
    let assets = (0..n).map(|j| format!("{id}_{j}")).collect();
    ReturnsPanel::new(id, assets, dates, returns).unwrap()
}

/// Redraws every parameter uniformly from `[-scale, scale]`, so signals are
/// far from zero and gradient checks are well conditioned.
pub fn randomize(model: &mut Model, scale: f64, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<ParamId> = model.store().ids().collect();
    for id in ids {
        for v in model.store_mut().value_mut(id).data_mut() {
            *v = r.random_range(-scale..scale);
        }
    }
}

pub fn specs(panels: &[ReturnsPanel]) -> Vec<MarketSpec> {
    panels.iter().map(MarketSpec::of).collect()
}

// ---------------------------------------------------------------- objective

pub fn naive_sharpe(signals: &Array2<f64>, returns: &Array2<f64>) -> Vec<f64> {
    let (n, k) = signals.dim();
    let mut out = Vec::new();
    for j in 0..n {
        let mut sum = 0.0;
        for t in 0..k {
            sum += signals[(j, t)] * returns[(j, t)];
        }
        let mean = sum / k as f64;
        let mut ss = 0.0;
        for t in 0..k {
            let d = signals[(j, t)] * returns[(j, t)] - mean;
            ss += d * d;
        }
        let sd = (ss / k as f64).sqrt();
        let sd = if sd > 1e-8 { sd } else { 1e-8 };
        out.push(mean / sd * SQRT_252);
    }
    out
}

pub fn naive_loss(markets: &[(Array2<f64>, Array2<f64>)]) -> f64 {
    let mut total = 0.0;
    for (s, r) in markets {
        let rho = naive_sharpe(s, r);
        total += rho.iter().sum::<f64>() / rho.len() as f64;
    }
    -total / markets.len() as f64
}

// ---------------------------------------------------------------- metrics

fn naive_mean(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    s / x.len() as f64
}

fn naive_central(x: &[f64], p: i32) -> f64 {
    let m = naive_mean(x);
    let mut s = 0.0;
    for v in x {
        s += (v - m).powi(p);
    }
    s / x.len() as f64
}

fn floored(v: f64) -> f64 {
    if v > 1e-8 {
        v
    } else {
        1e-8
    }
}

/// The nine metrics in reporting order.
pub fn naive_metrics(x: &[f64]) -> [f64; 9] {
    let mean = naive_mean(x);
    let sd = naive_central(x, 2).sqrt();
    let ann_ret = mean * 252.0;
    let ann_vol = sd * SQRT_252;
    let sharpe = mean / floored(sd) * SQRT_252;
    let mut down = 0.0;
    for v in x {
        if *v < 0.0 {
            down += v * v;
        }
    }
    let downside = (down / x.len() as f64).sqrt() * SQRT_252;
    let sortino = ann_ret / floored(downside);
    let mut wealth = vec![1.0];
    for v in x {
        let w = wealth[wealth.len() - 1] * (1.0 + v);
        wealth.push(w);
    }
    let mut mdd: f64 = 0.0;
    for t in 0..wealth.len() {
        let mut peak = f64::MIN;
        for w in &wealth[..=t] {
            peak = peak.max(*w);
        }
        mdd = mdd.min(wealth[t] / peak - 1.0);
    }
    let calmar = ann_ret / floored(mdd.abs());
    let skew = naive_central(x, 3) / floored(sd).powi(3);
    let kurt = naive_central(x, 4) / floored(sd).powi(4);
    [ann_ret, ann_vol, sharpe, calmar, sortino, downside, mdd, skew, kurt]
}

// ---------------------------------------------------------------- tests of location

/// `#{a > b} + 0.5 #{a == b}` over all pairs.
pub fn naive_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Two-sided exact p-value by enumerating every rank subset of size `m`.
pub fn enumerated_p(m: usize, n: usize, u: f64) -> f64 {
    let total = m + n;
    let offset = (m * (m + 1) / 2) as f64;
    let (mut le, mut ge, mut count) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let rank_sum: usize = (0..total).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).sum();
        let us = rank_sum as f64 - offset;
        count += 1;
        if us <= u {
            le += 1;
        }
        if us >= u {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / count as f64).min(1.0)
}

/// Tie-corrected normal approximation from first principles.
pub fn naive_normal_p(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (m, n) = (a.len() as f64, b.len() as f64);
    let big = m + n;
    let mut tie_term = 0.0;
    let mut seen: Vec<f64> = Vec::new();
    for v in &pooled {
        if seen.contains(v) {
            continue;
        }
        seen.push(*v);
        let t = pooled.iter().filter(|w| *w == v).count() as f64;
        tie_term += t * t * t - t;
    }
    let var = m * n / 12.0 * (big + 1.0 - tie_term / (big * (big - 1.0)));
    let u = naive_u(a, b);
    let z = if var > 0.0 { (u - m * n / 2.0) / var.sqrt() } else { 0.0 };
    let p = statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2);
    (z, p.min(1.0))
}

/// Largest gap between the two empirical CDFs, checked at every pooled value.
pub fn naive_ks_d(a: &[f64], b: &[f64]) -> f64 {
    let mut d: f64 = 0.0;
    for v in a.iter().chain(b) {
        let fa = a.iter().filter(|x| *x <= v).count() as f64 / a.len() as f64;
        let fb = b.iter().filter(|x| *x <= v).count() as f64 / b.len() as f64;
        d = d.max((fa - fb).abs());
    }
    d
}

// ---------------------------------------------------------------- gradients

/// Summed per-sample gradients, one vector per parameter tensor.
pub fn reduce(store: &ParamStore, bufs: &[GradBuffer]) -> BTreeMap<ParamId, Vec<f64>> {
    let mut out = BTreeMap::new();
    for buf in bufs {
        for (id, g) in buf.iter() {
            let acc = out.entry(id).or_insert_with(|| vec![0.0; store.value(id).len()]);
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    out
}

pub fn pipeline_loss(model: &Model, panels: &[ReturnsPanel], samples: &[Sample], k: usize) -> f64 {
    let sigs: Vec<Array2<f64>> = samples
        .iter()
        .map(|smp| {
            let r = panels[smp.market].returns();
            let inputs = r.slice(s![.., smp.end - k - 1..smp.end - 1]);
            model.forward_window(smp.market, inputs, &model.zero_state(smp.market), Masks::Off).unwrap().signals
        })
        .collect();
    let windows: Vec<MarketWindow<'_>> = samples
        .iter()
        .zip(&sigs)
        .map(|(smp, sg)| MarketWindow {
            signals: sg.view(),
            returns: panels[smp.market].returns().slice(s![.., smp.end - k..smp.end]),
        })
        .collect();
    quantnet_loss(&windows).unwrap()
}

/// Largest per-tensor relative error between reverse-mode and central
/// finite-difference gradients of the full loss.
pub fn gradient_check(model: &mut Model, panels: &[ReturnsPanel], samples: &[Sample], k: usize, h: f64) -> f64 {
    let (_, bufs) = batch_gradients(model, panels, samples, k, None).unwrap();
    let analytic = reduce(model.store(), &bufs);
    let ids: Vec<ParamId> = model.store().ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let len = model.store().value(id).len();
        let zeros = vec![0.0; len];
        let a = analytic.get(&id).unwrap_or(&zeros);
        let mut num = vec![0.0; len];
        for i in 0..len {
            let orig = model.store().value(id).data()[i];
            model.store_mut().value_mut(id).data_mut()[i] = orig + h;
            let lp = pipeline_loss(model, panels, samples, k);
            model.store_mut().value_mut(id).data_mut()[i] = orig - h;
            let lm = pipeline_loss(model, panels, samples, k);
            model.store_mut().value_mut(id).data_mut()[i] = orig;
            num[i] = (lp - lm) / (2.0 * h);
        }
        let scale = num.iter().chain(a).fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        let err = a.iter().zip(&num).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(err / scale);
    }
    worst
}

/// Truncated gradient assembled one signal at a time: the window is
/// replayed from the detached state `h - 1` steps before each origin and
/// differentiated in full with the loss gradient injected only at the origin.
pub fn truncated_oracle(
    net: &Network,
    store: &ParamStore,
    inputs: &Array2<f64>,
    d_signals: &Array2<f64>,
    h: usize,
) -> GradBuffer {
    let steps = inputs.ncols();
    let mut buf = GradBuffer::new();
    for tau in 0..steps {
        let start = (tau + 1).saturating_sub(h);
        let state = if start == 0 {
            net.zero_state()
        } else {
            net.forward(store, inputs.slice(s![.., ..start]), &net.zero_state(), Masks::Off).unwrap().state
        };
        let f = net.forward(store, inputs.slice(s![.., start..=tau]), &state, Masks::Off).unwrap();
        let mut ds = Array2::zeros((net.output_dim(), tau + 1 - start));
        ds.column_mut(tau - start).assign(&d_signals.column(tau));
        net.backward(store, &f.tape, ds.view(), None, &mut buf).unwrap();
    }
    buf
}

pub fn max_abs_diff(a: &GradBuffer, b: &GradBuffer) -> f64 {
    let mut worst: f64 = 0.0;
    let ids: std::collections::BTreeSet<ParamId> = a.ids().chain(b.ids()).collect();
    for id in ids {
        match (a.get(id), b.get(id)) {
            (Some(x), Some(y)) => {
                for (p, q) in x.iter().zip(y) {
                    worst = worst.max((p - q).abs());
                }
            }
            (Some(x), None) | (None, Some(x)) => {
                for p in x {
                    worst = worst.max(p.abs());
                }
            }
            (None, None) => {}
        }
    }
    worst
}

// ---------------------------------------------------------------- clustering

/// Ward merges by brute force: every step recomputes the size-weighted
/// squared centroid gap of every pair of current clusters.
pub fn ward_reference(points: &[Vec<f64>]) -> Vec<(usize, usize, f64, usize)> {
    let n = points.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let centroid = |members: &[usize]| -> Vec<f64> {
        let dim = points[0].len();
        let mut c = vec![0.0; dim];
        for &m in members {
            for d in 0..dim {
                c[d] += points[m][d];
            }
        }
        c.iter().map(|v| v / members.len() as f64).collect()
    };
    let mut out = Vec::new();
    for k in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (ca, cb) = (centroid(&clusters[a].1), centroid(&clusters[b].1));
                let (na, nb) = (clusters[a].1.len() as f64, clusters[b].1.len() as f64);
                let gap: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y).powi(2)).sum();
                let d = (2.0 * na * nb / (na + nb) * gap).sqrt();
                let (lo, hi) = (clusters[a].0.min(clusters[b].0), clusters[a].0.max(clusters[b].0));
                let better = match best {
                    None => true,
                    Some((bd, blo, bhi, _, _)) => d < bd - 1e-12 || ((d - bd).abs() <= 1e-12 && (lo, hi) < (blo, bhi)),
                };
                if better {
                    best = Some((d, lo, hi, a, b));
                }
            }
        }
        let (d, lo, hi, a, b) = best.unwrap();
        let mut members = clusters[a].1.clone();
        members.extend(&clusters[b].1);
        clusters.remove(b);
        clusters.remove(a);
        out.push((lo, hi, d, members.len()));
        clusters.push((n + k, members));
    }
    out
}
