//! Agglomerative Ward clustering of market representation vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CLUSTERS: usize = 6;

/// One merge. Leaves are numbered `0..n` in sorted market order and the
/// cluster created by merge `k` gets id `n + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Market ids in leaf order (lexicographic).
    pub markets: Vec<String>,
    pub merges: Vec<Merge>,
    /// Market to cluster id; ids follow each cluster's first market.
    pub labels: BTreeMap<String, usize>,
    pub n_clusters: usize,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Ward-linkage merge sequence over `points`, ties going to the pair with
/// the smallest (lower id, higher id).
pub fn ward_linkage(points: &[Vec<f64>]) -> Vec<Merge> {
    let n = points.len();
    // Distances between active clusters keyed by slot; slot i starts as leaf i.
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclid(&points[i], &points[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active: Vec<bool> = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in (0..n).filter(|&a| active[a]) {
            for b in (a + 1..n).filter(|&b| active[b]) {
                let (lo, hi) = if id[a] < id[b] { (id[a], id[b]) } else { (id[b], id[a]) };
                let better = match best {
                    None => true,
                    Some((d, blo, bhi, _, _)) => dist[a][b] < d || (dist[a][b] == d && (lo, hi) < (blo, bhi)),
                };
                if better {
                    best = Some((dist[a][b], lo, hi, a, b));
                }
            }
        }
        let (d, lo, hi, a, b) = best.expect("two active clusters");
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for c in (0..n).filter(|&c| active[c] && c != a && c != b) {
            let nc = size[c] as f64;
            let v = ((na + nc) * dist[a][c].powi(2) + (nb + nc) * dist[b][c].powi(2) - nc * d * d) / (na + nb + nc);
            let v = v.max(0.0).sqrt();
            dist[a][c] = v;
            dist[c][a] = v;
        }
        active[b] = false;
        size[a] += size[b];
        id[a] = n + k;
        merges.push(Merge { left: lo, right: hi, distance: d, size: size[a] });
    }
    merges
}

/// Flat labels after applying the first `n - n_clusters` merges.
pub fn cut_tree(n: usize, merges: &[Merge], n_clusters: usize) -> Vec<usize> {
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for m in merges.iter().take(n.saturating_sub(n_clusters)) {
        let mut joined = members[m.left].clone();
        joined.extend(&members[m.right]);
        members.push(joined);
        members[m.left].clear();
        members[m.right].clear();
    }
    let mut groups: Vec<Vec<usize>> = members.into_iter().filter(|g| !g.is_empty()).collect();
    groups.iter_mut().for_each(|g| g.sort());
    groups.sort();
    let mut labels = vec![0; n];
    for (c, g) in groups.iter().enumerate() {
        for &i in g {
            labels[i] = c;
        }
    }
    labels
}

/// Clusters markets by their score vectors. Asking for more clusters than
/// markets yields one cluster per market.
pub fn cluster_markets(scores: &BTreeMap<String, Vec<f64>>, n_clusters: usize) -> Result<Clustering> {
    if n_clusters == 0 {
        return Err(Error::config("n_clusters must be at least 1"));
    }
    if scores.is_empty() {
        return Err(Error::State("no market scores to cluster".into()));
    }
    let dim = scores.values().next().expect("non-empty").len();
    for (m, v) in scores {
        if v.len() != dim {
            return Err(Error::shape(format!("scores of {m}"), dim, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric { step: 0, what: format!("non-finite score for {m}") });
        }
    }
    let markets: Vec<String> = scores.keys().cloned().collect();
    let points: Vec<Vec<f64>> = scores.values().cloned().collect();
    let merges = ward_linkage(&points);
    let k = n_clusters.min(markets.len());
    let flat = cut_tree(markets.len(), &merges, k);
    let labels = markets.iter().cloned().zip(flat).collect();
    Ok(Clustering { markets, merges, labels, n_clusters: k })
}

impl Clustering {
    pub fn labels_csv(&self) -> String {
        let mut s = String::from("market,cluster\n");
        for m in &self.markets {
            s.push_str(&format!("{m},{}\n", self.labels[m]));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scores(points: &[(&str, Vec<f64>)]) -> BTreeMap<String, Vec<f64>> {
        points.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn two_identical_groups() {
        let s = scores(&[
            ("a", vec![0.0, 0.0]),
            ("b", vec![5.0, 5.0]),
            ("c", vec![0.0, 0.0]),
            ("d", vec![5.0, 5.0]),
        ]);
        let c = cluster_markets(&s, 2).unwrap();
        assert_eq!(c.labels["a"], c.labels["c"]);
        assert_eq!(c.labels["b"], c.labels["d"]);
        assert_ne!(c.labels["a"], c.labels["b"]);
        assert_eq!(c.labels["a"], 0);
        assert_eq!(c.merges.len(), 3);
        assert_eq!((c.merges[0].left, c.merges[0].right), (0, 2));
        assert_eq!(c.merges[0].distance, 0.0);
    }

    #[test]
    fn single_market() {
        let c = cluster_markets(&scores(&[("x", vec![1.0])]), DEFAULT_CLUSTERS).unwrap();
        assert!(c.merges.is_empty());
        assert_eq!(c.labels["x"], 0);
        assert_eq!(c.n_clusters, 1);
    }

    #[test]
    fn ward_distance_of_three_points() {
        // 0, 1 on a line then 4: first merge at 1, then Ward distance
        // sqrt(2 * 2 * 1 / 3) * |0.5 - 4|.
        let m = ward_linkage(&[vec![0.0], vec![1.0], vec![4.0]]);
        assert_eq!(m[0].distance, 1.0);
        assert_abs_diff_eq!(m[1].distance, (4.0f64 / 3.0).sqrt() * 3.5, epsilon = 1e-12);
        assert_eq!((m[1].left, m[1].right, m[1].size), (2, 3, 3));
    }

    #[test]
    fn labels_follow_first_member() {
        let s = scores(&[("m1", vec![9.0]), ("m2", vec![0.0]), ("m3", vec![9.1])]);
        let c = cluster_markets(&s, 2).unwrap();
        assert_eq!(c.labels["m1"], 0);
        assert_eq!(c.labels["m2"], 1);
        assert!(c.labels_csv().starts_with("market,cluster\nm1,0\n"));
        assert!(cluster_markets(&s, 0).is_err());
        assert!(cluster_markets(&BTreeMap::new(), 2).is_err());
    }
}
