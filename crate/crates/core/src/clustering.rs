//! Correlation-distance Ward clustering and per-cluster representative
//! selection.

use std::io::Write;

use log::warn;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::market_data::{ColumnStats, ReturnMatrix};
use crate::portfolio::sharpe_from;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub tickers: Vec<String>,
    pub rho: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub tickers: Vec<String>,
    pub d: Array2<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }
}

/// One agglomeration step. Clusters `0..n` are the leaves; the cluster formed
/// by step `s` has id `n + s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub cost: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub tickers: Vec<String>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub merge_history: Vec<Merge>,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }
}

/// Pairwise Pearson correlations of the return columns.
pub fn correlation_matrix(rm: &ReturnMatrix) -> Result<CorrelationMatrix> {
    let (t, n) = rm.returns.dim();
    if t < 2 {
        return Err(Error::Parameter(format!("correlation needs at least 2 rows, got {t}")));
    }
    let stats = ColumnStats::of(rm)?;
    let degenerate = stats.degenerate_tickers(&rm.tickers);
    if !degenerate.is_empty() {
        return Err(Error::DegenerateColumns(degenerate));
    }
    let centered: Vec<Vec<f64>> = (0..n)
        .map(|c| rm.returns.column(c).iter().map(|x| x - stats.mean[c]).collect())
        .collect();
    let norms: Vec<f64> = centered.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut rho = Array2::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            rho[[i, j]] = r;
            rho[[j, i]] = r;
        }
    }
    Ok(CorrelationMatrix {
        tickers: rm.tickers.clone(),
        rho,
    })
}

/// `d = 1 − |ρ|`, so strongly anticorrelated assets are also close.
pub fn correlation_distance(cm: &CorrelationMatrix) -> DistanceMatrix {
    let n = cm.tickers.len();
    let mut d = cm.rho.mapv(|r| (1.0 - r.abs()).clamp(0.0, 1.0));
    for i in 0..n {
        d[[i, i]] = 0.0;
    }
    DistanceMatrix {
        tickers: cm.tickers.clone(),
        d,
    }
}

/// Full Ward dendrogram via the Lance–Williams update on the given
/// dissimilarities. Ties go to the lowest (row, column) pair of active
/// cluster slots.
pub fn ward_linkage(dm: &DistanceMatrix) -> Vec<Merge> {
    let n = dm.len();
    let mut dist = dm.d.clone();
    let mut size = vec![1usize; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && dist[[i, j]] < best.0 {
                    best = (dist[[i, j]], i, j);
                }
            }
        }
        let (dij, i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let nk = size[k] as f64;
            let dik = dist[[i, k]];
            let djk = dist[[j, k]];
            let v = ((ni + nk) * dik * dik + (nj + nk) * djk * djk - nk * dij * dij) / (ni + nj + nk);
            let v = v.max(0.0).sqrt();
            dist[[i, k]] = v;
            dist[[k, i]] = v;
        }
        let (a, b) = (id[i].min(id[j]), id[i].max(id[j]));
        merges.push(Merge {
            a,
            b,
            cost: dij,
            size: size[i] + size[j],
        });
        size[i] += size[j];
        id[i] = n + step;
        active[j] = false;
    }
    merges
}

/// Applies the first `n − k` merges. Labels are numbered by the smallest
/// member index of each cluster.
pub fn cut_dendrogram(n: usize, merges: &[Merge], k: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (s, m) in merges.iter().take(n - k).enumerate() {
        let ra = find(&mut parent, m.a);
        let rb = find(&mut parent, m.b);
        parent[ra] = n + s;
        parent[rb] = n + s;
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut label_of_root = std::collections::HashMap::new();
    roots
        .iter()
        .map(|r| {
            let next = label_of_root.len();
            *label_of_root.entry(*r).or_insert(next)
        })
        .collect()
}

pub fn ward_cluster(dm: &DistanceMatrix, k: usize) -> Result<ClusterAssignment> {
    let n = dm.len();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("cluster count {k} outside [1, {n}]")));
    }
    let merge_history = ward_linkage(dm);
    let labels = cut_dendrogram(n, &merge_history, k);
    Ok(ClusterAssignment {
        tickers: dm.tickers.clone(),
        labels,
        k,
        merge_history,
    })
}

/// Mean silhouette coefficient. Singleton clusters score 0.
pub fn silhouette_score(dm: &DistanceMatrix, labels: &[usize], k: usize) -> f64 {
    let n = dm.len();
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dm.d[[i, j]];
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Within-cluster dispersion `Σ_c Σ_{i<j∈c} d²/|c|`, the quantity Ward
/// greedily minimizes (and the elbow diagnostic plots).
pub fn within_dispersion(dm: &DistanceMatrix, labels: &[usize], k: usize) -> f64 {
    let mut sums = vec![0.0; k];
    let mut sizes = vec![0usize; k];
    for (i, &li) in labels.iter().enumerate() {
        sizes[li] += 1;
        for j in i + 1..labels.len() {
            if labels[j] == li {
                sums[li] += dm.d[[i, j]].powi(2);
            }
        }
    }
    sums.iter().zip(&sizes).filter(|(_, &s)| s > 0).map(|(w, &s)| w / s as f64).sum()
}

/// Calinski–Harabasz index computed from pairwise distances.
pub fn calinski_harabasz(dm: &DistanceMatrix, labels: &[usize], k: usize) -> f64 {
    let n = dm.len();
    if k < 2 || k >= n {
        return 0.0;
    }
    let all = vec![0usize; n];
    let total = within_dispersion(dm, &all, 1);
    let within = within_dispersion(dm, labels, k);
    if within <= 0.0 {
        return f64::INFINITY;
    }
    ((total - within) / (k - 1) as f64) / (within / (n - k) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCountScore {
    pub k: usize,
    pub silhouette: f64,
    pub within: f64,
    pub calinski_harabasz: f64,
}

/// Picks the cluster count with the highest mean silhouette over
/// `[k_min, k_max]`; ties go to the smaller k. Elbow and Calinski–Harabasz
/// values are reported alongside but do not influence the choice.
pub fn select_cluster_count(dm: &DistanceMatrix, k_min: usize, k_max: usize) -> Result<(usize, Vec<ClusterCountScore>)> {
    let n = dm.len();
    if k_min < 2 || k_min > k_max || k_max + 1 > n {
        return Err(Error::Parameter(format!(
            "cluster count range [{k_min}, {k_max}] must satisfy 2 <= k_min <= k_max <= {}",
            n.saturating_sub(1)
        )));
    }
    let merges = ward_linkage(dm);
    let mut scores = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for k in k_min..=k_max {
        let labels = cut_dendrogram(n, &merges, k);
        let s = silhouette_score(dm, &labels, k);
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((k, s));
        }
        scores.push(ClusterCountScore {
            k,
            silhouette: s,
            within: within_dispersion(dm, &labels, k),
            calinski_harabasz: calinski_harabasz(dm, &labels, k),
        });
    }
    Ok((best.unwrap().0, scores))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetSubset {
    /// Column indices into the return matrix, one per surviving cluster, in
    /// ascending index order.
    pub indices: Vec<usize>,
    pub tickers: Vec<String>,
    /// Per-asset Sharpe of every input asset.
    pub asset_sharpe: Vec<f64>,
    pub skipped_clusters: Vec<usize>,
}

/// One asset per cluster: the highest daily Sharpe ratio, ties to the
/// lexicographically smaller ticker. Clusters made only of zero-variance
/// assets are skipped.
pub fn select_representatives(ca: &ClusterAssignment, rm: &ReturnMatrix, risk_free: f64, eps: f64) -> Result<AssetSubset> {
    if ca.labels.len() != rm.n_assets() {
        return Err(Error::DimensionMismatch {
            expected: rm.n_assets(),
            got: ca.labels.len(),
        });
    }
    let stats = ColumnStats::of(rm)?;
    let asset_sharpe: Vec<f64> = (0..rm.n_assets())
        .map(|i| sharpe_from(stats.mean[i], stats.std[i].powi(2), risk_free, eps))
        .collect();
    let mut indices = Vec::new();
    let mut skipped = Vec::new();
    for c in 0..ca.k {
        let best = ca
            .members(c)
            .into_iter()
            .filter(|&i| !stats.degenerate[i])
            .reduce(|best, i| {
                let (si, sb) = (asset_sharpe[i], asset_sharpe[best]);
                if si > sb || (si == sb && rm.tickers[i] < rm.tickers[best]) {
                    i
                } else {
                    best
                }
            });
        match best {
            Some(i) => indices.push(i),
            None => {
                warn!("cluster {c} has only zero-variance assets; skipped");
                skipped.push(c);
            }
        }
    }
    indices.sort_unstable();
    Ok(AssetSubset {
        tickers: indices.iter().map(|&i| rm.tickers[i].clone()).collect(),
        indices,
        asset_sharpe,
        skipped_clusters: skipped,
    })
}

pub fn write_cluster_report(mut w: impl Write, ca: &ClusterAssignment, subset: &AssetSubset) -> Result<()> {
    writeln!(w, "ticker,cluster,is_representative,asset_sharpe")?;
    for (i, t) in ca.tickers.iter().enumerate() {
        writeln!(
            w,
            "{t},{},{},{}",
            ca.labels[i],
            subset.tickers.contains(t),
            subset.asset_sharpe[i]
        )?;
    }
    Ok(())
}

pub fn write_silhouette_table(mut w: impl Write, scores: &[ClusterCountScore]) -> Result<()> {
    writeln!(w, "k,score")?;
    for s in scores {
        writeln!(w, "{},{}", s.k, s.silhouette)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::ReturnMatrix;
    use chrono::NaiveDate;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn rm(cols: &[&[f64]], names: &[&str]) -> ReturnMatrix {
        let t = cols[0].len();
        let dates = (0..t)
            .map(|i| NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Duration::days(i as i64))
            .collect();
        let r = Array2::from_shape_fn((t, cols.len()), |(i, j)| cols[j][i]);
        ReturnMatrix::new(dates, names.iter().map(|s| s.to_string()).collect(), r).unwrap()
    }

    fn dm(d: Array2<f64>) -> DistanceMatrix {
        let n = d.nrows();
        DistanceMatrix {
            tickers: (0..n).map(|i| format!("A{i}")).collect(),
            d,
        }
    }

    fn blocks(sizes: &[usize], within: f64, between: f64) -> DistanceMatrix {
        let mut group = Vec::new();
        for (g, &s) in sizes.iter().enumerate() {
            group.extend(std::iter::repeat_n(g, s));
        }
        let n = group.len();
        // small deterministic jitter so there are no exact ties
        dm(Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                0.0
            } else {
                let base = if group[i] == group[j] { within } else { between };
                base + 1e-3 * (((i + j) * 7 % 5) as f64)
            }
        }))
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0];
        let neg = [-1.0, -2.0, -3.0];
        let b = [1.0, 2.0, 4.0];
        let cm = correlation_matrix(&rm(&[&a, &neg, &b], &["A", "N", "B"])).unwrap();
        assert_eq!(cm.rho[[0, 0]], 1.0);
        assert!((cm.rho[[0, 1]] + 1.0).abs() < 1e-12);
        // hand computation: centered a = (-1,0,1), b = (-4/3,-1/3,5/3);
        // dot = 3, |a| = √2, |b| = √(42/9) → 3/√(2·42/9) = 0.981981...
        assert!((cm.rho[[0, 2]] - 0.98198).abs() < 1e-5);
        let err = correlation_matrix(&rm(&[&a, &[1.0, 1.0, 1.0]], &["A", "C"])).unwrap_err();
        assert!(matches!(err, Error::DegenerateColumns(ref t) if t == &vec!["C".to_string()]));
    }

    #[test]
    fn distance_examples() {
        let cm = CorrelationMatrix {
            tickers: vec!["a".into(), "b".into(), "c".into()],
            rho: array![[1.0, -1.0, 0.0], [-1.0, 1.0, 0.5], [0.0, 0.5, 1.0]],
        };
        let d = correlation_distance(&cm);
        assert_eq!(d.d[[0, 0]], 0.0);
        assert_eq!(d.d[[0, 1]], 0.0);
        assert_eq!(d.d[[0, 2]], 1.0);
        assert_eq!(d.d[[1, 2]], 0.5);
    }

    #[test]
    fn ward_extremes_and_blocks() {
        let d = blocks(&[3, 4], 0.05, 0.95);
        let ca = ward_cluster(&d, d.len()).unwrap();
        assert_eq!(ca.labels, (0..7).collect::<Vec<_>>());
        assert_eq!(ca.merge_history.len(), 6);
        let ca = ward_cluster(&d, 1).unwrap();
        assert!(ca.labels.iter().all(|&l| l == 0));
        let ca = ward_cluster(&d, 2).unwrap();
        assert_eq!(ca.labels, vec![0, 0, 0, 1, 1, 1, 1]);
        assert!(ward_cluster(&d, 8).is_err());
        assert!(ward_cluster(&d, 0).is_err());
    }

    #[test]
    fn lance_williams_matches_centroid_geometry() {
        // For Euclidean points the Ward update reproduces
        // sqrt(2 |A||B| / (|A|+|B|)) · ||c_A − c_B||.
        let pts: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [5.0, 5.0]];
        let d = dm(Array2::from_shape_fn((4, 4), |(i, j)| {
            ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt()
        }));
        let merges = ward_linkage(&d);
        assert_eq!((merges[0].a, merges[0].b), (0, 1));
        assert!((merges[0].cost - 1.0).abs() < 1e-12);
        // {0,1} centroid (0.5,0) vs {2} at (0,3): 2·2·1/3 · (0.25+9)
        let expect = (4.0 / 3.0 * 9.25f64).sqrt();
        assert_eq!((merges[1].a, merges[1].b), (2, 4));
        assert!((merges[1].cost - expect).abs() < 1e-12);
    }

    #[test]
    fn silhouette_selection() {
        let d = blocks(&[3, 3], 0.05, 0.9);
        assert_eq!(select_cluster_count(&d, 2, 5).unwrap().0, 2);
        let d = blocks(&[2, 3, 3], 0.05, 0.9);
        assert_eq!(select_cluster_count(&d, 2, 6).unwrap().0, 3);
        let eq = dm(array![[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]);
        let (k, scores) = select_cluster_count(&eq, 2, 2).unwrap();
        assert_eq!(k, 2);
        assert_eq!(scores.len(), 1);
        assert!(select_cluster_count(&eq, 3, 2).is_err());
        assert!(select_cluster_count(&eq, 2, 3).is_err());
    }

    #[test]
    fn representative_examples() {
        // A: mean 0.001 sd 0.01, B: mean 0.001 sd 0.02
        let a = [0.011, -0.009, 0.011, -0.009];
        let b = [0.021, -0.019, 0.021, -0.019];
        let r = rm(&[&a, &b], &["A", "B"]);
        let ca = ClusterAssignment {
            tickers: r.tickers.clone(),
            labels: vec![0, 0],
            k: 1,
            merge_history: vec![],
        };
        let sub = select_representatives(&ca, &r, 0.0, 1e-8).unwrap();
        assert_eq!(sub.tickers, vec!["A"]);

        let r = rm(&[&a, &a, &[0.0; 4]], &["Z", "Y", "C"]);
        let ca = ClusterAssignment {
            tickers: r.tickers.clone(),
            labels: vec![0, 0, 1],
            k: 2,
            merge_history: vec![],
        };
        let sub = select_representatives(&ca, &r, 0.0, 1e-8).unwrap();
        assert_eq!(sub.tickers, vec!["Y"]);
        assert_eq!(sub.skipped_clusters, vec![1]);

        let ca = ClusterAssignment {
            tickers: r.tickers.clone(),
            labels: vec![0, 1, 2],
            k: 3,
            merge_history: vec![],
        };
        assert_eq!(select_representatives(&ca, &r, 0.0, 1e-8).unwrap().tickers, vec!["Z", "Y"]);
    }

    fn random_distances(n: usize) -> impl Strategy<Value = DistanceMatrix> {
        prop::collection::vec(0.0f64..1.0, n * n).prop_map(move |v| {
            dm(Array2::from_shape_fn((n, n), |(i, j)| {
                if i == j {
                    0.0
                } else {
                    v[i.min(j) * n + i.max(j)]
                }
            }))
        })
    }

    proptest! {
        #[test]
        fn co_membership_is_permutation_invariant(
            d in random_distances(7),
            perm in Just((0..7).collect::<Vec<usize>>()).prop_shuffle(),
            k in 1usize..=7,
        ) {
            let base = ward_cluster(&d, k).unwrap();
            let pd = dm(Array2::from_shape_fn((7, 7), |(i, j)| d.d[[perm[i], perm[j]]]));
            let permuted = ward_cluster(&pd, k).unwrap();
            for i in 0..7 {
                for j in 0..7 {
                    let same = base.labels[perm[i]] == base.labels[perm[j]];
                    prop_assert_eq!(same, permuted.labels[i] == permuted.labels[j]);
                }
            }
        }

        #[test]
        fn labels_cover_every_cluster(d in random_distances(6), k in 1usize..=6) {
            let ca = ward_cluster(&d, k).unwrap();
            for c in 0..k {
                prop_assert!(ca.labels.contains(&c));
            }
            prop_assert!(ca.labels.iter().all(|&l| l < k));
        }

        #[test]
        fn distances_bounded(rho in prop::collection::vec(-1.0f64..=1.0, 16)) {
            let r = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 1.0 } else { rho[i.min(j) * 4 + i.max(j)] });
            let d = correlation_distance(&CorrelationMatrix { tickers: vec!["a".into(); 4], rho: r });
            for i in 0..4 {
                prop_assert_eq!(d.d[[i, i]], 0.0);
                for j in 0..4 {
                    prop_assert!((0.0..=1.0).contains(&d.d[[i, j]]));
                    prop_assert_eq!(d.d[[i, j]], d.d[[j, i]]);
                }
            }
        }
    }
}
