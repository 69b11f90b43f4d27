//! Two-means and density-based clustering of errors sets, and the
//! cluster-to-quality labelling rule.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scores::ErrorPoint;
use crate::error::{Error, Result};

/// Cluster id of noise points.
pub const NOISE: i64 = -1;

/// Label of bad-quality windows.
pub const LABEL_BAD: u8 = 0;
pub const LABEL_GOOD: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster id of every point; [`NOISE`] marks dbscan noise.
    pub ids: Vec<i64>,
    pub num_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub clustering: Clustering,
    pub centroids: Vec<[f64; 2]>,
    /// Within-cluster sum of squares after seeding and after each Lloyd
    /// iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: [f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, &c)| (j, dist2(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

pub const KMEANS_MAX_ITER: usize = 300;

/// Lloyd's algorithm with k-means++ seeding, run to an assignment fixpoint
/// or [`KMEANS_MAX_ITER`] iterations. An emptied cluster is re-seeded with
/// the point farthest from its centroid.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidArgument(format!("{} points for k = {k}", points.len())));
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::Degenerate("non-finite point".into()));
    }
    let mut distinct = points.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Degenerate(format!("fewer than {k} distinct points")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|&p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = d.iter().rposition(|&v| v > 0.0).expect("a distinct point remains");
        for (i, &v) in d.iter().enumerate() {
            if v > 0.0 && u < v {
                pick = i;
                break;
            }
            u -= v;
        }
        centroids.push(points[pick]);
    }

    let mut assign: Vec<usize> = points.iter().map(|&p| nearest(p, &centroids).0).collect();
    let objective_of = |assign: &[usize], centroids: &[[f64; 2]]| -> f64 {
        points.iter().zip(assign).map(|(&p, &a)| dist2(p, centroids[a])).sum()
    };
    let mut objective = vec![objective_of(&assign, &centroids)];
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITER {
        iterations += 1;
        // update
        let mut sum = vec![[0.0; 2]; k];
        let mut count = vec![0usize; k];
        for (&p, &a) in points.iter().zip(&assign) {
            sum[a][0] += p[0];
            sum[a][1] += p[1];
            count[a] += 1;
        }
        for j in 0..k {
            if count[j] > 0 {
                centroids[j] = [sum[j][0] / count[j] as f64, sum[j][1] / count[j] as f64];
            }
        }
        // assignment
        let mut next: Vec<usize> = points.iter().map(|&p| nearest(p, &centroids).0).collect();
        for j in 0..k {
            if !next.contains(&j) {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        dist2(points[a], centroids[next[a]])
                            .partial_cmp(&dist2(points[b], centroids[next[b]]))
                            .expect("finite")
                    })
                    .expect("nonempty");
                next[far] = j;
                centroids[j] = points[far];
            }
        }
        let changed = next != assign;
        assign = next;
        objective.push(objective_of(&assign, &centroids));
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        clustering: Clustering {
            ids: assign.iter().map(|&a| a as i64).collect(),
            num_clusters: k,
        },
        centroids,
        objective,
        iterations,
    })
}

/// Two-means clustering of an errors set.
pub fn kmeans2(points: &[ErrorPoint], seed: u64) -> Result<KMeansResult> {
    let coords: Vec<[f64; 2]> = points.iter().map(ErrorPoint::coords).collect();
    kmeans(&coords, 2, seed)
}

/// Mean plus twice the population standard deviation of all pairwise
/// Euclidean distances.
pub fn dbscan_eps(points: &[[f64; 2]]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument("eps needs at least two points".into()));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let (mut s, mut s2) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist2(points[i], points[j]).sqrt();
            s += d;
            s2 += d * d;
        }
    }
    let mean = s / pairs;
    let var = (s2 / pairs - mean * mean).max(0.0);
    Ok(mean + 2.0 * var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbscanResult {
    pub clustering: Clustering,
    pub eps: f64,
    pub core: Vec<bool>,
}

pub const DBSCAN_MIN_PTS: usize = 4;

/// Density clustering with the given `eps` (`None`: [`dbscan_eps`]).
/// A point is core when at least `min_pts` points, itself included, lie
/// within distance `eps`. Border points join the cluster of their nearest
/// core point; cluster ids are ordered by smallest member index.
pub fn dbscan_with_eps(points: &[[f64; 2]], min_pts: usize, eps: Option<f64>) -> Result<DbscanResult> {
    let n = points.len();
    if min_pts == 0 || n < min_pts {
        return Err(Error::InvalidArgument(format!("{n} points for min_pts = {min_pts}")));
    }
    let eps = match eps {
        Some(e) => e,
        None => dbscan_eps(points)?,
    };
    let within = |i: usize, j: usize| dist2(points[i], points[j]).sqrt() <= eps;
    let neighbours: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| within(i, j)).collect()).collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();

    // connected components of the core points
    let mut comp = vec![usize::MAX; n];
    let mut num = 0;
    for start in 0..n {
        if !core[start] || comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = num;
        while let Some(i) = stack.pop() {
            for &j in &neighbours[i] {
                if core[j] && comp[j] == usize::MAX {
                    comp[j] = num;
                    stack.push(j);
                }
            }
        }
        num += 1;
    }
    let mut ids = vec![NOISE; n];
    for i in 0..n {
        if core[i] {
            ids[i] = comp[i] as i64;
        } else if let Some(&c) = neighbours[i]
            .iter()
            .filter(|&&j| core[j])
            .min_by(|&&a, &&b| dist2(points[i], points[a]).partial_cmp(&dist2(points[i], points[b])).expect("finite"))
        {
            ids[i] = comp[c] as i64;
        }
    }
    Ok(DbscanResult {
        clustering: canonicalize(ids),
        eps,
        core,
    })
}

/// Density clustering of an errors set with the automatic eps.
pub fn dbscan(points: &[ErrorPoint], min_pts: usize) -> Result<DbscanResult> {
    let coords: Vec<[f64; 2]> = points.iter().map(ErrorPoint::coords).collect();
    dbscan_with_eps(&coords, min_pts, None)
}

/// Renumbers clusters `0, 1, …` by first appearance, keeping noise.
pub fn canonicalize(ids: Vec<i64>) -> Clustering {
    let mut map = BTreeMap::new();
    let ids: Vec<i64> = ids
        .into_iter()
        .map(|c| {
            if c == NOISE {
                NOISE
            } else {
                let next = map.len() as i64;
                *map.entry(c).or_insert(next)
            }
        })
        .collect();
    Clustering {
        ids,
        num_clusters: map.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub labels: Vec<u8>,
    /// Label given to each cluster id (noise included when present).
    pub cluster_label: BTreeMap<i64, u8>,
    /// Set when a single cluster without noise left nothing to separate.
    pub degenerate: bool,
}

/// Binary quality labels from a clustering: with two or more clusters the
/// one with the highest mean RMSE is bad (on ties the higher id), the
/// others good; noise is bad; a lone cluster is good.
pub fn label_clusters(clustering: &Clustering, points: &[ErrorPoint]) -> Result<ClusterLabeling> {
    if clustering.ids.len() != points.len() {
        return Err(Error::Shape(format!(
            "{} cluster ids for {} points",
            clustering.ids.len(),
            points.len()
        )));
    }
    if points.is_empty() {
        return Err(Error::Empty("clustering".into()));
    }
    let mut stats: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (&c, p) in clustering.ids.iter().zip(points) {
        let e = stats.entry(c).or_insert((0.0, 0));
        e.0 += p.rmse;
        e.1 += 1;
    }
    let clusters: Vec<(i64, f64)> = stats
        .iter()
        .filter(|(&c, _)| c != NOISE)
        .map(|(&c, &(s, n))| (c, s / n as f64))
        .collect();
    let bad = (clusters.len() >= 2).then(|| {
        clusters
            .iter()
            .fold(clusters[0], |best, &cur| if cur.1 >= best.1 { cur } else { best })
            .0
    });
    let mut cluster_label = BTreeMap::new();
    for &c in stats.keys() {
        let label = if c == NOISE || Some(c) == bad { LABEL_BAD } else { LABEL_GOOD };
        cluster_label.insert(c, label);
    }
    let degenerate = clusters.len() == 1 && !stats.contains_key(&NOISE);
    if degenerate {
        log::warn!("single cluster without noise: every window labelled good");
    }
    Ok(ClusterLabeling {
        labels: clustering.ids.iter().map(|c| cluster_label[c]).collect(),
        cluster_label,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(coords: &[[f64; 2]]) -> Vec<ErrorPoint> {
        coords
            .iter()
            .enumerate()
            .map(|(i, c)| ErrorPoint {
                window_id: i,
                rmse: c[0],
                mahalanobis: c[1],
                true_label: None,
            })
            .collect()
    }

    #[test]
    fn four_points_split_at_x() {
        let p = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        for seed in 0..20 {
            let r = kmeans(&p, 2, seed).unwrap();
            let ids = &r.clustering.ids;
            assert_eq!(ids[0], ids[1]);
            assert_eq!(ids[2], ids[3]);
            assert_ne!(ids[0], ids[2]);
            assert_eq!(*r.objective.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn kmeans_rejects_identical_points() {
        assert!(kmeans(&[[1.0, 1.0]; 5], 2, 0).is_err());
        assert!(kmeans(&[[1.0, 1.0]], 2, 0).is_err());
    }

    #[test]
    fn eps_of_three_points() {
        // pairwise distances 1, 1, 2
        let p = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let expected = 4.0 / 3.0 + 2.0 * (2.0f64 / 9.0).sqrt();
        assert!((dbscan_eps(&p).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 2.2761).abs() < 1e-4);
    }

    #[test]
    fn identical_points_form_one_core_cluster() {
        let r = dbscan_with_eps(&[[0.5, 0.5]; 6], 4, None).unwrap();
        assert_eq!(r.eps, 0.0);
        assert!(r.core.iter().all(|&c| c));
        assert_eq!(r.clustering.num_clusters, 1);
        assert!(r.clustering.ids.iter().all(|&c| c == 0));
    }

    #[test]
    fn border_points_and_noise() {
        let p = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [0.1, 0.1], [0.25, 0.0], [5.0, 5.0]];
        let r = dbscan_with_eps(&p, 4, Some(0.2)).unwrap();
        assert_eq!(r.clustering.ids, vec![0, 0, 0, 0, 0, NOISE]);
        assert!(!r.core[4]);
        assert!(dbscan_with_eps(&p[..3], 4, None).is_err());
    }

    #[test]
    fn labelling_rules() {
        let p = pts(&[[0.1, 0.0], [0.9, 0.0], [0.1, 0.0], [0.9, 0.0]]);
        let c = Clustering {
            ids: vec![0, 1, 0, 1],
            num_clusters: 2,
        };
        assert_eq!(label_clusters(&c, &p).unwrap().labels, vec![1, 0, 1, 0]);
        // relabelling the ids changes nothing
        let swapped = Clustering {
            ids: vec![1, 0, 1, 0],
            num_clusters: 2,
        };
        assert_eq!(label_clusters(&swapped, &p).unwrap().labels, vec![1, 0, 1, 0]);
        // tie: the lower id stays good
        let tie = pts(&[[0.5, 0.0], [0.5, 1.0]]);
        let c = Clustering {
            ids: vec![0, 1],
            num_clusters: 2,
        };
        assert_eq!(label_clusters(&c, &tie).unwrap().labels, vec![1, 0]);
        // noise is bad, a lone cluster good
        let c = Clustering {
            ids: vec![0, NOISE, 0, NOISE],
            num_clusters: 1,
        };
        let l = label_clusters(&c, &p).unwrap();
        assert_eq!(l.labels, vec![1, 0, 1, 0]);
        assert!(!l.degenerate);
        let c = Clustering {
            ids: vec![0; 4],
            num_clusters: 1,
        };
        let l = label_clusters(&c, &p).unwrap();
        assert_eq!(l.labels, vec![1; 4]);
        assert!(l.degenerate);
    }
}
