//! Seeded mini-batch k-means (k-means++ initialization, per-center learning
//! rates) with a repair step that guarantees exactly `k` non-empty clusters.
//!
//! When every input is a unit vector the centers are kept on the unit sphere,
//! so assignment follows cosine similarity. A few full assignment passes
//! refine the mini-batch centers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MiniBatchParams {
    pub batch_size: usize,
    pub max_iterations: usize,
}

impl Default for MiniBatchParams {
    fn default() -> Self {
        MiniBatchParams {
            batch_size: 64,
            max_iterations: 50,
        }
    }
}

/// Full assignment passes after the mini-batch phase (fewer if stable).
pub const REFINE_PASSES: usize = 10;

fn project_unit(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lower index.
fn nearest(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn plus_plus_init(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just past the accumulated total.
            pick.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).unwrap())
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points[next]));
        }
    }
    chosen
}

/// Partitions `items` into `min(k, |items|)` clusters.
///
/// Output clusters list member ids ascending and are ordered by their
/// smallest member. The result depends only on the item set, `k`, `seed`
/// and `params`, not on input order.
pub fn mini_batch_kmeans<K: Ord + Clone + Sync>(
    items: &[(K, &[f64])],
    k: usize,
    seed: u64,
    params: MiniBatchParams,
) -> Result<Vec<Vec<K>>> {
    if items.is_empty() {
        return Err(Error::validation("cannot cluster an empty item list"));
    }
    if k == 0 {
        return Err(Error::validation("cluster count must be at least 1"));
    }
    if params.batch_size == 0 {
        return Err(Error::validation("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|a, b| items[*a].0.cmp(&items[*b].0));
    let points: Vec<&[f64]> = order.iter().map(|i| items[*i].1).collect();
    let n = points.len();
    let k = k.min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = plus_plus_init(&points, k, &mut rng)
        .into_iter()
        .map(|i| points[i].to_vec())
        .collect();
    let spherical = points
        .iter()
        .all(|p| (p.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
    let mut counts = vec![0u64; k];

    for _ in 0..params.max_iterations {
        let batch: Vec<usize> = if n <= params.batch_size {
            (0..n).collect()
        } else {
            (0..params.batch_size).map(|_| rng.random_range(0..n)).collect()
        };
        let assigned: Vec<usize> = batch.iter().map(|i| nearest(points[*i], &centers)).collect();
        for (i, c) in batch.iter().zip(assigned) {
            counts[c] += 1;
            let lr = 1.0 / counts[c] as f64;
            for (cv, xv) in centers[c].iter_mut().zip(points[*i]) {
                *cv = (1.0 - lr) * *cv + lr * xv;
            }
            if spherical {
                project_unit(&mut centers[c]);
            }
        }
    }

    let mut assignment: Vec<usize> = points.par_iter().map(|p| nearest(p, &centers)).collect();
    repair_empty(&points, &mut centers, &mut assignment);
    for _ in 0..REFINE_PASSES {
        let dim = centers[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, c) in points.iter().zip(&assignment) {
            for (s, x) in sums[*c].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let sizes = assignment.iter().fold(vec![0usize; k], |mut acc, c| {
            acc[*c] += 1;
            acc
        });
        for ((center, sum), size) in centers.iter_mut().zip(sums).zip(sizes) {
            *center = sum.into_iter().map(|x| x / size as f64).collect();
            if spherical {
                project_unit(center);
            }
        }
        let next: Vec<usize> = points.par_iter().map(|p| nearest(p, &centers)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
        repair_empty(&points, &mut centers, &mut assignment);
    }

    let mut clusters: Vec<Vec<K>> = vec![Vec::new(); k];
    for (pos, c) in assignment.iter().enumerate() {
        clusters[*c].push(items[order[pos]].0.clone());
    }
    for c in &mut clusters {
        c.sort();
    }
    clusters.sort_by(|a, b| a[0].cmp(&b[0]));
    Ok(clusters)
}

/// Moves the point farthest from the largest cluster's center into each
/// empty cluster until none is empty.
fn repair_empty(points: &[&[f64]], centers: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centers.len();
    loop {
        let mut sizes = vec![0usize; k];
        for c in assignment.iter() {
            sizes[*c] += 1;
        }
        let Some(empty) = sizes.iter().position(|s| *s == 0) else {
            return;
        };
        let largest = (0..k).max_by(|a, b| sizes[*a].cmp(&sizes[*b]).then(b.cmp(a))).unwrap();
        debug_assert!(sizes[largest] >= 2);
        let mut victim = None;
        let mut far = -1.0;
        for (i, c) in assignment.iter().enumerate() {
            if *c == largest {
                let d = sq_dist(points[i], &centers[largest]);
                if d > far {
                    far = d;
                    victim = Some(i);
                }
            }
        }
        let v = victim.unwrap();
        assignment[v] = empty;
        centers[empty] = points[v].to_vec();
    }
}
