use nalgebra::DMatrix;
use rand::Rng as _;

use crate::error::{parameter, Result};
use crate::rng::{rng_from, stream};

/// Centres (K×P) and the within-cluster sum of squares after every Lloyd step.
#[derive(Clone, Debug)]
pub struct KMeans {
    pub centers: DMatrix<f64>,
    pub objective: Vec<f64>,
}

pub fn kmeans(x: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<DMatrix<f64>> {
    Ok(kmeans_with_trace(x, k, seed, max_iter)?.centers)
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols()).map(|p| (x[(i, p)] - c[(j, p)]).powi(2)).sum()
}

/// k-means++ seeding followed by Lloyd iterations until assignments stop changing.
pub fn kmeans_with_trace(x: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let (n, p) = (x.nrows(), x.ncols());
    if k == 0 || k > n {
        return Err(parameter(format!("cannot place {k} centres among {n} points")));
    }
    let mut rng = rng_from(seed, &[stream::INIT, 0x6b6d]);
    let mut centers = DMatrix::zeros(k, p);
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    chosen = i;
                    break;
                }
                t -= d;
            }
            chosen
        } else {
            // Every point already coincides with a centre.
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &centers, c));
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut objective = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut obj = 0.0;
        for i in 0..n {
            let (best, dist) = (0..k)
                .map(|j| (j, sq_dist(x, i, &centers, j)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
            obj += dist;
        }
        objective.push(obj);
        if !changed {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(k, p);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for d in 0..p {
                sums[(assign[i], d)] += x[(i, d)];
            }
        }
        for j in 0..k {
            // An emptied cluster keeps its previous centre.
            if counts[j] > 0 {
                for d in 0..p {
                    centers[(j, d)] = sums[(j, d)] / counts[j] as f64;
                }
            }
        }
    }
    Ok(KMeans { centers, objective })
}
