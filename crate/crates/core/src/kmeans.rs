//! Small fixed-dimension k-means with k-means++ seeding, used for route
//! clustering.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MAX_ITERATIONS: usize = 100;

fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn nearest_center(point: &[f64; 3], centers: &[[f64; 3]]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

fn kmeans_plus_plus_init(points: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            // All points coincide with a center; any pick works.
            rng.random_range(0..points.len())
        };
        centers.push(points[next]);
        for (d, p) in dist.iter_mut().zip(points.iter()) {
            *d = d.min(squared_distance(p, centers.last().unwrap()));
        }
    }
    centers
}

/// Lloyd iterations until the assignment stabilizes (at most
/// [`MAX_ITERATIONS`]); ties go to the lowest cluster index, and an emptied
/// cluster is reseeded at the point farthest from its center.
pub(crate) fn kmeans(points: &[[f64; 3]], k: usize, seed: u64) -> Vec<usize> {
    assert!(k >= 1 && k <= points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus_init(points, k, &mut rng);
    let mut labels = vec![0usize; points.len()];

    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (j, _) = nearest_center(p, &centers);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }

        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(labels.iter()) {
            for d in 0..3 {
                sums[l][d] += p[d];
            }
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] == 0 {
                let (far_idx, far_d) = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, nearest_center(p, &centers).1))
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap();
                if far_d > 0.0 {
                    centers[j] = points[far_idx];
                    changed = true;
                }
            } else {
                for d in 0..3 {
                    centers[j][d] = sums[j][d] / counts[j] as f64;
                }
            }
        }

        if !changed {
            break;
        }
    }
    labels
}
