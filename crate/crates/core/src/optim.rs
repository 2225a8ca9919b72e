//! Adam with bias correction, and weighted k-means with k-means++ seeding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: vec![0.0; dim], v: vec![0.0; dim] }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Clustering {
    pub centers: Vec<[f64; 3]>,
    pub labels: Vec<usize>,
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(p: &[f64; 3], centers: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = d2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut r = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        if r < w {
            return Some(i);
        }
        r -= w;
    }
    weights.iter().rposition(|&w| w > 0.0)
}

/// Weighted k-means. Seeding is k-means++; when fewer than `k` distinct
/// points exist the remaining centers duplicate existing ones (callers
/// decide how to break the tie).
pub fn kmeans(
    points: &[[f64; 3]],
    weights: &[f64],
    k: usize,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> Clustering {
    assert_eq!(points.len(), weights.len());
    assert!(k > 0 && !points.is_empty());
    let mut centers = Vec::with_capacity(k);
    let first = weighted_pick(rng, weights).unwrap_or(0);
    centers.push(points[first]);
    let mut dist: Vec<f64> = points.iter().map(|p| d2(p, &centers[0])).collect();
    while centers.len() < k {
        let scores: Vec<f64> = dist.iter().zip(weights).map(|(d, w)| d * w).collect();
        match weighted_pick(rng, &scores) {
            Some(i) => {
                let c = points[i];
                centers.push(c);
                for (d, p) in dist.iter_mut().zip(points) {
                    *d = d.min(d2(p, &c));
                }
            }
            None => {
                let c = centers[centers.len() - 1];
                centers.push(c);
            }
        }
    }

    let mut labels = vec![0; points.len()];
    for iter in 0..max_iter {
        let mut changed = false;
        for (label, p) in labels.iter_mut().zip(points) {
            let (j, _) = nearest(p, &centers);
            if *label != j {
                changed = true;
                *label = j;
            }
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut mass = vec![0.0; k];
        for ((p, w), &l) in points.iter().zip(weights).zip(&labels) {
            mass[l] += w;
            for c in 0..3 {
                sums[l][c] += w * p[c];
            }
        }
        for j in 0..k {
            if mass[j] > 0.0 {
                centers[j] = [sums[j][0] / mass[j], sums[j][1] / mass[j], sums[j][2] / mass[j]];
            }
        }
        if !changed && iter > 0 {
            break;
        }
    }
    Clustering { centers, labels }
}
