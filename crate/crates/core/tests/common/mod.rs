//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use fastgpom::gp::{KernelParams, Point};

/// Matérn 7/2 written out from scratch.
pub fn kernel(a: Point, b: Point, p: &KernelParams) -> f64 {
    let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let r = 7f64.sqrt() * dist / p.lengthscale;
    p.signal_std.powi(2) * (1.0 + r + 2.0 * r * r / 5.0 + r.powi(3) / 15.0) * (-r).exp()
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, piv);
        inv.swap(c, piv);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = a[i][c];
                if f != 0.0 {
                    for j in 0..n {
                        a[i][j] -= f * a[c][j];
                        inv[i][j] -= f * inv[c][j];
                    }
                }
            }
        }
    }
    inv
}

/// Posterior mean and variance through an explicit matrix inverse.
pub fn direct_predict(x: &[Point], y: &[f64], p: &KernelParams, xs: &[Point]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| kernel(x[i], x[j], p) + if i == j { p.noise_std.powi(2) } else { 0.0 })
                .collect()
        })
        .collect();
    let kinv = invert(k);
    let mut mu = Vec::new();
    let mut var = Vec::new();
    for &s in xs {
        let ks: Vec<f64> = x.iter().map(|&xi| kernel(xi, s, p)).collect();
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| kinv[i][j] * ks[j]).sum()).collect();
        mu.push((0..n).map(|i| w[i] * y[i]).sum());
        var.push(kernel(s, s, p) - (0..n).map(|i| w[i] * ks[i]).sum::<f64>());
    }
    (mu, var)
}

/// Probability that a random (occupied, free) pair is ordered correctly,
/// ties counting one half.
pub fn brute_auc(probs: &[f64], labels: &[u8]) -> f64 {
    let mut score = 0.0;
    let mut pairs = 0.0;
    for i in 0..probs.len() {
        if labels[i] != 1 {
            continue;
        }
        for j in 0..probs.len() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if probs[i] > probs[j] {
                score += 1.0;
            } else if probs[i] == probs[j] {
                score += 0.5;
            }
        }
    }
    score / pairs
}

/// Distance from `(x, y)` along `angle` to the boundary of the axis-aligned
/// box `[x0, x1] × [y0, y1]`, for a point inside it.
pub fn distance_to_box(x: f64, y: f64, angle: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let (c, s) = (angle.cos(), angle.sin());
    let mut t = f64::INFINITY;
    if c > 0.0 {
        t = t.min((x1 - x) / c);
    } else if c < 0.0 {
        t = t.min((x0 - x) / c);
    }
    if s > 0.0 {
        t = t.min((y1 - y) / s);
    } else if s < 0.0 {
        t = t.min((y0 - y) / s);
    }
    t
}
