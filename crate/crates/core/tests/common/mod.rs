#![allow(dead_code, clippy::needless_range_loop)]
//! Naive scalar-loop loss implementations used as test oracles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use xmodal_core::tensor::Tensor;

pub type Rows = Vec<Vec<f64>>;

pub fn rows(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Rows {
    (0..t)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

pub fn tensor(r: &Rows) -> Tensor {
    Tensor::new(vec![r.len(), r[0].len()], r.concat()).unwrap()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn oracle_term(src: &Rows, tgt: &Rows, i: usize, tau: f64, include_positive: bool) -> f64 {
    let pos = (cos(&src[i], &tgt[i]) / tau).exp();
    let mut denom = 0.0;
    for q in 0..tgt.len() {
        if q != i || include_positive {
            denom += (cos(&src[i], &tgt[q]) / tau).exp();
        }
    }
    -(pos / denom).ln()
}

pub fn oracle_mim(zj: &Rows, zk: &Rows, tau: f64, include_positive: bool) -> f64 {
    let t = zj.len();
    let mut s = 0.0;
    for i in 0..t {
        s += oracle_term(zj, zk, i, tau, include_positive)
            + oracle_term(zk, zj, i, tau, include_positive);
    }
    s / (2 * t) as f64
}

pub fn oracle_mde(yj: &Rows, yk: &Rows) -> f64 {
    let t = yj.len();
    -(0..t)
        .map(|i| (1.0 + cos(&yj[i], &yk[i]).exp()).ln())
        .sum::<f64>()
        / t as f64
}

pub fn oracle_nn(y: &Rows) -> Vec<usize> {
    (0..y.len())
        .map(|i| {
            let mut best = None;
            let mut best_d = f64::INFINITY;
            for k in 0..y.len() {
                if k == i {
                    continue;
                }
                let d: f64 = y[i].iter().zip(&y[k]).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = Some(k);
                }
            }
            best.unwrap()
        })
        .collect()
}

pub fn oracle_msp(yj: &Rows, yk: &Rows) -> f64 {
    let t = yj.len();
    let (nj, nk) = (oracle_nn(yj), oracle_nn(yk));
    let s: f64 = (0..t)
        .map(|i| cos(&yj[i], &yj[nj[i]]) + cos(&yk[i], &yk[nk[i]]))
        .sum();
    -s / (2 * t) as f64
}
