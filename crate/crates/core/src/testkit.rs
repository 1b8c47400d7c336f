//! Shared oracles for unit tests.

use crate::data::Dataset;

/// Multinomial logistic regression fitted by full-batch gradient descent;
/// the independent accuracy oracle for blob datasets.
pub(crate) fn logistic_oracle_accuracy(train: &Dataset, eval: &Dataset) -> f64 {
    let dim = train.sample_shape()[0];
    let k = train.n_classes();
    let mut w = vec![0.0; k * dim];
    let mut b = vec![0.0; k];
    let lr = 0.1;
    for _ in 0..300 {
        let mut gw = vec![0.0; k * dim];
        let mut gb = vec![0.0; k];
        for i in 0..train.len() {
            let x = train.sample(i).data();
            let y = train.label(i);
            let mut z: Vec<f64> = (0..k)
                .map(|c| b[c] + (0..dim).map(|d| w[c * dim + d] * x[d]).sum::<f64>())
                .collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in &mut z {
                *v = (*v - m).exp();
                sum += *v;
            }
            for c in 0..k {
                let p = z[c] / sum - if c == y { 1.0 } else { 0.0 };
                gb[c] += p;
                for d in 0..dim {
                    gw[c * dim + d] += p * x[d];
                }
            }
        }
        let n = train.len() as f64;
        for c in 0..k {
            b[c] -= lr * gb[c] / n;
            for d in 0..dim {
                w[c * dim + d] -= lr * gw[c * dim + d] / n;
            }
        }
    }
    let mut hits = 0;
    for i in 0..eval.len() {
        let x = eval.sample(i).data();
        let best = (0..k)
            .max_by(|a, c| {
                let za = b[*a] + (0..dim).map(|d| w[a * dim + d] * x[d]).sum::<f64>();
                let zc = b[*c] + (0..dim).map(|d| w[c * dim + d] * x[d]).sum::<f64>();
                za.partial_cmp(&zc).unwrap()
            })
            .unwrap();
        if best == eval.label(i) {
            hits += 1;
        }
    }
    hits as f64 / eval.len() as f64
}
