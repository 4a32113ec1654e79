use crate::autodiff::{Tape, Tensor};

use super::{Result, TrainError};

const PROBE_STEPS: usize = 300;
const PROBE_LR: f64 = 0.05;

/// Multinomial logistic regression fitted on `train_x` with full-batch Adam,
/// scored on `test_x`. Features are standardised with the training
/// statistics. Returns test accuracy.
pub fn linear_probe_accuracy(
    train_x: &Tensor<f64>,
    train_y: &[usize],
    test_x: &Tensor<f64>,
    test_y: &[usize],
    num_classes: usize,
) -> Result<f64> {
    let (n, d) = match *train_x.shape() {
        [n, d] => (n, d),
        ref s => return Err(TrainError::Config(format!("probe features must be 2-D, got {s:?}"))),
    };
    if test_x.shape().len() != 2 || test_x.shape()[1] != d {
        return Err(TrainError::Config(format!(
            "probe test features {:?} do not match train width {d}",
            test_x.shape()
        )));
    }
    if n != train_y.len() || test_x.shape()[0] != test_y.len() {
        return Err(TrainError::Config("probe labels and features differ in length".into()));
    }
    if test_y.is_empty() {
        return Err(TrainError::EmptySplit("probe test"));
    }

    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for r in 0..n {
        for (j, x) in train_x.row(r).iter().enumerate() {
            mean[j] += x / n as f64;
        }
    }
    for r in 0..n {
        for (j, x) in train_x.row(r).iter().enumerate() {
            var[j] += (x - mean[j]).powi(2) / n as f64;
        }
    }
    let scale: Vec<f64> = var.iter().map(|v| 1.0 / v.sqrt().max(1e-8)).collect();
    let standardise = |t: &Tensor<f64>| -> Result<Tensor<f64>> {
        let rows = t.shape()[0];
        let mut out = Vec::with_capacity(rows * d);
        for r in 0..rows {
            out.extend(t.row(r).iter().enumerate().map(|(j, x)| (x - mean[j]) * scale[j]));
        }
        Ok(Tensor::new(vec![rows, d], out)?)
    };
    let xs = standardise(train_x)?;
    let xt = standardise(test_x)?;

    let mut w = vec![0.0; num_classes * d];
    let mut b = vec![0.0; num_classes];
    let mut moments = [
        (vec![0.0; w.len()], vec![0.0; w.len()]),
        (vec![0.0; b.len()], vec![0.0; b.len()]),
    ];
    let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
    for step in 1..=PROBE_STEPS {
        let mut tape = Tape::new();
        let x = tape.leaf(xs.clone());
        let wv = tape.param(Tensor::new(vec![num_classes, d], w.clone())?);
        let bv = tape.param(Tensor::new(vec![num_classes], b.clone())?);
        let logits = tape.dense(x, wv, bv)?;
        let loss = tape.softmax_cross_entropy(logits, train_y)?;
        tape.backward(loss)?;
        let grads = [tape.take_grad(wv).unwrap_or_default(), tape.take_grad(bv).unwrap_or_default()];
        let c1 = 1.0 - b1.powi(step as i32);
        let c2 = 1.0 - b2.powi(step as i32);
        for ((p, g), (m, v)) in [&mut w, &mut b].into_iter().zip(&grads).zip(moments.iter_mut()) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= PROBE_LR * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }

    let mut tape = Tape::new();
    let x = tape.leaf(xt);
    let wv = tape.leaf(Tensor::new(vec![num_classes, d], w)?);
    let bv = tape.leaf(Tensor::new(vec![num_classes], b)?);
    let logits = tape.dense(x, wv, bv)?;
    let out = tape.value(logits);
    let correct = test_y
        .iter()
        .enumerate()
        .filter(|&(r, &y)| {
            let row = out.row(r);
            let best = (0..num_classes).fold(0, |best, c| if row[c] > row[best] { c } else { best });
            best == y
        })
        .count();
    Ok(correct as f64 / test_y.len() as f64)
}
