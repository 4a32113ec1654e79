//! Central-difference gradient checking shared by the gradient tests and the
//! acceptance target.

#![allow(dead_code)]

use hyfuse_core::autodiff::{Tape, Tensor, Var};
use hyfuse_core::hypergeom::PoincareConfig;
use hyfuse_core::models::{self, ModelParams, ModelSpec};
use hyfuse_core::rng::{self, StreamRng};
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const TRIALS: usize = 50;

pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;
pub type Case = Box<dyn FnMut(&mut StreamRng) -> (Vec<Tensor<f64>>, Box<Build>)>;

pub fn random(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// ‖a − n‖ / max(‖a‖, ‖n‖), with a floor for all-zero gradients.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Builds `sum(f(inputs) * probe)` so every output coordinate gets a distinct
/// upstream weight, then compares the gradient of every input.
pub fn check(inputs: &[Tensor<f64>], probe_seed: u64, f: &Build) -> f64 {
    let eval = |xs: &[Tensor<f64>], grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs
            .iter()
            .map(|x| tape.leaf(x.clone().with_requires_grad(grads)))
            .collect();
        let out = f(&mut tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        let probe = random(&mut rng::stream(probe_seed, "probe", &[]), &shape, 1.0);
        let p = tape.leaf(probe);
        let prod = tape.mul(out, p).unwrap();
        let loss = tape.sum(prod).unwrap();
        let value = tape.value(loss).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        tape.backward(loss).unwrap();
        let g = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();
        (value, g)
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst = 0.0f64;
    for (k, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            *slot = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * STEP);
        }
        worst = worst.max(rel_err(a, &numeric));
    }
    worst
}

/// Worst relative error of `make` over [`TRIALS`] random instances.
pub fn worst_error(label: &str, make: &mut Case) -> f64 {
    let mut worst = 0.0f64;
    for t in 0..TRIALS {
        let mut r = rng::stream(7, label, &[t as u64]);
        let (inputs, f) = make(&mut r);
        worst = worst.max(check(&inputs, t as u64, &*f));
    }
    worst
}

pub fn dims(r: &mut impl Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

fn random_cfg(r: &mut impl Rng) -> PoincareConfig {
    PoincareConfig::with_curvature(r.random_range(0.25..2.0)).unwrap()
}

/// Row-wise points of norm at most `max_norm`.
pub fn ball_rows(r: &mut impl Rng, batch: usize, dim: usize, max_norm: f64) -> Tensor<f64> {
    let mut t = random(r, &[batch, dim], 1.0);
    for row in t.data_mut().chunks_mut(dim) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let target = r.random_range(0.05..max_norm);
        row.iter_mut().for_each(|x| *x *= target / n);
    }
    t
}

fn binary(shape_of: fn(&mut StreamRng) -> ([usize; 2], [usize; 2]), op: fn(&mut Tape<f64>, Var, Var) -> Var) -> Case {
    Box::new(move |r| {
        let (sa, sb) = shape_of(r);
        (
            vec![random(r, &sa, 1.0), random(r, &sb, 1.0)],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| op(t, v[0], v[1])),
        )
    })
}

fn same_shape(r: &mut StreamRng) -> ([usize; 2], [usize; 2]) {
    let s = [dims(r, 1, 4), dims(r, 1, 5)];
    (s, s)
}

/// Every differentiable tape op, the three geometry ops included.
pub fn op_cases() -> Vec<(&'static str, Case)> {
    let mut cases: Vec<(&'static str, Case)> = Vec::new();
    cases.push((
        "dense",
        Box::new(|r| {
            let (b, n, m) = (dims(r, 1, 4), dims(r, 1, 6), dims(r, 1, 5));
            let inputs = vec![random(r, &[b, n], 1.0), random(r, &[m, n], 1.0), random(r, &[m], 1.0)];
            (inputs, Box::new(|t: &mut Tape<f64>, v: &[Var]| t.dense(v[0], v[1], v[2]).unwrap()))
        }),
    ));
    cases.push((
        "conv1d",
        Box::new(|r| {
            let (b, cin, cout, k) = (dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 4), dims(r, 1, 3));
            let len = k + dims(r, 0, 5);
            let inputs = vec![
                random(r, &[b, cin, len], 1.0),
                random(r, &[cout, cin, k], 1.0),
                random(r, &[cout], 1.0),
            ];
            (inputs, Box::new(|t: &mut Tape<f64>, v: &[Var]| t.conv1d(v[0], v[1], v[2]).unwrap()))
        }),
    ));
    cases.push((
        "relu",
        Box::new(|r| {
            let shape = [dims(r, 1, 4), dims(r, 1, 6)];
            // keep entries away from the kink so the finite difference is valid
            let mut x = random(r, &shape, 1.0);
            for v in x.data_mut() {
                if v.abs() < 1e-3 {
                    *v += 0.01;
                }
            }
            (vec![x], Box::new(|t: &mut Tape<f64>, v: &[Var]| t.relu(v[0]).unwrap()))
        }),
    ));
    cases.push(("add", binary(same_shape, |t, a, b| t.add(a, b).unwrap())));
    cases.push(("mul", binary(same_shape, |t, a, b| t.mul(a, b).unwrap())));
    cases.push((
        "concat",
        binary(
            |r| {
                let b = dims(r, 1, 4);
                ([b, dims(r, 1, 4)], [b, dims(r, 1, 4)])
            },
            |t, a, b| t.concat(a, b).unwrap(),
        ),
    ));
    cases.push((
        "sum",
        Box::new(|r| {
            let shape = [dims(r, 1, 4), dims(r, 1, 5)];
            (vec![random(r, &shape, 1.0)], Box::new(|t: &mut Tape<f64>, v: &[Var]| t.sum(v[0]).unwrap()))
        }),
    ));
    cases.push((
        "reshape+flatten",
        Box::new(|r| {
            let (b, c, l) = (dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 4));
            (
                vec![random(r, &[b, c * l], 1.0)],
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                    let x = t.reshape(v[0], &[b, c, l]).unwrap();
                    t.flatten(x).unwrap()
                }),
            )
        }),
    ));
    cases.push((
        "dropout",
        Box::new(|r| {
            let shape = [dims(r, 1, 4), dims(r, 2, 6)];
            let seed: u64 = r.random();
            (
                vec![random(r, &shape, 1.0)],
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                    // same mask on every evaluation
                    let mut mask_rng = rng::stream(seed, "mask", &[]);
                    t.dropout(v[0], 0.3, true, &mut mask_rng).unwrap()
                }),
            )
        }),
    ));
    cases.push((
        "softmax_cross_entropy",
        Box::new(|r| {
            let (b, c) = (dims(r, 1, 5), dims(r, 2, 5));
            let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..c)).collect();
            (
                vec![random(r, &[b, c], 3.0)],
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.softmax_cross_entropy(v[0], &labels).unwrap()),
            )
        }),
    ));
    cases.push((
        "exp_map",
        Box::new(|r| {
            let cfg = random_cfg(r);
            let shape = [dims(r, 1, 3), dims(r, 1, 6)];
            (
                vec![random(r, &shape, 0.8)],
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.exp_map_zero(v[0], &cfg).unwrap()),
            )
        }),
    ));
    cases.push((
        "log_map",
        Box::new(|r| {
            let cfg = random_cfg(r);
            let (b, d) = (dims(r, 1, 3), dims(r, 1, 6));
            (
                vec![ball_rows(r, b, d, 0.9)],
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.log_map_zero(v[0], &cfg).unwrap()),
            )
        }),
    ));
    cases.push((
        "mobius_add",
        Box::new(|r| {
            let cfg = random_cfg(r);
            let (b, d) = (dims(r, 1, 3), dims(r, 1, 6));
            (
                vec![ball_rows(r, b, d, 0.7), ball_rows(r, b, d, 0.7)],
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.mobius_add(v[0], v[1], &cfg).unwrap()),
            )
        }),
    ));
    cases
}

/// Loss of a whole model as a function of its parameters.
pub fn model_loss(spec: &ModelSpec, params: &ModelParams<f64>, a: &Tensor<f64>, b: Option<&Tensor<f64>>, labels: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let vars = models::register_params(&mut tape, params, false);
    let va = tape.leaf(a.clone());
    let vb = b.map(|b| tape.leaf(b.clone()));
    let mut r = rng::stream(0, "unused", &[]);
    let out = models::forward(spec, &mut tape, &vars, va, vb, false, &mut r).unwrap();
    let loss = tape.softmax_cross_entropy(out.logits, labels).unwrap();
    tape.value(loss).data()[0]
}

/// Worst relative error over every parameter tensor.
pub fn model_grad_error(spec: &ModelSpec, params: &ModelParams<f64>, a: &Tensor<f64>, b: Option<&Tensor<f64>>, labels: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let vars = models::register_params(&mut tape, params, true);
    let va = tape.leaf(a.clone());
    let vb = b.map(|b| tape.leaf(b.clone()));
    let mut r = rng::stream(0, "unused", &[]);
    let out = models::forward(spec, &mut tape, &vars, va, vb, false, &mut r).unwrap();
    let loss = tape.softmax_cross_entropy(out.logits, labels).unwrap();
    tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (name, &v) in &vars {
        let analytic = tape.grad(v).unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += STEP;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= STEP;
            *slot = (model_loss(spec, &plus, a, b, labels) - model_loss(spec, &minus, a, b, labels)) / (2.0 * STEP);
        }
        let e = rel_err(&analytic, &numeric);
        assert!(e.is_finite(), "{name}: non-finite error");
        worst = worst.max(e);
    }
    worst
}

pub fn small(mut spec: ModelSpec) -> ModelSpec {
    spec.hidden_units = 6;
    spec.conv_filters = (3, 4);
    spec.fusion_width = 5;
    spec
}

/// End-to-end HYFuse error on a 2-sample batch, `order` being `a-first` or
/// `b-first`.
pub fn hyfuse_error(seed: u64, order: &str) -> f64 {
    let mut spec = small(ModelSpec::hyfuse(8, 7, 3));
    spec.fusion_order = order.parse().unwrap();
    let mut params = models::build::<f64>(&spec, seed).unwrap();
    // shrink the projections so the fused point stays off the clamp
    for name in ["proj_a.weight", "proj_b.weight"] {
        params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|w| *w *= 0.2);
    }
    let mut r = rng::stream(seed, "hyfuse-input", &[]);
    let a = random(&mut r, &[2, 8], 1.0);
    let b = random(&mut r, &[2, 7], 1.0);
    model_grad_error(&spec, &params, &a, Some(&b), &[1, 2])
}
