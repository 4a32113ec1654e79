use std::collections::BTreeMap;

use rand::Rng;

use super::{FusionOrder, ModelError, ModelKind, ModelParams, ModelSpec, Result};
use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::rng;

/// Tape handles for every parameter tensor, keyed like [`ModelParams`].
pub type ParamVars = BTreeMap<String, Var>;

/// Handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    /// Hidden activation feeding the output layer (before dropout).
    pub penultimate: Var,
    /// The fused ball point (HYFuse only), exposed for inspection.
    pub fused: Option<Var>,
    /// Per-branch projections before the exponential map (HYFuse only).
    pub projections: Option<(Var, Var)>,
    /// Log-mapped fused point, the head input (HYFuse only).
    pub tangent: Option<Var>,
}

/// Puts every parameter on the tape. With `trainable` set the leaves receive
/// gradients on `backward`.
pub fn register_params<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    trainable: bool,
) -> ParamVars {
    params
        .iter()
        .map(|(name, t)| {
            let leaf = t.clone().with_requires_grad(trainable);
            (name.clone(), tape.leaf(leaf))
        })
        .collect()
}

fn var(vars: &ParamVars, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| ModelError::Config(format!("missing parameter {name}")))
}

fn dense<T: Scalar>(tape: &mut Tape<T>, vars: &ParamVars, layer: &str, x: Var) -> Result<Var> {
    let w = var(vars, &format!("{layer}.weight"))?;
    let b = var(vars, &format!("{layer}.bias"))?;
    Ok(tape.dense(x, w, b)?)
}

fn check_input<T: Scalar>(tape: &Tape<T>, x: Var, dim: usize) -> Result<usize> {
    match *tape.value(x).shape() {
        [batch, d] if d == dim => Ok(batch),
        [_, d] => Err(ModelError::Dim {
            expected: dim,
            found: d,
        }),
        ref s => Err(ModelError::Config(format!(
            "model input must be [batch, dim], got {s:?}"
        ))),
    }
}

/// conv(f1) → ReLU → conv(f2) → ReLU → flatten, with the embedding treated as
/// a one-channel sequence.
fn conv_encoder<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let (batch, dim) = {
        let s = tape.value(x).shape();
        (s[0], s[1])
    };
    let mut h = tape.reshape(x, &[batch, 1, dim])?;
    for layer in ["conv1", "conv2"] {
        let w = var(vars, &format!("{prefix}.{layer}.weight"))?;
        let b = var(vars, &format!("{prefix}.{layer}.bias"))?;
        h = tape.conv1d(h, w, b)?;
        h = tape.relu(h)?;
    }
    Ok(tape.flatten(h)?)
}

/// dense(hidden) → ReLU → dropout → dense(classes).
fn head<T: Scalar, R: Rng + ?Sized>(
    spec: &ModelSpec,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    x: Var,
    training: bool,
    rng: &mut R,
) -> Result<(Var, Var)> {
    let h = dense(tape, vars, "head.hidden", x)?;
    let penultimate = tape.relu(h)?;
    let dropped = tape.dropout(penultimate, spec.dropout_rate, training, rng)?;
    let logits = dense(tape, vars, "head.out", dropped)?;
    Ok((penultimate, logits))
}

/// FCN or CNN forward pass on a `[batch, dim]` input.
pub fn forward_single<T: Scalar, R: Rng + ?Sized>(
    spec: &ModelSpec,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    input: Var,
    training: bool,
    rng: &mut R,
) -> Result<Forward> {
    check_input(tape, input, spec.input_dims[0])?;
    let features = match spec.kind {
        ModelKind::Fcn => input,
        ModelKind::Cnn => conv_encoder(tape, vars, "enc", input)?,
        k => {
            return Err(ModelError::Config(format!(
                "{k} is a fusion model and needs two inputs"
            )))
        }
    };
    let (penultimate, logits) = head(spec, tape, vars, features, training, rng)?;
    Ok(Forward {
        logits,
        penultimate,
        fused: None,
        projections: None,
        tangent: None,
    })
}

fn encode_pair<T: Scalar>(
    spec: &ModelSpec,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    a: Var,
    b: Var,
) -> Result<(Var, Var)> {
    let batch_a = check_input(tape, a, spec.input_dims[0])?;
    let batch_b = check_input(tape, b, spec.input_dims[1])?;
    if batch_a != batch_b {
        return Err(ModelError::Config(format!(
            "branch batch sizes differ: {batch_a} vs {batch_b}"
        )));
    }
    let fa = conv_encoder(tape, vars, "enc_a", a)?;
    let fb = conv_encoder(tape, vars, "enc_b", b)?;
    Ok((fa, fb))
}

/// Hyperbolic fusion: per branch conv encoder and projection to the fusion
/// width, exponential map, Möbius addition, logarithmic map, then the head.
pub fn forward_hyfuse<T: Scalar, R: Rng + ?Sized>(
    spec: &ModelSpec,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    a: Var,
    b: Var,
    training: bool,
    rng: &mut R,
) -> Result<Forward> {
    if spec.kind != ModelKind::Hyfuse {
        return Err(ModelError::Config(format!(
            "forward_hyfuse called with a {} spec",
            spec.kind
        )));
    }
    let (fa, fb) = encode_pair(spec, tape, vars, a, b)?;
    let za = dense(tape, vars, "proj_a", fa)?;
    let zb = dense(tape, vars, "proj_b", fb)?;
    let (wa, wb) = (tape.value(za).shape()[1], tape.value(zb).shape()[1]);
    if wa != wb {
        return Err(ModelError::Config(format!(
            "fusion width mismatch between branches: {wa} vs {wb}"
        )));
    }
    let cfg = spec.poincare;
    let pa = tape.exp_map_zero(za, &cfg)?;
    let pb = tape.exp_map_zero(zb, &cfg)?;
    let fused = match spec.fusion_order {
        FusionOrder::AFirst => tape.mobius_add(pa, pb, &cfg)?,
        FusionOrder::BFirst => tape.mobius_add(pb, pa, &cfg)?,
    };
    let tangent = tape.log_map_zero(fused, &cfg)?;
    let (penultimate, logits) = head(spec, tape, vars, tangent, training, rng)?;
    Ok(Forward {
        logits,
        penultimate,
        fused: Some(fused),
        projections: Some((za, zb)),
        tangent: Some(tangent),
    })
}

/// Concatenation baseline: both conv encodings side by side, then the head.
pub fn forward_concat<T: Scalar, R: Rng + ?Sized>(
    spec: &ModelSpec,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    a: Var,
    b: Var,
    training: bool,
    rng: &mut R,
) -> Result<Forward> {
    if spec.kind != ModelKind::Concat {
        return Err(ModelError::Config(format!(
            "forward_concat called with a {} spec",
            spec.kind
        )));
    }
    let (fa, fb) = encode_pair(spec, tape, vars, a, b)?;
    let joined = tape.concat(fa, fb)?;
    let (penultimate, logits) = head(spec, tape, vars, joined, training, rng)?;
    Ok(Forward {
        logits,
        penultimate,
        fused: None,
        projections: None,
        tangent: None,
    })
}

/// Dispatches on the model kind.
pub fn forward<T: Scalar, R: Rng + ?Sized>(
    spec: &ModelSpec,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    a: Var,
    b: Option<Var>,
    training: bool,
    rng: &mut R,
) -> Result<Forward> {
    match (spec.kind, b) {
        (ModelKind::Fcn | ModelKind::Cnn, None) => forward_single(spec, tape, vars, a, training, rng),
        (ModelKind::Hyfuse, Some(b)) => forward_hyfuse(spec, tape, vars, a, b, training, rng),
        (ModelKind::Concat, Some(b)) => forward_concat(spec, tape, vars, a, b, training, rng),
        (k, Some(_)) => Err(ModelError::Config(format!("{k} takes a single input"))),
        (k, None) => Err(ModelError::Config(format!("{k} needs a second input"))),
    }
}

fn eval_pass<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    a: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<(Tape<T>, Forward)> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, false);
    let va = tape.leaf(a.clone());
    let vb = b.map(|b| tape.leaf(b.clone()));
    // eval mode never draws from the generator
    let mut rng = rng::stream(0, "eval", &[]);
    let out = forward(spec, &mut tape, &vars, va, vb, false, &mut rng)?;
    Ok((tape, out))
}

/// Evaluation-mode logits.
pub fn predict_logits<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    a: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (tape, out) = eval_pass(spec, params, a, b)?;
    Ok(tape.value(out.logits).clone())
}

/// Evaluation-mode hidden activations of the layer before the output layer,
/// shaped `[batch, hidden_units]`.
pub fn penultimate_features<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    a: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (tape, out) = eval_pass(spec, params, a, b)?;
    Ok(tape.value(out.penultimate).clone())
}
