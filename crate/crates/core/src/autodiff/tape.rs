use rand::Rng;

use super::gemm::{matmul, MatRef};
use super::{AutodiffError, Result, Scalar, Tensor};
use crate::hypergeom::{self, PoincareConfig};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Reshape(Var),
    Concat(Var, Var),
    Relu(Var),
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        // im2col buffers, one [in_ch·kernel, len_out] block per sample
        cols: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    ExpMapZero {
        input: Var,
        cfg: PoincareConfig,
    },
    LogMapZero {
        input: Var,
        cfg: PoincareConfig,
    },
    MobiusAdd {
        lhs: Var,
        rhs: Var,
        cfg: PoincareConfig,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation so gradients can be pulled back through it.
///
/// Nodes are appended in evaluation order, so the node vector is already a
/// topological order and `backward` simply walks it in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Its `requires_grad` flag decides whether it receives a
    /// gradient.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    /// Clears every stored gradient so `backward` may run again.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        self.consumed = false;
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::Shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn rank2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(AutodiffError::Shape(format!(
                "{what}: expected a rank-2 tensor, got {s:?}"
            ))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().map(|v| v.as_f64()).sum();
        Ok(self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Collapses every axis after the first: `[batch, ...] -> [batch, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let batch = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(a, &[batch, rest])
    }

    /// Concatenates two rank-2 tensors along the feature axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.rank2(a, "concat")?;
        let (rb, cb) = self.rank2(b, "concat")?;
        if ra != rb {
            return Err(AutodiffError::Shape(format!(
                "concat: batch sizes {ra} and {rb} differ"
            )));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&va[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&vb[r * cb..(r + 1) * cb]);
        }
        let out = Tensor::new(vec![ra, ca + cb], data)?;
        Ok(self.push(out, Op::Concat(a, b), &[a, b]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let zero = T::zero();
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&v| if v > zero { v } else { zero })
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Relu(a), &[a]))
    }

    /// Inverted dropout: survivors are scaled by `1/(1 - rate)`. Identity when
    /// not training or when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::Shape(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| *v * *m)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { input: a, mask }, &[a]))
    }

    /// Affine map `input · weightᵀ + bias` with `input: [batch, n]`,
    /// `weight: [m, n]`, `bias: [m]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (batch, n) = self.rank2(input, "dense input")?;
        let (m, wn) = self.rank2(weight, "dense weight")?;
        if wn != n || self.shape(bias) != [m] {
            return Err(AutodiffError::Shape(format!(
                "dense: input {:?}, weight {:?}, bias {:?} are incompatible",
                self.shape(input),
                self.shape(weight),
                self.shape(bias)
            )));
        }
        let bias_data = self.value(bias).data();
        let mut out = Vec::with_capacity(batch * m);
        for _ in 0..batch {
            out.extend_from_slice(bias_data);
        }
        matmul(
            MatRef::new(self.value(input).data(), batch, n),
            MatRef::transposed(self.value(weight).data(), m, n),
            T::one(),
            &mut out,
        );
        let out = Tensor::new(vec![batch, m], out)?;
        Ok(self.push(
            out,
            Op::Dense {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        ))
    }

    /// Valid (unpadded) stride-1 cross-correlation.
    ///
    /// `input: [batch, in_ch, len]`, `weight: [out_ch, in_ch, kernel]`,
    /// `bias: [out_ch]` giving `[batch, out_ch, len - kernel + 1]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let w_shape = self.shape(weight).to_vec();
        let mismatch = || {
            AutodiffError::Shape(format!(
                "conv1d: input {in_shape:?} and weight {w_shape:?} are incompatible"
            ))
        };
        let (&[batch, in_ch, len], &[out_ch, w_in, kernel]) = (&in_shape[..], &w_shape[..]) else {
            return Err(mismatch());
        };
        if w_in != in_ch || kernel > len {
            return Err(mismatch());
        }
        if self.shape(bias) != [out_ch] {
            return Err(AutodiffError::Shape(format!(
                "conv1d: bias {:?} does not match {out_ch} output channels",
                self.shape(bias)
            )));
        }
        let len_out = len - kernel + 1;
        let rows = in_ch * kernel;
        let x = self.value(input).data();
        let mut cols = vec![T::zero(); batch * rows * len_out];
        for b in 0..batch {
            let block = &mut cols[b * rows * len_out..(b + 1) * rows * len_out];
            for c in 0..in_ch {
                let src = &x[(b * in_ch + c) * len..(b * in_ch + c + 1) * len];
                for k in 0..kernel {
                    let dst = &mut block[(c * kernel + k) * len_out..(c * kernel + k + 1) * len_out];
                    dst.copy_from_slice(&src[k..k + len_out]);
                }
            }
        }
        let bias_data = self.value(bias).data();
        let mut out = vec![T::zero(); batch * out_ch * len_out];
        for b in 0..batch {
            let dst = &mut out[b * out_ch * len_out..(b + 1) * out_ch * len_out];
            for (o, row) in dst.chunks_mut(len_out).enumerate() {
                row.iter_mut().for_each(|v| *v = bias_data[o]);
            }
            matmul(
                MatRef::new(self.value(weight).data(), out_ch, rows),
                MatRef::new(&cols[b * rows * len_out..(b + 1) * rows * len_out], rows, len_out),
                T::one(),
                dst,
            );
        }
        let out = Tensor::new(vec![batch, out_ch, len_out], out)?;
        Ok(self.push(
            out,
            Op::Conv1d {
                input,
                weight,
                bias,
                cols,
            },
            &[input, weight, bias],
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, using the
    /// log-sum-exp shift for stability.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, classes) = self.rank2(logits, "softmax_cross_entropy")?;
        if labels.len() != batch {
            return Err(AutodiffError::Shape(format!(
                "softmax_cross_entropy: {} labels for batch of {batch}",
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(AutodiffError::InvalidLabel { label, classes });
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0f64; batch * classes];
        let mut total = 0.0f64;
        for (r, &label) in labels.iter().enumerate() {
            let row = &z[r * classes..(r + 1) * classes];
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
            for (c, v) in row.iter().enumerate() {
                probs[r * classes + c] = (v.as_f64() - lse).exp();
            }
            total += lse - row[label].as_f64();
        }
        let loss = Tensor::scalar(T::from_f64(total / batch as f64));
        Ok(self.push(
            loss,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    fn map_rows(
        &self,
        v: Var,
        what: &str,
        mut f: impl FnMut(&[f64]) -> hypergeom::GeomResult<Vec<f64>>,
    ) -> Result<Tensor<T>> {
        let (batch, width) = self.rank2(v, what)?;
        let x = self.value(v).data();
        let mut out = Vec::with_capacity(batch * width);
        let mut row = vec![0.0f64; width];
        for r in 0..batch {
            for (dst, src) in row.iter_mut().zip(&x[r * width..(r + 1) * width]) {
                *dst = src.as_f64();
            }
            out.extend(f(&row)?.into_iter().map(T::from_f64));
        }
        Tensor::new(vec![batch, width], out)
    }

    /// Row-wise exponential map at the origin.
    pub fn exp_map_zero(&mut self, input: Var, cfg: &PoincareConfig) -> Result<Var> {
        let out = self.map_rows(input, "exp_map_zero", |r| {
            hypergeom::exp_map_zero(r, cfg).map(|p| p.into_coords())
        })?;
        Ok(self.push(out, Op::ExpMapZero { input, cfg: *cfg }, &[input]))
    }

    /// Row-wise logarithmic map at the origin.
    pub fn log_map_zero(&mut self, input: Var, cfg: &PoincareConfig) -> Result<Var> {
        let out = self.map_rows(input, "log_map_zero", |r| hypergeom::log_map_zero_raw(r, cfg))?;
        Ok(self.push(out, Op::LogMapZero { input, cfg: *cfg }, &[input]))
    }

    /// Row-wise Möbius addition `lhs ⊕ rhs`.
    pub fn mobius_add(&mut self, lhs: Var, rhs: Var, cfg: &PoincareConfig) -> Result<Var> {
        self.same_shape(lhs, rhs, "mobius_add")?;
        let (batch, width) = self.rank2(lhs, "mobius_add")?;
        let (a, b) = (self.value(lhs).to_f64_vec(), self.value(rhs).to_f64_vec());
        let mut out = Vec::with_capacity(batch * width);
        for r in 0..batch {
            let s = r * width..(r + 1) * width;
            let p = hypergeom::mobius_add_raw(&a[s.clone()], &b[s], cfg)?;
            out.extend(p.coords().iter().map(|&v| T::from_f64(v)));
        }
        let out = Tensor::new(vec![batch, width], out)?;
        Ok(self.push(
            out,
            Op::MobiusAdd {
                lhs,
                rhs,
                cfg: *cfg,
            },
            &[lhs, rhs],
        ))
    }

    /// Reverse pass from a scalar `loss`. Afterwards every trainable leaf
    /// holds `∂loss/∂leaf` (zeros when the leaf does not reach the loss).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(AutodiffError::StaleTape);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            for (var, contrib) in self.pullback(i, &g)? {
                if !self.nodes[var.0].needs_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a = *a + *c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                let len = node.value.len();
                node.value.set_grad(g.unwrap_or_else(|| vec![T::zero(); len]))?;
            }
        }
        self.consumed = true;
        Ok(())
    }

    fn pullback(&self, i: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[i];
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                vec![
                    (*a, g.iter().zip(vb).map(|(g, y)| *g * *y).collect()),
                    (*b, g.iter().zip(va).map(|(g, x)| *g * *x).collect()),
                ]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Concat(a, b) => {
                let ca = self.shape(*a)[1];
                let cb = self.shape(*b)[1];
                let mut ga = Vec::with_capacity(self.value(*a).len());
                let mut gb = Vec::with_capacity(self.value(*b).len());
                for row in g.chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Relu(a) => {
                let zero = T::zero();
                let x = self.value(*a).data();
                vec![(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, x)| if *x > zero { *g } else { zero })
                        .collect(),
                )]
            }
            Op::Dropout { input, mask } => {
                vec![(*input, g.iter().zip(mask).map(|(g, m)| *g * *m).collect())]
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let (batch, n) = (self.shape(*input)[0], self.shape(*input)[1]);
                let m = self.shape(*weight)[0];
                let mut gx = vec![T::zero(); batch * n];
                matmul(
                    MatRef::new(g, batch, m),
                    MatRef::new(self.value(*weight).data(), m, n),
                    T::zero(),
                    &mut gx,
                );
                let mut gw = vec![T::zero(); m * n];
                matmul(
                    MatRef::transposed(g, batch, m),
                    MatRef::new(self.value(*input).data(), batch, n),
                    T::zero(),
                    &mut gw,
                );
                let mut gb = vec![0.0f64; m];
                for row in g.chunks(m) {
                    gb.iter_mut().zip(row).for_each(|(a, v)| *a += v.as_f64());
                }
                vec![
                    (*input, gx),
                    (*weight, gw),
                    (*bias, gb.into_iter().map(T::from_f64).collect()),
                ]
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                cols,
            } => {
                let (batch, in_ch, len) = {
                    let s = self.shape(*input);
                    (s[0], s[1], s[2])
                };
                let (out_ch, kernel) = (self.shape(*weight)[0], self.shape(*weight)[2]);
                let len_out = len - kernel + 1;
                let rows = in_ch * kernel;
                let w = self.value(*weight).data();

                let mut gw = vec![T::zero(); out_ch * rows];
                let mut gx = vec![T::zero(); batch * in_ch * len];
                let mut gb = vec![0.0f64; out_ch];
                let mut gcols = vec![T::zero(); rows * len_out];
                for b in 0..batch {
                    let gout = &g[b * out_ch * len_out..(b + 1) * out_ch * len_out];
                    let block = &cols[b * rows * len_out..(b + 1) * rows * len_out];
                    matmul(
                        MatRef::new(gout, out_ch, len_out),
                        MatRef::transposed(block, rows, len_out),
                        T::one(),
                        &mut gw,
                    );
                    matmul(
                        MatRef::transposed(w, out_ch, rows),
                        MatRef::new(gout, out_ch, len_out),
                        T::zero(),
                        &mut gcols,
                    );
                    for c in 0..in_ch {
                        let dst = &mut gx[(b * in_ch + c) * len..(b * in_ch + c + 1) * len];
                        for k in 0..kernel {
                            let src = &gcols[(c * kernel + k) * len_out..(c * kernel + k + 1) * len_out];
                            dst[k..k + len_out]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d = *d + *s);
                        }
                    }
                    for (o, row) in gout.chunks(len_out).enumerate() {
                        gb[o] += row.iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                }
                vec![
                    (*input, gx),
                    (*weight, gw),
                    (*bias, gb.into_iter().map(T::from_f64).collect()),
                ]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0].as_f64() / labels.len() as f64;
                let mut gl: Vec<T> = probs.iter().map(|p| T::from_f64(p * scale)).collect();
                for (r, &label) in labels.iter().enumerate() {
                    let idx = r * classes + label;
                    gl[idx] = T::from_f64((probs[idx] - 1.0) * scale);
                }
                vec![(*logits, gl)]
            }
            Op::ExpMapZero { input, cfg } => {
                let gx = self.rows_vjp(*input, g, |x, g| hypergeom::exp_map_zero_vjp(x, g, cfg))?;
                vec![(*input, gx)]
            }
            Op::LogMapZero { input, cfg } => {
                let gy = self.rows_vjp(*input, g, |y, g| hypergeom::log_map_zero_vjp(y, g, cfg))?;
                vec![(*input, gy)]
            }
            Op::MobiusAdd { lhs, rhs, cfg } => {
                let width = self.shape(*lhs)[1];
                let (a, b) = (self.value(*lhs).to_f64_vec(), self.value(*rhs).to_f64_vec());
                let g64: Vec<f64> = g.iter().map(|v| v.as_f64()).collect();
                let mut ga = Vec::with_capacity(a.len());
                let mut gb = Vec::with_capacity(b.len());
                for r in 0..a.len() / width {
                    let s = r * width..(r + 1) * width;
                    let (da, db) =
                        hypergeom::mobius_add_vjp(&a[s.clone()], &b[s.clone()], &g64[s], cfg)?;
                    ga.extend(da.into_iter().map(T::from_f64));
                    gb.extend(db.into_iter().map(T::from_f64));
                }
                vec![(*lhs, ga), (*rhs, gb)]
            }
        };
        Ok(out)
    }

    fn rows_vjp(
        &self,
        v: Var,
        g: &[T],
        f: impl Fn(&[f64], &[f64]) -> hypergeom::GeomResult<Vec<f64>>,
    ) -> Result<Vec<T>> {
        let width = self.shape(v)[1];
        let x = self.value(v).to_f64_vec();
        let g: Vec<f64> = g.iter().map(|v| v.as_f64()).collect();
        let mut out = Vec::with_capacity(x.len());
        for (xr, gr) in x.chunks(width).zip(g.chunks(width)) {
            out.extend(f(xr, gr)?.into_iter().map(T::from_f64));
        }
        Ok(out)
    }
}
