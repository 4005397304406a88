use std::ops::Range;

use rand::Rng as _;

use super::{Op, ReduceKind, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::rng::Rng;
use crate::spiderconv::kernel;
use crate::tensor::{axis_split, Tensor};

fn bcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a.ends_with(b)
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            0.0,
            &mut out,
        );
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Elementwise sum; `b` may broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise product; `b` may broadcast over the leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "multiply", |x, y| x * y, Op::Mul(a, b))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !bcast_ok(av.shape(), bv.shape()) {
            return Err(Error::shape(
                name,
                format!("{:?} and {:?}", av.shape(), bv.shape()),
            ));
        }
        let bd = bv.data();
        let out: Vec<f64> = av
            .data()
            .chunks(bd.len())
            .flat_map(|blk| blk.iter().zip(bd).map(|(&x, &y)| f(x, y)))
            .collect();
        let shape = av.shape().to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), op, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.needs_grad(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{base:?} vs {s:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let w = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.needs_grad(inputs);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Selects rows (axis 0) by index; indices may repeat.
    pub fn gather(&mut self, input: Var, rows: Vec<usize>) -> Result<Var> {
        let t = self.value(input);
        let n = t.shape()[0];
        if rows.is_empty() {
            return Err(Error::shape("gather", "empty index list"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape(
                "gather",
                format!("row {bad} out of range for {:?}", t.shape()),
            ));
        }
        let w = t.len() / n;
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in &rows {
            out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let rg = self.needs_grad(&[input]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Gather { input, rows },
            rg,
        ))
    }

    /// Reduces along `axis`, removing it (a rank-1 input yields shape `[1]`).
    pub fn reduce(&mut self, input: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        let t = self.value(input);
        if axis >= t.rank() {
            return Err(Error::shape(
                "reduce",
                format!("axis {axis} for {:?}", t.shape()),
            ));
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let d = t.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if kind == ReduceKind::Max {
            argmax = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let slot = o * inner + i;
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let s: f64 = (0..len).map(|l| d[at(l)]).sum();
                        out[slot] = if kind == ReduceKind::Mean {
                            s / len as f64
                        } else {
                            s
                        };
                    }
                    ReduceKind::Max => {
                        let mut best = at(0);
                        for l in 1..len {
                            if d[at(l)] > d[best] {
                                best = at(l);
                            }
                        }
                        out[slot] = d[best];
                        argmax[slot] = best;
                    }
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.needs_grad(&[input]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Reduce {
                input,
                axis,
                kind,
                argmax,
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let rg = self.needs_grad(&[input]);
        self.push(Tensor::scalar(s), Op::SumAll(input), rg)
    }

    /// Inverted dropout: at train time each entry survives with probability
    /// `1 - rate` and is scaled by `1 / (1 - rate)`; identity otherwise.
    pub fn dropout(&mut self, input: Var, rate: f64, train: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(input);
        }
        let scale = 1.0 / (1.0 - rate);
        let t = self.value(input);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let out: Vec<f64> = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = t.shape().to_vec();
        let rg = self.needs_grad(&[input]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Dropout { input, mask },
            rg,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (r, c) = self.value(logits).dims2()?;
        if labels.len() != r {
            return Err(Error::shape(
                "softmax-cross-entropy",
                format!("{} labels for {:?}", labels.len(), self.shape(logits)),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::shape(
                "softmax-cross-entropy",
                format!("label {bad} >= {c} classes"),
            ));
        }
        let d = self.value(logits).data();
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for (row, &label) in labels.iter().enumerate() {
            let z = &d[row * c..(row + 1) * c];
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let se: f64 = z.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + se.ln();
            for k in 0..c {
                probs[row * c + k] = (z[k] - lse).exp();
            }
            loss += lse - z[label];
        }
        let rg = self.needs_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / r as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Top-k pooling of a single cloud's `[N × C]` features into a `[k·C]` vector.
    pub fn topk_pool(&mut self, features: Var, k: usize) -> Result<Var> {
        let (n, c) = self.value(features).dims2()?;
        let pooled = self.topk_pool_segments(features, std::slice::from_ref(&(0..n)), k)?;
        let node = &mut self.nodes[pooled.0];
        node.value =
            std::mem::replace(&mut node.value, Tensor::zeros(&[1])).reshape(vec![k * c])?;
        Ok(pooled)
    }

    /// Top-k pooling per row segment: `[M × C]` to `[segments × k·C]`.
    ///
    /// For each channel, the k largest values are listed in descending order
    /// (equal values ordered by ascending row), channel after channel.
    pub fn topk_pool_segments(
        &mut self,
        features: Var,
        segments: &[Range<usize>],
        k: usize,
    ) -> Result<Var> {
        let (m, c) = self.value(features).dims2()?;
        if k == 0 {
            return Err(Error::invalid("top-k pooling needs k >= 1"));
        }
        for s in segments {
            if s.end > m || s.start >= s.end {
                return Err(Error::shape(
                    "topk-pool",
                    format!("segment {s:?} for {m} rows"),
                ));
            }
            if k > s.len() {
                return Err(Error::invalid(format!(
                    "top-k pooling with k = {k} > N = {}",
                    s.len()
                )));
            }
        }
        let d = self.value(features).data();
        let mut out = Vec::with_capacity(segments.len() * k * c);
        let mut selected = Vec::with_capacity(segments.len() * k * c);
        let mut order: Vec<usize> = Vec::new();
        for s in segments {
            for ch in 0..c {
                order.clear();
                order.extend(s.clone());
                let key = |r: usize| d[r * c + ch];
                if k == 1 {
                    let best =
                        order
                            .iter()
                            .copied()
                            .fold(s.start, |b, r| if key(r) > key(b) { r } else { b });
                    order[0] = best;
                } else {
                    order.select_nth_unstable_by(k - 1, |&a, &b| {
                        key(b).total_cmp(&key(a)).then(a.cmp(&b))
                    });
                    order[..k].sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
                }
                for &r in &order[..k] {
                    out.push(key(r));
                    selected.push(r * c + ch);
                }
            }
        }
        let rg = self.needs_grad(&[features]);
        Ok(self.push(
            Tensor::from_parts(vec![segments.len(), k * c], out),
            Op::Select {
                input: features,
                selected,
            },
            rg,
        ))
    }

    /// Channelwise max over each row segment: `[M × C]` to `[segments × C]`.
    pub fn segment_max(&mut self, features: Var, segments: &[Range<usize>]) -> Result<Var> {
        let (m, c) = self.value(features).dims2()?;
        let d = self.value(features).data();
        let mut out = Vec::with_capacity(segments.len() * c);
        let mut selected = Vec::with_capacity(segments.len() * c);
        for s in segments {
            if s.end > m || s.start >= s.end {
                return Err(Error::shape(
                    "max-pool",
                    format!("segment {s:?} for {m} rows"),
                ));
            }
            for ch in 0..c {
                let mut best = s.start;
                for r in s.clone() {
                    if d[r * c + ch] > d[best * c + ch] {
                        best = r;
                    }
                }
                out.push(d[best * c + ch]);
                selected.push(best * c + ch);
            }
        }
        let rg = self.needs_grad(&[features]);
        Ok(self.push(
            Tensor::from_parts(vec![segments.len(), c], out),
            Op::Select {
                input: features,
                selected,
            },
            rg,
        ))
    }

    pub(super) fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2()?;
                let n = val(*b).shape()[1];
                let mut res = Vec::new();
                if want(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        MatRef::new(g.data(), m, n),
                        MatRef::new(val(*b).data(), k, n).t(),
                        0.0,
                        &mut ga,
                    );
                    res.push((*a, Tensor::from_parts(vec![m, k], ga)));
                }
                if want(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(
                        MatRef::new(val(*a).data(), m, k).t(),
                        MatRef::new(g.data(), m, n),
                        0.0,
                        &mut gb,
                    );
                    res.push((*b, Tensor::from_parts(vec![k, n], gb)));
                }
                res
            }
            Op::Add(a, b) => {
                let bl = val(*b).len();
                let mut gb = vec![0.0; bl];
                for blk in g.data().chunks(bl) {
                    for (acc, x) in gb.iter_mut().zip(blk) {
                        *acc += x;
                    }
                }
                vec![
                    (*a, g.clone()),
                    (*b, Tensor::from_parts(val(*b).shape().to_vec(), gb)),
                ]
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let bl = bv.len();
                let ga: Vec<f64> = g
                    .data()
                    .chunks(bl)
                    .flat_map(|blk| blk.iter().zip(bv.data()).map(|(x, y)| x * y))
                    .collect();
                let mut gb = vec![0.0; bl];
                for (gblk, ablk) in g.data().chunks(bl).zip(av.data().chunks(bl)) {
                    for ((acc, x), y) in gb.iter_mut().zip(gblk).zip(ablk) {
                        *acc += x * y;
                    }
                }
                vec![
                    (*a, Tensor::from_parts(av.shape().to_vec(), ga)),
                    (*b, Tensor::from_parts(bv.shape().to_vec(), gb)),
                ]
            }
            Op::Relu(a) => {
                let x = val(*a);
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                vec![(*a, Tensor::from_parts(x.shape().to_vec(), d))]
            }
            Op::Concat { inputs, axis } => {
                let total = node.value.shape()[*axis];
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                let mut res = Vec::with_capacity(inputs.len());
                for &v in inputs {
                    let w = val(v).shape()[*axis] * inner;
                    let mut d = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        let base = o * total * inner + offset;
                        d.extend_from_slice(&g.data()[base..base + w]);
                    }
                    offset += w;
                    res.push((v, Tensor::from_parts(val(v).shape().to_vec(), d)));
                }
                res
            }
            Op::Gather { input, rows } => {
                let x = val(*input);
                let w = x.len() / x.shape()[0];
                let mut d = vec![0.0; x.len()];
                for (o, &r) in rows.iter().enumerate() {
                    for c in 0..w {
                        d[r * w + c] += g.data()[o * w + c];
                    }
                }
                vec![(*input, Tensor::from_parts(x.shape().to_vec(), d))]
            }
            Op::Reduce {
                input,
                axis,
                kind,
                argmax,
            } => {
                let x = val(*input);
                let (outer, len, inner) = axis_split(x.shape(), *axis);
                let mut d = vec![0.0; x.len()];
                match kind {
                    ReduceKind::Max => {
                        for (slot, &src) in argmax.iter().enumerate() {
                            d[src] += g.data()[slot];
                        }
                    }
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let s = if *kind == ReduceKind::Mean {
                            1.0 / len as f64
                        } else {
                            1.0
                        };
                        for o in 0..outer {
                            for l in 0..len {
                                for i in 0..inner {
                                    d[(o * len + l) * inner + i] = g.data()[o * inner + i] * s;
                                }
                            }
                        }
                    }
                }
                vec![(*input, Tensor::from_parts(x.shape().to_vec(), d))]
            }
            Op::SumAll(a) => vec![(*a, Tensor::full(val(*a).shape(), g.data()[0]))],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => super::batchnorm::backward(val(*x), val(*gamma), xhat, inv_std, *train, g)
                .map(|(gx, gg, gb)| vec![(*x, gx), (*gamma, gg), (*beta, gb)])?,
            Op::Dropout { input, mask } => {
                let d: Vec<f64> = g.data().iter().zip(mask).map(|(a, b)| a * b).collect();
                vec![(*input, Tensor::from_parts(val(*input).shape().to_vec(), d))]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (r, c) = val(*logits).dims2()?;
                let s = g.data()[0] / r as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (row, &l) in labels.iter().enumerate() {
                    d[row * c + l] -= s;
                }
                vec![(*logits, Tensor::from_parts(vec![r, c], d))]
            }
            Op::Select { input, selected } => {
                let x = val(*input);
                let mut d = vec![0.0; x.len()];
                for (o, &src) in selected.iter().enumerate() {
                    d[src] += g.data()[o];
                }
                vec![(*input, Tensor::from_parts(x.shape().to_vec(), d))]
            }
            Op::SpiderContract {
                features,
                filters,
                step,
                neighbors,
            } => {
                let grads = kernel::backward(
                    val(*features),
                    val(*filters),
                    val(*step),
                    neighbors,
                    g,
                    kernel::Wanted {
                        features: want(*features),
                        filters: want(*filters),
                        step: want(*step),
                    },
                );
                let mut res = Vec::with_capacity(3);
                if let Some(t) = grads.features {
                    res.push((*features, t));
                }
                if let Some(t) = grads.filters {
                    res.push((*filters, t));
                }
                if let Some(t) = grads.step {
                    res.push((*step, t));
                }
                res
            }
        };
        Ok(out)
    }
}
