use rand::Rng;

use super::kernels::{axpy, dot, matmul_into, matmul_nt_into, matmul_tn_into};
use super::{numel, Graph, Node, Op, Real, Result, Tensor, TensorError};

/// (outer, len, inner) decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<'p> Graph<'p> {
    fn check_axis(&self, op: &'static str, a: Tensor, axis: usize) -> Result<()> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op,
                axis,
                shape: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Matrix product. `a` may carry leading batch dimensions; `b` is k×n.
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(sa) / k.max(1);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push_op(shape, out, Op::MatMul { a, b, trans_b: false }, &[a, b]))
    }

    /// `a · bᵀ` with `b` stored n×k.
    pub fn matmul_nt(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[1] {
            return Err(mismatch("matmul_nt", sa, sb));
        }
        let k = sb[1];
        let n = sb[0];
        let m = numel(sa) / k.max(1);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![0.0; m * n];
        matmul_nt_into(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push_op(shape, out, Op::MatMul { a, b, trans_b: true }, &[a, b]))
    }

    fn binary(&mut self, a: Tensor, b: Tensor, kind: Binary) -> Result<Tensor> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let (sa, sb) = (self.shape(a), self.shape(b));
        // b must equal a or a trailing suffix of it (leading-batch broadcast).
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch(name, sa, sb));
        }
        let shape = sa.to_vec();
        let (va, vb) = (self.value(a), self.value(b));
        let bn = vb.len();
        let out: Vec<Real> = va
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = vb[i % bn];
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let op = match kind {
            Binary::Add => Op::Add { a, b },
            Binary::Sub => Op::Sub { a, b },
            Binary::Mul => Op::Mul { a, b },
        };
        Ok(self.push_op(shape, out, op, &[a, b]))
    }

    /// Elementwise sum; `b` may match a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn scale(&mut self, a: Tensor, c: Real) -> Tensor {
        let out = self.value(a).iter().map(|x| x * c).collect();
        self.push_op(self.shape(a).to_vec(), out, Op::Scale { a, c }, &[a])
    }

    pub fn add_scalar(&mut self, a: Tensor, c: Real) -> Tensor {
        let out = self.value(a).iter().map(|x| x + c).collect();
        self.push_op(self.shape(a).to_vec(), out, Op::AddScalar { a }, &[a])
    }

    pub fn neg(&mut self, a: Tensor) -> Tensor {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        self.push_op(self.shape(a).to_vec(), out, Op::Relu { a }, &[a])
    }

    pub fn tanh(&mut self, a: Tensor) -> Tensor {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push_op(self.shape(a).to_vec(), out, Op::Tanh { a }, &[a])
    }

    pub fn exp(&mut self, a: Tensor) -> Tensor {
        let out = self.value(a).iter().map(|x| x.exp()).collect();
        self.push_op(self.shape(a).to_vec(), out, Op::Exp { a }, &[a])
    }

    /// Rows of a V×d table, in the order given by `ids`.
    pub fn gather_rows(&mut self, table: Tensor, ids: &[usize]) -> Result<Tensor> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(mismatch("gather_rows", st, &[ids.len()]));
        }
        let (rows, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                reason: format!("row {bad} out of range for {rows} rows"),
            });
        }
        let vt = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&vt[i * d..(i + 1) * d]);
        }
        Ok(self.push_op(
            vec![ids.len(), d],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Normalize the last axis, then apply `gain` and `bias` (both length d).
    pub fn layer_norm(&mut self, x: Tensor, gain: Tensor, bias: Tensor, eps: Real) -> Result<Tensor> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| mismatch("layer_norm", &sx, &[]))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch("layer_norm", &sx, self.shape(gain)));
        }
        let vx = self.value(x);
        let (vg, vb) = (self.value(gain), self.value(bias));
        let rows = vx.len() / d.max(1);
        let mut out = vec![0.0; vx.len()];
        let mut xhat = vec![0.0; vx.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &vx[r * d..(r + 1) * d];
            let mean = row.iter().sum::<Real>() / d as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d as Real;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * vg[j] + vb[j];
            }
        }
        let op = if self.is_recording() {
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            }
        } else {
            Op::Leaf
        };
        Ok(self.push_op(sx, out, op, &[x, gain, bias]))
    }

    /// Swap the two axes of a matrix.
    pub fn transpose(&mut self, a: Tensor) -> Result<Tensor> {
        let sa = self.shape(a);
        if sa.len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "transpose",
                reason: format!("expected a matrix, got shape {sa:?}"),
            });
        }
        let (m, n) = (sa[0], sa[1]);
        let va = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = va[i * n + j];
            }
        }
        Ok(self.push_op(vec![n, m], out, Op::Transpose { a }, &[a]))
    }

    pub fn reshape(&mut self, a: Tensor, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != numel(self.shape(a)) {
            return Err(mismatch("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        Ok(self.push_op(shape.to_vec(), out, Op::Reshape { a }, &[a]))
    }

    /// Join tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = *parts.first().ok_or(TensorError::EmptySlice { op: "concat" })?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != base.len() || sp.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(mismatch("concat", &base, sp));
            }
            total += sp[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let block = len * inner;
                out.extend_from_slice(&self.value(p)[o * block..(o + 1) * block]);
            }
        }
        Ok(self.push_op(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.check_axis("slice", a, axis)?;
        let sa = self.shape(a).to_vec();
        if start + len > sa[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                reason: format!("range {start}..{} exceeds axis {axis} of {sa:?}", start + len),
            });
        }
        let (outer, full, inner) = split_axis(&sa, axis);
        let va = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&va[base..base + len * inner]);
        }
        let mut shape = sa;
        shape[axis] = len;
        Ok(self.push_op(shape, out, Op::Slice { a, axis, start }, &[a]))
    }

    fn reduce_lines<F: FnMut(&[Real], usize, &mut [Real])>(
        &self,
        a: Tensor,
        axis: usize,
        out_per_line: bool,
        mut f: F,
    ) -> Vec<Real> {
        let shape = self.shape(a);
        let (outer, len, inner) = split_axis(shape, axis);
        let va = self.value(a);
        let mut out = vec![0.0; if out_per_line { outer * inner } else { va.len() }];
        let mut line = vec![0.0; len];
        let mut res = vec![0.0; if out_per_line { 1 } else { len }];
        for o in 0..outer {
            for j in 0..inner {
                for i in 0..len {
                    line[i] = va[(o * len + i) * inner + j];
                }
                f(&line, len, &mut res);
                if out_per_line {
                    out[o * inner + j] = res[0];
                } else {
                    for i in 0..len {
                        out[(o * len + i) * inner + j] = res[i];
                    }
                }
            }
        }
        out
    }

    /// Log-softmax along `axis`. Entries equal to -inf stay -inf (masking).
    pub fn log_softmax(&mut self, a: Tensor, axis: usize) -> Result<Tensor> {
        self.check_axis("log_softmax", a, axis)?;
        let out = self.reduce_lines(a, axis, false, |line, _, res| log_softmax_line(line, res));
        Ok(self.push_op(self.shape(a).to_vec(), out, Op::LogSoftmax { a, axis }, &[a]))
    }

    /// Softmax along `axis`. A fully masked line yields zeros.
    pub fn softmax(&mut self, a: Tensor, axis: usize) -> Result<Tensor> {
        self.check_axis("softmax", a, axis)?;
        let out = self.reduce_lines(a, axis, false, |line, _, res| {
            log_softmax_line(line, res);
            res.iter_mut().for_each(|v| *v = v.exp());
        });
        Ok(self.push_op(self.shape(a).to_vec(), out, Op::Softmax { a, axis }, &[a]))
    }

    /// log Σ exp along `axis`; the axis is removed from the output shape.
    pub fn logsumexp(&mut self, a: Tensor, axis: usize) -> Result<Tensor> {
        self.check_axis("logsumexp", a, axis)?;
        if self.shape(a)[axis] == 0 {
            return Err(TensorError::EmptySlice { op: "logsumexp" });
        }
        let out = self.reduce_lines(a, axis, true, |line, _, res| res[0] = logsumexp_slice(line));
        let mut shape = self.shape(a).to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push_op(shape, out, Op::LogSumExp { a, axis }, &[a]))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s = self.value(a).iter().sum();
        self.push_op(vec![1], vec![s], Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Tensor) -> Tensor {
        let n = self.value(a).len().max(1) as Real;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Pick entries by flat (row-major) index.
    pub fn select(&mut self, a: Tensor, idx: &[usize]) -> Result<Tensor> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.len()) {
            return Err(TensorError::InvalidArgument {
                op: "select",
                reason: format!("index {bad} out of range for {} entries", va.len()),
            });
        }
        let out = idx.iter().map(|&i| va[i]).collect();
        Ok(self.push_op(vec![idx.len()], out, Op::Select { a, idx: idx.to_vec() }, &[a]))
    }

    /// Inverted dropout. `rate == 0` returns `a` unchanged.
    pub fn dropout<R: Rng>(&mut self, a: Tensor, rate: Real, rng: &mut R) -> Tensor {
        if rate <= 0.0 {
            return a;
        }
        let scale = 1.0 / (1.0 - rate);
        let keep: Vec<Real> = (0..self.value(a).len())
            .map(|_| if rng.gen::<Real>() < rate { 0.0 } else { scale })
            .collect();
        let out = self.value(a).iter().zip(&keep).map(|(x, k)| x * k).collect();
        self.push_op(self.shape(a).to_vec(), out, Op::Dropout { a, keep }, &[a])
    }
}

/// Numerically stable log Σ exp. All -inf gives -inf; empty gives -inf.
pub fn logsumexp_slice(xs: &[Real]) -> Real {
    let m = xs.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    if m == Real::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<Real>().ln()
}

fn log_softmax_line(line: &[Real], out: &mut [Real]) {
    let lse = logsumexp_slice(line);
    if lse == Real::NEG_INFINITY {
        out.iter_mut().for_each(|v| *v = Real::NEG_INFINITY);
        return;
    }
    for (o, x) in out.iter_mut().zip(line) {
        *o = x - lse;
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<Real>>], nodes: &[Node<'_>], t: Tensor) -> Option<&'a mut Vec<Real>> {
    let n = &nodes[t.index()];
    if !n.requires_grad {
        return None;
    }
    let len = n.value.len();
    Some(grads[t.index()].get_or_insert_with(|| vec![0.0; len]))
}

fn for_lines<F: FnMut(&dyn Fn(usize) -> usize, usize)>(shape: &[usize], axis: usize, mut f: F) {
    let (outer, len, inner) = split_axis(shape, axis);
    for o in 0..outer {
        for j in 0..inner {
            let ix = |i: usize| (o * len + i) * inner + j;
            f(&ix, len);
        }
    }
}

pub(crate) fn backward_node(nodes: &[Node<'_>], id: usize, g: &[Real], grads: &mut [Option<Vec<Real>>]) {
    let node = &nodes[id];
    let val = |t: Tensor| -> &[Real] { &nodes[t.index()].value };
    let shape = |t: Tensor| -> &[usize] { &nodes[t.index()].shape };
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, trans_b } => {
            let sb = shape(*b);
            let (k, n) = if *trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
            let m = g.len() / n.max(1);
            if let Some(ga) = acc(grads, nodes, *a) {
                if *trans_b {
                    // C = A Bᵀ, dA = dC B
                    matmul_into(g, val(*b), ga, m, n, k);
                } else {
                    // dA = dC Bᵀ
                    matmul_nt_into(g, val(*b), ga, m, n, k);
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                if *trans_b {
                    // dB = dCᵀ A  (n×k)
                    matmul_tn_into(g, val(*a), gb, m, n, k);
                } else {
                    // dB = Aᵀ dC  (k×n)
                    matmul_tn_into(val(*a), g, gb, m, k, n);
                }
            }
        }
        Op::Add { a, b } | Op::Sub { a, b } => {
            let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
            if let Some(ga) = acc(grads, nodes, *a) {
                axpy(1.0, g, ga);
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                let bn = gb.len();
                for (i, gi) in g.iter().enumerate() {
                    gb[i % bn] += sign * gi;
                }
            }
        }
        Op::Mul { a, b } => {
            let (va, vb) = (val(*a), val(*b));
            let bn = vb.len();
            if let Some(ga) = acc(grads, nodes, *a) {
                for (i, gi) in g.iter().enumerate() {
                    ga[i] += gi * vb[i % bn];
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for (i, gi) in g.iter().enumerate() {
                    gb[i % bn] += gi * va[i];
                }
            }
        }
        Op::Scale { a, c } => {
            if let Some(ga) = acc(grads, nodes, *a) {
                axpy(*c, g, ga);
            }
        }
        Op::AddScalar { a } | Op::Reshape { a } => {
            if let Some(ga) = acc(grads, nodes, *a) {
                axpy(1.0, g, ga);
            }
        }
        Op::Relu { a } => {
            let va = val(*a);
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    if va[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
        }
        Op::Tanh { a } => {
            let out = &node.value;
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }
        }
        Op::Exp { a } => {
            let out = &node.value;
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i];
                }
            }
        }
        Op::Gather { table, ids } => {
            let d = shape(*table)[1];
            if let Some(gt) = acc(grads, nodes, *table) {
                for (r, &i) in ids.iter().enumerate() {
                    axpy(1.0, &g[r * d..(r + 1) * d], &mut gt[i * d..(i + 1) * d]);
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = shape(*gain)[0];
            let vg = val(*gain);
            let rows = g.len() / d.max(1);
            if let Some(gx) = acc(grads, nodes, *x) {
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    for j in 0..d {
                        dxhat[j] = gr[j] * vg[j];
                    }
                    let m1 = dxhat.iter().sum::<Real>() / d as Real;
                    let m2 = dot(&dxhat, xr) / d as Real;
                    for j in 0..d {
                        gx[r * d + j] += rstd[r] * (dxhat[j] - m1 - xr[j] * m2);
                    }
                }
            }
            if let Some(gg) = acc(grads, nodes, *gain) {
                for r in 0..rows {
                    for j in 0..d {
                        gg[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, *bias) {
                for r in 0..rows {
                    axpy(1.0, &g[r * d..(r + 1) * d], gb);
                }
            }
        }
        Op::Transpose { a } => {
            let sa = shape(*a);
            let (m, n) = (sa[0], sa[1]);
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        Op::Concat { parts, axis } => {
            let (outer, _, inner) = split_axis(&node.shape, *axis);
            let total = node.shape[*axis];
            let mut offset = 0;
            for &p in parts {
                let len = shape(p)[*axis];
                if let Some(gp) = acc(grads, nodes, p) {
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        axpy(
                            1.0,
                            &g[src..src + len * inner],
                            &mut gp[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                }
                offset += len;
            }
        }
        Op::Slice { a, axis, start } => {
            let (outer, full, inner) = split_axis(shape(*a), *axis);
            let len = node.shape[*axis];
            if let Some(ga) = acc(grads, nodes, *a) {
                for o in 0..outer {
                    let dst = o * full * inner + start * inner;
                    axpy(
                        1.0,
                        &g[o * len * inner..(o + 1) * len * inner],
                        &mut ga[dst..dst + len * inner],
                    );
                }
            }
        }
        Op::LogSoftmax { a, axis } => {
            let out = &node.value;
            if let Some(ga) = acc(grads, nodes, *a) {
                for_lines(&node.shape, *axis, |ix, len| {
                    let gs: Real = (0..len)
                        .filter(|&i| out[ix(i)] > Real::NEG_INFINITY)
                        .map(|i| g[ix(i)])
                        .sum();
                    for i in 0..len {
                        let k = ix(i);
                        if out[k] > Real::NEG_INFINITY {
                            ga[k] += g[k] - out[k].exp() * gs;
                        }
                    }
                });
            }
        }
        Op::Softmax { a, axis } => {
            let out = &node.value;
            if let Some(ga) = acc(grads, nodes, *a) {
                for_lines(&node.shape, *axis, |ix, len| {
                    let s: Real = (0..len).map(|i| out[ix(i)] * g[ix(i)]).sum();
                    for i in 0..len {
                        let k = ix(i);
                        ga[k] += out[k] * (g[k] - s);
                    }
                });
            }
        }
        Op::LogSumExp { a, axis } => {
            let va = val(*a);
            let sa = shape(*a).to_vec();
            let out = &node.value;
            if let Some(ga) = acc(grads, nodes, *a) {
                // lines are visited in output order
                let mut line_no = 0;
                for_lines(&sa, *axis, |ix, len| {
                    let lse = out[line_no];
                    let gl = g[line_no];
                    if lse > Real::NEG_INFINITY {
                        for i in 0..len {
                            let k = ix(i);
                            ga[k] += gl * (va[k] - lse).exp();
                        }
                    }
                    line_no += 1;
                });
            }
        }
        Op::Sum { a } => {
            if let Some(ga) = acc(grads, nodes, *a) {
                ga.iter_mut().for_each(|v| *v += g[0]);
            }
        }
        Op::Select { a, idx } => {
            if let Some(ga) = acc(grads, nodes, *a) {
                for (gi, &i) in g.iter().zip(idx) {
                    ga[i] += gi;
                }
            }
        }
        Op::Dropout { a, keep } => {
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * keep[i];
                }
            }
        }
        Op::Custom { inputs, grad } => {
            let vals: Vec<&[Real]> = inputs.iter().map(|&t| val(t)).collect();
            let local = grad.backward(&vals, &node.value, g);
            for (&t, lg) in inputs.iter().zip(local) {
                if let Some(gt) = acc(grads, nodes, t) {
                    axpy(1.0, &lg, gt);
                }
            }
        }
    }
}
