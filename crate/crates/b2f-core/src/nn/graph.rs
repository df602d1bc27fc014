use std::collections::HashMap;

use crate::error::{Error, Result};

use super::tensor::{dot, mm_nn, mm_nt, mm_tn, Tensor};

/// Handle to a node in a [`Graph`]. Cheap to copy; only valid for the graph
/// that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// One recorded operation. Indices refer into `Graph::vals`; backward
/// recomputes whatever intermediates it needs from the stored forward values
/// rather than caching extra state.
#[derive(Debug)]
enum Op {
    Matmul { a: usize, b: usize, out: usize },
    /// a [m,k] @ b^T with b stored [n,k].
    MatmulNT { a: usize, b: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Sub { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Scale { a: usize, c: f64, out: usize },
    AddConst { a: usize, out: usize },
    AddRowBias { a: usize, bias: usize, out: usize },
    Relu { a: usize, out: usize },
    SoftmaxRows { a: usize, out: usize },
    LayerNormRows { a: usize, gamma: usize, beta: usize, eps: f64, out: usize },
    MeanRows { a: usize, out: usize },
    RowSums { a: usize, out: usize },
    MeanAll { a: usize, out: usize },
    SumAll { a: usize, out: usize },
    Ln { a: usize, out: usize },
    Square { a: usize, out: usize },
    Sqrt { a: usize, out: usize },
    NormalizeRows { a: usize, eps: f64, out: usize },
    ConcatCols { a: usize, b: usize, out: usize },
    SliceCols { a: usize, start: usize, out: usize },
    Conv1dK3 { x: usize, k: usize, bias: usize, out: usize },
    RepeatRow { a: usize, out: usize },
    StraightThroughHard { soft: usize, out: usize },
    MulScalar { a: usize, s: usize, out: usize },
    CrossEntropyRows { logits: usize, targets: Vec<usize>, out: usize },
    Reshape { a: usize, out: usize },
}

/// Reverse-mode tape. Forward calls append value nodes and (in training mode)
/// an op record; `backward` replays the records in reverse, accumulating
/// gradients. In inference mode nothing is recorded and large attention
/// buffers are never materialized, so memory stays proportional to the
/// activations actually alive.
pub struct Graph {
    vals: Vec<Tensor>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<String, usize>,
    param_order: Vec<String>,
    grad_enabled: bool,
}

impl Graph {
    pub fn training() -> Graph {
        Graph::with_grad(true)
    }

    pub fn inference() -> Graph {
        Graph::with_grad(false)
    }

    pub fn with_grad(grad_enabled: bool) -> Graph {
        Graph {
            vals: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
            grad_enabled,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        &self.vals[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.numel() != 1 {
            return Err(Error::shape(
                "scalar_value",
                format!("expected a single element, got shape {:?}", t.shape),
            ));
        }
        Ok(t.data[0])
    }

    /// Gradient of the last `backward` target with respect to `v`, if `v`
    /// was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_val(t)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_val(t)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push_val(Tensor::scalar(v))
    }

    /// Bind a named parameter. Binding the same name twice returns the same
    /// node, so modules shared across several forward paths accumulate
    /// gradients into one place.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Result<Var> {
        if let Some(&idx) = self.params.get(name) {
            if self.vals[idx].shape != t.shape {
                return Err(Error::shape(
                    "param",
                    format!(
                        "`{}` was first bound with shape {:?}, rebound with {:?}",
                        name, self.vals[idx].shape, t.shape
                    ),
                ));
            }
            return Ok(Var(idx));
        }
        let v = self.push_val(t.clone());
        self.params.insert(name.to_string(), v.0);
        self.param_order.push(name.to_string());
        Ok(v)
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_order
    }

    /// Gradients for every bound parameter, in binding order. Parameters the
    /// loss never touched come back as zeros so optimizer bookkeeping stays
    /// aligned.
    pub fn param_grads(&self) -> Vec<(String, Vec<f64>)> {
        self.param_order
            .iter()
            .map(|name| {
                let idx = self.params[name];
                let g = match &self.grads.get(idx) {
                    Some(Some(g)) => g.clone(),
                    _ => vec![0.0; self.vals[idx].numel()],
                };
                (name.clone(), g)
            })
            .collect()
    }

    fn push_val(&mut self, t: Tensor) -> Var {
        self.vals.push(t);
        Var(self.vals.len() - 1)
    }

    fn push(&mut self, t: Tensor, op: impl FnOnce(usize) -> Op) -> Var {
        let v = self.push_val(t);
        if self.grad_enabled {
            let rec = op(v.0);
            self.ops.push(rec);
        }
        v
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = &self.vals[v.0].shape;
        if s.len() != 2 {
            return Err(Error::shape(
                op,
                format!("expected a 2-D operand, got shape {:?}", s),
            ));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.vals[a.0].shape != self.vals[b.0].shape {
            return Err(Error::shape(
                op,
                format!(
                    "operands differ: {:?} vs {:?}",
                    self.vals[a.0].shape, self.vals[b.0].shape
                ),
            ));
        }
        Ok(())
    }

    // ---- forward builders ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: [{m},{k}] @ [{k2},{n}]"),
            ));
        }
        let data = mm_nn(&self.vals[a.0].data, &self.vals[b.0].data, m, k, n);
        let t = Tensor { shape: vec![m, n], data };
        Ok(self.push(t, |out| Op::Matmul { a: a.0, b: b.0, out }))
    }

    /// a @ b^T with b stored row-major [n,k].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_nt", a)?;
        let (n, k2) = self.dims2("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("inner dims differ: [{m},{k}] @ [{n},{k2}]^T"),
            ));
        }
        let data = mm_nt(&self.vals[a.0].data, &self.vals[b.0].data, m, k, n);
        let t = Tensor { shape: vec![m, n], data };
        Ok(self.push(t, |out| Op::MatmulNT { a: a.0, b: b.0, out }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(&self.vals[a.0].data, &self.vals[b.0].data, |x, y| x + y);
        let t = Tensor { shape: self.vals[a.0].shape.clone(), data };
        Ok(self.push(t, |out| Op::Add { a: a.0, b: b.0, out }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(&self.vals[a.0].data, &self.vals[b.0].data, |x, y| x - y);
        let t = Tensor { shape: self.vals[a.0].shape.clone(), data };
        Ok(self.push(t, |out| Op::Sub { a: a.0, b: b.0, out }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(&self.vals[a.0].data, &self.vals[b.0].data, |x, y| x * y);
        let t = Tensor { shape: self.vals[a.0].shape.clone(), data };
        Ok(self.push(t, |out| Op::Mul { a: a.0, b: b.0, out }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.vals[a.0].data.iter().map(|x| x * c).collect();
        let t = Tensor { shape: self.vals[a.0].shape.clone(), data };
        self.push(t, |out| Op::Scale { a: a.0, c, out })
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let data = self.vals[a.0].data.iter().map(|x| x + c).collect();
        let t = Tensor { shape: self.vals[a.0].shape.clone(), data };
        self.push(t, |out| Op::AddConst { a: a.0, out })
    }

    /// Add a [n] (or [1,n]) bias vector to every row of a [m,n] tensor.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2("add_row_bias", a)?;
        let bn = self.vals[bias.0].numel();
        if bn != n {
            return Err(Error::shape(
                "add_row_bias",
                format!("matrix is [{m},{n}] but bias has {bn} elements"),
            ));
        }
        let mut data = self.vals[a.0].data.clone();
        let bdata = &self.vals[bias.0].data;
        for row in data.chunks_exact_mut(n) {
            for (x, b) in row.iter_mut().zip(bdata) {
                *x += b;
            }
        }
        let t = Tensor { shape: vec![m, n], data };
        Ok(self.push(t, |out| Op::AddRowBias { a: a.0, bias: bias.0, out }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.vals[a.0].data.iter().map(|&x| x.max(0.0)).collect();
        let t = Tensor { shape: self.vals[a.0].shape.clone(), data };
        self.push(t, |out| Op::Relu { a: a.0, out })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("softmax_rows", a)?;
        let mut data = self.vals[a.0].data.clone();
        for row in data.chunks_exact_mut(n) {
            softmax_row_in_place(row);
        }
        let t = Tensor { shape: vec![m, n], data };
        Ok(self.push(t, |out| Op::SoftmaxRows { a: a.0, out }))
    }

    pub fn layer_norm_rows(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2("layer_norm_rows", a)?;
        if self.vals[gamma.0].numel() != n || self.vals[beta.0].numel() != n {
            return Err(Error::shape(
                "layer_norm_rows",
                format!(
                    "input is [{m},{n}] but gamma/beta have {}/{} elements",
                    self.vals[gamma.0].numel(),
                    self.vals[beta.0].numel()
                ),
            ));
        }
        let g = &self.vals[gamma.0].data;
        let b = &self.vals[beta.0].data;
        let mut data = self.vals[a.0].data.clone();
        for row in data.chunks_exact_mut(n) {
            let (mean, var) = row_mean_var(row);
            let inv = 1.0 / (var + eps).sqrt();
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - mean) * inv * g[j] + b[j];
            }
        }
        let t = Tensor { shape: vec![m, n], data };
        Ok(self.push(t, |out| Op::LayerNormRows {
            a: a.0,
            gamma: gamma.0,
            beta: beta.0,
            eps,
            out,
        }))
    }

    /// Column means: [m,n] -> [1,n].
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("mean_rows", a)?;
        if m == 0 {
            return Err(Error::shape("mean_rows", "cannot average zero rows".to_string()));
        }
        let mut data = vec![0.0; n];
        for row in self.vals[a.0].data.chunks_exact(n) {
            for (d, x) in data.iter_mut().zip(row) {
                *d += x;
            }
        }
        let inv = 1.0 / m as f64;
        for d in &mut data {
            *d *= inv;
        }
        let t = Tensor { shape: vec![1, n], data };
        Ok(self.push(t, |out| Op::MeanRows { a: a.0, out }))
    }

    /// Per-row sums: [m,n] -> [m,1].
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("row_sums", a)?;
        let data = self.vals[a.0]
            .data
            .chunks_exact(n)
            .map(|row| row.iter().sum())
            .collect();
        let t = Tensor { shape: vec![m, 1], data };
        Ok(self.push(t, |out| Op::RowSums { a: a.0, out }))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.vals[a.0].numel();
        if n == 0 {
            return Err(Error::shape("mean_all", "cannot average an empty tensor".to_string()));
        }
        let s: f64 = self.vals[a.0].data.iter().sum();
        let t = Tensor::scalar(s / n as f64);
        Ok(self.push(t, |out| Op::MeanAll { a: a.0, out }))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.vals[a.0].data.iter().sum();
        let t = Tensor::scalar(s);
        self.push(t, |out| Op::SumAll { a: a.0, out })
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let data = self.vals[a.0].data.iter().map(|x| x.ln()).collect();
        let t = Tensor { shape: self.vals[a.0].shape.clone(), data };
        self.push(t, |out| Op::Ln { a: a.0, out })
    }

    pub fn square(&mut self, a: Var) -> Var {
        let data = self.vals[a.0].data.iter().map(|x| x * x).collect();
        let t = Tensor { shape: self.vals[a.0].shape.clone(), data };
        self.push(t, |out| Op::Square { a: a.0, out })
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let data = self.vals[a.0].data.iter().map(|x| x.sqrt()).collect();
        let t = Tensor { shape: self.vals[a.0].shape.clone(), data };
        self.push(t, |out| Op::Sqrt { a: a.0, out })
    }

    /// L2-normalize each row; rows shorter than `eps` are scaled by 1/eps
    /// instead so the map stays linear (and differentiable) near zero.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2("normalize_rows", a)?;
        let mut data = self.vals[a.0].data.clone();
        for row in data.chunks_exact_mut(n) {
            let norm = dot(row, row).sqrt();
            let s = 1.0 / norm.max(eps);
            for x in row.iter_mut() {
                *x *= s;
            }
        }
        let t = Tensor { shape: vec![m, n], data };
        Ok(self.push(t, |out| Op::NormalizeRows { a: a.0, eps, out }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n1) = self.dims2("concat_cols", a)?;
        let (m2, n2) = self.dims2("concat_cols", b)?;
        if m != m2 {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts differ: [{m},{n1}] vs [{m2},{n2}]"),
            ));
        }
        let mut data = Vec::with_capacity(m * (n1 + n2));
        for i in 0..m {
            data.extend_from_slice(self.vals[a.0].row(i));
            data.extend_from_slice(self.vals[b.0].row(i));
        }
        let t = Tensor { shape: vec![m, n1 + n2], data };
        Ok(self.push(t, |out| Op::ConcatCols { a: a.0, b: b.0, out }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2("slice_cols", a)?;
        if start + len > n {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} out of range for [{m},{n}]", start + len),
            ));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&self.vals[a.0].row(i)[start..start + len]);
        }
        let t = Tensor { shape: vec![m, len], data };
        Ok(self.push(t, |out| Op::SliceCols { a: a.0, start, out }))
    }

    /// 1-D convolution over time, kernel size 3, stride 1, zero padding 1.
    /// x is [T,cin], k is [3,cin,cout], bias is [cout]; output is [T,cout].
    pub fn conv1d_k3(&mut self, x: Var, k: Var, bias: Var) -> Result<Var> {
        let (t_len, cin) = self.dims2("conv1d_k3", x)?;
        let ks = &self.vals[k.0].shape;
        if ks.len() != 3 || ks[0] != 3 || ks[1] != cin {
            return Err(Error::shape(
                "conv1d_k3",
                format!("kernel must be [3,{cin},cout], got {ks:?}"),
            ));
        }
        let cout = ks[2];
        if self.vals[bias.0].numel() != cout {
            return Err(Error::shape(
                "conv1d_k3",
                format!("bias must have {cout} elements, got {}", self.vals[bias.0].numel()),
            ));
        }
        let xd = &self.vals[x.0].data;
        let kd = &self.vals[k.0].data;
        let bd = &self.vals[bias.0].data;
        let mut data = vec![0.0; t_len * cout];
        for t in 0..t_len {
            let orow = &mut data[t * cout..(t + 1) * cout];
            orow.copy_from_slice(bd);
            for tap in 0..3usize {
                let src = t as isize + tap as isize - 1;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let xrow = &xd[src as usize * cin..(src as usize + 1) * cin];
                let ktap = &kd[tap * cin * cout..(tap + 1) * cin * cout];
                for (l, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let krow = &ktap[l * cout..(l + 1) * cout];
                    for (o, &kv) in orow.iter_mut().zip(krow) {
                        *o += xv * kv;
                    }
                }
            }
        }
        let t = Tensor { shape: vec![t_len, cout], data };
        Ok(self.push(t, |out| Op::Conv1dK3 { x: x.0, k: k.0, bias: bias.0, out }))
    }

    /// Broadcast a [1,n] row to [t,n].
    pub fn repeat_row(&mut self, a: Var, t_len: usize) -> Result<Var> {
        let (m, n) = self.dims2("repeat_row", a)?;
        if m != 1 {
            return Err(Error::shape(
                "repeat_row",
                format!("expected a single row, got [{m},{n}]"),
            ));
        }
        let row = self.vals[a.0].data.clone();
        let mut data = Vec::with_capacity(t_len * n);
        for _ in 0..t_len {
            data.extend_from_slice(&row);
        }
        let t = Tensor { shape: vec![t_len, n], data };
        Ok(self.push(t, |out| Op::RepeatRow { a: a.0, out }))
    }

    /// Row-wise one-hot of the argmax, with a straight-through gradient
    /// (backward passes the incoming gradient to the soft input unchanged).
    /// Ties resolve to the lowest index.
    pub fn straight_through_hard(&mut self, soft: Var) -> Result<Var> {
        let (m, n) = self.dims2("straight_through_hard", soft)?;
        let mut data = vec![0.0; m * n];
        for (i, row) in self.vals[soft.0].data.chunks_exact(n).enumerate() {
            data[i * n + argmax(row)] = 1.0;
        }
        let t = Tensor { shape: vec![m, n], data };
        Ok(self.push(t, |out| Op::StraightThroughHard { soft: soft.0, out }))
    }

    /// Multiply every element of `a` by a scalar node `s` (shape [1]).
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.vals[s.0].numel() != 1 {
            return Err(Error::shape(
                "mul_scalar",
                format!("scale must be a single element, got {:?}", self.vals[s.0].shape),
            ));
        }
        let sv = self.vals[s.0].data[0];
        let data = self.vals[a.0].data.iter().map(|x| x * sv).collect();
        let t = Tensor { shape: self.vals[a.0].shape.clone(), data };
        Ok(self.push(t, |out| Op::MulScalar { a: a.0, s: s.0, out }))
    }

    /// Mean cross-entropy of logits [n, classes] against integer targets.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2("cross_entropy_rows", logits)?;
        if targets.len() != m {
            return Err(Error::shape(
                "cross_entropy_rows",
                format!("{m} logit rows but {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::invalid(format!(
                "cross_entropy_rows: target class {bad} out of range for {n} classes"
            )));
        }
        let mut total = 0.0;
        for (row, &t) in self.vals[logits.0].data.chunks_exact(n).zip(targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let t = Tensor::scalar(total / m as f64);
        let targets = targets.to_vec();
        Ok(self.push(t, move |out| Op::CrossEntropyRows { logits: logits.0, targets, out }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.vals[a.0].numel() {
            return Err(Error::shape(
                "reshape",
                format!(
                    "cannot view {:?} ({} elements) as {:?} ({n} elements)",
                    self.vals[a.0].shape,
                    self.vals[a.0].numel(),
                    shape
                ),
            ));
        }
        let t = Tensor { shape: shape.to_vec(), data: self.vals[a.0].data.clone() };
        Ok(self.push(t, |out| Op::Reshape { a: a.0, out }))
    }

    // ---- backward ----

    /// Accumulate d(loss)/d(node) for every node reachable from `loss`.
    /// `loss` must be a single-element tensor.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.grad_enabled {
            return Err(Error::invalid(
                "backward called on an inference-mode graph (no tape was recorded)",
            ));
        }
        if self.vals[loss.0].numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.vals[loss.0].shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.vals.len()];
        grads[loss.0] = Some(vec![1.0]);

        for op in self.ops.iter().rev() {
            self.backward_op(op, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_op(&self, op: &Op, grads: &mut [Option<Vec<f64>>]) {
        // Every arm starts by fetching the output gradient; if the node never
        // received one it is off the path to the loss and the op is skipped.
        macro_rules! dout {
            ($out:expr) => {
                match &grads[*$out] {
                    Some(g) => g.clone(),
                    None => return,
                }
            };
        }
        match op {
            Op::Matmul { a, b, out } => {
                let dy = dout!(out);
                let (m, k) = (self.vals[*a].shape[0], self.vals[*a].shape[1]);
                let n = self.vals[*b].shape[1];
                let da = mm_nt(&dy, &self.vals[*b].data, m, n, k);
                let db = mm_tn(&self.vals[*a].data, &dy, k, m, n);
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Op::MatmulNT { a, b, out } => {
                let dy = dout!(out);
                let (m, k) = (self.vals[*a].shape[0], self.vals[*a].shape[1]);
                let n = self.vals[*b].shape[0];
                let da = mm_nn(&dy, &self.vals[*b].data, m, n, k);
                let db = mm_tn(&dy, &self.vals[*a].data, n, m, k);
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Op::Add { a, b, out } => {
                let dy = dout!(out);
                acc(grads, *a, &dy);
                acc(grads, *b, &dy);
            }
            Op::Sub { a, b, out } => {
                let dy = dout!(out);
                acc(grads, *a, &dy);
                acc_neg(grads, *b, &dy);
            }
            Op::Mul { a, b, out } => {
                let dy = dout!(out);
                let da = zip_map(&dy, &self.vals[*b].data, |g, x| g * x);
                let db = zip_map(&dy, &self.vals[*a].data, |g, x| g * x);
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Op::Scale { a, c, out } => {
                let dy = dout!(out);
                let da: Vec<f64> = dy.iter().map(|g| g * c).collect();
                acc(grads, *a, &da);
            }
            Op::AddConst { a, out } => {
                let dy = dout!(out);
                acc(grads, *a, &dy);
            }
            Op::AddRowBias { a, bias, out } => {
                let dy = dout!(out);
                let n = self.vals[*bias].numel();
                acc(grads, *a, &dy);
                let mut db = vec![0.0; n];
                for row in dy.chunks_exact(n) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                acc(grads, *bias, &db);
            }
            Op::Relu { a, out } => {
                let dy = dout!(out);
                let da = zip_map(&dy, &self.vals[*a].data, |g, x| if x > 0.0 { g } else { 0.0 });
                acc(grads, *a, &da);
            }
            Op::SoftmaxRows { a, out } => {
                let dy = dout!(out);
                let n = self.vals[*a].shape[1];
                let y = &self.vals[*out].data;
                let mut da = vec![0.0; dy.len()];
                for ((drow, yrow), grow) in
                    da.chunks_exact_mut(n).zip(y.chunks_exact(n)).zip(dy.chunks_exact(n))
                {
                    let s = dot(grow, yrow);
                    for ((d, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *d = yv * (gv - s);
                    }
                }
                acc(grads, *a, &da);
            }
            Op::LayerNormRows { a, gamma, beta, eps, out } => {
                let dy = dout!(out);
                let n = self.vals[*a].shape[1];
                let x = &self.vals[*a].data;
                let g = &self.vals[*gamma].data;
                let mut da = vec![0.0; x.len()];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for ((xrow, grow), drow) in
                    x.chunks_exact(n).zip(dy.chunks_exact(n)).zip(da.chunks_exact_mut(n))
                {
                    let (mean, var) = row_mean_var(xrow);
                    let inv = 1.0 / (var + eps).sqrt();
                    // xhat and dxhat, plus the two row means the formula needs.
                    let mut m1 = 0.0; // mean(dxhat)
                    let mut m2 = 0.0; // mean(dxhat * xhat)
                    for j in 0..n {
                        let xhat = (xrow[j] - mean) * inv;
                        let dxhat = grow[j] * g[j];
                        m1 += dxhat;
                        m2 += dxhat * xhat;
                        dgamma[j] += grow[j] * xhat;
                        dbeta[j] += grow[j];
                    }
                    m1 /= n as f64;
                    m2 /= n as f64;
                    for j in 0..n {
                        let xhat = (xrow[j] - mean) * inv;
                        let dxhat = grow[j] * g[j];
                        drow[j] = (dxhat - m1 - xhat * m2) * inv;
                    }
                }
                acc(grads, *a, &da);
                acc(grads, *gamma, &dgamma);
                acc(grads, *beta, &dbeta);
            }
            Op::MeanRows { a, out } => {
                let dy = dout!(out);
                let (m, n) = (self.vals[*a].shape[0], self.vals[*a].shape[1]);
                let inv = 1.0 / m as f64;
                let mut da = vec![0.0; m * n];
                for row in da.chunks_exact_mut(n) {
                    for (d, g) in row.iter_mut().zip(&dy) {
                        *d = g * inv;
                    }
                }
                acc(grads, *a, &da);
            }
            Op::RowSums { a, out } => {
                let dy = dout!(out);
                let (m, n) = (self.vals[*a].shape[0], self.vals[*a].shape[1]);
                let mut da = vec![0.0; m * n];
                for (i, row) in da.chunks_exact_mut(n).enumerate() {
                    row.fill(dy[i]);
                }
                acc(grads, *a, &da);
            }
            Op::MeanAll { a, out } => {
                let dy = dout!(out);
                let n = self.vals[*a].numel();
                let v = dy[0] / n as f64;
                let da = vec![v; n];
                acc(grads, *a, &da);
            }
            Op::SumAll { a, out } => {
                let dy = dout!(out);
                let da = vec![dy[0]; self.vals[*a].numel()];
                acc(grads, *a, &da);
            }
            Op::Ln { a, out } => {
                let dy = dout!(out);
                let da = zip_map(&dy, &self.vals[*a].data, |g, x| g / x);
                acc(grads, *a, &da);
            }
            Op::Square { a, out } => {
                let dy = dout!(out);
                let da = zip_map(&dy, &self.vals[*a].data, |g, x| 2.0 * g * x);
                acc(grads, *a, &da);
            }
            Op::Sqrt { a, out } => {
                let dy = dout!(out);
                let y = &self.vals[*out].data;
                let da = zip_map(&dy, y, |g, yv| 0.5 * g / yv.max(1e-12));
                acc(grads, *a, &da);
            }
            Op::NormalizeRows { a, eps, out } => {
                let dy = dout!(out);
                let n = self.vals[*a].shape[1];
                let x = &self.vals[*a].data;
                let y = &self.vals[*out].data;
                let mut da = vec![0.0; x.len()];
                for (((xrow, yrow), grow), drow) in x
                    .chunks_exact(n)
                    .zip(y.chunks_exact(n))
                    .zip(dy.chunks_exact(n))
                    .zip(da.chunks_exact_mut(n))
                {
                    let norm = dot(xrow, xrow).sqrt();
                    let s = 1.0 / norm.max(*eps);
                    if norm > *eps {
                        let proj = dot(grow, yrow);
                        for j in 0..n {
                            drow[j] = s * (grow[j] - yrow[j] * proj);
                        }
                    } else {
                        for j in 0..n {
                            drow[j] = s * grow[j];
                        }
                    }
                }
                acc(grads, *a, &da);
            }
            Op::ConcatCols { a, b, out } => {
                let dy = dout!(out);
                let (m, n1) = (self.vals[*a].shape[0], self.vals[*a].shape[1]);
                let n2 = self.vals[*b].shape[1];
                let mut da = vec![0.0; m * n1];
                let mut db = vec![0.0; m * n2];
                for i in 0..m {
                    let row = &dy[i * (n1 + n2)..(i + 1) * (n1 + n2)];
                    da[i * n1..(i + 1) * n1].copy_from_slice(&row[..n1]);
                    db[i * n2..(i + 1) * n2].copy_from_slice(&row[n1..]);
                }
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Op::SliceCols { a, start, out } => {
                let dy = dout!(out);
                let (m, n) = (self.vals[*a].shape[0], self.vals[*a].shape[1]);
                let len = self.vals[*out].shape[1];
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    da[i * n + start..i * n + start + len]
                        .copy_from_slice(&dy[i * len..(i + 1) * len]);
                }
                acc(grads, *a, &da);
            }
            Op::Conv1dK3 { x, k, bias, out } => {
                let dy = dout!(out);
                let (t_len, cin) = (self.vals[*x].shape[0], self.vals[*x].shape[1]);
                let cout = self.vals[*k].shape[2];
                let xd = &self.vals[*x].data;
                let kd = &self.vals[*k].data;
                let mut dx = vec![0.0; t_len * cin];
                let mut dk = vec![0.0; 3 * cin * cout];
                let mut db = vec![0.0; cout];
                for t in 0..t_len {
                    let grow = &dy[t * cout..(t + 1) * cout];
                    for (d, g) in db.iter_mut().zip(grow) {
                        *d += g;
                    }
                    for tap in 0..3usize {
                        let src = t as isize + tap as isize - 1;
                        if src < 0 || src >= t_len as isize {
                            continue;
                        }
                        let src = src as usize;
                        let xrow = &xd[src * cin..(src + 1) * cin];
                        let ktap = &kd[tap * cin * cout..(tap + 1) * cin * cout];
                        let dktap = &mut dk[tap * cin * cout..(tap + 1) * cin * cout];
                        for l in 0..cin {
                            let krow = &ktap[l * cout..(l + 1) * cout];
                            dx[src * cin + l] += dot(grow, krow);
                            let xv = xrow[l];
                            if xv != 0.0 {
                                let dkrow = &mut dktap[l * cout..(l + 1) * cout];
                                for (d, g) in dkrow.iter_mut().zip(grow) {
                                    *d += xv * g;
                                }
                            }
                        }
                    }
                }
                acc(grads, *x, &dx);
                acc(grads, *k, &dk);
                acc(grads, *bias, &db);
            }
            Op::RepeatRow { a, out } => {
                let dy = dout!(out);
                let n = self.vals[*a].shape[1];
                let mut da = vec![0.0; n];
                for row in dy.chunks_exact(n) {
                    for (d, g) in da.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                acc(grads, *a, &da);
            }
            Op::StraightThroughHard { soft, out } => {
                let dy = dout!(out);
                acc(grads, *soft, &dy);
            }
            Op::MulScalar { a, s, out } => {
                let dy = dout!(out);
                let sv = self.vals[*s].data[0];
                let da: Vec<f64> = dy.iter().map(|g| g * sv).collect();
                let ds = dot(&dy, &self.vals[*a].data);
                acc(grads, *a, &da);
                acc(grads, *s, &[ds]);
            }
            Op::CrossEntropyRows { logits, targets, out } => {
                let dy = dout!(out);
                let n = self.vals[*logits].shape[1];
                let m = targets.len();
                let scale = dy[0] / m as f64;
                let mut da = vec![0.0; m * n];
                for ((row, &t), drow) in self.vals[*logits]
                    .data
                    .chunks_exact(n)
                    .zip(targets)
                    .zip(da.chunks_exact_mut(n))
                {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for (d, &x) in drow.iter_mut().zip(row) {
                        *d = (x - max).exp();
                        sum += *d;
                    }
                    for d in drow.iter_mut() {
                        *d = *d / sum * scale;
                    }
                    drow[t] -= scale;
                }
                acc(grads, *logits, &da);
            }
            Op::Reshape { a, out } => {
                let dy = dout!(out);
                acc(grads, *a, &dy);
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn acc(grads: &mut [Option<Vec<f64>>], idx: usize, contribution: &[f64]) {
    let slot = grads[idx].get_or_insert_with(|| vec![0.0; contribution.len()]);
    for (s, c) in slot.iter_mut().zip(contribution) {
        *s += c;
    }
}

fn acc_neg(grads: &mut [Option<Vec<f64>>], idx: usize, contribution: &[f64]) {
    let slot = grads[idx].get_or_insert_with(|| vec![0.0; contribution.len()]);
    for (s, c) in slot.iter_mut().zip(contribution) {
        *s -= c;
    }
}

pub(crate) fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub(crate) fn row_mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
