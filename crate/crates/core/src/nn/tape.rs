use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use super::{column_variance_mean, softmax, ParamId, ParamStore, Real};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    SumAll(Var),
    SumCols(Var),
    Concat(Vec<Var>),
    Gather(Var, Vec<usize>),
    SoftmaxXent(Var, Vec<usize>),
    ColVarMean(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Array2<T>,
    op: Op,
}

/// Recorded forward computation over 2-D tensors.
///
/// Scalars are `1 x 1` tensors. Parameters are read from a [`ParamStore`] when
/// recorded; [`Tape::backward`] refuses to run if that store has been modified
/// since.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    store_version: Option<u64>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_dim<T>(op: &str, a: &Array2<T>, b: &Array2<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "{op}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            store_version: None,
        }
    }

    fn push(&mut self, value: Array2<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        match self.store_version {
            None => self.store_version = Some(store.version()),
            Some(v) => debug_assert_eq!(v, store.version(), "store changed mid-recording"),
        }
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, w) = (self.value(a), self.value(b));
        if x.ncols() != w.nrows() {
            return Err(Error::shape(format!(
                "matmul: {:?} x {:?}",
                x.dim(),
                w.dim()
            )));
        }
        let out = x.dot(w);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x + bias` with a `1 x d` bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.nrows() != 1 || bv.ncols() != xv.ncols() {
            return Err(Error::shape(format!(
                "add_row: {:?} + {:?}",
                xv.dim(),
                bv.dim()
            )));
        }
        let out = xv + bv;
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dim("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dim("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dim("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = T::lit(c);
        let out = self.value(a).mapv(|v| v * k);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let k = T::lit(c);
        let out = self.value(a).mapv(|v| v + k);
        self.push(out, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = super::relu(self.value(a));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = super::tanh(self.value(a));
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.exp());
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v * v);
        self.push(out, Op::Mul(a, a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total: T = self.value(a).iter().copied().sum();
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(a))
    }

    /// Per-row sum across columns, `n x d -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(a))
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of zero tensors"));
        }
        let views: Vec<ArrayView2<T>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).map_err(|e| Error::shape(format!("concat: {e}")))?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Rows of `table` selected by `index` (embedding lookup).
    pub fn gather(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.nrows()) {
            return Err(Error::shape(format!(
                "gather: row {bad} of {} rows",
                t.nrows()
            )));
        }
        let out = t.select(Axis(0), index);
        Ok(self.push(out, Op::Gather(table, index.to_vec())))
    }

    /// Per-row cross-entropy of softmax(`logits`) against integer targets,
    /// `n x c -> n x 1`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if l.nrows() != targets.len() {
            return Err(Error::shape(format!(
                "softmax_xent: {} rows vs {} targets",
                l.nrows(),
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= l.ncols()) {
            return Err(Error::shape(format!(
                "softmax_xent: target {bad} of {} classes",
                l.ncols()
            )));
        }
        let mut out = Array2::zeros((l.nrows(), 1));
        for (i, row) in l.axis_iter(Axis(0)).enumerate() {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            out[[i, 0]] = lse - row[targets[i]];
        }
        Ok(self.push(out, Op::SoftmaxXent(logits, targets.to_vec())))
    }

    /// Scalar mean over columns of the per-column population variance.
    pub fn col_var_mean(&mut self, table: Var) -> Var {
        let v = column_variance_mean(self.value(table));
        self.push(Array2::from_elem((1, 1), v), Op::ColVarMean(table))
    }

    /// Reverse-mode pass from the scalar `loss`.
    ///
    /// Gradients of every parameter reached from `loss` are written into
    /// `store` (previous gradients are cleared first).
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(v) = self.store_version {
            if v != store.version() {
                return Err(Error::StaleGraph);
            }
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).dim()
            )));
        }
        store.zero_grad();
        let mut grads: Vec<Option<Array2<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));

        fn acc<T: Real>(grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.mapv(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    let k = T::lit(*c);
                    acc(&mut grads, *a, g.mapv(|v| v * k));
                }
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gv, &x| {
                        if x <= T::zero() {
                            *gv = T::zero();
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gv, &y| *gv *= T::one() - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = &g * &node.value;
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let dim = self.value(*a).dim();
                    acc(&mut grads, *a, Array2::from_elem(dim, g[[0, 0]]));
                }
                Op::SumCols(a) => {
                    let dim = self.value(*a).dim();
                    let ga = Array2::from_shape_fn(dim, |(i, _)| g[[i, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        let ga = g.slice(s![.., offset..offset + w]).to_owned();
                        acc(&mut grads, *p, ga);
                        offset += w;
                    }
                }
                Op::Gather(table, index) => {
                    let mut gt = Array2::zeros(self.value(*table).dim());
                    for (row, &i) in index.iter().enumerate() {
                        let mut dst = gt.row_mut(i);
                        dst += &g.row(row);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::SoftmaxXent(logits, targets) => {
                    let mut gl = softmax(self.value(*logits));
                    for (i, &t) in targets.iter().enumerate() {
                        gl[[i, t]] -= T::one();
                        let gi = g[[i, 0]];
                        gl.row_mut(i).mapv_inplace(|v| v * gi);
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::ColVarMean(table) => {
                    let t = self.value(*table);
                    let (rows, cols) = t.dim();
                    let n = T::lit(rows as f64);
                    let k = T::lit(2.0) * g[[0, 0]] / (n * T::lit(cols as f64));
                    let mut gt = t.clone();
                    for mut col in gt.axis_iter_mut(Axis(1)) {
                        let mean = col.iter().copied().sum::<T>() / n;
                        col.mapv_inplace(|v| k * (v - mean));
                    }
                    acc(&mut grads, *table, gt);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;
    use ndarray::array;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.uniform_range(-1.0, 1.0))
    }

    /// Central finite differences of `f` with respect to every entry of every
    /// parameter, compared with the tape gradient.
    fn check_grads(
        store: &mut ParamStore<f64>,
        f: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
    ) {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        tape.backward(loss, store).unwrap();
        let h = 1e-5;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let analytic = store.grad(id).clone();
            let dim = store.value(id).dim();
            for r in 0..dim.0 {
                for c in 0..dim.1 {
                    let orig = store.value(id)[[r, c]];
                    store.value_mut(id)[[r, c]] = orig + h;
                    let mut t = Tape::new();
                    let l = f(&mut t, store);
                    let up = t.scalar(l);
                    store.value_mut(id)[[r, c]] = orig - h;
                    let mut t = Tape::new();
                    let l = f(&mut t, store);
                    let down = t.scalar(l);
                    store.value_mut(id)[[r, c]] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let a = analytic[[r, c]];
                    let err = (a - fd).abs() / (a.abs().max(fd.abs()).max(1e-6));
                    assert!(
                        err < 1e-4,
                        "{}[{r},{c}]: analytic {a} fd {fd}",
                        store.get(id).name
                    );
                }
            }
        }
    }

    #[test]
    fn relu_dead_unit_has_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Array2::zeros((3, 2)));
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, -2.0, 0.5], [0.3, 0.1, -0.7]]);
        let wv = tape.param(&store, w);
        let y = tape.matmul(x, wv).unwrap();
        let r = tape.relu(y);
        let loss = tape.sum_all(r);
        tape.backward(loss, &mut store).unwrap();
        assert!(store.grad(w).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", random(&mut rng, 3, 4));
        let b = store.add("b", random(&mut rng, 1, 4));
        let table = store.add("table", random(&mut rng, 5, 2));
        let x = random(&mut rng, 6, 3);
        let codes = vec![0, 4, 2, 2, 1, 4];
        let targets = vec![1, 0, 3, 2, 2, 0];
        check_grads(&mut store, |t, s| {
            let xv = t.constant(x.clone());
            let wv = t.param(s, w);
            let bv = t.param(s, b);
            let tv = t.param(s, table);
            let h = t.matmul(xv, wv).unwrap();
            let h = t.add_row(h, bv).unwrap();
            let act = t.tanh(h);
            let ce = t.softmax_xent(act, &targets).unwrap();
            let e = t.gather(tv, &codes).unwrap();
            let cat = t.concat(&[e, act]).unwrap();
            let r = t.relu(cat);
            let ex = t.exp(r);
            let sq = t.square(ex);
            let rs = t.sum_cols(sq);
            let m = t.mul(rs, ce).unwrap();
            let d = t.sub(m, ce).unwrap();
            let a = t.add(d, rs).unwrap();
            let a = t.add_scalar(a, 0.3);
            let a = t.scale(a, 0.7);
            let total = t.sum_all(a);
            let v = t.col_var_mean(tv);
            let v = t.scale(v, 3.0);
            t.add(total, v).unwrap()
        });
    }

    #[test]
    fn stale_graph_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", array![[1.0]]);
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let loss = tape.sum_all(wv);
        store.value_mut(w)[[0, 0]] = 2.0;
        assert!(matches!(
            tape.backward(loss, &mut store),
            Err(Error::StaleGraph)
        ));
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Array2::zeros((2, 3)));
        let b = tape.constant(Array2::zeros((2, 3)));
        assert!(tape.matmul(a, b).is_err());
        let c = tape.constant(Array2::zeros((1, 2)));
        assert!(tape.add_row(a, c).is_err());
        assert!(tape.gather(a, &[2]).is_err());
        assert!(tape.softmax_xent(a, &[0, 3]).is_err());
        assert!(tape.backward(a, &mut ParamStore::new()).is_err());
    }
}
