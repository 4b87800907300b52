//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Every forward op pushes a node holding its value and enough context to
//! run the adjoint. Parameters are borrowed from a [`ParamStore`] rather
//! than copied onto the tape.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Array2<f64>),
    Param(usize),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    /// Constant left factor: `w · a`.
    ConstMatMul(Array2<f64>, Var),
    Add(Var, Var),
    /// Broadcast a `1×n` row over every row of `a`.
    AddRow(Var, Var),
    /// Add a constant matrix of the same shape.
    AddConst(Var),
    /// Elementwise product with a constant of the same shape.
    MulConst(Var, Array2<f64>),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    /// Row softmax; columns with `false` in the mask get probability zero.
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    /// Per-group column-wise max; stores the arg-max row for every output cell.
    GroupMax(Var, Array2<usize>),
    /// `Σ w ⊙ |a − target|` as a `1×1` value.
    WeightedL1 {
        a: Var,
        target: Array2<f64>,
        weights: Array2<f64>,
    },
    Sum(Vec<Var>),
}

struct Node {
    value: Value,
    op: Op,
}

/// Tape bound to a parameter store for the lifetime of one forward/backward.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a.view(),
            Value::Param(id) => self.params.value(*id).view(),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "not a scalar node");
        val[(0, 0)]
    }

    /// Input data. Gradients w.r.t. inputs are available after backward.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: usize) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_by_name(&mut self, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    /// Every softmax output recorded on this tape, in creation order.
    pub fn attention_maps(&self) -> impl Iterator<Item = ArrayView2<'_, f64>> {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| {
            matches!(n.op, Op::Softmax(_)).then(|| self.value(Var(i)))
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn const_matmul(&mut self, w: Array2<f64>, a: Var) -> Var {
        let v = w.dot(&self.value(a));
        self.push(v, Op::ConstMatMul(w, a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) + &self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1×n row");
        let v = &self.value(a) + &r;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add_const(&mut self, a: Var, c: &Array2<f64>) -> Var {
        let v = &self.value(a) + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let v = &self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    /// Zero the rows whose mask entry is false.
    pub fn mask_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r, mask.len());
        let m = Array2::from_shape_fn((r, c), |(i, _)| if mask[i] { 1.0 } else { 0.0 });
        self.mul_const(a, m)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = &self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Row-wise softmax over the columns allowed by `key_mask`. Disallowed
    /// columns receive exactly zero probability. Panics if a row has no
    /// allowed column; callers check that first.
    pub fn softmax(&mut self, a: Var, key_mask: Option<&[bool]>) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        if let Some(m) = key_mask {
            assert_eq!(m.len(), cols);
            assert!(m.iter().any(|&b| b), "softmax with every column masked");
        }
        let allowed = |j: usize| key_mask.is_none_or(|m| m[j]);
        let mut out = Array2::zeros((rows, cols));
        for (xr, mut or) in x.outer_iter().zip(out.outer_iter_mut()) {
            let max = (0..cols)
                .filter(|&j| allowed(j))
                .map(|j| xr[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..cols {
                if allowed(j) {
                    let e = (xr[j] - max).exp();
                    or[j] = e;
                    total += e;
                }
            }
            or.mapv_inplace(|e| e / total);
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (xr, mut hr) in xv.outer_iter().zip(xhat.outer_iter_mut()) {
            let mean = xr.sum() / cols as f64;
            let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + EPS).sqrt();
            Zip::from(&mut hr).and(&xr).for_each(|h, &v| *h = (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * &self.value(gamma) + &self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// For each group of row indices, the column-wise max over those rows.
    pub fn group_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let x = self.value(a);
        let cols = x.ncols();
        let mut out = Array2::zeros((groups.len(), cols));
        let mut arg = Array2::zeros((groups.len(), cols));
        for (g, rows) in groups.iter().enumerate() {
            assert!(!rows.is_empty(), "group_max over an empty group");
            for c in 0..cols {
                let mut best = rows[0];
                for &r in &rows[1..] {
                    if x[(r, c)] > x[(best, c)] {
                        best = r;
                    }
                }
                out[(g, c)] = x[(best, c)];
                arg[(g, c)] = best;
            }
        }
        self.push(out, Op::GroupMax(a, arg))
    }

    pub fn weighted_l1(&mut self, a: Var, target: Array2<f64>, weights: Array2<f64>) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), target.dim());
        assert_eq!(x.dim(), weights.dim());
        let mut total = 0.0;
        Zip::from(&x)
            .and(&target)
            .and(&weights)
            .for_each(|&p, &t, &w| {
                if w != 0.0 {
                    total += w * (p - t).abs();
                }
            });
        self.push(
            Array2::from_elem((1, 1), total),
            Op::WeightedL1 { a, target, weights },
        )
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut v = self.value(parts[0]).to_owned();
        for &p in &parts[1..] {
            v += &self.value(p);
        }
        self.push(v, Op::Sum(parts.to_vec()))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(&self.value(*b));
                    let gb = g.t().dot(&self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::ConstMatMul(w, a) => acc(&mut grads, *a, w.t().dot(&g)),
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::MulConst(a, c) => acc(&mut grads, *a, g * c),
                Op::Scale(a, s) => acc(&mut grads, *a, g * *s),
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&self.value(*a))
                        .for_each(|gv, &x| *gv *= gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&self.value(*a))
                        .for_each(|gv, &x| {
                            if x <= 0.0 {
                                *gv = 0.0
                            }
                        });
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(i));
                    let mut ga = &g * &y;
                    let dots = ga.sum_axis(Axis(1));
                    Zip::from(ga.rows_mut())
                        .and(y.rows())
                        .and(&dots)
                        .for_each(|mut gr, yr, &d| {
                            Zip::from(&mut gr).and(&yr).for_each(|gv, &yv| *gv -= yv * d);
                        });
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gam = self.value(*gamma);
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(
                        &mut grads,
                        *gamma,
                        (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let gxhat = &g * &gam;
                    let n = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let gh = gxhat.row(r);
                        let h = xhat.row(r);
                        let mean_g = gh.sum() / n;
                        let mean_gh = gh.dot(&h) / n;
                        let is = inv_std[r];
                        let mut out = gx.row_mut(r);
                        Zip::from(&mut out)
                            .and(&gh)
                            .and(&h)
                            .for_each(|o, &gv, &hv| *o = is * (gv - mean_g - hv * mean_gh));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(r);
                        row += &g.row(k);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GroupMax(a, arg) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for ((gi, c), &r) in arg.indexed_iter() {
                        ga[(r, c)] += g[(gi, c)];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::WeightedL1 { a, target, weights } => {
                    let s = g[(0, 0)];
                    let mut ga = Array2::zeros(target.dim());
                    Zip::from(&mut ga)
                        .and(&self.value(*a))
                        .and(target)
                        .and(weights)
                        .for_each(|o, &p, &t, &w| {
                            let d = p - t;
                            *o = if d > 0.0 {
                                w * s
                            } else if d < 0.0 {
                                -w * s
                            } else {
                                0.0
                            };
                        });
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(&mut grads, p, g.clone());
                    }
                }
            }
        }

        let mut params = vec![None; self.params.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Value::Param(id), Some(g)) = (&node.value, grads[i].as_ref()) {
                match &mut params[*id] {
                    Some(existing) => *existing += g,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        Gradients {
            nodes: grads,
            params,
        }
    }
}

/// Adjoints of one backward sweep.
pub struct Gradients {
    nodes: Vec<Option<Array2<f64>>>,
    params: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient w.r.t. a leaf (input or parameter node). `None` when the
    /// output does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].as_ref()
    }

    /// Accumulated gradient for a parameter id across every use on the tape.
    pub fn param(&self, id: usize) -> Option<&Array2<f64>> {
        self.params[id].as_ref()
    }

    pub fn into_param_grads(self) -> Vec<Option<Array2<f64>>> {
        self.params
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
