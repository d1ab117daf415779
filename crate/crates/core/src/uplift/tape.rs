//! Minimal reverse-mode automatic differentiation over 2D f64 tensors.
//!
//! A [`Tape`] records the forward computation as a flat list of nodes; the
//! backward pass walks the list in reverse and accumulates parameter
//! gradients into a [`ParamGrads`] buffer. The op set is exactly what the
//! uplifting network needs: matmul, broadcast bias, ReLU/SiLU, layer norm,
//! rotary rotation, grouped multi-head attention, row gather/concat, and a
//! squared-error reduction.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named parameter tensors of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-parameter gradient accumulator, shaped like a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub tensors: Vec<Array2<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            tensors: store
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.dim()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            *t *= c;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    /// x (n×d) plus a broadcast row vector (1×d).
    AddRow(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Silu(Var),
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Array1<f64>,
        rstd: Array1<f64>,
    },
    /// Rotation of consecutive column pairs by per-row angles.
    Rope {
        x: Var,
        cos: Array2<f64>,
        sin: Array2<f64>,
    },
    /// Block-diagonal multi-head attention: rows form `groups` consecutive
    /// blocks of equal length; attention runs within each block.
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: usize,
        weights: Vec<Array2<f64>>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatRows(Var, Var),
    /// Σ (x − target)², a 1×1 scalar.
    SumSqDiff(Var, Array2<f64>),
    /// ca·a + cb·b on 1×1 scalars.
    AddScaled {
        a: Var,
        b: Var,
        ca: f64,
        cb: f64,
    },
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Forward graph recorder.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.get(id).clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(Op::Add(a, b), value)
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        debug_assert_eq!(self.nodes[row.0].value.nrows(), 1);
        let value = &self.nodes[x.0].value + &self.nodes[row.0].value;
        self.push(Op::AddRow(x, row), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(Op::MatMul(a, b), value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v.max(0.0));
        self.push(Op::Relu(x), value)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v / (1.0 + (-v).exp()));
        self.push(Op::Silu(x), value)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v * c);
        self.push(Op::Scale(x, c), value)
    }

    const LN_EPS: f64 = 1e-5;

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (n, d) = xv.dim();
        let xs = xv.as_slice().expect("standard layout");
        let gs = self.nodes[gain.0].value.as_slice().expect("standard layout");
        let bs = self.nodes[bias.0].value.as_slice().expect("standard layout");
        let mut mean = Array1::zeros(n);
        let mut rstd = Array1::zeros(n);
        let mut out = Array2::zeros((n, d));
        let os = out.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let row = &xs[i * d..(i + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + Self::LN_EPS).sqrt();
            mean[i] = mu;
            rstd[i] = rs;
            let orow = &mut os[i * d..(i + 1) * d];
            for j in 0..d {
                orow[j] = (row[j] - mu) * rs * gs[j] + bs[j];
            }
        }
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            },
            out,
        )
    }

    /// Rotates column pairs (2m, 2m+1) of every row by the per-row angles
    /// whose cosines/sines are given as (n × d/2) matrices.
    pub fn rope(&mut self, x: Var, cos: Array2<f64>, sin: Array2<f64>) -> Var {
        let xv = &self.nodes[x.0].value;
        let (n, d) = xv.dim();
        let half = d / 2;
        debug_assert_eq!(cos.dim(), (n, half));
        let xs = xv.as_slice().expect("standard layout");
        let cs = cos.as_slice().expect("standard layout");
        let ns = sin.as_slice().expect("standard layout");
        let mut out = Array2::zeros((n, d));
        let os = out.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let row = &xs[i * d..(i + 1) * d];
            let orow = &mut os[i * d..(i + 1) * d];
            let crow = &cs[i * half..(i + 1) * half];
            let srow = &ns[i * half..(i + 1) * half];
            for m in 0..half {
                let a = row[2 * m];
                let b = row[2 * m + 1];
                orow[2 * m] = a * crow[m] - b * srow[m];
                orow[2 * m + 1] = a * srow[m] + b * crow[m];
            }
        }
        self.push(Op::Rope { x, cos, sin }, out)
    }

    /// Multi-head attention over `groups` equal consecutive row blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, groups: usize) -> Var {
        let qv = &self.nodes[q.0].value;
        let kv = &self.nodes[k.0].value;
        let vv = &self.nodes[v.0].value;
        let (rows, d) = qv.dim();
        debug_assert_eq!(rows % groups, 0, "rows must split evenly into groups");
        debug_assert_eq!(d % heads, 0, "width must split evenly into heads");
        let gl = rows / groups;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut out = Array2::zeros((rows, d));
        let mut weights = Vec::with_capacity(groups * heads);
        for g in 0..groups {
            let r = g * gl..(g + 1) * gl;
            for h in 0..heads {
                let c = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![r.clone(), c.clone()]);
                let ks = kv.slice(s![r.clone(), c.clone()]);
                let vs = vv.slice(s![r.clone(), c.clone()]);
                let mut scores = Array2::zeros((gl, gl));
                general_mat_mul(scale, &qs, &ks.t(), 0.0, &mut scores);
                // Row-wise softmax with max subtraction.
                let ss = scores.as_slice_mut().expect("standard layout");
                for i in 0..gl {
                    let srow = &mut ss[i * gl..(i + 1) * gl];
                    let max = srow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for v in srow.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    let inv = 1.0 / total;
                    for v in srow.iter_mut() {
                        *v *= inv;
                    }
                }
                let mut os = out.slice_mut(s![r.clone(), c.clone()]);
                general_mat_mul(1.0, &scores, &vs, 0.0, &mut os);
                weights.push(scores);
            }
        }
        self.push(
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                weights,
            },
            out,
        )
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = &self.nodes[x.0].value;
        let d = xv.ncols();
        let mut out = Array2::zeros((idx.len(), d));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&xv.row(i));
        }
        self.push(Op::GatherRows(x, idx), out)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        debug_assert_eq!(av.ncols(), bv.ncols());
        let mut out = Array2::zeros((av.nrows() + bv.nrows(), av.ncols()));
        out.slice_mut(s![..av.nrows(), ..]).assign(av);
        out.slice_mut(s![av.nrows().., ..]).assign(bv);
        self.push(Op::ConcatRows(a, b), out)
    }

    pub fn sum_sq_diff(&mut self, x: Var, target: Array2<f64>) -> Var {
        let xv = &self.nodes[x.0].value;
        debug_assert_eq!(xv.dim(), target.dim());
        let total = xv
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        let value = Array2::from_elem((1, 1), total);
        self.push(Op::SumSqDiff(x, target), value)
    }

    pub fn add_scaled(&mut self, a: Var, b: Var, ca: f64, cb: f64) -> Var {
        let value = Array2::from_elem(
            (1, 1),
            ca * self.nodes[a.0].value[(0, 0)] + cb * self.nodes[b.0].value[(0, 0)],
        );
        self.push(Op::AddScaled { a, b, ca, cb }, value)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.dim(), (1, 1));
        self.nodes[v.0].value[(0, 0)]
    }

    /// Reverse pass from `root` (a 1×1 scalar), accumulating parameter
    /// gradients into `grads`.
    pub fn backward(&self, root: Var, grads: &mut ParamGrads) {
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(id) => {
                    grads.tensors[id.0] += &g;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::AddRow(x, row) => {
                    let summed = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                    accumulate(&mut adj, *x, g);
                    accumulate(&mut adj, *row, summed);
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let mut da = Array2::zeros(av.dim());
                    general_mat_mul(1.0, &g, &bv.t(), 0.0, &mut da);
                    accumulate(&mut adj, *a, da);
                    let mut db = Array2::zeros(bv.dim());
                    general_mat_mul(1.0, &av.t(), &g, 0.0, &mut db);
                    accumulate(&mut adj, *b, db);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = ndarray::Zip::from(&g)
                        .and(xv)
                        .map_collect(|&gg, &xx| if xx > 0.0 { gg } else { 0.0 });
                    accumulate(&mut adj, *x, dx);
                }
                Op::Silu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = ndarray::Zip::from(&g).and(xv).map_collect(|&gg, &xx| {
                        let sig = 1.0 / (1.0 + (-xx).exp());
                        gg * sig * (1.0 + xx * (1.0 - sig))
                    });
                    accumulate(&mut adj, *x, dx);
                }
                Op::Scale(x, c) => {
                    accumulate(&mut adj, *x, g.mapv(|v| v * c));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    mean,
                    rstd,
                } => {
                    let xv = &self.nodes[x.0].value;
                    let (n, d) = xv.dim();
                    let xs = xv.as_slice().expect("standard layout");
                    let gv = self.nodes[gain.0].value.as_slice().expect("standard layout");
                    let gs = g.as_slice().expect("standard layout");
                    let mut dx = Array2::zeros((n, d));
                    let mut dgain = Array2::zeros((1, d));
                    let mut dbias = Array2::zeros((1, d));
                    {
                        let dxs = dx.as_slice_mut().expect("standard layout");
                        let dgs = dgain.as_slice_mut().expect("standard layout");
                        let dbs = dbias.as_slice_mut().expect("standard layout");
                        let inv_d = 1.0 / d as f64;
                        for r in 0..n {
                            let mu = mean[r];
                            let rs = rstd[r];
                            let xrow = &xs[r * d..(r + 1) * d];
                            let grow = &gs[r * d..(r + 1) * d];
                            let dxrow = &mut dxs[r * d..(r + 1) * d];
                            let mut sum_gxh = 0.0;
                            let mut sum_gxh_xhat = 0.0;
                            for c in 0..d {
                                let xhat = (xrow[c] - mu) * rs;
                                let gxh = grow[c] * gv[c];
                                sum_gxh += gxh;
                                sum_gxh_xhat += gxh * xhat;
                                dgs[c] += grow[c] * xhat;
                                dbs[c] += grow[c];
                            }
                            let m1 = inv_d * sum_gxh;
                            let m2 = inv_d * sum_gxh_xhat;
                            for c in 0..d {
                                let xhat = (xrow[c] - mu) * rs;
                                dxrow[c] = rs * (grow[c] * gv[c] - m1 - xhat * m2);
                            }
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *gain, dgain);
                    accumulate(&mut adj, *bias, dbias);
                }
                Op::Rope { x, cos, sin } => {
                    let (n, d) = g.dim();
                    let half = d / 2;
                    let gs = g.as_slice().expect("standard layout");
                    let cs = cos.as_slice().expect("standard layout");
                    let ns = sin.as_slice().expect("standard layout");
                    let mut dx = Array2::zeros((n, d));
                    {
                        let dxs = dx.as_slice_mut().expect("standard layout");
                        for r in 0..n {
                            let grow = &gs[r * d..(r + 1) * d];
                            let dxrow = &mut dxs[r * d..(r + 1) * d];
                            let crow = &cs[r * half..(r + 1) * half];
                            let srow = &ns[r * half..(r + 1) * half];
                            for m in 0..half {
                                let ga = grow[2 * m];
                                let gb = grow[2 * m + 1];
                                dxrow[2 * m] = ga * crow[m] + gb * srow[m];
                                dxrow[2 * m + 1] = -ga * srow[m] + gb * crow[m];
                            }
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    groups,
                    weights,
                } => {
                    let qv = &self.nodes[q.0].value;
                    let kv = &self.nodes[k.0].value;
                    let vv = &self.nodes[v.0].value;
                    let (rows, d) = qv.dim();
                    let gl = rows / groups;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::zeros((rows, d));
                    let mut dk = Array2::zeros((rows, d));
                    let mut dv = Array2::zeros((rows, d));
                    let mut da = Array2::zeros((gl, gl));
                    let mut ds = Array2::zeros((gl, gl));
                    for gi in 0..*groups {
                        let r = gi * gl..(gi + 1) * gl;
                        for h in 0..*heads {
                            let c = h * dh..(h + 1) * dh;
                            let a = &weights[gi * heads + h];
                            let go = g.slice(s![r.clone(), c.clone()]);
                            let qs = qv.slice(s![r.clone(), c.clone()]);
                            let ks = kv.slice(s![r.clone(), c.clone()]);
                            let vs = vv.slice(s![r.clone(), c.clone()]);

                            let mut dvs = dv.slice_mut(s![r.clone(), c.clone()]);
                            general_mat_mul(1.0, &a.t(), &go, 1.0, &mut dvs);

                            general_mat_mul(1.0, &go, &vs.t(), 0.0, &mut da);
                            // dS = scale · A ⊙ (dA − rowsum(dA ⊙ A))
                            {
                                let aw = a.as_slice().expect("standard layout");
                                let das = da.as_slice().expect("standard layout");
                                let dss = ds.as_slice_mut().expect("standard layout");
                                for rr in 0..gl {
                                    let arow = &aw[rr * gl..(rr + 1) * gl];
                                    let darow = &das[rr * gl..(rr + 1) * gl];
                                    let dsrow = &mut dss[rr * gl..(rr + 1) * gl];
                                    let dot = arow
                                        .iter()
                                        .zip(darow)
                                        .map(|(a, da)| a * da)
                                        .sum::<f64>();
                                    for cc in 0..gl {
                                        dsrow[cc] = scale * arow[cc] * (darow[cc] - dot);
                                    }
                                }
                            }
                            let mut dqs = dq.slice_mut(s![r.clone(), c.clone()]);
                            general_mat_mul(1.0, &ds, &ks, 1.0, &mut dqs);
                            let mut dks = dk.slice_mut(s![r.clone(), c.clone()]);
                            general_mat_mul(1.0, &ds.t(), &qs, 1.0, &mut dks);
                        }
                    }
                    accumulate(&mut adj, *q, dq);
                    accumulate(&mut adj, *k, dk);
                    accumulate(&mut adj, *v, dv);
                }
                Op::GatherRows(x, idx) => {
                    let xv = &self.nodes[x.0].value;
                    let mut dx = Array2::zeros(xv.dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut row = dx.row_mut(i);
                        row += &g.row(r);
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::ConcatRows(a, b) => {
                    let an = self.nodes[a.0].value.nrows();
                    accumulate(&mut adj, *a, g.slice(s![..an, ..]).to_owned());
                    accumulate(&mut adj, *b, g.slice(s![an.., ..]).to_owned());
                }
                Op::SumSqDiff(x, target) => {
                    let xv = &self.nodes[x.0].value;
                    let g0 = g[(0, 0)];
                    let dx = ndarray::Zip::from(xv)
                        .and(target)
                        .map_collect(|&a, &t| 2.0 * g0 * (a - t));
                    accumulate(&mut adj, *x, dx);
                }
                Op::AddScaled { a, b, ca, cb } => {
                    let g0 = g[(0, 0)];
                    accumulate(&mut adj, *a, Array2::from_elem((1, 1), g0 * ca));
                    accumulate(&mut adj, *b, Array2::from_elem((1, 1), g0 * cb));
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut adj[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
