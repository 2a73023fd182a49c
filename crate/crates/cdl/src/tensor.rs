//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation as a node; [`Tape::backward`] walks the
//! nodes in reverse and accumulates gradients for parameter leaves into a
//! [`Grads`] buffer that parallels a [`ParamStore`]. Tensors are `ndarray`
//! dynamic arrays; scalars are 1-element 1-d arrays so every node has a
//! uniform value type. The op set is exactly what the models in this crate
//! need -- vectors, one matrix-vector product in each orientation, a few
//! pointwise nonlinearities, softmax variants, and small reductions.

use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};
use std::rc::Rc;

/// Dense dynamic-dimensional tensor of `f64`.
pub type Tensor = ArrayD<f64>;

/// Build a 1-d tensor from a slice.
pub fn vector(data: &[f64]) -> Tensor {
    ArrayD::from_shape_vec(IxDyn(&[data.len()]), data.to_vec()).expect("vector shape")
}

/// Build a 1-element tensor holding a scalar.
pub fn scalar(x: f64) -> Tensor {
    vector(&[x])
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Position of the parameter in its store (also its slot in [`Grads`]).
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of trainable tensors.
///
/// Tensors are reference-counted so that binding a parameter onto a tape is a
/// cheap clone; the store keeps the only long-lived handle and mutates through
/// `Rc::make_mut` once tapes referencing the old value are gone.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Rc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under `name` and return its id.
    ///
    /// Panics if the name is already taken; parameter names are unique by
    /// construction so a duplicate is a wiring bug.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.tensors.push(Rc::new(tensor));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.tensors[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Flatten all parameters, in registration order, into one vector.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_elements());
        for t in &self.tensors {
            out.extend(t.iter().copied());
        }
        out
    }

    /// Overwrite all parameters from a flat vector produced by [`Self::to_flat`]
    /// on a store with identical shapes.
    pub fn load_flat(&mut self, data: &[f64]) -> Result<(), String> {
        if data.len() != self.total_elements() {
            return Err(format!(
                "parameter blob holds {} values but the store needs {}",
                data.len(),
                self.total_elements()
            ));
        }
        let mut offset = 0;
        for rc in &mut self.tensors {
            let t = Rc::make_mut(rc);
            let n = t.len();
            for (dst, src) in t.iter_mut().zip(&data[offset..offset + n]) {
                *dst = *src;
            }
            offset += n;
        }
        Ok(())
    }

    /// SHA-256 of the little-endian bytes of all parameters in order.
    ///
    /// Used to fingerprint model state in training logs and checkpoints.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tensors {
            for x in t.iter() {
                hasher.update(x.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Gradient buffer parallel to a [`ParamStore`].
///
/// Slots stay `None` until an op touches the parameter, so sparse updates
/// (e.g. embedding rows) never materialize dense zero tensors for untouched
/// parameters... except that `backward` touches whole tensors; the laziness
/// only saves parameters absent from the graph entirely.
#[derive(Debug, Clone)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn zeros(store: &ParamStore) -> Self {
        Self {
            slots: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    fn accumulate(&mut self, id: ParamId, shape: &[usize], add: impl FnOnce(&mut Tensor)) {
        let slot = &mut self.slots[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(IxDyn(shape)));
        }
        add(slot.as_mut().unwrap());
    }

    /// L2 norm over every stored gradient element.
    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Multiply every gradient by `k`.
    pub fn scale(&mut self, k: f64) {
        for slot in self.slots.iter_mut().flatten() {
            slot.mapv_inplace(|x| x * k);
        }
    }

    /// True if any stored gradient element is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .any(|t| t.iter().any(|x| !x.is_finite()))
    }
}

/// Recorded operation. Parents are earlier tape indices, so a single reverse
/// sweep over node indices is a valid topological order.
#[derive(Debug)]
enum Op {
    /// Constant or parameter input; no parents.
    Leaf,
    /// Row `row` of matrix node `m`.
    Row { m: Var, row: usize },
    /// Matrix-vector product `m (r,c) . v (c) -> (r)`.
    MatVec { m: Var, v: Var },
    /// Vector-matrix product `v (r) . m (r,c) -> (c)`.
    VecMat { v: Var, m: Var },
    Add(Var, Var),
    Sub(Var, Var),
    /// Elementwise product of same-shaped tensors.
    Mul(Var, Var),
    /// Scalar node times vector node.
    BroadcastMul { s: Var, v: Var },
    Scale { x: Var, k: f64 },
    /// Add a constant; the constant itself is not needed for the backward pass.
    AddConst { x: Var },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    /// Natural log; defined only for strictly positive inputs.
    Ln(Var),
    /// 1-d concatenation; `ends[i]` is the exclusive end of part `i`.
    Concat { parts: Vec<Var>, ends: Vec<usize> },
    /// Stack k same-length vectors into a (k, d) matrix.
    StackRows { rows: Vec<Var> },
    Softmax(Var),
    /// Softmax restricted to a mask; masked-out entries are exactly zero.
    /// The mask is not stored: masked outputs are 0, which already zeroes
    /// their gradient in the shared softmax backward rule.
    MaskedSoftmax { x: Var },
    /// Scalar dot product of two same-length vectors.
    Dot(Var, Var),
    /// Scalar sum of all elements.
    Sum(Var),
    /// Scalar mean of all elements.
    Mean(Var),
    /// Scalar pick of element `i` from a vector.
    Index { x: Var, i: usize },
    /// Scalar Euclidean norm of a vector.
    L2Norm(Var),
    /// Column-wise max of a (k, d) matrix -> (d); `argmax[j]` caches the
    /// winning row per column for the backward pass.
    ColMax { m: Var, argmax: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    /// Set when this leaf is a trainable parameter.
    param: Option<ParamId>,
}

/// Growable record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a 1-element node as a plain `f64`.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.len(), 1, "scalar_value on non-scalar node");
        t[0]
    }

    fn push(&mut self, value: Tensor, op: Op, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value: Rc::new(value),
            op,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a constant (gradient stops here).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, None)
    }

    pub fn constant_vec(&mut self, data: &[f64]) -> Var {
        self.constant(vector(data))
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.constant(scalar(x))
    }

    /// Bind a parameter onto the tape; gradients flow into its slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Rc::clone(&store.tensors[id.0]),
            op: Op::Leaf,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn row(&mut self, m: Var, row: usize) -> Var {
        let mat = self.value(m);
        assert_eq!(mat.ndim(), 2, "row() needs a matrix");
        assert!(row < mat.shape()[0], "row {row} out of range");
        let v = mat.index_axis(ndarray::Axis(0), row).to_owned().into_dyn();
        self.push(v, Op::Row { m, row }, None)
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Var {
        let (mat, vec) = (self.value(m), self.value(v));
        assert_eq!(mat.ndim(), 2);
        assert_eq!(vec.ndim(), 1);
        assert_eq!(mat.shape()[1], vec.len(), "matvec inner dims");
        let m2 = mat.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let v1 = vec.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let out = m2.dot(&v1).into_dyn();
        self.push(out, Op::MatVec { m, v }, None)
    }

    pub fn vecmat(&mut self, v: Var, m: Var) -> Var {
        let (vec, mat) = (self.value(v), self.value(m));
        assert_eq!(vec.ndim(), 1);
        assert_eq!(mat.ndim(), 2);
        assert_eq!(vec.len(), mat.shape()[0], "vecmat inner dims");
        let v1 = vec.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let m2 = mat.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let out = v1.dot(&m2).into_dyn();
        self.push(out, Op::VecMat { v, m }, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = {
            let (x, y) = (self.value(a), self.value(b));
            assert_eq!(x.shape(), y.shape(), "add shapes");
            x + y
        };
        self.push(out, Op::Add(a, b), None)
    }

    /// Sum any number of same-shaped nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = {
            let (x, y) = (self.value(a), self.value(b));
            assert_eq!(x.shape(), y.shape(), "sub shapes");
            x - y
        };
        self.push(out, Op::Sub(a, b), None)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = {
            let (x, y) = (self.value(a), self.value(b));
            assert_eq!(x.shape(), y.shape(), "mul shapes");
            x * y
        };
        self.push(out, Op::Mul(a, b), None)
    }

    /// Multiply vector `v` by scalar node `s`.
    pub fn broadcast_mul(&mut self, s: Var, v: Var) -> Var {
        let out = {
            let (sv, vv) = (self.value(s), self.value(v));
            assert_eq!(sv.len(), 1, "broadcast_mul scalar side");
            vv * sv[0]
        };
        self.push(out, Op::BroadcastMul { s, v }, None)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x) * k;
        self.push(out, Op::Scale { x, k }, None)
    }

    pub fn add_const(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x) + k;
        self.push(out, Op::AddConst { x }, None)
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_const(neg, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(x), None)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::tanh);
        self.push(out, Op::Tanh(x), None)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(x), None)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::ln);
        self.push(out, Op::Ln(x), None)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut data = Vec::new();
        let mut ends = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.ndim(), 1, "concat takes vectors");
            data.extend(t.iter().copied());
            ends.push(data.len());
        }
        self.push(
            vector(&data),
            Op::Concat {
                parts: parts.to_vec(),
                ends,
            },
            None,
        )
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty());
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let t = self.value(r);
            assert_eq!(t.ndim(), 1);
            assert_eq!(t.len(), d, "stack_rows row lengths");
            data.extend(t.iter().copied());
        }
        let out = Tensor::from_shape_vec(IxDyn(&[rows.len(), d]), data).unwrap();
        self.push(
            out,
            Op::StackRows {
                rows: rows.to_vec(),
            },
            None,
        )
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_dense(self.value(x));
        self.push(out, Op::Softmax(x), None)
    }

    /// Softmax over the entries where `mask` is true; all others are exactly 0.
    /// At least one entry must be unmasked.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<Vec<bool>>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), mask.len(), "mask length");
        assert!(mask.iter().any(|&b| b), "masked_softmax with empty mask");
        let mut max = f64::NEG_INFINITY;
        for (v, &m) in xv.iter().zip(mask.iter()) {
            if m && *v > max {
                max = *v;
            }
        }
        let mut out = vec![0.0; xv.len()];
        let mut denom = 0.0;
        for (i, (v, &m)) in xv.iter().zip(mask.iter()).enumerate() {
            if m {
                let e = (v - max).exp();
                out[i] = e;
                denom += e;
            }
        }
        for o in &mut out {
            *o /= denom;
        }
        self.push(vector(&out), Op::MaskedSoftmax { x }, None)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let out = {
            let (x, y) = (self.value(a), self.value(b));
            assert_eq!(x.shape(), y.shape(), "dot shapes");
            x.iter().zip(y.iter()).map(|(p, q)| p * q).sum::<f64>()
        };
        self.push(scalar(out), Op::Dot(a, b), None)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = self.value(x).sum();
        self.push(scalar(out), Op::Sum(x), None)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        assert!(!t.is_empty());
        let out = t.sum() / t.len() as f64;
        self.push(scalar(out), Op::Mean(x), None)
    }

    pub fn index(&mut self, x: Var, i: usize) -> Var {
        let t = self.value(x);
        assert_eq!(t.ndim(), 1);
        assert!(i < t.len(), "index {i} out of range");
        let out = t[i];
        self.push(scalar(out), Op::Index { x, i }, None)
    }

    pub fn l2_norm(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(scalar(out), Op::L2Norm(x), None)
    }

    /// Column-wise max over a (k, d) matrix; ties go to the lowest row index.
    pub fn col_max(&mut self, m: Var) -> Var {
        let mat = self.value(m);
        assert_eq!(mat.ndim(), 2);
        let (k, d) = (mat.shape()[0], mat.shape()[1]);
        assert!(k > 0 && d > 0);
        let mut out = vec![f64::NEG_INFINITY; d];
        let mut argmax = vec![0usize; d];
        for i in 0..k {
            for j in 0..d {
                let v = mat[[i, j]];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        self.push(vector(&out), Op::ColMax { m, argmax }, None)
    }

    /// Accumulate `d root / d param` into `grads` for every parameter leaf
    /// reachable from `root`, seeding the root (a scalar node) with `seed`.
    pub fn backward(&self, root: Var, seed: f64, grads: &mut Grads) {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward roots must be scalar nodes"
        );
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(scalar(seed));

        // Walking indices high-to-low is a reverse topological order because
        // every op's parents precede it on the tape.
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(pid) = node.param {
                grads.accumulate(pid, node.value.shape(), |acc| *acc += &g);
            }
            match &node.op {
                Op::Leaf => {}
                Op::Row { m, row } => {
                    let shape = self.nodes[m.0].value.shape().to_vec();
                    add_to(&mut adj[m.0], &shape, |dm| {
                        let mut r = dm.index_axis_mut(ndarray::Axis(0), *row);
                        let g1 = g.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                        r += &g1;
                    });
                }
                Op::MatVec { m, v } => {
                    let mval = Rc::clone(&self.nodes[m.0].value);
                    let vval = Rc::clone(&self.nodes[v.0].value);
                    let (r, c) = (mval.shape()[0], mval.shape()[1]);
                    add_to(&mut adj[m.0], &[r, c], |dm| {
                        for i in 0..r {
                            let gi = g[i];
                            if gi != 0.0 {
                                for j in 0..c {
                                    dm[[i, j]] += gi * vval[j];
                                }
                            }
                        }
                    });
                    add_to(&mut adj[v.0], &[c], |dv| {
                        for i in 0..r {
                            let gi = g[i];
                            if gi != 0.0 {
                                for j in 0..c {
                                    dv[j] += gi * mval[[i, j]];
                                }
                            }
                        }
                    });
                }
                Op::VecMat { v, m } => {
                    let vval = Rc::clone(&self.nodes[v.0].value);
                    let mval = Rc::clone(&self.nodes[m.0].value);
                    let (r, c) = (mval.shape()[0], mval.shape()[1]);
                    add_to(&mut adj[v.0], &[r], |dv| {
                        for i in 0..r {
                            let mut acc = 0.0;
                            for j in 0..c {
                                acc += mval[[i, j]] * g[j];
                            }
                            dv[i] += acc;
                        }
                    });
                    add_to(&mut adj[m.0], &[r, c], |dm| {
                        for i in 0..r {
                            let vi = vval[i];
                            if vi != 0.0 {
                                for j in 0..c {
                                    dm[[i, j]] += vi * g[j];
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    let shape = g.shape().to_vec();
                    add_to(&mut adj[a.0], &shape, |d| *d += &g);
                    add_to(&mut adj[b.0], &shape, |d| *d += &g);
                }
                Op::Sub(a, b) => {
                    let shape = g.shape().to_vec();
                    add_to(&mut adj[a.0], &shape, |d| *d += &g);
                    add_to(&mut adj[b.0], &shape, |d| *d -= &g);
                }
                Op::Mul(a, b) => {
                    let av = Rc::clone(&self.nodes[a.0].value);
                    let bv = Rc::clone(&self.nodes[b.0].value);
                    let shape = g.shape().to_vec();
                    add_to(&mut adj[a.0], &shape, |d| *d += &(&g * &*bv));
                    add_to(&mut adj[b.0], &shape, |d| *d += &(&g * &*av));
                }
                Op::BroadcastMul { s, v } => {
                    let sv = self.nodes[s.0].value[0];
                    let vv = Rc::clone(&self.nodes[v.0].value);
                    let vlen = vv.shape().to_vec();
                    add_to(&mut adj[s.0], &[1], |d| {
                        d[0] += g.iter().zip(vv.iter()).map(|(p, q)| p * q).sum::<f64>();
                    });
                    add_to(&mut adj[v.0], &vlen, |d| *d += &(&g * sv));
                }
                Op::Scale { x, k } => {
                    let shape = g.shape().to_vec();
                    add_to(&mut adj[x.0], &shape, |d| *d += &(&g * *k));
                }
                Op::AddConst { x } => {
                    let shape = g.shape().to_vec();
                    add_to(&mut adj[x.0], &shape, |d| *d += &g);
                }
                Op::Sigmoid(x) => {
                    let y = Rc::clone(&node.value);
                    let shape = g.shape().to_vec();
                    add_to(&mut adj[x.0], &shape, |d| {
                        azip_add(d, &g, &y, |gi, yi| gi * yi * (1.0 - yi));
                    });
                }
                Op::Tanh(x) => {
                    let y = Rc::clone(&node.value);
                    let shape = g.shape().to_vec();
                    add_to(&mut adj[x.0], &shape, |d| {
                        azip_add(d, &g, &y, |gi, yi| gi * (1.0 - yi * yi));
                    });
                }
                Op::Relu(x) => {
                    let xv = Rc::clone(&self.nodes[x.0].value);
                    let shape = g.shape().to_vec();
                    add_to(&mut adj[x.0], &shape, |d| {
                        azip_add(d, &g, &xv, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                    });
                }
                Op::Ln(x) => {
                    let xv = Rc::clone(&self.nodes[x.0].value);
                    let shape = g.shape().to_vec();
                    add_to(&mut adj[x.0], &shape, |d| {
                        azip_add(d, &g, &xv, |gi, xi| gi / xi);
                    });
                }
                Op::Concat { parts, ends } => {
                    let mut start = 0;
                    for (&p, &end) in parts.iter().zip(ends.iter()) {
                        let len = end - start;
                        let piece = g.slice(ndarray::s![start..end]).to_owned().into_dyn();
                        add_to(&mut adj[p.0], &[len], |d| *d += &piece);
                        start = end;
                    }
                }
                Op::StackRows { rows } => {
                    let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                    for (i, &r) in rows.iter().enumerate() {
                        let piece = g2.row(i).to_owned().into_dyn();
                        let len = piece.len();
                        add_to(&mut adj[r.0], &[len], |d| *d += &piece);
                    }
                }
                Op::Softmax(x) | Op::MaskedSoftmax { x } => {
                    // dL/dx_i = y_i * (g_i - sum_j g_j y_j); masked entries have
                    // y_i = 0 so the same formula leaves them at zero.
                    let y = Rc::clone(&node.value);
                    let gy: f64 = g.iter().zip(y.iter()).map(|(p, q)| p * q).sum();
                    let shape = g.shape().to_vec();
                    add_to(&mut adj[x.0], &shape, |d| {
                        azip_add2(d, &g, &y, |gi, yi| yi * (gi - gy));
                    });
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    let av = Rc::clone(&self.nodes[a.0].value);
                    let bv = Rc::clone(&self.nodes[b.0].value);
                    let shape = av.shape().to_vec();
                    add_to(&mut adj[a.0], &shape, |d| *d += &(&*bv * g0));
                    add_to(&mut adj[b.0], &shape, |d| *d += &(&*av * g0));
                }
                Op::Sum(x) => {
                    let g0 = g[0];
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    add_to(&mut adj[x.0], &shape, |d| d.mapv_inplace(|v| v + g0));
                }
                Op::Mean(x) => {
                    let n = self.nodes[x.0].value.len() as f64;
                    let g0 = g[0] / n;
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    add_to(&mut adj[x.0], &shape, |d| d.mapv_inplace(|v| v + g0));
                }
                Op::Index { x, i } => {
                    let g0 = g[0];
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    add_to(&mut adj[x.0], &shape, |d| d[*i] += g0);
                }
                Op::L2Norm(x) => {
                    let y0 = node.value[0];
                    let xv = Rc::clone(&self.nodes[x.0].value);
                    let shape = xv.shape().to_vec();
                    // Gradient of the norm at the origin is taken as zero.
                    if y0 > 0.0 {
                        let g0 = g[0] / y0;
                        add_to(&mut adj[x.0], &shape, |d| *d += &(&*xv * g0));
                    }
                }
                Op::ColMax { m, argmax } => {
                    let shape = self.nodes[m.0].value.shape().to_vec();
                    add_to(&mut adj[m.0], &shape, |dm| {
                        for (j, &i) in argmax.iter().enumerate() {
                            dm[[i, j]] += g[j];
                        }
                    });
                }
            }
        }
    }
}

/// Numerically stable softmax of a full tensor (flattened order preserved).
pub fn softmax_dense(x: &Tensor) -> Tensor {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = x.mapv(|v| (v - max).exp());
    let denom = out.sum();
    out.mapv_inplace(|v| v / denom);
    out
}

fn add_to(slot: &mut Option<Tensor>, shape: &[usize], add: impl FnOnce(&mut Tensor)) {
    if slot.is_none() {
        *slot = Some(Tensor::zeros(IxDyn(shape)));
    }
    add(slot.as_mut().unwrap());
}

/// `d += f(g, y)` elementwise over same-shaped tensors.
fn azip_add(d: &mut Tensor, g: &Tensor, y: &Tensor, f: impl Fn(f64, f64) -> f64) {
    for ((di, gi), yi) in d.iter_mut().zip(g.iter()).zip(y.iter()) {
        *di += f(*gi, *yi);
    }
}

fn azip_add2(d: &mut Tensor, g: &Tensor, y: &Tensor, f: impl Fn(f64, f64) -> f64) {
    azip_add(d, g, y, f)
}
