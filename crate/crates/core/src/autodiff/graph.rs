use std::collections::HashMap;

use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr(u32);

impl Expr {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Constant(f64),
    /// Leaf bound at evaluation time from [`Bindings::inputs`].
    Input(u32),
    /// Leaf bound at evaluation time from [`Bindings::params`].
    Param(u32),
    Add(Expr, Expr),
    Mul(Expr, Expr),
    Neg(Expr),
    Tanh(Expr),
    Relu(Expr),
    /// Heaviside step with value 0 at the origin; the derivative of `Relu`.
    Step(Expr),
    Sigmoid(Expr),
    Softplus(Expr),
    Sum(Vec<Expr>),
    Dot(Vec<Expr>, Vec<Expr>),
}

/// Values for the input and parameter leaves of a graph.
#[derive(Clone, Copy, Debug, Default)]
pub struct Bindings<'a> {
    pub inputs: &'a [f64],
    pub params: &'a [f64],
}

impl<'a> Bindings<'a> {
    pub fn new(inputs: &'a [f64], params: &'a [f64]) -> Self {
        Self { inputs, params }
    }
}

/// Append-only arena of expression nodes.
///
/// Children always have smaller indices than their parents, so the graph is
/// acyclic by construction and index order is a topological order.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Op>,
    zero: Expr,
    one: Expr,
    inputs: HashMap<u32, Expr>,
    params: HashMap<u32, Expr>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        let mut g = Graph {
            nodes: Vec::new(),
            zero: Expr(0),
            one: Expr(0),
            inputs: HashMap::new(),
            params: HashMap::new(),
        };
        g.zero = g.push(Op::Constant(0.0));
        g.one = g.push(Op::Constant(1.0));
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, e: Expr) -> &Op {
        &self.nodes[e.index()]
    }

    fn push(&mut self, op: Op) -> Expr {
        let id = u32::try_from(self.nodes.len()).expect("graph exceeds u32 nodes");
        self.nodes.push(op);
        Expr(id)
    }

    fn constant_value(&self, e: Expr) -> Option<f64> {
        match self.nodes[e.index()] {
            Op::Constant(c) => Some(c),
            _ => None,
        }
    }

    pub fn zero(&self) -> Expr {
        self.zero
    }

    pub fn one(&self) -> Expr {
        self.one
    }

    pub fn constant(&mut self, c: f64) -> Expr {
        if c == 0.0 {
            self.zero
        } else if c == 1.0 {
            self.one
        } else {
            self.push(Op::Constant(c))
        }
    }

    /// Leaves are interned: the same slot always yields the same node, so
    /// differentiating with respect to `param(k)` sees every use of it.
    pub fn input(&mut self, slot: u32) -> Expr {
        if let Some(&e) = self.inputs.get(&slot) {
            return e;
        }
        let e = self.push(Op::Input(slot));
        self.inputs.insert(slot, e);
        e
    }

    pub fn param(&mut self, slot: u32) -> Expr {
        if let Some(&e) = self.params.get(&slot) {
            return e;
        }
        let e = self.push(Op::Param(slot));
        self.params.insert(slot, e);
        e
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.constant_value(a), self.constant_value(b)) {
            (Some(x), Some(y)) => self.constant(x + y),
            (Some(0.0), _) => b,
            (_, Some(0.0)) => a,
            _ => self.push(Op::Add(a, b)),
        }
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.constant_value(a), self.constant_value(b)) {
            (Some(x), Some(y)) => self.constant(x * y),
            (Some(0.0), _) | (_, Some(0.0)) => self.zero,
            (Some(1.0), _) => b,
            (_, Some(1.0)) => a,
            _ => self.push(Op::Mul(a, b)),
        }
    }

    pub fn scale(&mut self, c: f64, a: Expr) -> Expr {
        let c = self.constant(c);
        self.mul(c, a)
    }

    pub fn neg(&mut self, a: Expr) -> Expr {
        match self.nodes[a.index()] {
            Op::Constant(c) => self.constant(-c),
            Op::Neg(inner) => inner,
            _ => self.push(Op::Neg(a)),
        }
    }

    pub fn square(&mut self, a: Expr) -> Expr {
        self.mul(a, a)
    }

    pub fn tanh(&mut self, a: Expr) -> Expr {
        match self.constant_value(a) {
            Some(c) => self.constant(c.tanh()),
            None => self.push(Op::Tanh(a)),
        }
    }

    pub fn relu(&mut self, a: Expr) -> Expr {
        match self.constant_value(a) {
            Some(c) => self.constant(c.max(0.0)),
            None => self.push(Op::Relu(a)),
        }
    }

    pub fn step(&mut self, a: Expr) -> Expr {
        match self.constant_value(a) {
            Some(c) => self.constant(step(c)),
            None => self.push(Op::Step(a)),
        }
    }

    pub fn sigmoid(&mut self, a: Expr) -> Expr {
        match self.constant_value(a) {
            Some(c) => self.constant(sigmoid(c)),
            None => self.push(Op::Sigmoid(a)),
        }
    }

    pub fn softplus(&mut self, a: Expr) -> Expr {
        match self.constant_value(a) {
            Some(c) => self.constant(softplus(c)),
            None => self.push(Op::Softplus(a)),
        }
    }

    pub fn sum(&mut self, xs: &[Expr]) -> Expr {
        let terms: Vec<Expr> = xs.iter().copied().filter(|&e| e != self.zero).collect();
        match terms.len() {
            0 => self.zero,
            1 => terms[0],
            2 => self.add(terms[0], terms[1]),
            _ => self.push(Op::Sum(terms)),
        }
    }

    pub fn mean(&mut self, xs: &[Expr]) -> Expr {
        let s = self.sum(xs);
        self.scale(1.0 / xs.len() as f64, s)
    }

    pub fn dot(&mut self, xs: &[Expr], ys: &[Expr]) -> Result<Expr> {
        if xs.len() != ys.len() {
            return Err(Error::Shape { expected: xs.len(), got: ys.len() });
        }
        Ok(self.push(Op::Dot(xs.to_vec(), ys.to_vec())))
    }

    fn children(&self, e: Expr, out: &mut Vec<Expr>) {
        match &self.nodes[e.index()] {
            Op::Constant(_) | Op::Input(_) | Op::Param(_) => {}
            Op::Add(a, b) | Op::Mul(a, b) => {
                out.push(*a);
                out.push(*b);
            }
            Op::Neg(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Step(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a) => out.push(*a),
            Op::Sum(xs) => out.extend_from_slice(xs),
            Op::Dot(xs, ys) => {
                out.extend_from_slice(xs);
                out.extend_from_slice(ys);
            }
        }
    }

    /// Mark every node reachable from `roots`, indexed up to the largest root.
    fn reachable(&self, roots: &[Expr]) -> Vec<bool> {
        let top = roots.iter().map(|r| r.index()).max().map_or(0, |m| m + 1);
        let mut seen = vec![false; top];
        let mut stack: Vec<Expr> = roots.to_vec();
        let mut kids = Vec::new();
        while let Some(e) = stack.pop() {
            if seen[e.index()] {
                continue;
            }
            seen[e.index()] = true;
            kids.clear();
            self.children(e, &mut kids);
            stack.extend(kids.iter().filter(|k| !seen[k.index()]));
        }
        seen
    }

    pub fn evaluate(&self, root: Expr, bindings: &Bindings<'_>) -> Result<f64> {
        Ok(self.evaluate_many(&[root], bindings)?[0])
    }

    /// Evaluate several roots sharing one pass over the graph.
    pub fn evaluate_many(&self, roots: &[Expr], bindings: &Bindings<'_>) -> Result<Vec<f64>> {
        let seen = self.reachable(roots);
        let mut vals = vec![0.0; seen.len()];
        for (i, live) in seen.iter().enumerate() {
            if !*live {
                continue;
            }
            let v = |e: &Expr| vals[e.index()];
            vals[i] = match &self.nodes[i] {
                Op::Constant(c) => *c,
                Op::Input(s) => *bindings
                    .inputs
                    .get(*s as usize)
                    .ok_or(Error::MissingBinding { kind: "input", slot: *s })?,
                Op::Param(s) => *bindings
                    .params
                    .get(*s as usize)
                    .ok_or(Error::MissingBinding { kind: "param", slot: *s })?,
                Op::Add(a, b) => v(a) + v(b),
                Op::Mul(a, b) => v(a) * v(b),
                Op::Neg(a) => -v(a),
                Op::Tanh(a) => v(a).tanh(),
                Op::Relu(a) => v(a).max(0.0),
                Op::Step(a) => step(v(a)),
                Op::Sigmoid(a) => sigmoid(v(a)),
                Op::Softplus(a) => softplus(v(a)),
                Op::Sum(xs) => xs.iter().map(v).sum(),
                Op::Dot(xs, ys) => xs.iter().zip(ys).map(|(x, y)| v(x) * v(y)).sum(),
            };
        }
        Ok(roots.iter().map(|r| vals[r.index()]).collect())
    }

    /// Gradient of the single scalar in `outputs`; anything else is a rank error.
    pub fn grad_of(&mut self, outputs: &[Expr], wrt: &[Expr]) -> Result<Vec<Expr>> {
        match outputs {
            [root] => self.grad(*root, wrt),
            _ => Err(Error::Rank(outputs.len())),
        }
    }

    /// Build expressions for `d root / d leaf` for each leaf in `wrt`.
    ///
    /// The returned nodes live in the same graph, so they may be evaluated,
    /// combined into further expressions or differentiated again.
    pub fn grad(&mut self, root: Expr, wrt: &[Expr]) -> Result<Vec<Expr>> {
        for w in wrt {
            if !matches!(self.nodes[w.index()], Op::Input(_) | Op::Param(_)) {
                return Err(Error::Domain(format!(
                    "can only differentiate with respect to input or param leaves, got {:?}",
                    self.nodes[w.index()]
                )));
            }
        }
        let seen = self.reachable(&[root]);
        let mut contrib: Vec<Vec<Expr>> = vec![Vec::new(); seen.len()];
        let mut adjoint: Vec<Option<Expr>> = vec![None; seen.len()];
        contrib[root.index()].push(self.one);

        for id in (0..seen.len()).rev() {
            if !seen[id] || contrib[id].is_empty() {
                continue;
            }
            let parts = std::mem::take(&mut contrib[id]);
            let a = self.sum(&parts);
            adjoint[id] = Some(a);
            if a == self.zero {
                continue;
            }
            let node = Expr(id as u32);
            let op = self.nodes[id].clone();
            match op {
                Op::Constant(_) | Op::Input(_) | Op::Param(_) | Op::Step(_) => {}
                Op::Add(x, y) => {
                    contrib[x.index()].push(a);
                    contrib[y.index()].push(a);
                }
                Op::Mul(x, y) => {
                    let dx = self.mul(a, y);
                    let dy = self.mul(a, x);
                    contrib[x.index()].push(dx);
                    contrib[y.index()].push(dy);
                }
                Op::Neg(x) => {
                    let d = self.neg(a);
                    contrib[x.index()].push(d);
                }
                Op::Tanh(x) => {
                    // d tanh = 1 - tanh²
                    let sq = self.mul(node, node);
                    let one = self.one;
                    let local = self.sub(one, sq);
                    let d = self.mul(a, local);
                    contrib[x.index()].push(d);
                }
                Op::Relu(x) => {
                    let local = self.step(x);
                    let d = self.mul(a, local);
                    contrib[x.index()].push(d);
                }
                Op::Sigmoid(x) => {
                    let one = self.one;
                    let c = self.sub(one, node);
                    let local = self.mul(node, c);
                    let d = self.mul(a, local);
                    contrib[x.index()].push(d);
                }
                Op::Softplus(x) => {
                    let local = self.sigmoid(x);
                    let d = self.mul(a, local);
                    contrib[x.index()].push(d);
                }
                Op::Sum(xs) => {
                    for x in xs {
                        contrib[x.index()].push(a);
                    }
                }
                Op::Dot(xs, ys) => {
                    for (x, y) in xs.into_iter().zip(ys) {
                        let dx = self.mul(a, y);
                        let dy = self.mul(a, x);
                        contrib[x.index()].push(dx);
                        contrib[y.index()].push(dy);
                    }
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| adjoint.get(w.index()).copied().flatten().unwrap_or(self.zero))
            .collect())
    }
}

pub(crate) fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_origin() {
        let mut g = Graph::new();
        let x = g.input(0);
        let t = g.tanh(x);
        assert_eq!(g.evaluate(t, &Bindings::new(&[0.0], &[])).unwrap(), 0.0);
    }

    #[test]
    fn dot_hand_arithmetic() {
        let mut g = Graph::new();
        let xs: Vec<_> = (0..4).map(|i| g.input(i)).collect();
        let d = g.dot(&xs[..2], &xs[2..]).unwrap();
        let v = g.evaluate(d, &Bindings::new(&[1.0, 2.0, 3.0, 4.0], &[])).unwrap();
        assert_eq!(v, 11.0);
    }

    #[test]
    fn dot_length_mismatch() {
        let mut g = Graph::new();
        let a = g.input(0);
        assert!(matches!(g.dot(&[a, a], &[a]), Err(Error::Shape { .. })));
    }

    #[test]
    fn missing_binding() {
        let mut g = Graph::new();
        let x = g.input(3);
        let p = g.param(0);
        let y = g.mul(x, p);
        let err = g.evaluate(y, &Bindings::new(&[1.0], &[2.0])).unwrap_err();
        assert!(matches!(err, Error::MissingBinding { kind: "input", slot: 3 }));
        let err = g.evaluate(y, &Bindings::new(&[0.0; 4], &[])).unwrap_err();
        assert!(matches!(err, Error::MissingBinding { kind: "param", slot: 0 }));
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.input(0);
        let y = g.mul(x, x);
        let dy = g.grad(y, &[x]).unwrap()[0];
        assert_eq!(g.evaluate(dy, &Bindings::new(&[3.0], &[])).unwrap(), 6.0);
    }

    #[test]
    fn tanh_second_derivative_at_origin() {
        let mut g = Graph::new();
        let x = g.input(0);
        let y = g.tanh(x);
        let d1 = g.grad(y, &[x]).unwrap()[0];
        let d2 = g.grad(d1, &[x]).unwrap()[0];
        let b = Bindings::new(&[0.0], &[]);
        assert_eq!(g.evaluate(d1, &b).unwrap(), 1.0);
        assert_eq!(g.evaluate(d2, &b).unwrap(), 0.0);
        // tanh''' (0) = -2
        let d3 = g.grad(d2, &[x]).unwrap()[0];
        assert!((g.evaluate(d3, &b).unwrap() + 2.0).abs() < 1e-15);
    }

    #[test]
    fn rank_error_for_vector_root() {
        let mut g = Graph::new();
        let x = g.input(0);
        let y = g.tanh(x);
        assert!(matches!(g.grad_of(&[x, y], &[x]), Err(Error::Rank(2))));
        assert!(g.grad_of(&[y], &[x]).is_ok());
    }

    #[test]
    fn grad_wrt_non_leaf_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(0);
        let y = g.tanh(x);
        assert!(matches!(g.grad(y, &[y]), Err(Error::Domain(_))));
    }

    #[test]
    fn unreachable_leaf_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input(0);
        let z = g.input(1);
        let y = g.tanh(x);
        let d = g.grad(y, &[z]).unwrap()[0];
        assert_eq!(d, g.zero());
    }

    #[test]
    fn relu_derivative_is_zero_at_zero() {
        let mut g = Graph::new();
        let x = g.input(0);
        let y = g.relu(x);
        let d = g.grad(y, &[x]).unwrap()[0];
        assert_eq!(g.evaluate(d, &Bindings::new(&[0.0], &[])).unwrap(), 0.0);
        assert_eq!(g.evaluate(d, &Bindings::new(&[0.5], &[])).unwrap(), 1.0);
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
