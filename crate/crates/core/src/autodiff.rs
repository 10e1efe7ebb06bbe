//! Reverse-mode automatic differentiation on a flat tape.
//!
//! The posterior density is written once, generically over [`Real`], and evaluated
//! either with plain `f64` (value-only path, used by finite-difference checks and
//! step-size search) or with tape-backed [`Var`]s (value + gradient path, used by
//! the Hamiltonian sampler). Every node stores at most two parents together with
//! the local partial derivatives, so the backward sweep is a single reverse loop
//! of fused multiply-adds.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    val: f64,
    p1: u32,
    d1: f64,
    p2: u32,
    d2: f64,
}

/// Gradient tape. Cleared and reused between evaluations; nodes are never
/// removed individually.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    adj: RefCell<Vec<f64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            adj: RefCell::new(Vec::new()),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
            adj: RefCell::new(Vec::with_capacity(n)),
        }
    }

    /// Drop all nodes, keeping allocated capacity.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, val: f64, p1: u32, d1: f64, p2: u32, d2: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let i = nodes.len() as u32;
        nodes.push(Node { val, p1, d1, p2, d2 });
        Var { tape: self, i }
    }

    /// Introduce an independent input variable.
    pub fn var(&self, val: f64) -> Var<'_> {
        self.push(val, NONE, 0.0, NONE, 0.0)
    }

    /// Introduce input variables for a whole slice, in order. Inputs pushed
    /// first occupy node indices `0..x.len()`, which is what
    /// [`Tape::gradient`] assumes.
    pub fn vars(&self, x: &[f64]) -> Vec<Var<'_>> {
        x.iter().map(|&v| self.var(v)).collect()
    }

    /// Reverse sweep from `out`; writes d out / d input_i into `grad`
    /// for the first `grad.len()` nodes (the inputs).
    pub fn gradient(&self, out: Var<'_>, grad: &mut [f64]) {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        let mut adj = self.adj.borrow_mut();
        adj.clear();
        adj.resize(n, 0.0);
        adj[out.i as usize] = 1.0;
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            if node.p1 != NONE {
                adj[node.p1 as usize] += node.d1 * a;
            }
            if node.p2 != NONE {
                adj[node.p2 as usize] += node.d2 * a;
            }
        }
        grad.copy_from_slice(&adj[..grad.len()]);
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    i: u32,
}

impl Var<'_> {
    pub fn value(self) -> f64 {
        self.tape.nodes.borrow()[self.i as usize].val
    }
}

/// Scalar abstraction shared by the value-only (`f64`) and gradient
/// ([`Var`]) evaluation paths.
///
/// `lift` creates a constant in the same evaluation context as `self`; for
/// tape variables that is a node with no parents, for `f64` it is the value
/// itself. Constant-argument arithmetic (`addc`, `mulc`, `csub`) avoids
/// materializing constant nodes in the hot likelihood loops.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn val(self) -> f64;
    fn lift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    /// self + c
    fn addc(self, c: f64) -> Self;
    /// self * c
    fn mulc(self, c: f64) -> Self;
    /// c - self
    fn csub(self, c: f64) -> Self;
    fn recip(self) -> Self;
    fn sq(self) -> Self {
        self * self
    }
    fn powi4(self) -> Self {
        self.sq().sq()
    }
}

impl Real for f64 {
    #[inline(always)]
    fn val(self) -> f64 {
        self
    }
    #[inline(always)]
    fn lift(self, c: f64) -> Self {
        c
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline(always)]
    fn addc(self, c: f64) -> Self {
        self + c
    }
    #[inline(always)]
    fn mulc(self, c: f64) -> Self {
        self * c
    }
    #[inline(always)]
    fn csub(self, c: f64) -> Self {
        c - self
    }
    #[inline(always)]
    fn recip(self) -> Self {
        1.0 / self
    }
}

macro_rules! binop {
    ($trait:ident, $fn:ident, |$a:ident, $b:ident| $val:expr, $d1:expr, $d2:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $fn(self, rhs: Var<'t>) -> Var<'t> {
                let $a = self.value();
                let $b = rhs.value();
                self.tape.push($val, self.i, $d1, rhs.i, $d2)
            }
        }
    };
}

binop!(Add, add, |a, b| a + b, 1.0, 1.0);
binop!(Sub, sub, |a, b| a - b, 1.0, -1.0);
binop!(Mul, mul, |a, b| a * b, b, a);
binop!(Div, div, |a, b| a / b, 1.0 / b, -a / (b * b));

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.push(-self.value(), self.i, -1.0, NONE, 0.0)
    }
}

impl<'t> Real for Var<'t> {
    fn val(self) -> f64 {
        self.value()
    }
    fn lift(self, c: f64) -> Self {
        self.tape.var(c)
    }
    fn exp(self) -> Self {
        let e = self.value().exp();
        self.tape.push(e, self.i, e, NONE, 0.0)
    }
    fn ln(self) -> Self {
        let v = self.value();
        self.tape.push(v.ln(), self.i, 1.0 / v, NONE, 0.0)
    }
    fn sqrt(self) -> Self {
        let s = self.value().sqrt();
        self.tape.push(s, self.i, 0.5 / s, NONE, 0.0)
    }
    fn tanh(self) -> Self {
        let t = self.value().tanh();
        self.tape.push(t, self.i, 1.0 - t * t, NONE, 0.0)
    }
    fn addc(self, c: f64) -> Self {
        self.tape.push(self.value() + c, self.i, 1.0, NONE, 0.0)
    }
    fn mulc(self, c: f64) -> Self {
        self.tape.push(self.value() * c, self.i, c, NONE, 0.0)
    }
    fn csub(self, c: f64) -> Self {
        self.tape.push(c - self.value(), self.i, -1.0, NONE, 0.0)
    }
    fn recip(self) -> Self {
        let v = self.value();
        self.tape.push(1.0 / v, self.i, -1.0 / (v * v), NONE, 0.0)
    }
}

/// Central finite-difference gradient of `f`, step `h` scaled per coordinate.
/// Test oracle for the tape; uses only the value path.
pub fn finite_difference_grad<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let step = h * (1.0 + x[i].abs());
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// `|a-b| / max(1, |a|, |b|)`: relative error with a unit floor, the usual
/// metric for mixed-scale gradient checks.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}
