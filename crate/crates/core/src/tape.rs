//! Reverse-mode scalar differentiation with an explicit stop-gradient.
//!
//! A [`Tape`] is an append-only list of scalar nodes. Every operation pushes
//! one node holding its value and the local derivatives with respect to its
//! (at most two) parents. Because a node can only reference nodes pushed
//! before it, index order is a topological order and [`Node::backward`] is a
//! single reverse sweep.
//!
//! ```
//! use wiou::tape::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(2.0)?;
//! let y = tape.leaf(3.0)?;
//! let z = x * y.detach() + y;
//!
//! let grads = z.backward()?;
//! assert_eq!(grads.wrt(x)?, 3.0);
//! // The detached factor passes nothing back to `y`; only the `+ y` term does.
//! assert_eq!(grads.wrt(y)?, 1.0);
//! # Ok::<(), wiou::tape::TapeError>(())
//! ```
//!
//! Domain violations (`ln` of a non-positive number, division by zero, ...)
//! are reported as [`TapeError`] by the fallible methods. The infallible
//! arithmetic operators cannot fail on finite inputs except by overflow; an
//! overflow poisons the tape and the next [`Node::backward`] reports it.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Failure of a tape operation.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum TapeError {
    #[error("{op}: non-finite value {value}")]
    NonFinite { op: &'static str, value: f64 },
    #[error("{op}: argument {value} outside the domain ({domain})")]
    Domain {
        op: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("{op}: expected {expected} argument(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("node does not belong to this tape")]
    ForeignNode,
}

/// The operation set understood by [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    /// `x^c` for a constant exponent `c`.
    PowConst(f64),
    Exp,
    Ln,
    Sqrt,
    Sin,
    Asin,
    Atan,
    Abs,
    Min,
    Max,
    Square,
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Min | Op::Max => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::PowConst(_) => "pow",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Sqrt => "sqrt",
            Op::Sin => "sin",
            Op::Asin => "asin",
            Op::Atan => "atan",
            Op::Abs => "abs",
            Op::Min => "min",
            Op::Max => "max",
            Op::Square => "square",
        }
    }
}

const NO_PARENT: (u32, f64) = (u32::MAX, 0.0);

#[derive(Clone, Copy)]
struct Entry {
    value: f64,
    parents: [(u32, f64); 2],
    arity: u8,
    detached: bool,
}

/// Append-only recording of one scalar computation.
///
/// Tapes are single-owner. Evaluate independent computations on independent
/// tapes (or [`clear`](Tape::clear) one between evaluations).
pub struct Tape {
    id: u64,
    entries: RefCell<Vec<Entry>>,
    fault: Cell<Option<TapeError>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("len", &self.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Tape {
            id: fresh_id(),
            entries: RefCell::new(Vec::with_capacity(capacity)),
            fault: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node and starts a new recording, keeping the allocation.
    ///
    /// Gradients taken from the previous recording no longer resolve against
    /// this tape.
    pub fn clear(&mut self) {
        self.id = fresh_id();
        self.entries.get_mut().clear();
        self.fault.set(None);
    }

    /// The first fault recorded by an infallible operation, if any.
    pub fn fault(&self) -> Option<TapeError> {
        self.fault.get()
    }

    /// A differentiable input. Rejects non-finite values.
    pub fn leaf(&self, value: f64) -> Result<Node<'_>, TapeError> {
        if !value.is_finite() {
            return Err(TapeError::NonFinite { op: "leaf", value });
        }
        Ok(self.push(value, [NO_PARENT; 2], 0, false, "leaf"))
    }

    /// A parentless node. Same as [`leaf`](Tape::leaf) for values that are
    /// known to be finite; a non-finite value poisons the tape.
    pub fn constant(&self, value: f64) -> Node<'_> {
        self.push(value, [NO_PARENT; 2], 0, false, "constant")
    }

    /// Applies `op` to `args`, checking arity, tape membership and domain.
    pub fn apply<'t>(&'t self, op: Op, args: &[Node<'t>]) -> Result<Node<'t>, TapeError> {
        if args.len() != op.arity() {
            return Err(TapeError::Arity {
                op: op.name(),
                expected: op.arity(),
                got: args.len(),
            });
        }
        if args.iter().any(|a| !std::ptr::eq(a.tape, self)) {
            return Err(TapeError::ForeignNode);
        }
        let a = args[0];
        match op {
            Op::Add => Ok(a + args[1]),
            Op::Sub => Ok(a - args[1]),
            Op::Mul => Ok(a * args[1]),
            Op::Div => a.div(args[1]),
            Op::PowConst(c) => a.powf(c),
            Op::Exp => Ok(a.exp()),
            Op::Ln => a.ln(),
            Op::Sqrt => a.sqrt(),
            Op::Sin => Ok(a.sin()),
            Op::Asin => a.asin(),
            Op::Atan => Ok(a.atan()),
            Op::Abs => Ok(a.abs()),
            Op::Min => Ok(a.min(args[1])),
            Op::Max => Ok(a.max(args[1])),
            Op::Square => Ok(a.square()),
        }
    }

    fn push(
        &self,
        value: f64,
        parents: [(u32, f64); 2],
        arity: u8,
        detached: bool,
        op: &'static str,
    ) -> Node<'_> {
        if !value.is_finite() && self.fault.get().is_none() {
            self.fault.set(Some(TapeError::NonFinite { op, value }));
        }
        let mut entries = self.entries.borrow_mut();
        let index = entries.len() as u32;
        entries.push(Entry {
            value,
            parents,
            arity,
            detached,
        });
        Node { tape: self, index }
    }

    fn unary(&self, value: f64, parent: Node<'_>, local: f64, op: &'static str) -> Node<'_> {
        self.push(value, [(parent.index, local), NO_PARENT], 1, false, op)
    }

    fn binary<'t>(
        &'t self,
        value: f64,
        a: Node<'t>,
        da: f64,
        b: Node<'t>,
        db: f64,
        op: &'static str,
    ) -> Node<'t> {
        if !std::ptr::eq(a.tape, b.tape) && self.fault.get().is_none() {
            self.fault.set(Some(TapeError::ForeignNode));
        }
        self.push(value, [(a.index, da), (b.index, db)], 2, false, op)
    }

    fn value_of(&self, index: u32) -> f64 {
        self.entries.borrow()[index as usize].value
    }
}

/// Handle to one value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Node<'t> {
    tape: &'t Tape,
    index: u32,
}

impl fmt::Debug for Node<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Node")
            .field("index", &self.index)
            .field("value", &self.value())
            .finish()
    }
}

impl<'t> Node<'t> {
    pub fn value(self) -> f64 {
        self.tape.value_of(self.index)
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    /// True when this node was produced by [`detach`](Node::detach).
    pub fn is_detached(self) -> bool {
        self.tape.entries.borrow()[self.index as usize].detached
    }

    /// Same value, but no adjoint flows back through the returned node.
    pub fn detach(self) -> Node<'t> {
        if self.is_detached() {
            return self;
        }
        self.tape
            .push(self.value(), [(self.index, 1.0), NO_PARENT], 1, true, "detach")
    }

    pub fn square(self) -> Node<'t> {
        let v = self.value();
        self.tape.unary(v * v, self, 2.0 * v, "square")
    }

    pub fn exp(self) -> Node<'t> {
        let e = self.value().exp();
        self.tape.unary(e, self, e, "exp")
    }

    pub fn sin(self) -> Node<'t> {
        let v = self.value();
        self.tape.unary(v.sin(), self, v.cos(), "sin")
    }

    pub fn atan(self) -> Node<'t> {
        let v = self.value();
        self.tape.unary(v.atan(), self, 1.0 / (1.0 + v * v), "atan")
    }

    /// `|x|`, with subgradient 0 at the origin.
    pub fn abs(self) -> Node<'t> {
        let v = self.value();
        let d = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.tape.unary(v.abs(), self, d, "abs")
    }

    /// Ties send the gradient to `self`.
    pub fn min(self, other: Node<'t>) -> Node<'t> {
        let (a, b) = (self.value(), other.value());
        if a <= b {
            self.tape.binary(a, self, 1.0, other, 0.0, "min")
        } else {
            self.tape.binary(b, self, 0.0, other, 1.0, "min")
        }
    }

    /// Ties send the gradient to `self`.
    pub fn max(self, other: Node<'t>) -> Node<'t> {
        let (a, b) = (self.value(), other.value());
        if a >= b {
            self.tape.binary(a, self, 1.0, other, 0.0, "max")
        } else {
            self.tape.binary(b, self, 0.0, other, 1.0, "max")
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(self, other: Node<'t>) -> Result<Node<'t>, TapeError> {
        let (a, b) = (self.value(), other.value());
        if b == 0.0 {
            return Err(TapeError::Domain {
                op: "div",
                value: b,
                domain: "denominator != 0",
            });
        }
        let q = a / b;
        Ok(self.tape.binary(q, self, 1.0 / b, other, -q / b, "div"))
    }

    pub fn ln(self) -> Result<Node<'t>, TapeError> {
        let v = self.value();
        if v.is_nan() || v <= 0.0 {
            return Err(TapeError::Domain {
                op: "ln",
                value: v,
                domain: "x > 0",
            });
        }
        Ok(self.tape.unary(v.ln(), self, 1.0 / v, "ln"))
    }

    pub fn sqrt(self) -> Result<Node<'t>, TapeError> {
        let v = self.value();
        if v.is_nan() || v <= 0.0 {
            return Err(TapeError::Domain {
                op: "sqrt",
                value: v,
                domain: "x > 0",
            });
        }
        let s = v.sqrt();
        Ok(self.tape.unary(s, self, 0.5 / s, "sqrt"))
    }

    /// `asin` on the open interval (-1, 1); the derivative is unbounded at
    /// the endpoints.
    pub fn asin(self) -> Result<Node<'t>, TapeError> {
        let v = self.value();
        if !(v > -1.0 && v < 1.0) {
            return Err(TapeError::Domain {
                op: "asin",
                value: v,
                domain: "-1 < x < 1",
            });
        }
        Ok(self
            .tape
            .unary(v.asin(), self, 1.0 / (1.0 - v * v).sqrt(), "asin"))
    }

    /// `x^c` for a constant `c`. Negative bases need an integer exponent, and
    /// a zero base needs `c >= 1` so the derivative stays finite.
    pub fn powf(self, c: f64) -> Result<Node<'t>, TapeError> {
        let v = self.value();
        if v < 0.0 && c.fract() != 0.0 {
            return Err(TapeError::Domain {
                op: "pow",
                value: v,
                domain: "x >= 0 for a non-integer exponent",
            });
        }
        if v == 0.0 && c < 1.0 && c != 0.0 {
            return Err(TapeError::Domain {
                op: "pow",
                value: v,
                domain: "x != 0 for an exponent below 1",
            });
        }
        let d = if c == 0.0 { 0.0 } else { c * v.powf(c - 1.0) };
        Ok(self.tape.unary(v.powf(c), self, d, "pow"))
    }

    /// Adjoints of every node on the tape with respect to this one.
    pub fn backward(self) -> Result<Gradients, TapeError> {
        if let Some(fault) = self.tape.fault() {
            return Err(fault);
        }
        let entries = self.tape.entries.borrow();
        let root = self.index as usize;
        let mut adjoints = vec![0.0; root + 1];
        adjoints[root] = 1.0;
        for i in (0..=root).rev() {
            let adj = adjoints[i];
            let entry = &entries[i];
            if adj == 0.0 || entry.detached {
                continue;
            }
            for &(parent, local) in &entry.parents[..entry.arity as usize] {
                adjoints[parent as usize] += adj * local;
            }
        }
        Ok(Gradients {
            tape_id: self.tape.id,
            adjoints,
        })
    }
}

/// Result of [`Node::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape_id: u64,
    adjoints: Vec<f64>,
}

impl Gradients {
    /// ∂root/∂node. Intermediate nodes are allowed: the result is the
    /// derivative with that node treated as an independent input.
    pub fn wrt(&self, node: Node<'_>) -> Result<f64, TapeError> {
        if node.tape.id != self.tape_id {
            return Err(TapeError::ForeignNode);
        }
        Ok(self.adjoints.get(node.index as usize).copied().unwrap_or(0.0))
    }
}

impl<'t> Add for Node<'t> {
    type Output = Node<'t>;
    fn add(self, rhs: Node<'t>) -> Node<'t> {
        let v = self.value() + rhs.value();
        self.tape.binary(v, self, 1.0, rhs, 1.0, "add")
    }
}

impl<'t> Sub for Node<'t> {
    type Output = Node<'t>;
    fn sub(self, rhs: Node<'t>) -> Node<'t> {
        let v = self.value() - rhs.value();
        self.tape.binary(v, self, 1.0, rhs, -1.0, "sub")
    }
}

impl<'t> Mul for Node<'t> {
    type Output = Node<'t>;
    fn mul(self, rhs: Node<'t>) -> Node<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.tape.binary(a * b, self, b, rhs, a, "mul")
    }
}

impl<'t> Neg for Node<'t> {
    type Output = Node<'t>;
    fn neg(self) -> Node<'t> {
        self.tape.unary(-self.value(), self, -1.0, "neg")
    }
}

impl<'t> Add<f64> for Node<'t> {
    type Output = Node<'t>;
    fn add(self, rhs: f64) -> Node<'t> {
        self.tape.unary(self.value() + rhs, self, 1.0, "add")
    }
}

impl<'t> Sub<f64> for Node<'t> {
    type Output = Node<'t>;
    fn sub(self, rhs: f64) -> Node<'t> {
        self.tape.unary(self.value() - rhs, self, 1.0, "sub")
    }
}

impl<'t> Mul<f64> for Node<'t> {
    type Output = Node<'t>;
    fn mul(self, rhs: f64) -> Node<'t> {
        self.tape.unary(self.value() * rhs, self, rhs, "mul")
    }
}

/// Division by a constant. A zero constant poisons the tape.
impl<'t> Div<f64> for Node<'t> {
    type Output = Node<'t>;
    fn div(self, rhs: f64) -> Node<'t> {
        self.tape.unary(self.value() / rhs, self, 1.0 / rhs, "div")
    }
}

impl<'t> Add<Node<'t>> for f64 {
    type Output = Node<'t>;
    fn add(self, rhs: Node<'t>) -> Node<'t> {
        rhs + self
    }
}

impl<'t> Sub<Node<'t>> for f64 {
    type Output = Node<'t>;
    fn sub(self, rhs: Node<'t>) -> Node<'t> {
        rhs.tape.unary(self - rhs.value(), rhs, -1.0, "sub")
    }
}

impl<'t> Mul<Node<'t>> for f64 {
    type Output = Node<'t>;
    fn mul(self, rhs: Node<'t>) -> Node<'t> {
        rhs * self
    }
}
