//! Minimal reverse-mode differentiation over scalars.
//!
//! Loss code is written once against the [`Real`] trait and runs either on
//! plain `f64` (value only, used by finite differences and sampling) or on
//! [`Var`], which records every operation on a [`Tape`]. A single reverse
//! sweep then yields the gradient of one output with respect to every leaf.
//!
//! Constants never touch the tape: a `Var` built with [`Real::cst`] carries no
//! tape reference, so constant images and masks cost nothing.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

const NONE: u32 = u32::MAX;

/// Scalar arithmetic shared by `f64` and taped variables.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(value: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn square(self) -> Self {
        self * self
    }

    /// `ln(1 + exp(x))` without overflow for large `|x|`.
    fn softplus(self) -> Self {
        if self.value() > 0.0 {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }
}

impl Real for f64 {
    #[inline]
    fn cst(value: f64) -> Self {
        value
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Append-only record of operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [NONE, NONE],
            partials: [0.0, 0.0],
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < NONE as usize, "tape overflow");
        nodes.push(node);
        idx as u32
    }

    /// Reverse sweep seeded at `output`.
    pub fn gradient(&self, output: Var<'_>) -> Gradient {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        if output.idx != NONE {
            adjoint[output.idx as usize] = 1.0;
            for i in (0..=output.idx as usize).rev() {
                let a = adjoint[i];
                if a == 0.0 {
                    continue;
                }
                let node = nodes[i];
                for k in 0..2 {
                    let p = node.parents[k];
                    if p != NONE {
                        adjoint[p as usize] += node.partials[k] * a;
                    }
                }
            }
        }
        Gradient { adjoint }
    }
}

/// Adjoints produced by [`Tape::gradient`].
pub struct Gradient {
    adjoint: Vec<f64>,
}

impl Gradient {
    /// Derivative of the seeded output with respect to `var` (0 for constants).
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        if var.idx == NONE {
            0.0
        } else {
            self.adjoint[var.idx as usize]
        }
    }
}

/// A scalar that is either a constant or a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == NONE {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} {})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn is_constant(&self) -> bool {
        self.idx == NONE
    }

    #[inline]
    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            Some(t) if self.idx != NONE => {
                let idx = t.push(Node {
                    parents: [self.idx, NONE],
                    partials: [d, 0.0],
                });
                Var {
                    tape: Some(t),
                    idx,
                    val,
                }
            }
            _ => Var {
                tape: None,
                idx: NONE,
                val,
            },
        }
    }

    #[inline]
    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        let tape = self
            .tape
            .filter(|_| self.idx != NONE)
            .or(other.tape.filter(|_| other.idx != NONE));
        match tape {
            Some(t) => {
                let idx = t.push(Node {
                    parents: [self.idx, other.idx],
                    partials: [da, db],
                });
                Var {
                    tape: Some(t),
                    idx,
                    val,
                }
            }
            None => Var {
                tape: None,
                idx: NONE,
                val,
            },
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl Add<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl Sub<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl Mul<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl Div<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}

impl Real for Var<'_> {
    #[inline]
    fn cst(value: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            val: value,
        }
    }
    #[inline]
    fn value(&self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn ln_1p(self) -> Self {
        self.unary(self.val.ln_1p(), 1.0 / (1.0 + self.val))
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn abs(self) -> Self {
        let d = if self.val >= 0.0 { 1.0 } else { -1.0 };
        self.unary(self.val.abs(), d)
    }
    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn compound<S: Real>(x: S, y: S) -> S {
        (x * y + x.sin()).exp().ln_1p() / (y.square() + 1.0).sqrt() - (x - y).abs() * 0.5
            + (x * 3.0).softplus()
            - x.cos() / y.ln()
    }

    #[test]
    fn matches_finite_differences() {
        let (x0, y0) = (0.7, 1.9);
        let tape = Tape::new();
        let x = tape.var(x0);
        let y = tape.var(y0);
        let out = compound(x, y);
        assert!((out.value() - compound(x0, y0)).abs() < 1e-15);
        let g = tape.gradient(out);
        let dx = central(|t| compound(t, y0), x0);
        let dy = central(|t| compound(x0, t), y0);
        assert!((g.wrt(x) - dx).abs() < 1e-8, "{} vs {}", g.wrt(x), dx);
        assert!((g.wrt(y) - dy).abs() < 1e-8, "{} vs {}", g.wrt(y), dy);
    }

    #[test]
    fn constants_stay_off_tape() {
        let tape = Tape::new();
        let c = Var::cst(2.0) * Var::cst(3.0) + 1.0;
        assert!(c.is_constant());
        assert_eq!(c.value(), 7.0);
        assert!(tape.is_empty());
        let x = tape.var(1.0);
        let y = x * c;
        assert_eq!(tape.gradient(y).wrt(x), 7.0);
        assert_eq!(tape.gradient(y).wrt(c), 0.0);
    }

    #[test]
    fn reused_variable_accumulates() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = x * x * x;
        assert_eq!(tape.gradient(y).wrt(x), 27.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert!(f64::softplus(-50.0) < 1e-20);
        assert!((f64::softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((f64::softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
