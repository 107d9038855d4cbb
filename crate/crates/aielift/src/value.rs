//! Scalar values flowing through the interpreter, the tensor evaluator and
//! the tile simulator.
//!
//! All three execution paths use the same 32-bit arithmetic so that
//! elementwise results agree bit for bit: `f32` follows IEEE-754
//! round-to-nearest-even (host arithmetic), `i32` wraps on overflow.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Element type of an array, scalar or stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    F32,
    I32,
}

impl ElemType {
    /// Size of one element in bytes. Both supported types are one 32-bit word.
    pub const fn bytes(self) -> usize {
        4
    }

    /// The identity element for a `+` reduction.
    pub fn zero(self) -> Value {
        match self {
            ElemType::F32 => Value::F32(0.0),
            ElemType::I32 => Value::I32(0),
        }
    }

    /// The identity element for a `max` reduction.
    pub fn min_value(self) -> Value {
        match self {
            ElemType::F32 => Value::F32(f32::NEG_INFINITY),
            ElemType::I32 => Value::I32(i32::MIN),
        }
    }
}

impl fmt::Display for ElemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElemType::F32 => write!(f, "f32"),
            ElemType::I32 => write!(f, "i32"),
        }
    }
}

/// One 32-bit scalar value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    F32(f32),
    I32(i32),
}

impl Value {
    pub fn elem_type(self) -> ElemType {
        match self {
            Value::F32(_) => ElemType::F32,
            Value::I32(_) => ElemType::I32,
        }
    }

    /// Reinterpret as a raw 32-bit word (stream transport representation).
    pub fn to_bits(self) -> u32 {
        match self {
            Value::F32(v) => v.to_bits(),
            Value::I32(v) => v as u32,
        }
    }

    /// Inverse of [`Value::to_bits`] for a known element type.
    pub fn from_bits(ty: ElemType, bits: u32) -> Self {
        match ty {
            ElemType::F32 => Value::F32(f32::from_bits(bits)),
            ElemType::I32 => Value::I32(bits as i32),
        }
    }

    pub fn as_f32(self) -> f32 {
        match self {
            Value::F32(v) => v,
            Value::I32(v) => v as f32,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Value::F32(v) => v as f64,
            Value::I32(v) => v as f64,
        }
    }

    /// Convert a parsed literal to a concrete value of the given type.
    pub fn literal(ty: ElemType, raw: f64) -> Self {
        match ty {
            ElemType::F32 => Value::F32(raw as f32),
            ElemType::I32 => Value::I32(raw as i32),
        }
    }

    pub fn add(self, rhs: Value) -> Value {
        binop(self, rhs, |a, b| a + b, i32::wrapping_add)
    }

    pub fn sub(self, rhs: Value) -> Value {
        binop(self, rhs, |a, b| a - b, i32::wrapping_sub)
    }

    pub fn mul(self, rhs: Value) -> Value {
        binop(self, rhs, |a, b| a * b, i32::wrapping_mul)
    }

    /// Division. Integer division by zero yields 0 so that every execution
    /// path (interpreter, evaluator, simulator) agrees on a total function.
    pub fn div(self, rhs: Value) -> Value {
        binop(self, rhs, |a, b| a / b, |a, b| {
            if b == 0 {
                0
            } else {
                a.wrapping_div(b)
            }
        })
    }

    pub fn max(self, rhs: Value) -> Value {
        binop(self, rhs, f32::max, i32::max)
    }

    pub fn min(self, rhs: Value) -> Value {
        binop(self, rhs, f32::min, i32::min)
    }

    pub fn exp(self) -> Value {
        unop(self, f32::exp, |v| (v as f32).exp() as i32)
    }

    pub fn sqrt(self) -> Value {
        unop(self, f32::sqrt, |v| (v as f32).sqrt() as i32)
    }

    pub fn relu(self) -> Value {
        match self {
            Value::F32(v) => Value::F32(v.max(0.0)),
            Value::I32(v) => Value::I32(v.max(0)),
        }
    }

    pub fn neg(self) -> Value {
        match self {
            Value::F32(v) => Value::F32(-v),
            Value::I32(v) => Value::I32(v.wrapping_neg()),
        }
    }
}

/// Mixed-type operands promote the integer side to `f32`, mirroring the
/// usual Fortran numeric conversion rules.
fn binop(a: Value, b: Value, f: impl Fn(f32, f32) -> f32, i: impl Fn(i32, i32) -> i32) -> Value {
    match (a, b) {
        (Value::I32(x), Value::I32(y)) => Value::I32(i(x, y)),
        _ => Value::F32(f(a.as_f32(), b.as_f32())),
    }
}

fn unop(a: Value, f: impl Fn(f32) -> f32, i: impl Fn(i32) -> i32) -> Value {
    match a {
        Value::F32(v) => Value::F32(f(v)),
        Value::I32(v) => Value::I32(i(v)),
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::F32(v) => write!(f, "{v}"),
            Value::I32(v) => write!(f, "{v}"),
        }
    }
}
