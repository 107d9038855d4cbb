//! Comparing a device run against the reference interpreter.
//!
//! Elementwise pipelines must reproduce the interpreter bit for bit;
//! reductions re-associate across chunks and vector lanes, so they are
//! judged by relative error instead.  These helpers centralise that
//! judgement for tests, the fuzz harness, and the report drivers.

use crate::refinterp::Environment;
use crate::value::Value;

/// Stable identity of a value for bitwise comparison: the payload bits
/// plus a tag so an integer never aliases a float.
pub fn value_bits(v: Value) -> u64 {
    match v {
        Value::F32(f) => f.to_bits() as u64,
        Value::I32(i) => i as u32 as u64 | (1 << 40),
    }
}

/// Relative error between two values, scaled by `max(|reference|, 1)` so
/// near-zero references do not blow the ratio up.  Integers are exact:
/// any difference reports as infinite.  `NaN` anywhere reports infinite
/// unless both sides carry identical bits.
pub fn rel_error(got: Value, want: Value) -> f64 {
    if value_bits(got) == value_bits(want) {
        return 0.0;
    }
    match (got, want) {
        (Value::F32(x), Value::F32(y)) => {
            let (x, y) = (x as f64, y as f64);
            let e = (x - y).abs() / y.abs().max(1.0);
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        }
        _ => f64::INFINITY,
    }
}

/// Worst relative error across every array element and scalar the two
/// environments share.  Entries present on only one side count as
/// infinite error.
pub fn max_rel_error(got: &Environment, want: &Environment) -> f64 {
    let mut worst: f64 = 0.0;
    if got.arrays.len() != want.arrays.len() || got.scalars.len() != want.scalars.len() {
        return f64::INFINITY;
    }
    for (name, buf) in &got.arrays {
        let Some(other) = want.arrays.get(name) else { return f64::INFINITY };
        if buf.data.len() != other.data.len() {
            return f64::INFINITY;
        }
        for (x, y) in buf.data.iter().zip(&other.data) {
            worst = worst.max(rel_error(*x, *y));
        }
    }
    for (name, x) in &got.scalars {
        let Some(y) = want.scalars.get(name) else { return f64::INFINITY };
        worst = worst.max(rel_error(*x, *y));
    }
    worst
}

/// Check two environments against a tolerance: `0.0` demands bitwise
/// equality, anything larger bounds the relative error.  Returns a
/// description of the first offending entry.
pub fn compare(got: &Environment, want: &Environment, tol: f64) -> Result<(), String> {
    let got_arrays: Vec<_> = got.arrays.keys().collect();
    let want_arrays: Vec<_> = want.arrays.keys().collect();
    if got_arrays != want_arrays {
        return Err(format!("array sets differ: {got_arrays:?} vs {want_arrays:?}"));
    }
    for (name, buf) in &got.arrays {
        let other = &want.arrays[name];
        if buf.data.len() != other.data.len() {
            return Err(format!(
                "`{name}` length {} differs from reference {}",
                buf.data.len(),
                other.data.len()
            ));
        }
        for (i, (x, y)) in buf.data.iter().zip(&other.data).enumerate() {
            if !close(*x, *y, tol) {
                return Err(format!("`{name}`[{i}] = {x:?}, reference {y:?} (tol {tol})"));
            }
        }
    }
    let got_scalars: Vec<_> = got.scalars.keys().collect();
    let want_scalars: Vec<_> = want.scalars.keys().collect();
    if got_scalars != want_scalars {
        return Err(format!("scalar sets differ: {got_scalars:?} vs {want_scalars:?}"));
    }
    for (name, x) in &got.scalars {
        let y = want.scalars[name];
        if !close(*x, y, tol) {
            return Err(format!("scalar `{name}` = {x:?}, reference {y:?} (tol {tol})"));
        }
    }
    Ok(())
}

fn close(got: Value, want: Value, tol: f64) -> bool {
    if tol == 0.0 {
        value_bits(got) == value_bits(want)
    } else {
        rel_error(got, want) <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refinterp::Buffer;
    use crate::value::ElemType;

    fn env(vals: &[f32], scalar: f32) -> Environment {
        let mut e = Environment::new();
        e.arrays.insert(
            "x".into(),
            Buffer {
                elem: ElemType::F32,
                dims: vec![vals.len()],
                data: vals.iter().map(|v| Value::F32(*v)).collect(),
            },
        );
        e.scalars.insert("s".into(), Value::F32(scalar));
        e
    }

    #[test]
    fn bitwise_identity_is_error_free() {
        let a = env(&[1.0, -0.0, f32::NAN], 3.5);
        assert_eq!(max_rel_error(&a, &a), 0.0);
        assert!(compare(&a, &a, 0.0).is_ok());
    }

    #[test]
    fn signed_zero_and_nan_differences_are_caught_bitwise() {
        let a = env(&[0.0], 1.0);
        let b = env(&[-0.0], 1.0);
        assert!(compare(&a, &b, 0.0).is_err());
        assert!(max_rel_error(&a, &b) == 0.0, "zero vs negative zero has zero magnitude");
    }

    #[test]
    fn small_drift_passes_a_relative_bound() {
        let a = env(&[1.000001], 2.000002);
        let b = env(&[1.0], 2.0);
        assert!(compare(&a, &b, 1e-5).is_ok());
        assert!(compare(&a, &b, 1e-8).is_err());
        assert!(max_rel_error(&a, &b) < 2e-6);
    }

    #[test]
    fn integers_never_tolerate_drift() {
        let mut a = Environment::new();
        a.scalars.insert("n".into(), Value::I32(5));
        let mut b = Environment::new();
        b.scalars.insert("n".into(), Value::I32(6));
        assert_eq!(max_rel_error(&a, &b), f64::INFINITY);
        assert!(compare(&a, &b, 1e-2).is_err());
    }

    #[test]
    fn missing_entries_are_infinite_error() {
        let a = env(&[1.0], 1.0);
        let mut b = a.clone();
        b.arrays.remove("x");
        assert_eq!(max_rel_error(&a, &b), f64::INFINITY);
        assert!(compare(&a, &b, 1.0).is_err());
    }
}
