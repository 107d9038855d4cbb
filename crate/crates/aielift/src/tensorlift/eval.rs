//! Dense tensor-program evaluator.
//!
//! Executes a [`TensorProgram`] by materialising every SSA value as a
//! whole buffer. No tiling, no streaming — this is the mid-level oracle:
//! anything the lifter produces must evaluate to exactly what the scalar
//! interpreter computes for the original loop, and the tile pipeline is
//! in turn checked against it.

use super::ir::{TensorOp, TensorProgram, YieldTarget};
use crate::loopfront::ReduceOp;
use crate::refinterp::{Buffer, Environment, RunError};
use crate::value::Value;

/// Evaluate against a prepared environment, returning a copy with the
/// yielded outputs applied.
pub fn evaluate(tp: &TensorProgram, env: &Environment) -> Result<Environment, RunError> {
    for p in &tp.params {
        if !env.scalars.contains_key(p) {
            return Err(RunError::UnboundScalar(p.clone()));
        }
    }
    let mut vals: Vec<Option<Vec<Value>>> = vec![None; tp.values.len()];
    for arg in &tp.args {
        let buf = env
            .arrays
            .get(&arg.name)
            .ok_or_else(|| RunError::UnboundArray(arg.name.clone()))?;
        let want: usize = arg.dims.iter().product();
        if buf.data.len() != want {
            return Err(RunError::ShapeMismatch {
                name: arg.name.clone(),
                got: buf.data.len(),
                want,
            });
        }
        vals[arg.id.0] = Some(buf.data.clone());
    }

    for (id, op) in &tp.ops {
        let get = |v: &crate::tensorlift::ValId| -> &Vec<Value> {
            vals[v.0].as_ref().expect("operands precede uses")
        };
        let out: Vec<Value> = match op {
            TensorOp::Splat { expr } => {
                let v = expr.eval(&env.scalars);
                vec![v; tp.domain_points()]
            }
            TensorOp::Elementwise { op, lhs, rhs } => {
                let (a, b) = (get(lhs), get(rhs));
                a.iter().zip(b).map(|(x, y)| op.apply(*x, *y)).collect()
            }
            TensorOp::Unary { op, src } => get(src).iter().map(|x| op.apply(*x)).collect(),
            TensorOp::ExtractSlice { src, dims } => {
                let data = get(src);
                let src_shape = &tp.info(*src).shape;
                match dims.len() {
                    1 => {
                        let w = dims[0];
                        (0..w.len).map(|i| data[w.offset + i * w.stride]).collect()
                    }
                    _ => {
                        let (w0, w1) = (dims[0], dims[1]);
                        let stride = src_shape[1];
                        let mut out = Vec::with_capacity(w0.len * w1.len);
                        for r in 0..w0.len {
                            let row = w0.offset + r * w0.stride;
                            for c in 0..w1.len {
                                out.push(data[row * stride + w1.offset + c * w1.stride]);
                            }
                        }
                        out
                    }
                }
            }
            TensorOp::InsertSlice { src, dims, dest, out_shape } => {
                let pre = env
                    .arrays
                    .get(dest)
                    .ok_or_else(|| RunError::UnboundArray(dest.clone()))?;
                let want: usize = out_shape.iter().product();
                if pre.data.len() != want {
                    return Err(RunError::ShapeMismatch {
                        name: dest.clone(),
                        got: pre.data.len(),
                        want,
                    });
                }
                let mut out = pre.data.clone();
                let data = get(src);
                match dims.len() {
                    1 => {
                        let w = dims[0];
                        for (i, v) in data.iter().enumerate() {
                            out[w.offset + i * w.stride] = *v;
                        }
                    }
                    _ => {
                        let (w0, w1) = (dims[0], dims[1]);
                        let stride = out_shape[1];
                        for r in 0..w0.len {
                            let row = w0.offset + r * w0.stride;
                            for c in 0..w1.len {
                                out[row * stride + w1.offset + c * w1.stride] =
                                    data[r * w1.len + c];
                            }
                        }
                    }
                }
                out
            }
            TensorOp::Reduce { op, src } => {
                let elem = tp.info(*src).elem;
                let mut acc = match op {
                    ReduceOp::Add => elem.zero(),
                    ReduceOp::Max => elem.min_value(),
                };
                for v in get(src) {
                    acc = match op {
                        ReduceOp::Add => acc.add(*v),
                        ReduceOp::Max => acc.max(*v),
                    };
                }
                vec![acc]
            }
            TensorOp::MatMul { a, b } => {
                let (ai, bi) = (tp.info(*a), tp.info(*b));
                let (m, k, n) = (ai.shape[0], ai.shape[1], bi.shape[1]);
                let elem = tp.info(*id).elem;
                let (da, db) = (get(a), get(b));
                let mut out = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        let mut acc = elem.zero();
                        for kk in 0..k {
                            acc = acc.add(da[i * k + kk].mul(db[kk * n + j]));
                        }
                        out.push(acc);
                    }
                }
                out
            }
        };
        vals[id.0] = Some(out);
    }

    let mut result = env.clone();
    for y in &tp.yields {
        let data = vals[y.value.0].take().expect("yielded value was computed");
        match &y.target {
            YieldTarget::Array { name } => {
                let pre = result
                    .arrays
                    .get(name)
                    .ok_or_else(|| RunError::UnboundArray(name.clone()))?;
                let buf = Buffer { elem: tp.info(y.value).elem, dims: pre.dims.clone(), data };
                result.arrays.insert(name.clone(), buf);
            }
            YieldTarget::Scalar { name, op } => {
                let init = *result
                    .scalars
                    .get(name)
                    .ok_or_else(|| RunError::UnboundScalar(name.clone()))?;
                let acc = data[0];
                let v = match op {
                    ReduceOp::Add => init.add(acc),
                    ReduceOp::Max => init.max(acc),
                };
                result.scalars.insert(name.clone(), v);
            }
        }
    }
    Ok(result)
}
