use crate::error::{Error, Result};
use crate::tensor::{Backward, Scalar, Tape, Tensor, Var};

struct MaxPoolBackward {
    /// Flat input index of the winner of each output cell.
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for MaxPoolBackward {
    fn name(&self) -> &'static str {
        "maxpool3d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        let mut dx = vec![T::zero(); inputs[0].numel()];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            dx[src] = dx[src] + gv;
        }
        Ok(vec![Some(dx)])
    }
}

/// Output extents of a disjoint `(pT,pH,pW)` max pool; trailing remainders
/// are dropped.
pub fn pooled_extents(input: [usize; 3], pool: [usize; 3]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for d in 0..3 {
        if pool[d] == 0 || pool[d] > input[d] {
            return Err(Error::InvalidShape(format!(
                "pool {pool:?} does not fit extents {input:?}"
            )));
        }
        out[d] = input[d] / pool[d];
    }
    Ok(out)
}

/// Non-overlapping 3D max pooling over `(N,T,H,W,C)`. Gradient goes to the
/// first maximal element of each window in `t, h, w` scan order.
pub fn maxpool3d<T: Scalar>(tape: &mut Tape<T>, x: Var, pool: [usize; 3]) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 5 {
        return Err(Error::ShapeMismatch(format!("maxpool3d input must be (N,T,H,W,C), got {s:?}")));
    }
    let [n, t, h, w, c] = [s[0], s[1], s[2], s[3], s[4]];
    let [ot, oh, ow] = pooled_extents([t, h, w], pool)?;
    let xv = tape.value(x).data();
    let total = n * ot * oh * ow * c;
    let mut out = Vec::with_capacity(total);
    let mut argmax = Vec::with_capacity(total);
    for ni in 0..n {
        for a in 0..ot {
            for b in 0..oh {
                for d in 0..ow {
                    for ch in 0..c {
                        let mut best = T::neg_infinity();
                        let mut best_i = usize::MAX;
                        for dt in 0..pool[0] {
                            for dh in 0..pool[1] {
                                for dw in 0..pool[2] {
                                    let ti = a * pool[0] + dt;
                                    let hi = b * pool[1] + dh;
                                    let wi = d * pool[2] + dw;
                                    let idx = (((ni * t + ti) * h + hi) * w + wi) * c + ch;
                                    if best_i == usize::MAX || xv[idx] > best {
                                        best = xv[idx];
                                        best_i = idx;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_i);
                    }
                }
            }
        }
    }
    let value = Tensor::from_parts(vec![n, ot, oh, ow, c], out);
    Ok(tape.record(&[x], value, MaxPoolBackward { argmax }))
}
