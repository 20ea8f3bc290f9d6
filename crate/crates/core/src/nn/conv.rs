use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm_nn, gemm_nt, transpose, ConvGeometry};
use crate::tensor::{Backward, Rng, Scalar, Tape, Tensor, Var};

use super::init::glorot_uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Weights `(kT, kH, kW, Cin, Cout)` and bias `(Cout)` of a stride-1 3D
/// convolution.
#[derive(Debug, Clone)]
pub struct Conv3dParams<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub padding: Padding,
}

impl<T: Scalar> Conv3dParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, padding: Padding) -> Result<Self> {
        if weight.ndim() != 5 {
            return Err(Error::InvalidShape(format!(
                "conv3d weight must be (kT,kH,kW,Cin,Cout), got {:?}",
                weight.shape()
            )));
        }
        if bias.shape() != [weight.shape()[4]] {
            return Err(Error::ShapeMismatch(format!(
                "conv3d bias {:?} for {} output channels",
                bias.shape(),
                weight.shape()[4]
            )));
        }
        Ok(Conv3dParams { weight, bias, padding })
    }

    /// Glorot-uniform kernel, zero bias.
    pub fn init(kernel: [usize; 3], cin: usize, cout: usize, padding: Padding, rng: &mut Rng) -> Result<Self> {
        let field: usize = kernel.iter().product();
        let weight = glorot_uniform(&[kernel[0], kernel[1], kernel[2], cin, cout], field * cin, field * cout, rng)?;
        Self::new(weight, Tensor::zeros(&[cout])?, padding)
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

fn geometry(x: &[usize], w: &[usize], padding: Padding) -> Result<ConvGeometry> {
    if x.len() != 5 {
        return Err(Error::ShapeMismatch(format!("conv3d input must be (N,T,H,W,C), got {x:?}")));
    }
    if w.len() != 5 {
        return Err(Error::InvalidShape(format!("conv3d weight must be 5-D, got {w:?}")));
    }
    if x[4] != w[3] {
        return Err(Error::ShapeMismatch(format!(
            "conv3d input has {} channels, kernel expects {}",
            x[4], w[3]
        )));
    }
    ConvGeometry::new([x[1], x[2], x[3]], x[4], [w[0], w[1], w[2]], padding == Padding::Same).ok_or_else(|| {
        Error::InvalidShape(format!(
            "valid conv3d of {:?} with kernel {:?} has non-positive extent",
            &x[1..4],
            &w[..3]
        ))
    })
}

struct Conv3dBackward {
    geom: ConvGeometry,
    batch: usize,
    cout: usize,
}

impl<T: Scalar> Backward<T> for Conv3dBackward {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        let geom = &self.geom;
        let (k, p, cout) = (geom.window_len(), geom.plane(), self.cout);
        let x = inputs[0].data();
        let w = inputs[1].data();
        let in_len = geom.input_len();
        let out_t = geom.output[0];

        let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
        let need_w = needs[1] || needs[2];
        let mut dwt = vec![T::zero(); if need_w { cout * k } else { 0 }];
        let mut db = vec![T::zero(); cout];
        let mut cols = vec![T::zero(); k * p];
        let mut dyt = vec![T::zero(); cout * p];
        let mut dcols = vec![T::zero(); if dx.is_some() { k * p } else { 0 }];

        for n in 0..self.batch {
            for t in 0..out_t {
                let off = ((n * out_t) + t) * p * cout;
                transpose(p, cout, &g[off..off + p * cout], &mut dyt);
                if need_w {
                    geom.im2col(&x[n * in_len..(n + 1) * in_len], t, &mut cols);
                    gemm_nt(cout, p, k, &dyt, &cols, &mut dwt);
                    for (co, bv) in db.iter_mut().enumerate() {
                        *bv = *bv + dyt[co * p..(co + 1) * p].iter().copied().sum::<T>();
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    dcols.fill(T::zero());
                    gemm_nn(k, cout, p, w, &dyt, &mut dcols);
                    geom.col2im_add(&dcols, t, &mut dx[n * in_len..(n + 1) * in_len]);
                }
            }
        }
        let dw = need_w.then(|| {
            let mut out = vec![T::zero(); k * cout];
            transpose(cout, k, &dwt, &mut out);
            out
        });
        Ok(vec![dx, dw, needs[2].then_some(db)])
    }
}

/// Stride-1 3D convolution plus bias over channels-last `(N,T,H,W,Cin)`.
pub fn conv3d<T: Scalar>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var, padding: Padding) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(weight).to_vec();
    let geom = geometry(&xs, &ws, padding)?;
    let cout = ws[4];
    if tape.shape(bias) != [cout] {
        return Err(Error::ShapeMismatch(format!(
            "conv3d bias {:?} for {cout} output channels",
            tape.shape(bias)
        )));
    }
    let (k, p) = (geom.window_len(), geom.plane());
    let batch = xs[0];
    let [ot, oh, ow] = geom.output;

    let xv = tape.value(x).data();
    let wv = tape.value(weight).data();
    let bv = tape.value(bias).data();
    let mut wt = vec![T::zero(); cout * k];
    transpose(k, cout, wv, &mut wt);

    let in_len = geom.input_len();
    let mut out = vec![T::zero(); batch * ot * p * cout];
    let mut cols = vec![T::zero(); k * p];
    let mut yt = vec![T::zero(); cout * p];
    for n in 0..batch {
        for t in 0..ot {
            geom.im2col(&xv[n * in_len..(n + 1) * in_len], t, &mut cols);
            yt.fill(T::zero());
            gemm_nn(cout, k, p, &wt, &cols, &mut yt);
            let dst = &mut out[(n * ot + t) * p * cout..(n * ot + t + 1) * p * cout];
            for (pi, row) in dst.chunks_exact_mut(cout).enumerate() {
                for (co, v) in row.iter_mut().enumerate() {
                    *v = yt[co * p + pi] + bv[co];
                }
            }
        }
    }
    let value = Tensor::from_parts(vec![batch, ot, oh, ow, cout], out);
    Ok(tape.record(&[x, weight, bias], value, Conv3dBackward { geom, batch, cout }))
}
