//! Convolutional LSTM layer (return-sequences).
//!
//! For each step, with `*` a same-padded 2D convolution:
//!
//! ```text
//! i = σ(W_xi * x_t + W_hi * h_{t-1} + b_i)
//! f = σ(W_xf * x_t + W_hf * h_{t-1} + b_f)
//! g = tanh(W_xc * x_t + W_hc * h_{t-1} + b_c)
//! o = σ(W_xo * x_t + W_ho * h_{t-1} + b_o)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```
//!
//! The four gates are evaluated as one convolution over the channel
//! concatenation `[x_t, h_{t-1}]` with a packed kernel.

use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm_nn, gemm_nt, transpose, ConvGeometry};
use crate::tensor::{Backward, Rng, Scalar, Tape, Tensor, Var};

use super::init::glorot_uniform;
use super::tape_sigmoid;

pub const GATES: [&str; 4] = ["i", "f", "c", "o"];

/// Kernels and biases of a ConvLSTM layer, gates ordered `i, f, c, o`.
#[derive(Debug, Clone)]
pub struct ConvLstmParams<T: Scalar = f32> {
    /// `(kH, kW, Cin, F)` each.
    pub input_kernels: [Tensor<T>; 4],
    /// `(kH, kW, F, F)` each.
    pub state_kernels: [Tensor<T>; 4],
    /// `(F)` each.
    pub biases: [Tensor<T>; 4],
}

impl<T: Scalar> ConvLstmParams<T> {
    pub fn new(input_kernels: [Tensor<T>; 4], state_kernels: [Tensor<T>; 4], biases: [Tensor<T>; 4]) -> Result<Self> {
        let p = ConvLstmParams { input_kernels, state_kernels, biases };
        p.dims()?;
        Ok(p)
    }

    /// `(kH, kW, Cin, F)` after checking that all gates agree.
    pub fn dims(&self) -> Result<[usize; 4]> {
        let s = self.input_kernels[0].shape();
        if s.len() != 4 {
            return Err(Error::InvalidShape(format!("input kernel must be (kH,kW,Cin,F), got {s:?}")));
        }
        let [kh, kw, cin, f] = [s[0], s[1], s[2], s[3]];
        for g in 0..4 {
            if self.input_kernels[g].shape() != [kh, kw, cin, f]
                || self.state_kernels[g].shape() != [kh, kw, f, f]
                || self.biases[g].shape() != [f]
            {
                return Err(Error::ShapeMismatch(format!(
                    "gate {} shapes disagree: input {:?}, state {:?}, bias {:?}",
                    GATES[g],
                    self.input_kernels[g].shape(),
                    self.state_kernels[g].shape(),
                    self.biases[g].shape()
                )));
            }
        }
        Ok([kh, kw, cin, f])
    }

    /// Glorot-uniform kernels; biases zero except the forget gate at 1.
    pub fn init(kernel: [usize; 2], cin: usize, filters: usize, rng: &mut Rng) -> Result<Self> {
        let field = kernel[0] * kernel[1];
        let mut input = Vec::with_capacity(4);
        let mut state = Vec::with_capacity(4);
        let mut bias = Vec::with_capacity(4);
        for _ in 0..4 {
            input.push(glorot_uniform(&[kernel[0], kernel[1], cin, filters], field * cin, field * filters, rng)?);
        }
        for g in 0..4 {
            state.push(glorot_uniform(&[kernel[0], kernel[1], filters, filters], field * filters, field * filters, rng)?);
            bias.push(Tensor::full(&[filters], if g == 1 { 1.0 } else { 0.0 })?);
        }
        let arr = |v: Vec<Tensor<T>>| -> [Tensor<T>; 4] { v.try_into().unwrap() };
        Self::new(arr(input), arr(state), arr(bias))
    }

    pub fn param_count(&self) -> usize {
        self.input_kernels.iter().chain(&self.state_kernels).chain(&self.biases).map(Tensor::numel).sum()
    }

    /// Tensors in the order [`convlstm2d`] expects them after the input.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.input_kernels.iter().chain(&self.state_kernels).chain(&self.biases)
    }
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    f: usize,
    kh: usize,
    kw: usize,
}

impl Dims {
    fn cz(&self) -> usize {
        self.cin + self.f
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new([1, self.h, self.w], self.cz(), [1, self.kh, self.kw], true).unwrap()
    }
}

/// Packed kernel `(4F × K)` with `K = kH·kW·(Cin+F)` in window-gather order.
fn pack_kernel<T: Scalar>(d: &Dims, wx: &[&[T]], wh: &[&[T]]) -> Vec<T> {
    let cz = d.cz();
    let k = d.kh * d.kw * cz;
    let mut packed = vec![T::zero(); 4 * d.f * k];
    for g in 0..4 {
        for fo in 0..d.f {
            let row = &mut packed[(g * d.f + fo) * k..(g * d.f + fo + 1) * k];
            for tap in 0..d.kh * d.kw {
                for ci in 0..d.cin {
                    row[tap * cz + ci] = wx[g][(tap * d.cin + ci) * d.f + fo];
                }
                for hi in 0..d.f {
                    row[tap * cz + d.cin + hi] = wh[g][(tap * d.f + hi) * d.f + fo];
                }
            }
        }
    }
    packed
}

/// Build `z = [x_t, h_prev]` channels-last `(P × Cz)`; `h_prev` is `(F × P)`.
fn concat_input<T: Scalar>(d: &Dims, x_t: &[T], h_prev: &[T], z: &mut [T]) {
    let (p, cz) = (d.plane(), d.cz());
    for pi in 0..p {
        z[pi * cz..pi * cz + d.cin].copy_from_slice(&x_t[pi * d.cin..(pi + 1) * d.cin]);
        for fo in 0..d.f {
            z[pi * cz + d.cin + fo] = h_prev[fo * p + pi];
        }
    }
}

struct ConvLstmBackward<T> {
    dims: Dims,
    packed: Vec<T>,
    /// Per `(n, t)`: post-activation gates `(4F × P)`.
    gates: Vec<T>,
    /// Per `(n, t)`: cell state `(F × P)`.
    cells: Vec<T>,
}

impl<T: Scalar> Backward<T> for ConvLstmBackward<T> {
    fn name(&self) -> &'static str {
        "convlstm2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, g_out: &[T], needs: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        let d = self.dims;
        let (p, f, cz, cin) = (d.plane(), d.f, d.cz(), d.cin);
        let k = d.kh * d.kw * cz;
        let gf = 4 * f;
        let geom = d.geometry();
        let x = inputs[0].data();
        let hs = output.data();
        let one = T::one();

        // Packed kernel as (K × 4F) for dcols = W · dA.
        let mut w_kg = vec![T::zero(); k * gf];
        transpose(gf, k, &self.packed, &mut w_kg);

        let mut dx = vec![T::zero(); x.len()];
        let mut dw = vec![T::zero(); gf * k];
        let mut db = vec![T::zero(); gf];

        let mut z = vec![T::zero(); p * cz];
        let mut cols = vec![T::zero(); k * p];
        let mut dcols = vec![T::zero(); k * p];
        let mut dz = vec![T::zero(); p * cz];
        let mut da = vec![T::zero(); gf * p];
        let mut h_prev = vec![T::zero(); f * p];
        let mut dh = vec![T::zero(); f * p];
        let mut dh_next = vec![T::zero(); f * p];
        let mut dc_next = vec![T::zero(); f * p];
        let zeros = vec![T::zero(); f * p];

        for n in 0..d.n {
            dh_next.fill(T::zero());
            dc_next.fill(T::zero());
            for t in (0..d.t).rev() {
                let step = n * d.t + t;
                let gates = &self.gates[step * gf * p..(step + 1) * gf * p];
                let c_t = &self.cells[step * f * p..(step + 1) * f * p];
                let c_prev = if t == 0 { &zeros[..] } else { &self.cells[(step - 1) * f * p..step * f * p] };

                // dh = upstream (channels-last → F × P) + recurrent
                let off = step * p * f;
                transpose(p, f, &g_out[off..off + p * f], &mut dh);
                for (a, &b) in dh.iter_mut().zip(&dh_next) {
                    *a = *a + b;
                }
                for j in 0..f * p {
                    let i_g = gates[j];
                    let f_g = gates[f * p + j];
                    let g_g = gates[2 * f * p + j];
                    let o_g = gates[3 * f * p + j];
                    let tc = c_t[j].tanh();
                    let dc = dc_next[j] + dh[j] * o_g * (one - tc * tc);
                    da[3 * f * p + j] = dh[j] * tc * o_g * (one - o_g);
                    da[f * p + j] = dc * c_prev[j] * f_g * (one - f_g);
                    da[j] = dc * g_g * i_g * (one - i_g);
                    da[2 * f * p + j] = dc * i_g * (one - g_g * g_g);
                    dc_next[j] = dc * f_g;
                }

                if t == 0 {
                    h_prev.fill(T::zero());
                } else {
                    let prev = (step - 1) * p * f;
                    transpose(p, f, &hs[prev..prev + p * f], &mut h_prev);
                }
                concat_input(&d, &x[step * p * cin..(step + 1) * p * cin], &h_prev, &mut z);
                geom.im2col(&z, 0, &mut cols);
                gemm_nt(gf, p, k, &da, &cols, &mut dw);
                for (gi, bv) in db.iter_mut().enumerate() {
                    *bv = *bv + da[gi * p..(gi + 1) * p].iter().copied().sum::<T>();
                }

                dcols.fill(T::zero());
                gemm_nn(k, gf, p, &w_kg, &da, &mut dcols);
                dz.fill(T::zero());
                geom.col2im_add(&dcols, 0, &mut dz);
                let dxs = &mut dx[step * p * cin..(step + 1) * p * cin];
                for pi in 0..p {
                    for ci in 0..cin {
                        dxs[pi * cin + ci] = dz[pi * cz + ci];
                    }
                    for fo in 0..f {
                        dh_next[fo * p + pi] = dz[pi * cz + cin + fo];
                    }
                }
            }
        }

        // Unpack combined gradients into per-gate tensors.
        let mut out: Vec<Option<Vec<T>>> = Vec::with_capacity(13);
        out.push(needs[0].then_some(dx));
        let taps = d.kh * d.kw;
        for g in 0..4 {
            out.push(needs[1 + g].then(|| {
                let mut gx = vec![T::zero(); taps * cin * f];
                for fo in 0..f {
                    let row = &dw[(g * f + fo) * k..(g * f + fo + 1) * k];
                    for tap in 0..taps {
                        for ci in 0..cin {
                            gx[(tap * cin + ci) * f + fo] = row[tap * cz + ci];
                        }
                    }
                }
                gx
            }));
        }
        for g in 0..4 {
            out.push(needs[5 + g].then(|| {
                let mut gh = vec![T::zero(); taps * f * f];
                for fo in 0..f {
                    let row = &dw[(g * f + fo) * k..(g * f + fo + 1) * k];
                    for tap in 0..taps {
                        for hi in 0..f {
                            gh[(tap * f + hi) * f + fo] = row[tap * cz + cin + hi];
                        }
                    }
                }
                gh
            }));
        }
        for g in 0..4 {
            out.push(needs[9 + g].then(|| db[g * f..(g + 1) * f].to_vec()));
        }
        Ok(out)
    }
}

/// ConvLSTM over `(N,T,H,W,Cin)` returning every hidden state `(N,T,H,W,F)`.
///
/// `params` holds 12 tape values: input kernels `i,f,c,o`, state kernels
/// `i,f,c,o`, biases `i,f,c,o`. Initial hidden and cell states are zero.
pub fn convlstm2d<T: Scalar>(tape: &mut Tape<T>, x: Var, params: &[Var; 12]) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    if xs.len() != 5 {
        return Err(Error::ShapeMismatch(format!("convlstm2d input must be (N,T,H,W,C), got {xs:?}")));
    }
    let ws = tape.shape(params[0]).to_vec();
    if ws.len() != 4 {
        return Err(Error::InvalidShape(format!("input kernel must be (kH,kW,Cin,F), got {ws:?}")));
    }
    let d = Dims { n: xs[0], t: xs[1], h: xs[2], w: xs[3], cin: xs[4], f: ws[3], kh: ws[0], kw: ws[1] };
    if ws[2] != d.cin {
        return Err(Error::ShapeMismatch(format!(
            "convlstm2d input has {} channels, kernel expects {}",
            d.cin, ws[2]
        )));
    }
    for g in 0..4 {
        let (a, b, c) = (tape.shape(params[g]), tape.shape(params[4 + g]), tape.shape(params[8 + g]));
        if a != [d.kh, d.kw, d.cin, d.f] || b != [d.kh, d.kw, d.f, d.f] || c != [d.f] {
            return Err(Error::ShapeMismatch(format!(
                "gate {} shapes disagree: input {a:?}, state {b:?}, bias {c:?}",
                GATES[g]
            )));
        }
    }

    let (p, f, cz, cin) = (d.plane(), d.f, d.cz(), d.cin);
    let k = d.kh * d.kw * cz;
    let gf = 4 * f;
    let geom = d.geometry();
    let wx: Vec<&[T]> = (0..4).map(|g| tape.value(params[g]).data()).collect();
    let wh: Vec<&[T]> = (0..4).map(|g| tape.value(params[4 + g]).data()).collect();
    let packed = pack_kernel(&d, &wx, &wh);
    let bias: Vec<T> = (0..4).flat_map(|g| tape.value(params[8 + g]).data().to_vec()).collect();

    let mut inputs = vec![x];
    inputs.extend_from_slice(params);
    let keep = inputs.iter().any(|&v| tape.requires_grad(v));

    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); d.n * d.t * p * f];
    let mut saved_gates = Vec::with_capacity(if keep { d.n * d.t * gf * p } else { 0 });
    let mut saved_cells = Vec::with_capacity(if keep { d.n * d.t * f * p } else { 0 });
    let mut z = vec![T::zero(); p * cz];
    let mut cols = vec![T::zero(); k * p];
    let mut a = vec![T::zero(); gf * p];
    let mut h = vec![T::zero(); f * p];
    let mut c = vec![T::zero(); f * p];

    for n in 0..d.n {
        h.fill(T::zero());
        c.fill(T::zero());
        for t in 0..d.t {
            let step = n * d.t + t;
            concat_input(&d, &xv[step * p * cin..(step + 1) * p * cin], &h, &mut z);
            geom.im2col(&z, 0, &mut cols);
            for (gi, row) in a.chunks_exact_mut(p).enumerate() {
                row.fill(bias[gi]);
            }
            gemm_nn(gf, k, p, &packed, &cols, &mut a);
            for (gi, v) in a.iter_mut().enumerate() {
                *v = if gi / (f * p) == 2 { v.tanh() } else { tape_sigmoid(*v) };
            }
            for j in 0..f * p {
                c[j] = a[f * p + j] * c[j] + a[j] * a[2 * f * p + j];
                h[j] = a[3 * f * p + j] * c[j].tanh();
            }
            let dst = &mut out[step * p * f..(step + 1) * p * f];
            transpose(f, p, &h, dst);
            if keep {
                saved_gates.extend_from_slice(&a);
                saved_cells.extend_from_slice(&c);
            }
        }
    }

    let value = Tensor::from_parts(vec![d.n, d.t, d.h, d.w, f], out);
    Ok(tape.record(
        &inputs,
        value,
        ConvLstmBackward { dims: d, packed, gates: saved_gates, cells: saved_cells },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check_inputs, Fill};

    fn bind(tape: &mut Tape<f64>, p: &ConvLstmParams<f64>) -> [Var; 12] {
        let v: Vec<Var> = p.tensors().map(|t| tape.constant(t.clone())).collect();
        v.try_into().unwrap()
    }

    fn run(x: &Tensor<f64>, p: &ConvLstmParams<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = bind(&mut tape, p);
        let y = convlstm2d(&mut tape, xv, &vars).unwrap();
        tape.value(y).clone()
    }

    fn zero_params(cin: usize, f: usize) -> ConvLstmParams<f64> {
        let z = |s: &[usize]| Tensor::zeros(s).unwrap();
        ConvLstmParams::new(
            std::array::from_fn(|_| z(&[3, 3, cin, f])),
            std::array::from_fn(|_| z(&[3, 3, f, f])),
            std::array::from_fn(|_| z(&[f])),
        )
        .unwrap()
    }

    /// Straightforward per-pixel recurrence used as an independent check.
    fn reference(x: &Tensor<f64>, p: &ConvLstmParams<f64>) -> Vec<f64> {
        let [n, t, h, w, cin]: [usize; 5] = x.shape().try_into().unwrap();
        let [kh, kw, _, f] = p.dims().unwrap();
        let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut out = vec![0.0; n * t * h * w * f];
        for ni in 0..n {
            let mut hs = vec![0.0; h * w * f];
            let mut cs = vec![0.0; h * w * f];
            for ti in 0..t {
                let mut pre = vec![0.0; 4 * h * w * f];
                for g in 0..4 {
                    for y in 0..h {
                        for xx in 0..w {
                            for fo in 0..f {
                                let mut s = p.biases[g].data()[fo];
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        let yy = y as isize + dy as isize - ph as isize;
                                        let xi = xx as isize + dx as isize - pw as isize;
                                        if yy < 0 || xi < 0 || yy >= h as isize || xi >= w as isize {
                                            continue;
                                        }
                                        let (yy, xi) = (yy as usize, xi as usize);
                                        for ci in 0..cin {
                                            let xv = x.data()[(((ni * t + ti) * h + yy) * w + xi) * cin + ci];
                                            s += xv * p.input_kernels[g].data()[((dy * kw + dx) * cin + ci) * f + fo];
                                        }
                                        for hi in 0..f {
                                            let hv = hs[(yy * w + xi) * f + hi];
                                            s += hv * p.state_kernels[g].data()[((dy * kw + dx) * f + hi) * f + fo];
                                        }
                                    }
                                }
                                pre[((g * h + y) * w + xx) * f + fo] = s;
                            }
                        }
                    }
                }
                let m = h * w * f;
                for j in 0..m {
                    let (i, fg, gg, o) = (sig(pre[j]), sig(pre[m + j]), pre[2 * m + j].tanh(), sig(pre[3 * m + j]));
                    cs[j] = fg * cs[j] + i * gg;
                    hs[j] = o * cs[j].tanh();
                }
                out[(ni * t + ti) * m..(ni * t + ti + 1) * m].copy_from_slice(&hs);
            }
        }
        out
    }

    #[test]
    fn zero_parameters_give_zero_hidden_states() {
        let x = Tensor::create(&[1, 3, 4, 4, 2], Fill::Normal { mean: 0.0, std: 1.0 }, &mut Rng::new(1)).unwrap();
        let y = run(&x, &zero_params(2, 3));
        assert_eq!(y.shape(), &[1, 3, 4, 4, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_per_pixel_reference() {
        let mut rng = Rng::new(2);
        let x = Tensor::create(&[2, 3, 4, 5, 2], Fill::Normal { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let p = ConvLstmParams::<f64>::init([3, 3], 2, 3, &mut rng).unwrap();
        let got = run(&x, &p);
        let expect = reference(&x, &p);
        for (a, b) in got.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(got.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn single_step_is_one_gated_convolution() {
        let mut rng = Rng::new(3);
        let x = Tensor::create(&[1, 1, 3, 3, 1], Fill::Normal { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let p = ConvLstmParams::<f64>::init([3, 3], 1, 2, &mut rng).unwrap();
        let y = run(&x, &p);
        // with h0 = c0 = 0: h = σ(o) · tanh(σ(i) · tanh(g))
        for (a, b) in reference(&x, &p).iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 3, 3, 3]).unwrap());
        let vars = bind(&mut tape, &zero_params(2, 2));
        assert!(matches!(convlstm2d(&mut tape, x, &vars), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn gradient_check_through_time() {
        let mut rng = Rng::new(4);
        let x = Tensor::create(&[1, 3, 4, 4, 1], Fill::Uniform { low: -1.0, high: 1.0 }, &mut rng).unwrap();
        let p = ConvLstmParams::<f64>::init([3, 3], 1, 2, &mut rng).unwrap();
        let mut inputs = vec![x];
        inputs.extend(p.tensors().cloned());
        let reports = finite_diff_check_inputs(
            |t, v| {
                let params: [Var; 12] = v[1..].try_into().unwrap();
                let y = convlstm2d(t, v[0], &params)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum(y2))
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        for (i, r) in reports.iter().enumerate() {
            assert!(r.max_rel_error < 1e-4, "input {i}: {r:?}");
        }
    }
}
