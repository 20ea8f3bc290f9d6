use stvc::nn::check::{run_cases, GradCase};
use stvc::nn::{conv3d, Padding};
use stvc::tensor::{Backward, Fill};
use stvc::{Result, Rng, Tape, Tensor, Var};

/// conv3d whose backward pass flips the sign of the kernel gradient.
struct SignFlippedConv3d;

impl Backward<f64> for SignFlippedConv3d {
    fn name(&self) -> &'static str {
        "conv3d_sign_bug"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<f64>],
        _output: &Tensor<f64>,
        grad_out: &[f64],
        needs_grad: &[bool],
    ) -> Result<Vec<Option<Vec<f64>>>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param((*t).clone())).collect();
        let y = conv3d(&mut tape, vars[0], vars[1], vars[2], Padding::Same)?;
        let shape = tape.shape(y).to_vec();
        let g = tape.constant(Tensor::new(&shape, grad_out.to_vec())?);
        let weighted = tape.mul(y, g)?;
        let total = tape.sum(weighted);
        tape.backward(total)?;
        Ok(vars
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let grad = tape.take_grad(v).filter(|_| needs_grad[i])?;
                Some(if i == 1 { grad.into_iter().map(|x| -x).collect() } else { grad })
            })
            .collect())
    }
}

fn buggy_conv3d(tape: &mut Tape<f64>, x: Var, w: Var, b: Var) -> Result<Var> {
    let mut scratch = Tape::new();
    let (sx, sw, sb) = (
        scratch.constant(tape.value(x).clone()),
        scratch.constant(tape.value(w).clone()),
        scratch.constant(tape.value(b).clone()),
    );
    let y = conv3d(&mut scratch, sx, sw, sb, Padding::Same)?;
    let value = scratch.value(y).clone();
    Ok(tape.record(&[x, w, b], value, SignFlippedConv3d))
}

fn inputs() -> Vec<Tensor<f64>> {
    let mut rng = Rng::new(3);
    let mut u = |shape: &[usize]| Tensor::create(shape, Fill::Uniform { low: -1.0, high: 1.0 }, &mut rng).unwrap();
    vec![u(&[1, 3, 4, 4, 2]), u(&[3, 3, 3, 2, 2]), u(&[2])]
}

fn reduce(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(Tensor::create(&shape, Fill::Uniform { low: -1.0, high: 1.0 }, &mut Rng::new(9))?);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

#[test]
fn sign_bug_in_conv3d_backward_is_reported() {
    let cases = vec![
        GradCase::new("conv3d", inputs(), |t, v| {
            let y = conv3d(t, v[0], v[1], v[2], Padding::Same)?;
            reduce(t, y)
        }),
        GradCase::new("conv3d_sign_bug", inputs(), |t, v| {
            let y = buggy_conv3d(t, v[0], v[1], v[2])?;
            reduce(t, y)
        }),
    ];
    let results = run_cases(cases, None).unwrap();
    assert!(results[0].passed(), "control case failed: {}", results[0].max_rel_error);
    assert!(!results[1].passed(), "sign bug went unnoticed");
    assert!(results[1].max_rel_error > 0.5);
}
