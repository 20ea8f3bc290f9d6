//! Finite-difference checks over every layer, in 64-bit precision.

use std::time::Instant;

use super::{bce_loss, conv3d, convlstm2d, dense, dropout, maxpool3d, Padding};
use crate::error::{Error, Result};
use crate::tensor::{finite_diff_check_inputs, Fill, Rng, Tape, Tensor, Var};

pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;

/// A scalar function of several inputs to differentiate.
pub type CaseFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync>;

pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub f: CaseFn,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor<f64>>,
        f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync + 'static,
    ) -> Self {
        GradCase { name: name.into(), inputs, f: Box::new(f) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub ties_excluded: usize,
    pub seconds: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn uniform(shape: &[usize], low: f64, high: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::create(shape, Fill::Uniform { low, high }, rng).expect("valid shape")
}

/// Fixed random weights so that the scalar output depends on every element.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(uniform(&shape, -1.0, 1.0, &mut Rng::new(seed)));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Values spaced at least `gap` apart in random order, so no max-pool window
/// holds a near tie.
fn distinct(shape: &[usize], gap: f64, rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * gap).collect();
    rng.shuffle(&mut v);
    Tensor::new(shape, v).expect("valid shape")
}

/// The standard suite: conv3d, maxpool3d, dense, relu/sigmoid, dropout,
/// convlstm2d over three steps, and the loss.
pub fn default_cases() -> Vec<GradCase> {
    let mut rng = Rng::new(20);
    let mut cases = Vec::new();

    cases.push(GradCase::new(
        "conv3d",
        vec![
            uniform(&[1, 4, 5, 5, 2], -1.0, 1.0, &mut rng),
            uniform(&[3, 3, 3, 2, 3], -0.5, 0.5, &mut rng),
            uniform(&[3], -0.5, 0.5, &mut rng),
        ],
        |t, v| {
            let y = conv3d(t, v[0], v[1], v[2], Padding::Same)?;
            weighted_sum(t, y, 1)
        },
    ));

    cases.push(GradCase::new("maxpool3d", vec![distinct(&[1, 4, 4, 4, 2], 0.01, &mut rng)], |t, v| {
        let y = maxpool3d(t, v[0], [2, 2, 2])?;
        weighted_sum(t, y, 2)
    }));

    cases.push(GradCase::new(
        "dense",
        vec![
            uniform(&[3, 5], -1.0, 1.0, &mut rng),
            uniform(&[5, 4], -1.0, 1.0, &mut rng),
            uniform(&[4], -1.0, 1.0, &mut rng),
        ],
        |t, v| {
            let y = dense(t, v[0], v[1], v[2])?;
            weighted_sum(t, y, 3)
        },
    ));

    // Inputs kept away from the ReLU kink.
    let mut x = uniform(&[4, 6], 0.1, 1.0, &mut rng);
    let signs: Vec<f64> = x.data().iter().enumerate().map(|(i, v)| if i % 3 == 0 { -v } else { *v }).collect();
    x.data_mut().copy_from_slice(&signs);
    cases.push(GradCase::new("relu_sigmoid", vec![x, uniform(&[6, 3], -1.0, 1.0, &mut rng)], |t, v| {
        let r = t.relu(v[0]);
        let z = t.matmul(r, v[1])?;
        let s = t.sigmoid(z);
        let th = t.tanh(s);
        weighted_sum(t, th, 4)
    }));

    cases.push(GradCase::new("dropout", vec![uniform(&[3, 8], -1.0, 1.0, &mut rng)], |t, v| {
        let y = dropout(t, v[0], 0.5, true, &mut Rng::new(5))?;
        weighted_sum(t, y, 5)
    }));

    let (kh, kw, cin, f) = (3, 3, 1, 2);
    let mut lstm = vec![uniform(&[1, 3, 4, 4, cin], -1.0, 1.0, &mut rng)];
    lstm.extend((0..4).map(|_| uniform(&[kh, kw, cin, f], -0.5, 0.5, &mut rng)));
    lstm.extend((0..4).map(|_| uniform(&[kh, kw, f, f], -0.5, 0.5, &mut rng)));
    lstm.extend((0..4).map(|_| uniform(&[f], -0.5, 0.5, &mut rng)));
    cases.push(GradCase::new("convlstm2d", lstm, |t, v| {
        let p: [Var; 12] = v[1..13].try_into().expect("12 parameters");
        let y = convlstm2d(t, v[0], &p)?;
        weighted_sum(t, y, 6)
    }));

    let target = Tensor::new(&[6, 1], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).expect("valid shape");
    cases.push(GradCase::new("bce_loss", vec![uniform(&[6, 1], 0.05, 0.95, &mut rng)], move |t, v| {
        let y = t.constant(target.clone());
        bce_loss(t, v[0], y)
    }));

    cases
}

pub fn case_names() -> Vec<String> {
    default_cases().into_iter().map(|c| c.name).collect()
}

/// Run `cases`, optionally only the one named `only`.
pub fn run_cases(cases: Vec<GradCase>, only: Option<&str>) -> Result<Vec<CaseResult>> {
    let mut results = Vec::new();
    for case in cases {
        if only.is_some_and(|o| o != case.name) {
            continue;
        }
        let start = Instant::now();
        let reports = finite_diff_check_inputs(&case.f, &case.inputs, STEP)?;
        results.push(CaseResult {
            name: case.name,
            max_rel_error: reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
            checked: reports.iter().map(|r| r.checked).sum(),
            ties_excluded: reports.iter().map(|r| r.ties_excluded).sum(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    if let (Some(o), true) = (only, results.is_empty()) {
        return Err(Error::InvalidArgument(format!("unknown op {o:?}; choose from {}", case_names().join(", "))));
    }
    Ok(results)
}
