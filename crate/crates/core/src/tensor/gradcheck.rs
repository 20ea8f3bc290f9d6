//! Central finite-difference verification of tape gradients (64-bit only).

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Relative jump between one-sided slopes above which a point is treated as
/// non-smooth (max-pool tie, ReLU at zero) and excluded from the error.
const KINK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// max over checked elements of `|analytic − numeric| / max(1, |analytic|, |numeric|)`
    pub max_rel_error: f64,
    pub checked: usize,
    /// Elements skipped because the one-sided slopes disagree.
    pub ties_excluded: usize,
    pub worst_index: Option<usize>,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    tape.value(v).item().map_err(|_| {
        Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            tape.shape(v)
        ))
    })
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)
}

/// Check dF/dInput for every input of a multi-input scalar function.
pub fn finite_diff_check_inputs<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let f0 = eval(&f, inputs)?;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (which, grads) in analytic.iter().enumerate() {
        let mut report = GradCheck {
            max_rel_error: 0.0,
            checked: 0,
            ties_excluded: 0,
            worst_index: None,
        };
        for (i, &a) in grads.iter().enumerate() {
            let orig = work[which].data()[i];
            work[which].data_mut()[i] = orig + h;
            let fp = eval(&f, &work)?;
            work[which].data_mut()[i] = orig - h;
            let fm = eval(&f, &work)?;
            work[which].data_mut()[i] = orig;

            let forward = (fp - f0) / h;
            let backward = (f0 - fm) / h;
            let kink = (forward - backward).abs() / 1f64.max(forward.abs()).max(backward.abs());
            if kink > KINK_TOLERANCE {
                report.ties_excluded += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if err > report.max_rel_error || report.worst_index.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst_index = Some(i);
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Check dF/dx for a single-input scalar function `f`.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut r = finite_diff_check_inputs(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)?;
    Ok(r.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Fill, Rng};

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::create(shape, Fill::Uniform { low: -1.0, high: 1.0 }, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn sum_is_exact() {
        let r = finite_diff_check(|t, x| Ok(t.sum(x)), &random(&[3, 4], 1), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 12);
    }

    #[test]
    fn matmul_gradients() {
        let a = random(&[3, 4], 2);
        let b = random(&[4, 2], 3);
        let reports = finite_diff_check_inputs(
            |t, v| {
                let c = t.matmul(v[0], v[1])?;
                let sq = t.mul(c, c)?;
                Ok(t.sum(sq))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        for r in reports {
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn accumulation_through_two_branches() {
        // f(x) = sum(tanh(x)) + sum(x ⊙ x)
        let r = finite_diff_check(
            |t, x| {
                let a = t.tanh(x);
                let g = t.sum(a);
                let sq = t.mul(x, x)?;
                let h = t.sum(sq);
                t.add(g, h)
            },
            &random(&[5], 4),
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn broken_gradient_is_detected() {
        // scale by 2 on the forward path but compare against a function that
        // only sees half the slope: wrap in a custom op with a wrong rule.
        use crate::tensor::Backward;
        struct Wrong;
        impl Backward<f64> for Wrong {
            fn name(&self) -> &'static str {
                "wrong"
            }
            fn backward(&self, _: &[&Tensor<f64>], _: &Tensor<f64>, g: &[f64], _: &[bool]) -> Result<Vec<Option<Vec<f64>>>> {
                Ok(vec![Some(g.iter().map(|v| -v).collect())])
            }
        }
        let r = finite_diff_check(
            |t, x| {
                let v = t.value(x).clone();
                let y = t.record(&[x], v, Wrong);
                Ok(t.sum(y))
            },
            &random(&[3], 5),
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error > 1.0);
    }

    #[test]
    fn non_scalar_function_rejected() {
        assert!(finite_diff_check(|_, x| Ok(x), &random(&[2], 6), 1e-5).is_err());
    }
}
