//! Finite-difference verification of tape gradients.

use crate::array::Array;
use crate::tape::{Tape, Var};
use crate::TensorError;

/// Outcome of a finite-difference sweep. `max_rel_err` is the worst relative
/// error over all checked elements; `blocks` carries the per-parameter-block
/// maxima for diagnostics.
#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub blocks: Vec<(String, f64)>,
    pub elements_checked: usize,
}

/// Elements with both analytic and numeric gradient below this magnitude are
/// compared absolutely: a relative error of two ~1e-12 values is noise.
const NEAR_ZERO: f64 = 1e-7;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < NEAR_ZERO {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compares the tape gradient of `build`'s scalar output against central
/// finite differences, perturbing every element of every parameter block
/// (`stride` > 1 checks every `stride`-th element for large blocks).
///
/// `build` must be deterministic: it is re-executed `2·n + 1` times and any
/// internal randomness must replay identically on each call.
pub fn gradient_check<F>(
    build: F,
    params: &[(String, Array)],
    eps: f64,
    stride: usize,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Tape, &[(String, Var)]) -> Result<Var, TensorError>,
{
    assert!(stride >= 1);
    let eval = |values: &[(String, Array)]| -> Result<f64, TensorError> {
        let tape = Tape::new();
        let vars: Vec<(String, Var)> =
            values.iter().map(|(n, a)| (n.clone(), tape.leaf(a.clone()))).collect();
        let loss = build(&tape, &vars)?;
        let value = tape.value(loss).item();
        Ok(value)
    };

    // Analytic gradients from one taped pass.
    let tape = Tape::new();
    let vars: Vec<(String, Var)> =
        params.iter().map(|(n, a)| (n.clone(), tape.leaf(a.clone()))).collect();
    let loss = build(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Array> = vars
        .iter()
        .zip(params)
        .map(|((_, v), (_, a))| {
            tape.take_grad(*v).unwrap_or_else(|| Array::zeros(a.rows(), a.cols()))
        })
        .collect();

    let mut scratch: Vec<(String, Array)> = params.to_vec();
    let mut report =
        GradCheckReport { max_rel_err: 0.0, blocks: Vec::with_capacity(params.len()), elements_checked: 0 };

    for (block_idx, (name, _)) in params.iter().enumerate() {
        let mut block_max = 0.0f64;
        let n_elems = scratch[block_idx].1.len();
        for e in (0..n_elems).step_by(stride) {
            let original = scratch[block_idx].1.as_slice()[e];
            scratch[block_idx].1.as_mut_slice()[e] = original + eps;
            let up = eval(&scratch)?;
            scratch[block_idx].1.as_mut_slice()[e] = original - eps;
            let down = eval(&scratch)?;
            scratch[block_idx].1.as_mut_slice()[e] = original;

            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic[block_idx].as_slice()[e], numeric);
            block_max = block_max.max(err);
            report.elements_checked += 1;
        }
        report.max_rel_err = report.max_rel_err.max(block_max);
        report.blocks.push((name.clone(), block_max));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_function_has_exact_gradient() {
        let params = vec![("x".to_string(), Array::from_vec(1, 3, vec![0.3, -0.7, 1.2]))];
        let report = gradient_check(
            |tape, vars| tape.sum(vars[0].1),
            &params,
            1e-5,
            1,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "sum gradient should be exact: {report:?}");
        assert_eq!(report.elements_checked, 3);
    }

    #[test]
    fn quadratic_matches_finite_differences() {
        let params = vec![("x".to_string(), Array::from_vec(2, 2, vec![0.5, -1.0, 2.0, 0.1]))];
        let report = gradient_check(
            |tape, vars| {
                let x = vars[0].1;
                let sq = tape.mul(x, x)?;
                tape.sum(sq)
            },
            &params,
            1e-5,
            1,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "{report:?}");
    }
}
