use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step `h`.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Coordinates whose analytic and numeric gradients are both below this
    /// magnitude are reported as negligible instead of compared; their
    /// relative error is dominated by rounding noise of order `eps/h`.
    pub negligible: f64,
    /// Check at most this many coordinates per input (evenly strided).
    pub max_coords: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            negligible: 1e-7,
            max_coords: None,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` with the largest relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates where `x ± h` switched a discrete decision (argmax slot,
    /// activation sign, neighbor list): non-differentiable sites.
    pub excluded_ties: usize,
    pub negligible: usize,
    pub failures: usize,
    pub passed: bool,
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// finite differences `(f(x+h) - f(x-h)) / 2h`, with relative error
/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::with_branch_tracking();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let base_sig = tape.branch_signature();
    let grads = tape.backward(out)?;

    let eval = |probe: &[Tensor<f64>]| -> Result<(f64, Option<u64>)> {
        let mut tape = Tape::with_branch_tracking();
        let vars: Vec<Var> = probe.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.value(out).data()[0], tape.branch_signature()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        excluded_ties: 0,
        negligible: 0,
        failures: 0,
        passed: false,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let n = inputs[which].numel();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(cap) if cap < n => (0..cap).map(|j| j * n / cap).collect(),
            _ => (0..n).collect(),
        };
        let analytic = grads.get(*var);
        for c in coords {
            let orig = inputs[which].data()[c];
            probe[which].data_mut()[c] = orig + cfg.step;
            let (fp, sp) = eval(&probe)?;
            probe[which].data_mut()[c] = orig - cfg.step;
            let (fm, sm) = eval(&probe)?;
            probe[which].data_mut()[c] = orig;
            if sp != base_sig || sm != base_sig {
                report.excluded_ties += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic.map_or(0.0, |g| g.data()[c]);
            if a.abs().max(numeric.abs()) < cfg.negligible {
                report.negligible += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > cfg.tolerance {
                report.failures += 1;
            }
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((which, c));
            }
        }
    }
    report.passed = report.failures == 0;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let report = grad_check(
            |tape, v| tape.mul(v[0], v[0]),
            &[x],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed);
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn tie_point_is_excluded() {
        let x = Tensor::new([2], vec![2.0, 2.0]).unwrap();
        let report = grad_check(
            |tape, v| Ok(tape.reduce_max(v[0], 0)?.0),
            &[x],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.excluded_ties, 2);
        assert_eq!(report.checked, 0);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        use crate::tensor::{BackwardCtx, Op};
        struct BadSquare;
        impl Op<f64> for BadSquare {
            fn name(&self) -> &'static str {
                "bad_square"
            }
            fn backward(&self, ctx: &BackwardCtx<'_, f64>) -> Vec<Option<Tensor<f64>>> {
                // true derivative is 2x; report 2.1x
                vec![Some(ctx.grad().map(|g| g * 2.1 * ctx.input(0).data()[0]))]
            }
        }
        let report = grad_check(
            |tape, v| {
                let x = tape.value(v[0]).data()[0];
                Ok(tape.push(BadSquare, &[v[0]], Tensor::scalar(x * x)))
            },
            &[Tensor::scalar(1.5)],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed);
        assert_eq!(report.failures, 1);
    }
}
