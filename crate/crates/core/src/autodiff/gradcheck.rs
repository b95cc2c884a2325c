use crate::error::Result;

use super::graph::{Fault, Graph, Var};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so that gradients that
    /// are zero up to round-off are compared in absolute terms.
    pub floor: f64,
    /// Check at most this many coordinates per input (evenly strided).
    pub max_coords: usize,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tol: 1e-5,
            floor: 1e-6,
            max_coords: usize::MAX,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Worst relative error per input tensor.
    pub per_input: Vec<f64>,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a kink
    /// (relu/hinge switch or argmax change).
    pub skipped: usize,
    pub passed: bool,
}

fn evaluate<F>(f: &F, inputs: &[Tensor], fault: Option<Fault>) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_fault(fault);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok((g.value(out).item(), g.branch_signature()))
}

/// Compares the analytic gradient of a scalar function with central
/// differences, coordinate by coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_fault(opts.fault);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let base_sig = g.branch_signature();
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        per_input: vec![0.0; inputs.len()],
        checked: 0,
        skipped: 0,
        passed: true,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for k in 0..inputs.len() {
        let n = inputs[k].numel();
        let stride = n.div_ceil(opts.max_coords.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let x0 = inputs[k].values()[i];
            work[k].values_mut()[i] = x0 + opts.h;
            let (fp, sp) = evaluate(&f, &work, opts.fault)?;
            work[k].values_mut()[i] = x0 - opts.h;
            let (fm, sm) = evaluate(&f, &work, opts.fault)?;
            work[k].values_mut()[i] = x0;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.h);
            let a = analytic[k].values()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.per_input[k] = report.per_input[k].max(rel);
        }
    }
    report.passed = report.max_rel_error < opts.tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let report = grad_check(
            |g, v| {
                let c = g.constant(Tensor::vector(vec![1.5, 2.5, -0.5]));
                let p = g.mul(v[0], c)?;
                g.sum_all(p)
            },
            &[w],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-10, "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn softplus_chain() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.0, 0.01]);
        let report = grad_check(
            |g, v| {
                let a = g.softplus(v[0]);
                let b = g.mul_scalar(a, 1.7);
                let c = g.softplus(b);
                let d = g.square(c);
                g.sum_all(d)
            },
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn injected_fault_is_detected() {
        let x = Tensor::vector(vec![0.3, -1.2]);
        let opts = GradCheckOptions {
            fault: Some(Fault::SoftplusBackward),
            ..Default::default()
        };
        let report = grad_check(
            |g, v| {
                let s = g.softplus(v[0]);
                g.sum_all(s)
            },
            &[x],
            &opts,
        )
        .unwrap();
        assert!(!report.passed);
    }
}
