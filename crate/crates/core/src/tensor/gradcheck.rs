use rayon::prelude::*;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter index, element index) of the worst element.
    pub worst: Option<(usize, usize)>,
    /// Tape and finite-difference gradients at `worst`.
    pub worst_values: Option<(f64, f64)>,
    pub n_checked: usize,
}

fn eval_loss<F>(params: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::contract("grad_check fragment must return a scalar"));
    }
    Ok(tape.value(loss)[0])
}

/// Compares tape gradients of a scalar fragment against central differences.
///
/// The error for one element is `|a − n| / max(|a|, |n|, 1e-12)`; the report
/// carries the maximum over every element of every parameter. The fragment
/// must be a pure function of the parameters: it is evaluated twice up front
/// and rejected if the two values differ.
pub fn grad_check<F>(params: &[Tensor], epsilon: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    if !(epsilon > 0.0) {
        return Err(Error::config("grad_check epsilon must be positive"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::contract("grad_check fragment must return a scalar"));
    }
    let first = tape.value(loss)[0];
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| tape.grad(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    drop(tape);

    let again = eval_loss(params, &f)?;
    if again.to_bits() != first.to_bits() {
        return Err(Error::contract(
            "grad_check fragment is not deterministic (two evaluations differ)",
        ));
    }

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.numel()).map(move |e| (pi, e)))
        .collect();

    let errors: Vec<Result<(f64, (usize, usize), (f64, f64))>> = coords
        .par_chunks(64)
        .map(|chunk| {
            let mut local = params.to_vec();
            let mut worst = (0.0f64, chunk[0], (0.0, 0.0));
            for &(pi, e) in chunk {
                let orig = local[pi].data()[e];
                local[pi].data_mut()[e] = orig + epsilon;
                let plus = eval_loss(&local, &f)?;
                local[pi].data_mut()[e] = orig - epsilon;
                let minus = eval_loss(&local, &f)?;
                local[pi].data_mut()[e] = orig;
                let numeric = (plus - minus) / (2.0 * epsilon);
                let a = analytic[pi][e];
                let denom = a.abs().max(numeric.abs()).max(1e-12);
                let err = (a - numeric).abs() / denom;
                if err > worst.0 {
                    worst = (err, (pi, e), (a, numeric));
                }
            }
            Ok(worst)
        })
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_values: None,
        n_checked: coords.len(),
    };
    for r in errors {
        let (err, at, values) = r?;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some(at);
            report.worst_values = Some(values);
        }
    }
    Ok(report)
}
