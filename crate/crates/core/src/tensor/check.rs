//! Finite-difference verification of recorded gradients.

use super::{Tape, Tensor, TensorError, Var};
use crate::exec;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    /// Worst relative error |analytic - fd| / max(1, |fd|) over all checked
    /// coordinates.
    pub max_rel_err: f64,
    /// Coordinate of the worst error, as (tensor index, flat offset).
    pub worst: Option<(usize, usize)>,
    /// Coordinates skipped because the one-sided derivatives disagree
    /// (subgradient points such as relu at exactly zero).
    pub excluded: Vec<(usize, usize)>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Check d(f)/d(point) for a scalar-valued tensor function.
pub fn grad_check<F>(f: F, point: &Tensor, tolerance: f64) -> Result<CheckReport, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError> + Sync,
{
    let points = [point.clone()];
    grad_check_params(
        |tape, vars| f(tape, vars[0]),
        &points,
        tolerance,
    )
}

/// Check the gradient of a scalar function of several tensors at once.
pub fn grad_check_params<F>(
    f: F,
    points: &[Tensor],
    tolerance: f64,
) -> Result<CheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError> + Sync,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = points
        .iter()
        .map(|p| {
            let mut forced = p.clone();
            forced.set_requires_grad(true);
            tape.leaf(&forced)
        })
        .collect();
    let root = f(&mut tape, &vars)?;
    if tape.value(root).len() != 1 {
        return Err(TensorError::NotScalar);
    }
    let f0 = tape.value(root)[0];
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    // Numeric pass: every coordinate is independent, so the probe pairs run
    // through the data-parallel helper.
    let coords: Vec<(usize, usize)> = points
        .iter()
        .enumerate()
        .flat_map(|(ti, p)| (0..p.len()).map(move |j| (ti, j)))
        .collect();
    let eval = |bumped: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = bumped.iter().map(|p| tape.constant(p)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out)[0])
    };
    let probes = exec::map_collect(&coords, |&(ti, j)| -> Result<(f64, f64), TensorError> {
        let mut plus = points.to_vec();
        plus[ti].data_mut()[j] += FD_STEP;
        let mut minus = points.to_vec();
        minus[ti].data_mut()[j] -= FD_STEP;
        Ok((eval(&plus)?, eval(&minus)?))
    });

    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut excluded = Vec::new();
    for (&(ti, j), probe) in coords.iter().zip(probes) {
        let (fp, fm) = probe?;
        let central = (fp - fm) / (2.0 * FD_STEP);
        let right = (fp - f0) / FD_STEP;
        let left = (f0 - fm) / FD_STEP;
        // One-sided derivatives that disagree flag a kink; central
        // differences are meaningless there.
        let kink = (right - left).abs() / right.abs().max(left.abs()).max(1.0);
        if kink > 1e-3 {
            excluded.push((ti, j));
            continue;
        }
        let rel = (analytic[ti][j] - central).abs() / central.abs().max(1.0);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = Some((ti, j));
        }
    }
    Ok(CheckReport {
        max_rel_err,
        worst,
        excluded,
        tolerance,
        pass: max_rel_err <= tolerance,
    })
}
