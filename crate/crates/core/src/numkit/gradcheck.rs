use crate::error::{check_len, Result};
use crate::numkit::mlp::{backward_batch, forward_batch, MlpSpec, ParamVector};

/// Central-difference step, applied in `f64`.
pub const FD_STEP: f64 = 1e-4;

/// Entries whose analytic and numeric magnitudes are both below this are
/// compared in absolute rather than relative terms.
const DENOM_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Objective used by the check: the sum of all outputs.
fn objective(spec: &MlpSpec, params: &[f64], input: &[f64]) -> Result<f64> {
    let tape = forward_batch(spec, params, input, 1)?;
    Ok(tape.output().iter().sum())
}

/// Max relative error between the reverse-mode gradient and central
/// differences, over every parameter and every input coordinate.
///
/// Both sides are evaluated in `f64` so the comparison measures the
/// algorithm rather than `f32` rounding.
pub fn grad_check(spec: &MlpSpec, params: &ParamVector, input: &[f32]) -> Result<f64> {
    grad_check_with(spec, params, input, |p, x| {
        let tape = forward_batch(spec, p, x, 1)?;
        let ones = vec![1.0; spec.output_size()];
        let g = backward_batch(spec, p, &tape, &ones, true, true)?;
        Ok((g.params, g.inputs))
    })
}

/// [`grad_check`] against a caller-supplied analytic gradient.
pub fn grad_check_with<F>(spec: &MlpSpec, params: &ParamVector, input: &[f32], analytic: F) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> Result<(Vec<f64>, Vec<f64>)>,
{
    check_len("input", input.len(), spec.input_size())?;
    let mut p = params.to_f64();
    let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let (gp, gx) = analytic(&p, &x)?;
    check_len("analytic parameter gradient", gp.len(), p.len())?;
    check_len("analytic input gradient", gx.len(), x.len())?;

    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = objective(spec, &p, &x)?;
        p[i] = orig - FD_STEP;
        let down = objective(spec, &p, &x)?;
        p[i] = orig;
        worst = worst.max(relative_error(gp[i], (up - down) / (2.0 * FD_STEP)));
    }
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = objective(spec, &p, &x)?;
        x[i] = orig - FD_STEP;
        let down = objective(spec, &p, &x)?;
        x[i] = orig;
        worst = worst.max(relative_error(gx[i], (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

/// Max relative error between `analytic` and central differences of the
/// scalar function `f` at `x`, with difference step `step`.
pub fn fd_check<F>(f: F, x: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    check_len("analytic gradient", analytic.len(), x.len())?;
    let mut p = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = f(&p)?;
        p[i] = orig - step;
        let down = f(&p)?;
        p[i] = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * step)));
    }
    Ok(worst)
}
