//! Central finite-difference oracle for gradients produced by [`Graph::backward`].

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Floor for the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Finite-difference formula for the numeric derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error O(h²).
    #[default]
    Central,
    /// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`, error O(h⁴).
    FivePoint,
}

impl Stencil {
    fn offsets(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::Central => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::FivePoint => &[(2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0)],
        }
    }
}

/// Checks every coordinate of every input.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |c| (i, c)))
        .collect();
    finite_diff_check_at(f, inputs, step, &coords)
}

/// Checks only the listed `(input, flat coordinate)` pairs. The function
/// `f` receives one graph variable per input and must return a scalar.
pub fn finite_diff_check_at<F>(
    f: F,
    inputs: &[Tensor],
    step: f64,
    coords: &[(usize, usize)],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(f, inputs, step, coords, Stencil::Central)
}

/// [`finite_diff_check_at`] with a chosen stencil.
pub fn finite_diff_check_with<F>(
    f: F,
    inputs: &[Tensor],
    step: f64,
    coords: &[(usize, usize)],
    stencil: Stencil,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(TensorError::Parameter(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().trainable())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates_checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for &(i, c) in coords {
        let original = inputs[i].data()[c];
        let mut shifted = inputs[i].data().to_vec();
        let mut numeric = 0.0;
        for &(k, w) in stencil.offsets() {
            shifted[c] = original + k * step;
            work[i].set_data(shifted.clone())?;
            numeric += w * eval(&work)?;
        }
        numeric /= step;
        work[i].set_data(inputs[i].data().to_vec())?;

        let analytic = grads.get_data(vars[i]).map_or(0.0, |g| g[c]);
        let err = relative_error(analytic, numeric);
        report.coordinates_checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((i, c));
            report.analytic_at_worst = analytic;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}
