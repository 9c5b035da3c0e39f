//! Central finite-difference verification of tape gradients.

use super::param::{ParamId, ParamStore};
use super::rng::SeedRng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// `|a - n| / (|a| + |n| + 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Fourth-order central difference
/// `(8 (f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h` of `f` at offset 0.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let (p1, m1, p2, m2) = (f(h)?, f(-h)?, f(2.0 * h)?, f(-2.0 * h)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// [`central_difference`] with the step halved until no ReLU on the tape
/// changes sign across the stencil, so the function is smooth over it.
fn kink_free_difference(
    mut f: impl FnMut(f64) -> Result<(f64, Vec<bool>)>,
    base: &[bool],
    h: f64,
) -> Result<f64> {
    const HALVINGS: usize = 20;
    let mut step = h;
    for _ in 0..HALVINGS {
        let mut smooth = true;
        let est = central_difference(
            |d| {
                let (v, pattern) = f(d)?;
                smooth &= pattern == base;
                Ok(v)
            },
            step,
        )?;
        if smooth {
            return Ok(est);
        }
        step /= 2.0;
    }
    central_difference(|d| f(d).map(|r| r.0), step)
}

/// Max relative error between the tape gradient of `f` at `x` and a
/// [`central_difference`] estimate, over all coordinates.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&mut tape, xv)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let base = tape.relu_pattern();
    let eval = |point: &Tensor| -> Result<(f64, Vec<bool>)> {
        let mut t = Tape::new();
        let v = t.leaf(point.clone());
        let l = f(&mut t, v)?;
        Ok((t.scalar_value(l), t.relu_pattern()))
    };

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for (i, &grad) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        let numeric = kink_free_difference(
            |delta| {
                probe.data_mut()[i] = orig + delta;
                eval(&probe)
            },
            &base,
            h,
        )?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(grad, numeric));
    }
    Ok(worst)
}

/// Per-parameter outcome of [`param_gradient_check`].
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

/// Finite-difference check of a loss with respect to stored parameters.
///
/// At most `max_coords` coordinates per parameter are probed, picked by `rng`
/// when the parameter is larger than that.
pub fn param_gradient_check<F>(
    store: &ParamStore,
    ids: &[ParamId],
    f: F,
    h: f64,
    max_coords: usize,
    rng: &mut SeedRng,
) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss)?;
    let mut work = store.clone();
    work.zero_grads();
    work.accumulate_grads(&tape);

    let base = tape.relu_pattern();
    let eval = |s: &ParamStore| -> Result<(f64, Vec<bool>)> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok((t.scalar_value(l), t.relu_pattern()))
    };

    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let n = work.get(id).tensor.numel();
        let analytic = work
            .get(id)
            .tensor
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; n]);
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|_| rng.below(n)).collect()
        };
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let orig = work.get(id).tensor.data()[i];
            let numeric = kink_free_difference(
                |delta| {
                    work.get_mut(id).tensor.data_mut()[i] = orig + delta;
                    eval(&work)
                },
                &base,
                h,
            )?;
            work.get_mut(id).tensor.data_mut()[i] = orig;
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        out.push(ParamCheck {
            name: work.get(id).name.clone(),
            coords_checked: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(out)
}

pub fn max_error(checks: &[ParamCheck]) -> f64 {
    checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
}
