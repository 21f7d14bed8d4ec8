use crate::error::{Error, Result};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Compare an analytic gradient of the scalar function `f` at `x` against
/// central differences, over `coords` (all coordinates when `None`).
///
/// Returns `max |analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<Fun>(
    mut f: Fun,
    x: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
) -> Result<f64>
where
    Fun: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != x.len() {
        return Err(Error::Shape(format!(
            "{} gradient entries for {} inputs",
            analytic.len(),
            x.len()
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + GRAD_CHECK_STEP;
        let up = f(&probe)?;
        probe[i] = orig - GRAD_CHECK_STEP;
        let down = f(&probe)?;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic[i];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "coordinate {i}: analytic {a}, numeric {numeric}"
            )));
        }
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

/// True when every value is at least `margin` away from the kink at zero.
pub fn kink_distance_ok(values: &[f64], margin: f64) -> bool {
    values.iter().all(|v| v.abs() >= margin)
}
