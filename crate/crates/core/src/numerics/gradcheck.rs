use super::{Bound, NumericsError, ParamStore, Tape, Var};

/// Finite-difference rule used by [`gradient_check_with`].
///
/// Either rule halves `h` while some evaluation point flips the sign of a
/// ReLU input relative to the unperturbed pass, so differences never
/// straddle a kink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`.
    #[default]
    Central,
    /// Five-point rule with O(h^4) truncation error.
    FivePoint,
}

/// Maximum relative discrepancy between analytic gradients and central
/// differences over every entry of every parameter, evaluated in 64-bit.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn gradient_check<F>(f: F, store: &mut ParamStore<f64>, eps: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var, NumericsError>,
{
    gradient_check_with(f, store, GradCheck { eps, ..GradCheck::default() })
}

/// Smallest step the central rule shrinks to when dodging ReLU kinks.
const MIN_STEP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub eps: f64,
    pub stencil: Stencil,
    /// Denominator floor in the relative error.
    pub floor: f64,
}

impl Default for GradCheck {
    /// Five-point at 1e-3: small truncation error while keeping roundoff well
    /// below 1e-4 relative even for entries near 1e-7.
    fn default() -> Self {
        Self { eps: 1e-3, stencil: Stencil::FivePoint, floor: 1e-12 }
    }
}

pub fn gradient_check_with<F>(f: F, store: &mut ParamStore<f64>, opts: GradCheck) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var, NumericsError>,
{
    let GradCheck { eps, stencil, floor } = opts;
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(NumericsError::InvalidArgument(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let out = f(&mut tape, &bound)?;
        let grads = tape.backward(out)?;
        bound
            .vars()
            .iter()
            .zip(store.iter())
            .map(|(&v, p)| grads.get(v).map_or_else(|| vec![0.0; p.value.len()], |g| g.to_vec()))
            .collect()
    };
    let eval = |store: &ParamStore<f64>| -> Result<(f64, Vec<bool>), NumericsError> {
        let mut tape = Tape::inference_tracking_relu();
        let bound = store.bind(&mut tape);
        let out = f(&mut tape, &bound)?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(NumericsError::NonScalarOutput(value.shape().to_vec()));
        }
        Ok((value.item(), tape.relu_signs().unwrap_or_default().to_vec()))
    };
    let base_signs = eval(store)?.1;
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let id = super::ParamId(pi);
            let orig = store.get(id).value.data()[i];
            let mut at = |delta: f64| {
                store.get_mut(id).value.data_mut()[i] = orig + delta;
                let v = eval(store);
                store.get_mut(id).value.data_mut()[i] = orig;
                v
            };
            // Shrink h while any evaluation point sits across a ReLU kink from x.
            let mut h = eps;
            let numeric = loop {
                let offsets: &[f64] = match stencil {
                    Stencil::Central => &[1.0, -1.0],
                    Stencil::FivePoint => &[1.0, -1.0, 2.0, -2.0],
                };
                let mut values = Vec::with_capacity(offsets.len());
                let mut smooth = true;
                for &k in offsets {
                    let (v, signs) = at(k * h)?;
                    smooth &= signs == base_signs;
                    values.push(v);
                }
                if smooth || h < MIN_STEP {
                    break match stencil {
                        Stencil::Central => (values[0] - values[1]) / (2.0 * h),
                        Stencil::FivePoint => (8.0 * (values[0] - values[1]) - (values[2] - values[3])) / (12.0 * h),
                    };
                }
                h /= 2.0;
            };
            if !numeric.is_finite() {
                return Err(NumericsError::NonFinite { op: "gradient_check".into() });
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
