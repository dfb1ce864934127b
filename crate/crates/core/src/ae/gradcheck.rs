//! Central-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::AeModel;
use crate::error::{Error, Result};

/// Smallest gradient magnitude used as the denominator of the relative error.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (layer index, parameter index) of the worst entry; biases follow weights.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Entries whose step straddled a ReLU kink and were re-measured with a
    /// smaller step.
    pub refined: usize,
    /// Entries that still straddled a kink at the smallest step; not counted.
    pub skipped: usize,
}

/// Compares `backward` against `(L(w+h) - L(w-h)) / 2h` for every parameter,
/// or for `sample` randomly chosen ones. When either perturbed evaluation
/// flips a ReLU relative to the unperturbed one, the difference quotient is
/// not a derivative estimate, so the step is shrunk tenfold (up to four
/// times) until the activation pattern is stable.
pub fn gradient_check(
    model: &AeModel,
    input: &[f64],
    target: &[f64],
    eps: f64,
    sample: Option<(usize, u64)>,
) -> Result<GradCheck> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {eps}")));
    }
    let (_, grads) = model.backward(input, target)?;
    let mut entries: Vec<(usize, usize)> = Vec::new();
    for (li, (w, b)) in grads.layers.iter().enumerate() {
        entries.extend((0..w.len() + b.len()).map(|j| (li, j)));
    }
    if let Some((n, seed)) = sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // partial Fisher-Yates keeps the first n
        let n = n.min(entries.len());
        for i in 0..n {
            let j = rng.random_range(i..entries.len());
            entries.swap(i, j);
        }
        entries.truncate(n);
    }
    let (_, base) = model.loss_and_pattern(input, target);
    let mut m = model.clone();
    let mut out = GradCheck { max_rel_error: 0.0, worst: (0, 0), checked: 0, refined: 0, skipped: 0 };
    for (li, j) in entries {
        let (gw, gb) = &grads.layers[li];
        let analytic = if j < gw.len() { gw[j] } else { gb[j - gw.len()] };
        let mut h = eps;
        let mut numeric = None;
        for attempt in 0..5 {
            let orig = *param(&mut m, li, j);
            *param(&mut m, li, j) = orig + h;
            let (lp, pp) = m.loss_and_pattern(input, target);
            *param(&mut m, li, j) = orig - h;
            let (lm, pm) = m.loss_and_pattern(input, target);
            *param(&mut m, li, j) = orig;
            if pp == base && pm == base {
                numeric = Some((lp - lm) / (2.0 * h));
                if attempt > 0 {
                    out.refined += 1;
                }
                break;
            }
            h /= 10.0;
        }
        let Some(numeric) = numeric else {
            out.skipped += 1;
            continue;
        };
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        out.checked += 1;
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst = (li, j);
        }
    }
    Ok(out)
}

fn param(m: &mut AeModel, li: usize, j: usize) -> &mut f64 {
    let (w, b) = m.layers_mut()[li].params_mut().expect("parametric layer");
    if j < w.len() {
        &mut w[j]
    } else {
        &mut b[j - w.len()]
    }
}
