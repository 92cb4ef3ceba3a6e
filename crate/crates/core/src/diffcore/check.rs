//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{GradientTable, ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Loss value and (optionally) its analytic gradient at one parameter point.
pub struct Eval {
    pub loss: f64,
    pub grads: Option<GradientTable>,
}

impl Eval {
    pub fn from_tape(tape: &Tape<'_>, root: NodeId, with_grads: bool) -> Result<Eval> {
        let grads = if with_grads {
            Some(tape.backward(root)?)
        } else {
            None
        };
        Ok(Eval {
            loss: tape.scalar(root),
            grads,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordError {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst: Option<CoordError>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares the analytic gradient of `f` against central differences.
///
/// At most `max_coords` coordinates per tensor are checked (all of them when the
/// tensor is smaller); the subset is fixed by `seed`.
pub fn grad_check<F>(
    params: &ParamStore,
    step: f64,
    max_coords: usize,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, bool) -> Result<Eval>,
{
    if !(step > 0.0) {
        return Err(Error::usage("grad_check step must be positive"));
    }
    let base = f(params, true)?;
    let analytic = base
        .grads
        .ok_or_else(|| Error::usage("objective returned no gradient for the base point"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for id in params.ids() {
        let len = params.get(id).len();
        let coords: Vec<usize> = if len <= max_coords {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, max_coords).into_vec();
            v.sort_unstable();
            v
        };
        for index in coords {
            let orig = params.get(id).data()[index];
            probe.get_mut(id).data_mut()[index] = orig + step;
            let plus = f(&probe, false)?.loss;
            probe.get_mut(id).data_mut()[index] = orig - step;
            let minus = f(&probe, false)?.loss;
            probe.get_mut(id).data_mut()[index] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(id).data()[index];
            let rel_error = relative_error(a, numeric);
            report.coords_checked += 1;
            if rel_error > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel_error);
                report.worst = Some(CoordError {
                    param: id,
                    index,
                    analytic: a,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    Ok(report)
}
