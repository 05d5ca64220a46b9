use super::{Gradients, ParamId, ParamStore, Scalar, SeededRng, Tape, Var};
use crate::error::Result;

/// A deterministic scalar function of the parameters that can be evaluated
/// on a tape of either precision.
pub trait Objective {
    fn loss<'a, T: Scalar>(&self, tape: &mut Tape<'a, T>, params: &'a ParamStore) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step, applied to the 32-bit parameter.
    pub step: f64,
    /// Check at most this many (seeded, random) coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// Parameters whose analytic and numeric gradient norms are both below
    /// this value count as exact.
    pub zero_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_coords_per_param: None,
            seed: 0,
            zero_floor: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamError {
    pub name: String,
    pub coords_checked: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the checked
    /// coordinates.
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamError>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamError> {
        self.per_param
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn eval_f64<O: Objective>(obj: &O, params: &ParamStore) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let loss = obj.loss(&mut tape, params)?;
    Ok(tape.scalar(loss))
}

/// An objective that owns its parameters, e.g. a whole model together with
/// a fixed batch.
pub trait OwnedObjective {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn loss<'a, T: Scalar>(&'a self, tape: &mut Tape<'a, T>) -> Result<Var>;
}

/// Compares the 32-bit analytic gradient of `obj` against central finite
/// differences evaluated in 64-bit precision.
pub fn grad_check<O: Objective>(
    obj: &O,
    params: &ParamStore,
    tolerance: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = {
        let mut tape = Tape::<f32>::new();
        let loss = obj.loss(&mut tape, params)?;
        tape.backward(loss)?
    };
    let mut work = params.clone();
    compare(&analytic, &mut work, tolerance, opts, |w| eval_f64(obj, w))
}

/// [`grad_check`] for an objective that owns its parameters. The parameters
/// are perturbed in place and restored afterwards.
pub fn grad_check_owned<O: OwnedObjective>(
    obj: &mut O,
    tolerance: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = {
        let mut tape = Tape::<f32>::new();
        let loss = obj.loss(&mut tape)?;
        tape.backward(loss)?
    };
    struct Owned<'o, O>(&'o mut O);
    impl<O: OwnedObjective> Perturb for Owned<'_, O> {
        fn store(&mut self) -> &mut ParamStore {
            self.0.store_mut()
        }
        fn eval(&mut self) -> Result<f64> {
            let mut tape = Tape::<f64>::new();
            let loss = self.0.loss(&mut tape)?;
            Ok(tape.scalar(loss))
        }
    }
    let mut owned = Owned(obj);
    compare_with(&analytic, &mut owned, tolerance, opts)
}

trait Perturb {
    fn store(&mut self) -> &mut ParamStore;
    fn eval(&mut self) -> Result<f64>;
}

struct Borrowed<'w, F>(&'w mut ParamStore, F);

impl<F: FnMut(&ParamStore) -> Result<f64>> Perturb for Borrowed<'_, F> {
    fn store(&mut self) -> &mut ParamStore {
        self.0
    }
    fn eval(&mut self) -> Result<f64> {
        (self.1)(self.0)
    }
}

fn compare<F: FnMut(&ParamStore) -> Result<f64>>(
    analytic: &Gradients<f32>,
    work: &mut ParamStore,
    tolerance: f64,
    opts: &GradCheckOptions,
    eval: F,
) -> Result<GradCheckReport> {
    compare_with(analytic, &mut Borrowed(work, eval), tolerance, opts)
}

fn compare_with<P: Perturb>(
    analytic: &Gradients<f32>,
    work: &mut P,
    tolerance: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = SeededRng::new(opts.seed);
    let mut per_param = Vec::new();
    let ids: Vec<ParamId> = work.store().ids().collect();
    for id in ids {
        if !work.store().get(id).requires_grad() {
            continue;
        }
        let n = work.store().get(id).len();
        let coords = select_coords(n, opts.max_coords_per_param, &mut rng);
        let a_full = analytic.get(id);
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for &k in &coords {
            let numeric = central_difference(work, id, k, opts.step)?;
            let a = a_full.map_or(0.0, |g| g[k] as f64);
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let (an, nn) = (a2.sqrt(), n2.sqrt());
        let rel_error = if an.max(nn) < opts.zero_floor {
            0.0
        } else {
            diff2.sqrt() / an.max(nn)
        };
        per_param.push(ParamError {
            name: work.store().name(id).to_string(),
            coords_checked: coords.len(),
            analytic_norm: an,
            numeric_norm: nn,
            rel_error,
        });
    }
    let max_rel_error = per_param.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        tolerance,
    })
}

fn select_coords(n: usize, cap: Option<usize>, rng: &mut SeededRng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    match cap {
        Some(c) if c < n => {
            rng.shuffle(&mut all);
            all.truncate(c);
            all.sort_unstable();
            all
        }
        _ => all,
    }
}

fn central_difference<P: Perturb>(work: &mut P, id: ParamId, k: usize, step: f64) -> Result<f64> {
    let orig = work.store().get(id).data()[k];
    let plus = (orig as f64 + step) as f32;
    let minus = (orig as f64 - step) as f32;
    work.store().get_mut(id).data_mut()[k] = plus;
    let lp = work.eval();
    work.store().get_mut(id).data_mut()[k] = minus;
    let lm = work.eval();
    work.store().get_mut(id).data_mut()[k] = orig;
    Ok((lp? - lm?) / (plus as f64 - minus as f64))
}
