use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Bound, Tape, Var};
use super::NumError;

#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub blocks: Vec<BlockCheck>,
}

/// Compares tape gradients of the scalar built by `f` against central
/// finite differences. Up to `per_block` coordinates are sampled from every
/// parameter block (all of them when the block is smaller).
///
/// The error for one coordinate is `|ga - gn| / (|ga| + |gn| + 1e-12)`.
pub fn grad_check<F>(
    store: &ParamStore,
    epsilon: f64,
    per_block: usize,
    seed: u64,
    f: F,
) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var, NumError>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(NumError::Domain(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |s: &ParamStore| -> Result<f64, NumError> {
        let mut tape = Tape::new();
        let b = tape.bind(s);
        let out = f(&mut tape, &b)?;
        let v = tape.value(out);
        if v.shape() != (1, 1) {
            return Err(NumError::Shape("grad_check target must be 1x1".into()));
        }
        let x = v.data()[0];
        if !x.is_finite() {
            return Err(NumError::Numeric("objective is not finite".into()));
        }
        Ok(x)
    };

    let analytic = {
        let mut tape = Tape::new();
        let b = tape.bind(store);
        let out = f(&mut tape, &b)?;
        if !tape.value(out).data()[0].is_finite() {
            return Err(NumError::Numeric("objective is not finite".into()));
        }
        tape.backward(out, store)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: 0,
        blocks: Vec::new(),
    };
    for id in store.ids() {
        let n = store.get(id).len();
        let picks: Vec<usize> = if n <= per_block {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, per_block).into_vec();
            v.sort_unstable();
            v
        };
        let mut block_max: f64 = 0.0;
        for &k in &picks {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + epsilon;
            let fp = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig - epsilon;
            let fm = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * epsilon);
            let ga = analytic.get(id).data()[k];
            let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs() + 1e-12);
            block_max = block_max.max(rel);
        }
        report.coordinates += picks.len();
        report.max_rel_error = report.max_rel_error.max(block_max);
        report.blocks.push(BlockCheck {
            name: store.name(id).to_string(),
            coordinates: picks.len(),
            max_rel_error: block_max,
        });
    }
    Ok(report)
}
