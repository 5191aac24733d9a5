use alloc::string::String;
use alloc::vec::Vec;

use super::{NumericsError, ParameterStore, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding are compared in absolute terms.
    pub floor: f64,
    /// Check at most this many evenly spaced scalars per parameter array.
    pub max_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-5, tol: 1e-4, floor: 1e-6, max_per_param: None }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }

    pub fn checked(&self) -> usize {
        self.entries.iter().map(|e| e.checked).sum()
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

fn sample_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n => {
            // Evenly spaced with an odd stride so rows and columns both vary.
            let mut stride = n / m;
            if stride % 2 == 0 {
                stride += 1;
            }
            (0..m).map(|i| (i * stride + i / 3) % n).collect()
        }
        _ => (0..n).collect(),
    }
}

/// Compares tape gradients of `loss_fn` against central finite differences on
/// every trainable parameter of `store`.
pub fn gradient_check<F, E>(store: &mut ParameterStore, loss_fn: F, cfg: GradCheckConfig) -> Result<GradCheckReport, E>
where
    F: Fn(&ParameterStore, &mut Tape) -> Result<Var, E>,
    E: From<NumericsError>,
{
    let eval = |store: &ParameterStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let first = tape.scalar(loss);
    let second = eval(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumericsError::NonDeterministic { first, second }.into());
    }
    let grads = tape.backward(loss)?;
    store.zero_grad();
    tape.accumulate_into(&grads, store);
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.clone()).collect();
    store.zero_grad();

    let ids: Vec<_> = store.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    let mut entries = Vec::new();
    for id in ids {
        let n = store.get(id).value.numel();
        let mut entry = GradCheckEntry {
            name: store.get(id).name.clone(),
            checked: 0,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in sample_indices(n, cfg.max_per_param) {
            let orig = store.get(id).value.data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + cfg.eps;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig - cfg.eps;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic[id.index()][idx];
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (a - numeric).abs() / denom;
            entry.checked += 1;
            if rel > entry.max_rel_err || entry.checked == 1 {
                entry.max_rel_err = rel;
                entry.worst_index = idx;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        entries.push(entry);
    }
    let max_rel_err = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { entries, max_rel_err, tol: cfg.tol })
}
