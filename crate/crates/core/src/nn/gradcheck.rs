use super::{ParamStore, Tape, Tensor, Var};

/// Outcome of comparing analytic and finite-difference gradients for one
/// parameter.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub rel_error: f64,
    pub checked: usize,
}

/// Norm-wise relative error `|a - n| / (|a| + |n|)`, zero when both vanish.
/// Gradients whose combined norm is below this are compared absolutely, so a
/// parameter with an exactly vanishing gradient is not judged on roundoff.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    if diff == 0.0 { 0.0 } else { diff / (na + nn).max(GRAD_FLOOR) }
}

/// Central-difference check of every parameter in `store`. `build` records a
/// scalar loss on a fresh tape. At most `max_entries` scalars per parameter
/// are perturbed, spread evenly over the tensor.
pub fn check_gradients<F>(store: &mut ParamStore, eps: f64, max_entries: usize, build: F) -> Vec<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    check_gradients_where(store, eps, max_entries, |_| true, build)
}

/// Like [`check_gradients`] but only for parameters whose name passes
/// `select`.
pub fn check_gradients_where<F, S>(
    store: &mut ParamStore,
    eps: f64,
    max_entries: usize,
    select: S,
    build: F,
) -> Vec<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
    S: Fn(&str) -> bool,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    let analytic = tape.backward(loss).for_params(&tape, store);
    let eval = |store: &ParamStore| {
        let mut t = Tape::new();
        let l = build(&mut t, store);
        t.value(l).item()
    };

    let ids: Vec<_> = store.ids().filter(|&id| select(store.name(id))).collect();
    let mut out = Vec::new();
    for id in ids {
        let n = store.get(id).len();
        let stride = n.div_ceil(max_entries.max(1)).max(1);
        let mut a = Vec::new();
        let mut num = Vec::new();
        for j in (0..n).step_by(stride) {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + eps;
            let up = eval(store);
            store.get_mut(id).data_mut()[j] = orig - eps;
            let down = eval(store);
            store.get_mut(id).data_mut()[j] = orig;
            num.push((up - down) / (2.0 * eps));
            a.push(analytic[id.index()].data()[j]);
        }
        out.push(GradCheck {
            name: store.name(id).to_string(),
            rel_error: relative_error(&a, &num),
            checked: a.len(),
        });
    }
    out
}

/// Convenience for tests: a store holding the given named tensors.
pub fn store_of(tensors: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in tensors {
        s.add(name, t);
    }
    s
}
