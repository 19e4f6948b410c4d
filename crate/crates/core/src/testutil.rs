//! Finite-difference gradient oracle shared by unit tests.

use crate::numkernel::{ParamStore, Tape, Var};
use crate::Result;

/// Max relative error between the tape gradient and central differences for every scalar in `store`.
pub fn max_fd_rel_error(
    store: &mut ParamStore,
    step: f64,
    build: impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
) -> f64 {
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store).unwrap();
    tape.backward(loss, store).unwrap();
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, t)| t.grad().unwrap().to_vec()).collect();

    let eval = |store: &ParamStore| {
        let mut tape = Tape::inference();
        let l = build(&mut tape, store).unwrap();
        tape.value(l).item()
    };
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for k in 0..store.get(id).numel() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + step;
            let up = eval(store);
            store.get_mut(id).data_mut()[k] = orig - step;
            let down = eval(store);
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(rel_error(analytic[pi][k], numeric));
        }
    }
    worst
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
