use msms_core::optim::*;
use msms_core::{Grads, ParamStore, Session, Tensor};

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add("x", Tensor::scalar(v));
    s
}

fn grads_of(store: &ParamStore<f64>, g: f64) -> Grads<f64> {
    let mut sess = Session::new(store, true, 0);
    let x = sess.param(store.find("x").unwrap());
    let y = sess.graph.scale(x, g);
    let mut grads = Grads::new(store);
    sess.backward_into(y, &mut grads).unwrap();
    grads
}

#[test]
fn zero_gradient_leaves_parameters_and_moments() {
    let mut store = scalar_store(0.7);
    let mut adam = AdamState::new(&store, AdamConfig { lr: 0.1, ..Default::default() });
    let g = grads_of(&store, 0.0);
    adam.step(&mut store, &g).unwrap();
    assert_eq!(store.get(store.find("x").unwrap()).data(), &[0.7]);
    assert_eq!(adam.first_moment(0), &[0.0]);
    assert_eq!(adam.second_moment(0), &[0.0]);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn first_update_has_magnitude_lr() {
    // m̂ = 1, v̂ = 1 after bias correction, so the step is lr / (1 + eps).
    let mut store = scalar_store(0.0);
    let mut adam = AdamState::new(&store, AdamConfig { lr: 0.1, ..Default::default() });
    let g = grads_of(&store, 1.0);
    adam.step(&mut store, &g).unwrap();
    let x = store.get(store.find("x").unwrap()).data()[0];
    assert!((x + 0.1).abs() < 1e-9, "x = {x}");
}

#[test]
fn step_counter_increments_by_one() {
    let mut store = scalar_store(0.0);
    let mut adam = AdamState::new(&store, AdamConfig::default());
    for k in 1..=5 {
        let g = grads_of(&store, 1.0);
        adam.step(&mut store, &g).unwrap();
        assert_eq!(adam.step_count(), k);
    }
}

#[test]
fn schedule_warms_up_then_decays() {
    let s = LrSchedule::for_run(1e-3, 1000);
    assert_eq!(s.warmup, 100);
    assert!((s.lr(50) - 5e-4).abs() < 1e-15);
    assert!((s.lr(100) - 1e-3).abs() < 1e-15);
    assert!((s.lr(400) - 5e-4).abs() < 1e-15);
}
