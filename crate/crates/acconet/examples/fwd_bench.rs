//! Rough forward-pass timing at the micro schedule (used to budget the
//! finite-difference suites).

use acconet::graph::Graph;
use acconet::loss::{total_loss, LossMode};
use acconet::model::{AccoNet, Variant};
use acconet::params::{Initializer, ParamStore};
use acconet::schedule::ShapeSchedule;
use ndarray::{ArrayD, IxDyn};

fn main() {
    let sched = ShapeSchedule::micro();
    let mut store = ParamStore::<f64>::new();
    let mut init = Initializer::from_seed(7);
    let net = AccoNet::new(&mut store, &mut init, sched, Variant::Full.flags()).unwrap();
    let n: usize = store
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.value.len())
        .sum();
    println!("trainable elements: {n}");
    for batch in [1usize, 2] {
        let images = ArrayD::from_shape_fn(IxDyn(&[batch, 3, 64, 64]), |ix| {
            ((ix[2] * 7 + ix[3]) % 13) as f64 / 13.0
        });
        let target = ArrayD::from_elem(IxDyn(&[batch, 1, 64, 64]), 1.0f64);
        let mut g = Graph::new(false);
        let out = net.forward(&mut g, &store, images.clone(), true).unwrap();
        let _ = total_loss(&mut g, &out.decoder.maps, &target, LossMode::Both).unwrap();
        let t0 = std::time::Instant::now();
        let reps = 5;
        for _ in 0..reps {
            let mut g = Graph::new(false);
            let out = net.forward(&mut g, &store, images.clone(), true).unwrap();
            let _ = total_loss(&mut g, &out.decoder.maps, &target, LossMode::Both).unwrap();
        }
        println!("batch {batch}: {:?} per forward+loss (f64)", t0.elapsed() / reps);
    }
}
