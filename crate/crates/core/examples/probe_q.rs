// Inspect a trained solo checkpoint: does Q rank actions sensibly, and
// where does the actor point, for a hand-built state?
use soco::cli::checkpoint::{load_checkpoint, mlp_from_map};
use soco::numerics::{OutputActivation, Tensor};

fn main() {
    let path = std::env::args().nth(1).unwrap();
    let (tensors, _) = load_checkpoint(std::path::Path::new(&path)).unwrap();
    let actor = mlp_from_map(&tensors, "agent0.actor", OutputActivation::Tanh).unwrap();
    let q1 = mlp_from_map(&tensors, "critic1", OutputActivation::Identity).unwrap();

    // Agent at origin, still; landmark 0.8 east.
    // obs = [vel(2), pos(2), rel landmark(2)]; state = [pos, vel, landmark]
    let obs = vec![0.0, 0.0, 0.0, 0.0, 0.8, 0.0];
    let state = vec![0.0, 0.0, 0.0, 0.0, 0.8, 0.0];

    let o = Tensor::from_vec(&[1, 6], obs.clone()).unwrap();
    let pi = actor.forward(&o).unwrap();
    println!("actor action: {:?}", pi.as_slice());

    for (label, a) in [
        ("east  (+1, 0)", [1.0, 0.0]),
        ("west  (-1, 0)", [-1.0, 0.0]),
        ("north (0, +1)", [0.0, 1.0]),
        ("south (0, -1)", [0.0, -1.0]),
        ("zero  (0, 0)", [0.0, 0.0]),
    ] {
        let mut q_in = state.clone();
        q_in.extend_from_slice(&a);
        let q = q1.forward(&Tensor::from_vec(&[1, 8], q_in).unwrap()).unwrap();
        println!("Q({label}) = {:.4}", q.as_slice()[0]);
    }
}
