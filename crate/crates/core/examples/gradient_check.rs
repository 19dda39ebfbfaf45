//! Builds a small LSTM dueling Q-network, runs one sequence through it and
//! compares backpropagated gradients with central finite differences.
//!
//! cargo run --release --example gradient_check

use rand::Rng;

use spectrum_sim::qnet::{
    backward, forward, loss, multiply_count, LstmState, NetShape, QNetworkParams, Sequence,
    TrainingBatch, TENSOR_NAMES,
};
use spectrum_sim::rng::{stream, Stream};

fn main() -> spectrum_sim::Result<()> {
    let shape = NetShape::for_channels(3, 5, 4, 4);
    let params = QNetworkParams::random(shape, &mut stream(2, Stream::Init(0)))?;
    let mut rng = stream(2, Stream::Policy(0));
    let len = 6;
    let seq = Sequence {
        inputs: (0..len)
            .map(|_| {
                (0..shape.inputs)
                    .map(|_| rng.random_range(0.0..1.0))
                    .collect()
            })
            .collect(),
        targets: (0..len)
            .map(|_| {
                (0..shape.actions)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect(),
        actions: (0..len)
            .map(|_| rng.random_range(0..shape.actions))
            .collect(),
    };

    let mut state = LstmState::zeros(shape.hidden);
    for x in &seq.inputs {
        let (q, next) = forward(&params, x, &state)?;
        state = next;
        let shown: Vec<String> = q.iter().map(|v| format!("{v:+.3}")).collect();
        println!("Q = [{}]", shown.join(" "));
    }

    let batch = TrainingBatch {
        sequences: vec![seq],
    };
    let before = multiply_count();
    let grads = backward(&params, &batch)?;
    println!(
        "{} multiplies for one training step on {len} slots",
        multiply_count() - before
    );

    let h = 1e-5;
    let mut offset = 0;
    for (name, tensor) in TENSOR_NAMES.iter().zip(grads.tensors()) {
        let mut worst: f64 = 0.0;
        for (j, &g) in tensor.data.iter().enumerate() {
            let nudge = |delta: f64| {
                let mut p = params.clone();
                *p.values_mut().nth(offset + j).unwrap() += delta;
                loss(&p, &batch).unwrap()
            };
            let fd = (nudge(h) - nudge(-h)) / (2.0 * h);
            let scale = g.abs().max(fd.abs()).max(1e-7);
            worst = worst.max((g - fd).abs() / scale);
        }
        offset += tensor.data.len();
        println!(
            "{name:20} {:4} weights, max relative error {worst:.1e}",
            tensor.data.len()
        );
    }
    Ok(())
}
