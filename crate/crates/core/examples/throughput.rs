//! Measures train-step throughput of a region network on random crops.
//!
//! `cargo run --release -p gestalt-core --example throughput -- 8,8,16,16,24,24,32,32,32,32 16`

use std::time::Instant;

use gestalt_core::gestaltnet::{ArchitectureDescriptor, ArchitectureOptions, Network};
use gestalt_core::nn::{batch_softmax_cross_entropy, Tensor4};
use gestalt_core::rng::stream;
use rand::Rng;

fn main() {
    let mut args = std::env::args().skip(1);
    let channels: Vec<usize> = args
        .next()
        .unwrap_or_else(|| "32,32,64,64,96,96,128,128,160,160".into())
        .split(',')
        .map(|c| c.parse().expect("channel count"))
        .collect();
    let batch: usize = args.next().map_or(16, |b| b.parse().expect("batch size"));
    let options = ArchitectureOptions {
        channels: channels.try_into().expect("ten channel counts"),
        ..Default::default()
    };
    let arch = ArchitectureDescriptor::gestalt(&options, 10).unwrap();
    let mut net = Network::<f32>::new(arch, 1).unwrap();
    let mut rng = stream(0, &[]);
    let side = options.input_side;
    let input = Tensor4::from_vec(
        [batch, 1, side, side],
        (0..batch * side * side).map(|_| rng.random::<f32>()).collect(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..batch).map(|i| i % 10).collect();
    let steps = 5;
    let start = Instant::now();
    for _ in 0..steps {
        let (logits, trace) = net.forward_train(&input, &mut rng).unwrap();
        let (_, g) = batch_softmax_cross_entropy(&logits, &labels, None).unwrap();
        let _ = net.backward(trace, &g).unwrap();
    }
    let per_image = start.elapsed().as_secs_f64() / (steps * batch) as f64;
    println!("{:.2} ms per image (train step)", per_image * 1e3);
    let start = Instant::now();
    let _ = net.forward_infer(&input).unwrap();
    println!(
        "{:.2} ms per image (inference)",
        start.elapsed().as_secs_f64() / batch as f64 * 1e3
    );
}
