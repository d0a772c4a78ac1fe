//! Times individual tensor ops at training shapes.
//! Run: cargo run -p eulernet-core --example op_profile --release

use std::time::Instant;

use eulernet_core::tensor::Tensor;

fn time(label: &str, mut f: impl FnMut()) {
    let reps = 3;
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{label}: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}

fn randn(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|i| ((i * 2654435761) % 1000) as f32 / 1000.0 - 0.5).collect();
    Tensor::from_vec(data, shape).unwrap()
}

fn param(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|i| ((i * 40503) % 997) as f32 / 997.0 - 0.5).collect();
    Tensor::param_from_vec(data, shape).unwrap()
}

fn main() {
    let x256 = randn(&[4, 16, 256, 256]);
    let w = param(&[16, 16, 3, 3]);
    let b = param(&[16]);

    time("conv 16->16 @256^2 fwd (no grad input)", || {
        let _ = x256.conv2d_3x3(&w, &b).unwrap();
    });

    let xp256 = param(&[4, 16, 256, 256]);
    time("conv 16->16 @256^2 fwd+bwd(all)", || {
        let y = xp256.conv2d_3x3(&w, &b).unwrap();
        y.sum().backward().unwrap();
    });

    let stem_in = randn(&[4, 3, 256, 256]);
    let sw = param(&[16, 3, 3, 3]);
    let sb = param(&[16]);
    time("stem conv 3->16 @256^2 fwd+bwd(w only)", || {
        let y = stem_in.conv2d_3x3(&sw, &sb).unwrap();
        y.sum().backward().unwrap();
    });

    time("relu @4x16x256^2 fwd", || {
        let _ = x256.relu();
    });
    let gate = randn(&[4, 1, 256, 256]);
    time("mul_gate @4x16x256^2 fwd", || {
        let _ = x256.mul_gate(&gate).unwrap();
    });
    time("max_pool2 @4x16x256^2 fwd", || {
        let _ = x256.max_pool2().unwrap();
    });
    time("sum @4x16x256^2", || {
        let _ = x256.sum();
    });

    // Attention block at level-1 shape.
    let sq_w = param(&[1, 16, 3, 3]);
    let sq_b = param(&[1]);
    let filt = eulernet_core::diirf::BiquadParams::<f32>::from_values(1.0, 0.02, -0.01, 0.03, 0.01);
    let layer = eulernet_core::fcam::FcamLayer {
        squash_weight: sq_w,
        squash_bias: sq_b,
        filter: filt,
    };
    time("fcam @4x16x256^2 fwd", || {
        let _ = eulernet_core::fcam::fcam_forward(&x256, &layer).unwrap();
    });
    time("fcam @4x16x256^2 fwd+bwd", || {
        let y = eulernet_core::fcam::fcam_forward(&xp256, &layer).unwrap();
        y.sum().backward().unwrap();
    });
}
