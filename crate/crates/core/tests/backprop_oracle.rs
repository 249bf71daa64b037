mod common;

use activation_hue::seed;
use activation_hue::trainer::{NetShape, TinyNet};
use common::{backprop_check, finite_difference_grad, random_image, rel_err};
use rand::Rng;

#[test]
fn parameter_gradients_match_finite_differences() {
    for config in 0..24 {
        let e = backprop_check(config);
        assert!(e < 1e-4, "config {config}: relative error {e}");
    }
}

#[test]
fn arbitrary_upstream_gradients_match_finite_differences() {
    let mut rng = seed::rng(99, 3000);
    for trial in 0..6 {
        let shape = NetShape { width: 5 + trial % 2, height: 4, in_channels: 2, classes: 3, hue_hidden: None };
        let net = TinyNet::new(shape, &mut rng).unwrap();
        let image = random_image(&mut rng, shape.width, 4, 2);
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let linear = |n: &TinyNet| {
            let o = n.forward(&image).unwrap();
            o.logits.iter().zip(&a).map(|(l, w)| l * w).sum::<f64>() + o.hue[0] * b[0] + o.hue[1] * b[1]
        };
        let out = net.forward(&image).unwrap();
        let analytic = net.backward(&out.cache, &a, b).unwrap();
        let e = rel_err(&analytic, &finite_difference_grad(&net, 1e-5, linear));
        assert!(e < 1e-4, "trial {trial}: {e}");
    }
}
