use mcl_core::model::{MclModel, MeasurementPath};
use mcl_core::nn::{parse_layers, softmax_cross_entropy};
use mcl_core::rng::StreamRng;
use mcl_core::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn tiny_model(seed: u64) -> MclModel {
    let layers = parse_layers("conv:3:3:1:1,relu,gap,dense:2").unwrap();
    MclModel::random(&[6, 6, 2], &[3, 3, 1], &layers, 2, seed).unwrap()
}

fn loss(model: &MclModel, y: &Tensor, label: usize, path: MeasurementPath<'_>) -> f64 {
    let (scores, _) = model.forward(y, path).unwrap();
    softmax_cross_entropy(&scores, label).0
}

/// Compares every analytic gradient entry with a central difference and
/// returns the worst relative error together with its parameter id.
fn check(model: &MclModel, y: &Tensor, label: usize, path: MeasurementPath<'_>) -> (f64, String) {
    let (_, _, grads) = model.sample_gradients(y, label, path, true).unwrap();
    let params = model.parameters();
    assert_eq!(grads.len(), params.len());
    let mut worst = (0.0, String::new());
    let mut probe = model.clone();
    for (p, (param, g)) in params.iter().zip(&grads).enumerate() {
        assert_eq!(g.len(), param.shape.iter().product::<usize>(), "{}", param.id);
        for j in 0..g.len() {
            let orig = probe.param_values()[p][j];
            probe.param_values_mut()[p][j] = orig + H;
            let up = loss(&probe, y, label, path);
            probe.param_values_mut()[p][j] = orig - H;
            let down = loss(&probe, y, label, path);
            probe.param_values_mut()[p][j] = orig;
            let fd = (up - down) / (2.0 * H);
            if g[j].abs() > 1e-6 || fd.abs() > 1e-6 {
                let rel = (g[j] - fd).abs() / g[j].abs().max(fd.abs());
                if rel > worst.0 {
                    worst = (rel, format!("{}[{j}] analytic {} numeric {}", param.id, g[j], fd));
                }
            }
        }
    }
    worst
}

fn sample(seed: u64) -> Tensor {
    let mut rng = StreamRng::new(seed, 42);
    Tensor::from_fn(&[6, 6, 2], |_| rng.uniform(0.0, 1.0)).unwrap()
}

#[test]
fn unmasked_gradients_match_finite_differences() {
    for seed in 0..3 {
        let (err, at) = check(&tiny_model(seed), &sample(seed), (seed % 2) as usize, MeasurementPath::Full);
        assert!(err < TOL, "seed {seed}: {err} at {at}");
    }
}

#[test]
fn masked_gradients_match_finite_differences() {
    for (seed, dims) in [(5u64, [2usize, 3, 1]), (6, [1, 2, 1]), (7, [3, 3, 1])] {
        let (err, at) = check(&tiny_model(seed), &sample(seed), 1, MeasurementPath::Masked(&dims));
        assert!(err < TOL, "dims {dims:?}: {err} at {at}");
    }
}

#[test]
fn masked_and_deployed_paths_give_identical_gradients() {
    let model = tiny_model(9);
    let y = sample(9);
    let dims = [2usize, 1, 1];
    let (l1, _, g1) = model.sample_gradients(&y, 0, MeasurementPath::Masked(&dims), true).unwrap();
    let (l2, _, g2) = model.sample_gradients(&y, 0, MeasurementPath::Deployed(&dims), true).unwrap();
    assert_eq!(l1, l2);
    for (a, b) in g1.iter().zip(&g2) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}

#[test]
fn masked_out_measurements_receive_no_sensing_gradient() {
    let model = tiny_model(4);
    let dims = [1usize, 2, 1];
    let (_, _, grads) = model.sample_gradients(&sample(4), 1, MeasurementPath::Masked(&dims), true).unwrap();
    // Rows of Φ_1 beyond the kept prefix only feed zeroed measurements.
    let phi1 = &grads[0];
    let cols = 6;
    for r in 1..3 {
        assert!(phi1[r * cols..(r + 1) * cols].iter().all(|v| *v == 0.0));
    }
}
