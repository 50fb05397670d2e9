use std::collections::HashMap;

use mcl_core::mask::sample_mask_dims;
use mcl_core::rng::{streams, StreamRng};
use mcl_core::tensor::{elementwise_mul, subtensor_prefix, zero_pad_to};
use mcl_core::{mask::materialize_mask, MaskSpec, Tensor};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn mask_sampling_is_uniform_over_the_spec() {
    let spec = MaskSpec::new(vec![4, 4, 1], vec![15, 15, 2]).unwrap();
    let cells = spec.enumerate();
    assert_eq!(cells.len(), 12 * 12 * 2);
    let mut rng = StreamRng::new(2024, streams::MASK);
    let draws = 12_000;
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for _ in 0..draws {
        let d = sample_mask_dims(&spec, &mut rng);
        assert!(spec.contains(&d));
        *counts.entry(d.to_vec()).or_default() += 1;
    }
    let expected = draws as f64 / cells.len() as f64;
    let stat: f64 = cells
        .iter()
        .map(|c| {
            let o = *counts.get(c.as_slice()).unwrap_or(&0) as f64;
            (o - expected).powi(2) / expected
        })
        .sum();
    let dist = ChiSquared::new((cells.len() - 1) as f64).unwrap();
    let p = 1.0 - dist.cdf(stat);
    assert!(p > 0.01, "chi-square {stat}, p = {p}");
}

#[test]
fn mask_equals_pad_of_prefix_for_random_tensors() {
    let mut rng = StreamRng::new(3, 77);
    let shape = [6usize, 4, 3];
    let spec = MaskSpec::new(vec![1, 1, 1], shape.to_vec()).unwrap();
    for _ in 0..200 {
        let t = Tensor::from_fn(&shape, |_| rng.normal(0.0, 2.0)).unwrap();
        let dims = sample_mask_dims(&spec, &mut rng);
        let masked = elementwise_mul(&t, &materialize_mask(&dims, &shape).unwrap()).unwrap();
        let padded = zero_pad_to(&subtensor_prefix(&t, &dims).unwrap(), &shape).unwrap();
        assert_eq!(masked, padded);
    }
}
