mod oracles;

use ndarray::Array2;
use oracles::{central_diff, finite_diff_grad, relative_error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ran_core::corpus::OneHotSequence;
use ran_core::embed::TiledEmbedding;
use ran_core::seqmodel::{backward, ModelDims, SequenceModel};

fn random_case(seed: u64, tiled: bool) -> (SequenceModel, TiledEmbedding, OneHotSequence) {
    let dims = ModelDims::tiny();
    let model = SequenceModel::new(dims, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut rows = Array2::from_shape_fn((dims.seq_len, dims.input), |_| rng.random_range(-1.0..1.0));
    if tiled {
        let first = rows.row(0).to_owned();
        rows.rows_mut().into_iter().for_each(|mut r| r.assign(&first));
    }
    let mut labels = Array2::zeros((dims.seq_len, dims.classes));
    for t in 0..dims.seq_len {
        labels[(t, rng.random_range(0..dims.classes))] = 1.0;
    }
    (model, TiledEmbedding { rows }, OneHotSequence { matrix: labels })
}

const STEP: f64 = 8e-3;

fn max_error(seed: u64, tiled: bool, lambda: f64) -> (f64, String) {
    let (model, r, y) = random_case(seed, tiled);
    let analytic = backward(&model, &r, &y, lambda).unwrap();
    let numeric = finite_diff_grad(&model, &r, &y, lambda, STEP);
    let mut worst = (0.0, String::new());
    for ((name, a), n) in analytic.tensors().into_iter().zip(&numeric) {
        for ((idx, x), z) in a.indexed_iter().zip(n.iter()) {
            let e = relative_error(*z, *x);
            if e > worst.0 {
                worst = (e, format!("{name}{idx:?}: analytic {x:e} numeric {z:e}"));
            }
        }
    }
    worst
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for seed in 0..5 {
        for tiled in [true, false] {
            let (e, at) = max_error(seed, tiled, 0.1);
            assert!(e < 1e-4, "seed {seed} tiled {tiled}: {e:e} at {at}");
        }
    }
}

#[test]
fn central_difference_of_square() {
    assert!((central_diff(|x| x * x, 3.0, 1e-5) - 6.0).abs() < 1e-8);
    assert_eq!(central_diff(|_| 2.5, 3.0, 1e-5), 0.0);
}
