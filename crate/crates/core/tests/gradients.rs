mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..24 {
        let inst = common::instance(i, &mut rng);
        let (err, name) = inst.gradient_error();
        assert!(err < 1e-4, "{}: relative error {err:.3e} in {name}", inst.label);
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..6 {
        let inst = common::instance(i, &mut rng);
        for (name, g) in inst.analytic() {
            assert!(g.iter().all(|x| x.is_finite()), "{name}");
        }
    }
}
