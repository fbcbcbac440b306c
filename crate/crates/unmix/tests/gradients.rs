//! Central finite-difference validation of every analytic gradient the
//! optimizer consumes: the structural energy (w.r.t. latents and log
//! length-scale), the observation loss (w.r.t. every map parameter and the
//! latents), the separation penalty, and finally the assembled joint
//! gradient of the total objective for both map kinds.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unmix::{
    build_rbf_covariance, cholesky, correlation_matrix, generator_backward, generator_forward,
    gp_energy, gp_energy_grad_latent, gp_energy_grad_logscale, normalize_columns,
    normalized_index, objective_gradients, observation_loss, separation_grad, separation_loss,
    total_loss, GeneratorParams, GeneratorShape, KernelSpec, TrainConfig, TrainState,
};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Relative disagreement with an absolute floor of 1, so that O(1)-and-larger
/// gradients are held to a relative standard and near-zero ones to an
/// absolute one.
fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1.0)
}

fn seeded_matrix(t: usize, n: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((t, n), |_| rng.gen_range(-scale..=scale))
}

#[test]
fn gp_energy_gradients_match_finite_differences() {
    let t = 24;
    let grid = normalized_index(t).expect("grid");
    let spec = KernelSpec::new(1.0, 1e-5, 0.3).expect("spec");
    let k = build_rbf_covariance(&grid, &spec);
    let factor = cholesky(&k).expect("factor");
    let s = seeded_matrix(t, 1, 1.5, 41).column(0).to_owned();

    // ∂E/∂s against a wiggle of each sample.
    let grad_s = gp_energy_grad_latent(&factor, s.view()).expect("latent grad");
    for i in 0..t {
        let mut plus = s.clone();
        let mut minus = s.clone();
        plus[i] += H;
        minus[i] -= H;
        let fd = (gp_energy(plus.view(), &factor).unwrap()
            - gp_energy(minus.view(), &factor).unwrap())
            / (2.0 * H);
        assert!(
            rel_err(grad_s[i], fd) <= TOL,
            "sample {i}: analytic {} vs fd {fd}",
            grad_s[i]
        );
    }

    // ∂E/∂η against a wiggle of the log length-scale (fresh factorization
    // on each side).
    let grad_eta = gp_energy_grad_logscale(&grid, &spec, s.view(), &factor).expect("eta grad");
    let energy_at = |eta: f64| -> f64 {
        let spec_eta = KernelSpec::new(1.0, 1e-5, eta.exp()).expect("spec");
        let factor_eta = cholesky(&build_rbf_covariance(&grid, &spec_eta)).expect("factor");
        gp_energy(s.view(), &factor_eta).expect("energy")
    };
    let eta0 = 0.3f64.ln();
    let fd = (energy_at(eta0 + H) - energy_at(eta0 - H)) / (2.0 * H);
    assert!(rel_err(grad_eta, fd) <= TOL, "analytic {grad_eta} vs fd {fd}");
}

#[test]
fn observation_gradients_match_finite_differences() {
    let t = 24;
    let n = 2;
    let m = 3;
    let nu = 0.1;
    let latents = seeded_matrix(t, n, 1.0, 42);
    let y = seeded_matrix(t, m, 1.0, 43);
    let shapes = [
        GeneratorShape::Linear { use_bias: true },
        GeneratorShape::Mlp { hidden: 4 },
    ];
    for shape in shapes {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let params = GeneratorParams::init(&shape, n, m, &mut rng).expect("params");
        let loss_at = |params: &GeneratorParams, latents: &Array2<f64>| -> f64 {
            let predicted = generator_forward(params, latents).expect("forward");
            observation_loss(&y, &predicted, nu).expect("loss")
        };
        let (grad_params, grad_latents, _) =
            generator_backward(&params, &latents, &y, nu).expect("backward");

        // Every map parameter, tensor by tensor.
        let analytic: Vec<Vec<f64>> =
            grad_params.tensors().into_iter().map(<[f64]>::to_vec).collect();
        for (ti, grads) in analytic.iter().enumerate() {
            for (k, &grad) in grads.iter().enumerate() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti][k] += H;
                let mut minus = params.clone();
                minus.tensors_mut()[ti][k] -= H;
                let fd = (loss_at(&plus, &latents) - loss_at(&minus, &latents)) / (2.0 * H);
                assert!(
                    rel_err(grad, fd) <= TOL,
                    "{shape:?} tensor {ti} entry {k}: analytic {grad} vs fd {fd}"
                );
            }
        }

        // Every latent sample.
        for i in 0..t {
            for j in 0..n {
                let mut plus = latents.clone();
                plus[[i, j]] += H;
                let mut minus = latents.clone();
                minus[[i, j]] -= H;
                let fd = (loss_at(&params, &plus) - loss_at(&params, &minus)) / (2.0 * H);
                assert!(
                    rel_err(grad_latents[[i, j]], fd) <= TOL,
                    "{shape:?} latent [{i},{j}]: analytic {} vs fd {fd}",
                    grad_latents[[i, j]]
                );
            }
        }
    }
}

#[test]
fn separation_gradient_matches_finite_differences() {
    let t = 24;
    let n = 3;
    let eps = 1e-8;
    let latents = seeded_matrix(t, n, 1.0, 45);
    let loss_at = |s: &Array2<f64>| -> f64 {
        let standardized = normalize_columns(s.view(), eps).expect("normalize");
        separation_loss(&correlation_matrix(standardized.view()).expect("corr"))
    };
    let grad = separation_grad(latents.view(), eps).expect("grad");
    for i in 0..t {
        for j in 0..n {
            let mut plus = latents.clone();
            plus[[i, j]] += H;
            let mut minus = latents.clone();
            minus[[i, j]] -= H;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * H);
            assert!(
                rel_err(grad[[i, j]], fd) <= TOL,
                "latent [{i},{j}]: analytic {} vs fd {fd}",
                grad[[i, j]]
            );
        }
    }
}

/// The assembled joint gradient over (latents, map parameters, log
/// length-scales) — exactly what the optimizer consumes — against finite
/// differences of the total objective.
fn check_joint_gradient(generator: GeneratorShape) {
    let t = 24;
    let m = 3;
    let mut config = TrainConfig::defaults(2);
    config.generator = generator;
    let y = seeded_matrix(t, m, 1.0, 46);
    let mut state = TrainState::init(&config, t, m).expect("state");
    // Move off the small-σ initialization so every term contributes.
    state.latents = seeded_matrix(t, 2, 1.0, 47);

    let (_, grads) = objective_gradients(&state, &y, &config).expect("gradients");
    let loss_of = |state: &TrainState| -> f64 {
        total_loss(state, &y, &config).expect("loss").0
    };

    for i in 0..t {
        for j in 0..2 {
            let mut plus = state.clone();
            plus.latents[[i, j]] += H;
            let mut minus = state.clone();
            minus.latents[[i, j]] -= H;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * H);
            assert!(
                rel_err(grads.latents[[i, j]], fd) <= TOL,
                "latent [{i},{j}]: analytic {} vs fd {fd}",
                grads.latents[[i, j]]
            );
        }
    }
    let analytic: Vec<Vec<f64>> =
        grads.generator.tensors().into_iter().map(<[f64]>::to_vec).collect();
    for (ti, tensor) in analytic.iter().enumerate() {
        for (k, &grad) in tensor.iter().enumerate() {
            let mut plus = state.clone();
            plus.generator.tensors_mut()[ti][k] += H;
            let mut minus = state.clone();
            minus.generator.tensors_mut()[ti][k] -= H;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * H);
            assert!(
                rel_err(grad, fd) <= TOL,
                "map tensor {ti} entry {k}: analytic {grad} vs fd {fd}"
            );
        }
    }
    for j in 0..2 {
        let mut plus = state.clone();
        plus.eta[j] += H;
        let mut minus = state.clone();
        minus.eta[j] -= H;
        let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * H);
        assert!(
            rel_err(grads.eta[j], fd) <= TOL,
            "eta {j}: analytic {} vs fd {fd}",
            grads.eta[j]
        );
    }
}

#[test]
fn joint_objective_gradient_matches_finite_differences_linear() {
    check_joint_gradient(GeneratorShape::Linear { use_bias: false });
}

#[test]
fn joint_objective_gradient_matches_finite_differences_mlp() {
    check_joint_gradient(GeneratorShape::Mlp { hidden: 4 });
}
