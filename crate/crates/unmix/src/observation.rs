//! Observation map from latent sources to observed channels: a linear layer
//! `Ŷ = S·Wᵀ (+ 1·bᵀ)` or a two-hidden-layer tanh MLP, with the quadratic
//! data loss `L = ‖Y − Ŷ‖²_F / (2·ν_y)` and hand-derived backpropagation for
//! both the map parameters and the latent matrix.
//!
//! Rows are time samples, so every map is applied row-locally; matrices are
//! stored with layer convention `weight: out×in`, applied as `x·weightᵀ`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture choice for the observation map, without its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorShape {
    /// Single linear layer, optionally with a channel bias.
    Linear { use_bias: bool },
    /// Two tanh hidden layers of width `hidden`, linear output layer.
    Mlp { hidden: usize },
}

/// Parameters of the observation map.
///
/// The linear bias is `None` when disabled; a disabled bias is never read and
/// never receives gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
// Variant sizes differ, but only a handful of these ever exist at once and
// boxing would complicate the flat tensor views used by the optimizer.
#[allow(clippy::large_enum_variant)]
pub enum GeneratorParams {
    Linear {
        /// `m×n`: observed channels by sources.
        weight: Array2<f64>,
        /// Per-channel offset, length `m`; `None` when the map has no bias.
        bias: Option<Array1<f64>>,
    },
    Mlp {
        /// `h×n` first layer.
        w1: Array2<f64>,
        b1: Array1<f64>,
        /// `h×h` second layer.
        w2: Array2<f64>,
        b2: Array1<f64>,
        /// `m×h` output layer.
        w3: Array2<f64>,
        b3: Array1<f64>,
    },
}

impl GeneratorParams {
    /// Draw initial parameters: weights Gaussian with standard deviation
    /// `1/√fan_in`, biases zero. Tensors are filled row-major in a fixed
    /// order (`w1, w2, w3` for the MLP), so one seeded generator reproduces
    /// the same map.
    pub fn init<R: Rng>(shape: &GeneratorShape, n_sources: usize, n_channels: usize, rng: &mut R) -> Result<Self> {
        if n_sources == 0 || n_channels == 0 {
            return Err(Error::InvalidArgument(
                "observation map needs at least one source and one channel".into(),
            ));
        }
        match *shape {
            GeneratorShape::Linear { use_bias } => {
                let weight = sample_gaussian(rng, n_channels, n_sources)?;
                let bias = use_bias.then(|| Array1::zeros(n_channels));
                Ok(Self::Linear { weight, bias })
            }
            GeneratorShape::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidArgument("mlp hidden width must be positive".into()));
                }
                Ok(Self::Mlp {
                    w1: sample_gaussian(rng, hidden, n_sources)?,
                    b1: Array1::zeros(hidden),
                    w2: sample_gaussian(rng, hidden, hidden)?,
                    b2: Array1::zeros(hidden),
                    w3: sample_gaussian(rng, n_channels, hidden)?,
                    b3: Array1::zeros(n_channels),
                })
            }
        }
    }

    /// Number of latent sources the map consumes.
    pub fn input_dim(&self) -> usize {
        match self {
            Self::Linear { weight, .. } => weight.ncols(),
            Self::Mlp { w1, .. } => w1.ncols(),
        }
    }

    /// Number of observed channels the map produces.
    pub fn output_dim(&self) -> usize {
        match self {
            Self::Linear { weight, .. } => weight.nrows(),
            Self::Mlp { w3, .. } => w3.nrows(),
        }
    }

    /// The architecture of this parameter set.
    pub fn shape(&self) -> GeneratorShape {
        match self {
            Self::Linear { bias, .. } => GeneratorShape::Linear { use_bias: bias.is_some() },
            Self::Mlp { w1, .. } => GeneratorShape::Mlp { hidden: w1.nrows() },
        }
    }

    /// Zero-valued parameters with the same shapes as `self` — the identity
    /// element for gradient accumulation and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        match self {
            Self::Linear { weight, bias } => Self::Linear {
                weight: Array2::zeros(weight.raw_dim()),
                bias: bias.as_ref().map(|b| Array1::zeros(b.raw_dim())),
            },
            Self::Mlp { w1, b1, w2, b2, w3, b3 } => Self::Mlp {
                w1: Array2::zeros(w1.raw_dim()),
                b1: Array1::zeros(b1.raw_dim()),
                w2: Array2::zeros(w2.raw_dim()),
                b2: Array1::zeros(b2.raw_dim()),
                w3: Array2::zeros(w3.raw_dim()),
                b3: Array1::zeros(b3.raw_dim()),
            },
        }
    }

    /// Flat immutable views over all parameter tensors, in a fixed order
    /// (linear: weight, bias-if-present; mlp: w1, b1, w2, b2, w3, b3).
    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Self::Linear { weight, bias } => {
                let mut v = vec![weight.as_slice().expect("standard layout")];
                if let Some(b) = bias {
                    v.push(b.as_slice().expect("standard layout"));
                }
                v
            }
            Self::Mlp { w1, b1, w2, b2, w3, b3 } => vec![
                w1.as_slice().expect("standard layout"),
                b1.as_slice().expect("standard layout"),
                w2.as_slice().expect("standard layout"),
                b2.as_slice().expect("standard layout"),
                w3.as_slice().expect("standard layout"),
                b3.as_slice().expect("standard layout"),
            ],
        }
    }

    /// Flat mutable views over all parameter tensors, same order as
    /// [`GeneratorParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Self::Linear { weight, bias } => {
                let mut v = vec![weight.as_slice_mut().expect("standard layout")];
                if let Some(b) = bias {
                    v.push(b.as_slice_mut().expect("standard layout"));
                }
                v
            }
            Self::Mlp { w1, b1, w2, b2, w3, b3 } => vec![
                w1.as_slice_mut().expect("standard layout"),
                b1.as_slice_mut().expect("standard layout"),
                w2.as_slice_mut().expect("standard layout"),
                b2.as_slice_mut().expect("standard layout"),
                w3.as_slice_mut().expect("standard layout"),
                b3.as_slice_mut().expect("standard layout"),
            ],
        }
    }
}

fn sample_gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let std = 1.0 / (cols as f64).sqrt();
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::InvalidArgument(format!("invalid init distribution: {e}")))?;
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches buffer"))
}

fn check_input(params: &GeneratorParams, latents: &Array2<f64>) -> Result<()> {
    if latents.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "latents have {} columns, map expects {}",
            latents.ncols(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Apply the observation map row-locally: `Ŷ = g(S)`, shape `T×m`.
///
/// # Errors
/// `DimensionMismatch` when the latent column count differs from the map's
/// input dimension.
pub fn generator_forward(params: &GeneratorParams, latents: &Array2<f64>) -> Result<Array2<f64>> {
    check_input(params, latents)?;
    match params {
        GeneratorParams::Linear { weight, bias } => {
            let mut y = latents.dot(&weight.t());
            if let Some(b) = bias {
                y += b;
            }
            Ok(y)
        }
        GeneratorParams::Mlp { w1, b1, w2, b2, w3, b3 } => {
            let a1 = (latents.dot(&w1.t()) + b1).mapv(f64::tanh);
            let a2 = (a1.dot(&w2.t()) + b2).mapv(f64::tanh);
            Ok(a2.dot(&w3.t()) + b3)
        }
    }
}

/// Quadratic observation loss `‖Y − Ŷ‖²_F / (2·ν_y)`.
///
/// # Errors
/// - `DimensionMismatch` when the two matrices differ in shape.
/// - `InvalidArgument` when `nu_y` is not finite and strictly positive.
pub fn observation_loss(observed: &Array2<f64>, predicted: &Array2<f64>, nu_y: f64) -> Result<f64> {
    if observed.dim() != predicted.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observed is {:?}, predicted is {:?}",
            observed.dim(),
            predicted.dim()
        )));
    }
    if !nu_y.is_finite() || nu_y <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise variance nu_y must be finite and > 0, got {nu_y}"
        )));
    }
    let mut acc = 0.0;
    for (y, p) in observed.iter().zip(predicted.iter()) {
        let d = y - p;
        acc += d * d;
    }
    Ok(acc / (2.0 * nu_y))
}

/// Forward pass, loss, and full backward pass in one call.
///
/// Returns `(grad_params, grad_latents, loss)`; the loss is bit-identical to
/// running [`generator_forward`] followed by [`observation_loss`]. Gradients
/// are of the loss, so the `1/ν_y` factor is included. A map without bias
/// gets no bias gradient.
///
/// # Errors
/// Same conditions as [`generator_forward`] and [`observation_loss`].
pub fn generator_backward(
    params: &GeneratorParams,
    latents: &Array2<f64>,
    observed: &Array2<f64>,
    nu_y: f64,
) -> Result<(GeneratorParams, Array2<f64>, f64)> {
    check_input(params, latents)?;
    match params {
        GeneratorParams::Linear { weight, bias } => {
            let mut predicted = latents.dot(&weight.t());
            if let Some(b) = bias {
                predicted += b;
            }
            let loss = observation_loss(observed, &predicted, nu_y)?;
            // dL/dŶ = (Ŷ − Y)/ν_y.
            let dy = (&predicted - observed) / nu_y;
            let grad_weight = dy.t().dot(latents);
            let grad_bias = bias.as_ref().map(|_| dy.sum_axis(Axis(0)));
            let grad_latents = dy.dot(weight);
            Ok((GeneratorParams::Linear { weight: grad_weight, bias: grad_bias }, grad_latents, loss))
        }
        GeneratorParams::Mlp { w1, b1, w2, b2, w3, b3 } => {
            let a1 = (latents.dot(&w1.t()) + b1).mapv(f64::tanh);
            let a2 = (a1.dot(&w2.t()) + b2).mapv(f64::tanh);
            let predicted = a2.dot(&w3.t()) + b3;
            let loss = observation_loss(observed, &predicted, nu_y)?;

            let dy = (&predicted - observed) / nu_y;
            let grad_w3 = dy.t().dot(&a2);
            let grad_b3 = dy.sum_axis(Axis(0));
            // tanh'(z) = 1 − tanh(z)².
            let dz2 = dy.dot(w3) * a2.mapv(|a| 1.0 - a * a);
            let grad_w2 = dz2.t().dot(&a1);
            let grad_b2 = dz2.sum_axis(Axis(0));
            let dz1 = dz2.dot(w2) * a1.mapv(|a| 1.0 - a * a);
            let grad_w1 = dz1.t().dot(latents);
            let grad_b1 = dz1.sum_axis(Axis(0));
            let grad_latents = dz1.dot(w1);
            Ok((
                GeneratorParams::Mlp {
                    w1: grad_w1,
                    b1: grad_b1,
                    w2: grad_w2,
                    b2: grad_b2,
                    w3: grad_w3,
                    b3: grad_b3,
                },
                grad_latents,
                loss,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn linear_forward_identity_weight() {
        let params = GeneratorParams::Linear { weight: Array2::eye(2), bias: None };
        let s = array![[1.0, 2.0], [3.0, 4.0]];
        let y = generator_forward(&params, &s).unwrap();
        assert_eq!(y, s);
    }

    #[test]
    fn linear_forward_with_bias_shifts_channels() {
        let params = GeneratorParams::Linear {
            weight: Array2::eye(2),
            bias: Some(array![10.0, -1.0]),
        };
        let s = array![[1.0, 2.0], [3.0, 4.0]];
        let y = generator_forward(&params, &s).unwrap();
        assert_eq!(y, array![[11.0, 1.0], [13.0, 3.0]]);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let params = GeneratorParams::Linear { weight: Array2::eye(2), bias: None };
        let s = Array2::<f64>::zeros((4, 3));
        assert!(matches!(generator_forward(&params, &s), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn loss_zero_for_exact_prediction_and_scales_with_nu() {
        let y = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(observation_loss(&y, &y, 0.1).unwrap(), 0.0);
        let yhat = array![[1.0, 2.0], [3.0, 2.0]];
        // Single residual of 2: ‖·‖² = 4; 4/(2·0.5) = 4.
        assert!((observation_loss(&y, &yhat, 0.5).unwrap() - 4.0).abs() < 1e-12);
        assert!((observation_loss(&y, &yhat, 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_bad_nu() {
        let y = Array2::<f64>::zeros((2, 2));
        assert!(observation_loss(&y, &y, 0.0).is_err());
        assert!(observation_loss(&y, &y, -1.0).is_err());
        assert!(observation_loss(&y, &y, f64::NAN).is_err());
    }

    #[test]
    fn backward_loss_matches_forward_loss_bitwise() {
        let mut rng = seeded(5);
        let params =
            GeneratorParams::init(&GeneratorShape::Mlp { hidden: 8 }, 3, 4, &mut rng).unwrap();
        let s = Array2::from_shape_fn((11, 3), |(i, j)| ((i * 3 + j) as f64 * 0.21).sin());
        let y = Array2::from_shape_fn((11, 4), |(i, j)| ((i + j) as f64 * 0.13).cos());
        let forward = generator_forward(&params, &s).unwrap();
        let loss_fwd = observation_loss(&y, &forward, 0.1).unwrap();
        let (_, _, loss_bwd) = generator_backward(&params, &s, &y, 0.1).unwrap();
        assert_eq!(loss_fwd.to_bits(), loss_bwd.to_bits());
    }

    #[test]
    fn disabled_bias_gets_no_gradient_entry() {
        let params = GeneratorParams::Linear { weight: Array2::eye(2), bias: None };
        let s = array![[1.0, 0.0], [0.0, 1.0]];
        let y = array![[0.0, 0.0], [0.0, 0.0]];
        let (grad, _, _) = generator_backward(&params, &s, &y, 1.0).unwrap();
        match grad {
            GeneratorParams::Linear { bias, .. } => assert!(bias.is_none()),
            _ => panic!("gradient shape should mirror parameters"),
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // i indexes both gradient and parameters
    fn linear_backward_matches_finite_difference() {
        let mut rng = seeded(11);
        let mut params =
            GeneratorParams::init(&GeneratorShape::Linear { use_bias: true }, 2, 3, &mut rng)
                .unwrap();
        let s = Array2::from_shape_fn((7, 2), |(i, j)| ((i * 2 + j) as f64 * 0.4).sin());
        let y = Array2::from_shape_fn((7, 3), |(i, j)| ((i + 2 * j) as f64 * 0.3).cos());
        let nu = 0.1;
        let (grad_params, grad_s, _) = generator_backward(&params, &s, &y, nu).unwrap();

        let h = 1e-6;
        // Parameter gradients, tensor by tensor.
        let grads = grad_params.tensors().into_iter().map(<[f64]>::to_vec).collect::<Vec<_>>();
        for (ti, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let orig = params.tensors()[ti][i];
                params.tensors_mut()[ti][i] = orig + h;
                let lp = observation_loss(&y, &generator_forward(&params, &s).unwrap(), nu).unwrap();
                params.tensors_mut()[ti][i] = orig - h;
                let lm = observation_loss(&y, &generator_forward(&params, &s).unwrap(), nu).unwrap();
                params.tensors_mut()[ti][i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((g[i] - fd).abs() < 1e-5, "tensor {ti} entry {i}: {} vs {fd}", g[i]);
            }
        }
        // Latent gradient.
        let mut s_pert = s.clone();
        for i in 0..7 {
            for j in 0..2 {
                let orig = s_pert[[i, j]];
                s_pert[[i, j]] = orig + h;
                let lp =
                    observation_loss(&y, &generator_forward(&params, &s_pert).unwrap(), nu).unwrap();
                s_pert[[i, j]] = orig - h;
                let lm =
                    observation_loss(&y, &generator_forward(&params, &s_pert).unwrap(), nu).unwrap();
                s_pert[[i, j]] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((grad_s[[i, j]] - fd).abs() < 1e-5);
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // i indexes both gradient and parameters
    fn mlp_backward_matches_finite_difference() {
        let mut rng = seeded(23);
        let mut params =
            GeneratorParams::init(&GeneratorShape::Mlp { hidden: 5 }, 2, 2, &mut rng).unwrap();
        let s = Array2::from_shape_fn((6, 2), |(i, j)| ((i + j) as f64 * 0.5).sin());
        let y = Array2::from_shape_fn((6, 2), |(i, j)| ((2 * i + j) as f64 * 0.2).cos());
        let nu = 0.1;
        let (grad_params, grad_s, _) = generator_backward(&params, &s, &y, nu).unwrap();

        let h = 1e-6;
        let grads = grad_params.tensors().into_iter().map(<[f64]>::to_vec).collect::<Vec<_>>();
        for (ti, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let orig = params.tensors()[ti][i];
                params.tensors_mut()[ti][i] = orig + h;
                let lp = observation_loss(&y, &generator_forward(&params, &s).unwrap(), nu).unwrap();
                params.tensors_mut()[ti][i] = orig - h;
                let lm = observation_loss(&y, &generator_forward(&params, &s).unwrap(), nu).unwrap();
                params.tensors_mut()[ti][i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((g[i] - fd).abs() < 2e-5, "tensor {ti} entry {i}: {} vs {fd}", g[i]);
            }
        }
        let mut s_pert = s.clone();
        for i in 0..6 {
            for j in 0..2 {
                let orig = s_pert[[i, j]];
                s_pert[[i, j]] = orig + h;
                let lp =
                    observation_loss(&y, &generator_forward(&params, &s_pert).unwrap(), nu).unwrap();
                s_pert[[i, j]] = orig - h;
                let lm =
                    observation_loss(&y, &generator_forward(&params, &s_pert).unwrap(), nu).unwrap();
                s_pert[[i, j]] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((grad_s[[i, j]] - fd).abs() < 2e-5);
            }
        }
    }

    #[test]
    fn init_is_deterministic_per_seed_and_biases_are_zero() {
        let shape = GeneratorShape::Mlp { hidden: 4 };
        let a = GeneratorParams::init(&shape, 3, 2, &mut seeded(9)).unwrap();
        let b = GeneratorParams::init(&shape, 3, 2, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        if let GeneratorParams::Mlp { b1, b2, b3, .. } = &a {
            assert!(b1.iter().chain(b2.iter()).chain(b3.iter()).all(|&x| x == 0.0));
        } else {
            panic!("expected mlp parameters");
        }
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let mut rng = seeded(41);
        let params =
            GeneratorParams::init(&GeneratorShape::Linear { use_bias: true }, 3, 4, &mut rng)
                .unwrap();
        let text = serde_json::to_string(&params).unwrap();
        let back: GeneratorParams = serde_json::from_str(&text).unwrap();
        assert_eq!(params, back);
    }
}
