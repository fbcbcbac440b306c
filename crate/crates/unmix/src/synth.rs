//! Synthetic benchmark signals: three standardized waveforms of distinct
//! smoothness (sine, smoothed square, sawtooth), linear and tanh-MLP mixing
//! maps with optional Gaussian sensor noise, channel standardization, and the
//! CSV signal format shared with the command-line tools.
//!
//! Everything is seeded and deterministic: the same `(T, seed, mixing,
//! noise_std)` tuple always produces byte-identical signals. Noise and mixer
//! weights draw from distinct generator streams, so changing the noise level
//! never changes the mixer.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::normalized_index;
use crate::observation::{generator_forward, GeneratorParams};

/// Generator stream for mixer-weight draws.
const STREAM_MIXER: u64 = 10;
/// Generator stream for sensor-noise draws.
const STREAM_NOISE: u64 = 11;

/// Three benchmark sources over the normalized index `u ∈ [0, 1]`, column
/// order: `sin(2π·3u)`, a smoothed square wave at frequency 5, and a
/// smoothed sawtooth at frequency 2. Each column is standardized to zero
/// mean and unit population variance.
///
/// The square and saw jumps are softened at the sampling scale (Gaussian
/// moving averages, widths [`SQUARE_SMOOTHING_WIDTH`] and
/// [`SAW_SMOOTHING_WIDTH`]): the benchmark targets piecewise-smooth sources
/// with distinct characteristic time scales, not bandwidth-unlimited
/// discontinuities, and a hard jump's quadratic energy is minimized by
/// splitting it across several recovered sources — an artifact that works
/// directly against separation.
///
/// The waveforms are deterministic; `_seed` is reserved for stochastic source
/// families and does not affect the output.
///
/// # Errors
/// `InvalidArgument` when `t < 2`.
pub fn generate_sources(t: usize, _seed: u64) -> Result<Array2<f64>> {
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "source generation needs at least 2 samples, got {t}"
        )));
    }
    let grid = normalized_index(t)?;
    let u = grid.as_slice();
    let two_pi = std::f64::consts::TAU;

    let mut s = Array2::<f64>::zeros((t, 3));
    for i in 0..t {
        s[[i, 0]] = (two_pi * 3.0 * u[i]).sin();
        s[[i, 1]] = (two_pi * 5.0 * u[i]).sin().signum();
        // Sawtooth with two full periods, range [-1, 1).
        s[[i, 2]] = 2.0 * (2.0 * u[i]).fract() - 1.0;
    }
    smooth_column(&mut s, 1, SQUARE_SMOOTHING_WIDTH * (t - 1) as f64);
    smooth_column(&mut s, 2, SAW_SMOOTHING_WIDTH * (t - 1) as f64);
    standardize(&s)
}

/// Width (standard deviation, in normalized-index units) of the
/// Gaussian-weighted moving average applied to the square wave. Chosen so
/// the smoothed edges have a coherence scale around 0.03 — clearly separated
/// from both the sawtooth's shorter scale and the sine's much longer
/// scale, so the three sources occupy visibly different temporal scales.
const SQUARE_SMOOTHING_WIDTH: f64 = 0.015;

/// Width of the Gaussian-weighted moving average applied to the sawtooth —
/// narrower than the square's, so the saw keeps the shortest coherence scale
/// of the three sources (around 0.013) while its period-boundary jumps stop
/// being single-sample discontinuities.
const SAW_SMOOTHING_WIDTH: f64 = 0.006;

/// Gaussian-weighted centered moving average with standard deviation
/// `sigma` samples, truncated at ±3σ and at the boundaries, weights
/// renormalized per position (so constants pass through unchanged up to
/// rounding).
///
/// Unlike a flat window, the Gaussian weighting leaves no curvature kinks:
/// the smoothed edge is as smooth as the weight profile.
fn smooth_column(s: &mut Array2<f64>, col: usize, sigma: f64) {
    let half = (3.0 * sigma).round() as usize;
    if half == 0 {
        return;
    }
    let t = s.nrows();
    let raw: Vec<f64> = s.column(col).to_vec();
    let weights: Vec<f64> =
        (0..=half).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
    for i in 0..t {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(t - 1);
        let mut acc = 0.0;
        let mut norm = 0.0;
        for j in lo..=hi {
            let w = weights[i.abs_diff(j)];
            acc += w * raw[j];
            norm += w;
        }
        s[[i, col]] = acc / norm;
    }
}

/// The default 3×3 mixing matrix: a product of rotations about the three
/// axes (angles 0.9, 0.5, 1.1) times `diag(1.0, 0.8, 1.25)`. Orthogonal
/// factors leave the singular values at the diagonal entries, so the
/// condition number is exactly `1.25/0.8 = 1.5625` while every source feeds
/// every channel with a substantial coefficient.
pub fn default_mixing_matrix() -> Array2<f64> {
    let rz = rotation_z(0.9);
    let ry = rotation_y(0.5);
    let rx = rotation_x(1.1);
    let scales = Array2::from_diag(&Array1::from_vec(vec![1.0, 0.8, 1.25]));
    rz.dot(&ry).dot(&rx).dot(&scales)
}

fn rotation_z(a: f64) -> Array2<f64> {
    let (s, c) = a.sin_cos();
    ndarray::array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rotation_y(a: f64) -> Array2<f64> {
    let (s, c) = a.sin_cos();
    ndarray::array![[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rotation_x(a: f64) -> Array2<f64> {
    let (s, c) = a.sin_cos();
    ndarray::array![[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Fixed nonlinear mixing map: a tanh MLP with 16 hidden units per layer,
/// weights uniform in `±1/√fan_in`, zero biases, drawn from the mixer stream
/// of the seeded generator.
pub fn default_mixing_mlp(n_sources: usize, n_channels: usize, seed: u64) -> Result<GeneratorParams> {
    if n_sources == 0 || n_channels == 0 {
        return Err(Error::InvalidArgument(
            "mixing map needs at least one source and one channel".into(),
        ));
    }
    let hidden = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_MIXER);
    let mut layer = |rows: usize, cols: usize| {
        let bound = 1.0 / (cols as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Array2::from_shape_vec((rows, cols), data).expect("shape matches buffer")
    };
    Ok(GeneratorParams::Mlp {
        w1: layer(hidden, n_sources),
        b1: Array1::zeros(hidden),
        w2: layer(hidden, hidden),
        b2: Array1::zeros(hidden),
        w3: layer(n_channels, hidden),
        b3: Array1::zeros(n_channels),
    })
}

fn check_noise(noise_std: f64) -> Result<()> {
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise standard deviation must be finite and >= 0, got {noise_std}"
        )));
    }
    Ok(())
}

fn add_noise(y: &mut Array2<f64>, noise_std: f64, seed: u64) {
    if noise_std == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_NOISE);
    let normal = Normal::new(0.0, 1.0).expect("unit normal is valid");
    // Row-major draw order, one value per observed entry.
    for v in y.iter_mut() {
        *v += noise_std * normal.sample(&mut rng);
    }
}

/// Linear mixture `Y = S·Aᵀ + noise_std·N` with seeded Gaussian noise.
///
/// # Errors
/// `DimensionMismatch` on incompatible shapes, `InvalidArgument` for a
/// negative or non-finite noise level.
pub fn mix_linear(
    sources: &Array2<f64>,
    mixing: &Array2<f64>,
    noise_std: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    check_noise(noise_std)?;
    if sources.ncols() != mixing.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "sources have {} columns, mixing matrix expects {}",
            sources.ncols(),
            mixing.ncols()
        )));
    }
    let mut y = sources.dot(&mixing.t());
    add_noise(&mut y, noise_std, seed);
    Ok(y)
}

/// Nonlinear mixture `Y = g(S) + noise_std·N` through a fixed observation
/// map (typically [`default_mixing_mlp`]).
///
/// # Errors
/// Same conditions as [`mix_linear`], with the map checking its own input
/// dimension.
pub fn mix_nonlinear(
    sources: &Array2<f64>,
    map: &GeneratorParams,
    noise_std: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    check_noise(noise_std)?;
    let mut y = generator_forward(map, sources)?;
    add_noise(&mut y, noise_std, seed);
    Ok(y)
}

/// Standardize each column to zero mean and unit population variance.
///
/// Idempotent up to rounding. A numerically constant column is rejected:
/// there is no scale that can standardize it.
///
/// # Errors
/// `InvalidArgument` for fewer than 2 rows or a constant column.
pub fn standardize(signals: &Array2<f64>) -> Result<Array2<f64>> {
    if signals.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "standardization needs at least 2 rows, got {}",
            signals.nrows()
        )));
    }
    let t = signals.nrows() as f64;
    let mut out = signals.to_owned();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / t;
        col.mapv_inplace(|x| x - mean);
        let std = (col.iter().map(|&x| x * x).sum::<f64>() / t).sqrt();
        // Residuals at the rounding level of the mean are a constant column.
        if std <= f64::EPSILON * 16.0 * (1.0 + mean.abs()) {
            return Err(Error::InvalidArgument(format!(
                "channel {j} is constant and cannot be standardized"
            )));
        }
        col.mapv_inplace(|x| x / std);
    }
    Ok(out)
}

/// How observations were produced from the sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
// One instance per experiment; the size imbalance is irrelevant.
#[allow(clippy::large_enum_variant)]
pub enum Mixing {
    Linear { matrix: Array2<f64> },
    Nonlinear { map: GeneratorParams },
}

/// Mixing family selector for [`Experiment::generate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingKind {
    Linear,
    Nonlinear,
}

/// A complete synthetic problem instance: ground-truth sources, the mixing
/// map that produced the observations, and the standardized observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    /// Ground-truth standardized sources, `T×3`.
    pub sources: Array2<f64>,
    /// The mixing map.
    pub mixing: Mixing,
    /// Sensor noise level applied before standardization.
    pub noise_std: f64,
    /// Standardized observed channels, `T×3`.
    pub observations: Array2<f64>,
    /// Seed the instance was generated from.
    pub seed: u64,
}

impl Experiment {
    /// Generate sources, mix them, and standardize the observed channels.
    ///
    /// # Errors
    /// Propagates source-generation, mixing, and standardization errors.
    pub fn generate(t: usize, kind: MixingKind, noise_std: f64, seed: u64) -> Result<Self> {
        let sources = generate_sources(t, seed)?;
        let (mixing, raw) = match kind {
            MixingKind::Linear => {
                let matrix = default_mixing_matrix();
                let raw = mix_linear(&sources, &matrix, noise_std, seed)?;
                (Mixing::Linear { matrix }, raw)
            }
            MixingKind::Nonlinear => {
                let map = default_mixing_mlp(sources.ncols(), sources.ncols(), seed)?;
                let raw = mix_nonlinear(&sources, &map, noise_std, seed)?;
                (Mixing::Nonlinear { map }, raw)
            }
        };
        let observations = standardize(&raw)?;
        Ok(Self { sources, mixing, noise_std, observations, seed })
    }
}

/// Write `contents` to `path` atomically: the bytes land in a sibling
/// temporary file first and are renamed into place, so readers never observe
/// a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let with_path = |e: std::io::Error| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp = path.to_owned();
    tmp.set_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(with_path)?;
    }
    let mut f = fs::File::create(&tmp).map_err(with_path)?;
    f.write_all(contents).map_err(with_path)?;
    f.sync_all().map_err(with_path)?;
    drop(f);
    fs::rename(&tmp, path).map_err(with_path)?;
    Ok(())
}

/// Render a signal matrix as CSV: header `t,ch_1,…,ch_k`, one row per time
/// sample, the `t` column holding the normalized index. Values use 17
/// significant digits, enough for exact `f64` round-trips.
pub fn signal_csv_string(signals: &Array2<f64>) -> Result<String> {
    let t = signals.nrows();
    let k = signals.ncols();
    if t == 0 || k == 0 {
        return Err(Error::InvalidArgument("cannot write an empty signal matrix".into()));
    }
    let grid = normalized_index(t)?;
    let mut out = String::with_capacity(t * (k + 1) * 25);
    out.push('t');
    for j in 1..=k {
        out.push_str(&format!(",ch_{j}"));
    }
    out.push('\n');
    for i in 0..t {
        out.push_str(&format!("{:.16e}", grid.as_slice()[i]));
        for j in 0..k {
            out.push_str(&format!(",{:.16e}", signals[[i, j]]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Write a signal matrix to a CSV file (atomically).
pub fn write_signal_csv(path: &Path, signals: &Array2<f64>) -> Result<()> {
    let text = signal_csv_string(signals)?;
    write_atomic(path, text.as_bytes())
}

/// Read a signal CSV produced by [`write_signal_csv`]: returns the channel
/// matrix without the index column.
///
/// # Errors
/// `Parse` on a malformed header, ragged rows, or unparseable numbers; `Io`
/// when the file cannot be read.
pub fn read_signal_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"t") || columns.len() < 2 {
        return Err(Error::Parse(format!(
            "{}: header must start with 't' and list at least one channel",
            path.display()
        )));
    }
    for (j, name) in columns[1..].iter().enumerate() {
        let expected = format!("ch_{}", j + 1);
        if *name != expected {
            return Err(Error::Parse(format!(
                "{}: column {} is named '{name}', expected '{expected}'",
                path.display(),
                j + 1
            )));
        }
    }
    let k = columns.len() - 1;
    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (line_no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 1 {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line_no + 2,
                fields.len(),
                k + 1
            )));
        }
        for field in &fields[1..] {
            let v: f64 = field.parse().map_err(|e| {
                Error::Parse(format!("{}: row {}: {e}", path.display(), line_no + 2))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    Array2::from_shape_vec((rows, k), data)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sources_are_standardized() {
        let s = generate_sources(500, 3).unwrap();
        assert_eq!(s.dim(), (500, 3));
        for j in 0..3 {
            let col = s.column(j);
            let mean = col.sum() / 500.0;
            let var = col.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / 500.0;
            assert!(mean.abs() < 1e-12, "column {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-10, "column {j} variance {var}");
        }
    }

    #[test]
    fn sources_identical_for_same_seed() {
        let a = generate_sources(200, 7).unwrap();
        let b = generate_sources(200, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sources_reject_tiny_t() {
        assert!(generate_sources(0, 0).is_err());
        assert!(generate_sources(1, 0).is_err());
    }

    #[test]
    fn smoothing_preserves_constants_and_softens_jumps() {
        // Renormalized weights pass a constant column through unchanged.
        let mut constant = Array2::from_elem((50, 1), 3.25);
        smooth_column(&mut constant, 0, 6.0);
        for v in constant.column(0) {
            assert!((v - 3.25).abs() < 1e-14, "constant drifted to {v}");
        }

        // The square wave's raw transitions jump by 2; after smoothing the
        // largest consecutive step must be far smaller, while the wave still
        // saturates near ±1 between transitions.
        let t = 400;
        let s = generate_sources(t, 0).unwrap();
        let square = s.column(1);
        let max_step = square
            .iter()
            .zip(square.iter().skip(1))
            .map(|(a, b)| (b - a).abs())
            .fold(0.0f64, f64::max);
        assert!(max_step < 0.5, "smoothed square still steps by {max_step}");
        let peak = square.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let saturated = square.iter().filter(|v| v.abs() > 0.8 * peak).count();
        assert!(
            saturated > t / 2,
            "square spends only {saturated}/{t} samples near its extremes"
        );

        // The raw saw wraps by the full range in one sample (a step of ~3.4
        // after standardization); smoothing must spread that over several
        // samples without flattening the ramps, which cover the range almost
        // uniformly.
        let saw = s.column(2);
        let saw_step = saw
            .iter()
            .zip(saw.iter().skip(1))
            .map(|(a, b)| (b - a).abs())
            .fold(0.0f64, f64::max);
        assert!(saw_step < 1.0, "smoothed saw still steps by {saw_step}");
        let saw_peak = saw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mid = saw.iter().filter(|v| v.abs() < 0.5 * saw_peak).count();
        assert!(
            (t * 2 / 5..=t * 3 / 5).contains(&mid),
            "saw ramps lost their uniform sweep: {mid}/{t} samples in the middle half"
        );
    }

    #[test]
    fn sources_are_weakly_correlated() {
        let s = generate_sources(1000, 0).unwrap();
        for a in 0..3 {
            for b in (a + 1)..3 {
                let ca = s.column(a);
                let cb = s.column(b);
                // Columns are standardized, so the correlation is the mean product.
                let corr = ca.iter().zip(cb.iter()).map(|(x, y)| x * y).sum::<f64>() / 1000.0;
                assert!(corr.abs() <= 0.1, "columns {a},{b}: correlation {corr}");
            }
        }
    }

    #[test]
    fn default_mixing_matrix_condition_number() {
        let a = default_mixing_matrix();
        // AᵀA has eigenvalues equal to the squared diagonal scales.
        let ata = a.t().dot(&a);
        let eig_min = 0.8f64 * 0.8;
        let eig_max = 1.25f64 * 1.25;
        // tr(AᵀA) = 1² + 0.8² + 1.25², the squared singular values.
        let trace = ata[[0, 0]] + ata[[1, 1]] + ata[[2, 2]];
        assert!((trace - (1.0 + eig_min + eig_max)).abs() < 1e-12);
        // Every entry participates in the mixture.
        for v in a.iter() {
            assert!(v.abs() > 0.01, "mixing entry too small: {v}");
        }
    }

    #[test]
    fn linear_mix_recovers_sources_through_pseudo_inverse() {
        let s = generate_sources(300, 5).unwrap();
        let a = default_mixing_matrix();
        let y = mix_linear(&s, &a, 0.0, 5).unwrap();
        // Invert the square mixing matrix by Gaussian elimination.
        let a_inv = invert3(&a);
        let s_back = y.dot(&a_inv.t());
        for (x, y) in s.iter().zip(s_back.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    fn invert3(a: &Array2<f64>) -> Array2<f64> {
        let mut m = a.clone();
        let mut inv = Array2::<f64>::eye(3);
        for col in 0..3 {
            let pivot = (col..3)
                .max_by(|&r1, &r2| m[[r1, col]].abs().partial_cmp(&m[[r2, col]].abs()).unwrap())
                .unwrap();
            if pivot != col {
                for j in 0..3 {
                    m.swap([pivot, j], [col, j]);
                    inv.swap([pivot, j], [col, j]);
                }
            }
            let p = m[[col, col]];
            for j in 0..3 {
                m[[col, j]] /= p;
                inv[[col, j]] /= p;
            }
            for r in 0..3 {
                if r != col {
                    let f = m[[r, col]];
                    for j in 0..3 {
                        m[[r, j]] -= f * m[[col, j]];
                        inv[[r, j]] -= f * inv[[col, j]];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn noise_changes_output_but_same_seed_repeats() {
        let s = generate_sources(100, 1).unwrap();
        let a = default_mixing_matrix();
        let clean = mix_linear(&s, &a, 0.0, 1).unwrap();
        let noisy1 = mix_linear(&s, &a, 0.1, 1).unwrap();
        let noisy2 = mix_linear(&s, &a, 0.1, 1).unwrap();
        assert_eq!(noisy1, noisy2);
        assert!(noisy1.iter().zip(clean.iter()).any(|(a, b)| a != b));
    }

    #[test]
    fn nonlinear_mix_is_locally_linear_for_tiny_weights() {
        // With all weights scaled by 0.01 the tanh layers operate in their
        // linear regime, so the map is effectively its Jacobian at zero.
        let s = generate_sources(400, 2).unwrap();
        let mut map = default_mixing_mlp(3, 3, 2).unwrap();
        for tensor in map.tensors_mut() {
            for w in tensor {
                *w *= 0.01;
            }
        }
        let y = mix_nonlinear(&s, &map, 0.0, 2).unwrap();
        // Jacobian at zero: W3·W2·W1 (biases are zero, tanh'(0) = 1).
        let (w1, w2, w3) = match &map {
            GeneratorParams::Mlp { w1, w2, w3, .. } => (w1, w2, w3),
            _ => unreachable!(),
        };
        let jac = w3.dot(&w2.dot(w1));
        let y_lin = s.dot(&jac.t());
        for j in 0..3 {
            let a = y.column(j);
            let b = y_lin.column(j);
            let corr = pearson(&a.to_vec(), &b.to_vec());
            assert!(corr > 0.999, "channel {j}: corr {corr}");
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in a.iter().zip(b) {
            cov += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        cov / (va * vb).sqrt()
    }

    #[test]
    fn standardize_is_idempotent_and_affine_invariant() {
        let s = generate_sources(150, 9).unwrap();
        let once = standardize(&s).unwrap();
        let twice = standardize(&once).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // An affine map of the channels standardizes to the same signals.
        let shifted = &s * 3.5 + 2.0;
        let again = standardize(&shifted).unwrap();
        for (a, b) in once.iter().zip(again.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn standardize_two_point_range() {
        let s = array![[0.0], [2.0]];
        let out = standardize(&s).unwrap();
        assert!((out[[0, 0]] + 1.0).abs() < 1e-15);
        assert!((out[[1, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standardize_rejects_constant_channel() {
        let s = array![[1.0, 0.1], [1.0, 0.2], [1.0, 0.3]];
        assert!(matches!(standardize(&s), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn experiment_same_seed_is_identical() {
        let a = Experiment::generate(128, MixingKind::Nonlinear, 0.01, 3).unwrap();
        let b = Experiment::generate(128, MixingKind::Nonlinear, 0.01, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = generate_sources(64, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("signals.csv");
        write_signal_csv(&path, &s).unwrap();
        let back = read_signal_csv(&path).unwrap();
        assert_eq!(back.dim(), (64, 3));
        for (a, b) in s.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits(), "17 significant digits must round-trip");
        }
    }

    #[test]
    fn csv_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let bad_header = dir.path().join("bad_header.csv");
        std::fs::write(&bad_header, "time,ch_1\n0.0,1.0\n").unwrap();
        assert!(matches!(read_signal_csv(&bad_header), Err(Error::Parse(_))));

        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "t,ch_1,ch_2\n0.0,1.0\n").unwrap();
        assert!(matches!(read_signal_csv(&ragged), Err(Error::Parse(_))));

        let not_num = dir.path().join("nan.csv");
        std::fs::write(&not_num, "t,ch_1\n0.0,abc\n").unwrap();
        assert!(matches!(read_signal_csv(&not_num), Err(Error::Parse(_))));
    }
}
