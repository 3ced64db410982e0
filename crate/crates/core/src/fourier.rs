//! Fourier expressivity analysis of the quantum layers.
//!
//! A circuit that encodes each analyzed input once is a degree-1
//! trigonometric polynomial in those inputs, so sampling it on a (2d+1)^m
//! equidistant grid over [0, 2π)^m and inverting the DFT recovers the exact
//! coefficients c_ω of f(x) = Σ_ω c_ω·e^{−iω·x}. Sampling the coefficients
//! over random parameter draws measures how much of that function space the
//! layer actually reaches.

use num_complex::Complex64;
use rayon::prelude::*;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pqc::PqcCircuit;

use std::f64::consts::PI;
use std::fmt::Write as _;

/// Coefficients of one truncated Fourier expansion: ω ranges over
/// {−d, …, d}^m, stored row-major with axis value ω+d.
#[derive(Debug, Clone)]
pub struct FourierSpectrum {
    pub d: usize,
    pub m: usize,
    pub coefficients: Vec<Complex64>,
}

impl FourierSpectrum {
    fn side(&self) -> usize {
        2 * self.d + 1
    }

    /// Frequency vector at a flat index.
    pub fn omega(&self, mut flat: usize) -> Vec<i64> {
        let side = self.side();
        let mut out = vec![0i64; self.m];
        for axis in (0..self.m).rev() {
            out[axis] = (flat % side) as i64 - self.d as i64;
            flat /= side;
        }
        out
    }

    pub fn coefficient(&self, omega: &[i64]) -> Complex64 {
        let side = self.side();
        let mut flat = 0usize;
        for &w in omega {
            let idx = (w + self.d as i64) as usize;
            flat = flat * side + idx;
        }
        self.coefficients[flat]
    }

    /// Evaluates the truncated series Σ c_ω·e^{−iω·x} at an arbitrary point.
    pub fn reconstruct(&self, x: &[f64]) -> Complex64 {
        let mut acc = Complex64::ZERO;
        for (flat, c) in self.coefficients.iter().enumerate() {
            let omega = self.omega(flat);
            let phase: f64 = omega.iter().zip(x).map(|(&w, &xi)| w as f64 * xi).sum();
            acc += c * Complex64::new(0.0, -phase).exp();
        }
        acc
    }
}

/// What to analyze: a circuit, which output expectation, how many leading
/// inputs to scan (the rest stay at `fixed_value`), at which bandwidth d.
#[derive(Debug, Clone)]
pub struct AnalysisSpec {
    pub circuit: PqcCircuit,
    /// Wire whose expectation is analyzed; defaults to the last wire (the
    /// final output measurement).
    pub output_wire: usize,
    /// Number of leading inputs scanned over the grid (1 or 2).
    pub analyzed_inputs: usize,
    /// Value all remaining inputs are pinned to.
    pub fixed_value: f64,
    pub d: usize,
}

impl AnalysisSpec {
    /// Analysis of the parallel-layer circuit exactly as displayed in the
    /// violin chart: first two inputs, final output wire, d = 1.
    pub fn parallel_layer(qubits: usize, depth: usize) -> Self {
        AnalysisSpec {
            circuit: PqcCircuit::strongly_entangling(qubits, depth),
            output_wire: qubits - 1,
            analyzed_inputs: 2,
            fixed_value: 0.0,
            d: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.analyzed_inputs == 0 || self.analyzed_inputs > 2 {
            return Err(Error::Config(format!(
                "can analyze 1 or 2 inputs, asked for {}",
                self.analyzed_inputs
            )));
        }
        if self.analyzed_inputs > self.circuit.input_count() {
            return Err(Error::Config(format!(
                "circuit has only {} inputs",
                self.circuit.input_count()
            )));
        }
        if self.output_wire >= self.circuit.output_count() {
            return Err(Error::Index(format!(
                "output wire {} out of range",
                self.output_wire
            )));
        }
        if self.d == 0 {
            return Err(Error::Config("bandwidth d must be at least 1".into()));
        }
        Ok(())
    }

    pub fn grid_points(&self) -> usize {
        (2 * self.d + 1).pow(self.analyzed_inputs as u32)
    }
}

/// Evaluates the chosen output on the (2d+1)^m equidistant grid over
/// [0, 2π)^m, row-major in the analyzed inputs.
pub fn evaluate_on_grid(spec: &AnalysisSpec, theta: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    let side = 2 * spec.d + 1;
    let m = spec.analyzed_inputs;
    let total = spec.grid_points();
    let mut samples = Vec::with_capacity(total);
    let mut x = vec![spec.fixed_value; spec.circuit.input_count()];
    for flat in 0..total {
        let mut rem = flat;
        for axis in (0..m).rev() {
            let idx = rem % side;
            rem /= side;
            x[axis] = 2.0 * PI * idx as f64 / side as f64;
        }
        let outputs = spec.circuit.run(&x, theta)?;
        samples.push(outputs[spec.output_wire]);
    }
    Ok(samples)
}

/// Exact inverse DFT under the e^{−iω·x} convention:
/// c_ω = (1/N) Σ_k f(x_k)·e^{+iω·x_k} with N = (2d+1)^m grid points.
pub fn dft_coefficients(samples: &[f64], d: usize, m: usize) -> Result<FourierSpectrum> {
    let side = 2 * d + 1;
    let total = side.pow(m as u32);
    if samples.len() != total {
        return Err(Error::Shape(format!(
            "expected {total} grid samples for d={d}, m={m}, got {}",
            samples.len()
        )));
    }
    let mut coefficients = Vec::with_capacity(total);
    for flat_omega in 0..total {
        // Decode ω for this output slot.
        let mut omega = vec![0i64; m];
        let mut rem = flat_omega;
        for axis in (0..m).rev() {
            omega[axis] = (rem % side) as i64 - d as i64;
            rem /= side;
        }
        let mut acc = Complex64::ZERO;
        for (flat_x, &f) in samples.iter().enumerate() {
            let mut phase = 0.0;
            let mut rem = flat_x;
            for axis in (0..m).rev() {
                let idx = rem % side;
                rem /= side;
                phase += omega[axis] as f64 * 2.0 * PI * idx as f64 / side as f64;
            }
            acc += f * Complex64::new(0.0, phase).exp();
        }
        coefficients.push(acc / total as f64);
    }
    Ok(FourierSpectrum { d, m, coefficients })
}

/// Spectrum of one circuit at one parameter point.
pub fn analyze(spec: &AnalysisSpec, theta: &[f64]) -> Result<FourierSpectrum> {
    let samples = evaluate_on_grid(spec, theta)?;
    dft_coefficients(&samples, spec.d, spec.analyzed_inputs)
}

/// Coefficient distributions over random parameter draws.
#[derive(Debug, Clone)]
pub struct CoefficientSamples {
    pub spec_d: usize,
    pub spec_m: usize,
    /// One spectrum per θ draw.
    pub spectra: Vec<FourierSpectrum>,
}

impl CoefficientSamples {
    pub fn coefficient_count(&self) -> usize {
        (2 * self.spec_d + 1).pow(self.spec_m as u32)
    }

    /// All draws of one coefficient.
    pub fn series(&self, flat: usize) -> Vec<Complex64> {
        self.spectra.iter().map(|s| s.coefficients[flat]).collect()
    }

    /// Sample standard deviations (n−1) of the real and imaginary parts.
    pub fn spread(&self, flat: usize) -> (f64, f64) {
        let series = self.series(flat);
        let n = series.len() as f64;
        if series.len() < 2 {
            return (0.0, 0.0);
        }
        let mean_re = series.iter().map(|c| c.re).sum::<f64>() / n;
        let mean_im = series.iter().map(|c| c.im).sum::<f64>() / n;
        let var_re = series.iter().map(|c| (c.re - mean_re).powi(2)).sum::<f64>() / (n - 1.0);
        let var_im = series.iter().map(|c| (c.im - mean_im).powi(2)).sum::<f64>() / (n - 1.0);
        (var_re.sqrt(), var_im.sqrt())
    }
}

/// Draws θ uniformly from [0, 2π) per sample (ChaCha stream per draw, so the
/// parallel loop is deterministic) and collects every draw's spectrum.
pub fn sample_coefficient_distribution(
    spec: &AnalysisSpec,
    samples: usize,
    seed: u64,
) -> Result<CoefficientSamples> {
    spec.validate()?;
    if samples < 2 {
        return Err(Error::Config(format!(
            "need at least 2 samples for a distribution, got {samples}"
        )));
    }
    let params = spec.circuit.param_count();
    let spectra: Vec<Result<FourierSpectrum>> = (0..samples)
        .into_par_iter()
        .map(|draw| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(draw as u64);
            let theta: Vec<f64> = (0..params).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            analyze(spec, &theta)
        })
        .collect();
    let spectra = spectra.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CoefficientSamples { spec_d: spec.d, spec_m: spec.analyzed_inputs, spectra })
}

/// Renders the violin-chart data: one row per (coefficient, draw) with full
/// double-precision values.
pub fn render_violin_csv(samples: &CoefficientSamples) -> Result<String> {
    if samples.spectra.is_empty() {
        return Err(Error::Config("no coefficient samples to export".into()));
    }
    let mut out = String::from("omega_x,omega_y,sample_index,real,imag\n");
    for flat in 0..samples.coefficient_count() {
        let omega = samples.spectra[0].omega(flat);
        let (ox, oy) = match omega[..] {
            [ox] => (ox, 0),
            [ox, oy] => (ox, oy),
            _ => unreachable!("analysis is limited to two inputs"),
        };
        for (draw, spectrum) in samples.spectra.iter().enumerate() {
            let c = spectrum.coefficients[flat];
            let _ = writeln!(out, "{ox},{oy},{draw},{},{}", c.re, c.im);
        }
    }
    Ok(out)
}

pub fn export_violin_csv(samples: &CoefficientSamples, path: &std::path::Path) -> Result<()> {
    let csv = render_violin_csv(samples)?;
    std::fs::write(path, csv)?;
    Ok(())
}

/// Determinant of the Pearson correlation matrix of all coefficient series
/// (real and imaginary parts stacked). Constant series correlate as an
/// identity row. Reported alongside the violin data; the Hermitian symmetry
/// of the spectrum makes the series linearly dependent, so values near zero
/// are expected.
pub fn correlation_determinant(samples: &CoefficientSamples) -> f64 {
    let k = samples.coefficient_count();
    let n = samples.spectra.len();
    let mut series: Vec<Vec<f64>> = Vec::with_capacity(2 * k);
    for flat in 0..k {
        let s = samples.series(flat);
        series.push(s.iter().map(|c| c.re).collect());
        series.push(s.iter().map(|c| c.im).collect());
    }
    let dim = series.len();
    let mut corr = vec![0.0; dim * dim];
    let stats: Vec<(f64, f64)> = series
        .iter()
        .map(|s| {
            let mean = s.iter().sum::<f64>() / n as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (mean, var.sqrt())
        })
        .collect();
    for a in 0..dim {
        for b in 0..dim {
            if a == b {
                corr[a * dim + b] = 1.0;
                continue;
            }
            let (ma, sa) = stats[a];
            let (mb, sb) = stats[b];
            if sa < 1e-300 || sb < 1e-300 {
                continue;
            }
            let cov = series[a]
                .iter()
                .zip(&series[b])
                .map(|(x, y)| (x - ma) * (y - mb))
                .sum::<f64>()
                / n as f64;
            corr[a * dim + b] = cov / (sa * sb);
        }
    }
    determinant(&mut corr, dim)
}

/// In-place LU determinant with partial pivoting.
fn determinant(matrix: &mut [f64], dim: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&a, &b| {
                matrix[a * dim + col]
                    .abs()
                    .partial_cmp(&matrix[b * dim + col].abs())
                    .expect("finite matrix")
            })
            .expect("non-empty column");
        if matrix[pivot * dim + col].abs() < 1e-300 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..dim {
                matrix.swap(col * dim + k, pivot * dim + k);
            }
            det = -det;
        }
        det *= matrix[col * dim + col];
        for row in col + 1..dim {
            let factor = matrix[row * dim + col] / matrix[col * dim + col];
            for k in col..dim {
                matrix[row * dim + k] -= factor * matrix[col * dim + k];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::Pauli;
    use rand::rngs::StdRng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "expected {b}, got {a}");
    }

    /// Single qubit, RX embedding, no variational part, ⟨Y⟩ readout:
    /// f(x) = −sin x, whose expansion is c₋₁ = i/2, c₀ = 0, c₊₁ = −i/2.
    #[test]
    fn minus_sine_expansion() {
        let spec = AnalysisSpec {
            circuit: PqcCircuit::strongly_entangling(1, 0),
            output_wire: 0,
            analyzed_inputs: 1,
            fixed_value: 0.0,
            d: 1,
        };
        let spectrum = analyze(&spec, &[]).unwrap();
        let c = |w: i64| spectrum.coefficient(&[w]);
        assert!((c(-1) - Complex64::new(0.0, 0.5)).norm() < 1e-12);
        assert!((c(1) - Complex64::new(0.0, -0.5)).norm() < 1e-12);
        assert!(c(0).norm() < 1e-12);
    }

    #[test]
    fn grid_sizes_match_definition() {
        let mut spec = AnalysisSpec::parallel_layer(5, 3);
        assert_eq!(spec.grid_points(), 9);
        spec.analyzed_inputs = 1;
        assert_eq!(spec.grid_points(), 3);
        let theta: Vec<f64> = vec![0.0; spec.circuit.param_count()];
        assert_eq!(evaluate_on_grid(&spec, &theta).unwrap().len(), 3);
    }

    #[test]
    fn constant_function_has_only_the_dc_coefficient() {
        // Z readout of a θ=0, depth-0... a constant comes easier from the
        // quanv wire 3 with all inputs pinned: with x fixed the function of
        // the analyzed inputs is constant only if they never reach the wire.
        // Use a direct synthetic sample set instead.
        let samples = vec![1.0; 9];
        let spectrum = dft_coefficients(&samples, 1, 2).unwrap();
        assert!((spectrum.coefficient(&[0, 0]) - Complex64::ONE).norm() < 1e-12);
        for flat in 0..9 {
            if spectrum.omega(flat) != vec![0, 0] {
                assert!(spectrum.coefficients[flat].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn hermitian_symmetry_for_random_circuit() {
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(5);
        let spec = AnalysisSpec::parallel_layer(5, 3);
        let theta: Vec<f64> =
            (0..spec.circuit.param_count()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let spectrum = analyze(&spec, &theta).unwrap();
        for flat in 0..spectrum.coefficients.len() {
            let omega = spectrum.omega(flat);
            let neg: Vec<i64> = omega.iter().map(|w| -w).collect();
            let diff = (spectrum.coefficient(&omega) - spectrum.coefficient(&neg).conj()).norm();
            assert!(diff < 1e-10, "c(-ω) = conj(c(ω)) violated by {diff}");
        }
    }

    #[test]
    fn reconstruction_matches_direct_evaluation_off_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(6);
        let spec = AnalysisSpec::parallel_layer(4, 2);
        let theta: Vec<f64> =
            (0..spec.circuit.param_count()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let spectrum = analyze(&spec, &theta).unwrap();
        for _ in 0..20 {
            let point = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
            let mut x = vec![spec.fixed_value; spec.circuit.input_count()];
            x[0] = point[0];
            x[1] = point[1];
            let direct = spec.circuit.run(&x, &theta).unwrap()[spec.output_wire];
            let series = spectrum.reconstruct(&point);
            assert!(series.im.abs() < 1e-10);
            assert_close(series.re, direct, 1e-8);
        }
    }

    #[test]
    fn frequencies_beyond_the_encoding_count_vanish() {
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(7);
        let mut spec = AnalysisSpec::parallel_layer(3, 2);
        spec.d = 3; // analyze far beyond the single encoding
        let theta: Vec<f64> =
            (0..spec.circuit.param_count()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let spectrum = analyze(&spec, &theta).unwrap();
        for flat in 0..spectrum.coefficients.len() {
            let omega = spectrum.omega(flat);
            if omega.iter().any(|w| w.abs() >= 2) {
                assert!(
                    spectrum.coefficients[flat].norm() < 1e-10,
                    "coefficient at {omega:?} should vanish"
                );
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let spec = AnalysisSpec {
            circuit: PqcCircuit::strongly_entangling(2, 1),
            output_wire: 1,
            analyzed_inputs: 2,
            fixed_value: 0.0,
            d: 1,
        };
        let a = sample_coefficient_distribution(&spec, 5, 42).unwrap();
        let b = sample_coefficient_distribution(&spec, 5, 42).unwrap();
        for (sa, sb) in a.spectra.iter().zip(&b.spectra) {
            assert_eq!(sa.coefficients, sb.coefficients);
        }
        let c = sample_coefficient_distribution(&spec, 5, 43).unwrap();
        assert!(a.spectra[0].coefficients != c.spectra[0].coefficients);
    }

    #[test]
    fn violin_csv_shape_and_round_trip() {
        let spec = AnalysisSpec {
            circuit: PqcCircuit::strongly_entangling(2, 1),
            output_wire: 0,
            analyzed_inputs: 2,
            fixed_value: 0.0,
            d: 1,
        };
        let samples = sample_coefficient_distribution(&spec, 4, 1).unwrap();
        let csv = render_violin_csv(&samples).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 9 * 4);
        assert_eq!(lines[0], "omega_x,omega_y,sample_index,real,imag");
        // Full-precision text reloads to the identical doubles.
        let first = lines[1].split(',').collect::<Vec<_>>();
        let re: f64 = first[3].parse().unwrap();
        let im: f64 = first[4].parse().unwrap();
        let c0 = samples.spectra[0].coefficients[0];
        assert_eq!(re.to_bits(), c0.re.to_bits());
        assert_eq!(im.to_bits(), c0.im.to_bits());
    }

    #[test]
    fn empty_distributions_are_rejected() {
        let spec = AnalysisSpec::parallel_layer(2, 1);
        assert!(matches!(
            sample_coefficient_distribution(&spec, 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn analysis_input_limit_is_enforced() {
        let mut spec = AnalysisSpec::parallel_layer(5, 1);
        spec.analyzed_inputs = 3;
        assert!(matches!(evaluate_on_grid(&spec, &vec![0.0; 45]), Err(Error::Config(_))));
    }

    #[test]
    fn correlation_determinant_is_near_zero_for_hermitian_spectra() {
        // c₀₀ is real for a real function: its imaginary series is constant
        // zero, and conjugate pairs are linearly dependent.
        let spec = AnalysisSpec::parallel_layer(3, 1);
        let samples = sample_coefficient_distribution(&spec, 20, 3).unwrap();
        let det = correlation_determinant(&samples);
        assert!(det.abs() < 1e-6, "determinant {det}");
    }

    #[test]
    fn readout_axis_sanity() {
        // The analyzed circuit measures Pauli-Y as built.
        let spec = AnalysisSpec::parallel_layer(5, 3);
        assert_eq!(spec.circuit.readout, Pauli::Y);
        assert_eq!(spec.output_wire, 4);
    }
}
