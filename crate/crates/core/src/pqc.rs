//! Declarative parameterized circuits: angle embeddings, strongly-entangling
//! variational blocks, the parallel quantum dense layer, and the 2×2
//! quanvolutional kernel.
//!
//! Circuits are described as flat gate lists in which every rotation angle
//! remembers where it came from (a trainable parameter, an input feature, or
//! a constant). The gradient engines in [`crate::grad`] consume that list.

use crate::error::{Error, Result};
use crate::qsim::{Observable, Pauli, StateVector};

use std::f64::consts::PI;

/// How classical features enter the circuit.
///
/// `AngleRx` rotates wire w by RX(φ_w); `AngleRyScaled` expects pixels in
/// [0, 1] and rotates by RY(π·pixel_w).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Embedding {
    AngleRx,
    AngleRyScaled,
}

/// Variational part of a circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ansatz {
    /// `depth` repetitions of per-wire ROT gates followed by a CNOT ring
    /// (control w → target (w+1) mod q; no CNOTs for q = 1).
    StronglyEntangling { depth: usize },
    /// One RY per wire followed by the chain CNOT(0→1), CNOT(1→2), CNOT(2→3).
    QuanvChain,
}

/// Where a gate angle comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleSource {
    Fixed,
    /// Trainable parameter at this index of the circuit's θ vector.
    Theta(usize),
    /// Input feature; `scale` is d(angle)/d(feature) for the chain rule.
    Input { index: usize, scale: f64 },
}

/// One gate of a built circuit, with its angle provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CircuitGate {
    Rotation { axis: Pauli, wire: usize, angle: f64, source: AngleSource },
    Cnot { control: usize, target: usize },
}

/// A single parameterized circuit: embedding, ansatz, per-wire readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PqcCircuit {
    pub qubits: usize,
    pub embedding: Embedding,
    pub ansatz: Ansatz,
    pub readout: Pauli,
}

impl PqcCircuit {
    /// The per-circuit unit of the parallel quantum dense layer: RX angle
    /// embedding, `depth` strongly-entangling repetitions, Pauli-Y readout.
    pub fn strongly_entangling(qubits: usize, depth: usize) -> Self {
        PqcCircuit {
            qubits,
            embedding: Embedding::AngleRx,
            ansatz: Ansatz::StronglyEntangling { depth },
            readout: Pauli::Y,
        }
    }

    /// The quanvolutional 2×2 kernel circuit: scaled RY embedding of four
    /// pixels, one trainable RY per wire, three chained CNOTs, ⟨σ_z⟩ readout.
    pub fn quanv_kernel() -> Self {
        PqcCircuit {
            qubits: 4,
            embedding: Embedding::AngleRyScaled,
            ansatz: Ansatz::QuanvChain,
            readout: Pauli::Z,
        }
    }

    /// Number of trainable angles: q·3·depth for the entangling ansatz
    /// (layout [layer][wire][axis]), q for the quanv chain.
    pub fn param_count(&self) -> usize {
        match self.ansatz {
            Ansatz::StronglyEntangling { depth } => self.qubits * 3 * depth,
            Ansatz::QuanvChain => self.qubits,
        }
    }

    pub fn input_count(&self) -> usize {
        self.qubits
    }

    pub fn output_count(&self) -> usize {
        self.qubits
    }

    pub fn observables(&self) -> Vec<Observable> {
        (0..self.qubits)
            .map(|wire| Observable { axis: self.readout, wire })
            .collect()
    }

    /// Expands the circuit into a concrete gate list for inputs `x` and
    /// parameters `theta`.
    pub fn build_gates(&self, x: &[f64], theta: &[f64]) -> Result<Vec<CircuitGate>> {
        let q = self.qubits;
        if x.len() != q {
            return Err(Error::Shape(format!(
                "expected {q} input features, got {}",
                x.len()
            )));
        }
        if theta.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} circuit parameters, got {}",
                self.param_count(),
                theta.len()
            )));
        }

        let mut gates = Vec::new();
        match self.embedding {
            Embedding::AngleRx => {
                for (w, &phi) in x.iter().enumerate() {
                    gates.push(CircuitGate::Rotation {
                        axis: Pauli::X,
                        wire: w,
                        angle: phi,
                        source: AngleSource::Input { index: w, scale: 1.0 },
                    });
                }
            }
            Embedding::AngleRyScaled => {
                for (w, &pixel) in x.iter().enumerate() {
                    gates.push(CircuitGate::Rotation {
                        axis: Pauli::Y,
                        wire: w,
                        angle: PI * pixel,
                        source: AngleSource::Input { index: w, scale: PI },
                    });
                }
            }
        }

        match self.ansatz {
            Ansatz::StronglyEntangling { depth } => {
                for layer in 0..depth {
                    for w in 0..q {
                        let base = (layer * q + w) * 3;
                        // ROT(α, β, γ) decomposed as RZ(α), RY(β), RZ(γ).
                        for (axis, k) in [(Pauli::Z, 0), (Pauli::Y, 1), (Pauli::Z, 2)] {
                            gates.push(CircuitGate::Rotation {
                                axis,
                                wire: w,
                                angle: theta[base + k],
                                source: AngleSource::Theta(base + k),
                            });
                        }
                    }
                    if q >= 2 {
                        for w in 0..q {
                            gates.push(CircuitGate::Cnot { control: w, target: (w + 1) % q });
                        }
                    }
                }
            }
            Ansatz::QuanvChain => {
                for w in 0..q {
                    gates.push(CircuitGate::Rotation {
                        axis: Pauli::Y,
                        wire: w,
                        angle: theta[w],
                        source: AngleSource::Theta(w),
                    });
                }
                for w in 0..q.saturating_sub(1) {
                    gates.push(CircuitGate::Cnot { control: w, target: w + 1 });
                }
            }
        }
        Ok(gates)
    }

    /// Runs the circuit and returns one expectation value per wire.
    pub fn run(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let gates = self.build_gates(x, theta)?;
        eval_gates(self.qubits, &gates, &self.observables())
    }
}

/// Applies a gate list to |0…0⟩ and measures the observables.
pub fn eval_gates(
    qubits: usize,
    gates: &[CircuitGate],
    observables: &[Observable],
) -> Result<Vec<f64>> {
    let mut state = StateVector::zero(qubits)?;
    apply_circuit_gates(&mut state, gates)?;
    observables.iter().map(|obs| state.expectation(obs)).collect()
}

pub(crate) fn apply_circuit_gates(state: &mut StateVector, gates: &[CircuitGate]) -> Result<()> {
    for gate in gates {
        match *gate {
            CircuitGate::Rotation { axis, wire, angle, .. } => {
                state.apply_rotation(axis, wire, angle)?;
            }
            CircuitGate::Cnot { control, target } => state.apply_cnot(control, target)?,
        }
    }
    Ok(())
}

/// Applies an angle embedding to an existing state.
pub fn embed_angles(state: &mut StateVector, features: &[f64], kind: Embedding) -> Result<()> {
    if features.len() != state.num_qubits() {
        return Err(Error::Shape(format!(
            "expected one feature per qubit ({}), got {}",
            state.num_qubits(),
            features.len()
        )));
    }
    for (w, &f) in features.iter().enumerate() {
        match kind {
            Embedding::AngleRx => state.apply_rotation(Pauli::X, w, f)?,
            Embedding::AngleRyScaled => state.apply_rotation(Pauli::Y, w, PI * f)?,
        }
    }
    Ok(())
}

/// One strongly-entangling repetition: ROT(α,β,γ) on every wire, then the
/// CNOT ring (skipped for a single qubit).
pub fn entangling_block(state: &mut StateVector, theta_layer: &[f64]) -> Result<()> {
    let q = state.num_qubits();
    if theta_layer.len() != 3 * q {
        return Err(Error::Shape(format!(
            "expected {} angles (3 per wire), got {}",
            3 * q,
            theta_layer.len()
        )));
    }
    for w in 0..q {
        let base = 3 * w;
        state.apply_rotation(Pauli::Z, w, theta_layer[base])?;
        state.apply_rotation(Pauli::Y, w, theta_layer[base + 1])?;
        state.apply_rotation(Pauli::Z, w, theta_layer[base + 2])?;
    }
    if q >= 2 {
        for w in 0..q {
            state.apply_cnot(w, (w + 1) % q)?;
        }
    }
    Ok(())
}

/// Shape of the parallel quantum dense layer: `circuits` independent copies
/// of a q-qubit, depth-`depth` strongly-entangling circuit. Total features
/// n = q·c, trainable parameters q·3·depth·c.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantumLayerShape {
    pub qubits: usize,
    pub depth: usize,
    pub circuits: usize,
}

impl QuantumLayerShape {
    pub fn features(&self) -> usize {
        self.qubits * self.circuits
    }

    /// q·3i·c.
    pub fn param_count(&self) -> usize {
        self.qubits * 3 * self.depth * self.circuits
    }

    pub fn circuit(&self) -> PqcCircuit {
        PqcCircuit::strongly_entangling(self.qubits, self.depth)
    }

    pub fn params_per_circuit(&self) -> usize {
        self.qubits * 3 * self.depth
    }
}

/// Number of trainable angles of a quantum layer shape.
pub fn quantum_param_count(shape: &QuantumLayerShape) -> usize {
    shape.param_count()
}

/// Evaluates the parallel quantum dense layer: `x` is split into c chunks of
/// q consecutive features, each chunk runs through its own circuit, and the
/// per-circuit expectation vectors are concatenated in chunk order.
///
/// θ layout is circuit-major: [circuit][layer][wire][axis].
pub fn eval_parallel_quantum_layer(
    shape: &QuantumLayerShape,
    x: &[f64],
    theta: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != shape.features() {
        return Err(Error::Shape(format!(
            "expected {} features (q·c), got {}",
            shape.features(),
            x.len()
        )));
    }
    if theta.len() != shape.param_count() {
        return Err(Error::Shape(format!(
            "expected {} parameters (q·3i·c), got {}",
            shape.param_count(),
            theta.len()
        )));
    }
    let circuit = shape.circuit();
    let q = shape.qubits;
    let per = shape.params_per_circuit();
    let mut out = Vec::with_capacity(x.len());
    for ci in 0..shape.circuits {
        let v = circuit.run(&x[ci * q..(ci + 1) * q], &theta[ci * per..(ci + 1) * per])?;
        out.extend_from_slice(&v);
    }
    Ok(out)
}

/// Runs the quanv kernel on one 2×2 patch (flattened row-major: top-left,
/// top-right, bottom-left, bottom-right). Output k is wire k's ⟨σ_z⟩.
pub fn eval_quanv_kernel(patch: &[f64], theta: &[f64]) -> Result<[f64; 4]> {
    let v = PqcCircuit::quanv_kernel().run(patch, theta)?;
    Ok([v[0], v[1], v[2], v[3]])
}

/// Four feature maps produced by [`quanvolve`], stored [channel][y][x].
#[derive(Debug, Clone, PartialEq)]
pub struct QuanvFeatureMaps {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl QuanvFeatureMaps {
    pub fn channels(&self) -> usize {
        4
    }

    pub fn at(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }
}

/// Output spatial size for 2×2 windows placed at multiples of `stride` that
/// stay fully inside the image.
pub fn quanv_output_dims(h: usize, w: usize, stride: usize) -> (usize, usize) {
    ((h - 2) / stride + 1, (w - 2) / stride + 1)
}

/// Slides the quanv kernel over an H×W image (row-major, pixels in [0, 1]).
pub fn quanvolve(
    image: &[f64],
    h: usize,
    w: usize,
    theta: &[f64],
    stride: usize,
) -> Result<QuanvFeatureMaps> {
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!(
            "image {h}×{w} is smaller than the 2×2 kernel"
        )));
    }
    if image.len() != h * w {
        return Err(Error::Shape(format!(
            "image buffer has {} pixels, expected {h}×{w}",
            image.len()
        )));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let (oh, ow) = quanv_output_dims(h, w, stride);
    let mut maps = QuanvFeatureMaps { height: oh, width: ow, data: vec![0.0; 4 * oh * ow] };
    for oy in 0..oh {
        for ox in 0..ow {
            let y = oy * stride;
            let x = ox * stride;
            let patch = [
                image[y * w + x],
                image[y * w + x + 1],
                image[(y + 1) * w + x],
                image[(y + 1) * w + x + 1],
            ];
            let out = eval_quanv_kernel(&patch, theta)?;
            for (ch, &v) in out.iter().enumerate() {
                maps.data[(ch * oh + oy) * ow + ox] = v;
            }
        }
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "expected {b}, got {a}");
    }

    #[test]
    fn zero_rx_embedding_leaves_ground_state() {
        let mut s = StateVector::zero(3).unwrap();
        embed_angles(&mut s, &[0.0; 3], Embedding::AngleRx).unwrap();
        assert_close(s.amplitudes()[0].re, 1.0, 1e-15);
    }

    #[test]
    fn scaled_ry_pixel_one_flips_wire() {
        let mut s = StateVector::zero(2).unwrap();
        embed_angles(&mut s, &[1.0, 0.0], Embedding::AngleRyScaled).unwrap();
        assert_close(s.expectation(&Observable::z(0)).unwrap(), -1.0, 1e-12);
        assert_close(s.expectation(&Observable::z(1)).unwrap(), 1.0, 1e-12);
    }

    #[test]
    fn rx_embedding_half_pi_reads_minus_one_in_y() {
        let mut s = StateVector::zero(1).unwrap();
        embed_angles(&mut s, &[FRAC_PI_2], Embedding::AngleRx).unwrap();
        assert_close(s.expectation(&Observable::y(0)).unwrap(), -1.0, 1e-12);
    }

    #[test]
    fn embedding_length_mismatch_is_shape_error() {
        let mut s = StateVector::zero(2).unwrap();
        assert!(matches!(
            embed_angles(&mut s, &[0.1], Embedding::AngleRx),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn entangling_block_with_zero_rotations_is_cnot_ring() {
        let mut rng = StdRng::seed_from_u64(1);
        let start = crate::qsim::testutil::random_state(2, &mut rng);
        let mut blocked = start.clone();
        entangling_block(&mut blocked, &[0.0; 6]).unwrap();
        let mut ringed = start.clone();
        ringed.apply_cnot(0, 1).unwrap();
        ringed.apply_cnot(1, 0).unwrap();
        for (a, b) in blocked.amplitudes().iter().zip(ringed.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn single_qubit_entangling_block_rotates_only() {
        let mut s = StateVector::zero(1).unwrap();
        let beta = 0.9;
        entangling_block(&mut s, &[0.0, beta, 0.0]).unwrap();
        assert_close(s.expectation(&Observable::z(0)).unwrap(), beta.cos(), 1e-12);
    }

    #[test]
    fn entangling_block_preserves_norm() {
        let mut rng = StdRng::seed_from_u64(5);
        let mut s = StateVector::zero(3).unwrap();
        let theta: Vec<f64> = (0..9).map(|_| rng.gen_range(-3.0..3.0)).collect();
        entangling_block(&mut s, &theta).unwrap();
        assert_close(s.squared_norm(), 1.0, 1e-12);
    }

    #[test]
    fn depth_zero_circuit_reads_embedding_directly() {
        let circuit = PqcCircuit::strongly_entangling(1, 0);
        let v = circuit.run(&[FRAC_PI_2], &[]).unwrap();
        assert_close(v[0], -1.0, 1e-12);
    }

    #[test]
    fn unrotated_ground_state_reads_plus_one_in_z() {
        let circuit = PqcCircuit {
            readout: Pauli::Z,
            ..PqcCircuit::strongly_entangling(3, 2)
        };
        let v = circuit.run(&[0.0; 3], &vec![0.0; circuit.param_count()]).unwrap();
        assert_eq!(v.len(), 3);
        for out in v {
            assert_close(out, 1.0, 1e-12);
        }
    }

    #[test]
    fn outputs_bounded_for_random_circuit() {
        let mut rng = StdRng::seed_from_u64(9);
        let circuit = PqcCircuit::strongly_entangling(5, 3);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let theta: Vec<f64> = (0..circuit.param_count()).map(|_| rng.gen_range(0.0..PI * 2.0)).collect();
        for v in circuit.run(&x, &theta).unwrap() {
            assert!(v.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn parallel_layer_of_ground_circuits_reads_zero_in_y() {
        let shape = QuantumLayerShape { qubits: 5, depth: 3, circuits: 4 };
        let v = eval_parallel_quantum_layer(
            &shape,
            &vec![0.0; shape.features()],
            &vec![0.0; shape.param_count()],
        )
        .unwrap();
        assert_eq!(v.len(), 20);
        for out in v {
            assert_close(out, 0.0, 1e-12);
        }
    }

    #[test]
    fn parallel_layer_chunks_are_independent() {
        let mut rng = StdRng::seed_from_u64(17);
        let shape = QuantumLayerShape { qubits: 2, depth: 1, circuits: 3 };
        let theta: Vec<f64> = (0..shape.param_count()).map(|_| rng.gen_range(0.0..6.28)).collect();
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = eval_parallel_quantum_layer(&shape, &x, &theta).unwrap();

        // Perturb chunk 1; only outputs 2..4 may change.
        let mut x2 = x.clone();
        x2[2] += 0.37;
        let changed = eval_parallel_quantum_layer(&shape, &x2, &theta).unwrap();
        for k in 0..6 {
            if (2..4).contains(&k) {
                continue;
            }
            assert_close(changed[k], base[k], 1e-15);
        }
        assert!((changed[2] - base[2]).abs() > 1e-6 || (changed[3] - base[3]).abs() > 1e-6);
    }

    #[test]
    fn single_circuit_layer_reduces_to_run() {
        let mut rng = StdRng::seed_from_u64(23);
        let shape = QuantumLayerShape { qubits: 3, depth: 2, circuits: 1 };
        let theta: Vec<f64> = (0..shape.param_count()).map(|_| rng.gen_range(0.0..6.28)).collect();
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let layer = eval_parallel_quantum_layer(&shape, &x, &theta).unwrap();
        let direct = shape.circuit().run(&x, &theta).unwrap();
        assert_eq!(layer, direct);
    }

    #[test]
    fn layer_rejects_indivisible_feature_vectors() {
        let shape = QuantumLayerShape { qubits: 5, depth: 3, circuits: 4 };
        assert!(matches!(
            eval_parallel_quantum_layer(&shape, &vec![0.0; 19], &vec![0.0; shape.param_count()]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn quanv_kernel_on_dark_patch() {
        let out = eval_quanv_kernel(&[0.0; 4], &[0.0; 4]).unwrap();
        for v in out {
            assert_close(v, 1.0, 1e-12);
        }
        // Wire 0 only sees its own rotation; downstream CNOTs leave ⟨Z₀⟩ alone.
        let theta = [0.8, 1.1, -0.4, 2.0];
        let out = eval_quanv_kernel(&[0.0; 4], &theta).unwrap();
        assert_close(out[0], theta[0].cos(), 1e-12);
    }

    #[test]
    fn quanv_outputs_bounded() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..10 {
            let patch: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..6.28)).collect();
            for v in eval_quanv_kernel(&patch, &theta).unwrap() {
                assert!(v.abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn quanvolve_shapes_match_stride_four() {
        let image = vec![0.0; 14 * 14];
        let maps = quanvolve(&image, 14, 14, &[0.0; 4], 4).unwrap();
        assert_eq!((maps.height, maps.width), (4, 4));
        assert_eq!(maps.data.len(), 4 * 4 * 4);
        for &v in &maps.data {
            assert_close(v, 1.0, 1e-12);
        }
    }

    #[test]
    fn quanvolve_degenerate_two_by_two() {
        let image = [0.2, 0.9, 0.4, 0.1];
        let theta = [0.3, -0.2, 1.0, 0.5];
        let maps = quanvolve(&image, 2, 2, &theta, 1).unwrap();
        assert_eq!((maps.height, maps.width), (1, 1));
        let direct = eval_quanv_kernel(&image, &theta).unwrap();
        for ch in 0..4 {
            assert_close(maps.at(ch, 0, 0), direct[ch], 1e-15);
        }
    }

    #[test]
    fn quanvolve_rejects_tiny_images() {
        assert!(matches!(
            quanvolve(&[0.0], 1, 1, &[0.0; 4], 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn quanvolve_output_is_window_local() {
        let mut rng = StdRng::seed_from_u64(41);
        let h = 6;
        let w = 6;
        let stride = 2;
        let image: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..6.28)).collect();
        let base = quanvolve(&image, h, w, &theta, stride).unwrap();

        // Perturb the pixel at (2, 3): windows containing it start at (2, 2).
        let mut image2 = image.clone();
        image2[2 * w + 3] = (image2[2 * w + 3] + 0.31).min(1.0);
        let changed = quanvolve(&image2, h, w, &theta, stride).unwrap();
        for ch in 0..4 {
            for oy in 0..base.height {
                for ox in 0..base.width {
                    let touched = oy * stride == 2 && ox * stride == 2;
                    if !touched {
                        assert_close(changed.at(ch, oy, ox), base.at(ch, oy, ox), 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(
            quantum_param_count(&QuantumLayerShape { qubits: 5, depth: 3, circuits: 4 }),
            180
        );
        assert_eq!(
            quantum_param_count(&QuantumLayerShape { qubits: 1, depth: 0, circuits: 1 }),
            0
        );
        assert_eq!(PqcCircuit::quanv_kernel().param_count(), 4);
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let mut rng = StdRng::seed_from_u64(53);
        let shape = QuantumLayerShape { qubits: 4, depth: 2, circuits: 2 };
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let theta: Vec<f64> = (0..shape.param_count()).map(|_| rng.gen_range(0.0..6.28)).collect();
        let a = eval_parallel_quantum_layer(&shape, &x, &theta).unwrap();
        let b = eval_parallel_quantum_layer(&shape, &x, &theta).unwrap();
        assert_eq!(a, b);
    }
}
