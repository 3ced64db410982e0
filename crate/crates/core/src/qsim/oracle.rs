//! Dense-matrix reference path for validating the stride-based gate kernels.
//!
//! Every gate is expanded into the full 2^q × 2^q unitary by explicit
//! Kronecker products and applied by matrix-vector multiplication. This is
//! deliberately naive and capped at 3 qubits; its only job is to be an
//! independent check on [`StateVector::apply_gate`].

use num_complex::Complex64;

use super::{rot_matrix, rotation_matrix, Gate, Mat2, Pauli, StateVector};
use crate::error::{Error, Result};

/// Oracle refuses registers larger than this.
pub const MAX_ORACLE_QUBITS: usize = 3;

const IDENTITY: Mat2 = [
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
    [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
];
const PAULI_X: Mat2 = [
    [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
];
// |0⟩⟨0| and |1⟩⟨1|.
const PROJ_0: Mat2 = [
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
    [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
];
const PROJ_1: Mat2 = [
    [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
    [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
];

/// Square complex matrix, row-major.
struct DenseMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl DenseMatrix {
    fn zeros(dim: usize) -> Self {
        DenseMatrix { dim, data: vec![Complex64::ZERO; dim * dim] }
    }

    fn from_mat2(m: &Mat2) -> Self {
        DenseMatrix {
            dim: 2,
            data: vec![m[0][0], m[0][1], m[1][0], m[1][1]],
        }
    }

    fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim + c]
    }

    /// Kronecker product self ⊗ other; `other` indexes the less significant bits.
    fn kron(&self, other: &DenseMatrix) -> DenseMatrix {
        let dim = self.dim * other.dim;
        let mut out = DenseMatrix::zeros(dim);
        for ra in 0..self.dim {
            for ca in 0..self.dim {
                let f = self.at(ra, ca);
                for rb in 0..other.dim {
                    for cb in 0..other.dim {
                        out.data[(ra * other.dim + rb) * dim + (ca * other.dim + cb)] =
                            f * other.at(rb, cb);
                    }
                }
            }
        }
        out
    }

    fn add_assign(&mut self, other: &DenseMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.at(r, c) * v[c]).sum())
            .collect()
    }
}

/// ⊗ of per-qubit factors, qubit 0 least significant.
fn kron_chain(factors: &[Mat2]) -> DenseMatrix {
    let mut acc = DenseMatrix::from_mat2(&factors[factors.len() - 1]);
    for w in (0..factors.len() - 1).rev() {
        acc = acc.kron(&DenseMatrix::from_mat2(&factors[w]));
    }
    acc
}

/// Expands one gate to its full 2^q × 2^q unitary.
fn gate_matrix(gate: &Gate, num_qubits: usize) -> DenseMatrix {
    let mut factors = vec![IDENTITY; num_qubits];
    match *gate {
        Gate::Rx { wire, angle } => factors[wire] = rotation_matrix(Pauli::X, angle),
        Gate::Ry { wire, angle } => factors[wire] = rotation_matrix(Pauli::Y, angle),
        Gate::Rz { wire, angle } => factors[wire] = rotation_matrix(Pauli::Z, angle),
        Gate::Rot { wire, angles } => factors[wire] = rot_matrix(angles),
        Gate::Cnot { control, target } => {
            // CNOT = |0⟩⟨0|_c ⊗ I_t + |1⟩⟨1|_c ⊗ X_t
            factors[control] = PROJ_0;
            let mut full = kron_chain(&factors);
            factors[control] = PROJ_1;
            factors[target] = PAULI_X;
            full.add_assign(&kron_chain(&factors));
            return full;
        }
    }
    kron_chain(&factors)
}

/// Applies a gate sequence through full-matrix construction.
///
/// Only meant for cross-checking the fast kernels, so registers larger than
/// [`MAX_ORACLE_QUBITS`] are refused.
pub fn apply_dense(state: &StateVector, gates: &[Gate]) -> Result<StateVector> {
    let q = state.num_qubits();
    if q > MAX_ORACLE_QUBITS {
        return Err(Error::Config(format!(
            "dense oracle is capped at {MAX_ORACLE_QUBITS} qubits, got {q}"
        )));
    }
    let mut amps = state.amplitudes().to_vec();
    for gate in gates {
        check_wires(gate, q)?;
        amps = gate_matrix(gate, q).matvec(&amps);
    }
    StateVector::from_amplitudes(amps)
}

fn check_wires(gate: &Gate, num_qubits: usize) -> Result<()> {
    let bad = |wire: usize| Error::Index(format!("wire {wire} out of range for {num_qubits} qubits"));
    match *gate {
        Gate::Rx { wire, .. } | Gate::Ry { wire, .. } | Gate::Rz { wire, .. } | Gate::Rot { wire, .. } => {
            if wire >= num_qubits {
                return Err(bad(wire));
            }
        }
        Gate::Cnot { control, target } => {
            if control >= num_qubits {
                return Err(bad(control));
            }
            if target >= num_qubits {
                return Err(bad(target));
            }
            if control == target {
                return Err(Error::Index(format!(
                    "CNOT control and target must be distinct, both are {control}"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::testutil::{random_gate, random_state};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn max_amp_diff(a: &StateVector, b: &StateVector) -> f64 {
        a.amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn empty_gate_list_is_identity() {
        let s = StateVector::zero(2).unwrap();
        let out = apply_dense(&s, &[]).unwrap();
        assert_eq!(out.amplitudes(), s.amplitudes());
    }

    #[test]
    fn single_rx_matches_kernel() {
        let gates = [Gate::Rx { wire: 0, angle: 0.3 }];
        let s = StateVector::zero(1).unwrap();
        let dense = apply_dense(&s, &gates).unwrap();
        let mut fast = s.clone();
        fast.apply_gates(&gates).unwrap();
        assert!(max_amp_diff(&dense, &fast) < 1e-12);
    }

    #[test]
    fn cnot_chain_matches_kernel_on_random_state() {
        let mut rng = StdRng::seed_from_u64(3);
        let s = random_state(3, &mut rng);
        let gates = [
            Gate::Cnot { control: 0, target: 1 },
            Gate::Cnot { control: 1, target: 2 },
            Gate::Cnot { control: 2, target: 0 },
        ];
        let dense = apply_dense(&s, &gates).unwrap();
        let mut fast = s.clone();
        fast.apply_gates(&gates).unwrap();
        assert!(max_amp_diff(&dense, &fast) < 1e-12);
    }

    #[test]
    fn refuses_large_registers() {
        let s = StateVector::zero(4).unwrap();
        assert!(matches!(apply_dense(&s, &[]), Err(Error::Config(_))));
    }

    proptest! {
        // Oracle equivalence over random circuits, q ≤ 3.
        #[test]
        fn kernel_matches_dense_oracle(seed in 0u64..300, q in 1usize..=3) {
            let mut rng = StdRng::seed_from_u64(seed);
            let gates: Vec<Gate> = (0..20).map(|_| random_gate(q, &mut rng)).collect();
            let start = random_state(q, &mut rng);
            let dense = apply_dense(&start, &gates).unwrap();
            let mut fast = start.clone();
            fast.apply_gates(&gates).unwrap();
            prop_assert!(max_amp_diff(&dense, &fast) < 1e-12);
        }
    }
}
