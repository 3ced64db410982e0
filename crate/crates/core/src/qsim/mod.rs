//! Dense statevector simulation of few-qubit circuits.
//!
//! Amplitudes are stored little-endian: qubit 0 is the least significant bit
//! of the basis index, so |index 1⟩ on two qubits means qubit 0 is set.
//! Rotations follow the half-angle convention RP(θ) = exp(−iθP/2), which
//! keeps every rotation differentiable by the ±π/2 parameter-shift rule.

pub mod oracle;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register the dense simulator accepts.
pub const MAX_QUBITS: usize = 12;

/// Single-qubit Pauli axis. Doubles as rotation generator and measurement basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
}

/// A gate from the supported set {RX, RY, RZ, ROT, CNOT}.
///
/// `Rot(α, β, γ)` is the composition RZ(γ)·RY(β)·RZ(α): applying it to a
/// state is the same as applying RZ(α), then RY(β), then RZ(γ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Rx { wire: usize, angle: f64 },
    Ry { wire: usize, angle: f64 },
    Rz { wire: usize, angle: f64 },
    Rot { wire: usize, angles: [f64; 3] },
    Cnot { control: usize, target: usize },
}

/// Pauli measurement on a single wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observable {
    pub axis: Pauli,
    pub wire: usize,
}

impl Observable {
    pub fn y(wire: usize) -> Self {
        Observable { axis: Pauli::Y, wire }
    }

    pub fn z(wire: usize) -> Self {
        Observable { axis: Pauli::Z, wire }
    }
}

/// Pure q-qubit state as 2^q complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<Complex64>,
}

/// 2×2 complex matrix in row-major order.
pub(crate) type Mat2 = [[Complex64; 2]; 2];

pub(crate) fn rotation_matrix(axis: Pauli, angle: f64) -> Mat2 {
    let half = angle / 2.0;
    let c = half.cos();
    let s = half.sin();
    match axis {
        Pauli::X => [
            [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
            [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
        ],
        Pauli::Y => [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ],
        Pauli::Z => [
            [Complex64::new(c, -s), Complex64::ZERO],
            [Complex64::ZERO, Complex64::new(c, s)],
        ],
    }
}

pub(crate) fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[Complex64::ZERO; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

/// RZ(γ)·RY(β)·RZ(α) as one matrix.
pub(crate) fn rot_matrix(angles: [f64; 3]) -> Mat2 {
    let rz_a = rotation_matrix(Pauli::Z, angles[0]);
    let ry_b = rotation_matrix(Pauli::Y, angles[1]);
    let rz_g = rotation_matrix(Pauli::Z, angles[2]);
    mat2_mul(&rz_g, &mat2_mul(&ry_b, &rz_a))
}

impl StateVector {
    /// |0⟩^⊗q ground-state register.
    pub fn zero(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(Error::Config(format!(
                "qubit count must be in 1..={MAX_QUBITS}, got {num_qubits}"
            )));
        }
        let mut amps = vec![Complex64::ZERO; 1 << num_qubits];
        amps[0] = Complex64::ONE;
        Ok(StateVector { num_qubits, amps })
    }

    /// Builds a state from raw amplitudes; the length must be a power of two.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let num_qubits = amps.len().trailing_zeros() as usize;
        if amps.len() < 2 || amps.len() != 1 << num_qubits || num_qubits > MAX_QUBITS {
            return Err(Error::Config(format!(
                "amplitude vector length {} is not 2^q for q in 1..={MAX_QUBITS}",
                amps.len()
            )));
        }
        Ok(StateVector { num_qubits, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn squared_norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_wire(&self, wire: usize) -> Result<()> {
        if wire >= self.num_qubits {
            return Err(Error::Index(format!(
                "wire {wire} out of range for {} qubits",
                self.num_qubits
            )));
        }
        Ok(())
    }

    /// Applies a 2×2 unitary to one wire, in place.
    pub(crate) fn apply_single(&mut self, wire: usize, m: &Mat2) {
        let step = 1usize << wire;
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            for k in base..base + step {
                let a = self.amps[k];
                let b = self.amps[k + step];
                self.amps[k] = m[0][0] * a + m[0][1] * b;
                self.amps[k + step] = m[1][0] * a + m[1][1] * b;
            }
            base += step * 2;
        }
    }

    pub fn apply_rotation(&mut self, axis: Pauli, wire: usize, angle: f64) -> Result<()> {
        self.check_wire(wire)?;
        self.apply_single(wire, &rotation_matrix(axis, angle));
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_wire(control)?;
        self.check_wire(target)?;
        if control == target {
            return Err(Error::Index(format!(
                "CNOT control and target must be distinct, both are {control}"
            )));
        }
        let cbit = 1usize << control;
        let tbit = 1usize << target;
        for k in 0..self.amps.len() {
            if k & cbit != 0 && k & tbit == 0 {
                self.amps.swap(k, k | tbit);
            }
        }
        Ok(())
    }

    /// Applies one gate, in place.
    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        match *gate {
            Gate::Rx { wire, angle } => self.apply_rotation(Pauli::X, wire, angle),
            Gate::Ry { wire, angle } => self.apply_rotation(Pauli::Y, wire, angle),
            Gate::Rz { wire, angle } => self.apply_rotation(Pauli::Z, wire, angle),
            Gate::Rot { wire, angles } => {
                self.check_wire(wire)?;
                self.apply_single(wire, &rot_matrix(angles));
                Ok(())
            }
            Gate::Cnot { control, target } => self.apply_cnot(control, target),
        }
    }

    pub fn apply_gates(&mut self, gates: &[Gate]) -> Result<()> {
        for gate in gates {
            self.apply_gate(gate)?;
        }
        Ok(())
    }

    /// Applies a Pauli operator to one wire, in place.
    pub fn apply_pauli(&mut self, axis: Pauli, wire: usize) -> Result<()> {
        self.check_wire(wire)?;
        let step = 1usize << wire;
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            for k in base..base + step {
                let a = self.amps[k];
                let b = self.amps[k + step];
                match axis {
                    Pauli::X => {
                        self.amps[k] = b;
                        self.amps[k + step] = a;
                    }
                    Pauli::Y => {
                        self.amps[k] = Complex64::new(b.im, -b.re); // -i·b
                        self.amps[k + step] = Complex64::new(-a.im, a.re); // i·a
                    }
                    Pauli::Z => {
                        self.amps[k + step] = -b;
                    }
                }
            }
            base += step * 2;
        }
        Ok(())
    }

    /// ⟨ψ|P_wire|ψ⟩ for P ∈ {X, Y, Z}. Always real, in [−1, 1].
    pub fn expectation(&self, obs: &Observable) -> Result<f64> {
        self.check_wire(obs.wire)?;
        let step = 1usize << obs.wire;
        let dim = self.amps.len();
        let mut acc = 0.0;
        let mut base = 0;
        while base < dim {
            for k in base..base + step {
                let a = self.amps[k];
                let b = self.amps[k + step];
                acc += match obs.axis {
                    Pauli::X => 2.0 * (a.conj() * b).re,
                    Pauli::Y => 2.0 * (a.conj() * b).im,
                    Pauli::Z => a.norm_sqr() - b.norm_sqr(),
                };
            }
            base += step * 2;
        }
        Ok(acc)
    }

    /// ⟨bra|P_wire|ket⟩ without materializing P|ket⟩. Used by the adjoint
    /// differentiation sweep.
    pub(crate) fn pauli_inner(bra: &Self, ket: &Self, axis: Pauli, wire: usize) -> Complex64 {
        debug_assert_eq!(bra.num_qubits, ket.num_qubits);
        let step = 1usize << wire;
        let dim = ket.amps.len();
        let i = Complex64::new(0.0, 1.0);
        let mut acc = Complex64::ZERO;
        let mut base = 0;
        while base < dim {
            for k in base..base + step {
                let b0 = bra.amps[k].conj();
                let b1 = bra.amps[k + step].conj();
                let k0 = ket.amps[k];
                let k1 = ket.amps[k + step];
                acc += match axis {
                    Pauli::X => b0 * k1 + b1 * k0,
                    Pauli::Y => b0 * (-i * k1) + b1 * (i * k0),
                    Pauli::Z => b0 * k0 - b1 * k1,
                };
            }
            base += step * 2;
        }
        acc
    }

    /// ⟨self|other⟩.
    #[cfg(test)]
    pub(crate) fn inner(&self, other: &Self) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Scales amplitudes by a complex factor (used to build Σ wⱼPⱼ|ψ⟩ terms).
    pub(crate) fn scale(&mut self, factor: Complex64) {
        for a in &mut self.amps {
            *a *= factor;
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.amps.len(), other.amps.len());
        for (a, b) in self.amps.iter_mut().zip(&other.amps) {
            *a += b;
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::rngs::StdRng;
    use rand::Rng;
    use std::f64::consts::PI;

    pub(crate) fn random_state(q: usize, rng: &mut StdRng) -> StateVector {
        let dim = 1usize << q;
        let mut amps: Vec<Complex64> = (0..dim)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut amps {
            *a /= norm;
        }
        StateVector::from_amplitudes(amps).unwrap()
    }

    pub(crate) fn random_gate(q: usize, rng: &mut StdRng) -> Gate {
        let wire = rng.gen_range(0..q);
        match rng.gen_range(0..if q > 1 { 5 } else { 4 }) {
            0 => Gate::Rx { wire, angle: rng.gen_range(-PI..PI) },
            1 => Gate::Ry { wire, angle: rng.gen_range(-PI..PI) },
            2 => Gate::Rz { wire, angle: rng.gen_range(-PI..PI) },
            3 => Gate::Rot {
                wire,
                angles: [rng.gen_range(-PI..PI), rng.gen_range(-PI..PI), rng.gen_range(-PI..PI)],
            },
            _ => {
                let mut target = rng.gen_range(0..q);
                while target == wire {
                    target = rng.gen_range(0..q);
                }
                Gate::Cnot { control: wire, target }
            }
        }
    }
}
