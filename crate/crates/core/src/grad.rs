//! Gradient engines for the quantum layers.
//!
//! Three routes to the same Jacobian: the parameter-shift rule (two shifted
//! circuit executions per angle, exact for Pauli rotations and compatible
//! with hardware execution), adjoint differentiation (one forward pass plus
//! a reverse sweep over gates, simulator-only), and central finite
//! differences as an independent oracle. `quantum_layer_vjp` splices either
//! exact engine into classical reverse-mode backpropagation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pqc::{
    apply_circuit_gates, eval_gates, AngleSource, CircuitGate, PqcCircuit, QuantumLayerShape,
};
use crate::qsim::StateVector;

use std::f64::consts::FRAC_PI_2;

/// Which derivatives to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    Params,
    Inputs,
    Both,
}

impl Wrt {
    fn params(self) -> bool {
        matches!(self, Wrt::Params | Wrt::Both)
    }

    fn inputs(self) -> bool {
        matches!(self, Wrt::Inputs | Wrt::Both)
    }
}

/// Exact engines available for training and verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    ParamShift,
    Adjoint,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::ParamShift => "param-shift",
            Engine::Adjoint => "adjoint",
        }
    }
}

/// One differentiation job: a circuit, its operating point, what to
/// differentiate, and an optional upstream cotangent. With an upstream
/// vector the engines return a single VJP row instead of a full Jacobian.
#[derive(Debug, Clone, Copy)]
pub struct GradientRequest<'a> {
    pub circuit: &'a PqcCircuit,
    pub x: &'a [f64],
    pub theta: &'a [f64],
    pub wrt: Wrt,
    pub upstream: Option<&'a [f64]>,
}

impl<'a> GradientRequest<'a> {
    pub fn jacobian(circuit: &'a PqcCircuit, x: &'a [f64], theta: &'a [f64], wrt: Wrt) -> Self {
        GradientRequest { circuit, x, theta, wrt, upstream: None }
    }

    fn validate(&self) -> Result<()> {
        if let Some(upstream) = self.upstream {
            if upstream.len() != self.circuit.output_count() {
                return Err(Error::Shape(format!(
                    "upstream cotangent has {} entries, circuit has {} outputs",
                    upstream.len(),
                    self.circuit.output_count()
                )));
            }
        }
        Ok(())
    }

    /// Rows of the result: circuit outputs, or 1 when contracting with an
    /// upstream cotangent.
    fn rows(&self) -> usize {
        if self.upstream.is_some() {
            1
        } else {
            self.circuit.output_count()
        }
    }
}

/// Row-major outputs × parameters derivative matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    fn zeros(rows: usize, cols: usize) -> Self {
        Jacobian { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    fn add_at(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] += value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn max_abs_diff(&self, other: &Jacobian) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Engine output: a Jacobian per requested target (1×P rows in VJP mode).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Option<Jacobian>,
    pub inputs: Option<Jacobian>,
}

fn collapse(jac: &Jacobian, upstream: &[f64]) -> Jacobian {
    let mut out = Jacobian::zeros(1, jac.cols);
    for (r, &w) in upstream.iter().enumerate() {
        for c in 0..jac.cols {
            out.data[c] += w * jac.at(r, c);
        }
    }
    out
}

/// Parameter-shift rule: ∂v/∂φ = (v(φ+π/2) − v(φ−π/2))/2 per rotation angle
/// φ, with the embedding's d(angle)/d(feature) factor applied for input
/// gradients. Exact for Pauli rotations at any angle.
pub fn param_shift_grad(req: &GradientRequest) -> Result<Gradients> {
    req.validate()?;
    let gates = req.circuit.build_gates(req.x, req.theta)?;
    let observables = req.circuit.observables();
    let q = req.circuit.qubits;
    let m = observables.len();

    let mut params = req
        .wrt
        .params()
        .then(|| Jacobian::zeros(m, req.circuit.param_count()));
    let mut inputs = req
        .wrt
        .inputs()
        .then(|| Jacobian::zeros(m, req.circuit.input_count()));

    for (gi, gate) in gates.iter().enumerate() {
        let CircuitGate::Rotation { angle, source, .. } = *gate else {
            continue;
        };
        let (col, scale, target) = match source {
            AngleSource::Fixed => continue,
            AngleSource::Theta(k) if params.is_some() => (k, 1.0, true),
            AngleSource::Input { index, scale } if inputs.is_some() => (index, scale, false),
            _ => continue,
        };
        let mut shifted = gates.clone();
        set_angle(&mut shifted[gi], angle + FRAC_PI_2);
        let plus = eval_gates(q, &shifted, &observables)?;
        set_angle(&mut shifted[gi], angle - FRAC_PI_2);
        let minus = eval_gates(q, &shifted, &observables)?;
        let jac = if target { params.as_mut() } else { inputs.as_mut() };
        let jac = jac.expect("target jacobian requested");
        for row in 0..m {
            jac.add_at(row, col, scale * (plus[row] - minus[row]) / 2.0);
        }
    }

    finish(params, inputs, req)
}

fn set_angle(gate: &mut CircuitGate, value: f64) {
    if let CircuitGate::Rotation { angle, .. } = gate {
        *angle = value;
    }
}

/// Adjoint differentiation: one forward pass, then a reverse sweep that
/// un-applies each gate while accumulating Im⟨λ|G|ψ⟩ generator terms. Agrees
/// with the parameter-shift rule to near machine precision.
pub fn adjoint_grad(req: &GradientRequest) -> Result<Gradients> {
    req.validate()?;
    let gates = req.circuit.build_gates(req.x, req.theta)?;
    let observables = req.circuit.observables();
    let q = req.circuit.qubits;

    let mut ket = StateVector::zero(q)?;
    apply_circuit_gates(&mut ket, &gates)?;

    // One λ per Jacobian row: P_j|ψ⟩, or Σ_j w_j P_j|ψ⟩ in VJP mode.
    let mut lambdas: Vec<StateVector> = if let Some(upstream) = req.upstream {
        let mut lambda = ket.clone();
        lambda.scale(0.0.into());
        for (obs, &w) in observables.iter().zip(upstream) {
            let mut term = ket.clone();
            term.apply_pauli(obs.axis, obs.wire)?;
            term.scale(w.into());
            lambda.add_assign(&term);
        }
        vec![lambda]
    } else {
        observables
            .iter()
            .map(|obs| {
                let mut lambda = ket.clone();
                lambda.apply_pauli(obs.axis, obs.wire)?;
                Ok(lambda)
            })
            .collect::<Result<_>>()?
    };

    let rows = req.rows();
    let mut params = req
        .wrt
        .params()
        .then(|| Jacobian::zeros(rows, req.circuit.param_count()));
    let mut inputs = req
        .wrt
        .inputs()
        .then(|| Jacobian::zeros(rows, req.circuit.input_count()));

    for gate in gates.iter().rev() {
        match *gate {
            CircuitGate::Rotation { axis, wire, angle, source } => {
                let column = match source {
                    AngleSource::Fixed => None,
                    AngleSource::Theta(k) => params.is_some().then_some((k, 1.0, true)),
                    AngleSource::Input { index, scale } => {
                        inputs.is_some().then_some((index, scale, false))
                    }
                };
                if let Some((col, scale, is_param)) = column {
                    for (row, lambda) in lambdas.iter().enumerate() {
                        // d⟨λ|U(θ)|·⟩/dθ for U = exp(−iθG/2) reduces to Im⟨λ|G|ψ⟩.
                        let term = StateVector::pauli_inner(lambda, &ket, axis, wire).im;
                        let jac = if is_param { params.as_mut() } else { inputs.as_mut() };
                        jac.expect("target jacobian requested")
                            .add_at(row, col, scale * term);
                    }
                }
                ket.apply_rotation(axis, wire, -angle)?;
                for lambda in &mut lambdas {
                    lambda.apply_rotation(axis, wire, -angle)?;
                }
            }
            CircuitGate::Cnot { control, target } => {
                ket.apply_cnot(control, target)?;
                for lambda in &mut lambdas {
                    lambda.apply_cnot(control, target)?;
                }
            }
        }
    }

    Ok(Gradients { params, inputs })
}

/// Central-difference oracle: (f(φ+ε) − f(φ−ε)) / 2ε per parameter.
pub fn finite_diff_grad(req: &GradientRequest, eps: f64) -> Result<Gradients> {
    req.validate()?;
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference step must be in [1e-7, 1e-3], got {eps}"
        )));
    }
    let m = req.circuit.output_count();

    let mut params = req
        .wrt
        .params()
        .then(|| Jacobian::zeros(m, req.circuit.param_count()));
    let mut inputs = req
        .wrt
        .inputs()
        .then(|| Jacobian::zeros(m, req.circuit.input_count()));

    if let Some(jac) = params.as_mut() {
        let mut theta = req.theta.to_vec();
        for k in 0..theta.len() {
            let saved = theta[k];
            theta[k] = saved + eps;
            let plus = req.circuit.run(req.x, &theta)?;
            theta[k] = saved - eps;
            let minus = req.circuit.run(req.x, &theta)?;
            theta[k] = saved;
            for row in 0..m {
                jac.add_at(row, k, (plus[row] - minus[row]) / (2.0 * eps));
            }
        }
    }
    if let Some(jac) = inputs.as_mut() {
        let mut x = req.x.to_vec();
        for k in 0..x.len() {
            let saved = x[k];
            x[k] = saved + eps;
            let plus = req.circuit.run(&x, req.theta)?;
            x[k] = saved - eps;
            let minus = req.circuit.run(&x, req.theta)?;
            x[k] = saved;
            for row in 0..m {
                jac.add_at(row, k, (plus[row] - minus[row]) / (2.0 * eps));
            }
        }
    }

    finish(params, inputs, req)
}

fn finish(
    params: Option<Jacobian>,
    inputs: Option<Jacobian>,
    req: &GradientRequest,
) -> Result<Gradients> {
    if let Some(upstream) = req.upstream {
        Ok(Gradients {
            params: params.map(|j| collapse(&j, upstream)),
            inputs: inputs.map(|j| collapse(&j, upstream)),
        })
    } else {
        Ok(Gradients { params, inputs })
    }
}

/// Computes the gradient with the chosen engine.
pub fn engine_grad(engine: Engine, req: &GradientRequest) -> Result<Gradients> {
    match engine {
        Engine::ParamShift => param_shift_grad(req),
        Engine::Adjoint => adjoint_grad(req),
    }
}

/// Reverse-mode splice for the parallel quantum dense layer: contracts the
/// upstream cotangent with the layer's input and parameter Jacobians. The c
/// circuits are independent, so each chunk is handled (and may run) on its
/// own.
///
/// Returns `(input cotangent, parameter gradient)` with the layer's
/// circuit-major parameter layout.
pub fn quantum_layer_vjp(
    shape: &QuantumLayerShape,
    x: &[f64],
    theta: &[f64],
    upstream: &[f64],
    engine: Engine,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = shape.features();
    if x.len() != n || upstream.len() != n {
        return Err(Error::Shape(format!(
            "layer expects {n} features and {n} upstream entries, got {} and {}",
            x.len(),
            upstream.len()
        )));
    }
    if theta.len() != shape.param_count() {
        return Err(Error::Shape(format!(
            "expected {} layer parameters, got {}",
            shape.param_count(),
            theta.len()
        )));
    }
    let circuit = shape.circuit();
    let q = shape.qubits;
    let per = shape.params_per_circuit();

    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..shape.circuits)
        .into_par_iter()
        .map(|ci| {
            let req = GradientRequest {
                circuit: &circuit,
                x: &x[ci * q..(ci + 1) * q],
                theta: &theta[ci * per..(ci + 1) * per],
                wrt: Wrt::Both,
                upstream: Some(&upstream[ci * q..(ci + 1) * q]),
            };
            let grads = engine_grad(engine, &req)?;
            Ok((
                grads.inputs.expect("inputs requested").data,
                grads.params.expect("params requested").data,
            ))
        })
        .collect::<Result<_>>()?;

    let mut d_x = Vec::with_capacity(n);
    let mut d_theta = Vec::with_capacity(theta.len());
    for (dx, dt) in chunks {
        d_x.extend_from_slice(&dx);
        d_theta.extend_from_slice(&dt);
    }
    Ok((d_x, d_theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "expected {b}, got {a}");
    }

    fn random_point(circuit: &PqcCircuit, rng: &mut StdRng) -> (Vec<f64>, Vec<f64>) {
        let x = (0..circuit.input_count())
            .map(|_| {
                if circuit.embedding == crate::pqc::Embedding::AngleRyScaled {
                    rng.gen_range(0.05..0.95)
                } else {
                    rng.gen_range(-2.0..2.0)
                }
            })
            .collect();
        let theta = (0..circuit.param_count()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        (x, theta)
    }

    #[test]
    fn shift_rule_recovers_minus_sine() {
        // Wire 0 of the quanv kernel with a dark patch is f(θ₀) = cos θ₀.
        let circuit = PqcCircuit::quanv_kernel();
        for theta0 in [0.0, 0.4, 1.3, 2.9, -1.1] {
            let theta = [theta0, 0.2, 0.3, 0.4];
            let req = GradientRequest::jacobian(&circuit, &[0.0; 4], &theta, Wrt::Params);
            let grads = param_shift_grad(&req).unwrap();
            assert_close(grads.params.unwrap().at(0, 0), -theta0.sin(), 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_output_maximum() {
        let circuit = PqcCircuit::quanv_kernel();
        let req = GradientRequest::jacobian(&circuit, &[0.0; 4], &[0.0; 4], Wrt::Both);
        let grads = param_shift_grad(&req).unwrap();
        for &g in &grads.params.unwrap().data {
            assert_close(g, 0.0, 1e-12);
        }
        for &g in &grads.inputs.unwrap().data {
            assert_close(g, 0.0, 1e-12);
        }
    }

    #[test]
    fn zero_depth_circuit_has_empty_parameter_jacobian() {
        let circuit = PqcCircuit::strongly_entangling(2, 0);
        let req = GradientRequest::jacobian(&circuit, &[0.3, 0.4], &[], Wrt::Both);
        for grads in [param_shift_grad(&req).unwrap(), adjoint_grad(&req).unwrap()] {
            let params = grads.params.unwrap();
            assert_eq!(params.cols, 0);
            assert!(params.data.is_empty());
            assert_eq!(grads.inputs.unwrap().cols, 2);
        }
    }

    #[test]
    fn finite_difference_sanity_on_cosine() {
        let circuit = PqcCircuit::quanv_kernel();
        let theta = [std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0];
        let req = GradientRequest::jacobian(&circuit, &[0.0; 4], &theta, Wrt::Params);
        let grads = finite_diff_grad(&req, 1e-5).unwrap();
        assert_close(grads.params.unwrap().at(0, 0), -1.0, 1e-8);
    }

    #[test]
    fn finite_difference_converges_at_second_order() {
        // Error of the central difference of cos at a generic point shrinks
        // ~4× when ε is halved.
        let circuit = PqcCircuit::quanv_kernel();
        let theta0 = 1.0;
        let theta = [theta0, 0.0, 0.0, 0.0];
        let req = GradientRequest::jacobian(&circuit, &[0.0; 4], &theta, Wrt::Params);
        let exact = -theta0.sin();
        let err_1 = (finite_diff_grad(&req, 1e-3).unwrap().params.unwrap().at(0, 0) - exact).abs();
        let err_2 = (finite_diff_grad(&req, 5e-4).unwrap().params.unwrap().at(0, 0) - exact).abs();
        let ratio = err_1 / err_2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "expected ~4x error reduction, got {ratio} ({err_1} vs {err_2})"
        );
    }

    #[test]
    fn finite_difference_rejects_bad_steps() {
        let circuit = PqcCircuit::quanv_kernel();
        let req = GradientRequest::jacobian(&circuit, &[0.0; 4], &[0.0; 4], Wrt::Params);
        assert!(matches!(finite_diff_grad(&req, 1e-8), Err(Error::Config(_))));
        assert!(matches!(finite_diff_grad(&req, 1e-2), Err(Error::Config(_))));
    }

    #[test]
    fn engines_agree_on_random_circuits() {
        let mut rng = StdRng::seed_from_u64(71);
        for trial in 0..20 {
            let circuit = if trial % 2 == 0 {
                PqcCircuit::strongly_entangling(rng.gen_range(1..=4), rng.gen_range(1..=3))
            } else {
                PqcCircuit::quanv_kernel()
            };
            let (x, theta) = random_point(&circuit, &mut rng);
            let req = GradientRequest::jacobian(&circuit, &x, &theta, Wrt::Both);
            let shift = param_shift_grad(&req).unwrap();
            let adjoint = adjoint_grad(&req).unwrap();
            let fd = finite_diff_grad(&req, 1e-5).unwrap();

            let sp = shift.params.as_ref().unwrap();
            let sa = adjoint.params.as_ref().unwrap();
            assert!(sp.max_abs_diff(sa) < 1e-10, "params shift vs adjoint, trial {trial}");
            assert!(
                sp.max_abs_diff(fd.params.as_ref().unwrap()) < 1e-6,
                "params shift vs fd, trial {trial}"
            );

            let si = shift.inputs.as_ref().unwrap();
            let ai = adjoint.inputs.as_ref().unwrap();
            assert!(si.max_abs_diff(ai) < 1e-10, "inputs shift vs adjoint, trial {trial}");
            assert!(
                si.max_abs_diff(fd.inputs.as_ref().unwrap()) < 1e-6,
                "inputs shift vs fd, trial {trial}"
            );
        }
    }

    #[test]
    fn shift_rule_is_exact_at_large_angles() {
        let circuit = PqcCircuit::quanv_kernel();
        for theta0 in [250.0, -1000.0, 12345.6] {
            let theta = [theta0, 0.0, 0.0, 0.0];
            let req = GradientRequest::jacobian(&circuit, &[0.0; 4], &theta, Wrt::Params);
            let grads = param_shift_grad(&req).unwrap();
            assert_close(grads.params.unwrap().at(0, 0), -theta0.sin(), 1e-9);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_vjp() {
        let mut rng = StdRng::seed_from_u64(83);
        let circuit = PqcCircuit::strongly_entangling(3, 2);
        let (x, theta) = random_point(&circuit, &mut rng);
        let req = GradientRequest {
            circuit: &circuit,
            x: &x,
            theta: &theta,
            wrt: Wrt::Both,
            upstream: Some(&[0.0; 3]),
        };
        for grads in [param_shift_grad(&req).unwrap(), adjoint_grad(&req).unwrap()] {
            assert!(grads.params.unwrap().data.iter().all(|&g| g == 0.0));
            assert!(grads.inputs.unwrap().data.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn one_hot_upstream_selects_jacobian_row() {
        let mut rng = StdRng::seed_from_u64(97);
        let circuit = PqcCircuit::strongly_entangling(3, 1);
        let (x, theta) = random_point(&circuit, &mut rng);
        let full = adjoint_grad(&GradientRequest::jacobian(&circuit, &x, &theta, Wrt::Both)).unwrap();
        for j in 0..3 {
            let mut upstream = [0.0; 3];
            upstream[j] = 1.0;
            let req = GradientRequest {
                circuit: &circuit,
                x: &x,
                theta: &theta,
                wrt: Wrt::Both,
                upstream: Some(&upstream),
            };
            let vjp = adjoint_grad(&req).unwrap();
            for (a, b) in vjp.params.unwrap().data.iter().zip(full.params.as_ref().unwrap().row(j)) {
                assert_close(*a, *b, 1e-12);
            }
            for (a, b) in vjp.inputs.unwrap().data.iter().zip(full.inputs.as_ref().unwrap().row(j)) {
                assert_close(*a, *b, 1e-12);
            }
        }
    }

    #[test]
    fn vjp_is_linear_in_the_upstream() {
        let mut rng = StdRng::seed_from_u64(113);
        let shape = QuantumLayerShape { qubits: 3, depth: 2, circuits: 2 };
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let theta: Vec<f64> = (0..shape.param_count()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let u: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.9);
        let mixed: Vec<f64> = u.iter().zip(&w).map(|(ui, wi)| a * ui + b * wi).collect();

        for engine in [Engine::ParamShift, Engine::Adjoint] {
            let (dx_u, dt_u) = quantum_layer_vjp(&shape, &x, &theta, &u, engine).unwrap();
            let (dx_w, dt_w) = quantum_layer_vjp(&shape, &x, &theta, &w, engine).unwrap();
            let (dx_m, dt_m) = quantum_layer_vjp(&shape, &x, &theta, &mixed, engine).unwrap();
            for k in 0..dx_m.len() {
                assert_close(dx_m[k], a * dx_u[k] + b * dx_w[k], 1e-10);
            }
            for k in 0..dt_m.len() {
                assert_close(dt_m[k], a * dt_u[k] + b * dt_w[k], 1e-10);
            }
        }
    }

    #[test]
    fn quanv_jacobian_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(127);
        let circuit = PqcCircuit::quanv_kernel();
        let (x, theta) = random_point(&circuit, &mut rng);
        let req = GradientRequest::jacobian(&circuit, &x, &theta, Wrt::Both);
        let adj = adjoint_grad(&req).unwrap();
        let fd = finite_diff_grad(&req, 1e-5).unwrap();
        let p = adj.params.unwrap();
        assert_eq!((p.rows, p.cols), (4, 4));
        assert!(p.max_abs_diff(fd.params.as_ref().unwrap()) < 1e-6);
        assert!(adj.inputs.unwrap().max_abs_diff(fd.inputs.as_ref().unwrap()) < 1e-6);
    }

    #[test]
    fn upstream_length_is_validated() {
        let circuit = PqcCircuit::quanv_kernel();
        let req = GradientRequest {
            circuit: &circuit,
            x: &[0.0; 4],
            theta: &[0.0; 4],
            wrt: Wrt::Params,
            upstream: Some(&[1.0; 3]),
        };
        assert!(matches!(param_shift_grad(&req), Err(Error::Shape(_))));
        assert!(matches!(adjoint_grad(&req), Err(Error::Shape(_))));
    }
}
