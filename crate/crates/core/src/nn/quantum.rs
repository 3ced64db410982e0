//! Quantum layers spliced into the classical stack: the parallel quantum
//! dense layer and the quanvolutional filter. Forward passes run the
//! statevector simulator; backward passes contract upstream cotangents
//! through a configurable gradient engine.

use rayon::prelude::*;

use super::layers::{Mode, NamedTensor, ParamBinding};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::grad::{engine_grad, quantum_layer_vjp, Engine, GradientRequest, Wrt};
use crate::pqc::{
    eval_parallel_quantum_layer, quanv_output_dims, quanvolve, PqcCircuit, QuantumLayerShape,
};

/// c parallel q-qubit circuits acting as a dense layer on n = q·c features.
#[derive(Debug, Clone)]
pub struct QuantumDense {
    pub shape: QuantumLayerShape,
    pub engine: Engine,
    pub theta: Tensor,
    pub grad_theta: Tensor,
    cached_input: Option<Tensor>,
}

impl QuantumDense {
    pub fn new(shape: QuantumLayerShape, engine: Engine) -> Self {
        let params = shape.param_count();
        QuantumDense {
            shape,
            engine,
            theta: Tensor::zeros(&[params]),
            grad_theta: Tensor::zeros(&[params]),
            cached_input: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, f) = input.dims2()?;
        let features = self.shape.features();
        if f != features {
            return Err(Error::Shape(format!(
                "quantum layer expects {features} features (q·c), got {f}"
            )));
        }
        let mut out = Tensor::zeros(&[n, features]);
        let theta = self.theta.data();
        let shape = self.shape;
        let results: Vec<Result<Vec<f64>>> = input
            .data()
            .par_chunks(features)
            .map(|x| eval_parallel_quantum_layer(&shape, x, theta))
            .collect();
        for (sample, row) in results.into_iter().enumerate() {
            out.data_mut()[sample * features..(sample + 1) * features].copy_from_slice(&row?);
        }
        if mode == Mode::Train {
            self.cached_input = Some(input.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cached_input.take().ok_or_else(|| {
            Error::Config("quantum layer: backward without cached forward pass".into())
        })?;
        let (n, features) = input.dims2()?;
        if grad_out.shape() != input.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match quantum layer output",
                grad_out.shape()
            )));
        }
        let theta = self.theta.data();
        let shape = self.shape;
        let engine = self.engine;
        let per_sample: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n)
            .into_par_iter()
            .map(|sample| {
                let x = &input.data()[sample * features..(sample + 1) * features];
                let upstream = &grad_out.data()[sample * features..(sample + 1) * features];
                quantum_layer_vjp(&shape, x, theta, upstream, engine)
            })
            .collect();

        let mut grad_in = Tensor::zeros(input.shape());
        for (sample, result) in per_sample.into_iter().enumerate() {
            let (dx, dtheta) = result?;
            grad_in.data_mut()[sample * features..(sample + 1) * features].copy_from_slice(&dx);
            for (acc, g) in self.grad_theta.data_mut().iter_mut().zip(dtheta) {
                *acc += g;
            }
        }
        Ok(grad_in)
    }

    pub fn bindings(&mut self, prefix: &str) -> Vec<ParamBinding<'_>> {
        vec![ParamBinding {
            name: format!("{prefix}.theta"),
            value: &mut self.theta,
            grad: &mut self.grad_theta,
        }]
    }

    pub fn tensors(&self, prefix: &str) -> Vec<NamedTensor<'_>> {
        vec![NamedTensor { name: format!("{prefix}.theta"), value: &self.theta, trainable: true }]
    }
}

/// Quanvolutional layer: the 4-qubit kernel slides over each single-channel
/// image and emits one channel per wire.
#[derive(Debug, Clone)]
pub struct Quanv {
    pub stride: usize,
    pub engine: Engine,
    pub theta: Tensor,
    pub grad_theta: Tensor,
    cached_input: Option<Tensor>,
}

impl Quanv {
    pub fn new(stride: usize, engine: Engine) -> Self {
        Quanv {
            stride,
            engine,
            theta: Tensor::zeros(&[4]),
            grad_theta: Tensor::zeros(&[4]),
            cached_input: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = input.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!(
                "quanvolution takes single-channel images, got {c} channels"
            )));
        }
        let (oh, ow) = quanv_output_dims(h, w, self.stride);
        let mut out = Tensor::zeros(&[n, 4, oh, ow]);
        let theta = self.theta.data();
        let stride = self.stride;
        let maps: Vec<Result<_>> = input
            .data()
            .par_chunks(h * w)
            .map(|img| quanvolve(img, h, w, theta, stride))
            .collect();
        for (sample, maps) in maps.into_iter().enumerate() {
            let maps = maps?;
            out.data_mut()[sample * 4 * oh * ow..(sample + 1) * 4 * oh * ow]
                .copy_from_slice(&maps.data);
        }
        if mode == Mode::Train {
            self.cached_input = Some(input.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cached_input.take().ok_or_else(|| {
            Error::Config("quanv layer: backward without cached forward pass".into())
        })?;
        let (n, _, h, w) = input.dims4()?;
        let (gn, gc, oh, ow) = grad_out.dims4()?;
        let (eh, ew) = quanv_output_dims(h, w, self.stride);
        if gn != n || gc != 4 || oh != eh || ow != ew {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match quanv output",
                grad_out.shape()
            )));
        }
        let circuit = PqcCircuit::quanv_kernel();
        let theta = self.theta.data();
        let stride = self.stride;
        let engine = self.engine;

        let per_sample: Vec<Result<(Vec<f64>, [f64; 4])>> = (0..n)
            .into_par_iter()
            .map(|sample| {
                let img = &input.data()[sample * h * w..(sample + 1) * h * w];
                let g = &grad_out.data()[sample * 4 * oh * ow..(sample + 1) * 4 * oh * ow];
                let mut d_img = vec![0.0; h * w];
                let mut d_theta = [0.0; 4];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let y = oy * stride;
                        let x = ox * stride;
                        let patch = [
                            img[y * w + x],
                            img[y * w + x + 1],
                            img[(y + 1) * w + x],
                            img[(y + 1) * w + x + 1],
                        ];
                        let upstream: Vec<f64> =
                            (0..4).map(|ch| g[(ch * oh + oy) * ow + ox]).collect();
                        let grads = engine_grad(
                            engine,
                            &GradientRequest {
                                circuit: &circuit,
                                x: &patch,
                                theta,
                                wrt: Wrt::Both,
                                upstream: Some(&upstream),
                            },
                        )?;
                        let dp = grads.inputs.expect("inputs requested");
                        d_img[y * w + x] += dp.data[0];
                        d_img[y * w + x + 1] += dp.data[1];
                        d_img[(y + 1) * w + x] += dp.data[2];
                        d_img[(y + 1) * w + x + 1] += dp.data[3];
                        for (acc, g) in d_theta.iter_mut().zip(&grads.params.expect("params requested").data)
                        {
                            *acc += g;
                        }
                    }
                }
                Ok((d_img, d_theta))
            })
            .collect();

        let mut grad_in = Tensor::zeros(input.shape());
        for (sample, result) in per_sample.into_iter().enumerate() {
            let (d_img, d_theta) = result?;
            grad_in.data_mut()[sample * h * w..(sample + 1) * h * w].copy_from_slice(&d_img);
            for (acc, g) in self.grad_theta.data_mut().iter_mut().zip(d_theta) {
                *acc += g;
            }
        }
        Ok(grad_in)
    }

    pub fn bindings(&mut self, prefix: &str) -> Vec<ParamBinding<'_>> {
        vec![ParamBinding {
            name: format!("{prefix}.theta"),
            value: &mut self.theta,
            grad: &mut self.grad_theta,
        }]
    }

    pub fn tensors(&self, prefix: &str) -> Vec<NamedTensor<'_>> {
        vec![NamedTensor { name: format!("{prefix}.theta"), value: &self.theta, trainable: true }]
    }
}
