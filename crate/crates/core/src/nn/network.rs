use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ops::{self, ConvGeom, Mode, PoolGeom};
use super::spec::{param_shapes, Activation, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Samples per gradient-accumulation chunk. Chunks are reduced in index order,
/// so results do not depend on how many worker threads run them.
const GRAD_CHUNK: usize = 4;

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

#[derive(Clone, Debug)]
enum Plan<T> {
    Identity,
    Rescale(T),
    Conv { geom: ConvGeom, param: usize, activation: Activation },
    Pool(PoolGeom),
    Dropout(f64),
    Dense { param: usize, activation: Activation },
}

#[derive(Clone, Debug)]
enum Aux {
    None,
    Argmax(Vec<u32>),
    Mask(Vec<bool>),
}

#[derive(Clone, Debug)]
struct SampleTrace<T> {
    /// `acts[0]` is the input; `acts[i + 1]` is the output of layer `i`.
    acts: Vec<Vec<T>>,
    aux: Vec<Aux>,
}

/// Cached activations, pooling winners and dropout masks from a training-mode
/// forward pass, consumed by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    network: u64,
    version: u64,
    samples: Vec<SampleTrace<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn batch_len(&self) -> usize {
        self.samples.len()
    }
}

/// Gradient handed to [`Network::backward`] from the loss.
#[derive(Clone, Copy, Debug)]
pub enum OutputGrad<'a, T> {
    /// With respect to the pre-softmax logits (the fused softmax + cross-entropy path).
    Logits(&'a Tensor<T>),
    /// With respect to the network output (the probabilities when the head is softmax).
    Output(&'a Tensor<T>),
}

/// A network spec bound to parameters and gradient buffers.
#[derive(Clone, Debug)]
pub struct Network<T: Scalar = f32> {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    params: Vec<Param<T>>,
    plans: Vec<Plan<T>>,
    mode: Mode,
    id: u64,
    version: u64,
}

/// Name and shape of every parameter tensor a `NetworkSpec` requires, in layer order.
pub fn param_slots(spec: &NetworkSpec) -> Result<Vec<(String, Vec<usize>)>> {
    let shapes = spec.infer_shapes()?;
    let names = spec.layer_names();
    let mut slots = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let input = if i == 0 { spec.input_shape.to_vec() } else { shapes[i - 1].clone() };
        if let Some((kernel, bias)) = param_shapes(layer, &input) {
            slots.push((format!("{}/kernel", names[i]), kernel));
            slots.push((format!("{}/bias", names[i]), bias));
        }
    }
    Ok(slots)
}

impl<T: Scalar> Network<T> {
    /// Glorot-uniform kernels and zero biases drawn from `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = BTreeMap::new();
        for (name, shape) in param_slots(&spec)? {
            let tensor = if name.ends_with("/bias") {
                Tensor::zeros(shape)?
            } else {
                let (fan_in, fan_out) = fans(&shape);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-limit..limit)))?
            };
            values.insert(name, tensor);
        }
        Self::from_params(spec, values)
    }

    /// Binds explicit parameter values. Every slot must be present with the
    /// exact shape; extra entries are rejected.
    pub fn from_params(spec: NetworkSpec, mut values: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let mut params = Vec::new();
        for (name, shape) in param_slots(&spec)? {
            let value = values
                .remove(&name)
                .ok_or_else(|| Error::Schema(format!("missing parameter {name}")))?;
            if value.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter {name} has shape {:?}, spec needs {shape:?}",
                    value.shape()
                )));
            }
            let grad = Tensor::zeros(shape)?;
            params.push(Param { name, value, grad });
        }
        if let Some(name) = values.keys().next() {
            return Err(Error::Schema(format!("unexpected parameter {name}")));
        }
        let plans = build_plans(&spec, &shapes);
        Ok(Self {
            spec,
            shapes,
            params,
            plans,
            mode: Mode::Infer,
            id: NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn output_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding traces.
    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        self.version += 1;
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s.iter().product()).unwrap_or(0)
    }

    /// Same parameters, converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let values = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.cast::<U>()))
            .collect();
        let mut net = Network::from_params(self.spec.clone(), values).expect("same spec and shapes");
        net.mode = self.mode;
        net
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let [h, w, c] = self.spec.input_shape;
        match *batch.shape() {
            [n, bh, bw, bc] if [bh, bw, bc] == [h, w, c] => Ok(n),
            ref s => Err(Error::shape(format!("batch must be [N, {h}, {w}, {c}], got {s:?}"))),
        }
    }

    /// Runs the batch through every layer in the current mode.
    ///
    /// Dropout masks for sample `i` come from stream `i` of a ChaCha generator
    /// seeded with `seed`, so they are independent of batch splitting and thread
    /// scheduling. In `Infer` mode the seed is unused and no trace is returned.
    pub fn forward(&self, batch: &Tensor<T>, seed: u64) -> Result<(Tensor<T>, Option<ForwardTrace<T>>)> {
        let n = self.check_batch(batch)?;
        let keep_trace = self.mode == Mode::Train;
        let results: Vec<(Vec<T>, Option<SampleTrace<T>>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                self.forward_sample(batch.row(i), &mut rng, keep_trace)
            })
            .collect();
        let classes = self.num_classes();
        let mut out = Vec::with_capacity(n * classes);
        let mut samples = Vec::with_capacity(if keep_trace { n } else { 0 });
        for (probs, trace) in results {
            out.extend_from_slice(&probs);
            samples.extend(trace);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.shapes.last().expect("validated spec has layers"));
        let trace = keep_trace.then(|| ForwardTrace {
            network: self.id,
            version: self.version,
            samples,
        });
        Ok((Tensor::new(shape, out)?, trace))
    }

    /// Inference-mode forward pass regardless of the network's current mode.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_batch(batch)?;
        let rows: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                self.forward_sample_mode(batch.row(i), &mut rng, false, Mode::Infer).0
            })
            .collect();
        let mut shape = vec![n];
        shape.extend_from_slice(self.shapes.last().expect("validated spec has layers"));
        Tensor::new(shape, rows.concat())
    }

    fn forward_sample(&self, input: &[T], rng: &mut ChaCha8Rng, keep: bool) -> (Vec<T>, Option<SampleTrace<T>>) {
        self.forward_sample_mode(input, rng, keep, self.mode)
    }

    fn forward_sample_mode(
        &self,
        input: &[T],
        rng: &mut ChaCha8Rng,
        keep: bool,
        mode: Mode,
    ) -> (Vec<T>, Option<SampleTrace<T>>) {
        let mut acts = Vec::with_capacity(if keep { self.plans.len() + 1 } else { 0 });
        let mut aux = Vec::with_capacity(if keep { self.plans.len() } else { 0 });
        let mut cur = input.to_vec();
        let mut cols = Vec::new();
        for plan in &self.plans {
            let mut extra = Aux::None;
            let next = match plan {
                Plan::Identity => None,
                Plan::Rescale(s) => {
                    let s = *s;
                    Some(cur.iter().map(|&v| v * s).collect())
                }
                Plan::Conv { geom, param, activation } => {
                    let (k, b) = (&self.params[*param], &self.params[*param + 1]);
                    let mut out = ops::conv_forward_slice(&cur, k.value.data(), b.value.data(), *geom, &mut cols);
                    apply_activation(&mut out, *activation);
                    Some(out)
                }
                Plan::Pool(geom) => {
                    let (out, argmax) = ops::maxpool_forward_slice(&cur, *geom);
                    extra = Aux::Argmax(argmax);
                    Some(out)
                }
                Plan::Dropout(rate) => {
                    let mut out = cur.clone();
                    let mask = ops::dropout_slice(&mut out, *rate, mode, rng);
                    if mode == Mode::Train {
                        extra = Aux::Mask(mask);
                    }
                    Some(out)
                }
                Plan::Dense { param, activation } => {
                    let (w, b) = (&self.params[*param], &self.params[*param + 1]);
                    let mut out = ops::dense_forward_slice(&cur, w.value.data(), b.value.data());
                    apply_activation(&mut out, *activation);
                    Some(out)
                }
            };
            let next = next.unwrap_or_else(|| cur.clone());
            if keep {
                acts.push(std::mem::replace(&mut cur, next));
                aux.push(extra);
            } else {
                cur = next;
            }
        }
        if keep {
            acts.push(cur.clone());
            (cur, Some(SampleTrace { acts, aux }))
        } else {
            (cur, None)
        }
    }

    /// Zeroes the gradient buffers, then back-propagates `grad` through the
    /// traced batch. Returns the gradient with respect to the input batch.
    pub fn backward(&mut self, trace: &ForwardTrace<T>, grad: OutputGrad<'_, T>) -> Result<Tensor<T>> {
        self.zero_grads();
        self.accumulate_backward(trace, grad)
    }

    /// Like [`backward`](Self::backward) but adds into the existing gradient
    /// buffers, so a large batch can be processed in pieces.
    pub fn accumulate_backward(&mut self, trace: &ForwardTrace<T>, grad: OutputGrad<'_, T>) -> Result<Tensor<T>> {
        if trace.network != self.id || trace.version != self.version {
            return Err(Error::State(
                "trace was recorded against different parameters; rerun forward".into(),
            ));
        }
        let (upstream, is_logits) = match grad {
            OutputGrad::Logits(t) => (t, true),
            OutputGrad::Output(t) => (t, false),
        };
        let n = trace.samples.len();
        let classes = self.num_classes();
        if upstream.len() != n * classes || upstream.batch_len() != n {
            return Err(Error::shape(format!(
                "output gradient has shape {:?}, expected [{n}, {classes}]",
                upstream.shape()
            )));
        }

        let this = &*self;
        let partials: Vec<(Vec<Vec<T>>, Vec<Vec<T>>)> = trace
            .samples
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(chunk_idx, chunk)| {
                let mut grads: Vec<Vec<T>> = this.params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
                let mut dinputs = Vec::with_capacity(chunk.len());
                let mut cols = Vec::new();
                for (j, sample) in chunk.iter().enumerate() {
                    let row = upstream.row(chunk_idx * GRAD_CHUNK + j);
                    dinputs.push(this.backward_sample(sample, row, is_logits, &mut grads, &mut cols));
                }
                (grads, dinputs)
            })
            .collect();

        let mut dinput = Vec::with_capacity(n * self.spec.input_shape.iter().product::<usize>());
        for (grads, dinputs) in partials {
            for (param, g) in self.params.iter_mut().zip(grads) {
                for (acc, v) in param.grad.data_mut().iter_mut().zip(g) {
                    *acc = *acc + v;
                }
            }
            for d in dinputs {
                dinput.extend(d);
            }
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&self.spec.input_shape);
        Tensor::new(shape, dinput)
    }

    fn backward_sample(
        &self,
        sample: &SampleTrace<T>,
        upstream: &[T],
        is_logits: bool,
        grads: &mut [Vec<T>],
        cols: &mut Vec<T>,
    ) -> Vec<T> {
        let last = self.plans.len() - 1;
        let mut g = upstream.to_vec();
        for (i, plan) in self.plans.iter().enumerate().rev() {
            let (input, output) = (&sample.acts[i], &sample.acts[i + 1]);
            g = match plan {
                Plan::Identity => g,
                Plan::Rescale(s) => {
                    let s = *s;
                    g.into_iter().map(|v| v * s).collect()
                }
                Plan::Dropout(rate) => {
                    if let Aux::Mask(mask) = &sample.aux[i] {
                        ops::dropout_backward_in_place(&mut g, mask, *rate);
                    }
                    g
                }
                Plan::Pool(_) => match &sample.aux[i] {
                    Aux::Argmax(argmax) => ops::maxpool_backward_slice(&g, argmax, input.len()),
                    _ => unreachable!("pooling layers always record argmax"),
                },
                Plan::Conv { geom, param, activation } => {
                    activation_backward(&mut g, output, *activation, i == last && is_logits);
                    let (dk, rest) = grads[*param..].split_at_mut(1);
                    let kernel = self.params[*param].value.data();
                    ops::conv_backward_slice(input, kernel, &g, *geom, &mut dk[0], &mut rest[0], cols, true)
                        .expect("input gradient requested")
                }
                Plan::Dense { param, activation } => {
                    activation_backward(&mut g, output, *activation, i == last && is_logits);
                    let (dw, rest) = grads[*param..].split_at_mut(1);
                    let weight = self.params[*param].value.data();
                    ops::dense_backward_slice(input, weight, &g, &mut dw[0], &mut rest[0])
                }
            };
        }
        g
    }
}

fn apply_activation<T: Scalar>(values: &mut [T], activation: Activation) {
    match activation {
        Activation::Linear => {}
        Activation::Relu => ops::relu_in_place(values),
        Activation::Softmax => ops::softmax_in_place(values),
    }
}

/// Converts an output gradient into a pre-activation gradient. When the
/// upstream gradient is already with respect to the logits, softmax is skipped.
fn activation_backward<T: Scalar>(grad: &mut Vec<T>, output: &[T], activation: Activation, grad_is_logits: bool) {
    match activation {
        Activation::Linear => {}
        Activation::Relu => ops::relu_backward_in_place(output, grad),
        Activation::Softmax if grad_is_logits => {}
        Activation::Softmax => *grad = ops::softmax_backward_row(output, grad),
    }
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match *shape {
        [kh, kw, cin, cout] => (kh * kw * cin, kh * kw * cout),
        [n_in, n_out] => (n_in, n_out),
        _ => (1, 1),
    }
}

fn build_plans<T: Scalar>(spec: &NetworkSpec, shapes: &[Vec<usize>]) -> Vec<Plan<T>> {
    let mut next_param = 0;
    spec.layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let input = if i == 0 { spec.input_shape.to_vec() } else { shapes[i - 1].clone() };
            match *layer {
                LayerSpec::Rescaling { scale } => Plan::Rescale(T::from_f64_lossy(scale)),
                LayerSpec::Augment | LayerSpec::Flatten => Plan::Identity,
                LayerSpec::Dropout { rate } => Plan::Dropout(rate),
                LayerSpec::MaxPool2D { pool, stride } => Plan::Pool(PoolGeom {
                    h: input[0],
                    w: input[1],
                    c: input[2],
                    ph: pool[0],
                    pw: pool[1],
                    stride,
                }),
                LayerSpec::Conv2D { filters, kernel, activation } => {
                    let param = next_param;
                    next_param += 2;
                    Plan::Conv {
                        geom: ConvGeom {
                            h: input[0],
                            w: input[1],
                            cin: input[2],
                            kh: kernel[0],
                            kw: kernel[1],
                            cout: filters,
                        },
                        param,
                        activation,
                    }
                }
                LayerSpec::Dense { activation, .. } => {
                    let param = next_param;
                    next_param += 2;
                    Plan::Dense { param, activation }
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Activation;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_shape: [8, 8, 1],
            layers: vec![
                LayerSpec::conv(2),
                LayerSpec::max_pool(),
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Flatten,
                LayerSpec::dense(3, Activation::Softmax),
            ],
        }
    }

    fn batch(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![n, 8, 8, 1], |_| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let net = Network::<f32>::new(NetworkSpec::canonical(), 1).unwrap();
        assert_eq!(net.num_params(), 879_623);
        let k = net.param("conv2d_1/kernel").unwrap();
        let limit = (6.0f32 / (9.0 + 9.0 * 32.0)).sqrt();
        assert!(k.value.data().iter().all(|v| v.abs() <= limit));
        assert!(net.param("dense_2/bias").unwrap().value.data().iter().all(|&v| v == 0.0));
        for p in net.params() {
            assert_eq!(p.value.shape(), p.grad.shape());
        }
    }

    #[test]
    fn infer_mode_has_no_trace() {
        let net = Network::<f64>::new(tiny_spec(), 0).unwrap();
        let (probs, trace) = net.forward(&batch(2, 1), 0).unwrap();
        assert!(trace.is_none());
        for i in 0..2 {
            assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_without_fresh_trace_is_state_error() {
        let mut net = Network::<f64>::new(tiny_spec(), 0).unwrap();
        net.set_mode(Mode::Train);
        let (probs, trace) = net.forward(&batch(1, 1), 0).unwrap();
        let trace = trace.unwrap();
        net.params_mut()[0].value.data_mut()[0] += 1.0;
        let err = net.backward(&trace, OutputGrad::Output(&probs)).unwrap_err();
        assert!(matches!(err, Error::State(_)));

        let other = Network::<f64>::new(tiny_spec(), 0).unwrap();
        let mut other = other;
        other.set_mode(Mode::Train);
        let (_, fresh) = net.forward(&batch(1, 1), 0).unwrap();
        assert!(other.backward(&fresh.unwrap(), OutputGrad::Output(&probs)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut net = Network::<f64>::new(tiny_spec(), 2).unwrap();
        net.set_mode(Mode::Train);
        let (probs, trace) = net.forward(&batch(3, 2), 5).unwrap();
        let zero = Tensor::zeros(probs.shape().to_vec()).unwrap();
        let dx = net.backward(&trace.unwrap(), OutputGrad::Logits(&zero)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        for p in net.params() {
            assert!(p.grad.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn batch_composition_does_not_change_outputs() {
        let net = Network::<f32>::new(NetworkSpec::canonical(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let one = Tensor::<f32>::from_fn(vec![1, 48, 48, 1], |_| rng.random_range(0.0..255.0)).unwrap();
        let two = Tensor::new(vec![2, 48, 48, 1], [one.data(), one.data()].concat()).unwrap();
        let p1 = net.predict(&one).unwrap();
        let p2 = net.predict(&two).unwrap();
        assert_eq!(p1.row(0), p2.row(0));
        assert_eq!(p1.row(0), p2.row(1));
    }

    #[test]
    fn wrong_batch_shape_rejected() {
        let net = Network::<f64>::new(tiny_spec(), 0).unwrap();
        let bad = Tensor::<f64>::zeros(vec![1, 7, 8, 1]).unwrap();
        assert!(matches!(net.predict(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn from_params_reports_missing_and_misshapen() {
        let net = Network::<f32>::new(tiny_spec(), 0).unwrap();
        let mut values: BTreeMap<String, Tensor<f32>> =
            net.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        let removed = values.remove("dense_1/bias").unwrap();
        assert!(matches!(Network::from_params(tiny_spec(), values.clone()), Err(Error::Schema(m)) if m.contains("dense_1/bias")));
        values.insert("dense_1/bias".into(), Tensor::zeros(vec![4]).unwrap());
        assert!(matches!(Network::from_params(tiny_spec(), values.clone()), Err(Error::Shape(_))));
        values.insert("dense_1/bias".into(), removed);
        assert!(Network::from_params(tiny_spec(), values).is_ok());
    }
}
