//! Fully connected conditioner networks with hand-written reverse mode.
//!
//! Hidden layers use `tanh`, the last layer is affine. The scale network of a
//! coupling layer additionally bounds its output to `(-cap, cap)` through
//! `cap * tanh(y / cap)`.

use rand::Rng;

use crate::error::{check_dim, Error, Result};

/// Output bound of the scale network.
pub const SCALE_CAP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputBound {
    None,
    /// `cap * tanh(y / cap)`.
    Tanh(f64),
}

/// Multilayer perceptron with all parameters in one flat buffer.
///
/// Layer `l` stores its weight matrix (`out × in`, row-major) followed by its
/// bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    widths: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    bound: OutputBound,
}

fn layout(widths: &[usize]) -> Result<(Vec<usize>, usize)> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Argument(format!(
            "network widths {widths:?} need at least two positive entries"
        )));
    }
    let mut offsets = Vec::with_capacity(widths.len() - 1);
    let mut total = 0;
    for w in widths.windows(2) {
        offsets.push(total);
        total += w[0] * w[1] + w[1];
    }
    Ok((offsets, total))
}

impl DenseNet {
    /// All-zero parameters.
    pub fn zeros(widths: &[usize], bound: OutputBound) -> Result<Self> {
        let (offsets, total) = layout(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            offsets,
            params: vec![0.0; total],
            bound,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(widths: &[usize], bound: OutputBound, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths, bound)?;
        for l in 0..net.n_layers() {
            let (fan_in, fan_out) = (net.widths[l], net.widths[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let start = net.offsets[l];
            for w in &mut net.params[start..start + fan_in * fan_out] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>, bound: OutputBound) -> Result<Self> {
        let (offsets, total) = layout(widths)?;
        check_dim(total, params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invariant("network parameters must be finite".into()));
        }
        Ok(Self {
            widths: widths.to_vec(),
            offsets,
            params,
            bound,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn bound(&self) -> OutputBound {
        self.bound
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Weight matrix and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.widths[l], self.widths[l + 1]);
        let start = self.offsets[l];
        let (w, rest) = self.params[start..start + i * o + o].split_at(i * o);
        (w, rest)
    }

    pub fn new_tape(&self) -> GradientTape {
        GradientTape {
            activations: self.widths.iter().map(|&w| vec![0.0; w]).collect(),
            delta: vec![0.0; self.widths.iter().copied().max().unwrap_or(0)],
            delta_prev: vec![0.0; self.widths.iter().copied().max().unwrap_or(0)],
        }
    }

    /// Evaluates the network, recording intermediates for [`DenseNet::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, GradientTape)> {
        let mut tape = self.new_tape();
        let out = self.forward_with(input, &mut tape)?.to_vec();
        Ok((out, tape))
    }

    /// Allocation-free forward pass into an existing tape.
    pub fn forward_with<'t>(&self, input: &[f64], tape: &'t mut GradientTape) -> Result<&'t [f64]> {
        check_dim(self.input_dim(), input.len())?;
        self.check_tape(tape)?;
        tape.activations[0].copy_from_slice(input);
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let n_in = self.widths[l];
            let (prev, next) = tape.activations.split_at_mut(l + 1);
            let a_in = &prev[l];
            let a_out = &mut next[0];
            for (r, (o, bias)) in a_out.iter_mut().zip(b).enumerate() {
                let acc = *bias + dot(&w[r * n_in..(r + 1) * n_in], a_in);
                *o = if l < last {
                    acc.tanh()
                } else {
                    match self.bound {
                        OutputBound::None => acc,
                        OutputBound::Tanh(cap) => cap * (acc / cap).tanh(),
                    }
                };
            }
            if a_out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow { layer: l });
            }
        }
        Ok(&tape.activations[self.n_layers()])
    }

    /// Adds the gradient of `<cotangent, output>` w.r.t. all parameters to
    /// `param_grads` and writes the gradient w.r.t. the input to `input_cotangent`.
    pub fn backward_into(
        &self,
        tape: &mut GradientTape,
        cotangent: &[f64],
        param_grads: &mut [f64],
        input_cotangent: &mut [f64],
    ) -> Result<()> {
        self.check_tape(tape)?;
        check_dim(self.output_dim(), cotangent.len())?;
        check_dim(self.n_params(), param_grads.len())?;
        check_dim(self.input_dim(), input_cotangent.len())?;

        let n_layers = self.n_layers();
        let out = &tape.activations[n_layers];
        let delta = &mut tape.delta;
        for (k, (d, c)) in delta.iter_mut().zip(cotangent).enumerate() {
            *d = match self.bound {
                OutputBound::None => *c,
                OutputBound::Tanh(cap) => {
                    let u = out[k] / cap;
                    c * (1.0 - u * u)
                }
            };
        }
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let a_in = &tape.activations[l];
            let start = self.offsets[l];
            let (gw, gb) = param_grads[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let (w, _) = self.layer(l);
            let delta_prev = &mut tape.delta_prev[..n_in];
            delta_prev.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..n_out {
                let d = tape.delta[r];
                if d == 0.0 {
                    continue;
                }
                gb[r] += d;
                let grow = &mut gw[r * n_in..(r + 1) * n_in];
                let wrow = &w[r * n_in..(r + 1) * n_in];
                for ((g, x), (dp, wi)) in grow
                    .iter_mut()
                    .zip(a_in.iter())
                    .zip(delta_prev.iter_mut().zip(wrow))
                {
                    *g += d * x;
                    *dp += d * wi;
                }
            }
            if l > 0 {
                // Through the tanh of the previous layer.
                for (dp, a) in delta_prev.iter_mut().zip(a_in.iter()) {
                    *dp *= 1.0 - a * a;
                }
            }
            std::mem::swap(&mut tape.delta, &mut tape.delta_prev);
        }
        input_cotangent.copy_from_slice(&tape.delta[..self.input_dim()]);
        Ok(())
    }

    /// Gradients of `<cotangent, output>` as fresh vectors:
    /// `(parameter gradients, input cotangent)`.
    pub fn backward(&self, tape: &GradientTape, cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = tape.clone();
        let mut grads = vec![0.0; self.n_params()];
        let mut input = vec![0.0; self.input_dim()];
        self.backward_into(&mut tape, cotangent, &mut grads, &mut input)?;
        Ok((grads, input))
    }

    fn check_tape(&self, tape: &GradientTape) -> Result<()> {
        let ok = tape.activations.len() == self.widths.len()
            && tape
                .activations
                .iter()
                .zip(&self.widths)
                .all(|(a, &w)| a.len() == w)
            && tape.delta.len() >= self.widths.iter().copied().max().unwrap_or(0);
        if ok {
            Ok(())
        } else {
            Err(Error::Invariant(
                "internal: gradient tape does not match network architecture".into(),
            ))
        }
    }
}

/// Dot product with four interleaved partial sums, which lets the compiler
/// vectorize the loop. The summation order is fixed, so results are still
/// bit-reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Per-layer activations of one forward pass plus backward scratch space.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl GradientTape {
    /// Activations, from the input (index 0) to the output.
    pub fn activations(&self) -> &[Vec<f64>] {
        &self.activations
    }
}
