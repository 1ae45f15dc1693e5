//! Affine coupling flows with an optional PCA head.
//!
//! In the generative direction a sample is drawn from a standard normal in
//! flow space, pushed through the coupling layers in order, de-standardized
//! and finally embedded into data space by the PCA map. Densities are
//! evaluated in the opposite direction. Because the PCA embedding is an
//! isometry its volume term vanishes, so the density of a point on the
//! principal subspace is the flow density of its latent coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::conditioner::{DenseNet, GradientTape, OutputBound, SCALE_CAP};
use crate::dataio::{Scaling, ScenarioSet};
use crate::error::{check_dim, Error, Result};
use crate::pca::PcaMap;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Which block a coupling layer keeps fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    /// Identity on the leading `ceil(D/2)` coordinates.
    Even,
    /// Identity on the trailing `floor(D/2)` coordinates.
    Odd,
}

impl Parity {
    pub fn for_layer(k: usize) -> Self {
        if k % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// Sizes of a coupling flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowArch {
    pub n_layers: usize,
    pub hidden_layers: usize,
    /// Width of the conditioner hidden layers; `None` means the flow dimension.
    pub hidden_width: Option<usize>,
}

impl Default for FlowArch {
    fn default() -> Self {
        Self {
            n_layers: 5,
            hidden_layers: 2,
            hidden_width: None,
        }
    }
}

/// One affine coupling layer.
///
/// Forward (generative): `x_id = z_id`, `x_tr = exp(s(z_id)) * z_tr + t(z_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    dim: usize,
    parity: Parity,
    s_net: DenseNet,
    t_net: DenseNet,
}

impl CouplingLayer {
    pub fn new(dim: usize, parity: Parity, s_net: DenseNet, t_net: DenseNet) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Argument(format!(
                "coupling layers need at least 2 dimensions, got {dim}"
            )));
        }
        let layer = Self {
            dim,
            parity,
            s_net,
            t_net,
        };
        let (n_id, n_tr) = (layer.identity().len(), layer.transformed().len());
        for net in [&layer.s_net, &layer.t_net] {
            if net.input_dim() != n_id || net.output_dim() != n_tr {
                return Err(Error::Invariant(format!(
                    "conditioner maps {} -> {}, layer needs {n_id} -> {n_tr}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
        Ok(layer)
    }

    /// Layer with Glorot-initialized conditioners.
    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        parity: Parity,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let (n_id, n_tr) = block_sizes(dim, parity);
        let mut widths = vec![n_id];
        widths.extend_from_slice(hidden);
        widths.push(n_tr);
        let s_net = DenseNet::glorot(&widths, OutputBound::Tanh(SCALE_CAP), rng)?;
        let t_net = DenseNet::glorot(&widths, OutputBound::None, rng)?;
        Self::new(dim, parity, s_net, t_net)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn s_net(&self) -> &DenseNet {
        &self.s_net
    }

    pub fn t_net(&self) -> &DenseNet {
        &self.t_net
    }

    pub(crate) fn nets_mut(&mut self) -> [&mut DenseNet; 2] {
        [&mut self.s_net, &mut self.t_net]
    }

    /// Coordinates passed through unchanged and fed to the conditioners.
    pub fn identity(&self) -> std::ops::Range<usize> {
        let split = self.dim - self.dim / 2;
        match self.parity {
            Parity::Even => 0..split,
            Parity::Odd => split..self.dim,
        }
    }

    /// Coordinates that receive the affine map.
    pub fn transformed(&self) -> std::ops::Range<usize> {
        let split = self.dim - self.dim / 2;
        match self.parity {
            Parity::Even => split..self.dim,
            Parity::Odd => 0..split,
        }
    }

    /// Returns `(x, log|det J|)`.
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_dim(self.dim, z.len())?;
        let cond = &z[self.identity()];
        let (s, _) = self.s_net.forward(cond)?;
        let (t, _) = self.t_net.forward(cond)?;
        let mut x = z.to_vec();
        for (i, xi) in x[self.transformed()].iter_mut().enumerate() {
            *xi = s[i].exp() * *xi + t[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("coupling forward produced a non-finite value".into()));
        }
        Ok((x, s.iter().sum()))
    }

    /// Returns `(z, log|det J_inverse|)`.
    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_dim(self.dim, x.len())?;
        let cond = &x[self.identity()];
        let (s, _) = self.s_net.forward(cond)?;
        let (t, _) = self.t_net.forward(cond)?;
        let mut z = x.to_vec();
        for (i, zi) in z[self.transformed()].iter_mut().enumerate() {
            *zi = (*zi - t[i]) * (-s[i]).exp();
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("coupling inverse produced a non-finite value".into()));
        }
        Ok((z, -s.iter().sum::<f64>()))
    }
}

fn block_sizes(dim: usize, parity: Parity) -> (usize, usize) {
    let (hi, lo) = (dim - dim / 2, dim / 2);
    match parity {
        Parity::Even => (hi, lo),
        Parity::Odd => (lo, hi),
    }
}

/// Fixed per-dimension affine normalization `u = (v - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

/// Scales below `MIN_RELATIVE_SCALE * max_scale` are raised to that floor.
pub const MIN_RELATIVE_SCALE: f64 = 1e-2;

impl Standardizer {
    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        check_dim(shift.len(), scale.len())?;
        if shift.is_empty() {
            return Err(Error::Invariant("standardizer has no dimensions".into()));
        }
        if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) || shift.iter().any(|s| !s.is_finite())
        {
            return Err(Error::Invariant(
                "standardizer scales must be positive and finite".into(),
            ));
        }
        Ok(Self { shift, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Column means and sample standard deviations of row-major data.
    /// Degenerate columns get the floor `MIN_RELATIVE_SCALE * max std`.
    pub fn fit(data: &[f64], dim: usize) -> Result<Self> {
        let n = data.len() / dim;
        if n < 2 {
            return Err(Error::Argument("standardizer needs at least 2 rows".into()));
        }
        let mut shift = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for (m, v) in shift.iter_mut().zip(row) {
                *m += v;
            }
        }
        shift.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&shift) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / (n - 1) as f64).sqrt()).collect();
        let top = std.iter().copied().fold(0.0, f64::max);
        let floor = if top > 0.0 { MIN_RELATIVE_SCALE * top } else { 1.0 };
        let scale = std.iter().map(|&s| s.max(floor)).collect();
        Self::new(shift, scale)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// `log|det|` of the standardizing direction: `-sum(ln scale)`.
    pub fn log_det(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }

    pub fn apply(&self, v: &mut [f64]) {
        for ((x, m), s) in v.iter_mut().zip(&self.shift).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }

    pub fn invert(&self, u: &mut [f64]) {
        for ((x, m), s) in u.iter_mut().zip(&self.shift).zip(&self.scale) {
            *x = *x * s + m;
        }
    }
}

/// Standard-normal base, standardizer, coupling stack and optional PCA head.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pca: Option<PcaMap>,
    standardizer: Standardizer,
    layers: Vec<CouplingLayer>,
}

impl FlowModel {
    pub fn from_parts(
        pca: Option<PcaMap>,
        standardizer: Standardizer,
        layers: Vec<CouplingLayer>,
    ) -> Result<Self> {
        let flow_dim = standardizer.dim();
        if let Some(p) = &pca {
            if p.latent_dim() != flow_dim {
                return Err(Error::Invariant(format!(
                    "PCA latent dimension {} differs from flow dimension {flow_dim}",
                    p.latent_dim()
                )));
            }
        }
        if flow_dim >= 2 && layers.is_empty() {
            return Err(Error::Invariant("flow needs at least one coupling layer".into()));
        }
        if flow_dim < 2 && !layers.is_empty() {
            return Err(Error::Invariant(
                "a one-dimensional flow cannot hold coupling layers".into(),
            ));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.dim() != flow_dim || layer.parity() != Parity::for_layer(k) {
                return Err(Error::Invariant(format!(
                    "layer {k} has dimension {} and parity {:?}; expected {flow_dim} and {:?}",
                    layer.dim(),
                    layer.parity(),
                    Parity::for_layer(k)
                )));
            }
        }
        Ok(Self {
            pca,
            standardizer,
            layers,
        })
    }

    /// Fresh model with random conditioners.
    ///
    /// A one-dimensional flow space has no room for coupling layers; the
    /// model is then the standardizer alone, i.e. a Gaussian fit.
    pub fn new<R: Rng + ?Sized>(
        pca: Option<PcaMap>,
        standardizer: Standardizer,
        arch: &FlowArch,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = standardizer.dim();
        if arch.n_layers == 0 {
            return Err(Error::Argument("at least one coupling layer is required".into()));
        }
        let layers = if dim < 2 {
            log::warn!("flow dimension is 1: coupling layers cannot act, fitting a Gaussian only");
            Vec::new()
        } else {
            let hidden = vec![arch.hidden_width.unwrap_or(dim); arch.hidden_layers];
            (0..arch.n_layers)
                .map(|k| CouplingLayer::random(dim, Parity::for_layer(k), &hidden, rng))
                .collect::<Result<_>>()?
        };
        Self::from_parts(pca, standardizer, layers)
    }

    pub fn pca(&self) -> Option<&PcaMap> {
        self.pca.as_ref()
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    /// Dimension of the data space.
    pub fn data_dim(&self) -> usize {
        self.pca.as_ref().map_or(self.flow_dim(), PcaMap::dim)
    }

    /// Dimension the coupling layers act in.
    pub fn flow_dim(&self) -> usize {
        self.standardizer.dim()
    }

    /// Maps a data point to standardized flow coordinates.
    pub fn to_flow_space(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.data_dim(), x.len())?;
        let mut u = match &self.pca {
            Some(p) => p.project(x)?,
            None => x.to_vec(),
        };
        self.standardizer.apply(&mut u);
        Ok(u)
    }

    /// Runs the coupling stack forward from base space. Returns the flow-space
    /// point and the summed log-determinant.
    pub fn flow_forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut x = z.to_vec();
        let mut logdet = 0.0;
        for layer in &self.layers {
            let (next, ld) = layer.forward(&x)?;
            x = next;
            logdet += ld;
        }
        Ok((x, logdet))
    }

    /// Inverse of [`FlowModel::flow_forward`].
    pub fn flow_inverse(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut z = u.to_vec();
        let mut logdet = 0.0;
        for layer in self.layers.iter().rev() {
            let (next, ld) = layer.inverse(&z)?;
            z = next;
            logdet += ld;
        }
        Ok((z, logdet))
    }

    /// Log-density of a data point.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("log_prob input is not finite".into()));
        }
        let u = self.to_flow_space(x)?;
        let (z, logdet) = self.flow_inverse(&u)?;
        let lp = standard_normal_log_density(&z) + logdet + self.standardizer.log_det();
        if !lp.is_finite() {
            return Err(Error::Numerical("log-density is not finite".into()));
        }
        Ok(lp)
    }

    /// Log-densities of every row, evaluated in parallel.
    pub fn log_prob_rows(&self, set: &ScenarioSet) -> Result<Vec<f64>> {
        check_dim(self.data_dim(), set.period_length())?;
        let rows: Vec<&[f64]> = set.rows().collect();
        rows.par_iter().map(|r| self.log_prob(r)).collect()
    }

    /// Log-density of a point already in standardized flow coordinates,
    /// excluding the standardizer term.
    pub(crate) fn flow_space_log_prob(&self, u: &[f64]) -> Result<f64> {
        let (z, logdet) = self.flow_inverse(u)?;
        Ok(standard_normal_log_density(&z) + logdet)
    }

    /// Maps a base-space point to data space.
    pub fn generate(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.flow_dim(), z.len())?;
        let (mut u, _) = self.flow_forward(z)?;
        self.standardizer.invert(&mut u);
        match &self.pca {
            Some(p) => p.embed(&u),
            None => Ok(u),
        }
    }

    /// Draws `n` scenarios from the model with a seeded generator.
    pub fn sample(&self, n: usize, seed: u64, interval_minutes: u32) -> Result<ScenarioSet> {
        if n == 0 {
            return Err(Error::Argument("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.flow_dim();
        let base: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        let rows: Vec<Vec<f64>> = base
            .par_chunks_exact(dim)
            .map(|z| self.generate(z))
            .collect::<Result<_>>()?;
        ScenarioSet::new(rows.concat(), self.data_dim(), interval_minutes, Scaling::None)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.s_net().n_params() + l.t_net().n_params())
            .sum()
    }

    /// All conditioner parameters, layer by layer, scale net before shift net.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.s_net().params());
            out.extend_from_slice(l.t_net().params());
        }
        out
    }

    /// Inverse of [`FlowModel::params_flat`].
    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.n_params(), params.len())?;
        let mut offset = 0;
        for layer in &mut self.layers {
            for net in layer.nets_mut() {
                let n = net.n_params();
                net.params_mut().copy_from_slice(&params[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    pub(crate) fn row_workspace(&self) -> RowWorkspace {
        let dim = self.flow_dim();
        RowWorkspace {
            states: vec![vec![0.0; dim]; self.layers.len() + 1],
            s_tapes: self.layers.iter().map(|l| l.s_net().new_tape()).collect(),
            t_tapes: self.layers.iter().map(|l| l.t_net().new_tape()).collect(),
            grad: vec![0.0; dim],
            grad_next: vec![0.0; dim],
            cot_s: vec![0.0; dim],
            cot_t: vec![0.0; dim],
            cond_grad: vec![0.0; dim],
        }
    }

    /// Negative log-density of one row in flow-space coordinates, excluding
    /// the constant standardizer term, with its parameter gradient added to `grads` (layout of [`FlowModel::params_flat`]).
    pub(crate) fn row_nll_and_grad(
        &self,
        u: &[f64],
        ws: &mut RowWorkspace,
        grads: &mut [f64],
    ) -> Result<f64> {
        let k_layers = self.layers.len();
        // states[k + 1] is the input of layer k's inverse; states[0] is the base point.
        ws.states[k_layers].copy_from_slice(u);
        let mut logdet = 0.0;
        for k in (0..k_layers).rev() {
            let layer = &self.layers[k];
            let (lower, upper) = ws.states.split_at_mut(k + 1);
            let x = &upper[0];
            let z = &mut lower[k];
            z.copy_from_slice(x);
            let cond = &x[layer.identity()];
            let s = layer.s_net.forward_with(cond, &mut ws.s_tapes[k])?;
            let t = layer.t_net.forward_with(cond, &mut ws.t_tapes[k])?;
            for (i, zi) in z[layer.transformed()].iter_mut().enumerate() {
                *zi = (*zi - t[i]) * (-s[i]).exp();
            }
            logdet -= s.iter().sum::<f64>();
        }
        let z = &ws.states[0];
        let nll = -(standard_normal_log_density(z) + logdet);
        if !nll.is_finite() {
            return Err(Error::Numerical("non-finite negative log-likelihood".into()));
        }

        ws.grad.copy_from_slice(z);
        let mut offset = 0;
        for k in 0..k_layers {
            let layer = &self.layers[k];
            let id = layer.identity();
            let tr = layer.transformed();
            let n_tr = tr.len();
            let z_tr = &ws.states[k][tr.clone()];
            let s = &ws.s_tapes[k].activations()[layer.s_net.n_layers()];
            for i in 0..n_tr {
                let gz = ws.grad[tr.start + i];
                let e = (-s[i]).exp();
                ws.cot_s[i] = 1.0 - gz * z_tr[i];
                ws.cot_t[i] = -gz * e;
                ws.grad_next[tr.start + i] = gz * e;
            }
            let ns = layer.s_net.n_params();
            let nt = layer.t_net.n_params();
            let n_id = id.len();
            layer.s_net.backward_into(
                &mut ws.s_tapes[k],
                &ws.cot_s[..n_tr],
                &mut grads[offset..offset + ns],
                &mut ws.cond_grad[..n_id],
            )?;
            for (i, g) in id.clone().zip(&ws.cond_grad[..n_id]) {
                ws.grad_next[i] = ws.grad[i] + g;
            }
            layer.t_net.backward_into(
                &mut ws.t_tapes[k],
                &ws.cot_t[..n_tr],
                &mut grads[offset + ns..offset + ns + nt],
                &mut ws.cond_grad[..n_id],
            )?;
            for (i, g) in id.zip(&ws.cond_grad[..n_id]) {
                ws.grad_next[i] += g;
            }
            offset += ns + nt;
            std::mem::swap(&mut ws.grad, &mut ws.grad_next);
        }
        Ok(nll)
    }
}

/// Scratch buffers for one row of [`FlowModel::row_nll_and_grad`].
#[derive(Debug, Clone)]
pub(crate) struct RowWorkspace {
    states: Vec<Vec<f64>>,
    s_tapes: Vec<GradientTape>,
    t_tapes: Vec<GradientTape>,
    grad: Vec<f64>,
    grad_next: Vec<f64>,
    cot_s: Vec<f64>,
    cot_t: Vec<f64>,
    cond_grad: Vec<f64>,
}

/// `log N(z; 0, I)`.
pub fn standard_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - HALF_LN_2PI * z.len() as f64
}

/// Correction term of the injective change of variables,
/// `-0.5 * log|det(V_P^T V_P)|`; zero for an isometric embedding.
pub fn injective_volume_correction(pca: &PcaMap) -> f64 {
    -0.5 * crate::linalg::log_abs_det(&pca.gram(), pca.latent_dim())
}

/// Log-density through the general injective change of variables, with the
/// volume correction evaluated explicitly instead of dropped.
pub fn log_prob_with_volume_term(model: &FlowModel, x: &[f64]) -> Result<f64> {
    let base = model.log_prob(x)?;
    Ok(match model.pca() {
        Some(p) => base + injective_volume_correction(p),
        None => base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pca::fit_matrix;
    use std::f64::consts::PI;
    use crate::pca::Truncation;

    fn constant_net(n_in: usize, value: f64, bound: OutputBound) -> DenseNet {
        // Zero weights, bias carries the constant.
        let mut params = vec![0.0; n_in];
        params.push(value);
        DenseNet::from_params(&[n_in, 1], params, bound).unwrap()
    }

    fn zero_layer(dim: usize, parity: Parity) -> CouplingLayer {
        let (a, b) = block_sizes(dim, parity);
        CouplingLayer::new(
            dim,
            parity,
            DenseNet::zeros(&[a, 3, b], OutputBound::Tanh(SCALE_CAP)).unwrap(),
            DenseNet::zeros(&[a, 3, b], OutputBound::None).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn half_log_two_pi_constant() {
        assert!((HALF_LN_2PI - 0.5 * (2.0 * PI).ln()).abs() < 1e-16);
    }

    #[test]
    fn block_sizes_cover_all_coordinates() {
        let even = zero_layer(5, Parity::Even);
        let odd = zero_layer(5, Parity::Odd);
        assert_eq!((even.identity(), even.transformed()), (0..3, 3..5));
        assert_eq!((odd.identity(), odd.transformed()), (3..5, 0..3));
    }

    #[test]
    fn zero_conditioners_are_identity() {
        let layer = zero_layer(4, Parity::Even);
        let (x, ld) = layer.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.0, 0.5]);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn constant_conditioner_hand_example() {
        // s = ln 2 (unbounded so the constant is exact), t = 1.
        let layer = CouplingLayer::new(
            2,
            Parity::Even,
            constant_net(1, 2f64.ln(), OutputBound::None),
            constant_net(1, 1.0, OutputBound::None),
        )
        .unwrap();
        let (x, ld) = layer.forward(&[0.5, 3.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15 && (x[1] - 7.0).abs() < 1e-14);
        assert!((ld - 2f64.ln()).abs() < 1e-15);
        let (z, ldi) = layer.inverse(&[0.5, 7.0]).unwrap();
        assert!((z[0] - 0.5).abs() < 1e-15 && (z[1] - 3.0).abs() < 1e-14);
        assert!((ldi + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_flow_log_prob_at_origin() {
        let model = FlowModel::from_parts(
            None,
            Standardizer::identity(4),
            vec![zero_layer(4, Parity::Even), zero_layer(4, Parity::Odd)],
        )
        .unwrap();
        let lp = model.log_prob(&[0.0; 4]).unwrap();
        assert!((lp + 2.0 * (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn identity_flow_with_pca_at_mean() {
        let data = [
            1.0, 0.0, 2.0, 0.0, //
            0.0, 1.0, 0.5, 1.0, //
            2.0, 3.0, 1.0, 0.0, //
            1.0, 1.0, 1.0, 1.0,
        ];
        let pca = fit_matrix(&data, 4)
            .unwrap()
            .truncate(Truncation::Components(2))
            .unwrap();
        let mean = pca.mean().to_vec();
        let model = FlowModel::from_parts(
            Some(pca),
            Standardizer::identity(2),
            vec![zero_layer(2, Parity::Even)],
        )
        .unwrap();
        let lp = model.log_prob(&mean).unwrap();
        assert!((lp + (2.0 * PI).ln()).abs() < 1e-13);
    }

    #[test]
    fn model_invariants_enforced() {
        assert!(FlowModel::from_parts(None, Standardizer::identity(3), vec![]).is_err());
        assert!(FlowModel::from_parts(
            None,
            Standardizer::identity(4),
            vec![zero_layer(4, Parity::Odd)]
        )
        .is_err());
        assert!(Standardizer::new(vec![0.0], vec![0.0]).is_err());
        assert!(FlowModel::from_parts(None, Standardizer::identity(1), vec![]).is_ok());
    }

    #[test]
    fn standardizer_floors_constant_columns() {
        let s = Standardizer::fit(&[0.0, 1.0, 0.0, 3.0, 0.0, 5.0], 2).unwrap();
        assert_eq!(s.shift(), &[0.0, 3.0]);
        assert_eq!(s.scale()[1], 2.0);
        assert_eq!(s.scale()[0], MIN_RELATIVE_SCALE * 2.0);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = FlowModel::new(None, Standardizer::identity(3), &FlowArch::default(), &mut rng)
            .unwrap();
        assert_eq!(model.sample(20, 1, 15).unwrap(), model.sample(20, 1, 15).unwrap());
        assert_ne!(model.sample(20, 1, 15).unwrap(), model.sample(20, 2, 15).unwrap());
    }

    #[test]
    fn flat_parameters_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model =
            FlowModel::new(None, Standardizer::identity(3), &FlowArch::default(), &mut rng).unwrap();
        let mut p = model.params_flat();
        assert_eq!(p.len(), model.n_params());
        p[0] += 1.0;
        model.set_params_flat(&p).unwrap();
        assert_eq!(model.params_flat(), p);
    }
}
