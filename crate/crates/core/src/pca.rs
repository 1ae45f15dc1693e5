//! Principal component analysis of the empirical covariance, and the affine
//! isometric embedding built from its leading components.

use crate::dataio::ScenarioSet;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{jacobi_eigen, matvec};

/// Relative off-diagonal tolerance for the Jacobi sweeps.
const JACOBI_TOLERANCE: f64 = 1e-12;
/// Negative eigenvalues down to `-NEGATIVE_TOLERANCE * trace` are rounding noise.
const NEGATIVE_TOLERANCE: f64 = 1e-12;
/// Singular values at or below `RANK_TOLERANCE * sigma_1` do not count toward the rank.
pub const RANK_TOLERANCE: f64 = 1e-12;
/// Slack when comparing a cumulative ratio against a CEV threshold.
const CEV_SLACK: f64 = 1e-12;

/// Full eigendecomposition of the sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaDecomposition {
    dim: usize,
    n_samples: usize,
    mean: Vec<f64>,
    singular_values: Vec<f64>,
    /// Row-major `dim × dim`; column `k` is the `k`-th principal component.
    components: Vec<f64>,
}

impl PcaDecomposition {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Non-increasing, non-negative.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// Number of singular values above `RANK_TOLERANCE * sigma_1` (at least 1).
    pub fn numerical_rank(&self) -> usize {
        let top = self.singular_values[0];
        self.singular_values
            .iter()
            .filter(|&&s| s > RANK_TOLERANCE * top)
            .count()
            .max(1)
    }

    /// Fraction of the total singular-value mass carried by the first `m` components.
    pub fn explained(&self, m: usize) -> f64 {
        let total: f64 = self.singular_values.iter().sum();
        if total == 0.0 {
            return 1.0;
        }
        self.singular_values[..m].iter().sum::<f64>() / total
    }

    /// Smallest `M` whose cumulative explained variance reaches `threshold`.
    /// A threshold of 1 selects the numerical rank.
    pub fn components_for_cev(&self, threshold: f64) -> Result<usize> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Argument(format!(
                "CEV threshold {threshold} not in (0, 1]"
            )));
        }
        if threshold >= 1.0 {
            return Ok(self.numerical_rank());
        }
        let total: f64 = self.singular_values.iter().sum();
        if total == 0.0 {
            return Ok(1);
        }
        let mut cum = 0.0;
        for (i, s) in self.singular_values.iter().enumerate() {
            cum += s;
            if cum / total >= threshold - CEV_SLACK {
                return Ok(i + 1);
            }
        }
        Ok(self.dim)
    }

    pub fn truncate(&self, target: Truncation) -> Result<PcaMap> {
        let m = match target {
            Truncation::Components(m) => {
                if m == 0 || m > self.dim {
                    return Err(Error::Argument(format!(
                        "component count {m} not in 1..={}",
                        self.dim
                    )));
                }
                m
            }
            Truncation::Cev(t) => self.components_for_cev(t)?,
        };
        let d = self.dim;
        let mut components = Vec::with_capacity(d * m);
        for i in 0..d {
            components.extend_from_slice(&self.components[i * d..i * d + m]);
        }
        PcaMap::from_parts(
            self.mean.clone(),
            components,
            self.singular_values.clone(),
            m,
            self.explained(m),
        )
    }
}

/// How many principal components to retain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    Cev(f64),
    Components(usize),
}

impl Truncation {
    /// An explicit component count wins over a CEV target.
    pub fn from_options(cev: Option<f64>, components: Option<usize>) -> Result<Self> {
        match (components, cev) {
            (Some(m), _) => Ok(Truncation::Components(m)),
            (None, Some(t)) => Ok(Truncation::Cev(t)),
            (None, None) => Err(Error::Argument(
                "either a CEV target or a component count is required".into(),
            )),
        }
    }
}

/// Fits the PCA of a scenario set.
pub fn fit(train: &ScenarioSet) -> Result<PcaDecomposition> {
    fit_matrix(train.data(), train.period_length())
}

/// Fits the PCA of row-major data with `dim` columns.
pub fn fit_matrix(data: &[f64], dim: usize) -> Result<PcaDecomposition> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Argument(format!(
            "{} values do not form rows of length {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if n < 2 {
        return Err(Error::Argument(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Invariant(format!(
            "non-finite value at row {}, column {}",
            i / dim,
            i % dim
        )));
    }

    // Shifting by the first row keeps constant columns exactly constant.
    let pivot = &data[..dim];
    let mut shift = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for ((s, x), p) in shift.iter_mut().zip(row).zip(pivot) {
            *s += x - p;
        }
    }
    let mean: Vec<f64> = shift
        .iter()
        .zip(pivot)
        .map(|(s, p)| p + s / n as f64)
        .collect();

    let mut centered = vec![0.0; dim];
    let mut cov = vec![0.0; dim * dim];
    for row in data.chunks_exact(dim) {
        for ((c, x), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let out = &mut cov[i * dim..i * dim + i + 1];
            for (o, cj) in out.iter_mut().zip(&centered[..=i]) {
                *o += ci * cj;
            }
        }
    }
    let scale = 1.0 / (n - 1) as f64;
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[i * dim + j] * scale;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();

    let eig = jacobi_eigen(&cov, dim, JACOBI_TOLERANCE)?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.values[b].total_cmp(&eig.values[a]));

    let mut singular_values = Vec::with_capacity(dim);
    let mut components = vec![0.0; dim * dim];
    for (k, &src) in order.iter().enumerate() {
        let mut value = eig.values[src];
        if value < 0.0 {
            if value < -NEGATIVE_TOLERANCE * trace {
                return Err(Error::Numerical(format!(
                    "covariance eigenvalue {value:e} is negative beyond tolerance (trace {trace:e})"
                )));
            }
            value = 0.0;
        }
        singular_values.push(value);

        // Largest-magnitude entry positive; first index wins a tie.
        let mut big = 0;
        for i in 1..dim {
            if eig.vectors[i * dim + src].abs() > eig.vectors[big * dim + src].abs() {
                big = i;
            }
        }
        let sign = if eig.vectors[big * dim + src] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for i in 0..dim {
            components[i * dim + k] = sign * eig.vectors[i * dim + src];
        }
    }

    Ok(PcaDecomposition {
        dim,
        n_samples: n,
        mean,
        singular_values,
        components,
    })
}

/// Truncated PCA: the affine map `x = V_P x_latent + mean` and its pseudo-inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaMap {
    mean: Vec<f64>,
    /// Row-major `D × M`.
    components: Vec<f64>,
    singular_values: Vec<f64>,
    m: usize,
    cev: f64,
}

/// Max-norm tolerance on `V_P^T V_P - I` accepted when loading a map.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-10;

impl PcaMap {
    /// Assembles a map from stored parts, checking its invariants.
    pub fn from_parts(
        mean: Vec<f64>,
        components: Vec<f64>,
        singular_values: Vec<f64>,
        m: usize,
        cev: f64,
    ) -> Result<Self> {
        let d = mean.len();
        if m == 0 || m > d {
            return Err(Error::Invariant(format!("component count {m} not in 1..={d}")));
        }
        check_dim(d * m, components.len())?;
        check_dim(d, singular_values.len())?;
        if singular_values.windows(2).any(|w| w[1] > w[0]) || singular_values.iter().any(|&s| s < 0.0)
        {
            return Err(Error::Invariant(
                "singular values must be non-negative and non-increasing".into(),
            ));
        }
        if !(0.0..=1.0 + 1e-12).contains(&cev) {
            return Err(Error::Invariant(format!("CEV {cev} not in [0, 1]")));
        }
        let map = Self {
            mean,
            components,
            singular_values,
            m,
            cev,
        };
        let err = map.orthonormality_error();
        if err > ORTHONORMALITY_TOLERANCE {
            return Err(Error::Invariant(format!(
                "components are not orthonormal (max deviation {err:e})"
            )));
        }
        Ok(map)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.m
    }

    pub fn cev(&self) -> f64 {
        self.cev
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// `V_P^T V_P`, row-major `M × M`.
    pub fn gram(&self) -> Vec<f64> {
        let (d, m) = (self.dim(), self.m);
        let mut g = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                g[a * m + b] = (0..d)
                    .map(|i| self.components[i * m + a] * self.components[i * m + b])
                    .sum();
            }
        }
        g
    }

    /// `max |V_P^T V_P - I_M|`.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.m;
        self.gram()
            .iter()
            .enumerate()
            .map(|(k, g)| (g - if k / m == k % m { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    /// Latent coordinates `V_P^T (x - mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; self.m];
        self.project_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn project_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, (xi, mi)) in x.iter().zip(&self.mean).enumerate() {
            let c = xi - mi;
            if c == 0.0 {
                continue;
            }
            let row = &self.components[i * self.m..(i + 1) * self.m];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v * c;
            }
        }
    }

    /// Embedding `V_P x_latent + mean`.
    pub fn embed(&self, latent: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.m, latent.len())?;
        let mut out = vec![0.0; self.dim()];
        self.embed_into(latent, &mut out);
        Ok(out)
    }

    pub(crate) fn embed_into(&self, latent: &[f64], out: &mut [f64]) {
        matvec(&self.components, self.dim(), self.m, latent, out);
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o += m;
        }
    }
}
