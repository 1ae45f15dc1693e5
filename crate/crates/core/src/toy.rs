//! Synthetic data sets: a one-dimensional curve in the plane, a filled kite,
//! and daily PV-like profiles with exact-zero nights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{self, Scaling, ScenarioSet};
use crate::error::{Error, Result};
use crate::flow::{FlowArch, FlowModel};
use crate::pca::Truncation;
use crate::train::{fit_fsnf, fit_pcf, TrainConfig, TrainLog};

/// Height of the S-bend of [`curve_point`].
pub const CURVE_BEND: f64 = 0.1;
/// Number of segments in the polyline used by [`distance_to_curve`].
pub const CURVE_RESOLUTION: usize = 20_000;

/// The fixed planar curve used by the `curve1d` toy, for `t` in `[0, 1]`.
///
/// With `u = 2t - 1` the curve is `(u³, CURVE_BEND · (u - u³))`: an S-shaped
/// cubic arc from `(-1, 0)` to `(1, 0)` that departs at most
/// `0.0385` from the x axis. The cubic speed concentrates uniform `t` toward
/// the middle of the arc.
pub fn curve_point(t: f64) -> [f64; 2] {
    let u = 2.0 * t - 1.0;
    let u3 = u * u * u;
    [u3, CURVE_BEND * (u - u3)]
}

/// `n` points with `t ~ U[0, 1]` pushed through [`curve_point`].
pub fn curve1d(n: usize, seed: u64) -> Result<ScenarioSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n)
        .flat_map(|_| curve_point(rng.random::<f64>()))
        .collect();
    ScenarioSet::new(data, 2, 1, Scaling::None)
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - s * ab[0], ap[1] - s * ab[1]];
    d[0].hypot(d[1])
}

/// Precomputed dense polyline of the curve for distance queries.
#[derive(Debug, Clone)]
pub struct CurveOracle {
    vertices: Vec<[f64; 2]>,
}

impl Default for CurveOracle {
    fn default() -> Self {
        Self::new(CURVE_RESOLUTION)
    }
}

impl CurveOracle {
    pub fn new(segments: usize) -> Self {
        let vertices = (0..=segments)
            .map(|i| curve_point(i as f64 / segments as f64))
            .collect();
        Self { vertices }
    }

    /// Euclidean distance from `p` to the polyline.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Fraction of rows within `tol` of the curve, and the mean distance.
    pub fn coverage(&self, set: &ScenarioSet, tol: f64) -> (f64, f64) {
        use rayon::prelude::*;
        let d: Vec<f64> = set
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|r| self.distance([r[0], r[1]]))
            .collect();
        let near = d.iter().filter(|&&x| x <= tol).count();
        let n = d.len() as f64;
        (near as f64 / n, d.iter().sum::<f64>() / n)
    }
}

/// Distance from `p` to the curve, using a fresh dense discretization.
pub fn distance_to_curve(p: [f64; 2]) -> f64 {
    CurveOracle::default().distance(p)
}

/// Corners of the kite, counter-clockwise.
pub const KITE: [[f64; 2]; 4] = [[0.0, 1.0], [-0.6, 0.3], [0.0, -1.0], [0.6, 0.3]];

fn inside_convex(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    (0..poly.len()).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

/// `n` points uniform on the filled kite [`KITE`].
pub fn kite2d(n: usize, seed: u64) -> Result<ScenarioSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    while data.len() < 2 * n {
        let p = [rng.random_range(-0.6..0.6), rng.random_range(-1.0..1.0)];
        if inside_convex(p, &KITE) {
            data.extend_from_slice(&p);
        }
    }
    ScenarioSet::new(data, 2, 1, Scaling::None)
}

/// Distance from `p` to the filled kite; zero inside.
pub fn distance_to_kite(p: [f64; 2]) -> f64 {
    if inside_convex(p, &KITE) {
        return 0.0;
    }
    (0..KITE.len())
        .map(|i| segment_distance(p, KITE[i], KITE[(i + 1) % KITE.len()]))
        .fold(f64::INFINITY, f64::min)
}

/// Distance tolerance used to call a sample "on the manifold".
pub const ON_MANIFOLD_TOLERANCE: f64 = 0.05;
/// Points generated for each toy training run (before the validation split).
pub const TOY_DATA_POINTS: usize = 2000;
/// Samples drawn from each trained toy model.
pub const TOY_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyShape {
    Curve1d,
    Kite2d,
}

impl ToyShape {
    pub fn name(&self) -> &'static str {
        match self {
            ToyShape::Curve1d => "curve1d",
            ToyShape::Kite2d => "kite2d",
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<ScenarioSet> {
        match self {
            ToyShape::Curve1d => curve1d(n, seed),
            ToyShape::Kite2d => kite2d(n, seed),
        }
    }
}

impl std::str::FromStr for ToyShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curve1d" => Ok(ToyShape::Curve1d),
            "kite2d" => Ok(ToyShape::Kite2d),
            _ => Err(Error::Argument(format!("unknown toy shape '{s}'"))),
        }
    }
}

/// Which model family a run trains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    /// PCA head plus flow in the truncated latent space.
    Pcf(Truncation),
    /// Flow in the full ambient space.
    Fsnf,
}

/// Everything a toy run produces.
#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub data: ScenarioSet,
    pub model: FlowModel,
    pub log: TrainLog,
    pub samples: ScenarioSet,
    /// Fraction of samples within [`ON_MANIFOLD_TOLERANCE`] of the manifold.
    pub on_manifold: f64,
    pub mean_distance: f64,
}

/// Generates a toy data set, trains the chosen model on an 80/20 split and
/// scores `n_samples` draws against the true support.
pub fn run_toy(
    shape: ToyShape,
    kind: ModelKind,
    arch: &FlowArch,
    config: &TrainConfig,
    n_samples: usize,
) -> Result<ToyOutcome> {
    let data = shape.generate(TOY_DATA_POINTS, config.data_seed())?;
    let (train, val) = dataio::split(&data, config.validation_fraction, config.split_seed())?;
    let (model, log) = match kind {
        ModelKind::Pcf(t) => fit_pcf(&train, &val, t, arch, config)?,
        ModelKind::Fsnf => fit_fsnf(&train, &val, arch, config)?,
    };
    let samples = model.sample(n_samples, config.sample_seed(), 1)?;
    let (on_manifold, mean_distance) = match shape {
        ToyShape::Curve1d => CurveOracle::default().coverage(&samples, ON_MANIFOLD_TOLERANCE),
        ToyShape::Kite2d => {
            let d: Vec<f64> = samples.rows().map(|r| distance_to_kite([r[0], r[1]])).collect();
            let n = d.len() as f64;
            (
                d.iter().filter(|&&x| x <= ON_MANIFOLD_TOLERANCE).count() as f64 / n,
                d.iter().sum::<f64>() / n,
            )
        }
    };
    Ok(ToyOutcome {
        data,
        model,
        log,
        samples,
        on_manifold,
        mean_distance,
    })
}

/// Shape of the daily PV-like profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvProfile {
    pub period_length: usize,
    pub interval_minutes: u32,
    /// First daylight step (inclusive).
    pub sunrise: usize,
    /// First night step after daylight.
    pub sunset: usize,
}

impl Default for PvProfile {
    /// 15-minute steps with daylight from 6:00 to 20:00.
    fn default() -> Self {
        Self {
            period_length: 96,
            interval_minutes: 15,
            sunrise: 24,
            sunset: 80,
        }
    }
}

/// Capacity-factor-like daily profiles: a clear-sky bell between sunrise and
/// sunset times a random daily peak, dimmed by smooth random cloud cover.
/// Night steps are exactly zero on every day.
pub fn pv_like(n_days: usize, profile: PvProfile, seed: u64) -> Result<ScenarioSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.35).expect("valid normal");
    let PvProfile {
        period_length,
        sunrise,
        sunset,
        ..
    } = profile;
    let daylight = (sunset - sunrise) as f64;
    let mut data = vec![0.0; n_days * period_length];
    for day in data.chunks_exact_mut(period_length) {
        let peak = rng.random_range(0.3..0.95);
        let mut cloud: f64 = noise.sample(&mut rng);
        for (j, v) in day.iter_mut().enumerate().take(sunset).skip(sunrise) {
            cloud = 0.85 * cloud + 0.5 * noise.sample(&mut rng);
            let x = (j - sunrise) as f64 + 0.5;
            let bell = (std::f64::consts::PI * x / daylight).sin().powf(1.5);
            let clear = 1.0 / (1.0 + cloud.exp());
            *v = (peak * bell * (0.3 + 0.7 * clear)).clamp(0.0, 1.0);
        }
    }
    ScenarioSet::new(
        data,
        period_length,
        profile.interval_minutes,
        Scaling::CapacityFactor { reference: 1.0 },
    )
}
