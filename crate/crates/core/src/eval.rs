//! Statistical comparison of generated and historical scenario sets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dataio::ScenarioSet;
use crate::error::{Error, Result};
use crate::pca::{self, PcaDecomposition};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Default number of KDE grid points.
pub const KDE_GRID_POINTS: usize = 512;
/// CEV thresholds reported by [`cev_report`].
pub const CEV_THRESHOLDS: [f64; 4] = [0.99, 0.999, 0.9999, 1.0];
/// Sample-size product up to which KS p-values are computed exactly.
pub const KS_EXACT_LIMIT: usize = 10_000;

fn mean_and_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9 * min(std, IQR / 1.34) * n^(-1/5)`.
/// Falls back to the standard deviation when the IQR is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Argument("KDE needs at least 2 samples".into()));
    }
    let (_, std) = mean_and_std(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::Bandwidth(
            "samples have zero spread; give an explicit bandwidth".into(),
        ));
    }
    Ok(0.9 * spread * (samples.len() as f64).powf(-0.2))
}

/// Gaussian kernel density estimate on `grid`.
pub fn kde_pdf(samples: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::Argument("KDE needs at least 2 samples".into()));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Argument(format!("bandwidth {h} must be positive"))),
        None => silverman_bandwidth(samples)?,
    };
    let norm = INV_SQRT_2PI / (samples.len() as f64 * h);
    Ok(grid
        .par_iter()
        .map(|&g| {
            norm * samples
                .iter()
                .map(|s| {
                    let u = (g - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect())
}

/// `n` evenly spaced points over `[min - 3h, max + 3h]`.
pub fn kde_grid(samples: &[f64], bandwidth: f64, n: usize) -> Vec<f64> {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
    linspace(lo, hi, n)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// Two-sample Kolmogorov–Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// `sup |F_a - F_b|` over all thresholds.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    // Once one side is exhausted the gap only shrinks toward zero.
    d.max((i as f64 / na - j as f64 / nb).abs())
}

/// Asymptotic Kolmogorov tail `Q(λ) = 2 Σ (-1)^(k-1) exp(-2 k² λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Exact `P(D >= d)` under the null for continuous samples of sizes `m`, `n`,
/// by counting monotone lattice paths that stay inside the band.
fn ks_exact_p(m: usize, n: usize, d: f64) -> f64 {
    // D * m * n is an integer; exceeding the band means |i n - j m| >= that.
    let bound = (d * (m * n) as f64).round() as i64;
    if bound <= 0 {
        return 1.0;
    }
    let inside = |i: usize, j: usize| ((i * n) as i64 - (j * m) as i64).abs() < bound;
    // Path counts normalized by the total count as we go: each row of the DP
    // is kept as a probability under the uniform random arrangement.
    let mut row = vec![0.0f64; n + 1];
    row[0] = 1.0;
    for j in 1..=n {
        row[j] = if inside(0, j) { row[j - 1] * (n - j + 1) as f64 / (m + n - j + 1) as f64 } else { 0.0 };
    }
    for i in 1..=m {
        let mut next = vec![0.0f64; n + 1];
        for j in 0..=n {
            if !inside(i, j) {
                continue;
            }
            // Probability that step i+j is an `a` given (i-1, j), or a `b` given (i, j-1).
            let remaining_from_up = (m - i + 1 + n - j) as f64;
            let from_up = row[j] * (m - i + 1) as f64 / remaining_from_up;
            let from_left = if j > 0 {
                next[j - 1] * (n - j + 1) as f64 / (m - i + n - j + 1) as f64
            } else {
                0.0
            };
            next[j] = from_up + from_left;
        }
        row = next;
    }
    (1.0 - row[n]).clamp(0.0, 1.0)
}

/// Two-sample KS test. The p-value is exact when `n_a * n_b <= KS_EXACT_LIMIT`
/// and otherwise uses the asymptotic distribution with effective size
/// `n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("KS test needs two non-empty samples".into()));
    }
    let statistic = ks_statistic(a, b);
    let (m, n) = (a.len(), b.len());
    if m.saturating_mul(n) <= KS_EXACT_LIMIT {
        return Ok(KsResult {
            statistic,
            p_value: ks_exact_p(m, n, statistic),
            exact: true,
        });
    }
    let ne = (m as f64 * n as f64) / (m + n) as f64;
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_q(ne.sqrt() * statistic),
        exact: false,
    })
}

/// Asymptotic-only p-value, exposed for comparison with the exact route.
pub fn ks_asymptotic_p(n_a: usize, n_b: usize, statistic: f64) -> f64 {
    let ne = (n_a as f64 * n_b as f64) / (n_a + n_b) as f64;
    kolmogorov_q(ne.sqrt() * statistic)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Rectangular,
    /// Periodic Hann window.
    Hann,
}

impl Window {
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Window::Rectangular => "rectangular",
            Window::Hann => "hann",
        }
    }
}

/// Averaged one-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    /// Cycles per hour, ascending.
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

/// Welch PSD of every scenario, averaged across segments and scenarios.
///
/// Each segment is windowed (no detrending), transformed, and scaled to a
/// one-sided density `2 |X_k|² / (fs Σ w²)` (DC and Nyquist not doubled),
/// with `fs` in samples per hour.
pub fn welch_psd(
    set: &ScenarioSet,
    segment_length: usize,
    overlap_fraction: f64,
    window: Window,
) -> Result<Psd> {
    let d = set.period_length();
    if segment_length == 0 || segment_length > d {
        return Err(Error::Argument(format!(
            "segment length {segment_length} not in 1..={d}"
        )));
    }
    if !(0.0..=0.9).contains(&overlap_fraction) {
        return Err(Error::Argument(format!(
            "overlap fraction {overlap_fraction} not in [0, 0.9]"
        )));
    }
    let fs = 60.0 / set.interval_minutes() as f64;
    let l = segment_length;
    let step = (l - (overlap_fraction * l as f64).round() as usize).max(1);
    let n_segments = 1 + (d - l) / step;
    let w = window.coefficients(l);
    let energy: f64 = w.iter().map(|v| v * v).sum();
    let n_bins = l / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(l);

    let mut total = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); l];
    for row in set.rows() {
        for s in 0..n_segments {
            let seg = &row[s * step..s * step + l];
            for ((b, x), wi) in buf.iter_mut().zip(seg).zip(&w) {
                *b = Complex::new(x * wi, 0.0);
            }
            fft.process(&mut buf);
            for (k, t) in total.iter_mut().enumerate() {
                let mut p = buf[k].norm_sqr() / (fs * energy);
                if k != 0 && !(l % 2 == 0 && k == l / 2) {
                    p *= 2.0;
                }
                *t += p;
            }
        }
    }
    let count = (set.n_rows() * n_segments) as f64;
    Ok(Psd {
        frequencies: (0..n_bins).map(|k| k as f64 * fs / l as f64).collect(),
        power: total.into_iter().map(|p| p / count).collect(),
    })
}

/// Components needed for each of [`CEV_THRESHOLDS`].
pub fn cev_report(decomposition: &PcaDecomposition) -> Vec<(f64, usize)> {
    CEV_THRESHOLDS
        .iter()
        .map(|&t| {
            (
                t,
                decomposition
                    .components_for_cev(t)
                    .expect("thresholds are valid"),
            )
        })
        .collect()
}

/// Per-column statistics of one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    /// Minutes after the window start (midnight for daily scenarios).
    pub minute: u32,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

/// Mean and variance of every column whose clock time lies in
/// `[start_minute, end_minute)`.
pub fn marginal_stats(set: &ScenarioSet, start_minute: u32, end_minute: u32) -> Result<Vec<Marginal>> {
    if end_minute > 24 * 60 || start_minute >= end_minute {
        return Err(Error::Argument(format!(
            "clock window [{start_minute}, {end_minute}) is not inside the day"
        )));
    }
    let interval = set.interval_minutes();
    let n = set.n_rows() as f64;
    let out: Vec<Marginal> = (0..set.period_length())
        .filter_map(|j| {
            let minute = j as u32 * interval;
            (start_minute..end_minute).contains(&minute).then(|| {
                let mean = set.column(j).sum::<f64>() / n;
                let variance = if set.n_rows() > 1 {
                    set.column(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                Marginal {
                    minute,
                    mean,
                    variance,
                }
            })
        })
        .collect();
    if out.is_empty() {
        return Err(Error::Argument(format!(
            "no time steps fall in [{start_minute}, {end_minute})"
        )));
    }
    Ok(out)
}

/// Knobs of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub bandwidth: Option<f64>,
    pub grid_points: usize,
    /// `None` means half the scenario length.
    pub segment_length: Option<usize>,
    pub overlap_fraction: f64,
    pub window: Window,
    pub clock_window: (u32, u32),
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bandwidth: None,
            grid_points: KDE_GRID_POINTS,
            segment_length: None,
            overlap_fraction: 0.5,
            window: Window::Hann,
            clock_window: (0, 240),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeCurves {
    pub grid: Vec<f64>,
    pub historical: Vec<f64>,
    pub generated: Vec<f64>,
    pub bandwidth_historical: f64,
    pub bandwidth_generated: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub kde: KdeCurves,
    pub ks: KsResult,
    pub psd_frequencies: Vec<f64>,
    pub psd_historical: Vec<f64>,
    pub psd_generated: Vec<f64>,
    pub cev_table: Vec<(f64, usize)>,
    pub marginals_historical: Vec<Marginal>,
    pub marginals_generated: Vec<Marginal>,
    pub options: EvalOptions,
    pub segment_length: usize,
}

/// Runs the full comparison of a generated set against a historical one.
pub fn evaluate(
    historical: &ScenarioSet,
    generated: &ScenarioSet,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if historical.period_length() != generated.period_length() {
        return Err(Error::Argument(format!(
            "historical scenarios have {} steps, generated {}",
            historical.period_length(),
            generated.period_length()
        )));
    }
    let pooled_h = historical.data();
    let pooled_g = generated.data();
    let (hh, hg) = match options.bandwidth {
        Some(h) => (h, h),
        None => (silverman_bandwidth(pooled_h)?, silverman_bandwidth(pooled_g)?),
    };
    let h_max = hh.max(hg);
    let lo = pooled_h
        .iter()
        .chain(pooled_g)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = pooled_h
        .iter()
        .chain(pooled_g)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let grid = linspace(lo - 3.0 * h_max, hi + 3.0 * h_max, options.grid_points);
    let kde = KdeCurves {
        historical: kde_pdf(pooled_h, &grid, Some(hh))?,
        generated: kde_pdf(pooled_g, &grid, Some(hg))?,
        grid,
        bandwidth_historical: hh,
        bandwidth_generated: hg,
    };
    let ks = ks_two_sample(pooled_h, pooled_g)?;
    let segment_length = options
        .segment_length
        .unwrap_or((historical.period_length() / 2).max(1));
    let psd_h = welch_psd(historical, segment_length, options.overlap_fraction, options.window)?;
    let psd_g = welch_psd(generated, segment_length, options.overlap_fraction, options.window)?;
    let cev_table = cev_report(&pca::fit(historical)?);
    let (start, end) = options.clock_window;
    Ok(EvalReport {
        kde,
        ks,
        psd_frequencies: psd_h.frequencies,
        psd_historical: psd_h.power,
        psd_generated: psd_g.power,
        cev_table,
        marginals_historical: marginal_stats(historical, start, end)?,
        marginals_generated: marginal_stats(generated, start, end)?,
        options: options.clone(),
        segment_length,
    })
}

fn clock(minute: u32) -> String {
    format!("{}:{:02}", minute / 60, minute % 60)
}

impl EvalReport {
    fn settings_header(&self) -> String {
        format!(
            "kde=gaussian bandwidth={} grid_points={}; ks=pooled {}; welch window={} segment_length={} overlap={}; marginals window={}-{}",
            match self.options.bandwidth {
                Some(h) => format!("{h}"),
                None => "silverman".to_string(),
            },
            self.options.grid_points,
            if self.ks.exact { "exact" } else { "asymptotic" },
            self.options.window.name(),
            self.segment_length,
            self.options.overlap_fraction,
            clock(self.options.clock_window.0),
            clock(self.options.clock_window.1),
        )
    }

    /// Writes `kde.csv`, `psd.csv`, `ks.txt`, `cev.csv`, `marginals.csv` and
    /// `summary.txt` into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut prefix = String::new();
        if let Some(c) = header_comment {
            let _ = writeln!(prefix, "# {c}");
        }
        let _ = writeln!(prefix, "# {}", self.settings_header());

        let mut kde = prefix.clone();
        kde.push_str("value,historical_density,generated_density\n");
        for ((g, a), b) in self.kde.grid.iter().zip(&self.kde.historical).zip(&self.kde.generated) {
            let _ = writeln!(kde, "{g},{a},{b}");
        }

        let mut psd = prefix.clone();
        psd.push_str("frequency_per_hour,historical_power,generated_power\n");
        for ((f, a), b) in self
            .psd_frequencies
            .iter()
            .zip(&self.psd_historical)
            .zip(&self.psd_generated)
        {
            let _ = writeln!(psd, "{f},{a},{b}");
        }

        let mut ks = prefix.clone();
        let _ = writeln!(ks, "statistic={}", self.ks.statistic);
        let _ = writeln!(ks, "p_value={}", self.ks.p_value);
        let _ = writeln!(ks, "method={}", if self.ks.exact { "exact" } else { "asymptotic" });

        let mut cev = prefix.clone();
        cev.push_str("threshold,components\n");
        for (t, m) in &self.cev_table {
            let _ = writeln!(cev, "{t},{m}");
        }

        let mut marg = prefix.clone();
        marg.push_str("clock,historical_mean,historical_variance,generated_mean,generated_variance\n");
        for (h, g) in self.marginals_historical.iter().zip(&self.marginals_generated) {
            let _ = writeln!(
                marg,
                "{},{},{},{},{}",
                clock(h.minute),
                h.mean,
                h.variance,
                g.mean,
                g.variance
            );
        }

        let mut summary = prefix;
        let _ = writeln!(summary, "KS statistic {:.6}, p-value {:.6e}", self.ks.statistic, self.ks.p_value);
        let _ = writeln!(
            summary,
            "KDE bandwidths: historical {:.6e}, generated {:.6e}",
            self.kde.bandwidth_historical, self.kde.bandwidth_generated
        );
        for (t, m) in &self.cev_table {
            let _ = writeln!(summary, "CEV >= {:.2}%: {m} components", t * 100.0);
        }
        let worst = self
            .marginals_generated
            .iter()
            .map(|m| m.variance)
            .fold(0.0, f64::max);
        let _ = writeln!(summary, "max generated marginal variance in clock window: {worst:.6e}");

        for (name, body) in [
            ("kde.csv", kde),
            ("psd.csv", psd),
            ("ks.txt", ks),
            ("cev.csv", cev),
            ("marginals.csv", marg),
            ("summary.txt", summary),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
