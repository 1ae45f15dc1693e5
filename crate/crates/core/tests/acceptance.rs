//! Acceptance checks, one test per criterion (criterion 4 has three parts).
//!
//! Each test prints a `criterion N: PASS|FAIL` line with the measured values
//! before asserting, so the log documents the numbers behind a verdict.
//! Criterion 6 runs on the public German 15-minute data set when
//! `PCFLOW_OPSD_CSV` points at `time_series_15min_singleindex.csv`; otherwise
//! it checks a surrogate with a planted spectrum.

use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use pcflow::dataio::{self, clean_and_slice, scale, ColumnSchema, RawSeries, ScalingMode};
use pcflow::eval::{self, Window};
use pcflow::flow::{
    injective_volume_correction, log_prob_with_volume_term, CouplingLayer, FlowArch, FlowModel,
    Parity, Standardizer,
};
use pcflow::linalg::{jacobi_eigen, log_abs_det};
use pcflow::pca::{self, PcaDecomposition, Truncation};
use pcflow::toy::{self, ModelKind, PvProfile, ToyShape};
use pcflow::train::nll_and_grads;
use pcflow::{fit_fsnf, fit_pcf, modelfile, ScenarioSet, Scaling, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const SEEDS: [u64; 3] = [0, 1, 2];

/// The criteria carry runtime budgets, so they run one at a time instead of
/// competing for cores; each measures its own time after taking the lock.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let v: f64 = rng.sample(StandardNormal);
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
    }
    jacobi_eigen(&a, d, 1e-14).unwrap().vectors
}

// ---------------------------------------------------------------------------
// 1. Isometry of the PCA embedding and the vanishing volume term.

#[test]
fn criterion_1_isometry_and_invariance() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_gram: f64 = 0.0;
    let mut worst_volume: f64 = 0.0;
    let mut worst_logprob: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(2..=96);
        let n = rng.random_range(2..=500);
        // Low-rank signal plus small noise, with a few exactly constant columns.
        let rank = rng.random_range(1..=d.min(10));
        let loadings: Vec<f64> = (0..rank * d).map(|_| rng.sample(StandardNormal)).collect();
        let constant: Vec<bool> = (0..d).map(|_| rng.random_bool(0.1)).collect();
        let mut data = vec![0.0; n * d];
        for row in data.chunks_exact_mut(d) {
            let f: Vec<f64> = (0..rank).map(|_| rng.sample(StandardNormal)).collect();
            for (j, v) in row.iter_mut().enumerate() {
                *v = if constant[j] {
                    0.25
                } else {
                    (0..rank).map(|r| f[r] * loadings[r * d + j]).sum::<f64>()
                        + 1e-3 * rng.sample::<f64, _>(StandardNormal)
                };
            }
        }
        let decomposition = pca::fit_matrix(&data, d).unwrap();
        let truncation = if rng.random_bool(0.5) {
            Truncation::Cev(rng.random_range(0.5..=1.0))
        } else {
            Truncation::Components(rng.random_range(1..=d))
        };
        let map = decomposition.truncate(truncation).unwrap();
        worst_gram = worst_gram.max(map.orthonormality_error());
        worst_volume = worst_volume.max(injective_volume_correction(&map).abs());

        let m = map.latent_dim();
        let mut model_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let model = FlowModel::new(Some(map), Standardizer::identity(m), &FlowArch {
            n_layers: 2,
            hidden_layers: 1,
            hidden_width: Some(4),
        }, &mut model_rng)
        .unwrap();
        let x = &data[..d];
        let a = model.log_prob(x).unwrap();
        let b = log_prob_with_volume_term(&model, x).unwrap();
        worst_logprob = worst_logprob.max((a - b).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst_gram <= 1e-10 && worst_volume <= 1e-10 && worst_logprob <= 1e-10;
    verdict(
        "1",
        pass,
        &format!(
            "max |VᵀV − I| = {worst_gram:.2e}, max |volume term| = {worst_volume:.2e}, \
             max log_prob difference = {worst_logprob:.2e}, {elapsed:.1?}"
        ),
    );
    assert!(pass);
    assert!(elapsed.as_secs() < 30);
}

// ---------------------------------------------------------------------------
// 2. Invertibility, log-determinants and gradients.

fn random_flow(rng: &mut ChaCha8Rng, dim: usize, k: usize, hidden: &[usize]) -> FlowModel {
    let layers = (0..k)
        .map(|i| CouplingLayer::random(dim, Parity::for_layer(i), hidden, rng).unwrap())
        .collect();
    let shift = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scale = (0..dim).map(|_| rng.random_range(0.3..2.0)).collect();
    let mut model =
        FlowModel::from_parts(None, Standardizer::new(shift, scale).unwrap(), layers).unwrap();
    let p: Vec<f64> = model
        .params_flat()
        .iter()
        .map(|v| v + rng.random_range(-0.4..0.4))
        .collect();
    model.set_params_flat(&p).unwrap();
    model
}

#[test]
fn criterion_2_flow_correctness() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut round_trip: f64 = 0.0;
    let mut logdet_rel: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.random_range(2..=8);
        let k = rng.random_range(1..=10);
        let model = random_flow(&mut rng, dim, k, &[6, 6]);
        let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let (x, analytic) = model.flow_forward(&z).unwrap();
        let back = model.flow_inverse(&x).unwrap().0;
        round_trip = z
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(round_trip, f64::max);
        let h = 1e-5;
        let mut jac = vec![0.0; dim * dim];
        for j in 0..dim {
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let (fp, fm) = (model.flow_forward(&zp).unwrap().0, model.flow_forward(&zm).unwrap().0);
            for i in 0..dim {
                jac[i * dim + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let numeric = log_abs_det(&jac, dim);
        logdet_rel = logdet_rel.max((analytic - numeric).abs() / analytic.abs().max(1.0));
    }

    // Conditioner and NLL gradients against central differences.
    let close = |a: f64, n: f64| (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-3);
    let mut grad_failures = 0;
    let mut grad_checks = 0;
    for _ in 0..25 {
        let dim = rng.random_range(2..=5);
        let mut model = random_flow(&mut rng, dim, 3, &[3, 3]);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let batch: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let (_, grads) = nll_and_grads(&model, &batch).unwrap();
        let params = model.params_flat();
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += 1e-5;
            model.set_params_flat(&p).unwrap();
            let up = nll_and_grads(&model, &batch).unwrap().0;
            p[i] -= 2e-5;
            model.set_params_flat(&p).unwrap();
            let down = nll_and_grads(&model, &batch).unwrap().0;
            grad_checks += 1;
            if !close(grads[i], (up - down) / 2e-5) {
                grad_failures += 1;
            }
        }
        model.set_params_flat(&params).unwrap();
    }
    let elapsed = start.elapsed();
    let pass = round_trip <= 1e-8 && logdet_rel <= 1e-4 && grad_failures == 0;
    verdict(
        "2",
        pass,
        &format!(
            "round trip {round_trip:.2e}, log-det rel. error {logdet_rel:.2e}, \
             gradient mismatches {grad_failures}/{grad_checks}, {elapsed:.1?}"
        ),
    );
    assert!(pass);
    assert!(elapsed.as_secs() < 120);
}

// ---------------------------------------------------------------------------
// 3. Trained two-dimensional densities integrate to one.

fn integrate(model: &FlowModel, set: &ScenarioSet, n: usize) -> f64 {
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..2)
        .map(|j| {
            let c: Vec<f64> = set.column(j).collect();
            let m = c.iter().sum::<f64>() / c.len() as f64;
            let s = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (c.len() - 1) as f64).sqrt();
            (m - 8.0 * s, m + 8.0 * s)
        })
        .unzip();
    let hx = (hi[0] - lo[0]) / n as f64;
    let hy = (hi[1] - lo[1]) / n as f64;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let x = lo[0] + (i as f64 + 0.5) * hx;
            (0..n)
                .map(|j| {
                    let y = lo[1] + (j as f64 + 0.5) * hy;
                    model.log_prob(&[x, y]).map_or(0.0, f64::exp)
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        * hx
        * hy
}

#[test]
fn criterion_3_trained_density_normalization() {
    let _serial = serial();
    let config = TrainConfig {
        epochs: 150,
        seed: 3,
        ..TrainConfig::default()
    };
    let arch = FlowArch::default();
    let kite = toy::kite2d(1500, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gaussian: Vec<f64> = (0..1500)
        .flat_map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [2.0 + 0.5 * a, -1.0 + 0.3 * a + 0.2 * b]
        })
        .collect();
    let gaussian = ScenarioSet::new(gaussian, 2, 1, Scaling::None).unwrap();

    let mut totals = Vec::new();
    for set in [&kite, &gaussian] {
        let (train, val) = dataio::split(set, 0.2, 1).unwrap();
        let (model, _) = fit_fsnf(&train, &val, &arch, &config).unwrap();
        totals.push(integrate(&model, set, 1000));
    }
    let pass = totals.iter().all(|t| (t - 1.0).abs() <= 1e-2);
    verdict("3", pass, &format!("integrals kite {:.5}, gaussian {:.5}", totals[0], totals[1]));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4. The one-dimensional manifold toy.

fn toy_runs(shape: ToyShape, kind: ModelKind) -> Vec<toy::ToyOutcome> {
    SEEDS
        .iter()
        .map(|&seed| {
            let config = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            toy::run_toy(shape, kind, &FlowArch::default(), &config, toy::TOY_SAMPLES).unwrap()
        })
        .collect()
}

#[test]
fn criterion_4a_curve_pcf_stays_on_curve() {
    let _serial = serial();
    let start = Instant::now();
    let runs = toy_runs(ToyShape::Curve1d, ModelKind::Pcf(Truncation::Cev(0.99)));
    let fractions: Vec<f64> = runs.iter().map(|r| r.on_manifold).collect();
    let latent: Vec<usize> = runs.iter().map(|r| r.model.flow_dim()).collect();
    let pass = fractions.iter().all(|&f| f >= 0.95);
    verdict(
        "4 (curve1d + PCF)",
        pass,
        &format!("within 0.05: {fractions:?}, latent dims {latent:?}, {:.1?}", start.elapsed()),
    );
    assert!(pass);
}

#[test]
fn criterion_4b_curve_fsnf_leaves_curve() {
    let _serial = serial();
    let start = Instant::now();
    let runs = toy_runs(ToyShape::Curve1d, ModelKind::Fsnf);
    let mut pass = true;
    let mut lines = Vec::new();
    for (seed, r) in SEEDS.iter().zip(&runs) {
        let epochs = r.log.epochs();
        let early = epochs - 1 - r.log.best_epoch >= 10;
        let runaway = r.log.min_train() < -50.0;
        let off = r.on_manifold < 0.95;
        pass &= off && (early || runaway);
        lines.push(format!(
            "seed {seed}: within 0.05 {:.4}, best epoch {} of {epochs}, min train NLL {:.2}",
            r.on_manifold,
            r.log.best_epoch,
            r.log.min_train()
        ));
    }
    verdict(
        "4 (curve1d + FSNF)",
        pass,
        &format!("{}; {:.1?}", lines.join("; "), start.elapsed()),
    );
    assert!(pass);
}

#[test]
fn criterion_4c_kite_fsnf_is_stable() {
    let _serial = serial();
    let start = Instant::now();
    let runs = toy_runs(ToyShape::Kite2d, ModelKind::Fsnf);
    let mut pass = true;
    let mut lines = Vec::new();
    for (seed, r) in SEEDS.iter().zip(&runs) {
        let best = r.log.best_val();
        let window = r.log.final_window_val(10);
        let stable = r.log.is_stable(10, 0.05);
        pass &= stable;
        lines.push(format!(
            "seed {seed}: best val {best:.4} at epoch {}, final-window mean {window:.4}, \
             limit {:.4}",
            r.log.best_epoch,
            best + 0.05 * best.abs()
        ));
    }
    verdict(
        "4 (kite2d + FSNF)",
        pass,
        &format!("{}; {:.1?}", lines.join("; "), start.elapsed()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 5. Statistics against brute-force oracles.

fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .chain(b)
        .map(|&x| {
            let fa = a.iter().filter(|&&v| v <= x).count();
            let fb = b.iter().filter(|&&v| v <= x).count();
            (fa as f64 / a.len() as f64 - fb as f64 / b.len() as f64).abs()
        })
        .fold(0.0, f64::max)
}

/// Exact permutation p-value: share of all relabelings of the pooled sample
/// whose statistic reaches the observed one.
fn permutation_p(a: &[f64], b: &[f64]) -> f64 {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let (m, n) = (a.len(), b.len());
    let total = m + n;
    let observed = eval::ks_statistic(a, b);
    let (mut hits, mut count) = (0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != m {
            continue;
        }
        count += 1;
        let (mut ia, mut ib, mut d) = (0usize, 0usize, 0.0f64);
        for k in 0..total {
            if mask >> k & 1 == 1 {
                ia += 1;
            } else {
                ib += 1;
            }
            d = d.max((ia as f64 / m as f64 - ib as f64 / n as f64).abs());
        }
        if d >= observed - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / count as f64
}

fn direct_periodogram(x: &[f64], fs: f64) -> Vec<f64> {
    let l = x.len();
    (0..=l / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / l as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let p = (re * re + im * im) / (fs * l as f64);
            if k == 0 || (l % 2 == 0 && k == l / 2) {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

#[test]
fn criterion_5_statistics_oracles() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);

    // KS statistic, with ties from small integer supports.
    let mut statistic_mismatches = 0;
    for _ in 0..200 {
        let a: Vec<f64> = (0..rng.random_range(1..=15)).map(|_| rng.random_range(0..8) as f64).collect();
        let b: Vec<f64> = (0..rng.random_range(1..=15)).map(|_| rng.random_range(0..8) as f64).collect();
        if eval::ks_statistic(&a, &b) != brute_ks(&a, &b) {
            statistic_mismatches += 1;
        }
    }

    // KS p-value against the permutation distribution.
    let mut worst_p: f64 = 0.0;
    let mut cases = 0;
    for total in 2..=20usize {
        for m in [1, total / 3, total / 2] {
            if m == 0 || m >= total {
                continue;
            }
            let a: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..total - m).map(|_| 0.5 + rng.sample::<f64, _>(StandardNormal)).collect();
            let p = eval::ks_two_sample(&a, &b).unwrap().p_value;
            worst_p = worst_p.max((p - permutation_p(&a, &b)).abs());
            cases += 1;
        }
    }

    // Welch with one rectangular full-length segment is the periodogram.
    let x: Vec<f64> = (0..96)
        .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 48.0).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let set = ScenarioSet::new(x.clone(), 96, 15, Scaling::None).unwrap();
    let psd = eval::welch_psd(&set, 96, 0.0, Window::Rectangular).unwrap();
    let oracle = direct_periodogram(&x, 4.0);
    let welch_rel = psd
        .power
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs() / b.abs())
        .fold(0.0, f64::max);

    // KDE normalization on its default grid and the two hand values.
    let samples: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
    let h = eval::silverman_bandwidth(&samples).unwrap();
    let grid = eval::kde_grid(&samples, h, eval::KDE_GRID_POINTS);
    let pdf = eval::kde_pdf(&samples, &grid, None).unwrap();
    let step = grid[1] - grid[0];
    let integral = step * (pdf.iter().sum::<f64>() - 0.5 * (pdf[0] + pdf[pdf.len() - 1]));
    let v1 = eval::kde_pdf(&[0.0, 0.0], &[0.0], Some(1.0)).unwrap()[0];
    let v2 = eval::kde_pdf(&[-1.0, 1.0], &[0.0], Some(1.0)).unwrap()[0];
    let hand = (v1 - 0.398_942_280_401_432_7).abs().max((v2 - 0.241_970_724_519_143_37).abs());

    let elapsed = start.elapsed();
    let pass = statistic_mismatches == 0
        && worst_p <= 0.05
        && welch_rel <= 1e-10
        && (integral - 1.0).abs() <= 1e-3
        && hand <= 1e-6;
    verdict(
        "5",
        pass,
        &format!(
            "KS statistic mismatches {statistic_mismatches}/200, max p-value gap {worst_p:.2e} \
             over {cases} pairs, Welch rel. error {welch_rel:.2e}, KDE integral {integral:.6}, \
             hand-value error {hand:.1e}, {elapsed:.1?}"
        ),
    );
    assert!(pass);
    assert!(elapsed.as_secs() < 60);
}

// ---------------------------------------------------------------------------
// 6. CEV component counts.

/// Data whose sample covariance is exactly `Q diag(lambda) Qᵀ`: two mirrored
/// rows per direction.
fn planted(lambda: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = lambda.len();
    let q = random_orthogonal(d, rng);
    let n = 2 * d;
    let mut data = Vec::with_capacity(n * d);
    for (k, &l) in lambda.iter().enumerate() {
        let a = (l * (n - 1) as f64 / 2.0).sqrt();
        for sign in [1.0, -1.0] {
            data.extend((0..d).map(|i| 0.5 + sign * a * q[i * d + k]));
        }
    }
    data
}

fn oracle_counts(lambda: &[f64]) -> Vec<usize> {
    let mut sorted = lambda.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    let rank = sorted.iter().filter(|&&l| l > 1e-12 * sorted[0]).count();
    eval::CEV_THRESHOLDS
        .iter()
        .map(|&t| {
            if t >= 1.0 {
                return rank;
            }
            let mut acc = 0.0;
            for (i, l) in sorted.iter().enumerate() {
                acc += l;
                if acc / total >= t {
                    return i + 1;
                }
            }
            rank
        })
        .collect()
}

fn opsd_counts(path: &str, value: &str, capacity: Option<&str>) -> Vec<usize> {
    let mut schema = ColumnSchema::new("cet_cest_timestamp", value);
    if let Some(c) = capacity {
        schema = schema.with_capacity(c);
    }
    let raw = dataio::load_csv(path, &schema).unwrap();
    let keep: Vec<usize> = raw
        .timestamps()
        .iter()
        .enumerate()
        .filter(|(_, t)| (2013..=2015).contains(&chrono::Datelike::year(*t)))
        .map(|(i, _)| i)
        .collect();
    let series = RawSeries::new(
        keep.iter().map(|&i| raw.timestamps()[i]).collect(),
        keep.iter().map(|&i| raw.values()[i]).collect(),
        raw.capacity().map(|c| keep.iter().map(|&i| c[i]).collect()),
    )
    .unwrap();
    let sliced = clean_and_slice(&series, 96).unwrap();
    let (mode, cap) = match capacity {
        Some(_) => (ScalingMode::CapacityFactor, series.capacity()),
        None => (ScalingMode::MinMax, None),
    };
    let scaled = scale(&sliced, mode, cap).unwrap();
    eval::cev_report(&pca::fit(&scaled).unwrap())
        .into_iter()
        .map(|(_, m)| m)
        .collect()
}

#[test]
fn criterion_6_cev_table() {
    let _serial = serial();
    if let Ok(path) = std::env::var("PCFLOW_OPSD_CSV") {
        let cases = [
            ("PV", "DE_solar_generation_actual", Some("DE_solar_capacity"), [3, 6, 16, 62]),
            ("wind", "DE_wind_generation_actual", Some("DE_wind_capacity"), [6, 10, 44, 96]),
            ("load", "DE_load_actual_entsoe_transparency", None, [5, 16, 63, 96]),
        ];
        let mut pass = true;
        let mut lines = Vec::new();
        for (name, value, capacity, expected) in cases {
            let got = opsd_counts(&path, value, capacity);
            pass &= got.iter().zip(expected).all(|(&g, e)| g.abs_diff(e) <= 1);
            lines.push(format!("{name} {got:?} (reference {expected:?})"));
        }
        verdict("6 (German data)", pass, &lines.join("; "));
        assert!(pass);
        return;
    }

    println!("criterion 6: German data set not available (set PCFLOW_OPSD_CSV); checking planted-spectrum surrogate");
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut pass = true;
    let mut lines = Vec::new();
    // Geometric spectra with a planted rank: a few dominant components, a
    // long tail, and exact zeros beyond the rank (62 of 96 for PV data).
    for (decay, rank) in [(0.75, 62usize), (0.85, 96), (0.6, 40)] {
        let lambda: Vec<f64> = (0..96)
            .map(|k| if k < rank { decay_f(decay, k) } else { 0.0 })
            .collect();
        let data = planted(&lambda, &mut rng);
        let decomposition: PcaDecomposition = pca::fit_matrix(&data, 96).unwrap();
        let got: Vec<usize> = eval::cev_report(&decomposition).into_iter().map(|(_, m)| m).collect();
        let expected = oracle_counts(&lambda);
        pass &= got == expected;
        lines.push(format!("decay {decay} rank {rank}: {got:?} vs planted {expected:?}"));
    }
    verdict("6 (surrogate)", pass, &lines.join("; "));
    assert!(pass);
}

fn decay_f(decay: f64, k: usize) -> f64 {
    // Keeps cumulative ratios clear of the thresholds by a wide margin.
    decay.powi(k as i32) * (1.0 + 0.01 * (k % 3) as f64)
}

// ---------------------------------------------------------------------------
// 7. Exact-zero night columns survive PCF sampling but not FSNF sampling.

#[test]
fn criterion_7_night_columns() {
    let _serial = serial();
    let start = Instant::now();
    let profile = PvProfile::default();
    let night: Vec<usize> = (0..profile.sunrise).chain(profile.sunset..profile.period_length).collect();
    let mut pass = true;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let config = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let data = toy::pv_like(365, profile, config.data_seed()).unwrap();
        let (train, val) = dataio::split(&data, 0.2, config.split_seed()).unwrap();
        let arch = FlowArch::default();
        let stats = |model: &FlowModel| {
            let s = model.sample(1000, config.sample_seed(), 15).unwrap();
            let m = eval::marginal_stats(&s, 0, 24 * 60).unwrap();
            let max_mean = night.iter().map(|&j| m[j].mean.abs()).fold(0.0, f64::max);
            let max_var = night.iter().map(|&j| m[j].variance).fold(0.0, f64::max);
            (max_mean, max_var)
        };
        let (pcf, _) = fit_pcf(&train, &val, Truncation::Cev(0.99), &arch, &config).unwrap();
        let (fsnf, _) = fit_fsnf(&train, &val, &arch, &config).unwrap();
        let (pm, pv) = stats(&pcf);
        let (_, fv) = stats(&fsnf);
        pass &= pm <= 1e-8 && pv <= 1e-8 && fv > 1e-6;
        lines.push(format!(
            "seed {seed}: PCF max |mean| {pm:.1e} max var {pv:.1e}; FSNF max var {fv:.2e}"
        ));
    }
    let elapsed = start.elapsed();
    verdict("7", pass, &format!("{}; {elapsed:.1?}", lines.join("; ")));
    assert!(pass);
    assert!(elapsed.as_secs() < 600);
}

// ---------------------------------------------------------------------------
// 8. Determinism of model files, samples and training logs.

#[test]
fn criterion_8_determinism() {
    let _serial = serial();
    let run = |seed: u64| {
        let config = TrainConfig {
            seed,
            epochs: 25,
            ..TrainConfig::default()
        };
        let data = toy::pv_like(80, PvProfile::default(), config.data_seed()).unwrap();
        let (train, val) = dataio::split(&data, 0.2, config.split_seed()).unwrap();
        let arch = FlowArch::default();
        let mut out = Vec::new();
        for pcf in [true, false] {
            let (model, log) = if pcf {
                fit_pcf(&train, &val, Truncation::Cev(0.999), &arch, &config).unwrap()
            } else {
                fit_fsnf(&train, &val, &arch, &config).unwrap()
            };
            let samples = model.sample(200, config.sample_seed(), 15).unwrap();
            out.push((
                modelfile::to_bytes(&model),
                dataio::to_csv_string(&samples, None),
                log.to_csv(None),
            ));
        }
        out
    };
    let first = run(9);
    let second = run(9);
    let other = run(10);
    let identical = first == second;
    let seed_matters = first != other;
    verdict(
        "8",
        identical && seed_matters,
        &format!(
            "same seed byte-identical: {identical}; different seed differs: {seed_matters}; \
             model file sizes {:?}",
            first.iter().map(|o| o.0.len()).collect::<Vec<_>>()
        ),
    );
    assert!(identical && seed_matters);
}
