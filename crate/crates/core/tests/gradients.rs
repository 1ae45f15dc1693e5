//! Reverse-mode gradients against central finite differences.

use pcflow::conditioner::{DenseNet, OutputBound, SCALE_CAP};
use pcflow::flow::{CouplingLayer, FlowModel, Parity, Standardizer};
use pcflow::train::nll_and_grads;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn close(analytic: f64, numeric: f64) -> bool {
    // Relative to the larger magnitude, with a floor so that gradients that
    // are zero up to roundoff do not demand impossible precision.
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()).max(1e-3)
}

fn random_net(rng: &mut ChaCha8Rng) -> DenseNet {
    let depth = rng.random_range(1..=4);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=5)).collect();
    let bound = if rng.random_bool(0.5) {
        OutputBound::Tanh(SCALE_CAP)
    } else {
        OutputBound::None
    };
    let mut net = DenseNet::glorot(&widths, bound, rng).unwrap();
    // Non-zero biases exercise every term of the backward pass.
    for p in net.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    net
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn conditioner_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..120 {
        let net = random_net(&mut rng);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cot: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, tape) = net.forward(&x).unwrap();
        let (param_grads, input_grads) = net.backward(&tape, &cot).unwrap();

        let loss = |n: &DenseNet, x: &[f64]| dot(&n.forward(x).unwrap().0, &cot);
        for i in 0..net.n_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += STEP;
            let mut minus = net.clone();
            minus.params_mut()[i] -= STEP;
            let numeric = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * STEP);
            assert!(
                close(param_grads[i], numeric),
                "case {case} param {i}: {} vs {numeric}",
                param_grads[i]
            );
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += STEP;
            let mut xm = x.clone();
            xm[i] -= STEP;
            let numeric = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * STEP);
            assert!(
                close(input_grads[i], numeric),
                "case {case} input {i}: {} vs {numeric}",
                input_grads[i]
            );
        }
    }
}

fn random_model(rng: &mut ChaCha8Rng, dim: usize, n_layers: usize) -> FlowModel {
    let hidden = vec![rng.random_range(2..=4); rng.random_range(1..=2)];
    let layers = (0..n_layers)
        .map(|k| CouplingLayer::random(dim, Parity::for_layer(k), &hidden, rng).unwrap())
        .collect();
    let shift = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scale = (0..dim).map(|_| rng.random_range(0.3..2.0)).collect();
    let mut model =
        FlowModel::from_parts(None, Standardizer::new(shift, scale).unwrap(), layers).unwrap();
    // Move the biases away from zero as well.
    let params: Vec<f64> = model
        .params_flat()
        .iter()
        .map(|p| p + rng.random_range(-0.2..0.2))
        .collect();
    model.set_params_flat(&params).unwrap();
    model
}

#[test]
fn nll_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..24 {
        let dim = rng.random_range(2..=5);
        let n_layers = rng.random_range(1..=4);
        let mut model = random_model(&mut rng, dim, n_layers);
        let rows: Vec<Vec<f64>> = (0..rng.random_range(1..=6))
            .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let batch: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let (_, grads) = nll_and_grads(&model, &batch).unwrap();
        let params = model.params_flat();
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] = params[i] + STEP;
            model.set_params_flat(&p).unwrap();
            let up = nll_and_grads(&model, &batch).unwrap().0;
            p[i] = params[i] - STEP;
            model.set_params_flat(&p).unwrap();
            let down = nll_and_grads(&model, &batch).unwrap().0;
            let numeric = (up - down) / (2.0 * STEP);
            assert!(
                close(grads[i], numeric),
                "case {case} param {i}: {} vs {numeric}",
                grads[i]
            );
        }
        model.set_params_flat(&params).unwrap();
    }
}

#[test]
fn batch_nll_is_mean_negative_log_prob() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let dim = rng.random_range(2..=4);
        let model = random_model(&mut rng, dim, 3);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let batch: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let (nll, _) = nll_and_grads(&model, &batch).unwrap();
        let expected = -rows.iter().map(|r| model.log_prob(r).unwrap()).sum::<f64>() / 5.0;
        assert!((nll - expected).abs() < 1e-12, "{nll} vs {expected}");
    }
}
