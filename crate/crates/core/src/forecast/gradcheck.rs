//! Finite-difference verification of the analytic gradients.

use rand::Rng;

use super::net::Network;
use super::train::{loss_grad, loss_value};
use super::{LossKind, ModelSpec};
use crate::error::Result;
use crate::rng::{self, tag};

const FD_STEP: f64 = 1e-5;

/// Compares the analytic gradient of the loss w.r.t. every parameter
/// against central finite differences on one random sample. Returns the
/// maximum over parameters of `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(spec: &ModelSpec, loss: LossKind, seed: u64) -> Result<f64> {
    let net = Network::build(spec)?;
    let mut rng = rng::stream(seed, tag::INIT, 7);
    let mut params = net.init_params(&mut rng);

    let flat = spec.lookback * spec.input_dim;
    let lookback: Vec<f64> = (0..flat).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let target: Vec<f64> = (0..spec.horizon)
        .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
        .collect();
    let ref_permit = 1.0;

    let mut ws = net.workspace();
    let mut out = vec![0.0; spec.horizon];
    let mut dout = vec![0.0; spec.horizon];
    let mut analytic = vec![0.0; net.n_params()];

    net.forward(&params, &lookback, ref_permit, &mut ws, &mut out);
    loss_grad(loss, &out, &target, 1, &mut dout);
    net.backward(&params, &lookback, &mut ws, &dout, &mut analytic);

    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + FD_STEP;
        net.forward(&params, &lookback, ref_permit, &mut ws, &mut out);
        let plus = loss_value(loss, &out, &target);
        params[i] = orig - FD_STEP;
        net.forward(&params, &lookback, ref_permit, &mut ws, &mut out);
        let minus = loss_value(loss, &out, &target);
        params[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_mse_gradient_is_tight() {
        let spec = ModelSpec::linear(4, 5, 3);
        let err = grad_check(&spec, LossKind::Mse, 1).unwrap();
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn mlp_bcel_gradient_checks_out() {
        let spec = ModelSpec::mlp(5, 4, 3, 4);
        let err = grad_check(&spec, LossKind::Bcel, 2).unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn two_layer_lstm_mse_gradient_checks_out() {
        let spec = ModelSpec::lstm(4, 6, 3, 3, 2);
        let err = grad_check(&spec, LossKind::Mse, 3).unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }
}
