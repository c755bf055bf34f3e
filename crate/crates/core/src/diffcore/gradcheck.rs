use rand::Rng as _;

use super::graph::Graph;
use super::mlp::{Mlp, MlpConfig};
use super::tensor::Tensor;
use crate::error::{invalid, Result};
use crate::seed;

/// Central-difference gradient `(f(θ+h) − f(θ−h)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return invalid(format!("finite-difference step must be positive, got {step}"));
    }
    let mut theta = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + step;
        let up = f(&theta)?;
        theta[i] = orig - step;
        let down = f(&theta)?;
        theta[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Largest elementwise relative deviation, with the denominator floored at
/// `floor` so near-zero gradients are compared absolutely.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Result of [`mlp_gradient_sweep`].
#[derive(Clone, Debug)]
pub struct GradientSweep {
    pub configs: usize,
    pub max_relative_error: f64,
    /// Configuration with the largest deviation.
    pub worst: Option<MlpConfig>,
}

/// Step used by the sweep's central differences.
pub const SWEEP_STEP: f64 = 1e-5;

fn mse_loss(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Compares backward against central differences on random MLPs (1 to 3
/// layers, up to 16 hidden units, random skip flag and batch size) under an
/// MSE loss. Relative errors use a denominator floor of `1e-6`.
pub fn mlp_gradient_sweep(configs: usize, seed: u64) -> Result<GradientSweep> {
    let mut rng = seed::rng(seed, "diffcore/gradcheck");
    let mut out = GradientSweep { configs, max_relative_error: 0.0, worst: None };
    for _ in 0..configs {
        let config = MlpConfig {
            skip: rng.random(),
            ..MlpConfig::new(rng.random_range(1..=4), rng.random_range(1..=16), rng.random_range(1..=3), rng.random_range(1..=3))
        };
        let mlp = Mlp::new(config.clone(), &mut rng)?;
        let batch = rng.random_range(1..=5);
        let x = Tensor::new(
            vec![batch, config.input_dim],
            (0..batch * config.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let target: Vec<f64> = (0..batch * config.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let vars = mlp.bind(&mut g);
        let input = g.input(x.clone());
        let pred = vars.forward(&mut g, &config, input, None)?;
        let loss = g.mse(pred, &target)?;
        let grads = g.backward(loss)?;
        let analytic: Vec<f64> = vars.grads(&grads, &mlp).iter().flat_map(|t| t.data().to_vec()).collect();

        let flat: Vec<f64> = mlp.params().iter().flat_map(|t| t.data().to_vec()).collect();
        let numeric = finite_diff_grad(
            |theta| {
                let mut probe = mlp.clone();
                let mut offset = 0;
                for p in probe.params_mut() {
                    let n = p.len();
                    p.data_mut().copy_from_slice(&theta[offset..offset + n]);
                    offset += n;
                }
                Ok(mse_loss(probe.forward(&x)?.data(), &target))
            },
            &flat,
            SWEEP_STEP,
        )?;
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        if err > out.max_relative_error || out.worst.is_none() {
            out.max_relative_error = out.max_relative_error.max(err);
            out.worst = Some(config);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = finite_diff_grad(|t| Ok(t[0] * t[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn sine_at_zero() {
        let g = finite_diff_grad(|t| Ok(t[0].sin()), &[0.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn small_sweep_agrees() {
        let sweep = mlp_gradient_sweep(5, 11).unwrap();
        assert!(sweep.max_relative_error <= 1e-4, "{sweep:?}");
    }

    #[test]
    fn nonpositive_step_is_rejected() {
        assert!(finite_diff_grad(|t| Ok(t[0]), &[1.0], 0.0).is_err());
        assert!(finite_diff_grad(|t| Ok(t[0]), &[1.0], f64::NAN).is_err());
    }
}
