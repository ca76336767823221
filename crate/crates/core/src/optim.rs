//! Zeroth-order and first-order update primitives.
//!
//! The client never stores a perturbation vector. A perturbation is named by
//! its 64-bit seed and regenerated on demand: [`perturb`] and [`zo_update`]
//! both walk the normal stream of that seed in coordinate order, so they see
//! bitwise-identical `z`.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{derive_seed, PrngStream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("invalid optimizer configuration: {0}")]
    Config(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: parameters have {params}, gradient has {grad}")]
    Dim { params: usize, grad: usize },
}

/// Zeroth-order settings shared by the client estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoConfig {
    /// Perturbation and smoothing scale.
    pub eps: f64,
    /// Perturbations per iteration.
    pub q: u32,
    pub lr_client: f64,
}

impl ZoConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(OptimError::Config("eps must be positive"));
        }
        if self.q == 0 {
            return Err(OptimError::Config("Q must be at least 1"));
        }
        if !(self.lr_client > 0.0 && self.lr_client.is_finite()) {
            return Err(OptimError::Config("client learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoConfig {
    pub lr_server: f64,
}

impl FoConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.lr_server > 0.0 && self.lr_server.is_finite()) {
            return Err(OptimError::Config("server learning rate must be positive"));
        }
        Ok(())
    }
}

/// Everything the client keeps about one perturbation: the projected
/// gradient (already divided by `2 eps Q`) and the seed of its direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoGradientRecord {
    pub g_hat: f64,
    pub seed: u64,
}

/// The standard-normal direction of `seed`, materialized. Oracles only; the
/// protocol path regenerates coordinates on the fly.
pub fn direction(seed: u64, dim: usize) -> Vec<f64> {
    let mut z = vec![0.0; dim];
    PrngStream::new(seed).fill_normal(&mut z);
    z
}

/// `params[i] += delta * z[i]` with `z` the normal stream of `seed`.
pub fn perturb(params: &mut [f64], delta: f64, seed: u64) -> Result<(), OptimError> {
    if !delta.is_finite() {
        return Err(OptimError::NonFinite("perturbation scale"));
    }
    if !params.iter().all(|p| p.is_finite()) {
        return Err(OptimError::NonFinite("parameters"));
    }
    if delta == 0.0 {
        return Ok(());
    }
    let mut stream = PrngStream::new(seed);
    for p in params.iter_mut() {
        *p += delta * stream.next_normal();
    }
    Ok(())
}

/// `(loss_plus - loss_minus) / (2 eps Q)`.
pub fn spsa_scalar(loss_plus: f64, loss_minus: f64, eps: f64, q: u32) -> Result<f64, OptimError> {
    if !(eps > 0.0) {
        return Err(OptimError::Config("eps must be positive"));
    }
    if q == 0 {
        return Err(OptimError::Config("Q must be at least 1"));
    }
    if !(loss_plus.is_finite() && loss_minus.is_finite()) {
        return Err(OptimError::NonFinite("loss"));
    }
    Ok((loss_plus - loss_minus) / (2.0 * eps * q as f64))
}

/// `params[i] -= lr * g_hat * z[i]`, regenerating `z` from `record.seed`.
///
/// Bitwise equal to `perturb(params, -(lr * g_hat), seed)`.
pub fn zo_update(params: &mut [f64], record: &ZoGradientRecord, lr: f64) -> Result<(), OptimError> {
    if !(record.g_hat.is_finite() && lr.is_finite()) {
        return Err(OptimError::NonFinite("projected gradient"));
    }
    let step = lr * record.g_hat;
    if step == 0.0 {
        return Ok(());
    }
    let mut stream = PrngStream::new(record.seed);
    for p in params.iter_mut() {
        *p -= step * stream.next_normal();
    }
    Ok(())
}

/// Seed of the `q`-th direction used by [`zo_dense_estimate`].
pub fn dense_direction_seed(seed: u64, q: u32) -> u64 {
    derive_seed(seed, &[q as u64])
}

/// The averaged two-point estimator as an explicit vector:
/// `(1/Q) sum_q (L(theta + eps z_q) - L(theta - eps z_q)) / (2 eps) * z_q`.
///
/// `fill_direction(q, out)` writes `z_q`. Performs exactly `2Q` loss
/// evaluations.
pub fn zo_dense_estimate_with<E, F, D>(
    theta: &[f64],
    mut loss: F,
    eps: f64,
    q: u32,
    mut fill_direction: D,
) -> Result<Vec<f64>, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    D: FnMut(u32, &mut [f64]),
    E: From<OptimError>,
{
    if !(eps > 0.0) {
        return Err(OptimError::Config("eps must be positive").into());
    }
    if q == 0 {
        return Err(OptimError::Config("Q must be at least 1").into());
    }
    let d = theta.len();
    let mut z = vec![0.0; d];
    let mut probe = vec![0.0; d];
    let mut acc = vec![0.0; d];
    for k in 0..q {
        fill_direction(k, &mut z);
        for i in 0..d {
            probe[i] = theta[i] + eps * z[i];
        }
        let plus = loss(&probe)?;
        for i in 0..d {
            probe[i] = theta[i] - eps * z[i];
        }
        let minus = loss(&probe)?;
        let scale = (plus - minus) / (2.0 * eps);
        for (a, zi) in acc.iter_mut().zip(&z) {
            *a += scale * zi;
        }
    }
    for a in &mut acc {
        *a /= q as f64;
    }
    Ok(acc)
}

/// [`zo_dense_estimate_with`] using directions `direction(dense_direction_seed(seed, q))`.
pub fn zo_dense_estimate<E, F>(theta: &[f64], loss: F, eps: f64, q: u32, seed: u64) -> Result<Vec<f64>, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    E: From<OptimError>,
{
    zo_dense_estimate_with(theta, loss, eps, q, |k, out| {
        PrngStream::new(dense_direction_seed(seed, k)).fill_normal(out)
    })
}

/// `params -= lr * grad`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) -> Result<(), OptimError> {
    if params.len() != grad.len() {
        return Err(OptimError::Dim {
            params: params.len(),
            grad: grad.len(),
        });
    }
    if !lr.is_finite() {
        return Err(OptimError::NonFinite("learning rate"));
    }
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn zero_delta_is_a_no_op() {
        let mut p = vec![1.5, -2.0, 3.25];
        perturb(&mut p, 0.0, 99).unwrap();
        assert_eq!(p, vec![1.5, -2.0, 3.25]);
    }

    #[test]
    fn perturbing_origin_yields_the_reference_normals() {
        let mut p = vec![0.0; 2];
        perturb(&mut p, 1.0, 42).unwrap();
        let expected = [0.4147197504315305, 0.6526812221519427];
        for (a, e) in p.iter().zip(expected) {
            assert!((a - e).abs() <= 1e-15 * e.abs());
        }
        assert_eq!(bits(&p), bits(&direction(42, 2)));
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let mut p = vec![1.0, f64::NAN];
        assert!(matches!(perturb(&mut p, 0.1, 1), Err(OptimError::NonFinite(_))));
        assert!(matches!(perturb(&mut [1.0], f64::INFINITY, 1), Err(OptimError::NonFinite(_))));
    }

    #[test]
    fn spsa_scalar_examples() {
        assert_eq!(spsa_scalar(0.7, 0.7, 0.1, 3).unwrap(), 0.0);
        let (eps, q) = (0.05, 4);
        assert_eq!(spsa_scalar(2.0 * eps * q as f64, 0.0, eps, q).unwrap(), 1.0);
        assert!((spsa_scalar(1.3, 0.7, 0.1, 3).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(spsa_scalar(1.0, 0.0, 0.0, 1), Err(OptimError::Config(_))));
        assert!(matches!(spsa_scalar(1.0, 0.0, 0.1, 0), Err(OptimError::Config(_))));
    }

    #[test]
    fn zero_projected_gradient_is_a_no_op() {
        let mut p = vec![0.25, 1.0];
        zo_update(&mut p, &ZoGradientRecord { g_hat: 0.0, seed: 5 }, 0.1).unwrap();
        assert_eq!(p, vec![0.25, 1.0]);
    }

    #[test]
    fn q_records_sum_to_averaged_estimator_step() {
        // Scripted losses for Q = 4 perturbations of a 6-dim vector.
        let (eps, lr, q) = (1e-3, 0.05, 4u32);
        let losses = [(1.2, 0.8), (0.3, 0.9), (2.0, 2.0), (0.51, 0.49)];
        let theta0 = vec![0.1, -0.3, 0.7, 1.1, -2.0, 0.0];
        let seeds = [11u64, 22, 33, 44];

        let mut applied = theta0.clone();
        for (&(lp, lm), &seed) in losses.iter().zip(&seeds) {
            let g_hat = spsa_scalar(lp, lm, eps, q).unwrap();
            zo_update(&mut applied, &ZoGradientRecord { g_hat, seed }, lr).unwrap();
        }

        let mut avg = vec![0.0; theta0.len()];
        for (&(lp, lm), &seed) in losses.iter().zip(&seeds) {
            let z = direction(seed, theta0.len());
            for (a, zi) in avg.iter_mut().zip(z) {
                *a += (lp - lm) / (2.0 * eps) * zi / q as f64;
            }
        }
        for i in 0..theta0.len() {
            let expected = theta0[i] - lr * avg[i];
            assert!((applied[i] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn dense_estimate_of_constant_is_zero() {
        let g: Vec<f64> =
            zo_dense_estimate::<OptimError, _>(&[1.0, 2.0, 3.0], |_| Ok(5.0), 0.1, 3, 7).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn dense_estimate_is_exact_projection_on_quadratics() {
        let theta = [0.3, -1.2, 2.0, 0.5];
        let half_norm = |t: &[f64]| -> Result<f64, OptimError> { Ok(0.5 * t.iter().map(|v| v * v).sum::<f64>()) };
        let g = zo_dense_estimate(&theta, half_norm, 0.01, 1, 3).unwrap();
        let z = direction(dense_direction_seed(3, 0), 4);
        let proj: f64 = z.iter().zip(&theta).map(|(a, b)| a * b).sum();
        for (gi, zi) in g.iter().zip(&z) {
            assert!((gi - proj * zi).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_estimate_counts_loss_calls() {
        let mut calls = 0;
        let _ = zo_dense_estimate::<OptimError, _>(
            &[1.0; 3],
            |_| {
                calls += 1;
                Ok(0.0)
            },
            0.1,
            5,
            1,
        )
        .unwrap();
        assert_eq!(calls, 10);
    }

    #[test]
    fn sgd_examples() {
        let mut p = vec![1.0, 1.0];
        sgd_step(&mut p, &[1.0, -1.0], 0.0).unwrap();
        assert_eq!(p, vec![1.0, 1.0]);
        sgd_step(&mut p, &[1.0, -1.0], 0.5).unwrap();
        assert_eq!(p, vec![0.5, 1.5]);
        assert!(matches!(sgd_step(&mut p, &[1.0], 0.5), Err(OptimError::Dim { .. })));

        // 1/2 theta^2 has gradient theta; 100 steps of lr 0.1 give 0.9^100.
        let mut t = vec![1.0];
        for _ in 0..100 {
            let g = t.clone();
            sgd_step(&mut t, &g, 0.1).unwrap();
        }
        assert!((t[0] - 0.9f64.powi(100)).abs() < 1e-18);
        assert!((t[0] - 2.656e-5).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        let ok = ZoConfig { eps: 1e-3, q: 1, lr_client: 0.1 };
        assert!(ok.validate().is_ok());
        assert!(ZoConfig { eps: 0.0, ..ok }.validate().is_err());
        assert!(ZoConfig { q: 0, ..ok }.validate().is_err());
        assert!(ZoConfig { lr_client: -1.0, ..ok }.validate().is_err());
        assert!(FoConfig { lr_server: 0.0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn restore_sequence_is_exact(seed in any::<u64>(), dim in prop::sample::select(vec![1usize, 10, 1000]),
                                     eps in 1e-6f64..1.0, init in any::<u64>()) {
            let mut p = direction(init, dim);
            let orig = p.clone();
            perturb(&mut p, eps, seed).unwrap();
            perturb(&mut p, -2.0 * eps, seed).unwrap();
            perturb(&mut p, eps, seed).unwrap();
            for (a, b) in p.iter().zip(&orig) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn zo_update_is_perturb_with_negated_step(seed in any::<u64>(), g in -10.0f64..10.0, lr in 0.0f64..1.0) {
            let mut a = direction(seed ^ 1, 17);
            let mut b = a.clone();
            zo_update(&mut a, &ZoGradientRecord { g_hat: g, seed }, lr).unwrap();
            perturb(&mut b, -(lr * g), seed).unwrap();
            prop_assert_eq!(bits(&a), bits(&b));
        }

        #[test]
        fn perturb_and_update_consume_the_same_stream(seed in any::<u64>(), dim in 1usize..200) {
            // Perturbing the origin by +1 and updating it with lr * g = -1
            // both expose z itself.
            let mut via_perturb = vec![0.0; dim];
            perturb(&mut via_perturb, 1.0, seed).unwrap();
            let mut via_update = vec![0.0; dim];
            zo_update(&mut via_update, &ZoGradientRecord { g_hat: -1.0, seed }, 1.0).unwrap();
            prop_assert_eq!(bits(&via_perturb), bits(&via_update));
            prop_assert_eq!(bits(&via_perturb), bits(&direction(seed, dim)));
        }
    }
}
