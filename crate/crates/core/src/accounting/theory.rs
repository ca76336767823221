use crate::roles::TrainLog;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TheoryError {
    #[error("invalid theory parameter: {0}")]
    Invalid(&'static str),
    #[error("training log has no gradient-norm instrumentation")]
    MissingGradNorms,
}

/// Inputs to the stationarity bound.
///
/// `eta_client` and `eta_server` are checked against their own step-size
/// limits; the bound itself uses the smaller of the two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    pub l_smooth: f64,
    pub sigma_c_sq: f64,
    pub sigma_s_sq: f64,
    pub d_c: u64,
    pub t: u64,
    pub q: u64,
    pub eta_client: f64,
    pub eta_server: f64,
    pub lambda: f64,
}

impl TheoryParams {
    /// Same step size on both sides.
    #[allow(clippy::too_many_arguments)]
    pub fn unified(l_smooth: f64, sigma_c_sq: f64, sigma_s_sq: f64, d_c: u64, t: u64, q: u64, eta: f64, lambda: f64) -> Self {
        Self {
            l_smooth,
            sigma_c_sq,
            sigma_s_sq,
            d_c,
            t,
            q,
            eta_client: eta,
            eta_server: eta,
            lambda,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta_client.min(self.eta_server)
    }

    fn validate(&self) -> Result<(), TheoryError> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !pos(self.l_smooth) {
            return Err(TheoryError::Invalid("smoothness constant must be positive"));
        }
        if !pos(self.eta_client) || !pos(self.eta_server) {
            return Err(TheoryError::Invalid("step sizes must be positive"));
        }
        if self.d_c == 0 || self.t == 0 || self.q == 0 {
            return Err(TheoryError::Invalid("d_c, T and Q must be positive"));
        }
        if !nonneg(self.sigma_c_sq) || !nonneg(self.sigma_s_sq) {
            return Err(TheoryError::Invalid("variances must be non-negative"));
        }
        if !nonneg(self.lambda) {
            return Err(TheoryError::Invalid("smoothing parameter must be non-negative"));
        }
        Ok(())
    }
}

/// `(server, client)` step-size limits: `3/(4L)` and `Q/(4 L d_c)`.
pub fn step_size_limits(l_smooth: f64, q: u64, d_c: u64) -> (f64, f64) {
    (0.75 / l_smooth, q as f64 / (4.0 * l_smooth * d_c as f64))
}

/// Unified step size `sqrt(Q / (d_c T L))`.
pub fn horizon_step(l_smooth: f64, d_c: u64, t: u64, q: u64) -> f64 {
    libm::sqrt(q as f64 / (d_c as f64 * t as f64 * l_smooth))
}

/// Largest squared smoothing parameter `sqrt(Q / (d_c^5 T L^3))`.
pub fn horizon_lambda_sq(l_smooth: f64, d_c: u64, t: u64, q: u64) -> f64 {
    let dc = d_c as f64;
    libm::sqrt(q as f64 / (dc * dc * dc * dc * dc * t as f64 * l_smooth * l_smooth * l_smooth))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub value: f64,
    /// Initialization, server variance, client variance and smoothing bias.
    pub terms: [f64; 4],
    pub eta: f64,
    /// `(server, client)` step-size limits.
    pub limits: (f64, f64),
    /// Whether both step sizes are within their limits.
    pub valid: bool,
}

/// `4F/(ηT) + 2Lησ_s² + 4ηLd_cσ_c²/Q + L²λ²d_c³/Q`.
pub fn convergence_bound(p: &TheoryParams, f: f64) -> Result<Bound, TheoryError> {
    p.validate()?;
    if !f.is_finite() {
        return Err(TheoryError::Invalid("loss drop must be finite"));
    }
    let l = p.l_smooth;
    let eta = p.eta();
    let dc = p.d_c as f64;
    let q = p.q as f64;
    let terms = [
        4.0 * f / (eta * p.t as f64),
        2.0 * l * eta * p.sigma_s_sq,
        4.0 * eta * l * dc * p.sigma_c_sq / q,
        l * l * p.lambda * p.lambda * dc * dc * dc / q,
    ];
    let limits = step_size_limits(l, p.q, p.d_c);
    Ok(Bound {
        value: terms.iter().sum(),
        terms,
        eta,
        limits,
        valid: p.eta_server <= limits.0 && p.eta_client <= limits.1,
    })
}

/// Measured stationarity of a run next to its bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub measured: f64,
    pub bound: Bound,
    pub loss_drop: f64,
    /// `measured / bound`.
    pub ratio: f64,
    pub violated: bool,
}

impl core::fmt::Display for BoundReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "measured={:.6e} bound={:.6e} ratio={:.4} step_valid={} violated={}",
            self.measured, self.bound.value, self.ratio, self.bound.valid, self.violated
        )
    }
}

/// Compare a run's `(1/T) Σ_{t=0..T} ‖∇ℒ(θᵗ)‖²` with the bound at
/// `F = ℒ(θ⁰) − ℒ(θᵀ)`. `T` is taken from the log.
pub fn bound_check(log: &TrainLog, params: &TheoryParams) -> Result<BoundReport, TheoryError> {
    let measured = log.stationarity().ok_or(TheoryError::MissingGradNorms)?;
    let loss_drop = log.loss_drop().ok_or(TheoryError::MissingGradNorms)?;
    let p = TheoryParams {
        t: log.iterations() as u64,
        ..*params
    };
    let bound = convergence_bound(&p, loss_drop)?;
    Ok(BoundReport {
        measured,
        bound,
        loss_drop,
        ratio: measured / bound.value,
        violated: measured > bound.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn plug_in_example() {
        let p = TheoryParams::unified(1.0, 1.0, 1.0, 10, 100, 10, 0.1, 0.0);
        let b = convergence_bound(&p, 1.0).unwrap();
        assert!(close(b.terms[0], 0.4) && close(b.terms[1], 0.2) && close(b.terms[2], 0.4));
        assert_eq!(b.terms[3], 0.0);
        assert!(close(b.value, 1.0));
        // 0.1 <= min(0.75, 0.25)
        assert!(b.valid);
    }

    #[test]
    fn noiseless_reduces_to_first_term() {
        let p = TheoryParams::unified(2.0, 0.0, 0.0, 7, 50, 3, 0.01, 0.0);
        let b = convergence_bound(&p, 3.0).unwrap();
        assert!(close(b.value, 4.0 * 3.0 / (0.01 * 50.0)));
    }

    #[test]
    fn invalid_step_is_flagged_not_rejected() {
        let p = TheoryParams::unified(1.0, 0.0, 0.0, 100, 10, 1, 0.1, 0.0);
        let b = convergence_bound(&p, 1.0).unwrap();
        assert!(!b.valid);
        assert!(close(b.limits.1, 1.0 / 400.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let ok = TheoryParams::unified(1.0, 0.0, 0.0, 1, 1, 1, 0.1, 0.0);
        for bad in [
            TheoryParams { l_smooth: 0.0, ..ok },
            TheoryParams { eta_client: -1.0, ..ok },
            TheoryParams { q: 0, ..ok },
            TheoryParams { t: 0, ..ok },
            TheoryParams { d_c: 0, ..ok },
            TheoryParams { sigma_c_sq: -0.1, ..ok },
            TheoryParams { lambda: f64::NAN, ..ok },
        ] {
            assert!(convergence_bound(&bad, 1.0).is_err());
        }
        assert!(convergence_bound(&ok, f64::INFINITY).is_err());
    }

    #[test]
    fn horizon_coefficients() {
        let (l, dc, t, q) = (3.0, 20u64, 1000u64, 10u64);
        let (f, ss, sc) = (1.7, 0.3, 0.9);
        let eta = horizon_step(l, dc, t, q);
        let lam = libm::sqrt(horizon_lambda_sq(l, dc, t, q));
        let b = convergence_bound(&TheoryParams::unified(l, sc, ss, dc, t, q, eta, lam), f).unwrap();
        let (dcf, tf, qf) = (dc as f64, t as f64, q as f64);
        let a = (dcf * l / (tf * qf)).sqrt();
        let c = (l * qf / (dcf * tf)).sqrt();
        let rel = |x: f64, y: f64| ((x - y) / y).abs() < 1e-12;
        assert!(rel(b.terms[0], 4.0 * a * f));
        assert!(rel(b.terms[1], 2.0 * c * ss));
        assert!(rel(b.terms[2], 4.0 * a * sc));
        assert!(rel(b.terms[3], a));
    }

    proptest! {
        #[test]
        fn monotone_in_dc_lambda_and_q(
            l in 0.1f64..10.0, f in 0.0f64..10.0, sc in 0.0f64..2.0, ss in 0.0f64..2.0,
            dc in 1u64..100, q in 1u64..20, lam in 0.0f64..1.0, t in 1u64..10_000,
        ) {
            // Step size valid for every perturbed argument below.
            let eta = step_size_limits(l, q, dc + 1).1.min(0.75 / l);
            let base = TheoryParams::unified(l, sc, ss, dc, t, q, eta, lam);
            let v = |p: TheoryParams| convergence_bound(&p, f).unwrap();
            let b0 = v(base);
            prop_assert!(b0.valid);
            let wider = v(TheoryParams { d_c: dc + 1, ..base });
            let smoother = v(TheoryParams { lambda: lam + 0.1, ..base });
            let more_q = v(TheoryParams { q: q + 1, ..base });
            prop_assert!(wider.value >= b0.value);
            prop_assert!(smoother.value >= b0.value);
            prop_assert!(more_q.value <= b0.value);
        }
    }
}
