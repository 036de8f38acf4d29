//! Log-likelihood evaluation for the residual models.
//!
//! All functions are pure: residuals and parameters in, a finite scalar out.
//! Mixture day-densities are assembled in log space (log-sum-exp) and every
//! per-day density is floored at [`DENSITY_FLOOR`](super::DENSITY_FLOOR)
//! before the log is taken, so one extreme day degrades the objective
//! instead of producing `-inf`.

use super::{
    BernoulliProbs, ContCov, GarchParams, IjParams, JumpCov, JumpMean, ResidualModel,
    DENSITY_FLOOR, JUMP_STATES,
};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

#[inline]
fn log_floor() -> f64 {
    DENSITY_FLOOR.ln()
}

/// Univariate normal log-density.
#[inline]
fn log_phi(x: f64, mean: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::Numerical(format!("normal variance must be > 0, got {var}")));
    }
    let d = x - mean;
    Ok(-0.5 * (LN_2PI + var.ln()) - 0.5 * d * d / var)
}

/// Bivariate normal log-density from covariance entries
/// `[[v1, c], [c, v2]]`.
#[inline]
fn log_phi2(x: &[f64; 2], mean: [f64; 2], v1: f64, v2: f64, c: f64) -> Result<f64> {
    let det = v1 * v2 - c * c;
    if !(det > 0.0 && v1 > 0.0) {
        return Err(Error::Numerical(format!(
            "bivariate covariance not positive definite (v1={v1}, v2={v2}, c={c})"
        )));
    }
    let d1 = x[0] - mean[0];
    let d2 = x[1] - mean[1];
    let q = (d1 * d1 * v2 - 2.0 * c * d1 * d2 + d2 * d2 * v1) / det;
    Ok(-LN_2PI - 0.5 * det.ln() - 0.5 * q)
}

/// Floored log-sum-exp over mixture components (`NEG_INFINITY` marks an
/// absent component).
#[inline]
fn floored_lse(comps: &[f64]) -> f64 {
    let m = comps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_density = if m.is_finite() {
        m + comps.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
    } else {
        f64::NEG_INFINITY
    };
    log_density.max(log_floor())
}

/// One step of the per-series variance recursion:
/// `var_i = alpha0_i + alpha1_i prev_eps_i^2 + alpha2_i prev_var_i`.
pub fn garch_step(garch: &GarchParams, prev_eps: [f64; 2], prev_var: [f64; 2]) -> [f64; 2] {
    let mut var = [0.0; 2];
    for i in 0..2 {
        var[i] = garch.alpha0(i)
            + garch.alpha1(i) * prev_eps[i] * prev_eps[i]
            + garch.alpha2(i) * prev_var[i];
    }
    var
}

/// The full variance path over a residual sample: day 0 uses the stored
/// initial variances, and each later day is driven by the previous day's
/// total residual.
pub fn garch_variance_path(garch: &GarchParams, residuals: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut path = Vec::with_capacity(residuals.len());
    if residuals.is_empty() {
        return path;
    }
    path.push(garch.init_var());
    for d in 1..residuals.len() {
        let prev = path[d - 1];
        path.push(garch_step(garch, residuals[d - 1], prev));
    }
    path
}

fn check_residuals(residuals: &[[f64; 2]]) -> Result<()> {
    if residuals.is_empty() {
        return Err(Error::Data("empty residual sample".into()));
    }
    if residuals.iter().any(|e| !(e[0].is_finite() && e[1].is_finite())) {
        return Err(Error::Data("non-finite residuals".into()));
    }
    Ok(())
}

/// Gaussian model: `sum_d log phi2(eps_d; 0, Sigma)`.
pub fn loglik_gauss(residuals: &[[f64; 2]], cov: &ContCov) -> Result<f64> {
    check_residuals(residuals)?;
    let (v1, v2, c) = cov.entries();
    let mut total = 0.0;
    for eps in residuals {
        total += log_phi2(eps, [0.0, 0.0], v1, v2, c)?.max(log_floor());
    }
    Ok(total)
}

/// Independent-jump model, one series: each day is the two-component mixture
///
/// ```text
/// (1 - lambda) phi(eps; -lambda mu, sigma^2)
///     + lambda phi(eps; (1 - lambda) mu, sigma^2 + gamma^2)
/// ```
///
/// (no-jump days are shifted by `-lambda mu` so the unconditional mean is
/// zero). The two series are evaluated independently; the continuous-part
/// correlation is estimated afterwards from the residual pairs and does not
/// appear here.
pub fn loglik_ij_series(
    residuals: &[f64],
    lambda: f64,
    mu: f64,
    sigma: f64,
    gamma: f64,
) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Data("empty residual sample".into()));
    }
    if residuals.iter().any(|e| !e.is_finite()) {
        return Err(Error::Data("non-finite residuals".into()));
    }
    if !(lambda.is_finite() && lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParam(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParam(format!("sigma must be finite and > 0, got {sigma}")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidParam(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    if !mu.is_finite() {
        return Err(Error::InvalidParam("mu must be finite".into()));
    }
    let v_cont = sigma * sigma;
    let v_jump = sigma * sigma + gamma * gamma;
    let m_cont = -lambda * mu;
    let m_jump = (1.0 - lambda) * mu;
    let lw = [(1.0 - lambda).ln(), lambda.ln()];
    let mut total = 0.0;
    for &eps in residuals {
        let comps = [
            lw[0] + log_phi(eps, m_cont, v_cont)?,
            lw[1] + log_phi(eps, m_jump, v_jump)?,
        ];
        total += floored_lse(&comps);
    }
    Ok(total)
}

/// Where the day covariance matrix comes from: a constant matrix or the
/// recursive variance process.
#[derive(Clone, Copy)]
pub enum DayCovSource<'a> {
    Constant(&'a ContCov),
    Recursive(&'a GarchParams),
}

/// Bivariate-jump mixture model: per day, the four-component mixture over
/// jump-indicator states `(b1, b2)`,
///
/// ```text
/// sum_{b} p_b phi2(eps_d; (b - lambda) .* mu_d, Sigma_d + B Gamma B')
/// ```
///
/// where `mu_d` is constant or affine in the previous day's prices and
/// `Sigma_d` is constant or follows the variance recursion. `prev_y` must be
/// supplied (aligned with `residuals`) when the jump mean is
/// state-dependent.
pub fn loglik_bij(
    residuals: &[[f64; 2]],
    prev_y: Option<&[[f64; 2]]>,
    cov: DayCovSource,
    jump_cov: &JumpCov,
    probs: &BernoulliProbs,
    mean: &JumpMean,
) -> Result<f64> {
    check_residuals(residuals)?;
    mean.validate()?;
    if mean.needs_state() {
        let py = prev_y.ok_or_else(|| {
            Error::InvalidParam("state-dependent jump mean needs previous-day prices".into())
        })?;
        if py.len() != residuals.len() {
            return Err(Error::Data(format!(
                "previous-day prices length {} does not match residuals length {}",
                py.len(),
                residuals.len()
            )));
        }
    }
    let lam = [probs.lambda1(), probs.lambda2()];
    let p = probs.p();
    let (g1, g2, gc) = jump_cov.entries();
    // Per-state covariance additions: the jump covariance enters only where
    // the respective indicator is on.
    let additions: [(f64, f64, f64); 4] = [
        (0.0, 0.0, 0.0),
        (g1, 0.0, 0.0),
        (0.0, g2, 0.0),
        (g1, g2, gc),
    ];
    let log_w: Vec<f64> = p.iter().map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();

    let var_path = match cov {
        DayCovSource::Constant(_) => Vec::new(),
        DayCovSource::Recursive(g) => garch_variance_path(g, residuals),
    };

    let mut total = 0.0;
    for (d, eps) in residuals.iter().enumerate() {
        let (v1, v2, c) = match cov {
            DayCovSource::Constant(cc) => cc.entries(),
            DayCovSource::Recursive(g) => {
                let v = var_path[d];
                (v[0], v[1], g.rho() * (v[0] * v[1]).sqrt())
            }
        };
        let mu_d = mean.at(prev_y.map(|py| &py[d]))?;
        let mut comps = [f64::NEG_INFINITY; 4];
        for (k, (b1, b2)) in JUMP_STATES.iter().enumerate() {
            if log_w[k] == f64::NEG_INFINITY {
                continue;
            }
            let (a1, a2, ac) = additions[k];
            let m = [
                ((*b1 as u8) as f64 - lam[0]) * mu_d[0],
                ((*b2 as u8) as f64 - lam[1]) * mu_d[1],
            ];
            comps[k] = log_w[k] + log_phi2(eps, m, v1 + a1, v2 + a2, c + ac)?;
        }
        total += floored_lse(&comps);
    }
    Ok(total)
}

/// Constant-correlation recursive-variance model without jumps: runs the
/// variance recursion and evaluates `sum_d log phi2(eps_d; 0, Sigma_d)`.
pub fn loglik_ccc_garch(residuals: &[[f64; 2]], garch: &GarchParams) -> Result<f64> {
    check_residuals(residuals)?;
    let path = garch_variance_path(garch, residuals);
    let mut total = 0.0;
    for (d, eps) in residuals.iter().enumerate() {
        let v = path[d];
        let c = garch.rho() * (v[0] * v[1]).sqrt();
        total += log_phi2(eps, [0.0, 0.0], v[0], v[1], c)?.max(log_floor());
    }
    Ok(total)
}

/// Model-dispatching log-likelihood. For the independent-jump model this is
/// the sum of the two per-series mixture log-likelihoods (its correlation
/// parameter is estimated outside the likelihood).
pub fn model_loglik(
    model: &ResidualModel,
    residuals: &[[f64; 2]],
    prev_y: Option<&[[f64; 2]]>,
) -> Result<f64> {
    match model {
        ResidualModel::Gauss { cov } => loglik_gauss(residuals, cov),
        ResidualModel::Ij { params } => loglik_ij_pair(residuals, params),
        ResidualModel::Bij { cov, jump_cov, probs, mu } => loglik_bij(
            residuals,
            prev_y,
            DayCovSource::Constant(cov),
            jump_cov,
            probs,
            &JumpMean::Constant(*mu),
        ),
        ResidualModel::BijMu { cov, jump_cov, probs, mu0, mu1 } => loglik_bij(
            residuals,
            prev_y,
            DayCovSource::Constant(cov),
            jump_cov,
            probs,
            &JumpMean::StateDependent { mu0: *mu0, mu1: *mu1 },
        ),
        ResidualModel::Garch { garch } => loglik_ccc_garch(residuals, garch),
        ResidualModel::BijMuGarch { garch, jump_cov, probs, mu0, mu1 } => loglik_bij(
            residuals,
            prev_y,
            DayCovSource::Recursive(garch),
            jump_cov,
            probs,
            &JumpMean::StateDependent { mu0: *mu0, mu1: *mu1 },
        ),
    }
}

/// Sum of the two per-series independent-jump log-likelihoods.
pub fn loglik_ij_pair(residuals: &[[f64; 2]], params: &IjParams) -> Result<f64> {
    params.validate()?;
    check_residuals(residuals)?;
    let mut total = 0.0;
    for i in 0..2 {
        let series: Vec<f64> = residuals.iter().map(|e| e[i]).collect();
        total += loglik_ij_series(
            &series,
            params.lambda[i],
            params.mu[i],
            params.sigma[i],
            params.gamma[i],
        )?;
    }
    Ok(total)
}
