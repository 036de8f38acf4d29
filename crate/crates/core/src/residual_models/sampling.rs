//! Per-day residual sampling.
//!
//! Each model consumes a fixed number of random variates per simulated day,
//! independent of the outcomes drawn:
//!
//! | model          | uniforms (occurrence) | normals (continuous + jump) |
//! |----------------|-----------------------|-----------------------------|
//! | `GAUSS`        | 0                     | 2                           |
//! | `IJ`           | 2                     | 4                           |
//! | `BIJ`          | 1                     | 4                           |
//! | `BIJ-MU`       | 1                     | 4                           |
//! | `GARCH`        | 0                     | 2                           |
//! | `BIJ-MU-GARCH` | 1                     | 4                           |
//!
//! and always in the order occurrence → continuous pair → jump pair. The
//! jump pair is drawn even on no-jump days (and masked by the indicators),
//! which keeps a path's random stream aligned regardless of the occurrence
//! outcomes — a requirement for reproducible, seed-stable ensembles.

use rand::RngExt;
use rand_distr::StandardNormal;

use super::likelihood::garch_step;
use super::{BernoulliProbs, ResidualModel, JUMP_STATES};
use crate::error::{Error, Result};

/// Evolving per-path state consumed by the sampler.
///
/// `prev_eps` and `prev_var` feed the variance recursion; `prev_y` feeds the
/// state-dependent jump mean. The sampler updates the first two; the caller
/// (which knows the simulated price level) must update `prev_y` after each
/// day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub prev_eps: [f64; 2],
    pub prev_var: [f64; 2],
    pub prev_y: [f64; 2],
}

impl SimState {
    fn validate(&self) -> Result<()> {
        let finite = self.prev_eps.iter().chain(&self.prev_var).chain(&self.prev_y);
        if finite.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite simulation state".into()));
        }
        if self.prev_var.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParam("negative variance in simulation state".into()));
        }
        Ok(())
    }
}

/// One sampled day: the residual pair, the day variances that produced it,
/// and the jump indicators that were drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayDraw {
    pub eps: [f64; 2],
    pub var: [f64; 2],
    pub occurrence: (bool, bool),
}

/// Draw one of the four jump-indicator states with probabilities
/// `(p00, p10, p01, p11)`, consuming exactly one uniform variate.
pub fn sample_bivariate_bernoulli<R: RngExt + ?Sized>(
    probs: &BernoulliProbs,
    rng: &mut R,
) -> (bool, bool) {
    let u: f64 = rng.random();
    let p = probs.p();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &state) in JUMP_STATES.iter().enumerate() {
        if p[k] > 0.0 {
            last_positive = k;
        }
        acc += p[k];
        if u < acc {
            return state;
        }
    }
    // u landed in the sliver between the accumulated sum and 1 that
    // floating-point addition can leave; attribute it to the last state
    // with positive mass.
    JUMP_STATES[last_positive]
}

#[inline]
fn standard_pair<R: RngExt + ?Sized>(rng: &mut R) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// Map a standard-normal pair to a correlated pair with the given means and
/// standard deviations.
#[inline]
fn correlated_pair(z: [f64; 2], mean: [f64; 2], sd: [f64; 2], rho: f64) -> [f64; 2] {
    [
        mean[0] + sd[0] * z[0],
        mean[1] + sd[1] * (rho * z[0] + (1.0 - rho * rho).sqrt() * z[1]),
    ]
}

/// Sample one day's residual pair.
pub fn sample_day<R: RngExt + ?Sized>(
    model: &ResidualModel,
    state: &SimState,
    rng: &mut R,
) -> Result<DayDraw> {
    state.validate()?;
    match model {
        ResidualModel::Gauss { cov } => {
            let z = standard_pair(rng);
            let eps = correlated_pair(z, [0.0, 0.0], [cov.sigma(0), cov.sigma(1)], cov.rho());
            Ok(DayDraw {
                eps,
                var: model.constant_variances().expect("constant model"),
                occurrence: (false, false),
            })
        }
        ResidualModel::Ij { params } => {
            params.validate_closed()?;
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let b = (u1 < params.lambda[0], u2 < params.lambda[1]);
            let zc = standard_pair(rng);
            let cont = correlated_pair(
                zc,
                [-params.lambda[0] * params.mu[0], -params.lambda[1] * params.mu[1]],
                [params.sigma[0], params.sigma[1]],
                params.rho,
            );
            let zj = standard_pair(rng);
            let jump = [
                params.mu[0] + params.gamma[0] * zj[0],
                params.mu[1] + params.gamma[1] * zj[1],
            ];
            let eps = [
                cont[0] + if b.0 { jump[0] } else { 0.0 },
                cont[1] + if b.1 { jump[1] } else { 0.0 },
            ];
            Ok(DayDraw {
                eps,
                var: model.constant_variances().expect("constant model"),
                occurrence: b,
            })
        }
        ResidualModel::Bij { cov, jump_cov, probs, .. }
        | ResidualModel::BijMu { cov, jump_cov, probs, .. } => {
            let mean = model.jump_mean().expect("jump model");
            let mu_d = mean.at(Some(&state.prev_y))?;
            let b = sample_bivariate_bernoulli(probs, rng);
            let lam = [probs.lambda1(), probs.lambda2()];
            let zc = standard_pair(rng);
            let cont = correlated_pair(
                zc,
                [-lam[0] * mu_d[0], -lam[1] * mu_d[1]],
                [cov.sigma(0), cov.sigma(1)],
                cov.rho(),
            );
            let zj = standard_pair(rng);
            let jump = correlated_pair(
                zj,
                mu_d,
                [jump_cov.gamma(0), jump_cov.gamma(1)],
                jump_cov.varrho(),
            );
            let eps = [
                cont[0] + if b.0 { jump[0] } else { 0.0 },
                cont[1] + if b.1 { jump[1] } else { 0.0 },
            ];
            Ok(DayDraw {
                eps,
                var: model.constant_variances().expect("constant model"),
                occurrence: b,
            })
        }
        ResidualModel::Garch { garch } => {
            let var = garch_step(garch, state.prev_eps, state.prev_var);
            let z = standard_pair(rng);
            let eps =
                correlated_pair(z, [0.0, 0.0], [var[0].sqrt(), var[1].sqrt()], garch.rho());
            Ok(DayDraw { eps, var, occurrence: (false, false) })
        }
        ResidualModel::BijMuGarch { garch, jump_cov, probs, .. } => {
            let mean = model.jump_mean().expect("jump model");
            let mu_d = mean.at(Some(&state.prev_y))?;
            let var = garch_step(garch, state.prev_eps, state.prev_var);
            let b = sample_bivariate_bernoulli(probs, rng);
            let lam = [probs.lambda1(), probs.lambda2()];
            let zc = standard_pair(rng);
            let cont = correlated_pair(
                zc,
                [-lam[0] * mu_d[0], -lam[1] * mu_d[1]],
                [var[0].sqrt(), var[1].sqrt()],
                garch.rho(),
            );
            let zj = standard_pair(rng);
            let jump = correlated_pair(
                zj,
                mu_d,
                [jump_cov.gamma(0), jump_cov.gamma(1)],
                jump_cov.varrho(),
            );
            let eps = [
                cont[0] + if b.0 { jump[0] } else { 0.0 },
                cont[1] + if b.1 { jump[1] } else { 0.0 },
            ];
            Ok(DayDraw { eps, var, occurrence: b })
        }
    }
}

/// Sample one day and advance the state. `prev_y` is carried over unchanged;
/// the caller must overwrite it with the day's simulated price pair before
/// the next call.
pub fn sample_residual<R: RngExt + ?Sized>(
    model: &ResidualModel,
    state: &SimState,
    rng: &mut R,
) -> Result<([f64; 2], SimState)> {
    let draw = sample_day(model, state, rng)?;
    Ok((
        draw.eps,
        SimState { prev_eps: draw.eps, prev_var: draw.var, prev_y: state.prev_y },
    ))
}

#[cfg(test)]
mod tests {
    use super::super::{
        unconditional_variance_ij, ContCov, GarchParams, IjParams, JumpCov, ResidualModel,
    };
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_state() -> SimState {
        SimState { prev_eps: [0.3, -0.2], prev_var: [1.1, 0.9], prev_y: [30.0, 35.0] }
    }

    /// Mean, covariance, and their standard errors from a draw set.
    struct Moments {
        n: f64,
        mean: [f64; 2],
        se_mean: [f64; 2],
        cov: [[f64; 2]; 2],
        se_cov: [[f64; 2]; 2],
    }

    fn moments(draws: &[[f64; 2]]) -> Moments {
        let n = draws.len() as f64;
        let mut mean = [0.0; 2];
        for d in draws {
            mean[0] += d[0];
            mean[1] += d[1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let mut cov = [[0.0; 2]; 2];
        let mut fourth = [[0.0; 2]; 2];
        for d in draws {
            let c = [d[0] - mean[0], d[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += c[i] * c[j];
                    fourth[i][j] += c[i] * c[j] * c[i] * c[j];
                }
            }
        }
        let mut se_cov = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] /= n - 1.0;
                // SE of a sample (co)variance via the empirical variance of
                // the products.
                let var_prod = fourth[i][j] / n - cov[i][j] * cov[i][j];
                se_cov[i][j] = (var_prod.max(0.0) / n).sqrt();
            }
        }
        let se_mean = [(cov[0][0] / n).sqrt(), (cov[1][1] / n).sqrt()];
        Moments { n, mean, se_mean, cov, se_cov }
    }

    #[test]
    fn degenerate_occurrence_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let always = BernoulliProbs::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let never = BernoulliProbs::new(1.0, 0.0, 0.0, 0.0).unwrap();
        for _ in 0..200 {
            assert_eq!(sample_bivariate_bernoulli(&always, &mut rng), (true, true));
            assert_eq!(sample_bivariate_bernoulli(&never, &mut rng), (false, false));
        }
    }

    #[test]
    fn occurrence_frequencies_match_probabilities() {
        let probs = BernoulliProbs::new(0.4, 0.3, 0.2, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let b = sample_bivariate_bernoulli(&probs, &mut rng);
            let k = JUMP_STATES.iter().position(|s| *s == b).unwrap();
            counts[k] += 1;
        }
        for (k, &p) in probs.p().iter().enumerate() {
            let freq = counts[k] as f64 / n as f64;
            let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= bound,
                "state {k}: freq {freq} vs p {p} (bound {bound})"
            );
        }
    }

    #[test]
    fn near_degenerate_gaussian_returns_near_zero() {
        let cov = ContCov::new(1e-12, 1e-12, 0.0).unwrap();
        let model = ResidualModel::Gauss { cov };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let (eps, _) = sample_residual(&model, &default_state(), &mut rng).unwrap();
            assert!(eps[0].abs() < 1e-9 && eps[1].abs() < 1e-9, "{eps:?}");
        }
    }

    #[test]
    fn bij_with_no_jump_mass_has_plain_gaussian_moments() {
        let cov = ContCov::new(1.0, 1.5, 0.3).unwrap();
        let model = ResidualModel::Bij {
            cov,
            jump_cov: JumpCov::new(2.0, 2.5, 0.4).unwrap(),
            probs: BernoulliProbs::new(1.0, 0.0, 0.0, 0.0).unwrap(),
            mu: [3.0, -2.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let draws: Vec<[f64; 2]> = (0..200_000)
            .map(|_| sample_residual(&model, &default_state(), &mut rng).unwrap().0)
            .collect();
        let m = moments(&draws);
        let (v1, v2, c) = cov.entries();
        let target = [[v1, c], [c, v2]];
        for i in 0..2 {
            assert!(m.mean[i].abs() <= 3.0 * m.se_mean[i], "mean {i}: {}", m.mean[i]);
            for j in 0..2 {
                assert!(
                    (m.cov[i][j] - target[i][j]).abs() <= 3.0 * m.se_cov[i][j],
                    "cov[{i}][{j}]: {} vs {}",
                    m.cov[i][j],
                    target[i][j]
                );
            }
        }
    }

    #[test]
    fn ij_moments_match_analytic_unconditional_variance() {
        let params = IjParams {
            lambda: [0.1, 0.2],
            mu: [5.0, -3.0],
            sigma: [1.0, 1.5],
            gamma: [2.0, 2.5],
            rho: 0.6,
        };
        let model = ResidualModel::Ij { params };
        let target = unconditional_variance_ij(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let draws: Vec<[f64; 2]> = (0..1_000_000)
            .map(|_| sample_residual(&model, &default_state(), &mut rng).unwrap().0)
            .collect();
        let m = moments(&draws);
        assert_eq!(m.n as usize, 1_000_000);
        for i in 0..2 {
            assert!(m.mean[i].abs() <= 3.0 * m.se_mean[i], "mean {i}: {}", m.mean[i]);
            for j in 0..2 {
                assert!(
                    (m.cov[i][j] - target[i][j]).abs() <= 3.0 * m.se_cov[i][j],
                    "cov[{i}][{j}]: {} vs {} (se {})",
                    m.cov[i][j],
                    target[i][j],
                    m.se_cov[i][j]
                );
            }
        }
    }

    #[test]
    fn conditional_moments_given_occurrence_match_the_mixture_components() {
        // Bucket draws by the drawn indicator state; within a bucket the
        // draws are iid with mean (b - lambda) .* mu and covariance
        // Sigma + B Gamma B'.
        let cov = ContCov::new(1.0, 1.5, 0.3).unwrap();
        let jump_cov = JumpCov::new(2.0, 2.5, 0.4).unwrap();
        let probs = BernoulliProbs::new(0.4, 0.3, 0.2, 0.1).unwrap();
        let mu = [3.0, -2.0];
        let model = ResidualModel::Bij { cov, jump_cov, probs, mu };
        let lam = [probs.lambda1(), probs.lambda2()];
        let (v1, v2, c) = cov.entries();
        let (g1, g2, gc) = jump_cov.entries();

        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut buckets: [Vec<[f64; 2]>; 4] = [vec![], vec![], vec![], vec![]];
        for _ in 0..400_000 {
            let draw = sample_day(&model, &default_state(), &mut rng).unwrap();
            let k = JUMP_STATES.iter().position(|s| *s == draw.occurrence).unwrap();
            buckets[k].push(draw.eps);
        }

        for (k, &(b1, b2)) in JUMP_STATES.iter().enumerate() {
            let m = moments(&buckets[k]);
            assert!(m.n >= 30_000.0, "bucket {k} too small: {}", m.n);
            let bm = [
                ((b1 as u8) as f64 - lam[0]) * mu[0],
                ((b2 as u8) as f64 - lam[1]) * mu[1],
            ];
            let bv = [
                [
                    v1 + if b1 { g1 } else { 0.0 },
                    c + if b1 && b2 { gc } else { 0.0 },
                ],
                [
                    c + if b1 && b2 { gc } else { 0.0 },
                    v2 + if b2 { g2 } else { 0.0 },
                ],
            ];
            for i in 0..2 {
                assert!(
                    (m.mean[i] - bm[i]).abs() <= 3.0 * m.se_mean[i],
                    "bucket {k} mean {i}: {} vs {}",
                    m.mean[i],
                    bm[i]
                );
                for j in 0..2 {
                    assert!(
                        (m.cov[i][j] - bv[i][j]).abs() <= 3.0 * m.se_cov[i][j],
                        "bucket {k} cov[{i}][{j}]: {} vs {}",
                        m.cov[i][j],
                        bv[i][j]
                    );
                }
            }
        }
    }

    fn all_models() -> Vec<ResidualModel> {
        let cov = ContCov::new(1.25, 2.5, 0.3).unwrap();
        let jump_cov = JumpCov::new(2.0, 2.5, 0.4).unwrap();
        let probs = BernoulliProbs::new(0.85, 0.06, 0.05, 0.04).unwrap();
        let garch =
            GarchParams::new([0.5, 0.3], [0.2, 0.1], [0.3, 0.5], 0.25, [1.2, 0.8]).unwrap();
        vec![
            ResidualModel::Gauss { cov },
            ResidualModel::Ij {
                params: IjParams {
                    lambda: [0.1, 0.2],
                    mu: [5.0, -3.0],
                    sigma: [1.0, 1.5],
                    gamma: [2.0, 2.5],
                    rho: 0.6,
                },
            },
            ResidualModel::Bij { cov, jump_cov, probs, mu: [3.0, -2.0] },
            ResidualModel::BijMu { cov, jump_cov, probs, mu0: [1.0, -1.0], mu1: [0.02, 0.03] },
            ResidualModel::Garch { garch },
            ResidualModel::BijMuGarch {
                garch,
                jump_cov,
                probs,
                mu0: [1.0, -1.0],
                mu1: [0.02, 0.03],
            },
        ]
    }

    #[test]
    fn every_model_draws_with_mean_zero() {
        // From a fixed state the draws are iid; the centering makes the mean
        // exactly zero for every model.
        for (mi, model) in all_models().iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(17 + mi as u64);
            let draws: Vec<[f64; 2]> = (0..300_000)
                .map(|_| sample_residual(model, &default_state(), &mut rng).unwrap().0)
                .collect();
            let m = moments(&draws);
            for i in 0..2 {
                assert!(
                    m.mean[i].abs() <= 3.0 * m.se_mean[i],
                    "model {} mean {i}: {} (se {})",
                    model.tag().name(),
                    m.mean[i],
                    m.se_mean[i]
                );
            }
        }
    }

    #[test]
    fn recursive_state_update_follows_the_recursion() {
        let garch =
            GarchParams::new([0.5, 0.3], [0.2, 0.1], [0.3, 0.5], 0.25, [1.2, 0.8]).unwrap();
        let model = ResidualModel::Garch { garch };
        let state = default_state();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let (eps, next) = sample_residual(&model, &state, &mut rng).unwrap();
        let expected_var = garch_step(&garch, state.prev_eps, state.prev_var);
        assert_eq!(next.prev_var, expected_var);
        assert_eq!(next.prev_eps, eps);
        assert_eq!(next.prev_y, state.prev_y);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let model = all_models().pop().unwrap();
        let run = |seed: u64| -> Vec<[f64; 2]> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = default_state();
            let mut out = Vec::new();
            for _ in 0..50 {
                let (eps, next) = sample_residual(&model, &state, &mut rng).unwrap();
                state = next;
                state.prev_y = [30.0 + eps[0], 35.0 + eps[1]];
                out.push(eps);
            }
            out
        };
        assert_eq!(run(99), run(99));
        assert_ne!(run(99), run(100));
    }

    #[test]
    fn invalid_state_is_rejected() {
        let model = all_models().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let bad = SimState { prev_eps: [f64::NAN, 0.0], prev_var: [1.0, 1.0], prev_y: [0.0, 0.0] };
        assert!(sample_residual(&model, &bad, &mut rng).is_err());
        let neg = SimState { prev_eps: [0.0, 0.0], prev_var: [-1.0, 1.0], prev_y: [0.0, 0.0] };
        assert!(sample_residual(&model, &neg, &mut rng).is_err());
    }
}
