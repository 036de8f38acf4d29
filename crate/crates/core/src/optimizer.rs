//! Maximum-likelihood fitting of the residual models.
//!
//! Constrained parameters are mapped to an unconstrained space (logs for
//! positives, scaled inverse-sigmoids for correlations, multinomial logits
//! for the jump-probability simplex and the variance-recursion stability
//! triangle), and the transformed log-likelihood is maximized by BFGS with
//! central-difference gradients and a backtracking line search.
//!
//! Initialization follows a fixed ladder: simpler models are fit first and
//! their estimates seed the richer ones (independent jumps seed the
//! bivariate-jump model, which seeds the state-dependent jump mean, which
//! seeds the combined model). [`LadderFitter`] caches the intermediate fits
//! so one pass produces the whole family.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::residual_models::{
    garch_variance_path, loglik_gauss, loglik_ij_series, model_loglik, BernoulliProbs, ContCov,
    GarchParams, IjParams, JumpCov, ModelTag, ResidualModel, ResidualModelFit,
};

/// Gradient-norm stopping tolerance; also the convergence criterion.
pub const GRAD_TOL: f64 = 1e-6;
/// Relative objective-change stopping tolerance.
pub const REL_OBJ_TOL: f64 = 1e-10;
/// Iteration cap.
pub const MAX_ITERS: usize = 500;
/// Sufficient-decrease constant of the backtracking line search.
const ARMIJO_C1: f64 = 1e-4;
/// Maximum step halvings per line search.
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub grad_tol: f64,
    pub rel_obj_tol: f64,
    pub max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { grad_tol: GRAD_TOL, rel_obj_tol: REL_OBJ_TOL, max_iters: MAX_ITERS }
    }
}

// ---------------------------------------------------------------------------
// Parameter transforms
// ---------------------------------------------------------------------------

/// One block of the constrained-to-unconstrained map. Scalar blocks cover a
/// single coordinate; `Simplex3` covers the three non-reference jump
/// probabilities `(p10, p01, p11)` (with `p00` as the softmax reference) and
/// `Triangle2` covers one series' `(alpha1, alpha2)` pair constrained to the
/// open triangle `alpha1 + alpha2 < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// `(0, inf)` via `u = ln x`.
    Positive,
    /// `(-1, 1)` via `u = ln((1+r)/(1-r))`, back via `r = tanh(u/2)`.
    Correlation,
    /// `(0, 1)` via the logit.
    UnitInterval,
    /// Identity.
    Unbounded,
    /// Three coordinates on the open simplex (fourth implied).
    Simplex3,
    /// Two positive coordinates with sum < 1.
    Triangle2,
}

impl Block {
    fn width(&self) -> usize {
        match self {
            Block::Simplex3 => 3,
            Block::Triangle2 => 2,
            _ => 1,
        }
    }
}

/// Whole-vector transform: a sequence of blocks.
#[derive(Debug, Clone)]
pub struct ParamTransform {
    blocks: Vec<Block>,
}

fn stable_sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Softmax over `us` with an implicit reference coordinate at 0; returns the
/// probabilities of the non-reference coordinates.
fn reference_softmax(us: &[f64]) -> Vec<f64> {
    let m = us.iter().cloned().fold(0.0f64, f64::max);
    let denom = (-m).exp() + us.iter().map(|u| (u - m).exp()).sum::<f64>();
    us.iter().map(|u| (u - m).exp() / denom).collect()
}

impl ParamTransform {
    pub fn new(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    /// Total coordinate count.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(Block::width).sum()
    }

    /// Constrained to unconstrained. Errors when a coordinate sits outside
    /// its block's open domain.
    pub fn to_unconstrained(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.dim() {
            return Err(Error::InvalidParam(format!(
                "expected {} parameters, got {}",
                self.dim(),
                theta.len()
            )));
        }
        let mut out = Vec::with_capacity(theta.len());
        let mut k = 0;
        for block in &self.blocks {
            let vals = &theta[k..k + block.width()];
            k += block.width();
            match block {
                Block::Positive => {
                    if !(vals[0].is_finite() && vals[0] > 0.0) {
                        return Err(Error::InvalidParam(format!(
                            "positive-domain parameter out of range: {}",
                            vals[0]
                        )));
                    }
                    out.push(vals[0].ln());
                }
                Block::Correlation => {
                    let r = vals[0];
                    if !(r.is_finite() && r > -1.0 && r < 1.0) {
                        return Err(Error::InvalidParam(format!(
                            "correlation parameter out of range: {r}"
                        )));
                    }
                    out.push(((1.0 + r) / (1.0 - r)).ln());
                }
                Block::UnitInterval => {
                    let p = vals[0];
                    if !(p.is_finite() && p > 0.0 && p < 1.0) {
                        return Err(Error::InvalidParam(format!(
                            "unit-interval parameter out of range: {p}"
                        )));
                    }
                    out.push((p / (1.0 - p)).ln());
                }
                Block::Unbounded => {
                    if !vals[0].is_finite() {
                        return Err(Error::InvalidParam("non-finite parameter".into()));
                    }
                    out.push(vals[0]);
                }
                Block::Simplex3 | Block::Triangle2 => {
                    let sum: f64 = vals.iter().sum();
                    let reference = 1.0 - sum;
                    if vals.iter().any(|&v| !(v.is_finite() && v > 0.0)) || reference <= 0.0 {
                        return Err(Error::InvalidParam(format!(
                            "simplex parameters out of the open domain: {vals:?}"
                        )));
                    }
                    for &v in vals {
                        out.push((v / reference).ln());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Unconstrained to constrained; total, so the optimizer can wander
    /// anywhere.
    pub fn to_constrained(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.dim());
        let mut out = Vec::with_capacity(u.len());
        let mut k = 0;
        for block in &self.blocks {
            let vals = &u[k..k + block.width()];
            k += block.width();
            match block {
                Block::Positive => out.push(vals[0].exp()),
                Block::Correlation => out.push((vals[0] / 2.0).tanh()),
                Block::UnitInterval => out.push(stable_sigmoid(vals[0])),
                Block::Unbounded => out.push(vals[0]),
                Block::Simplex3 | Block::Triangle2 => out.extend(reference_softmax(vals)),
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// BFGS
// ---------------------------------------------------------------------------

/// Outcome of one maximization.
#[derive(Debug, Clone)]
pub struct OptimizerReport {
    /// Optimum in the unconstrained space.
    pub theta: Vec<f64>,
    /// Maximized objective value.
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// True exactly when the final gradient norm is below the tolerance.
    pub converged: bool,
}

/// Central-difference gradient with per-coordinate step
/// `h = max(1e-6, 1e-6 |theta_i|)`. Falls back to a one-sided difference
/// when a probe point is non-finite, and to zero when both are.
fn central_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6f64.max(1e-6 * x[i].abs());
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h)
        } else if fp.is_finite() {
            (fp - fx) / h
        } else if fm.is_finite() {
            (fx - fm) / h
        } else {
            0.0
        };
    }
    grad
}

/// Maximize `f` from `init` by BFGS over the unconstrained coordinates.
///
/// Gradients use central finite differences; steps use backtracking with the
/// sufficient-decrease (Armijo) condition. Stops when the gradient norm
/// falls below `grad_tol`, when the relative objective change falls below
/// `rel_obj_tol`, or at `max_iters`. A failed line search returns the best
/// point found with `converged = false` (unless the gradient already meets
/// the tolerance). A non-finite objective at `init` is an error.
pub fn bfgs_maximize<F: Fn(&[f64]) -> f64>(
    f: F,
    init: &[f64],
    tol: &Tolerances,
) -> Result<OptimizerReport> {
    let n = init.len();
    if n == 0 {
        return Err(Error::InvalidParam("empty parameter vector".into()));
    }
    let f0 = f(init);
    if !f0.is_finite() {
        return Err(Error::Numerical(format!(
            "objective not finite at the initial point ({f0})"
        )));
    }

    // Work uniformly on the minimized objective g = -f.
    let g = |x: &[f64]| -f(x);
    let mut x = DVector::from_column_slice(init);
    let mut gx = -f0;
    let mut grad = DVector::from_vec(central_gradient(&g, x.as_slice(), gx));
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0usize;

    while iterations < tol.max_iters && grad.norm() >= tol.grad_tol {
        iterations += 1;
        let mut dir = -(&h_inv * &grad);
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            // The curvature approximation went bad; restart from steepest
            // descent.
            h_inv = DMatrix::identity(n, n);
            dir = -grad.clone();
            slope = grad.dot(&dir);
            if !(slope < 0.0) {
                break; // zero gradient to numerical precision
            }
        }

        // Backtracking line search with the sufficient-decrease condition.
        let mut t = 1.0f64;
        let mut accepted: Option<(DVector<f64>, f64)> = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = &x + &dir * t;
            let gc = g(cand.as_slice());
            if gc.is_finite() && gc <= gx + ARMIJO_C1 * t * slope {
                accepted = Some((cand, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, g_new)) = accepted else {
            // Line-search failure: keep the best point found so far.
            break;
        };

        let grad_new = DVector::from_vec(central_gradient(&g, x_new.as_slice(), g_new));
        let s = &x_new - &x;
        let y = &grad_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let identity = DMatrix::<f64>::identity(n, n);
            let left = &identity - (&s * y.transpose()) * rho;
            let right = &identity - (&y * s.transpose()) * rho;
            h_inv = &left * &h_inv * &right + (&s * s.transpose()) * rho;
        }

        let rel_change = (g_new - gx).abs() / gx.abs().max(1.0);
        x = x_new;
        gx = g_new;
        grad = grad_new;
        if rel_change < tol.rel_obj_tol {
            break;
        }
    }

    let grad_norm = grad.norm();
    Ok(OptimizerReport {
        theta: x.as_slice().to_vec(),
        value: -gx,
        iterations,
        grad_norm,
        converged: grad_norm < tol.grad_tol,
    })
}

// ---------------------------------------------------------------------------
// Model packing
// ---------------------------------------------------------------------------

fn transform_for(tag: ModelTag) -> Result<ParamTransform> {
    use Block::*;
    let blocks = match tag {
        ModelTag::Bij => vec![
            Positive, Positive, Correlation, // sigma1 sigma2 rho
            Positive, Positive, Correlation, // gamma1 gamma2 jump corr
            Simplex3,                        // p10 p01 p11
            Unbounded, Unbounded,            // mu1 mu2
        ],
        ModelTag::BijMu => vec![
            Positive, Positive, Correlation,
            Positive, Positive, Correlation,
            Simplex3,
            Unbounded, Unbounded, Unbounded, Unbounded, // mu0_1 mu0_2 mu1_1 mu1_2
        ],
        ModelTag::Garch => vec![
            Positive, Positive,   // alpha0_1 alpha0_2
            Triangle2, Triangle2, // (alpha1, alpha2) per series
            Correlation,          // rho
        ],
        ModelTag::BijMuGarch => vec![
            Positive, Positive,
            Triangle2, Triangle2,
            Correlation,
            Positive, Positive, Correlation, // gamma1 gamma2 jump corr
            Simplex3,
            Unbounded, Unbounded, Unbounded, Unbounded,
        ],
        ModelTag::Gauss | ModelTag::Ij => {
            return Err(Error::InvalidParam(format!(
                "{} is not fit through the joint packing",
                tag.name()
            )))
        }
    };
    Ok(ParamTransform::new(blocks))
}

/// Constrained parameter vector of a model, in the `transform_for` layout.
/// The recursion's initial variances are data-derived constants and are not
/// packed.
fn pack(model: &ResidualModel) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    match model {
        ResidualModel::Bij { cov, jump_cov, probs, mu } => {
            v.extend([cov.sigma(0), cov.sigma(1), cov.rho()]);
            v.extend([jump_cov.gamma(0), jump_cov.gamma(1), jump_cov.varrho()]);
            let p = probs.p();
            v.extend([p[1], p[2], p[3]]);
            v.extend(*mu);
        }
        ResidualModel::BijMu { cov, jump_cov, probs, mu0, mu1 } => {
            v.extend([cov.sigma(0), cov.sigma(1), cov.rho()]);
            v.extend([jump_cov.gamma(0), jump_cov.gamma(1), jump_cov.varrho()]);
            let p = probs.p();
            v.extend([p[1], p[2], p[3]]);
            v.extend(*mu0);
            v.extend(*mu1);
        }
        ResidualModel::Garch { garch } => {
            v.extend([garch.alpha0(0), garch.alpha0(1)]);
            v.extend([garch.alpha1(0), garch.alpha2(0)]);
            v.extend([garch.alpha1(1), garch.alpha2(1)]);
            v.push(garch.rho());
        }
        ResidualModel::BijMuGarch { garch, jump_cov, probs, mu0, mu1 } => {
            v.extend([garch.alpha0(0), garch.alpha0(1)]);
            v.extend([garch.alpha1(0), garch.alpha2(0)]);
            v.extend([garch.alpha1(1), garch.alpha2(1)]);
            v.push(garch.rho());
            v.extend([jump_cov.gamma(0), jump_cov.gamma(1), jump_cov.varrho()]);
            let p = probs.p();
            v.extend([p[1], p[2], p[3]]);
            v.extend(*mu0);
            v.extend(*mu1);
        }
        ResidualModel::Gauss { .. } | ResidualModel::Ij { .. } => {
            return Err(Error::InvalidParam(format!(
                "{} is not fit through the joint packing",
                model.tag().name()
            )))
        }
    }
    Ok(v)
}

fn probs_from_slice(p: &[f64]) -> Result<BernoulliProbs> {
    let p00 = (1.0 - p[0] - p[1] - p[2]).max(0.0);
    BernoulliProbs::new(p00, p[0], p[1], p[2])
}

/// Rebuild a model from a constrained vector (inverse of [`pack`]).
/// `init_var` supplies the fixed recursion start for the recursive models.
fn unpack(tag: ModelTag, theta: &[f64], init_var: Option<[f64; 2]>) -> Result<ResidualModel> {
    match tag {
        ModelTag::Bij => Ok(ResidualModel::Bij {
            cov: ContCov::new(theta[0], theta[1], theta[2])?,
            jump_cov: JumpCov::new(theta[3], theta[4], theta[5])?,
            probs: probs_from_slice(&theta[6..9])?,
            mu: [theta[9], theta[10]],
        }),
        ModelTag::BijMu => Ok(ResidualModel::BijMu {
            cov: ContCov::new(theta[0], theta[1], theta[2])?,
            jump_cov: JumpCov::new(theta[3], theta[4], theta[5])?,
            probs: probs_from_slice(&theta[6..9])?,
            mu0: [theta[9], theta[10]],
            mu1: [theta[11], theta[12]],
        }),
        ModelTag::Garch => {
            let iv = init_var
                .ok_or_else(|| Error::InvalidParam("recursive model needs init_var".into()))?;
            Ok(ResidualModel::Garch {
                garch: GarchParams::new(
                    [theta[0], theta[1]],
                    [theta[2], theta[4]],
                    [theta[3], theta[5]],
                    theta[6],
                    iv,
                )?,
            })
        }
        ModelTag::BijMuGarch => {
            let iv = init_var
                .ok_or_else(|| Error::InvalidParam("recursive model needs init_var".into()))?;
            Ok(ResidualModel::BijMuGarch {
                garch: GarchParams::new(
                    [theta[0], theta[1]],
                    [theta[2], theta[4]],
                    [theta[3], theta[5]],
                    theta[6],
                    iv,
                )?,
                jump_cov: JumpCov::new(theta[7], theta[8], theta[9])?,
                probs: probs_from_slice(&theta[10..13])?,
                mu0: [theta[13], theta[14]],
                mu1: [theta[15], theta[16]],
            })
        }
        ModelTag::Gauss | ModelTag::Ij => Err(Error::InvalidParam(format!(
            "{} is not fit through the joint packing",
            tag.name()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Moment helpers
// ---------------------------------------------------------------------------

fn series_column(residuals: &[[f64; 2]], i: usize) -> Vec<f64> {
    residuals.iter().map(|e| e[i]).collect()
}

/// Centered sample standard deviation (divide by n-1).
fn sample_sd(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::Data("need at least 2 points for a standard deviation".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt())
}

/// Pearson correlation of the residual pairs, clamped strictly inside
/// (-1, 1); 0 when either series is constant.
fn sample_correlation(residuals: &[[f64; 2]]) -> f64 {
    let n = residuals.len() as f64;
    let mean = residuals.iter().fold([0.0; 2], |m, e| [m[0] + e[0], m[1] + e[1]]);
    let mean = [mean[0] / n, mean[1] / n];
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for e in residuals {
        let dx = e[0] - mean[0];
        let dy = e[1] - mean[1];
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    let r = sxy / (sxx * syy).sqrt();
    r.clamp(-(1.0 - 1e-12), 1.0 - 1e-12)
}

/// Closed-form Gaussian fit: second moments about zero (the residual mean is
/// zero by construction), divided by n.
pub fn fit_gauss(residuals: &[[f64; 2]]) -> Result<ResidualModelFit> {
    if residuals.len() < 2 {
        return Err(Error::Data("need at least 2 residual pairs".into()));
    }
    let n = residuals.len() as f64;
    let mut m11 = 0.0;
    let mut m2 = [0.0; 2];
    for e in residuals {
        m2[0] += e[0] * e[0];
        m2[1] += e[1] * e[1];
        m11 += e[0] * e[1];
    }
    m2[0] /= n;
    m2[1] /= n;
    m11 /= n;
    let sigma = [m2[0].sqrt(), m2[1].sqrt()];
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Data("degenerate residual series (zero variance)".into()));
    }
    let rho = (m11 / (sigma[0] * sigma[1])).clamp(-(1.0 - 1e-12), 1.0 - 1e-12);
    let cov = ContCov::new(sigma[0], sigma[1], rho)?;
    let model = ResidualModel::Gauss { cov };
    let loglik = loglik_gauss(residuals, &cov)?;
    Ok(finish_fit(model, residuals, loglik, 0, 0.0, true))
}

/// Assemble a fit: attach diagnostics and the in-sample terminal state.
fn finish_fit(
    model: ResidualModel,
    residuals: &[[f64; 2]],
    loglik: f64,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
) -> ResidualModelFit {
    let terminal_eps = *residuals.last().expect("nonempty residuals");
    let terminal_var = match &model {
        ResidualModel::Garch { garch } | ResidualModel::BijMuGarch { garch, .. } => {
            *garch_variance_path(garch, residuals).last().expect("nonempty path")
        }
        other => other.constant_variances().expect("constant model"),
    };
    ResidualModelFit { model, loglik, converged, iterations, grad_norm, terminal_eps, terminal_var }
}

// ---------------------------------------------------------------------------
// Ladder fitting
// ---------------------------------------------------------------------------

/// Data-derived recursion start: centered sample variance per series.
fn recursion_init_var(residuals: &[[f64; 2]]) -> Result<[f64; 2]> {
    let sd1 = sample_sd(&series_column(residuals, 0))?;
    let sd2 = sample_sd(&series_column(residuals, 1))?;
    if sd1 <= 0.0 || sd2 <= 0.0 {
        return Err(Error::Data("degenerate residual series (zero variance)".into()));
    }
    Ok([sd1 * sd1, sd2 * sd2])
}

/// Fits the model family on one residual sample, reusing simpler fits to
/// initialize richer ones.
pub struct LadderFitter<'a> {
    residuals: &'a [[f64; 2]],
    /// Previous-day price pairs aligned with `residuals`; required by the
    /// state-dependent jump-mean models.
    prev_y: Option<&'a [[f64; 2]]>,
    tolerances: Tolerances,
    cache: HashMap<ModelTag, ResidualModelFit>,
}

impl<'a> LadderFitter<'a> {
    pub fn new(residuals: &'a [[f64; 2]], prev_y: Option<&'a [[f64; 2]]>) -> Self {
        Self { residuals, prev_y, tolerances: Tolerances::default(), cache: HashMap::new() }
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    /// Fit a model, fitting and caching its ladder prerequisites first.
    ///
    /// Jointly maximized models are optimized from the staged initial point
    /// and additionally from each fitted nested predecessor embedded in the
    /// richer family; the run with the higher log-likelihood wins. Because
    /// the line search only ever accepts improvements, the embedded start
    /// guarantees the fitted log-likelihood dominates the predecessor's —
    /// the staged point alone cannot promise that on data where the surface
    /// has competing local optima.
    pub fn fit(&mut self, tag: ModelTag) -> Result<ResidualModelFit> {
        if let Some(hit) = self.cache.get(&tag) {
            return Ok(hit.clone());
        }
        let fit = match tag {
            ModelTag::Gauss => fit_gauss(self.residuals)?,
            ModelTag::Ij => self.fit_ij(None)?,
            _ => {
                let init = self.initial_model(tag)?;
                let mut best = self.fit_from(tag, &init)?;
                for start in self.embedded_starts(tag)? {
                    // The staged start already produced a fit; a sibling
                    // start that fails to optimize is not an error.
                    if let Ok(fit) = self.fit_from(tag, &start) {
                        if fit.loglik > best.loglik {
                            best = fit;
                        }
                    }
                }
                best
            }
        };
        self.cache.insert(tag, fit.clone());
        Ok(fit)
    }

    /// Fit a model starting from a previous estimate instead of the ladder
    /// (the recursion start is still re-derived from the current sample).
    pub fn fit_warm(&mut self, tag: ModelTag, warm: &ResidualModel) -> Result<ResidualModelFit> {
        if warm.tag() != tag {
            return Err(Error::InvalidParam(format!(
                "warm start model is {}, expected {}",
                warm.tag().name(),
                tag.name()
            )));
        }
        let fit = match tag {
            ModelTag::Gauss => fit_gauss(self.residuals)?,
            ModelTag::Ij => self.fit_ij(Some(warm))?,
            _ => self.fit_from(tag, warm)?,
        };
        self.cache.insert(tag, fit.clone());
        Ok(fit)
    }

    /// The ladder's initial parameter point for a model, fitting
    /// prerequisites as needed:
    ///
    /// * independent jumps: per series, `sigma = gamma = residual sd`,
    ///   `mu = 1`, `lambda = 0.01`;
    /// * bivariate jumps: continuous and jump parameters from the
    ///   independent-jump fit, `(p10, p01, p11) = (0.01, 0.01, 0.001)`,
    ///   both correlations `0.01`;
    /// * state-dependent mean: `mu1 = 0.01` per series, rest from the
    ///   bivariate-jump fit;
    /// * recursive variance: both correlations and reactions `0.01`,
    ///   `alpha0 = residual sd` per series;
    /// * combined: `alpha1 = alpha2 = 0.01`, `alpha0 = sigma^2` from the
    ///   state-dependent fit, everything else carried over from it.
    pub fn initial_model(&mut self, tag: ModelTag) -> Result<ResidualModel> {
        match tag {
            ModelTag::Gauss => Ok(fit_gauss(self.residuals)?.model),
            ModelTag::Ij => {
                let mut lambda = [0.0; 2];
                let mut mu = [0.0; 2];
                let mut sigma = [0.0; 2];
                let mut gamma = [0.0; 2];
                for i in 0..2 {
                    let sd = sample_sd(&series_column(self.residuals, i))?;
                    if sd <= 0.0 {
                        return Err(Error::Data("degenerate residual series".into()));
                    }
                    lambda[i] = 0.01;
                    mu[i] = 1.0;
                    sigma[i] = sd;
                    gamma[i] = sd;
                }
                Ok(ResidualModel::Ij {
                    params: IjParams { lambda, mu, sigma, gamma, rho: 0.0 },
                })
            }
            ModelTag::Bij => {
                let ij = self.fit(ModelTag::Ij)?;
                let ResidualModel::Ij { params } = ij.model else { unreachable!() };
                Ok(ResidualModel::Bij {
                    cov: ContCov::new(params.sigma[0], params.sigma[1], 0.01)?,
                    jump_cov: JumpCov::new(params.gamma[0], params.gamma[1], 0.01)?,
                    probs: BernoulliProbs::new(1.0 - 0.01 - 0.01 - 0.001, 0.01, 0.01, 0.001)?,
                    mu: params.mu,
                })
            }
            ModelTag::BijMu => {
                let bij = self.fit(ModelTag::Bij)?;
                let ResidualModel::Bij { cov, jump_cov, probs, mu } = bij.model else {
                    unreachable!()
                };
                Ok(ResidualModel::BijMu {
                    cov,
                    jump_cov,
                    probs,
                    mu0: mu,
                    mu1: [0.01, 0.01],
                })
            }
            ModelTag::Garch => {
                let sd = [
                    sample_sd(&series_column(self.residuals, 0))?,
                    sample_sd(&series_column(self.residuals, 1))?,
                ];
                Ok(ResidualModel::Garch {
                    garch: GarchParams::new(
                        sd,
                        [0.01, 0.01],
                        [0.01, 0.01],
                        0.01,
                        recursion_init_var(self.residuals)?,
                    )?,
                })
            }
            ModelTag::BijMuGarch => {
                let prior = self.fit(ModelTag::BijMu)?;
                let ResidualModel::BijMu { cov, jump_cov, probs, mu0, mu1 } = prior.model else {
                    unreachable!()
                };
                let alpha0 = [cov.sigma(0) * cov.sigma(0), cov.sigma(1) * cov.sigma(1)];
                Ok(ResidualModel::BijMuGarch {
                    garch: GarchParams::new(
                        alpha0,
                        [0.01, 0.01],
                        [0.01, 0.01],
                        cov.rho(),
                        recursion_init_var(self.residuals)?,
                    )?,
                    jump_cov,
                    probs,
                    mu0,
                    mu1,
                })
            }
        }
    }

    /// Fitted nested predecessors of a model, expressed as interior points
    /// of the richer family. Reaction coefficients and occurrence
    /// probabilities cannot sit exactly on their boundary under the
    /// unconstrained reparameterization, so vanishing components use 1e-6;
    /// correlations and slopes embed exactly at zero.
    fn embedded_starts(&mut self, tag: ModelTag) -> Result<Vec<ResidualModel>> {
        const EDGE: f64 = 1e-6;
        match tag {
            ModelTag::Gauss | ModelTag::Ij => Ok(Vec::new()),
            ModelTag::Bij => {
                // Two independent per-series jump processes are the
                // bivariate process with product occurrence probabilities
                // and both cross-correlations zero.
                let ij = self.fit(ModelTag::Ij)?;
                let ResidualModel::Ij { params } = ij.model else { unreachable!() };
                let [l1, l2] = params.lambda;
                Ok(vec![ResidualModel::Bij {
                    cov: ContCov::new(params.sigma[0], params.sigma[1], 0.0)?,
                    jump_cov: JumpCov::new(params.gamma[0], params.gamma[1], 0.0)?,
                    probs: BernoulliProbs::new(
                        (1.0 - l1) * (1.0 - l2),
                        l1 * (1.0 - l2),
                        (1.0 - l1) * l2,
                        l1 * l2,
                    )?,
                    mu: params.mu,
                }])
            }
            ModelTag::BijMu => {
                // A constant jump mean is the state-dependent mean with
                // zero slope.
                let bij = self.fit(ModelTag::Bij)?;
                let ResidualModel::Bij { cov, jump_cov, probs, mu } = bij.model else {
                    unreachable!()
                };
                Ok(vec![ResidualModel::BijMu {
                    cov,
                    jump_cov,
                    probs,
                    mu0: mu,
                    mu1: [0.0, 0.0],
                }])
            }
            ModelTag::Garch => {
                // Constant covariance is the recursion with vanishing
                // feedback and intercepts at the maximum-likelihood
                // variances.
                let gauss = fit_gauss(self.residuals)?;
                let ResidualModel::Gauss { cov } = gauss.model else { unreachable!() };
                Ok(vec![ResidualModel::Garch {
                    garch: GarchParams::new(
                        [cov.sigma(0) * cov.sigma(0), cov.sigma(1) * cov.sigma(1)],
                        [EDGE, EDGE],
                        [EDGE, EDGE],
                        cov.rho(),
                        recursion_init_var(self.residuals)?,
                    )?,
                }])
            }
            ModelTag::BijMuGarch => {
                // Both fitted predecessors embed: the state-dependent jump
                // model with vanishing variance feedback, and the recursion
                // with vanishing jump probabilities.
                let prior = self.fit(ModelTag::BijMu)?;
                let ResidualModel::BijMu { cov, jump_cov, probs, mu0, mu1 } = prior.model else {
                    unreachable!()
                };
                let init_var = recursion_init_var(self.residuals)?;
                let from_jumps = ResidualModel::BijMuGarch {
                    garch: GarchParams::new(
                        [cov.sigma(0) * cov.sigma(0), cov.sigma(1) * cov.sigma(1)],
                        [EDGE, EDGE],
                        [EDGE, EDGE],
                        cov.rho(),
                        init_var,
                    )?,
                    jump_cov,
                    probs,
                    mu0,
                    mu1,
                };
                let garch_fit = self.fit(ModelTag::Garch)?;
                let ResidualModel::Garch { garch } = garch_fit.model else { unreachable!() };
                let from_recursion = ResidualModel::BijMuGarch {
                    garch: GarchParams::new(
                        [garch.alpha0(0), garch.alpha0(1)],
                        [garch.alpha1(0), garch.alpha1(1)],
                        [garch.alpha2(0), garch.alpha2(1)],
                        garch.rho(),
                        init_var,
                    )?,
                    jump_cov,
                    probs: BernoulliProbs::new(1.0 - 3.0 * EDGE, EDGE, EDGE, EDGE)?,
                    mu0,
                    mu1,
                };
                Ok(vec![from_jumps, from_recursion])
            }
        }
    }

    /// Per-series mixture maximization plus the third-stage correlation.
    fn fit_ij(&mut self, warm: Option<&ResidualModel>) -> Result<ResidualModelFit> {
        let init = match warm {
            Some(ResidualModel::Ij { params }) => *params,
            Some(other) => {
                return Err(Error::InvalidParam(format!(
                    "warm start model is {}, expected IJ",
                    other.tag().name()
                )))
            }
            None => {
                let ResidualModel::Ij { params } = self.initial_model(ModelTag::Ij)? else {
                    unreachable!()
                };
                params
            }
        };
        let transform = ParamTransform::new(vec![
            Block::UnitInterval,
            Block::Unbounded,
            Block::Positive,
            Block::Positive,
        ]);
        let mut lambda = [0.0; 2];
        let mut mu = [0.0; 2];
        let mut sigma = [0.0; 2];
        let mut gamma = [0.0; 2];
        let mut loglik = 0.0;
        let mut iterations = 0;
        let mut grad_norm = 0.0f64;
        let mut converged = true;
        for i in 0..2 {
            let series = series_column(self.residuals, i);
            let u0 = transform
                .to_unconstrained(&[init.lambda[i], init.mu[i], init.sigma[i], init.gamma[i]])?;
            let objective = |u: &[f64]| {
                let c = transform.to_constrained(u);
                loglik_ij_series(&series, c[0], c[1], c[2], c[3]).unwrap_or(f64::NEG_INFINITY)
            };
            let report = bfgs_maximize(objective, &u0, &self.tolerances)?;
            let c = transform.to_constrained(&report.theta);
            lambda[i] = c[0];
            mu[i] = c[1];
            sigma[i] = c[2];
            gamma[i] = c[3];
            loglik += report.value;
            iterations += report.iterations;
            grad_norm = grad_norm.max(report.grad_norm);
            converged &= report.converged;
        }
        let params =
            IjParams { lambda, mu, sigma, gamma, rho: sample_correlation(self.residuals) };
        params.validate()?;
        Ok(finish_fit(
            ResidualModel::Ij { params },
            self.residuals,
            loglik,
            iterations,
            grad_norm,
            converged,
        ))
    }

    /// Joint maximization for the packed models.
    fn fit_from(&self, tag: ModelTag, init: &ResidualModel) -> Result<ResidualModelFit> {
        if matches!(tag, ModelTag::BijMu | ModelTag::BijMuGarch) && self.prev_y.is_none() {
            return Err(Error::InvalidParam(format!(
                "{} needs previous-day prices",
                tag.name()
            )));
        }
        if let Some(py) = self.prev_y {
            if py.len() != self.residuals.len() {
                return Err(Error::Data(
                    "previous-day prices length does not match residuals".into(),
                ));
            }
        }
        let init_var = if matches!(tag, ModelTag::Garch | ModelTag::BijMuGarch) {
            Some(recursion_init_var(self.residuals)?)
        } else {
            None
        };
        let transform = transform_for(tag)?;
        let u0 = transform.to_unconstrained(&pack(init)?)?;
        let residuals = self.residuals;
        let prev_y = self.prev_y;
        let objective = |u: &[f64]| {
            let c = transform.to_constrained(u);
            match unpack(tag, &c, init_var) {
                Ok(model) => model_loglik(&model, residuals, prev_y).unwrap_or(f64::NEG_INFINITY),
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let report = bfgs_maximize(objective, &u0, &self.tolerances)?;
        let model = unpack(tag, &transform.to_constrained(&report.theta), init_var)?;
        if !report.value.is_finite() {
            return Err(Error::Numerical("non-finite maximized log-likelihood".into()));
        }
        Ok(finish_fit(
            model,
            self.residuals,
            report.value,
            report.iterations,
            report.grad_norm,
            report.converged,
        ))
    }
}
