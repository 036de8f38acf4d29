//! The six residual processes layered on the fitted mean: parameter types
//! with their constraints, log-likelihood evaluation, analytic moments,
//! per-day sampling, and key-value serialization.
//!
//! Every jump model shares one construction. The day-`d` residual pair is
//!
//! ```text
//! eps_d = eps_cont + B_d eps_jump
//! ```
//!
//! where `eps_cont ~ N2(-Lambda mu_d, Sigma_d)` is the always-on continuous
//! disturbance, `eps_jump ~ N2(mu_d, Gamma)` is the jump size,
//! `B_d = diag(b_d1, b_d2)` collects the Bernoulli jump indicators, and
//! `Lambda = diag(lambda_1, lambda_2)` holds the per-series jump
//! probabilities. The `-Lambda mu_d` shift makes the unconditional residual
//! mean exactly zero. `Sigma_d` is constant except in the GARCH variants,
//! where each diagonal follows a per-series GARCH(1,1) recursion driven by
//! the previous day's *total* residual, with a constant cross correlation.
//!
//! Model catalog (tags as used in serialized files and reports):
//!
//! | tag            | jumps                | jump mean            | variance  |
//! |----------------|----------------------|----------------------|-----------|
//! | `GAUSS`        | none                 | —                    | constant  |
//! | `IJ`           | independent per series | constant           | constant  |
//! | `BIJ`          | bivariate Bernoulli  | constant             | constant  |
//! | `BIJ-MU`       | bivariate Bernoulli  | affine in Y_{d-1}    | constant  |
//! | `GARCH`        | none                 | —                    | recursive |
//! | `BIJ-MU-GARCH` | bivariate Bernoulli  | affine in Y_{d-1}    | recursive |

pub mod likelihood;
pub mod sampling;

pub use likelihood::{
    garch_step, garch_variance_path, loglik_bij, loglik_ccc_garch, loglik_gauss,
    loglik_ij_series, model_loglik, DayCovSource,
};
pub use sampling::{sample_bivariate_bernoulli, sample_day, sample_residual, DayDraw, SimState};

use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// Densities are floored at this value before taking logs, so a single
/// far-outlying day cannot produce an infinite objective during fitting.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Covariance of the continuous disturbance:
/// `Sigma = [[s1^2, r s1 s2], [r s1 s2, s2^2]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContCov {
    sigma: [f64; 2],
    rho: f64,
}

impl ContCov {
    pub fn new(sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        for (name, s) in [("sigma_1", sigma1), ("sigma_2", sigma2)] {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be finite and > 0, got {s}")));
            }
        }
        if !(rho.is_finite() && rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidParam(format!("rho must lie in (-1, 1), got {rho}")));
        }
        Ok(Self { sigma: [sigma1, sigma2], rho })
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma[i]
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// (var_1, var_2, cov) triple of the 2x2 covariance matrix.
    pub fn entries(&self) -> (f64, f64, f64) {
        (
            self.sigma[0] * self.sigma[0],
            self.sigma[1] * self.sigma[1],
            self.rho * self.sigma[0] * self.sigma[1],
        )
    }
}

/// Covariance of the jump size: `Gamma = [[g1^2, q g1 g2], [q g1 g2, g2^2]]`.
/// Zero sizes are allowed (the matrix only needs to be positive
/// semidefinite), which covers degenerate no-jump parameter points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpCov {
    gamma: [f64; 2],
    varrho: f64,
}

impl JumpCov {
    pub fn new(gamma1: f64, gamma2: f64, varrho: f64) -> Result<Self> {
        for (name, g) in [("gamma_1", gamma1), ("gamma_2", gamma2)] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be finite and >= 0, got {g}")));
            }
        }
        if !(varrho.is_finite() && varrho > -1.0 && varrho < 1.0) {
            return Err(Error::InvalidParam(format!(
                "jump correlation must lie in (-1, 1), got {varrho}"
            )));
        }
        Ok(Self { gamma: [gamma1, gamma2], varrho })
    }

    pub fn gamma(&self, i: usize) -> f64 {
        self.gamma[i]
    }

    pub fn varrho(&self) -> f64 {
        self.varrho
    }

    pub fn entries(&self) -> (f64, f64, f64) {
        (
            self.gamma[0] * self.gamma[0],
            self.gamma[1] * self.gamma[1],
            self.varrho * self.gamma[0] * self.gamma[1],
        )
    }
}

/// Joint jump-occurrence distribution over the four indicator states,
/// stored in the order `(p00, p10, p01, p11)` where `p_{b1 b2}` is the
/// probability that series 1 jumps iff `b1 = 1` and series 2 jumps iff
/// `b2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliProbs {
    p: [f64; 4],
}

/// Indicator states in the fixed component order used everywhere:
/// no jump, series-1 only, series-2 only, both.
pub const JUMP_STATES: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

impl BernoulliProbs {
    pub fn new(p00: f64, p10: f64, p01: f64, p11: f64) -> Result<Self> {
        let p = [p00, p10, p01, p11];
        for (k, &v) in p.iter().enumerate() {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidParam(format!(
                    "jump probability {k} must lie in [0, 1], got {v}"
                )));
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "jump probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(Self { p })
    }

    /// Probabilities in component order `(p00, p10, p01, p11)`.
    pub fn p(&self) -> [f64; 4] {
        self.p
    }

    /// Marginal jump probability of series 1: `p10 + p11`.
    pub fn lambda1(&self) -> f64 {
        self.p[1] + self.p[3]
    }

    /// Marginal jump probability of series 2: `p01 + p11`.
    pub fn lambda2(&self) -> f64 {
        self.p[2] + self.p[3]
    }
}

/// Jump-size mean: either a constant pair or an affine function of the
/// previous day's price pair, `mu_{d,i} = mu0_i + mu1_i * Y_{d-1,i}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpMean {
    Constant([f64; 2]),
    StateDependent { mu0: [f64; 2], mu1: [f64; 2] },
}

impl JumpMean {
    pub fn validate(&self) -> Result<()> {
        let all = match self {
            JumpMean::Constant(mu) => mu.to_vec(),
            JumpMean::StateDependent { mu0, mu1 } => {
                mu0.iter().chain(mu1.iter()).copied().collect()
            }
        };
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("jump mean parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn needs_state(&self) -> bool {
        matches!(self, JumpMean::StateDependent { .. })
    }

    /// The day-`d` jump mean; `prev_y` is the previous day's price pair,
    /// required by the state-dependent form.
    pub fn at(&self, prev_y: Option<&[f64; 2]>) -> Result<[f64; 2]> {
        match self {
            JumpMean::Constant(mu) => Ok(*mu),
            JumpMean::StateDependent { mu0, mu1 } => {
                let y = prev_y.ok_or_else(|| {
                    Error::InvalidParam(
                        "state-dependent jump mean needs the previous day's prices".into(),
                    )
                })?;
                Ok([mu0[0] + mu1[0] * y[0], mu0[1] + mu1[1] * y[1]])
            }
        }
    }
}

/// Per-series GARCH(1,1) variance recursions with a constant cross
/// correlation:
///
/// ```text
/// var_{d,i} = alpha0_i + alpha1_i eps_{d-1,i}^2 + alpha2_i var_{d-1,i}
/// ```
///
/// `init_var` is the day-0 variance, fixed at fitting time (not optimized).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchParams {
    alpha0: [f64; 2],
    alpha1: [f64; 2],
    alpha2: [f64; 2],
    rho: f64,
    init_var: [f64; 2],
}

impl GarchParams {
    pub fn new(
        alpha0: [f64; 2],
        alpha1: [f64; 2],
        alpha2: [f64; 2],
        rho: f64,
        init_var: [f64; 2],
    ) -> Result<Self> {
        for i in 0..2 {
            if !(alpha0[i].is_finite() && alpha0[i] > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "alpha0_{} must be finite and > 0, got {}",
                    i + 1,
                    alpha0[i]
                )));
            }
            for (name, a) in [("alpha1", alpha1[i]), ("alpha2", alpha2[i])] {
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::InvalidParam(format!(
                        "{name}_{} must be finite and >= 0, got {a}",
                        i + 1
                    )));
                }
            }
            if alpha1[i] + alpha2[i] >= 1.0 {
                return Err(Error::InvalidParam(format!(
                    "alpha1_{0} + alpha2_{0} must be < 1, got {1}",
                    i + 1,
                    alpha1[i] + alpha2[i]
                )));
            }
            if !(init_var[i].is_finite() && init_var[i] > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "init_var_{} must be finite and > 0, got {}",
                    i + 1,
                    init_var[i]
                )));
            }
        }
        if !(rho.is_finite() && rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidParam(format!("rho must lie in (-1, 1), got {rho}")));
        }
        Ok(Self { alpha0, alpha1, alpha2, rho, init_var })
    }

    pub fn alpha0(&self, i: usize) -> f64 {
        self.alpha0[i]
    }

    pub fn alpha1(&self, i: usize) -> f64 {
        self.alpha1[i]
    }

    pub fn alpha2(&self, i: usize) -> f64 {
        self.alpha2[i]
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn init_var(&self) -> [f64; 2] {
        self.init_var
    }
}

/// Model identifier, also the tag used in serialized parameter files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelTag {
    Gauss,
    Ij,
    Bij,
    BijMu,
    Garch,
    BijMuGarch,
}

impl ModelTag {
    pub const ALL: [ModelTag; 6] = [
        ModelTag::Gauss,
        ModelTag::Ij,
        ModelTag::Bij,
        ModelTag::BijMu,
        ModelTag::Garch,
        ModelTag::BijMuGarch,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelTag::Gauss => "GAUSS",
            ModelTag::Ij => "IJ",
            ModelTag::Bij => "BIJ",
            ModelTag::BijMu => "BIJ-MU",
            ModelTag::Garch => "GARCH",
            ModelTag::BijMuGarch => "BIJ-MU-GARCH",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        ModelTag::ALL
            .iter()
            .copied()
            .find(|t| t.name() == text)
            .ok_or_else(|| Error::Parse(format!("unknown residual model tag {text:?}")))
    }
}

/// Parameters of the independent-jump model: per-series two-component
/// mixtures plus a continuous-part correlation estimated afterwards from the
/// residual pairs (it does not enter the per-series likelihood).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IjParams {
    pub lambda: [f64; 2],
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub gamma: [f64; 2],
    pub rho: f64,
}

impl IjParams {
    /// Strict bounds used by the likelihood: `lambda_i` in the open unit
    /// interval.
    pub fn validate(&self) -> Result<()> {
        self.validate_closed()?;
        for i in 0..2 {
            if self.lambda[i] <= 0.0 || self.lambda[i] >= 1.0 {
                return Err(Error::InvalidParam(format!(
                    "lambda_{} must lie in (0, 1), got {}",
                    i + 1,
                    self.lambda[i]
                )));
            }
        }
        Ok(())
    }

    /// Bounds with `lambda_i` in the closed unit interval, enough for the
    /// moment formulas and the sampler (where lambda = 0 or 1 is a legal
    /// degenerate point).
    pub fn validate_closed(&self) -> Result<()> {
        for i in 0..2 {
            if !(self.lambda[i].is_finite() && (0.0..=1.0).contains(&self.lambda[i])) {
                return Err(Error::InvalidParam(format!(
                    "lambda_{} must lie in [0, 1], got {}",
                    i + 1,
                    self.lambda[i]
                )));
            }
            if !(self.sigma[i].is_finite() && self.sigma[i] > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "sigma_{} must be finite and > 0, got {}",
                    i + 1,
                    self.sigma[i]
                )));
            }
            if !(self.gamma[i].is_finite() && self.gamma[i] >= 0.0) {
                return Err(Error::InvalidParam(format!(
                    "gamma_{} must be finite and >= 0, got {}",
                    i + 1,
                    self.gamma[i]
                )));
            }
            if !self.mu[i].is_finite() {
                return Err(Error::InvalidParam(format!("mu_{} must be finite", i + 1)));
            }
        }
        if !(self.rho.is_finite() && self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::InvalidParam(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

/// A fully parameterized residual model.
#[derive(Debug, Clone, PartialEq)]
pub enum ResidualModel {
    Gauss { cov: ContCov },
    Ij { params: IjParams },
    Bij { cov: ContCov, jump_cov: JumpCov, probs: BernoulliProbs, mu: [f64; 2] },
    BijMu { cov: ContCov, jump_cov: JumpCov, probs: BernoulliProbs, mu0: [f64; 2], mu1: [f64; 2] },
    Garch { garch: GarchParams },
    BijMuGarch {
        garch: GarchParams,
        jump_cov: JumpCov,
        probs: BernoulliProbs,
        mu0: [f64; 2],
        mu1: [f64; 2],
    },
}

impl ResidualModel {
    pub fn tag(&self) -> ModelTag {
        match self {
            ResidualModel::Gauss { .. } => ModelTag::Gauss,
            ResidualModel::Ij { .. } => ModelTag::Ij,
            ResidualModel::Bij { .. } => ModelTag::Bij,
            ResidualModel::BijMu { .. } => ModelTag::BijMu,
            ResidualModel::Garch { .. } => ModelTag::Garch,
            ResidualModel::BijMuGarch { .. } => ModelTag::BijMuGarch,
        }
    }

    /// Whether day densities depend on the previous day's price pair.
    pub fn needs_prev_y(&self) -> bool {
        matches!(self, ResidualModel::BijMu { .. } | ResidualModel::BijMuGarch { .. })
    }

    /// Whether day covariances follow the recursive variance process.
    pub fn is_recursive(&self) -> bool {
        matches!(self, ResidualModel::Garch { .. } | ResidualModel::BijMuGarch { .. })
    }

    /// The jump mean specification, if the model has jumps.
    pub fn jump_mean(&self) -> Option<JumpMean> {
        match self {
            ResidualModel::Gauss { .. } | ResidualModel::Garch { .. } => None,
            ResidualModel::Ij { params } => Some(JumpMean::Constant(params.mu)),
            ResidualModel::Bij { mu, .. } => Some(JumpMean::Constant(*mu)),
            ResidualModel::BijMu { mu0, mu1, .. }
            | ResidualModel::BijMuGarch { mu0, mu1, .. } => {
                Some(JumpMean::StateDependent { mu0: *mu0, mu1: *mu1 })
            }
        }
    }

    /// Constant day variances (var_1, var_2) for non-recursive models.
    pub fn constant_variances(&self) -> Option<[f64; 2]> {
        match self {
            ResidualModel::Gauss { cov }
            | ResidualModel::Bij { cov, .. }
            | ResidualModel::BijMu { cov, .. } => {
                Some([cov.sigma(0) * cov.sigma(0), cov.sigma(1) * cov.sigma(1)])
            }
            ResidualModel::Ij { params } => {
                Some([params.sigma[0] * params.sigma[0], params.sigma[1] * params.sigma[1]])
            }
            ResidualModel::Garch { .. } | ResidualModel::BijMuGarch { .. } => None,
        }
    }
}

/// Unconditional residual covariance of the independent-jump model:
///
/// ```text
/// Var[eps_i]      = sigma_i^2 + lambda_i ((1 - lambda_i) mu_i^2 + gamma_i^2)
/// Cov[eps_1,eps_2] = rho sigma_1 sigma_2
/// ```
///
/// The jump terms contribute nothing off the diagonal because the two
/// series' jump indicators and sizes are independent.
pub fn unconditional_variance_ij(params: &IjParams) -> Result<[[f64; 2]; 2]> {
    params.validate_closed()?;
    let mut var = [[0.0; 2]; 2];
    for i in 0..2 {
        let l = params.lambda[i];
        var[i][i] = params.sigma[i] * params.sigma[i]
            + l * ((1.0 - l) * params.mu[i] * params.mu[i] + params.gamma[i] * params.gamma[i]);
    }
    var[0][1] = params.rho * params.sigma[0] * params.sigma[1];
    var[1][0] = var[0][1];
    Ok(var)
}

/// A maximized residual-model fit with its diagnostics and the in-sample
/// terminal state needed to start a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualModelFit {
    pub model: ResidualModel,
    /// Maximized log-likelihood (for the independent-jump model: the sum of
    /// the two per-series mixture log-likelihoods).
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Final in-sample residual pair, the day before the first forecast.
    pub terminal_eps: [f64; 2],
    /// Final in-sample day variances (constant for non-recursive models).
    pub terminal_var: [f64; 2],
}

fn set_pair(doc: &mut KvDoc, key: &str, v: [f64; 2]) -> Result<()> {
    doc.set_f64(&format!("{key}_1"), v[0])?;
    doc.set_f64(&format!("{key}_2"), v[1])
}

fn get_pair(doc: &KvDoc, key: &str) -> Result<[f64; 2]> {
    Ok([
        doc.require_f64(&format!("{key}_1"))?,
        doc.require_f64(&format!("{key}_2"))?,
    ])
}

fn cont_to_kv(doc: &mut KvDoc, cov: &ContCov) -> Result<()> {
    set_pair(doc, "sigma", cov.sigma)?;
    doc.set_f64("rho", cov.rho)
}

fn cont_from_kv(doc: &KvDoc) -> Result<ContCov> {
    let s = get_pair(doc, "sigma")?;
    ContCov::new(s[0], s[1], doc.require_f64("rho")?)
}

fn jump_to_kv(doc: &mut KvDoc, jump_cov: &JumpCov, probs: &BernoulliProbs) -> Result<()> {
    set_pair(doc, "gamma", jump_cov.gamma)?;
    doc.set_f64("jump_rho", jump_cov.varrho)?;
    let p = probs.p();
    doc.set_f64("p_00", p[0])?;
    doc.set_f64("p_10", p[1])?;
    doc.set_f64("p_01", p[2])?;
    doc.set_f64("p_11", p[3])
}

fn jump_from_kv(doc: &KvDoc) -> Result<(JumpCov, BernoulliProbs)> {
    let g = get_pair(doc, "gamma")?;
    let jump_cov = JumpCov::new(g[0], g[1], doc.require_f64("jump_rho")?)?;
    let probs = BernoulliProbs::new(
        doc.require_f64("p_00")?,
        doc.require_f64("p_10")?,
        doc.require_f64("p_01")?,
        doc.require_f64("p_11")?,
    )?;
    Ok((jump_cov, probs))
}

fn garch_to_kv(doc: &mut KvDoc, garch: &GarchParams) -> Result<()> {
    set_pair(doc, "alpha0", garch.alpha0)?;
    set_pair(doc, "alpha1", garch.alpha1)?;
    set_pair(doc, "alpha2", garch.alpha2)?;
    doc.set_f64("rho", garch.rho)?;
    set_pair(doc, "init_var", garch.init_var)
}

fn garch_from_kv(doc: &KvDoc) -> Result<GarchParams> {
    GarchParams::new(
        get_pair(doc, "alpha0")?,
        get_pair(doc, "alpha1")?,
        get_pair(doc, "alpha2")?,
        doc.require_f64("rho")?,
        get_pair(doc, "init_var")?,
    )
}

/// Append a model's tag and named parameters to a key-value document.
pub fn model_to_kv(doc: &mut KvDoc, model: &ResidualModel) -> Result<()> {
    doc.set("model", model.tag().name())?;
    match model {
        ResidualModel::Gauss { cov } => cont_to_kv(doc, cov),
        ResidualModel::Ij { params } => {
            set_pair(doc, "lambda", params.lambda)?;
            set_pair(doc, "mu", params.mu)?;
            set_pair(doc, "sigma", params.sigma)?;
            set_pair(doc, "gamma", params.gamma)?;
            doc.set_f64("rho", params.rho)
        }
        ResidualModel::Bij { cov, jump_cov, probs, mu } => {
            cont_to_kv(doc, cov)?;
            jump_to_kv(doc, jump_cov, probs)?;
            set_pair(doc, "mu", *mu)
        }
        ResidualModel::BijMu { cov, jump_cov, probs, mu0, mu1 } => {
            cont_to_kv(doc, cov)?;
            jump_to_kv(doc, jump_cov, probs)?;
            set_pair(doc, "mu0", *mu0)?;
            set_pair(doc, "mu1", *mu1)
        }
        ResidualModel::Garch { garch } => garch_to_kv(doc, garch),
        ResidualModel::BijMuGarch { garch, jump_cov, probs, mu0, mu1 } => {
            garch_to_kv(doc, garch)?;
            jump_to_kv(doc, jump_cov, probs)?;
            set_pair(doc, "mu0", *mu0)?;
            set_pair(doc, "mu1", *mu1)
        }
    }
}

/// Parse a model from its key-value form (inverse of [`model_to_kv`]).
pub fn model_from_kv(doc: &KvDoc) -> Result<ResidualModel> {
    let tag = ModelTag::parse(doc.require("model")?)?;
    let model = match tag {
        ModelTag::Gauss => ResidualModel::Gauss { cov: cont_from_kv(doc)? },
        ModelTag::Ij => {
            let params = IjParams {
                lambda: get_pair(doc, "lambda")?,
                mu: get_pair(doc, "mu")?,
                sigma: get_pair(doc, "sigma")?,
                gamma: get_pair(doc, "gamma")?,
                rho: doc.require_f64("rho")?,
            };
            params.validate()?;
            ResidualModel::Ij { params }
        }
        ModelTag::Bij => {
            let (jump_cov, probs) = jump_from_kv(doc)?;
            ResidualModel::Bij {
                cov: cont_from_kv(doc)?,
                jump_cov,
                probs,
                mu: get_pair(doc, "mu")?,
            }
        }
        ModelTag::BijMu => {
            let (jump_cov, probs) = jump_from_kv(doc)?;
            ResidualModel::BijMu {
                cov: cont_from_kv(doc)?,
                jump_cov,
                probs,
                mu0: get_pair(doc, "mu0")?,
                mu1: get_pair(doc, "mu1")?,
            }
        }
        ModelTag::Garch => ResidualModel::Garch { garch: garch_from_kv(doc)? },
        ModelTag::BijMuGarch => {
            let (jump_cov, probs) = jump_from_kv(doc)?;
            ResidualModel::BijMuGarch {
                garch: garch_from_kv(doc)?,
                jump_cov,
                probs,
                mu0: get_pair(doc, "mu0")?,
                mu1: get_pair(doc, "mu1")?,
            }
        }
    };
    if let Some(mean) = model.jump_mean() {
        mean.validate()?;
    }
    Ok(model)
}

/// Serialize a fit (model parameters plus diagnostics and terminal state).
pub fn fit_to_kv(fit: &ResidualModelFit) -> Result<KvDoc> {
    let mut doc = KvDoc::new();
    doc.set("format", "residual-fit")?;
    model_to_kv(&mut doc, &fit.model)?;
    doc.set_f64("loglik", fit.loglik)?;
    doc.set("converged", fit.converged)?;
    doc.set("iterations", fit.iterations)?;
    doc.set_f64("grad_norm", fit.grad_norm)?;
    set_pair(&mut doc, "terminal_eps", fit.terminal_eps)?;
    set_pair(&mut doc, "terminal_var", fit.terminal_var)?;
    Ok(doc)
}

/// Parse a fit document (inverse of [`fit_to_kv`]).
pub fn fit_from_kv(doc: &KvDoc) -> Result<ResidualModelFit> {
    if doc.get("format") != Some("residual-fit") {
        return Err(Error::Parse("not a residual-fit document".into()));
    }
    Ok(ResidualModelFit {
        model: model_from_kv(doc)?,
        loglik: doc.require_f64("loglik")?,
        converged: doc.require_bool("converged")?,
        iterations: doc.require_usize("iterations")?,
        grad_norm: doc.require_f64("grad_norm")?,
        terminal_eps: get_pair(doc, "terminal_eps")?,
        terminal_var: get_pair(doc, "terminal_var")?,
    })
}
