//! Fitting pipelines: mixture fits to exit-time data, peak-separation and
//! g-factor extraction, relaxation decay and rate-law fits, thermometry,
//! visibility prediction, and bootstrap uncertainties.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::classify::Histogram;
use crate::constants::MU_B;
use crate::model::{
    log_survival, optimal_threshold, peak_time, tunnel_out_log_pdf, ModelError, PeakTime,
    ReadModel, RelaxationLaw, Spin, ThermometryLaw,
};
use crate::numerics::{invert_spd, log_add_exp, solve_dense};
use crate::optim::{multi_start_minimize, numeric_hessian, ParamMap};
use crate::rng::shot_seed;

/// Diagnostic failures of the fitting layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} data points, got {got}")]
    NotEnoughData { needed: usize, got: usize },
    #[error("optimizer failed to converge (objective {objective}, gradient norm {gradient_norm})")]
    NonConvergence { objective: f64, gradient_norm: f64 },
    #[error("parameter {param} pinned at its bound")]
    BoundaryPinned { param: &'static str },
    #[error("observed information matrix is not positive definite")]
    IndefiniteInformation,
    #[error("singular design: sweep values do not span a fittable range")]
    SingularDesign,
    #[error("field range too narrow to separate the cubic and seventh-power terms")]
    CollinearBasis,
    #[error("parameter {param} is unidentifiable from the supplied data")]
    Unidentifiable { param: &'static str },
    #[error("density peak at the ramp boundary invalidates the separation extraction")]
    BoundaryPeak,
    #[error("invalid data point: {reason}")]
    InvalidPoint { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Non-fatal conditions attached to an otherwise valid fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFlag {
    /// Fitted Zeeman splitting is consistent with zero.
    EzConsistentWithZero,
    /// Mixture weight carries no information (degenerate mixture).
    PUpUnidentifiable,
    /// Electron temperature was held fixed during the fit.
    TEFrozen,
    /// Base electron temperature is consistent with zero.
    TEffConsistentWithZero,
}

/// Names of the mixture parameters, in covariance order.
pub const MIXTURE_PARAMS: [&str; 5] = ["gamma", "T_e", "eps0_down", "E_Z", "p_up"];

/// Result of a mixture fit to exit-time data.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub gamma: f64,
    pub t_e: f64,
    pub eps0_down: f64,
    pub e_z: f64,
    pub p_up: f64,
    /// 5×5 covariance, row-major, ordered as [`MIXTURE_PARAMS`];
    /// unidentifiable rows/columns are zeroed.
    pub covariance: Vec<f64>,
    pub log_likelihood: f64,
    /// Shots entering the likelihood, censored included.
    pub n_shots: usize,
    /// Pearson statistic and degrees of freedom, binned mode only.
    pub chi_square: Option<(f64, usize)>,
    pub flags: Vec<FitFlag>,
}

impl MixtureFit {
    /// Fitted parameters as a readout model at ramp rate `r`.
    pub fn model(&self, r: f64) -> Result<ReadModel, ModelError> {
        ReadModel::new(self.gamma, self.t_e, r, self.eps0_down, self.e_z)
    }

    /// One-sigma error of parameter `i` in [`MIXTURE_PARAMS`] order.
    pub fn sigma(&self, i: usize) -> f64 {
        self.covariance[i * 5 + i].max(0.0).sqrt()
    }
}

/// Box bounds for the mixture fit, one map per parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureBounds {
    pub gamma: ParamMap,
    pub t_e: ParamMap,
    pub eps0_down: ParamMap,
    pub e_z: ParamMap,
    pub p_up: ParamMap,
}

impl MixtureBounds {
    /// Generous defaults bracketing an initial guess.
    pub fn around(init: &ReadModel) -> Self {
        let eps_scale = init.eps0_down.abs().max(init.k_t());
        MixtureBounds {
            gamma: ParamMap::Log {
                lo: init.gamma / 100.0,
                hi: init.gamma * 100.0,
            },
            t_e: ParamMap::Log {
                lo: init.t_e / 20.0,
                hi: init.t_e * 20.0,
            },
            eps0_down: ParamMap::Linear {
                lo: init.eps0_down - 8.0 * eps_scale,
                hi: (init.eps0_down + 8.0 * eps_scale).min(-1e-9),
            },
            e_z: ParamMap::Linear {
                lo: 0.0,
                hi: (init.e_z * 8.0).max(20.0 * init.k_t()),
            },
            p_up: ParamMap::Linear { lo: 0.0, hi: 1.0 },
        }
    }

    fn maps(&self) -> [ParamMap; 5] {
        [self.gamma, self.t_e, self.eps0_down, self.e_z, self.p_up]
    }
}

/// ln of the spin-marginal exit density at `t`.
fn log_mixture_pdf(m: &ReadModel, p_up: f64, t: f64) -> f64 {
    let up = p_up.ln() + tunnel_out_log_pdf(m, Spin::Up, t);
    let down = (1.0 - p_up).ln() + tunnel_out_log_pdf(m, Spin::Down, t);
    log_add_exp(up, down)
}

/// ln of the spin-marginal survival probability at `t`.
fn log_mixture_survival(m: &ReadModel, p_up: f64, t: f64) -> f64 {
    let up = p_up.ln() + log_survival(m, Spin::Up, t);
    let down = (1.0 - p_up).ln() + log_survival(m, Spin::Down, t);
    log_add_exp(up, down)
}

fn model_from(r: f64, theta: &[f64]) -> ReadModel {
    // bounds keep every coordinate valid, so construct directly
    ReadModel {
        gamma: theta[0],
        t_e: theta[1],
        r,
        eps0_down: theta[2],
        e_z: theta[3],
    }
}

/// Total negative log-likelihood in physical coordinates.
fn mixture_nll(theta: &[f64], r: f64, t_outs: &[f64], n_censored: usize, t_read: f64) -> f64 {
    if theta[0] <= 0.0 || theta[1] <= 0.0 || !(0.0..=1.0).contains(&theta[4]) {
        return f64::INFINITY;
    }
    let m = model_from(r, theta);
    let p_up = theta[4];
    let mut nll = 0.0;
    for &t in t_outs {
        nll -= log_mixture_pdf(&m, p_up, t);
    }
    if n_censored > 0 {
        nll -= n_censored as f64 * log_mixture_survival(&m, p_up, t_read);
    }
    nll
}

/// Deterministically jittered internal-coordinate starts around `y0`.
fn jittered_starts(y0: &[f64], n_extra: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0F17);
    let mut starts = Vec::with_capacity(n_extra + 1);
    starts.push(y0.to_vec());
    for _ in 0..n_extra {
        starts.push(
            y0.iter()
                .map(|&y| y + scale * (2.0 * rng.random::<f64>() - 1.0))
                .collect(),
        );
    }
    starts
}

/// Shared post-fit machinery: boundary diagnosis and covariance from the
/// observed information, with zeroed rows for tolerated degeneracies.
struct InformationOutcome {
    covariance: Vec<f64>,
    flags: Vec<FitFlag>,
}

fn mixture_information(
    nll: &(dyn Fn(&[f64]) -> f64 + Sync),
    theta: &[f64],
    bounds: &MixtureBounds,
    frozen_te: bool,
) -> Result<InformationOutcome, FitError> {
    let maps = bounds.maps();
    let mut flags = Vec::new();
    let ez_zeroish = theta[3] <= 1e-4 * (bounds.e_z.hi() - bounds.e_z.lo()).max(f64::MIN_POSITIVE);
    for (i, map) in maps.iter().enumerate() {
        if i == 1 && frozen_te {
            continue;
        }
        if map.near_boundary(theta[i]) {
            match i {
                // zero splitting is a physical interior point of the family
                3 if ez_zeroish => flags.push(FitFlag::EzConsistentWithZero),
                4 if ez_zeroish => {}
                _ => {
                    return Err(FitError::BoundaryPinned {
                        param: MIXTURE_PARAMS[i],
                    })
                }
            }
        }
    }
    if frozen_te {
        flags.push(FitFlag::TEFrozen);
    }

    let hess = numeric_hessian(nll, theta);
    // a splitting pinned at zero carries no curvature, so its row and the
    // mixture weight's are dropped outright and stay zeroed
    let mut dropped = [false; 5];
    if frozen_te {
        dropped[1] = true;
    }
    if ez_zeroish {
        dropped[3] = true;
        dropped[4] = true;
        flags.push(FitFlag::PUpUnidentifiable);
        if !flags.contains(&FitFlag::EzConsistentWithZero) {
            flags.push(FitFlag::EzConsistentWithZero);
        }
    }
    let cov = invert_information(&hess, &dropped).ok_or(FitError::IndefiniteInformation)?;
    if !ez_zeroish {
        let ez_sigma = cov[3 * 5 + 3].max(0.0).sqrt();
        if theta[3] < 2.0 * ez_sigma {
            flags.push(FitFlag::EzConsistentWithZero);
        }
    }
    Ok(InformationOutcome {
        covariance: cov,
        flags,
    })
}

/// Invert the information restricted to the kept coordinates, scaling by
/// the diagonal first for conditioning; zeroes dropped rows/columns.
fn invert_information(hess: &[f64], dropped: &[bool; 5]) -> Option<Vec<f64>> {
    let keep: Vec<usize> = (0..5).filter(|&i| !dropped[i]).collect();
    let k = keep.len();
    let mut sub = vec![0.0; k * k];
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            sub[a * k + b] = hess[i * 5 + j];
        }
    }
    let scale: Vec<f64> = (0..k)
        .map(|a| {
            let d = sub[a * k + a];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    if scale.iter().any(|s| !s.is_finite()) {
        return None;
    }
    for a in 0..k {
        for b in 0..k {
            sub[a * k + b] *= scale[a] * scale[b];
        }
    }
    let inv = invert_spd(&sub, k)?;
    let mut cov = vec![0.0; 25];
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            cov[i * 5 + j] = inv[a * k + b] * scale[a] * scale[b];
        }
    }
    Some(cov)
}

/// Unbinned maximum-likelihood mixture fit with censored shots entering as
/// survival terms. Multi-start bounded quasi-Newton; covariance from the
/// inverse observed information.
pub fn fit_mixture(
    t_outs: &[f64],
    n_censored: usize,
    t_read: f64,
    init: &ReadModel,
    p_up_init: f64,
    bounds: &MixtureBounds,
) -> Result<MixtureFit, FitError> {
    fit_mixture_with_options(t_outs, n_censored, t_read, init, p_up_init, bounds, false)
}

/// [`fit_mixture`] with the option of freezing the electron temperature to
/// its initial value, which removes the strongest likelihood degeneracy.
pub fn fit_mixture_with_options(
    t_outs: &[f64],
    n_censored: usize,
    t_read: f64,
    init: &ReadModel,
    p_up_init: f64,
    bounds: &MixtureBounds,
    freeze_t_e: bool,
) -> Result<MixtureFit, FitError> {
    if t_outs.len() < 100 {
        return Err(FitError::NotEnoughData {
            needed: 100,
            got: t_outs.len(),
        });
    }
    if let Some(&bad) = t_outs.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(FitError::InvalidPoint {
            reason: format!("exit time {bad} is not a non-negative finite number"),
        });
    }
    if !(0.0..=1.0).contains(&p_up_init) {
        return Err(ModelError::ProbabilityOutOfRange(p_up_init).into());
    }
    let r = init.r;
    let maps = bounds.maps();
    let theta0 = [init.gamma, init.t_e, init.eps0_down, init.e_z, p_up_init];

    // optimize in internal coordinates; frozen T_e stays at its init value
    let free: Vec<usize> = (0..5).filter(|&i| !(freeze_t_e && i == 1)).collect();
    let y0: Vec<f64> = free.iter().map(|&i| maps[i].to_internal(theta0[i])).collect();
    let to_theta = |y: &[f64]| -> [f64; 5] {
        let mut theta = theta0;
        for (slot, &i) in free.iter().enumerate() {
            theta[i] = maps[i].to_physical(y[slot]);
        }
        theta
    };
    let n_terms = (t_outs.len() + n_censored) as f64;
    let objective = move |y: &[f64]| -> f64 {
        let theta = to_theta(y);
        mixture_nll(&theta, r, t_outs, n_censored, t_read) / n_terms
    };

    let starts = jittered_starts(&y0, 5, 0.75);
    let (_, best) = multi_start_minimize(&objective, &starts, 300, 1e-11);
    if !best.converged {
        return Err(FitError::NonConvergence {
            objective: best.f * n_terms,
            gradient_norm: best.gradient_norm,
        });
    }
    let theta = to_theta(&best.x);

    let nll_physical = |th: &[f64]| mixture_nll(th, r, t_outs, n_censored, t_read);
    let info = mixture_information(&nll_physical, &theta, bounds, freeze_t_e)?;

    Ok(MixtureFit {
        gamma: theta[0],
        t_e: theta[1],
        eps0_down: theta[2],
        e_z: theta[3],
        p_up: theta[4],
        covariance: info.covariance,
        log_likelihood: -best.f * n_terms,
        n_shots: t_outs.len() + n_censored,
        chi_square: None,
        flags: info.flags,
    })
}

/// Binned mixture fit minimizing the Pearson statistic against expected
/// bin occupancies (censored shots form one extra cell).
pub fn fit_mixture_binned(
    hist: &Histogram,
    init: &ReadModel,
    p_up_init: f64,
    bounds: &MixtureBounds,
) -> Result<MixtureFit, FitError> {
    let n_total = hist.n_total;
    if n_total < 100 {
        return Err(FitError::NotEnoughData {
            needed: 100,
            got: n_total as usize,
        });
    }
    if !(0.0..=1.0).contains(&p_up_init) {
        return Err(ModelError::ProbabilityOutOfRange(p_up_init).into());
    }
    let r = init.r;
    let maps = bounds.maps();
    let theta0 = [init.gamma, init.t_e, init.eps0_down, init.e_z, p_up_init];
    let y0: Vec<f64> = (0..5).map(|i| maps[i].to_internal(theta0[i])).collect();
    let bw = hist.bin_width;
    let t_max = bw * hist.counts.len() as f64;

    let chi2 = move |theta: &[f64]| -> f64 {
        if theta[0] <= 0.0 || theta[1] <= 0.0 {
            return f64::INFINITY;
        }
        let m = model_from(r, theta);
        let p_up = theta[4];
        let mut stat = 0.0;
        let mut s_prev = 1.0;
        for (k, &o) in hist.counts.iter().enumerate() {
            let s_next = log_mixture_survival(&m, p_up, bw * (k + 1) as f64).exp();
            let e = n_total as f64 * (s_prev - s_next).max(0.0);
            let d = o as f64 - e;
            stat += d * d / e.max(1e-9);
            s_prev = s_next;
        }
        let e_cens = n_total as f64 * log_mixture_survival(&m, p_up, t_max).exp();
        let d = hist.n_censored as f64 - e_cens;
        stat += d * d / e_cens.max(1e-9);
        stat
    };
    let objective = move |y: &[f64]| {
        let theta: Vec<f64> = (0..5).map(|i| maps[i].to_physical(y[i])).collect();
        chi2(&theta) / n_total as f64
    };

    let starts = jittered_starts(&y0, 5, 0.75);
    let (_, best) = multi_start_minimize(&objective, &starts, 300, 1e-11);
    if !best.converged {
        return Err(FitError::NonConvergence {
            objective: best.f * n_total as f64,
            gradient_norm: best.gradient_norm,
        });
    }
    let theta: Vec<f64> = (0..5).map(|i| maps[i].to_physical(best.x[i])).collect();
    // half the Pearson curvature approximates the information
    let half_chi2 = |th: &[f64]| 0.5 * chi2(th);
    let info = mixture_information(&half_chi2, &theta, bounds, false)?;
    let stat = chi2(&theta);
    let dof = (hist.counts.len() + 1).saturating_sub(5);

    Ok(MixtureFit {
        gamma: theta[0],
        t_e: theta[1],
        eps0_down: theta[2],
        e_z: theta[3],
        p_up: theta[4],
        covariance: info.covariance,
        log_likelihood: -0.5 * stat,
        n_shots: n_total as usize,
        chi_square: Some((stat, dof)),
        flags: info.flags,
    })
}

/// Peak separation derived from a mixture fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaExtraction {
    pub delta_t: f64,
    pub delta_t_err: f64,
    pub delta_e: f64,
    pub delta_e_err: f64,
}

/// Exact peak-separation identity: delta_t = E_Z/r, delta_E = E_Z, with
/// errors propagated from the fit covariance. Fails when either density
/// peak sits at the ramp boundary.
pub fn extract_delta_t(fit: &MixtureFit, r: f64) -> Result<DeltaExtraction, FitError> {
    let m = ReadModel::new(fit.gamma, fit.t_e, r, fit.eps0_down, fit.e_z)?;
    if fit.e_z > 0.0 {
        for spin in [Spin::Up, Spin::Down] {
            if peak_time(&m, spin) == PeakTime::Boundary {
                return Err(FitError::BoundaryPeak);
            }
        }
    }
    let ez_err = fit.sigma(3);
    Ok(DeltaExtraction {
        delta_t: fit.e_z / r,
        delta_t_err: ez_err / r,
        delta_e: fit.e_z,
        delta_e_err: ez_err,
    })
}

/// One point of a field sweep: peak separation in time and energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldScanPoint {
    pub b: f64,
    pub delta_t: f64,
    pub delta_t_err: f64,
    pub delta_e: f64,
    pub delta_e_err: f64,
}

/// One point of a relaxation-rate field sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub b: f64,
    pub rate: f64,
    pub rate_err: f64,
}

/// Intercept handling for the g-factor line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterceptMode {
    /// Fit slope and intercept; report when the intercept is inconsistent
    /// with zero.
    Free,
    /// Constrain the line through the origin.
    FixedZero,
}

/// Weighted linear fit of Zeeman energy versus field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GFactorFit {
    pub g: f64,
    pub g_err: f64,
    /// Intercept in eV; zero in fixed mode.
    pub intercept: f64,
    pub intercept_err: f64,
    /// True when a free intercept sits more than two sigma from zero.
    pub intercept_significant: bool,
    pub mode: InterceptMode,
}

fn check_scan_points(points: &[FieldScanPoint]) -> Result<(), FitError> {
    for p in points {
        if !(p.b > 0.0) {
            return Err(FitError::InvalidPoint {
                reason: format!("field {} is not positive", p.b),
            });
        }
        if p.delta_e_err < 0.0 || p.delta_t_err < 0.0 {
            return Err(FitError::InvalidPoint {
                reason: "negative error bar".into(),
            });
        }
    }
    Ok(())
}

/// Weighted least squares of delta_E versus B; the g-factor is the slope
/// over the Bohr magneton.
pub fn fit_g_factor(points: &[FieldScanPoint], mode: InterceptMode) -> Result<GFactorFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::NotEnoughData {
            needed: 3,
            got: points.len(),
        });
    }
    check_scan_points(points)?;
    // uniform weights when no point reports an uncertainty
    let weight = |err: f64| {
        if err > 0.0 {
            1.0 / (err * err)
        } else {
            1.0
        }
    };
    let b_min = points.iter().map(|p| p.b).fold(f64::INFINITY, f64::min);
    let b_max = points.iter().map(|p| p.b).fold(f64::NEG_INFINITY, f64::max);
    if !(b_max > b_min) && mode == InterceptMode::Free {
        return Err(FitError::SingularDesign);
    }
    let (slope, slope_var, intercept, intercept_var) = match mode {
        InterceptMode::FixedZero => {
            let sxx: f64 = points.iter().map(|p| weight(p.delta_e_err) * p.b * p.b).sum();
            let sxy: f64 = points
                .iter()
                .map(|p| weight(p.delta_e_err) * p.b * p.delta_e)
                .sum();
            if sxx <= 0.0 {
                return Err(FitError::SingularDesign);
            }
            (sxy / sxx, 1.0 / sxx, 0.0, 0.0)
        }
        InterceptMode::Free => {
            let sw: f64 = points.iter().map(|p| weight(p.delta_e_err)).sum();
            let sx: f64 = points.iter().map(|p| weight(p.delta_e_err) * p.b).sum();
            let sxx: f64 = points.iter().map(|p| weight(p.delta_e_err) * p.b * p.b).sum();
            let sy: f64 = points.iter().map(|p| weight(p.delta_e_err) * p.delta_e).sum();
            let sxy: f64 = points
                .iter()
                .map(|p| weight(p.delta_e_err) * p.b * p.delta_e)
                .sum();
            let det = sw * sxx - sx * sx;
            if det <= 0.0 || !det.is_finite() {
                return Err(FitError::SingularDesign);
            }
            let slope = (sw * sxy - sx * sy) / det;
            let intercept = (sxx * sy - sx * sxy) / det;
            (slope, sw / det, intercept, sxx / det)
        }
    };
    let intercept_err = intercept_var.sqrt();
    Ok(GFactorFit {
        g: slope / MU_B,
        g_err: slope_var.sqrt() / MU_B,
        intercept,
        intercept_err,
        intercept_significant: mode == InterceptMode::Free
            && intercept_err > 0.0
            && intercept.abs() > 2.0 * intercept_err,
        mode,
    })
}

/// One point of a load-duration decay scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayPoint {
    pub t_load: f64,
    pub up_fraction: f64,
    pub error: f64,
}

/// Exponential decay fit a·exp(−t/T1) + c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub t1: f64,
    pub t1_err: f64,
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub offset: f64,
    pub offset_err: f64,
}

/// Weighted nonlinear least squares of an exponential decay with constant
/// offset. Flat data (amplitude consistent with zero) makes T1
/// unidentifiable.
pub fn fit_exponential_decay(scan: &[DecayPoint]) -> Result<DecayFit, FitError> {
    if scan.len() < 4 {
        return Err(FitError::NotEnoughData {
            needed: 4,
            got: scan.len(),
        });
    }
    for p in scan {
        if !(p.t_load >= 0.0) || !p.up_fraction.is_finite() || p.error < 0.0 {
            return Err(FitError::InvalidPoint {
                reason: format!("bad decay point at t_load {}", p.t_load),
            });
        }
    }
    let t_max = scan.iter().map(|p| p.t_load).fold(0.0f64, f64::max);
    if t_max <= 0.0 {
        return Err(FitError::SingularDesign);
    }
    let weight = |err: f64| if err > 0.0 { 1.0 / (err * err) } else { 1.0 };
    let maps = [
        ParamMap::Linear { lo: -2.0, hi: 2.0 },           // amplitude
        ParamMap::Log { lo: t_max * 1e-4, hi: t_max * 1e3 }, // T1
        ParamMap::Linear { lo: -1.0, hi: 2.0 },           // offset
    ];
    let cost = move |theta: &[f64]| -> f64 {
        let (a, t1, c) = (theta[0], theta[1], theta[2]);
        scan.iter()
            .map(|p| {
                let r = p.up_fraction - (a * (-p.t_load / t1).exp() + c);
                0.5 * weight(p.error) * r * r
            })
            .sum()
    };
    let objective = move |y: &[f64]| {
        let theta: Vec<f64> = (0..3).map(|i| maps[i].to_physical(y[i])).collect();
        cost(&theta)
    };

    // multi-start over decade-spaced T1 guesses
    let y_first = scan.first().unwrap().up_fraction;
    let y_last = scan.last().unwrap().up_fraction;
    let starts: Vec<Vec<f64>> = [0.03, 0.1, 0.3, 1.0, 3.0]
        .iter()
        .map(|&frac| {
            vec![
                maps[0].to_internal(y_first - y_last),
                maps[1].to_internal(frac * t_max),
                maps[2].to_internal(y_last),
            ]
        })
        .collect();
    let spread = scan
        .iter()
        .map(|p| p.up_fraction)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let flat = (spread.1 - spread.0).abs() < 1e-9;
    if flat {
        return Err(FitError::Unidentifiable { param: "T1" });
    }
    let (_, best) = multi_start_minimize(&objective, &starts, 300, 1e-12);
    if !best.converged {
        return Err(FitError::NonConvergence {
            objective: best.f,
            gradient_norm: best.gradient_norm,
        });
    }
    let theta: Vec<f64> = (0..3).map(|i| maps[i].to_physical(best.x[i])).collect();

    let hess = numeric_hessian(&cost, &theta);
    let cov = match invert_spd(&hess, 3) {
        Some(c) => c,
        None => {
            return Err(if flat || theta[0].abs() < 1e-6 {
                FitError::Unidentifiable { param: "T1" }
            } else {
                FitError::IndefiniteInformation
            })
        }
    };
    let amplitude_err = cov[0].max(0.0).sqrt();
    if theta[0].abs() <= 2.0 * amplitude_err && (flat || theta[0].abs() < 1e-3) {
        return Err(FitError::Unidentifiable { param: "T1" });
    }
    Ok(DecayFit {
        t1: theta[1],
        t1_err: cov[4].max(0.0).sqrt(),
        amplitude: theta[0],
        amplitude_err,
        offset: theta[2],
        offset_err: cov[8].max(0.0).sqrt(),
    })
}

/// Relaxation power-law fit with uncertainties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateLawFit {
    pub law: RelaxationLaw,
    pub k_j_err: f64,
    pub k_ph_err: f64,
}

/// Weighted least squares of 1/T1 on the (B³, B⁷) basis with non-negative
/// coefficients.
pub fn fit_rate_field_law(points: &[RatePoint]) -> Result<RateLawFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::NotEnoughData {
            needed: 3,
            got: points.len(),
        });
    }
    for p in points {
        if !(p.b > 0.0) || !p.rate.is_finite() || p.rate_err < 0.0 {
            return Err(FitError::InvalidPoint {
                reason: format!("bad rate point at B = {}", p.b),
            });
        }
    }
    let b_min = points.iter().map(|p| p.b).fold(f64::INFINITY, f64::min);
    let b_max = points.iter().map(|p| p.b).fold(0.0f64, f64::max);
    if b_max / b_min < 1.5 {
        return Err(FitError::CollinearBasis);
    }
    let weight = |err: f64| if err > 0.0 { 1.0 / (err * err) } else { 1.0 };
    // normal equations on the two-power basis
    let mut a = [0.0; 4];
    let mut rhs = [0.0; 2];
    for p in points {
        let w = weight(p.rate_err);
        let x3 = p.b.powi(3);
        let x7 = p.b.powi(7);
        a[0] += w * x3 * x3;
        a[1] += w * x3 * x7;
        a[2] += w * x7 * x3;
        a[3] += w * x7 * x7;
        rhs[0] += w * x3 * p.rate;
        rhs[1] += w * x7 * p.rate;
    }
    let det = a[0] * a[3] - a[1] * a[2];
    if !(det > 1e-12 * a[0] * a[3]) {
        return Err(FitError::CollinearBasis);
    }
    let unconstrained = solve_dense(&a, &rhs, 2).ok_or(FitError::CollinearBasis)?;
    // active-set projection onto the non-negative quadrant
    let (k_j, k_ph) = if unconstrained[0] >= 0.0 && unconstrained[1] >= 0.0 {
        (unconstrained[0], unconstrained[1])
    } else {
        let kj_only = (rhs[0] / a[0]).max(0.0);
        let kph_only = (rhs[1] / a[3]).max(0.0);
        let cost = |kj: f64, kph: f64| -> f64 {
            points
                .iter()
                .map(|p| {
                    let r = p.rate - kj * p.b.powi(3) - kph * p.b.powi(7);
                    weight(p.rate_err) * r * r
                })
                .sum()
        };
        if cost(kj_only, 0.0) <= cost(0.0, kph_only) {
            (kj_only, 0.0)
        } else {
            (0.0, kph_only)
        }
    };
    // errors from the unconstrained design covariance
    let cov = invert_spd(&a, 2).ok_or(FitError::CollinearBasis)?;
    Ok(RateLawFit {
        law: RelaxationLaw::new(k_j, k_ph)?,
        k_j_err: cov[0].max(0.0).sqrt(),
        k_ph_err: cov[3].max(0.0).sqrt(),
    })
}

/// One point of a transition-width thermometry scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermometryPoint {
    pub t_mxc: f64,
    pub width: f64,
    pub error: f64,
}

/// Thermometry fit result.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermometryFit {
    pub law: ThermometryLaw,
    pub t_eff_err: f64,
    pub alpha_err: f64,
    pub flags: Vec<FitFlag>,
}

/// Weighted nonlinear fit of transition width versus mixing-chamber
/// temperature, recovering the base electron temperature and the gate
/// lever arm.
pub fn fit_thermometry(scan: &[ThermometryPoint]) -> Result<ThermometryFit, FitError> {
    if scan.len() < 3 {
        return Err(FitError::NotEnoughData {
            needed: 3,
            got: scan.len(),
        });
    }
    for p in scan {
        if !(p.t_mxc >= 0.0) || !(p.width > 0.0) || p.error < 0.0 {
            return Err(FitError::InvalidPoint {
                reason: format!("bad thermometry point at T_MXC = {}", p.t_mxc),
            });
        }
    }
    let weight = |err: f64| if err > 0.0 { 1.0 / (err * err) } else { 1.0 };
    let t_hi = scan.iter().map(|p| p.t_mxc).fold(0.0f64, f64::max);
    let maps = [
        ParamMap::Log {
            lo: 1e-4,
            hi: (t_hi * 10.0).max(10.0),
        }, // T_eff
        ParamMap::Linear { lo: 1e-3, hi: 1.0 }, // alpha_QQ
    ];
    let cost = move |theta: &[f64]| -> f64 {
        let law = ThermometryLaw {
            t_eff: theta[0],
            alpha_qq: theta[1],
        };
        scan.iter()
            .map(|p| {
                let r = p.width - crate::model::thermometry_width(&law, p.t_mxc);
                0.5 * weight(p.error) * r * r
            })
            .sum()
    };
    let objective = move |y: &[f64]| {
        let theta = [maps[0].to_physical(y[0]), maps[1].to_physical(y[1])];
        cost(&theta)
    };
    let starts: Vec<Vec<f64>> = [(0.3, 0.3), (0.8, 0.55), (2.0, 0.8), (0.1, 0.1), (5.0, 0.5)]
        .iter()
        .map(|&(t, al)| vec![maps[0].to_internal(t), maps[1].to_internal(al)])
        .collect();
    let (_, best) = multi_start_minimize(&objective, &starts, 300, 1e-12);
    if !best.converged {
        return Err(FitError::NonConvergence {
            objective: best.f,
            gradient_norm: best.gradient_norm,
        });
    }
    let theta = [maps[0].to_physical(best.x[0]), maps[1].to_physical(best.x[1])];
    let hess = numeric_hessian(&cost, &theta);
    // plateau-only data leaves only the ratio T_eff/alpha identified
    let corr = hess[1] / (hess[0] * hess[3]).sqrt();
    let cov = match invert_spd(&hess, 2) {
        Some(c) => c,
        None => return Err(FitError::Unidentifiable { param: "alpha_QQ" }),
    };
    if !corr.is_finite() || corr.abs() > 0.9999 {
        return Err(FitError::Unidentifiable { param: "alpha_QQ" });
    }
    let mut flags = Vec::new();
    let t_eff_err = cov[0].max(0.0).sqrt();
    // width growing linearly through the origin pins T_eff at its floor
    if maps[0].near_boundary(theta[0]) && theta[0] < 0.01 {
        flags.push(FitFlag::TEffConsistentWithZero);
    }
    Ok(ThermometryFit {
        law: ThermometryLaw {
            t_eff: theta[0],
            alpha_qq: theta[1],
        },
        t_eff_err,
        alpha_err: cov[3].max(0.0).sqrt(),
        flags,
    })
}

/// Predicted optimal-threshold visibility at one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityPoint {
    pub b: f64,
    pub t_star: f64,
    pub v_star: f64,
}

/// Visibility curve versus magnetic field for fixed readout parameters:
/// each field sets the Zeeman splitting through the g-factor, then the
/// optimal threshold is evaluated.
pub fn predict_visibility_vs_field(
    base: &ReadModel,
    g: f64,
    fields: &[f64],
) -> Result<Vec<VisibilityPoint>, FitError> {
    fields
        .iter()
        .map(|&b| {
            let e_z = crate::model::zeeman_energy(g, b)?;
            if e_z == 0.0 {
                // degenerate spins carry no information at any threshold
                return Ok(VisibilityPoint {
                    b,
                    t_star: 0.0,
                    v_star: 0.5,
                });
            }
            let m = ReadModel { e_z, ..*base };
            let (t_star, v_star) = optimal_threshold(&m)?;
            Ok(VisibilityPoint { b, t_star, v_star })
        })
        .collect()
}

/// Percentile bootstrap over data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapErrors {
    /// Standard deviation of each estimate across resamples.
    pub sigma: Vec<f64>,
    /// 2.5th percentile of each estimate.
    pub lo: Vec<f64>,
    /// 97.5th percentile of each estimate.
    pub hi: Vec<f64>,
    /// Resamples whose refit succeeded.
    pub n_ok: usize,
}

/// Nonparametric bootstrap: resample rows with replacement, refit, and
/// report percentile intervals. Deterministic for a fixed seed. Refits
/// returning `None` are skipped but counted.
pub fn bootstrap_errors<T: Clone + Sync>(
    data: &[T],
    n_resamples: usize,
    seed: u64,
    refit: &(dyn Fn(&[T]) -> Option<Vec<f64>> + Sync),
) -> Result<BootstrapErrors, FitError> {
    if n_resamples < 100 {
        return Err(FitError::NotEnoughData {
            needed: 100,
            got: n_resamples,
        });
    }
    if data.is_empty() {
        return Err(FitError::NotEnoughData { needed: 1, got: 0 });
    }
    let estimates: Vec<Option<Vec<f64>>> = (0..n_resamples)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(shot_seed(seed, rep as u64));
            let resample: Vec<T> = (0..data.len())
                .map(|_| data[rng.random_range(0..data.len())].clone())
                .collect();
            refit(&resample)
        })
        .collect();
    let ok: Vec<&Vec<f64>> = estimates.iter().flatten().collect();
    if ok.is_empty() {
        return Err(FitError::NonConvergence {
            objective: f64::NAN,
            gradient_norm: f64::NAN,
        });
    }
    let dim = ok[0].len();
    let mut sigma = Vec::with_capacity(dim);
    let mut lo = Vec::with_capacity(dim);
    let mut hi = Vec::with_capacity(dim);
    for d in 0..dim {
        let mut vals: Vec<f64> = ok.iter().map(|v| v[d]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        sigma.push(var.sqrt());
        lo.push(percentile(&vals, 0.025));
        hi.push(percentile(&vals, 0.975));
    }
    Ok(BootstrapErrors {
        sigma,
        lo,
        hi,
        n_ok: ok.len(),
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}
