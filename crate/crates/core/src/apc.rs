//! Reiterative MMSE adaptive pulse compression over the compensation-matrix
//! signal model `s = F x + noise`.
//!
//! Each iteration builds one structured covariance
//!
//! ```text
//! C = F diag(P) F^H + sigma^2 I          (baseline)
//! C = F diag(P_i + sum_{j!=i} P_j,MF) F^H + sigma^2 I   (MIMO, transmitter i)
//! ```
//!
//! factors it once (Cholesky) and derives all `L` gain-constrained filters
//! `f(l) = C^-1 f_l / (f_l^H C^-1 f_l)` from that single factorization.
//! The new power estimate is the squared magnitude of the adaptive profile.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stretch::{matched_filter, CompensationMatrix, RangeProfile};

/// How the signal term enters the covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceModel {
    /// `F P F^H + sigma^2 I`.
    #[default]
    Standard,
    /// Literal nesting of the signal covariance inside the inverted term,
    /// which counts `F P F^H` twice.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApcSettings {
    pub max_iterations: usize,
    /// Stop once `max |P_k - P_{k-1}| / max P_{k-1}` drops below this value.
    pub early_stop_rel_change: Option<f64>,
    /// Extra diagonal, as a multiple of the noise power. When the noise power
    /// is zero it scales the mean diagonal of the signal covariance instead.
    pub diagonal_loading_factor: f64,
    pub noise_power_override: Option<f64>,
    pub covariance: CovarianceModel,
}

impl Default for ApcSettings {
    fn default() -> Self {
        ApcSettings {
            max_iterations: 3,
            early_stop_rel_change: Some(1e-3),
            diagonal_loading_factor: 0.0,
            noise_power_override: None,
            covariance: CovarianceModel::Standard,
        }
    }
}

impl ApcSettings {
    pub fn with_iterations(max_iterations: usize) -> Self {
        ApcSettings { max_iterations, early_stop_rel_change: None, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=10).contains(&self.max_iterations) {
            return Err(Error::Parameter(format!(
                "max_iterations must be within 1..=10, got {}",
                self.max_iterations
            )));
        }
        if !(self.diagonal_loading_factor.is_finite() && self.diagonal_loading_factor >= 0.0) {
            return Err(Error::Parameter("diagonal loading must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ApcResult {
    /// Adaptive profile after each iteration (index 0 is iteration 1).
    pub iterations: Vec<RangeProfile>,
    pub final_profile: RangeProfile,
    /// Matched-filter profile the iterations started from.
    pub initial_profile: RangeProfile,
    /// Cholesky-based condition estimate of each iteration's covariance.
    pub condition_estimates: Vec<f64>,
    /// `max_l |f(l)^H f_l - 1|` per iteration.
    pub unity_residuals: Vec<f64>,
    pub factorizations: usize,
}

/// `F diag(power) F^H + diag_add I`.
pub fn structured_covariance(bank: &CompensationMatrix, power: &[f64], diag_add: f64) -> DMatrix<Complex64> {
    let mut g = bank.entries.clone();
    for (mut col, &p) in g.column_iter_mut().zip(power) {
        col *= Complex64::new(p.max(0.0).sqrt(), 0.0);
    }
    let mut c = &g * g.adjoint();
    for k in 0..c.nrows() {
        c[(k, k)] += Complex64::new(diag_add, 0.0);
    }
    c
}

struct FilterBank {
    profile: Vec<Complex64>,
    condition: f64,
    unity_residual: f64,
}

fn adaptive_pass(bank: &CompensationMatrix, snapshot: &DVector<Complex64>, c: DMatrix<Complex64>) -> Result<FilterBank> {
    let chol: Cholesky<Complex64, Dyn> = Cholesky::new(c).ok_or_else(|| {
        Error::Numerical(
            "covariance is not positive definite; supply a positive noise power or enable diagonal loading".into(),
        )
    })?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..l.nrows()).map(|k| l[(k, k)].re).collect();
    let dmax = diag.iter().cloned().fold(f64::MIN, f64::max);
    let dmin = diag.iter().cloned().fold(f64::MAX, f64::min);
    let condition = (dmax / dmin).powi(2);

    // Z = C^-1 F, one solve against the shared factorization
    let z = chol.solve(&bank.entries);
    let mut profile = Vec::with_capacity(bank.n_range());
    let mut unity_residual = 0.0f64;
    for (zl, fl) in z.column_iter().zip(bank.entries.column_iter()) {
        let denom = fl.dotc(&zl);
        if !(denom.norm() > 0.0 && denom.re.is_finite()) {
            return Err(Error::Numerical("degenerate filter normalization".into()));
        }
        let filt = zl / denom;
        profile.push(filt.dotc(snapshot));
        unity_residual = unity_residual.max((filt.dotc(&fl) - Complex64::new(1.0, 0.0)).norm());
    }
    Ok(FilterBank { profile, condition, unity_residual })
}

fn noise_floor(noise_power: f64, settings: &ApcSettings) -> f64 {
    settings.noise_power_override.unwrap_or(noise_power)
}

/// RMMSE iterations from an explicit starting power estimate. `cross_power`
/// is a fixed addition to the diagonal power model (other transmitters).
pub fn rmmse_from_power(
    bank: &CompensationMatrix,
    snapshot: &[Complex64],
    initial_power: &[f64],
    cross_power: Option<&[f64]>,
    noise_power: f64,
    settings: &ApcSettings,
) -> Result<ApcResult> {
    settings.validate()?;
    let initial_profile = matched_filter(bank, snapshot)?;
    let l = bank.n_range();
    if initial_power.len() != l || cross_power.is_some_and(|c| c.len() != l) {
        return Err(Error::Shape(format!("power estimates must have {l} entries")));
    }
    let sigma2 = noise_floor(noise_power, settings);
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::Parameter(format!("noise power must be >= 0, got {sigma2}")));
    }
    if sigma2 == 0.0 && settings.diagonal_loading_factor == 0.0 {
        return Err(Error::Numerical(
            "zero noise power without diagonal loading leaves the covariance singular; enable loading".into(),
        ));
    }
    let s = DVector::from_column_slice(snapshot);
    let mut power = initial_power.to_vec();
    let mut out = ApcResult {
        iterations: Vec::new(),
        final_profile: initial_profile.clone(),
        initial_profile,
        condition_estimates: Vec::new(),
        unity_residuals: Vec::new(),
        factorizations: 0,
    };
    for _ in 0..settings.max_iterations {
        let signal_scale = match settings.covariance {
            CovarianceModel::Standard => 1.0,
            CovarianceModel::Literal => 2.0,
        };
        let model: Vec<f64> = match cross_power {
            Some(cross) => power.iter().zip(cross).map(|(p, c)| signal_scale * p + c).collect(),
            None => power.iter().map(|p| signal_scale * p).collect(),
        };
        let loading = if sigma2 > 0.0 {
            settings.diagonal_loading_factor * sigma2
        } else {
            // mean diagonal of F diag(model) F^H, columns are unit norm
            settings.diagonal_loading_factor * model.iter().sum::<f64>() / bank.n_fast() as f64
        };
        let c = structured_covariance(bank, &model, sigma2 + loading);
        let pass = adaptive_pass(bank, &s, c)?;
        out.factorizations += 1;
        out.condition_estimates.push(pass.condition);
        out.unity_residuals.push(pass.unity_residual);

        let next: Vec<f64> = pass.profile.iter().map(|z| z.norm_sqr()).collect();
        let prev_max = power.iter().cloned().fold(0.0, f64::max);
        let change = power.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        power = next;
        out.iterations.push(RangeProfile::new(pass.profile, bank));
        if let Some(tol) = settings.early_stop_rel_change {
            if change <= tol * prev_max {
                break;
            }
        }
    }
    out.final_profile = out.iterations.last().cloned().expect("at least one iteration");
    Ok(out)
}

/// Single-input RMMSE starting from the matched-filter power profile.
pub fn rmmse_baseline(
    bank: &CompensationMatrix,
    snapshot: &[Complex64],
    noise_power: f64,
    settings: &ApcSettings,
) -> Result<ApcResult> {
    let mf = matched_filter(bank, snapshot)?;
    rmmse_from_power(bank, snapshot, &mf.power(), None, noise_power, settings)
}

/// MIMO RMMSE: transmitter `i` iterates its own power estimate while the
/// matched-filter power of every other transmitter stays in its covariance.
pub fn rmmse_mimo(
    bank: &CompensationMatrix,
    snapshots: &[Vec<Complex64>],
    noise_power: f64,
    settings: &ApcSettings,
) -> Result<Vec<ApcResult>> {
    if snapshots.is_empty() {
        return Err(Error::Parameter("at least one transmitter snapshot is required".into()));
    }
    let mf_power = snapshots
        .iter()
        .map(|s| matched_filter(bank, s).map(|p| p.power()))
        .collect::<Result<Vec<_>>>()?;
    let l = bank.n_range();
    let cross: Vec<Option<Vec<f64>>> = (0..snapshots.len())
        .map(|i| {
            if snapshots.len() == 1 {
                return None;
            }
            let mut acc = vec![0.0; l];
            for (j, p) in mf_power.iter().enumerate().filter(|(j, _)| *j != i) {
                let _ = j;
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v;
                }
            }
            Some(acc)
        })
        .collect();

    std::thread::scope(|scope| {
        let handles: Vec<_> = snapshots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (mf, cross) = (&mf_power[i], cross[i].as_deref());
                scope.spawn(move || rmmse_from_power(bank, s, mf, cross, noise_power, settings))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rmmse worker panicked")).collect()
    })
}

/// Noise power from the quietest decile of a matched-filter profile.
///
/// The mean of the lowest fraction `p` of exponentially distributed powers is
/// `(1 - (1 - p)(1 - ln(1 - p))) / p` times their mean; that bias is divided out.
pub fn estimate_noise_power(profile: &RangeProfile) -> f64 {
    let mut power = profile.power();
    if power.is_empty() {
        return 0.0;
    }
    power.sort_by(f64::total_cmp);
    let k = (power.len() / 10).max(1);
    let low_mean = power[..k].iter().sum::<f64>() / k as f64;
    if k == power.len() {
        return low_mean;
    }
    let p = k as f64 / power.len() as f64;
    let fraction = (1.0 - (1.0 - p) * (1.0 - (1.0 - p).ln())) / p;
    low_mean / fraction
}
