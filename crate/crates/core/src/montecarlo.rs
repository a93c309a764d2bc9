//! Seeded batch experiments: decodability statistics and finite-SNR rate
//! sweeps.
//!
//! Trial `i` uses seed `base_seed + i` for the channel, the precoders, the
//! symbols and the noise, in that order. Sweeps reuse the same seed at
//! every SNR, so the points differ only in power and noise scaling.

use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::channel_model::{sample_channel, AntennaConfig, Condition, FeedbackKind, FeedbackMode, NoiseSpec};
use crate::decoder::{decode, desired_information, eliminate_known_interference};
use crate::dof_regions::{achievable_region_no_cr_feedback, region_csi, region_no, sum_dof, to_f64};
use crate::numerics::{seeded_rng, CONDITION_LIMIT};
use crate::schemes::{build_scheme, run_scheme, SchemeError, SchemePlan, User, UserSymbols};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("a batch needs at least one trial")]
    NoTrials,
    #[error("a sweep needs at least one SNR point")]
    NoSnr,
    #[error("SNR points must be finite and strictly ascending")]
    SnrOrder,
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum NoiseSetting {
    Noiseless,
    SnrDb(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialBatchSpec {
    pub config: AntennaConfig,
    pub mode: FeedbackMode,
    pub trials: usize,
    pub base_seed: u64,
    pub noise: NoiseSetting,
}

impl TrialBatchSpec {
    pub fn noiseless(config: AntennaConfig, mode: FeedbackMode, trials: usize, base_seed: u64) -> Self {
        Self {
            config,
            mode,
            trials,
            base_seed,
            noise: NoiseSetting::Noiseless,
        }
    }

    fn noise_points(&self) -> Vec<NoiseSpec> {
        match &self.noise {
            NoiseSetting::Noiseless => vec![NoiseSpec::Noiseless],
            NoiseSetting::SnrDb(list) => list.iter().map(|&snr_db| NoiseSpec::Awgn { snr_db }).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrialCategory {
    Decodable,
    /// Full rank, but conditioning above the limit.
    Filtered,
    /// A retransmission could not be inverted, or no admissible precoder
    /// was found.
    Degenerate,
    /// Rank deficient.
    Undecodable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub category: TrialCategory,
    /// Worse of the two receivers.
    pub condition_number: f64,
    pub max_symbol_error: Option<f64>,
    pub cancellation_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    pub config: AntennaConfig,
    pub mode: String,
    pub condition: Condition,
    pub snr_db: Option<f64>,
    pub trials: usize,
    pub decodable: usize,
    pub filtered: usize,
    pub degenerate: usize,
    pub undecodable: usize,
    /// Decodable share of the trials that were neither filtered nor degenerate.
    pub decodable_fraction: f64,
    pub filtered_fraction: f64,
    pub degenerate_fraction: f64,
    pub median_condition_number: f64,
    pub max_symbol_error_p50: Option<f64>,
    pub max_symbol_error_p99: Option<f64>,
    pub max_cancellation_residual: f64,
    pub symbols_per_user: usize,
    pub frame_length: usize,
}

impl BatchStats {
    pub const CSV_HEADER: [&'static str; 8] = [
        "config",
        "mode",
        "condition",
        "trials",
        "decodable_fraction",
        "filtered_fraction",
        "median_condition_number",
        "max_symbol_error_p99",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.config.to_string(),
            self.mode.clone(),
            self.condition.to_string(),
            self.trials.to_string(),
            self.decodable_fraction.to_string(),
            self.filtered_fraction.to_string(),
            self.median_condition_number.to_string(),
            self.max_symbol_error_p99.map(|e| e.to_string()).unwrap_or_default(),
        ]
    }
}

pub fn write_batch_csv<W: std::io::Write>(out: W, stats: &[BatchStats]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BatchStats::CSV_HEADER)?;
    for s in stats {
        w.write_record(s.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Nearest-rank percentile of a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

struct TrialRun {
    outcome: TrialOutcome,
    /// Sum of both receivers' information in bits per frame, for decodable
    /// noisy trials.
    information: Option<f64>,
}

fn run_trial(plan: &SchemePlan, seed: u64, noise: NoiseSpec) -> Result<TrialRun, SchemeError> {
    let mut rng = seeded_rng(seed);
    let channel = sample_channel(plan.config, plan.frame_length, &mut rng)?;
    let symbols = UserSymbols::random(plan.symbols_per_user, &mut rng);
    let transcript = match run_scheme(plan, &channel, &symbols, &noise, &mut rng) {
        Ok(t) => t,
        Err(SchemeError::InadmissiblePrecoders { .. }) => {
            return Ok(TrialRun {
                outcome: TrialOutcome {
                    seed,
                    category: TrialCategory::Degenerate,
                    condition_number: f64::INFINITY,
                    max_symbol_error: None,
                    cancellation_residual: 0.0,
                },
                information: None,
            })
        }
        Err(e) => return Err(e),
    };
    let mut degenerate = false;
    let mut full_rank = true;
    let mut condition: f64 = 0.0;
    let mut error: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let mut information = Some(0.0);
    for user in [User::A, User::B] {
        let system = eliminate_known_interference(&transcript, user);
        let report = decode(&system, Some(symbols.of(user)));
        degenerate |= system.degenerate;
        full_rank &= report.decodable;
        condition = condition.max(report.condition_number);
        error = error.max(report.max_symbol_error.unwrap_or(f64::INFINITY));
        residual = residual.max(report.cancellation_residual);
        information = match (information, desired_information(&system)) {
            (Some(acc), Some(i)) => Some(acc + i),
            _ => None,
        };
    }
    let category = if degenerate {
        TrialCategory::Degenerate
    } else if !full_rank {
        TrialCategory::Undecodable
    } else if condition > CONDITION_LIMIT {
        TrialCategory::Filtered
    } else {
        TrialCategory::Decodable
    };
    let usable = !degenerate && full_rank;
    Ok(TrialRun {
        outcome: TrialOutcome {
            seed,
            category,
            condition_number: condition,
            max_symbol_error: (category == TrialCategory::Decodable).then_some(error),
            cancellation_residual: residual,
        },
        information: if usable { information } else { None },
    })
}

fn run_trials(plan: &SchemePlan, spec: &TrialBatchSpec, noise: NoiseSpec) -> Result<Vec<TrialRun>, SchemeError> {
    (0..spec.trials)
        .into_par_iter()
        .map(|i| run_trial(plan, spec.base_seed.wrapping_add(i as u64), noise))
        .collect()
}

/// Per-trial outcomes for one noise setting, in trial order.
pub fn run_outcomes(spec: &TrialBatchSpec, noise: NoiseSpec) -> Result<Vec<TrialOutcome>, MonteCarloError> {
    if spec.trials == 0 {
        return Err(MonteCarloError::NoTrials);
    }
    let plan = build_scheme(spec.config, spec.mode);
    Ok(run_trials(&plan, spec, noise)?.into_iter().map(|r| r.outcome).collect())
}

pub fn summarize(spec: &TrialBatchSpec, plan: &SchemePlan, noise: NoiseSpec, outcomes: &[TrialOutcome]) -> BatchStats {
    let count = |c: TrialCategory| outcomes.iter().filter(|o| o.category == c).count();
    let decodable = count(TrialCategory::Decodable);
    let filtered = count(TrialCategory::Filtered);
    let degenerate = count(TrialCategory::Degenerate);
    let undecodable = count(TrialCategory::Undecodable);
    let trials = outcomes.len();
    let eligible = decodable + undecodable;
    let conditions = sorted(
        outcomes
            .iter()
            .filter(|o| o.category != TrialCategory::Degenerate)
            .map(|o| o.condition_number)
            .collect(),
    );
    let errors = sorted(outcomes.iter().filter_map(|o| o.max_symbol_error).collect());
    BatchStats {
        config: spec.config,
        mode: spec.mode.label(),
        condition: plan.condition,
        snr_db: noise.snr_db(),
        trials,
        decodable,
        filtered,
        degenerate,
        undecodable,
        decodable_fraction: if eligible == 0 {
            0.0
        } else {
            decodable as f64 / eligible as f64
        },
        filtered_fraction: filtered as f64 / trials as f64,
        degenerate_fraction: degenerate as f64 / trials as f64,
        median_condition_number: percentile(&conditions, 50.0).unwrap_or(f64::INFINITY),
        max_symbol_error_p50: percentile(&errors, 50.0),
        max_symbol_error_p99: percentile(&errors, 99.0),
        max_cancellation_residual: outcomes.iter().map(|o| o.cancellation_residual).fold(0.0, f64::max),
        symbols_per_user: plan.symbols_per_user,
        frame_length: plan.frame_length,
    }
}

/// Statistics for each noise point of the spec.
pub fn run_batch(spec: &TrialBatchSpec) -> Result<Vec<BatchStats>, MonteCarloError> {
    if spec.trials == 0 {
        return Err(MonteCarloError::NoTrials);
    }
    let plan = build_scheme(spec.config, spec.mode);
    spec.noise_points()
        .into_iter()
        .map(|noise| {
            let outcomes: Vec<TrialOutcome> = run_trials(&plan, spec, noise)?.into_iter().map(|r| r.outcome).collect();
            Ok(summarize(spec, &plan, noise, &outcomes))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub snr_db: f64,
    /// Mean of (rate_A + rate_B) / T over included trials, bits per slot.
    pub mean_sum_rate: f64,
    /// 95% normal-approximation half-width.
    pub ci_half_width: f64,
    pub included: usize,
    pub excluded: usize,
    /// Slope from the previous point, in sum DoF.
    pub slope_from_previous: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub config: AntennaConfig,
    pub mode: String,
    pub trials: usize,
    pub base_seed: u64,
    pub points: Vec<SweepPoint>,
    /// Slope between the two highest SNR points.
    pub sum_dof_estimate: Option<f64>,
    /// Sum DoF the simulated plan achieves, 2S/T.
    #[serde(serialize_with = "serialize_ratio")]
    pub scheme_sum_dof: Ratio<i64>,
    /// Sum DoF of the region that applies to the feedback mode.
    #[serde(serialize_with = "serialize_ratio")]
    pub region_sum_dof: Ratio<i64>,
}

fn serialize_ratio<S: serde::Serializer>(r: &Ratio<i64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

impl SweepResult {
    pub const CSV_HEADER: [&'static str; 9] = [
        "config",
        "mode",
        "snr_db",
        "mean_sum_rate",
        "ci_half_width",
        "included",
        "excluded",
        "slope_from_previous",
        "scheme_sum_dof",
    ];

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for p in &self.points {
            w.write_record([
                self.config.to_string(),
                self.mode.clone(),
                p.snr_db.to_string(),
                p.mean_sum_rate.to_string(),
                p.ci_half_width.to_string(),
                p.included.to_string(),
                p.excluded.to_string(),
                p.slope_from_previous.map(|s| s.to_string()).unwrap_or_default(),
                self.scheme_sum_dof.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("plain data");
        v["scheme_sum_dof_float"] = json!(to_f64(self.scheme_sum_dof));
        v["region_sum_dof_float"] = json!(to_f64(self.region_sum_dof));
        v
    }
}

/// Region whose sum DoF the sweep is compared against.
pub fn reference_sum_dof(config: AntennaConfig, mode: FeedbackMode) -> Ratio<i64> {
    let region = if mode.kind == FeedbackKind::NoFeedback {
        region_no(config)
    } else if !mode.relay_has_feedback {
        achievable_region_no_cr_feedback(config)
    } else {
        region_csi(config)
    };
    sum_dof(&region)
}

pub fn estimate_dof_sweep(spec: &TrialBatchSpec) -> Result<SweepResult, MonteCarloError> {
    if spec.trials == 0 {
        return Err(MonteCarloError::NoTrials);
    }
    let snrs = match &spec.noise {
        NoiseSetting::SnrDb(list) if !list.is_empty() => list.clone(),
        _ => return Err(MonteCarloError::NoSnr),
    };
    if snrs.iter().any(|s| !s.is_finite()) || snrs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MonteCarloError::SnrOrder);
    }
    let plan = build_scheme(spec.config, spec.mode);
    let frame = plan.frame_length as f64;
    let mut points: Vec<SweepPoint> = Vec::with_capacity(snrs.len());
    for &snr_db in &snrs {
        let runs = run_trials(&plan, spec, NoiseSpec::Awgn { snr_db })?;
        let rates: Vec<f64> = runs.iter().filter_map(|r| r.information).map(|i| i / frame).collect();
        let n = rates.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            rates.iter().sum::<f64>() / n as f64
        };
        let ci = if n < 2 {
            f64::NAN
        } else {
            let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        };
        let slope_from_previous = points
            .last()
            .map(|prev| (mean - prev.mean_sum_rate) / ((snr_db - prev.snr_db) / 10.0 * 10f64.log2()));
        points.push(SweepPoint {
            snr_db,
            mean_sum_rate: mean,
            ci_half_width: ci,
            included: n,
            excluded: runs.len() - n,
            slope_from_previous,
        });
    }
    Ok(SweepResult {
        config: spec.config,
        mode: spec.mode.label(),
        trials: spec.trials,
        base_seed: spec.base_seed,
        sum_dof_estimate: points.last().and_then(|p| p.slope_from_previous),
        points,
        scheme_sum_dof: Ratio::new(2 * plan.symbols_per_user as i64, plan.frame_length as i64),
        region_sum_dof: reference_sum_dof(spec.config, spec.mode),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csit() -> FeedbackMode {
        FeedbackMode::everywhere(FeedbackKind::DelayedCsit)
    }

    #[test]
    fn siso_batch_is_fully_decodable() {
        let spec = TrialBatchSpec::noiseless(AntennaConfig::siso(), csit(), 2000, 1);
        let stats = &run_batch(&spec).unwrap()[0];
        assert_eq!(stats.decodable_fraction, 1.0);
        assert_eq!(
            stats.decodable + stats.filtered + stats.degenerate + stats.undecodable,
            2000
        );
        assert!(stats.max_symbol_error_p99.unwrap() < 1e-6);
    }

    #[test]
    fn tdm_siso_is_trivially_full_rank() {
        let spec = TrialBatchSpec::noiseless(
            AntennaConfig::siso(),
            FeedbackMode::everywhere(FeedbackKind::NoFeedback),
            500,
            3,
        );
        let stats = &run_batch(&spec).unwrap()[0];
        assert_eq!((stats.symbols_per_user, stats.frame_length), (1, 2));
        assert_eq!(stats.decodable, 500);
        // One complex gain per equation.
        assert_eq!(stats.median_condition_number, 1.0);
    }

    #[test]
    fn batches_are_deterministic() {
        let spec = TrialBatchSpec::noiseless(AntennaConfig::new(1, 2, 2).unwrap(), csit(), 300, 77);
        assert_eq!(run_batch(&spec).unwrap(), run_batch(&spec).unwrap());
    }

    #[test]
    fn parallel_matches_serial() {
        let spec = TrialBatchSpec::noiseless(AntennaConfig::new(2, 3, 1).unwrap(), csit(), 64, 5);
        let plan = build_scheme(spec.config, spec.mode);
        let parallel = run_outcomes(&spec, NoiseSpec::Noiseless).unwrap();
        let serial: Vec<TrialOutcome> = (0..64)
            .map(|i| run_trial(&plan, 5 + i, NoiseSpec::Noiseless).unwrap().outcome)
            .collect();
        assert_eq!(parallel, serial);
    }

    #[test]
    fn zero_trials_rejected() {
        let spec = TrialBatchSpec::noiseless(AntennaConfig::siso(), csit(), 0, 1);
        assert_eq!(run_batch(&spec).unwrap_err(), MonteCarloError::NoTrials);
    }

    #[test]
    fn single_point_sweep_has_no_slope() {
        let mut spec = TrialBatchSpec::noiseless(AntennaConfig::siso(), csit(), 50, 1);
        spec.noise = NoiseSetting::SnrDb(vec![0.0]);
        let res = estimate_dof_sweep(&spec).unwrap();
        assert!(res.sum_dof_estimate.is_none());
        let p = &res.points[0];
        assert!(p.mean_sum_rate.is_finite() && p.mean_sum_rate > 0.0 && p.mean_sum_rate < 5.0);
        spec.noise = NoiseSetting::SnrDb(vec![20.0, 10.0]);
        assert_eq!(estimate_dof_sweep(&spec).unwrap_err(), MonteCarloError::SnrOrder);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), Some(99.0));
        assert_eq!(percentile(&v, 50.0), Some(50.0));
        assert_eq!(percentile(&[], 50.0), None);
    }
}
