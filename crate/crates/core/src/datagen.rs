//! Seeded synthetic household panels with injected fraud episodes.
//!
//! Each household draws an income, a spending share, a weekly pattern
//! phase, a credit limit and a repayment habit. Daily spend is log-normal
//! around `income · share / 365` times a weekday multiplier, transaction
//! counts are Poisson with a household-specific ticket size, and the
//! revolving balance accrues spend and daily interest with a repayment of
//! part of the balance once every 30 days.
//!
//! A fraud episode multiplies spend by `spend_spike_factor` and raises
//! `fraud_alert`; the `recovery_days` after it multiply spend by
//! `post_drop_factor` and add `debt_drift` USD/day to the balance.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::series::{self, EconomicSeries, RegressionTarget, SeriesError, Task, WindowGroup, WindowSpec};

/// Channel names in column order.
pub const CHANNELS: [&str; 5] = [
    "spend_total",
    "txn_count",
    "revolving_balance",
    "credit_utilization",
    "fraud_alert",
];

/// First day an episode may start, so every household has some clean
/// history before it.
pub const EARLIEST_EPISODE: usize = 30;

const WEEKLY: [f64; 7] = [0.9, 0.85, 0.9, 0.95, 1.1, 1.25, 1.05];
const SPEND_NOISE: f64 = 0.25;
const APR: f64 = 0.22;
const PAYMENT_PERIOD: usize = 30;
const SECOND_EPISODE_PROB: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShockConfig {
    pub spend_spike_factor: f64,
    pub post_drop_factor: f64,
    pub recovery_days: usize,
    /// USD added to the balance on each recovery day.
    pub debt_drift: f64,
}

impl Default for ShockConfig {
    fn default() -> Self {
        Self {
            spend_spike_factor: 3.0,
            post_drop_factor: 0.6,
            recovery_days: 21,
            debt_drift: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_households: usize,
    pub n_days: usize,
    /// Probability that a household has at least one fraud episode.
    pub fraud_rate: f64,
    /// Yearly income range in USD.
    pub income_band: (f64, f64),
    pub seed: u64,
    pub shock: ShockConfig,
    /// Inclusive range of episode lengths in days.
    pub episode_days: (usize, usize),
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_households: 200,
            n_days: 180,
            fraud_rate: 0.1,
            income_band: (50_000.0, 150_000.0),
            seed: 0,
            shock: ShockConfig::default(),
            episode_days: (10, 28),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |msg: &str| Err(GenError::InvalidConfig(msg.into()));
        let (low, high) = self.income_band;
        let (min_ep, max_ep) = self.episode_days;
        if self.n_households == 0 {
            return bad("n_households must be positive");
        }
        if self.n_days < 60 {
            return bad("n_days must be at least 60");
        }
        if !(low.is_finite() && high.is_finite() && 0.0 < low && low < high) {
            return bad("income_band must satisfy 0 < low < high");
        }
        if !(0.0..=1.0).contains(&self.fraud_rate) {
            return bad("fraud_rate must lie in [0, 1]");
        }
        let s = &self.shock;
        if !(s.spend_spike_factor >= 1.0 && s.spend_spike_factor.is_finite()) {
            return bad("spend_spike_factor must be >= 1");
        }
        if !(s.post_drop_factor > 0.0 && s.post_drop_factor <= 1.0) {
            return bad("post_drop_factor must lie in (0, 1]");
        }
        if !(s.debt_drift >= 0.0 && s.debt_drift.is_finite()) {
            return bad("debt_drift must be >= 0");
        }
        if min_ep == 0 || min_ep > max_ep {
            return bad("episode_days must satisfy 1 <= min <= max");
        }
        if EARLIEST_EPISODE + max_ep > self.n_days {
            return bad("episodes do not fit after the 30-day lead-in");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FraudEvent {
    pub start_day: usize,
    pub duration: usize,
}

impl FraudEvent {
    pub fn contains(&self, day: usize) -> bool {
        (self.start_day..self.start_day + self.duration).contains(&day)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdPanel {
    pub household_id: u64,
    pub income: f64,
    pub spend_total: Vec<f64>,
    pub txn_count: Vec<u32>,
    pub revolving_balance: Vec<f64>,
    pub credit_utilization: Vec<f64>,
    pub fraud_alert: Vec<u8>,
    pub fraud_events: Vec<FraudEvent>,
}

impl HouseholdPanel {
    pub fn n_days(&self) -> usize {
        self.spend_total.len()
    }

    /// Raw (unstandardized) series with the five channels of [`CHANNELS`].
    pub fn to_series(&self) -> Result<EconomicSeries, SeriesError> {
        let n = self.n_days();
        let values = Matrix::from_fn(n, CHANNELS.len(), |t, c| match c {
            0 => self.spend_total[t],
            1 => f64::from(self.txn_count[t]),
            2 => self.revolving_balance[t],
            3 => self.credit_utilization[t],
            _ => f64::from(self.fraud_alert[t]),
        });
        EconomicSeries::new(values, series::names(&CHANNELS), 0, "1d")
    }

    /// Daily fraud labels, identical to the alert channel.
    pub fn labels(&self) -> &[u8] {
        &self.fraud_alert
    }

    /// Checks the panel's structural invariants, returning the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), &'static str> {
        let n = self.n_days();
        if [
            self.txn_count.len(),
            self.revolving_balance.len(),
            self.credit_utilization.len(),
            self.fraud_alert.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err("channel lengths differ");
        }
        if self.spend_total.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err("negative or non-finite spend");
        }
        if self.credit_utilization.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err("utilization outside [0, 1]");
        }
        if self.revolving_balance.iter().any(|b| !b.is_finite()) {
            return Err("non-finite balance");
        }
        for (t, &a) in self.fraud_alert.iter().enumerate() {
            let inside = self.fraud_events.iter().any(|e| e.contains(t));
            if a > 1 || (a == 1) != inside {
                return Err("alert does not match fraud events");
            }
        }
        Ok(())
    }
}

/// Episode layout for one household.
fn draw_events(rng: &mut ChaCha8Rng, config: &GenConfig) -> Vec<FraudEvent> {
    let mut events = Vec::new();
    if !rng.random_bool(config.fraud_rate) {
        return events;
    }
    let (min_ep, max_ep) = config.episode_days;
    let n = config.n_days;
    let duration = rng.random_range(min_ep..=max_ep);
    let start = rng.random_range(EARLIEST_EPISODE..=n - duration);
    events.push(FraudEvent {
        start_day: start,
        duration,
    });
    if rng.random_bool(SECOND_EPISODE_PROB) {
        let duration = rng.random_range(min_ep..=max_ep);
        let earliest = start + events[0].duration + config.shock.recovery_days + 1;
        if earliest + duration <= n {
            let start = rng.random_range(earliest..=n - duration);
            events.push(FraudEvent {
                start_day: start,
                duration,
            });
        }
    }
    events
}

fn generate_household(config: &GenConfig, household: u64) -> HouseholdPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(household);

    let (low, high) = config.income_band;
    let income = rng.random_range(low..high);
    let share = rng.random_range(0.2..0.35);
    let phase = rng.random_range(0..7usize);
    let ticket = rng.random_range(25.0..60.0);
    let limit = income * rng.random_range(0.15..0.3);
    let pay_fraction = rng.random_range(0.4..0.9);
    let pay_day = rng.random_range(0..PAYMENT_PERIOD);
    let mut balance = limit * rng.random_range(0.05..0.2);
    let events = draw_events(&mut rng, config);

    let daily_mean = income * share / 365.0;
    // Mean-one multiplicative noise.
    let noise = LogNormal::new(-SPEND_NOISE * SPEND_NOISE / 2.0, SPEND_NOISE).expect("valid log-normal");
    let daily_rate = APR / 365.0;
    let shock = &config.shock;

    let n = config.n_days;
    let mut panel = HouseholdPanel {
        household_id: household,
        income,
        spend_total: Vec::with_capacity(n),
        txn_count: Vec::with_capacity(n),
        revolving_balance: Vec::with_capacity(n),
        credit_utilization: Vec::with_capacity(n),
        fraud_alert: Vec::with_capacity(n),
        fraud_events: events,
    };
    for t in 0..n {
        let in_episode = panel.fraud_events.iter().any(|e| e.contains(t));
        let recovering = !in_episode
            && panel.fraud_events.iter().any(|e| {
                let end = e.start_day + e.duration;
                t >= end && t < end + shock.recovery_days
            });

        let mut spend = daily_mean * WEEKLY[(t + phase) % 7] * noise.sample(&mut rng);
        if in_episode {
            spend *= shock.spend_spike_factor;
        } else if recovering {
            spend *= shock.post_drop_factor;
        }
        let lambda = spend / ticket;
        let count = if lambda > 0.0 {
            Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u32
        } else {
            0
        };

        balance = balance * (1.0 + daily_rate) + spend;
        if recovering {
            balance += shock.debt_drift;
        }
        if t % PAYMENT_PERIOD == pay_day {
            balance -= pay_fraction * balance;
        }
        balance = balance.max(0.0);

        panel.spend_total.push(spend);
        panel.txn_count.push(count);
        panel.revolving_balance.push(balance);
        panel.credit_utilization.push((balance / limit).clamp(0.0, 1.0));
        panel.fraud_alert.push(u8::from(in_episode));
    }
    panel
}

/// Generates `n_households` panels. Each household uses its own random
/// stream, so the result does not depend on generation order.
pub fn generate(config: &GenConfig) -> Result<Vec<HouseholdPanel>, GenError> {
    config.validate()?;
    Ok((0..config.n_households as u64)
        .map(|h| generate_household(config, h))
        .collect())
}

/// Standardizes each household's channels on its own history and cuts
/// windows. Regression targets are the sample standard deviation of the
/// standardized spend over the horizon; classification targets are 1 when
/// any alert falls inside the horizon.
pub fn to_dataset(
    panels: &[HouseholdPanel],
    window: usize,
    horizon: usize,
    depth: usize,
    task: Task,
) -> Result<Vec<WindowGroup>, SeriesError> {
    let spec = WindowSpec {
        window,
        horizon,
        depth,
        task,
        target_channel: 0,
        regression_target: RegressionTarget::Volatility,
    };
    panels
        .iter()
        .map(|p| {
            let (standardized, _) = series::standardize(&p.to_series()?);
            Ok(WindowGroup {
                id: p.household_id,
                windows: series::make_windows(&standardized, Some(p.labels()), &spec)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(n_households: usize, fraud_rate: f64, seed: u64) -> GenConfig {
        GenConfig {
            n_households,
            n_days: 120,
            fraud_rate,
            seed,
            ..GenConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let cfg = small(20, 0.3, 7);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&small(20, 0.3, 8)).unwrap();
        assert_ne!(generate(&cfg).unwrap(), other);
    }

    #[test]
    fn household_streams_are_independent_of_count() {
        let few = generate(&small(5, 0.3, 3)).unwrap();
        let many = generate(&small(12, 0.3, 3)).unwrap();
        assert_eq!(few[..], many[..5]);
    }

    #[test]
    fn no_fraud_means_no_alerts() {
        let panels = generate(&small(100, 0.0, 1)).unwrap();
        assert!(panels.iter().all(|p| p.fraud_alert.iter().all(|&a| a == 0)));
        assert!(panels.iter().all(|p| p.fraud_events.is_empty()));
    }

    #[test]
    fn episodes_spike_spending() {
        let cfg = small(400, 0.5, 11);
        let panels = generate(&cfg).unwrap();
        let mut checked = 0;
        for p in panels.iter().filter(|p| !p.fraud_events.is_empty()) {
            let first = p.fraud_events[0];
            let pre = &p.spend_total[..first.start_day];
            let during: Vec<f64> = (0..p.n_days())
                .filter(|&t| p.fraud_alert[t] == 1)
                .map(|t| p.spend_total[t])
                .collect();
            let pre_mean = pre.iter().sum::<f64>() / pre.len() as f64;
            let during_mean = during.iter().sum::<f64>() / during.len() as f64;
            assert!(
                during_mean >= 0.8 * cfg.shock.spend_spike_factor * pre_mean,
                "household {}: {during_mean} vs {pre_mean}",
                p.household_id
            );
            checked += 1;
        }
        assert!(checked >= 100, "{checked}");
    }

    #[test]
    fn prevalence_within_three_standard_errors() {
        for (rate, seed) in [(0.1, 0), (0.3, 1), (0.05, 2)] {
            let n = 1000;
            let panels = generate(&small(n, rate, seed)).unwrap();
            let hit = panels.iter().filter(|p| !p.fraud_events.is_empty()).count() as f64 / n as f64;
            let se = libm::sqrt(rate * (1.0 - rate) / n as f64);
            assert!((hit - rate).abs() <= 3.0 * se, "rate {rate}: {hit}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = GenConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.n_days = 59;
        assert!(cfg.validate().is_err());
        let mut cfg = GenConfig::default();
        cfg.income_band = (10.0, 10.0);
        assert!(cfg.validate().is_err());
        let mut cfg = GenConfig::default();
        cfg.shock.post_drop_factor = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = GenConfig::default();
        cfg.shock.spend_spike_factor = 0.5;
        assert!(matches!(generate(&cfg), Err(GenError::InvalidConfig(_))));
    }

    #[test]
    fn dataset_window_count() {
        let cfg = GenConfig {
            n_days: 70,
            episode_days: (5, 10),
            ..small(4, 0.5, 2)
        };
        let panels = generate(&cfg).unwrap();
        let groups = to_dataset(&panels, 64, 1, 2, Task::Classification).unwrap();
        assert!(groups.iter().all(|g| g.windows.len() == 6));
    }

    #[test]
    fn quiet_households_have_zero_targets() {
        let panels = generate(&small(10, 0.0, 5)).unwrap();
        let groups = to_dataset(&panels, 16, 3, 1, Task::Classification).unwrap();
        assert!(groups.iter().flat_map(|g| &g.windows).all(|w| w.target == 0.0));
    }

    #[test]
    fn regression_target_is_horizon_spend_deviation() {
        let panels = generate(&small(3, 0.5, 9)).unwrap();
        let (window, horizon) = (16, 5);
        let groups = to_dataset(&panels, window, horizon, 2, Task::Regression).unwrap();
        for (p, g) in panels.iter().zip(&groups) {
            let n = p.n_days() as f64;
            let m = p.spend_total.iter().sum::<f64>() / n;
            let sd = libm::sqrt(p.spend_total.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (n - 1.0));
            for (offset, w) in g.windows.iter().enumerate() {
                let z: Vec<f64> = p.spend_total[offset + window..offset + window + horizon]
                    .iter()
                    .map(|s| (s - m) / sd)
                    .collect();
                let zm = z.iter().sum::<f64>() / horizon as f64;
                let expect =
                    libm::sqrt(z.iter().map(|v| (v - zm) * (v - zm)).sum::<f64>() / (horizon as f64 - 1.0));
                assert!((w.target - expect).abs() < 1e-10, "{} vs {expect}", w.target);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn panels_satisfy_invariants(
            n_days in 60usize..200,
            fraud_rate in 0.0f64..=1.0,
            low in 10_000.0f64..80_000.0,
            width in 1.0f64..100_000.0,
            spike in 1.0f64..6.0,
            drop in 0.05f64..=1.0,
            recovery in 0usize..40,
            drift in 0.0f64..100.0,
            seed in any::<u64>(),
        ) {
            let cfg = GenConfig {
                n_households: 8,
                n_days,
                fraud_rate,
                income_band: (low, low + width),
                seed,
                shock: ShockConfig {
                    spend_spike_factor: spike,
                    post_drop_factor: drop,
                    recovery_days: recovery,
                    debt_drift: drift,
                },
                episode_days: (5, 25),
            };
            for p in generate(&cfg).unwrap() {
                prop_assert_eq!(p.check_invariants(), Ok(()));
                prop_assert_eq!(p.n_days(), n_days);
            }
        }
    }
}
