//! System model: users, cell constants, learning constants and the
//! energy/time/rate formulas every optimizer evaluates.
//!
//! Iteration counts are kept real-valued here; only the FL simulator rounds
//! them up.

use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative slack used when checking constraints.
pub const DEFAULT_SLACK: f64 = 1e-9;

/// Per-user channel and compute parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserParams {
    /// Linear channel power gain.
    pub channel_gain: f64,
    /// CPU cycles needed per data sample.
    pub cycles_per_sample: f64,
    /// Number of local data samples.
    pub samples: usize,
    /// Maximum CPU frequency, Hz.
    pub f_max: f64,
    /// Maximum transmit power, W.
    pub p_max: f64,
}

impl UserParams {
    /// Cycles for one pass over the local data.
    pub fn cycles_per_pass(&self) -> f64 {
        self.cycles_per_sample * self.samples as f64
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if !(ok(self.channel_gain)
            && ok(self.cycles_per_sample)
            && self.samples > 0
            && ok(self.f_max)
            && ok(self.p_max))
        {
            return Err(Error::domain(format!(
                "user parameters must be finite and positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// The cell: every user plus the shared constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkScenario {
    pub users: Vec<UserParams>,
    /// Total uplink bandwidth, Hz.
    pub total_bandwidth: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_psd: f64,
    /// Size of one model upload, bits.
    pub upload_bits: f64,
    /// Effective switched capacitance of the user CPUs.
    pub kappa: f64,
}

impl NetworkScenario {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn total_samples(&self) -> usize {
        self.users.iter().map(|u| u.samples).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::domain("scenario has no users"));
        }
        for (k, u) in self.users.iter().enumerate() {
            u.validate().map_err(|e| e.context(format!("user {k}")))?;
        }
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if !(ok(self.total_bandwidth) && ok(self.noise_psd) && ok(self.upload_bits) && ok(self.kappa))
        {
            return Err(Error::domain(
                "bandwidth, noise density, upload size and kappa must be finite and positive",
            ));
        }
        Ok(())
    }

    /// Copy of the scenario restricted to the listed users, in that order.
    pub fn subset(&self, users: &[usize]) -> NetworkScenario {
        NetworkScenario {
            users: users.iter().map(|&k| self.users[k]).collect(),
            ..self.clone()
        }
    }
}

/// Learning constants of the federated algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlParams {
    /// Smoothness constant of the local losses.
    pub lipschitz: f64,
    /// Strong-convexity constant of the local losses.
    pub strong_convexity: f64,
    /// Weight on the global gradient in the local surrogate.
    pub xi: f64,
    /// Local gradient-descent step size.
    pub step_size: f64,
    /// Target relative accuracy of the global model.
    pub global_accuracy: f64,
    /// Box the local accuracy is optimized over.
    pub local_accuracy_bounds: (f64, f64),
}

impl FlParams {
    pub fn validate(&self) -> Result<()> {
        let (l, g) = (self.lipschitz, self.strong_convexity);
        if !(g > 0.0 && g <= l && l.is_finite()) {
            return Err(Error::domain(format!(
                "need 0 < strong_convexity <= lipschitz, got {g} and {l}"
            )));
        }
        if !(self.xi > 0.0 && self.xi <= g / l) {
            return Err(Error::domain(format!(
                "need 0 < xi <= strong_convexity/lipschitz = {}, got {}",
                g / l,
                self.xi
            )));
        }
        if !(self.step_size > 0.0 && self.step_size < 2.0 / l) {
            return Err(Error::domain(format!(
                "need 0 < step_size < 2/lipschitz = {}, got {}",
                2.0 / l,
                self.step_size
            )));
        }
        if !(self.global_accuracy > 0.0 && self.global_accuracy < 1.0) {
            return Err(Error::domain(format!(
                "global accuracy must lie in (0, 1), got {}",
                self.global_accuracy
            )));
        }
        let (lo, hi) = self.local_accuracy_bounds;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::domain(format!(
                "local accuracy bounds must satisfy 0 < lo <= hi < 1, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    /// Iteration coefficients for the users of `scenario`.
    pub fn coefficients(&self, scenario: &NetworkScenario) -> Result<IterationCoefficients> {
        self.validate()?;
        let (l, g, d) = (self.lipschitz, self.strong_convexity, self.step_size);
        let v = 2.0 / ((2.0 - l * d) * d * g);
        let a = 2.0 * l * l / (g * g * self.xi) * (1.0 / self.global_accuracy).ln();
        Ok(IterationCoefficients {
            local_iter_coeff: v,
            global_iter_coeff: a,
            cycle_load: scenario
                .users
                .iter()
                .map(|u| v * u.cycles_per_pass())
                .collect(),
        })
    }
}

/// Constants linking the local accuracy to iteration counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationCoefficients {
    /// Local iterations per bit of local accuracy: `I_k = v·log₂(1/η)`.
    pub local_iter_coeff: f64,
    /// Global iterations scale: `I₀ = a/(1−η)`.
    pub global_iter_coeff: f64,
    /// Per-user cycles per bit of local accuracy, `v·C_k·D_k`.
    pub cycle_load: Vec<f64>,
}

impl IterationCoefficients {
    /// Same coefficients with the global-iteration scale replaced.
    pub fn with_global_coeff(&self, a: f64) -> Self {
        IterationCoefficients {
            global_iter_coeff: a,
            ..self.clone()
        }
    }

    /// Restriction to a subset of users.
    pub fn subset(&self, users: &[usize]) -> Self {
        IterationCoefficients {
            cycle_load: users.iter().map(|&k| self.cycle_load[k]).collect(),
            ..self.clone()
        }
    }
}

/// One point of the joint decision space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Upload time per user, s.
    #[serde(rename = "t")]
    pub tx_time: Vec<f64>,
    /// Bandwidth per user, Hz.
    #[serde(rename = "b")]
    pub bandwidth: Vec<f64>,
    /// CPU frequency per user, Hz.
    #[serde(rename = "f")]
    pub freq: Vec<f64>,
    /// Transmit power per user, W.
    #[serde(rename = "p")]
    pub power: Vec<f64>,
    /// Local accuracy shared by all users.
    #[serde(rename = "eta")]
    pub local_accuracy: f64,
}

impl Allocation {
    pub fn num_users(&self) -> usize {
        self.tx_time.len()
    }

    fn check_shape(&self, k: usize) -> Result<()> {
        for len in [
            self.tx_time.len(),
            self.bandwidth.len(),
            self.freq.len(),
            self.power.len(),
        ] {
            if len != k {
                return Err(Error::Dimension {
                    expected: k,
                    got: len,
                });
            }
        }
        Ok(())
    }

    /// Restriction to a subset of users.
    pub fn subset(&self, users: &[usize]) -> Allocation {
        let pick = |v: &Vec<f64>| users.iter().map(|&k| v[k]).collect();
        Allocation {
            tx_time: pick(&self.tx_time),
            bandwidth: pick(&self.bandwidth),
            freq: pick(&self.freq),
            power: pick(&self.power),
            local_accuracy: self.local_accuracy,
        }
    }
}

/// Energy and time evaluated at an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTimeBreakdown {
    /// Computation energy per global round, per user, J.
    pub comp_energy: Vec<f64>,
    /// Upload energy per global round, per user, J.
    pub tx_energy: Vec<f64>,
    /// Total energy over all global rounds, J.
    pub total_energy: f64,
    /// Completion time of each user over all rounds, s.
    pub per_user_completion: Vec<f64>,
    pub global_iters: f64,
    pub local_iters: Vec<f64>,
}

impl EnergyTimeBreakdown {
    /// Time until the slowest user finishes.
    pub fn completion_time(&self) -> f64 {
        self.per_user_completion
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Constraints of the energy minimization problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    /// Every user finishes within the deadline.
    Latency,
    /// Every upload fits in its transmission time.
    Data,
    /// Bandwidths sum to at most the total.
    Bandwidth,
    /// CPU frequencies within `[0, f_max]`.
    Freq,
    /// Transmit powers within `[0, p_max]`.
    Power,
    /// Local accuracy strictly inside `(0, 1)`.
    Eta,
    /// No negative or non-finite entries.
    Nonneg,
    /// Vector lengths differ from the number of users.
    Shape,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Constraint::Latency => "latency",
            Constraint::Data => "data",
            Constraint::Bandwidth => "bandwidth",
            Constraint::Freq => "freq",
            Constraint::Power => "power",
            Constraint::Eta => "eta",
            Constraint::Nonneg => "nonneg",
            Constraint::Shape => "shape",
        };
        f.write_str(name)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::domain(format!("local accuracy must lie in (0, 1), got {eta}")));
    }
    Ok(())
}

/// Local iterations needed to reach local accuracy `eta`.
pub fn local_iterations(eta: f64, coeffs: &IterationCoefficients) -> Result<f64> {
    check_eta(eta)?;
    Ok(coeffs.local_iter_coeff * (-eta.log2()))
}

/// Global rounds needed at local accuracy `eta`.
pub fn global_iterations(eta: f64, coeffs: &IterationCoefficients) -> Result<f64> {
    check_eta(eta)?;
    Ok(coeffs.global_iter_coeff / (1.0 - eta))
}

/// Computation energy of one round of `iters` local iterations at frequency `f`.
pub fn comp_energy(user: &UserParams, f: f64, iters: f64, kappa: f64) -> f64 {
    kappa * iters * user.cycles_per_pass() * f * f
}

/// Computation time of one round.
pub fn comp_time(user: &UserParams, f: f64, iters: f64) -> f64 {
    iters * user.cycles_per_pass() / f
}

/// Shannon rate over bandwidth `b` at transmit power `p`.
pub fn achievable_rate(user: &UserParams, b: f64, p: f64, noise_psd: f64) -> f64 {
    if b <= 0.0 || p <= 0.0 {
        return 0.0;
    }
    b * (user.channel_gain * p / (noise_psd * b)).ln_1p() / LN_2
}

/// Rate limit as bandwidth grows without bound, `g·p/(N₀·ln 2)`.
pub fn rate_ceiling(user: &UserParams, p: f64, noise_psd: f64) -> f64 {
    user.channel_gain * p / (noise_psd * LN_2)
}

/// Power that makes `b·log₂(1 + g·p/(N₀·b))·t` equal to `bits`.
pub fn power_for_upload(user: &UserParams, b: f64, t: f64, bits: f64, noise_psd: f64) -> f64 {
    noise_psd * b / user.channel_gain * (LN_2 * bits / (t * b)).exp_m1()
}

/// Energy of transmitting for `t` seconds at power `p`.
pub fn tx_energy(t: f64, p: f64) -> f64 {
    t * p
}

/// Energy and completion times of `alloc`.
pub fn evaluate(
    scenario: &NetworkScenario,
    fl: &FlParams,
    alloc: &Allocation,
) -> Result<EnergyTimeBreakdown> {
    let k = scenario.num_users();
    alloc.check_shape(k)?;
    let coeffs = fl.coefficients(scenario)?;
    evaluate_with(scenario, &coeffs, alloc)
}

/// [`evaluate`] with precomputed iteration coefficients.
pub fn evaluate_with(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    alloc: &Allocation,
) -> Result<EnergyTimeBreakdown> {
    let k = scenario.num_users();
    alloc.check_shape(k)?;
    if coeffs.cycle_load.len() != k {
        return Err(Error::Dimension {
            expected: k,
            got: coeffs.cycle_load.len(),
        });
    }
    let eta = alloc.local_accuracy;
    let local = local_iterations(eta, coeffs)?;
    let global = global_iterations(eta, coeffs)?;
    let mut comp = Vec::with_capacity(k);
    let mut tx = Vec::with_capacity(k);
    let mut completion = Vec::with_capacity(k);
    let mut per_round = 0.0;
    for (i, u) in scenario.users.iter().enumerate() {
        let ec = comp_energy(u, alloc.freq[i], local, scenario.kappa);
        let et = tx_energy(alloc.tx_time[i], alloc.power[i]);
        per_round += ec + et;
        comp.push(ec);
        tx.push(et);
        completion.push(global * (comp_time(u, alloc.freq[i], local) + alloc.tx_time[i]));
    }
    Ok(EnergyTimeBreakdown {
        comp_energy: comp,
        tx_energy: tx,
        total_energy: global * per_round,
        per_user_completion: completion,
        global_iters: global,
        local_iters: vec![local; k],
    })
}

/// Constraints violated by more than `slack` (relative) at deadline `deadline`.
pub fn check_feasible(
    scenario: &NetworkScenario,
    fl: &FlParams,
    alloc: &Allocation,
    deadline: f64,
    slack: f64,
) -> Vec<Constraint> {
    // Invalid learning constants leave the latency constraint unverifiable,
    // which NaN coefficients report as a latency violation.
    let coeffs = fl.coefficients(scenario).unwrap_or(IterationCoefficients {
        local_iter_coeff: f64::NAN,
        global_iter_coeff: f64::NAN,
        cycle_load: vec![f64::NAN; scenario.num_users()],
    });
    check_feasible_with(scenario, &coeffs, alloc, deadline, slack)
}

/// [`check_feasible`] with precomputed iteration coefficients.
pub fn check_feasible_with(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    alloc: &Allocation,
    deadline: f64,
    slack: f64,
) -> Vec<Constraint> {
    let k = scenario.num_users();
    if alloc.check_shape(k).is_err() {
        return vec![Constraint::Shape];
    }
    let mut out = Vec::new();
    let eta = alloc.local_accuracy;
    let eta_ok = eta > 0.0 && eta < 1.0;
    if !eta_ok {
        out.push(Constraint::Eta);
    }
    let entries = alloc
        .tx_time
        .iter()
        .chain(&alloc.bandwidth)
        .chain(&alloc.freq)
        .chain(&alloc.power);
    if entries.clone().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        out.push(Constraint::Nonneg);
    }
    let up = 1.0 + slack;
    if alloc.bandwidth.iter().sum::<f64>() > scenario.total_bandwidth * up {
        out.push(Constraint::Bandwidth);
    }
    if alloc
        .freq
        .iter()
        .zip(&scenario.users)
        .any(|(&f, u)| f > u.f_max * up)
    {
        out.push(Constraint::Freq);
    }
    if alloc
        .power
        .iter()
        .zip(&scenario.users)
        .any(|(&p, u)| p > u.p_max * up)
    {
        out.push(Constraint::Power);
    }
    let data_short = scenario.users.iter().enumerate().any(|(i, u)| {
        let bits = alloc.tx_time[i]
            * achievable_rate(u, alloc.bandwidth[i], alloc.power[i], scenario.noise_psd);
        !(bits >= scenario.upload_bits * (1.0 - slack))
    });
    if data_short {
        out.push(Constraint::Data);
    }
    if eta_ok {
        match evaluate_with(scenario, coeffs, alloc) {
            Ok(bd) => {
                if bd
                    .per_user_completion
                    .iter()
                    .any(|&tk| !(tk <= deadline * up))
                {
                    out.push(Constraint::Latency);
                }
            }
            Err(_) => out.push(Constraint::Latency),
        }
    }
    out.sort();
    out
}
