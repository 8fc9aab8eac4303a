//! Energy minimization under a completion-time budget.
//!
//! The solver alternates two convex subproblems:
//!
//! * step 1 fixes bandwidth, frequency and power and picks upload times and
//!   the local accuracy. Uploads always run at the shortest time the link
//!   allows, which leaves a single-variable ratio in the local accuracy that
//!   [`dinkelbach`] minimizes over the interval the deadline permits;
//! * step 2 fixes upload times and local accuracy. Frequencies follow in
//!   closed form from the tight deadline, and bandwidth is split by a dual
//!   price found by bisection, with each user's share given by a Lambert-W
//!   closed form and transmit power following from rate equality.
//!
//! After step 2 two refinements run: the local accuracy is re-picked with
//! the frequencies following it, then each upload time is re-picked with its
//! bandwidth held. Both can be switched off in [`EnergyOptions`].
//!
//! Each step can only lower the energy, so the objective trace is
//! non-increasing.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, achievable_rate, check_feasible_with, evaluate_with, power_for_upload, Allocation,
    FlParams, IterationCoefficients, NetworkScenario, DEFAULT_SLACK,
};
use crate::numerics::{self, dinkelbach, exprel_inverse, kkt_curve, kkt_exponent, Tolerance};
use crate::report::SolveReport;

/// Tolerance for locating local-accuracy interval endpoints.
const ETA_ROOT_TOL: Tolerance = Tolerance {
    abs_tol: 1e-16,
    rel_tol: 1e-15,
    max_iter: 200,
};

/// Tolerance on the log of the bandwidth price.
const PRICE_TOL: Tolerance = Tolerance {
    abs_tol: 1e-13,
    rel_tol: 1e-16,
    max_iter: 400,
};

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyOptions {
    /// Controls for the Dinkelbach loop.
    pub scalar: Tolerance,
    /// Stop once an outer iteration lowers the energy by less than this fraction.
    pub rel_decrease: f64,
    /// Cap on outer iterations.
    pub max_iter: usize,
    /// After every step 2, re-pick the local accuracy with the frequencies
    /// following it (see [`refine_accuracy`]).
    #[serde(default = "default_true")]
    pub refine_accuracy: bool,
    /// After every step 2, re-pick each upload time with its bandwidth held
    /// (see [`refine_upload_times`]).
    #[serde(default = "default_true")]
    pub refine_upload: bool,
}

fn default_true() -> bool {
    true
}

impl Default for EnergyOptions {
    fn default() -> Self {
        EnergyOptions {
            scalar: Tolerance::default(),
            rel_decrease: 1e-8,
            max_iter: 100,
            refine_accuracy: true,
            refine_upload: true,
        }
    }
}

/// Data of the step-1 ratio problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Problem {
    /// Computation-energy coefficient, J.
    pub alpha1: f64,
    /// Upload-energy coefficient, J.
    pub alpha2: f64,
    /// Shortest upload time per user, s.
    pub t_min: Vec<f64>,
    /// Local-accuracy interval each user's deadline allows.
    pub eta_bounds: Vec<(f64, f64)>,
    pub deadline: f64,
}

/// Step-1 output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Solution {
    pub tx_time: Vec<f64>,
    pub local_accuracy: f64,
    /// Energy at the step-1 optimum, J.
    pub objective: f64,
    pub problem: Step1Problem,
    /// True when a fixed local accuracy had to be moved into the feasible interval.
    pub clamped: bool,
}

/// Bandwidth price and the split it induces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktState {
    /// Dual price of bandwidth, J/Hz.
    pub mu: f64,
    /// Smallest bandwidth at which each user's power stays within p_max, Hz.
    pub b_min: Vec<f64>,
    pub bandwidth: Vec<f64>,
    pub power: Vec<f64>,
}

/// Step-2 output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step2Solution {
    pub freq: Vec<f64>,
    pub kkt: KktState,
}

/// Shortest upload time of each user at bandwidth `b` and power `p`.
///
/// Users with zero rate get an infinite time.
pub fn t_min(scenario: &NetworkScenario, b: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    check_len(scenario, b.len())?;
    check_len(scenario, p.len())?;
    Ok(scenario
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let r = achievable_rate(u, b[k], p[k], scenario.noise_psd);
            if r > 0.0 {
                scenario.upload_bits / r
            } else {
                f64::INFINITY
            }
        })
        .collect())
}

fn check_len(scenario: &NetworkScenario, got: usize) -> Result<()> {
    if got != scenario.num_users() {
        return Err(Error::Dimension {
            expected: scenario.num_users(),
            got,
        });
    }
    Ok(())
}

/// Slack a user's deadline leaves for uploading at local accuracy `eta`:
/// `(1−η)·T/a − A_k·log₂(1/η)/f_k`.
pub fn upload_slack(global_coeff: f64, cycle_load: f64, freq: f64, deadline: f64, eta: f64) -> f64 {
    (1.0 - eta) * deadline / global_coeff + cycle_load * eta.log2() / freq
}

/// Interval of local accuracies at which a user can compute at `freq` and
/// still upload within `t_min`.
pub fn user_eta_interval(
    global_coeff: f64,
    cycle_load: f64,
    freq: f64,
    deadline: f64,
    t_min: f64,
) -> Result<(f64, f64)> {
    if !(t_min.is_finite()) {
        return Err(Error::infeasible("a user has zero upload rate"));
    }
    if !(freq > 0.0) {
        return Err(Error::infeasible("a user has zero CPU frequency"));
    }
    let slack = |eta: f64| upload_slack(global_coeff, cycle_load, freq, deadline, eta);
    let peak = global_coeff * cycle_load / (LN_2 * freq * deadline);
    if !(peak < 1.0) {
        return Err(Error::infeasible(
            "deadline too short for any local accuracy at this CPU frequency",
        ));
    }
    let top = slack(peak);
    if top <= t_min {
        if top >= t_min * (1.0 - DEFAULT_SLACK) {
            return Ok((peak, peak));
        }
        return Err(Error::infeasible(format!(
            "deadline leaves at most {top:.6e} s for an upload that needs {t_min:.6e} s"
        )));
    }
    let gap = |eta: f64| slack(eta) - t_min;
    let mut below = peak;
    loop {
        below *= 1e-3;
        if gap(below) < 0.0 {
            break;
        }
        if below < 1e-300 {
            break;
        }
    }
    let lo = if gap(below) < 0.0 {
        numerics::bisect(gap, below, peak, &ETA_ROOT_TOL)?.hi
    } else {
        below
    };
    let hi = numerics::bisect(gap, peak, 1.0, &ETA_ROOT_TOL)?.lo;
    Ok((lo, hi))
}

/// Intersection of every user's feasible local-accuracy interval.
pub fn eta_bounds(
    coeffs: &IterationCoefficients,
    deadline: f64,
    freq: &[f64],
    t_min: &[f64],
) -> Result<(f64, f64)> {
    Ok(intersect(&per_user_eta_bounds(coeffs, deadline, freq, t_min)?))
}

fn per_user_eta_bounds(
    coeffs: &IterationCoefficients,
    deadline: f64,
    freq: &[f64],
    t_min: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if !(deadline > 0.0) {
        return Err(Error::domain(format!("deadline must be positive, got {deadline}")));
    }
    (0..t_min.len())
        .map(|k| {
            user_eta_interval(
                coeffs.global_iter_coeff,
                coeffs.cycle_load[k],
                freq[k],
                deadline,
                t_min[k],
            )
            .map_err(|e| e.context(format!("user {k}")))
        })
        .collect()
}

fn intersect(bounds: &[(f64, f64)]) -> (f64, f64) {
    bounds
        .iter()
        .fold((0.0f64, 1.0f64), |(lo, hi), &(l, h)| (lo.max(l), hi.min(h)))
}

/// How step 1 picks the local accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum EtaRule {
    Optimize,
    /// Use this value, moved into the feasible interval if needed.
    Fixed(f64),
}

/// Step 1: upload times and local accuracy at fixed bandwidth, frequency and power.
pub fn solve_step1(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    accuracy_box: (f64, f64),
    deadline: f64,
    alloc: &Allocation,
    tol: &Tolerance,
) -> Result<Step1Solution> {
    step1(scenario, coeffs, accuracy_box, deadline, alloc, EtaRule::Optimize, tol)
}

const INTERVAL_ROUNDING: f64 = 1e-9;

pub(crate) fn step1(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    accuracy_box: (f64, f64),
    deadline: f64,
    alloc: &Allocation,
    rule: EtaRule,
    tol: &Tolerance,
) -> Result<Step1Solution> {
    let tmin = t_min(scenario, &alloc.bandwidth, &alloc.power)?;
    check_len(scenario, alloc.freq.len())?;
    let bounds = per_user_eta_bounds(coeffs, deadline, &alloc.freq, &tmin)?;
    let (mut lo, mut hi) = intersect(&bounds);
    lo = lo.max(accuracy_box.0);
    hi = hi.min(accuracy_box.1);
    if lo > hi && lo - hi <= INTERVAL_ROUNDING * lo {
        // Tight frequencies pin the interval to one point; rounding can flip it.
        let eta = alloc.local_accuracy.clamp(hi, lo);
        (lo, hi) = (eta, eta);
    }
    if !(lo <= hi) {
        return Err(Error::infeasible(
            "users' feasible local-accuracy intervals do not overlap",
        ));
    }
    let a = coeffs.global_iter_coeff;
    let alpha1 = a * scenario
        .users
        .iter()
        .zip(&coeffs.cycle_load)
        .zip(&alloc.freq)
        .map(|((_, &load), &f)| scenario.kappa * load * f * f)
        .sum::<f64>();
    let alpha2 = a * tmin.iter().zip(&alloc.power).map(|(t, p)| t * p).sum::<f64>();
    let (eta, clamped) = match rule {
        EtaRule::Optimize => (dinkelbach(alpha1, alpha2, lo, hi, tol)?.eta, false),
        EtaRule::Fixed(target) => {
            let eta = target.clamp(lo, hi);
            (eta, eta != target)
        }
    };
    Ok(Step1Solution {
        tx_time: tmin.clone(),
        local_accuracy: eta,
        objective: numerics::accuracy_ratio(alpha1, alpha2, eta),
        problem: Step1Problem {
            alpha1,
            alpha2,
            t_min: tmin,
            eta_bounds: bounds,
            deadline,
        },
        clamped,
    })
}

/// CPU frequencies that make every user finish exactly at the deadline.
pub fn optimal_frequency(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
    tx_time: &[f64],
    eta: f64,
) -> Result<Vec<f64>> {
    check_len(scenario, tx_time.len())?;
    let a = coeffs.global_iter_coeff;
    let bits = -eta.log2();
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::domain(format!("local accuracy must lie in (0, 1), got {eta}")));
    }
    scenario
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let room = deadline * (1.0 - eta) - a * tx_time[k];
            if !(room > 0.0) {
                return Err(Error::infeasible(format!(
                    "user {k}: upload time leaves no room for computation"
                )));
            }
            let f = a * coeffs.cycle_load[k] * bits / room;
            if f > u.f_max * (1.0 + DEFAULT_SLACK) {
                return Err(Error::infeasible(format!(
                    "user {k}: deadline needs {f:.6e} Hz, above f_max {:.6e} Hz",
                    u.f_max
                )));
            }
            Ok(f.min(u.f_max))
        })
        .collect()
}

/// Bandwidth at which a user's upload power reaches p_max.
pub fn b_min(scenario: &NetworkScenario, tx_time: &[f64]) -> Result<Vec<f64>> {
    check_len(scenario, tx_time.len())?;
    let s = scenario.upload_bits;
    scenario
        .users
        .iter()
        .zip(tx_time)
        .enumerate()
        .map(|(k, (u, &t))| {
            if !(t > 0.0) {
                return Err(Error::domain(format!("user {k}: upload time must be positive")));
            }
            // expm1(x)/x = g·p_max·t/(N₀·s·ln 2) at x = s·ln 2/(t·b)
            let q = u.channel_gain * u.p_max * t / (scenario.noise_psd * s * LN_2);
            if !(q > 1.0) {
                return Err(Error::infeasible(format!(
                    "user {k}: p_max cannot deliver the upload in {t:.6e} s at any bandwidth"
                )));
            }
            Ok(LN_2 * s / (t * exprel_inverse(q)?))
        })
        .collect()
}

/// Bandwidth that balances a user's marginal upload energy against price `mu`.
pub fn user_b_of_mu(
    channel_gain: f64,
    noise_psd: f64,
    upload_bits: f64,
    t: f64,
    mu: f64,
) -> Result<f64> {
    let x = kkt_exponent(mu * channel_gain / (noise_psd * t))?;
    Ok(LN_2 * upload_bits / (t * x))
}

/// Per-user bandwidth at price `mu`, before the p_max floor is applied.
pub fn b_of_mu(scenario: &NetworkScenario, tx_time: &[f64], mu: f64) -> Result<Vec<f64>> {
    check_len(scenario, tx_time.len())?;
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::domain(format!("bandwidth price must be positive, got {mu}")));
    }
    scenario
        .users
        .iter()
        .zip(tx_time)
        .map(|(u, &t)| user_b_of_mu(u.channel_gain, scenario.noise_psd, scenario.upload_bits, t, mu))
        .collect()
}

/// Marginal upload energy per Hz plus the price, normalized by the price.
///
/// Zero at an unclamped KKT point.
pub fn stationarity_residual(
    channel_gain: f64,
    noise_psd: f64,
    upload_bits: f64,
    t: f64,
    b: f64,
    mu: f64,
) -> f64 {
    let x = LN_2 * upload_bits / (t * b);
    (mu - noise_psd * t / channel_gain * kkt_curve(x)) / mu
}

/// Upload energy `t·p*(b)` of one user at bandwidth `b`.
pub fn upload_energy_at(
    channel_gain: f64,
    noise_psd: f64,
    upload_bits: f64,
    t: f64,
    b: f64,
) -> f64 {
    t * noise_psd * b / channel_gain * (LN_2 * upload_bits / (t * b)).exp_m1()
}

/// Log of the price at which a resource demand, decreasing in the price,
/// meets `total`.
///
/// Brackets by stepping out from `guess`, then bisects and returns the end
/// whose demand fits (`excess ≤ 0` up to `1e-12·total`).
pub(crate) fn solve_log_price<F: Fn(f64) -> f64>(
    excess: F,
    guess: f64,
    total: f64,
    what: &str,
) -> Result<f64> {
    let mut lo = guess;
    let mut hi = guess;
    let step = 4f64.ln();
    let mut tries = 0;
    while !(excess(lo) >= 0.0) {
        lo -= step;
        tries += 1;
        if tries > 400 {
            return Err(Error::NoConvergence {
                what: format!("{what} bracket (lower)"),
                iterations: tries,
            });
        }
    }
    tries = 0;
    // floors that fill the resource up to rounding count as a fit
    let fits = |x: f64| x <= 1e-12 * total;
    while !fits(excess(hi)) {
        hi += step;
        tries += 1;
        if tries > 400 {
            return Err(Error::NoConvergence {
                what: format!("{what} bracket (upper)"),
                iterations: tries,
            });
        }
    }
    if lo == hi || excess(hi) > 0.0 {
        return Ok(hi);
    }
    Ok(numerics::bisect(excess, lo, hi, &PRICE_TOL)?.hi)
}

/// Splits `total` Hz among users with fixed upload times to minimize upload
/// energy, respecting each user's p_max floor.
pub(crate) fn split_bandwidth(
    gains: &[f64],
    noise_psd: f64,
    upload_bits: f64,
    tx_time: &[f64],
    floors: &[f64],
    total: f64,
) -> Result<(f64, Vec<f64>)> {
    let need: f64 = floors.iter().sum();
    if need > total * (1.0 + 1e-12) {
        return Err(Error::infeasible(format!(
            "p_max floors need {need:.6e} Hz, more than the {total:.6e} Hz available"
        )));
    }
    let k = gains.len();
    let shares = |log_mu: f64| -> Result<Vec<f64>> {
        let mu = log_mu.exp();
        (0..k)
            .map(|i| {
                user_b_of_mu(gains[i], noise_psd, upload_bits, tx_time[i], mu)
                    .map(|b| b.max(floors[i]))
            })
            .collect()
    };
    let excess = |log_mu: f64| -> f64 {
        match shares(log_mu) {
            Ok(b) => b.iter().sum::<f64>() - total,
            Err(_) => f64::NAN,
        }
    };
    // start from the geometric mean of the prices that give an equal split
    let equal = total / k as f64;
    let guess = (0..k)
        .map(|i| {
            let x = LN_2 * upload_bits / (tx_time[i] * equal);
            (noise_psd * tx_time[i] / gains[i] * kkt_curve(x)).ln()
        })
        .sum::<f64>()
        / k as f64;
    let log_mu = solve_log_price(excess, guess, total, "bandwidth price")?;
    Ok((log_mu.exp(), shares(log_mu)?))
}

/// Bandwidth split and upload powers at fixed upload times.
pub fn allocate_bandwidth(scenario: &NetworkScenario, tx_time: &[f64]) -> Result<KktState> {
    let floors = b_min(scenario, tx_time)?;
    let gains: Vec<f64> = scenario.users.iter().map(|u| u.channel_gain).collect();
    let (mu, bandwidth) = split_bandwidth(
        &gains,
        scenario.noise_psd,
        scenario.upload_bits,
        tx_time,
        &floors,
        scenario.total_bandwidth,
    )?;
    let power = powers_at(scenario, &bandwidth, tx_time);
    Ok(KktState {
        mu,
        b_min: floors,
        bandwidth,
        power,
    })
}

fn powers_at(scenario: &NetworkScenario, bandwidth: &[f64], tx_time: &[f64]) -> Vec<f64> {
    scenario
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            power_for_upload(u, bandwidth[k], tx_time[k], scenario.upload_bits, scenario.noise_psd)
                .min(u.p_max)
        })
        .collect()
}

/// Step 2: frequencies, bandwidth and power at fixed upload times and local accuracy.
pub fn solve_step2(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
    tx_time: &[f64],
    eta: f64,
) -> Result<Step2Solution> {
    let freq = optimal_frequency(scenario, coeffs, deadline, tx_time, eta)?;
    let kkt = allocate_bandwidth(scenario, tx_time)?;
    Ok(Step2Solution { freq, kkt })
}

/// How step 2 treats bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum BandwidthRule<'a> {
    /// Each listed group of users shares the whole band.
    Optimize(&'a [Vec<usize>]),
    /// Keep the initial split; power follows from rate equality.
    Fixed,
}

/// Result of a descent loop.
#[derive(Debug, Clone)]
pub(crate) struct Alternation {
    pub alloc: Allocation,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub notes: Vec<String>,
}

/// Repeats `step` from `init` while it lowers `objective` by at least
/// `opts.rel_decrease` (relative). A step that raises the objective is
/// discarded, so the trace never increases.
pub(crate) fn descend<O, S>(
    init: &Allocation,
    mut objective: O,
    mut step: S,
    opts: &EnergyOptions,
) -> Result<Alternation>
where
    O: FnMut(&Allocation) -> Result<f64>,
    S: FnMut(&Allocation) -> Result<(Allocation, Option<String>)>,
{
    let mut current = init.clone();
    let mut value = objective(&current)?;
    let mut trace = vec![value];
    let mut notes: Vec<String> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let next = match step(&current) {
            Ok((next, note)) => {
                if let Some(note) = note {
                    if !notes.contains(&note) {
                        notes.push(note);
                    }
                }
                next
            }
            Err(e) if iterations > 1 => {
                notes.push(format!("stopped at iteration {iterations}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let next_value = objective(&next)?;
        if !(next_value <= value) {
            if next_value <= value * (1.0 + 1e-12) {
                converged = true;
            } else {
                notes.push(format!(
                    "iteration {iterations} raised the energy from {value:.6e} to {next_value:.6e}; kept the previous point"
                ));
            }
            break;
        }
        let decrease = (value - next_value) / value;
        current = next;
        value = next_value;
        trace.push(value);
        if decrease < opts.rel_decrease {
            converged = true;
            break;
        }
    }
    Ok(Alternation {
        alloc: current,
        trace,
        iterations,
        converged,
        notes,
    })
}

/// Constraint check where each group of users shares its own band.
pub(crate) fn check_groups(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    alloc: &Allocation,
    deadline: f64,
    groups: &[Vec<usize>],
) -> Vec<model::Constraint> {
    let mut out: Vec<model::Constraint> = Vec::new();
    for g in groups {
        for c in check_feasible_with(
            &scenario.subset(g),
            &coeffs.subset(g),
            &alloc.subset(g),
            deadline,
            DEFAULT_SLACK,
        ) {
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    out.sort();
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn alternate(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    accuracy_box: (f64, f64),
    deadline: f64,
    init: &Allocation,
    eta_rule: EtaRule,
    bandwidth_rule: BandwidthRule<'_>,
    opts: &EnergyOptions,
) -> Result<Alternation> {
    let violations = match bandwidth_rule {
        BandwidthRule::Optimize(groups) => check_groups(scenario, coeffs, init, deadline, groups),
        BandwidthRule::Fixed => check_feasible_with(scenario, coeffs, init, deadline, DEFAULT_SLACK),
    };
    if !violations.is_empty() {
        let names: Vec<String> = violations.iter().map(|c| c.to_string()).collect();
        return Err(Error::infeasible(format!(
            "initial allocation violates: {}",
            names.join(", ")
        )));
    }
    descend(
        init,
        |a| Ok(evaluate_with(scenario, coeffs, a)?.total_energy),
        |a| {
            alternation_step(
                scenario,
                coeffs,
                accuracy_box,
                deadline,
                a,
                eta_rule,
                bandwidth_rule,
                opts,
            )
        },
        opts,
    )
}

#[allow(clippy::too_many_arguments)]
fn alternation_step(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    accuracy_box: (f64, f64),
    deadline: f64,
    current: &Allocation,
    eta_rule: EtaRule,
    bandwidth_rule: BandwidthRule<'_>,
    opts: &EnergyOptions,
) -> Result<(Allocation, Option<String>)> {
    let s1 = step1(scenario, coeffs, accuracy_box, deadline, current, eta_rule, &opts.scalar)?;
    let eta = s1.local_accuracy;
    let t = s1.tx_time;
    let freq = optimal_frequency(scenario, coeffs, deadline, &t, eta)?;
    let (bandwidth, power) = match bandwidth_rule {
        BandwidthRule::Optimize(groups) => {
            let k = scenario.num_users();
            let mut b = vec![0.0; k];
            let mut p = vec![0.0; k];
            for g in groups {
                let t_g: Vec<f64> = g.iter().map(|&i| t[i]).collect();
                let kkt = allocate_bandwidth(&scenario.subset(g), &t_g)?;
                for (j, &i) in g.iter().enumerate() {
                    b[i] = kkt.bandwidth[j];
                    p[i] = kkt.power[j];
                }
            }
            (b, p)
        }
        BandwidthRule::Fixed => {
            let b = current.bandwidth.clone();
            let mut p = Vec::with_capacity(b.len());
            for (k, u) in scenario.users.iter().enumerate() {
                let need =
                    power_for_upload(u, b[k], t[k], scenario.upload_bits, scenario.noise_psd);
                if need > u.p_max * (1.0 + DEFAULT_SLACK) {
                    return Err(Error::infeasible(format!(
                        "user {k}: fixed bandwidth needs {need:.6e} W, above p_max"
                    )));
                }
                p.push(need.min(u.p_max));
            }
            (b, p)
        }
    };
    let note = s1.clamped.then(|| {
        "fixed local accuracy moved into the feasible interval".to_string()
    });
    let next = Allocation {
        tx_time: t,
        bandwidth,
        freq,
        power,
        local_accuracy: eta,
    };
    let next = match eta_rule {
        EtaRule::Optimize if opts.refine_accuracy => {
            refine_accuracy(scenario, coeffs, accuracy_box, deadline, &next)?
        }
        _ => next,
    };
    let next = if opts.refine_upload {
        refine_upload_times(scenario, coeffs, deadline, &next)?
    } else {
        next
    };
    Ok((next, note))
}

/// Grid resolution of the accuracy refinement before golden-section polishing.
const REFINE_GRID: usize = 257;

/// Energy as a function of the local accuracy alone, with upload times,
/// bandwidths and powers held and every frequency set by [`optimal_frequency`]
/// (infinite where some user would need more than `f_max`).
fn energy_at_accuracy(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
    alloc: &Allocation,
    eta: f64,
) -> f64 {
    let a = coeffs.global_iter_coeff;
    let bits = -eta.log2();
    let mut comp = 0.0;
    for (k, u) in scenario.users.iter().enumerate() {
        let room = deadline * (1.0 - eta) - a * alloc.tx_time[k];
        let f = a * coeffs.cycle_load[k] * bits / room;
        if !(room > 0.0) || f > u.f_max * (1.0 + DEFAULT_SLACK) {
            return f64::INFINITY;
        }
        let f = f.min(u.f_max);
        comp += scenario.kappa * coeffs.cycle_load[k] * bits * f * f;
    }
    let tx: f64 = alloc.tx_time.iter().zip(&alloc.power).map(|(t, p)| t * p).sum();
    a / (1.0 - eta) * (comp + tx)
}

/// Re-picks the local accuracy with upload times, bandwidths and powers held
/// and the frequencies following it through [`optimal_frequency`].
///
/// Step 1 fixes the frequencies, and step 2 then lowers them until every
/// user meets the deadline exactly, so at step 1's next visit the current
/// accuracy sits on the edge of its feasible interval and cannot move in the
/// direction that would pay off. This block moves along that edge instead.
/// The current point is always a candidate, so the energy never increases.
pub fn refine_accuracy(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    accuracy_box: (f64, f64),
    deadline: f64,
    alloc: &Allocation,
) -> Result<Allocation> {
    let a = coeffs.global_iter_coeff;
    let mut lo = accuracy_box.0;
    let mut hi = accuracy_box.1;
    for (k, u) in scenario.users.iter().enumerate() {
        let (l, h) = user_eta_interval(a, coeffs.cycle_load[k], u.f_max, deadline, alloc.tx_time[k])?;
        lo = lo.max(l);
        hi = hi.min(h);
    }
    let energy = |eta: f64| energy_at_accuracy(scenario, coeffs, deadline, alloc, eta);
    let current = alloc.local_accuracy;
    let best = minimize_on_interval(energy, lo, hi, current)?;
    if best.0 == current {
        return Ok(alloc.clone());
    }
    Ok(Allocation {
        freq: optimal_frequency(scenario, coeffs, deadline, &alloc.tx_time, best.0)?,
        local_accuracy: best.0,
        ..alloc.clone()
    })
}

/// Re-picks every upload time with the local accuracy and bandwidths held,
/// the power following from rate equality and the frequency from the
/// deadline.
///
/// Step 1 always shortens uploads to the full-power minimum and step 2 keeps
/// them, so on its own the alternation never trades a longer, cheaper upload
/// against faster computation. Per user that trade is a convex function of
/// the upload time alone. The current time is a candidate, so the energy
/// never increases.
pub fn refine_upload_times(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
    alloc: &Allocation,
) -> Result<Allocation> {
    let a = coeffs.global_iter_coeff;
    let eta = alloc.local_accuracy;
    let bits = -eta.log2();
    let round = deadline * (1.0 - eta) / a;
    let s = scenario.upload_bits;
    let n0 = scenario.noise_psd;
    let mut tx_time = alloc.tx_time.clone();
    for (k, u) in scenario.users.iter().enumerate() {
        let b = alloc.bandwidth[k];
        let work = coeffs.cycle_load[k] * bits;
        let lo = s / model::achievable_rate(u, b, u.p_max, n0);
        let hi = round - work / u.f_max;
        if !(lo.is_finite() && lo < hi) {
            continue;
        }
        let energy = |t: f64| {
            let p = model::power_for_upload(u, b, t, s, n0);
            if !(t > 0.0 && t < round) || p > u.p_max * (1.0 + DEFAULT_SLACK) {
                return f64::INFINITY;
            }
            let f = work / (round - t);
            scenario.kappa * work * f * f + t * p
        };
        tx_time[k] = minimize_on_interval(energy, lo, hi, tx_time[k])?.0;
    }
    if tx_time == alloc.tx_time {
        return Ok(alloc.clone());
    }
    let power = scenario
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| model::power_for_upload(u, alloc.bandwidth[k], tx_time[k], s, n0).min(u.p_max))
        .collect();
    Ok(Allocation {
        freq: optimal_frequency(scenario, coeffs, deadline, &tx_time, eta)?,
        power,
        tx_time,
        ..alloc.clone()
    })
}

/// Minimum of `f` over `[lo, hi]` by a grid scan polished with golden-section
/// search; `current` wins ties, so the result is never worse than it.
pub(crate) fn minimize_on_interval(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    current: f64,
) -> Result<(f64, f64)> {
    let mut best = (current, f(current));
    if lo < hi {
        let (x, v) = numerics::grid_min(&f, lo, hi, REFINE_GRID)?;
        let cell = (hi - lo) / (REFINE_GRID - 1) as f64;
        let (x, v) = golden_min(&f, (x - cell).max(lo), (x + cell).min(hi), (x, v));
        if v < best.1 {
            best = (x, v);
        }
    }
    Ok(best)
}

/// Golden-section search on `[lo, hi]`, returning the best of its probes and `seed`.
fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, seed: (f64, f64)) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = seed;
    for _ in 0..100 {
        if b - a <= 1e-12 * b.abs().max(1e-300) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Groups argument for "all users share one band".
pub(crate) fn single_group(k: usize) -> Vec<Vec<usize>> {
    vec![(0..k).collect()]
}

/// Minimizes total energy at deadline `deadline`, starting from a feasible `init`.
pub fn minimize_energy(
    scenario: &NetworkScenario,
    fl: &FlParams,
    deadline: f64,
    init: &Allocation,
    opts: &EnergyOptions,
) -> Result<(Allocation, SolveReport)> {
    scenario.validate()?;
    let coeffs = fl.coefficients(scenario)?;
    solve_with(
        "proposed",
        scenario,
        &coeffs,
        fl.local_accuracy_bounds,
        deadline,
        init,
        EtaRule::Optimize,
        BandwidthRule::Optimize(&single_group(scenario.num_users())),
        opts,
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_with(
    scheme: &str,
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    accuracy_box: (f64, f64),
    deadline: f64,
    init: &Allocation,
    eta_rule: EtaRule,
    bandwidth_rule: BandwidthRule<'_>,
    opts: &EnergyOptions,
) -> Result<(Allocation, SolveReport)> {
    let run = alternate(
        scenario,
        coeffs,
        accuracy_box,
        deadline,
        init,
        eta_rule,
        bandwidth_rule,
        opts,
    )?;
    let breakdown = evaluate_with(scenario, coeffs, &run.alloc)?;
    let mut report = SolveReport::new(scheme);
    report.deadline = Some(deadline);
    report.objective_trace = run.trace;
    report.iterations = run.iterations;
    report.converged = run.converged;
    report.violations = match bandwidth_rule {
        BandwidthRule::Optimize(groups) => check_groups(scenario, coeffs, &run.alloc, deadline, groups),
        BandwidthRule::Fixed => check_feasible_with(scenario, coeffs, &run.alloc, deadline, DEFAULT_SLACK),
    };
    report.breakdown = Some(breakdown);
    report.allocation = Some(run.alloc.clone());
    report.notes = run.notes;
    Ok((run.alloc, report))
}

/// Total energy of `alloc` (convenience for callers holding only learning constants).
pub fn energy_of(scenario: &NetworkScenario, fl: &FlParams, alloc: &Allocation) -> Result<f64> {
    Ok(model::evaluate(scenario, fl, alloc)?.total_energy)
}
