//! Minimum completion time and a feasible starting point for the energy solver.
//!
//! With every user at full CPU speed and full power, a deadline `T` fixes the
//! upload time each user has left at local accuracy `η`; that in turn fixes
//! the rate the user needs and, through the inverse rate function, the least
//! bandwidth that delivers it. `T` is feasible exactly when the smallest total
//! of those bandwidths over `η` fits in the band. The total is convex in `η`,
//! so its minimizer is the root of the derivative, and feasibility is
//! monotone in `T`, so the smallest feasible `T` is found by bisection.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::energy_opt::user_eta_interval;
use crate::error::{Error, Result};
use crate::model::{Allocation, IterationCoefficients, NetworkScenario, UserParams};
use crate::numerics::{self, exprel_inverse, Tolerance};

const ETA_TOL: Tolerance = Tolerance {
    abs_tol: 1e-16,
    rel_tol: 1e-15,
    max_iter: 200,
};

/// Controls for the completion-time bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeOptions {
    /// Stop when `(T_max − T_min)/T_max` falls to this value.
    pub rel_tol: f64,
    /// Give up when no deadline below this many seconds is feasible.
    pub deadline_cap: f64,
}

impl Default for TimeOptions {
    fn default() -> Self {
        TimeOptions {
            rel_tol: 1e-6,
            deadline_cap: 1e9,
        }
    }
}

/// Feasibility of one deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityProbe {
    pub deadline: f64,
    /// Local accuracy minimizing the total bandwidth demand.
    pub eta_star: Option<f64>,
    /// Total bandwidth needed at `eta_star`, Hz (infinite when the domain is empty).
    pub required_bandwidth: f64,
    pub feasible: bool,
    /// Local accuracies at which every user can reach its required rate.
    pub eta_domain: Option<(f64, f64)>,
}

/// Full-power signal-to-noise scale `g·p_max/N₀`, Hz.
fn snr_bandwidth(user: &UserParams, noise_psd: f64) -> f64 {
    user.channel_gain * user.p_max / noise_psd
}

/// Upload time left to user `k` at local accuracy `eta` when computing at f_max.
pub fn upload_time_at(eta: f64, k: usize, scenario: &NetworkScenario, coeffs: &IterationCoefficients, deadline: f64) -> f64 {
    (1.0 - eta) * deadline / coeffs.global_iter_coeff
        + coeffs.cycle_load[k] * eta.log2() / scenario.users[k].f_max
}

fn upload_time_slope(eta: f64, k: usize, scenario: &NetworkScenario, coeffs: &IterationCoefficients, deadline: f64) -> f64 {
    -deadline / coeffs.global_iter_coeff
        + coeffs.cycle_load[k] / (LN_2 * scenario.users[k].f_max * eta)
}

/// Rate user `k` needs at local accuracy `eta`, bits/s.
pub fn rate_demand(
    eta: f64,
    k: usize,
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
) -> Result<f64> {
    let t = upload_time_at(eta, k, scenario, coeffs, deadline);
    if !(eta > 0.0 && eta < 1.0) || !(t > 0.0) {
        return Err(Error::domain(format!(
            "user {k}: no upload time left at local accuracy {eta}"
        )));
    }
    Ok(scenario.upload_bits / t)
}

/// Derivative of [`rate_demand`] in the local accuracy.
pub fn rate_demand_slope(
    eta: f64,
    k: usize,
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
) -> f64 {
    let t = upload_time_at(eta, k, scenario, coeffs, deadline);
    -scenario.upload_bits * upload_time_slope(eta, k, scenario, coeffs, deadline) / (t * t)
}

/// Full-power rate over bandwidth `b`.
pub fn full_power_rate(b: f64, k: usize, scenario: &NetworkScenario) -> f64 {
    let g = snr_bandwidth(&scenario.users[k], scenario.noise_psd);
    if b <= 0.0 {
        return 0.0;
    }
    b * (g / b).ln_1p() / LN_2
}

/// Derivative of [`full_power_rate`] in bandwidth.
pub fn full_power_rate_slope(b: f64, k: usize, scenario: &NetworkScenario) -> f64 {
    let g = snr_bandwidth(&scenario.users[k], scenario.noise_psd);
    ((g / b).ln_1p() - g / (b + g)) / LN_2
}

/// Least bandwidth that carries `demand` bits/s at full power.
pub fn bandwidth_for_rate(demand: f64, k: usize, scenario: &NetworkScenario) -> Result<f64> {
    if !(demand > 0.0) {
        return Err(Error::domain(format!("rate demand must be positive, got {demand}")));
    }
    let g = snr_bandwidth(&scenario.users[k], scenario.noise_psd);
    // with x = g/b and w = ln(1+x): expm1(w)/w = g/(demand·ln 2)
    let q = g / (demand * LN_2);
    if !(q > 1.0) {
        return Err(Error::domain(format!(
            "user {k}: rate demand {demand:.6e} bits/s is at or above the full-power ceiling {:.6e}",
            g / LN_2
        )));
    }
    let w = exprel_inverse(q)?;
    Ok(g / w.exp_m1())
}

/// Derivative of [`bandwidth_for_rate`], through the inverse-function rule.
pub fn bandwidth_for_rate_slope(demand: f64, k: usize, scenario: &NetworkScenario) -> Result<f64> {
    let b = bandwidth_for_rate(demand, k, scenario)?;
    Ok(1.0 / full_power_rate_slope(b, k, scenario))
}

/// Least total bandwidth at local accuracy `eta`.
pub fn total_bandwidth_at(
    eta: f64,
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
) -> Result<f64> {
    (0..scenario.num_users())
        .map(|k| bandwidth_for_rate(rate_demand(eta, k, scenario, coeffs, deadline)?, k, scenario))
        .sum()
}

/// Derivative of [`total_bandwidth_at`] in the local accuracy.
pub fn total_bandwidth_slope(
    eta: f64,
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
) -> Result<f64> {
    (0..scenario.num_users())
        .map(|k| {
            let v = rate_demand(eta, k, scenario, coeffs, deadline)?;
            Ok(bandwidth_for_rate_slope(v, k, scenario)?
                * rate_demand_slope(eta, k, scenario, coeffs, deadline))
        })
        .sum()
}

/// Local accuracies at which every user's required rate is below its
/// full-power ceiling, or `None` when no such accuracy exists.
pub fn eta_domain(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
) -> Option<(f64, f64)> {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for (k, u) in scenario.users.iter().enumerate() {
        // upload time at which the demand reaches the rate ceiling
        let floor = scenario.upload_bits * LN_2 / snr_bandwidth(u, scenario.noise_psd);
        match user_eta_interval(
            coeffs.global_iter_coeff,
            coeffs.cycle_load[k],
            u.f_max,
            deadline,
            floor,
        ) {
            Ok((l, h)) => {
                lo = lo.max(l);
                hi = hi.min(h);
            }
            Err(_) => return None,
        }
    }
    (lo < hi).then_some((lo, hi))
}

/// Minimizer of the total bandwidth over the local accuracy.
pub fn eta_star(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
) -> Result<f64> {
    let (lo, hi) = eta_domain(scenario, coeffs, deadline).ok_or_else(|| {
        Error::infeasible(format!(
            "deadline {deadline:.6e} s leaves no local accuracy at which every rate is reachable"
        ))
    })?;
    minimize_over(lo, hi, scenario, coeffs, deadline)
}

fn minimize_over(
    lo: f64,
    hi: f64,
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
) -> Result<f64> {
    let margin = 1e-9 * (hi - lo);
    let (a, b) = (lo + margin, hi - margin);
    let mid = 0.5 * (lo + hi);
    // demand is unbounded at the domain ends; the slope sign there is known
    let slope = |eta: f64| match total_bandwidth_slope(eta, scenario, coeffs, deadline) {
        Ok(s) if s.is_finite() => s,
        _ if eta < mid => -1.0,
        _ => 1.0,
    };
    if !(a < b) {
        return Ok(mid);
    }
    if slope(a) >= 0.0 {
        return Ok(a);
    }
    if slope(b) <= 0.0 {
        return Ok(b);
    }
    numerics::bisect_root(slope, a, b, &ETA_TOL)
}

/// Whether deadline `deadline` is achievable.
pub fn probe(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
) -> FeasibilityProbe {
    let domain = if deadline > 0.0 {
        eta_domain(scenario, coeffs, deadline)
    } else {
        None
    };
    let Some((lo, hi)) = domain else {
        return FeasibilityProbe {
            deadline,
            eta_star: None,
            required_bandwidth: f64::INFINITY,
            feasible: false,
            eta_domain: None,
        };
    };
    let eta = minimize_over(lo, hi, scenario, coeffs, deadline).ok();
    let required = eta
        .and_then(|e| total_bandwidth_at(e, scenario, coeffs, deadline).ok())
        .unwrap_or(f64::INFINITY);
    FeasibilityProbe {
        deadline,
        eta_star: eta,
        required_bandwidth: required,
        feasible: required <= scenario.total_bandwidth,
        eta_domain: domain,
    }
}

/// Whether deadline `deadline` is achievable with the local accuracy held at `eta`.
pub fn probe_at_accuracy(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
    eta: f64,
) -> FeasibilityProbe {
    let required = if deadline > 0.0 {
        total_bandwidth_at(eta, scenario, coeffs, deadline).unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    FeasibilityProbe {
        deadline,
        eta_star: Some(eta),
        required_bandwidth: required,
        feasible: required <= scenario.total_bandwidth,
        eta_domain: eta_domain(scenario, coeffs, deadline),
    }
}

/// Smallest deadline accepted by a monotone feasibility test.
///
/// Doubles an upper bracket from 1 s, then bisects until the bracket's
/// relative width is at most `opts.rel_tol`. Returns the feasible end.
pub fn bisect_deadline<F: FnMut(f64) -> bool>(mut feasible: F, opts: &TimeOptions) -> Result<f64> {
    if !(opts.rel_tol > 0.0) {
        return Err(Error::domain("completion-time tolerance must be positive"));
    }
    let mut hi = 1.0;
    while !feasible(hi) {
        hi *= 2.0;
        if hi > opts.deadline_cap {
            return Err(Error::infeasible(format!(
                "no feasible completion time below {:.3e} s",
                opts.deadline_cap
            )));
        }
    }
    let mut lo = 0.0;
    while (hi - lo) / hi > opts.rel_tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Full-speed allocation at deadline `deadline` and local accuracy `eta`:
/// f = f_max, p = p_max, the upload time left by the deadline, and the least
/// bandwidth for it plus an equal share of what is left over.
pub fn allocation_at(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
    eta: f64,
) -> Result<Allocation> {
    let k = scenario.num_users();
    let mut t = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    for i in 0..k {
        let v = rate_demand(eta, i, scenario, coeffs, deadline)?;
        t.push(scenario.upload_bits / v);
        b.push(bandwidth_for_rate(v, i, scenario)?);
    }
    let left = scenario.total_bandwidth - b.iter().sum::<f64>();
    if left < 0.0 {
        return Err(Error::infeasible(format!(
            "deadline {deadline:.6e} s needs {:.6e} Hz more than the band",
            -left
        )));
    }
    let share = left / k as f64;
    for bi in &mut b {
        *bi += share;
    }
    Ok(Allocation {
        tx_time: t,
        bandwidth: b,
        freq: scenario.users.iter().map(|u| u.f_max).collect(),
        power: scenario.users.iter().map(|u| u.p_max).collect(),
        local_accuracy: eta,
    })
}

/// Minimum completion time and a feasible allocation attaining it.
pub fn min_completion_time(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    opts: &TimeOptions,
) -> Result<(f64, Allocation)> {
    scenario.validate()?;
    let deadline = bisect_deadline(|t| probe(scenario, coeffs, t).feasible, opts)?;
    let p = probe(scenario, coeffs, deadline);
    let eta = p
        .eta_star
        .ok_or_else(|| Error::infeasible("completion-time bisection ended on an empty domain"))?;
    Ok((deadline, allocation_at(scenario, coeffs, deadline, eta)?))
}
