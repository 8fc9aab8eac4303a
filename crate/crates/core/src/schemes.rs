//! The proposed solver and the baseline schemes it is compared against.
//!
//! * `eb_fdma`: bandwidth split equally and never reallocated;
//! * `fe_fdma`: local accuracy held at 1/2;
//! * `tdma`: users upload one after another over the whole band once every
//!   user has finished computing;
//! * `rs`: each global round only a random subset of users takes part.
//!
//! For `rs`, a round with `m` of `K` users carries `m/K` of the gradient
//! information of a full round, so the number of rounds scales by `K/m`.
//! The expectation over subsets is taken over a fixed sample of rounds
//! drawn from the scheme's seed; every sampled round shares one local
//! accuracy and each sampled subset splits the band on its own.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy_opt::{
    check_groups, descend, minimize_on_interval, single_group, solve_log_price, solve_with, upload_slack,
    user_eta_interval, BandwidthRule, EnergyOptions, EtaRule,
};
use crate::error::{Error, Result};
use crate::model::{
    achievable_rate, comp_time, evaluate_with, power_for_upload, Allocation, Constraint,
    EnergyTimeBreakdown, FlParams, IterationCoefficients, NetworkScenario, DEFAULT_SLACK,
};
use crate::numerics::{dinkelbach, kkt_curve, kkt_exponent, Tolerance};
use crate::report::SolveReport;
use crate::time_opt::{self, allocation_at, bisect_deadline, TimeOptions};

/// Which scheme to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Proposed,
    EbFdma,
    FeFdma,
    Tdma,
    /// Random selection of `selected_count` users per round.
    Rs { selected_count: usize, seed: u64 },
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Proposed => "proposed",
            SchemeKind::EbFdma => "eb_fdma",
            SchemeKind::FeFdma => "fe_fdma",
            SchemeKind::Tdma => "tdma",
            SchemeKind::Rs { .. } => "rs",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Rs { selected_count: 0, .. } => f.write_str("rs"),
            SchemeKind::Rs { selected_count, .. } => write!(f, "rs:{selected_count}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    /// Parses `proposed`, `eb_fdma`, `fe_fdma`, `tdma` or `rs:<count>`.
    /// A bare `rs` selects zero users, meaning "half of K" at solve time.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match s.as_str() {
            "proposed" => SchemeKind::Proposed,
            "eb_fdma" => SchemeKind::EbFdma,
            "fe_fdma" => SchemeKind::FeFdma,
            "tdma" => SchemeKind::Tdma,
            "rs" => SchemeKind::Rs {
                selected_count: 0,
                seed: 0,
            },
            other => match other.strip_prefix("rs:") {
                Some(n) => SchemeKind::Rs {
                    selected_count: n.parse().map_err(|_| {
                        Error::Config(format!("bad selected count in scheme {other:?}"))
                    })?,
                    seed: 0,
                },
                None => return Err(Error::Config(format!("unknown scheme {other:?}"))),
            },
        })
    }
}

/// Controls shared by all schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeOptions {
    pub energy: EnergyOptions,
    pub time: TimeOptions,
    /// Number of sampled rounds the random-selection expectation is taken over.
    pub rs_rounds: usize,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions {
            energy: EnergyOptions::default(),
            time: TimeOptions::default(),
            rs_rounds: 16,
        }
    }
}

fn with_t_star(err: Error, t_star: Option<f64>) -> Error {
    match err {
        Error::Infeasible { reason, .. } => Error::Infeasible { reason, t_star },
        other => other,
    }
}

fn deadline_error(scheme: &str, deadline: f64, t_star: f64) -> Error {
    Error::Infeasible {
        reason: format!("{scheme}: deadline {deadline:.6e} s is below the minimum completion time"),
        t_star: Some(t_star),
    }
}

/// Proposed solver seeded from the completion-time optimizer.
pub fn solve_proposed(
    scenario: &NetworkScenario,
    fl: &FlParams,
    deadline: f64,
    opts: &SchemeOptions,
) -> Result<(Allocation, SolveReport)> {
    scenario.validate()?;
    let coeffs = fl.coefficients(scenario)?;
    let init = proposed_init(scenario, &coeffs, deadline, &opts.time)?;
    solve_with(
        "proposed",
        scenario,
        &coeffs,
        fl.local_accuracy_bounds,
        deadline,
        &init,
        EtaRule::Optimize,
        BandwidthRule::Optimize(&single_group(scenario.num_users())),
        &opts.energy,
    )
}

fn proposed_init(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
    time: &TimeOptions,
) -> Result<Allocation> {
    let probe = time_opt::probe(scenario, coeffs, deadline);
    match (probe.feasible, probe.eta_star) {
        (true, Some(eta)) => allocation_at(scenario, coeffs, deadline, eta),
        _ => {
            let (t_star, _) = time_opt::min_completion_time(scenario, coeffs, time)?;
            Err(deadline_error("proposed", deadline, t_star))
        }
    }
}

/// Upload times at full power over fixed bandwidths.
fn full_power_times(scenario: &NetworkScenario, bandwidth: &[f64]) -> Vec<f64> {
    scenario
        .users
        .iter()
        .zip(bandwidth)
        .map(|(u, &b)| scenario.upload_bits / achievable_rate(u, b, u.p_max, scenario.noise_psd))
        .collect()
}

fn equal_bandwidth(scenario: &NetworkScenario) -> Vec<f64> {
    let k = scenario.num_users();
    vec![scenario.total_bandwidth / k as f64; k]
}

/// Local-accuracy interval in which every user meets `deadline` at full
/// speed with upload times `t`.
fn full_speed_interval(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    deadline: f64,
    t: &[f64],
) -> Option<(f64, f64)> {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for (k, u) in scenario.users.iter().enumerate() {
        let (l, h) = user_eta_interval(
            coeffs.global_iter_coeff,
            coeffs.cycle_load[k],
            u.f_max,
            deadline,
            t[k],
        )
        .ok()?;
        lo = lo.max(l);
        hi = hi.min(h);
    }
    (lo <= hi).then_some((lo, hi))
}

/// Minimum completion time with an equal bandwidth split.
pub fn eb_fdma_completion_time(
    scenario: &NetworkScenario,
    fl: &FlParams,
    time: &TimeOptions,
) -> Result<f64> {
    let coeffs = fl.coefficients(scenario)?;
    let t = full_power_times(scenario, &equal_bandwidth(scenario));
    bisect_deadline(|d| full_speed_interval(scenario, &coeffs, d, &t).is_some(), time)
}

/// Equal-bandwidth baseline.
pub fn solve_eb_fdma(
    scenario: &NetworkScenario,
    fl: &FlParams,
    deadline: f64,
    opts: &SchemeOptions,
) -> Result<(Allocation, SolveReport)> {
    scenario.validate()?;
    let coeffs = fl.coefficients(scenario)?;
    let b = equal_bandwidth(scenario);
    let t = full_power_times(scenario, &b);
    let (bl, bh) = fl.local_accuracy_bounds;
    let Some((lo, hi)) = full_speed_interval(scenario, &coeffs, deadline, &t)
        .map(|(l, h)| (l.max(bl), h.min(bh)))
        .filter(|(l, h)| l <= h)
    else {
        let t_star = eb_fdma_completion_time(scenario, fl, &opts.time)?;
        return Err(deadline_error("eb_fdma", deadline, t_star));
    };
    let init = Allocation {
        tx_time: t,
        bandwidth: b,
        freq: scenario.users.iter().map(|u| u.f_max).collect(),
        power: scenario.users.iter().map(|u| u.p_max).collect(),
        local_accuracy: 0.5 * (lo + hi),
    };
    solve_with(
        "eb_fdma",
        scenario,
        &coeffs,
        fl.local_accuracy_bounds,
        deadline,
        &init,
        EtaRule::Optimize,
        BandwidthRule::Fixed,
        &opts.energy,
    )
}

/// Local accuracy used by the fixed-accuracy baseline.
pub const FIXED_ACCURACY: f64 = 0.5;

/// Minimum completion time with the local accuracy held at 1/2.
pub fn fe_fdma_completion_time(
    scenario: &NetworkScenario,
    fl: &FlParams,
    time: &TimeOptions,
) -> Result<f64> {
    let coeffs = fl.coefficients(scenario)?;
    bisect_deadline(
        |d| time_opt::probe_at_accuracy(scenario, &coeffs, d, FIXED_ACCURACY).feasible,
        time,
    )
}

/// Fixed-local-accuracy baseline.
///
/// Starts from the full-speed allocation at accuracy 1/2 when the deadline
/// allows it, and from the proposed solver's starting point otherwise (in
/// which case the accuracy is moved into the feasible interval and a note
/// records it).
pub fn solve_fe_fdma(
    scenario: &NetworkScenario,
    fl: &FlParams,
    deadline: f64,
    opts: &SchemeOptions,
) -> Result<(Allocation, SolveReport)> {
    scenario.validate()?;
    let coeffs = fl.coefficients(scenario)?;
    let at_half = time_opt::probe_at_accuracy(scenario, &coeffs, deadline, FIXED_ACCURACY);
    let init = if at_half.feasible {
        allocation_at(scenario, &coeffs, deadline, FIXED_ACCURACY)?
    } else {
        proposed_init(scenario, &coeffs, deadline, &opts.time)?
    };
    solve_with(
        "fe_fdma",
        scenario,
        &coeffs,
        fl.local_accuracy_bounds,
        deadline,
        &init,
        EtaRule::Fixed(FIXED_ACCURACY),
        BandwidthRule::Optimize(&single_group(scenario.num_users())),
        &opts.energy,
    )
}

/// Per-round wall time under sequential uploads: the slowest computation
/// followed by every upload in turn.
pub fn tdma_round_time(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    alloc: &Allocation,
) -> f64 {
    let local = coeffs.local_iter_coeff * (-alloc.local_accuracy.log2());
    let compute = scenario
        .users
        .iter()
        .zip(&alloc.freq)
        .map(|(u, &f)| comp_time(u, f, local))
        .fold(0.0, f64::max);
    compute + alloc.tx_time.iter().sum::<f64>()
}

fn tdma_breakdown(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    alloc: &Allocation,
) -> Result<EnergyTimeBreakdown> {
    let mut bd = evaluate_with(scenario, coeffs, alloc)?;
    let finish = bd.global_iters * tdma_round_time(scenario, coeffs, alloc);
    bd.per_user_completion = vec![finish; scenario.num_users()];
    Ok(bd)
}

/// Constraint check for sequential full-band uploads.
pub fn tdma_violations(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    alloc: &Allocation,
    deadline: f64,
) -> Vec<Constraint> {
    // the per-user checks are the FDMA ones with each user owning the band
    // and no deadline; the deadline is then checked on the sequential round
    let mut out: Vec<Constraint> = check_feasible_with_full_band(scenario, coeffs, alloc);
    if !out.contains(&Constraint::Eta) && !out.contains(&Constraint::Shape) {
        let finish = tdma_breakdown(scenario, coeffs, alloc)
            .map(|b| b.completion_time())
            .unwrap_or(f64::NAN);
        if !(finish <= deadline * (1.0 + DEFAULT_SLACK)) {
            out.push(Constraint::Latency);
        }
    }
    out.sort();
    out
}

fn check_feasible_with_full_band(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    alloc: &Allocation,
) -> Vec<Constraint> {
    let mut out = Vec::new();
    for k in 0..scenario.num_users() {
        let one = [k];
        let mut single = alloc.subset(&one);
        if single.bandwidth.len() == 1 {
            // each slot uses the whole band
            if single.bandwidth[0] > scenario.total_bandwidth * (1.0 + DEFAULT_SLACK) {
                out.push(Constraint::Bandwidth);
            }
            single.bandwidth[0] = scenario.total_bandwidth;
        }
        for c in crate::model::check_feasible_with(
            &scenario.subset(&one),
            &coeffs.subset(&one),
            &single,
            f64::INFINITY,
            DEFAULT_SLACK,
        ) {
            if c != Constraint::Latency {
                out.push(c);
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Minimum completion time with sequential full-band uploads.
pub fn tdma_completion_time(scenario: &NetworkScenario, fl: &FlParams) -> Result<f64> {
    Ok(tdma_fastest(scenario, fl)?.0)
}

/// Fastest sequential schedule: full speed, full power, accuracy minimizing
/// `a/(1−η)·(max_k A_k·log₂(1/η)/f_max,k + Σ_k t_k)`.
fn tdma_fastest(scenario: &NetworkScenario, fl: &FlParams) -> Result<(f64, Allocation)> {
    scenario.validate()?;
    let coeffs = fl.coefficients(scenario)?;
    let full = vec![scenario.total_bandwidth; scenario.num_users()];
    let t = full_power_times(scenario, &full);
    let a = coeffs.global_iter_coeff;
    let slowest = scenario
        .users
        .iter()
        .zip(&coeffs.cycle_load)
        .map(|(u, &load)| load / u.f_max)
        .fold(0.0, f64::max);
    let (lo, hi) = fl.local_accuracy_bounds;
    let best = dinkelbach(a * slowest, a * t.iter().sum::<f64>(), lo, hi, &Tolerance::default())?;
    let alloc = Allocation {
        tx_time: t,
        bandwidth: full,
        freq: scenario.users.iter().map(|u| u.f_max).collect(),
        power: scenario.users.iter().map(|u| u.p_max).collect(),
        local_accuracy: best.eta,
    };
    // report the latency of the returned point, which is what bisection-free
    // feasibility checks compare against
    let finish = tdma_breakdown(scenario, &coeffs, &alloc)?.completion_time();
    Ok((finish.max(best.objective), alloc))
}

/// Sequential-upload baseline.
pub fn solve_tdma(
    scenario: &NetworkScenario,
    fl: &FlParams,
    deadline: f64,
    opts: &SchemeOptions,
) -> Result<(Allocation, SolveReport)> {
    let (t_star, init) = tdma_fastest(scenario, fl)?;
    if deadline < t_star {
        return Err(deadline_error("tdma", deadline, t_star));
    }
    let coeffs = fl.coefficients(scenario)?;
    let bounds = fl.local_accuracy_bounds;
    let run = descend(
        &init,
        |a| Ok(evaluate_with(scenario, &coeffs, a)?.total_energy),
        |a| {
            tdma_step(
                scenario,
                &coeffs,
                bounds,
                deadline,
                a,
                &opts.energy.scalar,
                opts.energy.refine_accuracy,
            )
            .map(|n| (n, None))
        },
        &opts.energy,
    )?;
    let mut report = SolveReport::new("tdma");
    report.deadline = Some(deadline);
    report.completion_time_min = Some(t_star);
    report.objective_trace = run.trace;
    report.iterations = run.iterations;
    report.converged = run.converged;
    report.notes = run.notes;
    report.violations = tdma_violations(scenario, &coeffs, &run.alloc, deadline);
    report.breakdown = Some(tdma_breakdown(scenario, &coeffs, &run.alloc)?);
    report.allocation = Some(run.alloc.clone());
    Ok((run.alloc, report))
}

/// One alternation of the sequential-upload solver.
///
/// First the upload times drop to the full-band minimum at the current
/// powers and the accuracy is re-optimized; then, at that accuracy, the
/// computation phase length and the split of the remaining time among
/// uploads are balanced by a single price on time.
fn tdma_step(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    bounds: (f64, f64),
    deadline: f64,
    current: &Allocation,
    tol: &Tolerance,
    refine: bool,
) -> Result<Allocation> {
    let band = scenario.total_bandwidth;
    let n0 = scenario.noise_psd;
    let s = scenario.upload_bits;
    let a = coeffs.global_iter_coeff;
    let k = scenario.num_users();

    // accuracy at fixed frequencies and powers
    let t: Vec<f64> = scenario
        .users
        .iter()
        .zip(&current.power)
        .map(|(u, &p)| s / achievable_rate(u, band, p, n0))
        .collect();
    let slowest = (0..k)
        .map(|i| coeffs.cycle_load[i] / current.freq[i])
        .fold(0.0, f64::max);
    let total_t: f64 = t.iter().sum();
    let (lo, hi) = user_eta_interval(a, slowest, 1.0, deadline, total_t)?;
    let (lo, hi) = (lo.max(bounds.0), hi.min(bounds.1));
    if !(lo <= hi) {
        return Err(Error::infeasible("sequential schedule leaves no feasible accuracy"));
    }
    let alpha1 = a * (0..k)
        .map(|i| scenario.kappa * coeffs.cycle_load[i] * current.freq[i] * current.freq[i])
        .sum::<f64>();
    let alpha2 = a * t.iter().zip(&current.power).map(|(t, p)| t * p).sum::<f64>();
    let eta = dinkelbach(alpha1, alpha2, lo, hi, tol)?.eta;
    debug_assert!(upload_slack(a, slowest, 1.0, deadline, eta) >= total_t * (1.0 - 1e-9));

    // computation length and upload times at that accuracy
    let bits = -eta.log2();
    let round = deadline * (1.0 - eta) / a;
    let floors = full_power_times(scenario, &vec![band; k]);
    let shortest_compute = (0..k)
        .map(|i| coeffs.cycle_load[i] * bits / scenario.users[i].f_max)
        .fold(0.0, f64::max);
    let need = floors.iter().sum::<f64>() + shortest_compute;
    if need > round * (1.0 + 1e-12) {
        return Err(Error::infeasible(format!(
            "sequential round needs {need:.6e} s, deadline allows {round:.6e} s"
        )));
    }
    // d/dτ of κ·L·Σ A_k·(A_k·L/τ)² is −2κL³ΣA_k³/τ³
    let cube = 2.0 * scenario.kappa * bits.powi(3) * coeffs.cycle_load.iter().map(|x| x.powi(3)).sum::<f64>();
    let compute_len = |price: f64| (cube / price).cbrt().max(shortest_compute);
    let upload = |i: usize, price: f64| -> f64 {
        let g = scenario.users[i].channel_gain;
        match kkt_exponent(price * g / (n0 * band)) {
            Ok(x) => (std::f64::consts::LN_2 * s / (band * x)).max(floors[i]),
            Err(_) => f64::NAN,
        }
    };
    let excess = |log_price: f64| -> f64 {
        let price = log_price.exp();
        (0..k).map(|i| upload(i, price)).sum::<f64>() + compute_len(price) - round
    };
    // price at which an even split of the round would be stationary
    let even = round / (k + 1) as f64;
    let guess = (0..k)
        .map(|i| {
            let x = std::f64::consts::LN_2 * s / (band * even);
            (n0 * band / scenario.users[i].channel_gain * kkt_curve(x)).ln()
        })
        .sum::<f64>()
        / k as f64;
    let log_price = solve_log_price(excess, guess, round, "time price")?;
    let price = log_price.exp();
    let tau = compute_len(price);
    let t: Vec<f64> = (0..k).map(|i| upload(i, price)).collect();
    let freq: Vec<f64> = (0..k)
        .map(|i| (coeffs.cycle_load[i] * bits / tau).min(scenario.users[i].f_max))
        .collect();
    let power: Vec<f64> = scenario
        .users
        .iter()
        .enumerate()
        .map(|(i, u)| power_for_upload(u, band, t[i], s, n0).min(u.p_max))
        .collect();
    let next = Allocation {
        tx_time: t,
        bandwidth: vec![band; k],
        freq,
        power,
        local_accuracy: eta,
    };
    if refine {
        tdma_refine(scenario, coeffs, bounds, deadline, &next)
    } else {
        Ok(next)
    }
}

/// Sequential-upload counterpart of [`energy_opt::refine_accuracy`]: upload
/// times and powers held, the computation phase stretched to fill the round
/// at every candidate accuracy.
fn tdma_refine(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    bounds: (f64, f64),
    deadline: f64,
    alloc: &Allocation,
) -> Result<Allocation> {
    let a = coeffs.global_iter_coeff;
    let total_t: f64 = alloc.tx_time.iter().sum();
    let slowest = scenario
        .users
        .iter()
        .zip(&coeffs.cycle_load)
        .map(|(u, &load)| load / u.f_max)
        .fold(0.0, f64::max);
    let (lo, hi) = user_eta_interval(a, slowest, 1.0, deadline, total_t)?;
    let (lo, hi) = (lo.max(bounds.0), hi.min(bounds.1));
    let tx: f64 = alloc.tx_time.iter().zip(&alloc.power).map(|(t, p)| t * p).sum();
    let freq_at = |eta: f64| -> Option<Vec<f64>> {
        let bits = -eta.log2();
        let tau = deadline * (1.0 - eta) / a - total_t;
        if !(tau > 0.0) {
            return None;
        }
        scenario
            .users
            .iter()
            .zip(&coeffs.cycle_load)
            .map(|(u, &load)| {
                let f = load * bits / tau;
                (f <= u.f_max * (1.0 + DEFAULT_SLACK)).then(|| f.min(u.f_max))
            })
            .collect()
    };
    let energy = |eta: f64| match freq_at(eta) {
        Some(freq) => {
            let bits = -eta.log2();
            let comp: f64 = coeffs
                .cycle_load
                .iter()
                .zip(&freq)
                .map(|(&load, f)| scenario.kappa * load * bits * f * f)
                .sum();
            a / (1.0 - eta) * (comp + tx)
        }
        None => f64::INFINITY,
    };
    let (eta, _) = minimize_on_interval(energy, lo, hi, alloc.local_accuracy)?;
    if eta == alloc.local_accuracy {
        return Ok(alloc.clone());
    }
    Ok(Allocation {
        freq: freq_at(eta).ok_or_else(|| Error::infeasible("sequential refinement left the feasible range"))?,
        local_accuracy: eta,
        ..alloc.clone()
    })
}

/// Sampled rounds of the random-selection scheme: each entry is the sorted
/// list of users taking part in that round.
pub fn rs_rounds(k: usize, selected: usize, rounds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rounds)
        .map(|_| {
            let mut pick = sample(&mut rng, k, selected).into_vec();
            pick.sort_unstable();
            pick
        })
        .collect()
}

/// Scenario in which every sampled round's users appear as separate users,
/// together with the band groups and the iteration coefficients.
struct Stacked {
    scenario: NetworkScenario,
    coeffs: IterationCoefficients,
    groups: Vec<Vec<usize>>,
    /// Original user index of each stacked user.
    origin: Vec<usize>,
}

fn stack_rounds(
    scenario: &NetworkScenario,
    coeffs: &IterationCoefficients,
    rounds: &[Vec<usize>],
) -> Stacked {
    let mut users = Vec::new();
    let mut load = Vec::new();
    let mut groups = Vec::new();
    let mut origin = Vec::new();
    for r in rounds {
        let mut g = Vec::with_capacity(r.len());
        for &k in r {
            g.push(users.len());
            users.push(scenario.users[k]);
            load.push(coeffs.cycle_load[k]);
            origin.push(k);
        }
        groups.push(g);
    }
    Stacked {
        scenario: NetworkScenario {
            users,
            ..scenario.clone()
        },
        coeffs: IterationCoefficients {
            cycle_load: load,
            ..coeffs.clone()
        },
        groups,
        origin,
    }
}

/// Local accuracy minimizing the worst round's bandwidth demand at full
/// speed, with that worst demand as a fraction of the band.
fn rs_best_accuracy(st: &Stacked, deadline: f64) -> Option<(f64, f64)> {
    let parts: Vec<(NetworkScenario, IterationCoefficients)> = st
        .groups
        .iter()
        .map(|g| (st.scenario.subset(g), st.coeffs.subset(g)))
        .collect();
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for (s, c) in &parts {
        let (l, h) = time_opt::eta_domain(s, c, deadline)?;
        lo = lo.max(l);
        hi = hi.min(h);
    }
    if !(lo < hi) {
        return None;
    }
    let worst = |eta: f64| {
        parts
            .iter()
            .map(|(s, c)| {
                time_opt::total_bandwidth_at(eta, s, c, deadline).unwrap_or(f64::INFINITY)
                    / s.total_bandwidth
            })
            .fold(0.0, f64::max)
    };
    // golden-section search on a maximum of convex functions
    let margin = 1e-9 * (hi - lo);
    let (mut a, mut b) = (lo + margin, hi - margin);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (worst(c), worst(d));
    for _ in 0..200 {
        if b - a <= 1e-13 * b {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = worst(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = worst(d);
        }
    }
    let (eta, value) = if fc <= fd { (c, fc) } else { (d, fd) };
    Some((eta, value))
}

fn rs_setup(
    scenario: &NetworkScenario,
    fl: &FlParams,
    selected_count: usize,
    seed: u64,
    opts: &SchemeOptions,
) -> Result<Stacked> {
    scenario.validate()?;
    let k = scenario.num_users();
    let m = if selected_count == 0 { k.div_ceil(2) } else { selected_count };
    if m > k {
        return Err(Error::Config(format!(
            "random selection of {m} users out of {k}"
        )));
    }
    let base = fl.coefficients(scenario)?;
    let coeffs = base.with_global_coeff(base.global_iter_coeff * k as f64 / m as f64);
    let rounds = if m == k {
        single_group(k)
    } else {
        rs_rounds(k, m, opts.rs_rounds.max(1), seed)
    };
    Ok(stack_rounds(scenario, &coeffs, &rounds))
}

/// Minimum completion time of the random-selection scheme on its sampled rounds.
pub fn rs_completion_time(
    scenario: &NetworkScenario,
    fl: &FlParams,
    selected_count: usize,
    seed: u64,
    opts: &SchemeOptions,
) -> Result<f64> {
    let st = rs_setup(scenario, fl, selected_count, seed, opts)?;
    bisect_deadline(
        |d| rs_best_accuracy(&st, d).is_some_and(|(_, w)| w <= 1.0),
        &opts.time,
    )
}

/// Random-selection baseline.
///
/// The returned allocation gives, for every user, its decisions in the
/// first sampled round it takes part in (zeros if it is never sampled);
/// the breakdown averages energy over the sampled rounds, charging nothing
/// to users sitting a round out.
pub fn solve_rs(
    scenario: &NetworkScenario,
    fl: &FlParams,
    deadline: f64,
    selected_count: usize,
    seed: u64,
    opts: &SchemeOptions,
) -> Result<(Allocation, SolveReport)> {
    let st = rs_setup(scenario, fl, selected_count, seed, opts)?;
    let eta = match rs_best_accuracy(&st, deadline) {
        Some((eta, w)) if w <= 1.0 => eta,
        _ => {
            let t_star = rs_completion_time(scenario, fl, selected_count, seed, opts)?;
            return Err(deadline_error("rs", deadline, t_star));
        }
    };
    let mut init = Allocation {
        tx_time: vec![0.0; st.origin.len()],
        bandwidth: vec![0.0; st.origin.len()],
        freq: vec![0.0; st.origin.len()],
        power: vec![0.0; st.origin.len()],
        local_accuracy: eta,
    };
    for g in &st.groups {
        let part = allocation_at(&st.scenario.subset(g), &st.coeffs.subset(g), deadline, eta)?;
        for (j, &i) in g.iter().enumerate() {
            init.tx_time[i] = part.tx_time[j];
            init.bandwidth[i] = part.bandwidth[j];
            init.freq[i] = part.freq[j];
            init.power[i] = part.power[j];
        }
    }
    let (stacked, mut report) = solve_with(
        "rs",
        &st.scenario,
        &st.coeffs,
        fl.local_accuracy_bounds,
        deadline,
        &init,
        EtaRule::Optimize,
        BandwidthRule::Optimize(&st.groups),
        &opts.energy,
    )
    .map_err(|e| with_t_star(e, None))?;
    let n = st.groups.len() as f64;
    let k = scenario.num_users();
    let bd = evaluate_with(&st.scenario, &st.coeffs, &stacked)?;
    let mut comp = vec![0.0; k];
    let mut tx = vec![0.0; k];
    let mut finish = vec![0.0f64; k];
    let mut alloc = Allocation {
        tx_time: vec![0.0; k],
        bandwidth: vec![0.0; k],
        freq: vec![0.0; k],
        power: vec![0.0; k],
        local_accuracy: stacked.local_accuracy,
    };
    let mut seen = vec![false; k];
    for (i, &orig) in st.origin.iter().enumerate() {
        comp[orig] += bd.comp_energy[i] / n;
        tx[orig] += bd.tx_energy[i] / n;
        finish[orig] = finish[orig].max(bd.per_user_completion[i]);
        if !seen[orig] {
            seen[orig] = true;
            alloc.tx_time[orig] = stacked.tx_time[i];
            alloc.bandwidth[orig] = stacked.bandwidth[i];
            alloc.freq[orig] = stacked.freq[i];
            alloc.power[orig] = stacked.power[i];
        }
    }
    report.objective_trace.iter_mut().for_each(|e| *e /= n);
    report.breakdown = Some(EnergyTimeBreakdown {
        comp_energy: comp,
        tx_energy: tx,
        total_energy: bd.total_energy / n,
        per_user_completion: finish,
        global_iters: bd.global_iters,
        local_iters: vec![bd.local_iters.first().copied().unwrap_or(0.0); k],
    });
    report.violations = check_groups(&st.scenario, &st.coeffs, &stacked, deadline, &st.groups);
    report.notes.push(format!(
        "{} sampled rounds of {} users",
        st.groups.len(),
        st.groups.first().map_or(0, |g| g.len())
    ));
    report.allocation = Some(alloc.clone());
    Ok((alloc, report))
}

/// Runs `kind` at deadline `deadline`.
pub fn solve_scheme(
    kind: SchemeKind,
    scenario: &NetworkScenario,
    fl: &FlParams,
    deadline: f64,
    opts: &SchemeOptions,
) -> Result<(Allocation, SolveReport)> {
    match kind {
        SchemeKind::Proposed => solve_proposed(scenario, fl, deadline, opts),
        SchemeKind::EbFdma => solve_eb_fdma(scenario, fl, deadline, opts),
        SchemeKind::FeFdma => solve_fe_fdma(scenario, fl, deadline, opts),
        SchemeKind::Tdma => solve_tdma(scenario, fl, deadline, opts),
        SchemeKind::Rs {
            selected_count,
            seed,
        } => solve_rs(scenario, fl, deadline, selected_count, seed, opts),
    }
}

/// Minimum completion time of `kind`.
pub fn completion_time(
    kind: SchemeKind,
    scenario: &NetworkScenario,
    fl: &FlParams,
    opts: &SchemeOptions,
) -> Result<f64> {
    match kind {
        SchemeKind::Proposed => {
            let coeffs = fl.coefficients(scenario)?;
            Ok(time_opt::min_completion_time(scenario, &coeffs, &opts.time)?.0)
        }
        SchemeKind::EbFdma => eb_fdma_completion_time(scenario, fl, &opts.time),
        SchemeKind::FeFdma => fe_fdma_completion_time(scenario, fl, &opts.time),
        SchemeKind::Tdma => tdma_completion_time(scenario, fl),
        SchemeKind::Rs {
            selected_count,
            seed,
        } => rs_completion_time(scenario, fl, selected_count, seed, opts),
    }
}
