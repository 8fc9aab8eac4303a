use eefl::harness::{gen_scenario, FlConfig, ScenarioConfig};
use eefl::model::{FlParams, NetworkScenario};
use eefl::schemes::{completion_time, solve_scheme, SchemeKind, SchemeOptions};

fn fl() -> FlParams {
    FlConfig::default().fl_params().unwrap()
}

fn cell(seed: u64) -> NetworkScenario {
    gen_scenario(&ScenarioConfig {
        num_users: 20,
        seed,
        ..ScenarioConfig::default()
    })
    .unwrap()
}

const BASELINES: [SchemeKind; 4] = [
    SchemeKind::EbFdma,
    SchemeKind::FeFdma,
    SchemeKind::Tdma,
    SchemeKind::Rs {
        selected_count: 0,
        seed: 3,
    },
];

fn common_deadline(s: &NetworkScenario, fl: &FlParams, opts: &SchemeOptions) -> f64 {
    let worst = std::iter::once(SchemeKind::Proposed)
        .chain(BASELINES)
        .map(|k| completion_time(k, s, fl, opts).unwrap())
        .fold(0.0, f64::max);
    1.2 * worst
}

#[test]
fn baselines_never_beat_the_proposed_allocation() {
    let fl = fl();
    let opts = SchemeOptions::default();
    for seed in 0..6 {
        let s = cell(seed);
        let deadline = common_deadline(&s, &fl, &opts);
        let (_, mine) = solve_scheme(SchemeKind::Proposed, &s, &fl, deadline, &opts).unwrap();
        let mine = mine.total_energy().unwrap();
        for kind in BASELINES {
            let (_, r) = solve_scheme(kind, &s, &fl, deadline, &opts).unwrap();
            assert!(r.violations.is_empty(), "{kind} seed {seed}");
            let theirs = r.total_energy().unwrap();
            assert!(mine <= theirs * (1.0 + 1e-9), "{kind} seed {seed}: {theirs} < {mine}");
        }
    }
}

#[test]
fn sequential_uploads_finish_no_sooner() {
    let fl = fl();
    let opts = SchemeOptions::default();
    for seed in 0..10 {
        let s = cell(seed);
        let fdma = completion_time(SchemeKind::Proposed, &s, &fl, &opts).unwrap();
        let tdma = completion_time(SchemeKind::Tdma, &s, &fl, &opts).unwrap();
        assert!(tdma >= fdma * (1.0 - 1e-6), "seed {seed}: {tdma} < {fdma}");
    }
}

#[test]
fn fixed_splits_finish_no_sooner() {
    let fl = fl();
    let opts = SchemeOptions::default();
    for seed in 0..10 {
        let s = cell(seed);
        let best = completion_time(SchemeKind::Proposed, &s, &fl, &opts).unwrap();
        for kind in [SchemeKind::EbFdma, SchemeKind::FeFdma] {
            let t = completion_time(kind, &s, &fl, &opts).unwrap();
            assert!(t >= best * (1.0 - 1e-6), "{kind} seed {seed}: {t} < {best}");
        }
    }
}

#[test]
fn full_participation_gives_each_user_longer_uploads() {
    let fl = fl();
    let opts = SchemeOptions::default();
    for seed in 0..6 {
        let s = cell(seed);
        let deadline = common_deadline(&s, &fl, &opts);
        let mean_t = |kind| {
            let (alloc, _) = solve_scheme(kind, &s, &fl, deadline, &opts).unwrap();
            alloc.tx_time.iter().sum::<f64>() / alloc.tx_time.len() as f64
        };
        let rs = mean_t(SchemeKind::Rs {
            selected_count: 10,
            seed,
        });
        let all = mean_t(SchemeKind::Proposed);
        // more rounds at half the users leave less upload time per round
        assert!(all > rs, "seed {seed}: {all} <= {rs}");
    }
}

#[test]
fn reports_are_deterministic() {
    let fl = fl();
    let opts = SchemeOptions::default();
    let s = cell(42);
    let deadline = common_deadline(&s, &fl, &opts);
    for kind in BASELINES {
        let a = solve_scheme(kind, &s, &fl, deadline, &opts).unwrap().1;
        let b = solve_scheme(kind, &s, &fl, deadline, &opts).unwrap().1;
        assert_eq!(a, b);
    }
}

#[test]
fn names_parse_from_the_command_line_forms() {
    for (text, kind) in [
        ("proposed", SchemeKind::Proposed),
        ("EB-FDMA", SchemeKind::EbFdma),
        ("fe_fdma", SchemeKind::FeFdma),
        ("tdma", SchemeKind::Tdma),
    ] {
        assert_eq!(text.parse::<SchemeKind>().unwrap(), kind);
    }
    assert!(matches!(
        "rs:7".parse::<SchemeKind>().unwrap(),
        SchemeKind::Rs { selected_count: 7, .. }
    ));
    assert!("ofdma".parse::<SchemeKind>().is_err());
}
