//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.
//!
//! Tolerances:
//! - regions, corner points, sum-DoF table, cognitive bounds: exact rationals
//! - decodability: 10^4 noiseless trials per scheme, decodable fraction
//!   1.0, filtered plus degenerate below 0.5%, p99 symbol error below 1e-6
//! - rate slope: 500 trials, slope between 50 and 60 dB within 10%

use std::time::{Duration, Instant};

use iccr::channel_model::{sample_channel, AntennaConfig, FeedbackKind, FeedbackMode, NoiseSpec};
use iccr::decoder::{decode, eliminate_known_interference, streams_per_frame};
use iccr::dof_regions::{
    achievable_region_no_cr_feedback, cognitive_ic_bounds, max_weighted, polytope_contains, polytope_equal, region_csi,
    region_no, region_outer_delayed, region_output, region_shannon, sum_dof, sum_dof_comparison, symmetric_point,
    Rational,
};
use iccr::montecarlo::{estimate_dof_sweep, run_batch, NoiseSetting, TrialBatchSpec};
use iccr::numerics::seeded_rng;
use iccr::schemes::{build_scheme, run_scheme, User, UserSymbols};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn cfg(m_t: usize, m_c: usize, m_r: usize) -> AntennaConfig {
    AntennaConfig::new(m_t, m_c, m_r).unwrap()
}

fn r(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

fn grid(max: usize) -> impl Iterator<Item = AntennaConfig> {
    (1..=max).flat_map(move |m_t| (1..=max).flat_map(move |m_c| (1..=max).map(move |m_r| cfg(m_t, m_c, m_r))))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn region_exactness() -> Check {
    let start = Instant::now();
    let p = region_csi(AntennaConfig::siso());
    let expected = vec![
        (r(0, 1), r(0, 1)),
        (r(1, 1), r(0, 1)),
        (r(2, 3), r(2, 3)),
        (r(0, 1), r(1, 1)),
    ];
    ensure(p.vertices() == expected.as_slice(), || {
        format!("(1,1,1) vertices {:?}", p.vertices())
    })?;
    let sums = [
        sum_dof(&p),
        sum_dof(&region_csi(cfg(2, 1, 2))),
        sum_dof(&region_csi(cfg(2, 3, 2))),
    ];
    ensure(sums == [r(4, 3), r(12, 5), r(8, 3)], || format!("sums {sums:?}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("sums 4/3, 12/5, 8/3 in {:?}", start.elapsed()))
}

fn feedback_equivalence() -> Check {
    let start = Instant::now();
    let mut n = 0;
    for c in grid(6) {
        let csi = region_csi(c);
        ensure(
            polytope_equal(&csi, &region_output(c)) && polytope_equal(&csi, &region_shannon(c)),
            || format!("{c} differs"),
        )?;
        ensure(csi == region_output(c) && csi == region_shannon(c), || {
            format!("{c} halfspaces differ")
        })?;
        n += 1;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{n} configs identical in {:?}", start.elapsed()))
}

fn achievability_meets_bound() -> Check {
    let mut n = 0;
    for c in grid(6) {
        ensure(polytope_equal(&region_csi(c), &region_outer_delayed(c)), || {
            format!("{c} differs")
        })?;
        n += 1;
    }
    Ok(format!("{n} configs equal"))
}

fn no_feedback_collapse() -> Check {
    let (mut equal, mut strict) = (0, 0);
    for c in grid(6) {
        let no = region_no(c);
        let csi = region_csi(c);
        ensure(polytope_contains(&csi, &no), || {
            format!("{c}: no-feedback region not contained")
        })?;
        let same = polytope_equal(&no, &csi);
        ensure(same == (c.m_t + c.m_c <= c.m_r), || format!("{c}: equal={same}"))?;
        if same {
            equal += 1;
        } else {
            strict += 1;
        }
    }
    Ok(format!("{equal} equal, {strict} strict"))
}

fn decodability_cases() -> Vec<(AntennaConfig, FeedbackMode)> {
    let every = FeedbackMode::everywhere;
    let no_relay = FeedbackMode::new(FeedbackKind::DelayedCsit, false).unwrap();
    vec![
        (AntennaConfig::siso(), every(FeedbackKind::DelayedCsit)),
        (AntennaConfig::siso(), every(FeedbackKind::DelayedOutput)),
        (AntennaConfig::siso(), every(FeedbackKind::DelayedShannon)),
        (cfg(1, 2, 2), every(FeedbackKind::DelayedCsit)),
        (cfg(2, 1, 2), every(FeedbackKind::DelayedCsit)),
        (cfg(1, 4, 2), every(FeedbackKind::DelayedCsit)),
        (cfg(2, 3, 1), every(FeedbackKind::DelayedCsit)),
        (cfg(1, 2, 2), no_relay),
        (cfg(1, 4, 2), no_relay),
    ]
}

fn scheme_decodability() -> Check {
    let start = Instant::now();
    let trials = 10_000;
    let mut worst_error: f64 = 0.0;
    let mut worst_excluded: f64 = 0.0;
    for (i, (c, mode)) in decodability_cases().into_iter().enumerate() {
        let spec = TrialBatchSpec::noiseless(c, mode, trials, 1_000_000 * (i as u64 + 1));
        let stats = &run_batch(&spec).map_err(|e| e.to_string())?[0];
        let label = format!("{c} {}", mode.label());
        ensure(
            stats.decodable + stats.filtered + stats.degenerate + stats.undecodable == trials,
            || format!("{label}: categories do not cover the batch"),
        )?;
        ensure(stats.decodable_fraction == 1.0, || {
            format!("{label}: decodable fraction {}", stats.decodable_fraction)
        })?;
        let excluded = (stats.filtered + stats.degenerate) as f64 / trials as f64;
        ensure(excluded < 0.005, || format!("{label}: excluded fraction {excluded}"))?;
        let p99 = stats.max_symbol_error_p99.unwrap_or(f64::INFINITY);
        ensure(p99 < 1e-6, || format!("{label}: p99 error {p99:e}"))?;
        worst_error = worst_error.max(p99);
        worst_excluded = worst_excluded.max(excluded);
    }
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "9 schemes x {trials} trials, worst p99 error {worst_error:.1e}, worst excluded {worst_excluded}, {:?}",
        start.elapsed()
    ))
}

fn corner_points() -> Check {
    let named = [
        (
            cfg(1, 2, 2),
            FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
            (6, 5),
        ),
        (
            cfg(1, 4, 2),
            FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
            (4, 3),
        ),
        (
            cfg(1, 2, 2),
            FeedbackMode::new(FeedbackKind::DelayedCsit, false).unwrap(),
            (3, 3),
        ),
    ];
    for (c, mode, (s, t)) in named {
        let plan = build_scheme(c, mode);
        ensure((plan.symbols_per_user, plan.frame_length) == (s, t), || {
            format!(
                "{c} {}: {} symbols in {} slots",
                mode.label(),
                plan.symbols_per_user,
                plan.frame_length
            )
        })?;
    }
    let modes = [
        FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
        FeedbackMode::everywhere(FeedbackKind::DelayedOutput),
        FeedbackMode::everywhere(FeedbackKind::DelayedShannon),
        FeedbackMode::new(FeedbackKind::DelayedCsit, false).unwrap(),
        FeedbackMode::everywhere(FeedbackKind::NoFeedback),
    ];
    let mut n = 0;
    for c in grid(4) {
        for mode in modes {
            let plan = build_scheme(c, mode);
            let mut rng = seeded_rng(n);
            let channel = sample_channel(c, plan.frame_length, &mut rng).unwrap();
            let symbols = UserSymbols::random(plan.symbols_per_user, &mut rng);
            let tr =
                run_scheme(&plan, &channel, &symbols, &NoiseSpec::Noiseless, &mut rng).map_err(|e| e.to_string())?;
            let a = decode(&eliminate_known_interference(&tr, User::A), None);
            let b = decode(&eliminate_known_interference(&tr, User::B), None);
            let (d_a, d_b) =
                streams_per_frame(&a, &b, &plan).ok_or_else(|| format!("{c} {} not decodable", mode.label()))?;
            let region = match mode.kind {
                FeedbackKind::NoFeedback => region_no(c),
                _ if !mode.relay_has_feedback => achievable_region_no_cr_feedback(c),
                _ => region_csi(c),
            };
            let vertex = symmetric_point(&region);
            ensure(d_a == vertex && d_b == vertex, || {
                format!("{c} {}: scheme {d_a} vs vertex {vertex}", mode.label())
            })?;
            n += 1;
        }
    }
    Ok(format!("6/5, 4/3, 1 and {n} grid plans on their symmetric vertices"))
}

fn no_relay_feedback_strictness() -> Check {
    let mut strict = 0;
    for c in grid(6) {
        let ach = achievable_region_no_cr_feedback(c);
        let outer = region_outer_delayed(c);
        ensure(polytope_contains(&outer, &ach), || format!("{c}: not contained"))?;
        let is_strict = !polytope_equal(&ach, &outer);
        let expected = c.m_t < c.m_r && c.m_r < c.m_t + c.m_c;
        ensure(is_strict == expected, || format!("{c}: strict={is_strict}"))?;
        strict += usize::from(is_strict);
    }
    let (a, o) = (
        sum_dof(&achievable_region_no_cr_feedback(cfg(1, 2, 2))),
        sum_dof(&region_outer_delayed(cfg(1, 2, 2))),
    );
    ensure((a, o) == (r(2, 1), r(12, 5)), || format!("(1,2,2): {a} vs {o}"))?;
    Ok(format!("{strict} strict configs; (1,2,2) 2 vs 12/5"))
}

/// The sum-DoF table evaluated independently: the broadcast channel from its own
/// antenna thresholds, the interference channel with M_t + M_c/2 transmit
/// antennas, all in doubled integers.
fn table2_oracle(c: AntennaConfig) -> (Rational, Rational, Rational) {
    let (t2, c2, r2) = (2 * c.m_t as i64, c.m_c as i64 * 2, 2 * c.m_r as i64);
    let n2 = 2 * t2 + c2; // twice 2M_t + M_c
    let j2 = t2 + c2; // twice M_t + M_c
    let ic2 = t2 + c2 / 2; // twice M_t + M_c/2
    let pair = |x2: i64| r(2 * x2 * r2, 2 * (x2 + r2));
    let few = r(4 * c.m_r as i64, 3);
    let bc = if r2 >= n2 {
        r(n2, 2)
    } else if 2 * r2 >= n2 {
        pair(n2)
    } else {
        few
    };
    let iccr = if r2 >= n2 {
        r(n2, 2)
    } else if r2 >= j2 {
        r(r2, 2)
    } else if 2 * r2 >= j2 {
        pair(j2)
    } else {
        few
    };
    let ic = if r2 >= n2 {
        r(n2, 2)
    } else if r2 >= ic2 {
        r(r2, 2)
    } else if 2 * r2 >= j2 {
        pair(ic2)
    } else {
        few
    };
    (bc, iccr, ic)
}

fn table2_reproduction() -> Check {
    let mut rows = 0;
    let mut regimes = std::collections::BTreeSet::new();
    for m_t in 1..=2 {
        for m_c in [2, 4] {
            for m_r in 1..=5 {
                let c = cfg(m_t, m_c, m_r);
                let row = sum_dof_comparison(c);
                let ic = row.ic.ok_or_else(|| format!("{c}: no IC value"))?;
                let oracle = table2_oracle(c);
                ensure((row.bc, row.iccr, ic) == oracle, || {
                    format!("{c}: {:?} vs {oracle:?}", (row.bc, row.iccr, ic))
                })?;
                let region_sum = max_weighted(&region_csi(c), 1.into(), 1.into());
                ensure(row.iccr == region_sum && row.iccr_region == region_sum, || {
                    format!("{c}: closed form {} vs region {region_sum}", row.iccr)
                })?;
                ensure(row.bc >= row.iccr && row.iccr >= ic, || format!("{c}: ordering"))?;
                regimes.insert(row.regime.row());
                rows += 1;
            }
        }
    }
    let spot = sum_dof_comparison(cfg(1, 4, 2));
    ensure(
        (spot.bc, spot.iccr, spot.ic) == (r(8, 3), r(8, 3), Some(r(8, 3))),
        || "(1,4,2) row".into(),
    )?;
    ensure(regimes.len() == 5, || format!("regimes covered {regimes:?}"))?;
    Ok(format!("{rows} configs over all 5 regimes"))
}

fn cognitive_example() -> Check {
    let (lo, hi) = cognitive_ic_bounds(2, 3, 2).map_err(|e| e.to_string())?;
    let sums = (sum_dof(&lo), sum_dof(&hi));
    ensure(sums == (r(12, 5), r(8, 3)), || format!("{sums:?}"))?;
    ensure(polytope_contains(&hi, &lo), || "lower not inside upper".into())?;
    Ok("lower 12/5, upper 8/3".into())
}

fn rate_slope() -> Check {
    let start = Instant::now();
    let mut parts = Vec::new();
    for (c, exact) in [(AntennaConfig::siso(), 4.0 / 3.0), (cfg(1, 2, 2), 12.0 / 5.0)] {
        let spec = TrialBatchSpec {
            config: c,
            mode: FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
            trials: 500,
            base_seed: 2024,
            noise: NoiseSetting::SnrDb(vec![50.0, 60.0]),
        };
        let res = estimate_dof_sweep(&spec).map_err(|e| e.to_string())?;
        let slope = res.sum_dof_estimate.ok_or("no slope")?;
        let rel = (slope - exact).abs() / exact;
        ensure(rel < 0.10, || format!("{c}: slope {slope} vs {exact}"))?;
        parts.push(format!("{c} slope {slope:.4}"));
    }
    within(start.elapsed(), Duration::from_secs(180))?;
    Ok(format!("{} in {:?}", parts.join(", "), start.elapsed()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("region exactness", region_exactness),
        ("feedback equivalence", feedback_equivalence),
        ("achievability meets outer bound", achievability_meets_bound),
        ("no-feedback collapse", no_feedback_collapse),
        ("scheme decodability", scheme_decodability),
        ("corner-point consistency", corner_points),
        ("strictness without relay feedback", no_relay_feedback_strictness),
        ("sum-DoF table reproduction", table2_reproduction),
        ("cognitive IC example", cognitive_example),
        ("rate-slope check", rate_slope),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                println!("[FAIL] {:>2} {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
