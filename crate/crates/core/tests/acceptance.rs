//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wiou::focusing::{gain, gain_curve, momentum_from_schedule, GAIN_PRESETS};
use wiou::geometry::{iou_loss, PairGeometry};
use wiou::gradcheck::{check_pair, sample_pair, PairKind, FD_STEP};
use wiou::losses::{aspect_v, compose_on, r_diou, r_wiou};
use wiou::simlab::{self, final_report, generate_cases, CasePlan, SimOutcome};
use wiou::tape::Tape;
use wiou::{csv, BBox, BaseLoss, LossSpec, SimConfig};

const FD_CASES: usize = 1000;
const FD_REL_TOL: f64 = 1e-5;
const FD_ABS_TOL: f64 = 1e-8;
const FD_MEAN: f64 = 0.5;
const ORACLE_VALUE_TOL: f64 = 1e-12;
const PROPERTY_CASES: usize = 100;
const CLOSED_FORM_TOL: f64 = 1e-8;
const MACHINE_TOL: f64 = 2.0 * f64::EPSILON;
const GAIN_GRID_POINTS: usize = 10_000;
const GAIN_BETA_MAX: f64 = 20.0;
const EMA_EPOCHS: u64 = 34;
const EMA_BATCHES: u64 = 890;
const EMA_VALUE: f64 = 0.3;
const EMA_TOL: f64 = 1e-9;
const MAJOR_BAND: f64 = 0.10;
const ALL_CASES_SEEDS: [u64; 3] = [0, 1, 2];
const ALL_CASES_SUBSAMPLE: f64 = 0.05;
const THRESHOLD: f64 = 0.2;
const PARALLEL_THREADS: usize = 4;

const SIM_LOSSES: [BaseLoss; 6] = [
    BaseLoss::GIoU,
    BaseLoss::DIoU,
    BaseLoss::CIoU,
    BaseLoss::EIoU,
    BaseLoss::SIoU,
    BaseLoss::WIoUv1,
];

enum Verdict {
    Pass(String),
    Fail(String),
    OutOfScope(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn within(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= FD_ABS_TOL || diff <= FD_REL_TOL * analytic.abs().max(numeric.abs())
}

fn pairs(seed: u64, kind: PairKind, n: usize) -> Vec<(BBox, BBox)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_pair(&mut rng, kind)).collect()
}

fn gradient_oracle() -> Verdict {
    let mut cases = pairs(11, PairKind::Overlapping, FD_CASES / 2);
    cases.extend(pairs(12, PairKind::Disjoint, FD_CASES / 2));
    let mut tape = Tape::new();
    let mut worst = (0.0f64, String::new());
    let mut failures = 0usize;
    let specs = common::all_specs();
    for spec in &specs {
        for (anchor, target) in &cases {
            let (a, t) = (anchor.as_array(), target.as_array());
            let eval = compose_on(&mut tape, spec, anchor, target, FD_MEAN, None).unwrap();
            let d = common::detached(spec, &a, &t, FD_MEAN);
            let value = common::loss(spec, &a, &t, &d);
            let numeric = common::fd_gradient(spec, &a, &t, &d, FD_STEP);
            let harness = check_pair(spec, anchor, target, FD_MEAN).unwrap();
            let value_ok = (value - eval.loss).abs() <= ORACLE_VALUE_TOL * value.abs().max(1.0);
            let grads_ok = eval.grad.iter().zip(&numeric).all(|(g, n)| within(*g, *n))
                && eval.grad.iter().zip(&harness.numeric).all(|(g, n)| within(*g, *n));
            if !(value_ok && grads_ok) {
                failures += 1;
            }
            for (g, n) in eval.grad.iter().zip(&numeric) {
                let rel = (g - n).abs() / g.abs().max(n.abs()).max(FD_ABS_TOL / FD_REL_TOL);
                if rel > worst.0 {
                    worst = (rel, spec.to_string());
                }
            }
        }
    }
    verdict(
        failures == 0,
        format!(
            "{} specs x {} cases, {} failures, worst scaled error {:.2e} ({})",
            specs.len(),
            cases.len(),
            failures,
            worst.0,
            worst.1
        ),
    )
}

fn iou_closed_form() -> Verdict {
    let mut tape = Tape::new();
    let mut worst = 0.0f64;
    for (anchor, target) in pairs(21, PairKind::Overlapping, PROPERTY_CASES) {
        tape.clear();
        let g = PairGeometry::on_tape(&tape, &anchor, &target).unwrap();
        let loss = iou_loss(&g).unwrap();
        let grads = loss.backward().unwrap();
        let iou = 1.0 - loss.value();
        let expected = -g.h_i.value() * (iou + 1.0) / g.s_u.value();
        worst = worst.max((grads.wrt(g.w_i).unwrap() - expected).abs());
    }
    let mut nonzero = 0;
    for (anchor, target) in pairs(22, PairKind::Disjoint, PROPERTY_CASES) {
        tape.clear();
        let g = PairGeometry::on_tape(&tape, &anchor, &target).unwrap();
        let grads = iou_loss(&g).unwrap().backward().unwrap();
        nonzero += g
            .anchor
            .as_array()
            .iter()
            .filter(|p| grads.wrt(**p).unwrap() != 0.0)
            .count();
    }
    verdict(
        worst <= CLOSED_FORM_TOL && nonzero == 0,
        format!("max |dL/dW_i - closed form| {worst:.2e}; nonzero disjoint gradients {nonzero}"),
    )
}

fn diou_sign() -> Verdict {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut violations = 0;
    for i in 0..PROPERTY_CASES {
        let kind = if i % 2 == 0 { PairKind::Overlapping } else { PairKind::Disjoint };
        let (anchor, target) = sample_pair(&mut rng, kind);
        tape.clear();
        let g = PairGeometry::on_tape(&tape, &anchor, &target).unwrap();
        let grads = r_diou(&g).unwrap().backward().unwrap();
        if !(grads.wrt(g.w_g).unwrap() < 0.0 && grads.wrt(g.h_g).unwrap() < 0.0) {
            violations += 1;
        }
    }
    verdict(
        violations == 0,
        format!("{PROPERTY_CASES} cases with distinct centers, {violations} without negative dR/dW_g and dR/dH_g"),
    )
}

fn aspect_relation() -> Verdict {
    let mut tape = Tape::new();
    let mut worst = 0.0f64;
    for (anchor, target) in pairs(41, PairKind::Overlapping, PROPERTY_CASES) {
        tape.clear();
        let g = PairGeometry::on_tape(&tape, &anchor, &target).unwrap();
        let grads = aspect_v(&g).unwrap().backward().unwrap();
        let dw = grads.wrt(g.anchor.w).unwrap();
        let dh = grads.wrt(g.anchor.h).unwrap();
        worst = worst.max((dh + anchor.w / anchor.h * dw).abs());
    }
    verdict(
        worst <= CLOSED_FORM_TOL,
        format!("max |dv/dh + (w/h) dv/dw| {worst:.2e} over {PROPERTY_CASES} cases"),
    )
}

fn wiou_detach() -> Verdict {
    let mut tape = Tape::new();
    let mut leaked = 0;
    for (anchor, target) in pairs(51, PairKind::Overlapping, PROPERTY_CASES)
        .into_iter()
        .chain(pairs(52, PairKind::Disjoint, PROPERTY_CASES))
    {
        tape.clear();
        let g = PairGeometry::on_tape(&tape, &anchor, &target).unwrap();
        let grads = r_wiou(&g, None).unwrap().backward().unwrap();
        if grads.wrt(g.w_g).unwrap() != 0.0 || grads.wrt(g.h_g).unwrap() != 0.0 {
            leaked += 1;
        }
    }
    let (mut lo, mut hi, mut checked) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
    let mut range = |anchor: &BBox, target: &BBox, tape: &mut Tape| {
        tape.clear();
        let g = PairGeometry::on_tape(tape, anchor, target).unwrap();
        let r = r_wiou(&g, None).unwrap().value();
        lo = lo.min(r);
        hi = hi.max(r);
        checked += 1;
    };
    let small = SimConfig {
        radius: 0.1,
        ..SimConfig::default()
    };
    for case in generate_cases(&small).unwrap() {
        range(&case.anchor, &case.target, &mut tape);
    }
    let plan = CasePlan::new(&SimConfig::default()).unwrap();
    for id in 0..plan.len() {
        let case = plan.case(id).unwrap();
        range(&case.anchor, &case.target, &mut tape);
    }
    let e = std::f64::consts::E;
    verdict(
        leaked == 0 && lo >= 1.0 && hi < e,
        format!(
            "{leaked} pairs with adjoint on W_g/H_g; R_WIoU over {checked} simulation cases in [{lo:.6}, {hi:.6}]"
        ),
    )
}

fn gain_shape() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for (alpha, delta) in GAIN_PRESETS {
        let at_delta = gain(delta, alpha, delta);
        let table = gain_curve(alpha, delta, GAIN_BETA_MAX, GAIN_GRID_POINTS - 1).unwrap();
        let step = GAIN_BETA_MAX / (GAIN_GRID_POINTS - 1) as f64;
        let (peak_idx, peak) = table
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap();
        let rising = table[..=peak_idx].windows(2).all(|w| w[0].1 < w[1].1);
        let falling = table[peak_idx..].windows(2).all(|w| w[0].1 > w[1].1);
        let argmax_ok = (peak.0 - 1.0 / alpha.ln()).abs() <= step;
        let unit_ok = (at_delta - 1.0).abs() <= MACHINE_TOL;
        ok &= table.len() == GAIN_GRID_POINTS && rising && falling && argmax_ok && unit_ok;
        notes.push(format!(
            "({alpha},{delta}): r(delta)-1={:.1e} argmax {:.4} vs {:.4}",
            at_delta - 1.0,
            peak.0,
            1.0 / alpha.ln()
        ));
    }
    verdict(ok, notes.join("; "))
}

fn ema_schedule() -> Verdict {
    let m = momentum_from_schedule(EMA_EPOCHS, EMA_BATCHES).unwrap();
    let mut tracker = wiou::EmaTracker::new(m).unwrap();
    for _ in 0..EMA_EPOCHS * EMA_BATCHES {
        tracker.update(EMA_VALUE).unwrap();
    }
    let expected = 0.05 + 0.95 * EMA_VALUE;
    let err = (tracker.mean() - expected).abs();
    verdict(
        err <= EMA_TOL && (m - 9.8995e-5).abs() < 5e-9,
        format!("m = {m:.6e}; mean after {} updates off by {err:.2e}", EMA_EPOCHS * EMA_BATCHES),
    )
}

fn run_suite(config: &SimConfig, threads: usize) -> Vec<SimOutcome> {
    SIM_LOSSES
        .iter()
        .map(|b| {
            let spec = LossSpec::plain(*b);
            let curve = simlab::run_with_threads(config, &spec, threads).unwrap();
            SimOutcome {
                config: config.clone(),
                spec,
                curve,
            }
        })
        .collect()
}

fn csv_bytes(outcomes: &[SimOutcome]) -> Vec<u8> {
    let mut out = Vec::new();
    for o in outcomes {
        csv::write_curve(&mut out, &o.curve).unwrap();
    }
    csv::write_ranking(&mut out, &final_report(outcomes, THRESHOLD).unwrap()).unwrap();
    out
}

fn major_config() -> SimConfig {
    SimConfig {
        radius: 0.1,
        ..SimConfig::default()
    }
}

fn all_cases_config(seed: u64) -> SimConfig {
    SimConfig {
        subsample: ALL_CASES_SUBSAMPLE,
        seed,
        ..SimConfig::default()
    }
}

fn major_cases(outcomes: &[SimOutcome]) -> Verdict {
    let finals: Vec<(String, f64)> = outcomes
        .iter()
        .map(|o| (o.spec.to_string(), o.curve.last().unwrap().mean_iou_loss))
        .collect();
    let lo = finals.iter().map(|f| f.1).fold(f64::INFINITY, f64::min);
    let hi = finals.iter().map(|f| f.1).fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    let listing: Vec<String> = finals.iter().map(|(n, v)| format!("{n}={v:.5}")).collect();
    verdict(
        spread <= MAJOR_BAND,
        format!(
            "{} cases, relative spread {:.2}%: {}",
            major_config().case_count(),
            100.0 * spread,
            listing.join(" ")
        ),
    )
}

fn all_cases(runs: &[(u64, Vec<SimOutcome>)]) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for (seed, outcomes) in runs {
        let ranking = final_report(outcomes, THRESHOLD).unwrap();
        let row = |n: &str| ranking.row(n).unwrap();
        let (wiou, siou) = (row("wiou1"), row("siou"));
        let others = ["ciou", "eiou", "diou", "giou"].map(row);
        let order = wiou.final_mean_iou_loss < siou.final_mean_iou_loss
            && others.iter().all(|o| siou.final_mean_iou_loss < o.final_mean_iou_loss);
        let reach = |r: &simlab::RankRow| r.iterations_to_threshold.unwrap_or(usize::MAX);
        let fastest = siou.iterations_to_threshold.is_some() && others.iter().all(|o| reach(siou) < reach(o));
        ok &= order && fastest;
        let listing: Vec<String> = ranking
            .rows
            .iter()
            .map(|r| {
                let hit = r.iterations_to_threshold.map_or("-".into(), |i| i.to_string());
                format!("{}={:.5}@{}", r.loss, r.final_mean_iou_loss, hit)
            })
            .collect();
        notes.push(format!(
            "seed {seed} [order {} fastest {}] {}",
            if order { "ok" } else { "BROKEN" },
            if fastest { "ok" } else { "BROKEN" },
            listing.join(" ")
        ));
    }
    verdict(ok, notes.join(" | "))
}

fn case_counts() -> Verdict {
    let small = major_config();
    let full = SimConfig::default();
    let generated = generate_cases(&small).unwrap().len();
    let plan = CasePlan::new(&full).unwrap();
    let ok = generated == 68_600
        && small.case_count() == 68_600
        && plan.len() == 1_715_000
        && full.case_count() == 1_715_000
        && plan.case(plan.len() - 1).is_some()
        && plan.case(plan.len()).is_none();
    verdict(
        ok,
        format!("r=0.1: {generated} generated; r=0.5: {} addressable ids", plan.len()),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Verdict, f64)> = Vec::new();
    let mut timed = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        results.push((id, name, v, start.elapsed().as_secs_f64()));
        let (id, name, v, secs) = results.last().unwrap();
        report(*id, name, v, *secs);
    };

    timed(1, "gradient oracle suite", &mut gradient_oracle);
    timed(2, "IoU closed-form gradient and vanishing", &mut iou_closed_form);
    timed(3, "DIoU negative enclosing-box gradient", &mut diou_sign);
    timed(4, "aspect term gradient relation", &mut aspect_relation);
    timed(5, "WIoU detach and range", &mut wiou_detach);
    timed(6, "gain-curve shape", &mut gain_shape);
    timed(7, "EMA momentum schedule", &mut ema_schedule);

    let mut major = Vec::new();
    timed(8, "simulation, major cases", &mut || {
        major = run_suite(&major_config(), PARALLEL_THREADS);
        major_cases(&major)
    });
    let mut all = Vec::new();
    timed(9, "simulation, all cases (subsampled)", &mut || {
        all = ALL_CASES_SEEDS
            .iter()
            .map(|s| (*s, run_suite(&all_cases_config(*s), PARALLEL_THREADS)))
            .collect();
        all_cases(&all)
    });
    timed(10, "case count", &mut case_counts);
    timed(11, "detector benchmarks", &mut || {
        Verdict::OutOfScope(
            "AP on MS-COCO with YOLOv7 needs full detector training; covered only by the property suites above"
                .into(),
        )
    });
    timed(12, "determinism across thread counts", &mut || {
        let mut mismatched = Vec::new();
        if csv_bytes(&run_suite(&major_config(), 1)) != csv_bytes(&major) {
            mismatched.push("major".to_string());
        }
        for (seed, outcomes) in &all {
            if csv_bytes(&run_suite(&all_cases_config(*seed), 1)) != csv_bytes(outcomes) {
                mismatched.push(format!("all-cases seed {seed}"));
            }
        }
        verdict(
            mismatched.is_empty(),
            format!(
                "criteria 8-9 CSVs with 1 vs {PARALLEL_THREADS} threads; mismatched: [{}]",
                mismatched.join(", ")
            ),
        )
    });

    let failed = results
        .iter()
        .filter(|r| matches!(r.2, Verdict::Fail(_)))
        .count();
    println!("acceptance: {} criteria, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report(id: usize, name: &str, v: &Verdict, secs: f64) {
    let (tag, detail) = match v {
        Verdict::Pass(d) => ("PASS", d),
        Verdict::Fail(d) => ("FAIL", d),
        Verdict::OutOfScope(d) => ("NOT REPRODUCIBLE (out of scope)", d),
    };
    println!("criterion {id:>2} {tag}: {name} ({secs:.1}s) {detail}");
}
