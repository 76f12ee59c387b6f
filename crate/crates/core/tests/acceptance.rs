//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phd_jdtc::assignment::min_cost_assignment;
use phd_jdtc::harness::{run_monte_carlo, run_once, MonteCarloReport, RunOptions, RunReport};
use phd_jdtc::metrics::{ospa, OspaParams};
use phd_jdtc::scenario::{generate_truth, ScenarioConfig};
use phd_jdtc::sensing::{clutter_amp_pdf, p_d, p_fa, target_amp_pdf, SnrBand};

const MC_RUNS: usize = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn reference_batch() -> (MonteCarloReport, Vec<usize>) {
    let cfg = ScenarioConfig::reference();
    let scenario = cfg.build().expect("reference scenario builds");
    let t = Instant::now();
    let report = run_monte_carlo(&scenario, MC_RUNS, cfg.seed).expect("reference batch runs");
    println!("reference batch: {MC_RUNS} runs in {:.1} s", t.elapsed().as_secs_f64());
    // scans at which some target present in the previous scan has gone
    let truth = generate_truth(&cfg);
    let deaths = (1..truth.num_scans())
        .filter(|&k| truth.scans[k - 1].iter().any(|t| !truth.scans[k].iter().any(|u| u.target == t.target)))
        .collect();
    (report, deaths)
}

fn smoothing_benefit(mc: &MonteCarloReport) -> Outcome {
    let Some(s) = &mc.summary else { return outcome(false, "no smoothed output") };
    outcome(
        s.reduction >= 0.10 && s.max_scan_reduction >= 0.25,
        format!(
            "window OSPA filter {:.1} m, smoother {:.1} m, reduction {:.1} % (need >= 10 %); largest per-scan reduction {:.1} % at scan {} (need >= 25 %)",
            s.filter_ospa,
            s.smoother_ospa,
            100.0 * s.reduction,
            100.0 * s.max_scan_reduction,
            s.max_scan
        ),
    )
}

fn cardinality_neutrality(mc: &MonteCarloReport) -> Outcome {
    let Some(s) = &mc.summary else { return outcome(false, "no smoothed output") };
    let diff = (s.smoother_cardinality_error - s.filter_cardinality_error).abs();
    outcome(
        diff < 0.1,
        format!(
            "mean per-class cardinality error filter {:.4}, smoother {:.4}, difference {diff:.4} (need < 0.1)",
            s.filter_cardinality_error, s.smoother_cardinality_error
        ),
    )
}

fn count_error(counts: &[usize], truth: &[usize]) -> f64 {
    counts.iter().zip(truth).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / counts.len() as f64
}

type Pick<'a> = &'a dyn Fn(&RunReport, usize) -> Option<(f64, f64)>;

/// Mean over runs and the three scans from `death` of (filter, smoother) cardinality error.
fn errors_after(runs: &[RunReport], death: usize, pick: Pick) -> Option<(f64, f64)> {
    let mut acc = (0.0, 0.0, 0usize);
    for run in runs {
        for k in death..death + 3 {
            let (f, s) = pick(run, k)?;
            acc = (acc.0 + f, acc.1 + s, acc.2 + 1);
        }
    }
    Some((acc.0 / acc.2 as f64, acc.1 / acc.2 as f64))
}

fn hysteresis(mc: &MonteCarloReport, deaths: &[usize]) -> Outcome {
    // Outputs are compared as they are emitted while processing scan k: the
    // filter's estimate of scan k and the smoother's estimate of scan k - L,
    // each against the truth of the scan it describes.
    let emitted = |r: &RunReport, k: usize| -> Option<(f64, f64)> {
        Some((r.filter.get(k)?.cardinality_error(), r.smoother_row(k)?.cardinality_error()))
    };
    let same_scan = |r: &RunReport, k: usize| -> Option<(f64, f64)> {
        Some((r.filter.get(k)?.cardinality_error(), r.smoother.get(k)?.as_ref()?.cardinality_error()))
    };
    let against_current = |r: &RunReport, k: usize| -> Option<(f64, f64)> {
        let f = r.filter.get(k)?;
        Some((f.cardinality_error(), count_error(&r.smoother_row(k)?.counts, &f.true_counts)))
    };
    let mut pass = !deaths.is_empty();
    let mut parts = Vec::new();
    for &d in deaths {
        let Some((f, s)) = errors_after(&mc.runs, d, &emitted) else {
            pass = false;
            parts.push(format!("death at scan {d}: outputs missing"));
            continue;
        };
        pass &= s > f;
        let mut note = format!("death at scan {d}: filter {f:.3}, smoother {s:.3}");
        if let Some((f2, s2)) = errors_after(&mc.runs, d, &same_scan) {
            note.push_str(&format!(" [same-scan alignment: filter {f2:.3}, smoother {s2:.3}]"));
        }
        if let Some((f3, s3)) = errors_after(&mc.runs, d, &against_current) {
            note.push_str(&format!(" [smoother vs current truth: {s3:.3} vs filter {f3:.3}]"));
        }
        parts.push(note);
    }
    outcome(pass, format!("{} (need smoother > filter)", parts.join("; ")))
}

fn snr_asymmetry(mc: &MonteCarloReport) -> Outcome {
    let Some(s) = &mc.summary else { return outcome(false, "no smoothed output") };
    let (c1, c2) = (s.smoother_class_ospa[0], s.smoother_class_ospa[1]);
    outcome(c1 < c2, format!("smoothed OSPA class 1 {c1:.1} m, class 2 {c2:.1} m (need class 1 < class 2)"))
}

fn oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let n = 500;
    let (mut worst_filter, mut worst_smoother) = (0.0f64, 0.0f64);
    let (mut bad_filter, mut bad_smoother) = (0, 0);
    for seed in 0..20 {
        let e = common::oracle_errors(seed, n, Some(3));
        for r in common::rms_per_axis(&e.filter) {
            worst_filter = worst_filter.max(r);
            bad_filter += usize::from(r >= 3.0);
        }
        for r in common::rms_per_axis(&e.smoother) {
            worst_smoother = worst_smoother.max(r);
            bad_smoother += usize::from(r >= 3.0);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        bad_filter == 0 && bad_smoother == 0 && secs < 30.0,
        format!(
            "N = {n}, RMS over steps of error in units of sigma/sqrt(N): worst filter {worst_filter:.2} \
             ({bad_filter}/80 seed-axes >= 3), worst smoother {worst_smoother:.2} ({bad_smoother}/80 >= 3); {secs:.1} s (need < 3 and < 30 s)"
        ),
    )
}

/// Adaptive Simpson quadrature, independent of the library integrator.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let rule = |a: f64, fa: f64, fm: f64, b: f64, fb: f64| (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    // (a, b, f(a), f(mid), f(b), estimate, tolerance, depth left)
    let mut stack = vec![(a, b, fa, fm, fb, rule(a, fa, fm, b, fb), tol, 40u32)];
    let mut total = 0.0;
    while let Some((a, b, fa, fm, fb, whole, tol, depth)) = stack.pop() {
        let m = 0.5 * (a + b);
        let (flm, frm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
        let (left, right) = (rule(a, fa, flm, m, fm), rule(m, fm, frm, b, fb));
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            total += left + right + (left + right - whole) / 15.0;
        } else {
            stack.push((a, m, fa, flm, fm, left, tol / 2.0, depth - 1));
            stack.push((m, b, fm, frm, fb, right, tol / 2.0, depth - 1));
        }
    }
    total
}

/// Integral over `[lo, upper]` split at decades, so wide and narrow densities both resolve.
fn integrate_from<F: Fn(f64) -> f64>(f: F, lo: f64, upper: f64) -> f64 {
    let mut cuts = vec![lo];
    let mut edge = 1.0;
    while edge < upper {
        if edge > lo {
            cuts.push(edge);
        }
        edge *= 2.0;
    }
    cuts.push(upper);
    cuts.windows(2).map(|w| simpson(&f, w[0], w[1], 1e-13)).sum()
}

fn density_normalization() -> Outcome {
    let bands = [SnrBand::from_db(30.0, 50.0).unwrap(), SnrBand::from_db(10.0, 30.0).unwrap()];
    let mut worst_density = 0.0f64;
    let mut worst_pfa = 0.0f64;
    for tau in [0.0, 1.0, 3.0] {
        let g0 = integrate_from(clutter_amp_pdf, 0.0, 60.0);
        let g0_tau = integrate_from(|a| clutter_amp_pdf(a) / p_fa(tau), tau, 60.0);
        worst_density = worst_density.max((g0 - 1.0).abs()).max((g0_tau - 1.0).abs());
        worst_pfa = worst_pfa.max((integrate_from(clutter_amp_pdf, tau, 60.0) - p_fa(tau)).abs());
        for band in &bands {
            let upper = 60.0 * (1.0 + band.d2()).sqrt();
            let ga = integrate_from(|a| target_amp_pdf(a, band), 0.0, upper);
            let pd = p_d(tau, band);
            let ga_tau = integrate_from(|a| target_amp_pdf(a, band) / pd, tau, upper);
            worst_density = worst_density.max((ga - 1.0).abs()).max((ga_tau - 1.0).abs());
        }
    }
    outcome(
        worst_density < 1e-6 && worst_pfa < 1e-9,
        format!("largest |integral - 1| {worst_density:.2e} (need < 1e-6); largest p_fa error {worst_pfa:.2e} (need < 1e-9)"),
    )
}

fn mass_ledger() -> Outcome {
    let failures: Vec<String> =
        (0..1000u64).filter_map(|seed| common::ledger::check_case(seed).err().map(|e| format!("config {seed}: {e}"))).collect();
    outcome(
        failures.is_empty(),
        match failures.first() {
            None => "1000 random configurations, all predict/update/resample identities hold".to_string(),
            Some(first) => format!("{} of 1000 configurations fail; first: {first}", failures.len()),
        },
    )
}

fn ospa_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = OspaParams::default();
    let mut mismatches = 0;
    for _ in 0..500 {
        let set = |rng: &mut ChaCha8Rng| -> Vec<[f64; 2]> {
            (0..rng.random_range(0..=4)).map(|_| [rng.random_range(-2000.0..2000.0), rng.random_range(-2000.0..2000.0)]).collect()
        };
        let (a, b) = (set(&mut rng), set(&mut rng));
        let (small, large) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
        let cost: Vec<Vec<f64>> = small
            .iter()
            .map(|p| large.iter().map(|q| (p[0] - q[0]).hypot(p[1] - q[1]).min(params.cutoff)).collect())
            .collect();
        let (_, total) = min_cost_assignment(&cost);
        let brute = common::brute::brute_force_assignment(&cost);
        let d = ospa(&a, &b, &params);
        if total != brute || d != common::brute::brute_force_ospa(&a, &b, params.cutoff, params.order) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 500 instances differ from exhaustive search (need 0)"))
}

fn determinism() -> Outcome {
    let scenario = ScenarioConfig::reference().build().unwrap();
    let run = || run_once(&scenario, 17, &RunOptions::default()).and_then(|r| r.to_csv_string());
    match (run(), run()) {
        (Ok(a), Ok(b)) => outcome(a == b && !a.is_empty(), format!("two runs with seed 17: {} bytes each, identical: {}", a.len(), a == b)),
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("run failed: {e}")),
    }
}

fn main() {
    let (mc, deaths) = reference_batch();
    let results = [
        ("smoothing benefit", smoothing_benefit(&mc)),
        ("cardinality neutrality", cardinality_neutrality(&mc)),
        ("hysteresis", hysteresis(&mc, &deaths)),
        ("SNR-class asymmetry", snr_asymmetry(&mc)),
        ("oracle equivalence", oracle_equivalence()),
        ("density normalization", density_normalization()),
        ("mass ledger", mass_ledger()),
        ("OSPA oracle", ospa_oracle()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("{} {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
