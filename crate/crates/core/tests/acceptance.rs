//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::time::Instant;

use evsched::baselines::solve_sp;
use evsched::config::Config;
use evsched::feasible::{contains, linmin, linmin_value};
use evsched::fvi::{convergence_report, median, train};
use evsched::oracle::ExactOracle;
use evsched::rng::StreamFactory;
use evsched::sim::{
    convergence_sweep, draw_paths, nonexpansion_trials, oracle_checks, run_bound_stress, run_comparison,
    run_robustness, Algorithm, BoundCheck, Comparison, Policies,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn config(name: &str) -> Config {
    Config::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

fn tiny_criteria(report: &mut Report) {
    let cfg = config("tiny.toml");
    let inst = cfg.instance().unwrap();
    let law = cfg.arrival_model(&inst.menu).unwrap();
    let suite = cfg.property_suite();

    let started = Instant::now();
    let oracle = ExactOracle::solve(&inst, &law, &suite.oracle).unwrap();
    let (mono, lip) = oracle_checks(&inst, &oracle);
    let oracle_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let rows = convergence_sweep(&inst, &law, &oracle, &suite.sweep, suite.sweep_seeds, &suite.inner, suite.master_seed)
        .unwrap();
    let summary = convergence_report(&rows);
    let (lo, hi) = oracle.tables[0].value_range();
    let decreasing = summary.windows(2).all(|w| w[1].median_error < w[0].median_error);
    let final_rel = summary.last().unwrap().median_error / (hi - lo);
    let medians: Vec<String> = summary
        .iter()
        .map(|s| format!("({},{},{})={:.4}", s.k, s.l, s.d, s.median_error))
        .collect();
    let secs = started.elapsed().as_secs_f64() + oracle_secs;
    report.line(
        1,
        "oracle convergence",
        decreasing && final_rel < 0.05 && secs < 300.0,
        format!(
            "medians {} decreasing={decreasing}, final {:.2}% of range {:.3}, {secs:.1}s",
            medians.join(" "),
            100.0 * final_rel,
            hi - lo
        ),
    );

    let pairs: u64 = mono.iter().map(|m| m.pairs).sum();
    let violations: u64 = mono.iter().map(|m| m.violations).sum();
    report.line(
        2,
        "monotonicity",
        violations == 0 && pairs > 0 && oracle_secs < 60.0,
        format!("{violations} violations over {pairs} comparable pairs in {} stages, {oracle_secs:.1}s", mono.len()),
    );

    let detail: Vec<String> = lip.iter().map(|l| format!("s{} {:.3}<={:.3}", l.stage, l.estimate, l.bound)).collect();
    report.line(3, "lipschitz bound", lip.iter().all(|l| l.holds), detail.join(" "));

    let extras = suite.sweep.last().unwrap().2;
    let factory = StreamFactory::new(suite.master_seed);
    let ne = nonexpansion_trials(
        &inst,
        &law,
        extras,
        suite.nonexpansion_pairs,
        suite.nonexpansion_states,
        &suite.inner,
        &factory,
    )
    .unwrap();
    report.line(
        4,
        "nonexpansiveness",
        ne.trials == 100 && ne.holding == ne.trials,
        format!("{}/{} trials hold, worst excess {:.3e}", ne.holding, ne.trials, ne.worst_excess),
    );
}

fn lp_equivalence(report: &mut Report) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut linmin_bad = 0;
    let mut nonempty = 0;
    for _ in 0..1000 {
        let (p, cost) = common::random_polytope(&mut rng);
        match common::vertex_min(&p, &cost, 1e-12) {
            Some(best) => {
                nonempty += 1;
                let ok = linmin(&p, &cost).is_ok_and(|u| contains(&p, &u, 1e-9))
                    && linmin_value(&p, &cost).is_ok_and(|v| common::rel_close(v, best, 1e-7));
                linmin_bad += usize::from(!ok);
            }
            None => linmin_bad += usize::from(linmin(&p, &cost).is_ok()),
        }
    }
    let mut sp_bad = 0;
    let mut feasible = 0;
    for _ in 0..200 {
        let (inst, path) = common::random_sp_case(&mut rng);
        match (common::sp_lp(&inst, &path), solve_sp(&inst, &path)) {
            (Some(lp), Ok(plan)) => {
                feasible += 1;
                sp_bad += usize::from(!common::rel_close(plan.total_cost(), lp, 1e-6));
            }
            (None, Err(_)) => {}
            _ => sp_bad += 1,
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report.line(
        5,
        "lp/flow oracle equivalence",
        linmin_bad == 0 && sp_bad == 0 && secs < 120.0,
        format!(
            "linmin {linmin_bad} mismatches / 1000 ({nonempty} nonempty), sp {sp_bad} mismatches / 200 ({feasible} feasible), {secs:.1}s"
        ),
    );
}

fn bound_failures(checks: &[BoundCheck]) -> usize {
    checks.iter().filter(|c| !c.holds).count()
}

fn full_scale_criteria(report: &mut Report) {
    let cfg = config("weekday.toml");
    let inst = cfg.instance().unwrap();
    let law = cfg.arrival_model(&inst.menu).unwrap();
    let factory = StreamFactory::new(cfg.seeds.master);

    let started = Instant::now();
    let models = train(&inst, &law, &cfg.fvi, &cfg.inner_solver, &factory).unwrap();
    let train_secs = started.elapsed().as_secs_f64();
    let policies = Policies {
        instance: &inst,
        models: Some(&models),
        forecast: &law,
        dispatch: cfg.dispatch,
        inner: cfg.inner_solver,
        factory: &factory,
    };
    let paths = draw_paths(&law, &factory, cfg.seeds.paths);
    let cmp = run_comparison(&policies, &paths, &Algorithm::ALL);

    let robust = run_robustness(&policies, &cfg.experiments.variances, cfg.seeds.paths, 1e-6).unwrap();
    let stress = run_bound_stress(&policies, &cfg.fvi, &[10000.0, 6000.0], &paths).unwrap();

    let mut runs: Vec<&Comparison> = vec![&cmp];
    runs.extend(stress.iter().map(|l| &l.comparison));
    let mut checked = 0;
    let mut violated = 0;
    let mut failures = 0;
    for c in &runs {
        let checks = c.sp_bound_checks(1e-6);
        checked += checks.len();
        violated += bound_failures(&checks);
        failures += c.failures().len();
    }
    let robust_ok = robust.points.iter().all(|p| p.sp_bound_holds);
    report.line(
        6,
        "hindsight lower bound",
        violated == 0 && failures == 0 && robust_ok,
        format!("{violated}/{checked} comparisons violated, {failures} failed runs, robustness sweep holds={robust_ok}"),
    );

    let mut energy: f64 = 0.0;
    let mut excursion: f64 = 0.0;
    let mut checked_against = vec![(&cmp, inst.clone())];
    for level in &stress {
        checked_against.push((&level.comparison, inst.with_upper_bound(level.upper).unwrap()));
    }
    for (c, bounded) in &checked_against {
        let (e, b) = c.completion_error(bounded);
        energy = energy.max(e);
        excursion = excursion.max(b);
    }
    report.line(
        7,
        "demand completion",
        energy <= 1e-6 && excursion <= 1e-6,
        format!("max energy gap {energy:.2e} kWh, max bound excursion {excursion:.2e} kWh"),
    );

    let adp = cmp.profits(Algorithm::Adp);
    let sp = cmp.profits(Algorithm::Sp);
    let fcfs = cmp.profits(Algorithm::Fcfs);
    let beats = adp
        .iter()
        .zip(&fcfs)
        .filter(|(a, f)| matches!((a, f), (Some(a), Some(f)) if a >= f))
        .count();
    let mut ratios: Vec<f64> = adp
        .iter()
        .zip(&sp)
        .filter_map(|(a, s)| Some(a.as_ref()? / s.as_ref()?))
        .collect();
    let ratio = if ratios.len() == paths.len() { median(&mut ratios) } else { f64::NAN };
    let med = |v: &[Option<f64>]| median(&mut v.iter().flatten().copied().collect::<Vec<_>>());
    report.line(
        8,
        "adp vs baselines",
        beats * 10 >= 9 * paths.len() && ratio >= 0.9 && train_secs <= 3600.0,
        format!(
            "adp >= fcfs on {beats}/{}, median adp/sp {ratio:.4}, medians adp {:.0} sp {:.0} fcfs {:.0}, training {train_secs:.1}s",
            paths.len(),
            med(&adp),
            med(&sp),
            med(&fcfs)
        ),
    );

    let change = robust.max_relative_change;
    let detail: Vec<String> = robust
        .points
        .iter()
        .map(|p| format!("var {} median {:.0}", p.variance, p.median_adp_profit))
        .collect();
    report.line(
        9,
        "robustness",
        robust_ok && change < 0.25,
        format!("{}, relative change {:.1}%", detail.join(", "), 100.0 * change),
    );

    let ample = &stress[0];
    let tight = &stress[1];
    let flags: usize = Algorithm::ALL.iter().map(|&a| tight.active_count(a)).sum();
    let (p_ample, p_tight) = (ample.median_profit(Algorithm::Adp), tight.median_profit(Algorithm::Adp));
    report.line(
        10,
        "bound stress",
        flags >= 1 && p_tight <= p_ample,
        format!(
            "d2=6000: {flags} active slots (adp {}, sp {}, fcfs {}), adp median {p_tight:.0} vs {p_ample:.0} at d2=10000 ({} active)",
            tight.active_count(Algorithm::Adp),
            tight.active_count(Algorithm::Sp),
            tight.active_count(Algorithm::Fcfs),
            Algorithm::ALL.iter().map(|&a| ample.active_count(a)).sum::<usize>()
        ),
    );
}

fn main() {
    let mut args = std::env::args().skip(1).filter(|a| !a.starts_with('-'));
    if args.next().is_some_and(|filter| !"acceptance".contains(&filter)) {
        return;
    }
    let started = Instant::now();
    let mut report = Report { failed: 0 };
    tiny_criteria(&mut report);
    lp_equivalence(&mut report);
    full_scale_criteria(&mut report);
    println!(
        "acceptance: {} of 10 criteria passed in {:.1}s",
        10 - report.failed,
        started.elapsed().as_secs_f64()
    );
    if report.failed > 0 {
        std::process::exit(1);
    }
}
