//! Acceptance suite on the committed default configuration. Prints one line
//! per criterion and exits nonzero if any fails. Thresholds are pinned here,
//! independent of the configured tolerances.

use std::process::ExitCode;
use std::time::Instant;

use mgloop::suite::{cmd_all, cmd_verify_action, cmd_verify_eom, cmd_verify_jacobians, cmd_verify_kinematics, cmd_verify_pcm};
use mgloop::{CheckReport, RunConfig, Status};

struct Outcome {
    failures: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { failures: Vec::new() }
    }

    fn require(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn value(&mut self, r: &CheckReport, metric: &str) -> f64 {
        match r.metric(metric) {
            Some(m) => m.value,
            None => {
                self.failures.push(format!("{}[{}] has no metric {metric}", r.check, r.case));
                f64::NAN
            }
        }
    }

    /// Gated metric strictly below `tol`.
    fn below(&mut self, r: &CheckReport, metric: &str, tol: f64) {
        let v = self.value(r, metric);
        self.require(v < tol, || format!("{}[{}] {metric} = {v:e}, need < {tol:e}", r.check, r.case));
    }

    fn above(&mut self, r: &CheckReport, metric: &str, tol: f64) {
        let v = self.value(r, metric);
        self.require(v > tol, || format!("{}[{}] {metric} = {v:e}, need > {tol:e}", r.check, r.case));
    }

    fn passed(&mut self, r: &CheckReport) {
        self.require(r.status == Status::Pass && r.error.is_none(), || {
            format!("{}[{}] status {} {}", r.check, r.case, r.status.as_str(), r.error.clone().unwrap_or_default())
        });
    }

    fn runtime(&mut self, label: &str, secs: f64, limit: f64) {
        self.require(secs < limit, || format!("{label} took {secs:.1} s, limit {limit} s"));
    }
}

fn select<'a>(reports: &'a [CheckReport], check: &str) -> Vec<&'a CheckReport> {
    reports.iter().filter(|r| r.check == check).collect()
}

/// `(D, N)` from a connection name such as `poly_d3_n2`.
fn dims(case: &str) -> Option<(usize, usize)> {
    let mut d = None;
    let mut n = None;
    for part in case.split('_') {
        if let Some(v) = part.strip_prefix('d') {
            d = v.parse().ok();
        }
        if let Some(v) = part.strip_prefix('n') {
            n = v.parse().ok();
        }
    }
    Some((d?, n?))
}

fn criterion_1(reports: &[CheckReport], secs: f64) -> Outcome {
    let mut o = Outcome::new();
    let rows = select(reports, "mg_identity");
    for family in ["zero", "abelian", "poly"] {
        let fam: Vec<_> = rows.iter().filter(|r| r.case.starts_with(family)).collect();
        for d in [2, 3] {
            o.require(fam.iter().any(|r| dims(&r.case).is_some_and(|x| x.0 == d)), || format!("{family}: no D = {d} case"));
        }
        for n in [2, 3] {
            o.require(fam.iter().any(|r| dims(&r.case).is_some_and(|x| x.1 == n)), || format!("{family}: no N = {n} case"));
        }
    }
    for r in rows {
        o.passed(r);
        o.below(r, "max_relative_error", 1e-3);
        let samples = o.value(r, "samples");
        o.require(samples >= 5.0, || format!("mg_identity[{}] only {samples} samples", r.case));
    }
    o.runtime("kinematics", secs, 120.0);
    o
}

fn criterion_2(reports: &[CheckReport]) -> Outcome {
    let mut o = Outcome::new();
    let tr = select(reports, "transversality");
    let na = select(reports, "nonanticipation");
    o.require(!tr.is_empty() && !na.is_empty(), || "missing reports".into());
    for r in tr {
        o.passed(r);
        o.below(r, "max_residual", 1e-12);
    }
    for r in na {
        o.passed(r);
        o.below(r, "max_residual", 1e-8);
    }
    o
}

fn criterion_3(reports: &[CheckReport]) -> Outcome {
    let mut o = Outcome::new();
    let fl = select(reports, "flatness_constraint");
    let neg = select(reports, "flatness_negative_control");
    o.require(!fl.is_empty() && !neg.is_empty(), || "missing reports".into());
    for r in fl {
        o.passed(r);
        o.below(r, "max_residual", 1e-3);
    }
    for r in neg {
        o.passed(r);
        o.above(r, "max_residual", 1e-2);
    }
    o
}

fn criterion_4(cfg: &RunConfig, reports: &[CheckReport]) -> Outcome {
    let mut o = Outcome::new();
    o.require(cfg.kinematics.t_map_points >= 20, || format!("{} points", cfg.kinematics.t_map_points));
    let rows = select(reports, "t_map_round_trip");
    let mut families = (0, 0);
    for r in rows {
        o.passed(r);
        if r.case.starts_with("abelian") {
            families.0 += 1;
            o.below(r, "max_error", 1e-8);
        } else if r.case.starts_with("radial") {
            families.1 += 1;
            o.below(r, "max_error", 1e-4);
        }
        let errors: Vec<f64> = r.metrics.iter().filter(|m| m.name.starts_with("error_order_")).map(|m| m.value).collect();
        o.require(errors.len() >= 3, || format!("t_map[{}] has {} refinement levels", r.case, errors.len()));
        // nonincreasing once above the roundoff floor
        let ok = errors.windows(2).all(|w| w[1] <= w[0] || w[1] <= 1e-12);
        o.require(ok, || format!("t_map[{}] errors not monotone: {errors:?}", r.case));
    }
    o.require(families.0 > 0 && families.1 > 0, || format!("abelian/radial cases: {families:?}"));
    o
}

fn criterion_5(cfg: &RunConfig, reports: &[CheckReport], secs: f64) -> Outcome {
    let mut o = Outcome::new();
    o.require(cfg.action.n_samples >= 10_000, || format!("{} samples", cfg.action.n_samples));
    o.require(cfg.action.s_grid.len() >= 5, || format!("{} grid points", cfg.action.s_grid.len()));
    let rows = select(reports, "action_identity");
    for d in [2, 3] {
        o.require(rows.iter().any(|r| dims(&r.case).is_some_and(|x| x.0 == d)), || format!("no D = {d} family"));
    }
    for r in rows {
        o.passed(r);
        let zs: Vec<_> = r.metrics.iter().filter(|m| m.name.starts_with("z_s")).collect();
        o.require(zs.len() == cfg.action.s_grid.len(), || format!("action[{}] {} z values", r.case, zs.len()));
        for m in zs {
            o.require(m.value < 3.0, || format!("action[{}] {} = {}", r.case, m.name, m.value));
        }
    }
    let wrong = select(reports, "action_wrong_dimension");
    o.require(!wrong.is_empty(), || "no wrong-dimension run".into());
    for r in wrong {
        o.passed(r);
        o.above(r, "min_z", 5.0);
    }
    o.runtime("action", secs, 300.0);
    o
}

fn criterion_6(reports: &[CheckReport]) -> Outcome {
    let mut o = Outcome::new();
    let local = select(reports, "eom_local");
    let mut solutions = 0;
    for r in local {
        o.passed(r);
        if o.value(r, "expected_nonzero") == 0.0 {
            solutions += 1;
            o.below(r, "max_residual", 1e-6);
        }
    }
    o.require(solutions > 0, || "no solution family".into());
    let cross = select(reports, "eom_cross");
    o.require(!cross.is_empty(), || "no cross check".into());
    for r in cross {
        o.passed(r);
        if r.metric("max_relative_difference").is_some() {
            o.below(r, "max_relative_difference", 1e-3);
        } else {
            o.below(r, "max_loop_residual", 1e-6);
        }
    }
    o
}

fn criterion_7(reports: &[CheckReport], secs: f64) -> Outcome {
    let mut o = Outcome::new();
    let syl = select(reports, "sylvester");
    o.require(syl.len() == 1, || "no sylvester report".into());
    for r in syl {
        o.passed(r);
        o.below(r, "max_relative_error", 1e-12);
        let m = o.value(r, "matrices");
        o.require(m >= 100.0, || format!("{m} matrices"));
    }
    let graphs = select(reports, "graph_case");
    o.require(!graphs.is_empty(), || "no graph cases".into());
    for r in graphs {
        o.passed(r);
        o.below(r, "jacobian_error", 1e-8);
        o.below(r, "sylvester_error", 1e-8);
    }
    let rel = select(reports, "relation");
    let submersion = rel.iter().any(|r| !r.case.contains("padded"));
    let constant_rank = rel.iter().any(|r| r.case.contains("padded"));
    o.require(submersion && constant_rank, || "need submersion and constant-rank geometries".into());
    for r in rel {
        o.passed(r);
        o.below(r, "max_z", 3.0);
        let k = o.value(r, "integrands");
        o.require(k >= 5.0, || format!("relation[{}] {k} integrands", r.case));
    }
    let delta = select(reports, "delta_limit");
    o.require(!delta.is_empty(), || "no delta-limit reports".into());
    for r in delta {
        o.passed(r);
        o.below(r, "exponent_error", 0.05);
    }
    o.runtime("jacobians", secs, 180.0);
    o
}

fn criterion_8(cfg: &RunConfig, reports: &[CheckReport], secs: f64) -> Outcome {
    let mut o = Outcome::new();
    let pc = &cfg.pcm;
    for r in select(reports, "dof_audit") {
        o.passed(r);
        for l in 2..=4 {
            o.below(r, &format!("mismatch_L{l}_N2"), 0.5);
        }
    }
    let jc = select(reports, "jacobian_constancy");
    o.require(jc.len() == 1 && jc[0].case == "L3_N2", || "need one 3×3 SU(2) constancy run".into());
    for r in jc {
        o.passed(r);
        o.below(r, "jg_relative_spread", 1e-6);
        o.below(r, "jh_relative_spread", 1e-6);
        let n = o.value(r, "configs");
        o.require(n >= 50.0, || format!("{n} configs"));
    }
    o.require(pc.size == 2 && pc.n == 2, || "two-sided run is not 2×2 SU(2)".into());
    o.require(pc.n_samples >= 1_000_000, || format!("{} samples", pc.n_samples));
    let eps = &pc.epsilon_schedule;
    o.require(eps.iter().any(|&e| (e - 1e-2).abs() < 1e-15), || format!("schedule {eps:?} lacks 1e-2"));
    o.require(eps.windows(2).all(|w| (w[1] / w[0] - 0.5).abs() < 1e-12), || format!("schedule {eps:?} is not halving"));
    let two = select(reports, "two_sided");
    o.require(two.len() == 1, || "no two-sided report".into());
    for r in two {
        o.passed(r);
        for m in r.metrics.iter().filter(|m| m.tolerance.is_some()) {
            o.require(m.value < 3.0, || format!("two_sided {} = {}", m.name, m.value));
        }
    }
    let ab = select(reports, "abelian_truncation");
    o.require(!ab.is_empty(), || "no abelian truncation".into());
    for r in ab {
        o.passed(r);
        o.below(r, "max_error", 1e-3);
    }
    o.runtime("pcm", secs, 600.0);
    o
}

fn stripped_json(reports: &[CheckReport]) -> Vec<String> {
    reports
        .iter()
        .map(|r| serde_json::to_string(&r.without_timing()).expect("serialize"))
        .collect()
}

fn criterion_9(first: &[CheckReport], second: &[CheckReport]) -> Outcome {
    let mut o = Outcome::new();
    let (a, b) = (stripped_json(first), stripped_json(second));
    o.require(a.len() == b.len(), || format!("{} vs {} reports", a.len(), b.len()));
    if let Some((i, _)) = a.iter().zip(&b).enumerate().find(|(_, (x, y))| x != y) {
        o.failures.push(format!("report {i} differs: {} [{}]", first[i].check, first[i].case));
    }
    o
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let cfg = RunConfig::default_config();
    cfg.validate().expect("default config validates");

    let (kin, t_kin) = timed(|| cmd_verify_kinematics(&cfg).expect("kinematics"));
    let (act, t_act) = timed(|| cmd_verify_action(&cfg).expect("action"));
    let (eom, _) = timed(|| cmd_verify_eom(&cfg).expect("eom"));
    let (jac, t_jac) = timed(|| cmd_verify_jacobians(&cfg).expect("jacobians"));
    let (pcm, t_pcm) = timed(|| cmd_verify_pcm(&cfg));

    let first: Vec<CheckReport> = [&kin, &act, &eom, &jac, &pcm].into_iter().flatten().cloned().collect();
    let second = cmd_all(&cfg).expect("all");

    let results = [
        ("1 loop variable identity (rel < 1e-3, < 2 min)", criterion_1(&kin, t_kin)),
        ("2 transversality < 1e-12, nonanticipation < 1e-8", criterion_2(&kin)),
        ("3 constraint < 1e-3, negative control > 1e-2", criterion_3(&kin)),
        ("4 T round trip (abelian < 1e-8, radial < 1e-4, monotone)", criterion_4(&cfg, &kin)),
        ("5 action identity < 3 sigma, wrong D > 5 sigma, < 5 min", criterion_5(&cfg, &act, t_act)),
        ("6 EOM residual < 1e-6, cross agreement < 1e-3", criterion_6(&eom)),
        ("7 Jacobian lab, < 3 min", criterion_7(&jac, t_jac)),
        ("8 PCM, < 10 min", criterion_8(&cfg, &pcm, t_pcm)),
        ("9 reproducible metrics across runs", criterion_9(&first, &second)),
    ];

    let mut all_ok = true;
    for (label, o) in &results {
        let ok = o.failures.is_empty();
        all_ok &= ok;
        println!("criterion {label}: {}", if ok { "PASS" } else { "FAIL" });
        for f in &o.failures {
            println!("    {f}");
        }
    }
    println!(
        "timings: kinematics {t_kin:.1} s, action {t_act:.1} s, jacobians {t_jac:.1} s, pcm {t_pcm:.1} s"
    );
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
