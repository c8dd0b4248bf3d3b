//! Check drivers behind the command-line subcommands. Each returns one
//! [`CheckReport`] per check and case; errors inside a check become failed
//! reports, so only configuration problems abort a run.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::connection::{
    curvature, curvature_fd, eom_residual, eom_residual_loop, radial_condition_residual, to_radial_gauge,
    transported_local_residual, ConnectionField, EndpointFd, Family,
};
use crate::holonomy::{
    adjoint_equivariance_check, mg_fd_extrapolated, mg_transport, t_map, AdjointReading, FdParams, TransportedCurvature,
};
use crate::jacobians::{
    area_formula_check, coarea_check, delta_limit_check, graph_case_check, relation_check, sylvester_sides, CoareaCase,
    GraphCase, GraphOptions,
};
use crate::liealg::{exp_map, orthonormal_basis, AlgebraElement, GroupElement};
use crate::loopgeom::{bump_deform, sample_loop, Curve, LoopMeasure, LoopPath, OpenPath};
use crate::loopspace::{
    action_identity_grid, form_difference, max_constraint_residual, negative_control_form, nonanticipation_residual,
    transversality_residual, ActionOptions,
};
use crate::pcm::{abelian_truncation, dof_audit, jacobian_constancy, two_sided_compare, TwoSidedOptions};
use crate::report::{timed, CheckReport, Metric};
use crate::stats::substream;
use crate::Result;

/// Subcommands of the driver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Kinematics,
    Action,
    Eom,
    Jacobians,
    Pcm,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Kinematics => "verify-kinematics",
            Command::Action => "verify-action",
            Command::Eom => "verify-eom",
            Command::Jacobians => "verify-jacobians",
            Command::Pcm => "verify-pcm",
            Command::All => "all",
        }
    }
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Vec<CheckReport>> {
    cfg.validate()?;
    Ok(match cmd {
        Command::Kinematics => cmd_verify_kinematics(cfg)?,
        Command::Action => cmd_verify_action(cfg)?,
        Command::Eom => cmd_verify_eom(cfg)?,
        Command::Jacobians => cmd_verify_jacobians(cfg)?,
        Command::Pcm => cmd_verify_pcm(cfg),
        Command::All => cmd_all(cfg)?,
    })
}

/// Independent seed per check, derived from the run seed.
fn seed_for(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Report or failure, so a broken check does not stop the others.
fn guarded<F>(check: &str, case: &str, anchor: &str, seed: u64, f: F) -> CheckReport
where
    F: FnOnce() -> Result<CheckReport>,
{
    f().unwrap_or_else(|e| CheckReport::errored(check, case, anchor, seed, &e))
}

fn random_points(seed: u64, count: usize, dim: usize, r: f64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, 0);
    (0..count).map(|_| (0..dim).map(|_| rng.random_range(-r..r)).collect()).collect()
}

fn measure(cfg: &RunConfig, dim: usize) -> Result<LoopMeasure> {
    LoopMeasure::new(cfg.measure.epsilon, cfg.measure.cutoff, vec![0.1; dim])
}

fn loops(cfg: &RunConfig, dim: usize, seed: u64, count: usize) -> Result<Vec<LoopPath>> {
    let m = measure(cfg, dim)?;
    Ok((0..count).map(|i| sample_loop(&m, &mut substream(seed, i as u64))).collect())
}

fn is_solution(f: Family) -> bool {
    matches!(f, Family::Zero | Family::AbelianConstantF | Family::MaxwellPolynomial)
}

const A_MG: &str = "loop variable equals transported curvature";
const A_TRANSVERSE: &str = "transversality of the loop variable";
const A_NONANT: &str = "nonanticipation of the loop variable";
const A_FLAT: &str = "zero-curvature constraint on loop space";
const A_TMAP: &str = "reconstruction map T inverts the loop variable";
const A_EQUIV: &str = "adjoint equivariance of T";
const A_RADIAL: &str = "radial gauge";
const A_ACTION: &str = "loop-space form of the classical action";
const A_EOM: &str = "equations of motion hold for any path";
const A_SYLV: &str = "Sylvester determinant theorem";
const A_AREA: &str = "area formula";
const A_COAREA: &str = "coarea formula";
const A_GRAPH: &str = "graph case of the Jacobian relation";
const A_RELATION: &str = "Jacobian relation between the two integrals";
const A_DELTA: &str = "delta-function limit of the constrained integral";
const A_DOF: &str = "principal chiral model degree-of-freedom count";
const A_CONST: &str = "constancy of Jg and Jh";
const A_TWO: &str = "relation between the two partition functions";
const A_ABEL: &str = "abelian truncation of the partition functions";

fn fd_params(cfg: &RunConfig) -> FdParams {
    let k = &cfg.kinematics;
    FdParams {
        h: k.fd_h,
        w: k.fd_width,
        levels: k.fd_levels,
        steps: k.fd_steps,
    }
}

/// mg_fd vs mg_transport, transversality, nonanticipation, the constraint
/// with its negative control, the T-map round trip, adjoint equivariance and
/// the radial gauge.
pub fn cmd_verify_kinematics(cfg: &RunConfig) -> Result<Vec<CheckReport>> {
    let conns = cfg.connections()?;
    let k = &cfg.kinematics;
    let fd = fd_params(cfg);
    let mut out = Vec::new();
    for (ci, (name, a)) in conns.iter().enumerate() {
        let d = a.dim();
        let seed = seed_for(cfg.seed, 100 + ci as u64);
        let paths = loops(cfg, d, seed, k.samples)?;

        out.extend(timed(|| {
            vec![guarded("mg_identity", name, A_MG, seed, || {
                let rows = (0..k.samples)
                    .into_par_iter()
                    .map(|i| -> Result<f64> {
                        let s = 0.15 + 0.7 * (i as f64 + 0.5) / k.samples as f64;
                        let mu = i % d;
                        let exact = mg_transport(a, &paths[i], s, k.transport_steps)?.values.swap_remove(mu);
                        let est = mg_fd_extrapolated(a, &paths[i], s, mu, &fd)?;
                        let diff = (&est - &exact).norm();
                        Ok(if diff == 0.0 { 0.0 } else { diff / exact.norm() })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let worst = rows.iter().copied().fold(0.0, f64::max);
                Ok(CheckReport::new(
                    "mg_identity",
                    name.as_str(),
                    A_MG,
                    seed,
                    vec![
                        Metric::below("max_relative_error", worst, cfg.tolerance("mg_relative")),
                        Metric::info("samples", k.samples as f64),
                    ],
                ))
            })]
        }));

        let form = TransportedCurvature {
            field: a,
            steps: k.fd_steps,
        };
        let grid: Vec<f64> = (1..20).map(|j| j as f64 / 20.0).collect();
        out.extend(timed(|| {
            vec![guarded("transversality", name, A_TRANSVERSE, seed, || {
                let worst = paths
                    .iter()
                    .map(|g| transversality_residual(&form, g, &grid))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold(0.0, f64::max);
                Ok(CheckReport::new(
                    "transversality",
                    name.as_str(),
                    A_TRANSVERSE,
                    seed,
                    vec![Metric::below("max_residual", worst, cfg.tolerance("transversality"))],
                ))
            })]
        }));

        out.extend(timed(|| {
            vec![guarded("nonanticipation", name, A_NONANT, seed, || {
                let s0 = 0.5;
                let early: Vec<f64> = (1..10).map(|j| j as f64 * 0.05).collect();
                let mut worst: f64 = 0.0;
                let mut after: f64 = 0.0;
                for g in &paths {
                    let g2 = bump_deform(g, 0.6, 0, 0.2, 0.1)?;
                    worst = worst.max(nonanticipation_residual(&form, g, &g2, s0, &early)?);
                    after = after.max(form_difference(&form, g, &g2, 0.58)?);
                }
                Ok(CheckReport::new(
                    "nonanticipation",
                    name.as_str(),
                    A_NONANT,
                    seed,
                    vec![
                        Metric::below("max_residual", worst, cfg.tolerance("nonanticipation")),
                        Metric::info("difference_after_split", after),
                    ],
                ))
            })]
        }));

        out.extend(timed(|| {
            vec![guarded("flatness_constraint", name, A_FLAT, seed, || {
                let r = max_constraint_residual(&form, &paths[0], 0.3, 0.72, &fd)?;
                Ok(CheckReport::new(
                    "flatness_constraint",
                    name.as_str(),
                    A_FLAT,
                    seed,
                    vec![Metric::below("max_residual", r, cfg.tolerance("constraint"))],
                ))
            })]
        }));

        if matches!(a.family(), Family::Zero | Family::AbelianConstantF | Family::RadialPolynomial) {
            out.extend(timed(|| vec![t_map_report(cfg, name, a, seed)]));
        }
        out.extend(timed(|| vec![equivariance_report(cfg, name, a, seed)]));
        if matches!(a.family(), Family::PolynomialRandom | Family::GaussianBump) {
            out.extend(timed(|| vec![radial_gauge_report(cfg, name, a, seed)]));
        }
    }

    let seed = seed_for(cfg.seed, 99);
    out.extend(timed(|| {
        vec![guarded("flatness_negative_control", "local_curvature_form", A_FLAT, seed, || {
            // order-one velocities: the violation scales with |γ̇|²
            let g = LoopPath::new(vec![0.1, -0.2], vec![vec![0.5, 0.2, -0.1], vec![-0.3, 0.4, 0.05]])?;
            let r = max_constraint_residual(&negative_control_form(), &g, 0.3, 0.72, &fd)?;
            Ok(CheckReport::new(
                "flatness_negative_control",
                "local_curvature_form",
                A_FLAT,
                seed,
                vec![Metric::above("max_residual", r, cfg.tolerance("negative_control"))],
            ))
        })]
    }));
    Ok(out)
}

fn t_map_report(cfg: &RunConfig, name: &str, a: &ConnectionField, seed: u64) -> CheckReport {
    guarded("t_map_round_trip", name, A_TMAP, seed, || {
        let k = &cfg.kinematics;
        let form = TransportedCurvature {
            field: a,
            steps: k.fd_steps,
        };
        let pts = random_points(seed, k.t_map_points, a.dim(), 0.8);
        let errors = k
            .quadrature_orders
            .iter()
            .map(|&q| {
                let per = pts
                    .par_iter()
                    .map(|x| -> Result<f64> {
                        let rec = t_map(&form, x, q)?;
                        let want = a.eval(x)?;
                        Ok(rec.iter().zip(&want).map(|(p, w)| (p - w).norm()).fold(0.0, f64::max))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok(per.into_iter().fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>>>()?;
        // increases above the roundoff floor
        let violations = errors.windows(2).filter(|w| w[1] > w[0] && w[1] > 1e-12).count();
        let tol = if a.family() == Family::RadialPolynomial {
            cfg.tolerance("t_map_radial")
        } else {
            cfg.tolerance("t_map_abelian")
        };
        let mut metrics = vec![
            Metric::below("max_error", *errors.last().unwrap_or(&f64::NAN), tol),
            Metric::below("monotonicity_violations", violations as f64, 1.0),
        ];
        for (q, e) in k.quadrature_orders.iter().zip(&errors) {
            metrics.push(Metric::info(format!("error_order_{q}"), *e));
        }
        Ok(CheckReport::new("t_map_round_trip", name, A_TMAP, seed, metrics))
    })
}

fn equivariance_report(cfg: &RunConfig, name: &str, a: &ConnectionField, seed: u64) -> CheckReport {
    guarded("adjoint_equivariance", name, A_EQUIV, seed, || {
        let k = &cfg.kinematics;
        let q = *k.quadrature_orders.last().unwrap_or(&16);
        let form = TransportedCurvature {
            field: a,
            steps: k.fd_steps,
        };
        let basis = orthonormal_basis(a.n());
        let on_loop = |gamma: &dyn Curve| -> Result<GroupElement> {
            let y = gamma.position(0.3);
            let mut x = basis[0].scale(0.7 + y[0]);
            x.axpy(1.1 * y[1 % y.len()], &basis[1]);
            exp_map(&x)
        };
        let g0 = exp_map(&AlgebraElement::from_coeffs(&basis[..2], &[0.4, -0.9]))?;
        let constant = move |_: &dyn Curve| -> Result<GroupElement> { Ok(g0.clone()) };
        let pts = random_points(seed, 3, a.dim(), 0.7);
        let (mut whole, mut c_whole, mut c_trunc, mut trunc) = (0f64, 0f64, 0f64, 0f64);
        for x in &pts {
            whole = whole.max(adjoint_equivariance_check(&form, &on_loop, x, AdjointReading::WholeLoop, q)?);
            c_whole = c_whole.max(adjoint_equivariance_check(&form, &constant, x, AdjointReading::WholeLoop, q)?);
            c_trunc = c_trunc.max(adjoint_equivariance_check(&form, &constant, x, AdjointReading::Truncated, q)?);
            trunc = trunc.max(adjoint_equivariance_check(&form, &on_loop, x, AdjointReading::Truncated, q)?);
        }
        let tol = cfg.tolerance("equivariance");
        Ok(CheckReport::new(
            "adjoint_equivariance",
            name,
            A_EQUIV,
            seed,
            vec![
                Metric::below("whole_loop_residual", whole, tol),
                Metric::below("constant_whole_loop_residual", c_whole, tol),
                Metric::below("constant_truncated_residual", c_trunc, tol),
                Metric::info("truncated_residual", trunc),
            ],
        ))
    })
}

fn radial_gauge_report(cfg: &RunConfig, name: &str, a: &ConnectionField, seed: u64) -> CheckReport {
    guarded("radial_gauge", name, A_RADIAL, seed, || {
        let g = to_radial_gauge(a, cfg.kinematics.gauge_steps)?;
        let pts = random_points(seed, 5, a.dim(), 0.8);
        let cond = radial_condition_residual(&g, &pts)?;
        let mut density: f64 = 0.0;
        for x in &pts {
            let f = curvature(a, x, None)?.density();
            let fg = curvature_fd(&g, x, 2e-4)?.density();
            density = density.max((f - fg).abs() / f.max(1.0));
        }
        let tol = cfg.tolerance("radial_gauge");
        Ok(CheckReport::new(
            "radial_gauge",
            name,
            A_RADIAL,
            seed,
            vec![
                Metric::below("radial_condition", cond, tol),
                Metric::below("density_change", density, tol),
            ],
        ))
    })
}

/// The MC action identity on the s-grid for every connection, plus the runs
/// with the wrong dimension factor.
pub fn cmd_verify_action(cfg: &RunConfig) -> Result<Vec<CheckReport>> {
    let conns = cfg.connections()?;
    let ac = &cfg.action;
    let opts = ActionOptions {
        steps: ac.steps,
        ..ActionOptions::default()
    };
    let mut out = Vec::new();
    for (ci, (name, a)) in conns.iter().enumerate() {
        let seed = seed_for(cfg.seed, 200 + ci as u64);
        out.extend(timed(|| {
            vec![guarded("action_identity", name, A_ACTION, seed, || {
                let m = measure(cfg, a.dim())?;
                let est = action_identity_grid(a, &m, &ac.s_grid, ac.n_samples, seed, &opts)?;
                let tol = cfg.tolerance("action_sigma");
                let mut metrics = Vec::new();
                let mut underpowered = false;
                for e in &est {
                    metrics.push(Metric::below(format!("z_s{}", e.s), e.z(), tol));
                    metrics.push(Metric::info(format!("lhs_s{}", e.s), e.lhs_mean).with_stderr(e.lhs_stderr));
                    metrics.push(Metric::info(format!("rhs_s{}", e.s), e.rhs_mean).with_stderr(e.rhs_stderr));
                    let rel = if e.rhs_mean == 0.0 && e.combined_stderr() == 0.0 {
                        0.0
                    } else {
                        e.combined_stderr() / e.rhs_mean.abs()
                    };
                    underpowered |= e.n_samples < ac.min_samples || rel > ac.max_relative_stderr;
                }
                Ok(CheckReport::new("action_identity", name.as_str(), A_ACTION, seed, metrics).inconclusive_if(underpowered))
            })]
        }));
    }
    for (wi, name) in ac.wrong_dimension.iter().enumerate() {
        let seed = seed_for(cfg.seed, 300 + wi as u64);
        let a = conns.iter().find(|(n, _)| n == name).map(|(_, a)| a).expect("validated");
        out.extend(timed(|| {
            vec![guarded("action_wrong_dimension", name, A_ACTION, seed, || {
                let m = measure(cfg, a.dim())?;
                let wrong = ActionOptions {
                    dimension_factor: Some(a.dim() as f64 - 1.0),
                    ..opts.clone()
                };
                let est = action_identity_grid(a, &m, &ac.s_grid, ac.n_samples, seed, &wrong)?;
                let zmin = est.iter().map(|e| e.z()).fold(f64::INFINITY, f64::min);
                let mut metrics = vec![Metric::above("min_z", zmin, cfg.tolerance("wrong_dimension_sigma"))];
                metrics.extend(est.iter().map(|e| Metric::info(format!("z_s{}", e.s), e.z())));
                Ok(CheckReport::new("action_wrong_dimension", name.as_str(), A_ACTION, seed, metrics))
            })]
        }));
    }
    Ok(out)
}

/// Local residuals for solutions and non-solutions, and the loop-form
/// residual against the transported local one.
pub fn cmd_verify_eom(cfg: &RunConfig) -> Result<Vec<CheckReport>> {
    let conns = cfg.connections()?;
    let ec = &cfg.eom;
    let mut out = Vec::new();
    for (ci, (name, a)) in conns.iter().enumerate() {
        let seed = seed_for(cfg.seed, 400 + ci as u64);
        let solution = is_solution(a.family());
        out.extend(timed(|| {
            vec![guarded("eom_local", name, A_EOM, seed, || {
                let pts = random_points(seed, ec.points, a.dim(), 0.8);
                let mut worst: f64 = 0.0;
                for x in &pts {
                    let r = eom_residual(a, x, ec.fd_step)?;
                    worst = worst.max(r.iter().map(AlgebraElement::norm).fold(0.0, f64::max));
                }
                let metric = if solution {
                    Metric::below("max_residual", worst, cfg.tolerance("eom_solution"))
                } else {
                    Metric::above("max_residual", worst, cfg.tolerance("eom_control"))
                };
                let role = Metric::info("expected_nonzero", if solution { 0.0 } else { 1.0 });
                Ok(CheckReport::new("eom_local", name.as_str(), A_EOM, seed, vec![metric, role]))
            })]
        }));
        out.extend(timed(|| {
            vec![guarded("eom_cross", name, A_EOM, seed, || {
                let fd = EndpointFd::default();
                let ends = random_points(seed ^ 1, 2 * ec.paths, a.dim(), 0.6);
                let rows = (0..ec.paths)
                    .into_par_iter()
                    .map(|i| -> Result<(f64, f64)> {
                        let path = OpenPath::straight(&ends[2 * i], &ends[2 * i + 1])?;
                        let lf = eom_residual_loop(a, &path, &fd)?;
                        let loc = transported_local_residual(a, &path, 1e-4, fd.steps)?;
                        Ok((lf.norm(), (&lf - &loc).norm() / loc.norm().max(f64::MIN_POSITIVE)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let loop_max = rows.iter().map(|r| r.0).fold(0.0, f64::max);
                let rel = rows.iter().map(|r| r.1).fold(0.0, f64::max);
                let metrics = if solution {
                    vec![Metric::below("max_loop_residual", loop_max, cfg.tolerance("eom_solution"))]
                } else {
                    vec![
                        Metric::below("max_relative_difference", rel, cfg.tolerance("eom_cross")),
                        Metric::info("max_loop_residual", loop_max),
                    ]
                };
                Ok(CheckReport::new("eom_cross", name.as_str(), A_EOM, seed, metrics))
            })]
        }));
    }
    Ok(out)
}

/// Sylvester identity, area and coarea formulas, graph cases, the relation
/// between the two integrals and the delta-function exponents over the
/// configured catalog.
pub fn cmd_verify_jacobians(cfg: &RunConfig) -> Result<Vec<CheckReport>> {
    let jc = &cfg.jacobians;
    let geoms = jc.geometries()?;
    let mut out = Vec::new();

    let seed = seed_for(cfg.seed, 500);
    out.extend(timed(|| {
        let mut rng = substream(seed, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..jc.sylvester_matrices {
            let (r, c) = (rng.random_range(1..=8usize), rng.random_range(1..=5usize));
            let m = nalgebra::DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
            let (l, rr) = sylvester_sides(&m);
            worst = worst.max((l - rr).abs() / l.abs().max(rr.abs()).max(1.0));
        }
        vec![CheckReport::new(
            "sylvester",
            "random_up_to_8x5",
            A_SYLV,
            seed,
            vec![
                Metric::below("max_relative_error", worst, cfg.tolerance("sylvester")),
                Metric::info("matrices", jc.sylvester_matrices as f64),
            ],
        )]
    }));

    for (gi, g) in geoms.iter().enumerate() {
        let Some((g1, g2)) = &g.area_charts else { continue };
        for (fi, f) in g.integrands.iter().enumerate() {
            let seed = seed_for(cfg.seed, 510 + 16 * gi as u64 + fi as u64);
            let case = format!("{}:{}", g.name, f.source());
            out.extend(timed(|| {
                vec![guarded("area_formula", &case, A_AREA, seed, || {
                    let r = area_formula_check(f, g1, g2, jc.area_samples, seed)?;
                    let tol = cfg.tolerance("area_sigma");
                    Ok(CheckReport::new(
                        "area_formula",
                        case.as_str(),
                        A_AREA,
                        seed,
                        vec![
                            Metric::below("z_routed", r.z_routed, tol),
                            Metric::below("z_hausdorff", r.z_hausdorff, tol),
                            Metric::info("direct", r.direct.mean).with_stderr(r.direct.stderr),
                            Metric::info("routed", r.routed.mean).with_stderr(r.routed.stderr),
                        ],
                    ))
                })]
            }));
        }
    }

    for (i, case) in [CoareaCase::radial(), CoareaCase::linear([0.6, -1.3])].iter().enumerate() {
        let seed = seed_for(cfg.seed, 600 + i as u64);
        let label = case.name.clone();
        out.extend(timed(|| {
            vec![guarded("coarea", &label, A_COAREA, seed, || {
                let r = coarea_check(case, &jc.coarea_schedule, jc.coarea_samples, seed)?;
                let tol = cfg.tolerance("coarea_sigma");
                let mut metrics = Vec::new();
                for l in &r.levels {
                    metrics.push(Metric::below(format!("z_eps{}", l.eps), l.z, tol));
                    if let Some(z) = l.oracle_z {
                        metrics.push(Metric::below(format!("oracle_z_eps{}", l.eps), z, tol));
                    }
                }
                Ok(CheckReport::new("coarea", label.as_str(), A_COAREA, seed, metrics))
            })]
        }));
    }

    let mut graphs = vec![(GraphCase::parabola(), 1e-3)];
    for (n, m) in [(1, 1), (2, 1), (2, 2), (1, 3)] {
        // linear maps: central differences are exact at any step
        graphs.push((GraphCase::random_linear(n, m, 40 + n as u64), 0.5));
    }
    for (i, (case, step)) in graphs.iter().enumerate() {
        let seed = seed_for(cfg.seed, 700 + i as u64);
        out.extend(timed(|| {
            vec![guarded("graph_case", &case.name, A_GRAPH, seed, || {
                let tol = cfg.tolerance("graph");
                let opts = GraphOptions {
                    n_samples: jc.graph_samples,
                    seed,
                    fd_step: *step,
                    tolerance: tol,
                    ..GraphOptions::default()
                };
                let r = graph_case_check(case, &opts)?;
                let max = |f: fn(&crate::jacobians::GraphCasePoint) -> f64| r.points.iter().map(f).fold(0.0, f64::max);
                let mut metrics = vec![
                    Metric::below("sylvester_error", max(|p| p.sylvester_error), tol),
                    Metric::below("jacobian_error", max(|p| p.jacobian_error), tol),
                    Metric::below("derivative_error", max(|p| p.derivative_error), tol),
                ];
                for ratio in &r.ratios {
                    metrics.push(
                        Metric::below(format!("ratio_z:{}", ratio.integrand), ratio.z, cfg.tolerance("relation_sigma"))
                            .with_stderr(ratio.stderr),
                    );
                }
                Ok(CheckReport::new("graph_case", case.name.as_str(), A_GRAPH, seed, metrics))
            })]
        }));
    }

    for (gi, g) in geoms.iter().enumerate() {
        let seed = seed_for(cfg.seed, 800 + gi as u64);
        out.extend(timed(|| {
            vec![guarded("relation", &g.name, A_RELATION, seed, || {
                let spread_tol = cfg.tolerance("relation_spread");
                let r = relation_check(g, &jc.relation_schedule, jc.relation_samples, seed, spread_tol)?;
                let zmax = r.extrapolated.iter().map(|x| x.z).fold(0.0, f64::max);
                let last = r.levels.last().expect("nonempty schedule");
                let mut metrics = vec![
                    Metric::below("max_z", zmax, cfg.tolerance("relation_sigma")),
                    Metric::below("spread_smallest_eps", last.spread, spread_tol),
                    Metric::info("normalization", last.normalization.value).with_stderr(last.normalization.stderr),
                    Metric::info("integrands", r.extrapolated.len() as f64),
                ];
                for l in &r.levels {
                    metrics.push(Metric::info(format!("spread_eps{}", l.eps), l.spread));
                }
                Ok(CheckReport::new("relation", g.name.as_str(), A_RELATION, seed, metrics))
            })]
        }));
    }

    for (gi, g) in geoms.iter().enumerate() {
        let seed = seed_for(cfg.seed, 900 + gi as u64);
        out.extend(timed(|| {
            vec![guarded("delta_limit", &g.name, A_DELTA, seed, || {
                let r = delta_limit_check(g, &jc.delta_schedule, jc.delta_samples, seed)?;
                let tol = cfg.tolerance("delta_exponent");
                let mut metrics = vec![Metric::info("expected", r.expected)];
                if let (Some(e), Some(raw)) = (r.exponent, r.raw_exponent) {
                    metrics.push(Metric::below("exponent_error", (e.0 - r.expected).abs(), tol).with_stderr(e.1));
                    metrics.push(Metric::below("raw_exponent_error", (raw.0 - r.expected).abs(), tol).with_stderr(raw.1));
                }
                Ok(CheckReport::new("delta_limit", g.name.as_str(), A_DELTA, seed, metrics).inconclusive_if(r.inconclusive))
            })]
        }));
    }
    Ok(out)
}

/// Degree-of-freedom audit, Jacobian constancy, the two-sided partition
/// function comparison and the abelian truncation.
pub fn cmd_verify_pcm(cfg: &RunConfig) -> Vec<CheckReport> {
    let pc = &cfg.pcm;
    let mut out = Vec::new();
    let seed = seed_for(cfg.seed, 1000);
    out.extend(timed(|| {
        let mut metrics = Vec::new();
        for &l in &pc.dof_sizes {
            for &n in &pc.dof_n {
                let a = dof_audit(l, n);
                let gap = (a.link_dof as f64 - a.constraint_dof as f64) - a.field_dof as f64;
                metrics.push(Metric::below(format!("mismatch_L{l}_N{n}"), gap.abs(), 0.5));
                metrics.push(Metric::info(format!("field_dof_L{l}_N{n}"), a.field_dof as f64));
            }
        }
        vec![CheckReport::new("dof_audit", "open_lattice", A_DOF, seed, metrics)]
    }));

    let seed = seed_for(cfg.seed, 1001);
    let case = format!("L{}_N{}", pc.jacobian_size, pc.n);
    out.extend(timed(|| {
        vec![guarded("jacobian_constancy", &case, A_CONST, seed, || {
            let r = jacobian_constancy(pc.jacobian_size, pc.n, pc.n_configs, pc.coupling, seed)?;
            let tol = cfg.tolerance("jacobian_spread");
            Ok(CheckReport::new(
                "jacobian_constancy",
                case.as_str(),
                A_CONST,
                seed,
                vec![
                    Metric::below("jg_relative_spread", r.jg.relative, tol),
                    Metric::below("jh_relative_spread", r.jh.relative, tol),
                    Metric::info("jg_mean", r.jg.mean),
                    Metric::info("jh_mean", r.jh.mean),
                    Metric::info("jg_identity", r.jg_identity),
                    Metric::info("jg_flat_relative_spread", r.jg_flat.relative),
                    Metric::info("rank", r.rank as f64),
                    Metric::info("configs", r.n_configs as f64),
                ],
            ))
        })]
    }));

    let seed = seed_for(cfg.seed, 1002);
    let case = format!("L{}_N{}", pc.size, pc.n);
    out.extend(timed(|| {
        vec![guarded("two_sided", &case, A_TWO, seed, || {
            let opts = TwoSidedOptions {
                proposal_width: pc.proposal_width,
                min_ess: pc.min_ess,
            };
            let r = two_sided_compare(pc.size, pc.n, &pc.epsilon_schedule, pc.n_samples, seed, &opts)?;
            let tol = cfg.tolerance("two_sided_sigma");
            let label = |o: &crate::pcm::ObservableRatio| serde_json::to_value(o.observable).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let mut metrics = vec![Metric::below("constant_z", r.constant.z, tol).with_stderr(r.constant.stderr)];
            for o in &r.extrapolated {
                metrics.push(Metric::below(format!("z:{}", label(o)), o.z, tol).with_stderr(o.stderr));
            }
            metrics.push(Metric::info("constant", r.constant.value));
            metrics.push(Metric::info("lhs_ess", r.lhs_ess));
            for lv in &r.levels {
                metrics.push(Metric::info(format!("ess_eps{}", lv.eps), lv.ess));
                let spread = lv.normalized.iter().map(|o| (o.value - 1.0).abs()).fold(0.0, f64::max);
                metrics.push(Metric::info(format!("raw_spread_eps{}", lv.eps), spread));
            }
            Ok(CheckReport::new("two_sided", case.as_str(), A_TWO, seed, metrics).inconclusive_if(r.inconclusive))
        })]
    }));

    for &l in &pc.abelian_sizes {
        let case = format!("L{l}");
        out.extend(timed(|| {
            vec![guarded("abelian_truncation", &case, A_ABEL, cfg.seed, || {
                let tol = cfg.tolerance("abelian_truncation");
                let r = abelian_truncation(l, &pc.abelian_schedule, tol)?;
                Ok(CheckReport::new(
                    "abelian_truncation",
                    case.as_str(),
                    A_ABEL,
                    cfg.seed,
                    vec![
                        Metric::below("max_error", r.max_error, tol),
                        Metric::info("limit_closed", r.limit_closed),
                        Metric::info("operator_error", r.operator_error),
                    ],
                ))
            })]
        }));
    }
    out
}

pub fn cmd_all(cfg: &RunConfig) -> Result<Vec<CheckReport>> {
    let mut out = cmd_verify_kinematics(cfg)?;
    out.extend(cmd_verify_action(cfg)?);
    out.extend(cmd_verify_eom(cfg)?);
    out.extend(cmd_verify_jacobians(cfg)?);
    out.extend(cmd_verify_pcm(cfg));
    Ok(out)
}
