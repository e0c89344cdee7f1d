use asymdiag::asympt::{check_conditions, first_admissible_magnitude, sweep, FrameBudget, ParamFamily, Side};
use asymdiag::bvp::{boundary_residual, check_dichotomy, solve_contraction, solve_direct, BvpProblem, ContractionParams};
use asymdiag::companion::{residual_check, sector_permutation, verify_asymptotics, CompanionSpec};
use asymdiag::frame::{build_transformer, Atom, Partition, PiFrame, SpectralAtoms, TransformerOptions};
use asymdiag::gridfn::{OperatorFn, DEFAULT_INTERVALS};
use asymdiag::linalg::{CMatrix, CVector};
use asymdiag::selftest::{self, SelftestConfig};
use asymdiag::testkit;
use rayon::prelude::*;

use crate::config::{self, RunConfig, DEFAULT_TOLERANCE};
use crate::table::{num, Table};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Contraction solve checked against the direct solve.
    Bvp,
    /// Transformer of a frame and its bound report.
    Frame,
    /// Magnitude sweep of a parameter family.
    Family,
    /// Birkhoff asymptotics of a companion system.
    Companion,
    /// The full verification suite.
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Bvp => "bvp",
            Command::Frame => "frame",
            Command::Family => "family",
            Command::Companion => "companion",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub tables: Vec<Table>,
    /// Bound violations and failed checks; fatal under `--strict`.
    pub warnings: Vec<String>,
    /// Human-readable summary lines for stdout.
    pub summary: Vec<String>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    if let Some(c) = &cfg.command {
        if c != command.name() {
            return Err(CliError::Config(format!("config is for `{c}`, not `{}`", command.name())));
        }
    }
    match command {
        Command::Bvp => run_bvp(cfg),
        Command::Frame => run_frame(cfg),
        Command::Family => run_family(cfg),
        Command::Companion => run_companion(cfg),
        Command::Selftest => Ok(run_selftest(cfg)),
    }
}

fn missing(block: &str) -> CliError {
    CliError::Config(format!("config has no `{block}` block"))
}

fn slack(cfg: &RunConfig) -> f64 {
    cfg.slack.unwrap_or(asymdiag::frame::DEFAULT_SLACK)
}

fn side_name(s: Side) -> String {
    match s {
        Side::Left => "left".into(),
        Side::Right => "right".into(),
    }
}

fn run_bvp(cfg: &RunConfig) -> Result<Report, CliError> {
    let block = cfg.bvp.as_ref().ok_or_else(|| missing("bvp"))?;
    let n = cfg.grid_or(DEFAULT_INTERVALS);
    let tol = cfg.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    let (problem, v, mut params) = if block.random {
        let inst = testkit::random_contraction_instance(&mut testkit::seeded_rng(cfg.seed.unwrap_or(0)), n);
        (inst.problem, inst.v, inst.params)
    } else {
        let need = |x: &Option<_>, what: &str| x.clone().ok_or_else(|| CliError::Config(format!("bvp.{what} is required")));
        let a = config::operator_fn(&need(&block.a, "a")?, n, "bvp.a")?;
        let dim = a.first().dim();
        let v = match &block.v {
            Some(rows) => config::operator_fn(rows, n, "bvp.v")?,
            None => OperatorFn::constant(n, CMatrix::zeros(dim))?,
        };
        let f = block.f.as_ref().map(|f| config::vector_fn(f, n, "bvp.f")).transpose()?;
        let p = config::const_matrix(&need(&block.p, "p")?, "bvp.p")?;
        let xi = block.xi.as_ref().ok_or_else(|| CliError::Config("bvp.xi is required".into()))?;
        let xi = config::const_vector(xi, "bvp.xi")?;
        let problem = BvpProblem::new(a, f, p, xi)?;
        let gamma = match block.gamma {
            Some(g) => g,
            None => (0.95 * (-check_dichotomy(&problem.a, &problem.p, 0.5)?.worst).exp()).min(0.95),
        };
        let theta = block.theta.unwrap_or_else(|| (v.norm_l1() / gamma).max(1e-3));
        (problem, v, ContractionParams::new(gamma, theta))
    };
    params.tol = tol;
    let res = solve_contraction(&problem, &v, params)?;
    let full = problem.with_coefficient(problem.a.add(&v))?;
    let oracle = solve_direct(&full)?;
    let oracle_gap = res.x.sub(&oracle).norm_c();
    let residual = boundary_residual(&full, &res.x);

    let mut report = Report::default();
    let mut t = Table::new(
        "bvp_report",
        &["iterations", "gamma", "theta", "contraction_factor", "gap", "gap_bound", "oracle_gap", "boundary_residual"],
    );
    t.push(vec![
        res.iterations.to_string(),
        num(params.gamma),
        num(params.theta),
        num(res.contraction_factor),
        num(res.gap),
        num(res.gap_bound),
        num(oracle_gap),
        num(residual),
    ]);
    report.tables.push(t);

    let dim = problem.dim();
    let mut header = vec!["t".to_string()];
    for i in 0..dim {
        header.push(format!("x{i}_re"));
        header.push(format!("x{i}_im"));
    }
    header.push("oracle_diff".into());
    let mut sol = Table::with_header("bvp_solution", header);
    for j in 0..=n {
        let x = res.x.value(j);
        let mut row = vec![num(res.x.t(j))];
        for i in 0..dim {
            row.push(num(x[i].re));
            row.push(num(x[i].im));
        }
        row.push(num((x - oracle.value(j)).norm()));
        sol.push(row);
    }
    report.tables.push(sol);

    let s = slack(cfg);
    if res.contraction_factor > params.theta * (1.0 + s) {
        report.warnings.push(format!("contraction factor {:.6e} exceeds theta {:.6e}", res.contraction_factor, params.theta));
    }
    if res.gap > res.gap_bound * (1.0 + s) {
        report.warnings.push(format!("gap {:.6e} exceeds bound {:.6e}", res.gap, res.gap_bound));
    }
    report.summary.push(format!(
        "iterations={} factor={:.4e} theta={:.4e} oracle_gap={oracle_gap:.3e}",
        res.iterations, res.contraction_factor, params.theta
    ));
    Ok(report)
}

fn run_frame(cfg: &RunConfig) -> Result<Report, CliError> {
    let block = cfg.frame.as_ref().ok_or_else(|| missing("frame"))?;
    let n = cfg.grid_or(DEFAULT_INTERVALS);
    let c = config::operator_fn(&block.c, n, "frame.c")?;
    let dim = c.first().dim();
    let sets = &block.partition;
    let partition = Partition::new(dim, &sets.zero, &sets.minus, &sets.plus)?;
    let atoms = block
        .atoms
        .iter()
        .map(|a| Ok(Atom { beta: config::scalar_fn(&a.beta, n, "frame.atoms.beta")?, indices: a.indices.clone() }))
        .collect::<Result<Vec<_>, CliError>>()?;
    let atoms = SpectralAtoms::new(&partition, atoms)?;
    let frame = PiFrame::new(partition, atoms, c)?;
    let opts = TransformerOptions {
        contour_points: cfg.contour_points.unwrap_or(asymdiag::frame::DEFAULT_CONTOUR_POINTS),
        slack: slack(cfg),
    };
    let bundle = build_transformer(&frame, opts)?;
    let r = &bundle.report;

    let mut report = Report::default();
    let mut t = Table::new(
        "bound_report",
        &["s_dev_lhs", "s_dev_rhs", "s_inv_dev_lhs", "s_inv_dev_rhs", "s_dot_lhs", "s_dot_rhs", "conj_lhs", "conj_rhs", "kappa", "d", "passed"],
    );
    t.push(vec![
        num(r.s_dev.lhs),
        num(r.s_dev.rhs),
        num(r.s_inv_dev.lhs),
        num(r.s_inv_dev.rhs),
        num(r.s_dot.lhs),
        num(r.s_dot.rhs),
        num(r.conj.lhs),
        num(r.conj.rhs),
        num(r.kappa),
        num(frame.d()),
        r.all_passed().to_string(),
    ]);
    report.tables.push(t);
    let mut nodes = Table::new("bound_nodes", &["t", "s_dev_lhs", "s_dev_rhs", "s_inv_dev_lhs", "s_inv_dev_rhs", "conj_lhs", "conj_rhs"]);
    for j in 0..=n {
        nodes.push(vec![
            num(frame.c.t(j)),
            num(r.s_dev_nodes.0[j]),
            num(r.s_dev_nodes.1[j]),
            num(r.s_inv_dev_nodes.0[j]),
            num(r.s_inv_dev_nodes.1[j]),
            num(r.conj_nodes.0[j]),
            num(r.conj_nodes.1[j]),
        ]);
    }
    report.tables.push(nodes);
    for (label, check) in [("s_dev", r.s_dev), ("s_inv_dev", r.s_inv_dev), ("s_dot", r.s_dot), ("conj", r.conj)] {
        if !check.passed {
            report.warnings.push(format!("{label}: {:.6e} > {:.6e}", check.lhs, check.rhs));
        }
    }
    report.summary.push(format!("kappa={:.4e} d={:.4e} all_passed={}", r.kappa, frame.d(), r.all_passed()));
    Ok(report)
}

fn run_family(cfg: &RunConfig) -> Result<Report, CliError> {
    let block = cfg.family.as_ref().ok_or_else(|| missing("family"))?;
    let n = cfg.grid_or(DEFAULT_INTERVALS);
    let mags = cfg.require_magnitudes()?.to_vec();
    let profiles = block
        .profiles
        .iter()
        .map(|p| config::scalar_fn(p, n, "family.profiles"))
        .collect::<Result<Vec<_>, _>>()?;
    let v = config::operator_fn(&block.v, n, "family.v")?;
    let direction = config::constant(&block.direction, "family.direction")?;
    let fam = ParamFamily::new(block.blocks.clone(), profiles, v, direction, mags)?;
    let k = block.k;
    if k >= fam.block_count() {
        return Err(CliError::Config(format!("family.k = {k} but there are {} blocks", fam.block_count())));
    }
    let xi = match &block.xi {
        Some(xi) => config::const_vector(xi, "family.xi")?,
        None => CVector::unit(fam.dim(), fam.blocks()[k][0]),
    };
    let mut budget = FrameBudget::default();
    budget.width_v = block.width_v.unwrap_or(budget.width_v);
    budget.width_h = block.width_h.unwrap_or(budget.width_h);
    budget.min_width = budget.min_width.min(budget.width_h);
    budget.transformer.slack = slack(cfg);
    if let Some(nc) = cfg.contour_points {
        budget.transformer.contour_points = nc;
    }
    let conditions = check_conditions(&fam, block.gamma.unwrap_or(0.5))?;
    let s = slack(cfg);

    let mut report = Report::default();
    let mut decay = Table::new(
        "family_decay",
        &[
            "side",
            "magnitude",
            "rel_sup_error",
            "actual_gap",
            "y_norm",
            "refined_bound",
            "d_atom",
            "c_norm",
            "c_limit",
            "epsilon",
            "perturbation_l1",
            "perturbation_bound",
            "theta",
            "admissible",
        ],
    );
    let mut summary = Table::new(
        "family_summary",
        &["side", "first_admissible_magnitude", "conditions_hold", "worst_condition", "min_separation"],
    );
    for side in block.sides.iter().map(|&s| Side::from(s)) {
        let rows = sweep(&fam, k, &xi, side, &budget)?;
        for r in &rows {
            decay.push(vec![
                side_name(side),
                num(r.magnitude),
                num(r.rel_sup_error),
                num(r.actual_gap),
                num(r.y_norm),
                num(r.refined_bound),
                num(r.d_atom),
                num(r.c_norm),
                num(r.c_limit),
                num(r.epsilon),
                num(r.perturbation_l1),
                num(r.perturbation_bound),
                num(r.theta),
                r.admissible.to_string(),
            ]);
            if r.actual_gap > r.refined_bound * (1.0 + s) {
                report.warnings.push(format!("{side:?} |d|={}: gap exceeds refined bound", r.magnitude));
            }
            if r.perturbation_l1 > r.perturbation_bound * (1.0 + s) {
                report.warnings.push(format!("{side:?} |d|={}: transformed perturbation exceeds bound", r.magnitude));
            }
        }
        let first = first_admissible_magnitude(&rows);
        summary.push(vec![
            side_name(side),
            num(first.unwrap_or(f64::NAN)),
            conditions.all_hold().to_string(),
            num(conditions.worst()),
            num(conditions.min_separation),
        ]);
        report.summary.push(format!(
            "{}: errors {:?} first admissible magnitude {}",
            side_name(side),
            rows.iter().map(|r| format!("{:.3e}", r.rel_sup_error)).collect::<Vec<_>>(),
            first.map_or("none".to_string(), |m| m.to_string())
        ));
    }
    if !conditions.all_hold() {
        report.warnings.push(format!("ordering conditions fail (worst {:.6e})", conditions.worst()));
    }
    report.tables.push(decay);
    report.tables.push(summary);
    Ok(report)
}

/// Errors below this are round-off; their growth is not reported.
const NOISE_FLOOR: f64 = 1e-12;

fn run_companion(cfg: &RunConfig) -> Result<Report, CliError> {
    let block = cfg.companion.as_ref().ok_or_else(|| missing("companion"))?;
    let n = cfg.grid_or(DEFAULT_INTERVALS);
    let mags = cfg.require_magnitudes()?.to_vec();
    let zeta = config::constant(&block.zeta, "companion.zeta")?;
    let p: Vec<&str> = block.p.iter().map(String::as_str).collect();
    let q: Vec<((usize, usize), &str)> = block.q.iter().map(|e| ((e.k, e.l), e.expr.as_str())).collect();
    let spec = CompanionSpec::from_exprs(n, zeta, &p, &q).map_err(|e| CliError::Config(format!("companion: {e}")))?;
    let order = spec.n();
    let sector = sector_permutation(order, cfg.sector.unwrap_or(1)).map_err(|e| CliError::Config(e.to_string()))?;
    let roots: Vec<usize> = if block.roots.is_empty() { (1..=order).collect() } else { block.roots.clone() };
    if let Some(k) = roots.iter().find(|k| !(1..=order).contains(*k)) {
        return Err(CliError::Config(format!("root index {k} outside 1..={order}")));
    }
    let jobs: Vec<(usize, Side)> =
        roots.iter().flat_map(|&k| block.sides.iter().map(move |&s| (k, Side::from(s)))).collect();
    let results = jobs
        .par_iter()
        .map(|&(k, side)| verify_asymptotics(&spec, &sector, &mags, k, side))
        .collect::<Result<Vec<_>, _>>()?;

    let mut report = Report::default();
    let mut decay = Table::new("companion_decay", &["k", "side", "magnitude", "rel_sup_error", "ratio"]);
    for (&(k, side), rows) in jobs.iter().zip(&results) {
        for (i, r) in rows.iter().enumerate() {
            let ratio = if i == 0 { f64::NAN } else { r.rel_sup_error / rows[i - 1].rel_sup_error };
            decay.push(vec![k.to_string(), side_name(side), num(r.magnitude), num(r.rel_sup_error), num(ratio)]);
            if i > 0 && ratio > 1.0 && r.rel_sup_error > NOISE_FLOOR {
                report.warnings.push(format!("k={k} {side:?}: error grows at |lambda|={}", r.magnitude));
            }
        }
        report.summary.push(format!(
            "k={k} {}: {:?}",
            side_name(side),
            rows.iter().map(|r| format!("{:.3e}", r.rel_sup_error)).collect::<Vec<_>>()
        ));
    }
    let mut residual = Table::new("companion_residual", &["magnitude", "residual", "scaled_residual"]);
    let res = mags
        .par_iter()
        .map(|&m| residual_check(&spec, m * sector.direction()))
        .collect::<Result<Vec<_>, _>>()?;
    for (m, r) in mags.iter().zip(res) {
        residual.push(vec![num(*m), num(r), num(m * r)]);
    }
    report.tables.push(decay);
    report.tables.push(residual);
    Ok(report)
}

fn run_selftest(cfg: &RunConfig) -> Report {
    let base = SelftestConfig::default();
    let st = SelftestConfig {
        seed: cfg.seed.unwrap_or(base.seed),
        intervals: cfg.grid.unwrap_or(base.intervals),
        contour_points: cfg.contour_points.unwrap_or(base.contour_points),
        slack: cfg.slack.unwrap_or(base.slack),
    };
    let outcomes = selftest::run_all(&st);
    let mut report = Report::default();
    let mut t = Table::new("selftest", &["id", "name", "passed", "metric", "limit", "detail"]);
    for o in &outcomes {
        t.push(vec![o.id.to_string(), o.name.into(), o.passed.to_string(), num(o.metric), num(o.limit), o.detail.clone()]);
        let tag = if o.passed { "PASS" } else { "FAIL" };
        report.summary.push(format!("[{tag}] {:>2} {:<24} metric={:.4e} limit={:.4e} {}", o.id, o.name, o.metric, o.limit, o.detail));
        if !o.passed {
            report.warnings.push(format!("check {} ({}) failed", o.id, o.name));
        }
    }
    report.tables.push(t);
    report
}
