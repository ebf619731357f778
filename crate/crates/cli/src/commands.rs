use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use cpomdp_core::bounds::{bounds_row, monahan_exact, ExactOptions};
use cpomdp_core::fixtures;
use cpomdp_core::grid::{self, GridMeta, GridSet};
use cpomdp_core::model::{BeliefState, Model, ModelSpec, WAIT};
use cpomdp_core::occupancy::{Objective, OccupancyProgram, OccupancySolution, ProgramOptions};
use cpomdp_core::pareto::{epsilon_exhaustive, epsilon_sweep, solve_weighted, weighted_sweep, ParetoFront, StepFailure};
use cpomdp_core::policy::{GridPolicy, Policy, Schedule};
use cpomdp_core::projection::{cache_key, ProjectionStrategy, ProjectionTables};
use cpomdp_core::sim::{compare_policies, simulate, trace_csv, trace_scenario, SimConfig, SimContext, SimMode, SimReport};
use cpomdp_lp::{lp_format, SolverParams};

use crate::config::{self, config_err, grid_label, ExperimentConfig, GridConfig};
use crate::{Cli, Command, FrontMethod, InstanceArgs, ModeArg, ObjectiveArg, ProjectionArg};

pub const SOLUTION_SCHEMA: &str = "cpomdp-solution/1";
pub const PARETO_SCHEMA: &str = "cpomdp-pareto/1";
pub const SIM_SCHEMA: &str = "cpomdp-sim/1";

struct Ctx {
    spec: ModelSpec,
    cfg: ExperimentConfig,
    out: PathBuf,
    seed: u64,
    threads: usize,
    cache_dir: Option<PathBuf>,
}

struct Instance {
    model: Model,
    grid: GridSet,
    tables: ProjectionTables,
    pi0: Vec<f64>,
    opts: ProgramOptions,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub schema: String,
    pub model: String,
    /// Identifies the model, grid and projection the policy was computed for.
    pub tables_key: String,
    pub grid: GridMeta,
    pub grid_size: usize,
    pub projection: ProjectionStrategy,
    pub pi0: Vec<f64>,
    pub budget: Option<f64>,
    pub objective: String,
    pub weights: Option<[f64; 2]>,
    pub deterministic: bool,
    pub eliminate: bool,
    pub h1: f64,
    pub h2: f64,
    pub cost: f64,
    pub objective_value: f64,
    pub flow_residual: f64,
    pub mass_residual: f64,
    pub useful_pct: Vec<f64>,
    pub actions: Vec<String>,
    pub action_occupancy: Vec<f64>,
    pub policy: GridPolicy,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParetoFile {
    pub schema: String,
    pub model: String,
    pub method: String,
    pub steps: usize,
    pub grid: GridMeta,
    pub budget: Option<f64>,
    pub deterministic: bool,
    pub points: Vec<ParetoRecord>,
    pub failures: Vec<FailureRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParetoRecord {
    pub h1: f64,
    pub h2: f64,
    pub cost: f64,
    pub method: String,
    pub param: f64,
    pub policy: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FailureRecord {
    pub step: usize,
    pub param: f64,
    pub message: String,
}

impl From<&StepFailure> for FailureRecord {
    fn from(f: &StepFailure) -> Self {
        Self { step: f.step, param: f.param, message: f.message.clone() }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Command::SchemaCheck { files } = &cli.command {
        return crate::schema::check_files(files);
    }
    let source = cli.model.clone().or_else(|| cfg.model.clone()).unwrap_or_else(|| "builtin:default".into());
    if let Command::Fixture { name } = &cli.command {
        let spec = config::builtin(name)?;
        return emit_text(cli.out.as_deref(), "model.json", &(spec.to_json() + "\n"));
    }
    let spec = config::load_model(&source)?;
    if let Command::Validate = cli.command {
        return validate(&source, &spec);
    }
    let ctx = Ctx {
        spec,
        out: cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
        cfg,
        seed: cli.seed,
        threads: cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).max(1),
        cache_dir: cli.cache_dir.clone(),
    };
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    match cli.command {
        Command::Solve { inst, objective, weights, export_lp } => cmd_solve(&ctx, &inst, objective, weights, export_lp),
        Command::Pareto { inst, method, steps } => cmd_pareto(&ctx, &inst, method, steps),
        Command::Bounds { grids, fixed, thresholds, target, samples, exact } => {
            cmd_bounds(&ctx, grids, fixed, thresholds, target, samples, exact)
        }
        Command::Simulate { inst, policies, baseline, mode, reps } => cmd_simulate(&ctx, &inst, &policies, baseline, mode, reps),
        Command::Trace { inst, policy, omit_wait_rows } => cmd_trace(&ctx, &inst, &policy, omit_wait_rows),
        Command::Sensitivity { inst, screening, pt, costs, weights, reps } => {
            cmd_sensitivity(&ctx, &inst, screening, pt, costs, weights, reps)
        }
        Command::Grid { inst } => cmd_grid(&ctx, &inst),
        Command::Validate | Command::SchemaCheck { .. } | Command::Fixture { .. } => unreachable!("handled above"),
    }
}

fn validate(source: &str, spec: &ModelSpec) -> Result<()> {
    let v = spec.validate();
    if v.is_empty() {
        println!("{source}: ok ({} states, {} actions, horizon {})", spec.states.len(), spec.actions.len(), spec.horizon);
        return Ok(());
    }
    for x in &v {
        println!("{x}");
    }
    Err(config_err(format!("{source}: {} violation(s)", v.len())))
}

fn emit_text(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_file(&dir.join(name), text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn grid_config(ctx: &Ctx, a: &InstanceArgs) -> GridConfig {
    if a.resolution.is_some() || a.resolutions.is_some() || a.thresholds.is_some() {
        GridConfig { resolution: a.resolution, resolutions: a.resolutions.clone(), thresholds: a.thresholds.clone() }
    } else {
        ctx.cfg.grid.clone()
    }
}

fn strategy(a: &InstanceArgs) -> ProjectionStrategy {
    match a.projection {
        ProjectionArg::L1 => ProjectionStrategy::L1,
        ProjectionArg::SquaredL2 => ProjectionStrategy::SquaredL2,
    }
}

fn build_tables(ctx: &Ctx, model: &Model, grid: &GridSet, s: ProjectionStrategy) -> Result<ProjectionTables> {
    let t = match &ctx.cache_dir {
        Some(dir) => ProjectionTables::build_cached(model, grid, s, ctx.threads, dir),
        None => ProjectionTables::build(model, grid, s, ctx.threads),
    };
    t.context("building projection tables")
}

fn model_with_budget(ctx: &Ctx, spec: &ModelSpec, a: &InstanceArgs) -> Result<Model> {
    let mut spec = spec.clone();
    if a.no_budget || ctx.cfg.no_budget {
        spec.budget = None;
    } else if let Some(b) = a.budget.or(ctx.cfg.budget) {
        spec.budget = Some(b);
    }
    Model::new(spec).map_err(|e| config_err(format!("model: {e}")))
}

fn start_belief(ctx: &Ctx, model: &Model, a: &InstanceArgs) -> Result<Vec<f64>> {
    let b = match a.pi0.clone().or_else(|| ctx.cfg.pi0.clone()) {
        Some(v) => BeliefState::new(v).map_err(|e| config_err(format!("--pi0: {e}")))?,
        None => model.initial_belief().unwrap_or_else(|| BeliefState::vertex(model.n_states(), 0)),
    };
    if b.len() != model.n_states() {
        return Err(config_err(format!("starting belief has {} entries, model has {} states", b.len(), model.n_states())));
    }
    Ok(b.into_inner())
}

fn instance_for(ctx: &Ctx, spec: &ModelSpec, a: &InstanceArgs) -> Result<Instance> {
    let model = model_with_budget(ctx, spec, a)?;
    let meta = config::grid_meta(&grid_config(ctx, a), model.n_states())?;
    let grid = grid::build(&meta, model.n_states()).context("building grid")?;
    info!("grid {} with {} points", grid_label(&meta), grid.len());
    let tables = build_tables(ctx, &model, &grid, strategy(a))?;
    let pi0 = start_belief(ctx, &model, a)?;
    let opts = ProgramOptions { budget: model.budget(), eliminate: !a.no_eliminate, deterministic: a.deterministic || ctx.cfg.deterministic };
    Ok(Instance { model, grid, tables, pi0, opts })
}

fn program(inst: &Instance) -> Result<OccupancyProgram> {
    let op = OccupancyProgram::build(&inst.model, &inst.grid, &inst.tables, &inst.pi0, inst.opts).context("building occupancy program")?;
    for (t, f) in op.useful_fraction().iter().enumerate() {
        log::debug!("epoch {t}: {:.2}% useful grid points", 100.0 * f);
    }
    let frac = op.useful_fraction();
    info!(
        "useful grid points: {:.2}% at epoch 0, {:.2}% at the last decision epoch, {} variables",
        100.0 * frac[0],
        100.0 * frac[frac.len().saturating_sub(2)],
        op.program.num_vars()
    );
    Ok(op)
}

fn weights_from(ctx: &Ctx, w: Option<Vec<f64>>) -> Result<[f64; 2]> {
    match w {
        Some(v) => <[f64; 2]>::try_from(v.as_slice()).map_err(|_| config_err(format!("--weights takes two values, got {}", v.len()))),
        None => Ok(ctx.cfg.weights.unwrap_or(fixtures::WEIGHTED)),
    }
}

fn objective_from(ctx: &Ctx, o: Option<ObjectiveArg>) -> Result<ObjectiveArg> {
    if let Some(o) = o {
        return Ok(o);
    }
    match ctx.cfg.objective.as_deref() {
        None | Some("weighted") => Ok(ObjectiveArg::Weighted),
        Some("max-qaly") => Ok(ObjectiveArg::MaxQaly),
        Some("min-lbcmr") => Ok(ObjectiveArg::MinLbcmr),
        Some(other) => Err(config_err(format!("unknown objective '{other}' (max-qaly, min-lbcmr, weighted)"))),
    }
}

fn solve_objective(op: &OccupancyProgram, obj: ObjectiveArg, w: [f64; 2]) -> Result<OccupancySolution> {
    let params = SolverParams::default();
    let sol = match obj {
        ObjectiveArg::MaxQaly => solve_weighted(op, 1.0, 0.0, &params),
        ObjectiveArg::MinLbcmr => solve_weighted(op, 0.0, 1.0, &params),
        ObjectiveArg::Weighted => solve_weighted(op, w[0], w[1], &params),
    };
    sol.context("solving occupancy program")
}

fn cmd_solve(ctx: &Ctx, a: &InstanceArgs, objective: Option<ObjectiveArg>, weights: Option<Vec<f64>>, export_lp: bool) -> Result<()> {
    let inst = instance_for(ctx, &ctx.spec, a)?;
    let op = program(&inst)?;
    let obj = objective_from(ctx, objective)?;
    let w = weights_from(ctx, weights)?;
    if export_lp {
        let p = match obj {
            ObjectiveArg::MaxQaly => op.instantiate(Objective::MaxQaly, &[]),
            ObjectiveArg::MinLbcmr => op.instantiate(Objective::MinRisk, &[]),
            ObjectiveArg::Weighted => op.instantiate(Objective::Weighted { w1: w[0], w2: w[1] }, &[]),
        };
        write_file(&ctx.out.join("program.lp"), &lp_format::write(&p))?;
    }
    let sol = solve_objective(&op, obj, w)?;
    let file = solution_file(&inst, &op, &sol, obj, w);
    println!("h1 {:.6} h2 {:.8} cost {:.4}", sol.h1, sol.h2, sol.cost);
    write_json(&ctx.out.join("solution.json"), &file)?;
    write_file(&ctx.out.join("policy.csv"), &sol.policy.to_csv(&inst.model.spec().actions))?;
    let mut useful = String::from("epoch,age,useful_pct\n");
    for (t, p) in file.useful_pct.iter().enumerate() {
        let _ = writeln!(useful, "{t},{},{p}", inst.model.spec().start_age as usize + t);
    }
    write_file(&ctx.out.join("useful.csv"), &useful)
}

fn solution_file(inst: &Instance, op: &OccupancyProgram, sol: &OccupancySolution, obj: ObjectiveArg, w: [f64; 2]) -> SolutionFile {
    let (name, weights) = match obj {
        ObjectiveArg::MaxQaly => ("max-qaly", None),
        ObjectiveArg::MinLbcmr => ("min-lbcmr", None),
        ObjectiveArg::Weighted => ("weighted", Some(w)),
    };
    SolutionFile {
        schema: SOLUTION_SCHEMA.into(),
        model: inst.model.spec().name.clone(),
        tables_key: cache_key(&inst.model, &inst.grid, inst.tables.strategy),
        grid: inst.grid.meta.clone(),
        grid_size: inst.grid.len(),
        projection: inst.tables.strategy,
        pi0: inst.pi0.clone(),
        budget: inst.opts.budget,
        objective: name.into(),
        weights,
        deterministic: inst.opts.deterministic,
        eliminate: inst.opts.eliminate,
        h1: sol.h1,
        h2: sol.h2,
        cost: sol.cost,
        objective_value: sol.objective,
        flow_residual: sol.flow_residual,
        mass_residual: sol.mass_residual,
        useful_pct: op.useful_fraction().iter().map(|f| 100.0 * f).collect(),
        actions: inst.model.spec().actions.clone(),
        action_occupancy: op.action_occupancy(&sol.values),
        policy: sol.policy.clone(),
    }
}

fn cmd_pareto(ctx: &Ctx, a: &InstanceArgs, method: FrontMethod, steps: Option<usize>) -> Result<()> {
    let inst = instance_for(ctx, &ctx.spec, a)?;
    let op = program(&inst)?;
    let params = SolverParams::default();
    let steps = steps.or(ctx.cfg.steps).unwrap_or(match method {
        FrontMethod::Weighted => 100,
        _ => 25,
    });
    let front: ParetoFront = match method {
        FrontMethod::Weighted => weighted_sweep(&op, steps, &params, ctx.threads),
        FrontMethod::Epsilon => epsilon_sweep(&op, steps, &params, ctx.threads),
        FrontMethod::Exhaustive => epsilon_exhaustive(&op, &params, 1e-7, steps.max(2) * 1000),
    }
    .map_err(|e| match e {
        cpomdp_core::CoreError::InvalidArgument(m) => config_err(m),
        e => anyhow::Error::from(e).context("frontier sweep"),
    })?;
    for f in &front.failures {
        warn!("step {} (parameter {}) failed: {}", f.step, f.param, f.message);
    }
    if front.is_empty() {
        return Err(anyhow::Error::from(cpomdp_core::CoreError::Solver {
            status: cpomdp_lp::SolveStatus::Error,
            context: format!("every sweep step failed ({} failures)", front.failures.len()),
        }));
    }
    let dir = ctx.out.join("policies");
    fs::create_dir_all(&dir)?;
    let name = |i: usize| format!("policies/point_{i:03}.csv");
    for (i, p) in front.points.iter().enumerate() {
        write_file(&ctx.out.join(name(i)), &p.policy.to_csv(&inst.model.spec().actions))?;
    }
    write_file(&ctx.out.join("frontier.csv"), &front.to_csv(name))?;
    let file = ParetoFile {
        schema: PARETO_SCHEMA.into(),
        model: inst.model.spec().name.clone(),
        method: format!("{method:?}").to_lowercase(),
        steps,
        grid: inst.grid.meta.clone(),
        budget: inst.opts.budget,
        deterministic: inst.opts.deterministic,
        points: front
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| ParetoRecord { h1: p.h1, h2: p.h2, cost: p.cost, method: p.method.as_str().into(), param: p.param, policy: name(i) })
            .collect(),
        failures: front.failures.iter().map(FailureRecord::from).collect(),
    };
    write_json(&ctx.out.join("pareto.json"), &file)?;
    println!("{} frontier points, {} failed steps", front.len(), front.failures.len());
    Ok(())
}

fn cmd_bounds(
    ctx: &Ctx,
    grids: Option<String>,
    fixed: Option<Vec<u64>>,
    thresholds: Option<Vec<f64>>,
    target: Option<Vec<f64>>,
    samples: usize,
    exact: bool,
) -> Result<()> {
    let model = Model::new(ctx.spec.clone()).map_err(|e| config_err(format!("model: {e}")))?;
    let n = model.n_states();
    let mut metas = Vec::new();
    if let Some(g) = grids {
        let ts = thresholds.ok_or_else(|| config_err("--grids needs --thresholds"))?;
        for set in config::parse_sets(&g)? {
            let rs = set.iter().map(|&x| if x >= 1.0 && x.fract() == 0.0 { Ok(x as u64) } else { Err(config_err(format!("bad resolution {x}"))) });
            metas.push(GridMeta::Variable { resolutions: rs.collect::<Result<_>>()?, thresholds: ts.clone() });
        }
    }
    for r in fixed.unwrap_or_default() {
        metas.push(GridMeta::Fixed { resolution: r });
    }
    if metas.is_empty() {
        return Err(config_err("bounds needs --grids and/or --fixed"));
    }
    let target = match target {
        Some(v) => BeliefState::new(v).map_err(|e| config_err(format!("--target: {e}")))?.into_inner(),
        None => model.initial_belief().map(|b| b.into_inner()).unwrap_or_else(|| BeliefState::vertex(n, 0).into_inner()),
    };
    let exact_set = if exact { Some(monahan_exact(&model, &ExactOptions::default()).context("exact solution")?) } else { None };
    let mut csv = String::from("grid,size,lb,ub,gap,exact,gap_min,gap_mean,gap_max,samples,seed\n");
    for meta in &metas {
        let g = grid::build(meta, n).with_context(|| format!("grid {}", grid_label(meta)))?;
        let tables = build_tables(ctx, &model, &g, ProjectionStrategy::L1)?;
        let r = bounds_row(&model, &g, &tables, &target, samples, ctx.seed, exact_set.as_ref())?;
        let ex = r.exact.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{ex},{},{},{},{},{}",
            r.grid, r.size, r.lb, r.ub, r.gap, r.gap_min, r.gap_mean, r.gap_max, r.samples, r.seed
        );
        info!("grid {}: lb {:.6} ub {:.6} gap {:.3e}", r.grid, r.lb, r.ub, r.gap);
    }
    write_file(&ctx.out.join("bounds.csv"), &csv)
}

/// A policy named on the command line plus, for solutions, its grid.
struct LoadedPolicy {
    policy: Policy,
    solution: Option<SolutionFile>,
}

fn action_index(model: &Model, label: &str) -> Result<usize> {
    model
        .spec()
        .actions
        .iter()
        .position(|a| a == label)
        .or_else(|| label.parse::<usize>().ok().filter(|&i| i < model.n_actions()))
        .ok_or_else(|| config_err(format!("unknown action '{label}'")))
}

fn load_policy(model: &Model, s: &str) -> Result<LoadedPolicy> {
    let rule = |interval: usize, label: &str| -> Result<LoadedPolicy> {
        let action = action_index(model, label)?;
        Ok(LoadedPolicy { policy: Policy::Rule(Schedule { action, interval, offset: 0 }), solution: None })
    };
    if s == "none" || s == "no-screening" {
        return Ok(LoadedPolicy { policy: Policy::NoScreening, solution: None });
    }
    if let Some(l) = s.strip_prefix("annual:") {
        return rule(1, l);
    }
    if let Some(l) = s.strip_prefix("biennial:") {
        return rule(2, l);
    }
    if let Some(rest) = s.strip_prefix("every:") {
        let (n, l) = rest.split_once(':').ok_or_else(|| config_err("expected every:N:ACTION"))?;
        let n: usize = n.parse().map_err(|_| config_err(format!("bad interval '{n}'")))?;
        return rule(n, l);
    }
    let path = Path::new(s);
    if !path.exists() {
        return Err(config_err(format!("policy '{s}' is neither a rule nor an existing solution file")));
    }
    let text = fs::read_to_string(path)?;
    let mut sol: SolutionFile = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if sol.schema != SOLUTION_SCHEMA {
        return Err(config_err(format!("{}: unsupported schema '{}'", path.display(), sol.schema)));
    }
    sol.policy.reindex();
    Ok(LoadedPolicy { policy: Policy::Grid(sol.policy.clone()), solution: Some(sol) })
}

/// The grid and tables shared by all policies, checked against solutions.
fn sim_setup(ctx: &Ctx, a: &InstanceArgs, loaded: &[LoadedPolicy], need_tables: bool) -> Result<(Model, Option<GridSet>, Option<ProjectionTables>)> {
    let sols: Vec<&SolutionFile> = loaded.iter().filter_map(|l| l.solution.as_ref()).collect();
    let mut model = model_with_budget(ctx, &ctx.spec, a)?;
    let Some(first) = sols.first() else {
        if !need_tables {
            return Ok((model, None, None));
        }
        let meta = config::grid_meta(&grid_config(ctx, a), model.n_states())?;
        let g = grid::build(&meta, model.n_states())?;
        let t = build_tables(ctx, &model, &g, strategy(a))?;
        return Ok((model, Some(g), Some(t)));
    };
    if sols.iter().any(|s| s.grid != first.grid || s.projection != first.projection) {
        return Err(config_err("all solution policies must share one grid and projection"));
    }
    if a.budget.is_none() && !a.no_budget && ctx.cfg.budget.is_none() {
        let mut spec = model.spec().clone();
        spec.budget = first.budget;
        model = Model::new(spec)?;
    }
    let g = grid::build(&first.grid, model.n_states())?;
    for s in &sols {
        let mut spec = model.spec().clone();
        spec.budget = s.budget;
        if cache_key(&Model::new(spec)?, &g, s.projection) != s.tables_key {
            return Err(config_err("a solution was computed for a different model, grid or projection"));
        }
    }
    let tables = if need_tables || first.projection != ProjectionStrategy::L1 {
        Some(build_tables(ctx, &model, &g, first.projection)?)
    } else {
        None
    };
    Ok((model, Some(g), tables))
}

fn cmd_simulate(ctx: &Ctx, a: &InstanceArgs, specs: &[String], baseline: usize, mode: ModeArg, reps: usize) -> Result<()> {
    let base_model = model_with_budget(ctx, &ctx.spec, a)?;
    let loaded = specs.iter().map(|s| load_policy(&base_model, s)).collect::<Result<Vec<_>>>()?;
    let mode = match mode {
        ModeArg::GridChain => SimMode::GridChain,
        ModeArg::Belief => SimMode::Belief,
    };
    let (model, grid, tables) = sim_setup(ctx, a, &loaded, mode == SimMode::GridChain)?;
    let pi0 = match (&a.pi0, loaded.iter().find_map(|l| l.solution.as_ref())) {
        (None, Some(s)) if ctx.cfg.pi0.is_none() => s.pi0.clone(),
        _ => start_belief(ctx, &model, a)?,
    };
    let sctx = SimContext { model: &model, grid: grid.as_ref(), tables: tables.as_ref() };
    let cfg = SimConfig { reps, seed: ctx.seed, mode, threads: ctx.threads };
    let policies: Vec<Policy> = loaded.into_iter().map(|l| l.policy).collect();
    if reps == 0 {
        return Err(config_err("--reps must be at least 1"));
    }
    let actions = &model.spec().actions;
    let mut csv = SimReport::csv_header(actions) + "\n";
    if policies.len() == 1 {
        let r = simulate(&sctx, &policies[0], &pi0, &cfg)?;
        report_line(&r);
        csv += &(r.csv_row() + "\n");
        write_json(&ctx.out.join("sim.json"), &SimFile { schema: SIM_SCHEMA.into(), reports: vec![r], deltas: vec![], baseline: None })?;
    } else {
        if baseline >= policies.len() {
            return Err(config_err(format!("--baseline {baseline} out of range")));
        }
        let cmp = compare_policies(&sctx, &policies, baseline, &pi0, &cfg)?;
        for r in &cmp.reports {
            report_line(r);
            csv += &(r.csv_row() + "\n");
        }
        let mut dcsv = String::from("policy,baseline,qaly_gain,qaly_gain_se,lbcmr_decrease,lbcmr_decrease_se,cost_increase,cost_increase_se\n");
        for d in &cmp.deltas {
            let _ = writeln!(
                dcsv,
                "{},{},{},{},{},{},{},{}",
                d.policy, cmp.baseline, d.qaly_gain.mean, d.qaly_gain.se, d.lbcmr_decrease.mean, d.lbcmr_decrease.se, d.cost_increase.mean, d.cost_increase.se
            );
        }
        write_file(&ctx.out.join("deltas.csv"), &dcsv)?;
        write_json(
            &ctx.out.join("sim.json"),
            &SimFile { schema: SIM_SCHEMA.into(), baseline: Some(cmp.baseline.clone()), reports: cmp.reports, deltas: cmp.deltas },
        )?;
    }
    write_file(&ctx.out.join("sim.csv"), &csv)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimFile {
    pub schema: String,
    pub baseline: Option<String>,
    pub reports: Vec<SimReport>,
    pub deltas: Vec<cpomdp_core::sim::Delta>,
}

fn report_line(r: &SimReport) {
    println!(
        "{}: qaly {:.4} ± {:.4}, lbcmr {:.5} ± {:.5}, cost {:.2} ± {:.2}{}",
        r.policy,
        r.qaly.mean,
        r.qaly.se,
        r.lbcmr.mean,
        r.lbcmr.se,
        r.cost.mean,
        r.cost.se,
        if r.overshoot { " (over budget)" } else { "" }
    );
    if r.overshoot {
        warn!("{}: mean cost {:.2} exceeds the budget {:?}", r.policy, r.cost.mean, r.budget);
    }
}

fn cmd_trace(ctx: &Ctx, a: &InstanceArgs, policy: &str, omit_wait: bool) -> Result<()> {
    let base_model = model_with_budget(ctx, &ctx.spec, a)?;
    let loaded = vec![load_policy(&base_model, policy)?];
    let (model, grid, tables) = sim_setup(ctx, a, &loaded, false)?;
    let pi0 = match (&a.pi0, loaded[0].solution.as_ref()) {
        (None, Some(s)) if ctx.cfg.pi0.is_none() => s.pi0.clone(),
        _ => start_belief(ctx, &model, a)?,
    };
    let sctx = SimContext { model: &model, grid: grid.as_ref(), tables: tables.as_ref() };
    let rows = trace_scenario(&sctx, &loaded[0].policy, &pi0)?;
    write_file(&ctx.out.join("trace.csv"), &trace_csv(&model, &rows, omit_wait))
}

fn axis(cli: Option<String>, cfg: &Option<Vec<Vec<f64>>>) -> Result<Option<Vec<Vec<f64>>>> {
    match (cli, cfg) {
        (Some(s), _) => Ok(Some(config::parse_sets(&s)?)),
        (None, Some(v)) if v.is_empty() => Err(config_err("sweep axis is empty")),
        (None, v) => Ok(v.clone()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sensitivity(
    ctx: &Ctx,
    a: &InstanceArgs,
    screening: Option<String>,
    pt: Option<String>,
    costs: Option<String>,
    weights: Option<Vec<f64>>,
    reps: usize,
) -> Result<()> {
    let sc = &ctx.cfg.sensitivity;
    let screening = axis(screening, &sc.screening)?;
    let pt = match pt {
        Some(s) => Some(config::parse_sets(&s)?.concat()),
        None => sc.pt.clone(),
    };
    if pt.as_ref().is_some_and(|v| v.is_empty()) {
        return Err(config_err("sweep axis is empty"));
    }
    let costs = axis(costs, &sc.costs)?;
    if screening.is_none() && pt.is_none() && costs.is_none() {
        return Err(config_err("sensitivity needs at least one of --screening, --pt, --costs"));
    }
    let na = ctx.spec.actions.len();
    for row in screening.iter().flatten().chain(costs.iter().flatten()) {
        if row.len() != na {
            return Err(config_err(format!("sweep set {row:?} needs one value per action ({na})")));
        }
    }
    let w = weights_from(ctx, weights)?;
    // Disutilities and costs do not enter the continuation beliefs, so one
    // set of tables serves every cell.
    let base = instance_for(ctx, &ctx.spec, a)?;
    let scr_axis: Vec<Option<Vec<f64>>> = screening.map(|v| v.into_iter().map(Some).collect()).unwrap_or_else(|| vec![None]);
    let pt_axis: Vec<Option<f64>> = pt.map(|v| v.into_iter().map(Some).collect()).unwrap_or_else(|| vec![None]);
    let cost_axis: Vec<Option<Vec<f64>>> = costs.map(|v| v.into_iter().map(Some).collect()).unwrap_or_else(|| vec![None]);
    let mut cells = Vec::new();
    for s in &scr_axis {
        for p in &pt_axis {
            for c in &cost_axis {
                cells.push((s.clone(), *p, c.clone()));
            }
        }
    }
    let run_cell = |i: usize| -> Result<Vec<(String, f64)>> {
        let (s, p, c) = &cells[i];
        let mut spec = base.model.spec().clone();
        if let Some(s) = s {
            spec.disutilities_days.screening = s.clone();
        }
        if let Some(p) = p {
            spec.disutilities_days.true_positive = *p;
            spec.disutilities_days.false_positive = *p;
        }
        if let Some(c) = c {
            spec.costs = c.clone();
        }
        let model = Model::new(spec).map_err(|e| config_err(format!("cell {i}: {e}")))?;
        let op = OccupancyProgram::build(&model, &base.grid, &base.tables, &base.pi0, base.opts)?;
        let sol = solve_weighted(&op, w[0], w[1], &SolverParams::default())?;
        let sctx = SimContext { model: &model, grid: Some(&base.grid), tables: Some(&base.tables) };
        let cfg = SimConfig { reps, seed: ctx.seed, mode: SimMode::Belief, threads: 1 };
        let r = simulate(&sctx, &Policy::Grid(sol.policy.clone()), &base.pi0, &cfg)?;
        let occ = op.action_occupancy(&sol.values);
        let total: f64 = occ.iter().sum();
        let mut m = vec![
            ("lp_qaly".to_string(), sol.h1),
            ("lp_lbcmr".into(), sol.h2),
            ("lp_cost".into(), sol.cost),
            ("sim_qaly".into(), r.qaly.mean),
            ("sim_lbcmr".into(), r.lbcmr.mean),
            ("sim_cost".into(), r.cost.mean),
        ];
        for (k, label) in model.spec().actions.iter().enumerate().filter(|&(k, _)| k != WAIT) {
            m.push((format!("lp_pct[{label}]"), if total > 0.0 { 100.0 * occ[k] / total } else { 0.0 }));
            m.push((format!("sim_pct[{label}]"), r.action_pct[k]));
        }
        Ok(m)
    };
    let results = parallel_map(cells.len(), ctx.threads, run_cell);
    let fmt = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")).unwrap_or_default();
    let mut csv = String::from("cell,screening,pt,costs,metric,value\n");
    let mut failed = 0;
    for (i, r) in results.into_iter().enumerate() {
        let (s, p, c) = &cells[i];
        let head = format!("{i},{},{},{}", fmt(s), p.map(|x| x.to_string()).unwrap_or_default(), fmt(c));
        match r {
            Ok(metrics) => {
                for (k, v) in metrics {
                    let _ = writeln!(csv, "{head},{k},{v}");
                }
            }
            Err(e) => {
                failed += 1;
                warn!("cell {i} failed: {e:#}");
                let _ = writeln!(csv, "{head},error,NaN");
            }
        }
    }
    write_file(&ctx.out.join("sensitivity.csv"), &csv)?;
    println!("{} cells, {failed} failed", cells.len());
    Ok(())
}

/// Runs `f(0..n)` on a bounded pool; results keep index order.
fn parallel_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, n.max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let done = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                done.lock().expect("result lock").push((i, r));
            });
        }
    });
    for (i, r) in done.into_inner().expect("result lock") {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|x| x.expect("every cell ran")).collect()
}

fn cmd_grid(ctx: &Ctx, a: &InstanceArgs) -> Result<()> {
    let n = ctx.spec.states.len();
    let meta = config::grid_meta(&grid_config(ctx, a), n)?;
    let g = grid::build(&meta, n)?;
    println!("{}: {} points", grid_label(&meta), g.len());
    write_file(&ctx.out.join("grid.csv"), &g.to_csv())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_keeps_order() {
        assert_eq!(parallel_map(9, 4, |i| i + 1), (1..=9).collect::<Vec<_>>());
        assert!(parallel_map(0, 4, |i| i).is_empty());
    }

    #[test]
    fn rule_policies_parse() {
        let m = fixtures::default_model();
        assert!(matches!(load_policy(&m, "none").unwrap().policy, Policy::NoScreening));
        match load_policy(&m, "biennial:M&U").unwrap().policy {
            Policy::Rule(s) => assert_eq!((s.action, s.interval), (3, 2)),
            _ => panic!(),
        }
        assert!(load_policy(&m, "annual:X").is_err());
        assert!(load_policy(&m, "missing.json").is_err());
    }
}
