//! End-to-end runs: value function, costate extraction and shooting, plus the
//! basin-of-attraction batch and CSV exports.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ini::Ini;
use rayon::prelude::*;

use crate::benchmarks::{make_problem, BenchmarkBundle, ProblemId};
use crate::costate::{
    costate_guess, estimate_structure, feedback_trajectory, gradient_centered, make_initial_guess, search_directions,
    FeedbackConfig, GuessConfig, StructureConfig, StructureEstimate, Trajectory,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hjb::{fmt_float, solve_value, IterationScheme, NodeUpdate, SolverConfig, TimeField};
use crate::shooting::{
    solve_shooting, HybridConfig, IntegratorConfig, IntegratorKind, ShootingSolution, ShootingSpec, SingularJunction,
    Tangency,
};

/// Outcome classes of a shooting run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OutcomeClass {
    Global,
    LocalStraight,
    LocalOther,
    Diverged,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 4] =
        [OutcomeClass::Global, OutcomeClass::LocalStraight, OutcomeClass::LocalOther, OutcomeClass::Diverged];
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutcomeClass::Global => "global",
            OutcomeClass::LocalStraight => "local-straight",
            OutcomeClass::LocalOther => "local-other",
            OutcomeClass::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyConfig {
    /// Final times within this distance of a reference match it.
    pub tolerance: f64,
    /// Runs ending with a larger residual norm are diverged.
    pub diverged_residual: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig { tolerance: 0.05, diverged_residual: 1e-6 }
    }
}

/// Classifies a shooting result against the references recorded for the
/// bundle's initial state. A run is global when its final time is within
/// tolerance of the best reference, and local-straight when it matches a
/// reference labelled `straight`.
pub fn classify(bundle: &BenchmarkBundle, final_time: f64, residual_norm: f64, cfg: &ClassifyConfig) -> OutcomeClass {
    if !(residual_norm <= cfg.diverged_residual) || !final_time.is_finite() {
        return OutcomeClass::Diverged;
    }
    let refs = bundle.references_here();
    let best = refs.iter().map(|r| r.final_time).fold(f64::INFINITY, f64::min);
    if best.is_finite() && final_time <= best + cfg.tolerance {
        return OutcomeClass::Global;
    }
    if refs.iter().any(|r| r.label == "straight" && (r.final_time - final_time).abs() <= cfg.tolerance) {
        return OutcomeClass::LocalStraight;
    }
    OutcomeClass::LocalOther
}

/// Overrides applied on top of a bundle's defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub initial_state: Option<Vec<f64>>,
    pub grid_counts: Option<Vec<usize>>,
    pub control_count: Option<usize>,
    pub hjb: SolverConfig,
    /// Centred-difference step in cells.
    pub gradient_cells: f64,
    pub guess: GuessConfig,
    pub feedback: FeedbackConfig,
    pub structure: StructureConfig,
    pub integrator: Option<IntegratorConfig>,
    pub solver: Option<HybridConfig>,
    pub tangency: Option<Tangency>,
    pub singular_junction: Option<SingularJunction>,
    pub classify: ClassifyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            initial_state: None,
            grid_counts: None,
            control_count: None,
            hjb: SolverConfig::default(),
            gradient_cells: 1.0,
            guess: GuessConfig::default(),
            feedback: FeedbackConfig::default(),
            structure: StructureConfig::default(),
            integrator: None,
            solver: None,
            tangency: None,
            singular_junction: None,
            classify: ClassifyConfig::default(),
        }
    }
}

fn parse_list<T: FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    s.split(',').map(|v| v.trim().parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))).collect()
}

fn parse_one<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Config(format!("bad value `{s}` for `{key}`")))
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn parse_update(s: &str) -> Result<NodeUpdate> {
    match s.trim() {
        "discounted" => Ok(NodeUpdate::Discounted),
        "implicit" => Ok(NodeUpdate::Implicit),
        "explicit" => Ok(NodeUpdate::Explicit),
        _ => Err(Error::Config(format!("unknown node update `{s}`"))),
    }
}

pub fn parse_integrator(s: &str) -> Result<IntegratorKind> {
    match s.trim() {
        "rk4" => Ok(IntegratorKind::FixedRk4),
        "events" => Ok(IntegratorKind::Rk4Events),
        "adaptive" => Ok(IntegratorKind::Adaptive),
        _ => Err(Error::Config(format!("unknown integrator `{s}`"))),
    }
}

fn update_name(u: NodeUpdate) -> &'static str {
    match u {
        NodeUpdate::Discounted => "discounted",
        NodeUpdate::Implicit => "implicit",
        NodeUpdate::Explicit => "explicit",
    }
}

fn integrator_name(k: IntegratorKind) -> &'static str {
    match k {
        IntegratorKind::FixedRk4 => "rk4",
        IntegratorKind::Rk4Events => "events",
        IntegratorKind::Adaptive => "adaptive",
    }
}

impl PipelineConfig {
    /// Parses `key = value` lines grouped in `[problem]`, `[hjb]`,
    /// `[extract]`, `[shoot]` and `[classify]` sections. Missing keys keep
    /// their defaults; unknown keys are errors.
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = PipelineConfig::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, v) in props.iter() {
                let name = format!("{section}.{key}");
                let k = name.as_str();
                match k {
                    "problem.initial_state" => c.initial_state = Some(parse_list(k, v)?),
                    "hjb.grid" => c.grid_counts = Some(parse_list(k, v)?),
                    "hjb.controls" => c.control_count = Some(parse_one(k, v)?),
                    "hjb.tolerance" => c.hjb.tolerance = parse_one(k, v)?,
                    "hjb.max_iterations" => c.hjb.max_iterations = parse_one(k, v)?,
                    "hjb.update" => c.hjb.node_update = parse_update(v)?,
                    "hjb.scheme" => {
                        c.hjb.scheme = match v.trim() {
                            "sweeping" => IterationScheme::FastSweeping,
                            "jacobi" => IterationScheme::Jacobi,
                            _ => return Err(Error::Config(format!("unknown scheme `{v}`"))),
                        }
                    }
                    "hjb.target_radius" => c.hjb.target_radius = parse_one(k, v)?,
                    "extract.gradient_cells" => c.gradient_cells = parse_one(k, v)?,
                    "extract.delta_cells" => c.guess.delta_cells = parse_one(k, v)?,
                    "extract.min_delta_cells" => c.guess.min_delta_cells = parse_one(k, v)?,
                    "extract.directions" => c.guess.directions = Some(parse_one(k, v)?),
                    "extract.dt" => c.feedback.dt = Some(parse_one(k, v)?),
                    "extract.t_max" => c.feedback.t_max = parse_one(k, v)?,
                    "extract.arrival_cells" => c.feedback.arrival_cells = parse_one(k, v)?,
                    "extract.stall_steps" => c.feedback.stall_steps = parse_one(k, v)?,
                    "extract.window" => c.structure.window = parse_one(k, v)?,
                    "extract.chattering_rate" => c.structure.chattering_rate = parse_one(k, v)?,
                    "extract.constraint_tolerance" => c.structure.constraint_tolerance = Some(parse_one(k, v)?),
                    "shoot.integrator" => {
                        let kind = parse_integrator(v)?;
                        c.integrator = Some(IntegratorConfig { kind, ..c.integrator.unwrap_or_default() });
                    }
                    "shoot.steps" => {
                        let steps = parse_one(k, v)?;
                        c.integrator = Some(IntegratorConfig { steps, ..c.integrator.unwrap_or_default() });
                    }
                    "shoot.integrator_tolerance" => {
                        let tolerance = parse_one(k, v)?;
                        c.integrator = Some(IntegratorConfig { tolerance, ..c.integrator.unwrap_or_default() });
                    }
                    "shoot.ftol" => c.solver.get_or_insert_with(HybridConfig::default).ftol = parse_one(k, v)?,
                    "shoot.max_iterations" => {
                        c.solver.get_or_insert_with(HybridConfig::default).max_iterations = parse_one(k, v)?
                    }
                    "shoot.tangency" => {
                        c.tangency = Some(match v.trim() {
                            "entry" => Tangency::Entry,
                            "exit" => Tangency::Exit,
                            _ => return Err(Error::Config(format!("unknown tangency `{v}`"))),
                        })
                    }
                    "shoot.singular_junction" => {
                        c.singular_junction = Some(match v.trim() {
                            "entry_rate" => SingularJunction::EntryRate,
                            "entry_exit" => SingularJunction::EntryExit,
                            _ => return Err(Error::Config(format!("unknown singular junction `{v}`"))),
                        })
                    }
                    "classify.tolerance" => c.classify.tolerance = parse_one(k, v)?,
                    "classify.diverged_residual" => c.classify.diverged_residual = parse_one(k, v)?,
                    _ => return Err(Error::Config(format!("unknown key `{k}`"))),
                }
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_ini_str(&fs::read_to_string(path)?)
    }

    /// Serializes every setting, with bundle defaults left out.
    pub fn to_ini_string(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut line = |k: &str, v: String| {
            lines.push(if v.is_empty() { format!("\n[{k}]") } else { format!("{k} = {v}") });
        };
        line("problem", String::new());
        if let Some(x) = &self.initial_state {
            line("initial_state", join(x));
        }
        line("hjb", String::new());
        if let Some(g) = &self.grid_counts {
            line("grid", join(g));
        }
        if let Some(n) = self.control_count {
            line("controls", n.to_string());
        }
        line("tolerance", self.hjb.tolerance.to_string());
        line("max_iterations", self.hjb.max_iterations.to_string());
        line("update", update_name(self.hjb.node_update).into());
        let scheme = match self.hjb.scheme {
            IterationScheme::FastSweeping => "sweeping",
            IterationScheme::Jacobi => "jacobi",
        };
        line("scheme", scheme.into());
        line("target_radius", self.hjb.target_radius.to_string());
        line("extract", String::new());
        line("gradient_cells", self.gradient_cells.to_string());
        line("delta_cells", self.guess.delta_cells.to_string());
        line("min_delta_cells", self.guess.min_delta_cells.to_string());
        if let Some(n) = self.guess.directions {
            line("directions", n.to_string());
        }
        if let Some(dt) = self.feedback.dt {
            line("dt", dt.to_string());
        }
        line("t_max", self.feedback.t_max.to_string());
        line("arrival_cells", self.feedback.arrival_cells.to_string());
        line("stall_steps", self.feedback.stall_steps.to_string());
        line("window", self.structure.window.to_string());
        line("chattering_rate", self.structure.chattering_rate.to_string());
        if let Some(t) = self.structure.constraint_tolerance {
            line("constraint_tolerance", t.to_string());
        }
        line("shoot", String::new());
        if let Some(i) = &self.integrator {
            line("integrator", integrator_name(i.kind).into());
            line("steps", i.steps.to_string());
            line("integrator_tolerance", i.tolerance.to_string());
        }
        if let Some(h) = &self.solver {
            line("ftol", h.ftol.to_string());
            line("max_iterations", h.max_iterations.to_string());
        }
        if let Some(t) = self.tangency {
            line("tangency", if t == Tangency::Entry { "entry" } else { "exit" }.into());
        }
        if let Some(j) = self.singular_junction {
            line(
                "singular_junction",
                if j == SingularJunction::EntryRate { "entry_rate" } else { "entry_exit" }.into(),
            );
        }
        line("classify", String::new());
        line("tolerance", self.classify.tolerance.to_string());
        line("diverged_residual", self.classify.diverged_residual.to_string());
        let mut s = lines.join("\n");
        s.push('\n');
        s.trim_start().to_string()
    }

    /// Bundle for `id` with the state override applied.
    pub fn bundle(&self, id: ProblemId) -> Result<BenchmarkBundle> {
        let b = make_problem(id)?;
        match &self.initial_state {
            Some(x) => b.with_initial_state(x.clone()),
            None => Ok(b),
        }
    }

    /// The bundle's shooting spec with integrator and solver overrides.
    pub fn shooting_spec(&self, bundle: &BenchmarkBundle) -> ShootingSpec {
        let mut spec = bundle.shooting.clone();
        if let Some(i) = self.integrator {
            spec = spec.with_integrator(i);
        }
        if let Some(s) = &self.solver {
            spec = spec.with_solver(s.clone());
        }
        if let Some(t) = self.tangency {
            spec = spec.with_tangency(t);
        }
        if let Some(j) = self.singular_junction {
            spec = spec.with_singular_junction(j);
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbStage {
    pub grid_counts: Vec<usize>,
    pub control_count: usize,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// `T̃(x)`.
    pub value: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtractionStage {
    pub gradient: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub candidates: Vec<Vec<f64>>,
    pub final_time: Option<f64>,
    pub arrival_time: Option<f64>,
    pub structure: Option<StructureEstimate>,
    /// Non-fatal errors of the gradient, feedback and structure steps.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ShootingStage {
    pub candidate: usize,
    /// Packed unknowns; empty when packing failed.
    pub guess: Vec<f64>,
    pub solution: Option<ShootingSolution>,
    pub error: Option<String>,
    pub class: OutcomeClass,
    pub seconds: f64,
}

impl ShootingStage {
    pub fn converged(&self) -> bool {
        self.solution.as_ref().is_some_and(|s| s.converged)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub id: ProblemId,
    pub initial_state: Vec<f64>,
    pub hjb: Option<HjbStage>,
    pub extraction: ExtractionStage,
    /// One entry per costate candidate.
    pub shooting: Vec<ShootingStage>,
    /// Error that stopped the run before shooting.
    pub error: Option<String>,
}

impl PipelineReport {
    pub fn converged(&self) -> Vec<&ShootingSolution> {
        self.shooting.iter().filter_map(|s| s.solution.as_ref()).filter(|s| s.converged).collect()
    }
}

fn fmt_vec(v: &[f64], digits: usize) -> String {
    format!("({})", v.iter().map(|x| format!("{x:.digits$}")).collect::<Vec<_>>().join(", "))
}

impl fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "problem {}  x = {}", self.id, fmt_vec(&self.initial_state, 4))?;
        if let Some(h) = &self.hjb {
            writeln!(f)?;
            writeln!(
                f,
                "{:<16} {:>4} {:>6} {:>12} {:>10} {:>9}",
                "grid", "N_C", "iter", "residual", "T(x)", "time [s]"
            )?;
            let grid = h.grid_counts.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x");
            let value = h.value.map_or("-".to_string(), |v| format!("{v:.4}"));
            writeln!(
                f,
                "{:<16} {:>4} {:>6} {:>12.3e} {:>10} {:>9.3}",
                grid, h.control_count, h.iterations, h.residual, value, h.seconds
            )?;
        }
        let e = &self.extraction;
        if !e.candidates.is_empty() || e.gradient.is_some() {
            writeln!(f)?;
            if let Some(g) = &e.gradient {
                writeln!(f, "gradient        {}", fmt_vec(g, 4))?;
            }
            if let Some(d) = e.delta {
                writeln!(f, "ball radius     {d:.4}")?;
            }
            for (i, c) in e.candidates.iter().enumerate() {
                writeln!(f, "candidate {i:<5} {}", fmt_vec(c, 4))?;
            }
            if let Some(t) = e.final_time {
                writeln!(f, "t_f estimate    {t:.4}")?;
            }
            if let Some(s) = &e.structure {
                if !s.switches.is_empty() {
                    writeln!(f, "switches        {}", fmt_vec(&s.switches, 4))?;
                }
                for (a, b) in &s.singular_arcs {
                    writeln!(f, "singular arc    ({a:.4}, {b:.4})")?;
                }
                for (j, arcs) in s.constrained_arcs.iter().enumerate() {
                    for (a, b) in arcs {
                        writeln!(f, "constrained {j:<3} ({a:.4}, {b:.4})")?;
                    }
                }
            }
            for n in &e.notes {
                writeln!(f, "note            {n}")?;
            }
        }
        if !self.shooting.is_empty() {
            writeln!(f)?;
            writeln!(
                f,
                "{:<5} {:<10} {:>12} {:>12} {:>6} {:>9}  {:<15} {}",
                "cand", "status", "t_f", "residual", "iter", "time [s]", "class", "p(0) | junctions | multipliers"
            )?;
            for s in &self.shooting {
                match &s.solution {
                    Some(sol) => {
                        let mut tail = fmt_vec(sol.initial_costate(), 6);
                        if !sol.junction_times().is_empty() {
                            tail.push_str(&format!(" | {}", fmt_vec(sol.junction_times(), 6)));
                        }
                        if !sol.multipliers().is_empty() {
                            tail.push_str(&format!(" | {}", fmt_vec(sol.multipliers(), 6)));
                        }
                        writeln!(
                            f,
                            "{:<5} {:<10} {:>12.6} {:>12.3e} {:>6} {:>9.3}  {:<15} {}",
                            s.candidate,
                            if sol.converged { "converged" } else { "failed" },
                            sol.final_time,
                            sol.residual_norm,
                            sol.iterations,
                            s.seconds,
                            s.class.to_string(),
                            tail
                        )?;
                    }
                    None => writeln!(
                        f,
                        "{:<5} {:<10} {:>12} {:>12} {:>6} {:>9.3}  {:<15} {}",
                        s.candidate,
                        "error",
                        "-",
                        "-",
                        "-",
                        s.seconds,
                        s.class.to_string(),
                        s.error.as_deref().unwrap_or("")
                    )?,
                }
            }
        }
        if let Some(err) = &self.error {
            writeln!(f)?;
            writeln!(f, "stopped: {err}")?;
        }
        Ok(())
    }
}

/// Runs value function, extraction and shooting for `id`, writing artifacts
/// under `out` when given.
pub fn run_pipeline(id: ProblemId, cfg: &PipelineConfig, out: Option<&Path>) -> Result<PipelineReport> {
    let bundle = cfg.bundle(id)?;
    let spec = cfg.shooting_spec(&bundle);
    let x = bundle.initial_state.clone();
    let mut report = PipelineReport {
        id,
        initial_state: x.clone(),
        hjb: None,
        extraction: ExtractionStage::default(),
        shooting: Vec::new(),
        error: None,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.ini"), cfg.to_ini_string())?;
    }

    let counts = cfg.grid_counts.clone().unwrap_or_else(|| bundle.grid_counts.clone());
    let nc = cfg.control_count.unwrap_or(bundle.control_count);
    let problem = bundle.problem.as_ref().clone().with_control_count(nc);
    let start = Instant::now();
    let field = Grid::anisotropic(bundle.domain(), &counts).and_then(|g| solve_value(&problem, &g, &cfg.hjb));
    let field = match field {
        Ok(f) => f,
        Err(e) => {
            report.error = Some(format!("hjb: {e}"));
            return finish(report, out);
        }
    };
    let tf = field.to_time_field();
    report.hjb = Some(HjbStage {
        grid_counts: counts,
        control_count: field.info.control_count,
        iterations: field.info.iterations,
        residual: field.info.residual,
        converged: field.info.converged,
        value: tf.interpolate(&x),
        seconds: start.elapsed().as_secs_f64(),
    });
    if !field.info.converged {
        report.extraction.notes.push(format!("hjb not converged (residual {:e})", field.info.residual));
    }
    if let Some(dir) = out {
        if x.len() >= 2 {
            let mut fixed = x.clone();
            for (i, v) in fixed.iter_mut().enumerate().skip(2) {
                *v = v.clamp(tf.grid.lower()[i], tf.grid.upper()[i]);
            }
            export_value_slice(&tf, (0, 1), &fixed, &dir.join("value_slice.csv"))?;
        }
    }

    let ex = &mut report.extraction;
    match gradient_centered(&tf, &x, cfg.gradient_cells * tf.grid.k()) {
        Ok(g) => ex.gradient = Some(g),
        Err(e) => ex.notes.push(format!("gradient: {e}")),
    }
    let search = match search_directions(&tf, &x, &cfg.guess) {
        Ok(s) => s,
        Err(e) => {
            report.error = Some(format!("directions: {e}"));
            return finish(report, out);
        }
    };
    ex.delta = Some(search.delta);
    let traj: Option<Trajectory> = match feedback_trajectory(&problem, &field, &x, &cfg.feedback) {
        Ok(t) => Some(t),
        Err(e) => {
            ex.notes.push(format!("feedback: {e}"));
            None
        }
    };
    let mut structure =
        StructureEstimate { constrained_arcs: vec![Vec::new(); problem.constraints.len()], ..Default::default() };
    if let Some(t) = &traj {
        ex.arrival_time = t.arrival_time;
        if !t.arrived {
            ex.notes.push("feedback trajectory did not reach the target".into());
        }
        structure = estimate_structure(&problem, t, tf.grid.spacing(), &cfg.structure);
        ex.structure = Some(structure.clone());
        if let Some(dir) = out {
            t.save_csv(&dir.join("feedback.csv"))?;
        }
    }
    let guess = match costate_guess(&problem, &tf, &x, &search, traj.as_ref()) {
        Ok(g) if !g.candidates.is_empty() => g,
        Ok(_) => {
            report.error = Some("directions: no decrease direction found".into());
            return finish(report, out);
        }
        Err(e) => {
            report.error = Some(format!("directions: {e}"));
            return finish(report, out);
        }
    };
    ex.candidates = guess.candidates.clone();
    ex.final_time = Some(guess.final_time);

    for i in 0..guess.candidates.len() {
        let start = Instant::now();
        let mut stage = ShootingStage {
            candidate: i,
            guess: Vec::new(),
            solution: None,
            error: None,
            class: OutcomeClass::Diverged,
            seconds: 0.0,
        };
        // arc times are only needed when the shooting layout has junctions
        let packed = if spec.layout().junctions == 0 {
            let empty = StructureEstimate {
                constrained_arcs: vec![Vec::new(); problem.constraints.len()],
                ..Default::default()
            };
            make_initial_guess(&guess, i, &empty, &spec)
        } else {
            make_initial_guess(&guess, i, &structure, &spec)
        };
        match packed {
            Ok(z) => {
                stage.guess = z;
                match solve_shooting(&spec, &stage.guess) {
                    Ok(sol) => {
                        stage.class = classify(&bundle, sol.final_time, sol.residual_norm, &cfg.classify);
                        if let Some(dir) = out {
                            sol.save(&dir.join(format!("shooting_{i}")))?;
                        }
                        stage.solution = Some(sol);
                    }
                    Err(e) => stage.error = Some(format!("shooting: {e}")),
                }
            }
            Err(e) => stage.error = Some(format!("initial guess: {e}")),
        }
        stage.seconds = start.elapsed().as_secs_f64();
        report.shooting.push(stage);
    }
    finish(report, out)
}

fn finish(report: PipelineReport, out: Option<&Path>) -> Result<PipelineReport> {
    if let Some(dir) = out {
        fs::write(dir.join("report.txt"), report.to_string())?;
    }
    Ok(report)
}

/// Settings of [`run_basin`].
#[derive(Debug, Clone, PartialEq)]
pub struct BasinConfig {
    /// Box of initial costates.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Points per axis; a single point sits at `lower`.
    pub counts: Vec<usize>,
    pub final_times: Vec<f64>,
    pub classify: ClassifyConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinPoint {
    pub final_time_guess: f64,
    pub costate_guess: Vec<f64>,
    pub class: OutcomeClass,
    /// Final time of the run; `None` when it stopped on an error.
    pub final_time: Option<f64>,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinReport {
    pub id: ProblemId,
    pub points: Vec<BasinPoint>,
}

impl BasinReport {
    pub fn count(&self, class: OutcomeClass) -> usize {
        self.points.iter().filter(|p| p.class == class).count()
    }

    /// Share of `class` in percent.
    pub fn percentage(&self, class: OutcomeClass) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        100.0 * self.count(class) as f64 / self.points.len() as f64
    }

    /// Header `tf0,p0..,class,tf,residual`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.points.first().map_or(0, |p| p.costate_guess.len());
        let cols: Vec<String> = (1..=d).map(|i| format!("p{i}")).collect();
        writeln!(w, "tf0,{},class,tf,residual", cols.join(","))?;
        for p in &self.points {
            let costate: Vec<String> = p.costate_guess.iter().map(|v| fmt_float(*v)).collect();
            let tf = p.final_time.map_or("nan".to_string(), fmt_float);
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_float(p.final_time_guess),
                costate.join(","),
                p.class,
                tf,
                fmt_float(p.residual_norm)
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for BasinReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "problem {}  {} shootings", self.id, self.points.len())?;
        writeln!(f, "{:<15} {:>6} {:>8}", "class", "count", "percent")?;
        for c in OutcomeClass::ALL {
            writeln!(f, "{:<15} {:>6} {:>8.1}", c.to_string(), self.count(c), self.percentage(c))?;
        }
        Ok(())
    }
}

fn axis_values(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Shoots from every point of a costate grid and every final-time guess.
/// Junction times and multipliers come from the bundle's first recorded
/// initialization for its state. Results are ordered by final-time guess,
/// then row-major over the costate grid.
pub fn run_basin(bundle: &BenchmarkBundle, spec: &ShootingSpec, cfg: &BasinConfig) -> Result<BasinReport> {
    let d = bundle.problem.state_dim();
    for v in [&cfg.lower, &cfg.upper] {
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: v.len() });
        }
    }
    if cfg.counts.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: cfg.counts.len() });
    }
    let layout = spec.layout();
    let init = bundle.initializations.iter().find(|r| r.initial_state == bundle.initial_state.as_slice());
    let junctions = init.map(|r| r.junctions.to_vec()).unwrap_or_default();
    let multipliers: Vec<f64> = match init.and_then(|r| r.multiplier) {
        Some(m) => vec![m; layout.multipliers],
        None => vec![crate::costate::DEFAULT_JUMP_MULTIPLIER; layout.multipliers],
    };
    let axes: Vec<Vec<f64>> = (0..d).map(|i| axis_values(cfg.lower[i], cfg.upper[i], cfg.counts[i])).collect();
    let per_tf: usize = axes.iter().map(|a| a.len()).product();
    let total = per_tf * cfg.final_times.len();

    let points = (0..total)
        .into_par_iter()
        .map(|n| {
            let tf0 = cfg.final_times[n / per_tf];
            let mut r = n % per_tf;
            let mut p = vec![0.0; d];
            for i in (0..d).rev() {
                p[i] = axes[i][r % axes[i].len()];
                r /= axes[i].len();
            }
            let run = layout.pack(tf0, &p, &junctions, &multipliers).and_then(|z| solve_shooting(spec, &z));
            let (final_time, residual_norm, class) = match run {
                Ok(sol) => {
                    let class = if sol.converged {
                        classify(bundle, sol.final_time, sol.residual_norm, &cfg.classify)
                    } else {
                        OutcomeClass::Diverged
                    };
                    (Some(sol.final_time), sol.residual_norm, class)
                }
                Err(_) => (None, f64::INFINITY, OutcomeClass::Diverged),
            };
            BasinPoint { final_time_guess: tf0, costate_guess: p, class, final_time, residual_norm }
        })
        .collect();
    Ok(BasinReport { id: bundle.id, points })
}

/// Writes `x_a,x_b,T` over the nodes of axes `a` and `b`, the other
/// coordinates taken from `fixed`; rows run over `a` first, then `b`.
pub fn write_value_slice<W: Write>(tf: &TimeField, axes: (usize, usize), fixed: &[f64], mut w: W) -> Result<()> {
    let d = tf.grid.dim();
    let (a, b) = axes;
    if a >= d || b >= d || a == b {
        return Err(Error::Config(format!("invalid slice axes ({a}, {b}) for dimension {d}")));
    }
    if fixed.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: fixed.len() });
    }
    if !tf.grid.contains(fixed) {
        return Err(Error::Config("fixed coordinates lie outside the domain".into()));
    }
    writeln!(w, "x_a,x_b,T")?;
    let node = |axis: usize, i: usize| tf.grid.lower()[axis] + i as f64 * tf.grid.spacing()[axis];
    let mut y = fixed.to_vec();
    for i in 0..tf.grid.counts()[a] {
        for j in 0..tf.grid.counts()[b] {
            y[a] = node(a, i).min(tf.grid.upper()[a]);
            y[b] = node(b, j).min(tf.grid.upper()[b]);
            let t = tf.interpolate(&y).unwrap_or(f64::NAN);
            writeln!(w, "{},{},{}", fmt_float(y[a]), fmt_float(y[b]), fmt_float(t))?;
        }
    }
    Ok(())
}

pub fn export_value_slice(tf: &TimeField, axes: (usize, usize), fixed: &[f64], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    write_value_slice(tf, axes, fixed, &mut file)?;
    file.flush()?;
    Ok(())
}
