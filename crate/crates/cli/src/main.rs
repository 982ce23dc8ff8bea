use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hjbshoot::hjb::save_node_dump;
use hjbshoot::pipeline::{export_value_slice, parse_integrator, parse_update, ClassifyConfig};
use hjbshoot::{
    run_basin, run_pipeline, solve_shooting, solve_value, BasinConfig, Grid, IntegratorConfig, PipelineConfig,
    ProblemId, TimeField,
};

#[derive(Parser)]
#[command(name = "hjbshoot", version, about = "HJB value functions and indirect shooting for optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the HJB equation and report T(x).
    Hjb(HjbArgs),
    /// Shoot from an explicit vector of unknowns.
    Shoot(ShootArgs),
    /// HJB, costate extraction and shooting in one run.
    Pipeline(PipelineArgs),
    /// Shoot from a grid of initial costates and classify the outcomes.
    Basin(BasinArgs),
    /// Export a 2D slice of the minimum-time function as CSV.
    Slice(SliceArgs),
}

#[derive(Args)]
struct Common {
    /// Problem id: P1, P2, P3 or P4.
    id: ProblemId,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// Nodes per axis, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Number of discrete controls.
    #[arg(long)]
    nc: Option<usize>,
    /// Fixed-point tolerance.
    #[arg(long)]
    eps: Option<f64>,
    /// Node update: discounted, implicit or explicit.
    #[arg(long)]
    update: Option<String>,
}

#[derive(Args)]
struct HjbArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct ShootArgs {
    #[command(flatten)]
    common: Common,
    /// Unknowns: t_f (when free), p(0), junction times, jump multipliers.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    guess: Vec<f64>,
    /// Integrator: rk4, events or adaptive.
    #[arg(long)]
    integrator: Option<String>,
    /// Steps per arc for the RK4 integrators.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
    /// Configuration file with `[problem]`, `[hjb]`, `[extract]`, `[shoot]`
    /// and `[classify]` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Integrator: rk4, events or adaptive.
    #[arg(long)]
    integrator: Option<String>,
}

#[derive(Args)]
struct BasinArgs {
    #[command(flatten)]
    common: Common,
    /// Costate box as lower and upper bound per axis: lo1,hi1,lo2,hi2,...
    #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true, required = true)]
    bounds: Vec<f64>,
    /// Points per axis.
    #[arg(long, value_delimiter = ',', required = true)]
    counts: Vec<usize>,
    /// Final-time guesses.
    #[arg(long, value_delimiter = ',', required = true)]
    tf: Vec<f64>,
    /// Final-time tolerance of the classification.
    #[arg(long, default_value_t = 0.05)]
    classify_tol: f64,
    /// Integrator: rk4, events or adaptive.
    #[arg(long)]
    integrator: Option<String>,
}

#[derive(Args)]
struct SliceArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
    /// The two axes spanning the slice.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    axes: Vec<usize>,
    /// Full point supplying the remaining coordinates; defaults to x.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    fixed: Option<Vec<f64>>,
}

fn apply_grid(cfg: &mut PipelineConfig, g: &GridArgs) -> Result<()> {
    if let Some(n) = &g.grid {
        cfg.grid_counts = Some(n.clone());
    }
    if let Some(n) = g.nc {
        cfg.control_count = Some(n);
    }
    if let Some(e) = g.eps {
        cfg.hjb.tolerance = e;
    }
    if let Some(u) = &g.update {
        cfg.hjb.node_update = parse_update(u)?;
    }
    Ok(())
}

fn integrator(name: &Option<String>, steps: Option<usize>) -> Result<Option<IntegratorConfig>> {
    let mut cfg = match name {
        Some(n) => Some(IntegratorConfig::with_kind(parse_integrator(n)?)),
        None => None,
    };
    if let Some(s) = steps {
        cfg = Some(IntegratorConfig { steps: s, ..cfg.unwrap_or_default() });
    }
    Ok(cfg)
}

fn base_config(common: &Common) -> PipelineConfig {
    PipelineConfig { initial_state: common.x.clone(), ..Default::default() }
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// Solves the value function for the configured bundle.
fn solve_field(cfg: &PipelineConfig, id: ProblemId) -> Result<(TimeField, Vec<f64>, hjbshoot::ValueField, f64)> {
    let bundle = cfg.bundle(id)?;
    let counts = cfg.grid_counts.clone().unwrap_or_else(|| bundle.grid_counts.clone());
    let nc = cfg.control_count.unwrap_or(bundle.control_count);
    let problem = bundle.problem.as_ref().clone().with_control_count(nc);
    let grid = Grid::anisotropic(bundle.domain(), &counts)?;
    let start = Instant::now();
    let field = solve_value(&problem, &grid, &cfg.hjb)?;
    let secs = start.elapsed().as_secs_f64();
    Ok((field.to_time_field(), bundle.initial_state, field, secs))
}

fn hjb(args: HjbArgs) -> Result<()> {
    let mut cfg = base_config(&args.common);
    apply_grid(&mut cfg, &args.grid)?;
    let (tf, x, field, secs) = solve_field(&cfg, args.common.id)?;
    prepare(&args.common.out)?;
    save_node_dump(&field.grid, &tf.values, &args.common.out.join("time_field.csv"))?;
    let counts = field.grid.counts().iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x");
    println!(
        "{:<16} {:>4} {:>6} {:>12} {:>10} {:>10} {:>9}",
        "grid", "N_C", "iter", "residual", "converged", "T(x)", "time [s]"
    );
    let value = tf.interpolate(&x).map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:<16} {:>4} {:>6} {:>12.3e} {:>10} {:>10} {:>9.3}",
        counts, field.info.control_count, field.info.iterations, field.info.residual, field.info.converged, value, secs
    );
    Ok(())
}

fn shoot(args: ShootArgs) -> Result<()> {
    let mut cfg = base_config(&args.common);
    cfg.integrator = integrator(&args.integrator, args.steps)?;
    let bundle = cfg.bundle(args.common.id)?;
    let spec = cfg.shooting_spec(&bundle);
    let layout = spec.layout();
    if args.guess.len() != layout.len() {
        bail!(
            "{} expects {} unknowns (t_f: {}, costate: {}, junctions: {}, multipliers: {}), got {}",
            args.common.id,
            layout.len(),
            usize::from(layout.free_time),
            layout.state_dim,
            layout.junctions,
            layout.multipliers,
            args.guess.len()
        );
    }
    let start = Instant::now();
    let sol = solve_shooting(&spec, &args.guess)?;
    let secs = start.elapsed().as_secs_f64();
    sol.save(&args.common.out)?;
    let mut summary = Vec::new();
    sol.write_summary(&mut summary)?;
    print!("{}", String::from_utf8_lossy(&summary));
    println!("time_s={secs:.4}");
    if !sol.converged {
        bail!("shooting did not converge (residual {:e})", sol.residual_norm);
    }
    Ok(())
}

fn pipeline(args: PipelineArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(x) = &args.common.x {
        cfg.initial_state = Some(x.clone());
    }
    apply_grid(&mut cfg, &args.grid)?;
    if let Some(i) = integrator(&args.integrator, None)? {
        cfg.integrator = Some(i);
    }
    let report = run_pipeline(args.common.id, &cfg, Some(&args.common.out))?;
    print!("{report}");
    Ok(())
}

fn basin(args: BasinArgs) -> Result<()> {
    let mut cfg = base_config(&args.common);
    cfg.integrator = integrator(&args.integrator, None)?;
    let bundle = cfg.bundle(args.common.id)?;
    let spec = cfg.shooting_spec(&bundle);
    let d = bundle.problem.state_dim();
    if args.bounds.len() != 2 * d {
        bail!("--box needs {} values (lower and upper per axis), got {}", 2 * d, args.bounds.len());
    }
    let basin_cfg = BasinConfig {
        lower: args.bounds.iter().step_by(2).copied().collect(),
        upper: args.bounds.iter().skip(1).step_by(2).copied().collect(),
        counts: args.counts,
        final_times: args.tf,
        classify: ClassifyConfig { tolerance: args.classify_tol, ..Default::default() },
    };
    let start = Instant::now();
    let report = run_basin(&bundle, &spec, &basin_cfg)?;
    prepare(&args.common.out)?;
    let file = fs::File::create(args.common.out.join("basin.csv"))?;
    report.write_csv(std::io::BufWriter::new(file))?;
    print!("{report}");
    println!("time [s] {:.3}", start.elapsed().as_secs_f64());
    Ok(())
}

fn slice(args: SliceArgs) -> Result<()> {
    let mut cfg = base_config(&args.common);
    apply_grid(&mut cfg, &args.grid)?;
    let [a, b] = args.axes[..] else {
        bail!("--axes needs exactly two values");
    };
    let (tf, x, _, _) = solve_field(&cfg, args.common.id)?;
    let fixed = args.fixed.unwrap_or(x);
    prepare(&args.common.out)?;
    let path = args.common.out.join("value_slice.csv");
    export_value_slice(&tf, (a, b), &fixed, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Hjb(a) => hjb(a),
        Command::Shoot(a) => shoot(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Basin(a) => basin(a),
        Command::Slice(a) => slice(a),
    }
}
