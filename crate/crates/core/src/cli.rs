//! Command-line front end: `solve`, `study` and `oracle-check`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::assembly::assemble_condensed;
use crate::eigensolve::{oracle_full_eig, solve_lowest_modes, NonlinearOptions, ORACLE_SIZE_LIMIT};
use crate::error::{HdgError, Result};
use crate::localsolve::{MaterialSpec, SpaceCase, SpaceConfig, TauSpec};
use crate::mesh::{build_mesh, Domain};
use crate::study::{emit_table, run_convergence_study, solve_eigen, EigenSolution, OutputFormat, SolveConfig, StudyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Relative agreement required by `oracle-check`.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "hdg-eig", version, about = "HDG eigenvalue solver for -div(alpha grad u) = lambda u")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lowest eigenvalues on one mesh.
    Solve(SolveArgs),
    /// Multi-level convergence table against exact eigenvalues.
    Study(StudyArgs),
    /// Compare condensed eigenvalues with the full solution-operator spectrum.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// square | lshape
    #[arg(long)]
    pub domain: Option<String>,
    /// Trace degree.
    #[arg(long)]
    pub k: Option<usize>,
    /// equal | case1 | case2
    #[arg(long)]
    pub case: Option<String>,
    /// one | h | invh | zero | localh | invlocalh | hdiam | invhdiam | const:<x>
    #[arg(long)]
    pub tau: Option<String>,
    /// Relative tolerance of the nonlinear iteration.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Iteration budget of the nonlinear iteration.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// markdown | csv | json
    #[arg(long)]
    pub format: Option<String>,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "HDG_EIG_THREADS")]
    pub threads: Option<usize>,
    /// TOML file providing defaults; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Progress on stderr.
    #[arg(long, short, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub level: Option<usize>,
    /// Number of lowest modes (a list means its largest entry).
    #[arg(long)]
    pub modes: Option<String>,
    /// Skip the postprocessed eigenvalue.
    #[arg(long)]
    pub no_postprocess: bool,
    /// Also write the mesh in the plain-text dump format.
    #[arg(long)]
    pub dump_mesh: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Level range `first:last`, inclusive.
    #[arg(long)]
    pub levels: Option<String>,
    /// Comma-separated one-based mode indices.
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long)]
    pub no_postprocess: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub level: Option<usize>,
    /// Number of lowest modes compared.
    #[arg(long)]
    pub modes: Option<String>,
}

/// Keys accepted in the `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub domain: Option<String>,
    pub k: Option<usize>,
    pub case: Option<String>,
    pub tau: Option<String>,
    pub level: Option<usize>,
    pub levels: Option<String>,
    pub modes: Option<ModesValue>,
    pub postprocess: Option<bool>,
    pub alpha: Option<[[f64; 2]; 2]>,
    pub rel_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub format: Option<String>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub verbose: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ModesValue {
    Count(usize),
    List(Vec<usize>),
}

impl ModesValue {
    fn parse(s: &str) -> Result<Self> {
        let items = s
            .split(',')
            .map(|t| {
                t.trim().parse::<usize>().map_err(|_| {
                    HdgError::InvalidConfig(format!("invalid mode list '{s}'"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(match items.as_slice() {
            [n] => ModesValue::Count(*n),
            _ => ModesValue::List(items),
        })
    }

    fn count(&self) -> usize {
        match self {
            ModesValue::Count(n) => *n,
            ModesValue::List(v) => v.iter().copied().max().unwrap_or(0),
        }
    }

    fn list(&self) -> Vec<usize> {
        match self {
            ModesValue::Count(n) => vec![*n],
            ModesValue::List(v) => v.clone(),
        }
    }
}

/// Parses `a:b` into an inclusive range.
pub fn parse_levels(s: &str) -> Result<(usize, usize)> {
    let bad = || HdgError::InvalidConfig(format!("invalid level range '{s}' (expected first:last)"));
    let (a, b) = match s.split_once(':') {
        Some((a, b)) => (a, b),
        None => (s, s),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(HdgError::InvalidConfig(format!("level range {a}:{b} is empty")));
    }
    Ok((a, b))
}

/// Flags merged over the config file.
#[derive(Debug, Clone)]
struct Resolved {
    domain: Domain,
    spaces: SpaceConfig,
    tau: TauSpec,
    alpha: [[f64; 2]; 2],
    nonlinear: NonlinearOptions,
    format: Option<OutputFormat>,
    output: Option<PathBuf>,
    verbose: u8,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| {
        HdgError::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
    })?;
    toml::from_str(&text)
        .map_err(|e| HdgError::InvalidConfig(format!("config {}: {e}", path.display())))
}

fn resolve_common(c: &CommonArgs, file: &FileConfig) -> Result<Resolved> {
    let domain: Domain = c
        .domain
        .as_deref()
        .or(file.domain.as_deref())
        .unwrap_or("square")
        .parse()?;
    let k = c.k.or(file.k).unwrap_or(1);
    let case: SpaceCase = c.case.as_deref().or(file.case.as_deref()).unwrap_or("equal").parse()?;
    let spaces = SpaceConfig::new(case, k)?;
    let tau: TauSpec = c.tau.as_deref().or(file.tau.as_deref()).unwrap_or("one").parse()?;
    tau.validate()?;
    spaces.validate_tau(&tau)?;
    let alpha = file.alpha.unwrap_or([[1.0, 0.0], [0.0, 1.0]]);
    MaterialSpec::new(alpha)?;
    let defaults = NonlinearOptions::default();
    let nonlinear = NonlinearOptions {
        rel_tol: c.rel_tol.or(file.rel_tol).unwrap_or(defaults.rel_tol),
        max_iter: c.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
    };
    if !(nonlinear.rel_tol > 0.0) || nonlinear.max_iter == 0 {
        return Err(HdgError::InvalidConfig(
            "rel-tol and max-iter must be positive".into(),
        ));
    }
    let format = c
        .format
        .as_deref()
        .or(file.format.as_deref())
        .map(str::parse)
        .transpose()?;
    if let Some(n) = c.threads.or(file.threads) {
        if n == 0 {
            return Err(HdgError::InvalidConfig("threads must be positive".into()));
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(Resolved {
        domain,
        spaces,
        tau,
        alpha,
        nonlinear,
        format,
        output: c.output.clone().or_else(|| file.output.clone()),
        verbose: c.verbose.max(file.verbose.unwrap_or(0)),
    })
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn render_solution(sol: &EigenSolution, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => serde_json::to_string_pretty(sol).expect("serialisable") + "\n",
        OutputFormat::Csv => {
            let mut s = String::from("mode,lambda,lambda_surrogate,lambda_star,iterations,residual\n");
            for m in &sol.modes {
                s += &format!(
                    "{},{},{},{},{},{}\n",
                    m.mode,
                    m.lambda,
                    m.lambda_surrogate,
                    m.lambda_star.map_or_else(String::new, |v| v.to_string()),
                    m.iterations,
                    m.residual
                );
            }
            s
        }
        OutputFormat::Markdown => {
            let mut s = format!(
                "# {} level {} k={} case={} tau={} ({} trace dofs)\n\n| mode | lambda_h | lambda~_h | lambda* | iterations |\n|---|---|---|---|---|\n",
                sol.domain.name(),
                sol.level,
                sol.k,
                sol.case,
                sol.tau,
                sol.n_dofs
            );
            for m in &sol.modes {
                s += &format!(
                    "| {} | {:.12} | {:.12} | {} | {} |\n",
                    m.mode,
                    m.lambda,
                    m.lambda_surrogate,
                    m.lambda_star.map_or_else(|| "-".into(), |v| format!("{v:.12}")),
                    m.iterations
                );
            }
            s
        }
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let file = load_file_config(args.common.config.as_deref())?;
    let r = resolve_common(&args.common, &file)?;
    let count = match (&args.modes, &file.modes) {
        (Some(s), _) => ModesValue::parse(s)?.count(),
        (None, Some(m)) => m.count(),
        (None, None) => 6,
    };
    let config = SolveConfig {
        domain: r.domain,
        level: args.level.or(file.level).unwrap_or(0),
        k: r.spaces.k,
        case: r.spaces.case,
        tau: r.tau,
        count,
        postprocess: !args.no_postprocess && file.postprocess.unwrap_or(true),
        alpha: r.alpha,
        nonlinear: r.nonlinear,
    };
    if let Some(path) = &args.dump_mesh {
        let mesh = build_mesh(config.domain, config.level.min(crate::study::MAX_LEVEL));
        mesh.write_text(fs::File::create(path)?)?;
    }
    let start = Instant::now();
    let sol = solve_eigen(&config)?;
    if r.verbose > 0 {
        eprintln!("solved {} modes in {:.2?}", sol.modes.len(), start.elapsed());
    }
    let text = render_solution(&sol, r.format.unwrap_or(OutputFormat::Json));
    write_output(r.output.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn cmd_study(args: &StudyArgs) -> Result<i32> {
    let file = load_file_config(args.common.config.as_deref())?;
    let r = resolve_common(&args.common, &file)?;
    let levels = match args.levels.as_deref().or(file.levels.as_deref()) {
        Some(s) => parse_levels(s)?,
        None => (0, 3),
    };
    let modes = match (&args.modes, &file.modes) {
        (Some(s), _) => ModesValue::parse(s)?.list(),
        (None, Some(m)) => m.list(),
        (None, None) => vec![1, 2, 4, 6],
    };
    let config = StudyConfig {
        domain: r.domain,
        k: r.spaces.k,
        case: r.spaces.case,
        tau: r.tau,
        levels,
        modes,
        postprocess: !args.no_postprocess && file.postprocess.unwrap_or(true),
        alpha: r.alpha,
        nonlinear: r.nonlinear,
    };
    let start = Instant::now();
    let report = run_convergence_study(&config)?;
    if r.verbose > 0 {
        for l in &report.levels {
            eprintln!("level {}: {} dofs, {:.2}s", l.level, l.n_dofs, l.seconds);
        }
        eprintln!("study finished in {:.2?}", start.elapsed());
    }
    let text = emit_table(&report, r.format.unwrap_or(OutputFormat::Markdown));
    write_output(r.output.as_deref(), &text)?;
    let failed = report
        .modes
        .iter()
        .flat_map(|s| &s.cells)
        .any(|c| c.failure.is_some());
    Ok(if failed { EXIT_NUMERICAL } else { EXIT_OK })
}

fn cmd_oracle_check(args: &OracleArgs) -> Result<i32> {
    let file = load_file_config(args.common.config.as_deref())?;
    let r = resolve_common(&args.common, &file)?;
    let level = args.level.or(file.level).unwrap_or(0);
    let count = match (&args.modes, &file.modes) {
        (Some(s), _) => ModesValue::parse(s)?.count(),
        (None, Some(m)) => m.count(),
        (None, None) => 6,
    };
    if count == 0 {
        return Err(HdgError::InvalidConfig("at least one mode is required".into()));
    }
    // cheap size estimate before building anything: 32 or 24 elements at level 0
    let base = match r.domain {
        Domain::Square => 32usize,
        Domain::LShape => 24,
    };
    let dim_w = 4usize
        .checked_pow(level as u32)
        .and_then(|f| f.checked_mul(base * r.spaces.n_w()))
        .unwrap_or(usize::MAX);
    if dim_w > ORACLE_SIZE_LIMIT {
        return Err(HdgError::SizeGuard {
            size: dim_w,
            limit: ORACLE_SIZE_LIMIT,
        });
    }
    let mat = MaterialSpec::new(r.alpha)?;
    let mesh = Arc::new(build_mesh(r.domain, level));
    let oracle = oracle_full_eig(mesh.clone(), r.spaces, r.tau, mat)?;
    let sys = assemble_condensed(mesh, r.spaces, r.tau, mat)?;
    let (_, pairs) = solve_lowest_modes(&sys, count, r.nonlinear)?;
    let mut text = format!(
        "# oracle check: {} level {} k={} case={} tau={}\n\n| mode | condensed | oracle | rel. diff |\n|---|---|---|---|\n",
        r.domain.name(),
        level,
        r.spaces.k,
        r.spaces.case,
        r.tau
    );
    let mut worst = 0.0f64;
    for (i, p) in pairs.iter().enumerate() {
        let o = oracle.eigenvalues[i];
        let d = (p.lambda - o).abs() / o;
        worst = worst.max(d);
        text += &format!("| {} | {:.15} | {:.15} | {:.2e} |\n", i + 1, p.lambda, o, d);
    }
    let pass = worst < ORACLE_TOLERANCE;
    text += &format!(
        "\nmax relative difference {worst:.2e} ({}; tolerance {ORACLE_TOLERANCE:.0e}), M_W R asymmetry {:.2e}\n",
        if pass { "agree" } else { "DISAGREE" },
        oracle.symmetry_defect
    );
    write_output(r.output.as_deref(), &text)?;
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Study(a) => cmd_study(a),
        Command::OracleCheck(a) => cmd_oracle_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}
