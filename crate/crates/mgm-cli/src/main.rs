//! `mgm` — build hierarchies, assemble level systems, run multigrid solves,
//! and drive the studies from JSON configs.
//!
//! Exit codes: 0 on success/pass, 2 when a study (or solve) fails its
//! target, 1 on any error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use mgm_core::assembly::{self, EllipticOperator};
use mgm_core::error::{MgError, Result};
use mgm_core::geometry::{self, Manifold};
use mgm_core::linalg;
use mgm_core::multigrid::MgConfig;
use mgm_core::study::{self, HierarchySpec, StudyConfig, StudyKind, Thresholds};
use mgm_core::Vector;

#[derive(Parser)]
#[command(
    name = "mgm",
    version,
    about = "Kernel-based Galerkin multigrid on closed surfaces"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a nested point hierarchy and write it as JSON.
    Hierarchy(CommonArgs),
    /// Assemble the level systems; write matrices and the basis cache.
    Assemble(AssembleArgs),
    /// Run one multigrid solve and print its report as JSON.
    Solve(SeededArgs),
    /// Run a study and write its CSV/JSON artifacts.
    Study(StudyArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AssembleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory for Lagrange basis cache files (default: <out>/cache).
    #[arg(long)]
    basis_cache: Option<PathBuf>,
}

#[derive(Args)]
struct SeededArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which study to run: contraction, convergence, or complexity.
    #[arg(long)]
    kind: String,
    /// Override the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// Config schemas
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyConfig {
    manifold: Manifold,
    depth: usize,
    base: usize,
}

fn default_m() -> u32 {
    3
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct AssembleConfig {
    manifold: Manifold,
    #[serde(default = "default_m")]
    m: u32,
    #[serde(default)]
    operator: EllipticOperator,
    hierarchy: HierarchySpec,
}

#[derive(Debug, Clone, Copy, Default, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
enum RhsSpec {
    #[default]
    Zero,
    Manufactured,
    Random,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveConfig {
    manifold: Manifold,
    #[serde(default = "default_m")]
    m: u32,
    #[serde(default)]
    operator: EllipticOperator,
    hierarchy: HierarchySpec,
    #[serde(default)]
    mg: MgConfig,
    #[serde(default)]
    rhs: RhsSpec,
    /// Level to solve on (default: finest).
    #[serde(default)]
    level: Option<usize>,
    #[serde(default)]
    seed: u64,
}

fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| MgError::Format(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| MgError::Format(format!("{}: {e}", path.display())))
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_hierarchy(args: &CommonArgs) -> Result<ExitCode> {
    let cfg: HierarchyConfig = load_config(&args.config)?;
    let hier = geometry::build_hierarchy(cfg.manifold, cfg.depth, cfg.base)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("hierarchy.json");
    atomic_write(&path, geometry::hierarchy_to_json(&hier).as_bytes())?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_assemble(args: &AssembleArgs) -> Result<ExitCode> {
    let cfg: AssembleConfig = load_config(&args.common.config)?;
    cfg.operator.validate(cfg.manifold)?;
    let out = &args.common.out;
    fs::create_dir_all(out)?;
    let cache = args
        .basis_cache
        .clone()
        .unwrap_or_else(|| out.join("cache"));
    fs::create_dir_all(&cache)?;
    let hier = geometry::build_hierarchy(cfg.manifold, cfg.hierarchy.depth, cfg.hierarchy.base)?;
    let assembled = assembly::assemble_hierarchy(&cfg.operator, &hier, cfg.m, Some(&cache))?;
    let mut summary = Vec::new();
    for (l, lev) in assembled.levels.iter().enumerate() {
        let a_path = out.join(format!("a_level{l}.dmat"));
        assembly::write_dense_matrix(&a_path, &lev.system.a)?;
        if let Some(p) = &lev.prolongation {
            assembly::write_dense_matrix(&out.join(format!("p_level{l}.dmat")), p)?;
        }
        summary.push(serde_json::json!({
            "level": l,
            "n": lev.n(),
            "h": lev.stats.h,
            "q": lev.stats.q,
            "rho": lev.stats.rho,
            "theta": lev.system.theta,
            "theta_converged": lev.system.theta_converged,
            "cardinality_defect": lev.basis.cardinality_defect(),
        }));
    }
    let summary = serde_json::json!({
        "manifold": cfg.manifold.name(),
        "m": cfg.m,
        "cutoff": assembled.kernel.cutoff(),
        "levels": summary,
    });
    let path = out.join("assembly.json");
    atomic_write(
        &path,
        format!("{}\n", serde_json::to_string_pretty(&summary).expect("json")).as_bytes(),
    )?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve(args: &SeededArgs) -> Result<ExitCode> {
    let cfg: SolveConfig = load_config(&args.common.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let study_cfg = StudyConfig {
        manifold: cfg.manifold,
        m: cfg.m,
        operator: cfg.operator.clone(),
        hierarchy: cfg.hierarchy,
        mg: cfg.mg.clone(),
        thresholds: Thresholds::default(),
        seed,
    };
    let (assembled, stack) = study_cfg.build()?;
    let level = cfg.level.unwrap_or(stack.depth());
    if level > stack.depth() {
        return Err(MgError::Dimension(format!(
            "level {level} outside hierarchy of depth {}",
            stack.depth()
        )));
    }
    let n = stack.level(level).n();
    let b: Vector = match cfg.rhs {
        RhsSpec::Zero => Vector::zeros(n),
        RhsSpec::Manufactured => study::manufactured_load(&assembled, level)?,
        RhsSpec::Random => linalg::seeded_unit_vector(n, seed),
    };
    let (_, report) = stack.solve_at(level, &b, &cfg.mg, None)?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| MgError::Format(format!("report serialization failed: {e}")))?;
    println!("{text}");
    Ok(if report.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_study(args: &StudyArgs) -> Result<ExitCode> {
    let kind: StudyKind = args.kind.parse()?;
    let mut cfg: StudyConfig = load_config(&args.common.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = study::run_study(kind, &cfg)?;
    fs::create_dir_all(&args.common.out)?;
    let written = study::write_study_outputs(&args.common.out, &report)?;
    for check in &report.checks {
        let tag = if check.passed { "PASS" } else { "FAIL" };
        let rel = if check.upper { "<=" } else { ">=" };
        println!(
            "[{tag}] {}: {:.6e} {rel} {:.6e}",
            check.name, check.value, check.bound
        );
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    println!(
        "study {}: {}",
        report.kind,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    let result = match &cli.cmd {
        Cmd::Hierarchy(args) => cmd_hierarchy(args),
        Cmd::Assemble(args) => cmd_assemble(args),
        Cmd::Solve(args) => cmd_solve(args),
        Cmd::Study(args) => cmd_study(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
