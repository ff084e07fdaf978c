use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgvi::problems;
use mgvi_cli::compare::{compare, write_compare};
use mgvi_cli::config::DEFAULT_PRESET;
use mgvi_cli::oracle::{run_oracle_suite, OracleOptions};
use mgvi_cli::runner::{execute, write_failure, write_outputs};
use mgvi_cli::{CliError, Method, RunConfig};

#[derive(Parser)]
#[command(name = "mgvi", version, about = "Metric Gaussian variational inference experiments")]
struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method on a preset or config file.
    Run(RunArgs),
    /// Run several methods on the same problem and merge their traces.
    Compare(CompareArgs),
    /// Check operators, metrics, CG and sampling against dense linear algebra.
    OracleCheck(OracleArgs),
    /// List shipped presets.
    ListPresets,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Config files, one per run.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// With --preset, one run per listed method.
    #[arg(long = "method", value_enum)]
    methods: Vec<Method>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 20_000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adds an instance with a sign error in its adjoint; the suite must fail.
    #[arg(long)]
    self_test: bool,
}

fn resolve(
    config: Option<&PathBuf>,
    preset: Option<&str>,
    method: Option<Method>,
    seed: Option<u64>,
    out: Option<&PathBuf>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path, preset)?,
        None => RunConfig::from_preset(preset.unwrap_or(DEFAULT_PRESET))?,
    };
    if let Some(m) = method {
        cfg.method = m;
    }
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(o) = out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        CliError::Config(_) | CliError::Mismatch(_) => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_run(args: &RunArgs) -> ExitCode {
    let cfg = match resolve(
        args.config.as_ref(),
        args.preset.as_deref(),
        args.method,
        args.seed,
        args.out.as_ref(),
    ) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let result = execute(&cfg).and_then(|out| write_outputs(&cfg.output.dir, &cfg, &out));
    match result {
        Ok(paths) => {
            report_written(&paths);
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let Ok(p) = write_failure(&cfg.output.dir, &e) {
                eprintln!("diagnostics: {}", p.display());
            }
            fail(&e)
        }
    }
}

fn cmd_compare(args: &CompareArgs) -> ExitCode {
    let mut configs = Vec::new();
    for path in &args.configs {
        match resolve(Some(path), None, None, args.seed, args.out.as_ref()) {
            Ok(c) => configs.push(c),
            Err(e) => return fail(&e),
        }
    }
    for m in &args.methods {
        match resolve(None, args.preset.as_deref(), Some(*m), args.seed, args.out.as_ref()) {
            Ok(c) => configs.push(c),
            Err(e) => return fail(&e),
        }
    }
    let dir = match configs.first() {
        Some(c) => c.output.dir.clone(),
        None => return fail(&CliError::Mismatch("no run configs given".into())),
    };
    match compare(&configs).and_then(|out| write_compare(&dir, &configs, &out)) {
        Ok(paths) => {
            report_written(&paths);
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_oracle(args: &OracleArgs) -> ExitCode {
    let opts = OracleOptions {
        dim_cap: args.dim,
        draws: args.draws,
        seed: args.seed,
        self_test: args.self_test,
    };
    match run_oracle_suite(&opts) {
        Ok(report) => {
            print!("{report}");
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} check(s) failed", report.failures().count());
                ExitCode::FAILURE
            }
        }
        Err(e) => fail(&e),
    }
}

fn cmd_list() -> ExitCode {
    for name in problems::preset_names() {
        let p = problems::preset(name).expect("listed preset exists");
        println!("{:<22} {}", p.name, p.description);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} threads: {e}", cli.threads);
            return ExitCode::FAILURE;
        }
    };
    pool.install(|| match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::OracleCheck(a) => cmd_oracle(a),
        Command::ListPresets => cmd_list(),
    })
}
