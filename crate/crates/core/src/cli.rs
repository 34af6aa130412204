//! Command-line surface shared by the `garden-core`, `gmk` and
//! `garden-install` binaries.
//!
//! Exit status is 0 on success, 2 for user errors and 1 for violations and
//! aborted operations. Subcommands that change the caller's shell (`add`,
//! `add-treetop`, `env`) print only shell text on standard output, and only
//! when they succeed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::builder::{self, BuildRequest};
use crate::closure::{self, ExportMode, PullTarget};
use crate::envsynth::{self, shell_quote, AddState, Environment};
use crate::error::{Error, IoContext, Result};
use crate::hashname::{parse_hash_name, HashName};
use crate::isolation::{self, CheckContext};
use crate::recipe::load_treetop;
use crate::store::{self, GardenConfig, InstallMode};

#[derive(Debug, Parser)]
#[command(name = "garden-core", version, about = "Content-addressed multi-version software store")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Public garden root (overrides GARDEN_ROOT)
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    /// Colon-separated list of garden roots (overrides GARDEN_STOREPATH)
    #[arg(long, global = true)]
    pub storepath: Option<String>,
    /// Treetop file to use instead of the one the recipe names
    #[arg(long, global = true)]
    pub treetop: Option<PathBuf>,
    /// Machine-readable output for reports
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Copy packages from the central garden: everything, one package's
    /// closure, or the closures of every pin in a treetop file
    Pull { target: Option<String> },
    /// List packages whose label contains PATTERN
    Avail { pattern: Option<String> },
    /// Show a package's metadata and composition files
    Show { hashname: String },
    /// Print shell code that adds packages to the current environment
    Add {
        #[arg(required = true)]
        hashnames: Vec<String>,
    },
    /// Print shell code that adds a treetop's export list
    AddTreetop { treetop: PathBuf },
    /// Print shell code for a combination of package and treetop adds
    Env {
        #[arg(long = "add", value_name = "HASHNAME")]
        add: Vec<String>,
        #[arg(long = "add-treetop", value_name = "TREETOP")]
        add_treetop: Vec<PathBuf>,
    },
    /// Cache the build environment for the recipe in the current directory
    Configure { dir: Option<PathBuf> },
    /// Run make with the cached build environment
    Make {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
    /// Build and install the package in the current source tree
    Install(InstallArgs),
    /// Send a package (and its closure) to another garden root
    Export {
        hashname: String,
        /// Send only the named package
        #[arg(long)]
        push: bool,
        /// Destination root (defaults to GARDEN_CENTRAL_DEST)
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Verify that files resolve their dynamic dependencies inside the garden
    Check {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Symlink every package of every root into the canonical root
    ComposeRoots,
    /// Write the gardenrc shell integration file
    Bootstrap {
        #[arg(long)]
        force: bool,
        /// Target file (defaults to ~/etc/gardenrc)
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct InstallArgs {
    /// Revision to build from, e.g. git:HEAD (public installs)
    pub revspec: Option<String>,
    /// Build the working tree as-is into the personal root
    #[arg(long)]
    pub personal: bool,
    /// After a public install, send only the new package to GARDEN_CENTRAL_DEST
    #[arg(long, conflicts_with = "export")]
    pub push: bool,
    /// After a public install, send its whole closure to GARDEN_CENTRAL_DEST
    #[arg(long)]
    pub export: bool,
    /// Source tree (defaults to the current directory)
    #[arg(long)]
    pub source: Option<PathBuf>,
}

/// Logs to standard error, filtered by `GARDEN_LOG` (default `warn`).
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("GARDEN_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

/// Parses `args` (program name first) and runs the command, returning the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(Output { stdout, code }) => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(stdout.as_bytes());
            let _ = out.flush();
            code
        }
        Err(e) => {
            eprintln!("garden: {e}");
            e.exit_code()
        }
    }
}

/// Standard output text and exit status of a successful command.
#[derive(Debug, Default)]
pub struct Output {
    pub stdout: String,
    pub code: i32,
}

impl Output {
    fn text(stdout: String) -> Self {
        Output { stdout, code: 0 }
    }
}

pub fn load_config(global: &GlobalArgs) -> Result<GardenConfig> {
    let mut overrides = Vec::new();
    if let Some(root) = &global.root {
        overrides.push(("GARDEN_ROOT", absolute(root)?.to_string_lossy().into_owned()));
    }
    if let Some(sp) = &global.storepath {
        overrides.push(("GARDEN_STOREPATH", sp.clone()));
    }
    GardenConfig::from_env_with(&overrides)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).at(p)
}

fn current_dir() -> Result<PathBuf> {
    std::env::current_dir().at(".")
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn parse_names(texts: &[String]) -> Result<Vec<HashName>> {
    texts.iter().map(|t| parse_hash_name(t)).collect()
}

pub fn execute(cli: &Cli) -> Result<Output> {
    let g = &cli.global;
    match &cli.command {
        Command::Bootstrap { force, output } => bootstrap(g, *force, output.as_deref()),
        cmd => {
            let config = load_config(g)?;
            execute_with(cmd, g, &config)
        }
    }
}

fn execute_with(cmd: &Command, g: &GlobalArgs, config: &GardenConfig) -> Result<Output> {
    match cmd {
        Command::Pull { target } => {
            let target = match target {
                None => PullTarget::All,
                Some(t) => match parse_hash_name(t) {
                    Ok(h) => PullTarget::Package(h),
                    Err(_) => PullTarget::Treetop(load_treetop(Path::new(t))?),
                },
            };
            let report = closure::pull(&target, config)?;
            Ok(Output::text(if g.json { json(&report) } else { format!("{report}\n") }))
        }
        Command::Avail { pattern } => {
            let entries = store::avail(pattern.as_deref().unwrap_or(""), config)?;
            if g.json {
                return Ok(Output::text(json(&entries)));
            }
            let mut out = String::new();
            for e in &entries {
                writeln!(out, "{}", e.path.display()).expect("write to string");
            }
            Ok(Output::text(out))
        }
        Command::Show { hashname } => {
            let report = store::show(&parse_hash_name(hashname)?, config)?;
            if g.json {
                return Ok(Output::text(json(&report)));
            }
            let m = &report.meta;
            let mut out = String::new();
            let mut line = |s: String| {
                out.push_str(&s);
                out.push('\n');
            };
            line(format!("path: {}", report.path.display()));
            line(format!("born_on: {}", m.born_on));
            line(format!("mode: {}", m.mode.as_str()));
            if let Some(r) = &m.git_revision {
                line(format!("revision: {r}"));
            }
            if let Some(s) = &m.source_url {
                line(format!("source: {s}"));
            }
            for f in &report.env_files {
                line(format!("{}: {}", f.name, f.first_line));
            }
            Ok(Output::text(out))
        }
        Command::Add { hashnames } => env_add(hashnames, &[], config),
        Command::AddTreetop { treetop } => env_add(&[], std::slice::from_ref(treetop), config),
        Command::Env { add, add_treetop } => env_add(add, add_treetop, config),
        Command::Configure { dir } => {
            let start = match dir {
                Some(d) => absolute(d)?,
                None => current_dir()?,
            };
            let dir = builder::find_recipe_dir(&start).ok_or_else(no_recipe)?;
            let (path, _) = builder::configure(&dir, g.treetop.as_deref(), config)?;
            Ok(Output::text(format!("wrote {}\n", path.display())))
        }
        Command::Make { args } => {
            let cwd = current_dir()?;
            let dir = builder::find_recipe_dir(&cwd).ok_or_else(no_recipe)?;
            let env = builder::cached_env(&dir, g.treetop.as_deref(), config)?;
            let code = builder::run_make(&env, &cwd, args)?;
            Ok(Output {
                stdout: String::new(),
                code,
            })
        }
        Command::Install(args) => install(args, g, config),
        Command::Export { hashname, push, dest } => {
            let h = parse_hash_name(hashname)?;
            let dest = match dest {
                Some(d) => absolute(d)?,
                None => config
                    .central_dest
                    .clone()
                    .ok_or_else(|| Error::Config("no destination: pass --dest or set GARDEN_CENTRAL_DEST".into()))?,
            };
            let mode = if *push { ExportMode::Push } else { ExportMode::Full };
            let report = closure::export(&h, &dest, mode, config)?;
            closure::notify_configured(&h, config);
            Ok(Output::text(if g.json { json(&report) } else { format!("{report}\n") }))
        }
        Command::Check { paths } => {
            let ctx = CheckContext::new(config);
            let mut reports = Vec::new();
            for p in paths {
                let p = absolute(p)?;
                reports.push(isolation::check_tree(&p, &ctx)?);
            }
            let clean = reports.iter().all(|r| r.clean);
            let stdout = if g.json {
                json(&reports)
            } else {
                reports.iter().map(|r| format!("{r}\n")).collect()
            };
            Ok(Output {
                stdout,
                code: if clean { 0 } else { 1 },
            })
        }
        Command::ComposeRoots => {
            let report = store::compose_roots(config)?;
            if g.json {
                return Ok(Output::text(json(&report)));
            }
            Ok(Output::text(format!(
                "{} created, {} already present, {} conflicting\n{}",
                report.created.len(),
                report.already_present.len(),
                report.conflicting.len(),
                report.conflicting.iter().map(|c| format!("conflict: {c}\n")).collect::<String>()
            )))
        }
        Command::Bootstrap { .. } => unreachable!("handled before config load"),
    }
}

fn no_recipe() -> Error {
    Error::InvalidRequest(format!("no {} in this directory or any parent", crate::recipe::RECIPE_FILE))
}

/// Shell text applying package and treetop adds to the caller's runtime variables.
pub fn env_add(hashnames: &[String], treetops: &[PathBuf], config: &GardenConfig) -> Result<Output> {
    let before = Environment::from_snapshot(std::env::vars(), &config.runtime_vars);
    let names = parse_names(hashnames)?;
    let mut state = AddState::default();
    let mut env = envsynth::add_packages(before.clone(), &names, config, &mut state)?;
    for t in treetops {
        env = envsynth::add_treetop(env, &load_treetop(t)?, config)?;
    }
    Ok(Output::text(env.shell_update(&before)))
}

fn install(args: &InstallArgs, g: &GlobalArgs, config: &GardenConfig) -> Result<Output> {
    let source = match &args.source {
        Some(s) => absolute(s)?,
        None => current_dir()?,
    };
    let req = BuildRequest {
        source,
        revspec: args.revspec.clone(),
        mode: if args.personal {
            InstallMode::Personal
        } else {
            InstallMode::Public
        },
        export_after: if args.push {
            Some(ExportMode::Push)
        } else if args.export {
            Some(ExportMode::Full)
        } else {
            None
        },
        treetop: g.treetop.clone(),
    };
    let result = builder::garden_install(&req, config)?;
    if g.json {
        return Ok(Output::text(json(&result)));
    }
    let mut out = format!("{}\n", result.store_path.display());
    if let Some(report) = &result.export {
        writeln!(out, "{report}").expect("write to string");
    }
    Ok(Output::text(out))
}

// ---------------------------------------------------------------------------
// Bootstrap

pub fn default_gardenrc() -> Result<PathBuf> {
    let home = std::env::var_os("HOME").ok_or_else(|| Error::Config("HOME is not set".into()))?;
    Ok(PathBuf::from(home).join("etc").join("gardenrc"))
}

/// Text of the gardenrc file: optional root exports plus a `garden` shell
/// function that evaluates the output of env-changing subcommands.
pub fn gardenrc_text(binary: &Path, root: Option<&Path>, storepath: Option<&str>) -> String {
    let mut s = String::from("# garden shell integration; generated by `garden-core bootstrap`\n");
    if let Some(r) = root {
        writeln!(s, "export GARDEN_ROOT={}", shell_quote(&r.to_string_lossy())).expect("write to string");
    }
    if let Some(sp) = storepath {
        writeln!(s, "export GARDEN_STOREPATH={}", shell_quote(sp)).expect("write to string");
    }
    writeln!(s, ": \"${{GARDEN_CORE:={}}}\"", shell_quote(&binary.to_string_lossy())).expect("write to string");
    s.push_str(
        r#"
garden() {
    case "$1" in
        add|add-treetop)
            __garden_flag=--add
            [ "$1" = add ] || __garden_flag=--add-treetop
            shift
            for __garden_arg in "$@"; do
                set -- "$@" "$__garden_flag" "$__garden_arg"
                shift
            done
            __garden_sh=$("$GARDEN_CORE" env "$@") || return $?
            eval "$__garden_sh"
            ;;
        env)
            __garden_sh=$("$GARDEN_CORE" "$@") || return $?
            eval "$__garden_sh"
            ;;
        *)
            "$GARDEN_CORE" "$@"
            ;;
    esac
}
"#,
    );
    s
}

fn bootstrap(g: &GlobalArgs, force: bool, output: Option<&Path>) -> Result<Output> {
    let target = match output {
        Some(p) => absolute(p)?,
        None => default_gardenrc()?,
    };
    if target.exists() && !force {
        return Err(Error::TargetExists(target));
    }
    let binary = std::env::current_exe().at("current executable")?;
    let root = g.root.as_deref().map(absolute).transpose()?;
    let text = gardenrc_text(&binary, root.as_deref(), g.storepath.as_deref());
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    fs::write(&target, text).at(&target)?;
    Ok(Output::text(format!("wrote {}\n", target.display())))
}
