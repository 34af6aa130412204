//! The install pipeline: source hygiene, clean checkout, hermetic helper
//! run, isolation gate, atomic store install, optional export.

use std::fs;
use std::io::{Read, Seek};
use std::os::unix::fs::symlink;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::Serialize;
use tracing::{debug, info, warn};

use crate::closure::{self, ExportMode, TransferReport};
use crate::envsynth::{self, Environment};
use crate::error::{Error, IoContext, Result};
use crate::hashname::{parse_hash_name, HashName};
use crate::isolation::{self, CheckContext, TreeReport};
use crate::recipe::{RecipeSource, RECIPE_FILE};
use crate::store::{self, GardenConfig, InstallMode, PackageMeta, StoreLock};

#[derive(Clone, Debug)]
pub struct BuildRequest {
    pub source: PathBuf,
    /// Source-control revision such as `git:HEAD`; required for public installs.
    pub revspec: Option<String>,
    pub mode: InstallMode,
    pub export_after: Option<ExportMode>,
    pub treetop: Option<PathBuf>,
}

impl BuildRequest {
    pub fn personal(source: impl Into<PathBuf>) -> Self {
        BuildRequest {
            source: source.into(),
            revspec: None,
            mode: InstallMode::Personal,
            export_after: None,
            treetop: None,
        }
    }

    pub fn public(source: impl Into<PathBuf>, revspec: impl Into<String>) -> Self {
        BuildRequest {
            source: source.into(),
            revspec: Some(revspec.into()),
            mode: InstallMode::Public,
            export_after: None,
            treetop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            InstallMode::Public if self.revspec.is_none() => {
                Err(Error::InvalidRequest("public installs need a revision such as git:HEAD".into()))
            }
            InstallMode::Personal if self.export_after.is_some() => {
                Err(Error::InvalidRequest("--export and --push only apply to public installs".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct BuildResult {
    pub hashname: HashName,
    pub store_path: PathBuf,
    pub log: String,
    pub clean_report: TreeReport,
    pub meta: PackageMeta,
    /// The package already existed; nothing was built.
    pub reused: bool,
    pub export: Option<TransferReport>,
}

// ---------------------------------------------------------------------------
// Source control

fn git(dir: &Path, args: &[&str]) -> Result<std::process::Output> {
    Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(args)
        .stdin(Stdio::null())
        .output()
        .map_err(|e| Error::Git {
            args: args.join(" "),
            stderr: e.to_string(),
        })
}

fn git_ok(dir: &Path, args: &[&str]) -> Result<String> {
    let out = git(dir, args)?;
    if !out.status.success() {
        return Err(Error::Git {
            args: args.join(" "),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Refuses a working tree with modified, staged or untracked files.
/// The local env cache directory is not considered a change.
pub fn verify_clean_worktree(source: &Path) -> Result<()> {
    let inside = git(source, &["rev-parse", "--is-inside-work-tree"])?;
    if !inside.status.success() || String::from_utf8_lossy(&inside.stdout).trim() != "true" {
        return Err(Error::NotARepository(source.to_path_buf()));
    }
    let status = git_ok(source, &["status", "--porcelain", "--untracked-files=all"])?;
    let dirty: Vec<String> = status
        .lines()
        .filter(|l| l.len() > 3)
        .map(|l| l[3..].trim_matches('"').to_string())
        .filter(|p| !p.starts_with(&format!("{}/", envsynth::CACHE_DIR)))
        .collect();
    if dirty.is_empty() {
        Ok(())
    } else {
        Err(Error::DirtyWorktree(dirty))
    }
}

/// A pristine tree at one commit, deleted on drop.
#[derive(Debug)]
pub struct CleanCheckout {
    _dir: tempfile::TempDir,
    pub path: PathBuf,
    pub revision: String,
}

pub fn checkout_clean(source: &Path, revspec: &str) -> Result<CleanCheckout> {
    let rev = revspec.strip_prefix("git:").unwrap_or(revspec);
    let resolved = git(source, &["rev-parse", "--verify", "--quiet", &format!("{rev}^{{commit}}")])?;
    if !resolved.status.success() {
        return Err(Error::UnknownRevspec(revspec.to_string()));
    }
    let revision = String::from_utf8_lossy(&resolved.stdout).trim().to_string();

    let dir = tempfile::Builder::new().prefix("garden-src-").tempdir().at(std::env::temp_dir())?;
    let path = dir.path().join("src");
    let src = source.to_string_lossy();
    let dst = path.to_string_lossy();
    git_ok(dir.path(), &["clone", "--quiet", "--local", "--no-checkout", &src, &dst])?;
    git_ok(&path, &["checkout", "--quiet", "--detach", &revision])?;
    store::remove_tree(&path.join(".git"))?;
    debug!(%revision, path = %path.display(), "clean checkout");
    Ok(CleanCheckout {
        _dir: dir,
        path,
        revision,
    })
}

// ---------------------------------------------------------------------------
// Helper execution

/// Runs the recipe's install command with exactly `env` (nothing inherited)
/// in `workdir`. Success needs exit status 0 and a non-empty `out_path`.
pub fn run_helper(env: &Environment, workdir: &Path, out_path: &Path) -> Result<String> {
    let command = env.scalars.get("install_command").cloned().unwrap_or_default();
    let (status, log) = run_with_env(&command, env, workdir)?;
    if !status.success() {
        return Err(Error::HelperFailed {
            status: status.to_string(),
            log,
        });
    }
    let populated = fs::read_dir(out_path).map(|mut d| d.next().is_some()).unwrap_or(false);
    if !populated {
        return Err(Error::OutUnpopulated { log });
    }
    Ok(log)
}

/// Splits `command` into words and executes it directly, returning the exit
/// status and combined output.
pub(crate) fn run_with_env(command: &str, env: &Environment, workdir: &Path) -> Result<(std::process::ExitStatus, String)> {
    let argv = shell_words::split(command).map_err(|e| Error::InvalidRequest(format!("install_command: {e}")))?;
    let Some((program, args)) = argv.split_first() else {
        return Err(Error::InvalidRequest("install_command is empty".into()));
    };
    let program = if program.contains('/') && Path::new(program).is_relative() {
        workdir.join(program)
    } else {
        PathBuf::from(program)
    };
    let mut log = tempfile::tempfile().at(std::env::temp_dir())?;
    let child_out = log.try_clone().at("helper log")?;
    let child_err = log.try_clone().at("helper log")?;
    let status = Command::new(&program)
        .args(args)
        .env_clear()
        .envs(env.to_pairs())
        .current_dir(workdir)
        .stdin(Stdio::null())
        .stdout(child_out)
        .stderr(child_err)
        .status()
        .map_err(|e| Error::HelperFailed {
            status: format!("could not start {}: {e}", program.display()),
            log: String::new(),
        })?;
    log.rewind().at("helper log")?;
    let mut bytes = Vec::new();
    log.read_to_end(&mut bytes).at("helper log")?;
    Ok((status, String::from_utf8_lossy(&bytes).into_owned()))
}

/// Replaces `from` with `to` in UTF-8 files and symlink targets under `dir`.
fn rewrite_prefix(dir: &Path, from: &str, to: &str) -> Result<()> {
    for entry in walkdir::WalkDir::new(dir).follow_links(false) {
        let Ok(entry) = entry else { continue };
        let path = entry.path();
        if entry.file_type().is_symlink() {
            let target = fs::read_link(path).at(path)?;
            let t = target.to_string_lossy();
            if t.contains(from) {
                let new = t.replace(from, to);
                fs::remove_file(path).at(path)?;
                symlink(new, path).at(path)?;
            }
        } else if entry.file_type().is_file() {
            let bytes = fs::read(path).at(path)?;
            if let Ok(text) = std::str::from_utf8(&bytes) {
                if text.contains(from) {
                    fs::write(path, text.replace(from, to)).at(path)?;
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pipeline

pub fn garden_install(req: &BuildRequest, config: &GardenConfig) -> Result<BuildResult> {
    req.validate()?;
    let public = req.mode == InstallMode::Public;

    let checkout = if public {
        verify_clean_worktree(&req.source)?;
        Some(checkout_clean(&req.source, req.revspec.as_deref().unwrap_or("git:HEAD"))?)
    } else {
        None
    };
    let build_dir = checkout.as_ref().map(|c| c.path.clone()).unwrap_or_else(|| req.source.clone());

    let mut build_config = config.clone();
    if public {
        build_config.storepath = config.public_storepath();
    }
    let target_root = if public { &config.public_root } else { &config.personal_root };

    let source = RecipeSource::load(&build_dir, req.treetop.as_deref(), config.treetop_dir.as_deref())?;
    let rr = source.resolve(&build_config.storepath, &config.system)?;
    let hashname = rr.self_hashname.clone();
    let name = hashname.to_string();
    let final_path = target_root.join(&name);
    let ctx = CheckContext::new(&build_config);

    fs::create_dir_all(target_root).at(target_root)?;
    let lock = StoreLock::acquire(target_root, &name)?;
    if final_path.exists() {
        info!(package = %hashname, "already installed");
        let meta = store::read_meta(&final_path).ok_or_else(|| Error::CorruptExisting(final_path.clone()))?;
        let clean_report = isolation::check_tree(&final_path, &ctx)?;
        drop(lock);
        let export = run_export(req, &hashname, config)?;
        return Ok(BuildResult {
            hashname,
            store_path: final_path,
            log: String::new(),
            clean_report,
            meta,
            reused: true,
            export,
        });
    }

    let staging = store::staging_dir(target_root)?;
    let out = staging.path().join(&name);
    let tmp = tempfile::Builder::new().prefix("garden-tmp-").tempdir().at(std::env::temp_dir())?;
    let env = envsynth::synth_build_env(&rr, &out, tmp.path(), &build_config)?;
    info!(package = %hashname, mode = req.mode.as_str(), "building");
    let log = run_helper(&env, &build_dir, &out)?;

    rewrite_prefix(&out, &out.to_string_lossy(), &final_path.to_string_lossy())?;
    let refs: Vec<HashName> = rr
        .dep_hashnames()
        .iter()
        .map(|h| parse_hash_name(h))
        .collect::<Result<_>>()?;
    closure::write_references(&out, &refs)?;
    warn_unrecorded_refs(&out, &hashname, &refs, &build_config)?;

    let clean_report = isolation::check_tree(&out, &ctx.with_alias(final_path.clone(), out.clone()))?;
    if !clean_report.clean {
        drop(staging);
        return Err(Error::IsolationViolation(Box::new(clean_report)));
    }

    let mut meta = PackageMeta::new(hashname.clone(), req.mode);
    meta.git_revision = checkout.as_ref().map(|c| c.revision.clone());
    meta.source_url = Some(req.source.to_string_lossy().into_owned());
    let store_path = store::install_locked(&lock, &out, &hashname, target_root, Some(&meta))?;
    drop(lock);
    info!(package = %hashname, path = %store_path.display(), "installed");

    let export = run_export(req, &hashname, config)?;
    Ok(BuildResult {
        hashname,
        store_path,
        log,
        clean_report,
        meta,
        reused: false,
        export,
    })
}

fn run_export(req: &BuildRequest, hashname: &HashName, config: &GardenConfig) -> Result<Option<TransferReport>> {
    let Some(mode) = req.export_after else {
        return Ok(None);
    };
    let dest = config
        .central_dest
        .as_ref()
        .ok_or_else(|| Error::Config("export requested but GARDEN_CENTRAL_DEST is not set".into()))?;
    let report = closure::export_from(hashname, &config.public_storepath(), dest, mode)?;
    closure::notify_configured(hashname, config);
    Ok(Some(report))
}

fn warn_unrecorded_refs(out: &Path, own: &HashName, refs: &[HashName], config: &GardenConfig) -> Result<()> {
    let mut known = std::collections::HashSet::new();
    for root in &config.storepath {
        for (h, _) in store::list_packages(root)? {
            known.insert(h.digest().to_string());
        }
    }
    known.remove(own.digest());
    for r in refs {
        known.remove(r.digest());
    }
    for digest in isolation::scan_refs(out, &known)? {
        warn!("{own} mentions package digest {digest}, which is not a declared dependency");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Direct builds

/// Build output and scratch locations for builds run from a working tree.
pub fn direct_dirs(dir: &Path) -> (PathBuf, PathBuf) {
    let base = dir.join(envsynth::CACHE_DIR);
    (base.join("out"), base.join("tmp"))
}

/// Synthesizes the build environment for the recipe in `dir` and caches it.
pub fn configure(dir: &Path, treetop: Option<&Path>, config: &GardenConfig) -> Result<(PathBuf, Environment)> {
    let source = RecipeSource::load(dir, treetop, config.treetop_dir.as_deref())?;
    let rr = source.resolve(&config.storepath, &config.system)?;
    let (out, tmp) = direct_dirs(dir);
    fs::create_dir_all(&tmp).at(&tmp)?;
    let env = envsynth::synth_build_env(&rr, &out, &tmp, config)?;
    let path = envsynth::write_env_cache(&env, &source.digest(), dir)?;
    Ok((path, env))
}

/// Nearest ancestor of `start` (inclusive) holding a recipe.
pub fn find_recipe_dir(start: &Path) -> Option<PathBuf> {
    start.ancestors().find(|d| d.join(RECIPE_FILE).is_file()).map(Path::to_path_buf)
}

/// Loads the cached environment for the recipe in `dir`; stale or missing
/// caches are errors carrying the configure remedy.
pub fn cached_env(dir: &Path, treetop: Option<&Path>, config: &GardenConfig) -> Result<Environment> {
    let cache = envsynth::cache_path(dir);
    if !cache.exists() {
        return Err(Error::CacheMissing(cache));
    }
    let source = RecipeSource::load(dir, treetop, config.treetop_dir.as_deref())?;
    envsynth::load_env_cache(dir, &source.digest())
}

/// Runs `make <args>` in `workdir` with exactly the cached environment.
pub fn run_make(env: &Environment, workdir: &Path, args: &[String]) -> Result<i32> {
    let status = Command::new("make")
        .args(args)
        .env_clear()
        .envs(env.to_pairs())
        .current_dir(workdir)
        .status()
        .map_err(|e| Error::HelperFailed {
            status: format!("could not start make: {e}"),
            log: String::new(),
        })?;
    Ok(status.code().unwrap_or(1))
}
