//! Environment synthesis.
//!
//! Two directions: build environments handed to a package's helper
//! (hermetic, computed from the recipe), and runtime environments built up
//! by `garden add`, which promotes package paths to the front of PATH-style
//! variables.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, IoContext, Result};
use crate::hashname::{is_alphabet_byte, parse_hash_name, HashName, DIGEST_LEN};
use crate::recipe::{ResolvedRecipe, Treetop};
use crate::store::{self, GardenConfig, ENV_DIR};

pub const HOME_SENTINEL: &str = "/homeless-shelter";
pub const PATH_SENTINEL: &str = "/path-not-set";
pub const CACHE_DIR: &str = ".garden";
pub const CACHE_FILE: &str = "envcache";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Environment {
    /// PATH-style variables as element lists.
    pub vars: BTreeMap<String, Vec<String>>,
    pub scalars: BTreeMap<String, String>,
    /// Shell lines (`source ...`) accumulated by adds.
    pub source_lines: Vec<String>,
}

impl Environment {
    /// Splits the listed variables of a process environment into element lists.
    pub fn from_snapshot<I, K, V>(snapshot: I, list_vars: &[String]) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut env = Environment::default();
        for (k, v) in snapshot {
            let (k, v) = (k.into(), v.into());
            if list_vars.contains(&k) {
                let mut list: Vec<String> = Vec::new();
                for e in v.split(':').filter(|e| !e.is_empty()) {
                    if !list.iter().any(|x| x == e) {
                        list.push(e.to_string());
                    }
                }
                env.vars.insert(k, list);
            }
        }
        env
    }

    pub fn list(&self, var: &str) -> &[String] {
        self.vars.get(var).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn render_var(&self, var: &str) -> Option<String> {
        self.vars
            .get(var)
            .map(|l| l.join(":"))
            .or_else(|| self.scalars.get(var).cloned())
    }

    /// Flat `(name, value)` pairs: scalars and joined list variables.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut all: BTreeMap<String, String> = self.scalars.clone();
        for (k, v) in &self.vars {
            all.insert(k.clone(), v.join(":"));
        }
        all.into_iter().collect()
    }

    pub fn promote(mut self, var: &str, element: &str) -> Self {
        promote_list(self.vars.entry(var.to_string()).or_default(), element);
        self
    }

    /// POSIX shell text turning `before` into `self`: exports for changed
    /// variables, then new source lines.
    pub fn shell_update(&self, before: &Environment) -> String {
        let mut out = String::new();
        for (k, v) in &self.vars {
            if before.vars.get(k) != Some(v) {
                out.push_str(&format!("export {k}={}\n", shell_quote(&v.join(":"))));
            }
        }
        for (k, v) in &self.scalars {
            if before.scalars.get(k) != Some(v) {
                out.push_str(&format!("export {k}={}\n", shell_quote(v)));
            }
        }
        for line in &self.source_lines {
            if !before.source_lines.contains(line) {
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }
}

/// Removes every occurrence of `element` and puts it first.
pub fn promote_list(list: &mut Vec<String>, element: &str) {
    list.retain(|e| e != element);
    list.insert(0, element.to_string());
}

pub fn shell_quote(value: &str) -> String {
    let mut out = String::with_capacity(value.len() + 2);
    out.push('"');
    for c in value.chars() {
        if matches!(c, '"' | '\\' | '$' | '`') {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

// ---------------------------------------------------------------------------
// Hash-name expansion inside garden-env files

/// Replaces hash-names embedded in `token` with located store paths. A
/// hash-name directly after a `/` is already part of a path and is left alone.
pub fn expand_token(token: &str, roots: &[PathBuf]) -> Result<String> {
    let bytes = token.as_bytes();
    let mut out = String::new();
    let mut i = 0;
    let mut copied = 0;
    while i + DIGEST_LEN < bytes.len() {
        let boundary = i == 0 || !(is_alphabet_byte(bytes[i - 1]) || bytes[i - 1] == b'/');
        let run = bytes[i..].iter().take_while(|b| is_alphabet_byte(**b)).count();
        if boundary && run == DIGEST_LEN && bytes[i + DIGEST_LEN] == b'-' {
            let label_len = bytes[i + DIGEST_LEN + 1..]
                .iter()
                .take_while(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'+' | b'-'))
                .count();
            let end = i + DIGEST_LEN + 1 + label_len;
            if let Ok(h) = parse_hash_name(&token[i..end]) {
                let path = store::locate_in(&h, roots)?;
                out.push_str(&token[copied..i]);
                out.push_str(&path.to_string_lossy());
                copied = end;
                i = end;
                continue;
            }
        }
        i += run.max(1);
    }
    out.push_str(&token[copied..]);
    Ok(out)
}

pub fn expand_entries(text: &str, roots: &[PathBuf]) -> Result<Vec<String>> {
    text.split_whitespace().map(|t| expand_token(t, roots)).collect()
}

pub fn expand_line(line: &str, roots: &[PathBuf]) -> Result<String> {
    Ok(expand_entries(line, roots)?.join(" "))
}

// ---------------------------------------------------------------------------
// Build variables

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinRule {
    /// Well-known subdirectories tried, in order, when a package has no
    /// garden-env file for the variable.
    pub subdirs: &'static [&'static str],
    pub prefix: &'static str,
    pub separator: &'static str,
}

pub fn join_rule(var: &str) -> JoinRule {
    let (subdirs, prefix, separator): (&'static [&'static str], _, _) = match var {
        "CPPFLAGS" => (&["include"], "-I", " "),
        "LDFLAGS" => (&["lib", "lib64"], "-L", " "),
        "PATH" => (&["bin"], "", ":"),
        "PYTHONPATH" => (&["lib-python"], "", ":"),
        "LD_LIBRARY_PATH" => (&["lib", "lib64"], "", ":"),
        "MANPATH" => (&["share/man"], "", ":"),
        _ => (&[], "", ":"),
    };
    JoinRule {
        subdirs,
        prefix,
        separator,
    }
}

/// Expands one build variable over package paths: the package's
/// `garden-env/<VAR>` file, else well-known subdirectories, else the
/// directories listed in `nix-support/propagated-user-env` (each searched
/// the same way). First occurrence wins.
pub fn expand_build_var(var: &str, elements: &[PathBuf], roots: &[PathBuf]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut visited = HashSet::new();
    for path in elements {
        expand_one(var, path, roots, &mut out, &mut visited)?;
    }
    let mut seen = HashSet::new();
    out.retain(|e| seen.insert(e.clone()));
    Ok(out)
}

fn expand_one(
    var: &str,
    path: &Path,
    roots: &[PathBuf],
    out: &mut Vec<String>,
    visited: &mut HashSet<PathBuf>,
) -> Result<()> {
    if !visited.insert(path.to_path_buf()) {
        return Ok(());
    }
    let env_file = path.join(ENV_DIR).join(var);
    if env_file.is_file() {
        let text = fs::read_to_string(&env_file).at(&env_file)?;
        out.extend(expand_entries(&text, roots)?);
        return Ok(());
    }
    let subdirs: Vec<PathBuf> = join_rule(var)
        .subdirs
        .iter()
        .map(|s| path.join(s))
        .filter(|p| p.is_dir())
        .collect();
    if !subdirs.is_empty() {
        out.extend(subdirs.iter().map(|p| p.to_string_lossy().into_owned()));
        return Ok(());
    }
    let propagated = path.join("nix-support/propagated-user-env");
    if propagated.is_file() {
        let text = fs::read_to_string(&propagated).at(&propagated)?;
        for dir in expand_entries(&text, roots)? {
            out.push(dir.clone());
            expand_one(var, Path::new(&dir), roots, out, visited)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Toolchain {
    pub binutils: PathBuf,
    pub glibc: PathBuf,
    pub dynamic_linker: String,
}

pub fn render_flags(var: &str, entries: &[String], toolchain: Option<&Toolchain>) -> String {
    let rule = join_rule(var);
    let mut parts: Vec<String> = match var {
        "LDFLAGS" => entries.iter().map(|e| format!("-L{e} -Wl,-rpath,{e}")).collect(),
        _ => entries.iter().map(|e| format!("{}{e}", rule.prefix)).collect(),
    };
    if let (Some(tc), "LDFLAGS") = (toolchain, var) {
        parts.push(format!(
            "-B {}/bin -B {glibc}/lib -Wl,--dynamic-linker,{glibc}/lib/{}",
            tc.binutils.display(),
            tc.dynamic_linker,
            glibc = tc.glibc.display(),
        ));
    }
    parts.join(rule.separator)
}

/// The complete helper environment for a resolved recipe. Nothing from the
/// calling process leaks in.
pub fn synth_build_env(rr: &ResolvedRecipe, out_path: &Path, tmp_dir: &Path, config: &GardenConfig) -> Result<Environment> {
    let mut env = Environment::default();
    for (sym, dep) in &rr.resolved_deps {
        env.scalars.insert(sym.clone(), dep.path.to_string_lossy().into_owned());
    }
    let toolchain = match (rr.resolved_deps.get("binutils"), rr.resolved_deps.get("glibc")) {
        (Some(b), Some(g)) => Some(Toolchain {
            binutils: b.path.clone(),
            glibc: g.path.clone(),
            dynamic_linker: config.dynamic_linker.clone(),
        }),
        _ => None,
    };
    for (var, items) in &rr.recipe.build_vars {
        let paths: Vec<PathBuf> = items
            .iter()
            .filter_map(|i| rr.path_of(i).map(Path::to_path_buf))
            .collect();
        let entries = expand_build_var(var, &paths, &config.storepath)?;
        env.scalars.insert(var.clone(), render_flags(var, &entries, toolchain.as_ref()));
    }
    let fixed = [
        ("out", out_path.to_string_lossy().into_owned()),
        ("system", config.system.clone()),
        ("name", rr.recipe.label()),
        ("install_command", rr.recipe.install_command.clone()),
        ("TMP", tmp_dir.to_string_lossy().into_owned()),
        ("HOME", HOME_SENTINEL.to_string()),
    ];
    for (k, v) in fixed {
        env.scalars.insert(k.to_string(), v);
    }
    env.scalars
        .entry("PATH".to_string())
        .or_insert_with(|| PATH_SENTINEL.to_string());
    Ok(env)
}

// ---------------------------------------------------------------------------
// Runtime adds

#[derive(Debug, Default)]
pub struct AddState {
    done: HashSet<HashName>,
    stack: Vec<HashName>,
    /// Packages added, in completion order.
    pub added: Vec<HashName>,
}

pub fn add_package(env: Environment, hashname: &HashName, config: &GardenConfig) -> Result<Environment> {
    add_packages(env, std::slice::from_ref(hashname), config, &mut AddState::default())
}

pub fn add_packages(
    mut env: Environment,
    hashnames: &[HashName],
    config: &GardenConfig,
    state: &mut AddState,
) -> Result<Environment> {
    for h in hashnames {
        add_rec(&mut env, h, config, state)?;
    }
    Ok(env)
}

fn add_rec(env: &mut Environment, h: &HashName, config: &GardenConfig, state: &mut AddState) -> Result<()> {
    if let Some(pos) = state.stack.iter().position(|s| s == h) {
        let mut cycle: Vec<String> = state.stack[pos..].iter().map(HashName::to_string).collect();
        cycle.push(h.to_string());
        return Err(Error::CircularDependency(cycle));
    }
    if state.done.contains(h) {
        return Ok(());
    }
    let path = store::locate(h, config)?;
    let env_dir = path.join(ENV_DIR);

    state.stack.push(h.clone());
    let deps_dir = env_dir.join("DEPS");
    if deps_dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&deps_dir)
            .at(&deps_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let text = fs::read_to_string(&file).at(&file)?;
            for token in text.split_whitespace() {
                add_rec(env, &parse_hash_name(token)?, config, state)?;
            }
        }
    }
    state.stack.pop();

    for var in &config.runtime_vars {
        let file = env_dir.join(var);
        if !file.is_file() {
            continue;
        }
        let text = fs::read_to_string(&file).at(&file)?;
        let entries = expand_entries(&text, &config.storepath)?;
        let list = env.vars.entry(var.clone()).or_default();
        for e in entries.iter().rev() {
            promote_list(list, e);
        }
    }
    let script = env_dir.join("default.sh");
    if script.is_file() {
        let line = format!("source {}", shell_quote(&script.to_string_lossy()));
        if !env.source_lines.contains(&line) {
            env.source_lines.push(line);
        }
    }
    state.done.insert(h.clone());
    state.added.push(h.clone());
    Ok(())
}

/// Adds every package on the treetop's export list, in order.
pub fn add_treetop(env: Environment, treetop: &Treetop, config: &GardenConfig) -> Result<Environment> {
    let pins: Vec<HashName> = treetop
        .export_list
        .iter()
        .map(|s| treetop.pins[s].clone())
        .collect();
    add_packages(env, &pins, config, &mut AddState::default())
}

// ---------------------------------------------------------------------------
// Env cache for direct builds

pub fn cache_path(dir: &Path) -> PathBuf {
    dir.join(CACHE_DIR).join(CACHE_FILE)
}

fn escape(v: &str) -> String {
    v.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(v: &str) -> String {
    let mut out = String::new();
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        match (c, c == '\\') {
            (_, true) => match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            },
            (c, false) => out.push(c),
        }
    }
    out
}

pub fn write_env_cache(env: &Environment, recipe_digest: &str, dir: &Path) -> Result<PathBuf> {
    let path = cache_path(dir);
    let parent = path.parent().expect("cache path has a parent");
    fs::create_dir_all(parent).at(parent)?;
    let mut text = format!("recipe_digest={recipe_digest}\n");
    for (k, v) in env.to_pairs() {
        text.push_str(&format!("{k}={}\n", escape(&v)));
    }
    let mut tmp = tempfile::NamedTempFile::new_in(parent).at(parent)?;
    std::io::Write::write_all(&mut tmp, text.as_bytes()).at(&path)?;
    tmp.persist(&path).map_err(|e| e.error).at(&path)?;
    Ok(path)
}

pub fn load_env_cache(dir: &Path, current_recipe_digest: &str) -> Result<Environment> {
    let path = cache_path(dir);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::CacheMissing(path)),
        Err(e) => return Err(e).at(&path),
    };
    let mut lines = text.lines();
    let stored = lines.next().and_then(|l| l.strip_prefix("recipe_digest="));
    if stored != Some(current_recipe_digest) {
        return Err(Error::CacheStale(path));
    }
    let mut env = Environment::default();
    for line in lines {
        if let Some((k, v)) = line.split_once('=') {
            env.scalars.insert(k.to_string(), unescape(v));
        }
    }
    Ok(env)
}
