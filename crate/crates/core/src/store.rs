//! Garden roots: configuration, lookup, listing, metadata, atomic install
//! and composition of several roots under one canonical directory.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File};
use std::io;
use std::net::Ipv4Addr;
use std::os::unix::fs::MetadataExt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, IoContext, Result};
use crate::hashname::{parse_hash_name, HashName};

pub const ENV_DIR: &str = "garden-env";
pub const META_FILE: &str = "META";
pub const LOCK_DIR: &str = ".locks";
pub const STAGING_DIR: &str = ".staging";

pub const DEFAULT_RUNTIME_VARS: [&str; 4] = ["PATH", "PYTHONPATH", "LD_LIBRARY_PATH", "MANPATH"];
pub const DEFAULT_DYNAMIC_LINKER: &str = "ld-linux-x86-64.so.2";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GardenConfig {
    pub public_root: PathBuf,
    pub personal_root: PathBuf,
    pub storepath: Vec<PathBuf>,
    pub central: Option<PathBuf>,
    pub central_dest: Option<PathBuf>,
    pub canonical_root: Option<PathBuf>,
    pub treetop_dir: Option<PathBuf>,
    pub notify_group: Option<String>,
    pub notify_interface: Option<Ipv4Addr>,
    pub system: String,
    pub runtime_vars: Vec<String>,
    pub dynamic_linker: String,
}

pub fn default_system() -> String {
    format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS)
}

impl GardenConfig {
    /// Config with just a public and personal root; storepath is `[personal, public]`.
    pub fn new(public_root: impl Into<PathBuf>, personal_root: impl Into<PathBuf>) -> Self {
        let public_root = public_root.into();
        let personal_root = personal_root.into();
        GardenConfig {
            storepath: vec![personal_root.clone(), public_root.clone()],
            public_root,
            personal_root,
            central: None,
            central_dest: None,
            canonical_root: None,
            treetop_dir: None,
            notify_group: None,
            notify_interface: None,
            system: default_system(),
            runtime_vars: DEFAULT_RUNTIME_VARS.iter().map(|s| s.to_string()).collect(),
            dynamic_linker: DEFAULT_DYNAMIC_LINKER.to_string(),
        }
    }

    /// Loads `~/.config/garden/config` (or `$GARDEN_CONFIG`) and applies
    /// `GARDEN_*` environment overrides.
    pub fn from_env() -> Result<Self> {
        Self::from_env_with(&[])
    }

    /// As [`GardenConfig::from_env`], with `overrides` taking precedence over
    /// both the file and the environment.
    pub fn from_env_with(overrides: &[(&str, String)]) -> Result<Self> {
        let lookup = |k: &str| {
            overrides
                .iter()
                .find(|(key, _)| *key == k)
                .map(|(_, v)| v.clone())
                .or_else(|| std::env::var(k).ok())
                .filter(|v| !v.is_empty())
        };
        let home = lookup("HOME").map(PathBuf::from);
        let file = lookup("GARDEN_CONFIG")
            .map(PathBuf::from)
            .or_else(|| home.as_ref().map(|h| h.join(".config/garden/config")));
        let text = match file {
            Some(p) if p.is_file() => Some(fs::read_to_string(&p).at(&p)?),
            _ => None,
        };
        Self::from_sources(text.as_deref(), lookup, home)
    }

    pub fn from_sources(
        file_text: Option<&str>,
        lookup: impl Fn(&str) -> Option<String>,
        home: Option<PathBuf>,
    ) -> Result<Self> {
        let mut values = std::collections::BTreeMap::new();
        if let Some(text) = file_text {
            for (key, value, line) in crate::recipe::parse_scalar_file(text)? {
                if !CONFIG_KEYS.contains(&key.as_str()) {
                    return Err(Error::UnknownKey { key, line });
                }
                values.insert(key, value);
            }
        }
        for key in CONFIG_KEYS {
            if let Some(v) = lookup(key) {
                values.insert(key.to_string(), v);
            }
        }
        let get = |k: &str| values.get(k).cloned();

        let public_root = get("GARDEN_ROOT").map(PathBuf::from).unwrap_or_else(|| "/garden".into());
        let personal_root = match get("GARDEN_PERSONAL_ROOT") {
            Some(p) => PathBuf::from(p),
            None => home
                .ok_or_else(|| Error::Config("GARDEN_PERSONAL_ROOT unset and HOME unknown".into()))?
                .join("garden"),
        };
        let mut cfg = GardenConfig::new(public_root, personal_root);
        if let Some(sp) = get("GARDEN_STOREPATH") {
            cfg.storepath = split_storepath(&sp);
        }
        cfg.central = get("GARDEN_CENTRAL").map(PathBuf::from);
        cfg.central_dest = get("GARDEN_CENTRAL_DEST").map(PathBuf::from);
        cfg.canonical_root = get("GARDEN_CANONICAL_ROOT").map(PathBuf::from);
        cfg.treetop_dir = get("GARDEN_TREETOP_DIR").map(PathBuf::from);
        cfg.notify_group = get("notify_group");
        cfg.notify_interface = match get("notify_interface") {
            Some(s) => Some(
                s.parse()
                    .map_err(|_| Error::Config(format!("notify_interface '{s}' is not an IPv4 address")))?,
            ),
            None => None,
        };
        if let Some(s) = get("system") {
            cfg.system = s;
        }
        if let Some(v) = get("runtime_vars") {
            cfg.runtime_vars = v.split([':', ' ', ',']).filter(|s| !s.is_empty()).map(String::from).collect();
        }
        if let Some(v) = get("dynamic_linker") {
            cfg.dynamic_linker = v;
        }
        cfg.normalize()?;
        Ok(cfg)
    }

    /// Ensures storepath holds both roots, personal first, all absolute and distinct.
    pub fn normalize(&mut self) -> Result<()> {
        if !self.storepath.contains(&self.personal_root) {
            self.storepath.insert(0, self.personal_root.clone());
        }
        if !self.storepath.contains(&self.public_root) {
            self.storepath.push(self.public_root.clone());
        }
        let mut seen = HashSet::new();
        for root in &self.storepath {
            if !root.is_absolute() {
                return Err(Error::Config(format!("garden root {} is not absolute", root.display())));
            }
            if !seen.insert(root) {
                return Err(Error::Config(format!("garden root {} listed twice", root.display())));
            }
        }
        let pos = |r: &PathBuf| self.storepath.iter().position(|p| p == r);
        if pos(&self.personal_root) > pos(&self.public_root) {
            return Err(Error::Config("personal root must precede the public root in GARDEN_STOREPATH".into()));
        }
        Ok(())
    }

    /// Storepath without the personal root, used for public builds.
    pub fn public_storepath(&self) -> Vec<PathBuf> {
        self.storepath
            .iter()
            .filter(|r| **r != self.personal_root)
            .cloned()
            .collect()
    }
}

const CONFIG_KEYS: [&str; 12] = [
    "GARDEN_ROOT",
    "GARDEN_PERSONAL_ROOT",
    "GARDEN_STOREPATH",
    "GARDEN_CENTRAL",
    "GARDEN_CENTRAL_DEST",
    "GARDEN_CANONICAL_ROOT",
    "GARDEN_TREETOP_DIR",
    "notify_group",
    "notify_interface",
    "system",
    "runtime_vars",
    "dynamic_linker",
];

pub fn split_storepath(text: &str) -> Vec<PathBuf> {
    text.split(':').filter(|s| !s.is_empty()).map(PathBuf::from).collect()
}

// ---------------------------------------------------------------------------
// META

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InstallMode {
    Personal,
    Public,
}

impl InstallMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InstallMode::Personal => "personal",
            InstallMode::Public => "public",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PackageMeta {
    pub hashname: HashName,
    pub born_on: u64,
    pub git_revision: Option<String>,
    pub source_url: Option<String>,
    pub mode: InstallMode,
}

pub fn now_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl PackageMeta {
    pub fn new(hashname: HashName, mode: InstallMode) -> Self {
        PackageMeta {
            hashname,
            born_on: now_seconds(),
            git_revision: None,
            source_url: None,
            mode,
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "hashname = {}\nborn_on = {}\nmode = {}\n",
            self.hashname,
            self.born_on,
            self.mode.as_str()
        );
        if let Some(r) = &self.git_revision {
            out.push_str(&format!("revision = {r}\n"));
        }
        if let Some(u) = &self.source_url {
            out.push_str(&format!("source_url = {u}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Option<Self> {
        let (mut hashname, mut born_on, mut mode) = (None, None, None);
        let (mut git_revision, mut source_url) = (None, None);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=')?;
            let v = v.trim().to_string();
            match k.trim() {
                "hashname" => hashname = parse_hash_name(&v).ok(),
                "born_on" => born_on = v.parse().ok(),
                "mode" => {
                    mode = match v.as_str() {
                        "personal" => Some(InstallMode::Personal),
                        "public" => Some(InstallMode::Public),
                        _ => None,
                    }
                }
                "revision" => git_revision = Some(v),
                "source_url" => source_url = Some(v),
                _ => {}
            }
        }
        Some(PackageMeta {
            hashname: hashname?,
            born_on: born_on?,
            git_revision,
            source_url,
            mode: mode?,
        })
    }
}

pub fn meta_path(package: &Path) -> PathBuf {
    package.join(ENV_DIR).join(META_FILE)
}

pub fn read_meta(package: &Path) -> Option<PackageMeta> {
    fs::read_to_string(meta_path(package)).ok().and_then(|t| PackageMeta::parse(&t))
}

// ---------------------------------------------------------------------------
// Lookup

/// First `<root>/<hashname>` that exists, scanning `roots` in order.
pub fn locate_in(hashname: &HashName, roots: &[PathBuf]) -> Result<PathBuf> {
    let name = hashname.to_string();
    roots
        .iter()
        .map(|r| r.join(&name))
        .find(|p| p.is_dir())
        .ok_or_else(|| Error::not_found(name))
}

pub fn locate(hashname: &HashName, config: &GardenConfig) -> Result<PathBuf> {
    locate_in(hashname, &config.storepath)
}

/// Packages directly under one root, sorted by rendered hash-name.
pub fn list_packages(root: &Path) -> Result<Vec<(HashName, PathBuf)>> {
    let entries = match fs::read_dir(root) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e).at(root),
    };
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.at(root)?;
        let Some(name) = entry.file_name().to_str().map(String::from) else {
            continue;
        };
        let Ok(h) = parse_hash_name(&name) else {
            continue;
        };
        let path = entry.path();
        if path.is_dir() {
            out.push((h, path));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AvailEntry {
    pub hashname: HashName,
    pub root: PathBuf,
    pub path: PathBuf,
    pub meta: Option<PackageMeta>,
}

/// Packages whose label contains `pattern`, across all roots; first root wins
/// for duplicates. Sorted by label, then born-on date.
pub fn avail(pattern: &str, config: &GardenConfig) -> Result<Vec<AvailEntry>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for root in &config.storepath {
        for (h, path) in list_packages(root)? {
            if !h.label().contains(pattern) || !seen.insert(h.clone()) {
                continue;
            }
            out.push(AvailEntry {
                meta: read_meta(&path),
                hashname: h,
                root: root.clone(),
                path,
            });
        }
    }
    out.sort_by(|a, b| {
        let born = |e: &AvailEntry| e.meta.as_ref().map(|m| m.born_on);
        a.hashname
            .label()
            .cmp(b.hashname.label())
            .then(born(a).cmp(&born(b)))
            .then(a.hashname.cmp(&b.hashname))
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Install

/// Exclusive advisory lock on `<root>/.locks/<name>.lock`, released on drop.
#[derive(Debug)]
pub struct StoreLock {
    _file: File,
}

impl StoreLock {
    pub fn acquire(root: &Path, name: &str) -> Result<Self> {
        let dir = root.join(LOCK_DIR);
        fs::create_dir_all(&dir).at(&dir)?;
        let path = dir.join(format!("{name}.lock"));
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .at(&path)?;
        file.lock().at(&path)?;
        Ok(StoreLock { _file: file })
    }
}

/// Fresh `<root>/.staging/<unique>/` directory on the root's filesystem.
pub fn staging_dir(root: &Path) -> Result<tempfile::TempDir> {
    let base = root.join(STAGING_DIR);
    fs::create_dir_all(&base).at(&base)?;
    tempfile::Builder::new().prefix("build-").tempdir_in(&base).at(&base)
}

/// Moves a populated staging tree to `<root>/<hashname>` with one rename,
/// writing META first. An existing entry wins and the staging copy is dropped.
pub fn install_atomic(staging: &Path, hashname: &HashName, root: &Path, meta: &PackageMeta) -> Result<PathBuf> {
    let lock = StoreLock::acquire(root, &hashname.to_string())?;
    install_locked(&lock, staging, hashname, root, Some(meta))
}

/// As [`install_atomic`], for callers already holding the hash-name lock.
/// With `meta == None` the tree is placed as-is (used for transfers).
pub fn install_locked(
    _lock: &StoreLock,
    staging: &Path,
    hashname: &HashName,
    root: &Path,
    meta: Option<&PackageMeta>,
) -> Result<PathBuf> {
    let dest = root.join(hashname.to_string());
    if dest.exists() {
        if meta.is_some() && read_meta(&dest).is_none() {
            return Err(Error::CorruptExisting(dest));
        }
        remove_tree(staging)?;
        return Ok(dest);
    }
    fs::create_dir_all(root).at(root)?;
    let staging_dev = fs::metadata(staging).at(staging)?.dev();
    let root_dev = fs::metadata(root).at(root)?.dev();
    if staging_dev != root_dev {
        return Err(Error::CrossDeviceStaging {
            staging: staging.to_path_buf(),
            root: root.to_path_buf(),
        });
    }
    if let Some(meta) = meta {
        let env_dir = staging.join(ENV_DIR);
        fs::create_dir_all(&env_dir).at(&env_dir)?;
        let path = env_dir.join(META_FILE);
        fs::write(&path, meta.render()).at(&path)?;
    }
    match fs::rename(staging, &dest) {
        Ok(()) => Ok(dest),
        Err(e) if e.raw_os_error() == Some(18) => Err(Error::CrossDeviceStaging {
            staging: staging.to_path_buf(),
            root: root.to_path_buf(),
        }),
        Err(e) => Err(e).at(&dest),
    }
}

pub(crate) fn remove_tree(path: &Path) -> Result<()> {
    match fs::remove_dir_all(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e).at(path),
    }
}

// ---------------------------------------------------------------------------
// Composition

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LinkReport {
    pub created: Vec<String>,
    pub already_present: Vec<String>,
    pub conflicting: Vec<String>,
}

/// Links every package of every root into the canonical root. Existing links
/// count as present whatever they point at; non-links are left alone.
pub fn compose_roots(config: &GardenConfig) -> Result<LinkReport> {
    let canonical = config
        .canonical_root
        .as_ref()
        .ok_or_else(|| Error::Config("no canonical root configured (GARDEN_CANONICAL_ROOT)".into()))?;
    let unwritable = |source| Error::CanonicalUnwritable {
        path: canonical.clone(),
        source,
    };
    fs::create_dir_all(canonical).map_err(unwritable)?;

    let mut report = LinkReport::default();
    let mut handled = BTreeSet::new();
    for root in config.storepath.iter().filter(|r| *r != canonical) {
        for (h, path) in list_packages(root)? {
            let name = h.to_string();
            if !handled.insert(name.clone()) {
                continue;
            }
            let link = canonical.join(&name);
            match fs::symlink_metadata(&link) {
                Ok(m) if m.file_type().is_symlink() => report.already_present.push(name),
                Ok(_) => report.conflicting.push(name),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    std::os::unix::fs::symlink(&path, &link).map_err(unwritable)?;
                    report.created.push(name);
                }
                Err(e) => return Err(unwritable(e)),
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Show

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EnvFileSummary {
    pub name: String,
    pub first_line: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ShowReport {
    pub path: PathBuf,
    pub meta: PackageMeta,
    pub env_files: Vec<EnvFileSummary>,
}

pub fn show(hashname: &HashName, config: &GardenConfig) -> Result<ShowReport> {
    let path = locate(hashname, config)?;
    let meta = read_meta(&path).ok_or_else(|| Error::CorruptExisting(path.clone()))?;
    let env_dir = path.join(ENV_DIR);
    let mut env_files = Vec::new();
    for entry in walkdir::WalkDir::new(&env_dir).min_depth(1).sort_by_file_name() {
        let Ok(entry) = entry else { continue };
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(&env_dir).unwrap_or(entry.path());
        let name = rel.to_string_lossy().into_owned();
        if name == META_FILE {
            continue;
        }
        let text = fs::read_to_string(entry.path()).unwrap_or_default();
        let first = text.lines().next().unwrap_or("");
        let first_line = crate::envsynth::expand_line(first, &config.storepath).unwrap_or_else(|_| first.to_string());
        env_files.push(EnvFileSummary { name, first_line });
    }
    Ok(ShowReport { path, meta, env_files })
}
