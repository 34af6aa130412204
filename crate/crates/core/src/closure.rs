//! Runtime closures, diamond detection, and package transfer between roots.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::io;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::os::unix::fs::symlink;
use std::path::{Path, PathBuf};

use serde::Serialize;
use socket2::{Domain, Protocol, SockAddr, Socket, Type};
use tracing::{debug, info, warn};

use crate::error::{Error, IoContext, Result};
use crate::hashname::{parse_hash_name, HashName};
use crate::recipe::Treetop;
use crate::store::{self, GardenConfig, StoreLock, ENV_DIR};

pub const REFERENCES_FILE: &str = "REFERENCES";
pub const NOTIFY_PREFIX: &str = "GARDEN-NEW 1";

pub fn references_path(package: &Path) -> PathBuf {
    package.join(ENV_DIR).join(REFERENCES_FILE)
}

/// Direct references of a package, sorted. A missing file means none.
pub fn read_references(package: &Path) -> Result<Vec<HashName>> {
    let path = references_path(package);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e).at(&path),
    };
    let mut refs = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let h = parse_hash_name(line).map_err(|_| Error::CorruptReferences {
            path: path.clone(),
            line: idx + 1,
        })?;
        refs.insert(h);
    }
    Ok(refs.into_iter().collect())
}

/// Writes `garden-env/REFERENCES` as sorted, one hash-name per line.
pub fn write_references<'a>(package: &Path, refs: impl IntoIterator<Item = &'a HashName>) -> Result<()> {
    let sorted: BTreeSet<&HashName> = refs.into_iter().collect();
    let path = references_path(package);
    let dir = package.join(ENV_DIR);
    fs::create_dir_all(&dir).at(&dir)?;
    let body: String = sorted.iter().map(|h| format!("{h}\n")).collect();
    fs::write(&path, body).at(&path)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClosureGraph {
    pub root: HashName,
    /// Breadth-first from the root, children visited in sorted order.
    pub members: Vec<HashName>,
    pub edges: BTreeMap<HashName, Vec<HashName>>,
    #[serde(skip)]
    pub paths: BTreeMap<HashName, PathBuf>,
}

impl ClosureGraph {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, h: &HashName) -> bool {
        self.edges.contains_key(h)
    }
}

pub fn compute_closure(root: &HashName, config: &GardenConfig) -> Result<ClosureGraph> {
    compute_closure_in(root, &config.storepath)
}

pub fn compute_closure_in(root: &HashName, roots: &[PathBuf]) -> Result<ClosureGraph> {
    let mut members = Vec::new();
    let mut edges = BTreeMap::new();
    let mut paths = BTreeMap::new();
    let mut queue = VecDeque::new();

    paths.insert(root.clone(), store::locate_in(root, roots)?);
    queue.push_back(root.clone());
    while let Some(h) = queue.pop_front() {
        let refs = read_references(&paths[&h])?;
        for r in &refs {
            if paths.contains_key(r) {
                continue;
            }
            let path = store::locate_in(r, roots).map_err(|_| Error::PackageNotFound {
                hashname: r.to_string(),
                referrer: Some(h.to_string()),
            })?;
            paths.insert(r.clone(), path);
            queue.push_back(r.clone());
        }
        members.push(h.clone());
        edges.insert(h, refs);
    }
    debug!(root = %root, members = members.len(), "closure computed");
    Ok(ClosureGraph {
        root: root.clone(),
        members,
        edges,
        paths,
    })
}

/// Drops a trailing `-<version>` token when it starts with a digit.
pub fn strip_version_stem(label: &str) -> &str {
    match label.rsplit_once('-') {
        Some((stem, last))
            if !stem.is_empty()
                && last.starts_with(|c: char| c.is_ascii_digit())
                && last.chars().all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_') =>
        {
            stem
        }
        _ => label,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DiamondConflict {
    pub stem: String,
    pub versions: Vec<HashName>,
    /// One shortest chain from the graph root per entry of `versions`.
    pub witness_paths: Vec<Vec<HashName>>,
}

pub fn detect_diamond(graph: &ClosureGraph) -> Vec<DiamondConflict> {
    let mut parent: HashMap<&HashName, &HashName> = HashMap::new();
    for h in &graph.members {
        for r in graph.edges.get(h).into_iter().flatten() {
            if *r != graph.root && !parent.contains_key(r) {
                parent.insert(r, h);
            }
        }
    }
    let chain = |target: &HashName| {
        let mut path = vec![target.clone()];
        let mut cur = target;
        while let Some(p) = parent.get(cur) {
            path.push((*p).clone());
            cur = p;
        }
        path.reverse();
        path
    };

    let mut groups: BTreeMap<&str, BTreeMap<&str, &HashName>> = BTreeMap::new();
    for h in &graph.members {
        groups
            .entry(strip_version_stem(h.label()))
            .or_default()
            .entry(h.digest())
            .or_insert(h);
    }
    groups
        .into_iter()
        .filter(|(_, by_digest)| by_digest.len() >= 2)
        .map(|(stem, by_digest)| {
            let mut versions: Vec<HashName> = by_digest.into_values().cloned().collect();
            versions.sort();
            let witness_paths = versions.iter().map(chain).collect();
            DiamondConflict {
                stem: stem.to_string(),
                versions,
                witness_paths,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Transfer

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportMode {
    Full,
    Push,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TransferReport {
    pub sent: Vec<HashName>,
    pub skipped: Vec<HashName>,
    pub bytes: u64,
}

impl std::fmt::Display for TransferReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for h in &self.sent {
            writeln!(f, "sent {h}")?;
        }
        write!(
            f,
            "{} sent, {} already present, {} bytes",
            self.sent.len(),
            self.skipped.len(),
            self.bytes
        )
    }
}

fn dest_err(path: &Path) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::Io { source, .. } => Error::DestUnwritable {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

/// Copies `packages` (with their source paths) into `dest` unless already
/// present there. Packages are sent in the order given.
pub fn transfer(packages: &[(HashName, PathBuf)], dest: &Path) -> Result<TransferReport> {
    fs::create_dir_all(dest).map_err(|source| Error::DestUnwritable {
        path: dest.to_path_buf(),
        source,
    })?;
    let _dest_lock = StoreLock::acquire(dest, ".transfer").map_err(dest_err(dest))?;
    let mut report = TransferReport::default();
    for (h, src) in packages {
        let name = h.to_string();
        if dest.join(&name).exists() {
            report.skipped.push(h.clone());
            continue;
        }
        let lock = StoreLock::acquire(dest, &name).map_err(dest_err(dest))?;
        let staging = store::staging_dir(dest).map_err(dest_err(dest))?;
        let tree = staging.path().join(&name);
        report.bytes += copy_tree(src, &tree).map_err(dest_err(dest))?;
        store::install_locked(&lock, &tree, h, dest, None)?;
        info!(package = %h, dest = %dest.display(), "transferred");
        report.sent.push(h.clone());
    }
    Ok(report)
}

/// Recursive copy preserving symlinks and permissions; returns bytes copied.
pub fn copy_tree(src: &Path, dst: &Path) -> Result<u64> {
    let mut bytes = 0;
    for entry in walkdir::WalkDir::new(src).follow_links(false) {
        let entry = entry.map_err(|e| Error::Io {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| src.to_path_buf()),
            source: e.into(),
        })?;
        let rel = entry.path().strip_prefix(src).expect("walk stays under src");
        let target = dst.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&target).at(&target)?;
            let perms = entry.metadata().map_err(|e| Error::Io {
                path: entry.path().to_path_buf(),
                source: e.into(),
            })?;
            fs::set_permissions(&target, perms.permissions()).at(&target)?;
        } else if ft.is_symlink() {
            let link = fs::read_link(entry.path()).at(entry.path())?;
            symlink(&link, &target).at(&target)?;
        } else {
            bytes += fs::copy(entry.path(), &target).at(&target)?;
        }
    }
    Ok(bytes)
}

/// Sends `root` (push) or its whole closure (full) to `dest`, dependencies first.
pub fn export(root: &HashName, dest: &Path, mode: ExportMode, config: &GardenConfig) -> Result<TransferReport> {
    export_from(root, &config.storepath, dest, mode)
}

pub fn export_from(root: &HashName, roots: &[PathBuf], dest: &Path, mode: ExportMode) -> Result<TransferReport> {
    let packages = match mode {
        ExportMode::Push => vec![(root.clone(), store::locate_in(root, roots)?)],
        ExportMode::Full => {
            let graph = compute_closure_in(root, roots)?;
            graph
                .members
                .iter()
                .rev()
                .map(|h| (h.clone(), graph.paths[h].clone()))
                .collect()
        }
    };
    transfer(&packages, dest)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PullTarget {
    All,
    Package(HashName),
    Treetop(Treetop),
}

/// Copies packages from the central garden into the public root.
pub fn pull(target: &PullTarget, config: &GardenConfig) -> Result<TransferReport> {
    let central = config.central.clone().ok_or(Error::CentralUnconfigured)?;
    let roots = [central.clone()];
    let mut packages: Vec<(HashName, PathBuf)> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut add_closure = |h: &HashName, packages: &mut Vec<(HashName, PathBuf)>| -> Result<()> {
        let graph = compute_closure_in(h, &roots)?;
        for m in graph.members.iter().rev() {
            if seen.insert(m.clone()) {
                packages.push((m.clone(), graph.paths[m].clone()));
            }
        }
        Ok(())
    };
    match target {
        PullTarget::All => packages = store::list_packages(&central)?,
        PullTarget::Package(h) => add_closure(h, &mut packages)?,
        PullTarget::Treetop(t) => {
            for h in t.pins.values() {
                add_closure(h, &mut packages)?;
            }
        }
    }
    transfer(&packages, &config.public_root)
}

// ---------------------------------------------------------------------------
// Notification

pub fn notify_payload(h: &HashName) -> String {
    format!("{NOTIFY_PREFIX} {h}\n")
}

/// Sends one availability datagram to `group_and_port` (`addr:port`).
/// Callers treat failures as warnings.
pub fn notify(h: &HashName, group_and_port: &str, interface: Option<Ipv4Addr>) -> Result<()> {
    let addr: SocketAddrV4 = group_and_port
        .parse()
        .map_err(|_| Error::Config(format!("notify group '{group_and_port}' is not <ipv4>:<port>")))?;
    let io_err = |source| Error::Io {
        path: PathBuf::from(group_and_port),
        source,
    };
    let socket = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP)).map_err(io_err)?;
    if addr.ip().is_multicast() {
        socket.set_multicast_ttl_v4(1).map_err(io_err)?;
        socket.set_multicast_loop_v4(true).map_err(io_err)?;
        if let Some(iface) = interface {
            socket.set_multicast_if_v4(&iface).map_err(io_err)?;
        }
    }
    socket
        .send_to(notify_payload(h).as_bytes(), &SockAddr::from(addr))
        .map_err(io_err)?;
    debug!(package = %h, group = group_and_port, "notification sent");
    Ok(())
}

/// Notifies the configured group, if any, logging instead of failing.
pub fn notify_configured(h: &HashName, config: &GardenConfig) {
    if let Some(group) = &config.notify_group {
        if let Err(e) = notify(h, group, config.notify_interface) {
            warn!("notification for {h} not sent: {e}");
        }
    }
}
