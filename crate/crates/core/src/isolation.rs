//! Isolation checks: every dynamic dependency of a built file, including
//! its program interpreter, must resolve inside a garden root.
//!
//! Dependencies come from three sources: ELF64 little-endian objects
//! (PT_INTERP, DT_NEEDED, DT_RPATH, DT_RUNPATH), `#!` scripts, and declared
//! manifests whose first line is `GARDEN-DYNINFO 1`. Resolution only looks
//! at the file's own rpath; system library directories are never searched.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, IoContext, Result};
use crate::hashname::{is_alphabet_byte, DIGEST_LEN};
use crate::store::GardenConfig;

pub const MANIFEST_MAGIC: &str = "GARDEN-DYNINFO 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileKind {
    ElfBinary,
    ElfSharedObject,
    Script,
    DeclaredManifest,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DynInfo {
    pub kind: FileKind,
    pub needed: Vec<String>,
    /// DT_RPATH entries, then DT_RUNPATH entries, colon-split.
    pub rpath_dirs: Vec<String>,
    pub interpreter: Option<String>,
    pub shebang: Option<String>,
}

impl DynInfo {
    fn empty(kind: FileKind) -> Self {
        DynInfo {
            kind,
            needed: Vec::new(),
            rpath_dirs: Vec::new(),
            interpreter: None,
            shebang: None,
        }
    }
}

pub fn extract_dynamic_deps(file: &Path) -> Result<DynInfo> {
    let bytes = fs::read(file).at(file)?;
    parse_dyninfo(&bytes)
}

pub fn parse_dyninfo(bytes: &[u8]) -> Result<DynInfo> {
    if bytes.starts_with(b"\x7fELF") {
        return parse_elf(bytes);
    }
    if bytes.starts_with(b"#!") {
        let line = bytes[2..].split(|b| *b == b'\n').next().unwrap_or_default();
        let line = String::from_utf8_lossy(line);
        let mut info = DynInfo::empty(FileKind::Script);
        info.shebang = line.split_whitespace().next().map(String::from);
        return Ok(info);
    }
    if let Some(rest) = bytes.strip_prefix(MANIFEST_MAGIC.as_bytes()) {
        if rest.is_empty() || rest[0] == b'\n' || rest.starts_with(b"\r\n") {
            return parse_manifest(&String::from_utf8_lossy(bytes));
        }
    }
    Ok(DynInfo::empty(FileKind::Other))
}

fn parse_manifest(text: &str) -> Result<DynInfo> {
    let mut info = DynInfo::empty(FileKind::DeclaredManifest);
    for (idx, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: &str| Error::MalformedManifest {
            line: idx + 1,
            message: message.to_string(),
        };
        let (directive, value) = line.split_once(char::is_whitespace).ok_or_else(|| bad("expected '<DIRECTIVE> <value>'"))?;
        let value = value.trim().to_string();
        match directive {
            "NEEDED" => info.needed.push(value),
            "RPATH" => info.rpath_dirs.extend(value.split(':').filter(|s| !s.is_empty()).map(String::from)),
            "INTERP" => info.interpreter = Some(value),
            _ => return Err(bad("unknown directive")),
        }
    }
    Ok(info)
}

// ---------------------------------------------------------------------------
// ELF64

const PT_LOAD: u32 = 1;
const PT_DYNAMIC: u32 = 2;
const PT_INTERP: u32 = 3;
const DT_NULL: u64 = 0;
const DT_NEEDED: u64 = 1;
const DT_STRTAB: u64 = 5;
const DT_STRSZ: u64 = 10;
const DT_RPATH: u64 = 15;
const DT_RUNPATH: u64 = 29;
const ET_DYN: u16 = 3;

struct Elf<'a> {
    bytes: &'a [u8],
}

fn malformed(offset: u64, message: impl Into<String>) -> Error {
    Error::MalformedElf {
        offset,
        message: message.into(),
    }
}

impl Elf<'_> {
    fn slice(&self, offset: u64, len: u64) -> Result<&[u8]> {
        let end = offset
            .checked_add(len)
            .ok_or_else(|| malformed(offset, "offset overflow"))?;
        if end > self.bytes.len() as u64 {
            return Err(malformed(offset, format!("read of {len} bytes past end of file")));
        }
        Ok(&self.bytes[offset as usize..end as usize])
    }

    fn u16(&self, offset: u64) -> Result<u16> {
        Ok(u16::from_le_bytes(self.slice(offset, 2)?.try_into().expect("2 bytes")))
    }

    fn u32(&self, offset: u64) -> Result<u32> {
        Ok(u32::from_le_bytes(self.slice(offset, 4)?.try_into().expect("4 bytes")))
    }

    fn u64(&self, offset: u64) -> Result<u64> {
        Ok(u64::from_le_bytes(self.slice(offset, 8)?.try_into().expect("8 bytes")))
    }

    /// NUL-terminated string starting at `offset`, not crossing `limit`.
    fn cstr(&self, offset: u64, limit: u64) -> Result<String> {
        let limit = limit.min(self.bytes.len() as u64);
        if offset >= limit {
            return Err(malformed(offset, "string offset outside string table"));
        }
        let region = &self.bytes[offset as usize..limit as usize];
        let len = region
            .iter()
            .position(|b| *b == 0)
            .ok_or_else(|| malformed(offset, "unterminated string"))?;
        Ok(String::from_utf8_lossy(&region[..len]).into_owned())
    }
}

struct Segment {
    kind: u32,
    offset: u64,
    vaddr: u64,
    filesz: u64,
}

fn parse_elf(bytes: &[u8]) -> Result<DynInfo> {
    let elf = Elf { bytes };
    let ident = elf.slice(0, 16)?;
    match ident[4] {
        2 => {}
        1 => return Err(Error::UnsupportedElfClass("32-bit".into())),
        c => return Err(malformed(4, format!("invalid ELF class {c}"))),
    }
    match ident[5] {
        1 => {}
        2 => return Err(Error::UnsupportedElfClass("big-endian".into())),
        d => return Err(malformed(5, format!("invalid data encoding {d}"))),
    }
    let e_type = elf.u16(16)?;
    let phoff = elf.u64(0x20)?;
    let phentsize = u64::from(elf.u16(0x36)?);
    let phnum = u64::from(elf.u16(0x38)?);
    if phnum > 0 && phentsize < 56 {
        return Err(malformed(0x36, format!("program header entry size {phentsize} too small")));
    }

    let mut segments = Vec::new();
    for i in 0..phnum {
        let at = phoff
            .checked_add(i * phentsize)
            .ok_or_else(|| malformed(phoff, "program header offset overflow"))?;
        segments.push(Segment {
            kind: elf.u32(at)?,
            offset: elf.u64(at + 8)?,
            vaddr: elf.u64(at + 16)?,
            filesz: elf.u64(at + 32)?,
        });
    }

    let mut info = DynInfo::empty(FileKind::ElfBinary);
    if let Some(seg) = segments.iter().find(|s| s.kind == PT_INTERP) {
        let raw = elf.slice(seg.offset, seg.filesz)?;
        let end = raw.iter().position(|b| *b == 0).unwrap_or(raw.len());
        info.interpreter = Some(String::from_utf8_lossy(&raw[..end]).into_owned());
    }
    if e_type == ET_DYN && info.interpreter.is_none() {
        info.kind = FileKind::ElfSharedObject;
    }

    let Some(dynamic) = segments.iter().find(|s| s.kind == PT_DYNAMIC) else {
        return Ok(info);
    };
    elf.slice(dynamic.offset, dynamic.filesz)?;
    let mut entries = Vec::new();
    for i in 0..dynamic.filesz / 16 {
        let at = dynamic.offset + i * 16;
        let tag = elf.u64(at)?;
        if tag == DT_NULL {
            break;
        }
        entries.push((tag, elf.u64(at + 8)?, at));
    }

    let (strtab_addr, strtab_at) = entries
        .iter()
        .find(|e| e.0 == DT_STRTAB)
        .map(|e| (e.1, e.2))
        .ok_or_else(|| malformed(dynamic.offset, "dynamic section has no DT_STRTAB"))?;
    let strtab_off = segments
        .iter()
        .filter(|s| s.kind == PT_LOAD)
        .find(|s| strtab_addr >= s.vaddr && strtab_addr - s.vaddr < s.filesz)
        .map(|s| strtab_addr - s.vaddr + s.offset)
        .ok_or_else(|| malformed(strtab_at, format!("DT_STRTAB {strtab_addr:#x} not in any loaded segment")))?;
    let strtab_end = entries
        .iter()
        .find(|e| e.0 == DT_STRSZ)
        .map(|e| strtab_off.saturating_add(e.1))
        .unwrap_or(bytes.len() as u64);

    let string = |val: u64, at: u64| -> Result<String> {
        let off = strtab_off
            .checked_add(val)
            .ok_or_else(|| malformed(at, "string offset overflow"))?;
        elf.cstr(off, strtab_end)
    };
    let mut runpath = Vec::new();
    for &(tag, val, at) in &entries {
        match tag {
            DT_NEEDED => info.needed.push(string(val, at)?),
            DT_RPATH => info.rpath_dirs.extend(split_path_list(&string(val, at)?)),
            DT_RUNPATH => runpath.extend(split_path_list(&string(val, at)?)),
            _ => {}
        }
    }
    info.rpath_dirs.extend(runpath);
    Ok(info)
}

fn split_path_list(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(':').filter(|e| !e.is_empty()).map(String::from)
}

// ---------------------------------------------------------------------------
// Checking

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Clean,
    Violation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpreterVerdict {
    Clean,
    Violation,
    Absent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Resolution {
    pub needed: String,
    pub resolved: Option<PathBuf>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CleanReport {
    pub file: PathBuf,
    pub kind: FileKind,
    pub resolutions: Vec<Resolution>,
    pub interpreter: Option<String>,
    pub interpreter_verdict: InterpreterVerdict,
    /// Relative or `$ORIGIN` rpath entries; each one makes the file dirty.
    pub flagged_rpaths: Vec<String>,
    /// Parse failure or skip reason.
    pub note: Option<String>,
    pub clean: bool,
}

/// Where lookups happen: the garden roots, plus an optional alias mapping a
/// final store path to the staging directory it is being built in.
#[derive(Clone, Debug, Default)]
pub struct CheckContext {
    pub roots: Vec<PathBuf>,
    pub alias: Option<(PathBuf, PathBuf)>,
}

impl CheckContext {
    pub fn new(config: &GardenConfig) -> Self {
        let mut roots = config.storepath.clone();
        roots.extend(config.canonical_root.clone());
        CheckContext {
            roots: roots.iter().map(|r| normalize(r)).collect(),
            alias: None,
        }
    }

    pub fn with_alias(mut self, final_path: PathBuf, staging: PathBuf) -> Self {
        self.alias = Some((normalize(&final_path), staging));
        self
    }

    pub fn in_garden(&self, path: &Path) -> bool {
        let path = normalize(path);
        self.roots.iter().any(|r| path.starts_with(r))
    }

    fn exists(&self, path: &Path) -> bool {
        let path = normalize(path);
        if let Some((fin, staging)) = &self.alias {
            if let Ok(rest) = path.strip_prefix(fin) {
                return staging.join(rest).exists();
            }
        }
        path.exists()
    }

    fn verdict(&self, path: &Path) -> Verdict {
        if path.is_absolute() && self.in_garden(path) && self.exists(path) {
            Verdict::Clean
        } else {
            Verdict::Violation
        }
    }
}

/// Lexical normalization: drops `.` and folds `..` without touching the filesystem.
pub fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

fn flagged(dir: &str) -> bool {
    dir.contains("$ORIGIN") || dir.contains("${ORIGIN}") || !dir.starts_with('/')
}

pub fn check_info(file: &Path, info: &DynInfo, ctx: &CheckContext) -> CleanReport {
    let flagged_rpaths: Vec<String> = info.rpath_dirs.iter().filter(|d| flagged(d)).cloned().collect();
    let search: Vec<&String> = info.rpath_dirs.iter().filter(|d| !flagged(d)).collect();
    let resolutions: Vec<Resolution> = info
        .needed
        .iter()
        .map(|needed| {
            let resolved = if needed.contains('/') {
                Some(PathBuf::from(needed)).filter(|p| ctx.exists(p))
            } else {
                search
                    .iter()
                    .map(|d| Path::new(d.as_str()).join(needed))
                    .find(|p| ctx.exists(p))
            };
            let verdict = resolved.as_deref().map(|p| ctx.verdict(p)).unwrap_or(Verdict::Violation);
            Resolution {
                needed: needed.clone(),
                resolved,
                verdict,
            }
        })
        .collect();
    let interpreter = info.interpreter.clone().or_else(|| info.shebang.clone());
    let interpreter_verdict = match &interpreter {
        None => InterpreterVerdict::Absent,
        Some(p) => match ctx.verdict(Path::new(p)) {
            Verdict::Clean => InterpreterVerdict::Clean,
            Verdict::Violation => InterpreterVerdict::Violation,
        },
    };
    let clean = resolutions.iter().all(|r| r.verdict == Verdict::Clean)
        && interpreter_verdict != InterpreterVerdict::Violation
        && flagged_rpaths.is_empty();
    CleanReport {
        file: file.to_path_buf(),
        kind: info.kind,
        resolutions,
        interpreter,
        interpreter_verdict,
        flagged_rpaths,
        note: None,
        clean,
    }
}

fn failed_report(file: &Path, kind: FileKind, note: String, clean: bool) -> CleanReport {
    CleanReport {
        file: file.to_path_buf(),
        kind,
        resolutions: Vec::new(),
        interpreter: None,
        interpreter_verdict: InterpreterVerdict::Absent,
        flagged_rpaths: Vec::new(),
        note: Some(note),
        clean,
    }
}

fn check_file(file: &Path, ctx: &CheckContext) -> Result<Option<CleanReport>> {
    match extract_dynamic_deps(file) {
        Ok(info) if info.kind == FileKind::Other => Ok(None),
        Ok(info) => Ok(Some(check_info(file, &info, ctx))),
        Err(e @ Error::UnsupportedElfClass(_)) => Ok(Some(failed_report(file, FileKind::ElfBinary, format!("skipped: {e}"), true))),
        Err(e @ Error::MalformedElf { .. }) => Ok(Some(failed_report(file, FileKind::ElfBinary, e.to_string(), false))),
        Err(e @ Error::MalformedManifest { .. }) => {
            Ok(Some(failed_report(file, FileKind::DeclaredManifest, e.to_string(), false)))
        }
        Err(e) => Err(e),
    }
}

/// Checks one file. Files with no dynamic information are vacuously clean.
pub fn check_clean(file: &Path, config: &GardenConfig) -> Result<CleanReport> {
    let ctx = CheckContext::new(config);
    Ok(check_file(file, &ctx)?.unwrap_or_else(|| check_info(file, &DynInfo::empty(FileKind::Other), &ctx)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TreeReport {
    pub root: PathBuf,
    /// Dirty files first, then by path.
    pub files: Vec<CleanReport>,
    pub clean: bool,
}

impl TreeReport {
    pub fn files_checked(&self) -> usize {
        self.files.len()
    }

    pub fn violations(&self) -> impl Iterator<Item = &CleanReport> {
        self.files.iter().filter(|f| !f.clean)
    }
}

pub fn check_tree(dir: &Path, ctx: &CheckContext) -> Result<TreeReport> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).follow_links(false) {
        let entry = entry.map_err(|e| Error::Io {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf()),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        if let Some(report) = check_file(entry.path(), ctx)? {
            files.push(report);
        }
    }
    files.sort_by(|a, b| a.clean.cmp(&b.clean).then_with(|| a.file.cmp(&b.file)));
    let clean = files.iter().all(|f| f.clean);
    Ok(TreeReport {
        root: dir.to_path_buf(),
        files,
        clean,
    })
}

impl fmt::Display for CleanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = |clean: bool| if clean { "clean" } else { "violation" };
        writeln!(f, "{} [{}]", self.file.display(), if self.clean { "clean" } else { "dirty" })?;
        if let Some(note) = &self.note {
            writeln!(f, "  ({note})")?;
        }
        for r in &self.resolutions {
            let target = r
                .resolved
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "NOT-FOUND".into());
            writeln!(f, "  {} => {target} [{}]", r.needed, tag(r.verdict == Verdict::Clean))?;
        }
        if let Some(interp) = &self.interpreter {
            writeln!(f, "  {interp} [{}]", tag(self.interpreter_verdict == InterpreterVerdict::Clean))?;
        }
        for dir in &self.flagged_rpaths {
            writeln!(f, "  rpath {dir} [violation]")?;
        }
        Ok(())
    }
}

impl fmt::Display for TreeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for file in &self.files {
            write!(f, "{file}")?;
        }
        write!(
            f,
            "{} file(s) checked: {}",
            self.files.len(),
            if self.clean { "clean" } else { "dirty" }
        )
    }
}

// ---------------------------------------------------------------------------
// Reference scanning

/// Digests from `known` that occur in any file under `dir` as a run of
/// exactly 32 alphabet bytes.
pub fn scan_refs(dir: &Path, known: &HashSet<String>) -> Result<BTreeSet<String>> {
    let mut found = BTreeSet::new();
    for entry in walkdir::WalkDir::new(dir).follow_links(false) {
        let Ok(entry) = entry else { continue };
        let bytes = if entry.file_type().is_file() {
            fs::read(entry.path()).at(entry.path())?
        } else if entry.file_type().is_symlink() {
            fs::read_link(entry.path())
                .map(|t| t.to_string_lossy().into_owned().into_bytes())
                .unwrap_or_default()
        } else {
            continue;
        };
        scan_bytes(&bytes, known, &mut found);
    }
    Ok(found)
}

fn scan_bytes(bytes: &[u8], known: &HashSet<String>, found: &mut BTreeSet<String>) {
    let mut i = 0;
    while i < bytes.len() {
        let run = bytes[i..].iter().take_while(|b| is_alphabet_byte(**b)).count();
        if run == DIGEST_LEN {
            let s = std::str::from_utf8(&bytes[i..i + run]).expect("alphabet is ASCII");
            if known.contains(s) {
                found.insert(s.to_string());
            }
        }
        i += run.max(1);
    }
}
