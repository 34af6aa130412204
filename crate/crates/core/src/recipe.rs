//! Recipe and treetop files.
//!
//! Both use a flat line grammar:
//!
//! ```text
//! # comment
//! name = "aien-system"
//! treetop = "Aien2"
//! [deps]
//! gcc = @treetop
//! cajun = "7r0f0jjh128ps5118100000000000000-cajun-2.2"
//! [build]
//! CPPFLAGS = [gcc, glibc]
//! ```
//!
//! Treetops are `sym = "hash-name"` lines plus an optional `export = [...]`.
//! A trailing `;` on any line is accepted.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, IoContext, Result};
use crate::hashname::{compute_package_hash, is_valid_label, parse_hash_name, HashInputs, HashName};
use crate::store;

pub const RECIPE_FILE: &str = "garden.recipe";
pub const DEFAULT_HELPER: &str = "garden-helper";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum DepRef {
    Pinned(HashName),
    Treetop,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum BuildItem {
    Symbol(String),
    Literal(HashName),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Recipe {
    pub name: String,
    pub version: String,
    pub treetop_ref: Option<String>,
    pub helper_path: String,
    pub deps: BTreeMap<String, DepRef>,
    pub build_vars: BTreeMap<String, Vec<BuildItem>>,
    pub install_command: String,
    #[serde(skip)]
    pub source: String,
}

impl Recipe {
    pub fn label(&self) -> String {
        format!("{}-{}", self.name, self.version)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Treetop {
    pub name: String,
    pub pins: BTreeMap<String, HashName>,
    pub export_list: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ResolvedDep {
    pub hashname: HashName,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ResolvedRecipe {
    pub recipe: Recipe,
    /// Symbol to located package, for every symbol the recipe uses.
    pub resolved_deps: BTreeMap<String, ResolvedDep>,
    /// Hash-name literals written directly into build lists.
    pub literal_deps: BTreeMap<HashName, PathBuf>,
    pub self_hashname: HashName,
}

impl ResolvedRecipe {
    /// Sorted, duplicate-free rendered hash-names of every direct dependency.
    pub fn dep_hashnames(&self) -> Vec<String> {
        let mut all: Vec<String> = self
            .resolved_deps
            .values()
            .map(|d| d.hashname.to_string())
            .chain(self.literal_deps.keys().map(HashName::to_string))
            .collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn path_of(&self, item: &BuildItem) -> Option<&Path> {
        match item {
            BuildItem::Symbol(s) => self.resolved_deps.get(s).map(|d| d.path.as_path()),
            BuildItem::Literal(h) => self.literal_deps.get(h).map(PathBuf::as_path),
        }
    }
}

// ---------------------------------------------------------------------------
// Line grammar

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    List(Vec<ListItem>),
    TreetopRef,
}

#[derive(Debug, Clone, PartialEq)]
enum ListItem {
    Symbol(String),
    Quoted(String),
}

#[derive(Debug)]
enum Line {
    Section { name: String, line: usize },
    Entry { key: String, value: Value, line: usize, column: usize },
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

struct Cursor<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    line: usize,
    text: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, line: usize) -> Self {
        Cursor {
            chars: text.char_indices().collect(),
            pos: 0,
            line,
            text,
        }
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: self.line,
            column: self.column(),
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c == ' ' || c == '\t' || c == '\r') {
            self.pos += 1;
        }
    }

    fn expect(&mut self, want: char) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected '{want}', found '{c}'"))),
            None => Err(self.err(format!("expected '{want}', found end of line"))),
        }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if is_ident_start(c) => self.pos += 1,
            Some(c) => return Err(self.err(format!("expected identifier, found '{c}'"))),
            None => return Err(self.err("expected identifier, found end of line")),
        }
        while matches!(self.peek(), Some(c) if is_ident_char(c)) {
            self.pos += 1;
        }
        Ok(self.slice(start, self.pos))
    }

    fn slice(&self, start: usize, end: usize) -> String {
        let from = self.chars[start].0;
        let to = self.chars.get(end).map(|&(i, _)| i).unwrap_or(self.text.len());
        self.text[from..to].to_string()
    }

    fn quoted(&mut self) -> Result<String> {
        self.expect('"')?;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(self.err("unterminated string")),
                Some('"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some(c @ ('"' | '\\')) => {
                            out.push(c);
                            self.pos += 1;
                        }
                        Some(c) => return Err(self.err(format!("unknown escape '\\{c}'"))),
                        None => return Err(self.err("unterminated string")),
                    }
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    fn value(&mut self) -> Result<Value> {
        self.skip_ws();
        match self.peek() {
            Some('"') => Ok(Value::Str(self.quoted()?)),
            Some('@') => {
                self.pos += 1;
                let word = self.ident()?;
                if word != "treetop" {
                    return Err(self.err(format!("expected '@treetop', found '@{word}'")));
                }
                Ok(Value::TreetopRef)
            }
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                self.skip_ws();
                if self.peek() == Some(']') {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                loop {
                    self.skip_ws();
                    let item = if self.peek() == Some('"') {
                        ListItem::Quoted(self.quoted()?)
                    } else {
                        ListItem::Symbol(self.ident()?)
                    };
                    items.push(item);
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(']') => {
                            self.pos += 1;
                            return Ok(Value::List(items));
                        }
                        // Whitespace-separated lists, as in `[ gcc python ]`.
                        Some(c) if c == '"' || is_ident_start(c) => {}
                        Some(c) => return Err(self.err(format!("expected ',' or ']', found '{c}'"))),
                        None => return Err(self.err("unterminated list")),
                    }
                }
            }
            Some(c) => Err(self.err(format!("expected a value, found '{c}'"))),
            None => Err(self.err("expected a value, found end of line")),
        }
    }

    fn finish(&mut self) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(';') {
            self.pos += 1;
            self.skip_ws();
        }
        match self.peek() {
            None | Some('#') => Ok(()),
            Some(c) => Err(self.err(format!("unexpected '{c}' after value"))),
        }
    }
}

fn parse_lines(text: &str) -> Result<Vec<Line>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut cur = Cursor::new(raw, line);
        cur.skip_ws();
        match cur.peek() {
            None | Some('#') => continue,
            Some('[') => {
                cur.pos += 1;
                let name = cur.ident()?;
                cur.expect(']')?;
                cur.finish()?;
                out.push(Line::Section { name, line });
            }
            Some(_) => {
                let column = cur.column();
                let key = cur.ident()?;
                cur.expect('=')?;
                let value = cur.value()?;
                cur.finish()?;
                out.push(Line::Entry { key, value, line, column });
            }
        }
    }
    Ok(out)
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn list_items(items: Vec<ListItem>, line: usize, column: usize) -> Result<Vec<BuildItem>> {
    items
        .into_iter()
        .map(|item| match item {
            ListItem::Symbol(s) => Ok(BuildItem::Symbol(s)),
            ListItem::Quoted(q) => parse_hash_name(&q)
                .map(BuildItem::Literal)
                .map_err(|_| syntax(line, column, format!("list literal '{q}' is not a hash-name"))),
        })
        .collect()
}

#[derive(PartialEq)]
enum Section {
    Top,
    Deps,
    Build,
}

pub fn parse_recipe(text: &str) -> Result<Recipe> {
    let mut scalars: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut deps = BTreeMap::new();
    let mut build_vars = BTreeMap::new();
    let mut section = Section::Top;

    for entry in parse_lines(text)? {
        let (key, value, line, column) = match entry {
            Line::Section { name, line } => {
                section = match name.as_str() {
                    "deps" => Section::Deps,
                    "build" => Section::Build,
                    _ => return Err(Error::UnknownKey { key: format!("[{name}]"), line }),
                };
                continue;
            }
            Line::Entry { key, value, line, column } => (key, value, line, column),
        };
        match section {
            Section::Top => {
                if let Some(var) = key.strip_prefix("build_").filter(|v| !v.is_empty()) {
                    let Value::List(items) = value else {
                        return Err(syntax(line, column, format!("{key} must be a list")));
                    };
                    if build_vars.insert(var.to_string(), list_items(items, line, column)?).is_some() {
                        return Err(Error::DuplicateKey { key, line });
                    }
                    continue;
                }
                let slot = match key.as_str() {
                    "name" => "name",
                    "version" => "version",
                    "treetop" => "treetop",
                    "helper" => "helper",
                    "install_command" => "install_command",
                    _ => return Err(Error::UnknownKey { key, line }),
                };
                let Value::Str(s) = value else {
                    return Err(syntax(line, column, format!("{key} must be a quoted string")));
                };
                if scalars.insert(slot, s).is_some() {
                    return Err(Error::DuplicateKey { key, line });
                }
            }
            Section::Deps => {
                let dep = match value {
                    Value::TreetopRef => DepRef::Treetop,
                    Value::Str(s) => DepRef::Pinned(parse_hash_name(&s)?),
                    Value::List(_) => {
                        return Err(syntax(line, column, "dependency must be a hash-name or @treetop"))
                    }
                };
                if deps.insert(key.clone(), dep).is_some() {
                    return Err(Error::DuplicateKey { key, line });
                }
            }
            Section::Build => {
                let Value::List(items) = value else {
                    return Err(syntax(line, column, format!("build variable {key} must be a list")));
                };
                if build_vars.insert(key.clone(), list_items(items, line, column)?).is_some() {
                    return Err(Error::DuplicateKey { key, line });
                }
            }
        }
    }

    let mut take = |k: &'static str| scalars.remove(k).filter(|v| !v.is_empty());
    let name = take("name").ok_or(Error::MissingKey("name"))?;
    let version = take("version").ok_or(Error::MissingKey("version"))?;
    let install_command = take("install_command").ok_or(Error::MissingKey("install_command"))?;
    let helper_path = take("helper").unwrap_or_else(|| DEFAULT_HELPER.to_string());
    let treetop_ref = take("treetop");

    let label = format!("{name}-{version}");
    if !is_valid_label(&label) {
        return Err(Error::MalformedHashName {
            text: label,
            reason: "name-version is not a valid label",
        });
    }

    Ok(Recipe {
        name,
        version,
        treetop_ref,
        helper_path,
        deps,
        build_vars,
        install_command,
        source: text.to_string(),
    })
}

pub fn parse_treetop(text: &str) -> Result<Treetop> {
    let mut pins = BTreeMap::new();
    let mut export_list: Option<Vec<String>> = None;
    for entry in parse_lines(text)? {
        match entry {
            Line::Section { name, line } => {
                return Err(Error::UnknownKey { key: format!("[{name}]"), line });
            }
            Line::Entry { key, value, line, column } if key == "export" => {
                let Value::List(items) = value else {
                    return Err(syntax(line, column, "export must be a list of symbols"));
                };
                if export_list.is_some() {
                    return Err(Error::DuplicateKey { key, line });
                }
                let syms = items
                    .into_iter()
                    .map(|i| match i {
                        ListItem::Symbol(s) => Ok(s),
                        ListItem::Quoted(q) => Err(syntax(line, column, format!("export entry '{q}' must be a symbol"))),
                    })
                    .collect::<Result<_>>()?;
                export_list = Some(syms);
            }
            Line::Entry { key, value, line, column } => {
                let Value::Str(s) = value else {
                    return Err(syntax(line, column, format!("pin {key} must be a quoted hash-name")));
                };
                let h = parse_hash_name(&s)?;
                if pins.insert(key.clone(), h).is_some() {
                    return Err(Error::DuplicateKey { key, line });
                }
            }
        }
    }
    let export_list = export_list.unwrap_or_default();
    if let Some(missing) = export_list.iter().find(|s| !pins.contains_key(*s)) {
        return Err(Error::ExportOfUnpinnedSymbol(missing.clone()));
    }
    Ok(Treetop {
        name: String::new(),
        pins,
        export_list,
    })
}

/// Parses a file of `KEY = "value"` lines (the config file format).
pub(crate) fn parse_scalar_file(text: &str) -> Result<Vec<(String, String, usize)>> {
    parse_lines(text)?
        .into_iter()
        .map(|l| match l {
            Line::Entry { key, value: Value::Str(v), line, .. } => Ok((key, v, line)),
            Line::Entry { key, line, column, .. } => Err(syntax(line, column, format!("{key} must be a quoted string"))),
            Line::Section { name, line } => Err(Error::UnknownKey { key: format!("[{name}]"), line }),
        })
        .collect()
}

pub fn load_treetop(path: &Path) -> Result<Treetop> {
    let text = fs::read_to_string(path).at(path)?;
    let mut t = parse_treetop(&text)?;
    t.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(t)
}

/// Finds a treetop by reference: first as a path relative to the recipe
/// directory, then as `<reference>.treetop` there or in `treetop_dir`.
pub fn find_treetop(reference: &str, recipe_dir: &Path, treetop_dir: Option<&Path>) -> Result<PathBuf> {
    let file_name = format!("{reference}.treetop");
    let candidates = [
        Some(recipe_dir.join(reference)),
        Some(recipe_dir.join(&file_name)),
        treetop_dir.map(|d| d.join(&file_name)),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::TreetopNotFound(reference.to_string()))
}

/// Resolves every symbol and literal the recipe uses to a package path,
/// searching `roots` in order, and computes the recipe's own hash-name.
pub fn resolve_deps(
    recipe: &Recipe,
    treetop: Option<&Treetop>,
    roots: &[PathBuf],
    helper_bytes: &[u8],
    system: &str,
) -> Result<ResolvedRecipe> {
    if roots.is_empty() {
        return Err(Error::Config("store path is empty".into()));
    }

    let via_treetop = |sym: &str| -> Result<HashName> {
        let t = treetop.ok_or_else(|| Error::TreetopRequired(sym.to_string()))?;
        t.pins
            .get(sym)
            .cloned()
            .ok_or_else(|| Error::UnpinnedSymbol(sym.to_string()))
    };

    let mut wanted: BTreeMap<String, HashName> = BTreeMap::new();
    for (sym, dep) in &recipe.deps {
        let h = match dep {
            DepRef::Pinned(h) => h.clone(),
            DepRef::Treetop => via_treetop(sym)?,
        };
        wanted.insert(sym.clone(), h);
    }
    let mut literals = Vec::new();
    for item in recipe.build_vars.values().flatten() {
        match item {
            BuildItem::Symbol(sym) if !wanted.contains_key(sym) => {
                let h = treetop
                    .and_then(|t| t.pins.get(sym))
                    .cloned()
                    .ok_or_else(|| Error::UnpinnedSymbol(sym.clone()))?;
                wanted.insert(sym.clone(), h);
            }
            BuildItem::Symbol(_) => {}
            BuildItem::Literal(h) => literals.push(h.clone()),
        }
    }

    let mut resolved_deps = BTreeMap::new();
    for (sym, hashname) in wanted {
        let path = store::locate_in(&hashname, roots)?;
        resolved_deps.insert(sym, ResolvedDep { hashname, path });
    }
    let mut literal_deps = BTreeMap::new();
    for h in literals {
        let path = store::locate_in(&h, roots)?;
        literal_deps.insert(h, path);
    }

    let mut rr = ResolvedRecipe {
        recipe: recipe.clone(),
        resolved_deps,
        literal_deps,
        // Placeholder; replaced below once the dependency set is known.
        self_hashname: HashName::new("0".repeat(32), recipe.label())?,
    };
    let inputs = HashInputs::new(
        recipe.source.as_bytes().to_vec(),
        helper_bytes.to_vec(),
        system,
        rr.dep_hashnames(),
    )?;
    rr.self_hashname = HashName::new(compute_package_hash(&inputs), recipe.label())?;
    Ok(rr)
}

/// A recipe loaded from a source directory with its helper and treetop.
#[derive(Clone, Debug)]
pub struct RecipeSource {
    pub dir: PathBuf,
    pub recipe: Recipe,
    pub helper_bytes: Vec<u8>,
    pub treetop: Option<Treetop>,
    treetop_bytes: Vec<u8>,
}

impl RecipeSource {
    pub fn load(dir: &Path, treetop_override: Option<&Path>, treetop_dir: Option<&Path>) -> Result<Self> {
        let recipe_path = dir.join(RECIPE_FILE);
        let text = fs::read_to_string(&recipe_path).at(&recipe_path)?;
        let recipe = parse_recipe(&text)?;
        let helper_path = dir.join(&recipe.helper_path);
        let helper_bytes = fs::read(&helper_path).at(&helper_path)?;
        let treetop_path = match (treetop_override, &recipe.treetop_ref) {
            (Some(p), _) => Some(p.to_path_buf()),
            (None, Some(r)) => Some(find_treetop(r, dir, treetop_dir)?),
            (None, None) => None,
        };
        let (treetop, treetop_bytes) = match treetop_path {
            Some(p) => (Some(load_treetop(&p)?), fs::read(&p).at(&p)?),
            None => (None, Vec::new()),
        };
        Ok(RecipeSource {
            dir: dir.to_path_buf(),
            recipe,
            helper_bytes,
            treetop,
            treetop_bytes,
        })
    }

    pub fn resolve(&self, roots: &[PathBuf], system: &str) -> Result<ResolvedRecipe> {
        resolve_deps(&self.recipe, self.treetop.as_ref(), roots, &self.helper_bytes, system)
    }

    /// Digest over recipe, helper and treetop bytes; keys the env cache.
    pub fn digest(&self) -> String {
        let inputs = HashInputs::new(
            self.recipe.source.as_bytes().to_vec(),
            self.helper_bytes.clone(),
            "envcache",
            [String::from_utf8_lossy(&self.treetop_bytes).into_owned()],
        )
        .expect("static system tag");
        compute_package_hash(&inputs)
    }
}
