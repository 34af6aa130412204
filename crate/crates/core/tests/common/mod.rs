#![allow(dead_code)]

use std::fs;
use std::os::unix::fs::{symlink, PermissionsExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use garden_core::closure::write_references;
use garden_core::hashname::{compute_package_hash, HashInputs};
use garden_core::store::{self, GardenConfig, InstallMode, PackageMeta};
use garden_core::HashName;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

/// Host tools linked into the fixture stdenv package.
const TOOLS: &[&str] = &["sh", "mkdir", "cp", "cat", "chmod", "ln", "rm", "env", "true"];

pub struct Garden {
    pub dir: TempDir,
    pub public: PathBuf,
    pub personal: PathBuf,
    pub config: GardenConfig,
}

impl Garden {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let public = dir.path().join("public");
        let personal = dir.path().join("personal");
        fs::create_dir_all(&public).unwrap();
        fs::create_dir_all(&personal).unwrap();
        let config = GardenConfig::new(&public, &personal);
        Garden {
            dir,
            public,
            personal,
            config,
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// A `garden-core` invocation with this garden's roots and nothing else
    /// from the caller's configuration.
    pub fn cli(&self, bin: &str) -> Command {
        let mut cmd = Command::new(bin);
        for (k, _) in std::env::vars() {
            if k.starts_with("GARDEN_") {
                cmd.env_remove(k);
            }
        }
        cmd.env("GARDEN_ROOT", &self.public)
            .env("GARDEN_PERSONAL_ROOT", &self.personal)
            .env("GARDEN_CONFIG", self.dir.path().join("no-config"))
            .env("HOME", self.dir.path());
        if let Some(dest) = &self.config.central_dest {
            cmd.env("GARDEN_CENTRAL_DEST", dest);
        }
        if let Some(central) = &self.config.central {
            cmd.env("GARDEN_CENTRAL", central);
        }
        cmd
    }
}

pub fn fixture_name(seed: &str, label: &str) -> HashName {
    let inputs = HashInputs::new(seed.as_bytes().to_vec(), Vec::new(), "x86_64-linux", Vec::<String>::new()).unwrap();
    HashName::new(compute_package_hash(&inputs), label).unwrap()
}

/// Installs a hand-made package: `files` are (relative path, contents, mode).
pub fn install_fixture(root: &Path, h: &HashName, files: &[(&str, &str, u32)], refs: &[&HashName]) -> PathBuf {
    let staging = store::staging_dir(root).unwrap().keep();
    let tree = staging.join(h.to_string());
    fs::create_dir_all(&tree).unwrap();
    for (rel, body, mode) in files {
        let p = tree.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, body).unwrap();
        fs::set_permissions(&p, fs::Permissions::from_mode(*mode)).unwrap();
    }
    write_references(&tree, refs.iter().copied()).unwrap();
    let path = store::install_atomic(&tree, h, root, &PackageMeta::new(h.clone(), InstallMode::Public)).unwrap();
    let _ = fs::remove_dir_all(&staging);
    path
}

/// A stdenv package whose `bin/` links to host tools, plus `lib/libfoo.so`
/// and an env-dumping fake `make`.
pub fn stdenv(root: &Path) -> HashName {
    let h = fixture_name("stdenv fixture", "stdenv-linux");
    let path = install_fixture(
        root,
        &h,
        &[
            ("lib/libfoo.so", "not really a library\n", 0o644),
            ("include/foo.h", "int foo(void);\n", 0o644),
            (
                "bin/make",
                "#!/usr/bin/perl\nopen(my $f, '>', 'make-env.txt') or die;\nprint $f \"$_=$ENV{$_}\\n\" for sort keys %ENV;\nprint $f \"ARGS=@ARGV\\n\";\n",
                0o755,
            ),
        ],
        &[],
    );
    for tool in TOOLS {
        let host = which(tool);
        symlink(host, path.join("bin").join(tool)).unwrap();
    }
    h
}

pub fn which(tool: &str) -> PathBuf {
    ["/bin", "/usr/bin"]
        .iter()
        .map(|d| Path::new(d).join(tool))
        .find(|p| p.exists())
        .unwrap_or_else(|| panic!("host tool {tool} not found"))
}

pub fn write_exec(path: &Path, body: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, body).unwrap();
    fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
}

/// Helper body for the toy package: a `hello` script run by the stdenv
/// shell, and a PATH composition file naming the package by hash-name.
pub fn toy_helper(version: &str, extra: &str) -> String {
    format!(
        r#"#!/bin/sh
set -e
mkdir -p "$out/bin" "$out/garden-env"
printf '#!%s/bin/sh\necho "hello from toy {version}"\n' "$stdenv" > "$out/bin/hello"
chmod 755 "$out/bin/hello"
echo "${{out##*/}}/bin" > "$out/garden-env/PATH"
{extra}
"#
    )
}

pub fn toy_recipe(version: &str, stdenv: &HashName, extra_deps: &str) -> String {
    format!(
        "name = \"toy\"\nversion = \"{version}\"\ninstall_command = \"./garden-helper --install\"\n\n[deps]\nstdenv = \"{stdenv}\"\n{extra_deps}\n[build]\nPATH = [ stdenv ]\n"
    )
}

/// Writes the toy recipe and helper into `dir`.
pub fn write_toy(dir: &Path, version: &str, stdenv: &HashName, extra_helper: &str) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("garden.recipe"), toy_recipe(version, stdenv, "")).unwrap();
    write_exec(&dir.join("garden-helper"), &toy_helper(version, extra_helper));
}

pub fn git(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["-c", "user.name=Garden Test", "-c", "user.email=test@example.invalid", "-c", "init.defaultBranch=main"])
        .args(args)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .output()
        .unwrap();
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn git_init_commit(dir: &Path) {
    git(dir, &["init", "--quiet"]);
    commit_all(dir, "initial");
}

pub fn commit_all(dir: &Path, message: &str) {
    git(dir, &["add", "-A"]);
    git(dir, &["commit", "--quiet", "-m", message]);
}

/// SHA-256 over every path, symlink target and file body under `dir`.
pub fn tree_digest(dir: &Path) -> String {
    let mut hasher = Sha256::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(dir).unwrap();
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        let meta = entry.path().symlink_metadata().unwrap();
        hasher.update(meta.permissions().mode().to_le_bytes());
        if entry.file_type().is_symlink() {
            hasher.update(fs::read_link(entry.path()).unwrap().to_string_lossy().as_bytes());
        } else if entry.file_type().is_file() {
            hasher.update(fs::read(entry.path()).unwrap());
        }
        hasher.update([0]);
    }
    format!("{:x}", hasher.finalize())
}
