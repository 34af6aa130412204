mod common;

use std::fs;
use std::process::Command;

use common::*;
use garden_core::builder::{garden_install, BuildRequest};
use garden_core::envsynth::{add_package, Environment};

const BIN: &str = env!("CARGO_BIN_EXE_garden-core");
const GMK: &str = env!("CARGO_BIN_EXE_gmk");

fn stdout(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Public toy package built from a fresh repository.
fn public_toy(g: &Garden) -> garden_core::HashName {
    let std = stdenv(&g.public);
    let src = g.path("toy");
    write_toy(&src, "1.0", &std, "");
    git_init_commit(&src);
    garden_install(&BuildRequest::public(&src, "git:HEAD"), &g.config).unwrap().hashname
}

#[test]
fn env_add_output_round_trips_through_sh() {
    let g = Garden::new();
    let toy = public_toy(&g);
    let toy_bin = g.public.join(toy.to_string()).join("bin");
    let path = format!("/a:/b:{}", toy_bin.display());

    let out = g.cli(BIN).args(["env", "--add", &toy.to_string()]).env("PATH", &path).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text, format!("export PATH=\"{}:/a:/b\"\n", toy_bin.display()));

    let before = Environment::from_snapshot([("PATH", path.as_str())], &g.config.runtime_vars);
    let expected = add_package(before, &toy, &g.config).unwrap();
    let script = format!("{text}\nprintf '%s' \"$PATH\"");
    let evaluated = Command::new("/bin/sh").arg("-c").arg(&script).env("PATH", &path).output().unwrap();
    assert_eq!(stdout(&evaluated), expected.render_var("PATH").unwrap());
}

#[test]
fn failed_add_prints_nothing_on_stdout() {
    let g = Garden::new();
    let missing = fixture_name("missing", "icc-4.0");
    let out = g.cli(BIN).args(["add", &missing.to_string()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(stderr(&out).contains(&missing.to_string()));
}

#[test]
fn add_emits_source_line_for_default_sh() {
    let g = Garden::new();
    let icc = fixture_name("icc", "icc-4.0");
    let path = install_fixture(&g.public, &icc, &[("garden-env/default.sh", "ICC_LICENSE=x\n", 0o644)], &[]);
    let out = g.cli(BIN).args(["add", &icc.to_string()]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(
        stdout(&out),
        format!("source \"{}\"\n", path.join("garden-env/default.sh").display())
    );
}

#[test]
fn bootstrap_function_changes_the_calling_shell() {
    let g = Garden::new();
    let toy = public_toy(&g);
    let rc = g.path("etc/gardenrc");

    let out = g.cli(BIN).args(["bootstrap"]).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(rc.is_file(), "default target under HOME");
    let again = g.cli(BIN).args(["bootstrap"]).output().unwrap();
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("already exists"));
    assert!(g.cli(BIN).args(["bootstrap", "--force"]).output().unwrap().status.success());

    let script = format!(". '{}'\ngarden add {toy}\nhello\nprintf '%s' \"$PATH\"", rc.display());
    let run = g.cli("/bin/sh").arg("-c").arg(&script).env("PATH", "/usr/bin:/bin").output().unwrap();
    assert!(run.status.success(), "{}", stderr(&run));
    let text = stdout(&run);
    assert!(text.starts_with("hello from toy 1.0\n"), "{text}");
    assert!(text.ends_with(&format!("{}/bin:/usr/bin:/bin", g.public.join(toy.to_string()).display())));

    let custom = g.path("custom-rc");
    let out = g
        .cli(BIN)
        .args(["bootstrap", "--output", custom.to_str().unwrap(), "--root", "/srv/garden", "--storepath", "/p:/srv/garden"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(custom).unwrap();
    assert!(text.contains("export GARDEN_ROOT=\"/srv/garden\""));
    assert!(text.contains("export GARDEN_STOREPATH=\"/p:/srv/garden\""));
}

#[test]
fn pull_everything_one_closure_and_dedup() {
    let mut g = Garden::new();
    let central = g.path("central");
    let a = fixture_name("a", "a-1");
    let b = fixture_name("b", "b-1");
    let c = fixture_name("c", "c-1");
    install_fixture(&central, &b, &[("bin/b", "b", 0o755)], &[]);
    install_fixture(&central, &a, &[("bin/a", "a", 0o755)], &[&b]);
    install_fixture(&central, &c, &[("bin/c", "c", 0o755)], &[]);

    let out = g.cli(BIN).args(["pull"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("GARDEN_CENTRAL"));
    g.config.central = Some(central.clone());

    let single = g.cli(BIN).args(["--json", "pull", &a.to_string()]).output().unwrap();
    assert!(single.status.success(), "{}", stderr(&single));
    let report: serde_json::Value = serde_json::from_slice(&single.stdout).unwrap();
    assert_eq!(report["sent"].as_array().unwrap().len(), 2);
    assert!(g.public.join(a.to_string()).is_dir() && g.public.join(b.to_string()).is_dir());
    assert!(!g.public.join(c.to_string()).exists());

    let all = g.cli(BIN).args(["--json", "pull"]).output().unwrap();
    let report: serde_json::Value = serde_json::from_slice(&all.stdout).unwrap();
    assert_eq!(report["sent"].as_array().unwrap().len(), 1);
    let again = g.cli(BIN).args(["--json", "pull"]).output().unwrap();
    let report: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(report["sent"].as_array().unwrap().len(), 0);
    assert_eq!(report["skipped"].as_array().unwrap().len(), 3);

    let fresh = Garden::new();
    let treetop = fresh.path("proj.treetop");
    fs::write(&treetop, format!("a = \"{a}\"\nc = \"{c}\"\n")).unwrap();
    let mut cmd = fresh.cli(BIN);
    let out = cmd.env("GARDEN_CENTRAL", &central).args(["pull", treetop.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(garden_core::store::list_packages(&fresh.public).unwrap().len(), 3);
}

#[test]
fn avail_and_show_output() {
    let g = Garden::new();
    let toy = public_toy(&g);
    let out = g.cli(BIN).args(["avail", "toy"]).output().unwrap();
    assert_eq!(stdout(&out), format!("{}\n", g.public.join(toy.to_string()).display()));
    let none = g.cli(BIN).args(["avail", "nosuchpkg"]).output().unwrap();
    assert!(none.status.success() && none.stdout.is_empty());

    let show = g.cli(BIN).args(["show", &toy.to_string()]).output().unwrap();
    let text = stdout(&show);
    assert!(text.contains("mode: public"), "{text}");
    assert!(text.contains("revision: "), "{text}");
    assert!(text.contains(&format!("PATH: {}/bin", g.public.join(toy.to_string()).display())), "{text}");
}

#[test]
fn gmk_runs_make_with_cached_environment() {
    let g = Garden::new();
    let std = stdenv(&g.public);
    let proj = g.path("proj");
    fs::create_dir_all(proj.join("src")).unwrap();
    let recipe = format!(
        "name = \"proj\"\nversion = \"0.1\"\ninstall_command = \"./garden-helper\"\n[deps]\nstdenv = \"{std}\"\n[build]\nPATH = [ stdenv ]\nCPPFLAGS = [ stdenv ]\n"
    );
    fs::write(proj.join("garden.recipe"), &recipe).unwrap();
    write_exec(&proj.join("garden-helper"), "#!/bin/sh\nexit 0\n");

    let missing = g.cli(GMK).current_dir(&proj).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("run `garden configure`"), "{}", stderr(&missing));

    let conf = g.cli(BIN).arg("configure").current_dir(&proj).output().unwrap();
    assert!(conf.status.success(), "{}", stderr(&conf));

    let made = g.cli(GMK).args(["-j2", "all"]).current_dir(proj.join("src")).output().unwrap();
    assert!(made.status.success(), "{}", stderr(&made));
    let dump = fs::read_to_string(proj.join("src/make-env.txt")).unwrap();
    let std_path = g.public.join(std.to_string());
    assert!(dump.contains(&format!("CPPFLAGS=-I{}/include\n", std_path.display())), "{dump}");
    assert!(dump.contains("HOME=/homeless-shelter\n"));
    assert!(dump.contains("ARGS=-j2 all\n"));

    fs::write(proj.join("garden.recipe"), recipe.replace("0.1", "0.2")).unwrap();
    let stale = g.cli(GMK).current_dir(&proj).output().unwrap();
    assert_eq!(stale.status.code(), Some(2));
    assert!(stderr(&stale).contains("out of date"), "{}", stderr(&stale));
}

#[test]
fn exit_code_matrix() {
    let g = Garden::new();
    let toy = public_toy(&g);
    let dirty = g.path("dirty");
    fs::create_dir_all(&dirty).unwrap();
    fs::write(dirty.join("run"), "#!/usr/bin/python3\n").unwrap();

    let cases: Vec<(Vec<String>, i32)> = vec![
        (vec!["avail".into()], 0),
        (vec!["show".into(), toy.to_string()], 0),
        (vec!["check".into(), g.public.join(toy.to_string()).display().to_string()], 0),
        (vec!["check".into(), dirty.display().to_string()], 1),
        (vec!["show".into(), "not-a-hashname".into()], 2),
        (vec!["show".into(), fixture_name("x", "gone-1").to_string()], 2),
        (vec!["export".into(), toy.to_string()], 2),
        (vec!["install".into(), "--source".into(), g.path("toy").display().to_string()], 2),
        (vec!["install".into(), "git:nosuchref".into(), "--source".into(), g.path("toy").display().to_string()], 2),
        (vec!["avail".into(), "--bogus".into()], 2),
        (vec!["frobnicate".into()], 2),
        (vec!["compose-roots".into()], 2),
    ];
    for (args, code) in cases {
        let out = g.cli(BIN).args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(code), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn check_prints_resolution_lines() {
    let g = Garden::new();
    let std = stdenv(&g.public);
    let lib = g.public.join(std.to_string()).join("lib");
    let pkg = g.path("pkg");
    fs::create_dir_all(&pkg).unwrap();
    fs::write(
        pkg.join("tool.dyninfo"),
        format!("GARDEN-DYNINFO 1\nNEEDED libfoo.so\nNEEDED libbar.so\nRPATH {}\n", lib.display()),
    )
    .unwrap();
    let out = g.cli(BIN).args(["check", pkg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains(&format!("  libfoo.so => {}/libfoo.so [clean]", lib.display())), "{text}");
    assert!(text.contains("  libbar.so => NOT-FOUND [violation]"), "{text}");
}

#[test]
fn compose_roots_links_every_package() {
    let g = Garden::new();
    let toy = public_toy(&g);
    let canonical = g.path("canonical");
    let out = g
        .cli(BIN)
        .env("GARDEN_CANONICAL_ROOT", &canonical)
        .args(["--json", "compose-roots"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["created"].as_array().unwrap().len(), 2);
    assert_eq!(
        fs::read_link(canonical.join(toy.to_string())).unwrap(),
        g.public.join(toy.to_string())
    );
}
