mod common;

use std::collections::BTreeMap;
use std::fs;

use common::*;
use garden_core::builder::{self, checkout_clean, garden_install, verify_clean_worktree, BuildRequest};
use garden_core::closure::{read_references, ExportMode};
use garden_core::envsynth::{synth_build_env, HOME_SENTINEL, PATH_SENTINEL};
use garden_core::recipe::RecipeSource;
use garden_core::store::{self, InstallMode};
use garden_core::Error;

#[test]
fn personal_install_then_dependent_personal_build() {
    let g = Garden::new();
    let std = stdenv(&g.public);
    let src = g.path("toy");
    write_toy(&src, "1.0", &std, "");

    let r = garden_install(&BuildRequest::personal(&src), &g.config).unwrap();
    assert!(r.store_path.starts_with(&g.personal));
    assert_eq!(r.meta.mode, InstallMode::Personal);
    assert!(r.clean_report.clean);
    assert_eq!(read_references(&r.store_path).unwrap(), [std.clone()]);
    // Staging paths are rewritten to the final location.
    let path_file = fs::read_to_string(r.store_path.join("garden-env/PATH")).unwrap();
    assert_eq!(path_file.trim(), format!("{}/bin", r.hashname));
    let hello = std::process::Command::new(r.store_path.join("bin/hello")).output().unwrap();
    assert_eq!(String::from_utf8_lossy(&hello.stdout), "hello from toy 1.0\n");

    // A second personal package may depend on the first.
    let user = g.path("user");
    fs::create_dir_all(&user).unwrap();
    fs::write(
        user.join("garden.recipe"),
        toy_recipe("2.0", &std, &format!("toy = \"{}\"", r.hashname)).replace("name = \"toy\"", "name = \"user\""),
    )
    .unwrap();
    write_exec(&user.join("garden-helper"), &toy_helper("user", ""));
    let u = garden_install(&BuildRequest::personal(&user), &g.config).unwrap();
    assert!(read_references(&u.store_path).unwrap().contains(&r.hashname));
}

#[test]
fn public_install_short_circuits_and_records_revision() {
    let g = Garden::new();
    let std = stdenv(&g.public);
    let src = g.path("toy");
    write_toy(&src, "1.0", &std, "echo ran >> \"$TMP/../helper-runs\" || true");
    git_init_commit(&src);
    let head = String::from_utf8(git(&src, &["rev-parse", "HEAD"]).stdout).unwrap();

    let first = garden_install(&BuildRequest::public(&src, "git:HEAD"), &g.config).unwrap();
    assert!(!first.reused);
    assert!(first.store_path.starts_with(&g.public));
    assert_eq!(first.meta.git_revision.as_deref(), Some(head.trim()));
    let shown = store::show(&first.hashname, &g.config).unwrap();
    assert_eq!(shown.meta.git_revision.as_deref(), Some(head.trim()));

    let before = tree_digest(&first.store_path);
    let second = garden_install(&BuildRequest::public(&src, "git:HEAD"), &g.config).unwrap();
    assert!(second.reused);
    assert_eq!(second.store_path, first.store_path);
    assert_eq!(tree_digest(&first.store_path), before);
}

#[test]
fn repeatable_public_builds() {
    let g1 = Garden::new();
    let g2 = Garden::new();
    let std1 = stdenv(&g1.public);
    let std2 = stdenv(&g2.public);
    assert_eq!(std1, std2);
    let src = g1.path("toy");
    write_toy(&src, "1.0", &std1, "");
    git_init_commit(&src);
    let a = garden_install(&BuildRequest::public(&src, "git:HEAD"), &g1.config).unwrap();
    let b = garden_install(&BuildRequest::public(&src, "git:HEAD"), &g2.config).unwrap();
    assert_eq!(a.hashname, b.hashname);
    let strip = |p: &std::path::Path, root: &std::path::Path| {
        let mut files = BTreeMap::new();
        for e in walkdir::WalkDir::new(p) {
            let e = e.unwrap();
            let rel = e.path().strip_prefix(p).unwrap().to_path_buf();
            if e.file_type().is_file() && !rel.ends_with("META") {
                let text = fs::read_to_string(e.path()).unwrap();
                files.insert(rel, text.replace(&*root.to_string_lossy(), "<root>"));
            }
        }
        files
    };
    assert_eq!(strip(&a.store_path, &g1.public), strip(&b.store_path, &g2.public));
}

#[test]
fn hygiene_and_revspecs() {
    let g = Garden::new();
    let plain = g.path("plain");
    fs::create_dir_all(&plain).unwrap();
    assert!(matches!(verify_clean_worktree(&plain), Err(Error::NotARepository(_))));

    let std = stdenv(&g.public);
    let src = g.path("toy");
    write_toy(&src, "1.0", &std, "");
    git_init_commit(&src);
    verify_clean_worktree(&src).unwrap();
    git(&src, &["tag", "v1"]);

    fs::write(src.join("garden-helper"), toy_helper("1.1", "")).unwrap();
    match verify_clean_worktree(&src) {
        Err(Error::DirtyWorktree(files)) => assert_eq!(files, ["garden-helper"]),
        other => panic!("unexpected {other:?}"),
    }
    fs::write(src.join("notes.txt"), "untracked").unwrap();
    match garden_install(&BuildRequest::public(&src, "git:HEAD"), &g.config) {
        Err(e @ Error::DirtyWorktree(_)) => {
            assert!(e.to_string().contains("notes.txt"));
            assert_eq!(e.exit_code(), 2);
        }
        other => panic!("unexpected {other:?}"),
    }
    commit_all(&src, "v1.1");

    let tagged = checkout_clean(&src, "git:v1").unwrap();
    let helper = fs::read_to_string(tagged.path.join("garden-helper")).unwrap();
    assert!(helper.contains("hello from toy 1.0"));
    assert!(!tagged.path.join(".git").exists());
    assert_eq!(tagged.revision.len(), 40);
    assert!(matches!(checkout_clean(&src, "git:nosuchref"), Err(Error::UnknownRevspec(_))));
}

#[test]
fn public_build_cannot_see_personal_packages() {
    let g = Garden::new();
    let std = stdenv(&g.public);
    let lib = fixture_name("personal lib", "mylib-0.1");
    install_fixture(&g.personal, &lib, &[("include/my.h", "", 0o644)], &[]);

    let src = g.path("app");
    fs::create_dir_all(&src).unwrap();
    fs::write(
        src.join("garden.recipe"),
        toy_recipe("1.0", &std, &format!("mylib = \"{lib}\"")).replace("name = \"toy\"", "name = \"app\""),
    )
    .unwrap();
    write_exec(&src.join("garden-helper"), &toy_helper("app", ""));
    git_init_commit(&src);

    match garden_install(&BuildRequest::public(&src, "git:HEAD"), &g.config) {
        Err(Error::PackageNotFound { hashname, .. }) => assert_eq!(hashname, lib.to_string()),
        other => panic!("unexpected {other:?}"),
    }
    // The same tree builds fine for personal use.
    garden_install(&BuildRequest::personal(&src), &g.config).unwrap();
}

#[test]
fn failing_and_lazy_helpers_leave_no_entry() {
    let g = Garden::new();
    let std = stdenv(&g.public);
    let src = g.path("toy");
    write_toy(&src, "1.0", &std, "");
    write_exec(&src.join("garden-helper"), "#!/bin/sh\necho boom\nexit 3\n");
    match garden_install(&BuildRequest::personal(&src), &g.config) {
        Err(Error::HelperFailed { log, .. }) => assert!(log.contains("boom")),
        other => panic!("unexpected {other:?}"),
    }
    write_exec(&src.join("garden-helper"), "#!/bin/sh\nexit 0\n");
    assert!(matches!(
        garden_install(&BuildRequest::personal(&src), &g.config),
        Err(Error::OutUnpopulated { .. })
    ));
    assert!(store::list_packages(&g.personal).unwrap().is_empty());
}

#[test]
fn isolation_gate_blocks_out_of_garden_rpath() {
    let g = Garden::new();
    let std = stdenv(&g.public);
    let src = g.path("toy");
    write_toy(
        &src,
        "1.0",
        &std,
        "mkdir -p \"$out/lib\"\nprintf 'GARDEN-DYNINFO 1\\nNEEDED libc.so.6\\nRPATH /usr/lib/x86_64-linux-gnu:/lib\\n' > \"$out/lib/toy.dyninfo\"",
    );
    git_init_commit(&src);
    let err = garden_install(&BuildRequest::public(&src, "git:HEAD"), &g.config).unwrap_err();
    match &err {
        Error::IsolationViolation(report) => {
            assert!(!report.clean);
            let text = report.to_string();
            assert!(text.contains("libc.so.6 => "), "{text}");
            assert!(text.contains("[violation]"), "{text}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 1);
    assert!(store::list_packages(&g.public).unwrap().iter().all(|(h, _)| *h == std));
    let staging_left: Vec<_> = fs::read_dir(g.public.join(".staging")).unwrap().collect();
    assert!(staging_left.is_empty());
}

#[test]
fn helper_sees_exactly_the_synthesized_environment() {
    let g = Garden::new();
    let std = stdenv(&g.public);
    let src = g.path("dump");
    fs::create_dir_all(&src).unwrap();
    fs::write(
        src.join("garden.recipe"),
        format!("name = \"dump\"\nversion = \"1\"\ninstall_command = \"./garden-helper\"\n[deps]\nstdenv = \"{std}\"\n[build]\nCPPFLAGS = [ stdenv ]\n"),
    )
    .unwrap();
    write_exec(
        &src.join("garden-helper"),
        "#!/usr/bin/perl\nmkdir $ENV{out} or die;\nopen(my $f, '>', \"$ENV{out}/env.txt\") or die;\nprint $f \"$_=$ENV{$_}\\n\" for sort keys %ENV;\n",
    );
    let source = RecipeSource::load(&src, None, None).unwrap();
    let rr = source.resolve(&g.config.storepath, &g.config.system).unwrap();
    let scratch = tempfile::tempdir().unwrap();
    let out = scratch.path().join("out");
    let tmp = scratch.path().join("tmp");
    let env = synth_build_env(&rr, &out, &tmp, &g.config).unwrap();
    builder::run_helper(&env, &src, &out).unwrap();

    let dumped: BTreeMap<String, String> = fs::read_to_string(out.join("env.txt"))
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect();
    let expected: BTreeMap<String, String> = env.to_pairs().into_iter().collect();
    assert_eq!(dumped, expected);
    assert_eq!(dumped["HOME"], HOME_SENTINEL);
    assert_eq!(dumped["PATH"], PATH_SENTINEL);
    assert!(dumped["CPPFLAGS"].starts_with("-I"));
}

#[test]
fn export_after_public_install() {
    let mut g = Garden::new();
    let std = stdenv(&g.public);
    let central = g.path("central");
    g.config.central_dest = Some(central.clone());
    let src = g.path("toy");
    write_toy(&src, "1.0", &std, "");
    git_init_commit(&src);

    let mut req = BuildRequest::public(&src, "git:HEAD");
    req.export_after = Some(ExportMode::Push);
    let r = garden_install(&req, &g.config).unwrap();
    assert_eq!(r.export.unwrap().sent, [r.hashname.clone()]);

    req.export_after = Some(ExportMode::Full);
    let again = garden_install(&req, &g.config).unwrap();
    let report = again.export.unwrap();
    assert_eq!(report.sent, [std]);
    assert_eq!(report.skipped, [r.hashname]);
}
