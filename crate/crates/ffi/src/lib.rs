//! C ABI over `garden_core`.
//!
//! Every fallible call returns a [`GardenStatus`]; on failure the message is
//! available from [`garden_last_error`] on the same thread. Strings handed
//! out by this library are owned by the caller and must be released with
//! [`garden_string_free`]. Configs and environments are opaque handles with
//! their own free functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use garden_core::closure::compute_closure;
use garden_core::envsynth::{add_package, Environment};
use garden_core::hashname::{compute_package_hash, parse_hash_name, HashInputs};
use garden_core::isolation::{check_tree, CheckContext};
use garden_core::store::{locate, GardenConfig as CoreConfig};
use garden_core::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GardenStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    MalformedHashName = 3,
    InvalidInput = 4,
    PackageNotFound = 5,
    Config = 6,
    CorruptStore = 7,
    Io = 8,
    Other = 9,
    Panic = 10,
}

/// Opaque store configuration.
pub struct GardenConfig(CoreConfig);

/// Opaque runtime environment (PATH-style lists plus scalars).
pub struct GardenEnv(Environment);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> GardenStatus {
    match err {
        Error::MalformedHashName { .. } | Error::WrongLength(_) => GardenStatus::MalformedHashName,
        Error::InvalidHashInputs(_) | Error::InvalidRequest(_) => GardenStatus::InvalidInput,
        Error::PackageNotFound { .. } => GardenStatus::PackageNotFound,
        Error::Config(_) => GardenStatus::Config,
        Error::CorruptReferences { .. } | Error::CorruptExisting(_) => GardenStatus::CorruptStore,
        Error::Io { .. } | Error::DestUnwritable { .. } => GardenStatus::Io,
        _ => GardenStatus::Other,
    }
}

struct Failure(GardenStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GardenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            GardenStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("panic inside garden library");
            GardenStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(GardenStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GardenStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, name: &str) -> Result<&'a [u8], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(Failure(GardenStatus::NullArgument, format!("{name} is NULL"))),
        (false, _) => Ok(std::slice::from_raw_parts(p, len)),
    }
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(GardenStatus::NullArgument, format!("{name} is NULL")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(GardenStatus::NullArgument, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

fn to_c(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " ")).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn garden_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn garden_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads the configuration from the config file and `GARDEN_*` variables.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn garden_config_from_env(out: *mut *mut GardenConfig) -> GardenStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = CoreConfig::from_env()?;
        *out = Box::into_raw(Box::new(GardenConfig(cfg)));
        Ok(())
    })
}

/// Builds a configuration with explicit public and personal roots.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn garden_config_new(
    public_root: *const c_char,
    personal_root: *const c_char,
    out: *mut *mut GardenConfig,
) -> GardenStatus {
    guard(|| {
        out_arg(out, "out")?;
        let public = str_arg(public_root, "public_root")?;
        let personal = str_arg(personal_root, "personal_root")?;
        *out = Box::into_raw(Box::new(GardenConfig(CoreConfig::new(public, personal))));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from a config constructor and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn garden_config_free(cfg: *mut GardenConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Computes the 32-character digest for a package's hash inputs.
/// `deps` holds `ndeps` full hash-names.
///
/// # Safety
/// Buffers must be valid for their stated lengths; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn garden_hash_compute(
    recipe: *const u8,
    recipe_len: usize,
    helper: *const u8,
    helper_len: usize,
    system: *const c_char,
    deps: *const *const c_char,
    ndeps: usize,
    out_digest: *mut *mut c_char,
) -> GardenStatus {
    guard(|| {
        out_arg(out_digest, "out_digest")?;
        let recipe = bytes_arg(recipe, recipe_len, "recipe")?;
        let helper = bytes_arg(helper, helper_len, "helper")?;
        let system = str_arg(system, "system")?;
        let mut dep_names = Vec::with_capacity(ndeps);
        if ndeps > 0 {
            if deps.is_null() {
                return Err(Failure(GardenStatus::NullArgument, "deps is NULL".into()));
            }
            for i in 0..ndeps {
                let dep = str_arg(*deps.add(i), "deps entry")?;
                dep_names.push(parse_hash_name(dep)?.to_string());
            }
        }
        let inputs = HashInputs::new(recipe.to_vec(), helper.to_vec(), system, dep_names)?;
        *out_digest = to_c(compute_package_hash(&inputs));
        Ok(())
    })
}

/// Checks that `text` is a well-formed hash-name.
///
/// # Safety
/// `text` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn garden_hash_name_validate(text: *const c_char) -> GardenStatus {
    guard(|| {
        parse_hash_name(str_arg(text, "text")?)?;
        Ok(())
    })
}

/// Finds the store directory of a package along the configured storepath.
///
/// # Safety
/// `cfg` must be a live handle; `hashname` NUL-terminated; `out_path` writable.
#[no_mangle]
pub unsafe extern "C" fn garden_locate(
    cfg: *const GardenConfig,
    hashname: *const c_char,
    out_path: *mut *mut c_char,
) -> GardenStatus {
    guard(|| {
        out_arg(out_path, "out_path")?;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let h = parse_hash_name(str_arg(hashname, "hashname")?)?;
        *out_path = to_c(locate(&h, cfg)?.to_string_lossy().into_owned());
        Ok(())
    })
}

/// Snapshots the calling process's runtime variables into a new environment.
///
/// # Safety
/// `cfg` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn garden_env_from_process(cfg: *const GardenConfig, out: *mut *mut GardenEnv) -> GardenStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let env = Environment::from_snapshot(std::env::vars(), &cfg.runtime_vars);
        *out = Box::into_raw(Box::new(GardenEnv(env)));
        Ok(())
    })
}

/// Creates an environment whose PATH-style variable `var` holds the
/// colon-separated `value`. Other variables start empty.
///
/// # Safety
/// `cfg` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn garden_env_with(
    cfg: *const GardenConfig,
    var: *const c_char,
    value: *const c_char,
    out: *mut *mut GardenEnv,
) -> GardenStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let var = str_arg(var, "var")?;
        let value = str_arg(value, "value")?;
        let env = Environment::from_snapshot([(var, value)], &cfg.runtime_vars);
        *out = Box::into_raw(Box::new(GardenEnv(env)));
        Ok(())
    })
}

/// Applies a package's composition files to `env`. On failure `env` is
/// left unchanged.
///
/// # Safety
/// Handles must be live; `hashname` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn garden_env_add(
    env: *mut GardenEnv,
    cfg: *const GardenConfig,
    hashname: *const c_char,
) -> GardenStatus {
    guard(|| {
        let env = env
            .as_mut()
            .ok_or_else(|| Failure(GardenStatus::NullArgument, "env is NULL".into()))?;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let h = parse_hash_name(str_arg(hashname, "hashname")?)?;
        env.0 = add_package(env.0.clone(), &h, cfg)?;
        Ok(())
    })
}

/// Renders one variable of `env`. Writes NULL when the variable is unset.
///
/// # Safety
/// `env` must be live; `var` NUL-terminated; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn garden_env_get(
    env: *const GardenEnv,
    var: *const c_char,
    out_value: *mut *mut c_char,
) -> GardenStatus {
    guard(|| {
        out_arg(out_value, "out_value")?;
        let env = &ref_arg(env, "env")?.0;
        *out_value = env.render_var(str_arg(var, "var")?).map_or(ptr::null_mut(), to_c);
        Ok(())
    })
}

/// Shell commands that turn `before` into `env`.
///
/// # Safety
/// Handles must be live; `out_script` writable.
#[no_mangle]
pub unsafe extern "C" fn garden_env_shell_update(
    env: *const GardenEnv,
    before: *const GardenEnv,
    out_script: *mut *mut c_char,
) -> GardenStatus {
    guard(|| {
        out_arg(out_script, "out_script")?;
        let env = &ref_arg(env, "env")?.0;
        let before = &ref_arg(before, "before")?.0;
        *out_script = to_c(env.shell_update(before));
        Ok(())
    })
}

/// # Safety
/// `env` must come from an environment constructor and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn garden_env_free(env: *mut GardenEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Transitive closure of a package, one hash-name per line, root first.
///
/// # Safety
/// `cfg` must be live; `hashname` NUL-terminated; `out_members` writable.
#[no_mangle]
pub unsafe extern "C" fn garden_closure(
    cfg: *const GardenConfig,
    hashname: *const c_char,
    out_members: *mut *mut c_char,
) -> GardenStatus {
    guard(|| {
        out_arg(out_members, "out_members")?;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let h = parse_hash_name(str_arg(hashname, "hashname")?)?;
        let graph = compute_closure(&h, cfg)?;
        let text: String = graph.members.iter().map(|m| format!("{m}\n")).collect();
        *out_members = to_c(text);
        Ok(())
    })
}

/// Runs the isolation check over a file or directory. `out_clean` receives
/// 1 when every dependency resolves inside the garden; `out_report`, if not
/// NULL, receives the human-readable report.
///
/// # Safety
/// `cfg` must be live; `path` NUL-terminated; `out_clean` writable.
#[no_mangle]
pub unsafe extern "C" fn garden_check(
    cfg: *const GardenConfig,
    path: *const c_char,
    out_clean: *mut i32,
    out_report: *mut *mut c_char,
) -> GardenStatus {
    guard(|| {
        out_arg(out_clean, "out_clean")?;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let path: PathBuf = Path::new(str_arg(path, "path")?).to_path_buf();
        let report = check_tree(&path, &CheckContext::new(cfg))?;
        *out_clean = i32::from(report.clean);
        if !out_report.is_null() {
            *out_report = to_c(report.to_string());
        }
        Ok(())
    })
}
