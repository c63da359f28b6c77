//! Exercises the C ABI exactly as a foreign caller would: raw pointers,
//! status codes, and the thread-local error message.

use std::ffi::{CStr, CString};
use std::mem::MaybeUninit;
use std::ptr;

use lwau_ffi::*;

const CONFIG_TOML: &str = r#"
seed = 5
precision = "f32"

[net]
arch = "mlp"
hidden = 12

[data]
kind = "blobs"
dim = 12
separation = 4.0
train_classes = 8
val_classes = 4
test_classes = 4
per_class = 10

[train]
ways = 3
shots = 1
queries = 3
inner_steps_train = 2
inner_steps_test = 3
iterations = 12
meta_batch = 2
val_episodes = 10
"#;

fn last_error() -> String {
    let mut buf = vec![0i8; 512];
    unsafe {
        lwau_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn parse_config(text: &str) -> *mut LwauConfig {
    let c = CString::new(text).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { lwau_config_parse(c.as_ptr(), &mut out) };
    assert_eq!(status, LwauStatus::LwauOk, "{}", last_error());
    assert!(!out.is_null());
    out
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(lwau_version()) };
    assert!(!v.to_str().unwrap().is_empty());
}

#[test]
fn config_parse_fingerprint_and_errors() {
    let cfg = parse_config(CONFIG_TOML);
    let mut buf = vec![0i8; 80];
    let status = unsafe { lwau_config_fingerprint(cfg, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, LwauStatus::LwauOk);
    let fp = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert_eq!(fp.len(), 64);
    let expected = lwau::config::RunConfig::from_toml(CONFIG_TOML)
        .unwrap()
        .fingerprint();
    assert_eq!(fp, expected);

    // Undersized buffer.
    let mut tiny = [0i8; 8];
    let status = unsafe { lwau_config_fingerprint(cfg, tiny.as_mut_ptr(), tiny.len()) };
    assert_eq!(status, LwauStatus::LwauBufferTooSmall);

    // Invalid config text names the field.
    let bad = CString::new("seed = 1\n[net]\narch = \"resnet\"\n[data]\nkind = \"blobs\"\ndim = 4").unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { lwau_config_parse(bad.as_ptr(), &mut out) };
    assert_eq!(status, LwauStatus::LwauInvalidArgument);
    assert!(last_error().contains("net.arch"), "{}", last_error());

    // Null pointers are reported, not dereferenced.
    let status = unsafe { lwau_config_parse(ptr::null(), &mut out) };
    assert_eq!(status, LwauStatus::LwauNullPointer);

    unsafe { lwau_config_free(cfg) };
}

#[test]
fn pool_generate_save_load_round_trip() {
    let cfg = parse_config(CONFIG_TOML);
    let split = CString::new("test").unwrap();
    let mut pool = ptr::null_mut();
    let status = unsafe { lwau_pool_generate(cfg, split.as_ptr(), &mut pool) };
    assert_eq!(status, LwauStatus::LwauOk, "{}", last_error());
    assert_eq!(unsafe { lwau_pool_class_count(pool) }, 4);

    let tmp = tempfile::tempdir().unwrap();
    let path = CString::new(tmp.path().join("pool.bin").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { lwau_pool_save(pool, path.as_ptr()) },
        LwauStatus::LwauOk
    );
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { lwau_pool_load(path.as_ptr(), &mut loaded) },
        LwauStatus::LwauOk
    );
    assert_eq!(unsafe { lwau_pool_class_count(loaded) }, 4);

    // Bad split name.
    let bad_split = CString::new("holdout").unwrap();
    let mut nope = ptr::null_mut();
    assert_eq!(
        unsafe { lwau_pool_generate(cfg, bad_split.as_ptr(), &mut nope) },
        LwauStatus::LwauInvalidArgument
    );

    unsafe {
        lwau_pool_free(pool);
        lwau_pool_free(loaded);
        lwau_config_free(cfg);
    }
}

#[test]
fn train_evaluate_and_checkpoint_round_trip() {
    let cfg = parse_config(CONFIG_TOML);
    let mut state = ptr::null_mut();
    let status = unsafe { lwau_train(cfg, ptr::null(), 2, &mut state) };
    assert_eq!(status, LwauStatus::LwauOk, "{}", last_error());
    assert_eq!(unsafe { lwau_state_iteration(state) }, 12);
    assert_eq!(unsafe { lwau_state_layer_count(state) }, 2);

    let mut alpha = [0.0f64; 2];
    assert_eq!(
        unsafe { lwau_state_alpha(state, alpha.as_mut_ptr(), alpha.len()) },
        LwauStatus::LwauOk
    );
    assert!(alpha.iter().all(|a| a.is_finite()));

    let split = CString::new("test").unwrap();
    let mut result = MaybeUninit::<LwauEvalResult>::uninit();
    let status = unsafe {
        lwau_evaluate(state, cfg, split.as_ptr(), 30, 3, 0, 2, result.as_mut_ptr())
    };
    assert_eq!(status, LwauStatus::LwauOk, "{}", last_error());
    let result = unsafe { result.assume_init() };
    assert!((0.0..=1.0).contains(&result.accuracy));
    assert!(result.mean_adapt_seconds >= 0.0);

    // Proportions fill one value per layer and sum to one.
    let mut p = [0.0f64; 2];
    let status = unsafe {
        lwau_update_proportions(state, cfg, split.as_ptr(), 10, 3, p.as_mut_ptr(), p.len())
    };
    assert_eq!(status, LwauStatus::LwauOk, "{}", last_error());
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    // Save, reload, and compare the files byte for byte.
    let tmp = tempfile::tempdir().unwrap();
    let p1 = CString::new(tmp.path().join("a.ckpt").to_str().unwrap()).unwrap();
    let p2 = CString::new(tmp.path().join("b.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { lwau_state_save(state, p1.as_ptr()) }, LwauStatus::LwauOk);
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { lwau_state_load(p1.as_ptr(), &mut loaded) },
        LwauStatus::LwauOk
    );
    assert_eq!(unsafe { lwau_state_save(loaded, p2.as_ptr()) }, LwauStatus::LwauOk);
    let bytes1 = std::fs::read(tmp.path().join("a.ckpt")).unwrap();
    let bytes2 = std::fs::read(tmp.path().join("b.ckpt")).unwrap();
    assert_eq!(bytes1, bytes2);

    // A state evaluated against a different config is refused.
    let other = parse_config(&CONFIG_TOML.replace("seed = 5", "seed = 6"));
    let status = unsafe {
        lwau_evaluate(loaded, other, split.as_ptr(), 5, 1, 0, 1, result_ptr())
    };
    assert_eq!(status, LwauStatus::LwauRuntimeError);
    assert!(last_error().contains("fingerprint"), "{}", last_error());

    unsafe {
        lwau_state_free(state);
        lwau_state_free(loaded);
        lwau_config_free(cfg);
        lwau_config_free(other);
    }
}

fn result_ptr() -> *mut LwauEvalResult {
    Box::into_raw(Box::new(LwauEvalResult::default()))
}

#[test]
fn header_exists_with_the_expected_surface() {
    let header = std::fs::read_to_string(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lwau.h"),
    )
    .expect("cbindgen header generated at build time");
    for symbol in [
        "typedef struct LwauConfig LwauConfig",
        "typedef struct LwauPool LwauPool",
        "typedef struct LwauState LwauState",
        "LwauStatus lwau_train",
        "LwauStatus lwau_evaluate",
        "uintptr_t lwau_last_error",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol:?}");
    }
}
