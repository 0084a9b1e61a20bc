use std::ffi::{CStr, CString};
use std::ptr;

use fedmas_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(fedmas_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn small_config() -> *mut FedmasConfig {
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(fedmas_config_new(&mut cfg), FedmasStatus::Ok);
        for (k, v) in [
            ("rounds", "3"),
            ("local_epochs", "1"),
            ("n_max", "200"),
            ("clients", "3"),
            ("classes", "4"),
            ("--hidden-width", "8"),
        ] {
            assert_eq!(
                fedmas_config_set(cfg, cstr(k).as_ptr(), cstr(v).as_ptr()),
                FedmasStatus::Ok,
                "{k}"
            );
        }
    }
    cfg
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(fedmas_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_round_trips_through_strings() {
    let cfg = small_config();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(
            fedmas_config_get(cfg, cstr("hidden_width").as_ptr(), &mut out),
            FedmasStatus::Ok
        );
        assert_eq!(CStr::from_ptr(out).to_str().unwrap(), "8");
        fedmas_string_free(out);
        assert_eq!(
            fedmas_config_get(cfg, cstr("bogus").as_ptr(), &mut out),
            FedmasStatus::Config
        );
        assert!(last_error().contains("bogus"));
        fedmas_config_free(cfg);
    }
}

#[test]
fn bad_values_map_to_config_status() {
    let cfg = small_config();
    unsafe {
        assert_eq!(
            fedmas_config_set(cfg, cstr("method").as_ptr(), cstr("sgd").as_ptr()),
            FedmasStatus::Config
        );
        assert!(!last_error().is_empty());
        assert_eq!(
            fedmas_config_set(cfg, cstr("lambda_f").as_ptr(), cstr("-1").as_ptr()),
            FedmasStatus::Ok
        );
        assert_eq!(fedmas_config_validate(cfg), FedmasStatus::Config);
        assert!(last_error().contains("lambda_f"), "{}", last_error());
        let mut run = ptr::null_mut();
        assert_eq!(fedmas_run(cfg, 1, &mut run), FedmasStatus::Config);
        assert!(run.is_null());
        fedmas_config_free(cfg);
    }
}

#[test]
fn null_arguments_are_rejected() {
    unsafe {
        assert_eq!(
            fedmas_config_new(ptr::null_mut()),
            FedmasStatus::NullPointer
        );
        assert_eq!(
            fedmas_config_set(ptr::null_mut(), cstr("rounds").as_ptr(), cstr("1").as_ptr()),
            FedmasStatus::NullPointer
        );
        assert_eq!(
            fedmas_run(ptr::null(), 1, ptr::null_mut()),
            FedmasStatus::NullPointer
        );
        fedmas_config_free(ptr::null_mut());
        fedmas_run_free(ptr::null_mut());
        fedmas_string_free(ptr::null_mut());
    }
}

#[test]
fn run_exposes_metrics_params_and_history() {
    let cfg = small_config();
    unsafe {
        let mut run = ptr::null_mut();
        assert_eq!(
            fedmas_run(cfg, 1, &mut run),
            FedmasStatus::Ok,
            "{}",
            last_error()
        );
        let (mut rounds, mut clients, mut nparams) = (0, 0, 0);
        assert_eq!(
            fedmas_run_shape(run, &mut rounds, &mut clients, &mut nparams),
            FedmasStatus::Ok
        );
        assert_eq!((rounds, clients), (3, 3));

        let mut bacc = f64::NAN;
        assert_eq!(
            fedmas_run_metric(run, cstr("balanced_acc").as_ptr(), &mut bacc),
            FedmasStatus::Ok
        );
        assert!((0.0..=1.0).contains(&bacc));
        assert_eq!(
            fedmas_run_metric(run, cstr("f1").as_ptr(), &mut bacc),
            FedmasStatus::InvalidArgument
        );

        let mut needed = 0;
        assert_eq!(
            fedmas_run_params(run, ptr::null_mut(), 0, &mut needed),
            FedmasStatus::BufferTooSmall
        );
        assert_eq!(needed, nparams);
        let mut params = vec![0.0; needed];
        assert_eq!(
            fedmas_run_params(run, params.as_mut_ptr(), params.len(), ptr::null_mut()),
            FedmasStatus::Ok
        );
        assert!(params.iter().all(|v| v.is_finite()) && params.iter().any(|&v| v != 0.0));

        let mut weights = vec![0.0; clients];
        for r in 0..rounds {
            assert_eq!(
                fedmas_run_round_weights(run, r, weights.as_mut_ptr(), clients, ptr::null_mut()),
                FedmasStatus::Ok
            );
            assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut rf = vec![0.0; clients];
        assert_eq!(
            fedmas_run_round_rescue_factors(run, 0, rf.as_mut_ptr(), clients, ptr::null_mut()),
            FedmasStatus::Ok
        );
        assert!(rf.iter().all(|&v| v >= 0.0));
        assert_eq!(
            fedmas_run_round_weights(run, rounds, weights.as_mut_ptr(), clients, ptr::null_mut()),
            FedmasStatus::InvalidArgument
        );

        let mut csv = ptr::null_mut();
        assert_eq!(fedmas_run_rounds_csv(run, &mut csv), FedmasStatus::Ok);
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        fedmas_string_free(csv);
        assert!(text.starts_with("round,lr,balanced_acc"));
        assert_eq!(text.lines().count(), 1 + rounds);

        let dir = tempfile::tempdir().unwrap();
        let dir_c = cstr(dir.path().to_str().unwrap());
        assert_eq!(
            fedmas_run_write_artifacts(run, dir_c.as_ptr()),
            FedmasStatus::Ok
        );
        assert_eq!(
            std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap(),
            text
        );

        fedmas_run_free(run);
        fedmas_config_free(cfg);
    }
}

#[test]
fn mas_aggregate_weights_rows_by_rescue_factor() {
    let params = [1.0, 2.0, 3.0, 4.0];
    let rfs = [1.0, 3.0];
    let mut out = [0.0; 2];
    unsafe {
        assert_eq!(
            fedmas_mas_aggregate(params.as_ptr(), 2, 2, rfs.as_ptr(), out.as_mut_ptr()),
            FedmasStatus::Ok
        );
        assert!((out[0] - 2.5).abs() < 1e-15 && (out[1] - 3.5).abs() < 1e-15);
        assert_eq!(
            fedmas_mas_aggregate(params.as_ptr(), 2, 2, [0.0, 0.0].as_ptr(), out.as_mut_ptr()),
            FedmasStatus::InvalidArgument
        );
        assert_eq!(
            fedmas_mas_aggregate(params.as_ptr(), 2, 2, ptr::null(), out.as_mut_ptr()),
            FedmasStatus::NullPointer
        );
    }
}

#[test]
fn rescue_factor_skips_nan_classes() {
    let w = [1.0, f64::NAN, 2.0];
    let w_hat = [3.0, 5.0, 4.0];
    let mut rf = 0.0;
    unsafe {
        assert_eq!(
            fedmas_rescue_factor(w.as_ptr(), w_hat.as_ptr(), 3, &mut rf),
            FedmasStatus::Ok
        );
    }
    assert_eq!(rf, 11.0);
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/fedmas.h")).unwrap();
    for name in [
        "fedmas_config_new",
        "fedmas_run",
        "fedmas_mas_aggregate",
        "fedmas_rescue_factor",
        "fedmas_last_error_message",
        "FEDMAS_STATUS_BUFFER_TOO_SMALL",
        "typedef struct FedmasRun FedmasRun",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(root.join("include"))
        .arg(root.join("tests/smoke.c"))
        .status()
    else {
        eprintln!("no C compiler on PATH; syntax check skipped");
        return;
    };
    assert!(status.success());
}
