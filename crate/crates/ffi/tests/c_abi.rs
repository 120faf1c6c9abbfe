use std::ffi::{CStr, CString};
use std::ptr;

use u1qa_ffi::*;

const MANIFEST: &str = r#"
name = "ffi"

[experiment]
model = "swap_only"
l = 8
p_u = 0.5
p = 0.2
sector = "fixed:1/2"
t_max = 5
realizations = 3
pairs_per_realization = 64
seed = 9

[sweep]
p = [0.0, 0.2]
"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(u1qa_last_error()) }.to_string_lossy().into_owned()
}

fn config(index: usize) -> (*mut U1qaConfig, U1qaStatus) {
    let m = CString::new(MANIFEST).unwrap();
    let obs = CString::new("entropy").unwrap();
    let mut cfg = ptr::null_mut();
    let st = unsafe { u1qa_config_from_toml(m.as_ptr(), obs.as_ptr(), index, &mut cfg) };
    (cfg, st)
}

#[test]
fn manifest_round_trip_through_handles() {
    let m = CString::new(MANIFEST).unwrap();
    let obs = CString::new("entropy").unwrap();
    let mut n = 0usize;
    assert_eq!(unsafe { u1qa_manifest_points(m.as_ptr(), obs.as_ptr(), &mut n) }, U1qaStatus::Ok);
    assert_eq!(n, 2);

    let (cfg, st) = config(1);
    assert_eq!(st, U1qaStatus::Ok, "{}", last_error());
    let mut series = ptr::null_mut();
    assert_eq!(unsafe { u1qa_run(cfg, &mut series) }, U1qaStatus::Ok, "{}", last_error());

    let (mut count, mut len, mut offset) = (0usize, 0usize, -1i64);
    unsafe {
        assert_eq!(u1qa_series_count(series, &mut count), U1qaStatus::Ok);
        assert_eq!(u1qa_series_len(series, 0, &mut len, &mut offset), U1qaStatus::Ok);
    }
    assert_eq!((count, len, offset), (1, 6, 0));

    let mut times = vec![0u64; len];
    let mut mean = vec![0f64; len];
    let mut n_valid = vec![0u64; len];
    let st = unsafe {
        u1qa_series_copy(series, 0, times.as_mut_ptr(), mean.as_mut_ptr(), ptr::null_mut(), n_valid.as_mut_ptr(), len)
    };
    assert_eq!(st, U1qaStatus::Ok);
    assert_eq!(times, [0, 1, 2, 3, 4, 5]);
    // fixed-sector prefactor at t = 0: C(8,4)^2 / |constrained pairs|
    assert!(mean[0] > 0.0 && mean[0].is_finite());
    assert!(n_valid.iter().all(|&v| v <= 3));

    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { u1qa_series_csv(series, 0, &mut csv) }, U1qaStatus::Ok);
    let text = unsafe { CStr::from_ptr(csv) }.to_str().unwrap().to_owned();
    assert!(text.starts_with("# u1qa time series"));
    unsafe {
        u1qa_string_free(csv);
        u1qa_series_free(series);
        u1qa_config_free(cfg);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let (cfg, st) = config(7);
    assert_eq!(st, U1qaStatus::OutOfRange);
    assert!(cfg.is_null());
    assert!(last_error().contains("point 7"));

    let bad = CString::new(MANIFEST.replace("l = 8", "l = 9")).unwrap();
    let obs = CString::new("entropy").unwrap();
    let mut n = 0usize;
    assert_eq!(unsafe { u1qa_manifest_points(bad.as_ptr(), obs.as_ptr(), &mut n) }, U1qaStatus::Config);
    assert!(last_error().contains("L = 9"), "{}", last_error());

    let mut x = 0.0;
    assert_eq!(unsafe { u1qa_ln_binomial(3, 5, &mut x) }, U1qaStatus::Domain);
    assert_eq!(unsafe { u1qa_ln_binomial(6, 3, ptr::null_mut()) }, U1qaStatus::NullArgument);
    assert_eq!(unsafe { u1qa_ln_binomial(6, 3, &mut x) }, U1qaStatus::Ok);
    assert!((x - 20f64.ln()).abs() < 1e-12);
    assert_eq!(last_error(), "");

    let mut series = ptr::null_mut();
    assert_eq!(unsafe { u1qa_run(ptr::null(), &mut series) }, U1qaStatus::NullArgument);
}

#[test]
fn scalar_entry_points() {
    let (mut exact, mut approx) = (0.0, 0.0);
    assert_eq!(unsafe { u1qa_psapprox(1000, 20, 0.05, &mut exact, &mut approx) }, U1qaStatus::Ok);
    assert!((exact - 4.18786).abs() < 1e-4);
    assert_eq!(approx, 8.0);

    let mut dev = f64::NAN;
    assert_eq!(unsafe { u1qa_oracle_check(6, 6, 1, 4, 3, &mut dev) }, U1qaStatus::Ok);
    assert!(dev < 1e-12);

    let v = unsafe { CStr::from_ptr(u1qa_version()) }.to_str().unwrap();
    assert!(v.starts_with(env!("CARGO_PKG_VERSION")));
}

#[test]
fn seeds_change_results_deterministically() {
    let run = |seed: u64| {
        let (cfg, _) = config(1);
        let mut series = ptr::null_mut();
        let mut mean = vec![0f64; 6];
        unsafe {
            u1qa_config_set_seed(cfg, seed);
            u1qa_run(cfg, &mut series);
            u1qa_series_copy(series, 0, ptr::null_mut(), mean.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), 6);
            u1qa_series_free(series);
            u1qa_config_free(cfg);
        }
        mean
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}
