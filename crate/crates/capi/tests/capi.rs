//! Exercises the C ABI from Rust, calling through the same unsafe extern
//! functions a C client would bind.

use std::ffi::CStr;
use std::ptr;

use survrisk::coxph::{fit_cox, FitOptions};
use survrisk::survstats::{kaplan_meier, survival_at};
use survrisk_capi::*;

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(survrisk_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}

#[test]
fn version_is_a_nonempty_c_string() {
    let v = unsafe { CStr::from_ptr(survrisk_version()) };
    let text = v.to_str().expect("version is UTF-8");
    assert!(!text.is_empty());
    assert!(text.split('.').count() >= 2, "unexpected version {text}");
}

#[test]
fn c_index_matches_a_perfect_ranking() {
    let scores = [2.0, 1.0, 0.5];
    let times = [1.0, 2.0, 3.0];
    let events = [1u8, 1, 1];
    let mut c = f64::NAN;
    let status = unsafe {
        survrisk_c_index(
            scores.as_ptr(),
            times.as_ptr(),
            events.as_ptr(),
            3,
            &mut c,
        )
    };
    assert_eq!(status, SURVRISK_OK);
    assert_eq!(c, 1.0);
}

#[test]
fn null_pointer_is_an_invalid_argument_with_a_message() {
    let times = [1.0, 2.0];
    let events = [1u8, 0];
    let mut c = f64::NAN;
    let status = unsafe {
        survrisk_c_index(ptr::null(), times.as_ptr(), events.as_ptr(), 2, &mut c)
    };
    assert_eq!(status, SURVRISK_ERR_INVALID_ARGUMENT);
    assert!(!last_error().is_empty());
    assert!(last_error().contains("null"));
}

#[test]
fn all_censored_c_index_is_a_data_error() {
    let scores = [1.0, 2.0, 3.0];
    let times = [4.0, 5.0, 6.0];
    let events = [0u8, 0, 0];
    let mut c = f64::NAN;
    let status = unsafe {
        survrisk_c_index(
            scores.as_ptr(),
            times.as_ptr(),
            events.as_ptr(),
            3,
            &mut c,
        )
    };
    assert_eq!(status, SURVRISK_ERR_DATA);
    assert!(last_error().contains("comparable"));
}

#[test]
fn km_handle_reproduces_the_direct_fit() {
    let times = [2.0, 1.0, 3.0, 3.0, 5.0, 4.0, 6.0, 7.0];
    let events = [true, false, true, true, false, true, false, true];
    let direct = kaplan_meier(&times, &events, 0.05).expect("direct fit");

    let raw_events: Vec<u8> = events.iter().map(|&e| e as u8).collect();
    let mut km: *mut SurvriskKm = ptr::null_mut();
    let status = unsafe {
        survrisk_km_fit(times.as_ptr(), raw_events.as_ptr(), times.len(), 0.05, &mut km)
    };
    assert_eq!(status, SURVRISK_OK);
    assert!(!km.is_null());

    unsafe {
        assert_eq!(survrisk_km_len(km), direct.len());
        for i in 0..direct.len() {
            let (mut t, mut risk, mut d) = (f64::NAN, 0u64, 0u64);
            let (mut s, mut lo, mut hi) = (f64::NAN, f64::NAN, f64::NAN);
            let status = survrisk_km_row(
                km, i, &mut t, &mut risk, &mut d, &mut s, &mut lo, &mut hi,
            );
            assert_eq!(status, SURVRISK_OK);
            assert_eq!(t, direct.event_times[i]);
            assert_eq!(risk, direct.at_risk[i]);
            assert_eq!(d, direct.n_events[i]);
            assert_eq!(s, direct.survival[i]);
            assert_eq!(lo, direct.ci_lower[i]);
            assert_eq!(hi, direct.ci_upper[i]);
        }

        let mut bad = f64::NAN;
        let status = survrisk_km_row(
            km,
            direct.len(),
            &mut bad,
            &mut 0,
            &mut 0,
            &mut bad.clone(),
            &mut bad.clone(),
            &mut bad.clone(),
        );
        assert_eq!(status, SURVRISK_ERR_INVALID_ARGUMENT);

        let (mut s, mut lo, mut hi) = (f64::NAN, f64::NAN, f64::NAN);
        let status = survrisk_km_survival_at(km, 4.5, &mut s, &mut lo, &mut hi);
        assert_eq!(status, SURVRISK_OK);
        assert_eq!((s, lo, hi), survival_at(&direct, 4.5));

        survrisk_km_free(km);
        survrisk_km_free(ptr::null_mut());
    }
}

#[test]
fn logrank_on_identical_groups_is_null() {
    let times = [1.0, 2.0, 3.0, 4.0, 5.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let events = [1u8, 1, 0, 1, 0, 1, 1, 0, 1, 0];
    let sizes = [5usize, 5];
    let (mut chi2, mut df, mut p) = (f64::NAN, 0usize, f64::NAN);
    let status = unsafe {
        survrisk_logrank(
            times.as_ptr(),
            events.as_ptr(),
            sizes.as_ptr(),
            2,
            &mut chi2,
            &mut df,
            &mut p,
        )
    };
    assert_eq!(status, SURVRISK_OK);
    assert_eq!(df, 1);
    assert!(chi2.abs() < 1e-12, "chi2 = {chi2}");
    assert!((p - 1.0).abs() < 1e-9, "p = {p}");
}

fn toy_cox_data() -> (Vec<Vec<f64>>, Vec<f64>, Vec<bool>) {
    // small two-covariate problem with a tie; values kept modest so the
    // fit is comfortably identified
    let x = vec![
        vec![0.5, 1.0],
        vec![-0.2, 0.0],
        vec![0.9, 1.0],
        vec![-1.1, 0.0],
        vec![0.3, 1.0],
        vec![0.0, 0.0],
        vec![-0.7, 1.0],
        vec![1.2, 0.0],
        vec![-0.4, 1.0],
        vec![0.6, 0.0],
        vec![0.1, 1.0],
        vec![-0.9, 0.0],
    ];
    let times = vec![
        3.0, 5.0, 2.0, 8.0, 4.0, 4.0, 7.0, 1.0, 6.0, 9.0, 2.5, 10.0,
    ];
    let events = vec![
        true, false, true, true, true, false, true, true, false, true, true, false,
    ];
    (x, times, events)
}

#[test]
fn cox_handle_reproduces_the_direct_fit() {
    let (x, times, events) = toy_cox_data();
    let direct = fit_cox(&x, &times, &events, &FitOptions::default()).expect("direct fit");

    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let raw_events: Vec<u8> = events.iter().map(|&e| e as u8).collect();
    let mut fit: *mut SurvriskCox = ptr::null_mut();
    let status = unsafe {
        survrisk_cox_fit(
            flat.as_ptr(),
            x.len(),
            2,
            times.as_ptr(),
            raw_events.as_ptr(),
            SURVRISK_TIES_EFRON,
            0.0,
            &mut fit,
        )
    };
    assert_eq!(status, SURVRISK_OK, "fit failed: {}", last_error());
    assert!(!fit.is_null());

    unsafe {
        assert_eq!(survrisk_cox_n_coefficients(fit), 2);

        let mut beta = [f64::NAN; 2];
        assert_eq!(survrisk_cox_coefficients(fit, beta.as_mut_ptr()), SURVRISK_OK);
        assert_eq!(beta.to_vec(), direct.beta);

        let mut se = [f64::NAN; 2];
        assert_eq!(
            survrisk_cox_standard_errors(fit, se.as_mut_ptr()),
            SURVRISK_OK
        );
        assert_eq!(se.to_vec(), direct.standard_errors());

        let mut ll = f64::NAN;
        assert_eq!(survrisk_cox_log_likelihood(fit, &mut ll), SURVRISK_OK);
        assert_eq!(ll, direct.log_likelihood);

        let row = [0.4, 1.0];
        let mut lp = f64::NAN;
        assert_eq!(
            survrisk_cox_linear_predictor(fit, row.as_ptr(), &mut lp),
            SURVRISK_OK
        );
        let expected = direct.beta[0] * row[0] + direct.beta[1] * row[1];
        assert!((lp - expected).abs() < 1e-15, "{lp} vs {expected}");

        let (mut hr, mut lo, mut hi, mut p) = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        let status =
            survrisk_cox_hazard_ratio(fit, 0, 1.0, 0.05, &mut hr, &mut lo, &mut hi, &mut p);
        assert_eq!(status, SURVRISK_OK);
        assert!((hr - direct.beta[0].exp()).abs() < 1e-12);
        assert!(lo < hr && hr < hi);
        assert!(p > 0.0 && p <= 1.0);

        // per-10-unit scaling exponentiates tenfold
        let mut hr10 = f64::NAN;
        let status = survrisk_cox_hazard_ratio(
            fit, 0, 10.0, 0.05, &mut hr10, &mut lo, &mut hi, &mut p,
        );
        assert_eq!(status, SURVRISK_OK);
        assert!((hr10 - (direct.beta[0] * 10.0).exp()).abs() < 1e-9);

        let status =
            survrisk_cox_hazard_ratio(fit, 2, 1.0, 0.05, &mut hr, &mut lo, &mut hi, &mut p);
        assert_eq!(status, SURVRISK_ERR_INVALID_ARGUMENT);

        survrisk_cox_free(fit);
        survrisk_cox_free(ptr::null_mut());
    }
}

#[test]
fn separated_design_is_a_numeric_error() {
    // the binary covariate perfectly orders events before censorings;
    // its small scale keeps the score large until the coefficient bound
    // trips, so the monotone likelihood is flagged rather than silently
    // converged
    let x = vec![
        vec![0.01],
        vec![0.01],
        vec![0.01],
        vec![0.0],
        vec![0.0],
        vec![0.0],
    ];
    let times = vec![1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
    let events = [1u8, 1, 1, 0, 0, 0];
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let mut fit: *mut SurvriskCox = ptr::null_mut();
    let status = unsafe {
        survrisk_cox_fit(
            flat.as_ptr(),
            6,
            1,
            times.as_ptr(),
            events.as_ptr(),
            SURVRISK_TIES_EFRON,
            0.0,
            &mut fit,
        )
    };
    assert_eq!(status, SURVRISK_ERR_NUMERIC, "message: {}", last_error());
    assert!(fit.is_null());
}

#[test]
fn unknown_ties_constant_is_rejected() {
    let (x, times, events) = toy_cox_data();
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let raw_events: Vec<u8> = events.iter().map(|&e| e as u8).collect();
    let mut fit: *mut SurvriskCox = ptr::null_mut();
    let status = unsafe {
        survrisk_cox_fit(
            flat.as_ptr(),
            x.len(),
            2,
            times.as_ptr(),
            raw_events.as_ptr(),
            7,
            0.0,
            &mut fit,
        )
    };
    assert_eq!(status, SURVRISK_ERR_INVALID_ARGUMENT);
    assert!(last_error().contains("ties"));
}

#[test]
fn rule_based_gg_matches_known_anchors() {
    let cases = [
        ((100.0, 0.0, 0.0), 1u8),
        ((60.0, 40.0, 0.0), 2),
        ((40.0, 60.0, 0.0), 3),
        ((0.0, 100.0, 0.0), 4),
        ((0.0, 0.0, 100.0), 5),
    ];
    for ((g3, g4, g5), expected) in cases {
        let mut grade = 0u8;
        let status = unsafe { survrisk_rule_based_gg(g3, g4, g5, &mut grade) };
        assert_eq!(status, SURVRISK_OK);
        assert_eq!(grade, expected, "({g3},{g4},{g5})");
    }

    let mut grade = 0u8;
    let status = unsafe { survrisk_rule_based_gg(0.0, 0.0, 0.0, &mut grade) };
    assert_eq!(status, SURVRISK_ERR_INVALID_ARGUMENT);
}

#[test]
fn discretize_matches_counts_and_breaks_ties_by_position() {
    // 10 scores with a fat tie at 5.0 straddling the 4/6 boundary
    let scores = [9.0, 5.0, 1.0, 5.0, 7.0, 5.0, 2.0, 5.0, 5.0, 0.5];
    let reference = [4u64, 2, 2, 1, 1];
    let mut groups = [0u8; 10];
    let status = unsafe {
        survrisk_discretize(
            scores.as_ptr(),
            scores.len(),
            reference.as_ptr(),
            groups.as_mut_ptr(),
        )
    };
    assert_eq!(status, SURVRISK_OK, "message: {}", last_error());

    let mut counts = [0usize; 5];
    for &g in &groups {
        assert!((1..=5).contains(&g));
        counts[g as usize - 1] += 1;
    }
    assert_eq!(counts, [4, 2, 2, 1, 1]);

    // sorted by score the groups are monotone
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    for pair in order.windows(2) {
        assert!(groups[pair[0]] <= groups[pair[1]] || scores[pair[0]] == scores[pair[1]]);
    }

    // the five 5.0 ties occupy positions 1,3,5,7,8; earlier input index
    // gets the lower group
    let tie_groups: Vec<u8> = [1, 3, 5, 7, 8].iter().map(|&i| groups[i]).collect();
    let mut sorted_ties = tie_groups.clone();
    sorted_ties.sort_unstable();
    assert_eq!(tie_groups, sorted_ties);

    // mismatched histogram total is rejected
    let bad_reference = [4u64, 2, 2, 1, 2];
    let status = unsafe {
        survrisk_discretize(
            scores.as_ptr(),
            scores.len(),
            bad_reference.as_ptr(),
            groups.as_mut_ptr(),
        )
    };
    assert_eq!(status, SURVRISK_ERR_INVALID_ARGUMENT);
}

#[test]
fn bootstrap_is_seed_deterministic() {
    let n = 40;
    let scores: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
    let times: Vec<f64> = (0..n).map(|i| 1.0 + (i % 13) as f64).collect();
    let events: Vec<u8> = (0..n).map(|i| (i % 3 != 0) as u8).collect();

    let mut runs = Vec::new();
    for _ in 0..2 {
        let (mut point, mut lo, mut hi) = (f64::NAN, f64::NAN, f64::NAN);
        let status = unsafe {
            survrisk_c_index_bootstrap_ci(
                scores.as_ptr(),
                times.as_ptr(),
                events.as_ptr(),
                n,
                500,
                0.05,
                424242,
                &mut point,
                &mut lo,
                &mut hi,
            )
        };
        assert_eq!(status, SURVRISK_OK, "message: {}", last_error());
        runs.push((point, lo, hi));
    }
    assert_eq!(runs[0], runs[1]);
    let (point, lo, hi) = runs[0];
    assert!(lo <= point && point <= hi);
    assert!(lo < hi);
}
