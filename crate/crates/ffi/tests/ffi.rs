use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;

use leashed_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(leashed_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn experiment(algo: &str, threads: usize) -> *mut LeashedExperiment {
    let mut exp = ptr::null_mut();
    let status = unsafe {
        leashed_experiment_new(
            cstr(algo).as_ptr(),
            threads,
            cstr("tiny:8").as_ptr(),
            cstr("blobs:classes=4,dims=8,per_class=100,spread=0.5,seed=7").as_ptr(),
            &mut exp,
        )
    };
    assert_eq!(status, LeashedStatus::Ok, "{}", last_error());
    exp
}

#[test]
fn run_through_handles() {
    let exp = experiment("leashed", 3);
    unsafe {
        assert_eq!(
            leashed_experiment_set_step_size(exp, 0.05),
            LeashedStatus::Ok
        );
        assert_eq!(leashed_experiment_set_batch_size(exp, 8), LeashedStatus::Ok);
        assert_eq!(
            leashed_experiment_set_persistence(exp, 1),
            LeashedStatus::Ok
        );
        assert_eq!(leashed_experiment_set_seed(exp, 4), LeashedStatus::Ok);
        assert_eq!(
            leashed_experiment_set_time_budget(exp, 30.0),
            LeashedStatus::Ok
        );
        let eps = [0.5, 1e-9];
        assert_eq!(
            leashed_experiment_set_epsilons(exp, eps.as_ptr(), 2),
            LeashedStatus::Ok
        );
        assert_eq!(
            leashed_experiment_set_max_updates(exp, 1_500),
            LeashedStatus::Ok
        );

        let mut dim = 0;
        assert_eq!(
            leashed_experiment_param_count(exp, &mut dim),
            LeashedStatus::Ok
        );
        assert_eq!(dim, 8 * 8 + 8 + 8 * 4 + 4);

        let mut report = ptr::null_mut();
        assert_eq!(
            leashed_run(exp, ptr::null(), &mut report),
            LeashedStatus::Ok,
            "{}",
            last_error()
        );
        let mut status = LeashedRunStatus::Crash;
        assert_eq!(
            leashed_report_status(report, &mut status),
            LeashedStatus::Ok
        );
        assert_eq!(status, LeashedRunStatus::Diverge);

        let (mut f0, mut published, mut abandoned) = (0.0, 0, 0);
        assert_eq!(
            leashed_report_summary(
                report,
                &mut f0,
                ptr::null_mut(),
                &mut published,
                &mut abandoned,
                ptr::null_mut(),
                ptr::null_mut()
            ),
            LeashedStatus::Ok
        );
        assert!(f0 > 0.0);
        assert!(published >= 1_500);

        let (mut reached, mut wall, mut iters) = (false, 0, 0);
        assert_eq!(
            leashed_report_epsilon(report, 0, &mut reached, &mut wall, &mut iters),
            LeashedStatus::Ok
        );
        assert!(reached && iters > 0 && iters <= published);
        assert_eq!(
            leashed_report_epsilon(report, 1, &mut reached, &mut wall, &mut iters),
            LeashedStatus::Ok
        );
        assert!(!reached);
        assert_eq!(
            leashed_report_epsilon(report, 2, &mut reached, &mut wall, &mut iters),
            LeashedStatus::InvalidArgument
        );

        let mut n = 0;
        assert_eq!(
            leashed_report_updates(report, ptr::null_mut(), &mut n),
            LeashedStatus::Ok
        );
        assert_eq!(n as u64, published + abandoned);
        let mut rows = vec![LeashedUpdate::default(); n];
        let mut short = n - 1;
        assert_eq!(
            leashed_report_updates(report, rows.as_mut_ptr(), &mut short),
            LeashedStatus::BufferSize
        );
        assert_eq!(short, n);
        assert_eq!(
            leashed_report_updates(report, rows.as_mut_ptr(), &mut n),
            LeashedStatus::Ok
        );
        assert_eq!(
            rows.iter().filter(|r| r.abandoned).count() as u64,
            abandoned
        );
        assert!(rows.iter().filter(|r| !r.abandoned).all(|r| r.seq > 0));

        let mut len = dim;
        let mut theta = vec![0.0f32; dim];
        assert_eq!(
            leashed_report_final_theta(report, theta.as_mut_ptr(), &mut len),
            LeashedStatus::Ok
        );
        assert!(theta.iter().all(|x| x.is_finite()));

        let mut census = LeashedCensus::default();
        assert_eq!(
            leashed_report_census(report, &mut census),
            LeashedStatus::Ok
        );
        assert!(census.max_live_payloads >= 1);

        leashed_report_free(report);
        leashed_experiment_free(exp);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    unsafe {
        let mut exp = ptr::null_mut();
        let s = leashed_experiment_new(
            cstr("bogus").as_ptr(),
            2,
            cstr("tiny").as_ptr(),
            cstr("blobs").as_ptr(),
            &mut exp,
        );
        assert_eq!(s, LeashedStatus::InvalidArgument);
        assert!(exp.is_null());
        assert!(last_error().contains("algo"));

        let s = leashed_experiment_new(
            ptr::null(),
            2,
            cstr("tiny").as_ptr(),
            cstr("blobs").as_ptr(),
            &mut exp,
        );
        assert_eq!(s, LeashedStatus::NullPointer);

        let exp = experiment("async", 2);
        assert_eq!(
            leashed_experiment_set_step_size(exp, -1.0),
            LeashedStatus::InvalidArgument
        );
        assert_eq!(
            leashed_experiment_set_batch_size(exp, 0),
            LeashedStatus::InvalidArgument
        );
        assert_eq!(
            leashed_experiment_set_time_budget(exp, f64::NAN),
            LeashedStatus::InvalidArgument
        );
        assert_eq!(
            leashed_experiment_set_step_size(ptr::null_mut(), 0.1),
            LeashedStatus::NullPointer
        );
        leashed_experiment_free(exp);

        let mut missing = ptr::null_mut();
        let s = leashed_experiment_new(
            cstr("seq").as_ptr(),
            1,
            cstr("mlp").as_ptr(),
            cstr("mnist:/nonexistent").as_ptr(),
            &mut missing,
        );
        assert_eq!(s, LeashedStatus::Ok);
        let mut report = ptr::null_mut();
        assert_eq!(
            leashed_run(missing, ptr::null(), &mut report),
            LeashedStatus::Data
        );
        assert!(report.is_null());
        assert!(!last_error().is_empty());
        leashed_experiment_free(missing);

        leashed_experiment_free(ptr::null_mut());
        leashed_report_free(ptr::null_mut());
        leashed_slot_free(ptr::null_mut());
    }
}

#[test]
fn slot_publishes_in_sequence_under_contention() {
    const DIM: usize = 16;
    const PER_THREAD: u64 = 2_000;
    let mut slot = ptr::null_mut();
    unsafe {
        assert_eq!(leashed_slot_new(DIM, 1, &mut slot), LeashedStatus::Ok);
    }
    let addr = slot as usize;
    let failures = AtomicU64::new(0);
    thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| {
                let slot = addr as *const LeashedSlot;
                let mut theta = [0.0f32; DIM];
                let mut done = 0;
                while done < PER_THREAD {
                    let mut seq = 0;
                    unsafe {
                        assert_eq!(
                            leashed_slot_read(slot, theta.as_mut_ptr(), DIM, &mut seq),
                            LeashedStatus::Ok
                        );
                    }
                    if seq > 0 {
                        assert!(theta.iter().all(|&x| x == seq as f32), "torn read at {seq}");
                    }
                    theta.fill((seq + 1) as f32);
                    let mut ok = false;
                    unsafe {
                        assert_eq!(
                            leashed_slot_try_publish(slot, seq, theta.as_ptr(), DIM, &mut ok),
                            LeashedStatus::Ok
                        );
                    }
                    if ok {
                        done += 1;
                    } else {
                        failures.fetch_add(1, Ordering::Relaxed);
                    }
                }
            });
        }
    });
    unsafe {
        let mut theta = [0.0f32; DIM];
        let mut seq = 0;
        assert_eq!(
            leashed_slot_read(slot, theta.as_mut_ptr(), DIM, &mut seq),
            LeashedStatus::Ok
        );
        assert_eq!(seq, 4 * PER_THREAD);
        let mut ok = true;
        assert_eq!(
            leashed_slot_try_publish(slot, seq - 1, theta.as_ptr(), DIM, &mut ok),
            LeashedStatus::Ok
        );
        assert!(!ok);
        assert_eq!(
            leashed_slot_read(slot, theta.as_mut_ptr(), DIM - 1, &mut seq),
            LeashedStatus::BufferSize
        );

        let mut c = LeashedCensus::default();
        assert_eq!(leashed_slot_census(slot, &mut c), LeashedStatus::Ok);
        assert_eq!(c.allocations - c.reclamations, c.live_payloads as u64);
        assert!(c.max_live_payloads <= 3 * 4 + 1, "{c:?}");
        leashed_slot_free(slot);
    }
}

#[test]
fn dynamics_matches_fixed_point() {
    unsafe {
        let mut out = vec![0.0; 201];
        assert_eq!(
            leashed_dynamics_recurrence(8.0, 10.0, 2.0, 0.0, 0.0, 200, out.as_mut_ptr(), out.len()),
            LeashedStatus::Ok
        );
        let mut fp = 0.0;
        assert_eq!(
            leashed_dynamics_fixed_point(8.0, 10.0, 2.0, 0.0, &mut fp),
            LeashedStatus::Ok
        );
        assert!((out[200] - fp).abs() < 1e-9);
        assert_eq!(
            leashed_dynamics_recurrence(8.0, 10.0, 2.0, 0.0, 0.0, 200, out.as_mut_ptr(), 5),
            LeashedStatus::BufferSize
        );
        assert_eq!(
            leashed_dynamics_fixed_point(0.0, 10.0, 2.0, 0.0, &mut fp),
            LeashedStatus::InvalidArgument
        );

        let mut avg = 0.0;
        assert_eq!(
            leashed_dynamics_simulate(8.0, 10.0, 2.0, 0.0, 3, true, 200_000, &mut avg),
            LeashedStatus::Ok
        );
        assert!(avg > 0.0 && avg < 8.0);
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libleashed_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!(
            "skipping: no C compiler or static library at {}",
            lib.display()
        );
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(
        run.status.success(),
        "{stdout}\n{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(stdout.contains("ok"), "{stdout}");
}
