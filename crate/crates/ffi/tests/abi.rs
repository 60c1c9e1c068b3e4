use std::ffi::{c_char, CString};
use std::path::PathBuf;
use std::ptr;

use pinn_balls::ensemble::EnsembleModel;
use pinn_balls::mlp::{Activation, MlpSpec};
use pinn_balls::partition::{Ball, Partition, RadiusBounds};
use pinn_balls::trainer::save_checkpoint;
use pinn_balls_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { pb_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(511)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn saved_model(dir: &std::path::Path) -> (EnsembleModel, CString) {
    let part = Partition::new(
        vec![Ball::new(vec![0.3, 0.5], 0.6), Ball::new(vec![0.7, 0.5], 0.6)],
        RadiusBounds { min: 1e-3, max: 2.0 },
    );
    let mlp = MlpSpec::new(2, vec![4, 4], 1, Activation::Tanh).unwrap();
    let model = EnsembleModel::new(part, mlp, 7, false).unwrap();
    let path = dir.join("m.ckpt");
    save_checkpoint(&model, &path).unwrap();
    (model, CString::new(path.display().to_string()).unwrap())
}

#[test]
fn load_predict_gate_and_free() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = saved_model(dir.path());
    let mut h: *mut PbModel = ptr::null_mut();
    unsafe {
        assert_eq!(pb_model_load(path.as_ptr(), &mut h), PbStatus::Ok);
        assert_eq!(pb_model_input_dim(h), 2);
        assert_eq!(pb_model_output_dim(h), 1);
        assert_eq!(pb_model_num_balls(h), 2);
        assert_eq!(pb_model_num_params(h), model.n_params());

        let pts = [0.2, 0.5, 0.5, 0.5, 0.8, 0.4];
        let mut out = [0.0; 3];
        assert_eq!(pb_model_predict(h, pts.as_ptr(), 3, out.as_mut_ptr()), PbStatus::Ok);
        for (k, x) in pts.chunks(2).enumerate() {
            assert_eq!(out[k], model.predict(x).unwrap()[0]);
        }

        let x = [0.5, 0.5];
        let (mut v, mut g, mut hs) = ([0.0; 1], [0.0; 2], [0.0; 4]);
        assert_eq!(pb_model_predict_bundle(h, x.as_ptr(), v.as_mut_ptr(), g.as_mut_ptr(), hs.as_mut_ptr()), PbStatus::Ok);
        let b = model.predict_bundle(&x).unwrap();
        assert_eq!(v.to_vec(), b.value);
        assert_eq!(g.to_vec(), b.grad);
        assert_eq!(hs.to_vec(), b.hess);
        assert_eq!(pb_model_predict_bundle(h, x.as_ptr(), v.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()), PbStatus::Ok);

        let mut lam = [f64::NAN; 2];
        assert_eq!(pb_model_gate(h, x.as_ptr(), lam.as_mut_ptr()), PbStatus::Ok);
        assert!((lam[0] + lam[1] - 1.0).abs() < 1e-15);
        assert!((lam[0] - 0.5).abs() < 1e-15);
        let far = [0.0, 0.5];
        assert_eq!(pb_model_gate(h, far.as_ptr(), lam.as_mut_ptr()), PbStatus::Ok);
        assert_eq!(lam[1], 0.0);

        let uncovered = [5.0, 5.0];
        assert_eq!(pb_model_predict(h, uncovered.as_ptr(), 1, out.as_mut_ptr()), PbStatus::UncoveredPoint);
        assert!(last_error().contains("not covered"));

        let copy = CString::new(dir.path().join("copy.ckpt").display().to_string()).unwrap();
        assert_eq!(pb_model_save(h, copy.as_ptr()), PbStatus::Ok);
        assert_eq!(std::fs::read(dir.path().join("copy.ckpt")).unwrap(), std::fs::read(dir.path().join("m.ckpt")).unwrap());
        pb_model_free(h);
        pb_model_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut h: *mut PbModel = ptr::null_mut();
    unsafe {
        let missing = CString::new(dir.path().join("none.ckpt").display().to_string()).unwrap();
        assert_eq!(pb_model_load(missing.as_ptr(), &mut h), PbStatus::Io);
        assert!(h.is_null());
        std::fs::write(dir.path().join("bad.ckpt"), "not a checkpoint\n").unwrap();
        let bad = CString::new(dir.path().join("bad.ckpt").display().to_string()).unwrap();
        assert_eq!(pb_model_load(bad.as_ptr(), &mut h), PbStatus::Checkpoint);
        assert!(!last_error().is_empty());
        assert_eq!(pb_model_load(ptr::null(), &mut h), PbStatus::NullPointer);
        assert_eq!(pb_model_predict(ptr::null(), ptr::null(), 1, ptr::null_mut()), PbStatus::NullPointer);
        assert_eq!(pb_model_num_params(ptr::null()), 0);

        let cfg = CString::new("balls = 2\nnot_a_key = 1\n").unwrap();
        assert_eq!(pb_train(cfg.as_ptr(), &mut h, ptr::null_mut()), PbStatus::Config);
        assert!(last_error().contains("not_a_key"));

        let (a, b) = ([1.0, 2.0], [1.0, 0.0]);
        let mut rel = 0.0;
        assert_eq!(pb_relative_l2(a.as_ptr(), b.as_ptr(), 2, &mut rel), PbStatus::Ok);
        assert_eq!(rel, 2.0);
        let z = [0.0, 0.0];
        assert_eq!(pb_relative_l2(a.as_ptr(), z.as_ptr(), 2, &mut rel), PbStatus::Numerical);
    }
    // A successful call clears the message.
    let mut rel = 0.0;
    unsafe { pb_relative_l2([1.0].as_ptr(), [1.0].as_ptr(), 1, &mut rel) };
    assert_eq!(last_error(), "");
}

#[test]
fn tiny_training_run() {
    let cfg = CString::new(
        "problem = helmholtz\nballs = 2\nhidden = 4,4\nouter_iterations = 3\nn_interior = 150\nn_boundary = 40\n\
         n_holdout = 150\nascent_inner_steps = 1\nn_mc = 3000\neval_grid = 9\n",
    )
    .unwrap();
    let mut h: *mut PbModel = ptr::null_mut();
    let mut rel = f64::NAN;
    unsafe {
        assert_eq!(pb_train(cfg.as_ptr(), &mut h, &mut rel), PbStatus::Ok, "{}", last_error());
        assert!(rel.is_finite());
        assert_eq!(pb_model_num_params(h), 2 * (3 * 4 + 5 * 4 + 5));
        pb_model_free(h);
    }
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("libpinn_balls_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = saved_model(dir.path());
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "pinn_balls.h"
int main(int argc, char **argv) {
    PbModel *m = NULL;
    if (pb_model_load(argv[1], &m) != PB_STATUS_OK) return 10;
    double x[2] = {0.5, 0.5}, u = 0.0, lam[2];
    if (pb_model_predict(m, x, 1, &u) != PB_STATUS_OK) return 11;
    if (pb_model_gate(m, x, lam) != PB_STATUS_OK) return 12;
    double far[2] = {9.0, 9.0};
    if (pb_model_predict(m, far, 1, &u) != PB_STATUS_UNCOVERED_POINT) return 13;
    char msg[256];
    pb_last_error_message(msg, sizeof msg);
    printf("%zu %.3f %s\n", pb_model_num_params(m), lam[0] + lam[1], msg);
    pb_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = std::process::Command::new(&exe).arg(ckpt.to_str().unwrap()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("74 1.000 point"), "{text}");
}
