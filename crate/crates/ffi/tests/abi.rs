use std::ffi::{CStr, CString};
use std::ptr;

use qinit::nn::{NetTopology, PolicyCheckpoint, PolicyNet};
use qinit_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn last_error() -> String {
    unsafe { CStr::from_ptr(qinit_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn env_roundtrip_and_determinism() {
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { qinit_env_new(ptr::null(), &mut env) }, QinitStatus::Ok);
    let n = unsafe { qinit_env_readout_len(env) };
    assert_eq!(n, 256);
    let mut a = (vec![0.0; n], vec![0.0; n]);
    let mut b = (vec![0.0; n], vec![0.0; n]);
    let mut fl = 9u32;
    unsafe {
        assert_eq!(qinit_env_measure(env, 1, false, 42, a.0.as_mut_ptr(), a.1.as_mut_ptr(), n, &mut fl), QinitStatus::Ok);
        assert_eq!(qinit_env_measure(env, 1, false, 42, b.0.as_mut_ptr(), b.1.as_mut_ptr(), n, ptr::null_mut()), QinitStatus::Ok);
    }
    assert!(fl <= 1);
    assert_eq!(a, b);
    let st = unsafe { qinit_env_measure(env, 2, false, 1, a.0.as_mut_ptr(), a.1.as_mut_ptr(), n, ptr::null_mut()) };
    assert_eq!(st, QinitStatus::InvalidArgument);
    assert!(last_error().contains("level"));
    let st = unsafe { qinit_env_measure(env, 0, false, 1, a.0.as_mut_ptr(), a.1.as_mut_ptr(), n - 1, ptr::null_mut()) };
    assert_eq!(st, QinitStatus::InvalidArgument);
    unsafe { qinit_env_free(env) };
}

#[test]
fn config_errors_map_to_codes() {
    let bad = CString::new("[env]\nsnr = -1.0\n").unwrap();
    let mut env = ptr::null_mut();
    let st = unsafe { qinit_env_new(bad.as_ptr(), &mut env) };
    assert_eq!(st, QinitStatus::Config);
    assert!(env.is_null());
    assert!(last_error().contains("snr"), "{}", last_error());
    let qutrit = CString::new("[experiment]\nscenario = \"qutrit-4action\"\n").unwrap();
    assert_eq!(unsafe { qinit_env_new(qutrit.as_ptr(), &mut env) }, QinitStatus::Ok);
    unsafe { qinit_env_free(env) };
    assert_eq!(unsafe { qinit_env_new(ptr::null(), ptr::null_mut()) }, QinitStatus::InvalidArgument);
}

#[test]
fn policy_probs_match_rust() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let net = PolicyNet::random(NetTopology::default(), 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    PolicyCheckpoint::from_net(&net).save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { qinit_policy_load(cpath.as_ptr(), &mut p) }, QinitStatus::Ok);
    let n = unsafe { qinit_policy_readout_len(p) };
    let k = unsafe { qinit_policy_n_actions(p) };
    assert_eq!(k, 3);
    let i: Vec<f64> = (0..n).map(|t| (t as f64 * 0.1).sin()).collect();
    let q: Vec<f64> = (0..n).map(|t| (t as f64 * 0.07).cos()).collect();
    let mut probs = vec![0.0; k];
    assert_eq!(unsafe { qinit_policy_probs(p, i.as_ptr(), q.as_ptr(), n, probs.as_mut_ptr(), k) }, QinitStatus::Ok);
    let w = qinit::nn::ObservationWindow::build(net.topology(), &[], &i, &q).unwrap();
    assert_eq!(probs, net.forward(&w).unwrap());
    let st = unsafe { qinit_policy_probs(p, i.as_ptr(), q.as_ptr(), n - 1, probs.as_mut_ptr(), k) };
    assert_eq!(st, QinitStatus::Shape);
    let (mut nn, mut lp) = (0.0, 0.0);
    assert_eq!(unsafe { qinit_latency_ns(p, &mut nn, &mut lp) }, QinitStatus::Ok);
    assert_eq!((nn, lp), (48.0, 451.0));
    unsafe { qinit_policy_free(p) };

    let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { qinit_policy_load(missing.as_ptr(), &mut p) }, QinitStatus::Io);
    assert!(p.is_null());
}

#[test]
fn header_compiles_from_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/qinit.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["qinit_env_new", "qinit_policy_probs", "qinit_last_error", "QINIT_STATUS_CONFIG"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        "#include \"qinit.h\"\nint main(void) { QinitEnv *e = 0; QinitStatus s = qinit_env_new(0, &e); \
         qinit_env_free(e); return s == QINIT_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = std::process::Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .output();
    match out {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("no C compiler available, skipped syntax check: {e}"),
    }
}
