use std::ffi::{CStr, CString};
use std::ptr;

use nalgebra::DVector;
use reddpc::benchmark::synthesize_for;
use reddpc::explicit::{export_law, law_to_json, ExplicitLaw};
use reddpc::rng::stream;
use reddpc::system::builtin_system;
use reddpc_ffi::*;

fn siso_law() -> ExplicitLaw {
    let bench = builtin_system("siso").unwrap();
    let run = bench.collect_with(&bench.system.noiseless(), &mut stream(3, 0)).unwrap();
    synthesize_for(&bench, &run.measured().unwrap(), 1.0, None).unwrap().1
}

fn last_error() -> String {
    let p = reddpc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn load_and_evaluate_match_rust() {
    let law = siso_law();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("law.json");
    export_law(&law, &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(reddpc_law_load(cpath.as_ptr(), &mut handle), ReddpcStatus::Ok);
        assert_eq!(reddpc_law_input_dim(handle), law.m);
        assert_eq!(reddpc_law_param_dim(handle), law.n_chi());
        assert_eq!(reddpc_law_region_count(handle), law.regions.len());
        for k in 0..50 {
            let chi: Vec<f64> = (0..law.n_chi()).map(|i| ((k * 7 + i * 3) % 11) as f64 * 0.3 - 1.5).collect();
            let mut u = vec![0.0; law.m];
            let mut region = usize::MAX;
            let s = reddpc_law_evaluate(handle, chi.as_ptr(), chi.len(), u.as_mut_ptr(), u.len(), &mut region);
            assert_eq!(s, ReddpcStatus::Ok);
            let (want, idx) = law.evaluate(&DVector::from_vec(chi)).unwrap();
            assert_eq!(region, idx);
            assert_eq!(u.as_slice(), want.as_slice());
        }
        reddpc_law_free(handle);
    }
}

#[test]
fn from_json_and_errors() {
    let law = siso_law();
    let text = CString::new(law_to_json(&law).unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(reddpc_law_from_json(text.as_ptr(), &mut handle), ReddpcStatus::Ok);
        let mut u = [0.0];
        let chi = vec![0.0; law.n_chi() + 1];
        let s = reddpc_law_evaluate(handle, chi.as_ptr(), chi.len(), u.as_mut_ptr(), 1, ptr::null_mut());
        assert_eq!(s, ReddpcStatus::Dimension);
        assert!(last_error().contains("dimension"));
        let s = reddpc_law_evaluate(handle, ptr::null(), 0, u.as_mut_ptr(), 1, ptr::null_mut());
        assert_eq!(s, ReddpcStatus::NullPointer);
        reddpc_law_free(handle);

        assert_eq!(reddpc_law_evaluate(ptr::null(), chi.as_ptr(), 1, u.as_mut_ptr(), 1, ptr::null_mut()), ReddpcStatus::NullPointer);
        assert_eq!(reddpc_law_region_count(ptr::null()), 0);
        reddpc_law_free(ptr::null_mut());

        let tampered = law_to_json(&law).unwrap().replacen("\"m\": 1", "\"m\": 2", 1);
        let tampered = CString::new(tampered).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(reddpc_law_from_json(tampered.as_ptr(), &mut h), ReddpcStatus::Checksum);
        assert!(h.is_null());

        let garbage = CString::new("{not json").unwrap();
        assert_eq!(reddpc_law_from_json(garbage.as_ptr(), &mut h), ReddpcStatus::Format);

        let missing = CString::new("/nonexistent/law.json").unwrap();
        assert_eq!(reddpc_law_load(missing.as_ptr(), &mut h), ReddpcStatus::Io);
        assert!(last_error().contains("/nonexistent/law.json"));
        assert_eq!(reddpc_law_load(ptr::null(), &mut h), ReddpcStatus::NullPointer);
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(reddpc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/reddpc.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ ReddpcLaw *l = 0; ReddpcStatus s = reddpc_law_load(\"x\", &l); return s == REDDPC_STATUS_OK; }}\n"
        ),
    )
    .unwrap();
    let Ok(out) = std::process::Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg(&src).output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
