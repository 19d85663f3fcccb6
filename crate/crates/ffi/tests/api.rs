use std::ffi::{c_char, CString};
use std::ptr;

use leanstereo_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 512];
    let n = unsafe { ls_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    buf.truncate(n.min(511));
    String::from_utf8(buf).unwrap()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn model_lifecycle_and_counts() {
    let mut m: *mut LsModel = ptr::null_mut();
    unsafe {
        assert_eq!(ls_model_new(cstr("desk").as_ptr(), 3, &mut m), LsStatus::Ok);
        let mut params = 0u64;
        assert_eq!(ls_model_param_count(m, &mut params), LsStatus::Ok);
        assert_eq!(params, 785_704);
        let mut macs = 0u64;
        assert_eq!(ls_model_macs(m, 64, 128, &mut macs), LsStatus::Ok);
        assert!(macs > 0);
        assert_eq!(ls_model_macs(m, 60, 128, &mut macs), LsStatus::Shape);
        assert!(!last_error().is_empty());

        let dir = tempfile::tempdir().unwrap();
        let path = cstr(dir.path().join("m.ckpt").to_str().unwrap());
        assert_eq!(ls_model_save(m, path.as_ptr()), LsStatus::Ok);
        let mut back: *mut LsModel = ptr::null_mut();
        assert_eq!(ls_model_load(path.as_ptr(), &mut back), LsStatus::Ok);
        let mut p2 = 0u64;
        ls_model_param_count(back, &mut p2);
        assert_eq!(p2, params);
        ls_model_free(back);
        ls_model_free(m);
        ls_model_free(ptr::null_mut());
    }
}

#[test]
fn bad_arguments_map_to_status_codes() {
    let mut m: *mut LsModel = ptr::null_mut();
    unsafe {
        assert_eq!(ls_model_new(ptr::null(), 0, &mut m), LsStatus::NullPointer);
        assert!(last_error().contains("preset"));
        assert_eq!(
            ls_model_new(cstr("huge").as_ptr(), 0, &mut m),
            LsStatus::Config
        );
        assert_eq!(
            ls_model_load(cstr("/no/such/file").as_ptr(), &mut m),
            LsStatus::Io
        );
        assert!(m.is_null());
        let mut n = 0u64;
        assert_eq!(
            ls_model_param_count(ptr::null(), &mut n),
            LsStatus::NullPointer
        );
    }
}

#[test]
fn infer_matches_input_size() {
    let (h, w) = (40u32, 70u32);
    let n = (h * w) as usize;
    let img: Vec<f32> = (0..3 * n).map(|i| (i % 17) as f32 / 17.0).collect();
    let mut disp = vec![-1.0f32; n];
    let mut m: *mut LsModel = ptr::null_mut();
    unsafe {
        assert_eq!(ls_model_new(cstr("desk").as_ptr(), 1, &mut m), LsStatus::Ok);
        let mut dmax = 0u32;
        ls_model_max_disparity(m, &mut dmax);
        let s = ls_model_infer(m, img.as_ptr(), img.as_ptr(), h, w, disp.as_mut_ptr());
        assert_eq!(s, LsStatus::Ok, "{}", last_error());
        assert!(disp.iter().all(|d| (0.0..=(dmax - 1) as f32).contains(d)));
        assert_eq!(
            ls_model_infer(m, img.as_ptr(), ptr::null(), h, w, disp.as_mut_ptr()),
            LsStatus::NullPointer
        );
        ls_model_free(m);
    }
}

#[test]
fn metrics_and_empty_mask() {
    let gt = [10.0f32, 20.0, 0.0, 100.0];
    let pred = [14.0f32, 20.0, 5.0, 104.0];
    let mut out = LsMetrics::default();
    unsafe {
        assert_eq!(
            ls_metrics(
                pred.as_ptr(),
                gt.as_ptr(),
                ptr::null(),
                2,
                2,
                192.0,
                &mut out
            ),
            LsStatus::Ok
        );
        assert_eq!(out.valid_count, 3);
        assert!((out.epe - 8.0 / 3.0).abs() < 1e-12);
        assert!((out.d1 - 100.0 / 3.0).abs() < 1e-9);
        let none = [0u8; 4];
        assert_eq!(
            ls_metrics(
                pred.as_ptr(),
                gt.as_ptr(),
                none.as_ptr(),
                2,
                2,
                192.0,
                &mut out
            ),
            LsStatus::EmptyMask
        );
    }
}

#[test]
fn pfm_round_trip_through_owned_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(dir.path().join("d.pfm").to_str().unwrap());
    let data: Vec<f32> = (0..6).map(|i| i as f32 * 1.5 - 2.0).collect();
    unsafe {
        assert_eq!(
            ls_pfm_write(path.as_ptr(), data.as_ptr(), 2, 3),
            LsStatus::Ok
        );
        let (mut buf, mut h, mut w) = (ptr::null_mut(), 0u32, 0u32);
        assert_eq!(
            ls_pfm_read(path.as_ptr(), &mut buf, &mut h, &mut w),
            LsStatus::Ok
        );
        assert_eq!((h, w), (2, 3));
        let back = std::slice::from_raw_parts(buf, 6);
        assert!(back
            .iter()
            .zip(&data)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        ls_buffer_free(buf, 6);

        std::fs::write(dir.path().join("bad.pfm"), b"P7\n1 1\n-1\n").unwrap();
        let bad = cstr(dir.path().join("bad.pfm").to_str().unwrap());
        assert_eq!(
            ls_pfm_read(bad.as_ptr(), &mut buf, &mut h, &mut w),
            LsStatus::Format
        );
        assert!(last_error().contains("byte"));
    }
}

#[test]
fn synth_pairs_are_reproducible_and_warp_consistent() {
    let (h, w) = (32u32, 64u32);
    let n = (h * w) as usize;
    let gen = |seed| {
        let (mut l, mut r, mut g, mut v) = (
            vec![0f32; 3 * n],
            vec![0f32; 3 * n],
            vec![0f32; n],
            vec![0u8; n],
        );
        let s = unsafe {
            ls_synth_generate(
                seed,
                h,
                w,
                2,
                1,
                15,
                l.as_mut_ptr(),
                r.as_mut_ptr(),
                g.as_mut_ptr(),
                v.as_mut_ptr(),
            )
        };
        assert_eq!(s, LsStatus::Ok);
        (l, r, g, v)
    };
    let a = gen(9);
    assert_eq!(a, gen(9));
    let (l, r, g, v) = a;
    for y in 0..h as usize {
        for x in 0..w as usize {
            let i = y * w as usize + x;
            if v[i] == 1 {
                let xs = x - g[i] as usize;
                for c in 0..3 {
                    assert_eq!(l[c * n + i], r[c * n + y * w as usize + xs]);
                }
            }
        }
    }
    let mut dummy = vec![0f32; 3 * n];
    let status = unsafe {
        ls_synth_generate(
            0,
            30,
            w,
            2,
            1,
            15,
            dummy.as_mut_ptr(),
            dummy.as_mut_ptr(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, LsStatus::Config);
}

#[test]
fn header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/leanstereo.h"))
            .unwrap();
    for name in [
        "typedef struct LsModel LsModel",
        "LS_STATUS_OK = 0",
        "LS_STATUS_PANIC",
        "ls_model_new",
        "ls_model_load",
        "ls_model_save",
        "ls_model_free",
        "ls_model_infer",
        "ls_model_param_count",
        "ls_model_macs",
        "ls_metrics",
        "ls_pfm_read",
        "ls_pfm_write",
        "ls_buffer_free",
        "ls_synth_generate",
        "ls_last_error_message",
    ] {
        assert!(header.contains(name), "header lacks {}", name);
    }
}
