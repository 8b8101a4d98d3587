use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use au3d::neuralnet::{load_checkpoint, ArchitectureDescriptor, Input, Network, Variant};
use au3d::voxelizer::encode_frame;
use au3d_ffi::*;

fn points(seed: u64) -> Vec<f64> {
    let mut rng = au3d::rng::Stream::new(seed);
    (0..83 * 3).map(|_| rng.uniform_range(-50.0, 50.0)).collect()
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        au3d_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

unsafe fn grid(xyz: &[f64], c: usize) -> *mut Au3dGrid {
    let mut g = ptr::null_mut();
    assert_eq!(au3d_grid_encode(xyz.as_ptr(), xyz.len() / 3, c, &mut g), Au3dStatus::Ok);
    g
}

#[test]
fn grid_matches_core_encoder() {
    let xyz = points(1);
    let pts: Vec<[f64; 3]> = xyz.chunks(3).map(|p| [p[0], p[1], p[2]]).collect();
    let expected = encode_frame(&pts, 24).unwrap();
    unsafe {
        let g = grid(&xyz, 24);
        let (mut side, mut count) = (0, 0);
        assert_eq!(au3d_grid_side(g, &mut side), Au3dStatus::Ok);
        assert_eq!(au3d_grid_count(g, &mut count), Au3dStatus::Ok);
        assert_eq!((side, count), (24, expected.count()));
        for (x, y, z) in expected.active() {
            let mut v = 0;
            assert_eq!(au3d_grid_get(g, x, y, z, &mut v), Au3dStatus::Ok);
            assert_eq!(v, 1);
        }
        let mut v = 0;
        assert_eq!(au3d_grid_get(g, 24, 0, 0, &mut v), Au3dStatus::InvalidArgument);

        let mut len = 0;
        assert_eq!(au3d_grid_to_bytes(g, ptr::null_mut(), 0, &mut len), Au3dStatus::Ok);
        let mut small = vec![0u8; len - 1];
        assert_eq!(au3d_grid_to_bytes(g, small.as_mut_ptr(), small.len(), &mut len), Au3dStatus::BufferTooSmall);
        let mut buf = vec![0u8; len];
        assert_eq!(au3d_grid_to_bytes(g, buf.as_mut_ptr(), buf.len(), &mut len), Au3dStatus::Ok);
        assert_eq!(buf, expected.to_bytes());

        let mut back = ptr::null_mut();
        assert_eq!(au3d_grid_from_bytes(buf.as_ptr(), buf.len(), &mut back), Au3dStatus::Ok);
        let mut count2 = 0;
        au3d_grid_count(back, &mut count2);
        assert_eq!(count2, count);
        au3d_grid_free(back);
        au3d_grid_free(g);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(au3d_grid_encode(ptr::null(), 83, 24, &mut g), Au3dStatus::NullPointer);
        assert!(last_error().contains("null"));
        let flat = vec![1.0; 83 * 3];
        assert_eq!(au3d_grid_encode(flat.as_ptr(), 83, 24, &mut g), Au3dStatus::DataError);
        assert!(last_error().contains("degenerate"), "{}", last_error());
        let xyz = points(2);
        assert_eq!(au3d_grid_encode(xyz.as_ptr(), 83, 1, &mut g), Au3dStatus::InvalidArgument);
        assert_eq!(au3d_grid_encode(xyz.as_ptr(), 83, 24, &mut g), Au3dStatus::Ok);
        assert_eq!(last_error(), "");
        au3d_grid_free(g);

        let mut n = ptr::null_mut();
        assert_eq!(au3d_network_load(b"junk".as_ptr(), 4, &mut n), Au3dStatus::DataError);
        assert!(last_error().contains("magic"));
        assert_eq!(au3d_network_new(7, 24, 12, 0, &mut n), Au3dStatus::InvalidArgument);
        au3d_grid_free(ptr::null_mut());
        au3d_network_free(ptr::null_mut());
    }
}

#[test]
fn network_round_trip_and_predict() {
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(au3d_network_new(Au3dVariant::ThreeClass as u32, 12, 4, 5, &mut net), Au3dStatus::Ok);
        let mut per = 0;
        assert_eq!(au3d_network_output_len(net, &mut per), Au3dStatus::Ok);
        assert_eq!(per, 12);

        let mut len = 0;
        assert_eq!(au3d_network_save(net, ptr::null_mut(), 0, &mut len), Au3dStatus::Ok);
        let mut bytes = vec![0u8; len];
        assert_eq!(au3d_network_save(net, bytes.as_mut_ptr(), len, &mut len), Au3dStatus::Ok);
        let (core_net, _) = load_checkpoint(&bytes).unwrap();
        let mut d = ArchitectureDescriptor::default_for(Variant::ThreeClass);
        d.input_c = 12;
        d.au_count = 4;
        assert_eq!(core_net, Network::<f32>::init(&d, 5).unwrap());

        let mut loaded = ptr::null_mut();
        assert_eq!(au3d_network_load(bytes.as_ptr(), bytes.len(), &mut loaded), Au3dStatus::Ok);

        let xs = [points(3), points(4)];
        let grids: Vec<*mut Au3dGrid> = xs.iter().map(|x| grid(x, 12)).collect();
        let handles: Vec<*const Au3dGrid> = grids.iter().map(|&g| g as *const _).collect();
        let mut out = vec![0.0; 2 * per];
        assert_eq!(au3d_network_predict(loaded, handles.as_ptr(), 2, out.as_mut_ptr(), out.len() - 1), Au3dStatus::BufferTooSmall);
        assert_eq!(au3d_network_predict(loaded, handles.as_ptr(), 2, out.as_mut_ptr(), out.len()), Au3dStatus::Ok);

        let core_grids: Vec<_> = xs
            .iter()
            .map(|x| encode_frame(&x.chunks(3).map(|p| [p[0], p[1], p[2]]).collect::<Vec<_>>(), 12).unwrap())
            .collect();
        let refs: Vec<_> = core_grids.iter().collect();
        let p = core_net.predict(&Input::Voxels(&refs)).unwrap();
        let expected: Vec<f64> = p.probs.data().iter().map(|&v| v as f64).collect();
        assert_eq!(out, expected);
        for head in out.chunks(3) {
            assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        grids.into_iter().for_each(|g| au3d_grid_free(g));
        au3d_network_free(loaded);
        au3d_network_free(net);
    }
}

#[test]
fn f1_and_version() {
    assert!((au3d_f1_frame(3, 1, 2, 0) - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(au3d_f1_frame(0, 0, 0, 9), 0.0);
    let v = unsafe { CStr::from_ptr(au3d_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// The generated header must compile as C when a compiler is available.
#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/au3d.h");
    assert!(header.exists(), "build script did not write {}", header.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ Au3dGrid *g = 0; size_t n = 0; \
             return au3d_grid_count(g, &n) == AU3D_STATUS_NULL_POINTER ? 0 : AU3D_VARIANT_THREE_CLASS; }}\n",
            header.display()
        ),
    )
    .unwrap();
    match Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(status) => assert!(status.success(), "C compiler rejected the header"),
        Err(e) => eprintln!("skipping header compile check: no cc ({e})"),
    }
}
