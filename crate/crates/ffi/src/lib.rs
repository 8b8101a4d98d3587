//! C ABI over the au3d core: voxel grids, networks and the F1 formula.
//!
//! Every fallible call returns an [`Au3dStatus`]; on failure the message is
//! kept per thread and read back with [`au3d_last_error`]. Handles are opaque
//! and owned by the caller until passed to the matching `_free` function.
//! Byte-producing calls use a two-call protocol: pass a null buffer to learn
//! the required length, then call again with a buffer at least that large.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use au3d::metrics::{f1_frame, ConfusionCounts};
use au3d::neuralnet::{load_checkpoint, save_checkpoint, ArchitectureDescriptor, Input, NetError, Network, Variant};
use au3d::voxelizer::{encode_frame, VoxelGrid};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Au3dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed input data: degenerate landmarks, corrupt checkpoint bytes.
    DataError = 3,
    /// A non-finite value appeared during computation.
    NumericalError = 4,
    BufferTooSmall = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Au3dVariant {
    Binary = 0,
    ThreeClass = 1,
}

/// Opaque occupancy grid.
pub struct Au3dGrid(VoxelGrid);

/// Opaque trained or freshly initialized network.
pub struct Au3dNetwork(Network<f32>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(status: Au3dStatus, msg: impl Into<String>) -> Au3dStatus {
    set_error(msg);
    status
}

fn net_status(e: &NetError) -> Au3dStatus {
    match e {
        NetError::NonFinite(_) => Au3dStatus::NumericalError,
        NetError::ShapeMismatch(_) | NetError::InvalidDescriptor(_) => Au3dStatus::InvalidArgument,
        _ => Au3dStatus::DataError,
    }
}

fn guard(f: impl FnOnce() -> Au3dStatus) -> Au3dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == Au3dStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(Au3dStatus::Panic, "internal panic"),
    }
}

/// Copy `bytes` into `buf` under the two-call protocol.
unsafe fn emit_bytes(bytes: &[u8], buf: *mut u8, cap: usize, len_out: *mut usize) -> Au3dStatus {
    if len_out.is_null() {
        return fail(Au3dStatus::NullPointer, "len_out is null");
    }
    *len_out = bytes.len();
    if buf.is_null() {
        return Au3dStatus::Ok;
    }
    if cap < bytes.len() {
        return fail(Au3dStatus::BufferTooSmall, format!("need {} bytes, got {cap}", bytes.len()));
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    Au3dStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn au3d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message (NUL-terminated) into `buf`.
/// Returns the buffer size needed, including the NUL; the message is
/// truncated when `cap` is smaller. An empty message means no error.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn au3d_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Encode `n_points` landmarks (`xyz` holds `3 * n_points` doubles, x y z per
/// point) into a `c x c x c` grid.
///
/// # Safety
/// `xyz` must be valid for `3 * n_points` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn au3d_grid_encode(xyz: *const f64, n_points: usize, c: usize, out: *mut *mut Au3dGrid) -> Au3dStatus {
    guard(|| {
        if xyz.is_null() || out.is_null() {
            return fail(Au3dStatus::NullPointer, "xyz or out is null");
        }
        let flat = slice::from_raw_parts(xyz, 3 * n_points);
        let pts: Vec<[f64; 3]> = flat.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
        match encode_frame(&pts, c) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(Au3dGrid(g)));
                Au3dStatus::Ok
            }
            Err(au3d::voxelizer::VoxelError::InvalidC(c)) => {
                fail(Au3dStatus::InvalidArgument, format!("grid side must be at least 2, got {c}"))
            }
            Err(e) => fail(Au3dStatus::DataError, e.to_string()),
        }
    })
}

/// Parse a grid from its byte export.
///
/// # Safety
/// `bytes` must be valid for `len` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn au3d_grid_from_bytes(bytes: *const u8, len: usize, out: *mut *mut Au3dGrid) -> Au3dStatus {
    guard(|| {
        if bytes.is_null() || out.is_null() {
            return fail(Au3dStatus::NullPointer, "bytes or out is null");
        }
        match VoxelGrid::from_bytes(slice::from_raw_parts(bytes, len)) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(Au3dGrid(g)));
                Au3dStatus::Ok
            }
            Err(e) => fail(Au3dStatus::DataError, e.to_string()),
        }
    })
}

/// # Safety
/// `grid` must come from this library; `side` must be writable.
#[no_mangle]
pub unsafe extern "C" fn au3d_grid_side(grid: *const Au3dGrid, side: *mut usize) -> Au3dStatus {
    guard(|| match (grid.as_ref(), side.is_null()) {
        (Some(g), false) => {
            *side = g.0.side();
            Au3dStatus::Ok
        }
        _ => fail(Au3dStatus::NullPointer, "grid or side is null"),
    })
}

/// Occupancy of cell `(x, y, z)` as 0 or 1.
///
/// # Safety
/// `grid` must come from this library; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn au3d_grid_get(grid: *const Au3dGrid, x: usize, y: usize, z: usize, value: *mut u8) -> Au3dStatus {
    guard(|| {
        let Some(g) = grid.as_ref() else { return fail(Au3dStatus::NullPointer, "grid is null") };
        if value.is_null() {
            return fail(Au3dStatus::NullPointer, "value is null");
        }
        let c = g.0.side();
        if x >= c || y >= c || z >= c {
            return fail(Au3dStatus::InvalidArgument, format!("cell ({x}, {y}, {z}) outside a side-{c} grid"));
        }
        *value = g.0.get(x, y, z) as u8;
        Au3dStatus::Ok
    })
}

/// Number of occupied cells.
///
/// # Safety
/// `grid` must come from this library; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn au3d_grid_count(grid: *const Au3dGrid, count: *mut usize) -> Au3dStatus {
    guard(|| match (grid.as_ref(), count.is_null()) {
        (Some(g), false) => {
            *count = g.0.count();
            Au3dStatus::Ok
        }
        _ => fail(Au3dStatus::NullPointer, "grid or count is null"),
    })
}

/// Byte export of the grid (two-call protocol).
///
/// # Safety
/// `grid` must come from this library; `buf` null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn au3d_grid_to_bytes(grid: *const Au3dGrid, buf: *mut u8, cap: usize, len_out: *mut usize) -> Au3dStatus {
    guard(|| match grid.as_ref() {
        Some(g) => emit_bytes(&g.0.to_bytes(), buf, cap, len_out),
        None => fail(Au3dStatus::NullPointer, "grid is null"),
    })
}

/// # Safety
/// `grid` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn au3d_grid_free(grid: *mut Au3dGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Default architecture for `variant` (an [`Au3dVariant`] value) at grid side
/// `c`, initialized from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn au3d_network_new(
    variant: u32,
    c: usize,
    au_count: usize,
    seed: u64,
    out: *mut *mut Au3dNetwork,
) -> Au3dStatus {
    guard(|| {
        if out.is_null() {
            return fail(Au3dStatus::NullPointer, "out is null");
        }
        let v = match variant {
            v if v == Au3dVariant::Binary as u32 => Variant::Binary,
            v if v == Au3dVariant::ThreeClass as u32 => Variant::ThreeClass,
            other => return fail(Au3dStatus::InvalidArgument, format!("unknown variant {other}")),
        };
        let mut d = ArchitectureDescriptor::default_for(v);
        d.input_c = c;
        d.au_count = au_count;
        match Network::init(&d, seed) {
            Ok(n) => {
                *out = Box::into_raw(Box::new(Au3dNetwork(n)));
                Au3dStatus::Ok
            }
            Err(e) => fail(net_status(&e), e.to_string()),
        }
    })
}

/// Load a checkpoint.
///
/// # Safety
/// `bytes` must be valid for `len` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn au3d_network_load(bytes: *const u8, len: usize, out: *mut *mut Au3dNetwork) -> Au3dStatus {
    guard(|| {
        if bytes.is_null() || out.is_null() {
            return fail(Au3dStatus::NullPointer, "bytes or out is null");
        }
        match load_checkpoint(slice::from_raw_parts(bytes, len)) {
            Ok((n, _)) => {
                *out = Box::into_raw(Box::new(Au3dNetwork(n)));
                Au3dStatus::Ok
            }
            Err(e) => fail(Au3dStatus::DataError, e.to_string()),
        }
    })
}

/// Checkpoint bytes of the network (two-call protocol).
///
/// # Safety
/// `net` must come from this library; `buf` null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn au3d_network_save(net: *const Au3dNetwork, buf: *mut u8, cap: usize, len_out: *mut usize) -> Au3dStatus {
    guard(|| match net.as_ref() {
        Some(n) => emit_bytes(&save_checkpoint(&n.0, None), buf, cap, len_out),
        None => fail(Au3dStatus::NullPointer, "net is null"),
    })
}

/// Outputs per frame: the AU count for binary networks, three per AU otherwise.
///
/// # Safety
/// `net` must come from this library; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn au3d_network_output_len(net: *const Au3dNetwork, len: *mut usize) -> Au3dStatus {
    guard(|| match (net.as_ref(), len.is_null()) {
        (Some(n), false) => {
            let d = n.0.descriptor();
            *len = d.heads() * d.head_outputs();
            Au3dStatus::Ok
        }
        _ => fail(Au3dStatus::NullPointer, "net or len is null"),
    })
}

/// Probabilities for `n` grids, written frame-major into `out`, which must
/// hold `n * output_len` doubles.
///
/// # Safety
/// `grids` must hold `n` grid handles; `out` must be valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn au3d_network_predict(
    net: *const Au3dNetwork,
    grids: *const *const Au3dGrid,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> Au3dStatus {
    guard(|| {
        let Some(net) = net.as_ref() else { return fail(Au3dStatus::NullPointer, "net is null") };
        if grids.is_null() || out.is_null() {
            return fail(Au3dStatus::NullPointer, "grids or out is null");
        }
        let mut refs = Vec::with_capacity(n);
        for (i, &g) in slice::from_raw_parts(grids, n).iter().enumerate() {
            match g.as_ref() {
                Some(g) => refs.push(&g.0),
                None => return fail(Au3dStatus::NullPointer, format!("grid {i} is null")),
            }
        }
        let d = net.0.descriptor();
        let per = d.heads() * d.head_outputs();
        if out_len < n * per {
            return fail(Au3dStatus::BufferTooSmall, format!("need {} outputs, got {out_len}", n * per));
        }
        if n == 0 {
            return Au3dStatus::Ok;
        }
        match net.0.predict(&Input::Voxels(&refs)) {
            Ok(p) => {
                let dst = slice::from_raw_parts_mut(out, n * per);
                for (o, &v) in dst.iter_mut().zip(p.probs.data()) {
                    *o = v as f64;
                }
                Au3dStatus::Ok
            }
            Err(e) => fail(net_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `net` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn au3d_network_free(net: *mut Au3dNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// `2 tp / (2 tp + fp + fn)`, or 0 when the denominator is 0.
#[no_mangle]
pub extern "C" fn au3d_f1_frame(tp: u64, fp: u64, fn_: u64, tn: u64) -> f64 {
    f1_frame(&ConfusionCounts { tp, fp, fn_, tn })
}
