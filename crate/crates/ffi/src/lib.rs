//! C ABI over the rbfinet library: opaque network handles, status codes,
//! and a thread-local last-error message. The generated header lives in
//! include/rbfinet.h.
//!
//! Ownership rules: every handle returned through an out-pointer belongs to
//! the caller and must be released with rbfi_network_free. Buffers are
//! always caller-allocated; lengths are checked before any write. No call
//! unwinds across the boundary: a panic is caught and reported as
//! RBFI_STATUS_PANIC.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rbfinet::attack;
use rbfinet::checkpoint;
use rbfinet::error::Error;
use rbfinet::graph::Mode;
use rbfinet::network::{init_network, parse_geometry, Network};
use rbfinet::sensitivity::network_report;
use rbfinet::tensor::Tensor;

/// Opaque handle to a network.
pub struct RbfiNetwork(Network);

/// Result of every fallible call. Inspect rbfi_last_error_message for
/// details on anything other than OK.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RbfiStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Config = 4,
    Format = 5,
    Integrity = 6,
    Usage = 7,
    Dimension = 8,
    Io = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: RbfiStatus, msg: &str) -> RbfiStatus {
    set_error(msg);
    status
}

fn fail_with(err: &Error) -> RbfiStatus {
    let status = match err.category() {
        "parse" => RbfiStatus::Parse,
        "config" => RbfiStatus::Config,
        "format" => RbfiStatus::Format,
        "integrity" => RbfiStatus::Integrity,
        "usage" => RbfiStatus::Usage,
        "dimension" => RbfiStatus::Dimension,
        _ => RbfiStatus::Io,
    };
    fail(status, &err.to_string())
}

fn guarded(f: impl FnOnce() -> RbfiStatus) -> RbfiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(
            RbfiStatus::Panic,
            "internal panic caught at the ABI boundary",
        ),
    }
}

/// # Safety
/// `s` must be a valid NUL-terminated string or null.
unsafe fn utf8<'a>(s: *const c_char, what: &str) -> Result<&'a str, RbfiStatus> {
    if s.is_null() {
        return Err(fail(RbfiStatus::NullArgument, &format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(s) }.to_str().map_err(|_| {
        fail(
            RbfiStatus::InvalidUtf8,
            &format!("{what} is not valid utf-8"),
        )
    })
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rbfi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Create a freshly initialized network from a geometry string such as
/// "R(128,128,10|mixed,mixed,or)". Pass u_max <= 0 for the default (3.0).
///
/// # Safety
/// `geometry` must be NUL-terminated; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn rbfi_network_new(
    geometry: *const c_char,
    u_max: f64,
    seed: u64,
    out: *mut *mut RbfiNetwork,
) -> RbfiStatus {
    guarded(|| {
        if out.is_null() {
            return fail(RbfiStatus::NullArgument, "out is null");
        }
        let geo = match unsafe { utf8(geometry, "geometry") } {
            Ok(g) => g,
            Err(s) => return s,
        };
        let mut spec = match parse_geometry(geo) {
            Ok(s) => s,
            Err(e) => return fail_with(&e),
        };
        if u_max > 0.0 {
            spec.u_max = u_max;
        }
        let net = init_network(&spec, seed);
        unsafe { *out = Box::into_raw(Box::new(RbfiNetwork(net))) };
        RbfiStatus::Ok
    })
}

/// Load a checkpoint written by rbfi_network_save or the CLI.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn rbfi_network_load(
    path: *const c_char,
    out: *mut *mut RbfiNetwork,
) -> RbfiStatus {
    guarded(|| {
        if out.is_null() {
            return fail(RbfiStatus::NullArgument, "out is null");
        }
        let p = match unsafe { utf8(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match checkpoint::load(Path::new(p)) {
            Ok(net) => {
                unsafe { *out = Box::into_raw(Box::new(RbfiNetwork(net))) };
                RbfiStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// # Safety
/// `net` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rbfi_network_save(
    net: *const RbfiNetwork,
    path: *const c_char,
) -> RbfiStatus {
    guarded(|| {
        let Some(net) = (unsafe { net.as_ref() }) else {
            return fail(RbfiStatus::NullArgument, "net is null");
        };
        let p = match unsafe { utf8(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match checkpoint::save(&net.0, Path::new(p)) {
            Ok(()) => RbfiStatus::Ok,
            Err(e) => fail_with(&e),
        }
    })
}

/// Release a handle. Null is a no-op; anything else must have come from
/// this library and must not be used afterwards.
///
/// # Safety
/// `net` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rbfi_network_free(net: *mut RbfiNetwork) {
    if !net.is_null() {
        drop(unsafe { Box::from_raw(net) });
    }
}

/// Number of input features; 0 if the handle is null.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rbfi_network_input_dim(net: *const RbfiNetwork) -> usize {
    unsafe { net.as_ref() }.map_or(0, |n| n.0.input_dim())
}

/// Number of outputs; 0 if the handle is null.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rbfi_network_output_dim(net: *const RbfiNetwork) -> usize {
    unsafe { net.as_ref() }.map_or(0, |n| n.0.output_dim())
}

unsafe fn slice_arg<'a>(
    ptr: *const f64,
    len: usize,
    want: usize,
    what: &str,
) -> Result<&'a [f64], RbfiStatus> {
    if ptr.is_null() {
        return Err(fail(RbfiStatus::NullArgument, &format!("{what} is null")));
    }
    if len != want {
        return Err(fail(
            RbfiStatus::Dimension,
            &format!("{what} has length {len}, want {want}"),
        ));
    }
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

/// Evaluate one example: x has input_dim entries, out receives output_dim.
///
/// # Safety
/// `net` must be live; `x` and `out` must point to buffers of the given
/// lengths.
#[no_mangle]
pub unsafe extern "C" fn rbfi_network_forward(
    net: *const RbfiNetwork,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> RbfiStatus {
    guarded(|| {
        let Some(net) = (unsafe { net.as_ref() }) else {
            return fail(RbfiStatus::NullArgument, "net is null");
        };
        let xs = match unsafe { slice_arg(x, x_len, net.0.input_dim(), "x") } {
            Ok(s) => s,
            Err(e) => return e,
        };
        if out.is_null() {
            return fail(RbfiStatus::NullArgument, "out is null");
        }
        if out_len != net.0.output_dim() {
            return fail(
                RbfiStatus::Dimension,
                &format!("out has length {out_len}, want {}", net.0.output_dim()),
            );
        }
        let xt = Tensor::new(vec![1, xs.len()], xs.to_vec()).unwrap();
        match net.0.forward(&xt) {
            Ok(y) => {
                unsafe { std::slice::from_raw_parts_mut(out, out_len) }.copy_from_slice(y.data());
                RbfiStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Predicted class of one example (argmax, lowest index on ties).
///
/// # Safety
/// `net` must be live; `x` must have x_len entries; `out_class` writable.
#[no_mangle]
pub unsafe extern "C" fn rbfi_network_classify(
    net: *const RbfiNetwork,
    x: *const f64,
    x_len: usize,
    out_class: *mut usize,
) -> RbfiStatus {
    guarded(|| {
        let Some(net) = (unsafe { net.as_ref() }) else {
            return fail(RbfiStatus::NullArgument, "net is null");
        };
        let xs = match unsafe { slice_arg(x, x_len, net.0.input_dim(), "x") } {
            Ok(s) => s,
            Err(e) => return e,
        };
        if out_class.is_null() {
            return fail(RbfiStatus::NullArgument, "out_class is null");
        }
        let xt = Tensor::new(vec![1, xs.len()], xs.to_vec()).unwrap();
        match net.0.classify(&xt) {
            Ok(c) => {
                unsafe { *out_class = c[0] };
                RbfiStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// The network's closed-form sensitivity bound: a guaranteed ceiling on
/// |output change| per unit of infinity-norm input change.
///
/// # Safety
/// `net` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rbfi_network_sensitivity_bound(
    net: *const RbfiNetwork,
    out: *mut f64,
) -> RbfiStatus {
    guarded(|| {
        let Some(net) = (unsafe { net.as_ref() }) else {
            return fail(RbfiStatus::NullArgument, "net is null");
        };
        if out.is_null() {
            return fail(RbfiStatus::NullArgument, "out is null");
        }
        unsafe { *out = network_report(&net.0).network_bound };
        RbfiStatus::Ok
    })
}

/// One FGSM attack step against a single example: writes the adversarial
/// input (within epsilon of x, inside [0,1]) to out. pseudo selects the
/// pseudogradient backward rules; pass false for true gradients.
///
/// # Safety
/// `net` must be live; `x` and `out` must have x_len == out_len entries.
#[no_mangle]
pub unsafe extern "C" fn rbfi_network_fgsm(
    net: *const RbfiNetwork,
    x: *const f64,
    x_len: usize,
    label: u32,
    epsilon: f64,
    pseudo: bool,
    out: *mut f64,
    out_len: usize,
) -> RbfiStatus {
    guarded(|| {
        let Some(net) = (unsafe { net.as_ref() }) else {
            return fail(RbfiStatus::NullArgument, "net is null");
        };
        let xs = match unsafe { slice_arg(x, x_len, net.0.input_dim(), "x") } {
            Ok(s) => s,
            Err(e) => return e,
        };
        if out.is_null() {
            return fail(RbfiStatus::NullArgument, "out is null");
        }
        if out_len != x_len {
            return fail(
                RbfiStatus::Dimension,
                &format!("out has length {out_len}, want {x_len}"),
            );
        }
        if label > 255 || label as usize >= net.0.output_dim() {
            return fail(
                RbfiStatus::Usage,
                &format!(
                    "label {label} out of range for {} outputs",
                    net.0.output_dim()
                ),
            );
        }
        let xt = Tensor::new(vec![1, xs.len()], xs.to_vec()).unwrap();
        let mode = if pseudo { Mode::Pseudo } else { Mode::True };
        match attack::fgsm(&net.0, &xt, &[label as u8], epsilon, mode) {
            Ok(adv) => {
                unsafe { std::slice::from_raw_parts_mut(out, out_len) }.copy_from_slice(adv.data());
                RbfiStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}
