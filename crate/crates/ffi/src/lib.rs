//! C ABI over the simulator.
//!
//! Objects cross the boundary as opaque handles created by `vt_*_new` and
//! released by the matching `vt_*_free`. Every fallible call returns a
//! [`VtStatus`]; on failure the message is available from
//! [`vt_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vitactip::config::Config;
use vitactip::conversion::image_similarity;
use vitactip::dataset::{generate, GenerationProtocol};
use vitactip::frame::Frame;
use vitactip::mechanics::solve_contact;
use vitactip::optics::{add_pixel_noise, RenderPass, SceneObject};
use vitactip::protocol::Task;
use vitactip::sensor::{build_sensor, SensorMode, SensorModel};
use vitactip::stimulus::{Placement, Stimulus, StimulusPose};
use vitactip::Error;

/// Result of every fallible call. Values 1 to 3 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtStatus {
    Ok = 0,
    /// Invalid configuration or arguments.
    Validation = 1,
    /// Solver failure or infeasible contact.
    Runtime = 2,
    Io = 3,
    NullPointer = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtSensorMode {
    TacTip = 0,
    ViTac = 1,
    ViTacTip = 2,
}

impl From<VtSensorMode> for SensorMode {
    fn from(m: VtSensorMode) -> Self {
        match m {
            VtSensorMode::TacTip => SensorMode::TacTip,
            VtSensorMode::ViTac => SensorMode::ViTac,
            VtSensorMode::ViTacTip => SensorMode::ViTacTip,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtStimulusKind {
    /// `size_mm` is the line spacing; ridges and grooves are 1 mm.
    Grating = 0,
    /// `size_mm` is the cube side.
    SquareEdge = 1,
    /// `size_mm` is the radius.
    Sphere = 2,
    /// `size_mm` is ignored.
    FlatPlate = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VtStimulus {
    pub kind: VtStimulusKind,
    pub size_mm: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VtPose {
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub theta_deg: f64,
    pub shear_x_mm: f64,
    pub shear_y_mm: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VtWrench {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub in_contact: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtTask {
    Grating = 0,
    Pose = 1,
    Force = 2,
}

/// Sensor geometry and configuration, shared by all modes.
pub struct VtSensor {
    config: Config,
    model: SensorModel,
}

/// An RGB8 image, row-major, 3 bytes per pixel.
pub struct VtFrame {
    frame: Frame,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> VtStatus {
    match e.exit_code() {
        1 => VtStatus::Validation,
        2 => VtStatus::Runtime,
        _ => VtStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status and the last-error message.
fn guard(f: impl FnOnce() -> Result<(), (VtStatus, String)>) -> VtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VtStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside the simulator".into());
            VtStatus::Panic
        }
    }
}

fn fail(e: Error) -> (VtStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (VtStatus, String) {
    (VtStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, (VtStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (VtStatus::Validation, format!("`{name}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn vt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a sensor from a TOML/JSON config file, or the defaults when
/// `config_path` is NULL.
///
/// # Safety
/// `config_path` must be NULL or a NUL-terminated string; `out` must be a
/// valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn vt_sensor_new(config_path: *const c_char, out: *mut *mut VtSensor) -> VtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_path.is_null() {
            Config::default()
        } else {
            Config::load(&path_arg(config_path, "config_path")?).map_err(fail)?
        };
        let model = build_sensor(&config.sensor).map_err(fail)?;
        *out = Box::into_raw(Box::new(VtSensor { config, model }));
        Ok(())
    })
}

/// # Safety
/// `sensor` must be NULL or a handle from [`vt_sensor_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vt_sensor_free(sensor: *mut VtSensor) {
    if !sensor.is_null() {
        drop(Box::from_raw(sensor));
    }
}

/// Number of pins on the sensor, 0 for a NULL handle.
///
/// # Safety
/// `sensor` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vt_sensor_pin_count(sensor: *const VtSensor) -> u32 {
    sensor.as_ref().map_or(0, |s| s.model.pin_count() as u32)
}

fn stimulus_of(s: &VtStimulus) -> Stimulus {
    match s.kind {
        VtStimulusKind::Grating => Stimulus::grating(s.size_mm),
        VtStimulusKind::SquareEdge => Stimulus::SquareEdge { side_mm: s.size_mm },
        VtStimulusKind::Sphere => Stimulus::Sphere { radius_mm: s.size_mm },
        VtStimulusKind::FlatPlate => Stimulus::FlatPlate,
    }
}

/// Solves the contact of `stimulus` at `pose` and renders the frame seen by
/// `mode` under `ambient_light`. Either output may be NULL when not wanted.
///
/// # Safety
/// `sensor`, `stimulus` and `pose` must be valid pointers; `wrench_out` and
/// `frame_out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vt_sensor_render(
    sensor: *const VtSensor,
    mode: VtSensorMode,
    stimulus: *const VtStimulus,
    pose: *const VtPose,
    ambient_light: f64,
    wrench_out: *mut VtWrench,
    frame_out: *mut *mut VtFrame,
) -> VtStatus {
    guard(|| {
        let sensor = sensor.as_ref().ok_or_else(|| null("sensor"))?;
        let stimulus = stimulus_of(stimulus.as_ref().ok_or_else(|| null("stimulus"))?);
        let p = pose.as_ref().ok_or_else(|| null("pose"))?;
        let pose = StimulusPose {
            x_mm: p.x_mm,
            y_mm: p.y_mm,
            z_mm: p.z_mm,
            theta_deg: p.theta_deg,
            shear_mm: (p.shear_x_mm, p.shear_y_mm),
        };
        let config = &sensor.config;
        let (state, wrench) = solve_contact(&sensor.model, &stimulus, &pose, &config.solver).map_err(fail)?;
        if let Some(w) = wrench_out.as_mut() {
            *w = VtWrench {
                fx: wrench.fx,
                fy: wrench.fy,
                fz: wrench.fz,
                px: wrench.px,
                py: wrench.py,
                pz: wrench.pz,
                in_contact: wrench.in_contact,
            };
        }
        if !frame_out.is_null() {
            let mut scene = config.render.scene(ambient_light).map_err(fail)?;
            scene.object = Some(SceneObject {
                placement: Placement::at_pose(&sensor.model, stimulus, &pose),
                albedo: config.render.object_albedo,
            });
            let pass = RenderPass::new(&sensor.model, &state, &scene, &config.sensor).map_err(fail)?;
            let spec = SensorMode::from(mode).apply_to(&config.sensor, config.sensor.transparency_alpha);
            let mut frame = pass.frame(&spec).map_err(fail)?;
            add_pixel_noise(&mut frame, config.render.pixel_noise_std, 0);
            *frame_out = Box::into_raw(Box::new(VtFrame { frame }));
        }
        Ok(())
    })
}

/// # Safety
/// `frame` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vt_frame_free(frame: *mut VtFrame) {
    if !frame.is_null() {
        drop(Box::from_raw(frame));
    }
}

/// # Safety
/// `frame` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vt_frame_width(frame: *const VtFrame) -> u32 {
    frame.as_ref().map_or(0, |f| f.frame.width)
}

/// # Safety
/// `frame` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vt_frame_height(frame: *const VtFrame) -> u32 {
    frame.as_ref().map_or(0, |f| f.frame.height)
}

/// Pointer to `width * height * 3` bytes owned by the frame, or NULL.
///
/// # Safety
/// `frame` must be NULL or a live handle; the data lives as long as the frame.
#[no_mangle]
pub unsafe extern "C" fn vt_frame_data(frame: *const VtFrame) -> *const u8 {
    frame.as_ref().map_or(ptr::null(), |f| f.frame.pixels.as_ptr())
}

/// # Safety
/// `frame` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vt_frame_save_png(frame: *const VtFrame, path: *const c_char) -> VtStatus {
    guard(|| {
        let frame = frame.as_ref().ok_or_else(|| null("frame"))?;
        let path = path_arg(path, "path")?;
        frame.frame.save_png(&path).map_err(fail)
    })
}

/// SSIM on luminance (8x8 windows) and PSNR over all channels.
///
/// # Safety
/// `a` and `b` must be live handles; `ssim_out` and `psnr_out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vt_frame_similarity(
    a: *const VtFrame,
    b: *const VtFrame,
    ssim_out: *mut f64,
    psnr_out: *mut f64,
) -> VtStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("a"))?;
        let b = b.as_ref().ok_or_else(|| null("b"))?;
        if ssim_out.is_null() || psnr_out.is_null() {
            return Err(null("ssim_out/psnr_out"));
        }
        let (ssim, psnr) = image_similarity(&a.frame, &b.frame).map_err(fail)?;
        *ssim_out = ssim;
        *psnr_out = psnr;
        Ok(())
    })
}

/// Generates a dataset of `samples` samples (per class for gratings) in all
/// three modes into `out_dir`. `config_path` may be NULL for the defaults.
///
/// # Safety
/// `out_dir` must be a NUL-terminated string; `config_path` NULL or one.
#[no_mangle]
pub unsafe extern "C" fn vt_generate_dataset(
    config_path: *const c_char,
    task: VtTask,
    samples: u32,
    seed: u64,
    out_dir: *const c_char,
) -> VtStatus {
    guard(|| {
        let out = path_arg(out_dir, "out_dir")?;
        let mut config = if config_path.is_null() {
            Config::default()
        } else {
            Config::load(&path_arg(config_path, "config_path")?).map_err(fail)?
        };
        let task = match task {
            VtTask::Grating => Task::Grating,
            VtTask::Pose => Task::Pose,
            VtTask::Force => Task::Force,
        };
        let n = samples as usize;
        config.protocol.grating.samples_per_class = n;
        config.protocol.pose.samples = n;
        config.protocol.force.samples = n;
        let protocol = GenerationProtocol::new(task, &config.protocol, seed, &SensorMode::ALL, false);
        generate(&config, &protocol, &out).map_err(fail)?;
        Ok(())
    })
}
