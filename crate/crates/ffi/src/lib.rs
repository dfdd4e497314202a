//! C ABI over the `actshift` core.
//!
//! Every fallible function returns an [`ActStatus`]. On failure a message is
//! kept per thread and can be read with [`act_last_error`]. Arrays are passed
//! as pointer plus length; similarity and count matrices are row-major with
//! one row per image. Output buffers are owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use actshift::act::{select_thresholds, ActConfig};
use actshift::detection::{BBox, DetectionRecord};
use actshift::distribution::{default_class_names, kl_divergence, ClassRatio};
use actshift::regression::{merge_predictions, shift_prediction, PredictConfig};
use actshift::similarity::SimilarityVector;
use actshift::{dynamic_objects_per_image, Error, LabelledExample, RatioPredictor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    InsufficientData = 4,
    Panic = 5,
}

/// Fitted ratio predictor.
pub struct ActPredictor {
    inner: RatioPredictor,
}

/// One detection. `bbox` is `(x1, y1, x2, y2)`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ActDetection {
    pub image: u64,
    pub class_id: u32,
    pub score: f64,
    pub bbox: [f64; 4],
}

/// Objects-per-image search settings. A non-positive or NaN `n_o_cap`
/// selects the automatic cap.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ActParams {
    pub tau: f64,
    pub delta_n_o: f64,
    pub reliable_fraction: f64,
    pub n_o_cap: f64,
}

/// Predicted class ratios, each of `n_classes` values.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ActPredictionBuffers {
    pub absolute: *mut f64,
    pub relative: *mut f64,
    pub merged: *mut f64,
    pub squared: *mut f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(ActStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            e if e.is_data_insufficiency() => ActStatus::InsufficientData,
            Error::Dimension(_) => ActStatus::Dimension,
            _ => ActStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(ActStatus::NullPointer, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ActStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ActStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ActStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a, T>(p: *mut T, n: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn ratio(p: *const f64, n: usize, name: &str) -> Result<ClassRatio, Failure> {
    Ok(ClassRatio::new(
        default_class_names(n),
        input(p, n, name)?.to_vec(),
    )?)
}

unsafe fn detections(p: *const ActDetection, n: usize) -> Result<Vec<DetectionRecord>, Failure> {
    input(p, n, "detections")?
        .iter()
        .map(|d| {
            let [x1, y1, x2, y2] = d.bbox;
            let b = BBox::new(x1, y1, x2, y2)?;
            Ok(DetectionRecord::new(
                d.image.to_string(),
                d.class_id as usize,
                b,
                d.score,
            )?)
        })
        .collect()
}

fn similarity_rows(rows: &[f64], n_images: usize, n_classes: usize) -> Vec<SimilarityVector> {
    (0..n_images)
        .map(|i| SimilarityVector {
            image_id: i.to_string(),
            scores: rows[i * n_classes..(i + 1) * n_classes].to_vec(),
        })
        .collect()
}

fn matrix_len(n_images: usize, n_classes: usize) -> Result<usize, Failure> {
    n_images
        .checked_mul(n_classes)
        .ok_or_else(|| Failure(ActStatus::InvalidArgument, "matrix size overflows".into()))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn act_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn act_default_params() -> ActParams {
    let c = ActConfig::default();
    ActParams {
        tau: c.tau,
        delta_n_o: c.delta_n_o,
        reliable_fraction: c.reliable_fraction,
        n_o_cap: 0.0,
    }
}

/// KL divergence `D(p || q)` in nats, with ε-smoothing.
///
/// # Safety
/// `p` and `q` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn act_kl_divergence(
    p: *const f64,
    q: *const f64,
    n: usize,
    out: *mut f64,
) -> ActStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = kl_divergence(&ratio(p, n, "p")?, &ratio(q, n, "q")?)?;
        Ok(())
    })
}

/// Normalized geometric mean of the absolute and relative predictions.
///
/// # Safety
/// All pointers must reference `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn act_merge(r_a: *const f64, r_r: *const f64, n: usize, out: *mut f64) -> ActStatus {
    guard(|| {
        let m = merge_predictions(&ratio(r_a, n, "r_a")?, &ratio(r_r, n, "r_r")?)?;
        output(out, n, "out")?.copy_from_slice(m.values());
        Ok(())
    })
}

/// Shift-corrected prediction `r_l · (merge / r_l)^exponent`, normalized.
/// An exponent of 2 is the squared prediction.
///
/// # Safety
/// All pointers must reference `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn act_shift_prediction(
    r_label: *const f64,
    r_a: *const f64,
    r_r: *const f64,
    n: usize,
    exponent: f64,
    out: *mut f64,
) -> ActStatus {
    guard(|| {
        let s = shift_prediction(
            &ratio(r_label, n, "r_label")?,
            &ratio(r_a, n, "r_a")?,
            &ratio(r_r, n, "r_r")?,
            exponent,
        )?;
        output(out, n, "out")?.copy_from_slice(s.values());
        Ok(())
    })
}

/// Fits absolute and relative count models. `similarities` holds
/// `n_images × n_classes` values, `counts` the matching object counts.
/// On success `*out` owns a predictor to release with [`act_predictor_free`].
///
/// # Safety
/// Input arrays must hold `n_images * n_classes` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn act_predictor_fit(
    similarities: *const f64,
    counts: *const u32,
    n_images: usize,
    n_classes: usize,
    out: *mut *mut ActPredictor,
) -> ActStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let len = matrix_len(n_images, n_classes)?;
        let sims = input(similarities, len, "similarities")?;
        let counts = input(counts, len, "counts")?;
        let examples: Vec<LabelledExample> = similarity_rows(sims, n_images, n_classes)
            .into_iter()
            .enumerate()
            .map(|(i, similarity)| LabelledExample {
                similarity,
                counts: counts[i * n_classes..(i + 1) * n_classes].to_vec(),
            })
            .collect();
        let inner = RatioPredictor::fit(&examples, default_class_names(n_classes))?;
        *out = Box::into_raw(Box::new(ActPredictor { inner }));
        Ok(())
    })
}

/// Number of classes of a fitted predictor; 0 for null.
///
/// # Safety
/// `predictor` must be null or come from [`act_predictor_fit`].
#[no_mangle]
pub unsafe extern "C" fn act_predictor_n_classes(predictor: *const ActPredictor) -> usize {
    predictor.as_ref().map_or(0, |p| p.inner.labelled_prior.len())
}

/// Predicts the class ratio of an unlabelled set. Any null buffer in `out`
/// is skipped.
///
/// # Safety
/// `similarities` must hold `n_images * n_classes` values for the predictor's
/// class count; each non-null buffer must hold `n_classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn act_predictor_predict(
    predictor: *const ActPredictor,
    similarities: *const f64,
    n_images: usize,
    shift_exponent: f64,
    out: ActPredictionBuffers,
) -> ActStatus {
    guard(|| {
        let p = &predictor.as_ref().ok_or_else(|| null("predictor"))?.inner;
        let n = p.labelled_prior.len();
        let sims = input(similarities, matrix_len(n_images, n)?, "similarities")?;
        let cfg = PredictConfig {
            shift_exponent,
            ..PredictConfig::default()
        };
        let r = p.predict(&similarity_rows(sims, n_images, n), &cfg)?;
        for (buf, ratio) in [
            (out.absolute, &r.absolute),
            (out.relative, &r.relative),
            (out.merged, &r.merged),
            (out.squared, &r.squared),
        ] {
            if !buf.is_null() {
                slice::from_raw_parts_mut(buf, n).copy_from_slice(ratio.values());
            }
        }
        Ok(())
    })
}

/// Releases a predictor. Null is ignored.
///
/// # Safety
/// `predictor` must be null or come from [`act_predictor_fit`] and not be
/// freed twice.
#[no_mangle]
pub unsafe extern "C" fn act_predictor_free(predictor: *mut ActPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// Per-class thresholds selecting the top `counts[c]` detections of class
/// `c`. Classes with a zero quota or no detections get a threshold above
/// every score.
///
/// # Safety
/// `detections` must hold `n_detections` records; `counts` and
/// `out_thresholds` must hold `n_classes` elements.
#[no_mangle]
pub unsafe extern "C" fn act_select_thresholds(
    detections: *const ActDetection,
    n_detections: usize,
    counts: *const usize,
    n_classes: usize,
    out_thresholds: *mut f64,
) -> ActStatus {
    guard(|| {
        let dets = detections_checked(detections, n_detections, n_classes)?;
        let counts = input(counts, n_classes, "counts")?;
        let t = select_thresholds(&dets, counts);
        output(out_thresholds, n_classes, "out_thresholds")?.copy_from_slice(&t.thresholds);
        Ok(())
    })
}

unsafe fn detections_checked(
    p: *const ActDetection,
    n: usize,
    n_classes: usize,
) -> Result<Vec<DetectionRecord>, Failure> {
    let dets = detections(p, n)?;
    if let Some(d) = dets.iter().find(|d| d.class_id >= n_classes) {
        return Err(Failure(
            ActStatus::Dimension,
            format!("detection class {} outside {n_classes} classes", d.class_id),
        ));
    }
    Ok(dets)
}

/// Objects-per-image budget whose pseudo-labels keep a mean confidence of at
/// least `params.tau`. `params` may be null for the defaults.
///
/// # Safety
/// `detections` must hold `n_detections` records and `ratio_values` `n_classes`
/// doubles; `params` must be null or valid; `out_n_o` must be writable.
#[no_mangle]
pub unsafe extern "C" fn act_dynamic_objects_per_image(
    detections: *const ActDetection,
    n_detections: usize,
    ratio_values: *const f64,
    n_classes: usize,
    n_unlabelled: usize,
    params: *const ActParams,
    out_n_o: *mut f64,
) -> ActStatus {
    guard(|| {
        let out = out_n_o.as_mut().ok_or_else(|| null("out_n_o"))?;
        let dets = detections_checked(detections, n_detections, n_classes)?;
        let r = ratio(ratio_values, n_classes, "ratio")?;
        let p = params.as_ref().copied().unwrap_or_else(|| act_default_params());
        let cfg = ActConfig {
            tau: p.tau,
            delta_n_o: p.delta_n_o,
            reliable_fraction: p.reliable_fraction,
            n_o_cap: (p.n_o_cap > 0.0).then_some(p.n_o_cap),
        };
        cfg.validate()?;
        *out = dynamic_objects_per_image(&dets, &r, n_unlabelled, &cfg)?;
        Ok(())
    })
}
