//! Python bindings for the core geometry, mask-estimation, and imitation
//! loss operations. Build as a cdylib and import as `fine_imitate_py`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use fine_imitate_core::geometry;
use fine_imitate_core::imitation;
use fine_imitate_core::mask;
use fine_imitate_core::numerics::Tensor;

fn to_py_err(e: fine_imitate_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Axis-aligned box in pixel coordinates with an optional class id.
#[pyclass(name = "BBox")]
#[derive(Clone)]
struct PyBBox {
    inner: geometry::BBox,
}

#[pymethods]
impl PyBBox {
    #[new]
    #[pyo3(signature = (x1, y1, x2, y2, class_id = 0))]
    fn new(x1: f64, y1: f64, x2: f64, y2: f64, class_id: usize) -> PyResult<Self> {
        Ok(PyBBox {
            inner: geometry::BBox::with_class(x1, y1, x2, y2, class_id).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn x1(&self) -> f64 {
        self.inner.x1
    }
    #[getter]
    fn y1(&self) -> f64 {
        self.inner.y1
    }
    #[getter]
    fn x2(&self) -> f64 {
        self.inner.x2
    }
    #[getter]
    fn y2(&self) -> f64 {
        self.inner.y2
    }
    #[getter]
    fn class_id(&self) -> usize {
        self.inner.class_id
    }

    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn iou(&self, other: &PyBBox) -> f64 {
        geometry::iou(&self.inner, &other.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "BBox({}, {}, {}, {}, class_id={})",
            self.inner.x1, self.inner.y1, self.inner.x2, self.inner.y2, self.inner.class_id
        )
    }
}

/// K preset anchors tiled over a W x H feature lattice.
#[pyclass(name = "AnchorGrid")]
struct PyAnchorGrid {
    inner: geometry::AnchorGrid,
}

#[pymethods]
impl PyAnchorGrid {
    #[new]
    fn new(feat_w: usize, feat_h: usize, stride: usize, scales: Vec<f64>, ratios: Vec<f64>) -> PyResult<Self> {
        Ok(PyAnchorGrid {
            inner: geometry::AnchorGrid::build(feat_w, feat_h, stride, &scales, &ratios).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn feat_w(&self) -> usize {
        self.inner.feat_w
    }
    #[getter]
    fn feat_h(&self) -> usize {
        self.inner.feat_h
    }
    #[getter]
    fn stride(&self) -> usize {
        self.inner.stride
    }
    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn num_anchors(&self) -> usize {
        self.inner.num_anchors()
    }

    fn anchor(&self, i: usize, j: usize, k: usize) -> PyResult<PyBBox> {
        if i >= self.inner.feat_w || j >= self.inner.feat_h || k >= self.inner.k() {
            return Err(PyValueError::new_err(format!(
                "anchor index ({i}, {j}, {k}) out of range for {}x{}x{}",
                self.inner.feat_w,
                self.inner.feat_h,
                self.inner.k()
            )));
        }
        Ok(PyBBox {
            inner: *self.inner.anchor(i, j, k),
        })
    }

    /// IOU of one box against every anchor, flattened in (i, j, k) order.
    fn iou_map(&self, gt: &PyBBox) -> Vec<f64> {
        geometry::iou_map(&gt.inner, &self.inner, 0).values().to_vec()
    }
}

/// W x H binary imitation mask.
#[pyclass(name = "ImitationMask")]
#[derive(Clone)]
struct PyImitationMask {
    inner: mask::ImitationMask,
}

#[pymethods]
impl PyImitationMask {
    #[getter]
    fn w(&self) -> usize {
        self.inner.w
    }
    #[getter]
    fn h(&self) -> usize {
        self.inner.h
    }
    #[getter]
    fn n_positive(&self) -> usize {
        self.inner.n_positive()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<bool> {
        if i >= self.inner.w || j >= self.inner.h {
            return Err(PyValueError::new_err(format!(
                "cell ({i}, {j}) out of range for {}x{}",
                self.inner.w, self.inner.h
            )));
        }
        Ok(self.inner.get(i, j))
    }

    fn values(&self) -> Vec<bool> {
        self.inner.values().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("ImitationMask({}x{}, n_positive={})", self.inner.w, self.inner.h, self.inner.n_positive())
    }
}

/// Dense f64 tensor with an explicit dim list (row-major).
#[pyclass(name = "Tensor")]
#[derive(Clone)]
struct PyTensor {
    inner: Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(dims: Vec<usize>, values: Vec<f64>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: Tensor::from_vec(dims, values).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }
}

/// Intersection over union of two boxes.
#[pyfunction]
fn iou(a: &PyBBox, b: &PyBBox) -> f64 {
    geometry::iou(&a.inner, &b.inner)
}

/// Adaptive near-object mask: per ground truth, threshold the anchor IOU
/// map at `psi * max` and OR the kept locations. Returns the mask plus a
/// per-gt trace of (gt_index, max_iou, threshold, kept_count).
#[pyfunction]
fn estimate_mask(gts: Vec<PyBBox>, grid: &PyAnchorGrid, psi: f64) -> PyResult<(PyImitationMask, Vec<(usize, f64, f64, usize)>)> {
    let cfg = mask::MaskConfig::new(psi).map_err(to_py_err)?;
    let boxes: Vec<geometry::BBox> = gts.iter().map(|b| b.inner).collect();
    let (m, trace) = mask::estimate_mask(&boxes, &grid.inner, &cfg);
    Ok((
        PyImitationMask { inner: m },
        trace
            .per_gt
            .iter()
            .map(|t| (t.gt_index, t.max_iou, t.threshold, t.kept_count))
            .collect(),
    ))
}

/// Constant-threshold mask (the hard-threshold comparison of the adaptive
/// rule).
#[pyfunction]
fn estimate_mask_hard(gts: Vec<PyBBox>, grid: &PyAnchorGrid, f_const: f64) -> PyResult<PyImitationMask> {
    let boxes: Vec<geometry::BBox> = gts.iter().map(|b| b.inner).collect();
    Ok(PyImitationMask {
        inner: mask::estimate_mask_hard(&boxes, &grid.inner, f_const).map_err(to_py_err)?,
    })
}

/// Mask of feature cells whose image rectangle overlaps a ground-truth box.
#[pyfunction]
fn gt_projection_mask(gts: Vec<PyBBox>, stride: usize, feat_w: usize, feat_h: usize) -> PyResult<PyImitationMask> {
    let boxes: Vec<geometry::BBox> = gts.iter().map(|b| b.inner).collect();
    Ok(PyImitationMask {
        inner: mask::gt_projection_mask(&boxes, stride, feat_w, feat_h).map_err(to_py_err)?,
    })
}

/// Image-space rectangles of the set mask cells, clipped to the image.
#[pyfunction]
fn mask_to_overlay(mask: &PyImitationMask, stride: usize, image_w: usize, image_h: usize) -> Vec<(f64, f64, f64, f64)> {
    mask::mask_to_overlay(&mask.inner, stride, image_w, image_h)
        .iter()
        .map(|r| (r.x1, r.y1, r.x2, r.y2))
        .collect()
}

/// Masked squared-error imitation loss between `[W, H, C]` features;
/// returns (loss, gradient w.r.t. adapted).
#[pyfunction]
fn imitation_loss(adapted: &PyTensor, teacher: &PyTensor, mask: &PyImitationMask) -> PyResult<(f64, PyTensor)> {
    let (loss, grad) = imitation::imitation_loss(&adapted.inner, &teacher.inner, &mask.inner).map_err(to_py_err)?;
    Ok((loss, PyTensor { inner: grad }))
}

/// Greedy NMS; returns kept indices in descending score order.
#[pyfunction]
fn nms(boxes: Vec<PyBBox>, scores: Vec<f64>, iou_thresh: f64) -> PyResult<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(PyValueError::new_err(format!(
            "{} boxes but {} scores",
            boxes.len(),
            scores.len()
        )));
    }
    let inner: Vec<geometry::BBox> = boxes.iter().map(|b| b.inner).collect();
    Ok(fine_imitate_core::detector::brute_force_nms(&inner, &scores, iou_thresh))
}

#[pymodule]
fn fine_imitate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add_class::<PyAnchorGrid>()?;
    m.add_class::<PyImitationMask>()?;
    m.add_class::<PyTensor>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mask, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mask_hard, m)?)?;
    m.add_function(wrap_pyfunction!(gt_projection_mask, m)?)?;
    m.add_function(wrap_pyfunction!(mask_to_overlay, m)?)?;
    m.add_function(wrap_pyfunction!(imitation_loss, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    Ok(())
}
