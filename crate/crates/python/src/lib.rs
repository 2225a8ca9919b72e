//! Python bindings: sails, fitting, rigs and recoloring.

use colorsail::alpha::{fit_rig, select_n_alpha, RigConfig};
use colorsail::fit::{fit_problem, FitConfig, FitProblem};
use colorsail::metrics::{e_l2, r_percent, DEFAULT_DELTA};
use colorsail::raster::Raster;
use colorsail::rig::{build_mapping, load_rig, parse_edits, recolor, save_rig, SailRig};
use colorsail::sail::{decode, ColorSail, Rgb};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Rows of `[r, g, b]` in `[0, 1]`, row-major.
fn raster(width: usize, height: usize, pixels: Vec<Rgb>) -> PyResult<Raster> {
    Raster::new(width, height, pixels).map_err(value_err)
}

#[pyclass(name = "Sail", module = "colorsail_py", frozen, from_py_object)]
#[derive(Clone)]
struct PySail {
    inner: ColorSail,
}

#[pymethods]
impl PySail {
    #[new]
    #[pyo3(signature = (vertices, focus = (1.0 / 3.0, 1.0 / 3.0), wind = 0.0, subdivision = 5))]
    fn new(vertices: [Rgb; 3], focus: (f64, f64), wind: f64, subdivision: u32) -> PyResult<Self> {
        let inner = ColorSail::new(vertices, focus, wind, subdivision).map_err(value_err)?;
        Ok(PySail { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ColorSail = serde_json::from_str(text).map_err(value_err)?;
        Ok(PySail { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("sail serializes")
    }

    #[getter]
    fn vertices(&self) -> [Rgb; 3] {
        *self.inner.vertices()
    }

    #[getter]
    fn focus(&self) -> (f64, f64) {
        self.inner.focus()
    }

    #[getter]
    fn wind(&self) -> f64 {
        self.inner.wind()
    }

    #[getter]
    fn subdivision(&self) -> u32 {
        self.inner.subdivision()
    }

    /// Decoded colors in canonical lattice order.
    #[pyo3(signature = (include_downward = true, clamp = true))]
    fn colors(&self, include_downward: bool, clamp: bool) -> Vec<Rgb> {
        decode(&self.inner, include_downward, clamp).colors
    }

    fn with_wind(&self, wind: f64) -> PyResult<Self> {
        Ok(PySail { inner: self.inner.with_wind(wind).map_err(value_err)? })
    }

    fn with_focus(&self, focus: (f64, f64)) -> PyResult<Self> {
        Ok(PySail { inner: self.inner.with_focus(focus).map_err(value_err)? })
    }

    fn with_vertex(&self, k: usize, color: Rgb) -> PyResult<Self> {
        if k > 2 {
            return Err(PyValueError::new_err("vertex index must be 0, 1 or 2"));
        }
        Ok(PySail { inner: self.inner.with_vertex(k, color).map_err(value_err)? })
    }

    fn with_subdivision(&self, subdivision: u32) -> PyResult<Self> {
        Ok(PySail { inner: self.inner.with_subdivision(subdivision).map_err(value_err)? })
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Sail({})", self.to_json())
    }
}

/// Fits one sail to an image given as `height` rows of `width` RGB
/// triples in `[0, 1]`. Returns the sail and a dict of losses.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (width, height, pixels, subdivision = 5, lambda_kl = 1e-4, restarts = 5, seed = 0x5A11))]
fn fit_pixels(
    py: Python<'_>,
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
    subdivision: u32,
    lambda_kl: f64,
    restarts: usize,
    seed: u64,
) -> PyResult<(PySail, Py<pyo3::types::PyDict>)> {
    let image = raster(width, height, pixels)?;
    let config = FitConfig { subdivision, lambda_kl, restarts, seed, ..FitConfig::default() };
    config.validate().map_err(value_err)?;
    let problem = FitProblem::from_image(&image, config.bins).map_err(value_err)?;
    let fit = py
        .detach(|| fit_problem(&problem, &config, None))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let votes: Vec<(Rgb, f64)> = image.pixels().iter().map(|&c| (c, 1.0)).collect();
    let palette = decode(&fit.sail, true, false).colors;
    let report = pyo3::types::PyDict::new(py);
    report.set_item("e_l2", fit.loss.e_l2)?;
    report.set_item("e_kl", fit.loss.e_kl)?;
    report.set_item("combined", fit.loss.combined)?;
    report.set_item("pixel_r_percent", r_percent(&votes, &palette, DEFAULT_DELTA).map_err(value_err)?)?;
    Ok((PySail { inner: fit.sail }, report.unbind()))
}

/// Mean RGB distance from each color to its nearest palette color.
#[pyfunction]
fn palette_error(colors: Vec<Rgb>, palette: Vec<Rgb>) -> PyResult<f64> {
    let targets: Vec<(Rgb, f64)> = colors.into_iter().map(|c| (c, 1.0)).collect();
    e_l2(&targets, &palette).map_err(value_err)
}

#[pyclass(name = "Rig", module = "colorsail_py", frozen)]
struct PyRig {
    inner: SailRig,
}

#[pymethods]
impl PyRig {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyRig { inner: load_rig(path).map_err(value_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_rig(&self.inner, path).map_err(value_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn sails(&self) -> Vec<PySail> {
        self.inner.sails().into_iter().map(|inner| PySail { inner }).collect()
    }

    /// 8-bit alpha mask of one sail, row-major.
    fn alpha(&self, sail: usize) -> PyResult<Vec<u8>> {
        self.inner.layers().get(sail).map(|l| l.alpha.clone()).ok_or_else(|| PyValueError::new_err("no such sail"))
    }

    /// Recolors with an edits JSON string and returns RGB8 bytes.
    #[pyo3(signature = (edits = "[]"))]
    fn recolor(&self, edits: &str) -> PyResult<Vec<u8>> {
        let edits = parse_edits(edits).map_err(value_err)?;
        Ok(recolor(&self.inner, &edits).map_err(value_err)?.to_rgb8_bytes())
    }

    /// RGB8 bytes of the reconstruction stored at build time.
    fn reconstruction(&self) -> Option<Vec<u8>> {
        self.inner.stored_reconstruction().map(<[u8]>::to_vec)
    }
}

/// Decomposes an image into masks and sails. With `n_alpha` unset the mask
/// count is selected from `candidates`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (width, height, pixels, n_alpha = None, candidates = vec![2, 3, 4, 5], epochs = 20, seed = 0x5A11))]
fn build_rig(
    py: Python<'_>,
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
    n_alpha: Option<usize>,
    candidates: Vec<usize>,
    epochs: usize,
    seed: u64,
) -> PyResult<PyRig> {
    let image = raster(width, height, pixels)?;
    let config = RigConfig { epochs, seed, ..RigConfig::default() };
    let fit = py.detach(|| match n_alpha {
        Some(n) => fit_rig(&image, n, &config),
        None => select_n_alpha(&image, &candidates, &config).map(|s| s.fit),
    });
    let fit = fit.map_err(value_err)?;
    let inner = build_mapping(&image, &fit, &config.digest()).map_err(value_err)?;
    Ok(PyRig { inner })
}

#[pymodule]
fn colorsail_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySail>()?;
    m.add_class::<PyRig>()?;
    m.add_function(wrap_pyfunction!(fit_pixels, m)?)?;
    m.add_function(wrap_pyfunction!(palette_error, m)?)?;
    m.add_function(wrap_pyfunction!(build_rig, m)?)?;
    Ok(())
}
