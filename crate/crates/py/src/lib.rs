use pyo3::prelude::*;

#[pymodule]
fn ssp_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
