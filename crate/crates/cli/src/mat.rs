//! MATLAB v5 `.mat` ingestion for `prepare`.
//!
//! Scenes are distributed as an `H x W x L` numeric cube and an `H x W`
//! integer label map, both column-major. They are converted to the band-major
//! manifest layout.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ainet::hsi_data::{write_dataset, GroundTruth, HsiCube};
use matfile::{Array, MatFile, NumericData};
use ndarray::{Array2, Array3};

use crate::error::{io_error, CliError, CliResult};

pub fn read_mat(path: &Path) -> CliResult<MatFile> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    MatFile::parse(BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: not a readable MAT v5 file ({e})", path.display())))
}

fn to_f64(array: &Array, path: &Path) -> CliResult<Vec<f64>> {
    macro_rules! cast {
        ($real:expr, $imag:expr) => {{
            if $imag.is_some() {
                return Err(CliError::Data(format!(
                    "{}: variable {:?} is complex",
                    path.display(),
                    array.name()
                )));
            }
            $real.iter().map(|&v| v as f64).collect()
        }};
    }
    Ok(match array.data() {
        NumericData::Int8 { real, imag } => cast!(real, imag),
        NumericData::UInt8 { real, imag } => cast!(real, imag),
        NumericData::Int16 { real, imag } => cast!(real, imag),
        NumericData::UInt16 { real, imag } => cast!(real, imag),
        NumericData::Int32 { real, imag } => cast!(real, imag),
        NumericData::UInt32 { real, imag } => cast!(real, imag),
        NumericData::Int64 { real, imag } => cast!(real, imag),
        NumericData::UInt64 { real, imag } => cast!(real, imag),
        NumericData::Single { real, imag } => cast!(real, imag),
        NumericData::Double { real, imag } => cast!(real, imag),
    })
}

/// The variable called `name`, or the only variable with `ndims` dimensions.
fn pick<'m>(mat: &'m MatFile, name: Option<&str>, ndims: usize, path: &Path) -> CliResult<&'m Array> {
    if let Some(name) = name {
        return mat
            .find_by_name(name)
            .ok_or_else(|| CliError::Data(format!("{}: no variable named {name:?}", path.display())));
    }
    let found: Vec<&Array> = mat.arrays().iter().filter(|a| a.ndims() == ndims).collect();
    match found.as_slice() {
        [one] => Ok(one),
        [] => Err(CliError::Data(format!("{}: no {ndims}-D variable", path.display()))),
        many => Err(CliError::Usage(format!(
            "{}: several {ndims}-D variables ({}); name one explicitly",
            path.display(),
            many.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Column-major `H x W x L` to a band-major cube.
pub fn cube_from_column_major(name: &str, size: &[usize], data: &[f64]) -> CliResult<HsiCube> {
    let &[h, w, l] = size else {
        return Err(CliError::Data(format!("cube must be 3-D, got dimensions {size:?}")));
    };
    let values = Array3::from_shape_fn((l, h, w), |(b, r, c)| data[r + h * (c + w * b)] as f32);
    Ok(HsiCube::new(name, values, None)?)
}

/// Column-major `H x W` integer labels.
pub fn labels_from_column_major(size: &[usize], data: &[f64]) -> CliResult<Array2<u16>> {
    let &[h, w] = size else {
        return Err(CliError::Data(format!("labels must be 2-D, got dimensions {size:?}")));
    };
    if let Some(bad) = data
        .iter()
        .find(|&&v| v < 0.0 || v.fract() != 0.0 || v > u16::MAX as f64)
    {
        return Err(CliError::Data(format!("label value {bad} is not a class id")));
    }
    Ok(Array2::from_shape_fn((h, w), |(r, c)| data[r + h * c] as u16))
}

#[derive(Clone, Debug, Default)]
pub struct PrepareRequest {
    pub cube_file: PathBuf,
    pub labels_file: PathBuf,
    pub cube_var: Option<String>,
    pub labels_var: Option<String>,
    pub name: String,
    /// Class count; the largest label when absent.
    pub classes: Option<usize>,
    pub out_dir: PathBuf,
}

/// Converts a MAT cube and label map into a manifest directory and returns
/// the manifest path. Output bytes depend only on the inputs.
pub fn prepare(req: &PrepareRequest) -> CliResult<PathBuf> {
    let cube_mat = read_mat(&req.cube_file)?;
    let cube_arr = pick(&cube_mat, req.cube_var.as_deref(), 3, &req.cube_file)?;
    let cube = cube_from_column_major(&req.name, cube_arr.size(), &to_f64(cube_arr, &req.cube_file)?)?;

    let labels_mat;
    let labels_src = if req.labels_file == req.cube_file {
        &cube_mat
    } else {
        labels_mat = read_mat(&req.labels_file)?;
        &labels_mat
    };
    let gt_arr = pick(labels_src, req.labels_var.as_deref(), 2, &req.labels_file)?;
    let labels = labels_from_column_major(gt_arr.size(), &to_f64(gt_arr, &req.labels_file)?)?;
    let classes = req
        .classes
        .unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0) as usize);
    let gt = GroundTruth::new(labels, classes)?;

    std::fs::create_dir_all(&req.out_dir).map_err(|e| io_error(&req.out_dir, e))?;
    Ok(write_dataset(&req.out_dir, &req.name, &cube, &gt)?)
}
