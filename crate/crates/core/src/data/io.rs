use std::fs;
use std::path::{Path, PathBuf};

use crate::data::volume::{Header, Volume};
use crate::error::{Error, Result};

/// On-disk element type of the intensity file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    U8,
    F32,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::F32 => "f32",
        }
    }

    pub fn parse(s: &str) -> Result<Dtype> {
        match s {
            "u8" => Ok(Dtype::U8),
            "f32" => Ok(Dtype::F32),
            other => Err(Error::Format(format!("unknown dtype {other:?} (expected \"u8\" or \"f32\")"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_header(header_path: &Path) -> Result<Header> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", header_path.display())))
}

pub fn load_volume(data_path: &Path, header_path: &Path) -> Result<Volume> {
    let header = read_header(header_path)?;
    let dtype = Dtype::parse(&header.dtype)?;
    let n: usize = header.shape.iter().product();
    let bytes = read(data_path)?;
    let expected = n * dtype.width();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: shape {:?} of {} needs {expected} bytes, file has {}",
            data_path.display(),
            header.shape,
            dtype.name(),
            bytes.len()
        )));
    }
    let intensities: Vec<f32> = match dtype {
        Dtype::U8 => bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
    };
    let labels = match &header.labels {
        None => None,
        Some(rel) => {
            let path = header_path.parent().unwrap_or(Path::new("")).join(rel);
            let l = read(&path)?;
            if l.len() != n {
                return Err(Error::Format(format!(
                    "{}: labels for shape {:?} need {n} bytes, file has {}",
                    path.display(),
                    header.shape,
                    l.len()
                )));
            }
            Some(l)
        }
    };
    Volume::new(header.shape, intensities, labels, header.spacing_nm)
        .map_err(|e| Error::Format(format!("{}: {e}", data_path.display())))
}

/// Writes f32 intensities, the JSON header, and a u8 label file beside the
/// data file when labels are present.
pub fn save_volume(v: &Volume, data_path: &Path, header_path: &Path) -> Result<()> {
    save_volume_as(v, data_path, header_path, Dtype::F32)
}

pub fn save_volume_as(v: &Volume, data_path: &Path, header_path: &Path, dtype: Dtype) -> Result<()> {
    let bytes: Vec<u8> = match dtype {
        Dtype::U8 => v.intensities().iter().map(|&x| (x * 255.0).round() as u8).collect(),
        Dtype::F32 => v.intensities().iter().flat_map(|x| x.to_le_bytes()).collect(),
    };
    write(data_path, &bytes)?;
    let labels = match v.labels() {
        None => None,
        Some(l) => {
            let path = labels_path(data_path);
            write(&path, l)?;
            let base = header_path.parent().unwrap_or(Path::new(""));
            let rel = path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.clone());
            Some(rel.to_string_lossy().into_owned())
        }
    };
    let header = Header { shape: v.shape(), dtype: dtype.name().into(), spacing_nm: v.spacing_nm(), labels };
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    write(header_path, text.as_bytes())
}

/// `foo.raw` → `foo.labels.raw`.
pub fn labels_path(data_path: &Path) -> PathBuf {
    let stem = data_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match data_path.extension() {
        Some(ext) => format!("{stem}.labels.{}", ext.to_string_lossy()),
        None => format!("{stem}.labels"),
    };
    data_path.with_file_name(name)
}
