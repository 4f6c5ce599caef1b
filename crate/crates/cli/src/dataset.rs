//! `CDLD` labelled image files: a fixed header followed by one record per
//! image holding a class byte and row-major `u8` pixels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use codial_core::transforms::Image;

use crate::error::{io_err, CliError, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"CDLD";
pub const DATASET_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 4 + 4 + 8 + 4 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub count: u64,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub class_count: u32,
}

impl DatasetHeader {
    pub fn record_len(&self) -> u64 {
        1 + self.height as u64 * self.width as u64 * self.channels as u64
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN + self.count * self.record_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let first = data
        .images
        .first()
        .ok_or_else(|| CliError::Invalid("refusing to write an empty dataset".into()))?;
    let (h, w, c) = (first.height(), first.width(), first.channels());
    if data.images.len() != data.labels.len() {
        return Err(CliError::Invalid("image and label counts differ".into()));
    }
    if data.class_count == 0 || data.class_count > 256 {
        return Err(CliError::Invalid(format!("class count {} outside 1..=256", data.class_count)));
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(HEADER_LEN as usize);
    header.extend_from_slice(DATASET_MAGIC);
    header.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    header.extend_from_slice(&(data.images.len() as u64).to_le_bytes());
    for v in [h, w, c, data.class_count] {
        header.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.write_all(&header).map_err(io_err(path))?;
    let mut record = Vec::new();
    for (img, &label) in data.images.iter().zip(&data.labels) {
        if (img.height(), img.width(), img.channels()) != (h, w, c) {
            return Err(CliError::Invalid("images differ in shape".into()));
        }
        if label >= data.class_count {
            return Err(CliError::Invalid(format!("label {label} >= class count {}", data.class_count)));
        }
        record.clear();
        record.push(label as u8);
        record.extend(img.pixels().iter().map(|&v| quantize(v)));
        out.write_all(&record).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn format_err(path: &Path, offset: u64, message: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<DatasetHeader> {
    if bytes.len() < HEADER_LEN as usize {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(format_err(path, 0, "bad magic, expected CDLD"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != DATASET_VERSION {
        return Err(format_err(path, 4, format!("unsupported version {version}")));
    }
    let header = DatasetHeader {
        count: u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")),
        height: u32_at(16),
        width: u32_at(20),
        channels: u32_at(24),
        class_count: u32_at(28),
    };
    if !(header.channels == 1 || header.channels == 3) || header.height == 0 || header.width == 0 {
        return Err(format_err(path, 16, "image shape must be nonzero with 1 or 3 channels"));
    }
    if header.class_count == 0 || header.class_count > 256 {
        return Err(format_err(path, 28, format!("class count {} outside 1..=256", header.class_count)));
    }
    Ok(header)
}

/// Reads only the fixed-size header.
pub fn read_header(path: &Path) -> Result<DatasetHeader> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut buf = Vec::with_capacity(HEADER_LEN as usize);
    file.take(HEADER_LEN).read_to_end(&mut buf).map_err(io_err(path))?;
    parse_header(path, &buf)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(io_err(path))?;
    let header = parse_header(path, &bytes)?;
    let expected = header.file_len();
    if bytes.len() as u64 != expected {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("expected {expected} bytes for {} records, found {}", header.count, bytes.len()),
        ));
    }
    let (h, w, c) = (header.height as usize, header.width as usize, header.channels as usize);
    let rec = header.record_len() as usize;
    let mut images = Vec::with_capacity(header.count as usize);
    let mut labels = Vec::with_capacity(header.count as usize);
    for (i, r) in bytes[HEADER_LEN as usize..].chunks_exact(rec).enumerate() {
        let label = r[0] as usize;
        if label >= header.class_count as usize {
            let offset = HEADER_LEN + (i * rec) as u64;
            return Err(format_err(path, offset, format!("label {label} >= class count {}", header.class_count)));
        }
        let pixels = r[1..].iter().map(|&b| b as f32 / 255.0).collect();
        images.push(Image::new(h, w, c, pixels)?);
        labels.push(label);
    }
    Ok(Dataset {
        images,
        labels,
        class_count: header.class_count as usize,
    })
}
