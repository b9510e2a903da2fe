//! Little-endian single-channel PFM (`Pf`) reader and writer.
//!
//! Rows are stored bottom-to-top as the format requires.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene_model::DepthMap;

pub fn write_pfm<T: Real>(path: &Path, width: usize, height: usize, data: &[T]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::BufferLength { context: "pfm", expected: width * height, found: data.len() });
    }
    let mut bytes = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    bytes.reserve(width * height * 4);
    for y in (0..height).rev() {
        for x in 0..width {
            bytes.extend_from_slice(&(data[y * width + x].as_f64() as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn write_depth_pfm<T: Real>(path: &Path, depth: &DepthMap<T>) -> Result<()> {
    write_pfm(path, depth.width(), depth.height(), depth.data())
}

/// Reads a single-channel PFM. Big-endian files (positive scale) are accepted too.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(line.trim().to_string())
    };
    let magic = next_line(&mut reader)?;
    if magic != "Pf" {
        return Err(Error::Dataset(format!("{}: not a single-channel PFM", path.display())));
    }
    let dims = next_line(&mut reader)?;
    let mut it = dims.split_whitespace().map(|s| s.parse::<usize>());
    let (width, height) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) => (w, h),
        _ => return Err(Error::Dataset(format!("{}: bad PFM dimensions", path.display()))),
    };
    let scale: f64 =
        next_line(&mut reader)?.parse().map_err(|_| Error::Dataset(format!("{}: bad PFM scale", path.display())))?;
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.len() != width * height * 4 {
        return Err(Error::Dataset(format!(
            "{}: PFM payload has {} bytes, expected {}",
            path.display(),
            raw.len(),
            width * height * 4
        )));
    }
    let mut data = vec![0f32; width * height];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let row = height - 1 - i / width;
        data[row * width + i % width] = v;
    }
    Ok((width, height, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_values_and_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
        write_pfm(&path, 4, 3, &data).unwrap();
        let (w, h, back) = read_pfm(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, data.iter().map(|x| *x as f32).collect::<Vec<_>>());
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"Pf\n4 3\n-1.0\n"));
    }
}
