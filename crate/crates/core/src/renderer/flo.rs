//! Middlebury `.flo` optical-flow files: little-endian, "PIEH" magic float,
//! width, height, then interleaved (u, v) float32 pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const FLO_MAGIC: f32 = 202021.25;

#[derive(Debug, Error)]
pub enum FloError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad .flo magic")]
    BadMagic,
    #[error("unreasonable .flo dimensions {0}x{1}")]
    BadDims(i32, i32),
}

/// A dense flow map; `data` is interleaved `(u, v)` row-major, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FlowMap {
    pub fn new(width: usize, height: usize) -> FlowMap {
        FlowMap { width, height, data: vec![0.0; width * height * 2] }
    }

    pub fn at(&self, x: usize, y: usize) -> [f32; 2] {
        let i = (y * self.width + x) * 2;
        [self.data[i], self.data[i + 1]]
    }

    pub fn set(&mut self, x: usize, y: usize, uv: [f32; 2]) {
        let i = (y * self.width + x) * 2;
        self.data[i] = uv[0];
        self.data[i + 1] = uv[1];
    }

    /// Bilinear lookup at a fractional pixel position; `None` out of bounds.
    pub fn sample(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        if x < 0.0 || y < 0.0 || x > (self.width - 1) as f64 || y > (self.height - 1) as f64 {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let mut out = [0.0f64; 2];
        for c in 0..2 {
            let v00 = self.data[(y0 * self.width + x0) * 2 + c] as f64;
            let v10 = self.data[(y0 * self.width + x1) * 2 + c] as f64;
            let v01 = self.data[(y1 * self.width + x0) * 2 + c] as f64;
            let v11 = self.data[(y1 * self.width + x1) * 2 + c] as f64;
            out[c] = v00 * (1.0 - fx) * (1.0 - fy)
                + v10 * fx * (1.0 - fy)
                + v01 * (1.0 - fx) * fy
                + v11 * fx * fy;
        }
        Some(out)
    }
}

pub fn write_flo(path: &Path, flow: &FlowMap) -> Result<(), FloError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&FLO_MAGIC.to_le_bytes())?;
    w.write_all(&(flow.width as i32).to_le_bytes())?;
    w.write_all(&(flow.height as i32).to_le_bytes())?;
    for v in &flow.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_flo(path: &Path) -> Result<FlowMap, FloError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    if f32::from_le_bytes(buf4) != FLO_MAGIC {
        return Err(FloError::BadMagic);
    }
    r.read_exact(&mut buf4)?;
    let width = i32::from_le_bytes(buf4);
    r.read_exact(&mut buf4)?;
    let height = i32::from_le_bytes(buf4);
    if width <= 0 || height <= 0 || width > 1 << 16 || height > 1 << 16 {
        return Err(FloError::BadDims(width, height));
    }
    let (width, height) = (width as usize, height as usize);
    let mut data = vec![0.0f32; width * height * 2];
    for v in data.iter_mut() {
        r.read_exact(&mut buf4)?;
        *v = f32::from_le_bytes(buf4);
    }
    Ok(FlowMap { width, height, data })
}

/// Raw little-endian float32 plane (HDR diagnostics).
pub fn write_f32_plane(path: &Path, data: &[f32]) -> Result<(), FloError> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flo_round_trip_is_bitwise() {
        let dir = std::env::temp_dir().join("warpflow_flo_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.flo");
        let mut flow = FlowMap::new(5, 3);
        for (i, v) in flow.data.iter_mut().enumerate() {
            *v = (i as f32).sin() * 10.0;
        }
        write_flo(&path, &flow).unwrap();
        let back = read_flo(&path).unwrap();
        assert_eq!(back.width, 5);
        assert_eq!(back.height, 3);
        for (a, b) in back.data.iter().zip(&flow.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Magic is the "PIEH" byte string.
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PIEH");
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join("warpflow_flo_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.flo");
        std::fs::write(&path, [0u8; 12]).unwrap();
        assert!(matches!(read_flo(&path), Err(FloError::BadMagic)));
    }

    #[test]
    fn bilinear_sample_and_bounds() {
        let mut f = FlowMap::new(3, 2);
        f.set(0, 0, [1.0, 0.0]);
        f.set(1, 0, [3.0, 0.0]);
        let s = f.sample(0.5, 0.0).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-12);
        assert!(f.sample(-0.1, 0.0).is_none());
        assert!(f.sample(2.5, 0.0).is_none());
    }
}
