//! 8-bit portable graymap export for eyeballing images; the lossless
//! tensor files remain the source of truth.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::sim::ImageGrid;

pub fn write_pgm(path: &Path, img: &ImageGrid) -> Result<()> {
    let size = img.size();
    let peak = img.max();
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{size} {size}\n255\n")?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
