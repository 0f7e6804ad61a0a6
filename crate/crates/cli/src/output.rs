//! Artifact encoding and atomic writes.

use std::io::{Cursor, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};
use tempfile::NamedTempFile;

use crate::error::CliError;

/// Named files of one run, held in memory until the run succeeds.
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn csv<S: AsRef<str>>(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<S>>) {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory csv");
        for row in rows {
            w.write_record(row.iter().map(|s| s.as_ref())).expect("in-memory csv");
        }
        self.add(name, w.into_inner().expect("in-memory csv"));
    }

    /// 16-bit grayscale image of a row-major field (`j` outer, `j = 0` at the bottom),
    /// scaled so the largest value is white; the raw values go to a sidecar CSV.
    pub fn field_image(&mut self, stem: &str, values: &[f64], nx: usize, ny: usize) {
        let max = values.iter().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max);
        let img = ImageBuffer::from_fn(nx as u32, ny as u32, |i, row| {
            let v = values[(ny - 1 - row as usize) * nx + i as usize];
            let s = if max > 0.0 && v.is_finite() { (v.max(0.0) / max * 65535.0).round() } else { 0.0 };
            Luma([s as u16])
        });
        let mut png = Cursor::new(Vec::new());
        image::DynamicImage::ImageLuma16(img)
            .write_to(&mut png, image::ImageOutputFormat::Png)
            .expect("in-memory png");
        self.add(format!("{stem}.png"), png.into_inner());
        let rows = (0..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).map(|(i, j)| {
            vec![i.to_string(), j.to_string(), values[j * nx + i].to_string()]
        });
        self.csv(&format!("{stem}.csv"), &["i", "j", "value"], rows);
    }

    /// Writes every file through a temporary in `dir` renamed onto its final path, so a
    /// crash never leaves a truncated artifact under a final name.
    pub fn write_all(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            let mut tmp = NamedTempFile::new_in(dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            tmp.persist(dir.join(name)).map_err(|e| CliError::Io(e.to_string()))?;
        }
        Ok(())
    }
}
