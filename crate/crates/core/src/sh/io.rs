//! Field snapshots: little-endian float64 row-major binary with a JSON
//! sidecar, and binary grayscale pixmaps (P6).

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    pub time: Option<f64>,
    pub dtype: String,
    pub layout: String,
    pub min: f64,
    pub max: f64,
    pub units: String,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn range(data: &[f64]) -> (f64, f64) {
    data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn write_field(stem: &Path, name: &str, data: &[f64], nx: usize, ny: usize, time: Option<f64>) -> std::io::Result<()> {
    assert_eq!(data.len(), nx * ny, "field size");
    let mut bytes = Vec::with_capacity(8 * data.len());
    for x in data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(with_ext(stem, ".bin"), bytes)?;
    let (min, max) = range(data);
    let side = FieldSidecar {
        name: name.into(),
        nx,
        ny,
        time,
        dtype: "float64-le".into(),
        layout: "row-major, index iy*nx+ix".into(),
        min,
        max,
        units: "dimensionless".into(),
    };
    let mut f = fs::File::create(with_ext(stem, ".json"))?;
    serde_json::to_writer_pretty(&mut f, &side)?;
    f.write_all(b"\n")
}

pub fn read_field(stem: &Path) -> std::io::Result<(FieldSidecar, Vec<f64>)> {
    let side: FieldSidecar = serde_json::from_slice(&fs::read(with_ext(stem, ".json"))?)?;
    let bytes = fs::read(with_ext(stem, ".bin"))?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((side, data))
}

/// Min/max-normalized grayscale image; returns the range used.
pub fn write_ppm(path: &Path, data: &[f64], nx: usize, ny: usize) -> std::io::Result<(f64, f64)> {
    assert_eq!(data.len(), nx * ny, "field size");
    let (lo, hi) = range(data);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P6\n{nx} {ny}\n255\n").into_bytes();
    for x in data {
        let v = (((x - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8;
        out.extend_from_slice(&[v, v, v]);
    }
    fs::write(path, out)?;
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip() {
        let dir = std::env::temp_dir().join(format!("etd-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let data: Vec<f64> = (0..12).map(|i| (i as f64).sin() * 1e3).collect();
        let stem = dir.join("f");
        write_field(&stem, "r", &data, 4, 3, Some(1.5)).unwrap();
        let (side, back) = read_field(&stem).unwrap();
        assert_eq!(back, data);
        assert_eq!((side.nx, side.ny, side.time), (4, 3, Some(1.5)));
        let (lo, hi) = write_ppm(&dir.join("f.ppm"), &data, 4, 3).unwrap();
        let img = fs::read(dir.join("f.ppm")).unwrap();
        assert!(img.starts_with(b"P6\n4 3\n255\n"));
        assert_eq!(img.len(), 11 + 36);
        assert!(lo < hi);
        fs::remove_dir_all(&dir).unwrap();
    }
}
