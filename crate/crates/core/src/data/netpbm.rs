//! Binary netpbm readers and writers: P6 (PPM, RGB) for frames and P5 (PGM,
//! grayscale) for target maps and heatmaps. Only maxval 255 is supported;
//! everything here is bit-exact and codec-free.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Parse the ASCII header after the magic: width, height, maxval, each
/// optionally preceded by whitespace and `#` comments, followed by exactly
/// one whitespace byte before the raster.
fn parse_header(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize)> {
    let mut pos = 2; // past the 2-byte magic
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err(path, "truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "expected decimal value in header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are utf-8");
        *field = text
            .parse()
            .map_err(|_| format_err(path, format!("header value '{text}' out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(path, "missing whitespace after maxval")),
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if w == 0 || h == 0 {
        return Err(format_err(path, format!("degenerate dimensions {w}x{h}")));
    }
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}, expected 255")));
    }
    // Header length is encoded in `pos` for the raster slice below.
    Ok((w, h, pos))
}

fn read_raster(path: &Path, magic: &[u8; 2], samples_per_pixel: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            path,
            format!("bad magic, expected {}", std::str::from_utf8(magic).expect("ascii magic")),
        ));
    }
    let (w, h, raster_start) = parse_header(&bytes, path)?;
    let need = w * h * samples_per_pixel;
    let raster = &bytes[raster_start..];
    if raster.len() < need {
        return Err(format_err(
            path,
            format!("raster has {} bytes, expected {need}", raster.len()),
        ));
    }
    Ok((w, h, raster[..need].to_vec()))
}

/// Read a binary PPM (P6). Returns (width, height, interleaved RGB bytes).
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_raster(path, b"P6", 3)
}

/// Read a binary PGM (P5). Returns (width, height, gray bytes).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_raster(path, b"P5", 1)
}

fn write_raster(path: &Path, magic: &str, w: usize, h: usize, data: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(data.len() + 32);
    write!(out, "{magic}\n{w} {h}\n255\n").expect("in-memory write");
    out.extend_from_slice(data);
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Write a binary PPM (P6) from interleaved RGB bytes.
pub fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), w * h * 3, "rgb buffer size");
    write_raster(path, "P6", w, h, rgb)
}

/// Write a binary PGM (P5) from gray bytes.
pub fn write_pgm(path: &Path, w: usize, h: usize, gray: &[u8]) -> Result<()> {
    assert_eq!(gray.len(), w * h, "gray buffer size");
    write_raster(path, "P5", w, h, gray)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.ppm");
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|v| (v * 7) as u8).collect();
        write_ppm(&path, 3, 2, &rgb).unwrap();
        let (w, h, back) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, rgb);
    }

    #[test]
    fn pgm_round_trip_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 64, 128, 255]);
        std::fs::write(&path, bytes).unwrap();
        let (w, h, data) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(data, vec![0, 64, 128, 255]);
    }

    #[test]
    fn bad_magic_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ppm");
        std::fs::write(&path, b"P3\n1 1\n255\n0 0 0").unwrap();
        let err = read_ppm(&path).unwrap_err();
        assert!(err.to_string().contains("bogus.ppm"), "{err}");
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.pgm");
        std::fs::write(&path, b"P5\n4 4\n255\n\x00\x01").unwrap();
        let err = read_pgm(&path).unwrap_err();
        assert!(err.to_string().contains("expected 16"), "{err}");
    }

    #[test]
    fn missing_file_reports_io_error() {
        let err = read_ppm(Path::new("/nonexistent/frame.ppm")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
