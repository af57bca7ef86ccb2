//! Binary PGM (P5) reading/writing and the plain-text stack manifest.
//!
//! 16-bit samples are big-endian per the PGM specification. Label maps are
//! written as 16-bit PGM with 0 = background and k >= 1 = cell index.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{normalize, BitDepth, GrayImage, RawImage, SliceStack};

/// Reads a binary PGM file. The bit depth is inferred from the maxval:
/// maxval <= 255 reads one byte per sample, otherwise two (big-endian).
pub fn read_pgm(path: &Path) -> Result<(RawImage, BitDepth)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::MalformedInput(format!("{}: {msg}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<(RawImage, BitDepth), String> {
    let mut pos = 0usize;

    fn skip_ws_and_comments(bytes: &[u8], pos: &mut usize) {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn read_token<'a>(bytes: &'a [u8], pos: &mut usize) -> std::result::Result<&'a [u8], String> {
        skip_ws_and_comments(bytes, pos);
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("unexpected end of header".into());
        }
        Ok(&bytes[start..*pos])
    }

    fn read_u32(bytes: &[u8], pos: &mut usize, what: &str) -> std::result::Result<u32, String> {
        let tok = read_token(bytes, pos)?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| format!("invalid {what}"))
    }

    let magic = read_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err("not a binary PGM (expected magic P5)".into());
    }
    let width = read_u32(bytes, &mut pos, "width")?;
    let height = read_u32(bytes, &mut pos, "height")?;
    let maxval = read_u32(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside [1, 65535]"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing whitespace before raster".into());
    }
    pos += 1;

    let n = (width as usize) * (height as usize);
    let raster = &bytes[pos..];
    let (samples, depth) = if maxval <= 255 {
        if raster.len() < n {
            return Err(format!("raster truncated: {} of {n} bytes", raster.len()));
        }
        (
            raster[..n].iter().map(|&b| b as u16).collect(),
            BitDepth::Eight,
        )
    } else {
        if raster.len() < 2 * n {
            return Err(format!(
                "raster truncated: {} of {} bytes",
                raster.len(),
                2 * n
            ));
        }
        (
            raster[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect::<Vec<u16>>(),
            BitDepth::Sixteen,
        )
    };
    Ok((
        RawImage {
            width,
            height,
            samples,
        },
        depth,
    ))
}

/// Reads a PGM file and normalizes it to `[0, 1]` by its own bit depth.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let (raw, depth) = read_pgm(path)?;
    normalize(&raw, depth)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a normalized image as a 16-bit binary PGM (maxval 65535).
pub fn write_gray16(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = Vec::with_capacity(32 + 2 * img.data().len());
    write!(out, "P5\n{} {}\n65535\n", img.width(), img.height()).expect("vec write");
    for &v in img.data() {
        let s = (v * 65535.0).round() as u16;
        out.extend_from_slice(&s.to_be_bytes());
    }
    write_bytes(path, &out)
}

/// Writes a label map as a 16-bit binary PGM: 0 = background, k >= 1 = cell.
pub fn write_labels(path: &Path, width: u32, height: u32, labels: &[u16]) -> Result<()> {
    if labels.len() != (width as usize) * (height as usize) {
        return Err(Error::Dimension(format!(
            "label buffer length {} does not match {width}x{height}",
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(32 + 2 * labels.len());
    write!(out, "P5\n{width} {height}\n65535\n").expect("vec write");
    for &v in labels {
        out.extend_from_slice(&v.to_be_bytes());
    }
    write_bytes(path, &out)
}

/// Reads a 16-bit label map previously written by [`write_labels`].
pub fn read_labels(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let (raw, _) = read_pgm(path)?;
    Ok((raw.width, raw.height, raw.samples))
}

/// One manifest entry: slice path (relative to the manifest) and tilt angle.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub angle_degrees: f64,
}

/// Reads a stack manifest: one `<relative-path> <angle-degrees>` line per
/// slice, ordered by strictly increasing angle. Paths are resolved against
/// the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (rel, angle) = match (parts.next(), parts.next(), parts.next()) {
            (Some(rel), Some(angle), None) => (rel, angle),
            _ => {
                return Err(Error::MalformedInput(format!(
                    "{}:{}: expected `<relative-path> <angle-degrees>`",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        let angle: f64 = angle.parse().map_err(|_| {
            Error::MalformedInput(format!(
                "{}:{}: invalid angle `{angle}`",
                path.display(),
                lineno + 1
            ))
        })?;
        entries.push(ManifestEntry {
            path: base.join(rel),
            angle_degrees: angle,
        });
    }
    if entries.is_empty() {
        return Err(Error::MalformedInput(format!(
            "{}: manifest lists no slices",
            path.display()
        )));
    }
    if entries
        .windows(2)
        .any(|w| w[0].angle_degrees >= w[1].angle_degrees)
    {
        return Err(Error::MalformedInput(format!(
            "{}: angles must be strictly increasing",
            path.display()
        )));
    }
    Ok(entries)
}

/// Writes a manifest for the given relative paths and angles.
pub fn write_manifest(path: &Path, entries: &[(String, f64)]) -> Result<()> {
    let mut out = String::new();
    for (rel, angle) in entries {
        out.push_str(&format!("{rel} {angle}\n"));
    }
    write_bytes(path, out.as_bytes())
}

/// Loads every slice listed in a manifest into a stack.
pub fn load_stack(manifest: &Path) -> Result<SliceStack> {
    let entries = read_manifest(manifest)?;
    let mut slices = Vec::with_capacity(entries.len());
    let mut angles = Vec::with_capacity(entries.len());
    for e in &entries {
        slices.push(read_gray(&e.path)?);
        angles.push(e.angle_degrees);
    }
    SliceStack::new(slices, Some(angles))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_16_bit_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = GrayImage::from_fn(5, 3, |x, y| (x + 7 * y) as f64 / 65535.0 * 931.0).unwrap();
        write_gray16(&path, &img).unwrap();
        let (raw, depth) = read_pgm(&path).unwrap();
        assert_eq!(depth, BitDepth::Sixteen);
        let back = normalize(&raw, depth).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 0.5 / 65535.0);
        }
        // writing the same image twice yields identical bytes
        let path2 = dir.path().join("y.pgm");
        write_gray16(&path2, &img).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn pgm_8_bit_reads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let mut bytes = b"P5\n# comment\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 10, 20, 30]);
        fs::write(&path, &bytes).unwrap();
        let (raw, depth) = read_pgm(&path).unwrap();
        assert_eq!(depth, BitDepth::Eight);
        assert_eq!(raw.samples, vec![0, 128, 255, 10, 20, 30]);
    }

    #[test]
    fn label_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.pgm");
        let labels = vec![0u16, 1, 2, 3, 0, 65535];
        write_labels(&path, 3, 2, &labels).unwrap();
        let (w, h, back) = read_labels(&path).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, labels);
    }

    #[test]
    fn manifest_round_trip_and_ordering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.txt");
        write_manifest(
            &path,
            &[("a.pgm".into(), -2.0), ("b.pgm".into(), 0.0), ("c.pgm".into(), 2.0)],
        )
        .unwrap();
        let entries = read_manifest(&path).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[1].path, dir.path().join("b.pgm"));

        write_manifest(&path, &[("a.pgm".into(), 2.0), ("b.pgm".into(), -2.0)]).unwrap();
        assert!(read_manifest(&path).is_err());
    }
}
