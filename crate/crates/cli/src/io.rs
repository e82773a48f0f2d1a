//! Image and coefficient file formats.
//!
//! * PGM (`P2` ASCII / `P5` binary) with maxval 255 or 65535; 16-bit binary
//!   samples are big-endian.
//! * `F64` rasters: the ASCII line `F64 <width> <height>\n` followed by
//!   `width*height` little-endian IEEE-754 doubles, row-major.
//! * Decomposition directories: one `F64` raster per subband (`LL.f64`,
//!   `LH1.f64`, `HL1.f64`, `HH1.f64`, ...) and a `manifest.txt` holding
//!   `J=<levels> R=<rows> C=<cols>`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nshrink_core::wavelet::{Decomposition, DetailLevel, Orientation, SubbandId};
use nshrink_core::Raster;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {error}")]
    Io { path: PathBuf, error: std::io::Error },
    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}: truncated payload: expected {expected} samples, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: unsupported maxval {maxval} (expected 255 or 65535)")]
    UnsupportedMaxval { path: PathBuf, maxval: u64 },
    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: String },
    #[error("{path}: size mismatch: header declares {expected} bytes of samples, found {found}")]
    SizeMismatch { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

pub type FormatResult<T> = Result<T, FormatError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |error| FormatError::Io { path: path.to_path_buf(), error }
}

/// Sample layout of an image file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelFormat {
    Gray8,
    Gray16,
    Float64,
}

/// Format tag plus the maximum representable value for integer formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageHeader {
    pub format: PixelFormat,
    pub max_value: Option<u32>,
}

impl ImageHeader {
    pub const GRAY8: ImageHeader = ImageHeader { format: PixelFormat::Gray8, max_value: Some(255) };
    pub const GRAY16: ImageHeader = ImageHeader { format: PixelFormat::Gray16, max_value: Some(65535) };
    pub const FLOAT64: ImageHeader = ImageHeader { format: PixelFormat::Float64, max_value: None };

    /// The smallest integer format holding `raster` without clamping its top end.
    pub fn preview_for(raster: &Raster) -> ImageHeader {
        if raster.samples().iter().any(|&v| v > 255.5) {
            Self::GRAY16
        } else {
            Self::GRAY8
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PnmEncoding {
    Ascii,
    #[default]
    Binary,
}

/// Splits the PNM header into its four fields and returns the payload offset.
fn pnm_header(data: &[u8], path: &Path) -> FormatResult<([String; 4], usize)> {
    let malformed = |reason: &str| FormatError::MalformedHeader { path: path.to_path_buf(), reason: reason.into() };
    let mut fields: Vec<String> = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < data.len() && (data[i].is_ascii_whitespace() || data[i] == b'#') {
            if data[i] == b'#' {
                while i < data.len() && data[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < data.len() && !data[i].is_ascii_whitespace() && data[i] != b'#' {
            i += 1;
        }
        if start == i {
            return Err(malformed("header ends early"));
        }
        fields.push(String::from_utf8_lossy(&data[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates maxval from the payload.
    if i >= data.len() || !data[i].is_ascii_whitespace() {
        if fields[0] == "P5" || i < data.len() {
            return Err(malformed("missing whitespace after maxval"));
        }
    } else {
        i += 1;
    }
    Ok((fields.try_into().expect("four fields"), i))
}

/// Reads a grayscale PGM (`P2` or `P5`, maxval 255 or 65535).
pub fn read_pgm(path: &Path) -> FormatResult<Raster> {
    let data = fs::read(path).map_err(io_err(path))?;
    parse_pgm(&data, path)
}

pub fn parse_pgm(data: &[u8], path: &Path) -> FormatResult<Raster> {
    let magic = String::from_utf8_lossy(&data[..data.len().min(2)]).into_owned();
    if magic != "P2" && magic != "P5" {
        return Err(FormatError::BadMagic { path: path.to_path_buf(), found: magic });
    }
    let (fields, offset) = pnm_header(data, path)?;
    let number = |s: &str, what: &str| {
        s.parse::<u64>().map_err(|_| FormatError::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("{what} '{s}' is not a non-negative integer"),
        })
    };
    let width = number(&fields[1], "width")? as usize;
    let height = number(&fields[2], "height")? as usize;
    let maxval = number(&fields[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(FormatError::MalformedHeader { path: path.to_path_buf(), reason: "zero dimension".into() });
    }
    if maxval != 255 && maxval != 65535 {
        return Err(FormatError::UnsupportedMaxval { path: path.to_path_buf(), maxval });
    }
    let expected = width * height;
    let payload = &data[offset..];
    let samples: Vec<f64> = if magic == "P5" {
        let bytes = if maxval == 255 { 1 } else { 2 };
        if payload.len() < expected * bytes {
            return Err(FormatError::Truncated { path: path.to_path_buf(), expected, found: payload.len() / bytes });
        }
        if bytes == 1 {
            payload[..expected].iter().map(|&b| b as f64).collect()
        } else {
            payload[..expected * 2].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64).collect()
        }
    } else {
        let text = std::str::from_utf8(payload).map_err(|_| FormatError::Invalid {
            path: path.to_path_buf(),
            reason: "P2 payload is not ASCII".into(),
        })?;
        let mut out = Vec::with_capacity(expected);
        for tok in text.split_ascii_whitespace().take(expected) {
            let v = tok.parse::<u64>().map_err(|_| FormatError::Invalid {
                path: path.to_path_buf(),
                reason: format!("sample '{tok}' is not an integer"),
            })?;
            out.push(v as f64);
        }
        if out.len() < expected {
            return Err(FormatError::Truncated { path: path.to_path_buf(), expected, found: out.len() });
        }
        out
    };
    if let Some(v) = samples.iter().find(|&&v| v > maxval as f64) {
        return Err(FormatError::Invalid { path: path.to_path_buf(), reason: format!("sample {v} exceeds maxval {maxval}") });
    }
    Raster::new(width, height, samples)
        .map_err(|e| FormatError::Invalid { path: path.to_path_buf(), reason: e.to_string() })
}

/// Clamps to `[0, maxval]` and rounds half away from zero.
pub fn quantize(v: f64, maxval: u32) -> u32 {
    v.clamp(0.0, maxval as f64).round() as u32
}

pub fn encode_pgm(raster: &Raster, header: ImageHeader, encoding: PnmEncoding) -> Result<Vec<u8>, String> {
    let maxval = match header.format {
        PixelFormat::Gray8 => 255,
        PixelFormat::Gray16 => 65535,
        PixelFormat::Float64 => return Err("PGM cannot hold float64 samples; use the F64 format".into()),
    };
    let magic = match encoding {
        PnmEncoding::Ascii => "P2",
        PnmEncoding::Binary => "P5",
    };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", raster.width(), raster.height()).into_bytes();
    let values = raster.samples().iter().map(|&v| quantize(v, maxval));
    match encoding {
        PnmEncoding::Binary if maxval == 255 => out.extend(values.map(|v| v as u8)),
        PnmEncoding::Binary => values.for_each(|v| out.extend_from_slice(&(v as u16).to_be_bytes())),
        PnmEncoding::Ascii => {
            for (i, v) in values.enumerate() {
                let sep = if (i + 1) % raster.width() == 0 { '\n' } else { ' ' };
                out.extend_from_slice(format!("{v}{sep}").as_bytes());
            }
        }
    }
    Ok(out)
}

/// Writes a PGM after clamping to `[0, maxval]` and rounding.
pub fn write_pgm(raster: &Raster, header: ImageHeader, encoding: PnmEncoding, path: &Path) -> FormatResult<()> {
    let bytes = encode_pgm(raster, header, encoding)
        .map_err(|reason| FormatError::Invalid { path: path.to_path_buf(), reason })?;
    write_atomic(path, &bytes)
}

pub fn encode_f64(raster: &Raster) -> Vec<u8> {
    let mut out = format!("F64 {} {}\n", raster.width(), raster.height()).into_bytes();
    out.reserve(raster.len() * 8);
    for v in raster.samples() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_f64(data: &[u8], path: &Path) -> FormatResult<Raster> {
    let nl = data.iter().position(|&b| b == b'\n').ok_or_else(|| FormatError::MalformedHeader {
        path: path.to_path_buf(),
        reason: "missing header line".into(),
    })?;
    let header = String::from_utf8_lossy(&data[..nl]);
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.first() != Some(&"F64") {
        return Err(FormatError::BadMagic { path: path.to_path_buf(), found: parts.first().unwrap_or(&"").to_string() });
    }
    let dims: Option<(usize, usize)> = match parts.as_slice() {
        [_, w, h] => w.parse().ok().zip(h.parse().ok()),
        _ => None,
    };
    let (width, height) = dims.ok_or_else(|| FormatError::MalformedHeader {
        path: path.to_path_buf(),
        reason: format!("expected 'F64 <width> <height>', got '{header}'"),
    })?;
    let payload = &data[nl + 1..];
    let expected = width * height * 8;
    if payload.len() != expected {
        return Err(FormatError::SizeMismatch { path: path.to_path_buf(), expected, found: payload.len() });
    }
    let samples = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    Raster::new(width, height, samples)
        .map_err(|e| FormatError::Invalid { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn read_f64_raster(path: &Path) -> FormatResult<Raster> {
    let data = fs::read(path).map_err(io_err(path))?;
    parse_f64(&data, path)
}

pub fn write_f64_raster(raster: &Raster, path: &Path) -> FormatResult<()> {
    write_atomic(path, &encode_f64(raster))
}

/// Reads either format, chosen by the file's magic bytes.
pub fn read_image(path: &Path) -> FormatResult<Raster> {
    let data = fs::read(path).map_err(io_err(path))?;
    if data.starts_with(b"F64") {
        parse_f64(&data, path)
    } else {
        parse_pgm(&data, path)
    }
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> FormatResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| FormatError::Io { path: path.to_path_buf(), error: e.error })?;
    Ok(())
}

pub const MANIFEST: &str = "manifest.txt";

fn subband_file(id: SubbandId) -> String {
    format!("{}{}.f64", id.orientation, id.level)
}

pub fn write_decomposition(d: &Decomposition, dir: &Path) -> FormatResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_f64_raster(d.approx(), &dir.join("LL.f64"))?;
    for id in d.subband_ids() {
        write_f64_raster(d.detail(id).expect("subband id"), &dir.join(subband_file(id)))?;
    }
    let manifest = format!("J={} R={} C={}\n", d.levels(), d.rows(), d.cols());
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

pub fn read_decomposition(dir: &Path) -> FormatResult<Decomposition> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let mut vals = [None; 3];
    for tok in text.split_whitespace() {
        let (k, v) = tok.split_once('=').unwrap_or((tok, ""));
        let slot = match k {
            "J" => 0,
            "R" => 1,
            "C" => 2,
            _ => continue,
        };
        vals[slot] = v.parse::<usize>().ok();
    }
    let [Some(levels), Some(rows), Some(cols)] = vals else {
        return Err(FormatError::MalformedHeader {
            path: mpath,
            reason: format!("expected 'J=<levels> R=<rows> C=<cols>', got '{}'", text.trim()),
        });
    };
    let approx = read_f64_raster(&dir.join("LL.f64"))?;
    let mut details = Vec::with_capacity(levels);
    for j in 1..=levels {
        let band = |o| read_f64_raster(&dir.join(subband_file(SubbandId::new(j, o))));
        details.push(DetailLevel { lh: band(Orientation::LH)?, hl: band(Orientation::HL)?, hh: band(Orientation::HH)? });
    }
    Decomposition::new(approx, details, rows, cols).map_err(|e| FormatError::Invalid { path: mpath, reason: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nshrink_core::wavelet::{dwt2_forward, haar_filters};
    use proptest::prelude::*;

    fn p(name: &str) -> PathBuf {
        PathBuf::from(name)
    }

    #[test]
    fn ascii_pgm_example() {
        let r = parse_pgm(b"P2\n2 2\n255\n0 255 128 64", &p("a.pgm")).unwrap();
        assert_eq!((r.width(), r.height()), (2, 2));
        assert_eq!(r.samples(), &[0.0, 255.0, 128.0, 64.0]);
        let c = parse_pgm(b"P2\n# comment\n2 # inline\n2\n255\n1 2\n3 4\n", &p("c.pgm")).unwrap();
        assert_eq!(c.samples(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pgm_errors_are_distinct() {
        let path = p("x.pgm");
        assert!(matches!(parse_pgm(b"P2\n2 2\n255\n0 255 128", &path), Err(FormatError::Truncated { expected: 4, found: 3, .. })));
        assert!(matches!(parse_pgm(b"P5\n2 2\n255\n\x00\x01\x02", &path), Err(FormatError::Truncated { .. })));
        assert!(matches!(parse_pgm(b"P2\n2 2\n1023\n0 1 2 3", &path), Err(FormatError::UnsupportedMaxval { maxval: 1023, .. })));
        assert!(matches!(parse_pgm(b"P2\n2 x\n255\n0 1 2 3", &path), Err(FormatError::MalformedHeader { .. })));
        assert!(matches!(parse_pgm(b"P2\n2 2\n", &path), Err(FormatError::MalformedHeader { .. })));
        assert!(matches!(parse_pgm(b"P6\n1 1\n255\n000", &path), Err(FormatError::BadMagic { .. })));
        let msg = parse_pgm(b"P2\n2 2\n255\n0 255 128", &path).unwrap_err().to_string();
        assert!(msg.contains("x.pgm") && msg.contains("truncated"));
    }

    #[test]
    fn sixteen_bit_is_big_endian() {
        let r = parse_pgm(b"P5\n2 1\n65535\n\x01\x02\xff\xff", &p("b.pgm")).unwrap();
        assert_eq!(r.samples(), &[258.0, 65535.0]);
        let bytes = encode_pgm(&r, ImageHeader::GRAY16, PnmEncoding::Binary).unwrap();
        assert!(bytes.ends_with(b"\x01\x02\xff\xff"));
    }

    #[test]
    fn full_size_16_bit() {
        let r = Raster::from_fn(242, 242, |r, c| ((r * 242 + c) * 7 % 65536) as f64);
        let bytes = encode_pgm(&r, ImageHeader::GRAY16, PnmEncoding::Binary).unwrap();
        let back = parse_pgm(&bytes, &p("big.pgm")).unwrap();
        assert_eq!(back.len(), 58564);
        assert_eq!(back, r);
    }

    #[test]
    fn write_clamps_and_rounds() {
        let hi = Raster::new(1, 1, vec![255.4]).unwrap();
        assert!(encode_pgm(&hi, ImageHeader::GRAY8, PnmEncoding::Binary).unwrap().ends_with(&[255]));
        let lo = Raster::new(1, 1, vec![-3.0]).unwrap();
        assert!(encode_pgm(&lo, ImageHeader::GRAY8, PnmEncoding::Binary).unwrap().ends_with(&[0]));
        assert_eq!(quantize(2.5, 255), 3);
        assert_eq!(quantize(1.49, 255), 1);
        assert_eq!(quantize(70000.0, 65535), 65535);
        assert!(encode_pgm(&lo, ImageHeader::FLOAT64, PnmEncoding::Binary).is_err());
    }

    #[test]
    fn pgm_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::new(2, 2, vec![0.0, 255.0, 128.0, 64.0]).unwrap();
        for enc in [PnmEncoding::Ascii, PnmEncoding::Binary] {
            let path = dir.path().join("rt.pgm");
            write_pgm(&r, ImageHeader::GRAY8, enc, &path).unwrap();
            assert_eq!(read_pgm(&path).unwrap(), r);
            assert_eq!(read_image(&path).unwrap(), r);
        }
    }

    #[test]
    fn f64_examples() {
        let r = Raster::new(1, 1, vec![0.1]).unwrap();
        let back = parse_f64(&encode_f64(&r), &p("a.f64")).unwrap();
        assert_eq!(back.samples()[0].to_bits(), 0.1f64.to_bits());
        let mut bad = b"F64 2 2\n".to_vec();
        bad.extend(std::iter::repeat_n(0u8, 24));
        assert!(matches!(parse_f64(&bad, &p("b.f64")), Err(FormatError::SizeMismatch { expected: 32, found: 24, .. })));
        assert!(matches!(parse_f64(b"F32 1 1\n00000000", &p("c.f64")), Err(FormatError::BadMagic { .. })));
        assert!(matches!(parse_f64(b"F64 1\n00000000", &p("d.f64")), Err(FormatError::MalformedHeader { .. })));
        let mut nan = b"F64 1 1\n".to_vec();
        nan.extend(f64::NAN.to_le_bytes());
        assert!(matches!(parse_f64(&nan, &p("e.f64")), Err(FormatError::Invalid { .. })));
    }

    #[test]
    fn decomposition_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Raster::from_fn(16, 8, |r, c| (r * 3 + c * c) as f64 * 0.37);
        let d = dwt2_forward(&img, &haar_filters(), 2).unwrap();
        write_decomposition(&d, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join(MANIFEST)).unwrap(), "J=2 R=8 C=16\n");
        for name in ["LL.f64", "LH1.f64", "HL1.f64", "HH1.f64", "LH2.f64", "HL2.f64", "HH2.f64"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        assert_eq!(read_decomposition(dir.path()).unwrap(), d);
        fs::write(dir.path().join(MANIFEST), "J=3 R=8 C=16\n").unwrap();
        assert!(read_decomposition(dir.path()).is_err());
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(w in 1usize..6, h in 1usize..6, vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 36)) {
            let r = Raster::new(w, h, vals[..w * h].to_vec()).unwrap();
            let back = parse_f64(&encode_f64(&r), Path::new("p.f64")).unwrap();
            prop_assert!(r.samples().iter().zip(back.samples()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn pgm_round_trip_integer_rasters(w in 1usize..8, h in 1usize..8, sixteen in any::<bool>(), ascii in any::<bool>(), seed in any::<u32>()) {
            let max = if sixteen { 65535u64 } else { 255 };
            let r = Raster::from_fn(w, h, |r, c| ((seed as u64).wrapping_mul(2654435761).wrapping_add((r * 31 + c * 17) as u64 * 40503) % (max + 1)) as f64);
            let header = if sixteen { ImageHeader::GRAY16 } else { ImageHeader::GRAY8 };
            let enc = if ascii { PnmEncoding::Ascii } else { PnmEncoding::Binary };
            let back = parse_pgm(&encode_pgm(&r, header, enc).unwrap(), Path::new("p.pgm")).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
