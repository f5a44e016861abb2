//! Minimal NRRD support: 3D, `raw` encoding, little-endian `float` or `uint8`.
//!
//! Anything else (gzip, ascii, detached data, big-endian) is rejected.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{LabelMap, Mask3D, Volume3D, VolumeError};

#[derive(Debug, Error)]
pub enum NrrdError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not an NRRD file (missing magic)")]
    BadMagic,
    #[error("malformed header line `{0}`")]
    BadLine(String),
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("unsupported {field}: `{value}`")]
    Unsupported { field: &'static str, value: String },
    #[error("payload has {got} bytes, expected {expected}")]
    ShortPayload { expected: usize, got: usize },
    #[error("mask value {0} is not a valid label")]
    BadMaskValue(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    Float32,
    Uint8,
}

impl ScalarType {
    fn parse(s: &str) -> Result<Self, NrrdError> {
        match s {
            "float" | "float32" => Ok(ScalarType::Float32),
            "uint8" | "uchar" | "unsigned char" | "uint8_t" => Ok(ScalarType::Uint8),
            other => Err(NrrdError::Unsupported { field: "type", value: other.to_string() }),
        }
    }

    fn size(self) -> usize {
        match self {
            ScalarType::Float32 => 4,
            ScalarType::Uint8 => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ScalarType::Float32 => "float",
            ScalarType::Uint8 => "uint8",
        }
    }
}

/// Parsed header fields this reader understands.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub scalar: ScalarType,
    pub sizes: [usize; 3],
    pub spacings: [f64; 3],
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<Header, NrrdError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if !line.starts_with("NRRD000") {
        return Err(NrrdError::BadMagic);
    }
    let mut scalar = None;
    let mut dimension = None;
    let mut sizes = None;
    let mut spacings = [1.0; 3];
    let mut encoding = None;
    let mut endian = None;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            break;
        }
        let l = line.trim_end_matches(['\n', '\r']);
        if l.is_empty() {
            break;
        }
        if l.starts_with('#') || l.contains(":=") {
            continue;
        }
        let (key, value) = l.split_once(':').ok_or_else(|| NrrdError::BadLine(l.to_string()))?;
        let value = value.trim();
        let nums = |v: &str| -> Result<Vec<String>, NrrdError> {
            let parts: Vec<String> = v.split_whitespace().map(str::to_string).collect();
            if parts.len() != 3 {
                return Err(NrrdError::BadLine(l.to_string()));
            }
            Ok(parts)
        };
        match key.trim() {
            "type" => scalar = Some(ScalarType::parse(value)?),
            "dimension" => dimension = Some(value.to_string()),
            "sizes" => {
                let p = nums(value)?;
                let mut s = [0usize; 3];
                for (k, v) in p.iter().enumerate() {
                    s[k] = v.parse().map_err(|_| NrrdError::BadLine(l.to_string()))?;
                }
                sizes = Some(s);
            }
            "spacings" => {
                let p = nums(value)?;
                for (k, v) in p.iter().enumerate() {
                    spacings[k] = v.parse().map_err(|_| NrrdError::BadLine(l.to_string()))?;
                }
            }
            "encoding" => encoding = Some(value.to_string()),
            "endian" => endian = Some(value.to_string()),
            "data file" | "datafile" => {
                return Err(NrrdError::Unsupported { field: "data file", value: value.to_string() })
            }
            _ => {}
        }
    }
    match dimension.as_deref() {
        Some("3") => {}
        Some(d) => return Err(NrrdError::Unsupported { field: "dimension", value: d.to_string() }),
        None => return Err(NrrdError::Missing("dimension")),
    }
    let scalar = scalar.ok_or(NrrdError::Missing("type"))?;
    let sizes = sizes.ok_or(NrrdError::Missing("sizes"))?;
    match encoding.as_deref() {
        Some("raw") => {}
        Some(e) => return Err(NrrdError::Unsupported { field: "encoding", value: e.to_string() }),
        None => return Err(NrrdError::Missing("encoding")),
    }
    match (scalar, endian.as_deref()) {
        (_, Some("little")) | (ScalarType::Uint8, None) => {}
        (_, Some(e)) => return Err(NrrdError::Unsupported { field: "endian", value: e.to_string() }),
        (_, None) => return Err(NrrdError::Missing("endian")),
    }
    Ok(Header { scalar, sizes, spacings })
}

fn read_payload<R: Read>(r: &mut R, h: &Header) -> Result<Vec<f64>, NrrdError> {
    let n = h.sizes.iter().product::<usize>();
    let expected = n * h.scalar.size();
    let mut buf = Vec::with_capacity(expected);
    r.take(expected as u64).read_to_end(&mut buf)?;
    if buf.len() != expected {
        return Err(NrrdError::ShortPayload { expected, got: buf.len() });
    }
    Ok(match h.scalar {
        ScalarType::Float32 => buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        ScalarType::Uint8 => buf.iter().map(|&b| b as f64).collect(),
    })
}

pub fn read_volume_from<R: BufRead>(mut r: R) -> Result<Volume3D, NrrdError> {
    let h = parse_header(&mut r)?;
    let data = read_payload(&mut r, &h)?;
    Ok(Volume3D::new(h.sizes, h.spacings, data)?)
}

/// Read a label mask. With `labels = None`, every value present is declared.
pub fn read_mask_from<R: BufRead>(mut r: R, labels: Option<LabelMap>) -> Result<Mask3D, NrrdError> {
    let h = parse_header(&mut r)?;
    let raw = read_payload(&mut r, &h)?;
    let mut data = Vec::with_capacity(raw.len());
    for v in raw {
        if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
            return Err(NrrdError::BadMaskValue(v));
        }
        data.push(v as u8);
    }
    let labels = labels.unwrap_or_else(|| LabelMap::from_present(&data));
    Ok(Mask3D::new(h.sizes, h.spacings, data, labels)?)
}

fn write_header<W: Write>(w: &mut W, scalar: ScalarType, dims: [usize; 3], spacing: [f64; 3]) -> io::Result<()> {
    writeln!(w, "NRRD0004")?;
    writeln!(w, "type: {}", scalar.name())?;
    writeln!(w, "dimension: 3")?;
    writeln!(w, "sizes: {} {} {}", dims[0], dims[1], dims[2])?;
    writeln!(w, "spacings: {} {} {}", spacing[0], spacing[1], spacing[2])?;
    writeln!(w, "encoding: raw")?;
    writeln!(w, "endian: little")?;
    writeln!(w)
}

/// Write as little-endian float32 (values are narrowed from f64).
pub fn write_volume_to<W: Write>(mut w: W, vol: &Volume3D) -> io::Result<()> {
    write_header(&mut w, ScalarType::Float32, vol.dims(), vol.spacing())?;
    let mut buf = Vec::with_capacity(vol.data().len() * 4);
    for &v in vol.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn write_mask_to<W: Write>(mut w: W, mask: &Mask3D) -> io::Result<()> {
    write_header(&mut w, ScalarType::Uint8, mask.dims(), mask.spacing())?;
    w.write_all(mask.data())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D, NrrdError> {
    read_volume_from(BufReader::new(File::open(path)?))
}

pub fn read_mask(path: impl AsRef<Path>, labels: Option<LabelMap>) -> Result<Mask3D, NrrdError> {
    read_mask_from(BufReader::new(File::open(path)?), labels)
}

pub fn write_volume(path: impl AsRef<Path>, vol: &Volume3D) -> io::Result<()> {
    let mut f = io::BufWriter::new(File::create(path)?);
    write_volume_to(&mut f, vol)?;
    f.flush()
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask3D) -> io::Result<()> {
    let mut f = io::BufWriter::new(File::create(path)?);
    write_mask_to(&mut f, mask)?;
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(extra: &str) -> Vec<u8> {
        format!("NRRD0004\ntype: uint8\ndimension: 3\nsizes: 2 1 1\n{extra}\n\n").into_bytes()
    }

    #[test]
    fn volume_round_trip_is_exact_for_f32_values() {
        let data: Vec<f64> = (0..24).map(|i| (i as f32 * 0.37 - 3.0) as f64).collect();
        let vol = Volume3D::new([2, 3, 4], [0.5, 1.25, 2.0], data).unwrap();
        let mut buf = Vec::new();
        write_volume_to(&mut buf, &vol).unwrap();
        let back = read_volume_from(&buf[..]).unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn mask_round_trip() {
        let mask = Mask3D::new([2, 2, 1], [1.0; 3], vec![0, 1, 2, 3], LabelMap::liver_tumor_spleen()).unwrap();
        let mut buf = Vec::new();
        write_mask_to(&mut buf, &mask).unwrap();
        let text = String::from_utf8_lossy(&buf);
        assert!(text.starts_with("NRRD0004\ntype: uint8\ndimension: 3\nsizes: 2 2 1\n"));
        let back = read_mask_from(&buf[..], Some(LabelMap::liver_tumor_spleen())).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn rejects_non_raw_encodings() {
        let mut bytes = header("encoding: gzip");
        bytes.extend([0, 0]);
        assert!(matches!(
            read_volume_from(&bytes[..]),
            Err(NrrdError::Unsupported { field: "encoding", .. })
        ));
    }

    #[test]
    fn rejects_big_endian_float() {
        let bytes = b"NRRD0004\ntype: float\ndimension: 3\nsizes: 1 1 1\nencoding: raw\nendian: big\n\n\0\0\0\0";
        assert!(matches!(read_volume_from(&bytes[..]), Err(NrrdError::Unsupported { field: "endian", .. })));
    }

    #[test]
    fn short_payload_and_missing_fields() {
        let mut bytes = header("encoding: raw");
        bytes.push(1);
        assert!(matches!(read_volume_from(&bytes[..]), Err(NrrdError::ShortPayload { expected: 2, got: 1 })));
        let bytes = b"NRRD0004\ntype: uint8\nsizes: 1 1 1\nencoding: raw\n\n\0";
        assert!(matches!(read_volume_from(&bytes[..]), Err(NrrdError::Missing("dimension"))));
        assert!(matches!(read_volume_from(&b"P6\n"[..]), Err(NrrdError::BadMagic)));
    }

    #[test]
    fn comments_and_key_values_are_skipped() {
        let bytes = b"NRRD0005\n# made by hand\ntype: uchar\ndimension: 3\nspace:=ignored\nsizes: 1 1 2\nspacings: 2 2 3\nencoding: raw\n\n\x01\x02";
        let v = read_volume_from(&bytes[..]).unwrap();
        assert_eq!(v.data(), &[1.0, 2.0]);
        assert_eq!(v.spacing(), [2.0, 2.0, 3.0]);
    }
}
