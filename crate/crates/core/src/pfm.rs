//! Portable Float Map I/O.
//!
//! "Pf" is one channel (scalar fields, masks, confidence), "PF" three
//! channels (normal maps). The scale line's sign encodes endianness;
//! rows are stored bottom-up and converted to the internal top-down
//! order here. Writing always emits little-endian with scale -1.0.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{FusionError, Result};
use crate::grids::{ScalarField, VectorField3};

/// Decoded PFM payload, one or three channels.
#[derive(Debug, Clone)]
pub enum PfmData {
    Scalar(ScalarField),
    Vector3(VectorField3),
}

struct HeaderReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> HeaderReader<R> {
    /// Reads one whitespace-terminated token.
    fn token(&mut self, path: &Path) -> Result<String> {
        let mut buf = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let n = self.inner.read(&mut byte).map_err(|e| FusionError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            if n == 0 {
                if buf.is_empty() {
                    return Err(FusionError::PfmFormat {
                        path: path.to_path_buf(),
                        offset: self.offset,
                        msg: "unexpected end of header".into(),
                    });
                }
                break;
            }
            self.offset += 1;
            if byte[0].is_ascii_whitespace() {
                if buf.is_empty() {
                    continue;
                }
                break;
            }
            buf.push(byte[0]);
        }
        String::from_utf8(buf).map_err(|_| FusionError::PfmFormat {
            path: path.to_path_buf(),
            offset: self.offset,
            msg: "non-ASCII header token".into(),
        })
    }
}

pub fn read_pfm(path: &Path) -> Result<PfmData> {
    let file = File::open(path).map_err(|e| FusionError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut reader = HeaderReader {
        inner: BufReader::new(file),
        offset: 0,
    };

    let magic = reader.token(path)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(FusionError::PfmFormat {
                path: path.to_path_buf(),
                offset: 0,
                msg: format!("bad magic {:?}", other),
            })
        }
    };

    let parse_dim = |tok: String, off: u64| -> Result<usize> {
        tok.parse::<usize>().map_err(|_| FusionError::PfmFormat {
            path: path.to_path_buf(),
            offset: off,
            msg: format!("bad dimension {:?}", tok),
        })
    };
    let width = parse_dim(reader.token(path)?, reader.offset)?;
    let height = parse_dim(reader.token(path)?, reader.offset)?;

    let scale_tok = reader.token(path)?;
    let scale: f64 = scale_tok.parse().map_err(|_| FusionError::PfmFormat {
        path: path.to_path_buf(),
        offset: reader.offset,
        msg: format!("bad scale {:?}", scale_tok),
    })?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(FusionError::PfmFormat {
            path: path.to_path_buf(),
            offset: reader.offset,
            msg: format!("non-finite or zero scale {}", scale),
        });
    }
    let little_endian = scale < 0.0;

    let count = width * height * channels;
    let mut raw = vec![0u8; count * 4];
    reader
        .inner
        .read_exact(&mut raw)
        .map_err(|_| FusionError::PfmFormat {
            path: path.to_path_buf(),
            offset: reader.offset,
            msg: format!("truncated payload, expected {} bytes", count * 4),
        })?;

    let mut samples = Vec::with_capacity(count);
    for chunk in raw.chunks_exact(4) {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let bits = if little_endian {
            u32::from_le_bytes(bytes)
        } else {
            u32::from_be_bytes(bytes)
        };
        samples.push(f32::from_bits(bits) as f64);
    }

    // PFM rows run bottom-up; flip to top-down.
    let flip = |v: usize| height - 1 - v;
    match channels {
        1 => {
            let mut values = vec![0.0; count];
            for v in 0..height {
                for u in 0..width {
                    values[v * width + u] = samples[flip(v) * width + u];
                }
            }
            Ok(PfmData::Scalar(ScalarField::new(width, height, values)?))
        }
        _ => {
            let mut values = vec![[0.0; 3]; width * height];
            for v in 0..height {
                for u in 0..width {
                    let s = (flip(v) * width + u) * 3;
                    values[v * width + u] = [samples[s], samples[s + 1], samples[s + 2]];
                }
            }
            Ok(PfmData::Vector3(VectorField3::new(width, height, values)?))
        }
    }
}

pub fn read_pfm_scalar(path: &Path) -> Result<ScalarField> {
    match read_pfm(path)? {
        PfmData::Scalar(f) => Ok(f),
        PfmData::Vector3(_) => Err(FusionError::PfmFormat {
            path: path.to_path_buf(),
            offset: 0,
            msg: "expected 1-channel PFM, found 3-channel".into(),
        }),
    }
}

pub fn read_pfm_vector3(path: &Path) -> Result<VectorField3> {
    match read_pfm(path)? {
        PfmData::Vector3(f) => Ok(f),
        PfmData::Scalar(_) => Err(FusionError::PfmFormat {
            path: path.to_path_buf(),
            offset: 0,
            msg: "expected 3-channel PFM, found 1-channel".into(),
        }),
    }
}

fn write_payload(path: &Path, magic: &str, width: usize, height: usize, data: &[f32]) -> Result<()> {
    let file = File::create(path).map_err(|e| FusionError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| FusionError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    write!(w, "{}\n{} {}\n-1.0\n", magic, width, height).map_err(io_err)?;
    for sample in data {
        w.write_all(&sample.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_pfm_scalar(field: &ScalarField, path: &Path) -> Result<()> {
    let (width, height) = (field.width(), field.height());
    let mut data = Vec::with_capacity(width * height);
    for v in (0..height).rev() {
        for u in 0..width {
            data.push(field.get(u, v) as f32);
        }
    }
    write_payload(path, "Pf", width, height, &data)
}

pub fn write_pfm_vector3(field: &VectorField3, path: &Path) -> Result<()> {
    let (width, height) = (field.width(), field.height());
    let mut data = Vec::with_capacity(width * height * 3);
    for v in (0..height).rev() {
        for u in 0..width {
            let n = field.get(u, v);
            data.extend_from_slice(&[n[0] as f32, n[1] as f32, n[2] as f32]);
        }
    }
    write_payload(path, "PF", width, height, &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // keep the dir alive for the test's duration by leaking it
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn single_pixel_roundtrip() {
        let path = tmp("one.pfm");
        let f = ScalarField::new(1, 1, vec![2.5]).unwrap();
        write_pfm_scalar(&f, &path).unwrap();
        let back = read_pfm_scalar(&path).unwrap();
        assert_eq!(back.values(), &[2.5]);
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let path1 = tmp("a.pfm");
        let path2 = tmp("b.pfm");
        let f = ScalarField::new(3, 2, vec![1.0, -2.0, 0.5, 4.0, 1e-3, 7.25]).unwrap();
        write_pfm_scalar(&f, &path1).unwrap();
        let back = read_pfm_scalar(&path1).unwrap();
        write_pfm_scalar(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path1).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn constant_normal_field_roundtrips() {
        let path = tmp("n.pfm");
        let mut n = VectorField3::zeros(2, 2);
        for v in n.values_mut() {
            *v = [0.0, 0.0, 1.0];
        }
        write_pfm_vector3(&n, &path).unwrap();
        let back = read_pfm_vector3(&path).unwrap();
        assert_eq!(back.values(), n.values());
    }

    #[test]
    fn big_endian_files_decode() {
        let path = tmp("be.pfm");
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-3.0f32).to_be_bytes());
        std::fs::write(&path, bytes).unwrap();
        let f = read_pfm_scalar(&path).unwrap();
        assert_eq!(f.values(), &[1.5, -3.0]);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let path = tmp("trunc.pfm");
        std::fs::write(&path, b"Pf\n4 4\n-1.0\n\x00\x00").unwrap();
        match read_pfm(&path) {
            Err(FusionError::PfmFormat { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let path = tmp("bad.pfm");
        std::fs::write(&path, b"P6\n1 1\n-1.0\n\x00\x00\x00\x00").unwrap();
        assert!(read_pfm(&path).is_err());
    }

    #[test]
    fn row_order_is_flipped_at_boundary() {
        // bottom-up file: first stored row is the bottom image row
        let path = tmp("rows.pfm");
        let mut bytes = b"Pf\n1 2\n-1.0\n".to_vec();
        bytes.extend_from_slice(&10.0f32.to_le_bytes()); // bottom row (v = 1)
        bytes.extend_from_slice(&20.0f32.to_le_bytes()); // top row (v = 0)
        std::fs::write(&path, bytes).unwrap();
        let f = read_pfm_scalar(&path).unwrap();
        assert_eq!(f.get(0, 0), 20.0);
        assert_eq!(f.get(0, 1), 10.0);
    }
}
