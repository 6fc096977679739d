//! Binary PGM (P5) reader and writer, 8- and 16-bit.
//!
//! Round trips are bit-exact: the writer emits a canonical header and the
//! raw sample data unchanged (16-bit samples big-endian, per the format).

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Raw PGM image: integer levels `0..=maxval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples; always stored widened to u16.
    pub data: Vec<u16>,
}

pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    parse_pgm(&mut reader).map_err(|e| match e {
        PgmError::Io(io) => Error::io(path, io),
        PgmError::Format(msg) => Error::data(format!("{}: {msg}", path.display())),
    })
}

pub fn write_pgm(path: &Path, image: &PgmImage) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    emit_pgm(&mut w, image).map_err(|e| Error::io(path, e))
}

enum PgmError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for PgmError {
    fn from(e: std::io::Error) -> Self {
        PgmError::Io(e)
    }
}

/// Read one header token, skipping whitespace and `#` comments.
fn read_token(r: &mut impl BufRead) -> std::result::Result<String, PgmError> {
    let mut token = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        match r.read_exact(&mut byte) {
            Ok(()) => {}
            Err(e) => {
                if !token.is_empty() && e.kind() == std::io::ErrorKind::UnexpectedEof {
                    return Ok(token);
                }
                return Err(PgmError::Io(e));
            }
        }
        let b = byte[0];
        if in_comment {
            if b == b'\n' {
                in_comment = false;
            }
            continue;
        }
        match b {
            b'#' => in_comment = true,
            b' ' | b'\t' | b'\r' | b'\n' => {
                if !token.is_empty() {
                    return Ok(token);
                }
            }
            _ => token.push(b as char),
        }
    }
}

fn parse_pgm(r: &mut impl BufRead) -> std::result::Result<PgmImage, PgmError> {
    let magic = read_token(r)?;
    if magic != "P5" {
        return Err(PgmError::Format(format!("expected binary PGM magic P5, got {magic:?}")));
    }
    let parse_dim = |tok: String, what: &str| -> std::result::Result<usize, PgmError> {
        tok.parse::<usize>()
            .map_err(|_| PgmError::Format(format!("bad {what} {tok:?}")))
    };
    let width = parse_dim(read_token(r)?, "width")?;
    let height = parse_dim(read_token(r)?, "height")?;
    let maxval: u32 = read_token(r)?
        .parse()
        .map_err(|_| PgmError::Format("bad maxval".to_string()))?;
    if width == 0 || height == 0 {
        return Err(PgmError::Format(format!("degenerate image {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::Format(format!("maxval {maxval} out of range 1..=65535")));
    }
    // A single whitespace byte separates the header from the raster; the
    // token reader has already consumed it.
    let maxval = maxval as u16;
    let count = width * height;
    let mut data = Vec::with_capacity(count);
    if maxval < 256 {
        let mut buf = vec![0u8; count];
        r.read_exact(&mut buf)?;
        data.extend(buf.into_iter().map(u16::from));
    } else {
        let mut buf = vec![0u8; count * 2];
        r.read_exact(&mut buf)?;
        data.extend(buf.chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]])));
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => {}
        _ => return Err(PgmError::Format("trailing bytes after raster".to_string())),
    }
    if let Some(&bad) = data.iter().find(|&&v| v > maxval) {
        return Err(PgmError::Format(format!("sample {bad} exceeds maxval {maxval}")));
    }
    Ok(PgmImage {
        width,
        height,
        maxval,
        data,
    })
}

fn emit_pgm(w: &mut impl Write, image: &PgmImage) -> std::io::Result<()> {
    debug_assert_eq!(image.data.len(), image.width * image.height);
    write!(w, "P5\n{} {}\n{}\n", image.width, image.height, image.maxval)?;
    if image.maxval < 256 {
        let bytes: Vec<u8> = image.data.iter().map(|&v| v as u8).collect();
        w.write_all(&bytes)?;
    } else {
        let mut bytes = Vec::with_capacity(image.data.len() * 2);
        for &v in &image.data {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        w.write_all(&bytes)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(image: &PgmImage) -> (Vec<u8>, PgmImage) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        write_pgm(&path, image).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let loaded = read_pgm(&path).unwrap();
        (bytes, loaded)
    }

    #[test]
    fn eight_bit_round_trip_is_bit_exact() {
        let image = PgmImage {
            width: 5,
            height: 3,
            maxval: 255,
            data: (0..15).map(|v| (v * 17 % 256) as u16).collect(),
        };
        let (bytes, loaded) = round_trip(&image);
        assert_eq!(loaded, image);
        // Writing the loaded image again reproduces the same file bytes.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("again.pgm");
        write_pgm(&path, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn sixteen_bit_round_trip_is_bit_exact() {
        let image = PgmImage {
            width: 4,
            height: 4,
            maxval: 65535,
            data: (0..16).map(|v| (v * 4099) as u16).collect(),
        };
        let (_, loaded) = round_trip(&image);
        assert_eq!(loaded, image);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        std::fs::write(&path, &bytes).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.width, 2);
        assert_eq!(img.data, vec![1, 2, 3, 4]);
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut bytes = b"P5\n3 3\n255\n".to_vec();
        bytes.extend_from_slice(&[0; 8]); // one byte short
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_pgm(&path).is_err());
    }

    #[test]
    fn ascii_pgm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        std::fs::write(&path, b"P2\n2 2\n255\n1 2 3 4\n").unwrap();
        let err = read_pgm(&path).unwrap_err();
        assert!(err.to_string().contains("P5"));
    }
}
