//! Binary PGM (`P5`) images at 8 or 16 bits, with a JSON sidecar holding the
//! affine map from stored levels back to real values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;

/// `value = lo + level / maxval · (hi - lo)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub lo: f64,
    pub hi: f64,
    pub bits: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn maxval(bits: u8) -> Result<u32> {
    match bits {
        8 => Ok(255),
        16 => Ok(65535),
        b => Err(CmdmError::invalid(format!("unsupported bit depth {b}"))),
    }
}

/// Encodes `grid` mapping `[lo, hi]` linearly onto the full level range;
/// values outside are clamped.
pub fn encode(grid: &Grid2D, bits: u8, lo: f64, hi: f64) -> Result<Vec<u8>> {
    let max = maxval(bits)?;
    if !(hi > lo && lo.is_finite() && hi.is_finite()) {
        return Err(CmdmError::invalid(format!(
            "invalid intensity range [{lo}, {hi}]"
        )));
    }
    let mut out = format!("P5\n{} {}\n{}\n", grid.width(), grid.height(), max).into_bytes();
    for &v in grid.data() {
        let q = ((v - lo) / (hi - lo) * max as f64)
            .round()
            .clamp(0.0, max as f64) as u32;
        if bits == 8 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> CmdmError {
        CmdmError::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<u32> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CmdmError::Parse {
                offset: start,
                message: "number out of range".into(),
            })
    }
}

/// Decodes a `P5` image into levels scaled to `[0, 1]`, plus its maxval.
pub fn decode(bytes: &[u8]) -> Result<(Grid2D, u32)> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(c.err("missing P5 magic"));
    }
    c.pos = 2;
    let width = c.number()? as usize;
    let height = c.number()? as usize;
    let max = c.number()?;
    if width == 0 || height == 0 {
        return Err(c.err("zero image dimension"));
    }
    if max == 0 || max > 65535 {
        return Err(c.err(format!("maxval {max} outside 1..=65535")));
    }
    if c.pos >= bytes.len() || !bytes[c.pos].is_ascii_whitespace() {
        return Err(c.err("expected a single whitespace byte after the header"));
    }
    c.pos += 1;
    let per = if max < 256 { 1 } else { 2 };
    let need = width * height * per;
    if bytes.len() - c.pos < need {
        return Err(CmdmError::Parse {
            offset: bytes.len(),
            message: format!(
                "truncated pixel data: need {need} bytes after offset {}",
                c.pos
            ),
        });
    }
    let px = &bytes[c.pos..c.pos + need];
    let data: Vec<f64> = if per == 1 {
        px.iter().map(|&b| b as f64 / max as f64).collect()
    } else {
        px.chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / max as f64)
            .collect()
    };
    Ok((Grid2D::from_vec(height, width, data)?, max))
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `grid` spanning its own value range and a sidecar next to it.
pub fn write_image(path: &Path, grid: &Grid2D, bits: u8, config_hash: Option<&str>) -> Result<()> {
    let lo = grid.min();
    let hi = if grid.max() > lo {
        grid.max()
    } else {
        lo + 1.0
    };
    write_image_range(path, grid, bits, lo, hi, config_hash)
}

/// Writes `grid` with an explicit `[lo, hi]` mapping.
pub fn write_image_range(
    path: &Path,
    grid: &Grid2D,
    bits: u8,
    lo: f64,
    hi: f64,
    config_hash: Option<&str>,
) -> Result<()> {
    std::fs::write(path, encode(grid, bits, lo, hi)?)?;
    let side = Sidecar {
        lo,
        hi,
        bits,
        config_hash: config_hash.map(str::to_owned),
    };
    let json =
        serde_json::to_string_pretty(&side).map_err(|e| CmdmError::invalid(e.to_string()))?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads an image and applies its sidecar mapping; without a sidecar the
/// levels are returned on `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Grid2D> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CmdmError::NotFound(path.display().to_string()),
        _ => CmdmError::Io(e),
    })?;
    let (levels, _) = decode(&bytes)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(levels);
    }
    let text = std::fs::read_to_string(&side)?;
    let s: Sidecar = serde_json::from_str(&text).map_err(|e| CmdmError::Parse {
        offset: 0,
        message: format!("{}: {e}", side.display()),
    })?;
    levels.map(|v| s.lo + v * (s.hi - s.lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random(seed: u64) -> Grid2D {
        let mut r = RngStream::derive(seed, &[]);
        Grid2D::from_fn(7, 5, |_, _| r.uniform()).unwrap()
    }

    #[test]
    fn sixteen_bit_roundtrip_error_is_within_one_level() {
        let g = random(1);
        let (back, max) = decode(&encode(&g, 16, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(max, 65535);
        for (a, b) in g.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 65535.0);
        }
    }

    #[test]
    fn eight_bit_header_and_comments() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let (g, _) = decode(&bytes).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0]);
    }

    #[test]
    fn malformed_files_report_offsets() {
        let full = encode(&random(2), 16, 0.0, 1.0).unwrap();
        match decode(&full[..full.len() - 3]) {
            Err(CmdmError::Parse { offset, .. }) => assert_eq!(offset, full.len() - 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            decode(b"P6\n1 1\n255\n\0"),
            Err(CmdmError::Parse { offset: 0, .. })
        ));
        assert!(matches!(
            decode(b"P5\n1 x\n"),
            Err(CmdmError::Parse { offset: 5, .. })
        ));
    }

    #[test]
    fn sidecar_restores_value_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let g = random(3).map(|v| v * 40.0 - 7.0).unwrap();
        write_image(&p, &g, 16, Some("abc")).unwrap();
        let back = read_image(&p).unwrap();
        let step = (g.max() - g.min()) / 65535.0;
        for (a, b) in g.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 * step + 1e-12);
        }
        assert!((back.min() - g.min()).abs() < 1e-12 && (back.max() - g.max()).abs() < 1e-12);
    }
}
