//! Binary PGM (`P5`) and PPM (`P6`) with 8-bit samples.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PNM: {0}")]
    Format(String),
}

/// Interleaved 8-bit image, 1 channel (PGM) or 3 channels (PPM).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl PnmImage {
    pub fn header(&self) -> String {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        format!("{magic}\n{} {}\n255\n", self.width, self.height)
    }

    pub fn encode(&self) -> Vec<u8> {
        assert!(self.channels == 1 || self.channels == 3);
        assert_eq!(self.data.len(), self.width * self.height * self.channels);
        let mut out = self.header().into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PnmError> {
        let mut pos = 0;
        let mut token = || -> Result<String, PnmError> {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err(PnmError::Format("truncated header".into())),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
                pos += 1;
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let channels = match token()?.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(PnmError::Format(format!("unsupported magic {other:?}"))),
        };
        let mut number = |what: &str| -> Result<usize, PnmError> {
            let t = token()?;
            t.parse().map_err(|_| PnmError::Format(format!("bad {what} {t:?}")))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval != 255 {
            return Err(PnmError::Format(format!("only maxval 255 is supported, got {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
            return Err(PnmError::Format("missing raster separator".into()));
        }
        pos += 1;
        let need = width * height * channels;
        let raster = &bytes[pos.min(bytes.len())..];
        if raster.len() != need {
            return Err(PnmError::Format(format!("raster has {} bytes, expected {need}", raster.len())));
        }
        Ok(Self { width, height, channels, data: raster.to_vec() })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), PnmError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, PnmError> {
        Self::decode(&fs::read(path)?)
    }
}
