//! Binary netpbm: P6 (RGB) images and P5 (grayscale) maps, maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Result, SumError};
use crate::tensor::Tensor;

/// Raw 8-bit raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// 3 for P6, 1 for P5.
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) || data.len() != width * height * channels {
            return Err(SumError::shape(format!(
                "raster {width}x{height}x{channels} with {} bytes",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// `path` only labels errors.
    pub fn decode(bytes: &[u8], expect_channels: usize, path: &Path) -> Result<Self> {
        let err = |offset: usize, detail: String| SumError::Parse {
            path: path.to_path_buf(),
            offset,
            detail,
        };
        let want = if expect_channels == 3 { b"P6" } else { b"P5" };
        if bytes.len() < 2 || &bytes[..2] != want {
            let got = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
            return Err(err(
                0,
                format!("expected magic {:?}, found {got:?}", std::str::from_utf8(want).unwrap()),
            ));
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for (k, field) in fields.iter_mut().enumerate() {
            // whitespace and comments before each header number
            let start = pos;
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while let Some(&c) = bytes.get(pos) {
                            pos += 1;
                            if c == b'\n' {
                                break;
                            }
                        }
                    }
                    Some(c) if c.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            if pos == start {
                return Err(err(pos, "expected whitespace in header".into()));
            }
            let digits = bytes[pos..].iter().take_while(|c| c.is_ascii_digit()).count();
            if digits == 0 {
                let what = ["width", "height", "maxval"][k];
                return Err(err(pos, format!("expected {what}")));
            }
            let text = std::str::from_utf8(&bytes[pos..pos + digits]).expect("ascii digits");
            *field = text.parse().map_err(|_| err(pos, format!("number {text} out of range")))?;
            pos += digits;
        }
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(err(pos, format!("maxval {maxval} unsupported, expected 255")));
        }
        if width == 0 || height == 0 {
            return Err(err(pos, format!("empty raster {width}x{height}")));
        }
        match bytes.get(pos) {
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            _ => return Err(err(pos, "expected a single whitespace after maxval".into())),
        }
        let need = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(expect_channels))
            .ok_or_else(|| err(pos, "raster too large".into()))?;
        let payload = &bytes[pos..];
        if payload.len() < need {
            return Err(err(
                bytes.len(),
                format!("truncated payload: {} of {need} bytes", payload.len()),
            ));
        }
        if payload.len() > need {
            return Err(err(pos + need, format!("{} trailing bytes", payload.len() - need)));
        }
        Raster::new(width, height, expect_channels, payload.to_vec())
    }

    pub fn read(path: &Path, expect_channels: usize) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| SumError::io(path, e))?;
        Self::decode(&bytes, expect_channels, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| SumError::io(dir, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| SumError::io(path, e))
    }

    /// Values `v / 255` as `[H, W, C]` (or `[H, W]` for one channel).
    pub fn to_tensor(&self) -> Tensor {
        let shape: Vec<usize> = if self.channels == 3 {
            vec![self.height, self.width, 3]
        } else {
            vec![self.height, self.width]
        };
        Tensor::new(&shape, self.data.iter().map(|&b| b as f64 / 255.0).collect()).expect("sized raster")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor): clamp to [0, 1], scale and round.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w, c) = match *t.shape() {
            [h, w] => (h, w, 1),
            [h, w, 3] => (h, w, 3),
            ref s => return Err(SumError::shape(format!("cannot rasterize {s:?}"))),
        };
        Raster::new(w, h, c, t.data().iter().map(|&v| quantize(v)).collect())
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `[H, W, 3]` in [0, 1].
pub fn read_image(path: &Path) -> Result<Tensor> {
    Ok(Raster::read(path, 3)?.to_tensor())
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    if image.shape().len() != 3 {
        return Err(SumError::shape(format!("image must be [H, W, 3], got {:?}", image.shape())));
    }
    Raster::from_tensor(image)?.write(path)
}

/// `[H, W]` in [0, 1].
pub fn read_map(path: &Path) -> Result<Tensor> {
    Ok(Raster::read(path, 1)?.to_tensor())
}

pub fn write_map(path: &Path, map: &Tensor) -> Result<()> {
    if map.shape().len() != 2 {
        return Err(SumError::shape(format!("map must be [H, W], got {:?}", map.shape())));
    }
    Raster::from_tensor(map)?.write(path)
}

/// Fixation map as 0/1 values: any nonzero byte is a fixation.
pub fn read_fixations(path: &Path) -> Result<Tensor> {
    let r = Raster::read(path, 1)?;
    Tensor::new(
        &[r.height, r.width],
        r.data.iter().map(|&b| if b != 0 { 1.0 } else { 0.0 }).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_two_by_two_p6() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend(0u8..12);
        let r = Raster::decode(&bytes, 3, Path::new("t")).unwrap();
        let t = r.to_tensor();
        assert_eq!(t.shape(), [2, 2, 3]);
        for (k, v) in t.data().iter().enumerate() {
            assert_eq!(*v, k as f64 / 255.0);
        }
        assert_eq!(r.encode(), bytes);
        assert_eq!(Raster::from_tensor(&t).unwrap().encode(), bytes);
    }

    #[test]
    fn header_comments_and_whitespace() {
        let mut bytes = b"P5 # a map\n3\t1 # dims\n255\r".to_vec();
        bytes.extend([0, 128, 255]);
        let r = Raster::decode(&bytes, 1, Path::new("t")).unwrap();
        assert_eq!((r.width, r.height), (3, 1));
        assert_eq!(r.data, [0, 128, 255]);
    }

    #[test]
    fn wrong_magic_is_parse_error() {
        let mut bytes = b"P5\n1 1\n255\n".to_vec();
        bytes.push(7);
        match Raster::decode(&bytes, 3, Path::new("img.ppm")) {
            Err(SumError::Parse { offset: 0, path, .. }) => assert_eq!(path, Path::new("img.ppm")),
            other => panic!("{other:?}"),
        }
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend([1, 2, 3]);
        assert!(Raster::decode(&bytes, 1, Path::new("m.pgm")).is_err());
    }

    #[test]
    fn truncated_and_malformed_offsets() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([0; 5]);
        match Raster::decode(&bytes, 3, Path::new("t")) {
            Err(SumError::Parse { offset, detail, .. }) => {
                assert_eq!(offset, bytes.len());
                assert!(detail.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        match Raster::decode(b"P6\n2 x\n255\n", 3, Path::new("t")) {
            Err(SumError::Parse { offset: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
        match Raster::decode(b"P6\n1 1\n65535\n\0\0\0\0\0\0", 3, Path::new("t")) {
            Err(SumError::Parse { detail, .. }) => assert!(detail.contains("maxval")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn map_and_fixation_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(Path::new("m.pgm"));
        let bytes = {
            let mut b = b"P5\n2 2\n255\n".to_vec();
            b.extend([0, 1, 200, 255]);
            b
        };
        std::fs::write(&p, &bytes).unwrap();
        let m = read_map(&p).unwrap();
        assert_eq!(m.data(), [0.0, 1.0 / 255.0, 200.0 / 255.0, 1.0]);
        write_map(&p, &m).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
        assert_eq!(read_fixations(&p).unwrap().data(), [0.0, 1.0, 1.0, 1.0]);

        let q = dir.path().join("i.ppm");
        let img = Tensor::new(&[1, 2, 3], vec![0.0, 0.5, 1.0, 0.2, 0.4, 0.6]).unwrap();
        write_image(&q, &img).unwrap();
        let back = read_image(&q).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0);
        let first = std::fs::read(&q).unwrap();
        write_image(&q, &back).unwrap();
        assert_eq!(std::fs::read(&q).unwrap(), first);
    }
}
