//! Binary containers.
//!
//! Image (`PTAD1`): magic, `u32` height, `u32` width, then `height * width`
//! row-major `f32` values. All integers and floats are little-endian. Masks
//! use the same container with values in {0, 1}.
//!
//! Model (`PDAD1`): magic, `u32` format version, schedule (`u32` T, `f64`
//! β start, `f64` β end), `u8` kind, architecture as six `u32` (height,
//! width, base width, deep width, time dimension, T), a `u32`-length UTF-8
//! block of `key=value` lines, then a `u32` block count followed by blocks
//! of `u32` name length, name bytes, `u32` rank, rank `u32` dims and the
//! `f32` values.

use std::path::Path;

use crate::error::{CodecError, Error, Result};
use crate::image::{Image, Mask};
use crate::net::{Architecture, ClassifierNet, DenoiserNet, ParamBlock, ParamSet};
use crate::schedule::NoiseSchedule;

pub const IMAGE_MAGIC: &[u8; 5] = b"PTAD1";
pub const MODEL_MAGIC: &[u8; 5] = b"PDAD1";
pub const MODEL_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(CodecError::Truncated { offset: self.pos, needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &'static [u8; 5]) -> Result<(), CodecError> {
        let n = expected.len().min(self.buf.len());
        let found = &self.buf[..n];
        if found != &expected[..n] || n < expected.len() {
            if found == &expected[..n] {
                return Err(CodecError::Truncated { offset: 0, needed: expected.len(), available: n });
            }
            return Err(CodecError::BadMagic {
                expected: std::str::from_utf8(expected).unwrap_or("?"),
                found: found.to_vec(),
            });
        }
        self.pos = expected.len();
        Ok(())
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, CodecError> {
        let bytes = count.checked_mul(4).ok_or_else(|| CodecError::DimensionOverflow(format!("{count} values")))?;
        Ok(self.take(bytes)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn finish(&self) -> Result<(), CodecError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(CodecError::TrailingBytes { extra }),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    out.reserve(vals.len() * 4);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn checked_area(dims: &[usize]) -> Result<usize, CodecError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CodecError::DimensionOverflow(format!("dims {dims:?}")))
}

pub fn encode_image(image: &Image<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + image.len() * 4);
    out.extend_from_slice(IMAGE_MAGIC);
    put_u32(&mut out, image.height());
    put_u32(&mut out, image.width());
    put_f32s(&mut out, image.as_slice());
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<Image<f32>, CodecError> {
    let mut r = Reader::new(bytes);
    r.magic(IMAGE_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let n = checked_area(&[h, w, 4]).map(|_| h * w)?;
    let data = r.f32s(n)?;
    r.finish()?;
    Ok(Image::from_vec(h, w, data).expect("length checked"))
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    encode_image(&mask.to_image())
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask, CodecError> {
    let img = decode_image(bytes)?;
    Mask::from_image(&img).map_err(|e| CodecError::Malformed(e.to_string()))
}

/// 8-bit binary PGM with `q = floor(255·v + 0.5)` clamped to `0..=255`;
/// NaN maps to 0.
pub fn encode_pgm(image: &Image<f32>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.as_slice().iter().map(|&v| (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8));
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn at(path: &Path) -> impl FnOnce(CodecError) -> Error + '_ {
    move |source| Error::Codec { path: path.to_path_buf(), source }
}

pub fn write_image(path: &Path, image: &Image<f32>) -> Result<()> {
    write_file(path, &encode_image(image))
}

pub fn read_image(path: &Path) -> Result<Image<f32>> {
    decode_image(&read_file(path)?).map_err(at(path))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_file(path, &encode_mask(mask))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    decode_mask(&read_file(path)?).map_err(at(path))
}

pub fn write_pgm(path: &Path, image: &Image<f32>) -> Result<()> {
    write_file(path, &encode_pgm(image))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Denoiser = 1,
    Classifier = 2,
}

/// Parameters plus everything needed to reproduce their use: schedule,
/// architecture and free-form training metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub schedule: NoiseSchedule,
    pub arch: Architecture,
    pub meta: Vec<(String, String)>,
    pub params: ParamSet<f32>,
}

impl ModelFile {
    pub fn from_denoiser(net: &DenoiserNet<f32>, schedule: &NoiseSchedule, meta: Vec<(String, String)>) -> Self {
        Self {
            kind: ModelKind::Denoiser,
            schedule: schedule.clone(),
            arch: *net.arch(),
            meta,
            params: net.params().clone(),
        }
    }

    pub fn from_classifier(net: &ClassifierNet<f32>, schedule: &NoiseSchedule, meta: Vec<(String, String)>) -> Self {
        Self {
            kind: ModelKind::Classifier,
            schedule: schedule.clone(),
            arch: *net.arch(),
            meta,
            params: net.params().clone(),
        }
    }

    pub fn denoiser(&self) -> Result<DenoiserNet<f32>> {
        self.expect_kind(ModelKind::Denoiser)?;
        DenoiserNet::from_parts(self.arch, self.params.clone())
    }

    pub fn classifier(&self) -> Result<ClassifierNet<f32>> {
        self.expect_kind(ModelKind::Classifier)?;
        ClassifierNet::from_parts(self.arch, self.params.clone())
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidArgument(format!("model file holds a {:?}, expected a {kind:?}", self.kind)));
        }
        Ok(())
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        put_u32(&mut out, MODEL_VERSION as usize);
        put_u32(&mut out, self.schedule.t_max());
        out.extend_from_slice(&self.schedule.beta_start().to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_end().to_le_bytes());
        out.push(self.kind as u8);
        let a = &self.arch;
        for v in [a.height, a.width, a.base_width, a.deep_width, a.time_dim, a.t_max] {
            put_u32(&mut out, v);
        }
        let text: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_u32(&mut out, text.len());
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, self.params.blocks().len());
        for b in self.params.blocks() {
            put_u32(&mut out, b.name.len());
            out.extend_from_slice(b.name.as_bytes());
            put_u32(&mut out, b.shape.len());
            for &d in &b.shape {
                put_u32(&mut out, d);
            }
            put_f32s(&mut out, &b.data);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(CodecError::UnsupportedVersion(version));
        }
        let t_max = r.u32()? as usize;
        let (b0, b1) = (r.f64()?, r.f64()?);
        let schedule = NoiseSchedule::linear(t_max, b0, b1).map_err(|e| CodecError::Malformed(e.to_string()))?;
        let kind = match r.u8()? {
            1 => ModelKind::Denoiser,
            2 => ModelKind::Classifier,
            k => return Err(CodecError::Malformed(format!("unknown model kind {k}"))),
        };
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let arch = Architecture {
            height: dims[0],
            width: dims[1],
            base_width: dims[2],
            deep_width: dims[3],
            time_dim: dims[4],
            t_max: dims[5],
        };
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?).map_err(|e| CodecError::Malformed(e.to_string()))?;
        let meta = text
            .lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| CodecError::Malformed(format!("metadata line {l:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let count = r.u32()? as usize;
        let mut blocks = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name =
                std::str::from_utf8(r.take(name_len)?).map_err(|e| CodecError::Malformed(e.to_string()))?.to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::new();
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let len = checked_area(&shape)?;
            checked_area(&[len, 4])?;
            let data = r.f32s(len)?;
            blocks.push(ParamBlock { name, shape, data });
        }
        r.finish()?;
        Ok(Self { kind, schedule, arch, meta, params: ParamSet::from_blocks(blocks) })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?).map_err(at(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_quantization() {
        let img = Image::from_vec(2, 2, vec![0.0f32, 0.5, 0.5, 1.0]).unwrap();
        let pgm = encode_pgm(&img);
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[0, 128, 128, 255]);
        let wild = Image::from_vec(1, 3, vec![-1.0f32, 7.0, f32::NAN]).unwrap();
        assert_eq!(&encode_pgm(&wild)[11..], &[0, 255, 0]);
    }

    #[test]
    fn header_layout() {
        let img = Image::from_vec(1, 2, vec![1.0f32, -2.0]).unwrap();
        let b = encode_image(&img);
        assert_eq!(&b[..5], b"PTAD1");
        assert_eq!(&b[5..9], &1u32.to_le_bytes());
        assert_eq!(&b[9..13], &2u32.to_le_bytes());
        assert_eq!(&b[13..17], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 21);
    }

    #[test]
    fn distinct_decode_errors() {
        let good = encode_image(&Image::filled(2, 3, 0.25f32));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_image(&bad), Err(CodecError::BadMagic { .. })));
        assert!(matches!(decode_image(&good[..good.len() - 1]), Err(CodecError::Truncated { .. })));
        assert!(matches!(decode_image(&good[..3]), Err(CodecError::Truncated { .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_image(&long), Err(CodecError::TrailingBytes { extra: 1 })));
        let mut huge = b"PTAD1".to_vec();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_image(&huge), Err(CodecError::DimensionOverflow(_))));
        let half = encode_image(&Image::filled(1, 1, 0.5f32));
        assert!(matches!(decode_mask(&half), Err(CodecError::Malformed(_))));
    }

    #[test]
    fn model_round_trip_and_errors() {
        let arch = Architecture { height: 4, width: 4, base_width: 2, deep_width: 3, time_dim: 4, t_max: 50 };
        let net = DenoiserNet::<f32>::new(arch, 9).unwrap();
        let s = NoiseSchedule::linear(50, 1e-3, 0.05).unwrap();
        let meta = vec![("seed".to_string(), "9".to_string()), ("note".to_string(), "a=b".to_string())];
        let file = ModelFile::from_denoiser(&net, &s, meta);
        let bytes = file.encode();
        let back = ModelFile::decode(&bytes).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.denoiser().unwrap(), net);
        assert_eq!(back.meta_value("note"), Some("a=b"));
        assert!(back.classifier().is_err());
        let mut v = bytes.clone();
        v[5] = 9;
        assert!(matches!(ModelFile::decode(&v), Err(CodecError::UnsupportedVersion(9))));
        assert!(matches!(ModelFile::decode(&bytes[..bytes.len() - 2]), Err(CodecError::Truncated { .. })));
        assert!(matches!(ModelFile::decode(&encode_image(&Image::zeros(1, 1))), Err(CodecError::BadMagic { .. })));
    }

    proptest! {
        #[test]
        fn image_round_trip_is_bitwise(h in 0usize..6, w in 0usize..6, seed in any::<u64>()) {
            let bits = |i: usize| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 16) as u32);
            let img = Image::from_fn(h, w, |y, x| bits(y * w + x));
            let back = decode_image(&encode_image(&img)).unwrap();
            prop_assert_eq!(back.shape(), img.shape());
            for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
