//! Binary dataset (`RML1`) and model (`RMLM`) files, little-endian.
//!
//! ```text
//! RML1: magic, u32 version = 1, u32 num_examples, u32 frame_len = 128,
//!       u16 num_classes, per class { u8 len, ASCII name },
//!       per example { i8 snr_db, u8 class, 128 x f32 I, 128 x f32 Q }
//! RMLM: magic, u32 version = 1, u32 json_len, spec JSON,
//!       u32 tensor_count, per tensor { u8 len, name, u8 rank, rank x u32, f32 data }
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::arch::{ArchitectureSpec, FRAME_HEIGHT, FRAME_LEN};
use crate::data::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"RML1";
pub const MODEL_MAGIC: &[u8; 4] = b"RMLM";
pub const VERSION: u32 = 1;

const EXAMPLE_BYTES: usize = 2 + FRAME_HEIGHT * FRAME_LEN * 4;

fn short_name(name: &str, what: &str) -> Result<u8> {
    if !name.is_ascii() {
        return Err(Error::config(format!("{what} name {name:?} is not ASCII")));
    }
    u8::try_from(name.len()).map_err(|_| Error::config(format!("{what} name {name:?} exceeds 255 bytes")))
}

pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    let n = u32::try_from(d.len()).map_err(|_| Error::config("too many examples for the file format"))?;
    let nc = u16::try_from(d.num_classes()).map_err(|_| Error::config("too many classes for the file format"))?;
    if d.num_classes() > 256 {
        return Err(Error::config("class indices are stored as u8; at most 256 classes"));
    }
    let mut out = Vec::with_capacity(64 + d.len() * EXAMPLE_BYTES);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&(FRAME_LEN as u32).to_le_bytes());
    out.extend_from_slice(&nc.to_le_bytes());
    for c in d.classes() {
        out.push(short_name(c, "class")?);
        out.extend_from_slice(c.as_bytes());
    }
    for (i, e) in d.examples().iter().enumerate() {
        let snr = i8::try_from(e.snr).map_err(|_| Error::config(format!("example {i}: snr {} does not fit i8", e.snr)))?;
        out.push(snr as u8);
        out.push(e.class as u8);
        for v in e.iq.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} remain", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(m),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        let at = self.pos as u64;
        let v = self.u32("version")?;
        if v != VERSION {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn name(&mut self, what: &str) -> Result<String> {
        let at = self.pos as u64;
        let len = self.u8(what)? as usize;
        let bytes = self.take(len, what)?;
        if !bytes.is_ascii() {
            return Err(Error::format(at, format!("{what} is not ASCII")));
        }
        Ok(String::from_utf8(bytes.to_vec()).unwrap())
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(DATASET_MAGIC)?;
    let n = r.u32("example count")? as usize;
    let at = r.pos as u64;
    let frame_len = r.u32("frame length")?;
    if frame_len as usize != FRAME_LEN {
        return Err(Error::format(at, format!("frame length {frame_len}, expected {FRAME_LEN}")));
    }
    let nc = r.u16("class count")? as usize;
    let classes = (0..nc).map(|_| r.name("class name")).collect::<Result<Vec<_>>>()?;
    let start = r.pos;
    let expected = n * EXAMPLE_BYTES;
    let actual = buf.len() - start;
    if actual < expected {
        return Err(Error::format(
            start as u64,
            format!("example region holds {actual} bytes, expected {expected} for {n} examples"),
        ));
    }
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let at = r.pos as u64;
        let snr = r.u8("snr")? as i8 as i32;
        let class = r.u8("class")? as usize;
        if class >= nc {
            return Err(Error::format(at, format!("example {i}: class {class} >= {nc}")));
        }
        let iq = Tensor::from_parts(vec![FRAME_HEIGHT, FRAME_LEN], r.f32s(FRAME_HEIGHT * FRAME_LEN, "samples")?);
        examples.push(LabeledExample { iq, class, snr });
    }
    r.finish()?;
    Dataset::new(classes, examples)
}

pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(d)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    decode_dataset(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Hex SHA-256 of the encoded dataset.
pub fn dataset_hash(d: &Dataset) -> Result<String> {
    Ok(hex::encode(Sha256::digest(encode_dataset(d)?)))
}

/// Parameters are stored as f32 whatever the network's scalar type.
pub fn encode_model<T: Scalar>(net: &Network<T>) -> Result<Vec<u8>> {
    let json = net.spec().to_json();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&(net.params().len() as u32).to_le_bytes());
    for (name, t) in net.params() {
        out.push(short_name(name, "tensor")?);
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model<T: Scalar>(buf: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(MODEL_MAGIC)?;
    let len = r.u32("spec length")? as usize;
    let at = r.pos as u64;
    let json = std::str::from_utf8(r.take(len, "spec JSON")?)
        .map_err(|e| Error::format(at, format!("spec JSON is not UTF-8: {e}")))?;
    let spec = ArchitectureSpec::from_json(json).map_err(|e| Error::format(at, e.to_string()))?;
    let shapes = spec.param_shapes().map_err(|e| Error::format(at, e.to_string()))?;
    let at = r.pos as u64;
    let count = r.u32("tensor count")? as usize;
    if count != shapes.len() {
        return Err(Error::format(
            at,
            format!("file holds {count} tensors but the spec defines {}", shapes.len()),
        ));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos as u64;
        let name = r.name("tensor name")?;
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r.f32s(n, "tensor data")?;
        let t = Tensor::from_vec(shape, data.into_iter().map(|v| T::lit(v as f64)).collect())
            .map_err(|e| Error::format(at, e.to_string()))?;
        params.push((name, t));
    }
    r.finish()?;
    Network::from_parts(spec, 0, params).map_err(|e| Error::format(0, e.to_string()))
}

pub fn write_model<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(net)?).map_err(|e| Error::io(path, e))
}

pub fn read_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    let path = path.as_ref();
    decode_model(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchId;
    use crate::data::tests::toy;

    #[test]
    fn dataset_round_trip() {
        let d = toy(3, &[-20, 18], 2, 4);
        let back = decode_dataset(&encode_dataset(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        assert_eq!(encode_dataset(&back).unwrap(), encode_dataset(&d).unwrap());
    }

    #[test]
    fn header_layout() {
        let d = toy(1, &[-4], 1, 0);
        let b = encode_dataset(&d).unwrap();
        assert_eq!(&b[..4], b"RML1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 128);
        assert_eq!(u16::from_le_bytes(b[16..18].try_into().unwrap()), 1);
        assert_eq!(&b[18..21], b"\x02C0");
        assert_eq!(b[21] as i8, -4);
        assert_eq!(b.len(), 21 + 2 + 1024);
    }

    #[test]
    fn bad_magic_at_zero() {
        let mut b = encode_dataset(&toy(1, &[0], 1, 0)).unwrap();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_dataset(&b), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_examples() {
        let b = encode_dataset(&toy(1, &[0], 2, 0)).unwrap();
        let err = decode_dataset(&b[..b.len() - 10]).unwrap_err();
        match err {
            Error::Format { offset, message } => {
                assert_eq!(offset, 21);
                assert!(message.contains("2052") && message.contains("2042"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn model_round_trip() {
        let spec = ArchitectureSpec::preset(ArchId::Cnn2, 10, 0.6).unwrap().scaled(0.05);
        let net = Network::<f32>::build(&spec, 3).unwrap();
        let back: Network<f32> = decode_model(&encode_model(&net).unwrap()).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.param_count(), net.param_count());
        let frame = Tensor::full([2, 128], 0.3f32).unwrap();
        let mut rng = crate::Rng::new(0);
        let mode = crate::nn::Mode::Eval;
        assert_eq!(
            back.forward_classify(&frame, mode, &mut rng).unwrap(),
            net.forward_classify(&frame, mode, &mut rng).unwrap()
        );
    }

    #[test]
    fn model_tensor_count_mismatch() {
        let spec = ArchitectureSpec::preset(ArchId::Cnn2, 10, 0.6).unwrap().scaled(0.05);
        let net = Network::<f32>::build(&spec, 3).unwrap();
        let mut b = encode_model(&net).unwrap();
        let json_len = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let at = 12 + json_len;
        b[at..at + 4].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(decode_model::<f32>(&b), Err(Error::Format { .. })));
    }
}
