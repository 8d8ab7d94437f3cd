//! 8-bit binary PGM (`P5`) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encodes values in `[0, 1]` as `round(v · 255)`; shape `[H, W]` or `[H, W, 1]`.
pub fn encode(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = match *t.shape() {
        [h, w] | [h, w, 1] => (h, w),
        _ => {
            return Err(Error::InvalidShape {
                shape: t.shape().to_vec(),
                reason: "PGM holds a single-channel [H, W] map".into(),
            })
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in t.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("PGM value {v} outside [0, 1]")));
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("PGM header is not ASCII".into()))
}

/// Decodes to `[H, W]` with values `byte / maxval`.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    if token(bytes, &mut pos)? != "P5" {
        return Err(Error::Format("not a binary PGM (missing P5)".into()));
    }
    let mut num = |name: &str| -> Result<usize> {
        token(bytes, &mut pos)?
            .parse()
            .map_err(|_| Error::Format(format!("bad PGM {name}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    pos += 1;
    let body = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Format("truncated PGM payload".into()))?;
    Tensor::new(&[h, w], body.iter().map(|&b| b as f32 / maxval as f32).collect())
}

pub fn write(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_comments() {
        let t = Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap();
        let b = encode(&t).unwrap();
        assert_eq!(&b[..11], b"P5\n2 1\n255\n");
        assert_eq!(&b[11..], &[0, 255]);
        let with_comment = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        assert_eq!(decode(with_comment).unwrap(), t);
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00").is_err());
    }

    proptest! {
        #[test]
        fn quantized_maps_roundtrip_exactly(bytes in proptest::collection::vec(any::<u8>(), 12)) {
            let t = Tensor::new(&[3, 4], bytes.iter().map(|&b| b as f32 / 255.0).collect()).unwrap();
            let enc = encode(&t).unwrap();
            let back = decode(&enc).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(encode(&back).unwrap(), enc);
        }
    }
}
