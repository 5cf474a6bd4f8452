//! Weight files: a text manifest followed by a little-endian `f32` blob.
//!
//! ```text
//! activecam-weights 1
//! crc32 1a2b3c4d
//! blob_bytes 1728
//! tensor conv1.weight 16x3x3x3 f32 0 1728
//! end
//! <blob>
//! ```

use std::path::Path;

use crate::error::{Error, Result};

use super::graph::{is_buffer, NetParams, ParamTensor};
use super::tensor::Tensor;

const MAGIC: &str = "activecam-weights 1";

/// Serialize parameters to bytes.
pub fn write_weights(params: &NetParams) -> Vec<u8> {
    let mut blob = Vec::with_capacity(params.count() * 4);
    let mut manifest = String::new();
    for e in &params.entries {
        let offset = blob.len();
        for v in e.tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let shape: Vec<String> = e.tensor.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!(
            "tensor {} {} f32 {} {}\n",
            e.name,
            shape.join("x"),
            offset,
            blob.len() - offset
        ));
    }
    let mut out = format!(
        "{MAGIC}\ncrc32 {:08x}\nblob_bytes {}\n{manifest}end\n",
        crc32fast::hash(&blob),
        blob.len()
    )
    .into_bytes();
    out.extend_from_slice(&blob);
    out
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Checksum(msg.into())
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err("truncated manifest"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| parse_err("manifest is not text"))
}

/// Parse bytes written by [`write_weights`].
pub fn read_weights(bytes: &[u8]) -> Result<NetParams> {
    let mut pos = 0;
    let mut next_line = || take_line(bytes, &mut pos);
    if next_line()? != MAGIC {
        return Err(parse_err("not a weight file"));
    }
    let field = |line: &str, key: &str| -> Result<String> {
        line.strip_prefix(key)
            .and_then(|s| s.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| parse_err(format!("expected `{key}` line, got `{line}`")))
    };
    let crc_text = field(next_line()?, "crc32")?;
    let crc = u32::from_str_radix(&crc_text, 16).map_err(|_| parse_err("bad crc32 field"))?;
    let blob_len: usize = field(next_line()?, "blob_bytes")?
        .parse()
        .map_err(|_| parse_err("bad blob_bytes field"))?;

    let mut specs = Vec::new();
    loop {
        let line = next_line()?;
        if line == "end" {
            break;
        }
        let body = field(line, "tensor")?;
        let parts: Vec<&str> = body.split(' ').collect();
        if parts.len() != 5 || parts[2] != "f32" {
            return Err(parse_err(format!("malformed tensor line `{line}`")));
        }
        let shape = parts[1]
            .split('x')
            .map(str::parse::<usize>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(format!("bad shape in `{line}`")))?;
        let offset: usize = parts[3].parse().map_err(|_| parse_err(format!("bad offset in `{line}`")))?;
        let length: usize = parts[4].parse().map_err(|_| parse_err(format!("bad length in `{line}`")))?;
        if length != shape.iter().product::<usize>() * 4 {
            return Err(Error::Shape(format!(
                "tensor {} declares {length} bytes for shape {shape:?}",
                parts[0]
            )));
        }
        specs.push((parts[0].to_string(), shape, offset, length));
    }

    let blob = &bytes[pos..];
    if blob.len() != blob_len {
        return Err(parse_err(format!(
            "blob has {} bytes, manifest declares {blob_len}",
            blob.len()
        )));
    }
    if crc32fast::hash(blob) != crc {
        return Err(parse_err("blob checksum mismatch"));
    }
    let mut entries = Vec::with_capacity(specs.len());
    for (name, shape, offset, length) in specs {
        let raw = offset
            .checked_add(length)
            .and_then(|end| blob.get(offset..end))
            .ok_or_else(|| parse_err(format!("tensor {name} lies outside the blob")))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor {name} in weight file")));
        }
        entries.push(ParamTensor {
            trainable: !is_buffer(&name),
            tensor: Tensor::from_vec(&shape, data)?,
            name,
        });
    }
    Ok(NetParams { entries })
}

pub fn save_weights(params: &NetParams, path: &Path) -> Result<()> {
    std::fs::write(path, write_weights(params)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<NetParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes).map_err(|e| match e {
        Error::Checksum(m) => Error::Checksum(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::{build_c3net, Scale};

    #[test]
    fn round_trip_is_bit_exact() {
        let (_, mut p) = build_c3net(64, 48, Scale::Tiny, 9).unwrap();
        p.get_mut("bn2.running_var").unwrap().data_mut()[0] = 1.234_567_9e-7;
        let q = read_weights(&write_weights(&p)).unwrap();
        assert_eq!(p.len(), q.len());
        for (a, b) in p.entries.iter().zip(&q.entries) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.trainable, b.trainable);
            assert_eq!(a.tensor.shape(), b.tensor.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
    }

    #[test]
    fn truncation_is_a_checksum_error() {
        let (_, p) = build_c3net(64, 48, Scale::Tiny, 9).unwrap();
        let bytes = write_weights(&p);
        for cut in [bytes.len() - 1, bytes.len() / 2, 30, 0] {
            assert!(matches!(read_weights(&bytes[..cut]), Err(Error::Checksum(_))), "cut {cut}");
        }
    }

    #[test]
    fn flipped_bit_is_a_checksum_error() {
        let (_, p) = build_c3net(64, 48, Scale::Tiny, 9).unwrap();
        let mut bytes = write_weights(&p);
        let last = bytes.len() - 3;
        bytes[last] ^= 0x10;
        assert!(matches!(read_weights(&bytes), Err(Error::Checksum(_))));
    }
}
