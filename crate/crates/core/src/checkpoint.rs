//! Binary network checkpoints with a CRC32 integrity trailer.
//!
//! Layout, all little-endian after the magic: `RBFN` magic, format version,
//! canonical geometry string, u_max, input dimension, then each layer's tag
//! and parameter tensors with their bounds, and finally a CRC32 of every
//! preceding byte. Loading verifies the CRC before looking at anything
//! else, so any flipped byte surfaces as an integrity error rather than a
//! scrambled network.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::network::{
    parse_geometry, Activation, BoundedParam, Family, Gamma, KindCode, Layer, Network, UnitKind,
};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"RBFN";
pub const VERSION: u32 = 1;

const TAG_RBFI: u8 = 0;
const TAG_DENSE: u8 = 1;

fn write_param(buf: &mut Vec<u8>, p: &BoundedParam) {
    buf.write_f64::<LittleEndian>(p.lo).unwrap();
    buf.write_f64::<LittleEndian>(p.hi).unwrap();
    for &v in p.value.data() {
        buf.write_f64::<LittleEndian>(v).unwrap();
    }
}

/// Serialize the network; the same network always produces identical bytes.
pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.write_u32::<LittleEndian>(VERSION).unwrap();
    let geo = net.spec.canonical();
    buf.write_u32::<LittleEndian>(geo.len() as u32).unwrap();
    buf.extend_from_slice(geo.as_bytes());
    buf.write_f64::<LittleEndian>(net.spec.u_max).unwrap();
    buf.write_u32::<LittleEndian>(net.spec.input_dim as u32)
        .unwrap();
    buf.write_u32::<LittleEndian>(net.layers.len() as u32)
        .unwrap();
    for l in &net.layers {
        match l {
            Layer::Rbfi { u, w, kinds, gamma } => {
                buf.push(TAG_RBFI);
                buf.push(match gamma {
                    Gamma::Infinity => 0,
                    Gamma::Two => 1,
                });
                buf.write_u32::<LittleEndian>(u.value.rows() as u32)
                    .unwrap();
                buf.write_u32::<LittleEndian>(u.value.cols() as u32)
                    .unwrap();
                for k in kinds {
                    buf.push(match k {
                        UnitKind::And => 0,
                        UnitKind::Or => 1,
                    });
                }
                write_param(&mut buf, u);
                write_param(&mut buf, w);
            }
            Layer::Dense { w, b, activation } => {
                buf.push(TAG_DENSE);
                buf.push(match activation {
                    Activation::Relu => 0,
                    Activation::Sigmoid => 1,
                    Activation::None => 2,
                });
                buf.write_u32::<LittleEndian>(w.value.rows() as u32)
                    .unwrap();
                buf.write_u32::<LittleEndian>(w.value.cols() as u32)
                    .unwrap();
                write_param(&mut buf, w);
                write_param(&mut buf, b);
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc).unwrap();
    buf
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, to_bytes(net))?;
    Ok(())
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn u8(&mut self, what: &str) -> Result<u8> {
        self.cur
            .read_u8()
            .map_err(|_| integrity(format!("truncated reading {what}")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.cur
            .read_u32::<LittleEndian>()
            .map_err(|_| integrity(format!("truncated reading {what}")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.cur
            .read_f64::<LittleEndian>()
            .map_err(|_| integrity(format!("truncated reading {what}")))
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut v = vec![0u8; n];
        self.cur
            .read_exact(&mut v)
            .map_err(|_| integrity(format!("truncated reading {what}")))?;
        Ok(v)
    }

    fn param(&mut self, shape: &[usize], what: &str) -> Result<BoundedParam> {
        let lo = self.f64(what)?;
        let hi = self.f64(what)?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.f64(what)?);
        }
        Ok(BoundedParam {
            value: Tensor::new(shape.to_vec(), data)?,
            lo,
            hi,
        })
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(integrity("file too short to be a checkpoint"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(integrity(format!(
            "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }
    if body[..4] != MAGIC {
        return Err(Error::Format {
            field: "checkpoint magic".into(),
            msg: format!("got {:02x?}, want {MAGIC:02x?}", &body[..4]),
        });
    }
    let mut r = Reader {
        cur: Cursor::new(&body[4..]),
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(integrity(format!(
            "unsupported checkpoint version {version}, this build reads {VERSION}"
        )));
    }
    let geo_len = r.u32("geometry length")? as usize;
    let geo_bytes = r.bytes(geo_len, "geometry")?;
    let geo = String::from_utf8(geo_bytes).map_err(|_| integrity("geometry is not utf-8"))?;
    let mut spec = parse_geometry(&geo)
        .map_err(|e| integrity(format!("stored geometry does not parse: {e}")))?;
    spec.u_max = r.f64("u_max")?;
    let input_dim = r.u32("input dimension")? as usize;
    if input_dim != spec.input_dim {
        return Err(integrity(format!(
            "input dimension {input_dim} disagrees with geometry {geo}"
        )));
    }
    let n_layers = r.u32("layer count")? as usize;
    if n_layers != spec.layer_sizes.len() {
        return Err(integrity(format!(
            "{n_layers} layers stored, geometry declares {}",
            spec.layer_sizes.len()
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    let mut expect_in = spec.input_dim;
    for (idx, &expect_out) in spec.layer_sizes.iter().enumerate() {
        let tag = r.u8("layer tag")?;
        match tag {
            TAG_RBFI => {
                if spec.family != Family::Rbfi {
                    return Err(integrity("radial layer in a dense geometry"));
                }
                let gamma = match r.u8("gamma")? {
                    0 => Gamma::Infinity,
                    1 => Gamma::Two,
                    g => return Err(integrity(format!("unknown gamma code {g}"))),
                };
                if gamma != spec.gamma {
                    return Err(integrity("layer gamma disagrees with geometry"));
                }
                let n_in = r.u32("layer input size")? as usize;
                let n_out = r.u32("layer output size")? as usize;
                if n_in != expect_in || n_out != expect_out {
                    return Err(integrity(format!(
                        "layer {idx} is {n_in}x{n_out}, geometry wants {expect_in}x{expect_out}"
                    )));
                }
                let mut kinds = Vec::with_capacity(n_out);
                for b in r.bytes(n_out, "unit kinds")? {
                    kinds.push(match b {
                        0 => UnitKind::And,
                        1 => UnitKind::Or,
                        k => return Err(integrity(format!("unknown unit kind {k}"))),
                    });
                }
                let code = spec.layer_kind_codes[idx];
                let consistent = match code {
                    KindCode::And => kinds.iter().all(|k| *k == UnitKind::And),
                    KindCode::Or => kinds.iter().all(|k| *k == UnitKind::Or),
                    KindCode::Mixed => true,
                };
                if !consistent {
                    return Err(integrity(format!(
                        "layer {idx} kinds disagree with geometry"
                    )));
                }
                let u = r.param(&[n_in, n_out], "u values")?;
                let w = r.param(&[n_in, n_out], "w values")?;
                layers.push(Layer::Rbfi { u, w, kinds, gamma });
            }
            TAG_DENSE => {
                if spec.family == Family::Rbfi {
                    return Err(integrity("dense layer in a radial geometry"));
                }
                let activation = match r.u8("activation")? {
                    0 => Activation::Relu,
                    1 => Activation::Sigmoid,
                    2 => Activation::None,
                    a => return Err(integrity(format!("unknown activation code {a}"))),
                };
                let n_in = r.u32("layer input size")? as usize;
                let n_out = r.u32("layer output size")? as usize;
                if n_in != expect_in || n_out != expect_out {
                    return Err(integrity(format!(
                        "layer {idx} is {n_in}x{n_out}, geometry wants {expect_in}x{expect_out}"
                    )));
                }
                let w = r.param(&[n_in, n_out], "weight values")?;
                let b = r.param(&[n_out], "bias values")?;
                layers.push(Layer::Dense { w, b, activation });
            }
            t => return Err(integrity(format!("unknown layer tag {t}"))),
        }
        expect_in = expect_out;
    }
    let mut trailing = Vec::new();
    r.cur.read_to_end(&mut trailing).ok();
    if !trailing.is_empty() {
        return Err(integrity(format!(
            "{} bytes after the last layer",
            trailing.len()
        )));
    }
    Ok(Network { spec, layers })
}

pub fn load(path: &Path) -> Result<Network> {
    from_bytes(&std::fs::read(path)?)
}
