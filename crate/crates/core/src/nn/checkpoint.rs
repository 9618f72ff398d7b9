//! Versioned binary weight container.
//!
//! Layout (all integers little-endian):
//! `b"APNN"`, `u32` version, `u32`+bytes kind tag, `u32`+bytes JSON header,
//! `u32` array count, then per array a `u64` length followed by that many
//! `f32` values.

use std::io::{Read, Write};

use serde_json::{json, Value};

use super::network::Network;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"APNN";
pub const VERSION: u32 = 1;
pub const NETWORK_KIND: &str = "network";

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub header: Value,
    pub arrays: Vec<Vec<f32>>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, &self.kind)?;
        write_str(w, &serde_json::to_string(&self.header)?)?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for a in &self.arrays {
            w.write_all(&(a.len() as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(a.len() * 4);
            for v in a {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a weight container (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let kind = read_str(r)?;
        let header: Value = serde_json::from_str(&read_str(r)?)?;
        let count = read_u32(r)? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let mut len = [0u8; 8];
            r.read_exact(&mut len)?;
            let len = u64::from_le_bytes(len) as usize;
            let mut buf = vec![0u8; len * 4];
            r.read_exact(&mut buf)?;
            arrays.push(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
        Ok(Self {
            kind,
            header,
            arrays,
        })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read(&mut bytes)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))
}

/// Pack a network (weights quantized to `f32`) with extra header fields.
pub fn network_container<T: Scalar>(net: &Network<T>, kind: &str, extra: Value) -> Container {
    let mut header = json!({ "spec": net.spec() });
    if let (Value::Object(h), Value::Object(e)) = (&mut header, extra) {
        h.extend(e);
    }
    Container {
        kind: kind.to_string(),
        header,
        arrays: net
            .params()
            .iter()
            .map(|p| p.iter().map(|v| v.as_f64() as f32).collect())
            .collect(),
    }
}

pub fn network_from_container<T: Scalar>(c: &Container) -> Result<Network<T>> {
    let spec: NetworkSpec = serde_json::from_value(
        c.header
            .get("spec")
            .cloned()
            .ok_or_else(|| Error::Format("container header has no spec".into()))?,
    )?;
    let params = c
        .arrays
        .iter()
        .map(|a| a.iter().map(|&v| T::lit(v as f64)).collect())
        .collect();
    Network::from_params(spec, params)
}

pub fn encode_network<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    network_container(net, NETWORK_KIND, json!({})).to_bytes()
}

pub fn decode_network<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let c = Container::from_bytes(bytes)?;
    if c.kind != NETWORK_KIND {
        return Err(Error::Format(format!(
            "expected a network container, found `{}`",
            c.kind
        )));
    }
    network_from_container(&c)
}
