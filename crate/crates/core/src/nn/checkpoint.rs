//! Binary checkpoint container.
//!
//! All integers and reals are little-endian; reals are always stored as
//! IEEE-754 binary64 so `f32` and `f64` models round-trip exactly.
//!
//! ```text
//! magic      8 bytes  "TCPCKPT1"
//! seed       u64
//! n_meta     u32, then n_meta × (key: str, value: str)
//! n_nets     u32, then n_nets × network
//! network    name: str, n_layers: u32, n_layers × layer
//! layer      kind: u8
//!            kind 0 (dense):   activation u8, out u32, in u32,
//!                              weight out·in × f64 (row-major), bias out × f64
//!            kind 1 (dropout): keep f64
//! str        len u32, then UTF-8 bytes
//! ```

use std::path::Path;

use ndarray::Array2;

use super::layers::{Activation, DenseLayer, Dropout, Layer, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"TCPCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub seed: u64,
    pub meta: Vec<(String, String)>,
    pub networks: Vec<(String, Network<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            meta: Vec::new(),
            networks: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn with_network(mut self, name: impl Into<String>, net: Network<T>) -> Self {
        self.networks.push((name.into(), net));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn network(&self, name: &str) -> Option<&Network<T>> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, n)| n)
    }

    pub fn take_network(&mut self, name: &str) -> Option<Network<T>> {
        let pos = self.networks.iter().position(|(n, _)| n == name)?;
        Some(self.networks.remove(pos).1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_u32(&mut out, self.meta.len());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.networks.len());
        for (name, net) in &self.networks {
            put_str(&mut out, name);
            put_u32(&mut out, net.layers().len());
            for layer in net.layers() {
                match layer {
                    Layer::Dense(d) => {
                        out.push(0);
                        out.push(d.activation.tag());
                        put_u32(&mut out, d.outputs());
                        put_u32(&mut out, d.inputs());
                        for v in d.weight.value().iter().chain(d.bias.value().iter()) {
                            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
                        }
                    }
                    Layer::Dropout(dr) => {
                        out.push(1);
                        out.extend_from_slice(&dr.keep().to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.fail("bad magic, not a checkpoint"));
        }
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let n_meta = r.u32()?;
        let mut meta = Vec::with_capacity(n_meta.min(1024));
        for _ in 0..n_meta {
            meta.push((r.string()?, r.string()?));
        }
        let n_nets = r.u32()?;
        let mut networks = Vec::new();
        for _ in 0..n_nets {
            let name = r.string()?;
            let n_layers = r.u32()?;
            let mut layers = Vec::new();
            for _ in 0..n_layers {
                match r.take(1)?[0] {
                    0 => {
                        let tag = r.take(1)?[0];
                        let act = Activation::from_tag(tag)
                            .ok_or_else(|| r.fail(format!("unknown activation tag {tag}")))?;
                        let out = r.u32()?;
                        let inp = r.u32()?;
                        let weight = r.reals(out, inp)?;
                        let bias = r.reals(1, out)?;
                        layers.push(Layer::Dense(DenseLayer::from_parts(weight, bias, act)?));
                    }
                    1 => {
                        let keep = r.f64()?;
                        layers.push(Layer::Dropout(Dropout::new(keep)?));
                    }
                    k => return Err(r.fail(format!("unknown layer kind {k}"))),
                }
            }
            networks.push((name, Network::new(layers)?));
        }
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes after last network"));
        }
        Ok(Self {
            seed,
            meta,
            networks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, n: usize) {
    out.extend_from_slice(&(n as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            what: "checkpoint",
            reason: format!("at byte {}: {}", self.pos, reason.into()),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(format!("truncated, wanted {n} more bytes"))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail("invalid UTF-8 string"))
    }

    fn reals<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Array2<T>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| self.fail("dimension overflow"))?;
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.fail("dimension overflow"))?,
        )?;
        let vals = raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("length computed from shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Activation;
    use crate::seeded_rng;

    fn sample() -> Checkpoint<f64> {
        let mut rng = seeded_rng(11);
        let net = Network::mlp(
            &[5, 7, 3],
            Activation::Relu,
            Activation::Softmax,
            Some(0.8),
            &mut rng,
        )
        .unwrap();
        Checkpoint::new(11)
            .with_meta("classes", 3)
            .with_network("classifier", net)
    }

    #[test]
    fn round_trip_is_lossless() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta("classes"), Some("3"));
    }

    #[test]
    fn truncated_and_corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::<f64>::from_bytes(&extra).is_err());
    }
}
