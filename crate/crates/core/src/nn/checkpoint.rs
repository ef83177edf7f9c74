//! Binary network checkpoints.
//!
//! Layout: `b"NNET"`, `u32` version, `u32` layer count, then per layer a `u8`
//! tag followed by its payload. All integers and floats are little-endian.
//!
//! * `1` linear: `u32 in`, `u32 out`, `in*out` weights (row-major), `out` biases
//! * `2` batch norm: `u32 dim`, `f64 eps`, `f64 momentum`, then gamma, beta,
//!   running mean and running variance (`dim` each)
//! * `3` activation: `u32 dim`, `u8` kind (0 identity, 1 tanh, 2 sigmoid)

use ndarray::{Array1, Array2};

use super::network::{Activation, ActivationLayer, BatchNorm, Layer, Linear, Mode, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NNET";
const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s<'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, net.layers().len() as u32);
    for layer in net.layers() {
        match layer {
            Layer::Linear(l) => {
                buf.push(1);
                put_u32(&mut buf, l.inputs() as u32);
                put_u32(&mut buf, l.outputs() as u32);
                put_f64s(&mut buf, l.weight.iter());
                put_f64s(&mut buf, l.bias.iter());
            }
            Layer::BatchNorm(b) => {
                buf.push(2);
                put_u32(&mut buf, b.dim() as u32);
                put_f64s(&mut buf, [&b.eps, &b.momentum]);
                put_f64s(&mut buf, b.gamma.iter());
                put_f64s(&mut buf, b.beta.iter());
                put_f64s(&mut buf, b.running_mean.iter());
                put_f64s(&mut buf, b.running_var.iter());
            }
            Layer::Activation(a) => {
                buf.push(3);
                put_u32(&mut buf, a.dim as u32);
                buf.push(match a.kind {
                    Activation::Identity => 0,
                    Activation::Tanh => 1,
                    Activation::Sigmoid => 2,
                });
            }
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Parses a checkpoint. The network comes back in inference mode.
pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let layer = match r.u8()? {
            1 => {
                let inputs = r.u32()? as usize;
                let outputs = r.u32()? as usize;
                let weight = Array2::from_shape_vec((inputs, outputs), r.f64s(inputs * outputs)?)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                let bias = Array1::from(r.f64s(outputs)?);
                Layer::Linear(Linear::new(weight, bias)?)
            }
            2 => {
                let dim = r.u32()? as usize;
                let mut b = BatchNorm::new(dim);
                b.eps = r.f64()?;
                b.momentum = r.f64()?;
                b.gamma = Array1::from(r.f64s(dim)?);
                b.beta = Array1::from(r.f64s(dim)?);
                b.running_mean = Array1::from(r.f64s(dim)?);
                b.running_var = Array1::from(r.f64s(dim)?);
                Layer::BatchNorm(b)
            }
            3 => {
                let dim = r.u32()? as usize;
                let kind = match r.u8()? {
                    0 => Activation::Identity,
                    1 => Activation::Tanh,
                    2 => Activation::Sigmoid,
                    k => return Err(Error::Checkpoint(format!("unknown activation {k}"))),
                };
                Layer::Activation(ActivationLayer::new(kind, dim))
            }
            t => return Err(Error::Checkpoint(format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let mut net = Network::new(layers)?;
    net.set_mode(Mode::Inference);
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_every_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Network::mlp(5, &[7, 3], 4, Activation::Tanh, true, &mut rng);
        if let Layer::BatchNorm(b) = &mut net.layers_mut()[1] {
            b.running_mean.fill(0.25);
            b.running_var.fill(3.0);
        }
        net.set_mode(Mode::Inference);
        let back = from_bytes(&to_bytes(&net)).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn header_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::mlp(2, &[], 1, Activation::Identity, false, &mut rng);
        let bytes = to_bytes(&net);
        assert_eq!(&bytes[..4], b"NNET");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(bytes[12], 1);
        assert_eq!(bytes.len(), 12 + 1 + 8 + 8 * 3);
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::mlp(3, &[4], 2, Activation::Sigmoid, false, &mut rng);
        let bytes = to_bytes(&net);
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        assert!(matches!(from_bytes(b"XXXX"), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(from_bytes(&extra), Err(Error::Checkpoint(_))));
    }
}
