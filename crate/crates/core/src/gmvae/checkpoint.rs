//! Binary checkpoint format.
//!
//! All fields little-endian: `b"GMVA"`, version `u32`, `input_dim u32`,
//! `latent_dim u32`, `num_classes u32`, noise variance `f64`, prior variance
//! `f64`; then the encoder stack and the decoder stack, each as a `u32` layer
//! count followed by per-layer `rows u32, cols u32`, row-major weights and
//! biases as `f64`; finally the `k` class means as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::model::GmvaeModel;
use super::prior::{MixturePrior, NoiseSpec};
use crate::diffmath::{Activation, Dense, Mlp, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GMVA";
pub const FORMAT_VERSION: u32 = 1;

impl GmvaeModel {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(self.input_dim() as u32)?;
        w.write_u32::<LittleEndian>(self.latent_dim() as u32)?;
        w.write_u32::<LittleEndian>(self.num_classes() as u32)?;
        w.write_f64::<LittleEndian>(self.noise().variance())?;
        w.write_f64::<LittleEndian>(self.prior().variance())?;
        for stack in [self.encoder(), self.decoder()] {
            w.write_u32::<LittleEndian>(stack.layers().len() as u32)?;
            for layer in stack.layers() {
                w.write_u32::<LittleEndian>(layer.outputs() as u32)?;
                w.write_u32::<LittleEndian>(layer.inputs() as u32)?;
                for &v in layer.weights().data().iter().chain(layer.bias().data()) {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
        }
        for &v in self.prior().means().data() {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let input_dim = read_dim(&mut r)?;
        let latent_dim = read_dim(&mut r)?;
        let num_classes = read_dim(&mut r)?;
        let noise_var = r.read_f64::<LittleEndian>().map_err(truncated)?;
        let prior_var = r.read_f64::<LittleEndian>().map_err(truncated)?;

        let encoder = read_stack(&mut r, Activation::Identity)?;
        let decoder = read_stack(&mut r, Activation::Sigmoid)?;

        let prior = MixturePrior::new(num_classes, latent_dim, prior_var)?;
        for &expected in prior.means().data() {
            let v = r.read_f64::<LittleEndian>().map_err(truncated)?;
            if v.to_bits() != expected.to_bits() {
                return Err(Error::Checkpoint("class means are not padded one-hot codes".into()));
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(truncated)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after class means".into()));
        }

        let model = GmvaeModel::from_parts(encoder, decoder, prior, NoiseSpec::new(noise_var, latent_dim)?)?;
        if model.input_dim() != input_dim {
            return Err(Error::Checkpoint(format!(
                "header input_dim {input_dim} but encoder expects {}",
                model.input_dim()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_checkpoint(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        GmvaeModel::read_checkpoint(BufReader::new(file))
    }
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("unexpected end of data: {e}"))
}

fn read_dim<R: Read>(r: &mut R) -> Result<usize> {
    Ok(r.read_u32::<LittleEndian>().map_err(truncated)? as usize)
}

fn read_stack<R: Read>(r: &mut R, output: Activation) -> Result<Mlp> {
    let count = read_dim(r)?;
    if count == 0 {
        return Err(Error::Checkpoint("empty layer stack".into()));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let rows = read_dim(r)?;
        let cols = read_dim(r)?;
        let mut read_n = |n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| r.read_f64::<LittleEndian>().map_err(truncated))
                .collect()
        };
        let weights = Tensor::matrix(rows, cols, read_n(rows * cols)?)?;
        let bias = Tensor::vector(read_n(rows)?);
        let act = if i + 1 == count { output } else { Activation::Relu };
        layers.push(Dense::new(weights, bias, act)?);
    }
    Mlp::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmvae::ModelConfig;

    fn model() -> GmvaeModel {
        let cfg = ModelConfig {
            input_dim: 9,
            num_classes: 2,
            latent_dim: Some(3),
            encoder_hidden: vec![4],
            decoder_hidden: vec![5, 6],
            ..ModelConfig::default()
        };
        GmvaeModel::new(&cfg, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = model();
        let bytes = m.to_checkpoint_bytes();
        let back = GmvaeModel::read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_checkpoint_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = model().to_checkpoint_bytes();
        assert_eq!(&bytes[..4], b"GMVA");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 9);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 1.0 / 3000.0);
        // encoder 9->4->3, decoder 3->5->6->9, six means entries
        let params = (4 * 9 + 4) + (3 * 4 + 3) + (5 * 3 + 5) + (6 * 5 + 6) + (9 * 6 + 9);
        let expected = 36 + 2 * 4 + 5 * 8 + 8 * params + 8 * 6;
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = model().to_checkpoint_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(GmvaeModel::read_checkpoint(&bad[..]).is_err());
        assert!(GmvaeModel::read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(GmvaeModel::read_checkpoint(&extra[..]).is_err());
    }
}
