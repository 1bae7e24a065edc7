use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::DenseNet;
use crate::error::{Error, Result};
use crate::fmt::f17;

pub const CHECKPOINT_VERSION: u32 = 1;

fn decimals<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for v in values {
        let raw = RawValue::from_string(f17(*v)).map_err(serde::ser::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

/// A named parameter vector; `sizes` is empty for plain vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub name: String,
    pub sizes: Vec<usize>,
    #[serde(serialize_with = "decimals")]
    pub params: Vec<f64>,
}

impl NetRecord {
    pub fn from_net(name: &str, net: &DenseNet) -> Self {
        NetRecord {
            name: name.into(),
            sizes: net.sizes().to_vec(),
            params: net.params().to_vec(),
        }
    }

    pub fn from_vector(name: &str, values: &[f64]) -> Self {
        NetRecord {
            name: name.into(),
            sizes: Vec::new(),
            params: values.to_vec(),
        }
    }

    pub fn to_net(&self) -> Result<DenseNet> {
        DenseNet::from_params(&self.sizes, self.params.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngRecord {
    pub seed: Vec<u8>,
    pub stream: u64,
    /// Word position, as decimal text (it is a u128).
    pub word_pos: String,
}

impl RngRecord {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngRecord {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| Error::InvalidParameter("RNG seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad RNG word position {}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Versioned JSON container for trained agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub algorithm: String,
    pub nets: Vec<NetRecord>,
    pub rng: RngRecord,
}

impl Checkpoint {
    pub fn new(algorithm: &str, nets: Vec<NetRecord>, rng: &ChaCha8Rng) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            algorithm: algorithm.into(),
            nets,
            rng: RngRecord::capture(rng),
        }
    }

    pub fn get(&self, name: &str) -> Result<&NetRecord> {
        self.nets
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| Error::InvalidParameter(format!("checkpoint has no entry '{name}'")))
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(input)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = DenseNet::orthogonal(&[5, 7, 2], 0.01, &mut rng).unwrap();
        let _: f64 = rng.random();
        let ck = Checkpoint::new(
            "test",
            vec![NetRecord::from_net("pi", &net), NetRecord::from_vector("log_std", &[-0.5, 1.0 / 3.0])],
            &rng,
        );
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("e-1"));
        let back = Checkpoint::read(&buf[..]).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("pi").unwrap().to_net().unwrap(), net);
        let mut restored = back.rng.restore().unwrap();
        assert_eq!(restored.random::<u64>(), rng.random::<u64>());
    }

    #[test]
    fn rejects_other_versions() {
        let rng = ChaCha8Rng::seed_from_u64(0);
        let mut ck = Checkpoint::new("x", vec![], &rng);
        ck.version = 99;
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert!(Checkpoint::read(&buf[..]).is_err());
    }
}
