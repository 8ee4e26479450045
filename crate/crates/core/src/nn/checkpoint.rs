//! Versioned binary checkpoint container.
//!
//! All integers and floats are little-endian:
//!
//! | field | encoding |
//! |---|---|
//! | magic | 8 bytes `CDDMCKPT` |
//! | version | u32 |
//! | architecture | u32 signal_dim, hidden, blocks, embed_dim |
//! | schedule | u32 steps, f64 alpha_first, f64 alpha_last, u32 t_max |
//! | config hash | u64 (first 8 bytes of SHA-256 of the config text) |
//! | config text | u32 length + UTF-8 TOML |
//! | optimizer | u64 step, f64 beta1, f64 beta2, f64 epsilon |
//! | rng | 32-byte seed, u64 stream, u128 word position |
//! | corpus cursor | u64 |
//! | parameters | u64 count, then weights, Adam m, Adam v, moving average (count f64 each) |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use sha2::{Digest, Sha256};

use super::denoiser::{Architecture, Denoiser};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::schedule::ScheduleParams;

pub const MAGIC: &[u8; 8] = b"CDDMCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &Stream) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Stream {
        let mut rng = Stream::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub schedule: ScheduleParams,
    pub config_hash: u64,
    pub config_toml: String,
    pub optimizer: Adam,
    pub rng: RngState,
    pub corpus_cursor: u64,
    pub params: Vec<f64>,
    /// Moving average of `params`; the weights used for inference.
    pub ema: Vec<f64>,
}

pub fn config_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl Checkpoint {
    /// Inference weights (the moving average).
    pub fn denoiser(&self) -> Result<Denoiser> {
        Denoiser::from_params(self.architecture, self.ema.clone())
    }

    /// The raw optimizer weights.
    pub fn training_denoiser(&self) -> Result<Denoiser> {
        Denoiser::from_params(self.architecture, self.params.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let a = &self.architecture;
        for v in [a.signal_dim, a.hidden, a.blocks, a.embed_dim] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let s = &self.schedule;
        w.write_all(&(s.steps as u32).to_le_bytes())?;
        w.write_all(&s.alpha_first.to_le_bytes())?;
        w.write_all(&s.alpha_last.to_le_bytes())?;
        w.write_all(&(s.t_max as u32).to_le_bytes())?;
        w.write_all(&self.config_hash.to_le_bytes())?;
        w.write_all(&(self.config_toml.len() as u32).to_le_bytes())?;
        w.write_all(self.config_toml.as_bytes())?;
        let o = &self.optimizer;
        w.write_all(&o.step.to_le_bytes())?;
        for v in [o.beta1, o.beta2, o.epsilon] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.rng.seed)?;
        w.write_all(&self.rng.stream.to_le_bytes())?;
        w.write_all(&self.rng.word_pos.to_le_bytes())?;
        w.write_all(&self.corpus_cursor.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for vec in [&self.params, &o.m, &o.v, &self.ema] {
            for v in vec.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut rd = Reader(r);
        let mut magic = [0u8; 8];
        rd.bytes(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic bytes {magic:02x?}, not a checkpoint"
            )));
        }
        let version = rd.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let architecture = Architecture {
            signal_dim: rd.u32()? as usize,
            hidden: rd.u32()? as usize,
            blocks: rd.u32()? as usize,
            embed_dim: rd.u32()? as usize,
        };
        let schedule = ScheduleParams {
            steps: rd.u32()? as usize,
            alpha_first: rd.f64()?,
            alpha_last: rd.f64()?,
            t_max: rd.u32()? as usize,
        };
        let config_hash = rd.u64()?;
        let len = rd.u32()? as usize;
        if len > 1 << 24 {
            return Err(Error::Format(format!("config text length {len} is implausible")));
        }
        let mut text = vec![0u8; len];
        rd.bytes(&mut text)?;
        let config_toml = String::from_utf8(text)
            .map_err(|_| Error::Format("config text is not UTF-8".into()))?;
        if config_hash != self::config_hash(&config_toml) {
            return Err(Error::Format("config hash does not match embedded config".into()));
        }
        let step = rd.u64()?;
        let (beta1, beta2, epsilon) = (rd.f64()?, rd.f64()?, rd.f64()?);
        let mut seed = [0u8; 32];
        rd.bytes(&mut seed)?;
        let stream = rd.u64()?;
        let mut wp = [0u8; 16];
        rd.bytes(&mut wp)?;
        let rng = RngState {
            seed,
            stream,
            word_pos: u128::from_le_bytes(wp),
        };
        let corpus_cursor = rd.u64()?;
        let count = rd.u64()? as usize;
        if count != architecture.param_count() {
            return Err(Error::Incompatible(format!(
                "architecture {architecture:?} needs {} parameters, file holds {count}",
                architecture.param_count()
            )));
        }
        let params = rd.f64s(count)?;
        let m = rd.f64s(count)?;
        let v = rd.f64s(count)?;
        let ema = rd.f64s(count)?;
        Ok(Self {
            architecture,
            schedule,
            config_hash,
            config_toml,
            optimizer: Adam {
                beta1,
                beta2,
                epsilon,
                m,
                v,
                step,
            },
            rng,
            corpus_cursor,
            params,
            ema,
        })
    }
}

struct Reader<'a, R: Read>(&'a mut R);

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format("checkpoint is truncated".into())
            } else {
                Error::io("<checkpoint stream>", e)
            }
        })
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn sample() -> Checkpoint {
        let arch = Architecture::new(4, 8, 1);
        let mut rng = stream(3, 9);
        let net = Denoiser::init(arch, &mut rng).unwrap();
        let _: u64 = rng.random();
        let text = "seed = 3\n".to_string();
        Checkpoint {
            architecture: arch,
            schedule: ScheduleParams::default(),
            config_hash: config_hash(&text),
            config_toml: text,
            optimizer: Adam::new(arch.param_count()),
            rng: RngState::capture(&rng),
            corpus_cursor: 5,
            params: net.params().to_vec(),
            ema: net.params().iter().map(|p| 0.5 * p).collect(),
        }
    }

    fn bytes(c: &Checkpoint) -> Vec<u8> {
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Checkpoint::read_from(&mut bytes(&c).as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rng_state_resumes_sequence() {
        let mut rng = stream(8, 4);
        let _: [u64; 5] = rng.random();
        let state = RngState::capture(&rng);
        let expected: u64 = rng.random();
        let got: u64 = state.restore().random();
        assert_eq!(expected, got);
    }

    #[test]
    fn corrupt_magic_is_a_format_error() {
        let mut buf = bytes(&sample());
        buf[0] ^= 0xff;
        assert!(matches!(
            Checkpoint::read_from(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn version_bump_is_rejected() {
        let mut buf = bytes(&sample());
        buf[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            Checkpoint::read_from(&mut buf.as_slice()),
            Err(Error::VersionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let buf = bytes(&sample());
        assert!(matches!(
            Checkpoint::read_from(&mut &buf[..buf.len() - 3]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn load_reports_path_on_missing_file() {
        let err = Checkpoint::load("/nonexistent/dir/model.ckpt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/model.ckpt"));
    }
}
