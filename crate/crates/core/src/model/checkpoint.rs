//! `LOOMVF01` | layout | parameters, all integers u64 and floats f64, little-endian.
//!
//! Layout: dim, time_freqs, max_freq, activation code, hidden layer count,
//! hidden widths, parameter count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, Mlp, MlpConfig, Trainable};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LOOMVF01";

const MAX_HIDDEN_LAYERS: u64 = 1 << 10;

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    read_u64(r).map(f64::from_bits)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in memory")))
}

impl Mlp {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let c = self.config();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(c.dim as u64).to_le_bytes())?;
        w.write_all(&(c.time_freqs as u64).to_le_bytes())?;
        w.write_all(&c.max_freq.to_le_bytes())?;
        w.write_all(&c.activation_code().to_le_bytes())?;
        w.write_all(&(c.hidden.len() as u64).to_le_bytes())?;
        for h in &c.hidden {
            w.write_all(&(*h as u64).to_le_bytes())?;
        }
        w.write_all(&(self.num_params() as u64).to_le_bytes())?;
        for p in self.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a vector-field checkpoint (bad magic)".into()));
        }
        let dim = to_usize(read_u64(&mut r)?, "dim")?;
        let time_freqs = to_usize(read_u64(&mut r)?, "time_freqs")?;
        let max_freq = read_f64(&mut r)?;
        let activation = Activation::from_code(read_u64(&mut r)?)?;
        let layers = read_u64(&mut r)?;
        if layers > MAX_HIDDEN_LAYERS {
            return Err(Error::Format(format!("{layers} hidden layers")));
        }
        let hidden = (0..layers)
            .map(|_| read_u64(&mut r).and_then(|h| to_usize(h, "width")))
            .collect::<Result<Vec<_>>>()?;
        let config = MlpConfig { dim, hidden, time_freqs, max_freq, activation };
        config.validate().map_err(|e| Error::Format(format!("invalid layout: {e}")))?;
        let count = to_usize(read_u64(&mut r)?, "parameter count")?;
        if count != config.num_params() {
            return Err(Error::Format(format!(
                "{count} parameters stored for a layout of {}",
                config.num_params()
            )));
        }
        let params = (0..count).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Mlp::from_params(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Mlp::read_from(BufReader::new(File::open(path)?))
    }
}
