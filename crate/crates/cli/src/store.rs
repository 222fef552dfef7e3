//! Files: key store, raw bit files, pool files.
//!
//! The key store is a sequence of records, one per distilled round:
//! bit length (u64 BE) followed by the bits packed MSB-first.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mary_kd::bitpool::BitPoolState;
use mary_kd::bits::{self, BitStr, Bits};
use mary_kd::codec::MaryConfig;

pub fn append_key(path: &Path, z: &BitStr) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening key store {}", path.display()))?;
    let mut rec = (z.len() as u64).to_be_bytes().to_vec();
    rec.extend_from_slice(&bits::pack(z));
    f.write_all(&rec)?;
    Ok(())
}

pub fn read_keys(path: &Path) -> Result<Bits> {
    let bytes = fs::read(path).with_context(|| format!("reading key store {}", path.display()))?;
    let mut rest = bytes.as_slice();
    let mut out = Bits::new();
    while !rest.is_empty() {
        if rest.len() < 8 {
            bail!("key store {} is truncated", path.display());
        }
        let len = u64::from_be_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        let n = bits::packed_len(len);
        if rest.len() < 8 + n {
            bail!("key store {} is truncated", path.display());
        }
        out.extend_from_bitslice(&bits::unpack(&rest[8..8 + n], len).expect("length checked"));
        rest = &rest[8 + n..];
    }
    Ok(out)
}

pub fn load_pool(path: &Path, cfg: MaryConfig) -> Result<BitPoolState> {
    let bytes = fs::read(path).with_context(|| format!("reading pool {}", path.display()))?;
    BitPoolState::from_bytes(&bytes, cfg).with_context(|| format!("loading pool {}", path.display()))
}

/// Writes through a temporary file so a crash never leaves half a pool.
pub fn save_pool(path: &Path, pool: &BitPoolState) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, pool.to_bytes())?;
    fs::rename(&tmp, path).with_context(|| format!("writing pool {}", path.display()))?;
    Ok(())
}
