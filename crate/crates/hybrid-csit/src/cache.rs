//! Versioned binary model cache.
//!
//! Building the reward tables is the expensive step of the pipeline, so a
//! finished model can be written to disk and reloaded without recomputation.
//! The file is fully self-describing — it embeds the configuration snapshot
//! it was built from — and triple-checked on load: a header hash over the
//! configuration, a header hash over the codebook section, and a trailing
//! checksum over the entire file. Any mismatch refuses the load; a cache is
//! never partially trusted. Channel pools are deterministic given the
//! geometry and cheap to draw, so they are rebuilt on load, not stored.
//!
//! All scalars are little-endian; floats are IEEE-754 doubles.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::channel::{Codebook, CodebookKind, Codebooks, ConditionalModel, SystemConfig};
use crate::error::{Error, Result};
use crate::mdp::{assemble_model, MdpModel};
use crate::numerics::{ComplexVector, RngStream};
use crate::sim::STREAM_MODEL;
use crate::transmission::PairRates;

const MAGIC: &[u8; 8] = b"HCSITMD1";
const VERSION: u32 = 1;
const HASH_LEN: usize = 32;

fn sha256(bytes: &[u8]) -> [u8; HASH_LEN] {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ── writing ────────────────────────────────────────────────────────────────

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_codebook(buf: &mut Vec<u8>, book: &Codebook) {
    buf.push(match book.kind {
        CodebookKind::Coarse => 0,
        CodebookKind::Fine => 1,
    });
    push_u64(buf, book.directions.len() as u64);
    let dim = book.directions.first().map_or(0, ComplexVector::len);
    push_u64(buf, dim as u64);
    for d in &book.directions {
        for z in d.iter() {
            push_f64(buf, z.re);
            push_f64(buf, z.im);
        }
    }
    push_u64(buf, book.norm_levels.len() as u64);
    for &l in &book.norm_levels {
        push_f64(buf, l);
    }
}

fn codebook_section(books: &Codebooks) -> Vec<u8> {
    let mut buf = Vec::new();
    push_codebook(&mut buf, &books.coarse);
    push_codebook(&mut buf, &books.fine);
    buf
}

fn conditional_section(cond: &ConditionalModel) -> Vec<u8> {
    let mut buf = Vec::new();
    push_u64(&mut buf, cond.coarse_symbols() as u64);
    push_u64(&mut buf, cond.fine_symbols() as u64);
    for &p in &cond.pi_coarse {
        push_f64(&mut buf, p);
    }
    for row in &cond.p_fine_given_coarse {
        for &p in row {
            push_f64(&mut buf, p);
        }
    }
    push_u64(&mut buf, cond.uniform_fallback_rows.len() as u64);
    for &r in &cond.uniform_fallback_rows {
        push_u64(&mut buf, r as u64);
    }
    push_u64(&mut buf, cond.sample_count as u64);
    buf
}

fn rates_section(rates: &[PairRates]) -> Vec<u8> {
    let mut buf = Vec::new();
    push_u64(&mut buf, rates.len() as u64);
    for r in rates {
        push_f64(&mut buf, r.rate_i);
        push_f64(&mut buf, r.rate_j);
    }
    buf
}

/// Serializes a model to the cache format.
pub fn model_to_bytes(model: &MdpModel) -> Result<Vec<u8>> {
    let config_toml = toml::to_string(&model.cfg)
        .map_err(|e| Error::CacheFormat(format!("cannot serialize config: {e}")))?;
    let config_bytes = config_toml.as_bytes();
    let books = codebook_section(&model.books);

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&sha256(config_bytes));
    buf.extend_from_slice(&sha256(&books));
    push_u64(&mut buf, config_bytes.len() as u64);
    buf.extend_from_slice(config_bytes);
    buf.extend_from_slice(&books);
    buf.extend_from_slice(&conditional_section(&model.cond));
    buf.extend_from_slice(&rates_section(&model.pair_rewards));
    buf.extend_from_slice(&rates_section(&model.oneshot_rewards));
    let checksum = sha256(&buf);
    buf.extend_from_slice(&checksum);
    Ok(buf)
}

/// Writes the cache file (write-once: refuses to overwrite) and returns the
/// hex of its trailing checksum.
pub fn save_model(model: &MdpModel, path: &Path) -> Result<String> {
    if path.exists() {
        return Err(Error::InvalidInput(format!(
            "refusing to overwrite existing cache {}",
            path.display()
        )));
    }
    let bytes = model_to_bytes(model)?;
    fs::write(path, &bytes)?;
    Ok(hex(&bytes[bytes.len() - HASH_LEN..]))
}

/// Hex of a serialized cache's trailing checksum.
pub fn cache_checksum(bytes: &[u8]) -> Result<String> {
    if bytes.len() < HASH_LEN {
        return Err(Error::CacheFormat("file shorter than its checksum".into()));
    }
    Ok(hex(&bytes[bytes.len() - HASH_LEN..]))
}

/// Hex hash of a codebook pair, exactly as stored in the cache header.
pub fn codebook_hash_hex(books: &Codebooks) -> String {
    hex(&sha256(&codebook_section(books)))
}

// ── reading ────────────────────────────────────────────────────────────────

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CacheFormat(format!(
                "truncated file: {what} needs {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    /// A u64 that must fit in memory-sized bounds.
    fn count(&mut self, what: &str, limit: u64) -> Result<usize> {
        let v = self.u64(what)?;
        if v > limit {
            return Err(Error::CacheFormat(format!("{what} = {v} exceeds the cap {limit}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }
}

// Caps on table sizes read from disk, generous multiples of anything the
// dense machinery can use; they exist so a corrupt length field fails
// cleanly instead of attempting a huge allocation.
const MAX_DIRECTIONS: u64 = 1 << 20;
const MAX_DIM: u64 = 64;
const MAX_TABLE: u64 = 1 << 28;

fn read_codebook(r: &mut Reader<'_>) -> Result<Codebook> {
    let kind = match r.u8("codebook kind")? {
        0 => CodebookKind::Coarse,
        1 => CodebookKind::Fine,
        other => return Err(Error::CacheFormat(format!("unknown codebook kind tag {other}"))),
    };
    let n_dirs = r.count("direction count", MAX_DIRECTIONS)?;
    let dim = r.count("direction dimension", MAX_DIM)?;
    let mut directions = Vec::with_capacity(n_dirs);
    for _ in 0..n_dirs {
        let mut entries = Vec::with_capacity(dim);
        for _ in 0..dim {
            let re = r.f64("direction entry")?;
            let im = r.f64("direction entry")?;
            entries.push(Complex64::new(re, im));
        }
        directions.push(ComplexVector::new(entries));
    }
    let n_levels = r.count("norm level count", MAX_DIRECTIONS)?;
    let norm_levels = r.f64_vec(n_levels, "norm level")?;
    Ok(Codebook { kind, directions, norm_levels })
}

fn read_conditional(r: &mut Reader<'_>) -> Result<ConditionalModel> {
    let c = r.count("coarse symbol count", MAX_TABLE)?;
    let f = r.count("fine symbol count", MAX_TABLE)?;
    let pi_coarse = r.f64_vec(c, "coarse marginal")?;
    let mut p_fine_given_coarse = Vec::with_capacity(c);
    for _ in 0..c {
        p_fine_given_coarse.push(r.f64_vec(f, "conditional row")?);
    }
    let n_fallback = r.count("fallback row count", MAX_TABLE)?;
    let uniform_fallback_rows =
        (0..n_fallback).map(|_| r.count("fallback row", MAX_TABLE)).collect::<Result<_>>()?;
    let sample_count = r.count("sample count", u64::MAX)?;
    Ok(ConditionalModel { pi_coarse, p_fine_given_coarse, uniform_fallback_rows, sample_count })
}

fn read_rates(r: &mut Reader<'_>, what: &str) -> Result<Vec<PairRates>> {
    let n = r.count(what, MAX_TABLE)?;
    (0..n)
        .map(|_| {
            Ok(PairRates { rate_i: r.f64("rate entry")?, rate_j: r.f64("rate entry")? })
        })
        .collect()
}

/// Deserializes and reassembles a model, refusing on any hash mismatch.
pub fn model_from_bytes(bytes: &[u8]) -> Result<MdpModel> {
    if bytes.len() < MAGIC.len() + 4 + 2 * HASH_LEN + HASH_LEN {
        return Err(Error::CacheFormat("file too short for a cache header".into()));
    }
    let (body, trailing) = bytes.split_at(bytes.len() - HASH_LEN);
    if sha256(body) != *<&[u8; HASH_LEN]>::try_from(trailing).expect("32 bytes") {
        return Err(Error::CacheHashMismatch(
            "trailing checksum does not match the file contents".into(),
        ));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::CacheFormat("bad magic: not a model cache file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CacheFormat(format!(
            "cache version {version} is not the supported version {VERSION}"
        )));
    }
    let config_hash: [u8; HASH_LEN] =
        r.take(HASH_LEN, "config hash")?.try_into().expect("32 bytes");
    let codebook_hash: [u8; HASH_LEN] =
        r.take(HASH_LEN, "codebook hash")?.try_into().expect("32 bytes");

    let config_len = r.count("config length", 1 << 20)?;
    let config_bytes = r.take(config_len, "config snapshot")?;
    if sha256(config_bytes) != config_hash {
        return Err(Error::CacheHashMismatch(
            "config snapshot does not match its header hash".into(),
        ));
    }
    let config_text = std::str::from_utf8(config_bytes)
        .map_err(|_| Error::CacheFormat("config snapshot is not UTF-8".into()))?;
    let cfg: SystemConfig = toml::from_str(config_text)
        .map_err(|e| Error::CacheFormat(format!("config snapshot does not parse: {e}")))?;

    let books_start = r.pos;
    let coarse = read_codebook(&mut r)?;
    let fine = read_codebook(&mut r)?;
    if sha256(&body[books_start..r.pos]) != codebook_hash {
        return Err(Error::CacheHashMismatch(
            "codebook section does not match its header hash".into(),
        ));
    }
    let books = Codebooks { coarse, fine };
    books.coarse.validate()?;
    books.fine.validate()?;

    let cond = read_conditional(&mut r)?;
    let pair_rewards = read_rates(&mut r, "pair-reward count")?;
    let oneshot_rewards = read_rates(&mut r, "one-shot reward count")?;
    if r.pos != body.len() {
        return Err(Error::CacheFormat(format!(
            "{} unexpected trailing bytes after the reward tables",
            body.len() - r.pos
        )));
    }

    assemble_model(
        &cfg,
        books,
        cond,
        pair_rewards,
        oneshot_rewards,
        &RngStream::new(cfg.seed, STREAM_MODEL),
    )
}

/// Reads and verifies a cache file.
pub fn load_model(path: &Path) -> Result<MdpModel> {
    let bytes = fs::read(path)?;
    model_from_bytes(&bytes)
}

// ── tests ──────────────────────────────────────────────────────────────────
