//! On-disk index format.
//!
//! ```text
//! magic   8 bytes  "BMQIDX\0\0"
//! version u32 LE
//! flags   u32 LE   bit 0 = stemming, bit 1 = stopwords
//! ndocs   u64 LE, then per doc: id (u32 len + utf8), length u32
//! nterms  u64 LE, then per term: term (u32 len + utf8), npostings u32,
//!                  then (doc u32, tf u32) pairs
//! ```
//! All integers little-endian. Terms appear in lexicographic order.

use std::io::{Read, Write};

use super::{Analyzer, IndexError, InvertedIndex, Posting};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"BMQIDX\0\0";
pub const SNAPSHOT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub fn write_snapshot(index: &InvertedIndex, mut w: impl Write) -> Result<(), IndexError> {
    w.write_all(SNAPSHOT_MAGIC)?;
    put_u32(&mut w, SNAPSHOT_VERSION)?;
    let a = index.analyzer();
    put_u32(&mut w, u32::from(a.stem) | (u32::from(a.stopwords) << 1))?;
    w.write_all(&(index.doc_count() as u64).to_le_bytes())?;
    for (id, len) in index.doc_ids().iter().zip(index.doc_lengths()) {
        put_str(&mut w, id)?;
        put_u32(&mut w, *len)?;
    }
    w.write_all(&(index.vocab_size() as u64).to_le_bytes())?;
    for (term, postings) in index.vocabulary().iter().zip(index.all_postings()) {
        put_str(&mut w, term)?;
        put_u32(&mut w, postings.len() as u32)?;
        for p in postings {
            put_u32(&mut w, p.doc)?;
            put_u32(&mut w, p.tf)?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32, IndexError> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| IndexError::BadSnapshot("non-UTF-8 string".into()))
    }
}

pub fn read_snapshot(r: impl Read) -> Result<InvertedIndex, IndexError> {
    let mut r = Reader { inner: r };
    let mut magic = [0u8; 8];
    r.inner.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(IndexError::BadSnapshot("bad magic".into()));
    }
    let version = r.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(IndexError::BadSnapshot(format!(
            "unsupported format version {version} (expected {SNAPSHOT_VERSION})"
        )));
    }
    let flags = r.u32()?;
    let analyzer = Analyzer {
        stem: flags & 1 != 0,
        stopwords: flags & 2 != 0,
    };
    let ndocs = r.u64()? as usize;
    let mut doc_ids = Vec::with_capacity(ndocs.min(1 << 24));
    let mut doc_lengths = Vec::with_capacity(ndocs.min(1 << 24));
    for _ in 0..ndocs {
        doc_ids.push(r.string()?);
        doc_lengths.push(r.u32()?);
    }
    let nterms = r.u64()? as usize;
    let mut vocab = Vec::with_capacity(nterms.min(1 << 24));
    let mut postings = Vec::with_capacity(nterms.min(1 << 24));
    for _ in 0..nterms {
        let term = r.string()?;
        if let Some(prev) = vocab.last() {
            if *prev >= term {
                return Err(IndexError::BadSnapshot("vocabulary not sorted".into()));
            }
        }
        let n = r.u32()? as usize;
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            let doc = r.u32()?;
            let tf = r.u32()?;
            if doc as usize >= ndocs || tf == 0 {
                return Err(IndexError::BadSnapshot(format!("bad posting for `{term}`")));
            }
            list.push(Posting { doc, tf });
        }
        vocab.push(term);
        postings.push(list);
    }
    Ok(InvertedIndex::from_parts(analyzer, doc_ids, doc_lengths, vocab, postings))
}
