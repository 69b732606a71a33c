//! SPIP pattern container: ASCII header, then each row bit-packed MSB-first
//! and padded to `ceil(n / 8)` bytes.
//!
//! ```text
//! SPIP1
//! m=<int>
//! n=<int>
//! side=<int>
//! kind=<sh|learned>
//! seed=<int>
//!
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::header::{write_atomic, Header};
use crate::imaging::{PatternKind, PatternMatrix};

const MAGIC: &str = "SPIP1";

pub(crate) fn row_bytes(n: usize) -> usize {
    n.div_ceil(8)
}

pub fn to_bytes(p: &PatternMatrix) -> Result<Vec<u8>> {
    let kind = match p.kind() {
        PatternKind::BinarySh => "sh",
        PatternKind::BinaryLearned => "learned",
        PatternKind::Continuous => {
            return Err(Error::invalid("only binary pattern matrices can be bit-packed"))
        }
    };
    let mut out = format!(
        "{MAGIC}\nm={}\nn={}\nside={}\nkind={kind}\nseed={}\n\n",
        p.m(),
        p.n(),
        p.side(),
        p.seed()
    )
    .into_bytes();
    let stride = row_bytes(p.n());
    for row in p.rows() {
        let mut packed = vec![0u8; stride];
        for (j, &e) in row.iter().enumerate() {
            if e == 1.0 {
                packed[j / 8] |= 0x80 >> (j % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<PatternMatrix> {
    let header = Header::parse(bytes, MAGIC)?;
    let m: usize = header.get("m")?;
    let n: usize = header.get("n")?;
    let side: usize = header.get("side")?;
    let seed: u64 = header.get("seed")?;
    let kind = match header.raw("kind")? {
        ("sh", _) => PatternKind::BinarySh,
        ("learned", _) => PatternKind::BinaryLearned,
        (other, off) => return Err(Error::format(off, format!("unknown pattern kind {other:?}"))),
    };
    if m == 0 || n == 0 || side * side != n {
        let (_, off) = header.raw("side")?;
        return Err(Error::format(off, format!("inconsistent dimensions m={m} n={n} side={side}")));
    }
    let stride = row_bytes(n);
    let body = &bytes[header.body_offset..];
    let expected = m * stride;
    if body.len() != expected {
        let at = header.body_offset + body.len().min(expected);
        return Err(Error::format(
            at as u64,
            format!("body has {} bytes, header implies {expected}", body.len()),
        ));
    }
    let mut entries = Vec::with_capacity(m * n);
    for row in body.chunks_exact(stride) {
        entries.extend((0..n).map(|j| if row[j / 8] & (0x80 >> (j % 8)) != 0 { 1.0f32 } else { 0.0 }));
    }
    PatternMatrix::new(m, n, entries, kind, seed)
}

pub fn write_spip(path: &Path, p: &PatternMatrix) -> Result<()> {
    write_atomic(path, &to_bytes(p)?)
}

pub fn read_spip(path: &Path) -> Result<PatternMatrix> {
    from_bytes(&std::fs::read(path)?)
}
