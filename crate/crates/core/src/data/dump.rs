//! URLD embedding dumps.
//!
//! Little-endian layout:
//!
//! ```text
//! "URLD" | version u32 = 1 | flags u32 | count u64 | dim u32 | soft_dim u32
//! per record: id u64 | label i64 (bit0) | dim x f32 | uncertainty f32 (bit1)
//!             | soft_dim x f32 (bit2) | origin u8 (bit3)
//! ```
//!
//! Values are stored as `f32`; a record whose floats are already
//! `f32`-representable survives a roundtrip bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{EvalRecord, Origin};

pub const MAGIC: &[u8; 4] = b"URLD";
pub const VERSION: u32 = 1;
pub const FLAG_LABELS: u32 = 1;
pub const FLAG_UNCERTAINTY: u32 = 1 << 1;
pub const FLAG_SOFT: u32 = 1 << 2;
pub const FLAG_ORIGIN: u32 = 1 << 3;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4 + 4;

fn layout(records: &[EvalRecord]) -> Result<(u32, usize, usize)> {
    let dim = records.first().map_or(0, |r| r.embedding.len());
    let soft_dim = records.first().and_then(|r| r.soft_labels.as_ref()).map_or(0, Vec::len);
    let has_soft = records.first().is_some_and(|r| r.soft_labels.is_some());
    for r in records {
        if r.embedding.len() != dim {
            return Err(Error::shape("write_dump", format!("record {} has dim {}, expected {dim}", r.id, r.embedding.len())));
        }
        match (&r.soft_labels, has_soft) {
            (Some(s), true) if s.len() == soft_dim => {}
            (None, false) => {}
            _ => {
                return Err(Error::shape("write_dump", format!("record {} disagrees on soft labels", r.id)));
            }
        }
    }
    let mut flags = FLAG_LABELS | FLAG_UNCERTAINTY | FLAG_ORIGIN;
    if has_soft {
        flags |= FLAG_SOFT;
    }
    Ok((flags, dim, soft_dim))
}

fn put_f32s(out: &mut Vec<u8>, v: &[f64]) {
    for &x in v {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub fn encode_dump(records: &[EvalRecord]) -> Result<Vec<u8>> {
    let (flags, dim, soft_dim) = layout(records)?;
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (21 + 4 * (dim + soft_dim)));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(soft_dim as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.id.to_le_bytes());
        out.extend_from_slice(&r.label.to_le_bytes());
        put_f32s(&mut out, &r.embedding);
        out.extend_from_slice(&(r.uncertainty as f32).to_le_bytes());
        if let Some(s) = &r.soft_labels {
            put_f32s(&mut out, s);
        }
        out.push(r.origin.to_byte());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| {
            Error::Format(format!("truncated payload: needed {N} bytes at offset {}, file has {}", self.pos, self.buf.len()))
        })?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f32::from_le_bytes(self.take()?) as f64)).collect()
    }
}

pub fn decode_dump(buf: &[u8]) -> Result<Vec<EvalRecord>> {
    let mut c = Cursor { buf, pos: 0 };
    let magic: [u8; 4] = c.take()?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"URLD\"")));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let flags = c.u32()?;
    if flags & !(FLAG_LABELS | FLAG_UNCERTAINTY | FLAG_SOFT | FLAG_ORIGIN) != 0 {
        return Err(Error::Format(format!("unknown flag bits in {flags:#x}")));
    }
    if flags & FLAG_LABELS == 0 || flags & FLAG_UNCERTAINTY == 0 {
        return Err(Error::Format("evaluation needs labels and uncertainties (flags bit0 and bit1)".into()));
    }
    let count = c.u64()? as usize;
    let dim = c.u32()? as usize;
    let soft_dim = c.u32()? as usize;
    let has_soft = flags & FLAG_SOFT != 0;
    let has_origin = flags & FLAG_ORIGIN != 0;
    if !has_soft && soft_dim != 0 {
        return Err(Error::Format(format!("soft_dim {soft_dim} declared without the soft-label flag")));
    }
    let record_len = 16 + 4 * dim + 4 + if has_soft { 4 * soft_dim } else { 0 } + usize::from(has_origin);
    let expected = count.checked_mul(record_len).and_then(|n| n.checked_add(HEADER_LEN));
    match expected {
        Some(n) if n == buf.len() => {}
        Some(n) if n > buf.len() => {
            return Err(Error::Format(format!("truncated payload: header declares {n} bytes, file has {}", buf.len())));
        }
        _ => {
            return Err(Error::Format(format!("payload length {} disagrees with {count} records of dim {dim}", buf.len())));
        }
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id = c.u64()?;
        let label = i64::from_le_bytes(c.take()?);
        let embedding = c.f32s(dim)?;
        let uncertainty = f32::from_le_bytes(c.take()?) as f64;
        let soft_labels = if has_soft { Some(c.f32s(soft_dim)?) } else { None };
        let origin = if has_origin { Origin::from_byte(c.take::<1>()?[0])? } else { Origin::Downstream };
        out.push(EvalRecord { id, label, embedding, uncertainty, soft_labels, origin });
    }
    Ok(out)
}

pub fn write_dump(records: &[EvalRecord], path: &Path) -> Result<()> {
    let bytes = encode_dump(records)?;
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&bytes).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?).read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    decode_dump(&buf).map_err(|e| e.context(path.display().to_string()))
}

fn f32_text(x: f64) -> String {
    format!("{}", x as f32 as f64)
}

/// CSV variant: `id,label,u,e0..e{dim-1}[,s0..]`. Origin is not stored.
pub fn write_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    let (_, dim, soft_dim) = layout(records)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["id".to_string(), "label".into(), "u".into()];
    header.extend((0..dim).map(|k| format!("e{k}")));
    header.extend((0..soft_dim).map(|k| format!("s{k}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.id.to_string(), r.label.to_string(), f32_text(r.uncertainty)];
        row.extend(r.embedding.iter().map(|&v| f32_text(v)));
        if let Some(s) = &r.soft_labels {
            row.extend(s.iter().map(|&v| f32_text(v)));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header = r.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[..3] != ["id", "label", "u"] {
        return Err(Error::Format(format!("CSV header must start with id,label,u; got {}", names.join(","))));
    }
    let dim = names[3..].iter().take_while(|n| n.starts_with('e')).count();
    let soft_dim = names.len() - 3 - dim;
    for (k, n) in names[3..3 + dim].iter().enumerate() {
        if *n != format!("e{k}") {
            return Err(Error::Format(format!("unexpected CSV column '{n}'")));
        }
    }
    for (k, n) in names[3 + dim..].iter().enumerate() {
        if *n != format!("s{k}") {
            return Err(Error::Format(format!("unexpected CSV column '{n}'")));
        }
    }
    let num = |s: &str, line: u64| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| Error::Format(format!("line {line}: bad number '{s}'")))
    };
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[0].trim().parse::<u64>().map_err(|_| Error::Format(format!("line {line}: bad id '{}'", &row[0])))?;
        let label = row[1].trim().parse::<i64>().map_err(|_| Error::Format(format!("line {line}: bad label '{}'", &row[1])))?;
        let uncertainty = num(&row[2], line)?;
        let embedding = (0..dim).map(|k| num(&row[3 + k], line)).collect::<Result<Vec<_>>>()?;
        let soft_labels = if soft_dim > 0 {
            Some((0..soft_dim).map(|k| num(&row[3 + dim + k], line)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        out.push(EvalRecord { id, label, embedding, uncertainty, soft_labels, origin: Origin::Downstream });
    }
    Ok(out)
}

/// Reads a binary dump, or CSV when the extension is `.csv`.
pub fn read_any(path: &Path) -> Result<Vec<EvalRecord>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv(path)
    } else {
        read_dump(path)
    }
}
