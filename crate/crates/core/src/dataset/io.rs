//! CSV tables: items, labelled pairs and preprocessed records.

use std::io::{Read, Write};
use std::path::Path;

use super::record::Record;
use crate::{Error, Result};

/// One row of the items table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawItem {
    pub item_id: u64,
    pub description: String,
    pub image_ids: Vec<u64>,
}

/// Two item ids and a duplicate label (1 = duplicate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairExample {
    pub id_a: u64,
    pub id_b: u64,
    pub label: u8,
}

impl PairExample {
    pub fn new(id_a: u64, id_b: u64, label: u8) -> Self {
        Self { id_a, id_b, label }
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(std::fs::File::open(path)?)
}

fn expect_header(rdr: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<()> {
    let got = rdr.headers()?.clone();
    if got.iter().map(str::trim).ne(want.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            reason: format!(
                "expected header {}, found {}",
                want.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec.get(i).ok_or_else(|| Error::Parse {
        line,
        reason: format!("missing field {what}"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        reason: format!("invalid {what}: {raw:?}"),
    })
}

fn parse_id_list(raw: &str, line: u64) -> Result<Vec<u64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| Error::Parse {
                line,
                reason: format!("invalid image id {s:?}"),
            })
        })
        .collect()
}

pub fn read_items_from(reader: impl Read) -> Result<Vec<RawItem>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    expect_header(&mut rdr, &["itemID", "description", "images_array"])?;
    let mut items = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        items.push(RawItem {
            item_id: parse_field(&rec, 0, "itemID")?,
            description: rec.get(1).unwrap_or_default().to_owned(),
            image_ids: parse_id_list(rec.get(2).unwrap_or_default(), line)?,
        });
    }
    Ok(items)
}

pub fn read_items(path: impl AsRef<Path>) -> Result<Vec<RawItem>> {
    read_items_from(open(path.as_ref())?)
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Writes the items table; description and image list are always quoted.
pub fn write_items_to(mut w: impl Write, items: &[RawItem]) -> Result<()> {
    writeln!(w, "itemID,description,images_array")?;
    for it in items {
        let images = it.image_ids.iter().map(u64::to_string).collect::<Vec<_>>().join(", ");
        writeln!(w, "{},{},{}", it.item_id, quoted(&it.description), quoted(&images))?;
    }
    Ok(())
}

pub fn write_items(path: impl AsRef<Path>, items: &[RawItem]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_items_to(&mut w, items)?;
    w.flush()?;
    Ok(())
}

pub fn read_pairs_from(reader: impl Read) -> Result<Vec<PairExample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    expect_header(&mut rdr, &["itemID_1", "itemID_2", "isDuplicate"])?;
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let label: u8 = parse_field(&rec, 2, "isDuplicate")?;
        if label > 1 {
            return Err(Error::Parse {
                line: rec.position().map(|p| p.line()).unwrap_or(0),
                reason: format!("label must be 0 or 1, got {label}"),
            });
        }
        pairs.push(PairExample {
            id_a: parse_field(&rec, 0, "itemID_1")?,
            id_b: parse_field(&rec, 1, "itemID_2")?,
            label,
        });
    }
    Ok(pairs)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairExample>> {
    read_pairs_from(open(path.as_ref())?)
}

pub fn write_pairs_to(mut w: impl Write, pairs: &[PairExample]) -> Result<()> {
    writeln!(w, "itemID_1,itemID_2,isDuplicate")?;
    for p in pairs {
        writeln!(w, "{},{},{}", p.id_a, p.id_b, p.label)?;
    }
    Ok(())
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[PairExample]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pairs_to(&mut w, pairs)?;
    w.flush()?;
    Ok(())
}

const RECORD_HEADER: [&str; 5] = ["item_id", "feature_key", "content_length", "token_ids", "text"];

/// Records table: `item_id,feature_key,content_length,token_ids,text` with
/// space-separated token ids.
pub fn write_records(path: impl AsRef<Path>, records: &[&Record]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", RECORD_HEADER.join(","))?;
    for r in records {
        let ids = r.token_ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
        writeln!(
            w,
            "{},{},{},{},{}",
            r.item_id,
            r.feature_key,
            r.content_length,
            ids,
            quoted(&r.text)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(open(path.as_ref())?);
    expect_header(&mut rdr, &RECORD_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let token_ids = rec
            .get(3)
            .unwrap_or_default()
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| Error::Parse {
                    line,
                    reason: format!("invalid token id {s:?}"),
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        let record = Record {
            item_id: parse_field(&rec, 0, "item_id")?,
            feature_key: parse_field(&rec, 1, "feature_key")?,
            content_length: parse_field(&rec, 2, "content_length")?,
            token_ids,
            text: rec.get(4).unwrap_or_default().to_owned(),
        };
        if !record.check_layout() {
            return Err(Error::Parse {
                line,
                reason: "record token layout is invalid".into(),
            });
        }
        out.push(record);
    }
    Ok(out)
}
