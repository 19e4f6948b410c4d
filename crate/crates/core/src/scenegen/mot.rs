use std::path::Path;

use super::BBox;
use crate::{Error, Result};

/// One MOTChallenge row: `frame,id,left,top,width,height,conf,-1,-1,-1`, frame and id 1-based.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotRecord {
    pub frame: usize,
    pub id: u64,
    pub bbox: BBox,
    pub conf: f64,
}

const FIELDS: usize = 10;

pub fn format_mot(records: &[MotRecord]) -> String {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in records {
        let b = &r.bbox;
        wtr.write_record([
            r.frame.to_string(),
            r.id.to_string(),
            b.left.to_string(),
            b.top.to_string(),
            b.width.to_string(),
            b.height.to_string(),
            r.conf.to_string(),
            "-1".into(),
            "-1".into(),
            "-1".into(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Strict parser; `origin` names the source in error messages.
pub fn parse_mot(text: &str, origin: &Path) -> Result<Vec<MotRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let err = |msg: String| Error::Parse { path: origin.to_path_buf(), line, msg };
        if row.len() != FIELDS {
            return Err(err(format!("expected {FIELDS} fields, found {}", row.len())));
        }
        let num = |i: usize, what: &str| -> Result<f64> {
            let v: f64 = row[i].parse().map_err(|_| err(format!("{what} {:?} is not a number", &row[i])))?;
            if !v.is_finite() {
                return Err(err(format!("{what} is not finite")));
            }
            Ok(v)
        };
        let frame: usize = row[0].parse().map_err(|_| err(format!("frame {:?} is not a positive integer", &row[0])))?;
        let id: u64 = row[1].parse().map_err(|_| err(format!("id {:?} is not a positive integer", &row[1])))?;
        if frame == 0 || id == 0 {
            return Err(err("frame and id are 1-based".into()));
        }
        let bbox = BBox { left: num(2, "bb_left")?, top: num(3, "bb_top")?, width: num(4, "bb_width")?, height: num(5, "bb_height")? };
        if bbox.width < 0.0 || bbox.height < 0.0 {
            return Err(err("negative box size".into()));
        }
        let conf = num(6, "conf")?;
        if !(0.0..=1.0).contains(&conf) {
            return Err(err(format!("conf {conf} outside [0, 1]")));
        }
        for i in 7..FIELDS {
            num(i, "trailing field")?;
        }
        out.push(MotRecord { frame, id, bbox, conf });
    }
    Ok(out)
}

pub fn write_mot(path: &Path, records: &[MotRecord]) -> Result<()> {
    std::fs::write(path, format_mot(records)).map_err(|e| Error::io_at(path, e))
}

pub fn read_mot(path: &Path) -> Result<Vec<MotRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io_at(path, e))?;
    parse_mot(&text, path)
}
