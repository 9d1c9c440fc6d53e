//! Sparse label CSV: header `image_id,row,col,class`, one pixel per line.

use std::fs;
use std::path::Path;

use super::{SparseLabel, SparseLabelSet};
use crate::error::{Error, Result};

pub const SPARSE_HEADER: &str = "image_id,row,col,class";

pub fn render_sparse(set: &SparseLabelSet) -> String {
    let mut out = String::with_capacity(16 * (set.len() + 1));
    out.push_str(SPARSE_HEADER);
    out.push('\n');
    for e in set.entries() {
        out.push_str(&format!("{},{},{},{}\n", e.image_id, e.row, e.col, e.class));
    }
    out
}

pub fn parse_sparse(text: &str) -> Result<SparseLabelSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SPARSE_HEADER => {}
        other => {
            return Err(Error::format(
                "sparse CSV",
                format!(
                    "expected header {SPARSE_HEADER:?}, found {:?}",
                    other.map(|(_, l)| l).unwrap_or("")
                ),
            ))
        }
    }
    let mut entries = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::format(
                "sparse CSV",
                format!("line {}: expected 4 fields, found {}", lineno + 1, fields.len()),
            ));
        }
        let num = |i: usize| -> Result<usize> {
            fields[i].parse().map_err(|_| {
                Error::format(
                    "sparse CSV",
                    format!("line {}: bad integer {:?}", lineno + 1, fields[i]),
                )
            })
        };
        let class = num(3)?;
        let class = u8::try_from(class)
            .ok()
            .filter(|&c| c != super::UNLABELED)
            .ok_or_else(|| {
                Error::format("sparse CSV", format!("line {}: class {class} out of range", lineno + 1))
            })?;
        entries.push(SparseLabel {
            image_id: num(0)?,
            row: num(1)?,
            col: num(2)?,
            class,
        });
    }
    SparseLabelSet::new(entries)
}

pub fn save_sparse(set: &SparseLabelSet, path: &Path) -> Result<()> {
    fs::write(path, render_sparse(set)).map_err(|e| Error::io(path, e))
}

pub fn load_sparse(path: &Path) -> Result<SparseLabelSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sparse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse() {
        let text = "image_id,row,col,class\n0,1,2,1\n3,0,0,0\n";
        let set = parse_sparse(text).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.entries()[0], SparseLabel { image_id: 0, row: 1, col: 2, class: 1 });
        assert_eq!(render_sparse(&set), text);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            parse_sparse("image_id,row,col,class\n0,1,1,0\n0,1,1,1\n"),
            Err(Error::DuplicateLabel { .. })
        ));
        assert!(parse_sparse("row,col\n").is_err());
        assert!(parse_sparse("image_id,row,col,class\n0,1,x,0\n").is_err());
        assert!(parse_sparse("image_id,row,col,class\n0,1,1\n").is_err());
        assert!(parse_sparse("image_id,row,col,class\n0,1,1,255\n").is_err());
        assert!(parse_sparse("").is_err());
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse_sparse("image_id,row,col,class\n").unwrap().is_empty());
    }
}
