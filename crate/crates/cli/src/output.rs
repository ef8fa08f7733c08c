//! Output files. Everything is staged in memory and written with a
//! temp-file rename, so a failed command leaves no partial files.

use std::fs;
use std::path::{Path, PathBuf};

use eptikit_core::datamodel::container::write_atomic;
use eptikit_core::Persist;

use crate::error::{CliError, CliResult};

/// A CSV table with a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Fixed-precision float cell.
pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Files of one command, written together at the end.
#[derive(Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn table(&mut self, path: PathBuf, table: &Table) -> CliResult<()> {
        self.add(path, table.to_bytes()?);
        Ok(())
    }

    pub fn container<T: Persist>(&mut self, path: PathBuf, object: &T) -> CliResult<()> {
        let bytes = object.to_container()?.to_bytes().map_err(|e| CliError::Io(e.to_string()))?;
        self.add(path, bytes);
        Ok(())
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn commit(self) -> CliResult<()> {
        for (path, bytes) in &self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            }
            write_atomic(path, bytes).map_err(|e| CliError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_fields_with_commas() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), num(0.5)]);
        assert_eq!(String::from_utf8(t.to_bytes().unwrap()).unwrap(), "a,b\n\"x,y\",0.500000\n");
    }

    #[test]
    fn staged_files_appear_only_on_commit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("t.csv");
        let mut s = Staged::default();
        s.table(path.clone(), &Table::new(&["a"])).unwrap();
        assert!(!path.exists());
        s.commit().unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a\n");
    }
}
