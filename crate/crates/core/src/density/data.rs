use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("data table I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("data table CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("duplicate data entry ({key}, {index})")]
    Duplicate { key: String, index: usize },
}

#[derive(Serialize, Deserialize)]
struct Row {
    key: String,
    index: usize,
    value: f64,
}

/// Observed values addressed as `data("key", index)`.
///
/// On disk this is a CSV file with header `key,index,value`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataTable {
    entries: HashMap<String, BTreeMap<usize, f64>>,
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, index: usize, value: f64) -> Result<(), DataError> {
        let key = key.into();
        let slot = self.entries.entry(key.clone()).or_default();
        if slot.insert(index, value).is_some() {
            return Err(DataError::Duplicate { key, index });
        }
        Ok(())
    }

    /// Appends `values` under `key` at indices `0..values.len()`.
    pub fn with_series(mut self, key: &str, values: &[f64]) -> Self {
        let slot = self.entries.entry(key.to_string()).or_default();
        for (i, v) in values.iter().enumerate() {
            slot.insert(i, *v);
        }
        self
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str, index: usize) -> Option<f64> {
        self.entries.get(key)?.get(&index).copied()
    }

    /// Number of entries stored under `key`.
    pub fn series_len(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, BTreeMap::len)
    }

    pub fn series(&self, key: &str) -> Vec<f64> {
        self.entries
            .get(key)
            .map(|m| m.values().copied().collect())
            .unwrap_or_default()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut table = DataTable::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            table.insert(row.key, row.index, row.value)?;
        }
        Ok(table)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes rows sorted by key then index.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        for key in keys {
            for (index, value) in &self.entries[key] {
                wtr.serialize(Row {
                    key: key.clone(),
                    index: *index,
                    value: *value,
                })?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_path(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = DataTable::new().with_series("day", &[0.0, 2.0, 4.0]).with_series("count", &[13.0, 24.0, 8.0]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("key,index,value\ncount,0,13.0\n"));
        assert_eq!(DataTable::read_csv(&buf[..]).unwrap(), t);
    }

    #[test]
    fn duplicate_rows_rejected() {
        let csv = "key,index,value\na,0,1\na,0,2\n";
        assert!(matches!(DataTable::read_csv(csv.as_bytes()), Err(DataError::Duplicate { .. })));
    }

    #[test]
    fn malformed_value_rejected() {
        let csv = "key,index,value\na,0,abc\n";
        assert!(matches!(DataTable::read_csv(csv.as_bytes()), Err(DataError::Csv(_))));
    }
}
