//! Tabular study output: named columns of `f64` rows plus resolved scalar
//! parameters, with two CSV serializations. The wide form is the primary
//! artifact (one header of column names, one line per row, scalar params as
//! trailing `# param,<key>,<value>` comment lines). The long form is the
//! fixed `study,param,value` schema, where cell values appear as
//! `column[row]` entries.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! studies serialize to byte-identical files.

use std::io::{self, Write};

/// One study's tabular result.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub study: String,
    /// Resolved scalar settings and summary values, in insertion order.
    pub params: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl StudyResult {
    pub fn new(study: &str) -> Self {
        StudyResult {
            study: study.to_string(),
            params: Vec::new(),
            columns: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn push_param(&mut self, key: &str, value: impl ToString) {
        self.params.push((key.to_string(), value.to_string()));
    }

    pub fn set_columns(&mut self, names: &[&str]) {
        self.columns = names.iter().map(|s| s.to_string()).collect();
    }

    /// Appends a row; panics if the width disagrees with the column count,
    /// which is a programming error rather than a data error.
    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match column count"
        );
        self.rows.push(row);
    }

    /// Column values by name, for assertions and plotting.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Wide CSV: column header, data rows, then one `# param,<key>,<value>`
    /// footer comment line per scalar parameter.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        for (key, value) in &self.params {
            writeln!(w, "# param,{key},{value}")?;
        }
        Ok(())
    }

    /// Long CSV with the fixed `study,param,value` header: scalar params
    /// first, then every cell as `column[row]`.
    pub fn write_long_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "study,param,value")?;
        for (key, value) in &self.params {
            writeln!(w, "{},{key},{value}", self.study)?;
        }
        for (i, row) in self.rows.iter().enumerate() {
            for (col, v) in self.columns.iter().zip(row) {
                writeln!(w, "{},{col}[{i}],{v}", self.study)?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    pub fn to_long_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_long_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}
