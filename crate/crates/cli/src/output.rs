//! Output files are staged in memory and written together at the end of a
//! command, so a failing command leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use gammkit::data_io::{Column, DataTable};

pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|f| f.0.as_str())
    }

    /// Writes every staged file. On error, removes what was written and the
    /// output directory if this call created it.
    pub fn commit(self) -> Result<Vec<PathBuf>, String> {
        let created = !self.dir.exists();
        fs::create_dir_all(&self.dir).map_err(|e| format!("{}: {e}", self.dir.display()))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            if let Err(e) = fs::write(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                if created {
                    let _ = fs::remove_dir(&self.dir);
                }
                return Err(format!("{}: {e}", path.display()));
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// CSV bytes from a header and string rows.
pub fn csv_bytes<I>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    // writing to memory cannot fail
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// One cell of a table column in CSV form.
pub fn cell(col: &Column, row: usize) -> String {
    match col {
        Column::Numeric(v) => crate::report::full(v[row]),
        Column::Factor(f) => f.label(row).to_string(),
    }
}

pub fn table_csv(table: &DataTable) -> Vec<u8> {
    let names: Vec<&str> = table.column_names().collect();
    let cols: Vec<&Column> = names.iter().map(|n| table.column(n).expect("listed column")).collect();
    csv_bytes(&names, (0..table.n_rows()).map(|r| cols.iter().map(|c| cell(c, r)).collect()))
}

/// File-name-safe form of a term label: `fs(trial,subject)` → `fs_trial_subject`.
pub fn file_stem(label: &str) -> String {
    let mut s: String = label.chars().map(|c| if c.is_alphanumeric() { c } else { '_' }).collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    s.trim_matches('_').to_string()
}
