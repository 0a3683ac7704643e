//! Output directory bookkeeping and CSV writing.
//!
//! Every CSV starts with a `# schema: <name>/<version>` comment line,
//! followed by a header row. Floats use Rust's shortest round-trip form;
//! undefined values are written as `NaN`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pop_core::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Tracks every file a command writes, relative to its output root.
pub struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Record a file written by someone else (e.g. a checkpoint).
    pub fn register(&mut self, abs: &Path) {
        let rel = abs.strip_prefix(&self.root).unwrap_or(abs).to_string_lossy().replace('\\', "/");
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
    }

    pub fn write_csv(&mut self, rel: &str, schema: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut file = std::io::BufWriter::new(fs::File::create(&path)?);
        writeln!(file, "# schema: {schema}/{SCHEMA_VERSION}")?;
        {
            let mut w = csv::Writer::from_writer(&mut file);
            w.write_record(header).map_err(csv_err)?;
            for r in rows {
                debug_assert_eq!(r.len(), header.len());
                w.write_record(r).map_err(csv_err)?;
            }
            w.flush()?;
        }
        file.flush()?;
        self.register(&path);
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> pop_core::PopError {
    pop_core::PopError::Io(std::io::Error::other(e))
}

pub fn f(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

/// Read a CSV written by [`Outputs::write_csv`]: header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let body: String = text.lines().skip_while(|l| l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}
