use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_idx_images, write_idx_images};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::selector::{Decision, RejectReason, Thresholds};

/// Version stamped into every JSON output and CSV header comment.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub accepted_correct: usize,
    pub accepted_wrong: usize,
    pub rejected: usize,
}

impl Counts {
    pub fn add(&mut self, decision: &Decision, true_label: usize) {
        self.total += 1;
        match decision.label() {
            Some(l) if l == true_label => self.accepted_correct += 1,
            Some(_) => self.accepted_wrong += 1,
            None => self.rejected += 1,
        }
    }

    fn pct(&self, n: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.total as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        self.pct(self.accepted_correct)
    }

    pub fn error(&self) -> f64 {
        self.pct(self.accepted_wrong)
    }

    pub fn rejection(&self) -> f64 {
        self.pct(self.rejected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    #[serde(flatten)]
    pub counts: Counts,
    pub accuracy: f64,
    pub error: f64,
    pub rejection: f64,
}

/// Accuracy, error and rejection percentages over a labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub counts: Counts,
    pub accuracy: f64,
    pub error: f64,
    pub rejection: f64,
    pub per_class: Vec<ClassReport>,
    /// `None` when no thresholds were applied.
    pub thresholds: Option<Thresholds>,
}

impl EvalReport {
    /// Builds the report from decisions and true labels in matching order.
    pub fn from_decisions(
        decisions: &[Decision],
        labels: &[usize],
        num_classes: usize,
        thresholds: Option<Thresholds>,
    ) -> Self {
        let mut all = Counts::default();
        let mut per = vec![Counts::default(); num_classes];
        for (d, &y) in decisions.iter().zip(labels) {
            all.add(d, y);
            if y < num_classes {
                per[y].add(d, y);
            }
        }
        EvalReport {
            counts: all,
            accuracy: all.accuracy(),
            error: all.error(),
            rejection: all.rejection(),
            per_class: per
                .into_iter()
                .enumerate()
                .map(|(class, c)| ClassReport {
                    class,
                    counts: c,
                    accuracy: c.accuracy(),
                    error: c.error(),
                    rejection: c.rejection(),
                })
                .collect(),
            thresholds,
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// CSV writer whose first line is `# schema_version=N`, followed by the header row.
pub struct CsvOut {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "# schema_version={SCHEMA_VERSION}").map_err(|e| Error::io(path, e))?;
        let mut out = CsvOut {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(buf),
        };
        out.row(header)?;
        Ok(out)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|source| Error::Csv {
            path: self.path.clone(),
            source,
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Sidecar of a rejected-sample dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpSidecar {
    pub schema_version: u32,
    /// Command and setting that produced the samples, e.g. `sweep eps=0.06`.
    pub source: String,
    pub num_classes: usize,
    pub rows: usize,
    pub cols: usize,
    /// True label per dumped image; `None` for fooling images.
    pub true_labels: Vec<Option<usize>>,
    pub detected_by: Vec<RejectReason>,
    /// Inputs the producing command classified in total.
    pub source_total: usize,
    /// Of those, how many were accepted with the true label.
    pub source_accepted_correct: usize,
}

fn dump_images_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push("-images-idx3-ubyte");
    PathBuf::from(p)
}

fn dump_sidecar_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Writes `<prefix>-images-idx3-ubyte` and `<prefix>.json`.
///
/// Pixels are stored as bytes, so dumped images are quantized to multiples of 1/255.
pub fn write_dump(prefix: &Path, images: &[Tensor], sidecar: &DumpSidecar) -> Result<()> {
    if images.len() != sidecar.true_labels.len() || images.len() != sidecar.detected_by.len() {
        return Err(Error::Contract("dump sidecar does not match the image count".into()));
    }
    write_idx_images(dump_images_path(prefix), images, sidecar.rows, sidecar.cols)?;
    write_json(&dump_sidecar_path(prefix), sidecar)
}

pub fn read_dump(prefix: &Path) -> Result<(Vec<Tensor>, DumpSidecar)> {
    let sidecar: DumpSidecar = read_json(&dump_sidecar_path(prefix))?;
    let (images, _, _) = read_idx_images(dump_images_path(prefix))?;
    if images.len() != sidecar.true_labels.len() {
        return Err(Error::CountMismatch {
            images: images.len(),
            labels: sidecar.true_labels.len(),
        });
    }
    Ok((images, sidecar))
}
