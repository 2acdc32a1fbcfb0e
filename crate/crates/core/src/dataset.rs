//! Grouped datasets and their on-disk format.
//!
//! A dataset is a CSV file `<name>.csv` with header
//! `group_id,label,f0,...,f{d-1}` and rows sorted by group, plus a sidecar
//! `<name>.meta.json`. Group ids are dense `0..m` and each group occupies a
//! contiguous block of rows.

use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::{self, fmt_f64};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    OodVal,
    OodTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::OodVal, Split::OodTest];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::OodVal => "ood_val",
            Split::OodTest => "ood_test",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::OodVal => 1,
            Split::OodTest => 2,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|split| split.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown split {s:?}")))
    }
}

/// Generator provenance recorded for synthetic datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeta {
    pub setting_id: u32,
    pub seed: u64,
    pub samples_per_group: usize,
    /// Fraction of groups carrying an idiosyncratic signal in this split.
    #[serde(rename = "U")]
    pub idiosyncratic_fraction: f64,
    /// Unnormalized prior over the idiosyncratic signals for this split.
    pub priors: Vec<f64>,
    pub generator_version: String,
    /// Number of groups that drew each idiosyncratic signal.
    pub signal_counts: Vec<usize>,
}

/// Sidecar contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub split: Split,
    pub n_groups: usize,
    pub feature_dim: usize,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupedDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    group_ids: Vec<usize>,
    group_ranges: Vec<Range<usize>>,
    meta: DatasetMeta,
}

impl GroupedDataset {
    /// Assemble a dataset. Rows must be sorted by group and ids dense.
    pub fn new(
        split: Split,
        features: Array2<f64>,
        labels: Vec<usize>,
        group_ids: Vec<usize>,
        synthetic: Option<SyntheticMeta>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || group_ids.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows, {} labels, {} group ids",
                labels.len(),
                group_ids.len()
            )));
        }
        if n == 0 {
            return Err(Error::input("dataset has no samples"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("dataset contains non-finite features"));
        }
        let group_ranges = group_ranges(&group_ids).map_err(|(row, msg)| Error::input(format!("row {row}: {msg}")))?;
        let meta = DatasetMeta {
            format_version: FORMAT_VERSION,
            split,
            n_groups: group_ranges.len(),
            feature_dim: features.ncols(),
            synthetic,
        };
        Ok(GroupedDataset {
            features,
            labels,
            group_ids,
            group_ranges,
            meta,
        })
    }

    pub fn split(&self) -> Split {
        self.meta.split
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.group_ranges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of classes implied by the labels (at least 2).
    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(2, |m| (m + 1).max(2))
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn group_ids(&self) -> &[usize] {
        &self.group_ids
    }

    /// Row range of group `g`.
    pub fn group_range(&self, g: usize) -> Range<usize> {
        self.group_ranges[g].clone()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.group_ranges.iter().map(|r| r.len()).collect()
    }

    /// Copy the given rows into a new feature matrix.
    pub fn gather_features(&self, rows: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), rows)
    }
}

/// Contiguous row range per group, or `(row, reason)` on the first violation.
fn group_ranges(group_ids: &[usize]) -> std::result::Result<Vec<Range<usize>>, (usize, String)> {
    let mut ranges: Vec<Range<usize>> = Vec::new();
    for (row, &g) in group_ids.iter().enumerate() {
        match ranges.len() {
            len if g + 1 == len => ranges[g].end = row + 1,
            len if g == len => ranges.push(row..row + 1),
            len => {
                return Err((
                    row,
                    format!("group id {g} breaks the dense sorted order (expected {} or {len})", len.saturating_sub(1)),
                ))
            }
        }
    }
    Ok(ranges)
}

/// `<name>.csv` → `<name>.meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.strip_suffix(".csv").unwrap_or(n).to_string())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_dataset(dataset: &GroupedDataset, csv_path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(csv_path)
        .map_err(|e| csv_error(csv_path, e))?;
    let mut header = vec!["group_id".to_string(), "label".to_string()];
    header.extend((0..dataset.feature_dim()).map(|i| format!("f{i}")));
    writer.write_record(&header).map_err(|e| csv_error(csv_path, e))?;
    let mut record = Vec::with_capacity(header.len());
    for (i, row) in dataset.features.rows().into_iter().enumerate() {
        record.clear();
        record.push(dataset.group_ids[i].to_string());
        record.push(dataset.labels[i].to_string());
        record.extend(row.iter().map(|&v| fmt_f64(v)));
        writer.write_record(&record).map_err(|e| csv_error(csv_path, e))?;
    }
    writer.flush().map_err(|e| Error::io(csv_path, e))?;
    json::write_file(&sidecar_path(csv_path), &dataset.meta, true)
}

pub fn read_dataset(csv_path: &Path) -> Result<GroupedDataset> {
    let meta_path = sidecar_path(csv_path);
    let meta: DatasetMeta = json::read_file(&meta_path)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::parse(
            &meta_path,
            1,
            format!("format_version {} is not supported (expected {FORMAT_VERSION})", meta.format_version),
        ));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| csv_error(csv_path, e))?;
    let header = reader.headers().map_err(|e| csv_error(csv_path, e))?.clone();
    let width = header.len();
    let header_ok = width >= 3
        && &header[0] == "group_id"
        && &header[1] == "label"
        && header.iter().skip(2).enumerate().all(|(i, h)| h == format!("f{i}"));
    if !header_ok {
        return Err(Error::parse(
            csv_path,
            1,
            format!("malformed header {:?}; expected group_id,label,f0,...", header.iter().collect::<Vec<_>>()),
        ));
    }
    let dim = width - 2;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut group_ids = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(csv_path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(Error::parse(csv_path, line, format!("expected {width} fields, found {}", record.len())));
        }
        let group: usize = record[0]
            .parse()
            .map_err(|_| Error::parse(csv_path, line, format!("field group_id: bad value {:?}", &record[0])))?;
        let label: usize = record[1]
            .parse()
            .map_err(|_| Error::parse(csv_path, line, format!("field label: bad value {:?}", &record[1])))?;
        for (j, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(csv_path, line, format!("field f{j}: bad value {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(csv_path, line, format!("field f{j}: non-finite value")));
            }
            features.push(v);
        }
        if let Err((_, msg)) = group_ranges_step(&group_ids, group) {
            return Err(Error::parse(csv_path, line, format!("field group_id: {msg}")));
        }
        group_ids.push(group);
        labels.push(label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::parse(csv_path, 2, "no data rows"));
    }
    let features = Array2::from_shape_vec((n, dim), features).map_err(|e| Error::Shape(e.to_string()))?;
    let dataset = GroupedDataset::new(meta.split, features, labels, group_ids, meta.synthetic.clone())?;
    check_sidecar(&dataset, &meta, &meta_path)?;
    Ok(dataset)
}

/// Validate that appending `next` keeps group ids dense and sorted.
fn group_ranges_step(previous: &[usize], next: usize) -> std::result::Result<(), (usize, String)> {
    match previous.last() {
        None if next == 0 => Ok(()),
        None => Err((0, format!("first group id is {next}, expected 0"))),
        Some(&last) if next == last || next == last + 1 => Ok(()),
        Some(&last) => Err((previous.len(), format!("group id {next} follows {last}; ids must be dense and sorted"))),
    }
}

fn check_sidecar(dataset: &GroupedDataset, meta: &DatasetMeta, meta_path: &Path) -> Result<()> {
    let mismatch = |field: &str, sidecar: String, csv: String| {
        Err(Error::parse(
            meta_path,
            0,
            format!("field {field}: sidecar says {sidecar}, data has {csv}"),
        ))
    };
    if meta.n_groups != dataset.n_groups() {
        return mismatch("n_groups", meta.n_groups.to_string(), dataset.n_groups().to_string());
    }
    if meta.feature_dim != dataset.feature_dim() {
        return mismatch("feature_dim", meta.feature_dim.to_string(), dataset.feature_dim().to_string());
    }
    if let Some(syn) = &meta.synthetic {
        if let Some((g, size)) = dataset
            .group_sizes()
            .into_iter()
            .enumerate()
            .find(|(_, s)| *s != syn.samples_per_group)
        {
            return mismatch(
                "samples_per_group",
                syn.samples_per_group.to_string(),
                format!("{size} samples in group {g}"),
            );
        }
    }
    Ok(())
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

/// Group-stats export used by the report pipeline: `group_id,n,loss,accuracy`.
pub fn write_group_stats(stats: &[crate::metrics::GroupStats], path: &Path) -> Result<()> {
    let mut text = String::from("group_id,n,loss,accuracy\n");
    for s in stats {
        text.push_str(&format!("{},{},{},{}\n", s.group_id, s.n, fmt_f64(s.mean_loss), fmt_f64(s.accuracy)));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> GroupedDataset {
        GroupedDataset::new(
            Split::Train,
            array![[0.25, -0.75], [1.0 / 3.0, 2.0], [-1e-7, 5.5]],
            vec![1, 0, 1],
            vec![0, 0, 1],
            None,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_small_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let d = toy();
        write_dataset(&d, &path).unwrap();
        assert!(dir.path().join("toy.meta.json").exists());
        assert_eq!(read_dataset(&path).unwrap(), d);
    }

    #[test]
    fn parses_documented_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let mut text = String::from("group_id,label,f0,f1\n");
        for g in 0..5 {
            text.push_str(&format!("{g},0,0.0,0.0\n"));
        }
        text.push_str("5,1,0.25,-0.75\n");
        std::fs::write(&path, text).unwrap();
        let meta = DatasetMeta {
            format_version: FORMAT_VERSION,
            split: Split::OodTest,
            n_groups: 6,
            feature_dim: 2,
            synthetic: None,
        };
        json::write_file(&sidecar_path(&path), &meta, true).unwrap();
        let d = read_dataset(&path).unwrap();
        assert_eq!(d.group_ids()[5], 5);
        assert_eq!(d.labels()[5], 1);
        assert_eq!(d.features().row(5).to_vec(), vec![0.25, -0.75]);
    }

    #[test]
    fn rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        write_dataset(&toy(), &path).unwrap();
        std::fs::write(&path, "group,label,f0,f1\n0,1,0.1,0.2\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_non_dense_group_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.csv");
        write_dataset(&toy(), &path).unwrap();
        std::fs::write(&path, "group_id,label,f0,f1\n0,1,0.1,0.2\n2,0,0.3,0.4\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("group_id"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_mismatched_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mm.csv");
        write_dataset(&toy(), &path).unwrap();
        let mut meta = toy().meta().clone();
        meta.n_groups = 3;
        json::write_file(&sidecar_path(&path), &meta, true).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("n_groups"), "{err}");
    }

    #[test]
    fn constructor_rejects_unsorted_groups() {
        let res = GroupedDataset::new(Split::Train, array![[0.0], [1.0], [2.0]], vec![0, 0, 0], vec![0, 1, 0], None);
        assert!(res.is_err());
    }

    #[test]
    fn sidecar_path_swaps_extension() {
        assert_eq!(sidecar_path(Path::new("/a/b/train.csv")), PathBuf::from("/a/b/train.meta.json"));
    }
}
