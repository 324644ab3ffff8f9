//! Feature/label containers, CSV I/O, balanced sampling and pair buckets.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{LantkError, Result};
use crate::rng;

pub const DEFAULT_PAIR_CAP: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n×d, one example per row.
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Original label spelling for each class index.
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let n = features.nrows();
        if n == 0 || features.ncols() == 0 {
            return Err(LantkError::invalid("dataset needs n >= 1 and d >= 1"));
        }
        if labels.len() != n {
            return Err(LantkError::invalid(format!("{} labels for {} rows", labels.len(), n)));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(LantkError::invalid(format!("label {bad} outside [0, {class_count})")));
        }
        crate::error::ensure_finite(features.as_slice(), "features")?;
        let d = features.ncols();
        Ok(Dataset {
            features,
            labels,
            class_count,
            class_names: (0..class_count).map(|c| c.to_string()).collect(),
            feature_names: (0..d).map(|j| format!("x{j}")).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        crate::linalg::rows_of(&self.features)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let d = self.d();
        let mut f = DMatrix::zeros(rows.len(), d);
        for (k, &r) in rows.iter().enumerate() {
            f.set_row(k, &self.features.row(r));
        }
        Dataset {
            features: f,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_count: self.class_count,
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Divide each row by its L2 norm. Zero rows are left untouched.
    pub fn l2_normalized(&self) -> Dataset {
        let mut out = self.clone();
        for i in 0..out.n() {
            let nrm = out.features.row(i).norm();
            if nrm > 0.0 {
                let r = out.features.row(i) / nrm;
                out.features.set_row(i, &r);
            }
        }
        out
    }

    pub fn binary_view(&self, positive: usize, negative: usize) -> Result<BinaryView> {
        if positive == negative || positive >= self.class_count || negative >= self.class_count {
            return Err(LantkError::invalid(format!(
                "bad class pair ({positive}, {negative}) for C = {}",
                self.class_count
            )));
        }
        let rows: Vec<usize> = (0..self.n())
            .filter(|&i| self.labels[i] == positive || self.labels[i] == negative)
            .collect();
        if rows.is_empty() {
            return Err(LantkError::invalid("binary view selects no rows"));
        }
        let sub = self.subset(&rows);
        let y = DVector::from_iterator(
            rows.len(),
            sub.labels.iter().map(|&l| if l == positive { 1.0 } else { -1.0 }),
        );
        Ok(BinaryView {
            x: sub.features,
            y,
            rows,
            positive_class: positive,
            negative_class: negative,
        })
    }

    /// {0,1} one-hot, n×C.
    pub fn one_hot(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.n(), self.class_count);
        for (i, &l) in self.labels.iter().enumerate() {
            t[(i, l)] = 1.0;
        }
        t
    }
}

/// Two classes of a dataset with ±1 targets. Holds its own copy of the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryView {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Row indices into the source dataset.
    pub rows: Vec<usize>,
    pub positive_class: usize,
    pub negative_class: usize,
}

impl BinaryView {
    /// Build directly from features and ±1 labels.
    pub fn from_parts(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(LantkError::invalid("features/labels length mismatch or empty"));
        }
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(LantkError::invalid("binary labels must be +1 or -1"));
        }
        let n = x.nrows();
        Ok(BinaryView {
            x,
            y,
            rows: (0..n).collect(),
            positive_class: 1,
            negative_class: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Class index per row (positive → 1, negative → 0).
    pub fn class_labels(&self) -> Vec<usize> {
        self.y.iter().map(|&v| usize::from(v > 0.0)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    TrainTrain,
    TestTrain,
}

/// Intra/inter-class index pairs. For test-train pairs the first index is
/// into the test set and the second into the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSets {
    pub intra: Vec<(usize, usize)>,
    pub inter: Vec<(usize, usize)>,
    pub mode: PairMode,
}

fn cap_bucket(bucket: &mut Vec<(usize, usize)>, cap: usize, seed: u64, name: &str) {
    if bucket.len() > cap {
        let mut r = rng::substream(seed, name);
        bucket.shuffle(&mut r);
        bucket.truncate(cap);
        bucket.sort_unstable();
    }
}

/// Unordered pairs i < j within one labelled set.
pub fn enumerate_pairs(labels: &[usize], cap: usize, seed: u64) -> Result<PairSets> {
    if labels.len() < 2 {
        return Err(LantkError::invalid("pair enumeration needs at least 2 examples"));
    }
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            if labels[i] == labels[j] {
                intra.push((i, j));
            } else {
                inter.push((i, j));
            }
        }
    }
    finish(intra, inter, PairMode::TrainTrain, cap, seed)
}

pub fn enumerate_pairs_test_train(
    test_labels: &[usize],
    train_labels: &[usize],
    cap: usize,
    seed: u64,
) -> Result<PairSets> {
    if test_labels.is_empty() || train_labels.is_empty() {
        return Err(LantkError::invalid("test-train pairs need both sets nonempty"));
    }
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for (i, &a) in test_labels.iter().enumerate() {
        for (j, &b) in train_labels.iter().enumerate() {
            if a == b {
                intra.push((i, j));
            } else {
                inter.push((i, j));
            }
        }
    }
    finish(intra, inter, PairMode::TestTrain, cap, seed)
}

fn finish(
    mut intra: Vec<(usize, usize)>,
    mut inter: Vec<(usize, usize)>,
    mode: PairMode,
    cap: usize,
    seed: u64,
) -> Result<PairSets> {
    if intra.is_empty() {
        return Err(LantkError::EmptyBucket("no intra-class pairs".into()));
    }
    if inter.is_empty() {
        return Err(LantkError::EmptyBucket("no inter-class pairs".into()));
    }
    cap_bucket(&mut intra, cap, seed, "pairs-intra");
    cap_bucket(&mut inter, cap, seed, "pairs-inter");
    Ok(PairSets { intra, inter, mode })
}

pub fn balanced_subsample(ds: &Dataset, per_class: usize, seed: u64) -> Result<Dataset> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut r = rng::substream(seed, "balanced-subsample");
    let mut rows = Vec::with_capacity(per_class * ds.class_count);
    for (c, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < per_class {
            return Err(LantkError::invalid(format!(
                "class {c} ({}) has {} rows, fewer than per_class = {per_class}",
                ds.class_names[c],
                idx.len()
            )));
        }
        idx.shuffle(&mut r);
        rows.extend_from_slice(&idx[..per_class]);
    }
    rows.sort_unstable();
    Ok(ds.subset(&rows))
}

/// Stratified split into (train, val, test) with the given fractions for
/// val and test; the rest is train.
pub fn stratified_split(ds: &Dataset, val_frac: f64, test_frac: f64, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if !(0.0..1.0).contains(&(val_frac + test_frac)) || val_frac < 0.0 || test_frac < 0.0 {
        return Err(LantkError::invalid("split fractions must be >= 0 and sum below 1"));
    }
    let mut r = rng::substream(seed, "split");
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..ds.class_count {
        let mut idx: Vec<usize> = (0..ds.n()).filter(|&i| ds.labels[i] == c).collect();
        idx.shuffle(&mut r);
        let nv = (idx.len() as f64 * val_frac).round() as usize;
        let nt = (idx.len() as f64 * test_frac).round() as usize;
        va.extend_from_slice(&idx[..nv]);
        te.extend_from_slice(&idx[nv..nv + nt]);
        tr.extend_from_slice(&idx[nv + nt..]);
    }
    for v in [&mut tr, &mut va, &mut te] {
        v.sort_unstable();
    }
    if tr.is_empty() {
        return Err(LantkError::invalid("split leaves an empty training set"));
    }
    Ok((ds.subset(&tr), ds.subset(&va), ds.subset(&te)))
}

/// Labels that all parse as integers are indexed in ascending numeric order;
/// anything else is indexed in first-seen order.
fn index_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let ints: Option<Vec<i64>> = raw.iter().map(|s| s.trim().parse::<i64>().ok()).collect();
    let mut names: Vec<String> = Vec::new();
    let mut map: HashMap<String, usize> = HashMap::new();
    match ints {
        Some(mut vals) => {
            let parsed = vals.clone();
            vals.sort_unstable();
            vals.dedup();
            for v in &vals {
                map.insert(v.to_string(), names.len());
                names.push(v.to_string());
            }
            let labels = parsed.iter().map(|v| map[&v.to_string()]).collect();
            (labels, names)
        }
        None => {
            let labels = raw
                .iter()
                .map(|s| {
                    let key = s.trim().to_string();
                    let next = map.len();
                    *map.entry(key.clone()).or_insert_with(|| {
                        names.push(key);
                        next
                    })
                })
                .collect();
            (labels, names)
        }
    }
}

pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    if !path.exists() {
        return Err(LantkError::invalid(format!("missing file {}", path.display())));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| LantkError::invalid(format!("no label column '{label_column}'")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != label_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(LantkError::invalid("csv has no feature columns"));
    }
    let mut values: Vec<f64> = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (k, cell) in rec.iter().enumerate() {
            if k == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    LantkError::invalid(format!(
                        "row {} column '{}': non-numeric or non-finite cell '{cell}'",
                        r + 1,
                        headers.get(k).unwrap_or("?")
                    ))
                })?;
            values.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(LantkError::invalid(format!("{} has no data rows", path.display())));
    }
    let n = raw_labels.len();
    let d = feature_names.len();
    if values.len() != n * d {
        return Err(LantkError::invalid("ragged csv rows"));
    }
    let (labels, class_names) = index_labels(&raw_labels);
    let mut ds = Dataset::new(DMatrix::from_row_slice(n, d, &values), labels, class_names.len())?;
    ds.class_names = class_names;
    ds.feature_names = feature_names;
    Ok(ds)
}

/// Writes features then the label column (using the original label names).
pub fn write_csv(ds: &Dataset, path: &Path, label_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ds.feature_names.clone();
    header.push(label_column.to_string());
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(ds.class_names[ds.labels[i]].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn first_seen_string_labels() {
        let f = tmp_csv("f1,f2,label\n1,2,a\n3,4,b\n5,6,a\n7,8,b\n");
        let ds = load_csv(f.path(), "label").unwrap();
        assert_eq!((ds.n(), ds.d(), ds.class_count), (4, 2, 2));
        assert_eq!(ds.labels, vec![0, 1, 0, 1]);
        let f = tmp_csv("f1,label\n1,z\n3,a\n");
        assert_eq!(load_csv(f.path(), "label").unwrap().class_names, vec!["z", "a"]);
    }

    #[test]
    fn nan_cell_reports_location() {
        let f = tmp_csv("f1,f2,label\n1,2,a\n3,NaN,b\n");
        let msg = load_csv(f.path(), "label").unwrap_err().to_string();
        assert!(msg.contains("row 2") && msg.contains("f2"), "{msg}");
    }

    #[test]
    fn single_row_ok_and_empty_rejected() {
        let f = tmp_csv("f1,label\n1.5,x\n");
        assert_eq!(load_csv(f.path(), "label").unwrap().n(), 1);
        let f = tmp_csv("f1,label\n");
        assert!(load_csv(f.path(), "label").is_err());
        assert!(load_csv(Path::new("/nonexistent/x.csv"), "label").is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let f = tmp_csv("a,b,label\n0.1,-2,cat\n3e-5,4,dog\n1,1,cat\n");
        let ds = load_csv(f.path(), "label").unwrap();
        let out = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        write_csv(&ds, out.path(), "label").unwrap();
        assert_eq!(load_csv(out.path(), "label").unwrap(), ds);
    }

    fn toy(labels: Vec<usize>, c: usize) -> Dataset {
        let n = labels.len();
        Dataset::new(DMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64), labels, c).unwrap()
    }

    #[test]
    fn balanced_counts_and_determinism() {
        let ds = toy((0..30).map(|i| i % 2).collect(), 2);
        let a = balanced_subsample(&ds, 5, 0).unwrap();
        assert_eq!(a.n(), 10);
        assert_eq!(a.class_counts(), vec![5, 5]);
        assert_eq!(a, balanced_subsample(&ds, 5, 0).unwrap());
        let err = balanced_subsample(&ds, 16, 0).unwrap_err().to_string();
        assert!(err.contains("class 0"), "{err}");
    }

    #[test]
    fn pair_counts() {
        let p = enumerate_pairs(&[1, 1, 0, 0], DEFAULT_PAIR_CAP, 0).unwrap();
        assert_eq!((p.intra.len(), p.inter.len()), (2, 4));
        assert!(matches!(
            enumerate_pairs(&[0, 1], DEFAULT_PAIR_CAP, 0),
            Err(LantkError::EmptyBucket(_))
        ));
        let p = enumerate_pairs_test_train(&[1], &[1, 0], DEFAULT_PAIR_CAP, 0).unwrap();
        assert_eq!((p.intra.len(), p.inter.len()), (1, 1));
    }

    #[test]
    fn pair_cap_subsamples() {
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let p = enumerate_pairs(&labels, 100, 3).unwrap();
        assert_eq!((p.intra.len(), p.inter.len()), (100, 100));
        for &(i, j) in &p.intra {
            assert_eq!(labels[i], labels[j]);
        }
    }

    #[test]
    fn binary_view_signs() {
        let ds = toy(vec![0, 1, 2, 1, 0], 3);
        let v = ds.binary_view(1, 0).unwrap();
        assert_eq!(v.rows, vec![0, 1, 3, 4]);
        assert_eq!(v.y.as_slice(), &[-1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn split_is_stratified() {
        let ds = toy((0..100).map(|i| i % 2).collect(), 2);
        let (tr, va, te) = stratified_split(&ds, 0.2, 0.2, 1).unwrap();
        assert_eq!((tr.n(), va.n(), te.n()), (60, 20, 20));
        assert_eq!(va.class_counts(), vec![10, 10]);
    }
}
