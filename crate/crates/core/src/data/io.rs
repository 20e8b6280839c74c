use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::numerics::Matrix;

use super::textfmt::{
    body_lines, check_name, load_err, parse_header, parse_row, parse_usize, push_row, read_text,
    write_text,
};
use super::{Dataset, LabeledFeatures};

/// Seen/unseen class lists from a split file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
}

/// Locations of the four files that make up a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub train_features: PathBuf,
    pub test_features: PathBuf,
    pub attributes: PathBuf,
    pub split: PathBuf,
}

impl DatasetPaths {
    /// Conventional names inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            train_features: dir.join("train.features"),
            test_features: dir.join("test.features"),
            attributes: dir.join("classes.attrs"),
            split: dir.join("split.txt"),
        }
    }
}

/// `fzsl.features v1 n=<n> d=<d>` followed by `<label>,<v1>,...,<vd>` rows.
pub fn read_features(path: &Path) -> Result<LabeledFeatures> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = parse_header(path, lines.next(), "fzsl.features", &["n", "d"])?;
    let n = parse_usize(path, 1, "n", &header[0])?;
    let d = parse_usize(path, 1, "d", &header[1])?;
    let body = body_lines(path, lines, n)?;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (i, line) in body.iter().enumerate() {
        let (label, values) = parse_row(path, i + 2, line, d)?;
        labels.push(parse_usize(path, i + 2, "label", label)?);
        data.extend(values);
    }
    LabeledFeatures::new(Matrix::from_vec(n, d, data)?, labels)
}

pub fn write_features(path: &Path, set: &LabeledFeatures) -> Result<()> {
    let (n, d) = set.features.shape();
    let mut out = format!("fzsl.features v1 n={n} d={d}\n");
    for (row, label) in set.features.iter_rows().zip(&set.labels) {
        push_row(&mut out, &label.to_string(), row);
    }
    write_text(path, &out)
}

/// `fzsl.attrs v1 c=<C> m=<m>` followed by `<class_name>,<a1>,...,<am>` rows.
pub fn read_attributes(path: &Path) -> Result<(Vec<String>, Matrix<f32>)> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = parse_header(path, lines.next(), "fzsl.attrs", &["c", "m"])?;
    let c = parse_usize(path, 1, "c", &header[0])?;
    let m = parse_usize(path, 1, "m", &header[1])?;
    let body = body_lines(path, lines, c)?;
    let mut names: Vec<String> = Vec::with_capacity(c);
    let mut data = Vec::with_capacity(c * m);
    for (i, line) in body.iter().enumerate() {
        let (name, values) = parse_row(path, i + 2, line, m)?;
        check_name(name).map_err(|e| load_err(path, i + 2, e.to_string()))?;
        if names.iter().any(|n| n == name) {
            return Err(load_err(
                path,
                i + 2,
                format!("duplicate class name `{name}`"),
            ));
        }
        names.push(name.to_string());
        data.extend(values);
    }
    Ok((names, Matrix::from_vec(c, m, data)?))
}

pub fn write_attributes(path: &Path, names: &[String], attributes: &Matrix<f32>) -> Result<()> {
    let (c, m) = attributes.shape();
    let mut out = format!("fzsl.attrs v1 c={c} m={m}\n");
    for (name, row) in names.iter().zip(attributes.iter_rows()) {
        check_name(name)?;
        push_row(&mut out, name, row);
    }
    write_text(path, &out)
}

/// `fzsl.split v1`, `seen:<ids>`, `unseen:<ids>`.
pub fn read_split(path: &Path) -> Result<Split> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    parse_header(path, lines.next(), "fzsl.split", &[])?;
    let body = body_lines(path, lines, 2)?;
    let parse_list = |line_no: usize, line: &str, key: &str| -> Result<Vec<usize>> {
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(':'))
            .ok_or_else(|| load_err(path, line_no, format!("expected `{key}:<class ids>`")))?;
        if rest.is_empty() {
            return Ok(Vec::new());
        }
        let mut ids = rest
            .split(',')
            .map(|t| parse_usize(path, line_no, "class id", t))
            .collect::<Result<Vec<_>>>()?;
        let before = ids.len();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != before {
            return Err(load_err(
                path,
                line_no,
                format!("duplicate class id in `{key}`"),
            ));
        }
        Ok(ids)
    };
    let seen = parse_list(2, body[0], "seen")?;
    let unseen = parse_list(3, body[1], "unseen")?;
    if let Some(c) = seen.iter().find(|c| unseen.binary_search(c).is_ok()) {
        return Err(load_err(
            path,
            3,
            format!("class {c} is listed as both seen and unseen"),
        ));
    }
    Ok(Split { seen, unseen })
}

pub fn write_split(path: &Path, split: &Split) -> Result<()> {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let out = format!(
        "fzsl.split v1\nseen:{}\nunseen:{}\n",
        join(&split.seen),
        join(&split.unseen)
    );
    write_text(path, &out)
}

/// Read and validate a dataset. Train rows must carry seen labels, test rows
/// seen or unseen labels; violations are reported with file and line.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let (class_names, attributes) = read_attributes(&paths.attributes)?;
    let split = read_split(&paths.split)?;
    let c = class_names.len();
    if let Some(bad) = split.seen.iter().chain(&split.unseen).find(|&&k| k >= c) {
        return Err(load_err(
            &paths.split,
            0,
            format!("class id {bad} out of range for {c} classes"),
        ));
    }
    let train = read_features(&paths.train_features)?;
    let test = read_features(&paths.test_features)?;
    for (i, &l) in train.labels.iter().enumerate() {
        if l >= c {
            return Err(load_err(
                &paths.train_features,
                i + 2,
                format!("label {l} out of range"),
            ));
        }
        if split.seen.binary_search(&l).is_err() {
            return Err(load_err(
                &paths.train_features,
                i + 2,
                format!("training row labelled {l}, which is not a seen class"),
            ));
        }
    }
    for (i, &l) in test.labels.iter().enumerate() {
        if l >= c {
            return Err(load_err(
                &paths.test_features,
                i + 2,
                format!("label {l} out of range"),
            ));
        }
    }
    if !test.is_empty() && test.features.cols() != train.features.cols() {
        return Err(load_err(
            &paths.test_features,
            1,
            "feature width differs from the training file",
        ));
    }
    Dataset::new(
        train,
        test,
        class_names,
        attributes,
        split.seen,
        split.unseen,
    )
}

pub fn save_dataset(dataset: &Dataset, paths: &DatasetPaths) -> Result<()> {
    write_features(&paths.train_features, &dataset.train)?;
    write_features(&paths.test_features, &dataset.test)?;
    write_attributes(&paths.attributes, &dataset.class_names, &dataset.attributes)?;
    write_split(
        &paths.split,
        &Split {
            seen: dataset.seen_classes.clone(),
            unseen: dataset.unseen_classes.clone(),
        },
    )
}
