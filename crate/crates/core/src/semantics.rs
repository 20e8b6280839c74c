//! Class-name text embeddings and semantic knowledge augmentation: the
//! generator condition becomes `[a_c + z_c, a_g]` with `z_c ~ N(0, γ²I)`.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::path::Path;

use crate::data::textfmt::{
    body_lines, check_name, load_err, parse_header, parse_row, parse_usize, push_row, read_text,
    write_text,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::RngStream;

/// Augmentation switch and noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkaConfig {
    pub enabled: bool,
    /// Standard deviation of the embedding noise.
    pub gamma: f64,
    /// Draw fresh noise for every generated row rather than once per class.
    pub resample_per_draw: bool,
}

impl Default for SkaConfig {
    fn default() -> Self {
        SkaConfig {
            enabled: true,
            gamma: 0.1,
            resample_per_draw: true,
        }
    }
}

impl SkaConfig {
    pub fn disabled() -> Self {
        SkaConfig {
            enabled: false,
            ..SkaConfig::default()
        }
    }
}

/// Class name → sentence embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    names: Vec<String>,
    vectors: Matrix<f32>,
    index: HashMap<String, usize>,
    source_tag: String,
}

impl EmbeddingTable {
    pub fn new(names: Vec<String>, vectors: Matrix<f32>, source_tag: &str) -> Result<Self> {
        if names.len() != vectors.rows() {
            return Err(Error::invalid(
                "one embedding row per class name is required",
            ));
        }
        if vectors.cols() == 0 {
            return Err(Error::invalid("embedding width must be positive"));
        }
        if !vectors.is_finite() {
            return Err(Error::invalid("embedding vectors must be finite"));
        }
        if source_tag.is_empty() || source_tag.contains(char::is_whitespace) {
            return Err(Error::invalid("source tag must be a non-empty word"));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            check_name(name)?;
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate class name `{name}`")));
            }
        }
        Ok(EmbeddingTable {
            names,
            vectors,
            index,
            source_tag: source_tag.to_string(),
        })
    }

    /// Deterministic pseudo-embeddings for the given names.
    pub fn pseudo(names: &[String], embed_dim: usize, seed: u64) -> Result<Self> {
        let rows = names
            .iter()
            .map(|n| pseudo_embedding(n, embed_dim, seed))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingTable::new(
            names.to_vec(),
            Matrix::from_rows(&rows)?,
            &format!("pseudo-{seed}"),
        )
    }

    pub fn embed_dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.index.get(name).map(|&i| self.vectors.row(i))
    }
}

/// `fzsl.embed v1 c=<C> d=<d_e> src=<tag>` then `<class_name>,<e1>,...` rows.
pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = parse_header(path, lines.next(), "fzsl.embed", &["c", "d", "src"])?;
    let c = parse_usize(path, 1, "c", &header[0])?;
    let d = parse_usize(path, 1, "d", &header[1])?;
    if d == 0 {
        return Err(load_err(path, 1, "embedding width must be positive"));
    }
    let body = body_lines(path, lines, c)?;
    let mut names: Vec<String> = Vec::with_capacity(c);
    let mut data = Vec::with_capacity(c * d);
    for (i, line) in body.iter().enumerate() {
        let (name, values) = parse_row(path, i + 2, line, d)?;
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
    EmbeddingTable::new(names, Matrix::from_vec(c, d, data)?, &header[2])
        .map_err(|e| load_err(path, 1, e.to_string()))
}

pub fn write_embedding_table(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut out = format!(
        "fzsl.embed v1 c={} d={} src={}\n",
        table.len(),
        table.embed_dim(),
        table.source_tag
    );
    for (name, row) in table.names.iter().zip(table.vectors.iter_rows()) {
        push_row(&mut out, name, row);
    }
    write_text(path, &out)
}

/// Unit-norm Gaussian direction derived from `(seed, class_name)`.
pub fn pseudo_embedding(class_name: &str, embed_dim: usize, seed: u64) -> Result<Vec<f32>> {
    if class_name.is_empty() {
        return Err(Error::invalid("class name must be non-empty"));
    }
    if embed_dim == 0 {
        return Err(Error::invalid("embedding width must be positive"));
    }
    let mut rng = RngStream::from_seed(seed, &format!("pseudo-embedding:{class_name}"));
    let raw: Vec<f64> = rng.normals(embed_dim);
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(raw.iter().map(|v| (v / norm) as f32).collect())
}

/// `[a_c + z_c, a_g]` with `z_c ~ N(0, γ²I)` drawn from `rng`. With γ = 0 the
/// result is the plain concatenation and no randomness is consumed.
pub fn augment_attribute(
    a_c: &[f32],
    a_g: &[f32],
    ska: &SkaConfig,
    rng: &mut RngStream,
) -> Result<Vec<f32>> {
    if !ska.enabled {
        return Err(Error::invalid("augmentation requested while disabled"));
    }
    if !(ska.gamma >= 0.0 && ska.gamma.is_finite()) {
        return Err(Error::invalid(format!(
            "gamma must be >= 0, got {}",
            ska.gamma
        )));
    }
    let gamma = ska.gamma as f32;
    let mut out = Vec::with_capacity(a_c.len() + a_g.len());
    if gamma == 0.0 {
        out.extend_from_slice(a_c);
    } else {
        out.extend(a_c.iter().map(|&v| v + gamma * rng.normal::<f32>()));
    }
    out.extend_from_slice(a_g);
    Ok(out)
}

/// Builds generator conditions for batches of labels.
///
/// Without augmentation the condition is the class attribute row; with it,
/// the augmented `[a_c + z_c, a_g]`.
#[derive(Debug, Clone)]
pub struct Conditioner<'a> {
    attributes: &'a Matrix<f32>,
    embeddings: Vec<Option<&'a [f32]>>,
    embed_dim: usize,
    ska: SkaConfig,
}

impl<'a> Conditioner<'a> {
    /// `required` lists the classes that will be conditioned on; with
    /// augmentation on, each must have an embedding of the right width.
    pub fn new(
        dataset: &'a Dataset,
        table: Option<&'a EmbeddingTable>,
        ska: SkaConfig,
        required: &[usize],
    ) -> Result<Self> {
        if !ska.enabled {
            return Ok(Conditioner {
                attributes: &dataset.attributes,
                embeddings: Vec::new(),
                embed_dim: 0,
                ska,
            });
        }
        let table = table.ok_or_else(|| {
            Error::invalid("semantic augmentation is enabled but no embedding table was given")
        })?;
        let embeddings: Vec<Option<&[f32]>> =
            dataset.class_names.iter().map(|n| table.get(n)).collect();
        for &c in required {
            if embeddings.get(c).copied().flatten().is_none() {
                return Err(Error::invalid(format!(
                    "no embedding for class `{}`",
                    dataset.class_names.get(c).map_or("?", String::as_str)
                )));
            }
        }
        Ok(Conditioner {
            attributes: &dataset.attributes,
            embeddings,
            embed_dim: table.embed_dim(),
            ska,
        })
    }

    pub fn condition_dim(&self) -> usize {
        self.attributes.cols() + if self.ska.enabled { self.embed_dim } else { 0 }
    }

    pub fn ska(&self) -> &SkaConfig {
        &self.ska
    }

    pub fn conditions(&self, labels: &[usize], rng: &mut RngStream) -> Result<Matrix<f32>> {
        if !self.ska.enabled {
            return Ok(self.attributes.select_rows(labels));
        }
        let mut per_class: HashMap<usize, Vec<f32>> = HashMap::new();
        let mut data = Vec::with_capacity(labels.len() * self.condition_dim());
        for &label in labels {
            let a_c = self
                .embeddings
                .get(label)
                .copied()
                .flatten()
                .ok_or_else(|| Error::invalid(format!("no embedding for class {label}")))?;
            let a_g = self.attributes.row(label);
            if self.ska.resample_per_draw {
                data.extend(augment_attribute(a_c, a_g, &self.ska, rng)?);
            } else {
                if let Entry::Vacant(slot) = per_class.entry(label) {
                    slot.insert(augment_attribute(a_c, a_g, &self.ska, rng)?);
                }
                data.extend_from_slice(&per_class[&label]);
            }
        }
        Matrix::from_vec(labels.len(), self.condition_dim(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gamma_is_plain_concatenation() {
        let ska = SkaConfig {
            gamma: 0.0,
            ..SkaConfig::default()
        };
        let mut rng = RngStream::from_seed(1, "ska");
        let out = augment_attribute(&[1.0, 2.0], &[3.0], &ska, &mut rng).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0]);
        // No randomness consumed.
        let mut fresh = RngStream::from_seed(1, "ska");
        assert_eq!(rng.next_u64(), fresh.next_u64());
    }

    #[test]
    fn noisy_draws_differ_and_keep_the_attribute_block() {
        let ska = SkaConfig::default();
        let mut rng = RngStream::from_seed(2, "ska");
        let a = augment_attribute(&[0.5; 4], &[1.0, 0.0], &ska, &mut rng).unwrap();
        let b = augment_attribute(&[0.5; 4], &[1.0, 0.0], &ska, &mut rng).unwrap();
        assert_ne!(a, b);
        assert_eq!(&a[4..], &[1.0, 0.0]);
        assert_eq!(&b[4..], &[1.0, 0.0]);
    }

    #[test]
    fn disabled_or_negative_gamma_is_rejected() {
        let mut rng = RngStream::from_seed(2, "ska");
        assert!(augment_attribute(&[1.0], &[1.0], &SkaConfig::disabled(), &mut rng).is_err());
        let bad = SkaConfig {
            gamma: -0.1,
            ..SkaConfig::default()
        };
        assert!(augment_attribute(&[1.0], &[1.0], &bad, &mut rng).is_err());
    }

    #[test]
    fn pseudo_embeddings_are_unit_and_stable() {
        let a = pseudo_embedding("zebra", 32, 7).unwrap();
        let b = pseudo_embedding("zebra", 32, 7).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(pseudo_embedding("", 8, 0).is_err());
        assert!(pseudo_embedding("x", 0, 0).is_err());
    }

    #[test]
    fn pseudo_embeddings_of_distinct_names_are_nearly_orthogonal() {
        let mut rng = RngStream::from_seed(99, "names");
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let a = format!("name{}", rng.next_u64());
            let b = format!("name{}", rng.next_u64());
            let ea = pseudo_embedding(&a, 64, 3).unwrap();
            let eb = pseudo_embedding(&b, 64, 3).unwrap();
            let cos: f64 = ea
                .iter()
                .zip(&eb)
                .map(|(x, y)| f64::from(*x) * f64::from(*y))
                .sum();
            worst = worst.max(cos.abs());
        }
        assert!(worst < 0.5, "max |cos| = {worst}");
    }

    #[test]
    fn table_rejects_duplicates() {
        let m = Matrix::from_rows(&[vec![1.0f32], vec![2.0]]).unwrap();
        assert!(EmbeddingTable::new(vec!["a".into(), "a".into()], m, "t").is_err());
    }

    #[test]
    fn file_round_trip_and_ragged_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = ["ant", "bee", "cat", "dog", "eel"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let table = EmbeddingTable::pseudo(&names, 8, 11).unwrap();
        let path = dir.path().join("e.embed");
        write_embedding_table(&path, &table).unwrap();
        let back = load_embedding_table(&path).unwrap();
        assert_eq!(back.embed_dim(), 8);
        assert_eq!(back, table);

        std::fs::write(&path, "fzsl.embed v1 c=2 d=2 src=x\na,1,2\nb,1\n").unwrap();
        assert!(matches!(
            load_embedding_table(&path),
            Err(Error::Load { line: 3, .. })
        ));
        std::fs::write(&path, "fzsl.embed v1 c=2 d=1 src=x\na,1\na,2\n").unwrap();
        assert!(matches!(
            load_embedding_table(&path),
            Err(Error::Load { line: 3, .. })
        ));
    }
}
