//! Checkpoints: a `fzsl.ckpt v1` metadata text file next to a little-endian
//! `f32` blob. Blob order, per model: generator (layer1 W, layer1 b, layer2 W,
//! layer2 b) then discriminator likewise; clients in id order, then global.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::textfmt::{load_err, parse_usize, read_text};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::numerics::{
    GanArch, GanModel, HiddenActivation, Matrix, MlpDims, MlpParams, OutputActivation, ParamSet,
};

use super::config::FedConfig;

const MAGIC: &str = "fzsl.ckpt v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Rounds completed when the checkpoint was taken.
    pub round: usize,
    pub config: FedConfig,
    pub arch: GanArch,
    /// Client models in id order.
    pub clients: Vec<GanModel>,
    pub global: GanModel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointPaths {
    pub meta: PathBuf,
    pub blob: PathBuf,
}

impl CheckpointPaths {
    /// `model.ckpt` and `model.bin` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        CheckpointPaths {
            meta: dir.join("model.ckpt"),
            blob: dir.join("model.bin"),
        }
    }
}

fn encode<'a>(models: impl Iterator<Item = (&'a MlpParams, &'a MlpParams)>) -> Vec<u8> {
    let mut out = Vec::new();
    for m in models {
        for t in m.0.tensors().into_iter().chain(m.1.tensors()) {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Write to a sibling temporary file and rename, so a failed write never
/// clobbers the previous checkpoint.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_checkpoint(paths: &CheckpointPaths, ckpt: &Checkpoint) -> Result<()> {
    for m in ckpt.clients.iter().chain(std::iter::once(&ckpt.global)) {
        if m.arch != ckpt.arch {
            return Err(Error::invalid("checkpoint models disagree on architecture"));
        }
    }
    let blob = encode(
        ckpt.clients
            .iter()
            .chain(std::iter::once(&ckpt.global))
            .map(|m| (&m.generator, &m.discriminator)),
    );
    let a = &ckpt.arch;
    let blob_name = paths
        .blob
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid("blob path needs a UTF-8 file name"))?;
    let mut meta = String::new();
    let mut kv =
        |k: &str, v: &dyn std::fmt::Display| writeln!(meta, "{k} = {v}").expect("string write");
    kv("round", &ckpt.round);
    kv("clients", &ckpt.clients.len());
    kv("feature_dim", &a.feature_dim);
    kv("attr_dim", &a.attr_dim);
    kv("condition_dim", &a.condition_dim);
    kv("noise_dim", &a.noise_dim);
    kv("hidden_dim", &a.hidden_dim);
    kv("blob", &blob_name);
    kv("blob_sha256", &sha256_hex(&blob));
    kv("config_sha256", &ckpt.config.digest());
    let text = format!(
        "{MAGIC}\n{meta}[config]\n{}",
        ckpt.config.canonical().to_text()
    );
    write_atomic(&paths.blob, &blob)?;
    write_atomic(&paths.meta, text.as_bytes())
}

fn take_mlp(
    data: &mut &[f32],
    dims: MlpDims,
    output_activation: OutputActivation,
) -> Result<MlpParams> {
    let mut take = |n: usize| {
        let (head, rest) = data.split_at(n);
        *data = rest;
        head.to_vec()
    };
    Ok(MlpParams {
        layer1_weights: Matrix::from_vec(dims.hidden, dims.input, take(dims.hidden * dims.input))?,
        layer1_bias: take(dims.hidden),
        layer2_weights: Matrix::from_vec(
            dims.output,
            dims.hidden,
            take(dims.output * dims.hidden),
        )?,
        layer2_bias: take(dims.output),
        hidden_activation: HiddenActivation::LeakyRelu(0.2),
        output_activation,
    })
}

/// Read and verify a checkpoint. Any mismatch between the metadata digests
/// and the blob or echoed config is an integrity error.
pub fn read_checkpoint(meta_path: &Path) -> Result<Checkpoint> {
    let text = read_text(meta_path)?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(load_err(meta_path, 1, format!("expected header `{MAGIC}`")));
    }
    let mut fields: Vec<(String, String)> = Vec::new();
    let mut config_start = None;
    for (i, line) in lines.by_ref().enumerate() {
        let line_no = i + 2;
        if line == "[config]" {
            config_start = Some(line_no + 1);
            break;
        }
        let (k, v) = line.split_once(" = ").ok_or_else(|| {
            load_err(
                meta_path,
                line_no,
                format!("expected `key = value`, found `{line}`"),
            )
        })?;
        fields.push((k.to_string(), v.to_string()));
    }
    let config_start =
        config_start.ok_or_else(|| load_err(meta_path, 0, "missing `[config]` section"))?;
    let config_text: String = lines.map(|l| format!("{l}\n")).collect();
    let config = FedConfig::parse(&config_text, meta_path).map_err(|e| match e {
        Error::Load {
            path,
            line,
            message,
        } if line > 0 => Error::Load {
            path,
            line: line + config_start - 1,
            message,
        },
        other => other,
    })?;

    let get = |key: &str| -> Result<&str> {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| load_err(meta_path, 0, format!("missing `{key}`")))
    };
    let num = |key: &str| -> Result<usize> { parse_usize(meta_path, 0, key, get(key)?) };
    let arch = GanArch {
        feature_dim: num("feature_dim")?,
        attr_dim: num("attr_dim")?,
        condition_dim: num("condition_dim")?,
        noise_dim: num("noise_dim")?,
        hidden_dim: num("hidden_dim")?,
    };
    if [
        arch.feature_dim,
        arch.attr_dim,
        arch.condition_dim,
        arch.noise_dim,
        arch.hidden_dim,
    ]
    .contains(&0)
    {
        return Err(load_err(
            meta_path,
            0,
            "architecture widths must be positive",
        ));
    }
    let round = num("round")?;
    let client_count = num("clients")?;
    if config.digest() != get("config_sha256")? {
        return Err(Error::Integrity(format!(
            "{}: config section does not match its recorded digest",
            meta_path.display()
        )));
    }

    let blob_name = get("blob")?;
    if blob_name.contains('/') || blob_name.contains('\\') {
        return Err(load_err(
            meta_path,
            0,
            "blob must name a file beside the metadata",
        ));
    }
    let blob_path = meta_path.with_file_name(blob_name);
    let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if sha256_hex(&bytes) != get("blob_sha256")? {
        return Err(Error::Integrity(format!(
            "{} does not match the digest recorded in {}",
            blob_path.display(),
            meta_path.display()
        )));
    }
    let per_model = arch.generator_param_count() + arch.discriminator_param_count();
    let expected = per_model * (client_count + 1) * 4;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!(
            "{} holds {} bytes, expected {expected}",
            blob_path.display(),
            bytes.len()
        )));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut rest = floats.as_slice();
    let mut models = Vec::with_capacity(client_count + 1);
    for _ in 0..=client_count {
        let g = take_mlp(&mut rest, arch.generator_dims(), OutputActivation::Relu)?;
        let d = take_mlp(&mut rest, arch.discriminator_dims(), OutputActivation::None)?;
        if !g.all_finite() || !d.all_finite() {
            return Err(Error::Integrity(
                "non-finite parameter in checkpoint".into(),
            ));
        }
        models.push(GanModel::from_parts(arch, g, d)?);
    }
    let global = models.pop().expect("at least the global model");
    Ok(Checkpoint {
        round,
        config,
        arch,
        clients: models,
        global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn sample() -> Checkpoint {
        let arch = GanArch {
            feature_dim: 5,
            attr_dim: 3,
            condition_dim: 3,
            noise_dim: 2,
            hidden_dim: 4,
        };
        let mut rng = RngStream::from_seed(9, "ckpt");
        let clients = (0..2)
            .map(|_| GanModel::init(arch, &mut rng).unwrap())
            .collect();
        Checkpoint {
            round: 3,
            config: FedConfig::desk(),
            arch,
            clients,
            global: GanModel::init(arch, &mut rng).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let paths = CheckpointPaths::in_dir(dir.path());
        let ckpt = sample();
        write_checkpoint(&paths, &ckpt).unwrap();
        assert_eq!(read_checkpoint(&paths.meta).unwrap(), ckpt);
    }

    #[test]
    fn flipped_blob_byte_fails_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let paths = CheckpointPaths::in_dir(dir.path());
        write_checkpoint(&paths, &sample()).unwrap();
        let mut bytes = std::fs::read(&paths.blob).unwrap();
        bytes[17] ^= 0x40;
        std::fs::write(&paths.blob, bytes).unwrap();
        assert!(matches!(
            read_checkpoint(&paths.meta),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn edited_config_fails_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let paths = CheckpointPaths::in_dir(dir.path());
        write_checkpoint(&paths, &sample()).unwrap();
        let text = std::fs::read_to_string(&paths.meta).unwrap();
        std::fs::write(&paths.meta, text.replace("rounds = 30", "rounds = 31")).unwrap();
        assert!(matches!(
            read_checkpoint(&paths.meta),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn rewrite_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let paths = CheckpointPaths::in_dir(dir.path());
        write_checkpoint(&paths, &sample()).unwrap();
        write_checkpoint(&paths, &sample()).unwrap();
        let names: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), 2, "{names:?}");
    }
}
