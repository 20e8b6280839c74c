//! Server side of the protocol. Every function here takes parameter bundles
//! and nothing else: no feature rows, labels or datasets cross this boundary.

use crate::error::{Error, Result};
use crate::numerics::{GanModel, MlpParams, ParamSet};
use crate::rng::{derive_rng, Party};

use super::config::AggregationMode;

/// What one client sends after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub client_id: usize,
    pub generator: MlpParams,
    /// Present only in holistic mode.
    pub discriminator: Option<MlpParams>,
}

impl Upload {
    pub fn num_params(&self) -> usize {
        self.generator.num_params() + self.discriminator.as_ref().map_or(0, |d| d.num_params())
    }
}

/// What the server sends back to every client.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalUpdate {
    pub generator: MlpParams,
    pub discriminator: Option<MlpParams>,
}

impl GlobalUpdate {
    pub fn mode(&self) -> AggregationMode {
        if self.discriminator.is_some() {
            AggregationMode::Holistic
        } else {
            AggregationMode::GeneratorOnly
        }
    }

    pub fn num_params(&self) -> usize {
        self.generator.num_params() + self.discriminator.as_ref().map_or(0, |d| d.num_params())
    }
}

/// `size = max(1, round(N·S))` distinct clients, uniformly at random, in
/// ascending order. The draw depends only on `(global_seed, round)`.
pub fn select_clients(
    num_clients: usize,
    fraction: f64,
    round: u64,
    global_seed: u64,
) -> Vec<usize> {
    let size = ((num_clients as f64 * fraction).round() as usize).clamp(1, num_clients.max(1));
    let mut rng = derive_rng(global_seed, round, Party::Server, "select");
    rng.sample_indices(num_clients, size)
}

/// Coordinate-wise mean, summed in ascending client order with an `f64`
/// accumulator and rounded once.
fn mean_params(bundles: &[&MlpParams]) -> Result<MlpParams> {
    let first = bundles[0];
    if bundles.iter().any(|b| !b.same_shape(first)) {
        return Err(Error::invalid("uploads have mismatched architectures"));
    }
    let count = bundles.len() as f64;
    let views: Vec<Vec<&[f32]>> = bundles.iter().map(|b| b.tensors()).collect();
    let mut out = first.clone();
    for (t, dst) in out.tensors_mut().into_iter().enumerate() {
        for (i, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for view in &views {
                acc += f64::from(view[t][i]);
            }
            *d = (acc / count) as f32;
        }
    }
    Ok(out)
}

/// Unweighted mean over the selected uploads: the full generator and
/// discriminator in holistic mode, the generator alone otherwise.
pub fn aggregate(uploads: &[Upload], mode: AggregationMode) -> Result<GlobalUpdate> {
    if uploads.is_empty() {
        return Err(Error::invalid("nothing to aggregate"));
    }
    let mut ordered: Vec<&Upload> = uploads.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    if ordered.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::invalid("two uploads from the same client"));
    }
    let generators: Vec<&MlpParams> = ordered.iter().map(|u| &u.generator).collect();
    let generator = mean_params(&generators)?;
    let discriminator = match mode {
        AggregationMode::GeneratorOnly => None,
        AggregationMode::Holistic => {
            let ds = ordered
                .iter()
                .map(|u| {
                    u.discriminator.as_ref().ok_or_else(|| {
                        Error::invalid(format!(
                            "client {} sent no discriminator in holistic mode",
                            u.client_id
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(mean_params(&ds)?)
        }
    };
    Ok(GlobalUpdate {
        generator,
        discriminator,
    })
}

/// Reinitialise every client model from the update: the generator always,
/// the discriminator only in holistic mode.
pub fn broadcast<'a>(
    update: &GlobalUpdate,
    mode: AggregationMode,
    models: impl IntoIterator<Item = &'a mut GanModel>,
) -> Result<()> {
    if update.mode() != mode {
        return Err(Error::invalid(format!(
            "{} payload broadcast in {} mode",
            update.mode().as_str(),
            mode.as_str()
        )));
    }
    for model in models {
        if !model.generator.same_shape(&update.generator) {
            return Err(Error::invalid("broadcast generator shape mismatch"));
        }
        model.generator.clone_from(&update.generator);
        if let Some(d) = &update.discriminator {
            if !model.discriminator.same_shape(d) {
                return Err(Error::invalid("broadcast discriminator shape mismatch"));
            }
            model.discriminator.clone_from(d);
        }
    }
    Ok(())
}

/// Parameters moved in one round: uploads from the selected clients plus the
/// broadcast to all `num_clients`.
pub fn round_traffic(uploads: &[Upload], update: &GlobalUpdate, num_clients: usize) -> usize {
    uploads.iter().map(Upload::num_params).sum::<usize>() + num_clients * update.num_params()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::GanArch;
    use crate::rng::RngStream;

    fn arch() -> GanArch {
        GanArch {
            feature_dim: 5,
            attr_dim: 3,
            condition_dim: 3,
            noise_dim: 3,
            hidden_dim: 4,
        }
    }

    fn model(seed: u64) -> GanModel {
        GanModel::init(arch(), &mut RngStream::from_seed(seed, "m")).unwrap()
    }

    fn upload(id: usize, m: &GanModel, mode: AggregationMode) -> Upload {
        Upload {
            client_id: id,
            generator: m.generator.clone(),
            discriminator: (mode == AggregationMode::Holistic).then(|| m.discriminator.clone()),
        }
    }

    #[test]
    fn full_fraction_selects_everyone() {
        for round in 0..20 {
            assert_eq!(select_clients(4, 1.0, round, 9), vec![0, 1, 2, 3]);
        }
        assert_eq!(select_clients(4, 0.5, 3, 9).len(), 2);
    }

    #[test]
    fn selection_is_uniform() {
        let mut hits = [0usize; 4];
        let rounds = 10_000;
        for round in 0..rounds {
            for c in select_clients(4, 0.5, round, 17) {
                hits[c] += 1;
            }
        }
        for h in hits {
            let frac = h as f64 / rounds as f64;
            assert!((frac - 0.5).abs() < 0.02, "{hits:?}");
        }
    }

    #[test]
    fn mean_of_one_is_the_client() {
        let m = model(1);
        let update = aggregate(
            &[upload(2, &m, AggregationMode::Holistic)],
            AggregationMode::Holistic,
        )
        .unwrap();
        assert_eq!(update.generator, m.generator);
        assert_eq!(update.discriminator.as_ref(), Some(&m.discriminator));
    }

    #[test]
    fn opposite_models_cancel() {
        let m = model(2);
        let mut neg = m.clone();
        for t in neg
            .generator
            .tensors_mut()
            .into_iter()
            .chain(neg.discriminator.tensors_mut())
        {
            t.iter_mut().for_each(|v| *v = -*v);
        }
        let update = aggregate(
            &[
                upload(0, &m, AggregationMode::Holistic),
                upload(1, &neg, AggregationMode::Holistic),
            ],
            AggregationMode::Holistic,
        )
        .unwrap();
        for t in update
            .generator
            .tensors()
            .into_iter()
            .chain(update.discriminator.as_ref().unwrap().tensors())
        {
            assert!(t.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn generator_only_broadcast_keeps_discriminators() {
        let mut clients = [model(1), model(2)];
        let ds: Vec<_> = clients.iter().map(|m| m.discriminator.clone()).collect();
        let ups: Vec<_> = clients
            .iter()
            .enumerate()
            .map(|(i, m)| upload(i, m, AggregationMode::GeneratorOnly))
            .collect();
        let update = aggregate(&ups, AggregationMode::GeneratorOnly).unwrap();
        broadcast(&update, AggregationMode::GeneratorOnly, clients.iter_mut()).unwrap();
        for (m, d) in clients.iter().zip(&ds) {
            assert_eq!(&m.discriminator, d);
            assert_eq!(m.generator, update.generator);
        }
    }

    #[test]
    fn holistic_broadcast_is_idempotent() {
        let mut clients = vec![model(1), model(2), model(3)];
        let ups: Vec<_> = clients
            .iter()
            .enumerate()
            .map(|(i, m)| upload(i, m, AggregationMode::Holistic))
            .collect();
        let update = aggregate(&ups, AggregationMode::Holistic).unwrap();
        broadcast(&update, AggregationMode::Holistic, clients.iter_mut()).unwrap();
        let once = clients.clone();
        broadcast(&update, AggregationMode::Holistic, clients.iter_mut()).unwrap();
        assert_eq!(once, clients);
        for m in &clients {
            assert_eq!(m.generator, update.generator);
            assert_eq!(Some(&m.discriminator), update.discriminator.as_ref());
        }
    }

    #[test]
    fn mode_mismatch_and_shape_mismatch_are_rejected() {
        let m = model(1);
        let update = aggregate(
            &[upload(0, &m, AggregationMode::GeneratorOnly)],
            AggregationMode::GeneratorOnly,
        )
        .unwrap();
        let mut target = [m.clone()];
        assert!(broadcast(&update, AggregationMode::Holistic, target.iter_mut()).is_err());

        let other = GanModel::init(
            GanArch {
                hidden_dim: 7,
                ..arch()
            },
            &mut RngStream::from_seed(0, "x"),
        )
        .unwrap();
        let ups = [
            upload(0, &m, AggregationMode::GeneratorOnly),
            upload(1, &other, AggregationMode::GeneratorOnly),
        ];
        assert!(aggregate(&ups, AggregationMode::GeneratorOnly).is_err());
        assert!(aggregate(
            &[upload(0, &m, AggregationMode::GeneratorOnly)],
            AggregationMode::Holistic
        )
        .is_err());
    }

    #[test]
    fn generator_only_moves_fewer_parameters() {
        let m = model(1);
        let hol = aggregate(
            &[upload(0, &m, AggregationMode::Holistic)],
            AggregationMode::Holistic,
        )
        .unwrap();
        let gen = aggregate(
            &[upload(0, &m, AggregationMode::GeneratorOnly)],
            AggregationMode::GeneratorOnly,
        )
        .unwrap();
        assert!(gen.num_params() < hol.num_params());
    }
}
