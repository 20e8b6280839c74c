use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::Dataset;

/// One client's share of the seen classes and the training rows they own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientPartition {
    pub client_id: usize,
    /// Ascending global class ids.
    pub class_subset: Vec<usize>,
    /// Ascending indices into `Dataset::train`.
    pub row_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Even,
    Uneven,
}

impl SplitKind {
    pub fn partition(
        self,
        dataset: &Dataset,
        clients: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<ClientPartition>> {
        match self {
            SplitKind::Even => partition_even(dataset, clients, rng),
            SplitKind::Uneven => partition_uneven(dataset, clients, rng),
        }
    }
}

fn build(dataset: &Dataset, subsets: Vec<Vec<usize>>) -> Vec<ClientPartition> {
    subsets
        .into_iter()
        .enumerate()
        .map(|(client_id, mut class_subset)| {
            class_subset.sort_unstable();
            let row_indices = (0..dataset.train.len())
                .filter(|&i| class_subset.binary_search(&dataset.train.labels[i]).is_ok())
                .collect();
            ClientPartition {
                client_id,
                class_subset,
                row_indices,
            }
        })
        .collect()
}

fn check_clients(dataset: &Dataset, clients: usize) -> Result<usize> {
    let k = dataset.seen_classes.len();
    if clients == 0 || clients > k {
        return Err(Error::invalid(format!(
            "cannot split {k} seen classes over {clients} clients"
        )));
    }
    Ok(k)
}

/// Shuffle the seen classes and deal them round-robin; sizes differ by at
/// most one and every row follows its class.
pub fn partition_even(
    dataset: &Dataset,
    clients: usize,
    rng: &mut RngStream,
) -> Result<Vec<ClientPartition>> {
    check_clients(dataset, clients)?;
    let mut classes = dataset.seen_classes.clone();
    rng.shuffle(&mut classes);
    let mut subsets = vec![Vec::new(); clients];
    for (i, c) in classes.into_iter().enumerate() {
        subsets[i % clients].push(c);
    }
    Ok(build(dataset, subsets))
}

/// Random class split where every client owns at least `ceil(K/8)` of the K
/// seen classes.
///
/// Sizes are a uniformly random composition of K into `clients` parts that
/// respects the floor, drawn exactly through the bijection with unrestricted
/// compositions of `K - clients·(floor-1)`.
pub fn partition_uneven(
    dataset: &Dataset,
    clients: usize,
    rng: &mut RngStream,
) -> Result<Vec<ClientPartition>> {
    let k = check_clients(dataset, clients)?;
    let floor = k.div_ceil(8);
    if clients * floor > k {
        return Err(Error::invalid(format!(
            "{clients} clients with at least {floor} classes each need {} seen classes, have {k}",
            clients * floor
        )));
    }
    let reduced = k - clients * (floor - 1);
    let cuts = rng.sample_indices(reduced - 1, clients - 1);
    let mut sizes = Vec::with_capacity(clients);
    let mut prev = 0;
    for c in cuts.iter().map(|c| c + 1).chain(std::iter::once(reduced)) {
        sizes.push(c - prev + floor - 1);
        prev = c;
    }
    let mut classes = dataset.seen_classes.clone();
    rng.shuffle(&mut classes);
    let mut subsets = Vec::with_capacity(clients);
    let mut start = 0;
    for s in sizes {
        subsets.push(classes[start..start + s].to_vec());
        start += s;
    }
    Ok(build(dataset, subsets))
}

/// Check disjointness, coverage of the seen set, and row membership.
pub fn validate_partitions(partitions: &[ClientPartition], dataset: &Dataset) -> Result<()> {
    let mut union = BTreeSet::new();
    for (i, p) in partitions.iter().enumerate() {
        if p.client_id != i {
            return Err(Error::invalid(format!(
                "partition {i} carries client id {}",
                p.client_id
            )));
        }
        for &c in &p.class_subset {
            if !dataset.is_seen(c) {
                return Err(Error::invalid(format!(
                    "client {i} owns non-seen class {c}"
                )));
            }
            if !union.insert(c) {
                return Err(Error::invalid(format!("class {c} is owned by two clients")));
            }
        }
        for &r in &p.row_indices {
            let label = *dataset
                .train
                .labels
                .get(r)
                .ok_or_else(|| Error::invalid(format!("client {i} row {r} out of range")))?;
            if p.class_subset.binary_search(&label).is_err() {
                return Err(Error::invalid(format!(
                    "client {i} holds row {r} of foreign class {label}"
                )));
            }
        }
    }
    if union.len() != dataset.seen_classes.len() {
        return Err(Error::invalid("partitions do not cover every seen class"));
    }
    let owned: usize = partitions.iter().map(|p| p.row_indices.len()).sum();
    if owned != dataset.train.len() {
        return Err(Error::invalid("partitions do not own every training row"));
    }
    Ok(())
}
