use crate::error::{Error, Result};

use super::{ClientPartition, Dataset};

/// Mean pairwise two-sample Kolmogorov–Smirnov statistic between the
/// clients' label distributions.
///
/// Class labels are categorical, so the statistic is taken as the supremum
/// of the CDF gap over all orderings of the classes. That supremum is the sum
/// of the positive parts of `p_c - q_c`: it is 1 exactly when two clients
/// share no class, 0 when their distributions coincide, and it does not
/// depend on how classes are numbered. Counts are compared as exact integers.
pub fn partition_skew(partitions: &[ClientPartition], dataset: &Dataset) -> Result<f64> {
    if partitions.len() < 2 {
        return Err(Error::invalid("label skew needs at least two partitions"));
    }
    let classes = dataset.num_classes();
    let histograms = partitions
        .iter()
        .map(|p| {
            let mut h = vec![0u64; classes];
            for &r in &p.row_indices {
                h[dataset.train.labels[r]] += 1;
            }
            let total: u64 = h.iter().sum();
            if total == 0 {
                return Err(Error::invalid(format!(
                    "client {} owns no rows; its label distribution is undefined",
                    p.client_id
                )));
            }
            Ok((h, total))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sum = 0.0f64;
    let mut pairs = 0u64;
    for i in 0..histograms.len() {
        for j in i + 1..histograms.len() {
            sum += ks_statistic(&histograms[i], &histograms[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

fn ks_statistic((a, total_a): &(Vec<u64>, u64), (b, total_b): &(Vec<u64>, u64)) -> f64 {
    // p_c - q_c = (a_c·B - b_c·A) / (A·B)
    let (ta, tb) = (*total_a as u128, *total_b as u128);
    let positive: u128 = a
        .iter()
        .zip(b)
        .map(|(&ac, &bc)| (ac as u128 * tb).saturating_sub(bc as u128 * ta))
        .sum();
    positive as f64 / (ta * tb) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, partition_even, SyntheticSpec};
    use crate::rng::RngStream;

    fn dataset() -> Dataset {
        let spec = SyntheticSpec {
            seen_count: 12,
            unseen_count: 2,
            attr_dim: 3,
            feature_dim: 4,
            rows_per_class: 3,
            noise_scale: 0.1,
        };
        make_synthetic(&spec, &mut RngStream::from_seed(0, "data")).unwrap()
    }

    fn rows_of(ds: &Dataset, classes: &[usize]) -> Vec<usize> {
        (0..ds.train.len())
            .filter(|&i| classes.contains(&ds.train.labels[i]))
            .collect()
    }

    fn client(id: usize, ds: &Dataset, classes: &[usize]) -> ClientPartition {
        ClientPartition {
            client_id: id,
            class_subset: classes.to_vec(),
            row_indices: rows_of(ds, classes),
        }
    }

    #[test]
    fn disjoint_partitions_score_exactly_one() {
        let ds = dataset();
        for seed in 0..20 {
            let parts = partition_even(&ds, 4, &mut RngStream::from_seed(seed, "p")).unwrap();
            assert_eq!(partition_skew(&parts, &ds).unwrap(), 1.0);
        }
    }

    #[test]
    fn identical_clients_score_zero() {
        let ds = dataset();
        let a = client(0, &ds, &[0, 1, 2]);
        let b = client(1, &ds, &[0, 1, 2]);
        assert_eq!(partition_skew(&[a, b], &ds).unwrap(), 0.0);
    }

    #[test]
    fn nested_support_scores_one_half() {
        // A = {0}, B = {0, 1} with equal row counts per class.
        let ds = dataset();
        let a = client(0, &ds, &[0]);
        let b = client(1, &ds, &[0, 1]);
        assert_eq!(partition_skew(&[a, b], &ds).unwrap(), 0.5);
    }

    #[test]
    fn single_partition_is_invalid() {
        let ds = dataset();
        assert!(partition_skew(&[client(0, &ds, &[0])], &ds).is_err());
    }

    #[test]
    fn symmetric_in_client_order() {
        let ds = dataset();
        let a = client(0, &ds, &[0, 1, 5]);
        let b = client(1, &ds, &[1, 2]);
        let c = client(2, &ds, &[5, 7, 8, 9]);
        let fwd = partition_skew(&[a.clone(), b.clone(), c.clone()], &ds).unwrap();
        let rev = partition_skew(&[c, b, a], &ds).unwrap();
        assert_eq!(fwd, rev);
    }
}
