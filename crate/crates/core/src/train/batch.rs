//! Train/test splitting and per-epoch batch construction.

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::signal::Dataset;
use crate::{Error, Result};

/// Index sets of one train/test split, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-label split (unlabeled samples form their own group); each group
/// contributes `round(fraction * n)` samples to training.
pub fn stratified_split<R: Rng + ?Sized>(
    dataset: &Dataset,
    train_fraction: f64,
    rng: &mut R,
) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes + 1];
    for (i, s) in dataset.samples.iter().enumerate() {
        groups[s.label.unwrap_or(dataset.num_classes)].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut g in groups {
        g.shuffle(rng);
        let k = (train_fraction * g.len() as f64).round() as usize;
        train.extend_from_slice(&g[..k]);
        test.extend_from_slice(&g[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Hex SHA-256 over the index lists of several splits.
pub fn split_hash(splits: &[&Split]) -> String {
    let mut h = Sha256::new();
    for s in splits {
        h.update(b"train");
        for i in &s.train {
            h.update((*i as u64).to_le_bytes());
        }
        h.update(b"test");
        for i in &s.test {
            h.update((*i as u64).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn subset(dataset: &Dataset, indices: &[usize]) -> Dataset {
    Dataset {
        samples: indices.iter().map(|&i| dataset.samples[i].clone()).collect(),
        num_classes: dataset.num_classes,
    }
}

/// Paired batches per epoch: `floor(min(N_s, N_t) / B)`.
pub fn iterations(n_s: usize, n_t: usize, batch: usize) -> Result<usize> {
    if batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if batch > n_s || batch > n_t {
        return Err(Error::Config(format!(
            "batch size {batch} exceeds training counts (source {n_s}, target {n_t})"
        )));
    }
    Ok(n_s.min(n_t) / batch)
}

/// One epoch of `(source indices, target indices)` batches.
///
/// Source batches are class-stratified: class `c` gets `floor(B·p_c)` or
/// one more, the extra slots going to the classes whose running deficit is
/// largest (ties broken by a fresh random priority each epoch). Each class
/// is drawn from its own shuffled queue, wrapping around when exhausted.
/// Target batches are consecutive chunks of a random permutation; target
/// labels are never read.
pub fn make_batches<R: Rng + ?Sized>(
    source: &Dataset,
    target: &Dataset,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Config("training sets must be non-empty".into()));
    }
    let iters = iterations(source.len(), target.len(), batch)?;

    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); source.num_classes];
    for (i, s) in source.samples.iter().enumerate() {
        let y = s
            .label
            .ok_or_else(|| Error::Label(format!("source sample {i} has no label")))?;
        queues[y].push(i);
    }
    for q in &mut queues {
        q.shuffle(rng);
    }
    let mut priority: Vec<usize> = (0..queues.len()).collect();
    priority.shuffle(rng);

    let n_s = source.len() as f64;
    let expected: Vec<f64> = queues
        .iter()
        .map(|q| batch as f64 * q.len() as f64 / n_s)
        .collect();
    let mut deficit = vec![0.0; queues.len()];
    let mut cursor = vec![0usize; queues.len()];

    let mut order: Vec<usize> = (0..target.len()).collect();
    order.shuffle(rng);

    let mut out = Vec::with_capacity(iters);
    for it in 0..iters {
        let mut quota: Vec<usize> = expected.iter().map(|e| e.floor() as usize).collect();
        let extra = batch - quota.iter().sum::<usize>();
        let mut eligible: Vec<usize> = (0..queues.len())
            .filter(|&c| expected[c] - quota[c] as f64 > 1e-9)
            .collect();
        for &c in &eligible {
            deficit[c] += expected[c] - quota[c] as f64;
        }
        eligible.sort_by(|&a, &b| {
            deficit[b]
                .partial_cmp(&deficit[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(priority[a].cmp(&priority[b]))
        });
        for &c in eligible.iter().take(extra) {
            quota[c] += 1;
            deficit[c] -= 1.0;
        }

        let mut src = Vec::with_capacity(batch);
        for (c, &k) in quota.iter().enumerate() {
            for _ in 0..k {
                src.push(queues[c][cursor[c] % queues[c].len()]);
                cursor[c] += 1;
            }
        }
        src.shuffle(rng);
        let tgt = order[it * batch..(it + 1) * batch].to_vec();
        out.push((src, tgt));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Domain, Sample};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labeled(counts: &[usize]) -> Dataset {
        let mut samples = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                samples.push(Sample::new(vec![c as f64; 16], Some(c), Domain::Source));
            }
        }
        Dataset::new(samples, counts.len()).unwrap()
    }

    #[test]
    fn iteration_count() {
        let s = labeled(&[64, 64]);
        let t = labeled(&[64, 64]).without_labels();
        let b = make_batches(&s, &t, 64, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(iterations(300, 128, 32).unwrap(), 4);
        assert!(matches!(iterations(10, 100, 11), Err(Error::Config(_))));
        assert!(matches!(
            make_batches(&s, &t, 129, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn balanced_ten_classes_give_six_or_seven() {
        let s = labeled(&[80; 10]);
        let t = labeled(&[80; 10]).without_labels();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            for (src, tgt) in make_batches(&s, &t, 64, &mut rng).unwrap() {
                assert_eq!(src.len(), 64);
                assert_eq!(tgt.len(), 64);
                let mut per = [0usize; 10];
                for i in src {
                    per[s.samples[i].label.unwrap()] += 1;
                }
                assert!(per.iter().all(|&k| k == 6 || k == 7), "{per:?}");
            }
        }
    }

    #[test]
    fn unbalanced_classes_within_one_of_proportion() {
        let counts = [10, 35, 55, 100];
        let s = labeled(&counts);
        let t = labeled(&[200]).without_labels();
        let n: usize = counts.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (src, _) in make_batches(&s, &t, 32, &mut rng).unwrap() {
            let mut per = [0usize; 4];
            for i in src {
                per[s.samples[i].label.unwrap()] += 1;
            }
            for c in 0..4 {
                let e = 32.0 * counts[c] as f64 / n as f64;
                assert!((per[c] as f64 - e).abs() <= 1.0, "class {c}: {} vs {e}", per[c]);
            }
        }
    }

    #[test]
    fn same_seed_same_batches() {
        let s = labeled(&[20, 30]);
        let t = labeled(&[25, 25]).without_labels();
        let a = make_batches(&s, &t, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = make_batches(&s, &t, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let c = make_batches(&s, &t, 8, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn target_batches_ignore_labels() {
        let s = labeled(&[20, 20]);
        let t = labeled(&[30, 10]);
        let a = make_batches(&s, &t, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = make_batches(&s, &t.without_labels(), 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unlabeled_source_is_rejected() {
        let s = labeled(&[20]).without_labels();
        let t = labeled(&[20]);
        assert!(matches!(
            make_batches(&s, &t, 4, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let ds = labeled(&[50, 30, 20]);
        let sp = stratified_split(&ds, 0.8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(sp.train.len(), 80);
        assert_eq!(sp.test.len(), 20);
        let mut all: Vec<usize> = sp.train.iter().chain(&sp.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let train = subset(&ds, &sp.train);
        assert_eq!(train.class_counts(), vec![40, 24, 16]);
        let again = stratified_split(&ds, 0.8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(split_hash(&[&sp]), split_hash(&[&again]));
        let other = stratified_split(&ds, 0.8, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_ne!(split_hash(&[&sp]), split_hash(&[&other]));
        assert_eq!(split_hash(&[&sp]).len(), 64);
        assert!(stratified_split(&ds, 1.0, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }
}
