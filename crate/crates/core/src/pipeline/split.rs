use super::PipelineError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.2, 0.1);

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Group counts for a train/val/test split of `groups` units.
pub fn split_counts(
    groups: usize,
    ratios: (f64, f64, f64),
) -> Result<(usize, usize, usize), PipelineError> {
    let (a, b, c) = ratios;
    let ok = [a, b, c].iter().all(|r| r.is_finite() && *r >= 0.0);
    if !ok || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(PipelineError::InvalidRatios(a, b, c));
    }
    let train = ((a * groups as f64).round() as usize).min(groups);
    let val = ((b * groups as f64).round() as usize).min(groups - train);
    let test = groups - train - val;
    Ok((train, val, test))
}

/// Splits items so that all items sharing a group key land in the same part.
/// Groups are shuffled with `seed`; items keep their input order within a part.
pub fn split_dataset<T, K, F>(
    items: Vec<T>,
    group_of: F,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Split<T>, PipelineError>
where
    K: Ord + Clone,
    F: Fn(&T) -> K,
{
    let mut keys: Vec<K> = items
        .iter()
        .map(&group_of)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let (n_train, n_val, _) = split_counts(keys.len(), ratios)?;
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let part: BTreeMap<K, u8> = keys
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            let p = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            (k, p)
        })
        .collect();
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for item in items {
        match part[&group_of(&item)] {
            0 => out.train.push(item),
            1 => out.val.push(item),
            _ => out.test.push(item),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_rallies_seven_two_one() {
        let items: Vec<(u32, u32)> = (0..10).flat_map(|r| (0..3).map(move |h| (r, h))).collect();
        let s = split_dataset(items, |x| x.0, DEFAULT_RATIOS, 3).unwrap();
        let groups = |v: &Vec<(u32, u32)>| {
            v.iter()
                .map(|x| x.0)
                .collect::<std::collections::BTreeSet<_>>()
                .len()
        };
        assert_eq!(
            (groups(&s.train), groups(&s.val), groups(&s.test)),
            (7, 2, 1)
        );
        assert_eq!(s.train.len(), 21);
    }

    #[test]
    fn deterministic_and_degenerate_ratios() {
        let items: Vec<u32> = (0..50).collect();
        let a = split_dataset(items.clone(), |x| *x, DEFAULT_RATIOS, 11).unwrap();
        let b = split_dataset(items.clone(), |x| *x, DEFAULT_RATIOS, 11).unwrap();
        assert_eq!(a, b);
        let all = split_dataset(items.clone(), |x| *x, (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(all.train, items);
        assert!(all.val.is_empty() && all.test.is_empty());
        assert!(matches!(
            split_dataset(items, |x| *x, (0.5, 0.2, 0.2), 1),
            Err(PipelineError::InvalidRatios(..))
        ));
    }

    proptest! {
        #[test]
        fn partitions_without_crossing_groups(
            groups in proptest::collection::vec(0u8..20, 0..80),
            seed in any::<u64>(),
        ) {
            let items: Vec<(usize, u8)> = groups.into_iter().enumerate().collect();
            let s = split_dataset(items.clone(), |x| x.1, DEFAULT_RATIOS, seed).unwrap();
            let mut union: Vec<_> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
            union.sort();
            prop_assert_eq!(union, items);
            let keys = |v: &Vec<(usize, u8)>| v.iter().map(|x| x.1).collect::<std::collections::BTreeSet<_>>();
            prop_assert!(keys(&s.train).is_disjoint(&keys(&s.val)));
            prop_assert!(keys(&s.train).is_disjoint(&keys(&s.test)));
            prop_assert!(keys(&s.val).is_disjoint(&keys(&s.test)));
        }
    }
}
