//! 4:1 splits, cross-validation folds and minority-class balancing.

use rand::seq::SliceRandom;

use super::{augment_rotate, rotations, VolumeSample};
use crate::rng::derived;
use crate::{Error, Result};

/// Anything carrying a binary class label.
pub trait Labeled {
    fn label(&self) -> u8;
}

/// Number of held-out items for a 4:1 split of `n`.
fn fifth(n: usize) -> usize {
    (n as f64 / 5.0).round() as usize
}

/// Splits items 4:1 into `(train, test)`, both in input order.
///
/// Stratified splits hold out `round(n_c / 5)` items of each class `c` and
/// need at least 5 items per class; unstratified splits need 5 items total.
pub fn split_dataset<T: Labeled + Clone>(
    items: &[T],
    stratify: bool,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    let groups: Vec<Vec<usize>> = if stratify {
        (0..=1u8)
            .map(|c| (0..items.len()).filter(|&i| items[i].label() == c).collect())
            .collect()
    } else {
        vec![(0..items.len()).collect()]
    };
    let mut test = vec![false; items.len()];
    for (g, idx) in groups.iter().enumerate() {
        if idx.len() < 5 {
            return Err(Error::InvalidArgument(format!(
                "split needs at least 5 samples{}, got {}",
                if stratify { format!(" of class {g}") } else { String::new() },
                idx.len()
            )));
        }
        let mut idx = idx.clone();
        idx.shuffle(&mut derived(seed, &format!("split-{g}")));
        for &i in &idx[..fifth(idx.len())] {
            test[i] = true;
        }
    }
    let pick = |want: bool| {
        items
            .iter()
            .zip(&test)
            .filter(|(_, &t)| t == want)
            .map(|(x, _)| x.clone())
            .collect()
    };
    Ok((pick(false), pick(true)))
}

/// `k` `(fit, val)` pairs over a seeded shuffle of `items`. Each validation
/// set is `round(n / 5)` consecutive items (cyclically) starting at
/// `i * n / k`, so with `k = 5` and `5 | n` the validation sets partition the
/// items.
pub fn cv_folds<T: Clone>(items: &[T], k: usize, seed: u64) -> Result<Vec<(Vec<T>, Vec<T>)>> {
    let n = items.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("cross-validation needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("{k} folds over only {n} samples")));
    }
    let val_size = fifth(n).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived(seed, "folds"));
    Ok((0..k)
        .map(|i| {
            let start = i * n / k;
            let mut in_val = vec![false; n];
            for j in 0..val_size {
                in_val[order[(start + j) % n]] = true;
            }
            let mut fit = Vec::with_capacity(n - val_size);
            let mut val = Vec::with_capacity(val_size);
            for (t, &v) in items.iter().zip(&in_val) {
                if v {
                    val.push(t.clone());
                } else {
                    fit.push(t.clone());
                }
            }
            (fit, val)
        })
        .collect())
}

/// Adds rotated copies of minority-class samples until both classes have the
/// same count. With `m` minority and `M` majority samples every minority
/// sample gets `(M - m) / m` copies and the first `(M - m) % m` one more. Copy
/// `j` of a sample uses the `j+1`-th non-identity rotation and gets the id
/// suffix `_rot<j+1>`.
pub fn balance_minority(samples: Vec<VolumeSample>) -> Result<Vec<VolumeSample>> {
    let n1 = samples.iter().filter(|s| s.label == 1).count();
    let n0 = samples.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::InvalidArgument(
            "balancing needs samples of both classes".into(),
        ));
    }
    let minority = u8::from(n1 < n0);
    let (m, big) = (n0.min(n1), n0.max(n1));
    let need = big - m;
    if need == 0 {
        return Ok(samples);
    }
    let rots = rotations();
    let mut extra = Vec::with_capacity(need);
    let mut rank = 0;
    for s in samples.iter().filter(|s| s.label == minority) {
        let copies = need / m + usize::from(rank < need % m);
        rank += 1;
        for j in 1..=copies {
            let r = &rots[1 + (j - 1) % (rots.len() - 1)];
            let mut copy = augment_rotate(s, r);
            copy.id = format!("{}_rot{j}", s.id);
            extra.push(copy);
        }
    }
    let mut out = samples;
    out.extend(extra);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleRef;

    fn refs(n0: usize, n1: usize) -> Vec<SampleRef> {
        (0..n0 + n1)
            .map(|i| SampleRef {
                id: format!("s{i}"),
                label: u8::from(i >= n0),
            })
            .collect()
    }

    #[test]
    fn ten_samples_split_eight_two() {
        let items = refs(5, 5);
        let (tr, te) = split_dataset(&items, false, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split_dataset(&items, false, 1).unwrap(), (tr, te));
    }

    #[test]
    fn stratified_keeps_ratio() {
        let items = refs(80, 20);
        let (tr, te) = split_dataset(&items, true, 4).unwrap();
        assert_eq!(te.iter().filter(|s| s.label == 0).count(), 16);
        assert_eq!(te.iter().filter(|s| s.label == 1).count(), 4);
        assert_eq!(tr.len() + te.len(), 100);
        assert!(tr.iter().all(|s| !te.contains(s)));
        assert!(split_dataset(&refs(20, 4), true, 0).is_err());
    }

    #[test]
    fn folds_partition_at_k5() {
        let items: Vec<usize> = (0..25).collect();
        let folds = cv_folds(&items, 5, 3).unwrap();
        let mut all: Vec<usize> = folds.iter().flat_map(|(_, v)| v.clone()).collect();
        assert!(folds.iter().all(|(f, v)| v.len() == 5 && f.len() == 20));
        all.sort();
        assert_eq!(all, items);
        assert_eq!(cv_folds(&items, 5, 3).unwrap(), folds);
    }

    #[test]
    fn two_folds_of_ten() {
        let items: Vec<usize> = (0..10).collect();
        let folds = cv_folds(&items, 2, 0).unwrap();
        assert_eq!(folds[0].1.len(), 2);
        assert!(folds[0].1.iter().all(|v| !folds[1].1.contains(v)));
        assert!(cv_folds(&items, 11, 0).is_err());
        assert!(cv_folds(&items, 1, 0).is_err());
    }
}
