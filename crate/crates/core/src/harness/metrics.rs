//! AUC-ROC and rank aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Area under the ROC curve by the Mann–Whitney statistic; higher scores
/// mean more anomalous, ties count one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// AUC values indexed by method then dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `ranks[method][dataset]`; the best method on a dataset gets the
    /// number of methods.
    pub ranks: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
}

/// Per-dataset ranks `1..=M` with higher AUC ranked higher and ties
/// averaged, plus the mean rank of every method.
pub fn rank_aggregate(table: &AucTable) -> Result<RankTable> {
    let (nm, nd) = (table.methods.len(), table.datasets.len());
    if nm == 0 || nd == 0 {
        return Err(Error::EmptyInput("AUC table"));
    }
    if table.values.len() != nm || table.values.iter().any(|r| r.len() != nd) {
        return Err(Error::InvalidParameter("AUC table shape does not match its labels".into()));
    }
    let mut ranks = vec![vec![0.0; nd]; nm];
    for (d, dataset) in table.datasets.iter().enumerate() {
        let mut column = Vec::with_capacity(nm);
        for (m, row) in table.values.iter().enumerate() {
            match row[d] {
                Some(v) if !v.is_nan() => column.push(v),
                _ => {
                    return Err(Error::MissingCell {
                        method: table.methods[m].clone(),
                        dataset: dataset.clone(),
                    })
                }
            }
        }
        for (row, r) in ranks.iter_mut().zip(average_ranks(&column)) {
            row[d] = r;
        }
    }
    let mean_ranks = ranks
        .iter()
        .map(|r| r.iter().sum::<f64>() / nd as f64)
        .collect();
    Ok(RankTable {
        methods: table.methods.clone(),
        datasets: table.datasets.clone(),
        ranks,
        mean_ranks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.3, 0.2];
        assert_eq!(auc_roc(&s, &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc_roc(&s, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(auc_roc(&[0.5; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc_roc(&s, &[1, 1, 1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn auc_matches_pair_count() {
        let s = [0.1, 0.4, 0.4, 0.35, 0.8, 0.7];
        let l = [0, 1, 0, 1, 1, 0];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if l[i] == 1 && l[j] == 0 {
                    pairs += 1.0;
                    wins += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((auc_roc(&s, &l).unwrap() - wins / pairs).abs() < 1e-15);
    }

    fn table(values: Vec<Vec<Option<f64>>>) -> AucTable {
        AucTable {
            methods: (0..values.len()).map(|i| format!("m{i}")).collect(),
            datasets: (0..values[0].len()).map(|i| format!("d{i}")).collect(),
            values,
        }
    }

    #[test]
    fn rank_examples() {
        let r = rank_aggregate(&table(vec![vec![Some(0.9)], vec![Some(0.8)]])).unwrap();
        assert_eq!(r.ranks, vec![vec![2.0], vec![1.0]]);
        let r = rank_aggregate(&table(vec![vec![Some(0.7)], vec![Some(0.7)]])).unwrap();
        assert_eq!(r.ranks, vec![vec![1.5], vec![1.5]]);
        assert!(rank_aggregate(&table(vec![vec![Some(0.7)], vec![None]])).is_err());
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_maps(
            data in prop::collection::vec((-5.0..5.0f64, 0u8..2), 2..60),
            scale in 0.1..10.0f64,
            shift in -3.0..3.0f64,
        ) {
            let (s, l): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
            prop_assume!(l.contains(&0) && l.contains(&1));
            let base = auc_roc(&s, &l).unwrap();
            let affine: Vec<f64> = s.iter().map(|v| scale * v + shift).collect();
            let expd: Vec<f64> = s.iter().map(|v| v.exp()).collect();
            prop_assert!((auc_roc(&affine, &l).unwrap() - base).abs() < 1e-12);
            prop_assert!((auc_roc(&expd, &l).unwrap() - base).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn rank_rows_permute_with_methods(
            vals in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 3), 2..6),
            rot in 0usize..6,
        ) {
            let t = table(vals.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect());
            let base = rank_aggregate(&t).unwrap();
            let k = rot % vals.len();
            let mut rotated = t.clone();
            rotated.methods.rotate_left(k);
            rotated.values.rotate_left(k);
            let r = rank_aggregate(&rotated).unwrap();
            let mut expected = base.ranks.clone();
            expected.rotate_left(k);
            prop_assert_eq!(r.ranks, expected);
        }
    }
}
