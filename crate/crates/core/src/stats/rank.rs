/// Twice the tie-averaged rank of each value (rank 1 = smallest).
///
/// A tie group occupying sorted positions `k..=m` (1-based) gets rank
/// `(k + m) / 2`, so doubled ranks are always integers.
pub fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0u64; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // 1-based positions start+1 ..= end
        let doubled = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            out[i] = doubled;
        }
        start = end;
    }
    out
}

pub fn tie_averaged_ranks(values: &[f64]) -> Vec<f64> {
    doubled_ranks(values)
        .into_iter()
        .map(|d| d as f64 / 2.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages_ties() {
        assert_eq!(tie_averaged_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(
            tie_averaged_ranks(&[0.5, 0.5, 0.1, 0.5]),
            vec![3.0, 3.0, 1.0, 3.0]
        );
        assert_eq!(tie_averaged_ranks(&[1.0, 1.0]), vec![1.5, 1.5]);
        assert!(tie_averaged_ranks(&[]).is_empty());
    }

    #[test]
    fn doubled_sum_is_n_times_n_plus_one() {
        let v = [4.0, 4.0, 1.0, 9.0, 9.0, 9.0, -2.0];
        let s: u64 = doubled_ranks(&v).iter().sum();
        assert_eq!(s, 7 * 8);
    }
}
