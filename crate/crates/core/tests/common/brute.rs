//! Exhaustive permutation search for small assignment problems.

/// Minimum over injective row-to-column maps of the summed cost, rows <= cols.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    if cost.is_empty() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost[0].len()], 0.0, &mut best);
    best
}

/// OSPA by exhaustive search over assignments.
pub fn brute_force_ospa(est: &[[f64; 2]], truth: &[[f64; 2]], cutoff: f64, order: f64) -> f64 {
    let (small, large) = if est.len() <= truth.len() { (est, truth) } else { (truth, est) };
    if large.is_empty() {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = small
        .iter()
        .map(|a| large.iter().map(|b| (a[0] - b[0]).hypot(a[1] - b[1]).min(cutoff).powf(order)).collect())
        .collect();
    let matched = brute_force_assignment(&cost);
    let penalty = cutoff.powf(order) * (large.len() - small.len()) as f64;
    ((matched + penalty) / large.len() as f64).powf(1.0 / order)
}
