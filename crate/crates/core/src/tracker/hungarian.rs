//! Rectangular min-cost assignment with forbidden (infinite) cells.
//!
//! Among assignments that match the largest possible number of finite cells,
//! the cheapest is returned; among equally cheap ones, the lexicographically
//! smallest by row (a matched column sorts before "unmatched").

const TIE_TOL: f64 = 1e-9;

/// Returns `(row, col)` pairs sorted by row. `cost` is row-major with `rows` rows.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    assert!(cost.iter().all(|r| r.len() == cols), "ragged cost matrix");
    if rows == 0 || cols == 0 || !cost.iter().flatten().any(|c| c.is_finite()) {
        return Vec::new();
    }

    let best = solve(cost, &vec![true; rows], &vec![true; cols]);
    let (target_card, target_cost) = score(cost, &best);

    let mut row_free = vec![true; rows];
    let mut col_free = vec![true; cols];
    let mut fixed: Vec<(usize, usize)> = Vec::new();
    let (mut fixed_card, mut fixed_cost) = (0usize, 0.0f64);
    for i in 0..rows {
        row_free[i] = false;
        let mut chosen = None;
        for j in 0..cols {
            if !col_free[j] || !cost[i][j].is_finite() {
                continue;
            }
            col_free[j] = false;
            let rest = solve(cost, &row_free, &col_free);
            let (rc, rcost) = score(cost, &rest);
            col_free[j] = true;
            let card = fixed_card + 1 + rc;
            let total = fixed_cost + cost[i][j] + rcost;
            if card == target_card && total <= target_cost + TIE_TOL * target_cost.abs().max(1.0) {
                chosen = Some(j);
                break;
            }
        }
        if let Some(j) = chosen {
            col_free[j] = false;
            fixed.push((i, j));
            fixed_card += 1;
            fixed_cost += cost[i][j];
        }
    }
    fixed
}

fn score(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> (usize, f64) {
    (pairs.len(), pairs.iter().map(|&(i, j)| cost[i][j]).sum())
}

/// Max-cardinality min-cost assignment restricted to free rows and columns.
fn solve(cost: &[Vec<f64>], row_free: &[bool], col_free: &[bool]) -> Vec<(usize, usize)> {
    let rows: Vec<usize> = (0..row_free.len()).filter(|&i| row_free[i]).collect();
    let cols: Vec<usize> = (0..col_free.len()).filter(|&j| col_free[j]).collect();
    let finite = || rows.iter().flat_map(|&i| cols.iter().map(move |&j| cost[i][j])).filter(|c| c.is_finite());
    let Some(lo) = finite().reduce(f64::min) else {
        return Vec::new();
    };
    let hi = finite().map(|c| c - lo).fold(0.0, f64::max);
    let n = rows.len().max(cols.len());
    // Any assignment with one more finite cell is strictly cheaper.
    let big = (n as f64 + 1.0) * (hi + 1.0);
    let mut square = vec![vec![big; n]; n];
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            if cost[i][j].is_finite() {
                square[a][b] = cost[i][j] - lo;
            }
        }
    }
    let assign = kuhn_munkres(&square);
    assign
        .into_iter()
        .enumerate()
        .filter(|&(a, b)| a < rows.len() && b < cols.len() && cost[rows[a]][cols[b]].is_finite())
        .map(|(a, b)| (rows[a], cols[b]))
        .collect()
}

/// O(n³) shortest-augmenting-path Hungarian on a dense square matrix; returns the column of each row.
fn kuhn_munkres(a: &[Vec<f64>]) -> Vec<usize> {
    let n = a.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Enumerates every partial matching; keeps the best `(cardinality desc, cost asc)`,
    /// first found in lexicographic order on ties.
    fn brute_force(cost: &[Vec<f64>]) -> (usize, f64, Vec<(usize, usize)>) {
        fn rec(
            cost: &[Vec<f64>],
            i: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<(usize, usize)>,
            best: &mut Option<(usize, f64, Vec<(usize, usize)>)>,
        ) {
            if i == cost.len() {
                let c: f64 = cur.iter().map(|&(r, k)| cost[r][k]).sum();
                let better = match best {
                    None => true,
                    Some((bc, bcost, _)) => cur.len() > *bc || (cur.len() == *bc && c < *bcost - 1e-9),
                };
                if better {
                    *best = Some((cur.len(), c, cur.clone()));
                }
                return;
            }
            for j in 0..used.len() {
                if !used[j] && cost[i][j].is_finite() {
                    used[j] = true;
                    cur.push((i, j));
                    rec(cost, i + 1, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
            rec(cost, i + 1, used, cur, best);
        }
        let mut best = None;
        let cols = cost.first().map_or(0, Vec::len);
        rec(cost, 0, &mut vec![false; cols], &mut Vec::new(), &mut best);
        best.unwrap()
    }

    fn total(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| cost[i][j]).sum()
    }

    #[test]
    fn small_examples() {
        let c = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert_eq!(hungarian(&c), vec![(0, 0), (1, 1)]);
        assert_eq!(total(&c, &hungarian(&c)), 2.0);
        let inf = f64::INFINITY;
        assert!(hungarian(&[vec![inf, inf], vec![inf, inf]]).is_empty());
        assert!(hungarian(&[]).is_empty());
        assert!(hungarian(&[vec![], vec![]]).is_empty());
        assert_eq!(hungarian(&[vec![inf, 5.0], vec![inf, 1.0]]), vec![(1, 1)]);
    }

    #[test]
    fn cardinality_beats_cost() {
        let inf = f64::INFINITY;
        let c = vec![vec![0.0, 100.0], vec![100.0, inf]];
        assert_eq!(hungarian(&c), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        assert_eq!(hungarian(&[vec![1.0, 1.0], vec![1.0, 1.0]]), vec![(0, 0), (1, 1)]);
        assert_eq!(hungarian(&[vec![0.5, 0.5, 0.5]]), vec![(0, 0)]);
        assert_eq!(hungarian(&[vec![0.5], vec![0.5]]), vec![(0, 0)]);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..100 {
            let rows = rng.random_range(1..=6);
            let cols = rng.random_range(1..=6);
            let c: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
            let got = hungarian(&c);
            let (card, cost, pairs) = brute_force(&c);
            assert_eq!(got.len(), card, "trial {trial}");
            assert_eq!(total(&c, &got), cost, "trial {trial}");
            assert_eq!(got, pairs, "trial {trial}");
        }
    }

    #[test]
    fn matches_brute_force_with_forbidden_cells_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let rows = rng.random_range(1..=6);
            let cols = rng.random_range(1..=6);
            let c: Vec<Vec<f64>> = (0..rows)
                .map(|_| {
                    (0..cols)
                        .map(|_| if rng.random_bool(0.3) { f64::INFINITY } else { rng.random_range(0..4) as f64 })
                        .collect()
                })
                .collect();
            let got = hungarian(&c);
            if c.iter().flatten().all(|v| v.is_infinite()) {
                assert!(got.is_empty());
                continue;
            }
            let (card, cost, pairs) = brute_force(&c);
            assert_eq!((got.len(), total(&c, &got)), (card, cost), "trial {trial}: {c:?}");
            assert_eq!(got, pairs, "trial {trial}");
        }
    }

    #[test]
    fn assignment_is_one_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let rows = rng.random_range(0..=9);
            let cols = rng.random_range(0..=9);
            let c: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| if rng.random_bool(0.2) { f64::INFINITY } else { rng.random() }).collect())
                .collect();
            let got = hungarian(&c);
            let mut rs: Vec<_> = got.iter().map(|p| p.0).collect();
            let mut cs: Vec<_> = got.iter().map(|p| p.1).collect();
            rs.dedup();
            cs.sort_unstable();
            cs.dedup();
            assert_eq!(rs.len(), got.len());
            assert_eq!(cs.len(), got.len());
            assert!(got.iter().all(|&(i, j)| c[i][j].is_finite()));
        }
    }
}
