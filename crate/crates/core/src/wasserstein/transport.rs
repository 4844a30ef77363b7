//! Balanced transportation problem solved by the transportation simplex
//! (northwest-corner start, MODI potentials, spanning-tree pivots).

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub cost: f64,
    /// Basic cells `(source, sink, flow)`; zero flows are degenerate cells.
    pub flows: Vec<(usize, usize, f64)>,
    pub iterations: usize,
}

/// Minimises `sum c_ij x_ij` subject to row sums `supply`, column sums
/// `demand`, `x >= 0`. `cost` is row-major `supply.len() x demand.len()`.
/// The totals must agree; a relative mismatch below `1e-9` is absorbed by
/// rescaling the demand.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::invalid("transport problem", "empty supply or demand"));
    }
    if cost.len() != m * n {
        return Err(Error::invalid("transport problem", "cost matrix has wrong size"));
    }
    if supply.iter().chain(demand).any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid("transport problem", "masses must be finite and nonnegative"));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > 1e-9 * total_s.max(total_d).max(1e-300) {
        return Err(Error::Mass(format!(
            "unbalanced transport problem: {total_s} vs {total_d}"
        )));
    }
    let scale = if total_d > 0.0 { total_s / total_d } else { 1.0 };
    let demand: Vec<f64> = demand.iter().map(|d| d * scale).collect();

    // northwest corner: exactly m + n - 1 basic cells forming a spanning tree
    let mut cells: Vec<(usize, usize)> = Vec::with_capacity(m + n - 1);
    let mut flow: Vec<f64> = Vec::with_capacity(m + n - 1);
    {
        let mut s = supply.to_vec();
        let mut d = demand.clone();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]);
            cells.push((i, j));
            flow.push(x);
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let cmax = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let tol = 1e-12 * (1.0 + cmax);
    let max_iter = 50 * (m + n) + 1000;
    let nodes = m + n;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut is_basic = vec![false; m * n];
    for &(i, j) in &cells {
        is_basic[i * n + j] = true;
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
    let mut seen = vec![false; nodes];
    let mut queue = VecDeque::new();

    let build_adj = |cells: &[(usize, usize)], adj: &mut Vec<Vec<(usize, usize)>>| {
        adj.iter_mut().for_each(Vec::clear);
        for (e, &(i, j)) in cells.iter().enumerate() {
            adj[i].push((m + j, e));
            adj[m + j].push((i, e));
        }
    };

    for iter in 0..max_iter {
        build_adj(&cells, &mut adj);
        // potentials u_i + v_j = c_ij on the tree, rooted at row 0
        seen.iter_mut().for_each(|s| *s = false);
        seen[0] = true;
        u[0] = 0.0;
        queue.clear();
        queue.push_back(0);
        while let Some(a) = queue.pop_front() {
            for &(b, e) in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    let (i, j) = cells[e];
                    if b >= m {
                        v[b - m] = cost[i * n + j] - u[i];
                    } else {
                        u[b] = cost[i * n + j] - v[j];
                    }
                    queue.push_back(b);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Consistency("transport basis is not a spanning tree".into()));
        }

        // most negative reduced cost enters
        let mut best = -tol;
        let mut enter = None;
        for i in 0..m {
            let row = &cost[i * n..(i + 1) * n];
            for j in 0..n {
                if !is_basic[i * n + j] {
                    let r = row[j] - u[i] - v[j];
                    if r < best {
                        best = r;
                        enter = Some((i, j));
                    }
                }
            }
        }
        let Some((ei, ej)) = enter else {
            let total = cells
                .iter()
                .zip(&flow)
                .map(|(&(i, j), x)| x * cost[i * n + j])
                .sum();
            return Ok(TransportPlan {
                cost: total,
                flows: cells.iter().zip(&flow).map(|(&(i, j), &x)| (i, j, x)).collect(),
                iterations: iter,
            });
        };

        // tree path from column node ej back to row node ei
        parent.iter_mut().for_each(|p| *p = None);
        seen.iter_mut().for_each(|s| *s = false);
        seen[ei] = true;
        queue.clear();
        queue.push_back(ei);
        while let Some(a) = queue.pop_front() {
            if a == m + ej {
                break;
            }
            for &(b, e) in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    parent[b] = Some((a, e));
                    queue.push_back(b);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = m + ej;
        while node != ei {
            let (prev, e) = parent[node]
                .ok_or_else(|| Error::Consistency("no cycle for entering cell".into()))?;
            path.push(e);
            node = prev;
        }
        // entering cell gets +, path edges alternate starting with -
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 && flow[e] < theta {
                theta = flow[e];
                leave = e;
            }
        }
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 {
                flow[e] -= theta;
            } else {
                flow[e] += theta;
            }
        }
        let (li, lj) = cells[leave];
        is_basic[li * n + lj] = false;
        is_basic[ei * n + ej] = true;
        cells[leave] = (ei, ej);
        flow[leave] = theta;
    }
    Err(Error::Consistency(format!(
        "transportation simplex did not terminate in {max_iter} pivots"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_instance() {
        // classic 3x4 instance; northwest corner costs 520, the optimum is 435
        let supply = [15.0, 25.0, 10.0];
        let demand = [5.0, 15.0, 15.0, 15.0];
        let cost = [
            10.0, 2.0, 20.0, 11.0, //
            12.0, 7.0, 9.0, 20.0, //
            4.0, 14.0, 16.0, 18.0,
        ];
        let plan = solve_transport(&supply, &demand, &cost).unwrap();
        assert!((plan.cost - 435.0).abs() < 1e-9, "{}", plan.cost);
        for (i, s) in supply.iter().enumerate() {
            let out: f64 = plan.flows.iter().filter(|f| f.0 == i).map(|f| f.2).sum();
            assert!((out - s).abs() < 1e-12);
        }
        assert!(plan.flows.iter().all(|f| f.2 >= 0.0));
    }

    #[test]
    fn rejects_unbalanced_problems() {
        assert!(solve_transport(&[1.0], &[2.0], &[1.0]).is_err());
        assert!(solve_transport(&[], &[1.0], &[]).is_err());
    }
}
