use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// Bipartite graph `G = (V, C, E)` between signal elements (variables) and
/// measurements (checks). Edges are numbered variable-major, so the edges of
/// variable `i` are contiguous and ordered like its neighbor list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    n_checks: usize,
    var_nbrs: Vec<Vec<usize>>,
    check_nbrs: Vec<Vec<usize>>,
    var_edges: Vec<Vec<usize>>,
    check_edges: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl BipartiteGraph {
    /// Builds the graph from the measurement indices of every column.
    pub fn from_columns(n_checks: usize, columns: Vec<Vec<usize>>) -> Result<Self> {
        let mut check_nbrs = vec![Vec::new(); n_checks];
        let mut check_edges = vec![Vec::new(); n_checks];
        let mut var_edges = Vec::with_capacity(columns.len());
        let mut edges = Vec::new();
        for (i, col) in columns.iter().enumerate() {
            let mut ids = Vec::with_capacity(col.len());
            for (pos, &j) in col.iter().enumerate() {
                if j >= n_checks {
                    return Err(invalid(format!("column {i} references row {j} >= {n_checks}")));
                }
                if col[..pos].contains(&j) {
                    return Err(invalid(format!("column {i} lists row {j} twice")));
                }
                let e = edges.len();
                edges.push((i, j));
                check_nbrs[j].push(i);
                check_edges[j].push(e);
                ids.push(e);
            }
            var_edges.push(ids);
        }
        Ok(BipartiteGraph {
            n_checks,
            var_nbrs: columns,
            check_nbrs,
            var_edges,
            check_edges,
            edges,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.var_nbrs.len()
    }

    pub fn n_checks(&self) -> usize {
        self.n_checks
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `N_V(i)`.
    pub fn var_neighbors(&self, i: usize) -> &[usize] {
        &self.var_nbrs[i]
    }

    /// `N_C(j)`.
    pub fn check_neighbors(&self, j: usize) -> &[usize] {
        &self.check_nbrs[j]
    }

    pub fn var_edges(&self, i: usize) -> &[usize] {
        &self.var_edges[i]
    }

    pub fn check_edges(&self, j: usize) -> &[usize] {
        &self.check_edges[j]
    }

    /// `(variable, check)` endpoints of edge `e`.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    /// Number of length-4 cycles, i.e. pairs of columns sharing two rows.
    pub fn four_cycle_count(&self) -> usize {
        let mut overlap: HashMap<(usize, usize), usize> = HashMap::new();
        for row in &self.check_nbrs {
            for (a, &i) in row.iter().enumerate() {
                for &k in &row[a + 1..] {
                    *overlap.entry((i.min(k), i.max(k))).or_default() += 1;
                }
            }
        }
        overlap.values().map(|&o| o * (o.saturating_sub(1)) / 2).sum()
    }
}

/// Sparse-binary `M × N` sensing matrix with a fixed column weight `L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingMatrix {
    graph: BipartiteGraph,
    column_weight: usize,
}

impl SensingMatrix {
    pub fn from_columns(m: usize, columns: Vec<Vec<usize>>) -> Result<Self> {
        let weight = columns.first().map_or(0, Vec::len);
        if let Some((i, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != weight) {
            return Err(invalid(format!(
                "column {i} has weight {} but column 0 has weight {weight}",
                c.len()
            )));
        }
        let graph = BipartiteGraph::from_columns(m, columns)?;
        Ok(SensingMatrix {
            graph,
            column_weight: weight,
        })
    }

    /// Wraps a graph whose columns may have unequal weight (hand-built
    /// examples, tree graphs). `column_weight` reports the largest column.
    pub fn from_irregular_graph(graph: BipartiteGraph) -> Self {
        let column_weight = (0..graph.n_vars())
            .map(|i| graph.var_neighbors(i).len())
            .max()
            .unwrap_or(0);
        SensingMatrix {
            graph,
            column_weight,
        }
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    pub fn m(&self) -> usize {
        self.graph.n_checks()
    }

    pub fn n(&self) -> usize {
        self.graph.n_vars()
    }

    pub fn column_weight(&self) -> usize {
        self.column_weight
    }

    pub fn column(&self, i: usize) -> &[usize] {
        self.graph.var_neighbors(i)
    }

    pub fn row(&self, j: usize) -> &[usize] {
        self.graph.check_neighbors(j)
    }

    /// Fraction of nonzero entries per column, `L / M`.
    pub fn density(&self) -> f64 {
        self.column_weight as f64 / self.m() as f64
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.n()
            )));
        }
        Ok((0..self.m())
            .map(|j| self.row(j).iter().map(|&i| x[i]).sum())
            .collect())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.m(), self.n());
        for i in 0..self.n() {
            for &j in self.column(i) {
                d[(j, i)] = 1.0;
            }
        }
        d
    }

    /// Dense `M × |cols|` submatrix with the selected columns in order.
    pub fn columns_dense(&self, cols: &[usize]) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.m(), cols.len());
        for (c, &i) in cols.iter().enumerate() {
            for &j in self.column(i) {
                d[(j, c)] = 1.0;
            }
        }
        d
    }

    pub fn four_cycle_count(&self) -> usize {
        self.graph.four_cycle_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        assert!(BipartiteGraph::from_columns(3, vec![vec![0, 0]]).is_err());
        assert!(BipartiteGraph::from_columns(3, vec![vec![3]]).is_err());
    }

    #[test]
    fn four_cycles_counted() {
        // columns 0 and 1 share rows {0, 1}; column 2 shares one row with each
        let g = BipartiteGraph::from_columns(3, vec![vec![0, 1], vec![0, 1], vec![1, 2]]).unwrap();
        assert_eq!(g.four_cycle_count(), 1);
        let g = BipartiteGraph::from_columns(3, vec![vec![0, 1, 2], vec![0, 1, 2]]).unwrap();
        assert_eq!(g.four_cycle_count(), 3);
    }

    #[test]
    fn edge_bookkeeping_consistent() {
        let g = BipartiteGraph::from_columns(4, vec![vec![0, 2], vec![1, 2], vec![3, 0]]).unwrap();
        for e in 0..g.edge_count() {
            let (i, j) = g.edge(e);
            assert!(g.var_edges(i).contains(&e));
            assert!(g.check_edges(j).contains(&e));
        }
        for j in 0..4 {
            for (&i, &e) in g.check_neighbors(j).iter().zip(g.check_edges(j)) {
                assert_eq!(g.edge(e), (i, j));
            }
        }
    }
}
