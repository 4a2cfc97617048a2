//! Pairwise company distances and the induced equivalence classes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::StepCoeffs;

/// `|g^{e_i} - g^{e_j}| + 1/2 <e_i - e_j, c (e_i - e_j)>` per unit time.
pub fn pairwise_rate(a: &DVector<f64>, c: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let gi = a[i] - 0.5 * c[(i, i)];
    let gj = a[j] - 0.5 * c[(j, j)];
    (gi - gj).abs() + 0.5 * (c[(i, i)] - 2.0 * c[(i, j)] + c[(j, j)])
}

/// Total distance between companies `i` and `j` accumulated over the steps
/// starting before `horizon`.
pub fn pairwise_distance(steps: &[StepCoeffs], i: usize, j: usize, horizon: f64) -> f64 {
    steps
        .iter()
        .take_while(|s| s.t < horizon - 1e-12 * horizon.abs().max(1.0))
        .map(|s| pairwise_rate(&s.a, &s.c, i, j) * s.dt)
        .sum()
}

/// Symmetric matrix of pairwise distances with zero diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn zeros(d: usize) -> Self {
        Self {
            values: vec![vec![0.0; d]; d],
        }
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Adds `rate(i, j) * dt` to every off-diagonal pair.
    pub fn accumulate(&mut self, a: &DVector<f64>, c: &DMatrix<f64>, dt: f64) {
        let d = self.d();
        for i in 0..d {
            for j in (i + 1)..d {
                let inc = pairwise_rate(a, c, i, j) * dt;
                self.values[i][j] += inc;
                self.values[j][i] += inc;
            }
        }
    }
}

pub fn distance_matrix(steps: &[StepCoeffs], horizon: f64) -> DistanceMatrix {
    let d = steps.first().map_or(0, |s| s.d());
    let mut m = DistanceMatrix::zeros(d);
    for s in steps
        .iter()
        .take_while(|s| s.t < horizon - 1e-12 * horizon.abs().max(1.0))
    {
        m.accumulate(&s.a, &s.c, s.dt);
    }
    m
}

/// Classes of companies at finite distance, closed under transitivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub classes: Vec<Vec<usize>>,
    /// Pairs merged only through the closure (distance at or above the
    /// threshold, yet in the same class).
    pub intransitive_pairs: Vec<(usize, usize)>,
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = x;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

/// Connected components of `{(i, j) : D[i][j] < threshold}`.
pub fn equivalence_classes(dist: &DistanceMatrix, threshold: f64) -> Partition {
    let d = dist.d();
    let mut parent: Vec<usize> = (0..d).collect();
    for i in 0..d {
        for j in (i + 1)..d {
            if dist.get(i, j) < threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut root_of_class: Vec<usize> = Vec::new();
    for i in 0..d {
        let root = find(&mut parent, i);
        match root_of_class.iter().position(|&r| r == root) {
            Some(k) => classes[k].push(i),
            None => {
                root_of_class.push(root);
                classes.push(vec![i]);
            }
        }
    }
    let mut intransitive_pairs = Vec::new();
    for class in &classes {
        for (x, &i) in class.iter().enumerate() {
            for &j in &class[x + 1..] {
                if dist.get(i, j) >= threshold {
                    intransitive_pairs.push((i, j));
                }
            }
        }
    }
    Partition {
        classes,
        intransitive_pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(values: &[[f64; 3]; 3]) -> DistanceMatrix {
        DistanceMatrix {
            values: values.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn zero_matrix_is_one_class() {
        let p = equivalence_classes(&DistanceMatrix::zeros(4), 25.0);
        assert_eq!(p.classes, vec![vec![0, 1, 2, 3]]);
        assert!(p.intransitive_pairs.is_empty());
    }

    #[test]
    fn thresholding_splits() {
        let big = 1e6;
        let p = equivalence_classes(
            &dm(&[[0.0, 1.0, big], [1.0, 0.0, big], [big, big, 0.0]]),
            25.0,
        );
        assert_eq!(p.classes, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn closure_merges_and_flags() {
        let big = 1e6;
        let p = equivalence_classes(
            &dm(&[[0.0, 1.0, big], [1.0, 0.0, 1.0], [big, 1.0, 0.0]]),
            25.0,
        );
        assert_eq!(p.classes, vec![vec![0, 1, 2]]);
        assert_eq!(p.intransitive_pairs, vec![(0, 2)]);
    }

    #[test]
    fn identical_companies_have_zero_rate() {
        let a = DVector::from_vec(vec![0.1, 0.1]);
        assert_eq!(pairwise_rate(&a, &DMatrix::zeros(2, 2), 0, 1), 0.0);
        let c = DMatrix::from_element(2, 2, 0.4);
        assert_eq!(pairwise_rate(&a, &c, 0, 1), 0.0);
    }

    #[test]
    fn two_company_example_rate() {
        // company 0 riskless, company 1 with unit volatility and a = 0
        let a = DVector::from_vec(vec![0.0, 0.0]);
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        assert_eq!(pairwise_rate(&a, &c, 0, 1), 1.0);
    }
}
