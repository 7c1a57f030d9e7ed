//! Partition comparison: pair counts, Rand index, adjusted Rand index, and
//! the homogeneity / completeness / v-measure family.
//!
//! Everything is computed from a [`ContingencyTable`]. Pair-count sums are
//! kept in exact integer arithmetic; only the final ratios are floating point.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("LengthMismatch: {left} labels vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("Empty: no labels to compare")]
    Empty,
    #[error("TooFewPoints: pair-based metrics need at least 2 points, got {0}")]
    TooFewPoints(usize),
}

impl MetricError {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricError::LengthMismatch { .. } => "LengthMismatch",
            MetricError::Empty => "Empty",
            MetricError::TooFewPoints(_) => "TooFewPoints",
        }
    }
}

/// Cross-tabulation of true classes (rows) against predicted clusters
/// (columns). Rows and columns follow the ascending order of the labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    row_labels: Vec<usize>,
    col_labels: Vec<usize>,
    counts: Vec<u64>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    n: u64,
}

fn choose2(x: u64) -> u128 {
    let x = x as u128;
    x * x.saturating_sub(1) / 2
}

impl ContingencyTable {
    pub fn from_labels(truth: &[usize], predicted: &[usize]) -> Result<Self, MetricError> {
        if truth.len() != predicted.len() {
            return Err(MetricError::LengthMismatch {
                left: truth.len(),
                right: predicted.len(),
            });
        }
        if truth.is_empty() {
            return Err(MetricError::Empty);
        }
        let index = |labels: &[usize]| -> BTreeMap<usize, usize> {
            let mut m: BTreeMap<usize, usize> = labels.iter().map(|&l| (l, 0)).collect();
            for (i, v) in m.values_mut().enumerate() {
                *v = i;
            }
            m
        };
        let rows = index(truth);
        let cols = index(predicted);
        let mut counts = vec![0u64; rows.len() * cols.len()];
        for (t, p) in truth.iter().zip(predicted) {
            counts[rows[t] * cols.len() + cols[p]] += 1;
        }
        Ok(ContingencyTable::from_parts(
            rows.into_keys().collect(),
            cols.into_keys().collect(),
            counts,
        ))
    }

    /// Builds a table from a row-major count matrix with `rows` rows.
    ///
    /// # Panics
    /// If `counts.len()` is not a multiple of `rows` or the table is empty.
    pub fn from_counts(rows: usize, counts: Vec<u64>) -> Self {
        assert!(rows > 0 && counts.len().is_multiple_of(rows), "counts must form a {rows}-row matrix");
        let cols = counts.len() / rows;
        ContingencyTable::from_parts((0..rows).collect(), (0..cols).collect(), counts)
    }

    fn from_parts(row_labels: Vec<usize>, col_labels: Vec<usize>, counts: Vec<u64>) -> Self {
        let s = col_labels.len();
        let row_sums: Vec<u64> = counts.chunks(s.max(1)).map(|r| r.iter().sum()).collect();
        let col_sums: Vec<u64> = (0..s)
            .map(|j| counts.iter().skip(j).step_by(s).sum())
            .collect();
        let n = row_sums.iter().sum();
        ContingencyTable {
            row_labels,
            col_labels,
            counts,
            row_sums,
            col_sums,
            n,
        }
    }

    pub fn rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn row_labels(&self) -> &[usize] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[usize] {
        &self.col_labels
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.cols() + j]
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// The same table with the roles of the two partitions exchanged.
    pub fn transposed(&self) -> Self {
        let (r, s) = (self.rows(), self.cols());
        let mut counts = vec![0; r * s];
        for i in 0..r {
            for j in 0..s {
                counts[j * r + i] = self.get(i, j);
            }
        }
        ContingencyTable::from_parts(self.col_labels.clone(), self.row_labels.clone(), counts)
    }

    /// True when the two partitions are identical up to relabeling.
    pub fn is_matching(&self) -> bool {
        self.rows() == self.cols()
            && (0..self.rows()).all(|i| {
                (0..self.cols())
                    .filter(|&j| self.get(i, j) > 0)
                    .count()
                    == 1
            })
            && (0..self.cols()).all(|j| (0..self.rows()).filter(|&i| self.get(i, j) > 0).count() == 1)
    }

    /// Tab-separated export with a header row of cluster labels.
    pub fn to_text(&self, row_names: &[String], metadata: &[String]) -> String {
        let mut out = String::new();
        for line in metadata {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("class");
        for c in &self.col_labels {
            let _ = write!(out, "\tcluster{c}");
        }
        out.push('\n');
        for i in 0..self.rows() {
            match row_names.get(i) {
                Some(name) => out.push_str(name),
                None => {
                    let _ = write!(out, "class{}", self.row_labels[i]);
                }
            }
            for j in 0..self.cols() {
                let _ = write!(out, "\t{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Pairs of points classified by whether each partition puts them together.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCounts {
    /// Together in both.
    pub a: u128,
    /// Together in the first partition only.
    pub b: u128,
    /// Together in the second partition only.
    pub c: u128,
    /// Apart in both.
    pub d: u128,
}

impl PairCounts {
    pub fn total(&self) -> u128 {
        self.a + self.b + self.c + self.d
    }
}

pub fn pair_counts(table: &ContingencyTable) -> PairCounts {
    let a: u128 = table.counts.iter().map(|&x| choose2(x)).sum();
    let same_rows: u128 = table.row_sums.iter().map(|&x| choose2(x)).sum();
    let same_cols: u128 = table.col_sums.iter().map(|&x| choose2(x)).sum();
    let b = same_rows - a;
    let c = same_cols - a;
    let d = choose2(table.n) - a - b - c;
    PairCounts { a, b, c, d }
}

/// Fraction of point pairs on which the partitions agree.
pub fn rand_index(pc: &PairCounts) -> Result<f64, MetricError> {
    let total = pc.total();
    if total == 0 {
        return Err(MetricError::TooFewPoints(1));
    }
    Ok((pc.a + pc.d) as f64 / total as f64)
}

/// Rand index adjusted for chance under the permutation model.
///
/// With `a = Σ C(n_ij, 2)`, `A = Σ C(row_i, 2)`, `B = Σ C(col_j, 2)` and
/// `N = C(n, 2)` this is `(a − AB/N) / ((A + B)/2 − AB/N)`, evaluated as the
/// ratio of two exact integers. When the denominator vanishes (both
/// partitions all singletons, or both one block) the result is 1 for
/// identical partitions and 0 otherwise.
pub fn adjusted_rand_index(table: &ContingencyTable) -> Result<f64, MetricError> {
    if table.n < 2 {
        return Err(MetricError::TooFewPoints(table.n as usize));
    }
    let pc = pair_counts(table);
    let index = pc.a as i128;
    let rows = (pc.a + pc.b) as i128;
    let cols = (pc.a + pc.c) as i128;
    let pairs = pc.total() as i128;
    let numerator = 2 * (index * pairs - rows * cols);
    let denominator = (rows + cols) * pairs - 2 * rows * cols;
    if denominator == 0 {
        return Ok(if table.is_matching() { 1.0 } else { 0.0 });
    }
    Ok(numerator as f64 / denominator as f64)
}

fn entropy(sums: &[u64], n: u64) -> f64 {
    let n = n as f64;
    -sums
        .iter()
        .filter(|&&x| x > 0)
        .map(|&x| {
            let p = x as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// `H(rows | cols)` in nats.
fn conditional_entropy(table: &ContingencyTable) -> f64 {
    let n = table.n as f64;
    let mut h = 0.0;
    for i in 0..table.rows() {
        for j in 0..table.cols() {
            let nij = table.get(i, j);
            if nij > 0 {
                let nij = nij as f64;
                h -= nij / n * (nij / table.col_sums[j] as f64).ln();
            }
        }
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

/// Homogeneity, completeness, and their harmonic mean, with rows as the
/// true classes.
pub fn v_measure(table: &ContingencyTable) -> VMeasure {
    let h_rows = entropy(&table.row_sums, table.n);
    let h_cols = entropy(&table.col_sums, table.n);
    let homogeneity = if h_rows == 0.0 {
        1.0
    } else {
        (1.0 - conditional_entropy(table) / h_rows).clamp(0.0, 1.0)
    };
    let completeness = if h_cols == 0.0 {
        1.0
    } else {
        (1.0 - conditional_entropy(&table.transposed()) / h_cols).clamp(0.0, 1.0)
    };
    let v_measure = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    VMeasure {
        homogeneity,
        completeness,
        v_measure,
    }
}

/// All scores for one clustering against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub ri: f64,
    pub ari: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

impl MetricReport {
    pub fn from_table(table: &ContingencyTable) -> Result<Self, MetricError> {
        let ri = rand_index(&pair_counts(table))?;
        let ari = adjusted_rand_index(table)?;
        let v = v_measure(table);
        Ok(MetricReport {
            ri,
            ari,
            homogeneity: v.homogeneity,
            completeness: v.completeness,
            v_measure: v.v_measure,
        })
    }

    pub fn evaluate(truth: &[usize], predicted: &[usize]) -> Result<Self, MetricError> {
        MetricReport::from_table(&ContingencyTable::from_labels(truth, predicted)?)
    }

    /// Flat `key=value` block.
    pub fn to_text(&self) -> String {
        format!(
            "ri={}\nari={}\nhomogeneity={}\ncompleteness={}\nv_measure={}\n",
            self.ri, self.ari, self.homogeneity, self.completeness, self.v_measure
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(u: &[usize], v: &[usize]) -> ContingencyTable {
        ContingencyTable::from_labels(u, v).unwrap()
    }

    fn dense(t: &ContingencyTable) -> Vec<Vec<u64>> {
        (0..t.rows()).map(|i| (0..t.cols()).map(|j| t.get(i, j)).collect()).collect()
    }

    #[test]
    fn contingency_examples() {
        assert_eq!(dense(&table(&[0, 0, 1, 1], &[0, 0, 1, 1])), vec![vec![2, 0], vec![0, 2]]);
        assert_eq!(dense(&table(&[0, 0, 0, 0], &[0, 0, 1, 1])), vec![vec![2, 2]]);
        assert_eq!(dense(&table(&[0, 1], &[1, 0])), vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(
            ContingencyTable::from_labels(&[0], &[0, 1]).unwrap_err(),
            MetricError::LengthMismatch { left: 1, right: 2 }
        );
        assert_eq!(ContingencyTable::from_labels(&[], &[]).unwrap_err(), MetricError::Empty);
    }

    #[test]
    fn pair_count_examples() {
        let pc = pair_counts(&table(&[0, 0, 1, 1], &[0, 1, 0, 1]));
        assert_eq!((pc.a, pc.b, pc.c, pc.d), (0, 2, 2, 2));
        let pc = pair_counts(&table(&[0, 0, 1, 1], &[0, 0, 1, 1]));
        assert_eq!((pc.a, pc.b, pc.c, pc.d), (2, 0, 0, 4));
        let pc = pair_counts(&table(&[0, 0, 0, 0], &[0, 0, 1, 1]));
        assert_eq!((pc.a, pc.b, pc.c, pc.d), (2, 4, 0, 0));
    }

    #[test]
    fn rand_index_examples() {
        let ri = |u: &[usize], v: &[usize]| rand_index(&pair_counts(&table(u, v))).unwrap();
        assert_eq!(ri(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_eq!(ri(&[0, 0, 1, 1], &[0, 1, 0, 1]), 1.0 / 3.0);
        assert_eq!(ri(&[0, 0, 0, 0], &[0, 0, 1, 1]), 1.0 / 3.0);
        assert_eq!(
            rand_index(&pair_counts(&table(&[0], &[0]))).unwrap_err().kind(),
            "TooFewPoints"
        );
    }

    #[test]
    fn ari_examples() {
        let ari = |u: &[usize], v: &[usize]| adjusted_rand_index(&table(u, v)).unwrap();
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 1, 1]), 1.0);
        assert_eq!(ari(&[0, 0, 0, 0], &[0, 0, 1, 1]), 0.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 1, 0, 1]), -0.5);
        // degenerate: both one block, both all singletons
        assert_eq!(ari(&[3, 3, 3], &[1, 1, 1]), 1.0);
        assert_eq!(ari(&[0, 1, 2], &[2, 0, 1]), 1.0);
        assert!(adjusted_rand_index(&table(&[0], &[0])).is_err());
    }

    #[test]
    fn v_measure_examples() {
        let v = v_measure(&table(&[0, 0, 1, 1], &[1, 1, 0, 0]));
        assert_eq!((v.homogeneity, v.completeness, v.v_measure), (1.0, 1.0, 1.0));
        let v = v_measure(&table(&[0, 0, 1, 1], &[0, 0, 0, 0]));
        assert_eq!((v.homogeneity, v.completeness, v.v_measure), (0.0, 1.0, 0.0));
        let w = v_measure(&table(&[0, 0, 0, 0], &[0, 0, 1, 1]));
        assert_eq!((w.homogeneity, w.completeness), (1.0, 0.0));
    }

    #[test]
    fn report_text() {
        let r = MetricReport::evaluate(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!(r.to_text().contains("ari=-0.5\n"));
    }

    fn labels(n: usize, blocks: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0..blocks, n)
    }

    fn pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (2usize..40).prop_flat_map(|n| (labels(n, 5), labels(n, 4)))
    }

    proptest! {
        #[test]
        fn relabeling_changes_nothing((u, v) in pair(), shift in 1usize..9) {
            let relabeled: Vec<usize> = v.iter().map(|&x| (x * 7 + shift) % 97).collect();
            let a = MetricReport::evaluate(&u, &v).unwrap();
            let b = MetricReport::evaluate(&u, &relabeled).unwrap();
            prop_assert_eq!(a.ri, b.ri);
            prop_assert_eq!(a.ari, b.ari);
            prop_assert!((a.v_measure - b.v_measure).abs() <= 1e-12);
        }

        #[test]
        fn symmetric_and_bounded((u, v) in pair()) {
            let a = MetricReport::evaluate(&u, &v).unwrap();
            let b = MetricReport::evaluate(&v, &u).unwrap();
            prop_assert_eq!(a.ari, b.ari);
            prop_assert!((a.v_measure - b.v_measure).abs() <= 1e-12);
            prop_assert!((a.homogeneity - b.completeness).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.ri));
            prop_assert!(a.ari <= 1.0 && a.ari >= -1.0);
            for x in [a.homogeneity, a.completeness, a.v_measure] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
            let t = table(&u, &v);
            prop_assert_eq!(pair_counts(&t).total(), choose2(t.n()));
            prop_assert_eq!(a.ari == 1.0, t.is_matching());
        }
    }
}
