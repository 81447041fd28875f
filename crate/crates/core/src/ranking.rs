//! Bradley-Terry strengths from a tallied pairwise win matrix.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERATIONS: usize = 1000;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// `wins[i][j]` is the number of times method `i` ranked above method `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseMatrix {
    labels: Vec<String>,
    wins: Vec<Vec<u64>>,
}

impl PairwiseMatrix {
    pub fn new(labels: Vec<String>, wins: Vec<Vec<u64>>) -> Result<Self> {
        let n = labels.len();
        if wins.len() != n || wins.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidConfig(format!("win matrix must be {n} x {n}")));
        }
        if let Some(i) = (0..n).find(|&i| wins[i][i] != 0) {
            return Err(Error::InvalidConfig(format!("diagonal entry for {} must be zero", labels[i])));
        }
        Ok(PairwiseMatrix { labels, wins })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn wins(&self) -> &[Vec<u64>] {
        &self.wins
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Parses a CSV whose first row holds the labels, followed by one row of
    /// counts per label. Diagonal cells may be `-`.
    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::format(path, "empty pairwise file"))?;
        let labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut wins = Vec::new();
        for (row, line) in lines.enumerate() {
            let cells = line
                .split(',')
                .enumerate()
                .map(|(col, cell)| {
                    let cell = cell.trim();
                    if cell == "-" && row == col {
                        Ok(0)
                    } else {
                        cell.parse::<u64>()
                            .map_err(|_| Error::format(path, format!("row {}, column {}: bad count {cell:?}", row + 1, col + 1)))
                    }
                })
                .collect::<Result<Vec<u64>>>()?;
            wins.push(cells);
        }
        Self::new(labels, wins).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrengthVector {
    pub labels: Vec<String>,
    /// Nonnegative, summing to 1.
    pub strengths: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl StrengthVector {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,strength\n");
        for (l, s) in self.labels.iter().zip(&self.strengths) {
            let _ = writeln!(out, "{l},{s}");
        }
        out
    }

    /// Indices sorted by decreasing strength.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.strengths.len()).collect();
        idx.sort_by(|&a, &b| self.strengths[b].total_cmp(&self.strengths[a]).then(a.cmp(&b)));
        idx
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Sum in ascending order, so the result depends only on the multiset of terms.
fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn check_comparison_graph(s: &PairwiseMatrix) -> Result<()> {
    let n = s.len();
    let w = &s.wins;
    let no_wins: Vec<&str> = (0..n)
        .filter(|&i| w[i].iter().all(|&x| x == 0))
        .map(|i| s.labels[i].as_str())
        .collect();
    if !no_wins.is_empty() {
        return Err(Error::DegenerateComparisons(format!("no wins recorded for {}", no_wins.join(", "))));
    }
    let no_losses: Vec<&str> = (0..n)
        .filter(|&i| (0..n).all(|j| w[j][i] == 0))
        .map(|i| s.labels[i].as_str())
        .collect();
    if !no_losses.is_empty() {
        return Err(Error::DegenerateComparisons(format!("no losses recorded for {}", no_losses.join(", "))));
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && w[i][j] + w[j][i] > 0 {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    let unreached: Vec<&str> = (0..n).filter(|&i| !seen[i]).map(|i| s.labels[i].as_str()).collect();
    if !unreached.is_empty() {
        return Err(Error::DegenerateComparisons(format!(
            "{} not connected to {}",
            unreached.join(", "),
            s.labels[0]
        )));
    }
    Ok(())
}

/// Zermelo fixed-point iteration from uniform strengths, renormalized to sum 1
/// after every synchronous sweep.
pub fn bradley_terry(s: &PairwiseMatrix, max_iters: usize, tol: f64) -> Result<StrengthVector> {
    let n = s.len();
    if n == 0 {
        return Err(Error::DegenerateComparisons("no methods".into()));
    }
    if n == 1 {
        return Ok(StrengthVector { labels: s.labels.clone(), strengths: vec![1.0], iterations: 0, converged: true });
    }
    check_comparison_graph(s)?;

    // Counts reduced by their common divisor: scaling every count by k
    // leaves the reduced matrix, and hence the output, unchanged.
    let g = s.wins.iter().flatten().fold(0, |acc, &x| gcd(acc, x));
    let w: Vec<Vec<f64>> = s.wins.iter().map(|row| row.iter().map(|&x| (x / g) as f64).collect()).collect();
    let total_wins: Vec<f64> = w.iter().map(|row| ordered_sum(row.clone())).collect();

    let mut strengths = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let raw: Vec<f64> = (0..n)
            .map(|i| {
                let denom = ordered_sum(
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| (w[i][j] + w[j][i]) / (strengths[i] + strengths[j]))
                        .collect(),
                );
                total_wins[i] / denom
            })
            .collect();
        let total = ordered_sum(raw.clone());
        let next: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let change = next
            .iter()
            .zip(&strengths)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        strengths = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(StrengthVector { labels: s.labels.clone(), strengths, iterations, converged })
}
