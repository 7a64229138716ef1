use serde::{Deserialize, Serialize};

use crate::error::{CltsError, Result};

/// `rows[i][j]`: accuracy on task `j+1`'s test set after training through
/// task `i+1`, for `j ≤ i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub tasks: usize,
    pub rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        AccuracyMatrix {
            tasks,
            rows: Vec::with_capacity(tasks),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let i = self.rows.len();
        if i >= self.tasks || row.len() != i + 1 {
            return Err(CltsError::Metric(format!(
                "row {} of a {}-task matrix must hold {} entries, got {}",
                i + 1,
                self.tasks,
                i + 1,
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CltsError::Metric(format!("accuracy {v} outside [0,1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.tasks && self.rows.iter().enumerate().all(|(i, r)| r.len() == i + 1)
    }

    /// Entry for 1-based `after_task` and `task`.
    pub fn get(&self, after_task: usize, task: usize) -> Option<f64> {
        self.rows.get(after_task.checked_sub(1)?)?.get(task.checked_sub(1)?).copied()
    }

    pub fn final_row(&self) -> Result<&[f64]> {
        if !self.is_complete() {
            return Err(CltsError::Metric(format!(
                "matrix holds {} of {} rows",
                self.rows.len(),
                self.tasks
            )));
        }
        Ok(self.rows.last().map(Vec::as_slice).unwrap_or_default())
    }

    /// Drop on `task` between its diagonal entry and the final row.
    pub fn forgetting(&self, task: usize) -> Result<f64> {
        let last = self.final_row()?;
        let diag = self
            .get(task, task)
            .ok_or_else(|| CltsError::Metric(format!("no task {task}")))?;
        Ok(diag - last[task - 1])
    }

    /// Element-wise mean of complete matrices of equal size.
    pub fn mean(matrices: &[&AccuracyMatrix]) -> Result<AccuracyMatrix> {
        let first = matrices
            .first()
            .ok_or_else(|| CltsError::Metric("no matrices to average".into()))?;
        if matrices.iter().any(|m| m.tasks != first.tasks || !m.is_complete()) {
            return Err(CltsError::Metric("matrices differ in size or are incomplete".into()));
        }
        let n = matrices.len() as f64;
        let rows = (0..first.tasks)
            .map(|i| {
                (0..=i)
                    .map(|j| matrices.iter().map(|m| m.rows[i][j]).sum::<f64>() / n)
                    .collect()
            })
            .collect();
        Ok(AccuracyMatrix {
            tasks: first.tasks,
            rows,
        })
    }
}

/// ACC: mean of the final row.
pub fn compute_acc(matrix: &AccuracyMatrix) -> Result<f64> {
    let last = matrix.final_row()?;
    if last.is_empty() {
        return Err(CltsError::Metric("empty matrix".into()));
    }
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// Mean over every entry of the lower triangle.
pub fn mean_over_entries(matrix: &AccuracyMatrix) -> Result<f64> {
    matrix.final_row()?;
    let entries: Vec<f64> = matrix.rows.iter().flatten().copied().collect();
    if entries.is_empty() {
        return Err(CltsError::Metric("empty matrix".into()));
    }
    Ok(entries.iter().sum::<f64>() / entries.len() as f64)
}

/// Mean and sample standard deviation (absent below two values).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: Option<f64>,
    pub values: Vec<f64>,
}

impl Summary {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt());
        Summary { mean, std, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> AccuracyMatrix {
        let mut m = AccuracyMatrix::new(rows.len());
        rows.iter().for_each(|r| m.push_row(r.to_vec()).unwrap());
        m
    }

    #[test]
    fn acc_examples() {
        assert_eq!(compute_acc(&matrix(&[&[1.0], &[1.0, 1.0]])).unwrap(), 1.0);
        assert_eq!(compute_acc(&matrix(&[&[0.9], &[0.4, 0.6]])).unwrap(), 0.5);
        let m = matrix(&[&[0.9], &[0.4, 0.6]]);
        assert!((mean_over_entries(&m).unwrap() - 1.9 / 3.0).abs() < 1e-15);
        assert!((m.forgetting(1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn incomplete_matrix_is_a_metric_error() {
        let mut m = AccuracyMatrix::new(3);
        m.push_row(vec![1.0]).unwrap();
        assert!(matches!(compute_acc(&m), Err(CltsError::Metric(_))));
        assert!(m.push_row(vec![1.0]).is_err());
        assert!(m.push_row(vec![1.0, 1.5]).is_err());
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(vec![1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, Some(1.0));
        assert_eq!(Summary::of(vec![0.5]).std, None);
    }

    #[test]
    fn mean_matrix() {
        let a = matrix(&[&[1.0], &[0.5, 1.0]]);
        let b = matrix(&[&[0.0], &[0.5, 0.0]]);
        assert_eq!(AccuracyMatrix::mean(&[&a, &b]).unwrap(), matrix(&[&[0.5], &[0.5, 0.5]]));
    }
}
