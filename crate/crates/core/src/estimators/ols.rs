use super::{support_flag, ArmStats, AteRow, AteTable, CellFlag, EstimationData};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// OLS of `y` on `[1, D]` within one cell, with HC0 standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFit<T> {
    pub alpha: T,
    pub tau: T,
    pub se_alpha: T,
    pub se_tau: T,
    pub n_test: usize,
    pub n_control: usize,
}

impl<T: Scalar> CellFit<T> {
    pub(crate) fn from_arms(control: &ArmStats<T>, test: &ArmStats<T>) -> Result<Self> {
        if control.n == 0 || test.n == 0 {
            return Err(Error::NotIdentified(format!(
                "cell has {} test and {} control users",
                test.n, control.n
            )));
        }
        // HC0: residual variances divide by n, not n - 1
        let vc = control.m2 / control.nf() / control.nf();
        let vt = test.m2 / test.nf() / test.nf();
        Ok(CellFit {
            alpha: control.mean,
            tau: test.mean - control.mean,
            se_alpha: vc.sqrt(),
            se_tau: (vc + vt).sqrt(),
            n_test: test.n,
            n_control: control.n,
        })
    }
}

/// Difference in means between test and control outcomes of one cell.
pub fn cell_ols<T: Scalar>(test: &[T], control: &[T]) -> Result<CellFit<T>> {
    CellFit::from_arms(&ArmStats::from_values(control), &ArmStats::from_values(test))
}

/// OLS of `y` on `[1, D]` over every observation, ignoring cells.
pub fn pooled_ols<T: Scalar>(data: &EstimationData<T>) -> Result<CellFit<T>> {
    let t: Vec<T> = data.obs.iter().filter(|o| o.treated).map(|o| o.y).collect();
    let c: Vec<T> = data.obs.iter().filter(|o| !o.treated).map(|o| o.y).collect();
    cell_ols(&t, &c)
}

/// Saturated regression with one intercept and one treatment dummy per cell.
/// Its normal equations are block diagonal, so the fit is `cell_ols` per cell.
pub fn stacked_ols<T: Scalar>(data: &EstimationData<T>, min_arm: usize) -> AteTable<T> {
    let table = data.cells();
    let mut rows = Vec::new();
    let mut ni = Vec::new();
    for cell in &table.cells {
        let [c, t] = &cell.arms;
        match CellFit::from_arms(c, t) {
            Ok(fit) => rows.push(AteRow {
                key: cell.key,
                alpha: fit.alpha,
                tau: fit.tau,
                se_alpha: fit.se_alpha,
                se_tau: fit.se_tau,
                n_test: fit.n_test,
                n_control: fit.n_control,
                flag: support_flag(t.n, c.n, min_arm),
            }),
            Err(_) => ni.push((cell.key, t.n, c.n)),
        }
    }
    debug_assert!(rows.iter().all(|r| r.flag != CellFlag::NotIdentified));
    AteTable::finish(data.focal, data.n_competitors, rows, ni)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_example() {
        let fit = cell_ols(&[2.0f64, 4.0], &[1.0, 3.0]).unwrap();
        assert_eq!(fit.alpha, 2.0);
        assert_eq!(fit.tau, 1.0);
        // residual variance 1 in each arm, divided by n = 2
        assert!((fit.se_tau - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_arms_zero_tau() {
        let ys = [1.5f32, 2.5, 9.0];
        assert_eq!(cell_ols(&ys, &ys).unwrap().tau, 0.0);
    }

    #[test]
    fn one_arm_not_identified() {
        assert!(matches!(cell_ols::<f64>(&[1.0], &[]), Err(Error::NotIdentified(_))));
    }
}
