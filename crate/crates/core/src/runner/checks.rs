//! Self-contained verification batteries behind the `linear-check` and
//! `bounds-check` CLI subcommands: closed-form variance identities against
//! Monte Carlo, the gradient-descent solution theorem, the 4x risk bound,
//! and the Gaussian concentration bound.

use serde::Serialize;

use crate::bounds::{check_4x_bound, check_concentration, LipschitzProbe};
use crate::lintheory::{
    closed_form_variance_over, closed_form_variance_under, default_gd_step, gd_path, mc_variance,
    min_distance_solution, LinearDesign,
};
use crate::numkit::{mean, project_rowspace, Matrix, RngStream, DEFAULT_RANK_TOL};

use super::RunnerError;

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub master_seed: u64,
    pub lines: Vec<CheckLine>,
}

impl CheckReport {
    pub fn all_pass(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }

    fn push(&mut self, name: &str, pass: bool, detail: String) {
        self.lines.push(CheckLine {
            name: name.to_string(),
            pass,
            detail,
        });
    }
}

fn random_design(
    root: &RngStream,
    tag: &str,
    m: usize,
    n: usize,
    noise_sd: f64,
) -> Result<LinearDesign, RunnerError> {
    let mut stream = root.derive(tag);
    let x = Matrix::new(m, n, stream.gaussian(m * n, 0.0, 1.0)?)?;
    let theta = stream.gaussian(n, 0.0, 1.0)?;
    Ok(LinearDesign::new(x, theta, noise_sd)?)
}

/// Fixed-design linear-model battery.
pub fn linear_check(master_seed: u64) -> Result<CheckReport, RunnerError> {
    let root = RngStream::new(master_seed, "linear-check");
    let mut report = CheckReport {
        name: "linear-check".into(),
        master_seed,
        lines: Vec::new(),
    };

    // Under-parameterized trace identity: sample-averaged variance is
    // exactly N sigma^2 / m.
    {
        let mut worst = 0.0_f64;
        for i in 0..20 {
            let n = 2 + i % 9;
            let m = n + 3 + i % 13;
            let sd = 0.4 + 0.05 * i as f64;
            let design = random_design(&root, &format!("under/{i}"), m, n, sd)?;
            let per_row: Vec<f64> = (0..m)
                .map(|r| closed_form_variance_under(&design, design.design().row(r)))
                .collect::<Result<_, _>>()?;
            let want = n as f64 * sd * sd / m as f64;
            worst = worst.max((mean(&per_row) - want).abs());
        }
        report.push(
            "under-parameterized sample-average identity",
            worst < 1e-10,
            format!("max deviation {worst:.2e} (tolerance 1e-10)"),
        );
    }

    // Under-parameterized closed form against Monte Carlo at a reference
    // instance: N=10, m=50, sigma^2=0.25 gives sample-averaged variance 0.05.
    {
        let design = random_design(&root, "under-mc", 50, 10, 0.5)?;
        let per_row: Vec<f64> = (0..50)
            .map(|r| closed_form_variance_under(&design, design.design().row(r)))
            .collect::<Result<_, _>>()?;
        let closed_avg = mean(&per_row);
        let mc_rows: Vec<f64> = (0..50)
            .map(|r| {
                mc_variance(
                    &design,
                    design.design().row(r),
                    10_000,
                    2,
                    &root.derive(&format!("under-mc/row{r}")),
                )
                .map(|mc| mc.var_total)
            })
            .collect::<Result<_, _>>()?;
        let mc_avg = mean(&mc_rows);
        let expect = 10.0 * 0.25 / 50.0;
        let closed_ok = (closed_avg - expect).abs() < 1e-10;
        let rel = (mc_avg - closed_avg).abs() / closed_avg;
        report.push(
            "under-parameterized variance vs Monte Carlo",
            closed_ok && rel < 0.05,
            format!("closed {closed_avg:.6}, mc {mc_avg:.6}, rel err {rel:.3}"),
        );
    }

    // Over-parameterized closed form (both terms) against Monte Carlo, and
    // the rank identity for the sample average.
    {
        let mut worst_rel = 0.0_f64;
        let mut worst_rank_dev = 0.0_f64;
        for i in 0..20 {
            let m = 10 + (i * 7) % 31; // up to 40
            let n = m + 5 + (i * 13) % (101 - m - 5); // up to ~100
            let sd = 0.8 + 0.02 * i as f64;
            let design = random_design(&root, &format!("over/{i}"), m, n, sd)?;
            let probe = root
                .derive(&format!("over/{i}/probe"))
                .gaussian(n, 0.0, 1.0)?;
            let closed = closed_form_variance_over(&design, &probe)?;
            let mc = mc_variance(
                &design,
                &probe,
                10_000,
                100,
                &root.derive(&format!("over/{i}/mc")),
            )?;
            worst_rel = worst_rel
                .max((mc.var_init_term - closed.var_init).abs() / closed.var_init)
                .max((mc.var_noise_term - closed.var_noise).abs() / closed.var_noise);

            let per_row: Vec<f64> = (0..m)
                .map(|r| {
                    closed_form_variance_over(&design, design.design().row(r)).map(|v| v.total())
                })
                .collect::<Result<_, _>>()?;
            let want = design.rank() as f64 * sd * sd / m as f64;
            worst_rank_dev = worst_rank_dev.max((mean(&per_row) - want).abs());
        }
        report.push(
            "over-parameterized variance terms vs Monte Carlo",
            worst_rel < 0.05,
            format!("worst relative error {worst_rel:.3} (tolerance 0.05)"),
        );
        report.push(
            "over-parameterized rank identity",
            worst_rank_dev < 1e-10,
            format!("max deviation {worst_rank_dev:.2e} (tolerance 1e-10)"),
        );
    }

    // Gradient descent converges to the minimum-distance solution and never
    // moves in the null space.
    {
        let mut worst_gap = 0.0_f64;
        let mut worst_drift = 0.0_f64;
        for i in 0..20 {
            let m = 4 + i % 10;
            let n = 2 * m + 3 + i % 7;
            let design = random_design(&root, &format!("gd/{i}"), m, n, 0.5)?;
            let y = root.derive(&format!("gd/{i}/y")).gaussian(m, 0.0, 1.0)?;
            let theta0 = root
                .derive(&format!("gd/{i}/t0"))
                .gaussian(n, 0.0, 1.0 / n as f64)?;
            let step = default_gd_step(&design);
            let path = gd_path(&design, &y, &theta0, step, 3000)?;
            let closed = min_distance_solution(&design, &y, &theta0)?;
            let last = path.last().expect("iters >= 1");
            let gap = last
                .iter()
                .zip(&closed)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            worst_gap = worst_gap.max(gap);
            let (_, null0) = project_rowspace(&theta0, design.design(), DEFAULT_RANK_TOL)?;
            for theta in &path {
                let (_, null_t) = project_rowspace(theta, design.design(), DEFAULT_RANK_TOL)?;
                let drift = null_t
                    .iter()
                    .zip(&null0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0_f64, f64::max);
                worst_drift = worst_drift.max(drift);
            }
        }
        report.push(
            "gradient descent reaches the minimum-distance solution",
            worst_gap < 1e-6,
            format!("max infinity-norm gap {worst_gap:.2e} (tolerance 1e-6)"),
        );
        report.push(
            "no learning in the null space",
            worst_drift < 1e-10,
            format!("max null-space drift {worst_drift:.2e} (tolerance 1e-10)"),
        );
    }

    Ok(report)
}

/// Inequality battery: 4x classification/regression risk bound and the
/// Gaussian concentration variance bound.
pub fn bounds_check(master_seed: u64, instances: usize) -> Result<CheckReport, RunnerError> {
    let root = RngStream::new(master_seed, "bounds-check");
    let mut report = CheckReport {
        name: "bounds-check".into(),
        master_seed,
        lines: Vec::new(),
    };

    {
        let per_k = (instances / 9).max(1);
        let mut total_violations = 0;
        let mut max_ratio = 0.0_f64;
        let mut total = 0;
        for k in 2..=10 {
            let mut stream = root.derive(&format!("4x/k{k}"));
            let rep = check_4x_bound(per_k, k, 16, &mut stream)?;
            total_violations += rep.violations;
            total += rep.instances;
            max_ratio = max_ratio.max(rep.max_ratio);
        }
        report.push(
            "classification risk <= 4x regression risk",
            total_violations == 0,
            format!("{total} instances, max ratio {max_ratio:.3}, {total_violations} violations"),
        );
    }

    {
        let probe = LipschitzProbe::linear(vec![0.6, -0.8, 1.0])?;
        let rep = check_concentration(&probe, 0.5, 20_000, &mut root.derive("conc/linear"))?;
        let tight = (rep.empirical_var - rep.bound).abs() < 0.05 * rep.bound;
        report.push(
            "linear probe attains the variance bound",
            rep.holds(3.0) && tight,
            format!(
                "empirical {:.5} vs bound {:.5} (+/- {:.1e})",
                rep.empirical_var, rep.bound, rep.mc_std_error
            ),
        );
    }

    {
        let mut prev = f64::INFINITY;
        let mut all_hold = true;
        let mut monotone = true;
        let mut details = Vec::new();
        for n in [10usize, 100, 1000] {
            let probe = LipschitzProbe::euclidean_norm(n)?;
            let rep = check_concentration(
                &probe,
                1.0 / n as f64,
                10_000,
                &mut root.derive(&format!("conc/norm{n}")),
            )?;
            all_hold &= rep.holds(3.0);
            monotone &= rep.empirical_var <= prev;
            prev = rep.empirical_var;
            details.push(format!(
                "N={n}: {:.2e} <= {:.2e}",
                rep.empirical_var, rep.bound
            ));
        }
        report.push(
            "norm probe variance under 1/N initialization decays",
            all_hold && monotone,
            details.join("; "),
        );
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_battery_passes() {
        let report = bounds_check(17, 900).unwrap();
        assert!(report.all_pass(), "{report:#?}");
        assert_eq!(report.lines.len(), 3);
    }

    #[test]
    fn check_report_serializes() {
        let report = bounds_check(3, 90).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("bounds-check"));
    }
}
