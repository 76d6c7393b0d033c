//! CSV emitters for trajectories, gains, error series and episodes.
//!
//! Trajectory rows are `k, x_1..x_n, theta, gamma_bitmask` for `k = 0..=N+1`;
//! the last row carries only the terminal state. Bit `i` of `gamma_bitmask`
//! marks agent `i + 1`.

use std::io::Write;

use crate::dp::DpGains;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::system::Trajectory;

fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((1..=n).map(|i| format!("x_{i}")));
    h.push("theta".into());
    h.push("gamma_bitmask".into());
    h
}

fn trajectory_row<T: Scalar>(tr: &Trajectory<T>, k: usize) -> Vec<String> {
    let mut row = vec![k.to_string()];
    row.extend(tr.states[k].iter().map(|v| v.to_string()));
    match (tr.plan.theta.get(k), tr.plan.gamma.get(k)) {
        (Some(theta), Some(gamma)) => {
            row.push(theta.to_string());
            row.push(gamma.mask().to_string());
        }
        _ => {
            row.push(String::new());
            row.push(String::new());
        }
    }
    row
}

pub fn write_trajectory<T: Scalar, W: Write>(out: W, tr: &Trajectory<T>) -> Result<()> {
    let n = tr.states[0].len();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(n))?;
    for k in 0..tr.states.len() {
        w.write_record(trajectory_row(tr, k))?;
    }
    w.flush()?;
    Ok(())
}

/// Trajectory columns followed by `theta_star` and `reward` (empty on the terminal row).
pub fn write_episode<T: Scalar, W: Write>(out: W, tr: &Trajectory<T>, theta_star: &[T], rewards: &[T]) -> Result<()> {
    let n = tr.states[0].len();
    let mut w = csv::Writer::from_writer(out);
    let mut header = trajectory_header(n);
    header.push("theta_star".into());
    header.push("reward".into());
    w.write_record(header)?;
    for k in 0..tr.states.len() {
        let mut row = trajectory_row(tr, k);
        row.push(theta_star.get(k).map(|v| v.to_string()).unwrap_or_default());
        row.push(rewards.get(k).map(|v| v.to_string()).unwrap_or_default());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `k, K_1_1..K_n_n (row-major), F_1..F_n, M, R`; row `N + 1` holds only `K_{N+1} = H`.
pub fn write_gains<T: Scalar, W: Write>(out: W, gains: &DpGains<T>) -> Result<()> {
    let n = gains.n();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    for i in 1..=n {
        for j in 1..=n {
            header.push(format!("K_{i}_{j}"));
        }
    }
    header.extend((1..=n).map(|i| format!("F_{i}")));
    header.push("M".into());
    header.push("R".into());
    w.write_record(&header)?;
    for k in 0..gains.k.len() {
        let mut row = vec![k.to_string()];
        let kk = &gains.k[k];
        for i in 0..n {
            for j in 0..n {
                row.push(kk[(i, j)].to_string());
            }
        }
        if k < gains.f.len() {
            row.extend(gains.f[k].iter().map(|v| v.to_string()));
            row.push(gains.m[k].to_string());
            row.push(gains.r[k].to_string());
        } else {
            row.extend(std::iter::repeat(String::new()).take(n + 2));
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `k, error` series.
pub fn write_series<T: Scalar, W: Write>(out: W, column: &str, values: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", column])?;
    for (k, v) in values.iter().enumerate() {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Generic table with a header and `f64` rows.
pub fn write_table<W: Write>(out: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::solve_optimal_plan;
    use crate::scenario::builtin;
    use crate::system::{constant_selection, Selection};

    #[test]
    fn trajectory_csv_shape() {
        let sc = builtin("linear3").unwrap().build::<f64>().unwrap();
        let plan = solve_optimal_plan(&sc, &constant_selection(&Selection::single(3, 1), 50)).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &plan.trajectory).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,x_1,x_2,x_3,theta,gamma_bitmask");
        assert_eq!(lines.len(), 53);
        assert!(lines[1].starts_with("0,-1,12,-5,"));
        assert!(lines[1].ends_with(",2"));
        assert!(lines[52].ends_with(",,"));
    }

    #[test]
    fn gains_csv_shape() {
        let sc = builtin("linear3").unwrap().build::<f64>().unwrap();
        let plan = solve_optimal_plan(&sc, &constant_selection(&Selection::single(3, 0), 50)).unwrap();
        let mut buf = Vec::new();
        write_gains(&mut buf, &plan.gains).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rdr.headers().unwrap().len(), 1 + 9 + 3 + 2);
        assert_eq!(rdr.records().count(), 52);
    }
}
