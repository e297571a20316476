//! File output: trajectory and MSE CSVs, variance reports, metadata sidecars.
//!
//! Reals are written with Rust's shortest round-trip formatting, so parsing a
//! file back recovers the exact values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::analysis::{MseTable, SecondMomentCheck, VarianceReport};
use crate::error::{Error, Result};
use crate::kernels::Branch;
use crate::ladder::Trajectory;
use crate::reservoir::Reservoir;

/// Name of the file marking an output directory whose run failed.
pub const FAILURE_SENTINEL: &str = "FAILED";

const DIGEST_PREFIX: &str = "# config_digest=";

/// States that flatten into CSV columns.
pub trait CsvState {
    fn column_names(&self) -> Vec<String>;
    fn push_fields(&self, out: &mut Vec<String>);
}

impl CsvState for Vec<f64> {
    fn column_names(&self) -> Vec<String> {
        (1..=self.len()).map(|i| format!("x{i}")).collect()
    }

    fn push_fields(&self, out: &mut Vec<String>) {
        out.extend(self.iter().map(|v| v.to_string()));
    }
}

impl CsvState for usize {
    fn column_names(&self) -> Vec<String> {
        vec!["state".into()]
    }

    fn push_fields(&self, out: &mut Vec<String>) {
        out.push(self.to_string());
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn writer_with_digest(path: &Path, digest: &str) -> Result<csv::Writer<fs::File>> {
    create_parent(path)?;
    let mut file = fs::File::create(path)?;
    std::io::Write::write_all(&mut file, format!("{DIGEST_PREFIX}{digest}\n").as_bytes())?;
    Ok(csv::Writer::from_writer(file))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

/// Reads the digest comment on the first line of a CSV written here.
pub fn read_digest(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .next()
        .and_then(|l| l.strip_prefix(DIGEST_PREFIX))
        .map(str::to_owned)
        .ok_or_else(|| Error::Io(format!("{}: missing config digest line", path.display())))
}

/// Columns: iteration, level, state components, branch, accepted.
pub fn write_trajectory_csv<S: CsvState>(path: &Path, trajectory: &Trajectory<S>, digest: &str) -> Result<()> {
    let mut w = writer_with_digest(path, digest)?;
    let names = trajectory
        .levels
        .first()
        .and_then(|l| l.states.first())
        .map(CsvState::column_names)
        .unwrap_or_default();
    let mut header = vec!["iteration".to_string(), "level".into()];
    header.extend(names);
    header.extend(["branch".into(), "accepted".into()]);
    w.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for n in 0..trajectory.iterations() {
        for trace in &trajectory.levels {
            fields.clear();
            fields.push((n + 1).to_string());
            fields.push(trace.level.to_string());
            trace.states[n].push_fields(&mut fields);
            fields.push(trace.branches[n].as_str().into());
            fields.push(trace.accepted[n].to_string());
            w.write_record(&fields)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub iteration: usize,
    pub level: usize,
    pub state: Vec<f64>,
    pub branch: Branch,
    pub accepted: bool,
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = reader(path)?;
    let width = r.headers()?.len();
    if width < 4 {
        return Err(Error::Io(format!("{}: too few trajectory columns", path.display())));
    }
    let bad = |what: &str| Error::Io(format!("{}: bad {what}", path.display()));
    r.records()
        .map(|rec| {
            let rec = rec?;
            let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad("number"));
            Ok(TrajectoryRow {
                iteration: rec[0].parse().map_err(|_| bad("iteration"))?,
                level: rec[1].parse().map_err(|_| bad("level"))?,
                state: (2..width - 2).map(num).collect::<Result<_>>()?,
                branch: Branch::parse(&rec[width - 2]).ok_or_else(|| bad("branch"))?,
                accepted: rec[width - 1].parse().map_err(|_| bad("accepted flag"))?,
            })
        })
        .collect()
}

/// One row per stored sample.
pub fn write_reservoir_csv<S: CsvState>(path: &Path, reservoir: &Reservoir<S>) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    if let Some(first) = reservoir.samples().first() {
        let mut header = vec!["index".to_string()];
        header.extend(first.column_names());
        w.write_record(&header)?;
    }
    let mut fields = Vec::new();
    for (i, s) in reservoir.samples().iter().enumerate() {
        fields.clear();
        fields.push(i.to_string());
        s.push_fields(&mut fields);
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// `key = value` lines with the wall-clock time appended. Timestamps live only here.
pub fn write_metadata<K: AsRef<str>>(path: &Path, entries: &[(K, String)]) -> Result<()> {
    create_parent(path)?;
    let mut text = String::new();
    for (k, v) in entries {
        writeln!(text, "{} = {v}", k.as_ref()).expect("writing to a string");
    }
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    writeln!(text, "written_unix_seconds = {secs}").expect("writing to a string");
    fs::write(path, text)?;
    Ok(())
}

/// Rows: sampler x {mse, mse_se, ratio}; columns: estimands.
pub fn write_mse_csv(path: &Path, table: &MseTable, digest: &str) -> Result<()> {
    let mut w = writer_with_digest(path, digest)?;
    let mut header = vec!["sampler".to_string(), "quantity".into()];
    header.extend(table.estimands.iter().cloned());
    w.write_record(&header)?;
    for row in &table.rows {
        for (quantity, values) in [("mse", &row.mse), ("mse_se", &row.mse_se), ("ratio", &row.ratio)] {
            let mut fields = vec![row.kind.as_str().to_string(), quantity.into()];
            fields.extend(values.iter().map(f64::to_string));
            w.write_record(&fields)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `(sampler, quantity, values)` rows of an MSE CSV.
pub fn read_mse_csv(path: &Path) -> Result<Vec<(String, String, Vec<f64>)>> {
    let mut r = reader(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let values = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Io(format!("{}: bad number {v}", path.display()))))
                .collect::<Result<_>>()?;
            Ok((rec[0].to_string(), rec[1].to_string(), values))
        })
        .collect()
}

/// Aligned text table with MSE and ratio blocks, four decimals.
pub fn format_mse_table(table: &MseTable) -> String {
    let label_width = table.rows.iter().map(|r| r.kind.label().len()).max().unwrap_or(0).max(7);
    let mut out = String::new();
    let header = |out: &mut String, title: &str| {
        write!(out, "{title:<label_width$}").expect("writing to a string");
        for e in &table.estimands {
            write!(out, " {e:>10}").expect("writing to a string");
        }
        out.push('\n');
    };
    for (title, pick) in [("MSE", 0), ("Ratios", 1)] {
        header(&mut out, title);
        for row in &table.rows {
            write!(out, "{:<label_width$}", row.kind.label()).expect("writing to a string");
            for v in if pick == 0 { &row.mse } else { &row.ratio } {
                write!(out, " {v:>10.4}").expect("writing to a string");
            }
            out.push('\n');
        }
    }
    if !table.reliable() {
        out.push_str("note: one replication, ratios are unreliable\n");
    }
    out
}

/// `key = value` lines; the cross-check block is present only when run.
pub fn format_variance_report(report: &VarianceReport, check: Option<&SecondMomentCheck>) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("writing to a string");
    line("theta", report.theta.to_string());
    line("sigma_star_sq", report.sigma_star_sq.to_string());
    line("gamma_gbar", report.gamma_gbar.to_string());
    line("clt_variance", report.clt_variance.to_string());
    line(
        "second_moment_limit",
        report.second_moment_limit.map_or_else(|| "not_applicable".into(), |v| v.to_string()),
    );
    if let Some(c) = check {
        line("cross_check_variance", c.variance.to_string());
        line("cross_check_standard_error", c.standard_error.to_string());
        line("cross_check_mean", c.mean.to_string());
        line("cross_check_replications", c.replications.to_string());
        line("cross_check_steps", c.steps.to_string());
    }
    out
}

pub fn write_variance_report(
    path: &Path,
    report: &VarianceReport,
    check: Option<&SecondMomentCheck>,
    digest: &str,
) -> Result<()> {
    create_parent(path)?;
    fs::write(path, format!("{DIGEST_PREFIX}{digest}\n{}", format_variance_report(report, check)))?;
    Ok(())
}

/// Parses `key = value` lines, skipping comments.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            l.split_once(" = ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Io(format!("{}: malformed line {l:?}", path.display())))
        })
        .collect()
}

pub fn read_variance_report(path: &Path) -> Result<(VarianceReport, Option<SecondMomentCheck>)> {
    let kv = read_key_values(path)?;
    let get = |k: &str| kv.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let num = |k: &str| -> Result<f64> {
        get(k)
            .ok_or_else(|| Error::Io(format!("missing {k}")))?
            .parse()
            .map_err(|_| Error::Io(format!("bad value for {k}")))
    };
    let report = VarianceReport {
        theta: num("theta")?,
        sigma_star_sq: num("sigma_star_sq")?,
        gamma_gbar: num("gamma_gbar")?,
        clt_variance: num("clt_variance")?,
        second_moment_limit: match get("second_moment_limit") {
            Some("not_applicable") | None => None,
            Some(_) => Some(num("second_moment_limit")?),
        },
    };
    let check = if get("cross_check_variance").is_some() {
        Some(SecondMomentCheck {
            variance: num("cross_check_variance")?,
            standard_error: num("cross_check_standard_error")?,
            mean: num("cross_check_mean")?,
            replications: num("cross_check_replications")? as usize,
            steps: num("cross_check_steps")? as usize,
        })
    } else {
        None
    };
    Ok((report, check))
}

/// Marks `dir` as holding partial output.
pub fn mark_failed(dir: &Path, message: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(FAILURE_SENTINEL), format!("{message}\n"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{gaussian_moment_estimands, mse_harness, HarnessOptions};
    use crate::kernels::{MatrixKernel, RwmKernel};
    use crate::ladder::{SamplerKind, Sampler};
    use crate::targets::{FiniteTarget, GaussianTarget, TemperatureLadder};
    use nalgebra::DMatrix;

    fn gaussian() -> Sampler<GaussianTarget, RwmKernel> {
        let target = GaussianTarget::from_rows(&[vec![0.96, 2.44], vec![2.44, 7.04]]).unwrap();
        let ladder = TemperatureLadder::with_common_theta(vec![10.0, 5.0, 2.0, 1.0], 0.5).unwrap();
        Sampler::new(target, ladder, RwmKernel::isotropic(2, 1.0).unwrap())
    }

    #[test]
    fn trajectory_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let traj = gaussian().run(SamplerKind::Ee, 300, 1).unwrap();
        write_trajectory_csv(&path, &traj, "abc").unwrap();
        assert_eq!(read_digest(&path).unwrap(), "abc");
        let rows = read_trajectory_csv(&path).unwrap();
        assert_eq!(rows.len(), 4 * 300);
        for row in &rows {
            let trace = &traj.levels[row.level];
            let n = row.iteration - 1;
            assert_eq!(row.state, trace.states[n]);
            assert_eq!(row.branch, trace.branches[n]);
            assert_eq!(row.accepted, trace.accepted[n]);
        }
    }

    #[test]
    fn finite_trajectory_has_state_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let target = FiniteTarget::new(vec![0.0, 1.0, 2.0]).unwrap();
        let ladder = TemperatureLadder::new(vec![2.0, 1.0], vec![0.5]).unwrap();
        let q = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let local = MatrixKernel::metropolis(&target, &ladder, &q).unwrap();
        let traj = Sampler::new(target, ladder, local).run(SamplerKind::Ir, 50, 2).unwrap();
        write_trajectory_csv(&path, &traj, "d").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "iteration,level,state,branch,accepted");
        let rows = read_trajectory_csv(&path).unwrap();
        assert_eq!(rows[1].state, vec![traj.levels[1].states[0] as f64]);
    }

    #[test]
    fn mse_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mse.csv");
        let est = gaussian_moment_estimands(&[0.96, 7.04]);
        let opts = HarnessOptions { replications: 3, iterations: 200, burn_in: 0, seed: 4, jobs: None };
        let table = mse_harness(&gaussian(), &[SamplerKind::Rwm, SamplerKind::EeLimit], &est, opts).unwrap();
        write_mse_csv(&path, &table, "x").unwrap();
        let rows = read_mse_csv(&path).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[3], ("ee_limit".to_string(), "mse".to_string(), table.rows[1].mse.clone()));
        assert_eq!(rows[5].2, table.rows[1].ratio);
        let text = format_mse_table(&table);
        assert!(text.contains("Limit EE"));
        assert!(text.contains("1.0000"));
    }

    #[test]
    fn variance_report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.txt");
        let report = VarianceReport {
            theta: 0.5,
            sigma_star_sq: 1.0 / 3.0,
            gamma_gbar: 2.0f64.sqrt(),
            clt_variance: 0.1 + 0.2,
            second_moment_limit: None,
        };
        let check = SecondMomentCheck { variance: 1e-300, standard_error: 0.5, mean: -0.0, replications: 7, steps: 9 };
        write_variance_report(&path, &report, Some(&check), "h").unwrap();
        let (r, c) = read_variance_report(&path).unwrap();
        assert_eq!(r, report);
        assert_eq!(c, Some(check));
        write_variance_report(&path, &VarianceReport { second_moment_limit: Some(0.7), ..report }, None, "h").unwrap();
        let (r, c) = read_variance_report(&path).unwrap();
        assert_eq!(r.second_moment_limit, Some(0.7));
        assert!(c.is_none());
    }

    #[test]
    fn reservoir_dump_has_one_row_per_sample() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("res.csv");
        let mut r = Reservoir::new();
        r.push(vec![1.5, -2.0]);
        r.push(vec![0.25, 3.0]);
        write_reservoir_csv(&path, &r).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "index,x1,x2\n0,1.5,-2\n1,0.25,3\n");
    }

    #[test]
    fn failure_sentinel_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        mark_failed(dir.path(), "boom").unwrap();
        assert_eq!(fs::read_to_string(dir.path().join(FAILURE_SENTINEL)).unwrap(), "boom\n");
        let meta = dir.path().join("m.meta");
        write_metadata(&meta, &[("seed", "3".into())]).unwrap();
        let kv = read_key_values(&meta).unwrap();
        assert_eq!(kv[0], ("seed".to_string(), "3".to_string()));
        assert_eq!(kv[1].0, "written_unix_seconds");
    }
}
