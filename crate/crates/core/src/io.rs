//! Text formats: cloud CSV, dataset manifests, metrics logs and filter scatters.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `x,y,z[,nx,ny,nz][,part]` with a header row, 17 significant digits.
pub fn cloud_to_csv(cloud: &PointCloud) -> String {
    let mut out = String::from("x,y,z");
    if cloud.normals.is_some() {
        out.push_str(",nx,ny,nz");
    }
    if cloud.part_labels.is_some() {
        out.push_str(",part");
    }
    out.push('\n');
    for (i, p) in cloud.positions.iter().enumerate() {
        let mut cols: Vec<String> = p.iter().map(|&v| num(v)).collect();
        if let Some(n) = &cloud.normals {
            cols.extend(n[i].iter().map(|&v| num(v)));
        }
        if let Some(l) = &cloud.part_labels {
            cols.push(l[i].to_string());
        }
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

pub fn cloud_from_csv(text: &str, source: &str) -> Result<PointCloud> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(source, "empty cloud file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let (normals, part) = match cols.as_slice() {
        ["x", "y", "z"] => (false, false),
        ["x", "y", "z", "part"] => (false, true),
        ["x", "y", "z", "nx", "ny", "nz"] => (true, false),
        ["x", "y", "z", "nx", "ny", "nz", "part"] => (true, true),
        _ => {
            return Err(parse_err(
                format!("{source}:1"),
                format!("unrecognized header {header:?}"),
            ))
        }
    };
    let mut positions = Vec::new();
    let mut ns = Vec::new();
    let mut parts = Vec::new();
    for (ln, line) in lines {
        let loc = || format!("{source}:{}", ln + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(parse_err(
                loc(),
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| parse_err(loc(), format!("bad number {:?}", fields[i])))
        };
        positions.push([f(0)?, f(1)?, f(2)?]);
        if normals {
            ns.push([f(3)?, f(4)?, f(5)?]);
        }
        if part {
            let s = fields[cols.len() - 1];
            parts.push(
                s.parse()
                    .map_err(|_| parse_err(loc(), format!("bad part label {s:?}")))?,
            );
        }
    }
    let mut cloud = PointCloud::new(positions)?;
    if normals {
        cloud = cloud.with_normals(ns)?;
    }
    if part {
        cloud = cloud.with_part_labels(parts)?;
    }
    Ok(cloud)
}

pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, cloud_to_csv(cloud))?;
    Ok(())
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    cloud_from_csv(&text, &path.display().to_string())
}

/// `path,label` lines; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, usize)>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = format!("{}:{}", path.display(), ln + 1);
        let (p, label) = line
            .rsplit_once(',')
            .ok_or_else(|| parse_err(&loc, "expected `path,label`"))?;
        let label = label
            .trim()
            .parse()
            .map_err(|_| parse_err(&loc, format!("bad label {label:?}")))?;
        out.push((base.join(p.trim()), label));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[(String, usize)]) -> Result<()> {
    let mut text = String::new();
    for (p, l) in entries {
        writeln!(text, "{p},{l}").expect("string write");
    }
    fs::write(path, text)?;
    Ok(())
}

/// Loads every cloud in a manifest and attaches its label.
pub fn load_dataset(manifest: &Path) -> Result<Vec<PointCloud>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|(p, l)| Ok(load_cloud(&p)?.with_class(l)))
        .collect()
}

/// One row of a metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// `epoch,split,metric,value` rows in the order they were recorded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricRow>,
}

impl MetricsLog {
    pub fn push(&mut self, epoch: usize, split: &str, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            epoch,
            split: split.into(),
            metric: metric.into(),
            value,
        });
    }

    /// Last recorded value of `split/metric`.
    pub fn last(&self, split: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.split == split && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn series(&self, split: &str, metric: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| (r.epoch, r.value))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,metric,value\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.epoch, r.split, r.metric, num(r.value))
                .expect("string write");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `x,y,z,value` rows for plotting a filter over the unit ball.
pub fn filter_scatter_csv(rows: &[[f64; 4]]) -> String {
    let mut out = String::from("x,y,z,value\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            num(r[0]),
            num(r[1]),
            num(r[2]),
            num(r[3])
        )
        .expect("string write");
    }
    out
}
