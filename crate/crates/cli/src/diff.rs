//! Cell-wise comparison of two run directories.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::run::read_manifest;
use crate::CliError;

/// Manifest fields that legitimately change between reruns.
const VOLATILE: [&str; 3] = ["wall_time_s", "workers", "files"];
const MAX_LISTED: usize = 20;

#[derive(Debug, Clone, Default)]
pub struct FileDiff {
    pub name: String,
    pub compared: usize,
    pub mismatches: usize,
    pub max_rel: f64,
    /// First few differing locations, as "row:column a != b".
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct DiffReport {
    pub manifest: Vec<String>,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
    pub files: Vec<FileDiff>,
}

impl DiffReport {
    pub fn identical(&self) -> bool {
        self.manifest.is_empty() && self.only_in_a.is_empty() && self.only_in_b.is_empty() && self.files.iter().all(|f| f.mismatches == 0)
    }
}

impl fmt::Display for DiffReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.manifest {
            writeln!(f, "manifest: {m}")?;
        }
        for n in &self.only_in_a {
            writeln!(f, "only in first run: {n}")?;
        }
        for n in &self.only_in_b {
            writeln!(f, "only in second run: {n}")?;
        }
        for d in &self.files {
            if d.mismatches == 0 {
                writeln!(f, "{}: identical ({} cells)", d.name, d.compared)?;
            } else {
                writeln!(f, "{}: {} of {} cells differ, max relative difference {:.3e}", d.name, d.mismatches, d.compared, d.max_rel)?;
                for e in &d.examples {
                    writeln!(f, "  {e}")?;
                }
            }
        }
        if self.identical() {
            writeln!(f, "runs agree")?;
        }
        Ok(())
    }
}

fn file_names(m: &Value) -> BTreeSet<String> {
    m["files"].as_array().map(|a| a.iter().filter_map(|f| f["name"].as_str().map(String::from)).collect()).unwrap_or_default()
}

/// Compare two runs. Numeric cells match when |a − b| ≤ rtol·max(|a|, |b|).
pub fn diff_runs(a: &Path, b: &Path, rtol: f64) -> Result<DiffReport, CliError> {
    let (ma, mb) = (read_manifest(a)?, read_manifest(b)?);
    let mut rep = DiffReport::default();
    if let (Value::Object(oa), Value::Object(ob)) = (&ma, &mb) {
        let keys: BTreeSet<&String> = oa.keys().chain(ob.keys()).collect();
        for k in keys {
            if VOLATILE.contains(&k.as_str()) {
                continue;
            }
            let (x, y) = (oa.get(k).unwrap_or(&Value::Null), ob.get(k).unwrap_or(&Value::Null));
            if x != y {
                rep.manifest.push(format!("{k}: {x} != {y}"));
            }
        }
    }
    let (fa, fb) = (file_names(&ma), file_names(&mb));
    rep.only_in_a = fa.difference(&fb).cloned().collect();
    rep.only_in_b = fb.difference(&fa).cloned().collect();
    for name in fa.intersection(&fb) {
        let (x, y) = (fs::read(a.join(name))?, fs::read(b.join(name))?);
        let mut d = FileDiff { name: name.clone(), ..FileDiff::default() };
        if name.ends_with(".csv") {
            diff_csv(&String::from_utf8_lossy(&x), &String::from_utf8_lossy(&y), rtol, &mut d);
        } else if name.ends_with(".json") {
            match (serde_json::from_slice::<Value>(&x), serde_json::from_slice::<Value>(&y)) {
                (Ok(vx), Ok(vy)) => diff_json("$", &vx, &vy, rtol, &mut d),
                _ => bytes(&x, &y, &mut d),
            }
        } else {
            bytes(&x, &y, &mut d);
        }
        rep.files.push(d);
    }
    Ok(rep)
}

fn bytes(x: &[u8], y: &[u8], d: &mut FileDiff) {
    d.compared = 1;
    if x != y {
        d.mismatches = 1;
        d.examples.push(format!("contents differ ({} vs {} bytes)", x.len(), y.len()));
    }
}

fn cell(loc: String, x: &str, y: &str, rtol: f64, d: &mut FileDiff) {
    d.compared += 1;
    let same = match (x.trim().parse::<f64>(), y.trim().parse::<f64>()) {
        (Ok(u), Ok(v)) => {
            let rel = if u == v || (u.is_nan() && v.is_nan()) { 0.0 } else { (u - v).abs() / u.abs().max(v.abs()) };
            d.max_rel = d.max_rel.max(rel);
            rel <= rtol
        }
        _ => x == y,
    };
    if !same {
        d.mismatches += 1;
        if d.examples.len() < MAX_LISTED {
            d.examples.push(format!("{loc} {x} != {y}"));
        }
    }
}

fn diff_csv(x: &str, y: &str, rtol: f64, d: &mut FileDiff) {
    let (lx, ly): (Vec<&str>, Vec<&str>) = (x.lines().collect(), y.lines().collect());
    let header: Vec<&str> = lx.iter().find(|l| !l.starts_with('#')).map(|l| l.split(',').collect()).unwrap_or_default();
    if lx.len() != ly.len() {
        d.mismatches += 1;
        d.examples.push(format!("{} vs {} lines", lx.len(), ly.len()));
    }
    for (i, (a, b)) in lx.iter().zip(&ly).enumerate() {
        let (ca, cb): (Vec<&str>, Vec<&str>) = (a.split(',').collect(), b.split(',').collect());
        if ca.len() != cb.len() {
            d.compared += 1;
            d.mismatches += 1;
            d.examples.push(format!("line {}: {} vs {} cells", i + 1, ca.len(), cb.len()));
            continue;
        }
        for (j, (u, v)) in ca.iter().zip(&cb).enumerate() {
            let col = header.get(j).copied().unwrap_or("?");
            cell(format!("line {}:{col}", i + 1), u, v, rtol, d);
        }
    }
}

fn diff_json(path: &str, x: &Value, y: &Value, rtol: f64, d: &mut FileDiff) {
    match (x, y) {
        (Value::Object(a), Value::Object(b)) => {
            let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
            for k in keys {
                diff_json(&format!("{path}.{k}"), a.get(k).unwrap_or(&Value::Null), b.get(k).unwrap_or(&Value::Null), rtol, d);
            }
        }
        (Value::Array(a), Value::Array(b)) if a.len() == b.len() => {
            for (i, (u, v)) in a.iter().zip(b).enumerate() {
                diff_json(&format!("{path}[{i}]"), u, v, rtol, d);
            }
        }
        (Value::Number(u), Value::Number(v)) => cell(path.to_string(), &u.to_string(), &v.to_string(), rtol, d),
        _ => cell(path.to_string(), &x.to_string(), &y.to_string(), rtol, d),
    }
}
