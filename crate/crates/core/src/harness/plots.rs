//! Renderer-agnostic plot scripts.
//!
//! A script is a UTF-8 text file, one directive per line, `#` starts a
//! comment:
//!
//! ```text
//! plot 1                       # format version
//! title <text>
//! data <csv file in the run directory>
//! x <column>                   # header name in the CSV
//! y <column>
//! xlabel <text>
//! ylabel <text>
//! scale <lin|log> <lin|log>    # x then y
//! series <points|line> <label>
//! guide <slope> <label>        # straight line in the chosen scales through the first data point
//! ```
//!
//! Any plotting tool can render these; the directives carry no styling
//! beyond the series kind.

use super::manifest::{RunManifest, MANIFEST_NAME};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

struct Script {
    name: &'static str,
    title: String,
    data: &'static str,
    x: &'static str,
    y: &'static str,
    xlabel: &'static str,
    ylabel: &'static str,
    scale: (&'static str, &'static str),
    series: (&'static str, &'static str),
    guides: Vec<(f64, String)>,
}

impl Script {
    fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "plot 1");
        let _ = writeln!(out, "title {}", self.title);
        let _ = writeln!(out, "data {}", self.data);
        let _ = writeln!(out, "x {}", self.x);
        let _ = writeln!(out, "y {}", self.y);
        let _ = writeln!(out, "xlabel {}", self.xlabel);
        let _ = writeln!(out, "ylabel {}", self.ylabel);
        let _ = writeln!(out, "scale {} {}", self.scale.0, self.scale.1);
        let _ = writeln!(out, "series {} {}", self.series.0, self.series.1);
        for (slope, label) in &self.guides {
            let _ = writeln!(out, "guide {slope:.6} {label}");
        }
        out
    }
}

fn scripts_for(m: &RunManifest) -> Vec<Script> {
    let n = m.params.get("n").copied().unwrap_or(f64::NAN);
    let s = m.params.get("s").copied().unwrap_or(f64::NAN);
    let mut out = Vec::new();
    let has = |p: &str| m.files.iter().any(|f| f.path == p);
    if has("tails_upper.csv") {
        out.push(Script {
            name: "tails_upper.plot",
            title: "upper tail of the vertical integral".into(),
            data: "tails_upper.csv",
            x: "L",
            y: "norm",
            xlabel: "L",
            ylabel: "H1(D) norm",
            scale: ("log", "log"),
            series: ("points", "measured"),
            guides: vec![(2.0 - n - 2.0 * s, format!("2-n-2s = {:.3}", 2.0 - n - 2.0 * s))],
        });
    }
    if has("tails_lower.csv") {
        out.push(Script {
            name: "tails_lower.plot",
            title: "lower piece of the vertical integral".into(),
            data: "tails_lower.csv",
            x: "h",
            y: "norm",
            xlabel: "h",
            ylabel: "H1(D) norm",
            scale: ("log", "log"),
            series: ("points", "measured"),
            guides: vec![(1.0 - s, format!("1-s = {:.3}", 1.0 - s))],
        });
    }
    if has("decay.csv") {
        out.push(Script {
            name: "decay.plot",
            title: "vertical decay of the extension".into(),
            data: "decay.csv",
            x: "y",
            y: "sup",
            xlabel: "y",
            ylabel: "sup |u(., y)|",
            scale: ("log", "log"),
            series: ("points", "measured"),
            guides: vec![(-n, format!("-n = {:.0}", -n))],
        });
    }
    if has("cost_curve.csv") {
        out.push(Script {
            name: "cost_curve.plot",
            title: "control cost against achieved error".into(),
            data: "cost_curve.csv",
            x: "achieved",
            y: "cost",
            xlabel: "achieved error",
            ylabel: "control norm",
            scale: ("log", "log"),
            series: ("line", "spectral cutoff"),
            guides: Vec::new(),
        });
    }
    if has("chain.csv") {
        out.push(Script {
            name: "chain.plot",
            title: "weighted norms along the ball chain".into(),
            data: "chain.csv",
            x: "index",
            y: "n2",
            xlabel: "ball index",
            ylabel: "norm on B_2r",
            scale: ("lin", "log"),
            series: ("line", "chain"),
            guides: Vec::new(),
        });
    }
    if has("stability.csv") {
        out.push(Script {
            name: "stability.plot",
            title: "fractional against local DtN distance".into(),
            data: "stability.csv",
            x: "delta_s",
            y: "delta_1",
            xlabel: "delta_s",
            ylabel: "delta_1",
            scale: ("log", "log"),
            series: ("points", "bump ladder"),
            guides: Vec::new(),
        });
    }
    out
}

/// Writes one script per plottable CSV in the run and records them in the
/// manifest. Fails with a listing error on a directory without a manifest
/// or when a listed CSV is missing.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut m = RunManifest::read(run_dir)?;
    for f in &m.files {
        if f.path.ends_with(".csv") && !run_dir.join(&f.path).is_file() {
            return Err(Error::Listing(format!("{} is listed but missing", f.path)));
        }
    }
    let scripts = scripts_for(&m);
    let mut written = Vec::new();
    for sc in scripts {
        let text = sc.render();
        let p = run_dir.join(sc.name);
        std::fs::write(&p, &text)?;
        m.files.retain(|f| f.path != sc.name);
        m.files.push(super::manifest::FileEntry {
            path: sc.name.to_string(),
            digest: super::manifest::digest_bytes(text.as_bytes()),
        });
        written.push(p);
    }
    std::fs::write(run_dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::manifest::RunWriter;

    #[test]
    fn tails_scripts_carry_reference_guides() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(dir.path()).unwrap();
        for name in ["tails_upper.csv", "tails_lower.csv"] {
            w.file(name, |b| {
                b.extend_from_slice(b"L,norm\n1,1\n2,0.5\n");
                Ok(())
            })
            .unwrap();
        }
        w.param("n", 2.0);
        w.param("s", 0.75);
        w.finish("h".into(), "tails", 0, 0).unwrap();
        let out = emit_plots(dir.path()).unwrap();
        assert_eq!(out.len(), 2);
        let up = std::fs::read_to_string(dir.path().join("tails_upper.plot")).unwrap();
        assert!(up.contains("guide -1.500000"));
        let lo = std::fs::read_to_string(dir.path().join("tails_lower.plot")).unwrap();
        assert!(lo.contains("guide 0.250000"));
        let again = emit_plots(dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(&again[0]).unwrap(), up);
    }

    #[test]
    fn empty_dir_and_missing_csv() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plots(dir.path()), Err(Error::Listing(_))));
        let mut w = RunWriter::create(dir.path()).unwrap();
        w.file("decay.csv", |b| {
            b.extend_from_slice(b"y,sup\n");
            Ok(())
        })
        .unwrap();
        w.finish("h".into(), "tails", 0, 0).unwrap();
        std::fs::remove_file(dir.path().join("decay.csv")).unwrap();
        assert!(matches!(emit_plots(dir.path()), Err(Error::Listing(_))));
    }
}
