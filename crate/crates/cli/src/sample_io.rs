//! Field-sample CSV exchange format.
//!
//! A sample file is self-describing: a `# field:` comment line carries the
//! generating configuration as one JSON object, so `estimate` can recover the
//! true regression operator for error reporting without a second file. The
//! basis evaluation table is never serialized — the reader rebuilds it through
//! the library constructor, which re-validates orthonormality.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use funlat::experiments::ReportMeta;
use funlat::fields::{FieldSample, GeneratorSpec, PsiSpec};
use funlat::hilbert::{BasisSpec, FunctionalElement};
use funlat::lattice::LatticeCube;

pub const CSV_SCHEMA_SAMPLE: &str = "funlat.sample.v1";

/// Everything needed to reinterpret the numeric rows.
#[derive(Serialize, Deserialize)]
struct FieldMeta {
    cube: LatticeCube,
    spec: GeneratorSpec,
    psi: PsiSpec,
    noise_scale: f64,
}

/// Renders a sample as CSV: site coordinates, then regressor coefficients
/// `x1..xJ`, then response coefficients `y1..yJ`, one row per site in the
/// lattice's canonical (lexicographic) order.
pub fn sample_csv(sample: &FieldSample, meta: &ReportMeta) -> funlat::Result<String> {
    let field_meta = FieldMeta {
        cube: sample.cube.clone(),
        spec: sample.spec.clone(),
        psi: sample.psi.clone(),
        noise_scale: sample.noise_scale,
    };
    // to_value produces sorted keys, keeping the metadata line canonical.
    let field_json = serde_json::to_value(&field_meta)?;
    let dim = sample.cube.dim();
    let j = sample.spec.basis.j_max;
    let mut out = format!(
        "# schema: {CSV_SCHEMA_SAMPLE}\n# version: {}\n# config_hash: {}\n# seed: {}\n# field: {}\n",
        meta.version, meta.config_hash, meta.seed, field_json
    );
    for k in 1..=dim {
        let _ = write!(out, "s{k},");
    }
    for k in 1..=j {
        let _ = write!(out, "x{k},");
    }
    for k in 1..=j {
        let _ = write!(out, "y{k}");
        if k < j {
            out.push(',');
        }
    }
    out.push('\n');
    for (rank, (x, y)) in sample.x.iter().zip(&sample.y).enumerate() {
        for c in sample.cube.coords_of_rank(rank as u64) {
            let _ = write!(out, "{c},");
        }
        for v in &x.coeffs {
            let _ = write!(out, "{v},");
        }
        let mut first = true;
        for v in &y.coeffs {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads a sample CSV back, validating the site order and row count and
/// rebuilding the basis evaluation table.
pub fn read_sample_csv(path: &Path) -> funlat::Result<FieldSample> {
    let text = std::fs::read_to_string(path)?;
    let mut field_meta: Option<FieldMeta> = None;
    let mut header_seen = false;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(json) = rest.trim_start().strip_prefix("field:") {
                field_meta = Some(serde_json::from_str(json.trim())?);
            }
            continue;
        }
        if !header_seen {
            // Column-name line; the metadata comment already fixes the layout.
            header_seen = true;
            continue;
        }
        let meta = field_meta.as_ref().ok_or_else(|| {
            funlat::Error::Parse(format!(
                "{}: data row before the `# field:` metadata line",
                path.display()
            ))
        })?;
        let dim = meta.cube.dim();
        let j = meta.spec.basis.j_max;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 * j {
            return Err(funlat::Error::Parse(format!(
                "{}:{}: expected {} comma-separated values, found {}",
                path.display(),
                lineno + 1,
                dim + 2 * j,
                fields.len()
            )));
        }
        let parse = |s: &str| -> funlat::Result<f64> {
            s.parse::<f64>().map_err(|_| {
                funlat::Error::Parse(format!(
                    "{}:{}: `{s}` is not a number",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        let rank = x.len() as u64;
        if rank >= meta.cube.num_sites() {
            return Err(funlat::Error::Parse(format!(
                "{}:{}: more rows than lattice sites ({})",
                path.display(),
                lineno + 1,
                meta.cube.num_sites()
            )));
        }
        let expected = meta.cube.coords_of_rank(rank);
        for (k, want) in expected.iter().enumerate() {
            let got = fields[k].parse::<i64>().map_err(|_| {
                funlat::Error::Parse(format!(
                    "{}:{}: site coordinate `{}` is not an integer",
                    path.display(),
                    lineno + 1,
                    fields[k]
                ))
            })?;
            if got != *want {
                return Err(funlat::Error::Parse(format!(
                    "{}:{}: site coordinates out of order (expected {:?})",
                    path.display(),
                    lineno + 1,
                    expected
                )));
            }
        }
        let mut xc = Vec::with_capacity(j);
        for s in &fields[dim..dim + j] {
            xc.push(parse(s)?);
        }
        let mut yc = Vec::with_capacity(j);
        for s in &fields[dim + j..] {
            yc.push(parse(s)?);
        }
        x.push(FunctionalElement::new(xc));
        y.push(FunctionalElement::new(yc));
    }
    let mut meta = field_meta.ok_or_else(|| {
        funlat::Error::Parse(format!("{}: missing `# field:` metadata line", path.display()))
    })?;
    if x.len() as u64 != meta.cube.num_sites() {
        return Err(funlat::Error::Parse(format!(
            "{}: {} data rows but the lattice has {} sites",
            path.display(),
            x.len(),
            meta.cube.num_sites()
        )));
    }
    // The evaluation table is skipped during serialization; rebuild it.
    let basis = &meta.spec.basis;
    meta.spec.basis =
        BasisSpec::new(basis.family, basis.domain.clone(), basis.measure, basis.j_max)?;
    Ok(FieldSample {
        cube: meta.cube,
        x,
        y,
        spec: meta.spec,
        psi: meta.psi,
        noise_scale: meta.noise_scale,
    })
}
