//! Multi-site observational data. Rows never leave their site; all cross-site
//! computation goes through [`crate::access::SiteAccess`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TARGET_SITE: usize = 0;

/// One observed tuple `(Y, X, A, S)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub y: f64,
    pub x: Vec<f64>,
    pub a: u8,
    pub s: usize,
}

impl Individual {
    pub fn new(y: f64, x: Vec<f64>, a: u8, s: usize) -> Result<Self> {
        if a > 1 {
            return Err(Error::InvalidObservation(format!("treatment {a} is not 0/1")));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidObservation("non-finite coordinate".into()));
        }
        if x.is_empty() {
            return Err(Error::InvalidObservation("empty covariate vector".into()));
        }
        Ok(Self { y, x, a, s })
    }

    #[inline]
    pub fn treated(&self) -> bool {
        self.a == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteDataset {
    site_id: usize,
    rows: Vec<Individual>,
}

impl SiteDataset {
    pub fn new(site_id: usize, rows: Vec<Individual>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySite(site_id));
        }
        let p = rows[0].x.len();
        for r in &rows {
            if r.s != site_id {
                return Err(Error::InvalidObservation(format!(
                    "row labelled site {} inside site {site_id}",
                    r.s
                )));
            }
            if r.x.len() != p {
                return Err(Error::DimensionMismatch {
                    site: site_id,
                    expected: p,
                    found: r.x.len(),
                });
            }
        }
        Ok(Self { site_id, rows })
    }

    pub fn site_id(&self) -> usize {
        self.site_id
    }

    pub fn rows(&self) -> &[Individual] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.rows[0].x.len()
    }

    pub fn arm_counts(&self) -> (usize, usize) {
        let treated = self.rows.iter().filter(|r| r.treated()).count();
        (self.rows.len() - treated, treated)
    }

    pub fn arm(&self, a: u8) -> impl Iterator<Item = &Individual> {
        self.rows.iter().filter(move |r| r.a == a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSiteData {
    sites: BTreeMap<usize, SiteDataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteArmCounts {
    pub site: usize,
    pub n: usize,
    pub control: usize,
    pub treated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub p: usize,
    pub n: usize,
    pub sites: Vec<SiteArmCounts>,
}

impl MultiSiteData {
    /// Builds the collection without validation; see [`validate_multisite`].
    pub fn new(sites: impl IntoIterator<Item = SiteDataset>) -> Self {
        Self {
            sites: sites.into_iter().map(|s| (s.site_id(), s)).collect(),
        }
    }

    /// Partitions loose rows by their site label.
    pub fn from_rows(rows: Vec<Individual>) -> Result<Self> {
        let mut by_site: BTreeMap<usize, Vec<Individual>> = BTreeMap::new();
        for r in rows {
            by_site.entry(r.s).or_default().push(r);
        }
        let sites = by_site
            .into_iter()
            .map(|(k, rows)| SiteDataset::new(k, rows))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(sites))
    }

    pub fn site(&self, k: usize) -> Option<&SiteDataset> {
        self.sites.get(&k)
    }

    pub fn site_ids(&self) -> Vec<usize> {
        self.sites.keys().copied().collect()
    }

    pub fn sites(&self) -> impl Iterator<Item = &SiteDataset> {
        self.sites.values()
    }

    pub fn target(&self) -> Option<&SiteDataset> {
        self.site(TARGET_SITE)
    }

    pub fn n(&self) -> usize {
        self.sites.values().map(|s| s.n()).sum()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn p(&self) -> usize {
        self.sites.values().next().map(|s| s.p()).unwrap_or(0)
    }

    /// Restriction to a subset of sites (ids that are absent are ignored).
    pub fn subset(&self, ids: &[usize]) -> Self {
        Self {
            sites: self
                .sites
                .iter()
                .filter(|(k, _)| ids.contains(k))
                .map(|(k, s)| (*k, s.clone()))
                .collect(),
        }
    }

    /// Returns a copy with `f` applied to every outcome.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Self {
        let sites = self
            .sites
            .values()
            .map(|s| SiteDataset {
                site_id: s.site_id,
                rows: s
                    .rows
                    .iter()
                    .map(|r| Individual { y: f(r.y), ..r.clone() })
                    .collect(),
            })
            .collect::<Vec<_>>();
        Self::new(sites)
    }
}

/// Checks the target is present, every site has both arms and a common
/// covariate dimension.
pub fn validate_multisite(data: &MultiSiteData) -> Result<ValidationReport> {
    let target = data.target().ok_or(Error::MissingTargetSite)?;
    let p = target.p();
    let mut sites = Vec::with_capacity(data.n_sites());
    for site in data.sites() {
        if site.p() != p {
            return Err(Error::DimensionMismatch {
                site: site.site_id(),
                expected: p,
                found: site.p(),
            });
        }
        let (control, treated) = site.arm_counts();
        if control == 0 {
            return Err(Error::EmptyTreatmentArm { site: site.site_id(), arm: 0 });
        }
        if treated == 0 {
            return Err(Error::EmptyTreatmentArm { site: site.site_id(), arm: 1 });
        }
        sites.push(SiteArmCounts { site: site.site_id(), n: site.n(), control, treated });
    }
    Ok(ValidationReport { p, n: data.n(), sites })
}

fn schema_err(file: &Path, row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        file: file.display().to_string(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Reads one site file with header `y,a,x1,...,xp`. Missing values are rejected.
pub fn read_site_csv(path: &Path, site_id: usize) -> Result<SiteDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => schema_err(path, 0, "", format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| schema_err(path, 0, "", e.to_string()))?
        .clone();
    if headers.len() < 3 {
        return Err(schema_err(path, 0, "", "expected header y,a,x1,...,xp with p >= 1"));
    }
    for (j, h) in headers.iter().enumerate() {
        let expected = match j {
            0 => "y".to_string(),
            1 => "a".to_string(),
            _ => format!("x{}", j - 1),
        };
        if h != expected {
            return Err(schema_err(path, 0, h, format!("expected column `{expected}`")));
        }
    }
    let p = headers.len() - 2;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| schema_err(path, line, "", e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(schema_err(path, line, "", format!("expected {} fields", headers.len())));
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (j, field) in rec.iter().enumerate() {
            let col = &headers[j];
            if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
                return Err(schema_err(path, line, col, "missing value"));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| schema_err(path, line, col, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(schema_err(path, line, col, "non-finite value"));
            }
            vals.push(v);
        }
        let a = match vals[1] {
            v if v == 0.0 => 0,
            v if v == 1.0 => 1,
            v => return Err(schema_err(path, line, "a", format!("treatment {v} is not 0/1"))),
        };
        let x = vals[2..2 + p].to_vec();
        rows.push(Individual { y: vals[0], x, a, s: site_id });
    }
    if rows.is_empty() {
        return Err(Error::EmptySite(site_id));
    }
    SiteDataset::new(site_id, rows)
}

/// Parses `site_<k>.csv` into `k`.
pub fn site_id_from_filename(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("site_")?.strip_suffix(".csv")?.parse().ok()
}

/// Loads every `site_<k>.csv` in a directory.
pub fn read_site_dir(dir: &Path) -> Result<MultiSiteData> {
    let mut files: Vec<(usize, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter_map(|p| site_id_from_filename(&p).map(|k| (k, p)))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no site_<k>.csv files in {}", dir.display())));
    }
    let sites = files
        .iter()
        .map(|(k, p)| read_site_csv(p, *k))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiSiteData::new(sites))
}

pub fn write_site_csv(path: &Path, site: &SiteDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let mut header = vec!["y".to_string(), "a".to_string()];
    header.extend((1..=site.p()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for r in site.rows() {
        let mut rec = vec![r.y.to_string(), r.a.to_string()];
        rec.extend(r.x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
