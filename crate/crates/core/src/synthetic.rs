// Copyright 2026 The Skyjoin Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Deterministic synthetic catalogs with planted cross-matches.
//!
//! The survey mimics three catalogs observed around a common field: an
//! optical catalog with Cartesian coordinates, an ultraviolet catalog and
//! an infrared catalog with per-detection errors and a partial footprint.
//! A shared population of true objects is observed by each survey with
//! Gaussian astrometric scatter; the rest of every catalog is unrelated
//! field detections.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::{self, Region, SkyCoord, UnitVector, ARCSEC};
use crate::store::{self, CatalogSchema, CatalogTable, Column, ColumnDef, ColumnType, CoordSpec, StoreError};

#[derive(Debug, Clone)]
pub struct SurveyConfig {
    pub seed: u64,
    pub rows: usize,
    pub center_ra: f64,
    pub center_dec: f64,
    /// Radius of the simulated field, arcmin.
    pub field_arcmin: f64,
    /// True objects seen by the optical survey.
    pub objects: usize,
    /// Objects whose ultraviolet detection is split into two close ones.
    pub doubles: usize,
    pub sdss_sigma: f64,
    pub galex_sigma: f64,
    /// Per-detection infrared errors are drawn from this range, arcsec.
    pub twomass_sigma: (f64, f64),
    /// Infrared footprint circle: ra, dec, radius arcmin.
    pub twomass_footprint: (f64, f64, f64),
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            seed: 2026,
            rows: 1000,
            center_ra: 180.0,
            center_dec: 0.0,
            field_arcmin: 75.0,
            objects: 600,
            doubles: 20,
            sdss_sigma: 0.1,
            galex_sigma: 0.2,
            twomass_sigma: (0.3, 0.8),
            twomass_footprint: (180.3, 0.1, 55.0),
        }
    }
}

/// Which detections belong to one true object.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedObject {
    pub sdss: i64,
    pub galex: Vec<i64>,
    pub twomass: Option<i64>,
}

#[derive(Debug, Clone)]
pub struct Survey {
    pub sdss: CatalogTable,
    pub galex: CatalogTable,
    pub twomass: CatalogTable,
    pub planted: Vec<PlantedObject>,
}

pub fn sdss_schema() -> CatalogSchema {
    schema(
        "SDSS",
        "PhotoObjAll",
        &[
            ("ObjID", ColumnType::Int64),
            ("RA", ColumnType::Float64),
            ("Dec", ColumnType::Float64),
            ("Cx", ColumnType::Float64),
            ("Cy", ColumnType::Float64),
            ("Cz", ColumnType::Float64),
            ("mag_g", ColumnType::Float64),
            ("mag_r", ColumnType::Float64),
            ("mag_i", ColumnType::Float64),
            ("Galaxy", ColumnType::Int64),
        ],
        CoordSpec::Cartesian { cx: "Cx".into(), cy: "Cy".into(), cz: "Cz".into() },
    )
}

pub fn galex_schema() -> CatalogSchema {
    schema(
        "GALEX",
        "PhotoObjAll",
        &[
            ("ObjID", ColumnType::Int64),
            ("RA", ColumnType::Float64),
            ("Dec", ColumnType::Float64),
            ("mag_nuv", ColumnType::Float64),
            ("mag_fuv", ColumnType::Float64),
        ],
        CoordSpec::Spherical { ra: "RA".into(), dec: "Dec".into() },
    )
}

pub fn twomass_schema(cfg: &SurveyConfig) -> CatalogSchema {
    let mut s = schema(
        "TwoMASS",
        "PhotoXSC",
        &[
            ("ObjID", ColumnType::Int64),
            ("RA", ColumnType::Float64),
            ("Dec", ColumnType::Float64),
            ("err", ColumnType::Float64),
            ("mag_J", ColumnType::Float64),
            ("mag_H", ColumnType::Float64),
            ("mag_K", ColumnType::Float64),
        ],
        CoordSpec::Spherical { ra: "RA".into(), dec: "Dec".into() },
    );
    s.error_column = Some("err".into());
    s.sigma_floor_arcsec = Some(cfg.twomass_sigma.0);
    let (ra, dec, r) = cfg.twomass_footprint;
    s.footprint = Some(Region::circle(ra, dec, r).expect("valid footprint"));
    s
}

fn schema(dataset: &str, table: &str, cols: &[(&str, ColumnType)], coords: CoordSpec) -> CatalogSchema {
    CatalogSchema {
        dataset: dataset.into(),
        table: table.into(),
        columns: cols.iter().map(|(n, t)| ColumnDef { name: (*n).into(), ty: *t }).collect(),
        key_columns: vec!["ObjID".into()],
        coords,
        error_column: None,
        sigma_floor_arcsec: None,
        footprint: None,
    }
}

/// Uniform random direction within `radius_rad` of `center`.
pub fn random_in_cap(rng: &mut impl Rng, center: &UnitVector, radius_rad: f64) -> UnitVector {
    let cos_rho = 1.0 - rng.gen::<f64>() * (1.0 - radius_rad.cos());
    let rho = cos_rho.clamp(-1.0, 1.0).acos();
    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
    offset(center, rho * phi.cos(), rho * phi.sin())
}

/// Moves `p` by small tangent-plane displacements (radians) along east and north.
pub fn offset(p: &UnitVector, east: f64, north: f64) -> UnitVector {
    let [x, y, z] = p.to_array();
    let (e, n) = tangent_basis(x, y, z);
    let rho = east.hypot(north);
    if rho == 0.0 {
        return *p;
    }
    let (s, c) = rho.sin_cos();
    let d = [
        (east * e[0] + north * n[0]) / rho,
        (east * e[1] + north * n[1]) / rho,
        (east * e[2] + north * n[2]) / rho,
    ];
    UnitVector::new(c * x + s * d[0], c * y + s * d[1], c * z + s * d[2]).expect("unit")
}

fn tangent_basis(x: f64, y: f64, z: f64) -> ([f64; 3], [f64; 3]) {
    let h = x.hypot(y);
    if h < 1e-12 {
        return ([0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]);
    }
    let e = [-y / h, x / h, 0.0];
    let n = [-z * x / h, -z * y / h, h];
    (e, n)
}

/// Isotropic Gaussian scatter with per-axis `sigma_arcsec`.
pub fn scatter(rng: &mut impl Rng, p: &UnitVector, sigma_arcsec: f64) -> UnitVector {
    let s = sigma_arcsec * ARCSEC;
    let east: f64 = rng.sample(StandardNormal);
    let north: f64 = rng.sample(StandardNormal);
    offset(p, east * s, north * s)
}

/// Uniform points over the whole sphere.
pub fn random_sphere(rng: &mut impl Rng) -> UnitVector {
    let z = 2.0 * rng.gen::<f64>() - 1.0;
    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
    let r = (1.0 - z * z).max(0.0).sqrt();
    UnitVector::new(r * phi.cos(), r * phi.sin(), z).expect("unit")
}

fn mag(rng: &mut impl Rng) -> f64 {
    (rng.gen_range(14.0..22.0f64) * 1000.0).round() / 1000.0
}

fn coords(p: &UnitVector) -> (f64, f64) {
    let c = geometry::from_unit_vector(*p).expect("unit");
    (c.ra(), c.dec())
}

struct Detection {
    pos: UnitVector,
    object: Option<usize>,
    sigma: f64,
}

pub fn generate(cfg: &SurveyConfig) -> Survey {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let center = geometry::to_unit_vector(SkyCoord::new(cfg.center_ra, cfg.center_dec).expect("center"));
    let field = cfg.field_arcmin / 60.0 * std::f64::consts::PI / 180.0;
    let footprint = twomass_schema(cfg).footprint.expect("footprint");

    let truth: Vec<UnitVector> = (0..cfg.objects).map(|_| random_in_cap(&mut rng, &center, field)).collect();

    let mut sdss = Vec::new();
    let mut galex = Vec::new();
    let mut twomass = Vec::new();
    for (i, p) in truth.iter().enumerate() {
        sdss.push(Detection { pos: scatter(&mut rng, p, cfg.sdss_sigma), object: Some(i), sigma: cfg.sdss_sigma });
        if rng.gen_bool(0.85) {
            galex.push(Detection { pos: scatter(&mut rng, p, cfg.galex_sigma), object: Some(i), sigma: cfg.galex_sigma });
            if i < cfg.doubles {
                galex.push(Detection { pos: scatter(&mut rng, p, cfg.galex_sigma), object: Some(i), sigma: cfg.galex_sigma });
            }
        }
        if footprint.contains(p) && rng.gen_bool(0.7) {
            let sigma = (rng.gen_range(cfg.twomass_sigma.0..cfg.twomass_sigma.1) * 100.0).round() / 100.0;
            twomass.push(Detection { pos: scatter(&mut rng, p, sigma), object: Some(i), sigma });
        }
    }
    let fill = |rng: &mut ChaCha8Rng, dets: &mut Vec<Detection>, sigma: (f64, f64), in_footprint: bool| {
        while dets.len() < cfg.rows {
            let pos = random_in_cap(rng, &center, field);
            if in_footprint && !footprint.contains(&pos) {
                continue;
            }
            let s = if sigma.0 == sigma.1 {
                sigma.0
            } else {
                (rng.gen_range(sigma.0..sigma.1) * 100.0).round() / 100.0
            };
            dets.push(Detection { pos, object: None, sigma: s });
        }
        dets.truncate(cfg.rows);
        dets.shuffle(rng);
    };
    fill(&mut rng, &mut sdss, (cfg.sdss_sigma, cfg.sdss_sigma), false);
    fill(&mut rng, &mut galex, (cfg.galex_sigma, cfg.galex_sigma), false);
    fill(&mut rng, &mut twomass, cfg.twomass_sigma, true);

    let mut planted: Vec<PlantedObject> = (0..cfg.objects)
        .map(|_| PlantedObject { sdss: -1, galex: Vec::new(), twomass: None })
        .collect();

    let sdss_id = |i: usize| 1_237_650_000_000 + i as i64 * 7;
    let galex_id = |i: usize| 6_371_000_000 + i as i64 * 3;
    let twomass_id = |i: usize| 40_000_000 + i as i64;

    let mut cols = empty_columns(&sdss_schema());
    for (row, d) in sdss.iter().enumerate() {
        let id = sdss_id(row);
        if let Some(o) = d.object {
            planted[o].sdss = id;
        }
        let (ra, dec) = coords(&d.pos);
        let [x, y, z] = d.pos.to_array();
        push_row(
            &mut cols,
            &[
                Cell::I(id),
                Cell::F(ra),
                Cell::F(dec),
                Cell::F(x),
                Cell::F(y),
                Cell::F(z),
                Cell::F(mag(&mut rng)),
                Cell::F(mag(&mut rng)),
                Cell::F(mag(&mut rng)),
                Cell::I(rng.gen_range(0..2)),
            ],
        );
    }
    let sdss_table = CatalogTable::from_columns(sdss_schema(), cols, None).expect("valid synthetic table");

    let mut cols = empty_columns(&galex_schema());
    for (row, d) in galex.iter().enumerate() {
        let id = galex_id(row);
        if let Some(o) = d.object {
            planted[o].galex.push(id);
        }
        let (ra, dec) = coords(&d.pos);
        // some ultraviolet magnitudes are missing
        let fuv = if rng.gen_bool(0.1) { Cell::Null } else { Cell::F(mag(&mut rng)) };
        push_row(&mut cols, &[Cell::I(id), Cell::F(ra), Cell::F(dec), Cell::F(mag(&mut rng)), fuv]);
    }
    let galex_table = CatalogTable::from_columns(galex_schema(), cols, None).expect("valid synthetic table");

    let mut cols = empty_columns(&twomass_schema(cfg));
    for (row, d) in twomass.iter().enumerate() {
        let id = twomass_id(row);
        if let Some(o) = d.object {
            planted[o].twomass = Some(id);
        }
        let (ra, dec) = coords(&d.pos);
        push_row(
            &mut cols,
            &[
                Cell::I(id),
                Cell::F(ra),
                Cell::F(dec),
                Cell::F(d.sigma),
                Cell::F(mag(&mut rng)),
                Cell::F(mag(&mut rng)),
                Cell::F(mag(&mut rng)),
            ],
        );
    }
    let twomass_table = CatalogTable::from_columns(twomass_schema(cfg), cols, None).expect("valid synthetic table");

    for p in &mut planted {
        p.galex.sort_unstable();
    }
    Survey {
        sdss: sdss_table,
        galex: galex_table,
        twomass: twomass_table,
        planted,
    }
}

/// A single-table catalog of `rows` uniform detections over the sphere.
pub fn uniform_catalog(dataset: &str, table: &str, rows: usize, seed: u64) -> CatalogTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = schema(
        dataset,
        table,
        &[("id", ColumnType::Int64), ("ra", ColumnType::Float64), ("dec", ColumnType::Float64)],
        CoordSpec::Spherical { ra: "ra".into(), dec: "dec".into() },
    );
    s.key_columns = vec!["id".into()];
    let mut ids = Vec::with_capacity(rows);
    let mut ras = Vec::with_capacity(rows);
    let mut decs = Vec::with_capacity(rows);
    for i in 0..rows {
        let (ra, dec) = coords(&random_sphere(&mut rng));
        ids.push(Some(i as i64));
        ras.push(Some(ra));
        decs.push(Some(dec));
    }
    CatalogTable::from_columns(s, vec![Column::Int64(ids), Column::Float64(ras), Column::Float64(decs)], None)
        .expect("valid synthetic table")
}

enum Cell {
    I(i64),
    F(f64),
    Null,
}

fn empty_columns(schema: &CatalogSchema) -> Vec<Column> {
    schema
        .columns
        .iter()
        .map(|c| match c.ty {
            ColumnType::Int64 => Column::Int64(Vec::new()),
            ColumnType::Float64 => Column::Float64(Vec::new()),
            ColumnType::Text => Column::Text(Vec::new()),
        })
        .collect()
}

fn push_row(cols: &mut [Column], cells: &[Cell]) {
    for (col, cell) in cols.iter_mut().zip(cells) {
        match (col, cell) {
            (Column::Int64(v), Cell::I(i)) => v.push(Some(*i)),
            (Column::Float64(v), Cell::F(x)) => v.push(Some(*x)),
            (Column::Int64(v), Cell::Null) => v.push(None),
            (Column::Float64(v), Cell::Null) => v.push(None),
            _ => unreachable!("cell type follows schema"),
        }
    }
}

/// Writes the survey as CSV files plus a catalog config into `dir`.
pub fn write_bundle(survey: &Survey, cfg: &SurveyConfig, dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(|e| StoreError::Io { path: dir.to_path_buf(), source: e })?;
    store::export(&survey.sdss, &dir.join("sdss.csv"))?;
    store::export(&survey.galex, &dir.join("galex.csv"))?;
    store::export(&survey.twomass, &dir.join("twomass.csv"))?;
    let (fra, fdec, fr) = cfg.twomass_footprint;
    let mut text = String::new();
    let _ = writeln!(text, "# Synthetic survey, seed {}, {} rows per catalog.\n", cfg.seed, cfg.rows);
    text.push_str(&section(&sdss_schema(), "sdss.csv", "cx = \"Cx\"\ncy = \"Cy\"\ncz = \"Cz\"\n"));
    text.push_str(&section(&galex_schema(), "galex.csv", "ra = \"RA\"\ndec = \"Dec\"\n"));
    let extra = format!(
        "ra = \"RA\"\ndec = \"Dec\"\nerr = \"err\"\nerr_floor = {:?}\nfootprint = [[{fra:?}, {fdec:?}, {fr:?}]]\n",
        cfg.twomass_sigma.0
    );
    text.push_str(&section(&twomass_schema(cfg), "twomass.csv", &extra));
    let path = dir.join("catalogs.toml");
    fs::write(&path, text).map_err(|e| StoreError::Io { path, source: e })
}

fn section(schema: &CatalogSchema, file: &str, coords: &str) -> String {
    let cols: Vec<String> = schema
        .columns
        .iter()
        .map(|c| {
            let ty = match c.ty {
                ColumnType::Int64 => "int64",
                ColumnType::Float64 => "float64",
                ColumnType::Text => "text",
            };
            format!("{} = \"{ty}\"", c.name)
        })
        .collect();
    format!(
        "[{}]\nfile = \"{file}\"\ntable = \"{}\"\nkey = \"ObjID\"\n{coords}columns = {{ {} }}\n\n",
        schema.dataset,
        schema.table,
        cols.join(", ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let cfg = SurveyConfig::default();
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.sdss.row_count(), 1000);
        assert_eq!(a.galex.row_count(), 1000);
        assert_eq!(a.twomass.row_count(), 1000);
        assert_eq!(a.planted, b.planted);
        assert!(a.planted.iter().all(|p| p.sdss > 0));
        assert!(a.planted.iter().any(|p| p.galex.len() == 2));
        assert!(a.planted.iter().any(|p| p.twomass.is_some()));
    }

    #[test]
    fn offsets_are_small_displacements() {
        let p = geometry::to_unit_vector(SkyCoord::new(10.0, 45.0).unwrap());
        let q = offset(&p, 3.0 * ARCSEC, 4.0 * ARCSEC);
        assert!((geometry::angular_distance(&p, &q) / ARCSEC - 5.0).abs() < 1e-6);
        let north = offset(&p, 0.0, 3600.0 * ARCSEC);
        assert!((north.dec_deg() - 46.0).abs() < 1e-9);
    }

    #[test]
    fn bundle_round_trips_through_config() {
        let cfg = SurveyConfig { rows: 200, objects: 100, doubles: 5, ..SurveyConfig::default() };
        let survey = generate(&cfg);
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&survey, &cfg, dir.path()).unwrap();
        let reg = store::load_registry(&dir.path().join("catalogs.toml")).unwrap();
        let t = reg.get("twomass", "photoxsc").unwrap();
        assert_eq!(t.row_count(), 200);
        assert_eq!(t.positions(), survey.twomass.positions());
        assert_eq!(t.schema(), survey.twomass.schema());
        let s = reg.get("SDSS", "PhotoObjAll").unwrap();
        assert_eq!(s.positions(), survey.sdss.positions());
    }
}
