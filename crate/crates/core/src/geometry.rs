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

//! Spherical geometry on the celestial sphere.
//!
//! Directions are stored as Cartesian unit vectors; equatorial coordinates
//! (RA, Dec) are in degrees. The zone helpers implement the declination-band
//! hashing used to generate candidate pairs without an all-pairs scan:
//! detections are bucketed by `zone_of`, a search visits the bands returned by
//! `zone_window`, and inside each band only an RA interval of half-width
//! `ra_window` is inspected. Both windows are conservative; callers always
//! finish with an exact `angular_distance` test.

use std::f64::consts::PI;
use std::fmt;
use std::ops::RangeInclusive;

use thiserror::Error;

/// Tolerance applied when normalizing and validating unit vectors.
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// Slack added to region radii so that points exactly on a circle, which may
/// land a few ulps outside after trigonometry, are still contained.
const BOUNDARY_SLACK_RAD: f64 = 1e-14;

pub const ARCSEC: f64 = PI / (180.0 * 3600.0);
pub const ARCMIN: f64 = PI / (180.0 * 60.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("declination {0} outside [-90, 90]")]
    DecOutOfRange(f64),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("vector norm below 1e-15 cannot be normalized")]
    ZeroVector,
    #[error("region radius must be positive, got {0} arcmin")]
    BadRadius(f64),
    #[error("region union must contain at least one circle")]
    EmptyUnion,
}

/// A direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitVector {
    /// Normalizes `(x, y, z)` to unit length.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let norm = (x * x + y * y + z * z).sqrt();
        if norm < 1e-15 {
            return Err(GeometryError::ZeroVector);
        }
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Squared chord length `|a - b|^2`, accurate for nearby points.
    pub fn chord_sq(&self, other: &UnitVector) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Declination of this direction in degrees.
    pub fn dec_deg(&self) -> f64 {
        self.z.clamp(-1.0, 1.0).asin().to_degrees()
    }
}

/// Equatorial coordinates in degrees, RA in `[0, 360)` and Dec in `[-90, 90]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyCoord {
    ra: f64,
    dec: f64,
}

impl SkyCoord {
    pub fn new(ra: f64, dec: f64) -> Result<Self, GeometryError> {
        if !(ra.is_finite() && dec.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&dec) {
            return Err(GeometryError::DecOutOfRange(dec));
        }
        Ok(Self {
            ra: normalize_ra(ra),
            dec,
        })
    }

    pub fn ra(&self) -> f64 {
        self.ra
    }

    pub fn dec(&self) -> f64 {
        self.dec
    }
}

impl fmt::Display for SkyCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.ra, self.dec)
    }
}

/// Wraps an RA value into `[0, 360)`.
pub fn normalize_ra(ra: f64) -> f64 {
    let r = ra.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

pub fn to_unit_vector(c: SkyCoord) -> UnitVector {
    let (sin_ra, cos_ra) = c.ra.to_radians().sin_cos();
    let (sin_dec, cos_dec) = c.dec.to_radians().sin_cos();
    UnitVector::new(cos_dec * cos_ra, cos_dec * sin_ra, sin_dec)
        .expect("trigonometric components of a valid coordinate are never zero")
}

/// Inverse of [`to_unit_vector`]. The RA of either pole is reported as 0.
pub fn from_unit_vector(v: UnitVector) -> Result<SkyCoord, GeometryError> {
    let n = v.norm();
    if n < 1e-15 {
        return Err(GeometryError::ZeroVector);
    }
    let (x, y, z) = (v.x / n, v.y / n, v.z / n);
    let rho = x.hypot(y);
    let dec = z.atan2(rho).to_degrees();
    let ra = if rho == 0.0 {
        0.0
    } else {
        normalize_ra(y.atan2(x).to_degrees())
    };
    Ok(SkyCoord {
        ra,
        dec: dec.clamp(-90.0, 90.0),
    })
}

/// Great-circle separation in radians, `atan2(|a x b|, a . b)`.
pub fn angular_distance(a: &UnitVector, b: &UnitVector) -> f64 {
    let cx = a.y * b.z - a.z * b.y;
    let cy = a.z * b.x - a.x * b.z;
    let cz = a.x * b.y - a.y * b.x;
    let sin = (cx * cx + cy * cy + cz * cz).sqrt();
    sin.atan2(a.dot(b))
}

/// Index of a declination band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZoneId(pub u32);

/// Number of zones of height `zone_height` degrees covering [-90, 90].
pub fn zone_count(zone_height: f64) -> u32 {
    (180.0 / zone_height).ceil().max(1.0) as u32
}

/// Zone holding declination `dec`; Dec = +90 is folded into the top zone.
pub fn zone_of(dec: f64, zone_height: f64) -> ZoneId {
    debug_assert!(zone_height > 0.0);
    let last = zone_count(zone_height) - 1;
    let raw = ((dec + 90.0) / zone_height).floor();
    let idx = if raw <= 0.0 { 0 } else { (raw as u32).min(last) };
    ZoneId(idx)
}

/// Declination limits `[lo, hi]` of a zone, clipped to the sphere.
pub fn zone_dec_range(z: ZoneId, zone_height: f64) -> (f64, f64) {
    let lo = -90.0 + z.0 as f64 * zone_height;
    let hi = (lo + zone_height).min(90.0);
    (lo.max(-90.0), hi)
}

/// Zones that can hold a point within `theta` radians of any point in `z`.
pub fn zone_window(z: ZoneId, theta: f64, zone_height: f64) -> RangeInclusive<u32> {
    let reach = (theta.to_degrees() / zone_height).ceil().max(1.0);
    let last = zone_count(zone_height) - 1;
    let reach = if reach >= last as f64 { last } else { reach as u32 };
    z.0.saturating_sub(reach)..=(z.0 + reach).min(last)
}

/// Half-width in degrees of the RA interval that must be searched around a
/// point lying in the declination band `zone_dec_range` for neighbors within
/// `theta` radians. Returns 180 when the band (extended by `theta`) reaches
/// close enough to a pole that every RA is reachable.
pub fn ra_window(theta: f64, zone_dec_range: (f64, f64)) -> f64 {
    let theta_deg = theta.to_degrees();
    let dec_star = zone_dec_range.0.abs().max(zone_dec_range.1.abs()) + theta_deg;
    if dec_star >= 90.0 {
        return 180.0;
    }
    let cos_star = dec_star.to_radians().cos();
    if cos_star <= theta.sin() {
        return 180.0;
    }
    (theta_deg / cos_star).min(180.0)
}

/// Signed RA difference `b - a` wrapped into `[-180, 180)`.
pub fn ra_delta(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(360.0);
    if d >= 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// A small circle on the sky.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    center: SkyCoord,
    radius_arcmin: f64,
    axis: UnitVector,
}

impl Circle {
    pub fn new(center: SkyCoord, radius_arcmin: f64) -> Result<Self, GeometryError> {
        if !(radius_arcmin.is_finite() && radius_arcmin > 0.0) {
            return Err(GeometryError::BadRadius(radius_arcmin));
        }
        Ok(Self {
            center,
            radius_arcmin,
            axis: to_unit_vector(center),
        })
    }

    pub fn center(&self) -> SkyCoord {
        self.center
    }

    pub fn radius_arcmin(&self) -> f64 {
        self.radius_arcmin
    }

    pub fn radius_rad(&self) -> f64 {
        self.radius_arcmin * ARCMIN
    }

    pub fn contains(&self, p: &UnitVector) -> bool {
        angular_distance(&self.axis, p) <= self.radius_rad() + BOUNDARY_SLACK_RAD
    }

    /// True when the two closed circles share no point.
    pub fn is_disjoint(&self, other: &Circle) -> bool {
        angular_distance(&self.axis, &other.axis)
            > self.radius_rad() + other.radius_rad() + 2.0 * BOUNDARY_SLACK_RAD
    }
}

/// A closed spherical area: a circle or a union of circles.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Circle(Circle),
    Union(Vec<Circle>),
}

impl Region {
    pub fn circle(ra: f64, dec: f64, radius_arcmin: f64) -> Result<Self, GeometryError> {
        Ok(Region::Circle(Circle::new(
            SkyCoord::new(ra, dec)?,
            radius_arcmin,
        )?))
    }

    pub fn union(circles: Vec<Circle>) -> Result<Self, GeometryError> {
        if circles.is_empty() {
            return Err(GeometryError::EmptyUnion);
        }
        Ok(Region::Union(circles))
    }

    pub fn circles(&self) -> &[Circle] {
        match self {
            Region::Circle(c) => std::slice::from_ref(c),
            Region::Union(cs) => cs,
        }
    }

    pub fn contains(&self, p: &UnitVector) -> bool {
        region_contains(self, p)
    }

    pub fn is_disjoint(&self, other: &Region) -> bool {
        self.circles()
            .iter()
            .all(|a| other.circles().iter().all(|b| a.is_disjoint(b)))
    }
}

pub fn region_contains(r: &Region, p: &UnitVector) -> bool {
    r.circles().iter().any(|c| c.contains(p))
}
