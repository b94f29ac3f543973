//! IESNA LM-63 photometric profiles.
//!
//! Only the photometric block is used: vertical angles, horizontal angles and
//! the candela grid. Lamp, ballast and wattage fields are parsed and dropped.
//! Angles follow type C photometry: vertical 0° points down the luminaire's
//! emission axis (local -Z), horizontal angles are measured from local +X
//! toward +Y.

use crate::math::Vec3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IesError {
    #[error("missing IESNA header line")]
    MissingHeader,
    #[error("missing TILT line")]
    MissingTilt,
    #[error("unsupported TILT={0} (only TILT=NONE is supported)")]
    UnsupportedTilt(String),
    #[error("unexpected end of photometric data: expected {0}")]
    Truncated(&'static str),
    #[error("invalid number {0:?}")]
    BadNumber(String),
    #[error("count mismatch: {what} declares {declared} values but {found} were found")]
    CountMismatch { what: &'static str, declared: usize, found: usize },
    #[error("{0} angles must be strictly increasing")]
    NotIncreasing(&'static str),
    #[error("{what} angle {value} outside [{lo}, {hi}]")]
    AngleRange { what: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("negative candela value {0}")]
    NegativeCandela(f64),
    #[error("invalid header field: {0}")]
    Header(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricProfile {
    /// Degrees in [0, 180], strictly increasing.
    pub vertical_angles: Vec<f64>,
    /// Degrees in [0, 360], strictly increasing.
    pub horizontal_angles: Vec<f64>,
    /// Indexed `[horizontal][vertical]`, candela (multiplier applied).
    pub candela: Vec<Vec<f64>>,
    pub lumens_per_lamp: f64,
}

/// Parses an LM-63 file (any revision header starting with `IESNA`).
pub fn parse_ies(text: &str) -> Result<PhotometricProfile, IesError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(IesError::MissingHeader)?;
    if !header.trim_start_matches('\u{feff}').trim().starts_with("IESNA") {
        return Err(IesError::MissingHeader);
    }
    // keyword lines until TILT=
    let tilt = loop {
        let line = lines.next().ok_or(IesError::MissingTilt)?;
        if let Some(rest) = line.trim().strip_prefix("TILT=") {
            break rest.trim().to_string();
        }
    };
    if tilt != "NONE" {
        return Err(IesError::UnsupportedTilt(tilt));
    }

    let rest: Vec<&str> = lines.collect();
    let mut tokens = rest
        .iter()
        .flat_map(|l| l.split(|c: char| c.is_whitespace() || c == ','))
        .filter(|t| !t.is_empty());
    let mut next = |what: &'static str| -> Result<f64, IesError> {
        let t = tokens.next().ok_or(IesError::Truncated(what))?;
        t.parse::<f64>().map_err(|_| IesError::BadNumber(t.to_string()))
    };

    let _lamps = next("number of lamps")?;
    let lumens_per_lamp = next("lumens per lamp")?;
    let multiplier = next("candela multiplier")?;
    let n_vert = next("number of vertical angles")?;
    let n_horiz = next("number of horizontal angles")?;
    let _photometric_type = next("photometric type")?;
    let _units = next("units type")?;
    let _width = next("width")?;
    let _length = next("length")?;
    let _height = next("height")?;
    let _ballast = next("ballast factor")?;
    let _future = next("ballast-lamp factor")?;
    let _watts = next("input watts")?;

    let count = |v: f64, what: &'static str| -> Result<usize, IesError> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(IesError::Header(what))
        }
    };
    let n_vert = count(n_vert, "number of vertical angles")?;
    let n_horiz = count(n_horiz, "number of horizontal angles")?;
    if !(multiplier.is_finite() && multiplier >= 0.0) {
        return Err(IesError::Header("candela multiplier"));
    }

    let mut remaining: Vec<f64> = Vec::new();
    for t in tokens {
        remaining.push(t.parse::<f64>().map_err(|_| IesError::BadNumber(t.to_string()))?);
    }
    let expected = n_vert + n_horiz + n_vert * n_horiz;
    if remaining.len() < n_vert + n_horiz {
        return Err(IesError::CountMismatch { what: "angle list", declared: n_vert + n_horiz, found: remaining.len() });
    }
    if remaining.len() != expected {
        return Err(IesError::CountMismatch {
            what: "candela grid",
            declared: n_vert * n_horiz,
            found: remaining.len() - n_vert - n_horiz,
        });
    }
    let vertical_angles = remaining[..n_vert].to_vec();
    let horizontal_angles = remaining[n_vert..n_vert + n_horiz].to_vec();
    check_angles(&vertical_angles, "vertical", 0.0, 180.0)?;
    check_angles(&horizontal_angles, "horizontal", 0.0, 360.0)?;

    let mut candela = Vec::with_capacity(n_horiz);
    for h in 0..n_horiz {
        let start = n_vert + n_horiz + h * n_vert;
        let column: Vec<f64> = remaining[start..start + n_vert].iter().map(|c| c * multiplier).collect();
        if let Some(&neg) = column.iter().find(|&&c| c < 0.0) {
            return Err(IesError::NegativeCandela(neg));
        }
        candela.push(column);
    }
    Ok(PhotometricProfile { vertical_angles, horizontal_angles, candela, lumens_per_lamp })
}

fn check_angles(a: &[f64], what: &'static str, lo: f64, hi: f64) -> Result<(), IesError> {
    if let Some(&v) = a.iter().find(|&&v| !(lo..=hi).contains(&v)) {
        return Err(IesError::AngleRange { what, value: v, lo, hi });
    }
    if a.windows(2).any(|w| w[1] <= w[0]) {
        return Err(IesError::NotIncreasing(what));
    }
    Ok(())
}

/// Locates `x` in a sorted grid: returns `(i, j, t)` such that the value is
/// `lerp(g[i], g[j], t)`. Clamps outside the grid.
fn bracket(grid: &[f64], x: f64) -> (usize, usize, f64) {
    let n = grid.len();
    if n == 1 || x <= grid[0] {
        return (0, 0, 0.0);
    }
    if x >= grid[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let j = grid.partition_point(|&g| g <= x);
    let i = j - 1;
    (i, j, (x - grid[i]) / (grid[j] - grid[i]))
}

impl PhotometricProfile {
    /// Uniform profile with a single sample column.
    pub fn isotropic(candela: f64) -> Self {
        Self {
            vertical_angles: vec![0.0, 180.0],
            horizontal_angles: vec![0.0],
            candela: vec![vec![candela, candela]],
            lumens_per_lamp: 4.0 * std::f64::consts::PI * candela,
        }
    }

    /// Maps an azimuth in [0, 360) onto the profile's stored horizontal range
    /// using the LM-63 symmetry conventions.
    fn fold_azimuth(&self, phi: f64) -> f64 {
        let last = *self.horizontal_angles.last().unwrap();
        let first = self.horizontal_angles[0];
        if self.horizontal_angles.len() == 1 {
            first
        } else if first == 0.0 && last == 90.0 {
            let p = phi % 180.0;
            let p = if p > 90.0 { 180.0 - p } else { p };
            p
        } else if first == 0.0 && last == 180.0 {
            if phi > 180.0 { 360.0 - phi } else { phi }
        } else {
            phi
        }
    }

    /// Candela toward `dir` (unit vector in the light-local frame).
    ///
    /// Bilinear in (vertical, horizontal). Vertical angles clamp at the grid
    /// extremes; horizontal angles wrap at 360°.
    pub fn intensity_at(&self, dir: Vec3) -> f64 {
        let cos_v = (-dir.z).clamp(-1.0, 1.0);
        let vertical = cos_v.acos().to_degrees();
        let mut phi = dir.y.atan2(dir.x).to_degrees();
        if phi < 0.0 {
            phi += 360.0;
        }
        if phi >= 360.0 {
            phi -= 360.0;
        }
        let phi = self.fold_azimuth(phi);

        let (vi, vj, vt) = bracket(&self.vertical_angles, vertical);
        let column = |h: usize| {
            let c = &self.candela[h];
            c[vi] + (c[vj] - c[vi]) * vt
        };

        let h = &self.horizontal_angles;
        let n = h.len();
        if n == 1 {
            return column(0);
        }
        let (hi, hj, ht) = if phi < h[0] || phi > h[n - 1] {
            // wrap segment between the last angle and the first one + 360
            let span = h[0] + 360.0 - h[n - 1];
            let d = if phi > h[n - 1] { phi - h[n - 1] } else { phi + 360.0 - h[n - 1] };
            if span <= 0.0 {
                (n - 1, n - 1, 0.0)
            } else {
                (n - 1, 0, d / span)
            }
        } else {
            bracket(h, phi)
        };
        let a = column(hi);
        let b = column(hj);
        a + (b - a) * ht
    }

    /// Total flux over the sphere in candela·steradian (numerical quadrature).
    pub fn integrated_intensity(&self) -> f64 {
        // midpoint rule over (cos theta, phi), where the solid-angle measure is flat
        let (nt, np) = (720usize, 144usize);
        let mut sum = 0.0;
        for i in 0..nt {
            let ct = -1.0 + (i as f64 + 0.5) * 2.0 / nt as f64;
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            for j in 0..np {
                let phi = (j as f64 + 0.5) * 2.0 * std::f64::consts::PI / np as f64;
                sum += self.intensity_at(Vec3::new(st * phi.cos(), st * phi.sin(), ct));
            }
        }
        sum * (2.0 / nt as f64) * (2.0 * std::f64::consts::PI / np as f64)
    }
}
