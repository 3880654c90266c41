//! Procedural terrain: a base level plus analytic features, optional sampled
//! grid, and flat-floored cuts. Heights are up-positive in world x-y.

use std::f64::consts::TAU;

// Bumps are zero beyond 8 sigma (relative size below 1e-13).
const BUMP_CUTOFF: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    fn inside(&self, other: &Rect) -> bool {
        self.x0 >= other.x0 && self.x1 <= other.x1 && self.y0 >= other.y0 && self.y1 <= other.y1
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.x0 <= other.x1 && self.x1 >= other.x0 && self.y0 <= other.y1 && self.y1 >= other.y0
    }

    fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }
}

/// Additive terrain feature.
#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    /// Gaussian mound (negative height for a hollow).
    Bump { x: f64, y: f64, height: f64, sigma: f64 },
    /// Flat top over `top` with linear ramps outside it. Ramp widths are
    /// ordered `[-x, +x, -y, +y]`; a zero width is a vertical cliff.
    Plateau { top: Rect, height: f64, ramps: [f64; 4] },
    /// `amplitude * sin(2 pi x / wavelength_x + phase_x) * cos(2 pi y / wavelength_y + phase_y)`.
    Wave {
        amplitude: f64,
        wavelength_x: f64,
        wavelength_y: f64,
        phase_x: f64,
        phase_y: f64,
    },
}

impl Feature {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Feature::Bump { x: bx, y: by, height, sigma } => {
                let d2 = (x - bx).powi(2) + (y - by).powi(2);
                if d2 > BUMP_CUTOFF * sigma * sigma {
                    return 0.0;
                }
                height * (-d2 / (2.0 * sigma * sigma)).exp()
            }
            Feature::Plateau { top, height, ramps } => {
                let px = trapezoid(x, top.x0, top.x1, ramps[0], ramps[1]);
                if px == 0.0 {
                    return 0.0;
                }
                height * px * trapezoid(y, top.y0, top.y1, ramps[2], ramps[3])
            }
            Feature::Wave {
                amplitude,
                wavelength_x,
                wavelength_y,
                phase_x,
                phase_y,
            } => amplitude * (TAU * x / wavelength_x + phase_x).sin() * (TAU * y / wavelength_y + phase_y).cos(),
        }
    }

    /// Upper bound of the feature over `r`.
    pub fn upper_bound(&self, r: &Rect) -> f64 {
        match *self {
            Feature::Bump { x, y, height, sigma } => {
                let g = |px: f64, py: f64| (-((px - x).powi(2) + (py - y).powi(2)) / (2.0 * sigma * sigma)).exp();
                if height >= 0.0 {
                    height * g(x.clamp(r.x0, r.x1), y.clamp(r.y0, r.y1))
                } else {
                    let fx = if (x - r.x0).abs() > (x - r.x1).abs() { r.x0 } else { r.x1 };
                    let fy = if (y - r.y0).abs() > (y - r.y1).abs() { r.y0 } else { r.y1 };
                    height * g(fx, fy)
                }
            }
            Feature::Plateau { top, height, ramps } => {
                let (xmin, xmax) = trapezoid_range(r.x0, r.x1, top.x0, top.x1, ramps[0], ramps[1]);
                let (ymin, ymax) = trapezoid_range(r.y0, r.y1, top.y0, top.y1, ramps[2], ramps[3]);
                if height >= 0.0 {
                    height * xmax * ymax
                } else {
                    height * xmin * ymin
                }
            }
            Feature::Wave {
                amplitude,
                wavelength_x,
                wavelength_y,
                ..
            } => {
                let (cx, cy) = r.center();
                let a = amplitude.abs();
                let slope = a * TAU * (0.5 * (r.x1 - r.x0) / wavelength_x + 0.5 * (r.y1 - r.y0) / wavelength_y);
                (self.eval(cx, cy) + slope).min(a)
            }
        }
    }
}

impl Feature {
    /// Bound on the gradient norm over `r`; infinite across cliffs.
    pub fn lipschitz(&self, r: &Rect) -> f64 {
        match *self {
            Feature::Bump { x, y, height, sigma } => {
                let dx = (x.clamp(r.x0, r.x1) - x).abs();
                let dy = (y.clamp(r.y0, r.y1) - y).abs();
                let d = (dx * dx + dy * dy).sqrt();
                if d * d > BUMP_CUTOFF * sigma * sigma {
                    0.0
                } else if d >= sigma {
                    height.abs() * d / (sigma * sigma) * (-d * d / (2.0 * sigma * sigma)).exp()
                } else {
                    height.abs() / sigma * (-0.5f64).exp()
                }
            }
            Feature::Plateau { top, height, ramps } => {
                let support = Rect::new(top.x0 - ramps[0], top.x1 + ramps[1], top.y0 - ramps[2], top.y1 + ramps[3]);
                if !r.overlaps(&support) || height == 0.0 {
                    return 0.0;
                }
                if ramps.iter().any(|&w| w <= 0.0) {
                    return f64::INFINITY;
                }
                let steepest = ramps.iter().fold(f64::INFINITY, |m, &w| m.min(w));
                height.abs() / steepest
            }
            Feature::Wave {
                amplitude,
                wavelength_x,
                wavelength_y,
                ..
            } => amplitude.abs() * TAU * (wavelength_x.powi(-2) + wavelength_y.powi(-2)).sqrt(),
        }
    }
}

// 1 on [a, b], linear ramps of width ra / rb outside, 0 beyond. Zero-width
// ramps make the top a closed interval.
fn trapezoid(t: f64, a: f64, b: f64, ra: f64, rb: f64) -> f64 {
    if t < a {
        if ra > 0.0 && t > a - ra {
            (t - (a - ra)) / ra
        } else {
            0.0
        }
    } else if t > b {
        if rb > 0.0 && t < b + rb {
            ((b + rb) - t) / rb
        } else {
            0.0
        }
    } else {
        1.0
    }
}

// (min, max) of the trapezoid over [lo, hi]; it is unimodal.
fn trapezoid_range(lo: f64, hi: f64, a: f64, b: f64, ra: f64, rb: f64) -> (f64, f64) {
    let peak = if hi >= a && lo <= b {
        1.0
    } else if hi < a {
        trapezoid(hi, a, b, ra, rb)
    } else {
        trapezoid(lo, a, b, ra, rb)
    };
    let low = trapezoid(lo, a, b, ra, rb).min(trapezoid(hi, a, b, ra, rb));
    (low, peak)
}

/// Replaces the terrain inside `area` by `min(h, floor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub area: Rect,
    pub floor: f64,
}

/// Bilinearly interpolated height samples; clamped outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl SampledGrid {
    pub fn new(origin_x: f64, origin_y: f64, spacing: f64, nx: usize, ny: usize, values: Vec<f64>) -> Self {
        assert!(nx >= 1 && ny >= 1 && values.len() == nx * ny && spacing > 0.0);
        Self {
            origin_x,
            origin_y,
            spacing,
            nx,
            ny,
            values,
        }
    }

    fn coord(&self, t: f64, origin: f64, n: usize) -> (usize, f64) {
        let f = ((t - origin) / self.spacing).clamp(0.0, (n - 1) as f64);
        let i = (f.floor() as usize).min(n.saturating_sub(2));
        (i, f - i as f64)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (i, fx) = self.coord(x, self.origin_x, self.nx);
        let (j, fy) = self.coord(y, self.origin_y, self.ny);
        let at = |a: usize, b: usize| self.values[b.min(self.ny - 1) * self.nx + a.min(self.nx - 1)];
        let top = at(i, j) * (1.0 - fx) + at(i + 1, j) * fx;
        let bottom = at(i, j + 1) * (1.0 - fx) + at(i + 1, j + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn upper_bound(&self, r: &Rect) -> f64 {
        let index = |t: f64, origin: f64, n: usize| ((t - origin) / self.spacing).floor().clamp(0.0, (n - 1) as f64) as usize;
        let (i0, i1) = (index(r.x0, self.origin_x, self.nx), index(r.x1 + self.spacing, self.origin_x, self.nx));
        let (j0, j1) = (index(r.y0, self.origin_y, self.ny), index(r.y1 + self.spacing, self.origin_y, self.ny));
        let mut m = f64::NEG_INFINITY;
        for j in j0..=j1 {
            for i in i0..=i1 {
                m = m.max(self.values[j * self.nx + i]);
            }
        }
        m
    }
}

impl SampledGrid {
    /// Gradient bound of the bilinear surface (largest neighbor difference
    /// along either axis, both axes combined).
    pub fn lipschitz(&self) -> f64 {
        let mut m: f64 = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let v = self.values[j * self.nx + i];
                if i + 1 < self.nx {
                    m = m.max((self.values[j * self.nx + i + 1] - v).abs());
                }
                if j + 1 < self.ny {
                    m = m.max((self.values[(j + 1) * self.nx + i] - v).abs());
                }
            }
        }
        m * std::f64::consts::SQRT_2 / self.spacing
    }
}

/// Named evaluation area (for example `gap` or `plateau_top`).
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub area: Rect,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Heightfield {
    pub base: f64,
    pub features: Vec<Feature>,
    pub grid: Option<SampledGrid>,
    pub cuts: Vec<Cut>,
    pub regions: Vec<Region>,
}

impl Heightfield {
    pub fn flat(level: f64) -> Self {
        Self {
            base: level,
            ..Default::default()
        }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let mut h = self.base;
        if let Some(g) = &self.grid {
            h += g.eval(x, y);
        }
        for f in &self.features {
            h += f.eval(x, y);
        }
        for c in &self.cuts {
            if c.area.contains(x, y) {
                h = h.min(c.floor);
            }
        }
        h
    }

    /// Conservative maximum of [`Heightfield::height`] over `r`.
    pub fn upper_bound(&self, r: &Rect) -> f64 {
        let mut h = self.base;
        if let Some(g) = &self.grid {
            h += g.upper_bound(r);
        }
        for f in &self.features {
            h += f.upper_bound(r);
        }
        for c in &self.cuts {
            if r.inside(&c.area) {
                h = h.min(c.floor);
            }
        }
        h
    }

    /// Bound on the gradient norm of [`Heightfield::height`] over `r`.
    pub fn lipschitz(&self, r: &Rect) -> f64 {
        if self.cuts.iter().any(|c| r.overlaps(&c.area)) {
            return f64::INFINITY;
        }
        let mut l = self.grid.as_ref().map_or(0.0, |g| g.lipschitz());
        for f in &self.features {
            l += f.lipschitz(r);
        }
        l
    }

    pub fn region_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.regions {
            if !names.contains(&r.name) {
                names.push(r.name.clone());
            }
        }
        names
    }

    pub fn in_region(&self, name: &str, x: f64, y: f64) -> bool {
        self.regions.iter().any(|r| r.name == name && r.area.contains(x, y))
    }
}

/// Vertical face of height `height` at `x = distance`, spanning all y.
pub fn wall(distance: f64, height: f64) -> Heightfield {
    Heightfield {
        base: 0.0,
        features: vec![Feature::Plateau {
            top: Rect::new(distance, 1e6, -1e6, 1e6),
            height,
            ramps: [0.0; 4],
        }],
        ..Default::default()
    }
}

/// Two shelves beside the transect with a deep gap between them. The shelf
/// faces toward the transect are ramps; only the gap has cliff edges.
pub fn plateau_gap() -> Heightfield {
    let (x0, x1) = (3.5, 9.5);
    let shelf_height = 0.5;
    let (gap_y0, gap_y1) = (1.6, 2.0);
    Heightfield {
        base: 0.0,
        features: vec![
            Feature::Plateau {
                top: Rect::new(x0, x1, 1.1, gap_y0),
                height: shelf_height,
                ramps: [0.5, 0.5, 0.5, 0.0],
            },
            Feature::Plateau {
                top: Rect::new(x0, x1, gap_y1, 2.8),
                height: shelf_height,
                ramps: [0.5, 0.5, 0.0, 0.5],
            },
        ],
        grid: None,
        cuts: vec![Cut {
            area: Rect::new(x0 - 0.5, x1 + 0.5, gap_y0, gap_y1),
            floor: -1.0,
        }],
        regions: vec![
            Region {
                name: "gap".into(),
                area: Rect::new(x0, x1, gap_y0, gap_y1),
            },
            Region {
                name: "plateau_top".into(),
                area: Rect::new(x0, x1, 1.1, gap_y0),
            },
            Region {
                name: "plateau_top".into(),
                area: Rect::new(x0, x1, gap_y1, 2.8),
            },
        ],
    }
}

/// Gentle sinusoidal relief with a few mounds and a hollow.
pub fn undulating() -> Heightfield {
    Heightfield {
        base: 0.0,
        features: vec![
            Feature::Wave {
                amplitude: 0.15,
                wavelength_x: 6.0,
                wavelength_y: 5.0,
                phase_x: 0.0,
                phase_y: 0.0,
            },
            Feature::Bump {
                x: 4.0,
                y: 0.3,
                height: 0.2,
                sigma: 0.7,
            },
            Feature::Bump {
                x: 8.0,
                y: -0.5,
                height: 0.2,
                sigma: 0.7,
            },
            Feature::Bump {
                x: 10.5,
                y: 0.8,
                height: 0.15,
                sigma: 0.6,
            },
            Feature::Bump {
                x: 6.2,
                y: 0.4,
                height: -0.15,
                sigma: 0.6,
            },
        ],
        ..Default::default()
    }
}
