//! Hexagonal cell layout and area quadrature.
//!
//! The reference cell is split into seven sub-hexagons: a base region around
//! the BS at the origin and six relay regions, each with an RS at its centre.
//! Neighbouring first-tier cells are translated copies of the reference cell
//! with their BSs at angles `k·60°` and distance `inter_bs_distance`.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_6, PI};
use std::ops::{Add, Mul, Sub};

use thiserror::Error;

/// Number of relay stations per cell, and of first-tier neighbour cells.
pub const RELAYS_PER_CELL: usize = 6;
pub const FIRST_TIER_CELLS: usize = 6;

/// Orientation of the cell hexagon: vertices at 30° + k·60°, which places the
/// neighbour BSs across the edges at angles k·60°.
pub const CELL_ORIENTATION: f64 = FRAC_PI_6;

/// Orientation of base and relay sub-hexagons: vertices at k·60°.
pub const SUBCELL_ORIENTATION: f64 = 0.0;

const BOUNDARY_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid parameter `{name}`: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const ORIGIN: Point2D = Point2D { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn polar(radius: f64, angle: f64) -> Self {
        Self::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn distance(self, other: Point2D) -> f64 {
        (self - other).norm()
    }

    pub fn distance_sq(self, other: Point2D) -> f64 {
        (self - other).norm_sq()
    }

    /// Rotation about the origin.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2D {
    type Output = Point2D;
    fn add(self, rhs: Point2D) -> Point2D {
        Point2D::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2D {
    type Output = Point2D;
    fn sub(self, rhs: Point2D) -> Point2D {
        Point2D::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2D {
    type Output = Point2D;
    fn mul(self, rhs: f64) -> Point2D {
        Point2D::new(self.x * rhs, self.y * rhs)
    }
}

/// Regular hexagon. `orientation` is the angle of the first vertex measured
/// from the +x axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hexagon {
    pub center: Point2D,
    pub circumradius: f64,
    pub orientation: f64,
}

impl Hexagon {
    pub fn new(center: Point2D, circumradius: f64, orientation: f64) -> Result<Self, GeometryError> {
        if !(circumradius > 0.0 && circumradius.is_finite()) {
            return Err(GeometryError::InvalidParameter {
                name: "circumradius",
                value: circumradius,
                reason: "must be positive and finite",
            });
        }
        if !center.is_finite() || !orientation.is_finite() {
            return Err(GeometryError::InvalidParameter {
                name: "center",
                value: f64::NAN,
                reason: "coordinates and orientation must be finite",
            });
        }
        Ok(Self {
            center,
            circumradius,
            orientation,
        })
    }

    pub fn area(&self) -> f64 {
        1.5 * 3f64.sqrt() * self.circumradius * self.circumradius
    }

    pub fn inradius(&self) -> f64 {
        0.5 * 3f64.sqrt() * self.circumradius
    }

    pub fn vertices(&self) -> [Point2D; 6] {
        std::array::from_fn(|k| {
            self.center + Point2D::polar(self.circumradius, self.orientation + k as f64 * FRAC_PI_3)
        })
    }

    /// Boundary-inclusive membership test.
    pub fn contains(&self, p: Point2D) -> bool {
        let local = (p - self.center).rotate(-self.orientation);
        let (ax, ay) = (local.x.abs(), local.y.abs());
        let a = self.circumradius;
        let slack = BOUNDARY_SLACK * a;
        let sqrt3 = 3f64.sqrt();
        ay <= 0.5 * sqrt3 * a + slack && sqrt3 * ax + ay <= sqrt3 * a + slack
    }

    pub fn translated(&self, offset: Point2D) -> Self {
        Self {
            center: self.center + offset,
            ..*self
        }
    }
}

/// Shoelace area of a closed polygon.
pub fn polygon_area(vertices: &[Point2D]) -> f64 {
    let n = vertices.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (vertices[i], vertices[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum();
    0.5 * twice.abs()
}

pub fn contains(region: &Hexagon, p: Point2D) -> bool {
    region.contains(p)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LayoutOptions {
    /// Overrides the equal-area sub-cell circumradius.
    pub subcell_circumradius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellLayout {
    pub inter_bs_distance: f64,
    /// Hexagon approximating the whole reference cell.
    pub cell_region: Hexagon,
    pub base_region: Hexagon,
    pub relay_regions: [Hexagon; RELAYS_PER_CELL],
    pub rs_positions: [Point2D; RELAYS_PER_CELL],
    pub neighbor_bs_positions: Vec<Point2D>,
    /// Relay positions of each neighbour cell, in the same order as
    /// `rs_positions`.
    pub neighbor_rs_positions: Vec<[Point2D; RELAYS_PER_CELL]>,
}

impl CellLayout {
    pub fn subcell_circumradius(&self) -> f64 {
        self.base_region.circumradius
    }

    pub fn bs_position(&self) -> Point2D {
        Point2D::ORIGIN
    }

    /// Distance from the reference BS to each RS.
    pub fn rs_distance(&self) -> f64 {
        self.rs_positions[0].norm()
    }
}

pub fn build_layout(inter_bs_distance: f64) -> Result<CellLayout, GeometryError> {
    build_layout_with(inter_bs_distance, LayoutOptions::default())
}

pub fn build_layout_with(
    inter_bs_distance: f64,
    options: LayoutOptions,
) -> Result<CellLayout, GeometryError> {
    if !(inter_bs_distance > 0.0 && inter_bs_distance.is_finite()) {
        return Err(GeometryError::InvalidParameter {
            name: "inter_bs_distance",
            value: inter_bs_distance,
            reason: "must be positive and finite",
        });
    }
    let cell_radius = inter_bs_distance / 3f64.sqrt();
    let subcell_radius = match options.subcell_circumradius {
        Some(r) if !(r > 0.0 && r.is_finite()) => {
            return Err(GeometryError::InvalidParameter {
                name: "subcell_circumradius",
                value: r,
                reason: "must be positive and finite",
            })
        }
        Some(r) => r,
        // seven sub-hexagons with the same total area as the cell hexagon
        None => cell_radius / 7f64.sqrt(),
    };

    let cell_region = Hexagon::new(Point2D::ORIGIN, cell_radius, CELL_ORIENTATION)?;
    let base_region = Hexagon::new(Point2D::ORIGIN, subcell_radius, SUBCELL_ORIENTATION)?;

    // Adjacent sub-hexagons share an edge: centre spacing is sqrt(3)·r_s.
    let rs_distance = 3f64.sqrt() * subcell_radius;
    let rs_positions: [Point2D; RELAYS_PER_CELL] =
        std::array::from_fn(|k| Point2D::polar(rs_distance, FRAC_PI_6 + k as f64 * FRAC_PI_3));
    let relay_regions = rs_positions.map(|c| base_region.translated(c));

    let neighbor_bs_positions: Vec<Point2D> = (0..FIRST_TIER_CELLS)
        .map(|k| Point2D::polar(inter_bs_distance, k as f64 * FRAC_PI_3))
        .collect();
    let neighbor_rs_positions = neighbor_bs_positions
        .iter()
        .map(|&bs| rs_positions.map(|rs| bs + rs))
        .collect();

    Ok(CellLayout {
        inter_bs_distance,
        cell_region,
        base_region,
        relay_regions,
        rs_positions,
        neighbor_bs_positions,
        neighbor_rs_positions,
    })
}

/// Area quadrature over a hexagon. Weights carry the area element, so
/// `Σ weights = area(target_region)`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<Point2D>,
    pub weights: Vec<f64>,
    pub target_region: Hexagon,
}

impl QuadratureRule {
    pub fn integrate<F: FnMut(Point2D) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }

    /// Mean of `f` under the uniform distribution over the target region.
    pub fn average<F: FnMut(Point2D) -> f64>(&self, f: F) -> f64 {
        self.integrate(f) / self.target_region.area()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Seven-point degree-5 symmetric rule on the reference triangle, as
/// (barycentric coordinates, weight fraction).
fn seven_point_rule() -> [([f64; 3], f64); 7] {
    let s15 = 15f64.sqrt();
    let a1 = (6.0 - s15) / 21.0;
    let b1 = (9.0 + 2.0 * s15) / 21.0;
    let a2 = (6.0 + s15) / 21.0;
    let b2 = (9.0 - 2.0 * s15) / 21.0;
    let w1 = (155.0 - s15) / 1200.0;
    let w2 = (155.0 + s15) / 1200.0;
    [
        ([1.0 / 3.0; 3], 9.0 / 40.0),
        ([a1, a1, b1], w1),
        ([a1, b1, a1], w1),
        ([b1, a1, a1], w1),
        ([a2, a2, b2], w2),
        ([a2, b2, a2], w2),
        ([b2, a2, a2], w2),
    ]
}

pub const POINTS_PER_SUBTRIANGLE: usize = 7;

/// Builds a composite rule: the hexagon is fanned into six triangles from its
/// centre, each triangle is split into `subdivisions²` congruent pieces, and a
/// 7-point degree-5 rule is applied on every piece. Each of the six triangles
/// therefore carries `7·subdivisions²` nodes.
pub fn make_quadrature(region: Hexagon, subdivisions: usize) -> Result<QuadratureRule, GeometryError> {
    if subdivisions == 0 {
        return Err(GeometryError::InvalidParameter {
            name: "subdivisions",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    let n = subdivisions;
    let rule = seven_point_rule();
    let vertices = region.vertices();
    let piece_area = region.area() / 6.0 / (n * n) as f64;
    let capacity = 6 * n * n * POINTS_PER_SUBTRIANGLE;
    let mut nodes = Vec::with_capacity(capacity);
    let mut weights = Vec::with_capacity(capacity);

    for k in 0..6 {
        let p0 = region.center;
        let e1 = (vertices[k] - p0) * (1.0 / n as f64);
        let e2 = (vertices[(k + 1) % 6] - p0) * (1.0 / n as f64);
        let grid = |i: usize, j: usize| p0 + e1 * i as f64 + e2 * j as f64;
        let mut push_piece = |a: Point2D, b: Point2D, c: Point2D| {
            for (bary, w) in &rule {
                nodes.push(a * bary[0] + b * bary[1] + c * bary[2]);
                weights.push(w * piece_area);
            }
        };
        for i in 0..n {
            for j in 0..n - i {
                push_piece(grid(i, j), grid(i + 1, j), grid(i, j + 1));
                if i + j + 1 < n {
                    push_piece(grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1));
                }
            }
        }
    }

    Ok(QuadratureRule {
        nodes,
        weights,
        target_region: region,
    })
}

/// Angle of `p` in `[0, 2π)`.
pub fn bearing(p: Point2D) -> f64 {
    let a = p.y.atan2(p.x);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}
