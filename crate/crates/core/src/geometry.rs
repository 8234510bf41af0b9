//! Physical layout of the transmitter: feed antenna array, stacked
//! metasurface layers, and user drop geometry.
//!
//! The feed array and every metasurface layer lie in parallel planes sharing
//! the same axis. Antennas form a uniform linear array along `x`; each layer
//! is a centered rectangular grid in its own plane. Users are dropped
//! uniformly on a ground-level disk under the transmitter.

use nalgebra::DMatrix;
use rand::Rng;

use crate::{Error, Result};

/// Scenario parameters needed to build a [`SimGeometry`]. All lengths are in
/// meters; areas in square meters.
#[derive(Debug, Clone)]
pub struct LayoutConfig {
    /// Carrier wavelength.
    pub wavelength: f64,
    /// Number of feed antennas (uniform linear array along `x`).
    pub antennas: usize,
    /// Spacing between adjacent feed antennas.
    pub antenna_spacing: f64,
    /// Meta-atoms per layer along `x`.
    pub grid_x: usize,
    /// Meta-atoms per layer along `y`.
    pub grid_y: usize,
    /// Number of stacked layers.
    pub layers: usize,
    /// Center-to-center spacing of adjacent meta-atoms within a layer.
    pub pitch: f64,
    /// Total thickness of the stack; the inter-layer gap is `thickness / layers`,
    /// and the feed-to-first-layer gap equals the inter-layer gap.
    pub stack_thickness: f64,
    /// Effective area of one meta-atom.
    pub meta_atom_area: f64,
    /// Effective area of one feed antenna element.
    pub antenna_area: f64,
    /// Height of the feed array plane above the ground plane.
    pub bs_height: f64,
}

impl LayoutConfig {
    /// Canonical layout for a given wavelength: half-wavelength antenna and
    /// meta-atom spacing, quarter-square-wavelength element areas, and a
    /// five-wavelength stack.
    pub fn with_wavelength(
        wavelength: f64,
        antennas: usize,
        grid_x: usize,
        grid_y: usize,
        layers: usize,
        bs_height: f64,
    ) -> Self {
        Self {
            wavelength,
            antennas,
            antenna_spacing: wavelength / 2.0,
            grid_x,
            grid_y,
            layers,
            pitch: wavelength / 2.0,
            stack_thickness: 5.0 * wavelength,
            meta_atom_area: wavelength * wavelength / 4.0,
            antenna_area: wavelength * wavelength / 4.0,
            bs_height,
        }
    }
}

/// Positions and spacings of the feed array and the layer stack.
///
/// Layer `l` (0-based) sits at axial offset `array_gap + l * layer_gap`
/// below the feed plane, i.e. closer to the ground where the users are.
/// Within a layer, meta-atom `q` maps to grid coordinates
/// `(q / grid_y, q % grid_y)`.
#[derive(Debug, Clone)]
pub struct SimGeometry {
    pub wavelength: f64,
    /// Feed antenna positions, `antennas` entries.
    pub antenna_positions: Vec<[f64; 3]>,
    /// Meta-atom positions per layer, `layers` rows of `grid_x * grid_y` entries.
    pub layer_positions: Vec<Vec<[f64; 3]>>,
    /// Gap between the feed plane and the first layer.
    pub array_gap: f64,
    /// Gap between adjacent layers.
    pub layer_gap: f64,
    pub meta_atom_area: f64,
    pub antenna_area: f64,
    pub grid_x: usize,
    pub grid_y: usize,
    pub pitch: f64,
    pub bs_height: f64,
}

impl SimGeometry {
    /// Meta-atoms per layer.
    pub fn atoms_per_layer(&self) -> usize {
        self.grid_x * self.grid_y
    }

    /// Number of stacked layers.
    pub fn layer_count(&self) -> usize {
        self.layer_positions.len()
    }

    /// Center of the last (user-facing) layer; reference point for user
    /// distances.
    pub fn last_layer_center(&self) -> [f64; 3] {
        let last = self
            .layer_positions
            .last()
            .expect("geometry has at least one layer");
        let n = last.len() as f64;
        let mut c = [0.0; 3];
        for p in last {
            c[0] += p[0];
            c[1] += p[1];
            c[2] += p[2];
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }
}

/// User positions on the ground plane and their distances to the transmitter.
#[derive(Debug, Clone)]
pub struct UserLayout {
    /// User positions, `z = 0` for all.
    pub positions: Vec<[f64; 3]>,
    /// Distance from each user to the transmitter reference point.
    pub sim_distances: Vec<f64>,
    /// Radius of the drop disk.
    pub disk_radius: f64,
    /// Height of the feed array above the ground plane.
    pub bs_height: f64,
}

/// Builds the full transmitter geometry from a [`LayoutConfig`].
///
/// The feed array is centered on the axis at height `bs_height`; layers are
/// centered grids stacked below it at offsets `array_gap + l * layer_gap`.
pub fn build_layout(config: &LayoutConfig) -> Result<SimGeometry> {
    if config.antennas == 0 || config.grid_x == 0 || config.grid_y == 0 || config.layers == 0 {
        return Err(Error::Config(format!(
            "layout dimensions must be positive (antennas={}, grid={}x{}, layers={})",
            config.antennas, config.grid_x, config.grid_y, config.layers
        )));
    }
    for (name, value) in [
        ("wavelength", config.wavelength),
        ("antenna_spacing", config.antenna_spacing),
        ("pitch", config.pitch),
        ("stack_thickness", config.stack_thickness),
        ("meta_atom_area", config.meta_atom_area),
        ("antenna_area", config.antenna_area),
    ] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Config(format!("{name} must be positive, got {value}")));
        }
    }

    let layer_gap = config.stack_thickness / config.layers as f64;
    let array_gap = layer_gap;

    let n = config.antennas;
    let antenna_positions: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let x = (i as f64 - (n as f64 - 1.0) / 2.0) * config.antenna_spacing;
            [x, 0.0, config.bs_height]
        })
        .collect();

    let layer_positions: Vec<Vec<[f64; 3]>> = (0..config.layers)
        .map(|l| {
            let z = config.bs_height - array_gap - l as f64 * layer_gap;
            grid_positions(config.grid_x, config.grid_y, config.pitch, z)
        })
        .collect();

    Ok(SimGeometry {
        wavelength: config.wavelength,
        antenna_positions,
        layer_positions,
        array_gap,
        layer_gap,
        meta_atom_area: config.meta_atom_area,
        antenna_area: config.antenna_area,
        grid_x: config.grid_x,
        grid_y: config.grid_y,
        pitch: config.pitch,
        bs_height: config.bs_height,
    })
}

/// Centered `gx` by `gy` grid with the given pitch, in the plane at height `z`.
/// Element `q` is at grid coordinates `(q / gy, q % gy)`.
fn grid_positions(gx: usize, gy: usize, pitch: f64, z: f64) -> Vec<[f64; 3]> {
    let mut pts = Vec::with_capacity(gx * gy);
    for ix in 0..gx {
        for iy in 0..gy {
            let x = (ix as f64 - (gx as f64 - 1.0) / 2.0) * pitch;
            let y = (iy as f64 - (gy as f64 - 1.0) / 2.0) * pitch;
            pts.push([x, y, z]);
        }
    }
    pts
}

/// Transverse-plus-gap distances and obliquity cosines between two parallel
/// planes of points.
///
/// Entry `(i, j)` of the distance matrix is
/// `sqrt(dx^2 + dy^2 + gap^2)` between `dst[i]` and `src[j]`; the cosine
/// matrix holds `gap / distance`. Only transverse (`x`, `y`) coordinates of
/// the points are used — the axial separation comes from `gap`, which must be
/// positive.
pub fn pairwise_distances(
    src: &[[f64; 3]],
    dst: &[[f64; 3]],
    gap: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    assert!(gap > 0.0, "plane separation must be positive, got {gap}");
    let mut dist = DMatrix::zeros(dst.len(), src.len());
    let mut cos = DMatrix::zeros(dst.len(), src.len());
    for (i, d) in dst.iter().enumerate() {
        for (j, s) in src.iter().enumerate() {
            let dx = d[0] - s[0];
            let dy = d[1] - s[1];
            let r = (dx * dx + dy * dy + gap * gap).sqrt();
            dist[(i, j)] = r;
            cos[(i, j)] = gap / r;
        }
    }
    (dist, cos)
}

/// Drops `k` users independently and uniformly on the ground disk of the
/// given radius centered under the transmitter, and records each user's
/// distance to `sim_reference` (the user-facing layer center).
pub fn place_users<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    radius: f64,
    bs_height: f64,
    sim_reference: [f64; 3],
) -> UserLayout {
    assert!(k >= 1, "need at least one user");
    assert!(radius >= 0.0 && radius.is_finite(), "bad disk radius {radius}");
    let mut positions = Vec::with_capacity(k);
    let mut sim_distances = Vec::with_capacity(k);
    for _ in 0..k {
        // Uniform on the disk: radius via inverse CDF sqrt(u), angle uniform.
        let rho = radius * rng.gen::<f64>().sqrt();
        let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let p = [rho * phi.cos(), rho * phi.sin(), 0.0];
        let dx = p[0] - sim_reference[0];
        let dy = p[1] - sim_reference[1];
        let dz = p[2] - sim_reference[2];
        positions.push(p);
        sim_distances.push((dx * dx + dy * dy + dz * dz).sqrt());
    }
    UserLayout {
        positions,
        sim_distances,
        disk_radius: radius,
        bs_height,
    }
}
