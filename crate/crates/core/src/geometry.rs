//! Parameterized W1 photonic-crystal-waveguide geometry, rasterized to 2D
//! relative-permittivity maps.
//!
//! The lattice is a triangular array of circular air holes in a dielectric
//! slab, reduced to 2D with an effective slab index. Coordinates follow the
//! device convention: x along the waveguide (Γ-K), y in-plane transverse.
//! Rows of holes are spaced s = √3·a/2 apart and alternate an x-offset of
//! a/2; a W1 waveguide is the lattice with the center row left out.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row spacing of the triangular lattice in units of the lattice constant.
pub const ROW_SPACING: f64 = 0.866_025_403_784_438_6; // sqrt(3)/2

/// Triangular-lattice cross-section parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    /// Lattice constant in nm.
    pub a_nm: f64,
    /// Hole radius as a fraction of the lattice constant.
    pub r_over_a: f64,
    /// Slab thickness in nm. Metadata only in the 2D model.
    #[serde(default = "default_slab_thickness")]
    pub slab_thickness_nm: f64,
    /// Slab refractive index. Defaults to an effective index of 2.85 for the
    /// 2D reduction; the bulk silicon value 3.45 is also usable.
    #[serde(default = "default_n_slab")]
    pub n_slab: f64,
    /// Hole refractive index (air).
    #[serde(default = "default_n_hole")]
    pub n_hole: f64,
}

fn default_slab_thickness() -> f64 {
    220.0
}
fn default_n_slab() -> f64 {
    2.85
}
fn default_n_hole() -> f64 {
    1.0
}

impl LatticeSpec {
    pub fn new(a_nm: f64, r_over_a: f64) -> Result<Self> {
        let spec = LatticeSpec {
            a_nm,
            r_over_a,
            slab_thickness_nm: default_slab_thickness(),
            n_slab: default_n_slab(),
            n_hole: default_n_hole(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Cross-section of the experimental devices: a = 420 nm, r = 0.28 a.
    pub fn paper_device() -> Self {
        LatticeSpec::new(420.0, 0.28).expect("paper parameters are valid")
    }

    pub fn with_n_slab(mut self, n_slab: f64) -> Self {
        self.n_slab = n_slab;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_nm > 0.0) {
            return Err(Error::invalid("lattice constant must be positive"));
        }
        if !(0.0..0.5).contains(&self.r_over_a) {
            return Err(Error::invalid("r/a must lie in [0, 0.5)"));
        }
        if !(self.n_slab > self.n_hole && self.n_hole >= 1.0) {
            return Err(Error::invalid("need n_slab > n_hole >= 1"));
        }
        Ok(())
    }

    pub fn eps_slab(&self) -> f64 {
        self.n_slab * self.n_slab
    }

    pub fn eps_hole(&self) -> f64 {
        self.n_hole * self.n_hole
    }

    pub fn hole_radius_nm(&self) -> f64 {
        self.r_over_a * self.a_nm
    }

    /// Row spacing √3·a/2 in nm.
    pub fn row_spacing_nm(&self) -> f64 {
        ROW_SPACING * self.a_nm
    }
}

/// Layout of a finite device: end mirror, slow-light W1 section, stretched
/// step coupler, terminating strip waveguide.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveguideLayout {
    pub slow_periods: usize,
    pub coupler_periods: usize,
    /// Period multiplier of the coupler section.
    #[serde(default = "default_stretch")]
    pub stretch_factor: f64,
    /// Holes reinserted into the waveguide to form the end mirror.
    pub mirror_holes: usize,
    /// Total number of hole rows across the crystal, counting the omitted
    /// center row (odd), or 0 for no crystal at all.
    pub crystal_rows: usize,
    /// Insert one extra hole at the coupler/slow-light interface, forming a
    /// Fabry-Perot resonator for group-index characterization.
    #[serde(default)]
    pub reflector_hole: bool,
}

fn default_stretch() -> f64 {
    1.07
}

impl WaveguideLayout {
    /// The experimental devices: 31 slow periods, 4-period coupler with
    /// stretch 1.07, 7-hole mirror, 33 rows.
    pub fn paper_device() -> Self {
        WaveguideLayout {
            slow_periods: 31,
            coupler_periods: 4,
            stretch_factor: 1.07,
            mirror_holes: 7,
            crystal_rows: 33,
            reflector_hole: false,
        }
    }

    /// Bare strip waveguide (no crystal).
    pub fn strip_only() -> Self {
        WaveguideLayout {
            slow_periods: 0,
            coupler_periods: 0,
            stretch_factor: 1.0,
            mirror_holes: 0,
            crystal_rows: 0,
            reflector_hole: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stretch_factor < 1.0 {
            return Err(Error::invalid("stretch factor must be >= 1"));
        }
        if self.crystal_rows != 0 && (self.crystal_rows < 3 || self.crystal_rows % 2 == 0) {
            return Err(Error::invalid("crystal_rows must be 0 or an odd count >= 3"));
        }
        Ok(())
    }

    pub fn rows_per_side(&self) -> usize {
        if self.crystal_rows == 0 {
            0
        } else {
            (self.crystal_rows - 1) / 2
        }
    }

    fn has_crystal(&self) -> bool {
        self.crystal_rows >= 3
            && (self.mirror_holes + self.slow_periods + self.coupler_periods) > 0
    }
}

/// Rasterized 2D relative-permittivity field.
///
/// Pixels are rectangular with spacings `dx_nm` x `dy_nm` (dy is chosen so
/// the √3/2 row spacing is represented exactly). `origin_nm` is the physical
/// coordinate of the lower-left corner of pixel (0, 0); pixel centers sit at
/// origin + ((ix + 1/2) dx, (iy + 1/2) dy). Values are stored row-major
/// (ix fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonMap {
    pub nx: usize,
    pub ny: usize,
    pub dx_nm: f64,
    pub dy_nm: f64,
    pub origin_nm: (f64, f64),
    eps: Vec<f64>,
}

impl EpsilonMap {
    pub fn uniform(nx: usize, ny: usize, dx_nm: f64, dy_nm: f64, origin_nm: (f64, f64), eps: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("grid dimensions must be >= 1"));
        }
        Ok(EpsilonMap {
            nx,
            ny,
            dx_nm,
            dy_nm,
            origin_nm,
            eps: vec![eps; nx * ny],
        })
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.eps[iy * self.nx + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, value: f64) {
        self.eps[iy * self.nx + ix] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.eps
    }

    pub fn width_nm(&self) -> f64 {
        self.nx as f64 * self.dx_nm
    }

    pub fn height_nm(&self) -> f64 {
        self.ny as f64 * self.dy_nm
    }

    /// Physical coordinate of the center of pixel (ix, iy).
    pub fn pixel_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin_nm.0 + (ix as f64 + 0.5) * self.dx_nm,
            self.origin_nm.1 + (iy as f64 + 0.5) * self.dy_nm,
        )
    }

    /// Pixel containing the physical point, if inside the map.
    pub fn pixel_at(&self, x_nm: f64, y_nm: f64) -> Option<(usize, usize)> {
        let fx = (x_nm - self.origin_nm.0) / self.dx_nm;
        let fy = (y_nm - self.origin_nm.1) / self.dy_nm;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        (ix < self.nx && iy < self.ny).then_some((ix, iy))
    }

    /// Uniform map of the same dimensions filled with the slab permittivity;
    /// the bulk reference for LDOS normalization.
    pub fn to_bulk(&self, eps: f64) -> EpsilonMap {
        EpsilonMap {
            nx: self.nx,
            ny: self.ny,
            dx_nm: self.dx_nm,
            dy_nm: self.dy_nm,
            origin_nm: self.origin_nm,
            eps: vec![eps; self.nx * self.ny],
        }
    }

    /// Fraction of the cell area occupied by hole material, inferred from the
    /// area-weighted permittivity.
    pub fn air_fill_fraction(&self, spec: &LatticeSpec) -> f64 {
        let (bg, hole) = (spec.eps_slab(), spec.eps_hole());
        if (bg - hole).abs() < 1e-300 {
            return 0.0;
        }
        let total: f64 = self.eps.iter().map(|&e| (bg - e) / (bg - hole)).sum();
        total / (self.nx * self.ny) as f64
    }

    /// Maximum |eps(x, y) - eps(x, -y)| over the map; 0 for maps that are
    /// mirror-symmetric about y = 0 (requires origin centered in y).
    pub fn mirror_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for iy in 0..self.ny / 2 {
            let iy2 = self.ny - 1 - iy;
            for ix in 0..self.nx {
                worst = worst.max((self.get(ix, iy) - self.get(ix, iy2)).abs());
            }
        }
        worst
    }

    const MAGIC: &'static [u8; 8] = b"PCWGRID1";

    /// Self-describing binary grid file: magic, dims, spacings, origin, then
    /// row-major f64 little-endian values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.nx as u32).to_le_bytes())?;
        w.write_all(&(self.ny as u32).to_le_bytes())?;
        for v in [self.dx_nm, self.dy_nm, self.origin_nm.0, self.origin_nm.1] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.eps {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Parse("not a PCWGRID1 file".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let nx = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let ny = u32::from_le_bytes(b4) as usize;
        let mut scal = [0f64; 4];
        for s in &mut scal {
            r.read_exact(&mut b8)?;
            *s = f64::from_le_bytes(b8);
        }
        if nx == 0 || ny == 0 || nx.saturating_mul(ny) > (1 << 31) {
            return Err(Error::Parse("implausible grid dimensions".into()));
        }
        let mut eps = Vec::with_capacity(nx * ny);
        for _ in 0..nx * ny {
            r.read_exact(&mut b8)?;
            eps.push(f64::from_le_bytes(b8));
        }
        Ok(EpsilonMap {
            nx,
            ny,
            dx_nm: scal[0],
            dy_nm: scal[1],
            origin_nm: (scal[2], scal[3]),
            eps,
        })
    }

    pub fn write_binary_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn read_binary_file(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f))
    }

    /// CSV export: a header line `nx,ny,dx_nm,dy_nm`, then row-major values
    /// one row of the grid per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{},{},{},{}", self.nx, self.ny, self.dx_nm, self.dy_nm)?;
        for iy in 0..self.ny {
            let row: Vec<String> = (0..self.nx).map(|ix| format!("{}", self.get(ix, iy))).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Options for finite-device construction.
#[derive(Debug, Clone)]
pub struct DeviceBuildOptions {
    /// Hard cap on nx*ny.
    pub max_pixels: usize,
    /// Solid-slab margin left of the mirror section, in lattice periods.
    pub left_margin_periods: f64,
    /// Strip-waveguide length after the coupler, in lattice periods. The
    /// strip runs to the right edge of the map, into any absorbing layer.
    pub strip_periods: f64,
    /// Strip width in units of the lattice constant.
    pub strip_width_a: f64,
    /// Solid-slab margin beyond the outermost hole rows, in rows.
    pub y_margin_rows: usize,
}

impl Default for DeviceBuildOptions {
    fn default() -> Self {
        DeviceBuildOptions {
            max_pixels: 40_000_000,
            left_margin_periods: 2.0,
            strip_periods: 6.0,
            strip_width_a: 3.0 * ROW_SPACING, // matches the W1 core width scale
            y_margin_rows: 2,
        }
    }
}

// ---------------------------------------------------------------------------
// rasterization
// ---------------------------------------------------------------------------

struct Scene {
    /// (x, y, r) air disks, already replicated for periodic images.
    holes: Vec<(f64, f64, f64)>,
    eps_bg: f64,
    eps_hole: f64,
}

const SUPERSAMPLE: usize = 8;

impl Scene {
    /// Paint all holes onto the map with area-weighted boundary pixels.
    fn paint(&self, map: &mut EpsilonMap) {
        let (dx, dy) = (map.dx_nm, map.dy_nm);
        let band = 1.0 * (dx * dx + dy * dy).sqrt();
        for &(hx, hy, r) in &self.holes {
            let ix_lo = (((hx - r - band) - map.origin_nm.0) / dx).floor().max(0.0) as usize;
            let ix_hi = ((((hx + r + band) - map.origin_nm.0) / dx).ceil() as usize).min(map.nx);
            let iy_lo = (((hy - r - band) - map.origin_nm.1) / dy).floor().max(0.0) as usize;
            let iy_hi = ((((hy + r + band) - map.origin_nm.1) / dy).ceil() as usize).min(map.ny);
            for iy in iy_lo..iy_hi {
                for ix in ix_lo..ix_hi {
                    let (cx, cy) = map.pixel_center(ix, iy);
                    let d = ((cx - hx).powi(2) + (cy - hy).powi(2)).sqrt();
                    if d <= r - band {
                        map.set(ix, iy, self.eps_hole);
                    } else if d < r + band {
                        // boundary band: supersample the disk coverage
                        let mut inside = 0usize;
                        for sy in 0..SUPERSAMPLE {
                            for sx in 0..SUPERSAMPLE {
                                let x = map.origin_nm.0
                                    + (ix as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64) * dx;
                                let y = map.origin_nm.1
                                    + (iy as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64) * dy;
                                let dd = (x - hx).powi(2) + (y - hy).powi(2);
                                if dd <= r * r {
                                    inside += 1;
                                }
                            }
                        }
                        if inside > 0 {
                            let f = inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                            let old = map.get(ix, iy);
                            map.set(ix, iy, f * self.eps_hole + (1.0 - f) * old);
                        }
                    }
                }
            }
        }
        let _ = self.eps_bg;
    }
}

/// Paint an axis-aligned air rectangle with exact area-weighted edges.
fn paint_air_rect(map: &mut EpsilonMap, x0: f64, x1: f64, y0: f64, y1: f64, eps_air: f64) {
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    let (dx, dy) = (map.dx_nm, map.dy_nm);
    let ix_lo = ((x0 - map.origin_nm.0) / dx).floor().max(0.0) as usize;
    let ix_hi = (((x1 - map.origin_nm.0) / dx).ceil() as usize).min(map.nx);
    let iy_lo = ((y0 - map.origin_nm.1) / dy).floor().max(0.0) as usize;
    let iy_hi = (((y1 - map.origin_nm.1) / dy).ceil() as usize).min(map.ny);
    for iy in iy_lo..iy_hi {
        let py0 = map.origin_nm.1 + iy as f64 * dy;
        let cov_y = ((y1.min(py0 + dy) - y0.max(py0)) / dy).clamp(0.0, 1.0);
        for ix in ix_lo..ix_hi {
            let px0 = map.origin_nm.0 + ix as f64 * dx;
            let cov_x = ((x1.min(px0 + dx) - x0.max(px0)) / dx).clamp(0.0, 1.0);
            let f = cov_x * cov_y;
            if f >= 1.0 - 1e-12 {
                map.set(ix, iy, eps_air);
            } else if f > 0.0 {
                let old = map.get(ix, iy);
                map.set(ix, iy, f * eps_air + (1.0 - f) * old);
            }
        }
    }
}

/// Pixels per row spacing for a given x-resolution; dy is derived from this
/// so the √3/2 row spacing is exact on the grid.
fn pixels_per_row(resolution: usize) -> usize {
    ((resolution as f64) * ROW_SPACING).round().max(1.0) as usize
}

fn mirror_in_y(map: &mut EpsilonMap) {
    for iy in 0..map.ny / 2 {
        let iy2 = map.ny - 1 - iy;
        for ix in 0..map.nx {
            let v = map.get(ix, iy);
            map.set(ix, iy2, v);
        }
    }
}

// ---------------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------------

/// Rasterize the primitive rectangular cell of the triangular lattice:
/// a x √3·a with holes at (0, 0) and (a/2, √3·a/2), periodically wrapped.
/// `resolution` is pixels per lattice constant along x (>= 8).
pub fn build_unit_cell(spec: &LatticeSpec, resolution: usize) -> Result<EpsilonMap> {
    spec.validate()?;
    if resolution < 8 {
        return Err(Error::invalid("resolution must be >= 8 pixels per lattice constant"));
    }
    let a = spec.a_nm;
    let s = spec.row_spacing_nm();
    let ppr = pixels_per_row(resolution);
    let nx = resolution;
    let ny = 2 * ppr;
    let dx = a / nx as f64;
    let dy = s / ppr as f64;
    let mut map = EpsilonMap::uniform(nx, ny, dx, dy, (0.0, 0.0), spec.eps_slab())?;
    if spec.r_over_a == 0.0 {
        return Ok(map);
    }
    let r = spec.hole_radius_nm();
    let mut holes = Vec::new();
    for im in -1..=1 {
        for jm in -1..=1 {
            let (ox, oy) = (im as f64 * a, jm as f64 * 2.0 * s);
            holes.push((ox, oy, r));
            holes.push((a / 2.0 + ox, s + oy, r));
        }
    }
    Scene {
        holes,
        eps_bg: spec.eps_slab(),
        eps_hole: spec.eps_hole(),
    }
    .paint(&mut map);
    Ok(map)
}

/// Rasterize a W1 supercell: one lattice period long in x, with
/// `rows_per_side` hole rows on each side of the omitted center row plus the
/// shared boundary row (2*rows_per_side + 1 hole rows in total). The cell
/// tiles the perfect triangular lattice periodically in y and is exactly
/// mirror-symmetric about the waveguide axis y = 0.
pub fn build_w1_supercell(spec: &LatticeSpec, rows_per_side: usize, resolution: usize) -> Result<EpsilonMap> {
    spec.validate()?;
    if resolution < 8 {
        return Err(Error::invalid("resolution must be >= 8 pixels per lattice constant"));
    }
    if rows_per_side < 3 {
        return Err(Error::invalid("rows_per_side must be >= 3"));
    }
    let a = spec.a_nm;
    let s = spec.row_spacing_nm();
    let n = rows_per_side as i64;
    let ppr = pixels_per_row(resolution);
    let nx = resolution;
    let ny = (2 * rows_per_side + 2) * ppr;
    let dx = a / nx as f64;
    let dy = s / ppr as f64;
    let height = (2 * n + 2) as f64 * s;
    let mut map = EpsilonMap::uniform(nx, ny, dx, dy, (0.0, -height / 2.0), spec.eps_slab())?;
    if spec.r_over_a == 0.0 {
        return Ok(map);
    }
    let r = spec.hole_radius_nm();
    let row_offset = |ridx: i64| if ridx.rem_euclid(2) == 1 { a / 2.0 } else { 0.0 };
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for ridx in -n..=n {
        if ridx == 0 {
            continue; // the waveguide
        }
        rows.push((row_offset(ridx), ridx as f64 * s));
    }
    rows.push((row_offset(n + 1), (n + 1) as f64 * s)); // boundary row, wraps to -(n+1)s
    let mut holes = Vec::new();
    for &(off, y) in &rows {
        for im in -1..=1 {
            for jm in -1..=1 {
                holes.push((off + im as f64 * a, y + jm as f64 * height, r));
            }
        }
    }
    Scene {
        holes,
        eps_bg: spec.eps_slab(),
        eps_hole: spec.eps_hole(),
    }
    .paint(&mut map);
    mirror_in_y(&mut map);
    Ok(map)
}

/// Rasterize a finite device: end mirror (reinserted holes), slow-light W1
/// section, stretched step coupler, and a terminating strip waveguide that
/// runs to the right edge of the map. Optionally one reflector hole at the
/// slow/coupler interface.
pub fn build_finite_device(
    spec: &LatticeSpec,
    layout: &WaveguideLayout,
    resolution: usize,
) -> Result<EpsilonMap> {
    build_finite_device_with(spec, layout, resolution, &DeviceBuildOptions::default())
}

pub fn build_finite_device_with(
    spec: &LatticeSpec,
    layout: &WaveguideLayout,
    resolution: usize,
    opts: &DeviceBuildOptions,
) -> Result<EpsilonMap> {
    spec.validate()?;
    layout.validate()?;
    if resolution < 8 {
        return Err(Error::invalid("resolution must be >= 8 pixels per lattice constant"));
    }
    let a = spec.a_nm;
    let s = spec.row_spacing_nm();
    let ppr = pixels_per_row(resolution);
    let dx = a / resolution as f64;
    let dy = s / ppr as f64;
    let a_str = a * layout.stretch_factor;
    let strip_half = 0.5 * opts.strip_width_a * a;

    if !layout.has_crystal() {
        // plain strip waveguide across the whole map
        let len = (opts.left_margin_periods + opts.strip_periods).max(4.0) * a;
        let nx = (len / dx).ceil() as usize;
        let half_rows = opts.y_margin_rows + 3;
        let ny = 2 * half_rows * ppr;
        if nx * ny > opts.max_pixels {
            return Err(Error::Resource(format!("device grid {nx}x{ny} exceeds max pixels")));
        }
        let height = (2 * half_rows) as f64 * s;
        let mut map = EpsilonMap::uniform(nx, ny, dx, dy, (0.0, -height / 2.0), spec.eps_slab())?;
        let w = map.width_nm();
        paint_air_rect(&mut map, 0.0, w, strip_half, height / 2.0, 1.0);
        paint_air_rect(&mut map, 0.0, w, -height / 2.0, -strip_half, 1.0);
        mirror_in_y(&mut map);
        return Ok(map);
    }

    let n_side = layout.rows_per_side() as i64;
    let m = layout.mirror_holes;
    let slow = layout.slow_periods;
    let cpl = layout.coupler_periods;

    // column positions of the offset-0 rows: uniform period a through the
    // mirror+slow sections, stretched through the coupler
    let x0 = opts.left_margin_periods * a;
    let n_unif = m + slow;
    let x_interface = x0 + n_unif as f64 * a;
    let mut cols: Vec<f64> = (0..=n_unif).map(|j| x0 + j as f64 * a).collect();
    for j in 1..=cpl {
        cols.push(x_interface + j as f64 * a_str);
    }
    let crystal_end = x_interface + cpl as f64 * a_str + 0.5 * a_str;
    let x_total = crystal_end + opts.strip_periods * a;
    let nx = (x_total / dx).ceil() as usize;
    let half_rows = n_side as usize + opts.y_margin_rows;
    let ny = 2 * half_rows * ppr;
    if nx * ny > opts.max_pixels {
        return Err(Error::Resource(format!("device grid {nx}x{ny} exceeds max pixels")));
    }
    let height = (2 * half_rows) as f64 * s;
    let mut map = EpsilonMap::uniform(nx, ny, dx, dy, (0.0, -height / 2.0), spec.eps_slab())?;
    let r = spec.hole_radius_nm();

    let mut holes: Vec<(f64, f64, f64)> = Vec::new();
    // side rows of the crystal; offset rows sit mid-way between columns
    for ridx in -n_side..=n_side {
        if ridx == 0 {
            continue;
        }
        let y = ridx as f64 * s;
        if ridx.rem_euclid(2) == 0 {
            for &cx in &cols {
                holes.push((cx, y, r));
            }
        } else {
            for w in cols.windows(2) {
                holes.push((0.5 * (w[0] + w[1]), y, r));
            }
        }
    }
    // mirror: holes reinserted into the center row at the left end
    for j in 0..m {
        holes.push((x0 + j as f64 * a, 0.0, r));
    }
    // reflector hole exactly at the coupler/slow interface
    if layout.reflector_hole {
        holes.push((x_interface, 0.0, r));
    }
    Scene {
        holes,
        eps_bg: spec.eps_slab(),
        eps_hole: spec.eps_hole(),
    }
    .paint(&mut map);

    // strip waveguide section: slab ends, air surrounds the strip
    let w = map.width_nm();
    paint_air_rect(&mut map, crystal_end, w, strip_half, height / 2.0, 1.0);
    paint_air_rect(&mut map, crystal_end, w, -height / 2.0, -strip_half, 1.0);
    mirror_in_y(&mut map);
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_bad_arguments() {
        assert!(LatticeSpec::new(420.0, 0.6).is_err());
        assert!(LatticeSpec::new(-1.0, 0.28).is_err());
        let spec = LatticeSpec::paper_device();
        assert!(build_unit_cell(&spec, 4).is_err());
        assert!(build_w1_supercell(&spec, 2, 16).is_err());
    }

    #[test]
    fn zero_radius_gives_uniform_map() {
        let spec = LatticeSpec::new(420.0, 0.0).unwrap();
        let map = build_unit_cell(&spec, 16).unwrap();
        assert!(map.values().iter().all(|&e| (e - spec.eps_slab()).abs() < 1e-12));
    }

    #[test]
    fn unit_cell_air_fraction_matches_analytic() {
        // area fraction of two r=0.28a disks in the a x sqrt(3) a cell
        let spec = LatticeSpec::paper_device();
        let analytic = 2.0 * std::f64::consts::PI * 0.28f64.powi(2) / 3f64.sqrt();
        assert_relative_eq!(analytic, 0.284403, epsilon = 1e-6);
        for res in [32, 64] {
            let map = build_unit_cell(&spec, res).unwrap();
            let frac = map.air_fill_fraction(&spec);
            assert!(
                (frac - analytic).abs() / analytic < 0.01,
                "res {res}: fraction {frac} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn air_fraction_converges_with_resolution() {
        let spec = LatticeSpec::paper_device();
        let analytic = 2.0 * std::f64::consts::PI * 0.28f64.powi(2) / 3f64.sqrt();
        let err = |res: usize| {
            let map = build_unit_cell(&spec, res).unwrap();
            (map.air_fill_fraction(&spec) - analytic).abs()
        };
        // O(1/resolution) or better
        assert!(err(64) < err(16) + 1e-9);
        assert!(err(64) < 2e-3);
    }

    #[test]
    fn supercell_is_mirror_symmetric_and_has_defect_row() {
        let spec = LatticeSpec::paper_device();
        let map = build_w1_supercell(&spec, 5, 16).unwrap();
        assert_eq!(map.mirror_asymmetry(), 0.0);
        // center row has slab permittivity at a would-be hole site
        let (ix, iy) = map.pixel_at(0.01, 0.0).unwrap();
        assert_relative_eq!(map.get(ix, iy), spec.eps_slab());
        // adjacent row holds a hole at its site (offset a/2, y = s)
        let s = spec.row_spacing_nm();
        let (ix, iy) = map.pixel_at(spec.a_nm / 2.0, s).unwrap();
        assert_relative_eq!(map.get(ix, iy), spec.eps_hole());
    }

    #[test]
    fn supercell_hole_rows_count() {
        // hole area should correspond to 2n+1 rows of one hole per period
        let spec = LatticeSpec::paper_device();
        let n = 5;
        let map = build_w1_supercell(&spec, n, 32).unwrap();
        let hole_area = std::f64::consts::PI * spec.hole_radius_nm().powi(2);
        let cell_area = map.width_nm() * map.height_nm();
        let expect = (2 * n + 1) as f64 * hole_area / cell_area;
        let got = map.air_fill_fraction(&spec);
        assert!(
            (got - expect).abs() / expect < 0.02,
            "hole fill {got} vs expected {expect}"
        );
    }

    #[test]
    fn determinism_bit_identical() {
        let spec = LatticeSpec::paper_device();
        let m1 = build_w1_supercell(&spec, 4, 20).unwrap();
        let m2 = build_w1_supercell(&spec, 4, 20).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn strip_only_layout_is_strip() {
        let spec = LatticeSpec::paper_device();
        let map = build_finite_device(&spec, &WaveguideLayout::strip_only(), 16).unwrap();
        // center is slab, far off-axis is air, everywhere along x
        for fx in [0.1, 0.5, 0.9] {
            let x = fx * map.width_nm();
            let (ix, iy) = map.pixel_at(x, 0.0).unwrap();
            assert_relative_eq!(map.get(ix, iy), spec.eps_slab());
            let (ix, iy) = map.pixel_at(x, 0.45 * map.height_nm()).unwrap();
            assert_relative_eq!(map.get(ix, iy), 1.0);
        }
    }

    #[test]
    fn finite_device_reflector_hole_adds_exactly_one_hole() {
        let spec = LatticeSpec::paper_device();
        let mut layout = WaveguideLayout {
            slow_periods: 8,
            coupler_periods: 2,
            stretch_factor: 1.07,
            mirror_holes: 3,
            crystal_rows: 9,
            reflector_hole: false,
        };
        let plain = build_finite_device(&spec, &layout, 16).unwrap();
        layout.reflector_hole = true;
        let with_hole = build_finite_device(&spec, &layout, 16).unwrap();
        let hole_area = std::f64::consts::PI * spec.hole_radius_nm().powi(2);
        let px_area = plain.dx_nm * plain.dy_nm;
        let diff: f64 = plain
            .values()
            .iter()
            .zip(with_hole.values())
            .map(|(&p, &q)| (p - q) / (spec.eps_slab() - spec.eps_hole()))
            .sum::<f64>()
            * px_area;
        assert!(
            (diff - hole_area).abs() / hole_area < 0.02,
            "added air area {diff} vs one hole {hole_area}"
        );
        // and the hole is at the slow/coupler interface on the axis
        let x_int = 2.0 * spec.a_nm + (3 + 8) as f64 * spec.a_nm;
        let (ix, iy) = with_hole.pixel_at(x_int, 0.0).unwrap();
        assert_relative_eq!(with_hole.get(ix, iy), spec.eps_hole());
        assert_relative_eq!(plain.get(ix, iy), spec.eps_slab());
    }

    #[test]
    fn device_resource_limit() {
        let spec = LatticeSpec::paper_device();
        let opts = DeviceBuildOptions {
            max_pixels: 1000,
            ..Default::default()
        };
        let err = build_finite_device_with(&spec, &WaveguideLayout::paper_device(), 16, &opts);
        assert!(matches!(err, Err(Error::Resource(_))));
    }

    #[test]
    fn binary_roundtrip() {
        let spec = LatticeSpec::paper_device();
        let map = build_unit_cell(&spec, 16).unwrap();
        let mut buf = Vec::new();
        map.write_binary(&mut buf).unwrap();
        let back = EpsilonMap::read_binary(buf.as_slice()).unwrap();
        assert_eq!(map, back);
    }
}
