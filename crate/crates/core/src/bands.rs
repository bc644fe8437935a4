//! Plane-wave-expansion eigensolver for 2D TE Bloch modes.
//!
//! The eigenproblem is posed for the out-of-plane magnetic field H_z
//! (in-plane E): -∇·(1/ε)∇ H = (ω/c)² H. In the plane-wave basis
//! H = Σ_G c_G exp(i(k+G)·r) the operator becomes the Hermitian matrix
//!
//!   Θ_{GG'} = η(G-G') (k+G)·(k+G'),
//!
//! with η the Fourier coefficients of 1/ε, taken from the rasterized
//! permittivity map by FFT so one geometry representation feeds both this
//! solver and the FDTD engine. The dense Hermitian solve is exact and
//! deterministic at desk-scale basis sizes.

use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::geometry::EpsilonMap;
use crate::{Error, Result, C_NM_PER_PS};

/// Bloch wavevector in units of 2π/a, where a is the cell period along x.
/// Supercell paths run along kx with ky = 0; unit-cell paths may use both
/// components (e.g. Γ-M-K-Γ of the triangular lattice).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub kx: f64,
    #[serde(default)]
    pub ky: f64,
}

impl BlochVector {
    pub fn new(kx: f64) -> Self {
        BlochVector { kx, ky: 0.0 }
    }

    pub fn new2(kx: f64, ky: f64) -> Self {
        BlochVector { kx, ky }
    }
}

/// Mirror-symmetry label of a guided band about the waveguide axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

/// Which reciprocal lattice the plane-wave basis spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatticeKind {
    /// All harmonics of the rectangular raster cell.
    #[default]
    Rectangular,
    /// The triangular primitive lattice: the rectangular a x √3a cell holds
    /// two lattice points, and its (i, j) harmonics with i+j even are exactly
    /// the primitive reciprocal lattice. Band indices then match the
    /// primitive-cell convention (no folding).
    TriangularPrimitive,
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub lattice: LatticeKind,
    /// Keep eigenvectors for field reconstruction and parity classification.
    pub keep_modes: bool,
}

/// Stored eigenvectors plus everything needed to reconstruct mode fields.
#[derive(Debug, Clone)]
pub struct ModeStore {
    /// Plane-wave basis as integer harmonics (i along x, j along y).
    pub basis: Vec<(i64, i64)>,
    /// coeffs[k_index][band][basis_index]
    pub coeffs: Vec<Vec<Vec<Complex64>>>,
    /// Copy of the cell the diagram was solved on.
    pub cell: EpsilonMap,
}

/// ω_n(k) bands with optional parity labels and stored modes.
#[derive(Debug, Clone)]
pub struct BandDiagram {
    /// Cell period along x in nm (the reference lattice constant for k).
    pub a_nm: f64,
    pub k_points: Vec<BlochVector>,
    /// bands[k_index][band], THz, ascending in band at each k.
    pub bands: Vec<Vec<f64>>,
    /// Per-band parity label, set by [`classify_guided_modes`].
    pub parity: Vec<Option<Parity>>,
    pub modes: Option<ModeStore>,
}

/// n_g(ν) along one band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupIndexCurve {
    pub nu_thz: Vec<f64>,
    pub ng: Vec<f64>,
    /// Frequencies dropped because dω/dk vanished within tolerance
    /// (band-edge singularities).
    pub omitted_nu_thz: Vec<f64>,
}

/// A frequency interval free of bands.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BandGap {
    pub lo_thz: f64,
    pub hi_thz: f64,
    /// Index of the band just below the gap.
    pub below_band: usize,
}

impl BandGap {
    pub fn width_thz(&self) -> f64 {
        self.hi_thz - self.lo_thz
    }

    pub fn contains(&self, nu_thz: f64) -> bool {
        nu_thz > self.lo_thz && nu_thz < self.hi_thz
    }
}

// ---------------------------------------------------------------------------
// FFT of the inverse permittivity
// ---------------------------------------------------------------------------

/// 2D FFT (rows then columns) of the map's 1/ε, normalized so entry (0, 0)
/// is the mean of 1/ε.
fn inv_eps_fourier(cell: &EpsilonMap) -> Vec<Complex64> {
    let (nx, ny) = (cell.nx, cell.ny);
    let mut data: Vec<Complex64> = cell
        .values()
        .iter()
        .map(|&e| Complex64::new(1.0 / e, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let fft_x = planner.plan_fft_forward(nx);
    let fft_y = planner.plan_fft_forward(ny);
    for iy in 0..ny {
        fft_x.process(&mut data[iy * nx..(iy + 1) * nx]);
    }
    let mut col = vec![Complex64::default(); ny];
    for ix in 0..nx {
        for iy in 0..ny {
            col[iy] = data[iy * nx + ix];
        }
        fft_y.process(&mut col);
        for iy in 0..ny {
            data[iy * nx + ix] = col[iy];
        }
    }
    let norm = 1.0 / (nx * ny) as f64;
    for v in &mut data {
        *v *= norm;
    }
    data
}

fn build_basis(cell: &EpsilonMap, pw_cutoff: usize, lattice: LatticeKind) -> Result<Vec<(i64, i64)>> {
    let lx = cell.width_nm();
    let ly = cell.height_nm();
    let g_max = pw_cutoff as f64 * std::f64::consts::TAU / lx;
    let imax = pw_cutoff as i64;
    let jmax = (g_max * ly / std::f64::consts::TAU).floor() as i64;
    if 2 * imax >= cell.nx as i64 || (cell.ny > 1 && 2 * jmax >= cell.ny as i64) {
        return Err(Error::invalid(format!(
            "pw_cutoff {pw_cutoff} needs more raster resolution ({}x{} grid cannot resolve \
             harmonic differences up to ({}, {}))",
            cell.nx,
            cell.ny,
            2 * imax,
            2 * jmax
        )));
    }
    let mut basis = Vec::new();
    for i in -imax..=imax {
        for j in -jmax..=jmax {
            if lattice == LatticeKind::TriangularPrimitive && (i + j).rem_euclid(2) != 0 {
                continue;
            }
            let gx = std::f64::consts::TAU * i as f64 / lx;
            let gy = std::f64::consts::TAU * j as f64 / ly;
            if gx * gx + gy * gy <= g_max * g_max * (1.0 + 1e-12) {
                basis.push((i, j));
            }
        }
    }
    Ok(basis)
}

/// Solve the lowest `n_bands` TE eigenfrequencies for every k-point.
pub fn solve_te_bands(
    cell: &EpsilonMap,
    k_path: &[BlochVector],
    n_bands: usize,
    pw_cutoff: usize,
) -> Result<BandDiagram> {
    solve_te_bands_with(cell, k_path, n_bands, pw_cutoff, &SolveOptions::default())
}

pub fn solve_te_bands_with(
    cell: &EpsilonMap,
    k_path: &[BlochVector],
    n_bands: usize,
    pw_cutoff: usize,
    opts: &SolveOptions,
) -> Result<BandDiagram> {
    if pw_cutoff < 3 {
        return Err(Error::invalid("pw_cutoff must be >= 3"));
    }
    if k_path.is_empty() {
        return Err(Error::invalid("empty k path"));
    }
    let basis = build_basis(cell, pw_cutoff, opts.lattice)?;
    let nb = basis.len();
    if n_bands == 0 || n_bands > nb {
        return Err(Error::invalid(format!(
            "n_bands must be in 1..={nb} for this basis"
        )));
    }
    let eta = inv_eps_fourier(cell);
    let (nx, ny) = (cell.nx as i64, cell.ny as i64);
    let lx = cell.width_nm();
    let ly = cell.height_nm();
    let a = lx;
    let tau = std::f64::consts::TAU;

    let gphys: Vec<(f64, f64)> = basis
        .iter()
        .map(|&(i, j)| (tau * i as f64 / lx, tau * j as f64 / ly))
        .collect();

    let mut bands = Vec::with_capacity(k_path.len());
    let mut coeffs: Vec<Vec<Vec<Complex64>>> = Vec::new();

    for k in k_path {
        let kx = k.kx * tau / a;
        let ky = k.ky * tau / a;
        let mut th = Array2::<Complex64>::zeros((nb, nb));
        for p in 0..nb {
            let (ip, jp) = basis[p];
            let (gxp, gyp) = gphys[p];
            for q in p..nb {
                let (iq, jq) = basis[q];
                let (gxq, gyq) = gphys[q];
                let di = (ip - iq).rem_euclid(nx) as usize;
                let dj = (jp - jq).rem_euclid(ny) as usize;
                let e = eta[dj * nx as usize + di];
                let dot = (kx + gxp) * (kx + gxq) + (ky + gyp) * (ky + gyq);
                th[(p, q)] = e * dot;
                if q != p {
                    th[(q, p)] = e.conj() * dot;
                }
            }
        }
        let (vals, vecs) = th
            .eigh(UPLO::Upper)
            .map_err(|e| Error::numerical(format!("eigensolve failed: {e}")))?;
        let max_abs = vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let mut freqs = Vec::with_capacity(n_bands);
        for b in 0..n_bands {
            let lam = vals[b];
            if lam < -1e-10 * max_abs.max(1.0) {
                return Err(Error::numerical(format!(
                    "negative eigenvalue {lam:.3e} at k = ({}, {}); operator lost Hermiticity",
                    k.kx, k.ky
                )));
            }
            freqs.push(C_NM_PER_PS * lam.max(0.0).sqrt() / tau);
        }
        if opts.keep_modes {
            let mut per_k = Vec::with_capacity(n_bands);
            for b in 0..n_bands {
                per_k.push((0..nb).map(|p| vecs[(p, b)]).collect());
            }
            coeffs.push(per_k);
        }
        bands.push(freqs);
    }

    Ok(BandDiagram {
        a_nm: a,
        k_points: k_path.to_vec(),
        bands,
        parity: vec![None; n_bands],
        modes: opts.keep_modes.then(|| ModeStore {
            basis,
            coeffs,
            cell: cell.clone(),
        }),
    })
}

/// Largest frequency interval free of bands: for each adjacent band pair,
/// gap_lo = max over k of the lower band and gap_hi = min over k of the upper
/// band; the widest positive interval wins. `None` when every pair overlaps.
pub fn find_band_gap(diagram: &BandDiagram) -> Option<BandGap> {
    let n_bands = diagram.bands.first()?.len();
    let mut best: Option<BandGap> = None;
    for b in 0..n_bands.saturating_sub(1) {
        let lo = diagram
            .bands
            .iter()
            .map(|f| f[b])
            .fold(f64::NEG_INFINITY, f64::max);
        let hi = diagram
            .bands
            .iter()
            .map(|f| f[b + 1])
            .fold(f64::INFINITY, f64::min);
        if hi > lo && best.as_ref().map_or(true, |g| hi - lo > g.width_thz()) {
            best = Some(BandGap {
                lo_thz: lo,
                hi_thz: hi,
                below_band: b,
            });
        }
    }
    best
}

// ---------------------------------------------------------------------------
// mode fields
// ---------------------------------------------------------------------------

/// In-plane TE mode fields of one (k, band) pair on the cell raster. The
/// fields are the periodic Bloch part; overall normalization and the
/// exp(ik·r) phase are omitted (intensity ratios and mirror overlaps are
/// unaffected).
#[derive(Debug, Clone)]
pub struct TeMode {
    pub nx: usize,
    pub ny: usize,
    pub dx_nm: f64,
    pub dy_nm: f64,
    pub origin_nm: (f64, f64),
    pub hz: Vec<Complex64>,
    pub ex: Vec<Complex64>,
    pub ey: Vec<Complex64>,
}

impl TeMode {
    /// |E|² at pixel (ix, iy).
    pub fn intensity(&self, ix: usize, iy: usize) -> f64 {
        let idx = iy * self.nx + ix;
        self.ex[idx].norm_sqr() + self.ey[idx].norm_sqr()
    }

    /// Pixel index of the maximum of the chosen component's intensity.
    pub fn max_pixel_of(&self, component: FieldComponent) -> (usize, usize) {
        let field = match component {
            FieldComponent::Ex => &self.ex,
            FieldComponent::Ey => &self.ey,
        };
        let mut best = (0usize, 0.0f64);
        for (idx, v) in field.iter().enumerate() {
            let m = v.norm_sqr();
            if m > best.1 {
                best = (idx, m);
            }
        }
        (best.0 % self.nx, best.0 / self.nx)
    }

    /// Physical coordinates of the maximum of a component.
    pub fn max_position_of(&self, component: FieldComponent) -> (f64, f64) {
        let (ix, iy) = self.max_pixel_of(component);
        (
            self.origin_nm.0 + (ix as f64 + 0.5) * self.dx_nm,
            self.origin_nm.1 + (iy as f64 + 0.5) * self.dy_nm,
        )
    }

    /// Fraction of |E|² within |y| <= half_width of the waveguide axis.
    pub fn core_concentration(&self, half_width_nm: f64) -> f64 {
        let mut core = 0.0;
        let mut total = 0.0;
        for iy in 0..self.ny {
            let y = self.origin_nm.1 + (iy as f64 + 0.5) * self.dy_nm;
            for ix in 0..self.nx {
                let i = self.intensity(ix, iy);
                total += i;
                if y.abs() <= half_width_nm {
                    core += i;
                }
            }
        }
        if total > 0.0 {
            core / total
        } else {
            0.0
        }
    }

    /// Normalized mirror overlap of Ey about y = 0:
    /// Re Σ Ey(x,y) Ey*(x,-y) / Σ |Ey|². +1 for even, -1 for odd modes.
    pub fn ey_mirror_overlap(&self) -> f64 {
        mirror_overlap(&self.ey, self.nx, self.ny)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldComponent {
    Ex,
    Ey,
}

pub(crate) fn mirror_overlap(field: &[Complex64], nx: usize, ny: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for iy in 0..ny {
        let iy2 = ny - 1 - iy;
        for ix in 0..nx {
            let v = field[iy * nx + ix];
            let w = field[iy2 * nx + ix];
            num += (v * w.conj()).re;
            den += v.norm_sqr();
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Reconstruct the in-plane fields of one stored mode.
pub fn mode_field(diagram: &BandDiagram, k_index: usize, band: usize) -> Result<TeMode> {
    let store = diagram
        .modes
        .as_ref()
        .ok_or_else(|| Error::invalid("diagram was solved without keep_modes"))?;
    let coeffs = store
        .coeffs
        .get(k_index)
        .and_then(|per_k| per_k.get(band))
        .ok_or_else(|| Error::invalid("k index or band out of range"))?;
    let cell = &store.cell;
    let (nx, ny) = (cell.nx, cell.ny);
    let tau = std::f64::consts::TAU;
    let k = diagram.k_points[k_index];
    let kx = k.kx * tau / diagram.a_nm;
    let ky = k.ky * tau / diagram.a_nm;
    let lx = cell.width_nm();
    let ly = cell.height_nm();

    let mut hz_f = vec![Complex64::default(); nx * ny];
    let mut ex_f = vec![Complex64::default(); nx * ny];
    let mut ey_f = vec![Complex64::default(); nx * ny];
    for (&(i, j), &c) in store.basis.iter().zip(coeffs) {
        let gx = tau * i as f64 / lx;
        let gy = tau * j as f64 / ly;
        let bin = (j.rem_euclid(ny as i64) as usize) * nx + i.rem_euclid(nx as i64) as usize;
        hz_f[bin] += c;
        // E ∝ (1/ε) (∂y Hz, -∂x Hz); spectral derivative i(k+G)
        ex_f[bin] += c * Complex64::new(0.0, ky + gy);
        ey_f[bin] -= c * Complex64::new(0.0, kx + gx);
    }
    let mut planner = FftPlanner::new();
    let ifft_x = planner.plan_fft_inverse(nx);
    let ifft_y = planner.plan_fft_inverse(ny);
    let ifft2 = |data: &mut Vec<Complex64>| {
        let mut col = vec![Complex64::default(); ny];
        for ix in 0..nx {
            for iy in 0..ny {
                col[iy] = data[iy * nx + ix];
            }
            ifft_y.process(&mut col);
            for iy in 0..ny {
                data[iy * nx + ix] = col[iy];
            }
        }
        for iy in 0..ny {
            ifft_x.process(&mut data[iy * nx..(iy + 1) * nx]);
        }
    };
    ifft2(&mut hz_f);
    ifft2(&mut ex_f);
    ifft2(&mut ey_f);
    for (idx, &e) in cell.values().iter().enumerate() {
        let inv = 1.0 / e;
        ex_f[idx] *= inv;
        ey_f[idx] *= inv;
    }
    Ok(TeMode {
        nx,
        ny,
        dx_nm: cell.dx_nm,
        dy_nm: cell.dy_nm,
        origin_nm: cell.origin_nm,
        hz: hz_f,
        ex: ex_f,
        ey: ey_f,
    })
}

/// Label every band that dips into `gap` as even/odd (or mixed when the
/// mirror overlap is ambiguous, |overlap| < 0.5) using the stored mode
/// fields. Bands never inside the gap keep `None`.
pub fn classify_guided_modes(diagram: &mut BandDiagram, gap: (f64, f64)) -> Result<()> {
    if diagram.modes.is_none() {
        return Err(Error::invalid("classification requires stored modes (keep_modes)"));
    }
    let n_bands = diagram.bands.first().map_or(0, |b| b.len());
    let mut labels = vec![None; n_bands];
    for (b, label) in labels.iter_mut().enumerate() {
        let mut overlaps = Vec::new();
        for (ki, freqs) in diagram.bands.iter().enumerate() {
            if freqs[b] > gap.0 && freqs[b] < gap.1 {
                let mode = mode_field(diagram, ki, b)?;
                overlaps.push(mode.ey_mirror_overlap());
            }
        }
        if overlaps.is_empty() {
            continue;
        }
        let mean = overlaps.iter().sum::<f64>() / overlaps.len() as f64;
        *label = Some(if mean > 0.5 {
            Parity::Even
        } else if mean < -0.5 {
            Parity::Odd
        } else {
            Parity::Mixed
        });
    }
    diagram.parity = labels;
    Ok(())
}

/// Per-k index of the guided band: the lowest band inside `gap` whose mode
/// concentrates at least `min_concentration` of its energy within
/// `core_half_width_nm` of the axis.
pub fn track_guided_band(
    diagram: &BandDiagram,
    gap: (f64, f64),
    core_half_width_nm: f64,
    min_concentration: f64,
) -> Result<Vec<Option<usize>>> {
    if diagram.modes.is_none() {
        return Err(Error::invalid("tracking requires stored modes (keep_modes)"));
    }
    let mut out = Vec::with_capacity(diagram.k_points.len());
    for (ki, freqs) in diagram.bands.iter().enumerate() {
        let mut found = None;
        for (b, &nu) in freqs.iter().enumerate() {
            if nu > gap.0 && nu < gap.1 {
                let mode = mode_field(diagram, ki, b)?;
                if mode.core_concentration(core_half_width_nm) >= min_concentration {
                    found = Some(b);
                    break;
                }
            }
        }
        out.push(found);
    }
    Ok(out)
}

/// Group index n_g = c / |dω/dk| along one band by central finite
/// differences (one-sided at the ends). Points where dω/dk vanishes within
/// tolerance are omitted and reported. The k path must vary along kx only.
pub fn group_index(diagram: &BandDiagram, band_index: usize) -> Result<GroupIndexCurve> {
    group_index_of(diagram, &|freqs| freqs.get(band_index).copied())
}

/// Group index along a band whose sorted index changes with k (a guided
/// band crossing folded continuum bands): `band_per_k[i]` names the band at
/// k-point i, `None` entries are skipped.
pub fn group_index_of_track(
    diagram: &BandDiagram,
    band_per_k: &[Option<usize>],
) -> Result<GroupIndexCurve> {
    if band_per_k.len() != diagram.k_points.len() {
        return Err(Error::invalid("track length does not match the k path"));
    }
    // restrict to the contiguous tracked stretch
    let sub: Vec<(BlochVector, Vec<f64>)> = diagram
        .k_points
        .iter()
        .zip(&diagram.bands)
        .zip(band_per_k)
        .filter_map(|((k, freqs), b)| b.map(|bi| (*k, vec![freqs[bi]])))
        .collect();
    if sub.len() < 3 {
        return Err(Error::invalid("tracked band covers fewer than 3 k-points"));
    }
    let tracked = BandDiagram {
        a_nm: diagram.a_nm,
        k_points: sub.iter().map(|(k, _)| *k).collect(),
        bands: sub.into_iter().map(|(_, f)| f).collect(),
        parity: vec![None],
        modes: None,
    };
    group_index(&tracked, 0)
}

fn group_index_of(
    diagram: &BandDiagram,
    band_freq: &dyn Fn(&Vec<f64>) -> Option<f64>,
) -> Result<GroupIndexCurve> {
    let nk = diagram.k_points.len();
    if nk < 3 {
        return Err(Error::invalid("need at least 3 k-points for group index"));
    }
    let ky0 = diagram.k_points[0].ky;
    if diagram.k_points.iter().any(|k| (k.ky - ky0).abs() > 1e-12) {
        return Err(Error::invalid("group index requires a kx-only path"));
    }
    let tau = std::f64::consts::TAU;
    let ks: Vec<f64> = diagram.k_points.iter().map(|k| k.kx * tau / diagram.a_nm).collect();
    let omegas: Vec<f64> = diagram
        .bands
        .iter()
        .map(|f| {
            band_freq(f)
                .map(|nu| nu * tau)
                .ok_or_else(|| Error::invalid("band index out of range"))
        })
        .collect::<Result<_>>()?;

    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut omitted = Vec::new();
    for i in 0..nk {
        let (dw, dk) = if i == 0 {
            (omegas[1] - omegas[0], ks[1] - ks[0])
        } else if i == nk - 1 {
            (omegas[nk - 1] - omegas[nk - 2], ks[nk - 1] - ks[nk - 2])
        } else {
            (omegas[i + 1] - omegas[i - 1], ks[i + 1] - ks[i - 1])
        };
        if dk.abs() < 1e-300 {
            return Err(Error::invalid("duplicate k-points"));
        }
        let slope = dw / dk; // nm/ps
        let nu = omegas[i] / tau;
        if slope.abs() < 1e-9 * C_NM_PER_PS {
            omitted.push(nu);
            continue;
        }
        pts.push((nu, C_NM_PER_PS / slope.abs()));
    }
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for w in pts.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::numerical(
                "band is not monotone in frequency; group-index curve would not be single-valued",
            ));
        }
    }
    Ok(GroupIndexCurve {
        nu_thz: pts.iter().map(|p| p.0).collect(),
        ng: pts.iter().map(|p| p.1).collect(),
        omitted_nu_thz: omitted,
    })
}

impl GroupIndexCurve {
    pub fn ng_at(&self, nu_thz: f64) -> Result<f64> {
        crate::numeric::interp_linear(&self.nu_thz, &self.ng, nu_thz)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "nu_THz,ng")?;
        for (nu, ng) in self.nu_thz.iter().zip(&self.ng) {
            writeln!(w, "{nu},{ng}")?;
        }
        Ok(())
    }
}

impl BandDiagram {
    /// CSV export: columns k, band_0..band_{n-1} (k in units of 2π/a; a ky
    /// column is included when the path leaves the kx axis).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let n_bands = self.bands.first().map_or(0, |b| b.len());
        let has_ky = self.k_points.iter().any(|k| k.ky != 0.0);
        let mut header = if has_ky { "kx,ky".to_string() } else { "k".to_string() };
        for b in 0..n_bands {
            header.push_str(&format!(",band_{b}"));
        }
        writeln!(w, "{header}")?;
        for (k, freqs) in self.k_points.iter().zip(&self.bands) {
            let mut line = if has_ky {
                format!("{},{}", k.kx, k.ky)
            } else {
                format!("{}", k.kx)
            };
            for f in freqs {
                line.push_str(&format!(",{f}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Γ-M-K-Γ path of the triangular lattice in units of 2π/a
/// (Γ-K along kx; K = (2/3, 0), M = (1/2, 1/(2√3))).
pub fn triangular_ibz_path(points_per_leg: usize) -> Vec<BlochVector> {
    let gamma = (0.0, 0.0);
    let m = (0.5, 0.5 / 3f64.sqrt());
    let k = (2.0 / 3.0, 0.0);
    let lerp = |a: (f64, f64), b: (f64, f64), t: f64| {
        BlochVector::new2(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    };
    let mut path = Vec::new();
    for i in 0..points_per_leg {
        path.push(lerp(gamma, m, i as f64 / points_per_leg as f64));
    }
    for i in 0..points_per_leg {
        path.push(lerp(m, k, i as f64 / points_per_leg as f64));
    }
    for i in 0..=points_per_leg {
        path.push(lerp(k, gamma, i as f64 / points_per_leg as f64));
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_unit_cell, LatticeSpec};
    use approx::assert_relative_eq;

    fn uniform_cell(n: f64, a: f64, res: usize) -> EpsilonMap {
        EpsilonMap::uniform(res, res, a / res as f64, a / res as f64, (0.0, 0.0), n * n).unwrap()
    }

    #[test]
    fn homogeneous_dispersion_is_exact() {
        // uniform ε = n²: ω = c |k+G| / n for every band
        let n = 2.0;
        let a = 500.0;
        let cell = uniform_cell(n, a, 32);
        let k = BlochVector::new(0.3);
        let diag = solve_te_bands(&cell, &[k], 6, 4).unwrap();
        let tau = std::f64::consts::TAU;
        let g_max = 4.0 * tau / a;
        let mut analytic: Vec<f64> = Vec::new();
        for i in -4i64..=4 {
            for j in -4i64..=4 {
                let gx = i as f64 * tau / a;
                let gy = j as f64 * tau / a;
                if gx * gx + gy * gy <= g_max * g_max * (1.0 + 1e-12) {
                    let kg = (0.3 * tau / a + gx).hypot(gy);
                    analytic.push(C_NM_PER_PS * kg / (n * tau));
                }
            }
        }
        analytic.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for b in 0..6 {
            assert_relative_eq!(diag.bands[0][b], analytic[b], max_relative = 1e-3);
        }
    }

    #[test]
    fn scale_invariance_exact() {
        // a -> 2a halves every frequency
        let spec1 = LatticeSpec::paper_device();
        let spec2 = LatticeSpec::new(840.0, 0.28).unwrap();
        let c1 = build_unit_cell(&spec1, 24).unwrap();
        let c2 = build_unit_cell(&spec2, 24).unwrap();
        let ks = [BlochVector::new2(0.35, 0.1)];
        let d1 = solve_te_bands(&c1, &ks, 4, 4).unwrap();
        let d2 = solve_te_bands(&c2, &ks, 4, 4).unwrap();
        for b in 0..4 {
            assert_relative_eq!(d1.bands[0][b], 2.0 * d2.bands[0][b], max_relative = 1e-10);
        }
    }

    #[test]
    fn variational_monotonicity_in_cutoff() {
        let spec = LatticeSpec::paper_device();
        let cell = build_unit_cell(&spec, 48).unwrap();
        let ks = [BlochVector::new2(0.4, 0.12)];
        let lo = solve_te_bands(&cell, &ks, 5, 4).unwrap();
        let hi = solve_te_bands(&cell, &ks, 5, 6).unwrap();
        for b in 0..5 {
            assert!(
                hi.bands[0][b] <= lo.bands[0][b] * (1.0 + 1e-9),
                "band {b} rose with cutoff: {} -> {}",
                lo.bands[0][b],
                hi.bands[0][b]
            );
        }
    }

    #[test]
    fn uniform_medium_group_index_equals_n() {
        let n = 3.45;
        let cell = uniform_cell(n, 420.0, 16);
        let ks: Vec<BlochVector> = (1..=10).map(|i| BlochVector::new(0.02 + 0.04 * i as f64)).collect();
        let diag = solve_te_bands(&cell, &ks, 1, 3).unwrap();
        let curve = group_index(&diag, 0).unwrap();
        for &ng in &curve.ng {
            assert_relative_eq!(ng, n, max_relative = 5e-3);
        }
    }

    #[test]
    fn quadratic_band_group_index_matches_symbolic_oracle() {
        // synthetic band ω = ω_e + β (k-k_e)², oracle n_g = c/(2β|k-k_e|)
        let a = 420.0;
        let tau = std::f64::consts::TAU;
        let k_e = 0.5 * tau / a;
        let omega_e = 1200.0; // rad/ps
        let beta = 8.0e4; // nm²/ps
        let ks: Vec<BlochVector> = (0..20).map(|i| BlochVector::new(0.30 + 0.008 * i as f64)).collect();
        let bands: Vec<Vec<f64>> = ks
            .iter()
            .map(|k| {
                let kp = k.kx * tau / a;
                vec![(omega_e + beta * (kp - k_e).powi(2)) / tau]
            })
            .collect();
        let diag = BandDiagram {
            a_nm: a,
            k_points: ks.clone(),
            bands,
            parity: vec![None],
            modes: None,
        };
        let curve = group_index(&diag, 0).unwrap();
        // interior points: central differences are exact on a quadratic
        for i in 1..ks.len() - 1 {
            let kp = ks[i].kx * tau / a;
            let nu = (omega_e + beta * (kp - k_e).powi(2)) / tau;
            let expect = C_NM_PER_PS / (2.0 * beta * (kp - k_e).abs());
            let got = curve.ng_at(nu).unwrap();
            assert_relative_eq!(got, expect, max_relative = 1e-6);
        }
    }

    #[test]
    fn group_index_omits_band_edge_singularity() {
        let a = 420.0;
        let ks: Vec<BlochVector> = (0..5).map(|i| BlochVector::new(0.1 * i as f64 + 0.1)).collect();
        // flat band: dω/dk = 0 everywhere
        let bands = vec![vec![100.0]; 5];
        let diag = BandDiagram {
            a_nm: a,
            k_points: ks,
            bands,
            parity: vec![None],
            modes: None,
        };
        let curve = group_index(&diag, 0).unwrap();
        assert!(curve.nu_thz.is_empty());
        assert_eq!(curve.omitted_nu_thz.len(), 5);
    }

    #[test]
    fn mirror_overlap_sign() {
        let nx = 4;
        let ny = 6;
        let mut even = vec![Complex64::default(); nx * ny];
        let mut odd = vec![Complex64::default(); nx * ny];
        for iy in 0..ny {
            let y = iy as f64 - (ny as f64 - 1.0) / 2.0;
            for ix in 0..nx {
                even[iy * nx + ix] = Complex64::new((-(y * y) / 4.0).exp(), 0.0);
                odd[iy * nx + ix] = Complex64::new(y * (-(y * y) / 4.0).exp(), 0.0);
            }
        }
        assert_relative_eq!(mirror_overlap(&even, nx, ny), 1.0, epsilon = 1e-12);
        assert_relative_eq!(mirror_overlap(&odd, nx, ny), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn triangular_lattice_has_te_gap() {
        // effective-index model: gap between bands 1 and 2 over the IBZ path
        let spec = LatticeSpec::paper_device();
        let cell = build_unit_cell(&spec, 32).unwrap();
        let path = triangular_ibz_path(6);
        let diag = solve_te_bands_with(
            &cell,
            &path,
            3,
            5,
            &SolveOptions {
                lattice: LatticeKind::TriangularPrimitive,
                keep_modes: false,
            },
        )
        .unwrap();
        let gap = find_band_gap(&diag).expect("TE gap should exist at r/a = 0.28, n = 2.85");
        assert_eq!(gap.below_band, 0);
        assert!(gap.width_thz() > 0.0);
        // mid-gap frequency around u = ωa/2πc ≈ 0.28 for the paper cell
        let u_mid = 0.5 * (gap.lo_thz + gap.hi_thz) * spec.a_nm / C_NM_PER_PS;
        assert!((0.2..0.35).contains(&u_mid), "u_mid = {u_mid}");
    }
}
