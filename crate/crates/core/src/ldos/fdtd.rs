//! 2D FDTD on a Yee grid with convolutional PML, in TE (Ex, Ey, Hz) and TM
//! (Ez, Hx, Hy) polarization.
//!
//! Internally the solver uses natural units ε0 = μ0 = c = 1: lengths in nm
//! and time measured in nm of light travel, so a physical frequency ν [THz]
//! corresponds to the angular frequency ω = 2πν/c [rad/nm].

use num_complex::Complex64;

use crate::geometry::EpsilonMap;
use crate::{Error, Result, C_NM_PER_PS};

/// Boundary condition on one side of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Pml,
    /// Perfect electric conductor: tangential E pinned to zero.
    Pec,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BoundarySet {
    pub x_lo: Boundary,
    pub x_hi: Boundary,
    pub y_lo: Boundary,
    pub y_hi: Boundary,
}

impl BoundarySet {
    pub fn all_pml() -> Self {
        BoundarySet::default()
    }
}

/// Gaussian-envelope source g(t) = exp(-(t-t0)²/2w²) cos(ω0 (t-t0)).
#[derive(Debug, Clone)]
pub struct SourceWaveform {
    pub omega0: f64,
    pub width: f64,
    pub t0: f64,
}

impl SourceWaveform {
    /// Build from a center frequency [THz] and the full amplitude bandwidth
    /// [THz] at which the spectrum is 20 dB below peak.
    pub fn from_bandwidth(nu0_thz: f64, bw_thz: f64) -> Self {
        let omega0 = std::f64::consts::TAU * nu0_thz / C_NM_PER_PS;
        let d_omega = std::f64::consts::TAU * bw_thz / C_NM_PER_PS;
        // envelope spectrum exp(-(Δω w)²/2) = 0.1 at Δω = bw/2
        let width = (2.0 * 10f64.ln()).sqrt() / (0.5 * d_omega);
        SourceWaveform {
            omega0,
            width,
            t0: 6.0 * width,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let dt = t - self.t0;
        (-dt * dt / (2.0 * self.width * self.width)).exp() * (self.omega0 * dt).cos()
    }

    pub fn off_after(&self) -> f64 {
        self.t0 + 6.5 * self.width
    }
}

/// One-axis CPML profile: per-node recursion coefficients (b, c), zero
/// outside the absorbing layers.
struct PmlProfile {
    b: Vec<f64>,
    c: Vec<f64>,
}

fn pml_profile(
    n_nodes: usize,
    half_shift: f64,
    n_pml: usize,
    d_cell: f64,
    dt: f64,
    lo: bool,
    hi: bool,
    total_cells: usize,
) -> PmlProfile {
    let mut b = vec![0.0; n_nodes];
    let mut c = vec![0.0; n_nodes];
    let m = 3.0;
    let r0 = 1e-8f64;
    let l_pml = n_pml as f64 * d_cell;
    let sigma_max = -(m + 1.0) * r0.ln() / (2.0 * l_pml);
    // sizable complex-frequency shift: suppresses the late-time growth
    // CPML exhibits for grazing-incidence and near-cutoff waves
    let alpha_max = 1.0 / l_pml;
    for i in 0..n_nodes {
        let pos = i as f64 + half_shift; // in cells
        let depth = if lo && pos < n_pml as f64 {
            Some((n_pml as f64 - pos) / n_pml as f64)
        } else if hi && pos > (total_cells - n_pml) as f64 {
            Some((pos - (total_cells - n_pml) as f64) / n_pml as f64)
        } else {
            None
        };
        if let Some(d) = depth {
            let d = d.clamp(0.0, 1.0);
            let sigma = sigma_max * d.powf(m);
            let alpha = alpha_max * (1.0 - d);
            let bb = (-(sigma + alpha) * dt).exp();
            b[i] = bb;
            c[i] = if sigma + alpha > 0.0 {
                sigma * (bb - 1.0) / (sigma + alpha)
            } else {
                0.0
            };
        }
    }
    PmlProfile { b, c }
}

/// Progress of a run, reported by the engines.
#[derive(Debug, Clone, Default)]
pub struct RunDiagnostics {
    pub steps: usize,
    pub peak_energy: f64,
    pub final_energy: f64,
    /// Residual energy fraction stayed above the threshold at the end of the
    /// allotted run time (finite-run-time artifacts are then expected).
    pub residual_warning: bool,
}

/// What the LDOS accumulator returns: E(ν) and J(ν) at the source point.
pub struct DftAccumulator {
    pub nu_thz: Vec<f64>,
    omegas: Vec<f64>, // rad/nm
    pub e_hat: Vec<Complex64>,
    pub j_hat: Vec<Complex64>,
}

impl DftAccumulator {
    pub fn new(nu_thz: Vec<f64>) -> Self {
        let omegas = nu_thz
            .iter()
            .map(|nu| std::f64::consts::TAU * nu / C_NM_PER_PS)
            .collect();
        let n = nu_thz.len();
        DftAccumulator {
            nu_thz,
            omegas,
            e_hat: vec![Complex64::default(); n],
            j_hat: vec![Complex64::default(); n],
        }
    }

    #[inline]
    fn accumulate(&mut self, t: f64, e_src: f64, j_src: f64, dt: f64) {
        for (i, &w) in self.omegas.iter().enumerate() {
            let ph = Complex64::from_polar(dt, w * t);
            self.e_hat[i] += ph * e_src;
            self.j_hat[i] += ph * j_src;
        }
    }

    /// LDOS estimator -Re[E·J*]/|J|² per frequency.
    pub fn ldos(&self) -> Vec<f64> {
        self.e_hat
            .iter()
            .zip(&self.j_hat)
            .map(|(e, j)| {
                let p = -(e * j.conj()).re;
                let n = j.norm_sqr();
                if n > 0.0 {
                    p / n
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Run controls shared by both polarizations.
pub struct RunControl {
    pub dt: f64,
    pub max_steps: usize,
    pub source_off: f64,
    pub residual_threshold: f64,
    pub check_interval: usize,
}

// ---------------------------------------------------------------------------
// TE: Ex, Ey, Hz
// ---------------------------------------------------------------------------

/// Which in-plane component carries the dipole current.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeComponent {
    Ex,
    Ey,
}

pub struct FdtdTe {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    /// 1/ε at Ex edges, nx x (ny+1)
    inv_eps_x: Vec<f64>,
    /// 1/ε at Ey edges, (nx+1) x ny
    inv_eps_y: Vec<f64>,
    ex: Vec<f64>,
    ey: Vec<f64>,
    hz: Vec<f64>,
    psi_ex_y: Vec<f64>,
    psi_ey_x: Vec<f64>,
    psi_hz_x: Vec<f64>,
    psi_hz_y: Vec<f64>,
    // CPML profiles: integer-grid and half-grid along each axis
    px_int: PmlProfile,
    px_half: PmlProfile,
    py_int: PmlProfile,
    py_half: PmlProfile,
    bounds: BoundarySet,
    n_pml: usize,
}

impl FdtdTe {
    pub fn new(map: &EpsilonMap, dt: f64, n_pml: usize, bounds: BoundarySet) -> Self {
        let (nx, ny) = (map.nx, map.ny);
        let mut inv_eps_x = vec![0.0; nx * (ny + 1)];
        for j in 0..=ny {
            for i in 0..nx {
                let e = if j == 0 {
                    map.get(i, 0)
                } else if j == ny {
                    map.get(i, ny - 1)
                } else {
                    0.5 * (map.get(i, j - 1) + map.get(i, j))
                };
                inv_eps_x[j * nx + i] = 1.0 / e;
            }
        }
        let mut inv_eps_y = vec![0.0; (nx + 1) * ny];
        for j in 0..ny {
            for i in 0..=nx {
                let e = if i == 0 {
                    map.get(0, j)
                } else if i == nx {
                    map.get(nx - 1, j)
                } else {
                    0.5 * (map.get(i - 1, j) + map.get(i, j))
                };
                inv_eps_y[j * (nx + 1) + i] = 1.0 / e;
            }
        }
        let pml_x = (bounds.x_lo == Boundary::Pml, bounds.x_hi == Boundary::Pml);
        let pml_y = (bounds.y_lo == Boundary::Pml, bounds.y_hi == Boundary::Pml);
        FdtdTe {
            nx,
            ny,
            dx: map.dx_nm,
            dy: map.dy_nm,
            inv_eps_x,
            inv_eps_y,
            ex: vec![0.0; nx * (ny + 1)],
            ey: vec![0.0; (nx + 1) * ny],
            hz: vec![0.0; nx * ny],
            psi_ex_y: vec![0.0; nx * (ny + 1)],
            psi_ey_x: vec![0.0; (nx + 1) * ny],
            psi_hz_x: vec![0.0; nx * ny],
            psi_hz_y: vec![0.0; nx * ny],
            px_int: pml_profile(nx + 1, 0.0, n_pml, map.dx_nm, dt, pml_x.0, pml_x.1, nx),
            px_half: pml_profile(nx, 0.5, n_pml, map.dx_nm, dt, pml_x.0, pml_x.1, nx),
            py_int: pml_profile(ny + 1, 0.0, n_pml, map.dy_nm, dt, pml_y.0, pml_y.1, ny),
            py_half: pml_profile(ny, 0.5, n_pml, map.dy_nm, dt, pml_y.0, pml_y.1, ny),
            bounds,
            n_pml,
        }
    }

    /// Grid index of the E node carrying a dipole at physical position
    /// (relative to the map origin). Errors if the point sits inside a PML
    /// layer.
    pub fn source_index(&self, x: f64, y: f64, comp: TeComponent) -> Result<usize> {
        let (fi, fj) = (x / self.dx, y / self.dy);
        let guard = self.n_pml as f64 + 1.0;
        let in_pml_x = (self.bounds.x_lo == Boundary::Pml && fi < guard)
            || (self.bounds.x_hi == Boundary::Pml && fi > self.nx as f64 - guard);
        let in_pml_y = (self.bounds.y_lo == Boundary::Pml && fj < guard)
            || (self.bounds.y_hi == Boundary::Pml && fj > self.ny as f64 - guard);
        if in_pml_x || in_pml_y {
            return Err(Error::invalid("dipole position lies inside the PML region"));
        }
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            return Err(Error::invalid("dipole position outside the map"));
        }
        Ok(match comp {
            // Ex node at ((i+1/2) dx, j dy)
            TeComponent::Ex => {
                let i = (fi - 0.5).round().clamp(0.0, (self.nx - 1) as f64) as usize;
                let j = fj.round().clamp(1.0, (self.ny - 1) as f64) as usize;
                j * self.nx + i
            }
            // Ey node at (i dx, (j+1/2) dy)
            TeComponent::Ey => {
                let i = fi.round().clamp(1.0, (self.nx - 1) as f64) as usize;
                let j = (fj - 0.5).round().clamp(0.0, (self.ny - 1) as f64) as usize;
                j * (self.nx + 1) + i
            }
        })
    }

    fn step(&mut self, dt: f64) {
        self.update_h(dt);
        self.update_e(dt);
    }

    fn update_h(&mut self, dt: f64) {
        let (nx, ny) = (self.nx, self.ny);
        let (rdx, rdy) = (1.0 / self.dx, 1.0 / self.dy);
        // Hz update at (i+1/2, j+1/2)
        for j in 0..ny {
            let by = self.py_half.b[j];
            let cy = self.py_half.c[j];
            let row = j * nx;
            let rowp = (j + 1) * nx;
            for i in 0..nx {
                let idx = row + i;
                let dey_dx = (self.ey[j * (nx + 1) + i + 1] - self.ey[j * (nx + 1) + i]) * rdx;
                let dex_dy = (self.ex[rowp + i] - self.ex[row + i]) * rdy;
                let bx = self.px_half.b[i];
                let cx = self.px_half.c[i];
                let mut curl = dex_dy - dey_dx;
                if cx != 0.0 || bx != 0.0 {
                    self.psi_hz_x[idx] = bx * self.psi_hz_x[idx] + cx * dey_dx;
                    curl -= self.psi_hz_x[idx];
                }
                if cy != 0.0 || by != 0.0 {
                    self.psi_hz_y[idx] = by * self.psi_hz_y[idx] + cy * dex_dy;
                    curl += self.psi_hz_y[idx];
                }
                self.hz[idx] += dt * curl;
            }
        }
    }

    fn update_e(&mut self, dt: f64) {
        let (nx, ny) = (self.nx, self.ny);
        let (rdx, rdy) = (1.0 / self.dx, 1.0 / self.dy);
        // Ex update at (i+1/2, j): interior rows only (tangential E on y
        // boundaries stays zero)
        for j in 1..ny {
            let by = self.py_int.b[j];
            let cy = self.py_int.c[j];
            let row = j * nx;
            for i in 0..nx {
                let idx = row + i;
                let mut dhz_dy = (self.hz[j * nx + i] - self.hz[(j - 1) * nx + i]) * rdy;
                if cy != 0.0 || by != 0.0 {
                    self.psi_ex_y[idx] = by * self.psi_ex_y[idx] + cy * dhz_dy;
                    dhz_dy += self.psi_ex_y[idx];
                }
                self.ex[idx] += dt * self.inv_eps_x[idx] * dhz_dy;
            }
        }
        // Ey update at (i, j+1/2): interior columns only
        for j in 0..ny {
            let row = j * (nx + 1);
            for i in 1..nx {
                let idx = row + i;
                let mut dhz_dx = (self.hz[j * nx + i] - self.hz[j * nx + i - 1]) * rdx;
                let bx = self.px_int.b[i];
                let cx = self.px_int.c[i];
                if cx != 0.0 || bx != 0.0 {
                    self.psi_ey_x[idx] = bx * self.psi_ey_x[idx] + cx * dhz_dx;
                    dhz_dx += self.psi_ey_x[idx];
                }
                self.ey[idx] -= dt * self.inv_eps_y[idx] * dhz_dx;
            }
        }
    }

    /// Time-centered discrete energy Σ ε E² + Σ H⁻·H⁺, the quantity the
    /// Yee scheme conserves exactly in lossless regions. `hz_prev` holds the
    /// field from before the last H update.
    fn energy_centered(&self, hz_prev: &[f64]) -> f64 {
        let mut u = 0.0;
        for (e, inv) in self.ex.iter().zip(&self.inv_eps_x) {
            u += e * e / inv;
        }
        for (e, inv) in self.ey.iter().zip(&self.inv_eps_y) {
            u += e * e / inv;
        }
        for (h0, h1) in hz_prev.iter().zip(&self.hz) {
            u += h0 * h1;
        }
        u
    }

    /// Drive a point dipole on `src_idx` of the chosen component, running
    /// until the residual-energy criterion or the step budget is met.
    pub fn run_ldos(
        &mut self,
        comp: TeComponent,
        src_idx: usize,
        waveform: &SourceWaveform,
        dft: &mut DftAccumulator,
        ctrl: &RunControl,
    ) -> Result<RunDiagnostics> {
        let dt = ctrl.dt;
        let mut diag = RunDiagnostics::default();
        let mut prev_energy = f64::INFINITY;
        let mut source_was_on = true;
        let mut hz_prev: Vec<f64> = Vec::new();
        for n in 0..ctrl.max_steps {
            let check = (n + 1) % ctrl.check_interval == 0 || n + 1 == ctrl.max_steps;
            let u = if check {
                hz_prev.clear();
                hz_prev.extend_from_slice(&self.hz);
                self.update_h(dt);
                let u = self.energy_centered(&hz_prev);
                self.update_e(dt);
                Some(u)
            } else {
                self.step(dt);
                None
            };
            let t = (n + 1) as f64 * dt;
            let j_now = if t <= waveform.off_after() { waveform.eval(t) } else { 0.0 };
            if j_now != 0.0 {
                // soft current source: dE/dt += -J/ε (unit cell volume)
                match comp {
                    TeComponent::Ex => self.ex[src_idx] -= dt * self.inv_eps_x[src_idx] * j_now,
                    TeComponent::Ey => self.ey[src_idx] -= dt * self.inv_eps_y[src_idx] * j_now,
                }
            }
            let e_now = match comp {
                TeComponent::Ex => self.ex[src_idx],
                TeComponent::Ey => self.ey[src_idx],
            };
            dft.accumulate(t, e_now, j_now, dt);
            diag.steps = n + 1;

            if let Some(u) = u {
                if !u.is_finite() || (diag.peak_energy > 0.0 && u > 1e12 * diag.peak_energy) {
                    return Err(Error::numerical(format!(
                        "FDTD instability: energy {u:.3e} at step {}",
                        n + 1
                    )));
                }
                diag.peak_energy = diag.peak_energy.max(u);
                diag.final_energy = u;
                let source_on = t <= waveform.off_after();
                if !source_on {
                    // tolerance covers transient exchange with the CPML
                    // convolution memory, which the sum cannot see
                    if !source_was_on && u > prev_energy * (1.0 + 1e-4) {
                        return Err(Error::numerical(format!(
                            "FDTD energy grew after source off: {prev_energy:.6e} -> {u:.6e}"
                        )));
                    }
                    if u < ctrl.residual_threshold * diag.peak_energy {
                        return Ok(diag);
                    }
                    prev_energy = u;
                }
                source_was_on = source_on;
            }
        }
        diag.residual_warning = true;
        Ok(diag)
    }

    /// Hz field snapshot in the shared binary-grid layout.
    pub fn hz_snapshot(&self, template: &EpsilonMap) -> EpsilonMap {
        let mut grid = template.to_bulk(0.0);
        for j in 0..self.ny {
            for i in 0..self.nx {
                grid.set(i, j, self.hz[j * self.nx + i]);
            }
        }
        grid
    }
}

// ---------------------------------------------------------------------------
// TM: Ez, Hx, Hy (scalar fallback for out-of-plane dipoles)
// ---------------------------------------------------------------------------

pub struct FdtdTm {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    /// 1/ε at Ez nodes, (nx+1) x (ny+1)
    inv_eps: Vec<f64>,
    ez: Vec<f64>,
    hx: Vec<f64>, // (nx+1) x ny
    hy: Vec<f64>, // nx x (ny+1)
    psi_ez_x: Vec<f64>,
    psi_ez_y: Vec<f64>,
    psi_hx_y: Vec<f64>,
    psi_hy_x: Vec<f64>,
    px_int: PmlProfile,
    px_half: PmlProfile,
    py_int: PmlProfile,
    py_half: PmlProfile,
    bounds: BoundarySet,
    n_pml: usize,
}

impl FdtdTm {
    pub fn new(map: &EpsilonMap, dt: f64, n_pml: usize, bounds: BoundarySet) -> Self {
        let (nx, ny) = (map.nx, map.ny);
        let mut inv_eps = vec![0.0; (nx + 1) * (ny + 1)];
        for j in 0..=ny {
            for i in 0..=nx {
                let mut acc = 0.0;
                let mut cnt = 0;
                for (pi, pj) in [
                    (i.wrapping_sub(1), j.wrapping_sub(1)),
                    (i, j.wrapping_sub(1)),
                    (i.wrapping_sub(1), j),
                    (i, j),
                ] {
                    if pi < nx && pj < ny {
                        acc += map.get(pi, pj);
                        cnt += 1;
                    }
                }
                inv_eps[j * (nx + 1) + i] = 1.0 / (acc / cnt as f64);
            }
        }
        let pml_x = (bounds.x_lo == Boundary::Pml, bounds.x_hi == Boundary::Pml);
        let pml_y = (bounds.y_lo == Boundary::Pml, bounds.y_hi == Boundary::Pml);
        FdtdTm {
            nx,
            ny,
            dx: map.dx_nm,
            dy: map.dy_nm,
            inv_eps,
            ez: vec![0.0; (nx + 1) * (ny + 1)],
            hx: vec![0.0; (nx + 1) * ny],
            hy: vec![0.0; nx * (ny + 1)],
            psi_ez_x: vec![0.0; (nx + 1) * (ny + 1)],
            psi_ez_y: vec![0.0; (nx + 1) * (ny + 1)],
            psi_hx_y: vec![0.0; (nx + 1) * ny],
            psi_hy_x: vec![0.0; nx * (ny + 1)],
            px_int: pml_profile(nx + 1, 0.0, n_pml, map.dx_nm, dt, pml_x.0, pml_x.1, nx),
            px_half: pml_profile(nx, 0.5, n_pml, map.dx_nm, dt, pml_x.0, pml_x.1, nx),
            py_int: pml_profile(ny + 1, 0.0, n_pml, map.dy_nm, dt, pml_y.0, pml_y.1, ny),
            py_half: pml_profile(ny, 0.5, n_pml, map.dy_nm, dt, pml_y.0, pml_y.1, ny),
            bounds,
            n_pml,
        }
    }

    pub fn source_index(&self, x: f64, y: f64) -> Result<usize> {
        let (fi, fj) = (x / self.dx, y / self.dy);
        let guard = self.n_pml as f64 + 1.0;
        let in_pml_x = (self.bounds.x_lo == Boundary::Pml && fi < guard)
            || (self.bounds.x_hi == Boundary::Pml && fi > self.nx as f64 - guard);
        let in_pml_y = (self.bounds.y_lo == Boundary::Pml && fj < guard)
            || (self.bounds.y_hi == Boundary::Pml && fj > self.ny as f64 - guard);
        if in_pml_x || in_pml_y {
            return Err(Error::invalid("dipole position lies inside the PML region"));
        }
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            return Err(Error::invalid("dipole position outside the map"));
        }
        let i = fi.round().clamp(1.0, (self.nx - 1) as f64) as usize;
        let j = fj.round().clamp(1.0, (self.ny - 1) as f64) as usize;
        Ok(j * (self.nx + 1) + i)
    }

    fn step(&mut self, dt: f64) {
        self.update_h(dt);
        self.update_e(dt);
    }

    fn update_h(&mut self, dt: f64) {
        let (nx, ny) = (self.nx, self.ny);
        let (rdx, rdy) = (1.0 / self.dx, 1.0 / self.dy);
        // Hx at (i, j+1/2): -dEz/dy
        for j in 0..ny {
            let by = self.py_half.b[j];
            let cy = self.py_half.c[j];
            for i in 0..=nx {
                let idx = j * (nx + 1) + i;
                let mut dez_dy = (self.ez[(j + 1) * (nx + 1) + i] - self.ez[j * (nx + 1) + i]) * rdy;
                if cy != 0.0 || by != 0.0 {
                    self.psi_hx_y[idx] = by * self.psi_hx_y[idx] + cy * dez_dy;
                    dez_dy += self.psi_hx_y[idx];
                }
                self.hx[idx] -= dt * dez_dy;
            }
        }
        // Hy at (i+1/2, j): +dEz/dx
        for j in 0..=ny {
            for i in 0..nx {
                let idx = j * nx + i;
                let mut dez_dx = (self.ez[j * (nx + 1) + i + 1] - self.ez[j * (nx + 1) + i]) * rdx;
                let bx = self.px_half.b[i];
                let cx = self.px_half.c[i];
                if cx != 0.0 || bx != 0.0 {
                    self.psi_hy_x[idx] = bx * self.psi_hy_x[idx] + cx * dez_dx;
                    dez_dx += self.psi_hy_x[idx];
                }
                self.hy[idx] += dt * dez_dx;
            }
        }
    }

    fn update_e(&mut self, dt: f64) {
        let (nx, ny) = (self.nx, self.ny);
        let (rdx, rdy) = (1.0 / self.dx, 1.0 / self.dy);
        // Ez at (i, j): interior nodes (boundary tangential E stays zero)
        for j in 1..ny {
            let by = self.py_int.b[j];
            let cy = self.py_int.c[j];
            for i in 1..nx {
                let idx = j * (nx + 1) + i;
                let mut dhy_dx = (self.hy[j * nx + i] - self.hy[j * nx + i - 1]) * rdx;
                let mut dhx_dy = (self.hx[j * (nx + 1) + i] - self.hx[(j - 1) * (nx + 1) + i]) * rdy;
                let bx = self.px_int.b[i];
                let cx = self.px_int.c[i];
                if cx != 0.0 || bx != 0.0 {
                    self.psi_ez_x[idx] = bx * self.psi_ez_x[idx] + cx * dhy_dx;
                    dhy_dx += self.psi_ez_x[idx];
                }
                if cy != 0.0 || by != 0.0 {
                    self.psi_ez_y[idx] = by * self.psi_ez_y[idx] + cy * dhx_dy;
                    dhx_dy += self.psi_ez_y[idx];
                }
                self.ez[idx] += dt * self.inv_eps[idx] * (dhy_dx - dhx_dy);
            }
        }
    }

    fn energy_centered(&self, hx_prev: &[f64], hy_prev: &[f64]) -> f64 {
        let mut u = 0.0;
        for (e, inv) in self.ez.iter().zip(&self.inv_eps) {
            u += e * e / inv;
        }
        for (h0, h1) in hx_prev.iter().zip(&self.hx) {
            u += h0 * h1;
        }
        for (h0, h1) in hy_prev.iter().zip(&self.hy) {
            u += h0 * h1;
        }
        u
    }

    pub fn run_ldos(
        &mut self,
        src_idx: usize,
        waveform: &SourceWaveform,
        dft: &mut DftAccumulator,
        ctrl: &RunControl,
    ) -> Result<RunDiagnostics> {
        let dt = ctrl.dt;
        let mut diag = RunDiagnostics::default();
        let mut prev_energy = f64::INFINITY;
        let mut source_was_on = true;
        let mut hx_prev: Vec<f64> = Vec::new();
        let mut hy_prev: Vec<f64> = Vec::new();
        for n in 0..ctrl.max_steps {
            let check = (n + 1) % ctrl.check_interval == 0 || n + 1 == ctrl.max_steps;
            let u_checked = if check {
                hx_prev.clear();
                hx_prev.extend_from_slice(&self.hx);
                hy_prev.clear();
                hy_prev.extend_from_slice(&self.hy);
                self.update_h(dt);
                let u = self.energy_centered(&hx_prev, &hy_prev);
                self.update_e(dt);
                Some(u)
            } else {
                self.step(dt);
                None
            };
            let t = (n + 1) as f64 * dt;
            let j_now = if t <= waveform.off_after() { waveform.eval(t) } else { 0.0 };
            if j_now != 0.0 {
                self.ez[src_idx] -= dt * self.inv_eps[src_idx] * j_now;
            }
            dft.accumulate(t, self.ez[src_idx], j_now, dt);
            diag.steps = n + 1;

            if let Some(u) = u_checked {
                if !u.is_finite() || (diag.peak_energy > 0.0 && u > 1e12 * diag.peak_energy) {
                    return Err(Error::numerical(format!(
                        "FDTD instability: energy {u:.3e} at step {}",
                        n + 1
                    )));
                }
                diag.peak_energy = diag.peak_energy.max(u);
                diag.final_energy = u;
                let source_on = t <= waveform.off_after();
                if !source_on {
                    // tolerance covers transient exchange with the CPML
                    // convolution memory, which the sum cannot see
                    if !source_was_on && u > prev_energy * (1.0 + 1e-4) {
                        return Err(Error::numerical(format!(
                            "FDTD energy grew after source off: {prev_energy:.6e} -> {u:.6e}"
                        )));
                    }
                    if u < ctrl.residual_threshold * diag.peak_energy {
                        return Ok(diag);
                    }
                    prev_energy = u;
                }
                source_was_on = source_on;
            }
        }
        diag.residual_warning = true;
        Ok(diag)
    }
}
