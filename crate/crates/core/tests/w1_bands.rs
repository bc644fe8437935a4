//! W1 supercell band-structure physics: in-gap even guided band with
//! monotonically growing group index toward the zone edge.

use pcw_core::bands::{
    classify_guided_modes, find_band_gap, group_index_of_track, solve_te_bands_with,
    track_guided_band, triangular_ibz_path, BlochVector, LatticeKind, Parity, SolveOptions,
};
use pcw_core::geometry::{build_unit_cell, build_w1_supercell, LatticeSpec};

#[test]
fn w1_even_guided_band_and_slow_light() {
    let spec = LatticeSpec::paper_device();

    // bulk TE gap from the primitive-lattice unit cell
    let cell = build_unit_cell(&spec, 32).unwrap();
    let bulk = solve_te_bands_with(
        &cell,
        &triangular_ibz_path(8),
        3,
        5,
        &SolveOptions {
            lattice: LatticeKind::TriangularPrimitive,
            keep_modes: false,
        },
    )
    .unwrap();
    let gap = find_band_gap(&bulk).expect("bulk TE gap");
    assert_eq!(gap.below_band, 0);

    // supercell bands across the slow-light range
    let supercell = build_w1_supercell(&spec, 8, 24).unwrap();
    let ks: Vec<BlochVector> = (0..14).map(|i| BlochVector::new(0.34 + 0.16 * i as f64 / 13.0)).collect();
    let mut diag = solve_te_bands_with(
        &supercell,
        &ks,
        30,
        4,
        &SolveOptions {
            lattice: LatticeKind::Rectangular,
            keep_modes: true,
        },
    )
    .unwrap();

    let core_half = 3f64.sqrt() * spec.a_nm;
    let track = track_guided_band(&diag, (gap.lo_thz, gap.hi_thz), core_half, 0.5).unwrap();
    let found = track.iter().filter(|t| t.is_some()).count();
    assert!(found >= 10, "guided band tracked at only {found} of {} k-points", ks.len());

    // the guided band is the even mode (paper labels it even)
    classify_guided_modes(&mut diag, (gap.lo_thz, gap.hi_thz)).unwrap();
    let guided_bands: std::collections::BTreeSet<usize> = track.iter().flatten().copied().collect();
    for b in &guided_bands {
        assert_eq!(
            diag.parity[*b],
            Some(Parity::Even),
            "guided band {b} not classified even: {:?}",
            diag.parity[*b]
        );
    }

    // band-edge frequency: minimum of the tracked band, attained at kx = 0.5
    let edge_freq = track
        .iter()
        .zip(&diag.bands)
        .filter_map(|(t, f)| t.map(|b| f[b]))
        .fold(f64::INFINITY, f64::min);
    assert!(
        gap.contains(edge_freq),
        "guided band edge {edge_freq} THz outside bulk gap [{}, {}]",
        gap.lo_thz,
        gap.hi_thz
    );
    let last = track.last().unwrap().expect("guided band at the zone edge");
    let freq_at_edge = diag.bands.last().unwrap()[last];
    assert!((freq_at_edge - edge_freq).abs() < 0.2, "band minimum away from zone edge");

    // group index grows monotonically toward the edge and exceeds 50
    let ng = group_index_of_track(&diag, &track).unwrap();
    // descending band: frequencies sort ascending = k descending, so the
    // slow-light end is the low-frequency end
    assert!(ng.nu_thz.len() >= 8);
    let mut prev = f64::INFINITY;
    for (nu, g) in ng.nu_thz.iter().zip(&ng.ng) {
        assert!(
            *g <= prev * (1.0 + 0.05),
            "n_g not decreasing away from the edge at {nu} THz: {g} after {prev}"
        );
        prev = *g;
    }
    let ng_max = ng.ng.iter().cloned().fold(0.0f64, f64::max);
    assert!(ng_max > 50.0, "max n_g only {ng_max}");
}
