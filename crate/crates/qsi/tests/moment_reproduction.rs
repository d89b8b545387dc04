//! Equivalence of the sampler and the closed-form predictions: the variance
//! estimator must be unbiased against the analytic binned-variance law,
//! pixel-wise and for arbitrary regions, on flat, Gaussian and half-blocked
//! scenes.

use qsi::grid::{disk_region, PixelGrid, TransmissionMask};
use qsi::modes::ModeFunction;
use qsi::pipeline::variance_map;
use qsi::simulator::{sample_qsi_stack, FrameCluster, SceneSpec};
use qsi::statistics::{binned_variance_prediction, NoiseModel, ProbeSpec};

fn scene(
    grid: PixelGrid,
    lo: ModeFunction,
    mask: TransmissionMask,
    n_total: f64,
) -> SceneSpec {
    SceneSpec::single_mode(
        ProbeSpec::thermal(n_total),
        lo,
        1000.0 * n_total.max(1.0),
        mask,
        NoiseModel::none(),
    )
}

/// Empirical normalized variance of the summed counts over one region,
/// estimated exactly like the pipeline does (per-cluster ratio of raw
/// second moment to mean sum, averaged over clusters).
fn region_variance(clusters: &[FrameCluster], region: &[usize]) -> f64 {
    let mut acc = 0.0;
    for cluster in clusters {
        let mut sum_d2 = 0.0;
        let mut sum_s = 0.0;
        for frame in cluster.usable_frames() {
            let mut d = 0.0;
            let mut s = 0.0;
            for &i in region {
                let a = f64::from(frame.n1[i]);
                let b = f64::from(frame.n2[i]);
                d += a - b;
                s += a + b;
            }
            sum_d2 += d * d;
            sum_s += s;
        }
        acc += sum_d2 / sum_s;
    }
    acc / clusters.len() as f64
}

/// Checks `variance_map` against the per-pixel analytic prediction at two
/// binning radii. The per-pixel estimate is a mean of `frames` chi-squared
/// variates, so its standard error is `σ²·√(2/frames)` exactly.
fn check_pixelwise(scene: &SceneSpec, clusters: u64, seed: u64) {
    let stack = sample_qsi_stack(scene, clusters, seed).unwrap();
    let frames = (clusters as usize) * scene.usable_indices.len();
    for radius in [0u32, 1] {
        let map = variance_map(&stack, radius).unwrap();
        let mut worst: (f64, usize) = (0.0, 0);
        for i in 0..scene.grid.len() {
            assert!(!map.excluded[i], "pixel {i} unexpectedly excluded");
            let (x, y) = scene.grid.coords(i);
            let region = disk_region(&scene.grid, (f64::from(x), f64::from(y)), radius);
            let predicted = binned_variance_prediction(
                scene.probe.mean_photons_total,
                &scene.mask,
                &scene.lo_mode,
                &region,
            )
            .unwrap();
            let se = predicted * (2.0 / frames as f64).sqrt();
            let z = (map.v[i] - predicted).abs() / se;
            if z > worst.0 {
                worst = (z, i);
            }
        }
        assert!(
            worst.0 < 5.0,
            "R={radius}: pixel {} deviates by {:.1} standard errors",
            worst.1,
            worst.0
        );
    }
}

#[test]
fn pixelwise_unbiasedness_flat_scene() {
    let grid = PixelGrid::new(48, 48).unwrap();
    let scene = scene(
        grid,
        ModeFunction::flat(grid),
        TransmissionMask::transparent(grid),
        0.05 * grid.len() as f64,
    );
    check_pixelwise(&scene, 34_000, 101);
}

#[test]
fn pixelwise_unbiasedness_gaussian_scene() {
    let grid = PixelGrid::new(48, 48).unwrap();
    let lo = ModeFunction::gaussian(grid, 10.0, grid.center()).unwrap();
    let scene = scene(grid, lo, TransmissionMask::transparent(grid), 40.0);
    check_pixelwise(&scene, 34_000, 102);
}

#[test]
fn pixelwise_unbiasedness_half_blocked_scene() {
    let grid = PixelGrid::new(48, 48).unwrap();
    let lo = ModeFunction::gaussian(grid, 10.0, grid.center()).unwrap();
    let scene = scene(grid, lo, TransmissionMask::half_blocked(grid), 40.0);
    check_pixelwise(&scene, 34_000, 103);
}

#[test]
fn region_sums_match_the_binned_prediction() {
    let grid = PixelGrid::new(64, 64).unwrap();
    let lo = ModeFunction::gaussian(grid, 12.0, grid.center()).unwrap();
    let mask = TransmissionMask::half_blocked(grid);
    let n_total = 5.0;
    let scene = scene(grid, lo.clone(), mask.clone(), n_total);
    let clusters = 3000u64;
    let stack = sample_qsi_stack(&scene, clusters, 55).unwrap();
    let frames = (clusters as usize) * scene.usable_indices.len();

    let (cx, cy) = grid.center();
    let regions: Vec<(&str, Vec<usize>)> = vec![
        ("centre disk", disk_region(&grid, (cx, cy), 6)),
        ("off-centre disk", disk_region(&grid, (cx + 8.0, cy - 5.0), 4)),
        ("boundary disk", disk_region(&grid, (cx - 1.0, cy), 6)),
        ("wide disk", disk_region(&grid, (cx, cy), 20)),
        (
            "unblocked rectangle",
            (0..grid.len())
                .filter(|&i| {
                    let (x, y) = grid.coords(i);
                    (34..44).contains(&x) && (28..36).contains(&y)
                })
                .collect(),
        ),
    ];
    for (name, region) in regions {
        let measured = region_variance(&stack, &region);
        let predicted = binned_variance_prediction(n_total, &mask, &lo, &region).unwrap();
        let se = predicted * (2.0 / frames as f64).sqrt();
        assert!(
            (measured - predicted).abs() < 5.0 * se,
            "{name}: measured {measured:.4}, predicted {predicted:.4}, se {se:.4}"
        );
    }
}

#[test]
fn multimode_regions_sum_each_modes_projection() {
    // five equal thermal modes, LO matched to the fundamental: the full-beam
    // region keeps only the matched mode's excess
    let grid = PixelGrid::new(64, 64).unwrap();
    let family = ModeFunction::orthogonal_family(grid, 9.0, 5).unwrap();
    let lo = family[0].clone();
    let n_total = 2.5;
    let mut sc = SceneSpec::single_mode(
        ProbeSpec::thermal(n_total).with_modes(5),
        lo,
        1000.0,
        TransmissionMask::transparent(grid),
        NoiseModel::none(),
    );
    sc.probe_modes = family;
    sc.validate().unwrap();
    let clusters = 4000u64;
    let stack = sample_qsi_stack(&sc, clusters, 66).unwrap();
    let frames = (clusters as usize) * sc.usable_indices.len();

    let region = disk_region(&grid, grid.center(), 30);
    let measured = region_variance(&stack, &region);
    let expected = 1.0 + 2.0 * n_total / 5.0;
    let se = expected * (2.0 / frames as f64).sqrt();
    assert!(
        (measured - expected).abs() < 5.0 * se,
        "full-beam multimode variance {measured:.4} vs {expected:.4} (se {se:.4})"
    );
}
