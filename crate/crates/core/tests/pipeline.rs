use rcs_deblur::recovery::{blur, block_scene};
use rcs_deblur::solver::{initialize_state, solve};
use rcs_deblur::support::{bd_rcs_pipeline, refine_image_support, refine_kernel_support, threshold_rows, PipelineConfig};
use rcs_deblur::transforms::{default_haar_depth, fft2, haar_synthesis};
use rcs_deblur::{
    Image, ImageBasis, KernelBasis, LiftedProblem, MaskTarget, SparsityMode, SupportMask,
};

fn small_scene() -> Image {
    block_scene(16, 16, 4, 3, 9).unwrap()
}

#[test]
fn image_phase_single_pass_matches_direct_solve() {
    let x = small_scene();
    let k = Image::new(1, 3, vec![0.25, 0.5, 0.25]).unwrap();
    let y = blur(&x, &k, 0.0, 0).unwrap();
    let cfg = PipelineConfig { bbox: (3, 3), image_keep_fraction: 1.0, ..PipelineConfig::default() };
    let kernel_mask = SupportMask::new(MaskTarget::Kernel, 3, 3, vec![3, 4, 5]).unwrap();
    let refined = refine_image_support(&y, &kernel_mask, &cfg).unwrap();

    let depth = default_haar_depth(16, 16);
    let kb = KernelBasis::from_box(16, 16, 3, 3, kernel_mask.indices()).unwrap();
    let ib = ImageBasis::full(16, 16, depth).unwrap();
    let blurred = ib.extract(y.data());
    let prob = LiftedProblem::new(kb, ib, fft2(&y).unwrap(), cfg.solver.lambda).unwrap();
    let init = initialize_state(&prob, &blurred, &cfg.solver, SparsityMode::ColumnSparse).unwrap();
    let out = solve(&prob, init, &cfg.solver, SparsityMode::ColumnSparse).unwrap();
    let kept = threshold_rows(&out.factors.col_norms(), cfg.row_threshold_factor).unwrap().kept;

    assert_eq!(refined.rounds, 1);
    assert_eq!(refined.mask.indices(), kept.as_slice());
}

#[test]
fn representable_image_keeps_true_coefficients() {
    let depth = default_haar_depth(32, 32);
    let mut coeffs = vec![0.0; 32 * 32];
    let support = [0, 1, 32, 33, 2, 64];
    for (i, &s) in support.iter().enumerate() {
        coeffs[s] = 4.0 + i as f64 * 0.5;
    }
    let x = haar_synthesis(&coeffs, 32, 32, depth).unwrap();
    let k = Image::new(1, 3, vec![0.2, 0.6, 0.2]).unwrap();
    let y = blur(&x, &k, 0.0, 0).unwrap();
    let cfg = PipelineConfig { bbox: (3, 3), image_keep_fraction: 0.05, ..PipelineConfig::default() };
    let kernel_mask = SupportMask::new(MaskTarget::Kernel, 3, 3, vec![3, 4, 5]).unwrap();
    let refined = refine_image_support(&y, &kernel_mask, &cfg).unwrap();
    for s in support {
        assert!(refined.mask.contains(s), "coefficient {s} dropped from {}", refined.mask);
    }
    for w in refined.history.windows(2) {
        assert!(w[1].is_subset_of(&w[0]));
    }
}

#[test]
fn kernel_masks_shrink_monotonically() {
    let x = block_scene(32, 32, 8, 4, 5).unwrap();
    let k = Image::new(3, 3, vec![0.0, 0.0, 0.3, 0.0, 0.4, 0.0, 0.3, 0.0, 0.0]).unwrap();
    let y = blur(&x, &k, 0.0, 0).unwrap();
    let cfg = PipelineConfig { bbox: (5, 5), image_keep_fraction: 0.05, ..PipelineConfig::default() };
    let out = refine_kernel_support(&y, &cfg).unwrap();
    assert!(out.history.len() >= 2);
    for w in out.history.windows(2) {
        assert!(w[1].is_subset_of(&w[0]));
    }
    assert_eq!(out.factors.left.nrows(), out.mask.len());
}

#[test]
fn pipeline_output_is_consistent() {
    let x = small_scene();
    let k = Image::new(1, 3, vec![0.25, 0.5, 0.25]).unwrap();
    let y = blur(&x, &k, 0.0, 0).unwrap();
    let cfg = PipelineConfig { bbox: (3, 5), image_keep_fraction: 0.1, ..PipelineConfig::default() };
    let out = bd_rcs_pipeline(&y, &cfg).unwrap();
    assert_eq!(out.kernel.dims(), (3, 5));
    assert_eq!(out.image.dims(), (16, 16));
    assert!((out.kernel.sum() - 1.0).abs() <= 1e-12);
    assert!(out.kernel.data().iter().all(|v| *v >= 0.0));
    assert!(out.singular_values[0] >= out.singular_values[1]);
    assert_eq!(out.kernel_mask.grid(), (3, 5));
    assert_eq!(out.trace.len(), out.kernel_rounds + out.image_rounds);
}

#[test]
fn pipeline_is_deterministic() {
    let x = small_scene();
    let k = Image::new(1, 3, vec![0.25, 0.5, 0.25]).unwrap();
    let y = blur(&x, &k, 0.0, 0).unwrap();
    let cfg = PipelineConfig { bbox: (3, 3), image_keep_fraction: 0.1, ..PipelineConfig::default() };
    let a = bd_rcs_pipeline(&y, &cfg).unwrap();
    let b = bd_rcs_pipeline(&y, &cfg).unwrap();
    assert_eq!(a.kernel, b.kernel);
    assert_eq!(a.image, b.image);
    assert_eq!(a.trace, b.trace);
}
