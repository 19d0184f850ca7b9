//! Property checks over randomized inputs: invariants that must hold for
//! any volume or parameter set, complementing the fixed-value oracles.

use proptest::prelude::*;

use crossview::geom::{voxel_to_world, world_to_voxel, Affine4, LabelVolume, VoxelGrid, LABEL_RV};
use crossview::metrics::{challenge_score, dice_score, hausdorff_mm};
use crossview::nifti::LabelLayout;
use crossview::transition::{derive_roi, TransitionParams};

fn rotation_z(angle: f64) -> [[f64; 4]; 3] {
    let (s, c) = angle.sin_cos();
    [
        [c, -s, 0.0, 0.0],
        [s, c, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ]
}

prop_compose! {
    fn arb_grid_affine()(
        angle in -3.0f64..3.0,
        sx in 0.5f64..4.0,
        sy in 0.5f64..4.0,
        sz in 0.5f64..4.0,
        tx in -100.0f64..100.0,
        ty in -100.0f64..100.0,
        tz in -100.0f64..100.0,
    ) -> Affine4 {
        let mut rows = rotation_z(angle);
        for row in &mut rows {
            row[0] *= sx;
            row[1] *= sy;
            row[2] *= sz;
        }
        rows[0][3] = tx;
        rows[1][3] = ty;
        rows[2][3] = tz;
        Affine4::from_rows(rows).unwrap()
    }
}

prop_compose! {
    fn arb_labels()(
        nx in 2usize..6,
        ny in 2usize..6,
        nz in 1usize..5,
    )(
        data in proptest::collection::vec(0u8..3, nx * ny * nz),
        dims in Just((nx, ny, nz)),
    ) -> LabelVolume {
        let spacing = [1.25, 1.25, 8.0];
        let grid = VoxelGrid::new(dims, Affine4::scaling(spacing)).unwrap();
        LabelVolume::new(grid, data).unwrap()
    }
}

prop_compose! {
    fn arb_label_pair()(
        nx in 2usize..6,
        ny in 2usize..6,
        nz in 1usize..5,
    )(
        a in proptest::collection::vec(0u8..3, nx * ny * nz),
        b in proptest::collection::vec(0u8..3, nx * ny * nz),
        dims in Just((nx, ny, nz)),
    ) -> (LabelVolume, LabelVolume) {
        let spacing = [1.25, 1.25, 8.0];
        let grid = VoxelGrid::new(dims, Affine4::scaling(spacing)).unwrap();
        (
            LabelVolume::new(grid.clone(), a).unwrap(),
            LabelVolume::new(grid, b).unwrap(),
        )
    }
}

proptest! {
    // no persistence file: integration test dirs have no crate root for
    // proptest to anchor it to
    #![proptest_config(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn world_voxel_round_trip(affine in arb_grid_affine(),
                              x in -50.0f64..50.0,
                              y in -50.0f64..50.0,
                              z in -50.0f64..50.0) {
        let grid = VoxelGrid::new((8, 8, 8), affine).unwrap();
        let world = voxel_to_world([x, y, z], &grid);
        let back = world_to_voxel(world, &grid).unwrap();
        for (got, want) in back.iter().zip([x, y, z]) {
            prop_assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn dice_is_symmetric_and_bounded((a, b) in arb_label_pair()) {
        let ab = dice_score(&a, &b, LABEL_RV).unwrap();
        let ba = dice_score(&b, &a, LABEL_RV).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice_score(&a, &a, LABEL_RV).unwrap(), 1.0);
    }

    #[test]
    fn hausdorff_is_symmetric_and_zero_on_self((a, b) in arb_label_pair()) {
        if let (Ok(ab), Ok(ba)) = (
            hausdorff_mm(&a, &b, LABEL_RV),
            hausdorff_mm(&b, &a, LABEL_RV),
        ) {
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(hausdorff_mm(&a, &a, LABEL_RV).unwrap(), 0.0);
        }
    }

    #[test]
    fn composite_score_rewards_each_component(ds_sa in 0.0f64..1.0,
                                              hd_sa in 0.0f64..0.99,
                                              ds_la in 0.0f64..1.0,
                                              hd_la in 0.0f64..0.99,
                                              bump in 0.001f64..0.01) {
        let base = challenge_score(ds_sa, hd_sa, ds_la, hd_la);
        prop_assert!(challenge_score(ds_sa + bump, hd_sa, ds_la, hd_la) > base);
        prop_assert!(challenge_score(ds_sa, hd_sa, ds_la + bump, hd_la) > base);
    }

    #[test]
    fn roi_contains_all_foreground(volume in arb_labels(),
                                   margin in 0.0f64..20.0) {
        let params = TransitionParams { margin_mm: margin, ..TransitionParams::default() };
        if let Ok(roi) = derive_roi(&volume, &params) {
            let (nx, ny, nz) = volume.grid().dims();
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        if volume.get(i, j, k) == LABEL_RV {
                            prop_assert!(roi.i_range.0 <= i && i <= roi.i_range.1);
                            prop_assert!(roi.j_range.0 <= j && j <= roi.j_range.1);
                            prop_assert!(roi.k_range.0 <= k && k <= roi.k_range.1);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn label_layout_round_trips(v in 0u8..3) {
        for layout in [LabelLayout::Internal, LabelLayout::Challenge] {
            prop_assert_eq!(layout.decode(layout.encode(v) as i64), Some(v));
        }
    }
}
