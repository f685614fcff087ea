//! Property tests with independent oracles: brute-force enumeration for the
//! signed-rank test and crop feasibility, a from-definition ANOVA route for
//! ICC, and structural invariants of resampling, weights and synthesis.

use proptest::prelude::*;

use sscore_core::imagecore::{resample_volume, Volume};
use sscore_core::metrics::{icc_2_1, wilcoxon_signed_rank, RatingTable};
use sscore_core::sampling::{balanced_weights, feasible_z0_bounds, BalanceKey, LevelAnnotation};
use sscore_core::synth::{
    generate_healthy_phantom, round_to_grade, synthesize, Grade, GradeTriple, TextureParams,
};
use sscore_core::Error;

// ---------------------------------------------------------------------------
// oracles (independent of the implementation paths they check)
// ---------------------------------------------------------------------------

/// Average ranks of |d|, then full 2^n sign enumeration of the exact
/// two-sided signed-rank p-value.
fn wilcoxon_enumeration(d: &[f64]) -> f64 {
    let n = d.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| d[i].abs().partial_cmp(&d[j].abs()).unwrap());
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[idx[j + 1]].abs() == d[idx[i]].abs() {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &t in &idx[i..=j] {
            ranks[t] = avg;
        }
        i = j + 1;
    }
    let w_plus: f64 = d
        .iter()
        .zip(ranks.iter())
        .filter(|(&di, _)| di > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let total: f64 = ranks.iter().sum();
    let w_obs = w_plus.min(total - w_plus);

    let mut count = 0u64;
    for signs in 0..(1u64 << n) {
        let w: f64 = (0..n)
            .filter(|&k| signs >> k & 1 == 1)
            .map(|k| ranks[k])
            .sum();
        if w <= w_obs {
            count += 1;
        }
    }
    (2.0 * count as f64 / (1u64 << n) as f64).min(1.0)
}

/// ICC(2,1) via the sum-of-squares decomposition
/// SS_err = SS_total - SS_rows - SS_cols.
fn icc_from_definition(values: &[f64], n: usize, k: usize) -> f64 {
    let nf = n as f64;
    let kf = k as f64;
    let grand = values.iter().sum::<f64>() / (nf * kf);
    let row_mean =
        |i: usize| -> f64 { (0..k).map(|j| values[i * k + j]).sum::<f64>() / kf };
    let col_mean =
        |j: usize| -> f64 { (0..n).map(|i| values[i * k + j]).sum::<f64>() / nf };
    let ss_rows: f64 = kf * (0..n).map(|i| (row_mean(i) - grand).powi(2)).sum::<f64>();
    let ss_cols: f64 = nf * (0..k).map(|j| (col_mean(j) - grand).powi(2)).sum::<f64>();
    let ss_total: f64 = values.iter().map(|v| (v - grand).powi(2)).sum();
    let ss_err = ss_total - ss_rows - ss_cols;
    let msr = ss_rows / (nf - 1.0);
    let msc = ss_cols / (kf - 1.0);
    let mse = ss_err / ((nf - 1.0) * (kf - 1.0));
    (msr - mse) / (msr + (kf - 1.0) * mse + (kf / nf) * (msc - mse))
}

// ---------------------------------------------------------------------------
// properties
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resample_identity_geometry_is_bitwise(
        dims in (2usize..6, 2usize..6, 2usize..6),
        spacing in (0.5f64..2.0, 0.5f64..2.0, 0.5f64..2.0),
        seed in 0u64..1000,
    ) {
        let dims = [dims.0, dims.1, dims.2];
        let spacing = [spacing.0, spacing.1, spacing.2];
        let n = dims[0] * dims[1] * dims[2];
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let voxels: Vec<f32> = (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f32 / 2e9) - 1000.0
            })
            .collect();
        let vol = Volume::new(dims, spacing, 0.0, voxels).unwrap();
        let out = resample_volume(&vol, dims, spacing).unwrap();
        prop_assert_eq!(out, vol);
    }

    #[test]
    fn wilcoxon_exact_equals_enumeration(
        d in prop::collection::vec(-5i32..=5, 1..=12),
    ) {
        let d: Vec<f64> = d.into_iter().map(|v| v as f64).collect();
        prop_assume!(d.iter().any(|&v| v != 0.0));
        // paired series with the desired differences
        let b = vec![0.0; d.len()];
        let nz: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
        let p_impl = wilcoxon_signed_rank(&d, &b).unwrap();
        let p_enum = wilcoxon_enumeration(&nz);
        prop_assert_eq!(p_impl, p_enum);
    }

    #[test]
    fn icc_matches_from_definition_oracle(
        values in prop::collection::vec(-10.0f64..10.0, 15),
    ) {
        let table = RatingTable::new(5, 3, values.clone(), Vec::new()).unwrap();
        match icc_2_1(&table) {
            Ok(icc) => {
                let oracle = icc_from_definition(&values, 5, 3);
                prop_assert!((icc - oracle).abs() < 1e-9, "icc {} vs oracle {}", icc, oracle);
            }
            Err(Error::UndefinedIcc) => {}
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e:?}"))),
        }
    }

    #[test]
    fn balanced_weights_mass_uniform_over_occupied_bins(
        raw in prop::collection::vec(0u8..=20, 1..60),
    ) {
        let items: Vec<GradeTriple> = raw
            .iter()
            .map(|&b| {
                let g = Grade::new(b * 5).unwrap();
                GradeTriple { tot: g, gg: g, ret: g }
            })
            .collect();
        let w = balanced_weights(&items, BalanceKey::Tot).unwrap();
        let total: f64 = w.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let mut mass = [0.0f64; 21];
        for (item, &wi) in items.iter().zip(w.weights()) {
            mass[item.tot.bin()] += wi;
        }
        let occupied: Vec<f64> = mass.iter().copied().filter(|&m| m > 0.0).collect();
        for pair in occupied.windows(2) {
            prop_assert!((pair[0] - pair[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_feasible_range_matches_brute_force(
        depth in 8usize..200,
        crop in 4usize..200,
        raw in prop::collection::vec(0.0f64..1.0, 5),
    ) {
        prop_assume!(crop <= depth);
        let max = (depth - 1) as f64;
        let mut levels: Vec<f64> = raw.iter().map(|&r| r * max).collect();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assume!(levels.windows(2).all(|w| w[1] - w[0] > 1e-9));
        let ann = LevelAnnotation::new(
            [levels[0], levels[1], levels[2], levels[3], levels[4]],
            depth,
        )
        .unwrap();

        let brute: Vec<usize> = (0..=depth - crop)
            .filter(|&z0| {
                z0 as f64 <= ann.min() && (z0 + crop - 1) as f64 >= ann.max()
            })
            .collect();
        match feasible_z0_bounds(&ann, crop, depth) {
            Ok((lo, hi)) => {
                prop_assert!(!brute.is_empty(), "implementation found [{lo},{hi}], brute force none");
                prop_assert_eq!((lo, hi), (brute[0], *brute.last().unwrap()));
                prop_assert_eq!(hi - lo + 1, brute.len());
            }
            Err(Error::InfeasibleCrop { .. }) => prop_assert!(brute.is_empty()),
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e:?}"))),
        }
    }

    #[test]
    fn grade_rounding_stays_on_scale(pct in 0.0f64..=100.0) {
        let g = round_to_grade(pct).unwrap();
        prop_assert_eq!(g.value() % 5, 0);
        prop_assert!((g.value() as f64 - pct).abs() <= 2.5);
        let again = round_to_grade(g.value() as f64).unwrap();
        prop_assert_eq!(g, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthesis_scores_always_self_consistent(seed in 0u64..500) {
        let (base, lung) = generate_healthy_phantom(77, [64, 64]).unwrap();
        let mut rng = sscore_core::rngstream::stream(seed, 9);
        let (_, scores, trace) =
            synthesize(&base, &lung, &TextureParams::default(), &mut rng).unwrap();
        let again =
            sscore_core::synth::compute_scores(&trace.lesion_gg, &trace.lesion_ret, &trace.lung)
                .unwrap();
        prop_assert_eq!(scores, again);
        prop_assert!(scores.tot + 1e-12 >= scores.gg.max(scores.ret));
        prop_assert!(scores.tot <= scores.gg + scores.ret + 1e-12);
    }
}
