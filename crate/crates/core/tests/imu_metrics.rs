use lhs_core::metrics::imu::{classify_activity, compute_arm_use, detect_wear_time};
use lhs_core::metrics::DerivationConfig;
use lhs_core::payload::imu::{ImuSample, ImuStream};
use lhs_core::{AffectedSide, Side};
use proptest::prelude::*;

const DT: i64 = 500;

fn params() -> lhs_core::metrics::config::ImuParams {
    DerivationConfig::shipped().imu.clone()
}

fn stream(side: Side, mags: &[f64]) -> ImuStream {
    let mut s = ImuStream::new(side, 2.0);
    s.samples = mags
        .iter()
        .enumerate()
        .map(|(i, &m)| ImuSample { t_ms: i as i64 * DT, accel: [0.0, 0.0, m], gyro: [0.0; 3] })
        .collect();
    s
}

/// Per-epoch levels expanded to 60 samples each; `level` picks both the
/// mean offset and whether the epoch jitters.
fn epochs_to_mags(levels: &[(u8, bool)]) -> Vec<f64> {
    let mut out = Vec::new();
    for &(lvl, jitter) in levels {
        let base = 1.0 + [0.02, 0.2, 0.6][lvl as usize];
        for i in 0..60 {
            let j = if jitter { if i % 2 == 0 { 0.03 } else { -0.03 } } else { 0.0 };
            out.push(base + j);
        }
    }
    out
}

/// Brute-force worn-minute oracle: recompute per-epoch stddev from scratch,
/// then mark runs of >= 30 still epochs.
fn oracle_worn_epochs(mags: &[f64]) -> usize {
    let still: Vec<bool> = mags
        .chunks_exact(60)
        .map(|c| {
            let mean = c.iter().sum::<f64>() / 60.0;
            let var = c.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / 60.0;
            var.sqrt() * 1000.0 < 13.0 - 1e-6
        })
        .collect();
    let mut worn = 0;
    let mut i = 0;
    while i < still.len() {
        let j = (i..still.len()).find(|&k| still[k] != still[i]).unwrap_or(still.len());
        if !still[i] || j - i < 30 {
            worn += j - i;
        }
        i = j;
    }
    worn
}

fn level_runs() -> impl Strategy<Value = Vec<(u8, bool)>> {
    proptest::collection::vec(((0u8..3, any::<bool>()), 1usize..45), 1..8).prop_map(|runs| {
        runs.into_iter().flat_map(|(lvl, n)| std::iter::repeat(lvl).take(n)).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn activity_partitions_worn_minutes(levels in level_runs()) {
        let mags = epochs_to_mags(&levels);
        let s = stream(Side::Left, &mags);
        let p = params();
        let wear = detect_wear_time(&s, &p).unwrap();
        let a = classify_activity(&s, &wear.worn_intervals, &p).unwrap();
        prop_assert_eq!(a.low_min + a.moderate_min + a.vigorous_min, a.worn_min);
        prop_assert!((a.worn_min - wear.total_hours * 60.0).abs() < 1e-9);
        prop_assert_eq!(oracle_worn_epochs(&mags) as f64 * 0.5, a.worn_min);
    }

    #[test]
    fn swapping_sides_negates_laterality(
        left in proptest::collection::vec(any::<bool>(), 60..200),
        right in proptest::collection::vec(any::<bool>(), 60..200),
    ) {
        // One bool per 2 s sub-epoch (4 samples at 2 Hz): active or still.
        let expand = |flags: &[bool]| -> Vec<f64> {
            flags.iter().flat_map(|&a| {
                let amp = if a { 0.02 } else { 0.0 };
                [1.0 + amp, 1.0 - amp, 1.0 + amp, 1.0 - amp]
            }).collect()
        };
        let l = stream(Side::Left, &expand(&left));
        let r = stream(Side::Right, &expand(&right));
        let p = params();
        let a = compute_arm_use(&l, &r, AffectedSide::Left, &p, None).unwrap();
        let mut l2 = r.clone();
        l2.side = Side::Left;
        let mut r2 = l.clone();
        r2.side = Side::Right;
        let b = compute_arm_use(&l2, &r2, AffectedSide::Left, &p, None).unwrap();
        prop_assert_eq!(a.laterality.map(|x| -x), b.laterality.map(|x| x + 0.0));
        match (a.use_ratio, b.use_ratio) {
            (Some(x), Some(y)) if x > 0.0 => prop_assert!((x * y - 1.0).abs() < 1e-12),
            (Some(x), None) => prop_assert_eq!(x, 0.0),
            (None, Some(y)) => prop_assert_eq!(y, 0.0),
            (None, None) => prop_assert_eq!(a.active_s_left + a.active_s_right, 0.0),
            other => prop_assert!(false, "{:?}", other),
        }
        let lat = a.laterality.unwrap();
        prop_assert!((-1.0..=1.0).contains(&lat));
        // Seconds are counted over the shorter stream.
        let n = left.len().min(right.len());
        let active = left[..n].iter().filter(|x| **x).count() as f64 * 2.0;
        prop_assert_eq!(a.active_s_left, active);
    }
}
