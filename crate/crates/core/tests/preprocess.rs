use proptest::prelude::*;

use sentinel_core::preprocess::{
    apply_scaler, atan_norm, fit_scaler, gaussian_score, invert_scaler, kurtosis, median, reduce, reduce_counted,
    split_condition, to_windows, ColumnParams, GaussParams, PassCounter, ReductionKind, ScalerKind,
};
use sentinel_core::AlignedFrame;

fn frame(rows: &[Vec<f64>]) -> AlignedFrame {
    let width = rows.first().map_or(0, Vec::len);
    AlignedFrame::from_rows(
        60,
        (0..rows.len() as i64).map(|i| i * 60).collect(),
        (0..width).map(|c| format!("t/s{c}")).collect(),
        rows,
    )
    .unwrap()
}

fn column(xs: &[f64]) -> AlignedFrame {
    frame(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>())
}

/// Rows of `width` values with every column spread out enough to fit.
fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5, 3usize..40).prop_flat_map(|(w, r)| {
        prop::collection::vec(prop::collection::vec(-1e4f64..1e4, w), r).prop_filter("spread", |rows| {
            (0..rows[0].len()).all(|c| {
                let lo = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo > 1e-3
            })
        })
    })
}

proptest! {
    #[test]
    fn scaler_round_trip(rows in rows_strategy(), minmax in any::<bool>()) {
        let f = frame(&rows);
        let kind = if minmax { ScalerKind::Minmax } else { ScalerKind::Standard };
        let s = fit_scaler(&f, kind).unwrap();
        let back = invert_scaler(&apply_scaler(&f, &s).unwrap(), &s).unwrap();
        for (a, b) in f.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn standard_self_fit_is_centred_and_unit(rows in rows_strategy()) {
        let f = frame(&rows);
        let out = apply_scaler(&f, &fit_scaler(&f, ScalerKind::Standard).unwrap()).unwrap();
        let n = out.rows() as f64;
        for c in 0..out.width() {
            let col = out.column_values(c);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-9);
            prop_assert!((var.sqrt() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn minmax_stays_in_unit_interval(rows in rows_strategy()) {
        let f = frame(&rows);
        let out = apply_scaler(&f, &fit_scaler(&f, ScalerKind::Minmax).unwrap()).unwrap();
        prop_assert!(out.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn mad_ignores_how_large_the_outlier_is(
        mut xs in prop::collection::vec(-100.0f64..100.0, 2..30),
        outlier in 100.0f64..1e4,
        bump in 0.0f64..1e6,
    ) {
        xs.push(outlier);
        let med = median(&xs).unwrap();
        let top = xs.len() - 1;
        // Robustness only holds while the outlier's deviation is the largest.
        prop_assume!(xs[..top].iter().all(|x| (x - med).abs() < outlier - med));
        let before = reduce(&xs, ReductionKind::Mad).unwrap();
        xs[top] += bump;
        prop_assert_eq!(before, reduce(&xs, ReductionKind::Mad).unwrap());
    }

    #[test]
    fn moments_are_affine_invariant(
        xs in prop::collection::vec(-50.0f64..50.0, 4..40),
        a in 0.1f64..20.0,
        b in -100.0f64..100.0,
    ) {
        let sd = reduce(&xs, ReductionKind::Sd).unwrap();
        prop_assume!(sd > 1e-3);
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let skew = reduce(&xs, ReductionKind::Skewness).unwrap();
        let kurt = reduce(&xs, ReductionKind::Kurtosis).unwrap();
        prop_assert!((reduce(&ys, ReductionKind::Skewness).unwrap() - skew).abs() <= 1e-9);
        prop_assert!((reduce(&ys, ReductionKind::Kurtosis).unwrap() - kurt).abs() <= 1e-9);
        prop_assert!((reduce(&neg, ReductionKind::Skewness).unwrap() + skew).abs() <= 1e-9);
    }

    #[test]
    fn window_cells_copy_their_source(rows in rows_strategy(), t in 1usize..6) {
        let f = frame(&rows);
        prop_assume!(f.rows() > t);
        let w = to_windows(&f, t).unwrap();
        prop_assert_eq!(w.shape(), [f.rows() - t, t, f.width()]);
        for i in 0..w.samples() {
            for k in 0..t {
                for j in 0..f.width() {
                    prop_assert_eq!(w.at(i, k, j), f.value(i + k, j).unwrap());
                }
            }
            prop_assert_eq!(w.target(i), f.row(i + t));
        }
    }
}

#[test]
fn scaler_examples() {
    let s = fit_scaler(&column(&[0.0, 2.0]), ScalerKind::Standard).unwrap();
    assert_eq!(s.params[0], ColumnParams::Standard { mean: 1.0, sd: 1.0 });
    assert_eq!(apply_scaler(&column(&[0.0, 2.0]), &s).unwrap().values(), &[-1.0, 1.0]);

    let f = column(&[0.0, 5.0, 10.0]);
    let s = fit_scaler(&f, ScalerKind::Minmax).unwrap();
    assert_eq!(s.params[0], ColumnParams::Minmax { min: 0.0, max: 10.0 });
    assert_eq!(apply_scaler(&f, &s).unwrap().values(), &[0.0, 0.5, 1.0]);

    for kind in [ScalerKind::Standard, ScalerKind::Minmax] {
        let err = fit_scaler(&column(&[7.0, 7.0, 7.0]), kind).unwrap_err();
        assert!(err.to_string().contains("t/s0"), "{err}");
    }
}

#[test]
fn reduction_examples() {
    assert_eq!(reduce(&[1.0, 2.0, 3.0, 4.0, 100.0], ReductionKind::Mad).unwrap(), 1.0);
    assert_eq!(reduce(&[4.5; 6], ReductionKind::Average).unwrap(), 4.5);
    assert_eq!(reduce(&[4.5; 6], ReductionKind::Sd).unwrap(), 0.0);
    assert!(reduce(&[4.5; 6], ReductionKind::Kurtosis).is_err());
    assert!(reduce(&[4.5; 6], ReductionKind::Skewness).is_err());
    assert_eq!(reduce(&[-1.0, 0.0, 1.0], ReductionKind::Skewness).unwrap(), 0.0);

    // Mean 1/4, population variance 3/16, fourth central moment 21/256:
    // (21/256) / (9/256) = 7/3.
    let k = kurtosis(&[0.0, 0.0, 0.0, 1.0], false).unwrap();
    assert!((k - 7.0 / 3.0).abs() < 1e-12, "{k}");
    let excess = kurtosis(&[0.0, 0.0, 0.0, 1.0], true).unwrap();
    assert!((excess - (7.0 / 3.0 - 3.0)).abs() < 1e-12);
}

#[test]
fn average_takes_one_pass_and_moments_need_the_mean_first() {
    let xs = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
    let passes = |kind| {
        let mut ops = PassCounter::default();
        reduce_counted(&xs, kind, &mut ops).unwrap();
        ops.passes
    };
    assert_eq!(passes(ReductionKind::Average), 1);
    for kind in [ReductionKind::Sd, ReductionKind::Kurtosis, ReductionKind::Skewness] {
        assert!(passes(kind) >= 2, "{kind:?}");
    }
}

#[test]
fn transform_reference_points() {
    assert_eq!(atan_norm(0.0, 1.0, false), 0.0);
    assert!((atan_norm(1.0, 1.0, false) - 0.5).abs() < 1e-15);
    let p = GaussParams { mu: 3.0, sigma: 2.0 };
    assert_eq!(gaussian_score(3.0, p), 1.0);
    assert!(gaussian_score(5.0, p) < 1.0);
}

#[test]
fn condition_split_examples() {
    let f = frame(&[vec![0.0, 1.0], vec![0.9, 2.0], vec![0.0, 3.0], vec![0.8, 4.0]]);
    let (mask, dt, nt) = split_condition(&f, "t/s0", 0.5).unwrap();
    assert_eq!(mask.daytime_rows(), [1, 3]);
    assert_eq!(mask.nighttime_rows(), [0, 2]);
    assert_eq!(dt.column_values(1), [2.0, 4.0]);
    assert_eq!(nt.column_values(1), [1.0, 3.0]);

    let dark = frame(&[vec![0.0], vec![0.0], vec![0.0]]);
    let (_, dt, nt) = split_condition(&dark, "t/s0", 0.5).unwrap();
    assert_eq!(dt.rows(), 0);
    assert_eq!(nt, dark);

    let (_, dt, nt) = split_condition(&f, "t/s0", -1.0).unwrap();
    assert_eq!(dt, f);
    assert_eq!(nt.rows(), 0);

    assert!(split_condition(&f, "t/nope", 0.5).is_err());
}

#[test]
fn window_shapes() {
    let rows: Vec<Vec<f64>> = (0..10).map(|r| vec![r as f64, -(r as f64)]).collect();
    assert_eq!(to_windows(&frame(&rows), 3).unwrap().shape(), [7, 3, 2]);
    let w = to_windows(&frame(&rows[..4]), 3).unwrap();
    assert_eq!(w.samples(), 1);
    assert_eq!(w.window(0), &[0.0, -0.0, 1.0, -1.0, 2.0, -2.0]);
    assert!(to_windows(&frame(&rows[..3]), 3).is_err());
}

#[test]
fn full_scale_window_count() {
    let rows: Vec<Vec<f64>> = (0..36_484).map(|r| vec![(r % 97) as f64; 14]).collect();
    let w = to_windows(&frame(&rows), 74).unwrap();
    assert_eq!(w.shape(), [36_410, 74, 14]);
}
