use crate::error::{Error, Result};
use crate::model::{AlignedFrame, ConditionMask, Condition, WindowTensor};

/// Builds `R - T` one-step-ahead windows over a complete frame. The frame's
/// values are copied once; windows are slices into that buffer.
pub fn to_windows(frame: &AlignedFrame, time_steps: usize) -> Result<WindowTensor> {
    if time_steps == 0 {
        return Err(Error::validation("time_steps must be at least 1"));
    }
    if frame.rows() <= time_steps {
        return Err(Error::InsufficientRows {
            needed: time_steps,
            got: frame.rows(),
        });
    }
    if !frame.is_complete() {
        return Err(Error::validation("windowing needs a frame without missing cells"));
    }
    Ok(WindowTensor::from_parts(
        time_steps,
        frame.columns().to_vec(),
        frame.grid().to_vec(),
        frame.values().to_vec(),
    ))
}

/// Splits rows into daytime (source value above `threshold`) and night-time.
/// A missing source cell counts as night-time.
pub fn split_condition(
    frame: &AlignedFrame,
    source_stream: &str,
    threshold: f64,
) -> Result<(ConditionMask, AlignedFrame, AlignedFrame)> {
    let c = frame
        .column_index(source_stream)
        .ok_or_else(|| Error::validation(format!("condition source `{source_stream}` not in frame")))?;
    let flags: Vec<bool> = (0..frame.rows())
        .map(|r| frame.value(r, c).is_some_and(|v| v > threshold))
        .collect();
    let mask = ConditionMask {
        flags,
        condition: Condition::UC,
        source_stream: source_stream.to_string(),
        threshold,
    };
    let dt = frame.select_rows(&mask.daytime_rows());
    let nt = frame.select_rows(&mask.nighttime_rows());
    Ok((mask, dt, nt))
}

/// The sub-frame for one condition.
pub fn select_condition(
    frame: &AlignedFrame,
    condition: Condition,
    source_stream: &str,
    threshold: f64,
) -> Result<AlignedFrame> {
    match condition {
        Condition::UC => Ok(frame.clone()),
        Condition::DT => Ok(split_condition(frame, source_stream, threshold)?.1),
        Condition::NT => Ok(split_condition(frame, source_stream, threshold)?.2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(rows: usize, width: usize) -> AlignedFrame {
        let grid = (0..rows as i64).map(|i| i * 60).collect();
        let columns = (0..width).map(|j| format!("t/s{j}")).collect();
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|i| (0..width).map(|j| (i * 10 + j) as f64).collect())
            .collect();
        AlignedFrame::from_rows(60, grid, columns, &data).unwrap()
    }

    #[test]
    fn shape_and_cells() {
        let f = frame(10, 2);
        let w = to_windows(&f, 3).unwrap();
        assert_eq!(w.shape(), [7, 3, 2]);
        for i in 0..7 {
            for k in 0..3 {
                for j in 0..2 {
                    assert_eq!(w.at(i, k, j), f.value(i + k, j).unwrap());
                }
            }
            assert_eq!(w.target(i), f.row(i + 3));
            assert_eq!(w.origin_timestamps()[i], f.grid()[i]);
        }
    }

    #[test]
    fn one_window_when_r_is_t_plus_one() {
        let f = frame(4, 3);
        let w = to_windows(&f, 3).unwrap();
        assert_eq!(w.samples(), 1);
        assert_eq!(w.window(0), &f.values()[..9]);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            to_windows(&frame(3, 1), 3),
            Err(Error::InsufficientRows { needed: 3, got: 3 })
        ));
        assert!(to_windows(&frame(3, 1), 0).is_err());
    }

    #[test]
    fn daylight_split() {
        let f = AlignedFrame::from_rows(
            60,
            vec![0, 60, 120, 180],
            vec!["nir/natural".into()],
            &[vec![0.0], vec![0.9], vec![0.0], vec![0.8]],
        )
        .unwrap();
        let (mask, dt, nt) = split_condition(&f, "nir/natural", 0.5).unwrap();
        assert_eq!(mask.daytime_rows(), [1, 3]);
        assert_eq!(mask.nighttime_rows(), [0, 2]);
        assert_eq!(dt.grid(), [60, 180]);
        assert_eq!(nt.grid(), [0, 120]);

        let (_, dt, nt) = split_condition(&f, "nir/natural", -1.0).unwrap();
        assert_eq!((dt.rows(), nt.rows()), (4, 0));
        assert!(split_condition(&f, "nir/artificial", 0.5).is_err());
    }
}
