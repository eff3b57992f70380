use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::AlignError;
use crate::datamodel::{quat_from_row, quat_to_slice, ActionChunk, ActionLayout, ChannelGroup, Quaternion};

/// Above this |dot| the two rotations are treated as coincident and blended
/// with normalized linear interpolation.
pub const SLERP_LINEAR_THRESHOLD: f64 = 1.0 - 1e-6;

/// Geodesic interpolation along the shorter arc.
pub fn slerp(q0: &Quaternion, q1: &Quaternion, t: f64) -> Quaternion {
    if t <= 0.0 || q0 == q1 {
        return *q0;
    }
    if t >= 1.0 {
        return *q1;
    }
    let mut d = q0.dot(q1);
    let mut q1 = *q1;
    if d < 0.0 {
        q1 = q1.neg();
        d = -d;
    }
    let (a, b) = if d > SLERP_LINEAR_THRESHOLD {
        (1.0 - t, t)
    } else {
        let theta = d.acos();
        let s = theta.sin();
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
    };
    Quaternion::new(
        a * q0.w + b * q1.w,
        a * q0.x + b * q1.x,
        a * q0.y + b * q1.y,
        a * q0.z + b * q1.z,
    )
    .normalized()
}

/// Duration of the extracted window and the number of rows it is resampled to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    window_seconds: f64,
    target_length: usize,
}

impl WindowSpec {
    /// One second of human motion, 100 rows.
    pub const HUMAN: WindowSpec = WindowSpec {
        window_seconds: 1.0,
        target_length: 100,
    };
    /// One and a half seconds of robot motion, 100 rows.
    pub const ROBOT: WindowSpec = WindowSpec {
        window_seconds: 1.5,
        target_length: 100,
    };

    pub fn new(window_seconds: f64, target_length: usize) -> Result<Self, AlignError> {
        if !(window_seconds.is_finite() && window_seconds > 0.0) {
            return Err(AlignError::InvalidArgument(format!(
                "window_seconds must be positive, got {window_seconds}"
            )));
        }
        if target_length < 2 {
            return Err(AlignError::InvalidArgument(format!(
                "target_length must be at least 2, got {target_length}"
            )));
        }
        Ok(Self {
            window_seconds,
            target_length,
        })
    }

    pub fn window_seconds(&self) -> f64 {
        self.window_seconds
    }

    pub fn target_length(&self) -> usize {
        self.target_length
    }

    pub fn window_ns(&self) -> i64 {
        (self.window_seconds * 1e9).round() as i64
    }
}

/// Timestamped rows sharing one column layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedTrack {
    timestamps_ns: Vec<i64>,
    values: Array2<f64>,
    layout: ActionLayout,
}

impl TimedTrack {
    pub fn new(timestamps_ns: Vec<i64>, values: Array2<f64>, layout: ActionLayout) -> Result<Self, AlignError> {
        if timestamps_ns.len() != values.nrows() {
            return Err(AlignError::InvalidArgument(format!(
                "{} timestamps for {} rows",
                timestamps_ns.len(),
                values.nrows()
            )));
        }
        if values.ncols() != layout.width() {
            return Err(AlignError::InvalidArgument(format!(
                "{} columns but layout is {} wide",
                values.ncols(),
                layout.width()
            )));
        }
        if timestamps_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AlignError::InvalidArgument("timestamps must be strictly increasing".into()));
        }
        Ok(Self {
            timestamps_ns,
            values,
            layout,
        })
    }

    pub fn timestamps_ns(&self) -> &[i64] {
        &self.timestamps_ns
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn layout(&self) -> &ActionLayout {
        &self.layout
    }
}

/// Resamples the window starting at the first sample to `target_length`
/// evenly spaced rows, both window endpoints included.
///
/// Positions and gripper columns are interpolated linearly. Quaternion groups
/// use [`slerp`]; Euler groups are converted to quaternions, interpolated
/// with [`slerp`] and converted back.
pub fn resample_chunk(track: &TimedTrack, spec: &WindowSpec) -> Result<ActionChunk, AlignError> {
    let ts = &track.timestamps_ns;
    if ts.len() < 2 {
        return Err(AlignError::InvalidArgument(format!(
            "need at least 2 samples, got {}",
            ts.len()
        )));
    }
    let window_ns = spec.window_ns();
    let available_ns = ts[ts.len() - 1] - ts[0];
    if available_ns < window_ns {
        return Err(AlignError::InsufficientData {
            window_ns,
            available_ns,
        });
    }

    let n_out = spec.target_length;
    let start = ts[0] as f64;
    let mut out = Array2::zeros((n_out, track.values.ncols()));
    let mut seg = 0usize;
    for j in 0..n_out {
        let s = start + (window_ns as f64 * j as f64) / (n_out - 1) as f64;
        while seg + 2 < ts.len() && (ts[seg + 1] as f64) <= s {
            seg += 1;
        }
        let (t0, t1) = (ts[seg] as f64, ts[seg + 1] as f64);
        let u = ((s - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let a = track.values.row(seg);
        let b = track.values.row(seg + 1);
        let mut row = out.row_mut(j);
        let row = row.as_slice_mut().expect("row-major output");
        if u == 0.0 {
            row.copy_from_slice(&a.to_vec());
            continue;
        }
        if u == 1.0 {
            row.copy_from_slice(&b.to_vec());
            continue;
        }
        for (col, group) in track.layout.offsets() {
            let w = group.width();
            let dst = &mut row[col..col + w];
            if (0..w).all(|i| a[col + i] == b[col + i]) {
                for i in 0..w {
                    dst[i] = a[col + i];
                }
                continue;
            }
            match group {
                ChannelGroup::Position | ChannelGroup::Gripper => {
                    for i in 0..w {
                        dst[i] = a[col + i] + u * (b[col + i] - a[col + i]);
                    }
                }
                ChannelGroup::Quaternion => {
                    let q = slerp(&quat_from_row(&a, col), &quat_from_row(&b, col), u);
                    quat_to_slice(&q, dst);
                }
                ChannelGroup::EulerZyx => {
                    let q = slerp(&euler_at(&a, col), &euler_at(&b, col), u);
                    let (yaw, pitch, roll) = q.to_euler_zyx();
                    dst.copy_from_slice(&[yaw, pitch, roll]);
                }
            }
        }
    }
    ActionChunk::new(out, track.layout.clone()).map_err(|e| AlignError::InvalidArgument(e.to_string()))
}

fn euler_at(row: &ArrayView1<f64>, col: usize) -> Quaternion {
    Quaternion::from_euler_zyx(row[col], row[col + 1], row[col + 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn rz(angle: f64) -> Quaternion {
        Quaternion::from_axis_angle([0.0, 0.0, 1.0], angle)
    }

    #[test]
    fn slerp_endpoints() {
        let (a, b) = (rz(0.2), Quaternion::from_euler_zyx(0.1, 0.7, -0.4));
        assert_eq!(slerp(&a, &b, 0.0), a);
        assert_eq!(slerp(&a, &b, 1.0), b);
    }

    #[test]
    fn slerp_halfway_about_z() {
        // Halving the axis-angle: rotation by pi/4 about z.
        let q = slerp(&Quaternion::IDENTITY, &rz(FRAC_PI_2), 0.5);
        let expected = Quaternion::new((FRAC_PI_4 / 2.0).cos(), 0.0, 0.0, (FRAC_PI_4 / 2.0).sin());
        assert!((q.dot(&expected) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn slerp_takes_shorter_arc() {
        let a = rz(0.1);
        let b = rz(0.3).neg();
        let q = slerp(&a, &b, 0.5);
        assert!((q.dot(&rz(0.2)).abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn slerp_nearly_identical_is_finite() {
        let a = rz(0.3);
        let b = rz(0.3 + 1e-9);
        let q = slerp(&a, &b, 0.5);
        assert!(q.is_finite());
        assert!((q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_spec_validation() {
        assert!(WindowSpec::new(0.0, 100).is_err());
        assert!(WindowSpec::new(1.0, 1).is_err());
        assert_eq!(WindowSpec::HUMAN.window_ns(), 1_000_000_000);
        assert_eq!(WindowSpec::ROBOT.window_ns(), 1_500_000_000);
    }

    #[test]
    fn short_track_reports_shortfall() {
        let ts: Vec<i64> = (0..30).map(|i| i * 1_000_000_000 / 30).collect();
        let track = TimedTrack::new(ts, Array2::zeros((30, 3)), ActionLayout::positions(1)).unwrap();
        match resample_chunk(&track, &WindowSpec::HUMAN) {
            Err(AlignError::InsufficientData { window_ns, available_ns }) => {
                assert_eq!(window_ns, 1_000_000_000);
                assert_eq!(available_ns, 966_666_666);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_track_gives_identical_rows() {
        let layout = ActionLayout::new(vec![
            ChannelGroup::Position,
            ChannelGroup::EulerZyx,
            ChannelGroup::Quaternion,
            ChannelGroup::Gripper,
        ]);
        let q = Quaternion::from_euler_zyx(0.5, 0.2, -0.1);
        let row = [0.3, -0.2, 1.0, 0.5, 0.2, -0.1, q.x, q.y, q.z, q.w, 0.8];
        let ts: Vec<i64> = (0..=30).map(|i| i * 1_000_000_000 / 30).collect();
        let values = Array2::from_shape_fn((31, 11), |(_, c)| row[c]);
        let track = TimedTrack::new(ts, values, layout).unwrap();
        let chunk = resample_chunk(&track, &WindowSpec::HUMAN).unwrap();
        assert_eq!(chunk.len(), 100);
        for r in chunk.values().rows() {
            assert_eq!(r.to_vec(), row.to_vec());
        }
    }
}
