use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::pose::Quaternion;
use super::DataModelError;

/// Semantics of a contiguous run of action columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelGroup {
    /// x, y, z in meters.
    Position,
    /// qx, qy, qz, qw.
    Quaternion,
    /// yaw, pitch, roll in radians, intrinsic Z-Y-X.
    EulerZyx,
    /// One scalar gripper command.
    Gripper,
}

impl ChannelGroup {
    pub const fn width(self) -> usize {
        match self {
            ChannelGroup::Position | ChannelGroup::EulerZyx => 3,
            ChannelGroup::Quaternion => 4,
            ChannelGroup::Gripper => 1,
        }
    }
}

/// Per-column semantics of an action row.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionLayout {
    pub groups: Vec<ChannelGroup>,
}

impl ActionLayout {
    pub fn new(groups: Vec<ChannelGroup>) -> Self {
        Self { groups }
    }

    /// `n` stacked 3D points.
    pub fn positions(n: usize) -> Self {
        Self::new(vec![ChannelGroup::Position; n])
    }

    pub fn width(&self) -> usize {
        self.groups.iter().map(|g| g.width()).sum()
    }

    /// Groups paired with their starting column.
    pub fn offsets(&self) -> impl Iterator<Item = (usize, ChannelGroup)> + '_ {
        self.groups.iter().scan(0usize, |col, &g| {
            let start = *col;
            *col += g.width();
            Some((start, g))
        })
    }
}

/// Quaternion stored in a row as qx, qy, qz, qw.
pub(crate) fn quat_from_row(row: &ArrayView1<f64>, start: usize) -> Quaternion {
    Quaternion::new(row[start + 3], row[start], row[start + 1], row[start + 2])
}

pub(crate) fn quat_to_slice(q: &Quaternion, out: &mut [f64]) {
    out[0] = q.x;
    out[1] = q.y;
    out[2] = q.z;
    out[3] = q.w;
}

pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;

/// A fixed-length sequence of actions, `T` rows by `D` columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    values: Array2<f64>,
    layout: ActionLayout,
}

impl ActionChunk {
    pub fn new(values: Array2<f64>, layout: ActionLayout) -> Result<Self, DataModelError> {
        if values.ncols() != layout.width() {
            return Err(DataModelError::Invariant(format!(
                "chunk has {} columns but layout declares {}",
                values.ncols(),
                layout.width()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataModelError::Invariant("chunk contains non-finite values".into()));
        }
        for (start, group) in layout.offsets() {
            if group != ChannelGroup::Quaternion {
                continue;
            }
            for (t, row) in values.rows().into_iter().enumerate() {
                let n = quat_from_row(&row, start).norm();
                if (n - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
                    return Err(DataModelError::Invariant(format!(
                        "quaternion at row {t}, column {start} has norm {n}"
                    )));
                }
            }
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn layout(&self) -> &ActionLayout {
        &self.layout
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}
