//! Persistent label newtypes.
//!
//! Value 0 is reserved for "unlabeled" in all three spaces. Persistent
//! labels are handed out by [`crate::association::PersistentLabels`] and
//! are never reused within a mapping session.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Persistent geometric segment label (`l`). 0 = no segment.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SegmentLabel(pub u32);

/// Persistent object instance label (`o`). 0 = no instance.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct InstanceLabel(pub u32);

/// Semantic class id, opaque to the engine. 0 = no class.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl SegmentLabel {
    pub const NONE: SegmentLabel = SegmentLabel(0);

    pub fn is_none(self) -> bool {
        self.0 == 0
    }
}

impl InstanceLabel {
    pub const NONE: InstanceLabel = InstanceLabel(0);

    pub fn is_none(self) -> bool {
        self.0 == 0
    }
}

impl ClassId {
    pub const NONE: ClassId = ClassId(0);

    pub fn is_none(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for InstanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
