//! Version tag carried by every persisted document.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const CURRENT: u32 = 1;

/// Serializes as the integer `1` and refuses to deserialize anything else.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Schema;

impl Serialize for Schema {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u32(CURRENT)
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let found = u32::deserialize(deserializer)?;
        if found != CURRENT {
            return Err(serde::de::Error::custom(format!(
                "unsupported schema version {found} (expected {CURRENT})"
            )));
        }
        Ok(Schema)
    }
}
