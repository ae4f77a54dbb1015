use core::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::SCHEMA_VERSION;

/// The `"v": 1` marker carried by every top-level document.
///
/// Deserialization rejects any other version; a missing field defaults to 1
/// where the containing struct opts into `#[serde(default)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SchemaV1;

impl Serialize for SchemaV1 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u32(SCHEMA_VERSION)
    }
}

impl<'de> Deserialize<'de> for SchemaV1 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct VersionVisitor;

        impl Visitor<'_> for VersionVisitor {
            type Value = SchemaV1;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "schema version {SCHEMA_VERSION}")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<SchemaV1, E> {
                if v == u64::from(SCHEMA_VERSION) {
                    Ok(SchemaV1)
                } else {
                    Err(E::custom(format_args!("unsupported schema version {v}")))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<SchemaV1, E> {
                if v == i64::from(SCHEMA_VERSION) {
                    Ok(SchemaV1)
                } else {
                    Err(E::custom(format_args!("unsupported schema version {v}")))
                }
            }
        }

        deserializer.deserialize_u64(VersionVisitor)
    }
}
