//! String identifiers for the actors and data items that flow through the system.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Seconds on the (possibly simulated) clock.
pub type Timestamp = u64;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// The user whose data is protected; one privacy configuration per owner.
    OwnerId
);
string_id!(
    /// A cloud service registered on the platform.
    ServiceId
);
string_id!(
    /// A data field. For modelled data this is the qualified PDL attribute id
    /// (`Class.attribute`).
    FieldId
);
string_id!(DeviceId);
string_id!(RecordId);
string_id!(
    /// Identifier of an emergency event rule.
    RuleId
);
string_id!(
    /// A cloud endpoint a gateway may forward to.
    EndpointId
);
string_id!(
    /// A class of principals (e.g. "emergency-doctor") resolved via a signed directory.
    RoleId
);
