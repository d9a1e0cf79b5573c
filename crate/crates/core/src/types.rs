use std::fmt;

use serde::{Deserialize, Serialize};

/// Integer simulation tick.
pub type Timestamp = u64;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident($inner:ty)) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_newtype!(
    /// Liquidity provider identity.
    ProviderId(u32)
);
id_newtype!(
    /// Buyer identity.
    UserId(u32)
);
id_newtype!(
    /// Order identity; assigned in submission order.
    BidId(u64)
);
id_newtype!(
    /// One whole unit of the perishable asset, assigned at the clearing snapshot.
    UnitId(u64)
);
