//! On-premises encryption node: sealing, opening and relaying payloads.

pub mod envelope;
pub mod keystore;
pub mod transfer;

pub use envelope::{
    envelope_id, journal_duplicates, open, open_bytes, peek_envelope_id, seal, seal_with_manifest, IntegrityKind,
    Manifest, NonceJournal, OpenError, SealError, SealedEnvelope,
};
pub use keystore::{KeyId, KeyStore, KeyStoreError, KEY_FILE_ENV};
pub use transfer::{
    relay, DeliveryError, DeliveryStatus, Destination, DirParking, Inbox, InboxStats, MemoryParking, ParkingArea,
    RelayError, RetryPolicy, Scripted, TransferReceipt,
};
