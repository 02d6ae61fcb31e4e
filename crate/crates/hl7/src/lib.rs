//! HL7 v2 ER7 messages, MLLP framing, ORU^R01 results and the EHR endpoints
//! used for weekly extraction and daily result return.

pub mod ehr;
pub mod gen;
pub mod job;
pub mod message;
pub mod mllp;
pub mod oru;

pub use ehr::{DirEhr, EhrEndpoint, EhrSimulator, EndpointError, TcpEhr};
pub use job::{weekly_extraction_job, WeeklyReport};
pub use message::{parse_er7, serialize_er7, EncodingChars, Field, Hl7Error, Hl7Message, Segment};
pub use oru::{build_oru, extract_batch, ExtractBatch, ObservationMap, OruContext, OruError, RecordCandidate};
