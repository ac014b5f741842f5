//! The client package: broker, subscriber-side batching and the file-drop
//! producer/consumer pair that talks to the server.

pub mod aggregate;
pub mod batch;
pub mod broker;
pub mod client;
pub mod filedrop;
pub mod mqtt;
pub mod package;
pub mod producer;
pub mod session;

pub use aggregate::{sample_topic, Aggregator, AggregatorConfig};
pub use batch::BatchRecord;
pub use broker::{broker_serve, BrokerConfig, BrokerHandle, BrokerStats};
pub use client::MqttClient;
pub use filedrop::{FileDrop, FileKind, Side};
pub use package::{
    run_client_package, JournalEntry, PackageConfig, PackageSecurity, PackageSummary, REFERENCE_WIRE_RATE,
};
pub use producer::{Backoff, Consumer, ConsumerEvent, DropTransport, Producer, Sealing, Transport, Unsealing};
pub use session::establish_session;
