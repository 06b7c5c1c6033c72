//! Client access layer: REST gateway, transporter notice stream, a blocking
//! HTTP client and the operator CLI.

pub mod cli;
pub mod client;
pub mod gateway;
pub mod notices;
pub mod routes;
pub mod session;

pub use client::{ClientError, GatewayClient};
pub use gateway::{router, spawn, Gateway, GatewayConfig, RunningGateway};
pub use notices::{NoticeLog, TransportNotice};
pub use routes::{request_for, route_of, RouteSpec, ROUTES};
