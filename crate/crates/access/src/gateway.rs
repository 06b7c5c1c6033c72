//! REST gateway. Reads go through the query path on one peer; writes run
//! endorse, submit and await-commit with the caller's custodial key.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, BoxStream, StreamExt};
use log::{info, warn};
use organchain_core::chaincode::ErrorKind;
use organchain_core::donation::{Record, RecordStatus, CHAINCODE_NAME};
use organchain_core::identity::{Action, Decision, Identity, Resource, Role};
use organchain_core::ledger::{ChainStatus, ValidationCode};
use organchain_core::network::{
    ChannelConfig, CommitEvent, EventFilter, Network, NetworkError, PolicyExpr, Wallet, DONATION_CHANNEL,
};
use organchain_core::ordering::OrderError;
use parking_lot::RwLock;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, watch};

use crate::notices::{NoticeLog, TransportNotice};
use crate::session::{LoginError, Sessions};

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    /// Channel the contract routes run on.
    pub channel: String,
    /// How long a write waits for its commit before answering 202.
    pub await_timeout: Duration,
    pub session_ttl: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            channel: DONATION_CHANNEL.into(),
            await_timeout: Duration::from_secs(30),
            session_ttl: Duration::from_secs(12 * 3600),
        }
    }
}

pub struct Gateway {
    net: Arc<Network>,
    wallet: RwLock<Wallet>,
    sessions: Sessions,
    notices: Arc<NoticeLog>,
    config: GatewayConfig,
    stop: watch::Sender<bool>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: json!({"error": error, "message": message.into()}) }
    }

    fn unauthorized(message: &str) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthenticated", message)
    }

    fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "Unauthorized", message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationError", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<NetworkError> for ApiError {
    fn from(e: NetworkError) -> Self {
        let msg = e.to_string();
        match e {
            NetworkError::Chaincode(c) => {
                let status = match c.kind {
                    ErrorKind::Unauthorized => StatusCode::FORBIDDEN,
                    ErrorKind::NotFound | ErrorKind::UnknownMethod => StatusCode::NOT_FOUND,
                    ErrorKind::DuplicateId | ErrorKind::AlreadyMatched | ErrorKind::MatchedRecordLocked => {
                        StatusCode::CONFLICT
                    }
                    ErrorKind::ValidationError | ErrorKind::NotAMatch | ErrorKind::BadArguments => {
                        StatusCode::UNPROCESSABLE_ENTITY
                    }
                };
                ApiError::new(status, c.kind.as_str(), c.message)
            }
            NetworkError::Order(
                OrderError::NotLeader(_) | OrderError::QueueFull | OrderError::OrdererUnavailable,
            )
            | NetworkError::Halted(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "OrdererUnavailable", msg),
            NetworkError::UnknownIdentity(_) => ApiError::unauthorized(&msg),
            NetworkError::EndorsementMismatch(_) => ApiError::new(StatusCode::BAD_GATEWAY, "EndorsementMismatch", msg),
            NetworkError::UnknownChannel(_) | NetworkError::UnknownPeer(_) => ApiError::not_found(msg),
            NetworkError::PolicyViolation(_) | NetworkError::UnknownOrg(_) | NetworkError::ChannelExists(_) => {
                ApiError::unprocessable(msg)
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", msg),
        }
    }
}

type ApiResult = Result<Response, ApiError>;

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_millis() as u64
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("gateway worker panicked")
}

impl Gateway {
    pub fn new(net: Arc<Network>, wallet: Wallet, config: GatewayConfig) -> Result<Arc<Self>, NetworkError> {
        let notices = NoticeLog::start(&net, &config.channel)?;
        let (stop, _) = watch::channel(false);
        Ok(Arc::new(Gateway {
            net,
            wallet: RwLock::new(wallet),
            sessions: Sessions::new(config.session_ttl),
            notices,
            config,
            stop,
        }))
    }

    pub fn network(&self) -> &Arc<Network> {
        &self.net
    }

    pub fn notices(&self) -> &Arc<NoticeLog> {
        &self.notices
    }

    /// Hands the gateway a signing key it may use for that identity.
    pub fn add_key(&self, key: organchain_core::identity::SigningKey) {
        self.wallet.write().insert(key);
    }

    /// Asks the server to stop; open event streams end.
    pub fn request_shutdown(&self) {
        let _ = self.stop.send(true);
    }

    fn caller(&self, headers: &HeaderMap) -> Result<Identity, ApiError> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
        let id = self.sessions.resolve(token.trim()).ok_or_else(|| ApiError::unauthorized("invalid or expired token"))?;
        self.net.membership().identity(&id).cloned().ok_or_else(|| ApiError::unauthorized("identity no longer enrolled"))
    }

    fn allow(&self, who: &Identity, action: Action, resource: &Resource) -> Result<(), ApiError> {
        match self.net.membership().authorize(&who.identity_id, action, resource) {
            Ok(Decision::Allow) => Ok(()),
            _ => Err(ApiError::forbidden(format!("{:?} may not {action:?}", who.role))),
        }
    }

    fn require_admin(&self, who: &Identity) -> Result<(), ApiError> {
        if who.role == Role::Administrator {
            Ok(())
        } else {
            Err(ApiError::forbidden("administrators only"))
        }
    }

    async fn query(self: &Arc<Self>, who: &Identity, method: &'static str, args: Vec<String>) -> Result<Value, ApiError> {
        let (gw, id) = (self.clone(), who.identity_id.clone());
        let payload =
            blocking(move || gw.net.query(&gw.config.channel, CHAINCODE_NAME, method, args, &id)).await?;
        serde_json::from_slice(&payload).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))
    }

    /// Endorse, submit and wait. A Valid commit answers `ok`; a commit slower
    /// than the await timeout answers 202 with the tx id for polling.
    async fn write(self: &Arc<Self>, who: &Identity, method: &'static str, args: Vec<String>, ok: StatusCode) -> ApiResult {
        let key = self
            .wallet
            .read()
            .get(&who.identity_id)
            .cloned()
            .ok_or_else(|| ApiError::forbidden("the gateway holds no signing key for this identity"))?;
        let gw = self.clone();
        let outcome = blocking(move || -> Result<(String, Vec<u8>, Option<CommitEvent>), NetworkError> {
            let net = &gw.net;
            let ch = &gw.config.channel;
            let proposal = net.new_proposal(ch, CHAINCODE_NAME, method, args, key.identity_id());
            let responses = net.endorse_proposal(&proposal)?;
            let payload = responses[0].payload.clone();
            let tx = Network::assemble(&proposal, &responses, &key)?;
            let rx = net.submit(tx)?;
            let event = rx.recv_timeout(gw.config.await_timeout).ok();
            if event.is_none() {
                if let Some(reason) = net.channel(ch)?.halted() {
                    return Err(NetworkError::Halted(reason));
                }
            }
            Ok((proposal.tx_id, payload, event))
        })
        .await?;
        let (tx_id, payload, event) = outcome;
        let Some(ev) = event else {
            return Ok((StatusCode::ACCEPTED, Json(json!({"tx_id": tx_id, "status": "pending"}))).into_response());
        };
        let mut body = json!({"tx_id": tx_id, "flag": ev.flag.as_str(), "block_number": ev.block_number});
        match ev.flag {
            ValidationCode::Valid => {
                if let Ok(Value::Object(fields)) = serde_json::from_slice::<Value>(&payload) {
                    body.as_object_mut().expect("object").extend(fields);
                }
                Ok((ok, Json(body)).into_response())
            }
            ValidationCode::MvccConflict => {
                body["error"] = json!("MVCCConflict");
                Ok((StatusCode::CONFLICT, Json(body)).into_response())
            }
            other => {
                body["error"] = json!(other.as_str());
                Ok((StatusCode::INTERNAL_SERVER_ERROR, Json(body)).into_response())
            }
        }
    }

    fn first_ledger_peer(&self, channel: &str) -> Result<Arc<organchain_core::network::PeerChannel>, ApiError> {
        let ch = self.net.channel(channel)?;
        ch.peers()
            .iter()
            .find_map(|p| p.channel(channel))
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "NoPeers", "channel has no peers"))
    }
}

pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/auth/login", post(login))
        .route("/patients", post(add_patient).get(all_patients))
        .route("/donors", post(add_donor).get(all_donors))
        .route("/patients/{id}", get(get_patient).delete(delete_patient))
        .route("/donors/{id}", get(get_donor).delete(delete_donor))
        .route("/hospitals/{org}/patients", get(my_patients))
        .route("/hospitals/{org}/donors", get(my_donors))
        .route("/patients/{id}/find-match", post(find_match))
        .route("/match/select", post(select_match))
        .route("/patients/{id}/status", get(patient_status))
        .route("/tx/{id}", get(tx_status))
        .route("/events/transport", get(transport_events))
        .route("/chain/verify", get(chain_verify))
        .route("/admin/channels", post(admin_create_channel))
        .route("/admin/chaincodes", post(admin_deploy))
        .route("/admin/state", get(admin_state))
        .route("/admin/shutdown", post(admin_shutdown))
        .route("/health", get(|| async { "ok" }))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(gw)
}

#[derive(Deserialize)]
struct LoginBody {
    #[serde(rename = "identityId")]
    identity_id: String,
    nonce: Option<String>,
    signature: Option<String>,
}

/// Without a signature: returns a challenge nonce. With one: checks it and
/// issues a bearer token.
async fn login(State(gw): State<Arc<Gateway>>, body: Bytes) -> ApiResult {
    let body: LoginBody = serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let m = gw.net.membership();
    let result = match (&body.nonce, &body.signature) {
        (Some(nonce), Some(sig)) => gw.sessions.login(&body.identity_id, nonce, sig, &m).map(|s| json!(s)),
        _ => gw.sessions.challenge(&body.identity_id, &m).map(|n| json!({"nonce": n})),
    };
    match result {
        Ok(v) => Ok(Json(v).into_response()),
        Err(LoginError::UnknownIdentity) => Err(ApiError::unauthorized("unknown identity")),
        Err(LoginError::NoChallenge) => Err(ApiError::unauthorized("no outstanding challenge for this nonce")),
        Err(LoginError::BadSignature) => Err(ApiError::unauthorized("signature does not verify")),
    }
}

fn record_body(body: &Bytes) -> Result<String, ApiError> {
    match serde_json::from_slice::<Value>(body) {
        Ok(v @ Value::Object(_)) => Ok(v.to_string()),
        Ok(_) => Err(ApiError::unprocessable("body must be a JSON object")),
        Err(e) => Err(ApiError::unprocessable(format!("body is not JSON: {e}"))),
    }
}

async fn add_patient(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let who = gw.caller(&headers)?;
    gw.write(&who, "addPatient", vec![record_body(&body)?], StatusCode::CREATED).await
}

async fn add_donor(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let who = gw.caller(&headers)?;
    gw.write(&who, "addDonor", vec![record_body(&body)?], StatusCode::CREATED).await
}

async fn all_patients(State(gw): State<Arc<Gateway>>, headers: HeaderMap) -> ApiResult {
    let who = gw.caller(&headers)?;
    Ok(Json(gw.query(&who, "getAllPatients", vec![]).await?).into_response())
}

async fn all_donors(State(gw): State<Arc<Gateway>>, headers: HeaderMap) -> ApiResult {
    let who = gw.caller(&headers)?;
    Ok(Json(gw.query(&who, "getAllDonors", vec![]).await?).into_response())
}

async fn get_patient(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let who = gw.caller(&headers)?;
    Ok(Json(gw.query(&who, "getPatient", vec![id]).await?).into_response())
}

async fn get_donor(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let who = gw.caller(&headers)?;
    Ok(Json(gw.query(&who, "getDonor", vec![id]).await?).into_response())
}

async fn delete_patient(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let who = gw.caller(&headers)?;
    gw.write(&who, "deletePatient", vec![id], StatusCode::OK).await
}

async fn delete_donor(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let who = gw.caller(&headers)?;
    gw.write(&who, "deleteDonor", vec![id], StatusCode::OK).await
}

async fn my_patients(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(org): Path<String>) -> ApiResult {
    let who = gw.caller(&headers)?;
    Ok(Json(gw.query(&who, "getMyPatients", vec![org]).await?).into_response())
}

async fn my_donors(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(org): Path<String>) -> ApiResult {
    let who = gw.caller(&headers)?;
    Ok(Json(gw.query(&who, "getMyDonors", vec![org]).await?).into_response())
}

async fn find_match(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let who = gw.caller(&headers)?;
    Ok(Json(gw.query(&who, "findMatch", vec![id]).await?).into_response())
}

#[derive(Deserialize)]
struct SelectBody {
    #[serde(rename = "patientId")]
    patient_id: String,
    #[serde(rename = "donorId")]
    donor_id: String,
}

async fn select_match(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let who = gw.caller(&headers)?;
    let body: SelectBody = serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    gw.write(&who, "selectMatch", vec![body.patient_id, body.donor_id], StatusCode::OK).await
}

/// Status derived from committed state. Waiting time is the time since the
/// block that registered the record, not a population average.
async fn patient_status(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let who = gw.caller(&headers)?;
    let record: Record = serde_json::from_value(gw.query(&who, "getPatient", vec![id.clone()]).await?)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?;
    let pc = gw.first_ledger_peer(&gw.config.channel)?;
    let history = pc.ledger().read().get_history(&format!("PAT_{id}"));
    // The registration is the latest write that follows a delete (or nothing).
    let registered_at = history
        .iter()
        .enumerate()
        .filter(|(i, h)| h.value.is_some() && (*i == 0 || history[i - 1].value.is_none()))
        .map(|(_, h)| h.timestamp_ms)
        .last()
        .unwrap_or_default();
    let matched = record.status == RecordStatus::Matched;
    Ok(Json(json!({
        "patientId": record.id,
        "status": if matched { "Matched" } else { "Waiting" },
        "matchedDonorId": if matched { Some(record.match_id) } else { None },
        "registered_at": registered_at,
        "waiting_time_ms": now_ms().saturating_sub(registered_at),
        "waiting_time_basis": "time since registration",
    }))
    .into_response())
}

async fn tx_status(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    gw.caller(&headers)?;
    for ch in gw.net.channels() {
        let name = ch.name();
        let Ok(pc) = gw.first_ledger_peer(&name) else { continue };
        let status = pc.ledger().read().tx_status(&id);
        if let Some((block, flag)) = status {
            return Ok(Json(json!({"tx_id": id, "channel": name, "block_number": block, "flag": flag.as_str()}))
                .into_response());
        }
    }
    Err(ApiError::not_found(format!("transaction {id} is not committed")))
}

async fn chain_verify(State(gw): State<Arc<Gateway>>, headers: HeaderMap) -> ApiResult {
    let who = gw.caller(&headers)?;
    gw.allow(&who, Action::VerifyChain, &Resource::any())?;
    let net = gw.net.clone();
    let report = blocking(move || {
        let mut all_ok = true;
        let channels: Vec<Value> = net
            .channels()
            .iter()
            .map(|ch| {
                let name = ch.name();
                let peers: Vec<Value> = ch
                    .peers()
                    .iter()
                    .filter_map(|p| p.channel(&name).map(|pc| (p.peer_id().to_string(), pc)))
                    .map(|(peer, pc)| {
                        let l = pc.ledger().read();
                        match l.verify_chain() {
                            ChainStatus::Ok => json!({"peer": peer, "height": l.height(), "status": "ok"}),
                            ChainStatus::Corrupt(n) => {
                                all_ok = false;
                                json!({"peer": peer, "height": l.height(), "status": "corrupt", "block": n})
                            }
                        }
                    })
                    .collect();
                json!({"channel": name, "peers": peers})
            })
            .collect();
        json!({"ok": all_ok, "channels": channels})
    })
    .await;
    Ok(Json(report).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    last_event_id: Option<u64>,
    /// `own`: the caller's own commit events instead of transport notices.
    scope: Option<String>,
}

fn notice_event(n: &TransportNotice) -> Result<Event, Infallible> {
    Ok(Event::default().id(n.id.to_string()).event("notice").json_data(n).expect("notice serializes"))
}

/// Server-sent events. Transport notices need `ReadMatchEvents`; resuming
/// with `Last-Event-ID` (or `?last_event_id=`) replays what was missed.
async fn transport_events(
    State(gw): State<Arc<Gateway>>,
    headers: HeaderMap,
    Query(q): Query<EventsQuery>,
) -> ApiResult {
    let who = gw.caller(&headers)?;
    let mut stop = gw.stop.subscribe();
    let stopped = async move {
        let _ = stop.wait_for(|s| *s).await;
    };
    let stream: BoxStream<'static, Result<Event, Infallible>> = if q.scope.as_deref() == Some("own") {
        own_commits(&gw, who)?
    } else {
        gw.allow(&who, Action::ReadMatchEvents, &Resource::any())?;
        let header_id = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse().ok());
        let last = q.last_event_id.or(header_id).unwrap_or(0);
        let live = gw.notices.subscribe();
        let backlog = gw.notices.after(last);
        let last = backlog.last().map_or(last, |n| n.id);
        let log = gw.notices.clone();
        let follow = stream::unfold((live, last, log), |(mut live, mut last, log)| async move {
            loop {
                let batch = match live.recv().await {
                    Ok(n) if n.id <= last => continue,
                    Ok(n) if n.id == last + 1 => vec![n],
                    Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => log.after(last),
                    Err(broadcast::error::RecvError::Closed) => return None,
                };
                if let Some(n) = batch.last() {
                    last = n.id;
                    return Some((batch, (live, last, log)));
                }
            }
        });
        stream::iter(backlog).chain(follow.flat_map(stream::iter)).map(|n| notice_event(&n)).boxed()
    };
    Ok(Sse::new(stream.take_until(Box::pin(stopped))).keep_alive(KeepAlive::default()).into_response())
}

fn own_commits(gw: &Arc<Gateway>, who: Identity) -> Result<BoxStream<'static, Result<Event, Infallible>>, ApiError> {
    let events = gw.net.channel(&gw.config.channel)?.subscribe(EventFilter::All);
    let (tx, rx) = tokio::sync::mpsc::unbounded_channel::<CommitEvent>();
    std::thread::spawn(move || {
        while !tx.is_closed() {
            match events.recv_timeout(Duration::from_millis(500)) {
                Ok(ev) if ev.submitter == who.identity_id => {
                    if tx.send(ev).is_err() {
                        return;
                    }
                }
                Ok(_) | Err(crossbeam_channel::RecvTimeoutError::Timeout) => {}
                Err(crossbeam_channel::RecvTimeoutError::Disconnected) => return,
            }
        }
    });
    let s = stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|ev| (ev, rx)) }).map(|ev| {
        let data = json!({
            "tx_id": ev.tx_id,
            "block_number": ev.block_number,
            "flag": ev.flag.as_str(),
            "event": ev.chaincode_event.map(|e| e.name),
        });
        Ok(Event::default().id(ev.tx_id.clone()).event("commit").data(data.to_string()))
    });
    Ok(s.boxed())
}

#[derive(Deserialize)]
struct ChannelBody {
    name: String,
    members: Vec<String>,
    policy: String,
    #[serde(default)]
    chaincodes: Vec<String>,
}

async fn admin_create_channel(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let who = gw.caller(&headers)?;
    gw.require_admin(&who)?;
    let body: ChannelBody = serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let policy = PolicyExpr::parse(&body.policy).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let members: Vec<&str> = body.members.iter().map(String::as_str).collect();
    let chaincodes: Vec<&str> = body.chaincodes.iter().map(String::as_str).collect();
    let config = ChannelConfig::new(&body.name, &members, policy, &chaincodes);
    let net = gw.net.clone();
    let ch = blocking(move || net.create_channel(config)).await?;
    let peers: Vec<String> = ch.peers().iter().map(|p| p.peer_id().to_string()).collect();
    Ok((StatusCode::CREATED, Json(json!({"channel": ch.name(), "height": ch.height(), "peers": peers}))).into_response())
}

#[derive(Deserialize)]
struct DeployBody {
    channel: String,
    name: String,
}

async fn admin_deploy(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let who = gw.caller(&headers)?;
    gw.require_admin(&who)?;
    let body: DeployBody = serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    gw.net.deploy_chaincode(&body.channel, &body.name)?;
    Ok(Json(json!({"channel": body.channel, "chaincode": body.name})).into_response())
}

#[derive(Deserialize)]
struct StateQuery {
    channel: String,
    peer: Option<String>,
}

/// Raw world-state export of one peer (the first joined peer by default).
async fn admin_state(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Query(q): Query<StateQuery>) -> ApiResult {
    let who = gw.caller(&headers)?;
    if !matches!(who.role, Role::Administrator | Role::GovernmentAuditor) {
        return Err(ApiError::forbidden("administrators and auditors only"));
    }
    let ch = gw.net.channel(&q.channel)?;
    let peer = match &q.peer {
        Some(id) => ch.peers().into_iter().find(|p| p.peer_id() == id),
        None => ch.peers().into_iter().next(),
    }
    .ok_or_else(|| ApiError::not_found("peer has not joined this channel"))?;
    let pc = peer.channel(&q.channel).ok_or_else(|| ApiError::not_found("peer has not joined this channel"))?;
    let export = pc.ledger().read().state().export();
    Ok(([(header::CONTENT_TYPE, "application/json")], export).into_response())
}

async fn admin_shutdown(State(gw): State<Arc<Gateway>>, headers: HeaderMap) -> ApiResult {
    let who = gw.caller(&headers)?;
    gw.require_admin(&who)?;
    info!("shutdown requested by {}", who.identity_id);
    gw.request_shutdown();
    Ok((StatusCode::ACCEPTED, Json(json!({"status": "stopping"}))).into_response())
}

/// A gateway serving on its own runtime thread.
pub struct RunningGateway {
    pub addr: SocketAddr,
    gateway: Arc<Gateway>,
    thread: Option<JoinHandle<()>>,
}

impl RunningGateway {
    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops (shutdown endpoint or `stop`).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn stop(self) {
        self.gateway.request_shutdown();
        self.wait();
    }
}

impl Drop for RunningGateway {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            self.gateway.request_shutdown();
            let _ = t.join();
        }
    }
}

pub fn spawn(gateway: Arc<Gateway>, addr: SocketAddr) -> std::io::Result<RunningGateway> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let gw = gateway.clone();
    let thread = std::thread::Builder::new().name("gateway".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => return warn!("gateway listener: {e}"),
            };
            let mut stop = gw.stop.subscribe();
            let app = router(gw.clone());
            let served = axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stop.wait_for(|s| *s).await;
                })
                .await;
            if let Err(e) = served {
                warn!("gateway stopped: {e}");
            }
        });
    })?;
    info!("gateway listening on {addr}");
    Ok(RunningGateway { addr, gateway, thread: Some(thread) })
}
