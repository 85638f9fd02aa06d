//! Local review service: serves QC reports and thumbnails and appends expert
//! decisions to a label CSV.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dwiqc::labels::{latest_by_key, read_labels, write_labels_to, LabelRecord, LABEL_HEADER};
use dwiqc::pipeline::{thumbnail_name, QcReport, ThresholdConfig, REPORT_FILE};
use dwiqc::{Label, QcError, SliceKey, View};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crate::args::ServeArgs;
use crate::{CliError, CliResult};

pub const API_VERSION: u32 = 1;
pub const EXPERT_SOURCE: &str = "expert";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewDecision {
    pub volume_id: String,
    pub view: View,
    pub gradient: usize,
    pub index: usize,
    pub expert_label: u8,
    pub prior_flag: bool,
    pub reviewer: String,
    #[serde(default)]
    pub timestamp: Option<String>,
}

struct Inner {
    records: Vec<LabelRecord>,
}

#[derive(Clone)]
pub struct AppState {
    report_dir: Arc<PathBuf>,
    label_out: Arc<PathBuf>,
    inner: Arc<Mutex<Inner>>,
}

impl AppState {
    /// Opens the decision file, creating it with a header when missing.
    pub fn open(report_dir: &Path, label_out: &Path) -> dwiqc::Result<Self> {
        if !report_dir.is_dir() {
            return Err(QcError::Config(format!("report dir {} not found", report_dir.display())));
        }
        let records = if label_out.is_file() && std::fs::metadata(label_out)?.len() > 0 {
            let text = std::fs::read_to_string(label_out)?;
            let header = text.lines().next().unwrap_or_default();
            if header.split(',').map(str::trim).nth(LABEL_HEADER.len()) != Some("source") {
                return Err(QcError::Labels(format!(
                    "{} has no source column; refusing to append decisions",
                    label_out.display()
                )));
            }
            read_labels(label_out)?
        } else {
            if let Some(dir) = label_out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut header = LABEL_HEADER.join(",");
            header.push_str(",source\n");
            std::fs::write(label_out, header)?;
            Vec::new()
        };
        log::info!("loaded {} prior decision(s) from {}", records.len(), label_out.display());
        Ok(AppState {
            report_dir: Arc::new(report_dir.to_path_buf()),
            label_out: Arc::new(label_out.to_path_buf()),
            inner: Arc::new(Mutex::new(Inner { records })),
        })
    }

    fn volume_ids(&self) -> dwiqc::Result<Vec<String>> {
        let mut ids: Vec<String> = std::fs::read_dir(&*self.report_dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(REPORT_FILE).is_file())
            .filter_map(|e| e.file_name().to_str().map(str::to_owned))
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn report_path(&self, volume_id: &str) -> Option<PathBuf> {
        if volume_id.is_empty() || volume_id.contains(['/', '\\']) || volume_id.starts_with('.') {
            return None;
        }
        let p = self.report_dir.join(volume_id).join(REPORT_FILE);
        p.is_file().then_some(p)
    }

    fn report(&self, volume_id: &str) -> Result<(PathBuf, QcReport), ApiError> {
        let path = self
            .report_path(volume_id)
            .ok_or_else(|| ApiError::not_found(format!("no report for volume '{volume_id}'")))?;
        let report = QcReport::read(&path).map_err(ApiError::internal)?;
        Ok((path, report))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    reason: String,
}

impl ApiError {
    fn bad_request(reason: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            reason: reason.into(),
        }
    }

    fn not_found(reason: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            reason: reason.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            reason: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"version": API_VERSION, "error": self.reason}))).into_response()
    }
}

type ApiResult<T = Response> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/reports", get(list_reports))
        .route("/api/reports/{volume_id}", get(get_report))
        .route("/api/slices/{volume_id}/{view}/{gradient}/{file}", get(get_slice))
        .route("/api/decisions", post(post_decision))
        .route("/api/export/labels", get(export_labels))
        .with_state(state)
}

fn preview_threshold(q: &HashMap<String, String>) -> ApiResult<Option<usize>> {
    match q.get("threshold-preview") {
        None => Ok(None),
        Some(t) => t
            .parse()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("threshold-preview '{t}' is not a non-negative integer"))),
    }
}

fn preview(report: &QcReport, t: usize) -> Value {
    let verdicts = report.verdicts_at(&ThresholdConfig::uniform(t));
    let counts: Vec<Value> = report
        .flag_counts()
        .into_iter()
        .map(|((view, gradient), n)| json!({"view": view, "gradient": gradient, "flag_count": n}))
        .collect();
    json!({
        "version": API_VERSION,
        "volume_id": report.volume_id,
        "threshold": t,
        "flag_counts": counts,
        "acquisition_flag": verdicts.iter().any(|v| v.flag),
        "verdicts": verdicts,
    })
}

async fn list_reports(State(st): State<AppState>) -> ApiResult {
    let ids = st.volume_ids().map_err(ApiError::internal)?;
    Ok(Json(json!({"version": API_VERSION, "volume_ids": ids})).into_response())
}

async fn get_report(
    State(st): State<AppState>,
    UrlPath(volume_id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let (path, report) = st.report(&volume_id)?;
    if let Some(t) = preview_threshold(&q)? {
        return Ok(Json(preview(&report, t)).into_response());
    }
    let bytes = tokio::fs::read(&path).await.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn get_slice(
    State(st): State<AppState>,
    UrlPath((volume_id, view, gradient, file)): UrlPath<(String, String, usize, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let view: View = view.parse().map_err(|_| ApiError::bad_request(format!("unknown view '{view}'")))?;
    let index: usize = file
        .strip_suffix(".png")
        .unwrap_or(&file)
        .parse()
        .map_err(|_| ApiError::bad_request(format!("bad slice index '{file}'")))?;
    let (_, report) = st.report(&volume_id)?;
    let entry = report
        .slices
        .iter()
        .find(|s| s.view == view && s.gradient == gradient && s.index == index)
        .ok_or_else(|| ApiError::not_found(format!("slice {view}/{gradient}/{index} not in report '{volume_id}'")))?;
    if let Some(t) = preview_threshold(&q)? {
        let verdict = report
            .verdicts_at(&ThresholdConfig::uniform(t))
            .into_iter()
            .find(|v| v.view == view && v.gradient == gradient)
            .ok_or_else(|| ApiError::internal("slice without verdict"))?;
        let count = report.flag_counts().get(&(view, gradient)).copied().unwrap_or(0);
        return Ok(Json(json!({
            "version": API_VERSION,
            "volume_id": volume_id,
            "threshold": t,
            "slice": entry,
            "flag_count": count,
            "verdict": verdict,
        }))
        .into_response());
    }
    let png = st.report_dir.join(&volume_id).join(thumbnail_name(view, gradient, index));
    match tokio::fs::read(&png).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response()),
        Err(_) => Err(ApiError::not_found(format!(
            "no thumbnail for slice {view}/{gradient}/{index} of '{volume_id}'"
        ))),
    }
}

async fn post_decision(State(st): State<AppState>, body: Bytes) -> ApiResult {
    let d: ReviewDecision =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed decision: {e}")))?;
    let label = Label::try_from(d.expert_label)
        .map_err(|_| ApiError::bad_request(format!("expert_label {} must be 0 or 1", d.expert_label)))?;
    let report = match st.report_path(&d.volume_id) {
        Some(p) => QcReport::read(&p).map_err(ApiError::internal)?,
        None => return Err(ApiError::bad_request(format!("unknown volume '{}'", d.volume_id))),
    };
    if !report.contains_slice(d.view, d.gradient, d.index) {
        return Err(ApiError::bad_request(format!(
            "slice {}/{}/{} not in report '{}'",
            d.view, d.gradient, d.index, d.volume_id
        )));
    }
    let mut record = LabelRecord::new(&SliceKey::new(d.volume_id.clone(), d.view, d.gradient, d.index), label);
    record.source = Some(EXPERT_SOURCE.to_string());
    let timestamp = d.timestamp.clone().unwrap_or_else(|| chrono::Utc::now().to_rfc3339());

    let mut inner = st.inner.lock().await;
    append_decision(&st.label_out, &record, &d, &timestamp).map_err(ApiError::internal)?;
    inner.records.push(record);
    let total = inner.records.len();
    Ok((
        StatusCode::CREATED,
        Json(json!({"version": API_VERSION, "stored": total, "timestamp": timestamp})),
    )
        .into_response())
}

fn append_decision(path: &Path, record: &LabelRecord, d: &ReviewDecision, timestamp: &str) -> std::io::Result<()> {
    let mut file = OpenOptions::new().append(true).open(path)?;
    let line = format!(
        "{},{},{},{},{},{}\n",
        record.volume_id,
        record.view,
        record.gradient_index,
        record.slice_index,
        record.label.index(),
        EXPERT_SOURCE
    );
    file.write_all(line.as_bytes())?;
    file.sync_data()?;

    let mut audit = json!(d);
    audit["timestamp"] = json!(timestamp);
    let mut log = OpenOptions::new().create(true).append(true).open(journal_path(path))?;
    writeln!(log, "{audit}")
}

/// Sidecar JSON-lines file with the full decisions (reviewer, prior flag, time).
pub fn journal_path(label_out: &Path) -> PathBuf {
    let mut s = label_out.as_os_str().to_owned();
    s.push(".jsonl");
    PathBuf::from(s)
}

async fn export_labels(State(st): State<AppState>) -> ApiResult {
    let inner = st.inner.lock().await;
    let latest: Vec<LabelRecord> = latest_by_key(&inner.records).into_values().collect();
    drop(inner);
    let mut buf = Vec::new();
    write_labels_to(&mut buf, &latest).map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response())
}

pub fn serve(a: ServeArgs) -> CliResult {
    let state = AppState::open(&a.report_dir, &a.label_out)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| CliError::Runtime(QcError::Io(std::io::Error::new(e.kind(), format!("{}:{}: {e}", a.host, a.port)))))?;
        println!("serving {} on http://{}", a.report_dir.display(), listener.local_addr()?);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}
