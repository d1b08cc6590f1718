//! Sessions and the in-memory store.
//!
//! A session's trimap and alpha are a pure function of its image and click
//! list: every mutation recomputes them from scratch.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::http::StatusCode;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use trimap_core::io::{alpha_from_bytes, alpha_to_png, image_dimensions, image_from_bytes, trimap_from_bytes, trimap_to_png};
use trimap_core::matting::{compute_metrics, estimate_alpha, MetricReport};
use trimap_core::predictors::{Frame, Predictor};
use trimap_core::simulation::{simulate_step_traced, ClickPlacement, ErrorSummary, Policy, PolicyDecision};
use trimap_core::training::{trimap_from_alpha, UNKNOWN_DILATION};
use trimap_core::types::{AlphaMatte, Click, Image, LabelClass, Raster, SimulationConfig, Trimap};

use crate::error::ApiError;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub resolution: usize,
    pub sim: SimulationConfig,
    pub session_ttl: Duration,
    pub max_megapixels: f64,
    pub persist_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            resolution: trimap_core::predictors::DEFAULT_WORKING_RESOLUTION,
            sim: SimulationConfig::default(),
            session_ttl: Duration::from_secs(3600),
            max_megapixels: 16.0,
            persist_dir: None,
        }
    }
}

/// Uploaded bytes, kept verbatim so persisted sessions replay exactly.
#[derive(Clone, Debug, Default)]
pub struct Upload {
    pub image: Vec<u8>,
    pub gt_alpha: Option<Vec<u8>>,
    pub gt_trimap: Option<Vec<u8>>,
}

#[derive(Clone, Debug)]
struct GroundTruth {
    alpha: Option<AlphaMatte>,
    trimap: Trimap,
}

pub struct Session {
    pub id: String,
    upload: Upload,
    image: Image,
    frame: Frame,
    gt: Option<GroundTruth>,
    clicks: Vec<Click>,
    trimap: Trimap,
    alpha: AlphaMatte,
    metrics: Option<MetricReport>,
    created: SystemTime,
    updated: SystemTime,
    last_access: Instant,
}

/// Run-length encoding of a trimap in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimapRle {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<(LabelClass, usize)>,
}

impl TrimapRle {
    pub fn encode(t: &Trimap) -> Self {
        let mut runs: Vec<(LabelClass, usize)> = Vec::new();
        for &l in t.data() {
            match runs.last_mut() {
                Some((c, n)) if *c == l => *n += 1,
                _ => runs.push((l, 1)),
            }
        }
        Self {
            width: t.width(),
            height: t.height(),
            runs,
        }
    }

    pub fn decode(&self) -> Option<Trimap> {
        let data: Vec<LabelClass> = self
            .runs
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect();
        Raster::from_vec(self.width, self.height, data).ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub working_width: usize,
    pub working_height: usize,
    pub clicks: Vec<Click>,
    /// Base64 PNG, 0 / 128 / 255 for background / unknown / foreground.
    pub trimap_png: String,
    /// Base64 8-bit grayscale PNG.
    pub alpha_png: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trimap_rle: Option<TrimapRle>,
    pub has_ground_truth: bool,
    pub metrics: Option<MetricReport>,
    pub created_at: f64,
    pub updated_at: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub converged: bool,
    pub click: Option<Click>,
    pub errors: ErrorSummary,
}

fn unix(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn decode_checked(bytes: &[u8], max_megapixels: f64) -> Result<Image, ApiError> {
    if bytes.is_empty() {
        return Err(ApiError::bad_request("undecodable", "undecodable: empty image body"));
    }
    let (w, h) = image_dimensions(bytes)
        .map_err(|e| ApiError::bad_request("undecodable", format!("undecodable: {e}")))?;
    let mp = (w * h) as f64 / 1e6;
    if mp > max_megapixels {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "too_large",
            format!("too large: {w}x{h} is {mp:.2} MP, limit {max_megapixels} MP"),
        ));
    }
    image_from_bytes(bytes).map_err(|e| ApiError::bad_request("undecodable", format!("undecodable: {e}")))
}

impl Session {
    pub fn create(id: String, upload: Upload, cfg: &ServiceConfig, predictor: &dyn Predictor) -> Result<Self, ApiError> {
        let image = decode_checked(&upload.image, cfg.max_megapixels)?;
        let dims = image.dims();
        let check = |r: &dyn Fn() -> (usize, usize), what: &str| {
            if r() != dims {
                Err(ApiError::bad_request(
                    "dimension_mismatch",
                    format!("{what} is {:?}, image is {:?}", r(), dims),
                ))
            } else {
                Ok(())
            }
        };
        let alpha = match &upload.gt_alpha {
            Some(b) => {
                let a = alpha_from_bytes(b).map_err(|e| ApiError::bad_request("undecodable", format!("gt_alpha: {e}")))?;
                check(&|| a.dims(), "gt_alpha")?;
                Some(a)
            }
            None => None,
        };
        let trimap = match &upload.gt_trimap {
            Some(b) => {
                let t = trimap_from_bytes(b).map_err(|e| ApiError::bad_request("undecodable", format!("gt_trimap: {e}")))?;
                check(&|| t.dims(), "gt_trimap")?;
                Some(t)
            }
            None => alpha.as_ref().map(|a| trimap_from_alpha(a, UNKNOWN_DILATION)),
        };
        let gt = trimap.map(|trimap| GroundTruth { alpha, trimap });
        let now = SystemTime::now();
        let frame = Frame::new(&image, cfg.resolution);
        let (w, h) = dims;
        let mut s = Self {
            id,
            upload,
            image,
            frame,
            gt,
            clicks: Vec::new(),
            trimap: Raster::filled(w, h, LabelClass::Background),
            alpha: Raster::filled(w, h, 0.0),
            metrics: None,
            created: now,
            updated: now,
            last_access: Instant::now(),
        };
        s.recompute(cfg, predictor)?;
        Ok(s)
    }

    fn recompute(&mut self, cfg: &ServiceConfig, predictor: &dyn Predictor) -> Result<(), ApiError> {
        self.trimap = self.frame.predict(predictor, &self.clicks, cfg.sim.click_radius, None)?;
        self.alpha = estimate_alpha(&self.image, &self.trimap)?;
        self.metrics = match &self.gt {
            Some(GroundTruth { alpha: Some(a), trimap }) => {
                Some(compute_metrics(&self.alpha, a, Some(&self.trimap), Some(trimap))?)
            }
            _ => None,
        };
        self.updated = SystemTime::now();
        Ok(())
    }

    pub fn add_click(&mut self, x: i64, y: i64, label: LabelClass, cfg: &ServiceConfig, predictor: &dyn Predictor) -> Result<(), ApiError> {
        let (w, h) = self.image.dims();
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            return Err(trimap_core::Error::OutOfBounds { x, y, width: w, height: h }.into());
        }
        self.clicks.push(Click::new(x as usize, y as usize, label, self.clicks.len()));
        if let Err(e) = self.recompute(cfg, predictor) {
            self.clicks.pop();
            return Err(e);
        }
        Ok(())
    }

    /// Removes the last click; a no-op without clicks.
    pub fn undo(&mut self, cfg: &ServiceConfig, predictor: &dyn Predictor) -> Result<(), ApiError> {
        if self.clicks.pop().is_some() {
            self.recompute(cfg, predictor)?;
        }
        Ok(())
    }

    pub fn reset(&mut self, cfg: &ServiceConfig, predictor: &dyn Predictor) -> Result<(), ApiError> {
        self.clicks.clear();
        self.recompute(cfg, predictor)
    }

    pub fn clicks(&self) -> &[Click] {
        &self.clicks
    }

    pub fn trimap(&self) -> &Trimap {
        &self.trimap
    }

    pub fn alpha(&self) -> &AlphaMatte {
        &self.alpha
    }

    pub fn suggest(&self, cfg: &ServiceConfig) -> Result<Suggestion, ApiError> {
        let gt = self
            .gt
            .as_ref()
            .ok_or_else(|| ApiError::bad_request("no_ground_truth", "no ground truth attached to this session"))?;
        let (decision, errors) = simulate_step_traced(
            &self.trimap,
            &gt.trimap,
            &cfg.sim,
            Policy::Cups,
            self.clicks.len(),
            &mut ClickPlacement::Center,
        )
        .map_err(|e| match e {
            trimap_core::Error::EmptyTarget => {
                ApiError::bad_request("empty_target", "ground truth has no foreground or unknown pixels")
            }
            other => other.into(),
        })?;
        Ok(match decision {
            PolicyDecision::Converged => Suggestion {
                converged: true,
                click: None,
                errors,
            },
            PolicyDecision::NextClick(c) => Suggestion {
                converged: false,
                click: Some(c),
                errors,
            },
        })
    }

    pub fn state(&self, with_rle: bool) -> Result<SessionState, ApiError> {
        let (width, height) = self.image.dims();
        let (working_width, working_height) = self.frame.working_dims();
        Ok(SessionState {
            id: self.id.clone(),
            width,
            height,
            working_width,
            working_height,
            clicks: self.clicks.clone(),
            trimap_png: B64.encode(trimap_to_png(&self.trimap)?),
            alpha_png: B64.encode(alpha_to_png(&self.alpha)?),
            trimap_rle: with_rle.then(|| TrimapRle::encode(&self.trimap)),
            has_ground_truth: self.gt.is_some(),
            metrics: self.metrics,
            created_at: unix(self.created),
            updated_at: unix(self.updated),
        })
    }

    fn touch(&mut self) {
        self.last_access = Instant::now();
    }
}

#[derive(Serialize, Deserialize)]
struct PersistedSession {
    id: String,
    clicks: Vec<Click>,
    has_gt_alpha: bool,
    has_gt_trimap: bool,
}

const IMAGE_FILE: &str = "image.bin";
const GT_ALPHA_FILE: &str = "gt_alpha.bin";
const GT_TRIMAP_FILE: &str = "gt_trimap.bin";
const MANIFEST_FILE: &str = "session.json";
const TRIMAP_FILE: &str = "trimap.png";
const ALPHA_FILE: &str = "alpha.png";

pub type SessionHandle = Arc<Mutex<Session>>;

/// Sessions keyed by id. The map lock is held only to look up, insert or
/// remove; each session has its own lock, which serializes its mutations.
pub struct SessionStore {
    pub cfg: ServiceConfig,
    pub predictor: Arc<dyn Predictor>,
    sessions: RwLock<HashMap<String, SessionHandle>>,
}

impl SessionStore {
    pub fn new(cfg: ServiceConfig, predictor: Arc<dyn Predictor>) -> Self {
        Self {
            cfg,
            predictor,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn create(&self, upload: Upload) -> Result<SessionState, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::create(id.clone(), upload, &self.cfg, self.predictor.as_ref())?;
        let state = session.state(false)?;
        self.persist(&session);
        self.sessions.write().insert(id, Arc::new(Mutex::new(session)));
        Ok(state)
    }

    pub fn get(&self, id: &str) -> Result<SessionHandle, ApiError> {
        let handle = self.sessions.read().get(id).cloned().ok_or_else(|| ApiError::not_found(id))?;
        handle.lock().touch();
        Ok(handle)
    }

    /// Runs `f` under the session lock and persists the result.
    pub fn mutate<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session, &ServiceConfig, &dyn Predictor) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let handle = self.get(id)?;
        let mut session = handle.lock();
        let out = f(&mut session, &self.cfg, self.predictor.as_ref())?;
        self.persist(&session);
        Ok(out)
    }

    pub fn read<T>(&self, id: &str, f: impl FnOnce(&Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let handle = self.get(id)?;
        let session = handle.lock();
        f(&session)
    }

    pub fn remove(&self, id: &str) -> bool {
        let removed = self.sessions.write().remove(id).is_some();
        if removed {
            if let Some(dir) = &self.cfg.persist_dir {
                let _ = fs::remove_dir_all(dir.join(id));
            }
        }
        removed
    }

    /// Drops sessions idle for longer than the configured TTL; returns how
    /// many were removed.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let ttl = self.cfg.session_ttl;
        let expired: Vec<String> = self
            .sessions
            .read()
            .iter()
            .filter(|(_, s)| now.saturating_duration_since(s.lock().last_access) > ttl)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &expired {
            log::info!("evicting idle session {id}");
            self.remove(id);
        }
        expired.len()
    }

    fn persist(&self, s: &Session) {
        let Some(dir) = &self.cfg.persist_dir else {
            return;
        };
        if let Err(e) = write_session(&dir.join(&s.id), s) {
            log::warn!("could not persist session {}: {e}", s.id);
        }
    }

    /// Reloads every session found under the persistence directory by
    /// replaying its clicks.
    pub fn restore(&self) -> usize {
        let Some(dir) = &self.cfg.persist_dir else {
            return 0;
        };
        let Ok(entries) = fs::read_dir(dir) else {
            return 0;
        };
        let mut n = 0;
        for entry in entries.flatten() {
            match read_session(&entry.path(), &self.cfg, self.predictor.as_ref()) {
                Ok(s) => {
                    self.sessions.write().insert(s.id.clone(), Arc::new(Mutex::new(s)));
                    n += 1;
                }
                Err(e) => log::warn!("skipping persisted session {}: {e}", entry.path().display()),
            }
        }
        n
    }
}

fn write_session(dir: &Path, s: &Session) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = PersistedSession {
        id: s.id.clone(),
        clicks: s.clicks.clone(),
        has_gt_alpha: s.upload.gt_alpha.is_some(),
        has_gt_trimap: s.upload.gt_trimap.is_some(),
    };
    if !dir.join(IMAGE_FILE).exists() {
        fs::write(dir.join(IMAGE_FILE), &s.upload.image)?;
        if let Some(b) = &s.upload.gt_alpha {
            fs::write(dir.join(GT_ALPHA_FILE), b)?;
        }
        if let Some(b) = &s.upload.gt_trimap {
            fs::write(dir.join(GT_TRIMAP_FILE), b)?;
        }
    }
    let to_io = |e: trimap_core::Error| std::io::Error::other(e.to_string());
    fs::write(dir.join(TRIMAP_FILE), trimap_to_png(&s.trimap).map_err(to_io)?)?;
    fs::write(dir.join(ALPHA_FILE), alpha_to_png(&s.alpha).map_err(to_io)?)?;
    // manifest last, so a complete manifest implies complete inputs
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?)?;
    fs::rename(tmp, dir.join(MANIFEST_FILE))
}

fn read_session(dir: &Path, cfg: &ServiceConfig, predictor: &dyn Predictor) -> Result<Session, Box<dyn std::error::Error>> {
    let manifest: PersistedSession = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let upload = Upload {
        image: fs::read(dir.join(IMAGE_FILE))?,
        gt_alpha: manifest.has_gt_alpha.then(|| fs::read(dir.join(GT_ALPHA_FILE))).transpose()?,
        gt_trimap: manifest.has_gt_trimap.then(|| fs::read(dir.join(GT_TRIMAP_FILE))).transpose()?,
    };
    let mut s = Session::create(manifest.id, upload, cfg, predictor)?;
    s.clicks = manifest.clicks;
    s.recompute(cfg, predictor)?;
    Ok(s)
}
