//! Blocking HTTP client for remote backends.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{DepthMap, ImageBuffer};

use super::wire::{self, codes, CaptionBody, DepthBody, ErrorBody, GenerateBody, GeneratedBody, ImageBody};
use super::{
    check_depth_response, validate_response, BackendDescriptor, Captioner, DepthEstimator, GenerationMode,
    GenerationRequest, GenerationResponse, ImageGenerator, DEFAULT_DEPTH_SCALE,
};

const BODY_LIMIT: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    /// Extra attempts after the first on transient failures.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on every further retry.
    pub backoff: Duration,
    pub max_in_flight: usize,
    pub depth_scale: f64,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff: Duration::from_millis(200),
            max_in_flight: 4,
            depth_scale: DEFAULT_DEPTH_SCALE,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt<T> {
    Done(Result<T>),
    Retry(String),
}

pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
    descriptor: BackendDescriptor,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient")
            .field("base_url", &self.config.base_url)
            .field("descriptor", &self.descriptor)
            .finish()
    }
}

impl RemoteClient {
    /// Client that assumes every mode is supported, without contacting the
    /// server.
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let descriptor = BackendDescriptor {
            name: format!("remote:{}", config.base_url),
            capabilities: GenerationMode::ALL.to_vec(),
            deterministic: false,
        };
        Self {
            gate: Gate::new(config.max_in_flight),
            config,
            agent,
            descriptor,
        }
    }

    /// Fetches the server's descriptor; fails with a transport error when the
    /// endpoint stays unreachable through all retries.
    pub fn connect(config: RemoteConfig) -> Result<Self> {
        let mut client = Self::new(config);
        let desc: BackendDescriptor = client.call("describe", None::<&()>)?;
        client.descriptor = desc;
        Ok(client)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn call<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: Option<&B>) -> Result<R> {
        let url = format!("{}/{}", self.config.base_url, route);
        let payload = body.map(serde_json::to_string).transpose()?;
        let _permit = self.gate.acquire();
        let mut delay = self.config.backoff;
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt::<R>(&url, payload.as_deref()) {
                Attempt::Done(r) => return r,
                Attempt::Retry(msg) => {
                    debug!("{url}: attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                    if attempt < attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        warn!("{url}: giving up after {attempts} attempts");
        Err(Error::Transport {
            attempts,
            message: format!("{url}: {last}"),
        })
    }

    fn attempt<R: DeserializeOwned>(&self, url: &str, payload: Option<&str>) -> Attempt<R> {
        let sent = match payload {
            Some(p) => self
                .agent
                .post(url)
                .header("content-type", "application/json")
                .send(p),
            None => self.agent.get(url).call(),
        };
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().with_config().limit(BODY_LIMIT).read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        if (200..300).contains(&status) {
            return Attempt::Done(
                serde_json::from_str(&text).map_err(|e| Error::MalformedResponse(format!("{url}: {e}"))),
            );
        }
        let detail = serde_json::from_str::<ErrorBody>(&text)
            .map(|b| b.error)
            .unwrap_or_else(|_| wire::ErrorDetail {
                code: codes::INTERNAL.into(),
                message: text.clone(),
            });
        if status >= 500 || status == 429 {
            return Attempt::Retry(format!("HTTP {status} {}: {}", detail.code, detail.message));
        }
        let err = match detail.code.as_str() {
            codes::UNSUPPORTED_MODE => Error::Capability {
                backend: self.descriptor.name.clone(),
                mode: detail.message,
            },
            _ => Error::Remote {
                status,
                code: detail.code,
                message: detail.message,
            },
        };
        Attempt::Done(Err(err))
    }
}

impl ImageGenerator for RemoteClient {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        let body = GenerateBody::from_request(req, self.config.depth_scale)?;
        let out: GeneratedBody = self.call("generate", Some(&body))?;
        let resp = out.into_response()?;
        // the server saw the quantized request; judge preservation against it
        validate_response(&req.quantized(self.config.depth_scale), &resp)?;
        Ok(resp)
    }
}

impl DepthEstimator for RemoteClient {
    fn name(&self) -> String {
        self.descriptor.name.clone()
    }

    fn estimate_depth(&self, img: &ImageBuffer) -> Result<DepthMap> {
        let body = ImageBody {
            image: wire::encode_image(img)?,
        };
        let out: DepthBody = self.call("depth", Some(&body))?;
        let depth = wire::decode_depth("depth", &out.depth, out.depth_scale)
            .map_err(|e| Error::MalformedResponse(e.to_string()))?;
        check_depth_response(img, &depth)?;
        Ok(depth)
    }
}

impl Captioner for RemoteClient {
    fn name(&self) -> String {
        self.descriptor.name.clone()
    }

    fn caption(&self, img: &ImageBuffer) -> Result<String> {
        let body = ImageBody {
            image: wire::encode_image(img)?,
        };
        let out: CaptionBody = self.call("caption", Some(&body))?;
        if out.caption.trim().is_empty() {
            return Err(Error::ProtocolViolation("remote returned an empty caption".into()));
        }
        Ok(out.caption)
    }
}
