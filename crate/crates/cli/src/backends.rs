//! Backend selection from `--backend` strings.

use std::sync::Arc;

use log::info;
use wcgen_core::backend::{
    Backends, FillNearest, HashNoise, ImageGenerator, ManifestCaption, OracleDepth, RemoteClient, RemoteConfig,
};
use wcgen_core::dataio::Scene;
use wcgen_core::pipeline::Viewpoint;

use crate::Failure;

pub const ENV_URL: &str = "WCGEN_BACKEND_URL";
pub const DEFAULT_MOCK: &str = "fill-nearest";

/// Constant depth the mock estimator reports for images it has not seen.
pub const MOCK_FALLBACK_DEPTH: f32 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Mock(String),
    Remote(String),
}

impl BackendSpec {
    /// Parses `mock:<name>` / `remote:<url>`, falling back to the environment
    /// and then to the default mock.
    pub fn resolve(flag: Option<&str>) -> Result<Self, Failure> {
        let env = std::env::var(ENV_URL).ok().filter(|s| !s.is_empty());
        let spec = match (flag, env) {
            (Some(s), _) => s.to_string(),
            (None, Some(url)) => format!("remote:{url}"),
            (None, None) => format!("mock:{DEFAULT_MOCK}"),
        };
        match spec.split_once(':') {
            Some(("mock", name)) => {
                mock_generator(name)?;
                Ok(Self::Mock(name.to_string()))
            }
            Some(("remote", url)) if !url.is_empty() => Ok(Self::Remote(url.to_string())),
            Some(("http" | "https", _)) => Ok(Self::Remote(spec)),
            _ => Err(Failure::usage(format!(
                "invalid backend {spec:?}; expected mock:fill-nearest, mock:hash-noise, remote:<url> or an http(s) URL"
            ))),
        }
    }
}

pub fn mock_generator(name: &str) -> Result<Arc<dyn ImageGenerator>, Failure> {
    match name {
        FillNearest::NAME => Ok(Arc::new(FillNearest)),
        HashNoise::NAME => Ok(Arc::new(HashNoise)),
        _ => Err(Failure::usage(format!(
            "unknown mock {name:?}; available: {}, {}",
            FillNearest::NAME,
            HashNoise::NAME
        ))),
    }
}

/// Mock backends that know the scene: real views map to their dataset depth
/// (when fully valid) and to their manifest captions.
pub fn mock_backends(name: &str, scene: Option<&Scene>, viewpoints: &[&Viewpoint]) -> Result<Backends, Failure> {
    let depth = OracleDepth::with_fallback(MOCK_FALLBACK_DEPTH);
    let captions = ManifestCaption::new();
    for vp in viewpoints {
        for (img, d) in vp.views.iter().zip(&vp.depths) {
            if d.all_valid() {
                depth.register(img, d.clone());
            }
        }
        let listed = scene.and_then(|s| s.manifest.viewpoint(&vp.id)).map(|m| &m.captions);
        if let Some(caps) = listed {
            for (img, c) in vp.views.iter().zip(caps) {
                captions.register(img, c.clone());
            }
        }
    }
    Ok(Backends {
        generator: mock_generator(name)?,
        depth: Arc::new(depth),
        captioner: Arc::new(captions),
    })
}

/// One connected client serving all three capabilities.
pub fn remote_backends(url: &str) -> Result<Backends, Failure> {
    let client = Arc::new(RemoteClient::connect(RemoteConfig::new(url))?);
    info!("connected to {url} ({})", client.descriptor().name);
    Ok(Backends {
        generator: client.clone(),
        depth: client.clone(),
        captioner: client,
    })
}

pub fn build(spec: &BackendSpec, scene: Option<&Scene>, viewpoints: &[&Viewpoint]) -> Result<Backends, Failure> {
    match spec {
        BackendSpec::Mock(name) => mock_backends(name, scene, viewpoints),
        BackendSpec::Remote(url) => remote_backends(url),
    }
}
