use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use image::{imageops::FilterType, RgbImage};

use crate::error::{Error, Result};
use crate::geoindex::{region_tile, RegionId, TileCoord};

pub const TILE_SIZE: usize = 256;
pub const TILE_BYTES: usize = TILE_SIZE * TILE_SIZE * 3;

/// At most this many tile downloads run at once, process-wide.
pub const MAX_CONCURRENT_DOWNLOADS: usize = 2;
const MAX_ATTEMPTS: u32 = 3;

/// A 256×256 RGB map tile, row-major, interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct MapTile {
    pub region: RegionId,
    pub pixels: Vec<u8>,
}

impl std::fmt::Debug for MapTile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MapTile")
            .field("region", &self.region)
            .field("bytes", &self.pixels.len())
            .finish()
    }
}

impl MapTile {
    pub fn new(region: RegionId, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != TILE_BYTES {
            return Err(Error::Shape(format!(
                "tile has {} bytes, expected {TILE_BYTES}",
                pixels.len()
            )));
        }
        Ok(Self { region, pixels })
    }
}

/// Where tiles come from when they are not cached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TileSource {
    /// URL template containing `{z}`, `{x}` and `{y}`.
    Url(String),
    /// Cache only; a miss is an error.
    Offline,
}

impl TileSource {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "offline" {
            return Ok(TileSource::Offline);
        }
        for key in ["{z}", "{x}", "{y}"] {
            if !s.contains(key) {
                return Err(Error::validation(format!("tile URL template {s:?} lacks {key}")));
            }
        }
        Ok(TileSource::Url(s.to_string()))
    }

    fn url(template: &str, t: TileCoord) -> String {
        template
            .replace("{z}", &t.zoom.to_string())
            .replace("{x}", &t.x.to_string())
            .replace("{y}", &t.y.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub user_agent: String,
    /// Pause after every download.
    pub delay: Duration,
    /// First retry waits this long; doubles after every failure.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            user_agent: format!(
                "crashformer/{} (accident-risk research; tile cache)",
                env!("CARGO_PKG_VERSION")
            ),
            delay: Duration::from_millis(100),
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(30),
        }
    }
}

pub fn tile_cache_path(cache_dir: &Path, t: TileCoord) -> PathBuf {
    cache_dir
        .join(t.zoom.to_string())
        .join(t.x.to_string())
        .join(format!("{}.png", t.y))
}

struct DownloadSlots {
    busy: Mutex<usize>,
    freed: Condvar,
}

static SLOTS: DownloadSlots = DownloadSlots {
    busy: Mutex::new(0),
    freed: Condvar::new(),
};

struct SlotGuard;

impl SlotGuard {
    fn acquire() -> Self {
        let mut busy = SLOTS.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *busy >= MAX_CONCURRENT_DOWNLOADS {
            busy = SLOTS.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
        }
        *busy += 1;
        SlotGuard
    }
}

impl Drop for SlotGuard {
    fn drop(&mut self) {
        let mut busy = SLOTS.busy.lock().unwrap_or_else(|e| e.into_inner());
        *busy -= 1;
        SLOTS.freed.notify_one();
    }
}

/// Decodes an image and brings it to 256×256 RGB: center-crop to a square,
/// then resize if needed.
pub fn decode_tile(bytes: &[u8]) -> Result<Vec<u8>> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?;
    let mut rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w as usize != TILE_SIZE || h as usize != TILE_SIZE {
        let side = w.min(h);
        let cropped =
            image::imageops::crop_imm(&rgb, (w - side) / 2, (h - side) / 2, side, side).to_image();
        rgb = image::imageops::resize(
            &cropped,
            TILE_SIZE as u32,
            TILE_SIZE as u32,
            FilterType::Triangle,
        );
    }
    Ok(rgb.into_raw())
}

pub fn encode_png(pixels: &[u8]) -> Result<Vec<u8>> {
    let img = RgbImage::from_raw(TILE_SIZE as u32, TILE_SIZE as u32, pixels.to_vec())
        .ok_or_else(|| Error::Shape(format!("tile has {} bytes", pixels.len())))?;
    let mut out = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out)
}

/// Writes `bytes` to `path` through a uniquely named temp file and an atomic
/// rename, so concurrent writers of the same tile never leave a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| Error::validation(format!("{} has no parent", path.display())))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.{}.{:?}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("tile"),
        std::process::id(),
        std::thread::current().id()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Stores a tile in the cache as PNG.
pub fn store_tile(cache_dir: &Path, t: TileCoord, pixels: &[u8]) -> Result<PathBuf> {
    let path = tile_cache_path(cache_dir, t);
    write_atomic(&path, &encode_png(pixels)?)?;
    Ok(path)
}

pub fn read_tile_file(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tile(&bytes)
}

fn download(url: &str, opts: &FetchOptions) -> Result<Vec<u8>> {
    let client = reqwest::blocking::Client::builder()
        .user_agent(opts.user_agent.clone())
        .timeout(opts.timeout)
        .build()
        .map_err(|e| Error::Download {
            url: url.into(),
            message: e.to_string(),
        })?;
    let mut wait = opts.backoff;
    let mut last = String::new();
    for attempt in 1..=MAX_ATTEMPTS {
        let outcome = {
            let _slot = SlotGuard::acquire();
            client.get(url).send()
        };
        match outcome {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    let body = resp.bytes().map_err(|e| Error::Download {
                        url: url.into(),
                        message: e.to_string(),
                    })?;
                    std::thread::sleep(opts.delay);
                    return Ok(body.to_vec());
                }
                last = format!("HTTP {status}");
                if !(status.is_server_error() || status.as_u16() == 429) {
                    break;
                }
            }
            Err(e) => last = e.to_string(),
        }
        if attempt < MAX_ATTEMPTS {
            log::warn!("{url}: attempt {attempt} failed ({last}); retrying in {wait:?}");
            std::thread::sleep(wait);
            wait *= 2;
        }
    }
    Err(Error::Download {
        url: url.into(),
        message: last,
    })
}

/// Returns the map tile under the center of `r`, from the cache when
/// present, downloading and caching it otherwise.
pub fn fetch_tile(r: RegionId, cache_dir: &Path, source: &TileSource) -> Result<MapTile> {
    fetch_tile_with(r, cache_dir, source, &FetchOptions::default())
}

pub fn fetch_tile_with(
    r: RegionId,
    cache_dir: &Path,
    source: &TileSource,
    opts: &FetchOptions,
) -> Result<MapTile> {
    let t = region_tile(r)?;
    let path = tile_cache_path(cache_dir, t);
    if path.exists() {
        return MapTile::new(r, read_tile_file(&path)?);
    }
    let template = match source {
        TileSource::Offline => {
            return Err(Error::MissingTile {
                z: t.zoom,
                x: t.x,
                y: t.y,
            })
        }
        TileSource::Url(u) => u,
    };
    let url = TileSource::url(template, t);
    let body = download(&url, opts)?;
    let pixels = decode_tile(&body)?;
    store_tile(cache_dir, t, &pixels)?;
    MapTile::new(r, pixels)
}
