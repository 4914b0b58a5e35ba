use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::endpoint::is_remote;
use super::HarnessError;
use crate::model::ImageRecord;

/// Image part payload for a chat-completions request.
///
/// Local files are checked to decode as a raster image and returned as a
/// base64 data URL. `http(s)://` and `data:` locators pass through unchanged.
pub fn encode_image(image: &ImageRecord) -> Result<String, HarnessError> {
    if is_remote(&image.path_or_uri) {
        return Ok(image.path_or_uri.clone());
    }
    encode_file(Path::new(&image.path_or_uri))
}

pub fn encode_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => HarnessError::FileNotFound(path.display().to_string()),
        _ => HarnessError::UndecodableImage {
            path: path.display().to_string(),
            reason: e.to_string(),
        },
    })?;
    let undecodable = |reason: String| HarnessError::UndecodableImage {
        path: path.display().to_string(),
        reason,
    };
    let format = image::guess_format(&bytes).map_err(|e| undecodable(e.to_string()))?;
    image::load_from_memory_with_format(&bytes, format).map_err(|e| undecodable(e.to_string()))?;
    Ok(format!("data:{};base64,{}", format.to_mime_type(), STANDARD.encode(&bytes)))
}
