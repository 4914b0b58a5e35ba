//! Runs the full query grid against a local mock endpoint, then again from
//! the response cache.

use aesbias::harness::mock::MockServer;
use aesbias::harness::{run_evaluation_blocking, IdentityMode, ModelEndpoint, RunManifest};
use aesbias::model::{Dataset, ImageRecord, ImageType, Task};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let server = MockServer::start_canned()?;

    let mut images = Vec::new();
    for (i, ty) in [ImageType::Portrait, ImageType::Scene].into_iter().enumerate() {
        let path = dir.path().join(format!("{i}.png"));
        image::RgbImage::from_pixel(4, 4, image::Rgb([40 * i as u8, 90, 160])).save(&path)?;
        images.push(ImageRecord {
            image_id: format!("img{i}"),
            path_or_uri: path.display().to_string(),
            image_type: ty,
            dataset: Dataset::Custom,
        });
    }
    let manifest = RunManifest {
        run_id: "mock".into(),
        scale: [1.0, 5.0],
        tasks: Task::ALL.to_vec(),
        identity_mode: IdentityMode::Both,
        repeat: 1,
        cache: Some(dir.path().join("responses.jsonl")),
        template_dir: None,
        endpoint: ModelEndpoint::new("mock-vlm", &server.base_url()),
        images,
    };

    let first = run_evaluation_blocking(&manifest)?;
    println!("first run:  {:?}", first.stats);
    let second = run_evaluation_blocking(&manifest)?;
    println!("second run: {:?}", second.stats);
    println!("requests served: {}", server.requests());

    let sample = &first.records[0];
    println!("\n{} {} {:?}\n{}", sample.image_id, sample.task, sample.identity, sample.raw_text);
    Ok(())
}
