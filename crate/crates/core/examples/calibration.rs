//! Metric response to injected bias of increasing strength.

use aesbias::model::{Education, Identity, OutputLabel, Task};
use aesbias::synthetic::{calibration_curve, uniform_types, BiasSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let favored = Identity::Education(Education::University);
    let specs = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
        .into_iter()
        .map(|e| BiasSpec::uniform(Task::Assessment, favored, OutputLabel::Negative, e, 42))
        .collect::<Result<Vec<_>, _>>()?;
    let curve = calibration_curve(&specs, 5000, &uniform_types())?;
    println!("{:>7} {:>8} {:>8}", "epsilon", "IFD", "NRD");
    for point in curve {
        println!("{:>7.1} {:>8.4} {:>8.4}", point.epsilon, point.ifd, point.nrd);
    }
    Ok(())
}
