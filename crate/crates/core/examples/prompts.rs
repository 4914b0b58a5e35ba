//! Renders the default and identity-conditioned prompts for one task.

use aesbias::model::{identity_grid, Task};
use aesbias::prompt::PromptBuilder;

fn main() {
    let builder = PromptBuilder::builtin();
    let task = Task::Perception;
    println!("template version: {}\n", builder.template_version(task));

    let default = builder.build_prompt(task, None);
    println!("--- default ---\n{}\n", default.text);

    for g in identity_grid().into_iter().take(3) {
        let p = builder.build_prompt(task, Some(g));
        println!("--- {g} ---\n{}\n", p.text);
    }
    println!("{} conditions per image and task", identity_grid().len() + 1);
}
