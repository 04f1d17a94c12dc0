//! The scripted backend: record responses under prompt-derived keys, save
//! them as a fixture directory, and replay them for golden testing. Any
//! prompt without a fixture fails loudly instead of inventing output.
//!
//! ```bash
//! cargo run -p coldrec --example scripted_fixtures
//! ```

use std::collections::BTreeMap;

use coldrec::gateway::{fixture_key, PromptTag, ScriptedBackend};
use coldrec::{BackendConfig, Gateway};

fn main() -> coldrec::Result<()> {
    let fixtures_dir =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/example-out/fixtures");

    // Record: register a canned profile response for one exact prompt.
    let probe = Gateway::new(BackendConfig::synthetic())?;
    let slots: BTreeMap<String, String> = [
        ("title".to_string(), "Tomb Raider".to_string()),
        (
            "description".to_string(),
            "A classic exploration game.".to_string(),
        ),
        (
            "attributes".to_string(),
            "genre: action-adventure".to_string(),
        ),
        ("review".to_string(), String::new()),
    ]
    .into();
    let request = probe.render(PromptTag::Profile, &slots)?;
    println!(
        "fixture key for this prompt: {}",
        fixture_key(request.tag, &request.system_prompt, &request.user_prompt)
    );

    let config = BackendConfig::default();
    let mut backend = ScriptedBackend::empty(&config);
    backend.add_response(
        &request,
        "Tomb Raider is an action-adventure landmark starring Lara Croft.",
    );
    backend.save_dir(&fixtures_dir)?;
    println!("fixtures saved to {}", fixtures_dir.display());

    // Replay: a gateway over the fixture directory answers the same prompt
    // verbatim and rejects everything else.
    let gateway = Gateway::new(BackendConfig::scripted(&fixtures_dir))?;
    println!("replayed: {}", gateway.chat(&request)?);

    let mut unknown = request.clone();
    unknown.user_prompt.push_str(" (never scripted)");
    match gateway.chat(&unknown) {
        Err(err) => println!("unscripted prompt rejected as expected: {err}"),
        Ok(_) => println!("unexpected: unscripted prompt got an answer"),
    }

    let meter = gateway.meter();
    println!(
        "meter: {} chat calls, {} retries",
        meter.chat_calls, meter.retries
    );
    Ok(())
}
