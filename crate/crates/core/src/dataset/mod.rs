//! Demonstrations: scripted generation, recording, storage and manifests.

mod collect;
mod expert;
mod instructions;
mod manifest;
mod record;
mod storage;

pub use collect::{
    collect_scripted, examples_from_demos, fit_normalizer, observation_at, pretrain_corpus, randomized_setup,
    scripted_demo,
};
pub use expert::{moment_for_field, ExpertConfig, ScriptedExpert};
pub use instructions::{augment_instructions, InstructionTemplate};
pub use manifest::{
    build_manifest, finetune_recipe, manifest_from_recipe, Manifest, ManifestEntry, Split, MANIFEST_FORMAT_VERSION,
};
pub use record::{
    pose_from_array, replay, replay_error, DemoSource, Demonstration, Recorder, TrajectoryRecord, TIMESTAMP_TOLERANCE,
};
pub use storage::{
    frames_path, load_demo, read_frames, read_summary, save_demo, write_frames, DemoSummary, DEMO_FORMAT_VERSION,
};
