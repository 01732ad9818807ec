//! Closed-loop evaluation, ablations and the teleoperation service.

mod ablation;
mod config;
mod eval;
mod teleop;

pub use ablation::{run_ablation, train_mode, AblationData, AblationMode, AblationRow, AblationTable};
pub use config::{Config, CorpusConfig, CONFIG_ENV};
pub use eval::{
    default_trials, reports_to_csv, run_eval, run_trial, Controller, EvalOptions, EvalReport, IdleController, PolicyController, ReplayController,
    TrialResult,
};
pub use teleop::{
    axes_to_action, ControlCommand, TeleopClient, TeleopConfig, TeleopMessage, TeleopServer, TeleopStats, TickMode,
    WireFrame, STREAM_FRAME_SIZE,
};
