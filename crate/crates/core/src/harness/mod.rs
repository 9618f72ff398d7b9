//! The probing protocol end to end: collection, random search, final
//! evaluation, the results grid and the bootstrap loop.

pub mod bootstrap;
pub mod collect;
pub mod grid;
pub mod method;
pub mod search;

pub use bootstrap::{
    bootstrap_loop, extract_probe, BootstrapReport, BootstrapSettings, PreferenceReward,
    PreferenceSource, RoundReport,
};
pub use collect::{collect_dataset, collect_states, CollectionSettings};
pub use grid::{
    run_cells, run_grid, write_grid, AgentData, CellResult, GridInputs, GridSettings, ResultsGrid,
    TrialLog,
};
pub use method::{
    default_grid, GridRow, Method, MethodHyperparams, MethodSpec, ReductionChoice, SearchSpace,
};
pub use search::{
    final_evaluation, random_search, CellData, FinalResult, SearchOutcome, SearchSettings,
    TrialResult,
};
