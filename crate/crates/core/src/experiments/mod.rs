//! Parameter sweeps over paired runs and the tables behind each figure.

mod config;
mod figure;
mod runner;

pub use config::{
    apply_override, ChannelSection, ExperimentConfig, FlowSection, PuSection, SweepParameter, SweepSpec, TopologyKind,
    TopologySection,
};
pub use figure::{figure_table, write_figure_csv, Family, FigureRow, FigureTable, FIGURE_METRICS};
pub use runner::{
    cells, run_cell, run_experiment, summarize, Cell, CellResult, ExperimentError, ExperimentReport, RunOptions, Stat,
    Summary, SummaryPoint,
};
