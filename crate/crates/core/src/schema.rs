//! Column reference for every CSV artifact, rendered as `SCHEMA.md`.

struct Table {
    file: &'static str,
    about: &'static str,
    columns: &'static [(&'static str, &'static str)],
}

const TABLES: &[Table] = &[
    Table {
        file: "trajectory.csv",
        about: "Excitation run used to build the Hankel blocks. One row per step.",
        columns: &[
            ("t", "step index, counting from 0"),
            ("u1..um", "applied input, one column per channel"),
            ("y1..yp", "measured (noisy) output, one column per channel"),
        ],
    },
    Table {
        file: "blocks/up.csv, uf.csv, yp.csv, yf.csv",
        about: "Past/future Hankel blocks, headerless, one matrix row per line. \
                `blocks/blocks.json` records t_ini, t_f, m, p, n (columns) and the \
                sha256 of trajectory.csv.",
        columns: &[("(unnamed)", "matrix entries, row-major")],
    },
    Table {
        file: "log.csv",
        about: "Per-step closed-loop log of a run. Window quantities are blank until \
                the metric window is full.",
        columns: &[
            ("k", "logged step index"),
            ("lambda_g", "regularization weight used at this step; blank on open-loop steps"),
            ("J", "tuning objective |a·energy − b·M| over the window"),
            ("M", "windowed RMSE between reference and measured output"),
            ("energy", "windowed input energy ‖u‖ over the window"),
            ("status", "open_loop, fallback, converged, max_iter or infeasible"),
            ("iterations", "solver iterations spent on this step"),
            ("u1..um", "applied input"),
            ("y1..yp", "measured output"),
            ("ref1..refp", "output reference"),
        ],
    },
    Table {
        file: "training.csv",
        about: "Training curve of the S-DeePC table.",
        columns: &[
            ("stage", "replay_<i> for a pass over the fixed-λ segments, episode_<i> for a closed-loop episode"),
            ("mean_j", "mean J over the stage"),
        ],
    },
    Table {
        file: "sweep.csv",
        about: "One row per grid value of a sweep spec. The first column is named after the swept parameter.",
        columns: &[
            ("<param>", "lambda_g, n, epsilon, alpha or gamma"),
            ("mean_j", "mean of all J values of the evaluation run"),
            ("mean_m", "mean windowed RMSE"),
            ("mean_energy", "mean windowed input energy"),
            ("samples", "number of J values behind the means"),
            ("steady_state_j", "mean J over the trailing steady-state window"),
        ],
    },
    Table {
        file: "compare.csv",
        about: "Step-aligned J of every compared spec.",
        columns: &[
            ("k", "logged step index"),
            ("J[<name>:<method>]", "J of that spec at step k; blank while its window fills"),
        ],
    },
    Table {
        file: "compare_summary.csv",
        about: "One row per compared spec.",
        columns: &[
            ("method", "<name>:<method> label as in compare.csv"),
            ("convergence_step", "first step after which J stays within ±10% of the steady-state mean; blank if never"),
            ("mean_j", "mean J over the run"),
            ("post_switch_peak_j", "largest J from the last noise switch on; blank without a switch"),
            ("steady_state_mean_j", "mean J over the trailing steady-state window"),
            ("steady_state_min_j", "smallest J in that window"),
            ("steady_state_max_j", "largest J in that window"),
        ],
    },
];

const BINARY: &str = "\n## qtable.bin\n\n\
Little-endian. Bytes 0..4 are the magic `SDPC`, then three `u32` dimensions \
(energy bins, RMSE bins, actions), then every cell as an `f64`, row-major with \
the action index fastest. `qtable.bin.json` next to it holds `dims` and the \
full tuner config (`alpha`, `gamma`, `epsilon`, `a`, `b`, `window_n`, \
`energy_edges`, `rmse_edges`, `actions`, `backup`, `freeze_online`, \
`initial_lambda`); loading checks the dimensions against both.\n\n\
## summary.json\n\n\
`name`, `method`, `seed`, `steps`, `dt_s`, `j_samples`, `mean_j`, `max_j`, \
`steady_state` (`steps`, `samples`, `mean_j`, `min_j`, `max_j`), \
`convergence_step`, `noise_switch_step`, `post_switch_peak_j`, \
`mean_lambda_g`. Absent quantities are `null`.\n";

pub fn markdown() -> String {
    let mut s = String::from(
        "# Artifact schema\n\n\
         Generated by `sdeepc schema`; do not edit by hand.\n\n\
         Floats are written with 17 significant digits. `m` is the number of \
         inputs and `p` the number of outputs.\n",
    );
    for t in TABLES {
        s.push_str(&format!(
            "\n## {}\n\n{}\n\n| column | meaning |\n|---|---|\n",
            t.file, t.about
        ));
        for (c, m) in t.columns {
            s.push_str(&format!("| `{c}` | {m} |\n"));
        }
    }
    s.push_str(BINARY);
    s
}
