//! Figure data: `reproduce --figure N` and `export --format csv`.
//!
//! Figure numbers count the algorithm listing as figure 1, so 2 is the
//! example images, 3 the first 25 CG / CG-CMD channels, 4 the Gram matrices
//! (with the six-channel PLS / CG / CG-CMD comparison), 6 the CHO templates,
//! 7 AUC against training size, 8 AUC against channel count and 9 the CIO
//! curves.

use std::fs;
use std::path::{Path, PathBuf};

use effchan::channels::{gram_matrix, high_frequency_fraction, orthonormality_error, ChannelBank, ChannelMethod};
use effchan::imaging::Label;
use effchan::observers::{back_project, cho_template};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::pipeline::Pipeline;
use crate::report::{report, AucRow, Report};
use crate::svg::{tile_grid, LinePlot, Series, Tile};

pub const FIGURES: [u32; 7] = [2, 3, 4, 6, 7, 8, 9];
const FIG3_CHANNELS: usize = 25;
const FIG4_CHANNELS: usize = 6;
const FIG6_CHANNELS: usize = 10;
const FIG7_CHANNELS: [usize; 2] = [10, 25];
/// Radial frequency cutoff (fraction of Nyquist) for the smoothness summary.
const HF_CUTOFF: f64 = 0.5;
const ALL_METHODS: [ChannelMethod; 3] = [ChannelMethod::Cg, ChannelMethod::CgCmd, ChannelMethod::Pls];

fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Long-format `label,row,col,value` rows for a set of image tiles.
fn tiles_csv(tiles: &[Tile], first: &str) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([first, "row", "col", "value"]).expect("header");
    for t in tiles {
        for i in 0..t.rows {
            for j in 0..t.cols {
                let v = t.values[i * t.cols + j];
                w.write_record([t.label.clone(), i.to_string(), j.to_string(), format!("{v:e}")])
                    .expect("row");
            }
        }
    }
    w.into_inner().expect("in-memory writer")
}

fn channel_tiles(bank: &ChannelBank, grid: usize, count: usize, prefix: &str) -> Vec<Tile> {
    (0..count.min(bank.num_channels()))
        .map(|i| Tile {
            label: format!("{prefix} {}", i + 1),
            rows: grid,
            cols: grid,
            values: bank.channel(i).iter().copied().collect(),
        })
        .collect()
}

/// Writes every registered bank as `exports/{bank}.csv`.
pub fn export_banks(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let grid = p.config.fov.grid_size;
    let mut out = Vec::new();
    let banks: Vec<String> = p.manifest.of_kind("channel_bank").map(|(k, _)| k.clone()).collect();
    if banks.is_empty() {
        return Err(CliError::Missing("no channel banks to export; run `channels` first".into()));
    }
    for rel in banks {
        let (path, _) = p.manifest.verified(&rel)?;
        let stem = path.with_extension("");
        let bank = effchan::persist::load_bank(&stem)?;
        let name = stem.file_name().expect("bank file name").to_string_lossy().to_string();
        let mut tiles = channel_tiles(&bank, grid, bank.num_channels(), "");
        for (i, t) in tiles.iter_mut().enumerate() {
            t.label = i.to_string();
        }
        let bytes = tiles_csv(&tiles, "channel");
        out.push(write_file(&p.root().join("exports").join(format!("{name}.csv")), &bytes)?);
    }
    Ok(out)
}

/// Adjusts a configuration to compute only what figure `figure` needs.
pub fn figure_config(mut c: ExperimentConfig, figure: u32) -> Result<ExperimentConfig> {
    let o = &mut c.observers;
    match figure {
        2 => {
            (o.cho, o.cio, o.ho_reference, o.io_reference) = (false, false, false, false);
        }
        3 | 4 | 6 => {
            (o.cho, o.cio, o.ho_reference, o.io_reference) = (figure == 6, false, false, false);
            c.sweep.methods = ALL_METHODS.to_vec();
            c.sweep.d_max = c.sweep.d_max.max(FIG3_CHANNELS);
        }
        7 | 8 => {
            (o.cho, o.cio, o.ho_reference, o.io_reference) = (true, false, true, false);
            if figure == 7 {
                c.sweep.d_max = c.sweep.d_max.max(FIG7_CHANNELS[1]);
                for d in FIG7_CHANNELS {
                    if !c.sweep.channel_counts.contains(&d) {
                        c.sweep.channel_counts.push(d);
                    }
                }
                c.sweep.channel_counts.sort_unstable();
            }
        }
        9 => {
            (o.cho, o.cio, o.ho_reference, o.io_reference) = (false, true, false, true);
        }
        other => {
            return Err(CliError::Config(format!(
                "no figure {other}; choose one of {FIGURES:?}"
            )))
        }
    }
    c.validate()?;
    Ok(c)
}

/// Runs the stages figure `figure` depends on and writes its data under
/// `figures/`. Returns the files written.
pub fn reproduce(config: ExperimentConfig, out: &Path, figure: u32) -> Result<Vec<PathBuf>> {
    let config = figure_config(config, figure)?;
    let mut p = Pipeline::new(config, out)?;
    match figure {
        2 => {
            p.generate_test()?;
            fig2(&p)
        }
        3 | 4 | 6 => {
            p.generate()?;
            p.channels()?;
            match figure {
                3 => fig3(&p),
                4 => fig4(&p),
                _ => fig6(&p),
            }
        }
        _ => {
            p.generate()?;
            p.channels()?;
            p.observers()?;
            let r = report(&mut p)?;
            match figure {
                7 => fig7(&p, &r),
                8 => fig8(&p, &r),
                _ => fig9(&p, &r),
            }
        }
    }
}

fn fig_dir(p: &Pipeline) -> PathBuf {
    p.root().join("figures")
}

fn fig2(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let g = p.config.fov.grid_size;
    let test = p.load_dataset("test")?;
    let mut tiles: Vec<Tile> = test
        .indices(Label::H1)
        .into_iter()
        .take(5)
        .enumerate()
        .map(|(k, idx)| Tile {
            label: format!("signal-present {}", k + 1),
            rows: g,
            cols: g,
            values: test.pixels.column(idx).iter().copied().collect(),
        })
        .collect();
    tiles.push(Tile {
        label: "signal".into(),
        rows: g,
        cols: g,
        values: p.task.signal.values.iter().copied().collect(),
    });
    let dir = fig_dir(p);
    Ok(vec![
        write_file(&dir.join("fig2_images.csv"), &tiles_csv(&tiles, "label"))?,
        write_file(&dir.join("fig2.svg"), tile_grid("Signal-present images and the signal", &tiles, 6, false).as_bytes())?,
    ])
}

fn largest_train(p: &Pipeline) -> usize {
    *p.config.sweep.train_sizes.iter().max().expect("nonempty sweep")
}

fn fig3(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let g = p.config.fov.grid_size;
    let n = largest_train(p);
    let dir = fig_dir(p);
    let mut written = Vec::new();
    for m in [ChannelMethod::Cg, ChannelMethod::CgCmd] {
        let bank = p.load_bank(m, n)?;
        let tiles = channel_tiles(&bank, g, FIG3_CHANNELS, m.as_str());
        written.push(write_file(&dir.join(format!("fig3_{m}_n{n}.csv")), &tiles_csv(&tiles, "label"))?);
        let title = format!("First {} {m} channels, n_train = {n}", tiles.len());
        written.push(write_file(&dir.join(format!("fig3_{m}_n{n}.svg")), tile_grid(&title, &tiles, 5, true).as_bytes())?);
    }
    Ok(written)
}

fn fig4(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let g = p.config.fov.grid_size;
    let dir = fig_dir(p);
    let mut written = Vec::new();
    let mut summary = Vec::new();
    let mut gram_tiles = Vec::new();
    let nmax = largest_train(p);
    for &n in &p.config.sweep.train_sizes {
        for m in ALL_METHODS {
            let bank = p.load_bank(m, n)?;
            let bank = bank.prefix(FIG3_CHANNELS.min(bank.num_channels()))?;
            let gram = gram_matrix(&bank);
            let (off, diag) = orthonormality_error(&gram);
            summary.push(json!({
                "method": m, "n_train": n, "channels": bank.num_channels(),
                "max_offdiag": off, "max_diag_dev": diag,
            }));
            if n == nmax {
                let d = gram.nrows();
                let values: Vec<f64> = (0..d * d).map(|k| gram[(k / d, k % d)]).collect();
                let mut w = csv::Writer::from_writer(Vec::new());
                for i in 0..d {
                    w.write_record((0..d).map(|j| format!("{:e}", gram[(i, j)]))).expect("row");
                }
                written.push(write_file(
                    &dir.join(format!("fig4_gram_{m}_n{n}.csv")),
                    &w.into_inner().expect("in-memory writer"),
                )?);
                gram_tiles.push(Tile { label: format!("{m} Gram"), rows: d, cols: d, values });
            }
        }
    }
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    written.push(write_file(&dir.join("fig4_orthonormality.json"), text.as_bytes())?);
    written.push(write_file(
        &dir.join("fig4_gram.svg"),
        tile_grid(&format!("Gram matrices, n_train = {nmax}"), &gram_tiles, 3, true).as_bytes(),
    )?);

    let mut six = Vec::new();
    for m in [ChannelMethod::Pls, ChannelMethod::Cg, ChannelMethod::CgCmd] {
        six.extend(channel_tiles(&p.load_bank(m, nmax)?, g, FIG4_CHANNELS, m.as_str()));
    }
    written.push(write_file(&dir.join("fig4_six_channels.csv"), &tiles_csv(&six, "label"))?);
    written.push(write_file(
        &dir.join("fig4_six_channels.svg"),
        tile_grid("First six PLS, CG and CG-CMD channels", &six, FIG4_CHANNELS, true).as_bytes(),
    )?);
    Ok(written)
}

fn fig6(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let g = p.config.fov.grid_size;
    let d = FIG6_CHANNELS.min(p.config.sweep.d_max);
    let train = p.load_dataset("cho_train")?;
    let mut tiles = Vec::new();
    let mut hf = Vec::new();
    for &n in &p.config.sweep.train_sizes {
        for m in ALL_METHODS {
            let bank = p.bank_prefix(m, n, d)?;
            let template = cho_template(&bank, &train)?;
            let image: Vec<f64> = back_project(&bank, &template)?.iter().copied().collect();
            hf.push(json!({
                "method": m, "n_train": n, "channels": bank.num_channels(),
                "template_high_frequency_fraction": high_frequency_fraction(&image, g, HF_CUTOFF),
                "bank_high_frequency_fraction": effchan::channels::bank_high_frequency_fraction(&bank, g, HF_CUTOFF),
            }));
            tiles.push(Tile { label: format!("{m} n={n}"), rows: g, cols: g, values: image });
        }
    }
    let dir = fig_dir(p);
    let text = serde_json::to_string_pretty(&hf)? + "\n";
    Ok(vec![
        write_file(&dir.join("fig6_templates.csv"), &tiles_csv(&tiles, "label"))?,
        write_file(&dir.join("fig6_high_frequency.json"), text.as_bytes())?,
        write_file(
            &dir.join("fig6.svg"),
            tile_grid(&format!("CHO templates, D = {d}"), &tiles, 3, true).as_bytes(),
        )?,
    ])
}

fn point(r: &AucRow, x: f64) -> (f64, f64, f64) {
    (x, r.auc, r.stderr)
}

fn reference_series(name: &str, row: Option<&AucRow>, xs: &[f64]) -> Option<Series> {
    let r = row?;
    Some(Series {
        name: name.into(),
        points: xs.iter().map(|&x| (x, r.auc, 0.0)).collect(),
        dashed: true,
    })
}

fn curve_table(rows: &[&AucRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    w.into_inner().expect("in-memory writer")
}

fn fig7(p: &Pipeline, r: &Report) -> Result<Vec<PathBuf>> {
    let dir = fig_dir(p);
    let sizes = &p.config.sweep.train_sizes;
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let mut written = Vec::new();
    for d in FIG7_CHANNELS {
        let mut series = Vec::new();
        let mut rows = Vec::new();
        for &m in &p.config.sweep.methods {
            let pts: Vec<&AucRow> = sizes.iter().filter_map(|&n| r.find("cho", Some(m), Some(n), Some(d))).collect();
            series.push(Series {
                name: format!("CHO {m}"),
                points: pts.iter().map(|row| point(row, row.n_train.unwrap() as f64)).collect(),
                dashed: false,
            });
            rows.extend(pts);
        }
        series.extend(reference_series("HO", r.by_id("ho_reference"), &xs));
        rows.extend(r.by_id("ho_reference"));
        let plot = LinePlot {
            title: &format!("CHO AUC vs training images, D = {d}"),
            x_label: "training images",
            y_label: "AUC",
            log_x: true,
            series,
        };
        written.push(write_file(&dir.join(format!("fig7_d{d}.csv")), &curve_table(&rows))?);
        written.push(write_file(&dir.join(format!("fig7_d{d}.svg")), plot.render().as_bytes())?);
    }
    Ok(written)
}

/// The largest and smallest training sizes.
fn size_extremes(sizes: &[usize]) -> Vec<usize> {
    let mut v = vec![*sizes.iter().max().unwrap(), *sizes.iter().min().unwrap()];
    v.dedup();
    v
}

fn fig8(p: &Pipeline, r: &Report) -> Result<Vec<PathBuf>> {
    let dir = fig_dir(p);
    let counts = &p.config.sweep.channel_counts;
    let xs: Vec<f64> = counts.iter().map(|&d| d as f64).collect();
    let mut written = Vec::new();
    for n in size_extremes(&p.config.sweep.train_sizes) {
        let mut series = Vec::new();
        let mut rows = Vec::new();
        for &m in &p.config.sweep.methods {
            let pts: Vec<&AucRow> = counts.iter().filter_map(|&d| r.find("cho", Some(m), Some(n), Some(d))).collect();
            series.push(Series {
                name: format!("CHO {m}"),
                points: pts.iter().map(|row| point(row, row.d.unwrap() as f64)).collect(),
                dashed: false,
            });
            rows.extend(pts);
        }
        series.extend(reference_series("HO", r.by_id("ho_reference"), &xs));
        rows.extend(r.by_id("ho_reference"));
        let plot = LinePlot {
            title: &format!("CHO AUC vs channels, n_train = {n}"),
            x_label: "channels",
            y_label: "AUC",
            log_x: false,
            series,
        };
        written.push(write_file(&dir.join(format!("fig8_n{n}.csv")), &curve_table(&rows))?);
        written.push(write_file(&dir.join(format!("fig8_n{n}.svg")), plot.render().as_bytes())?);
    }
    Ok(written)
}

fn fig9(p: &Pipeline, r: &Report) -> Result<Vec<PathBuf>> {
    let dir = fig_dir(p);
    let o = &p.config.observers;
    let counts = &o.cio_channel_counts;
    let xs: Vec<f64> = counts.iter().map(|&d| d as f64).collect();
    let io = o.io_chain_seeds.first().and_then(|s| r.by_id(&format!("io_reference_s{s}")));
    let mut written = Vec::new();
    for n in size_extremes(&o.cio_train_sizes) {
        let mut series = Vec::new();
        let mut rows = Vec::new();
        for &m in &o.cio_methods {
            let pts: Vec<&AucRow> = counts.iter().filter_map(|&d| r.find("cio", Some(m), Some(n), Some(d))).collect();
            series.push(Series {
                name: format!("CIO {m}"),
                points: pts.iter().map(|row| point(row, row.d.unwrap() as f64)).collect(),
                dashed: false,
            });
            rows.extend(pts);
        }
        series.extend(reference_series("IO", io, &xs));
        rows.extend(io);
        let plot = LinePlot {
            title: &format!("CIO AUC vs channels, n_train = {n}"),
            x_label: "channels",
            y_label: "AUC",
            log_x: false,
            series,
        };
        written.push(write_file(&dir.join(format!("fig9_n{n}.csv")), &curve_table(&rows))?);
        written.push(write_file(&dir.join(format!("fig9_n{n}.svg")), plot.render().as_bytes())?);
    }
    Ok(written)
}

/// Writes the figure 7, 8 and 9 plots for whatever the report holds.
pub fn report_plots(p: &Pipeline, r: &Report) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if r.rows.iter().any(|row| row.observer == "cho") {
        out.extend(fig7(p, r)?);
        out.extend(fig8(p, r)?);
    }
    if r.rows.iter().any(|row| row.observer == "cio") {
        out.extend(fig9(p, r)?);
    }
    Ok(out)
}
