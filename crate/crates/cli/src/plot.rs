//! PNG rendering of training curves and attention heatmaps. Images carry no
//! text; the series colors are listed by the `plot` command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use image::{Rgb, RgbImage};
use serde::Deserialize;

use skelfuse::training::METRICS_HEADER;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 40;
const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40]];

/// One row of the training metrics CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MetricsRow {
    pub epoch: f64,
    pub lr: f64,
    pub loss_a1: f64,
    pub loss_a2: f64,
    pub loss_con: f64,
    pub loss_total: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

/// Parses a metrics CSV whose header matches the training log exactly.
pub fn read_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| skelfuse::Error::Config(format!("metrics: {e}")))?;
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        bail!(skelfuse::Error::Config(format!("metrics header must be `{METRICS_HEADER}`")));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| skelfuse::Error::Config(format!("metrics: {e}")).into()))
        .collect()
}

/// Writes `loss.png` (a1, a2, con, total in palette order) and `accuracy.png`
/// (train, val).
pub fn curves(rows: &[MetricsRow], out: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        bail!(skelfuse::Error::EmptyDataset);
    }
    let series = |f: fn(&MetricsRow) -> Option<f64>| -> Vec<(f64, f64)> {
        rows.iter().filter_map(|r| f(r).map(|v| (r.epoch, v))).collect()
    };
    let loss = out.join("loss.png");
    line_chart(&[
        series(|r| Some(r.loss_a1)),
        series(|r| Some(r.loss_a2)),
        series(|r| Some(r.loss_con)),
        series(|r| Some(r.loss_total)),
    ])
    .save(&loss)?;
    let acc = out.join("accuracy.png");
    line_chart(&[series(|r| Some(r.train_acc)), series(|r| r.val_acc)]).save(&acc)?;
    println!("loss.png: blue loss_a1, orange loss_a2, green loss_con, red loss_total");
    println!("accuracy.png: blue train_acc, orange val_acc");
    Ok(vec![loss, acc])
}

fn line_chart(series: &[Vec<(f64, f64)>]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let points = series.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points.filter(|(_, y)| y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (w, h) = ((WIDTH - 2 * MARGIN) as f64, (HEIGHT - 2 * MARGIN) as f64);
    let to_px = |x: f64, y: f64| {
        (
            MARGIN as f64 + (x - x0) / (x1 - x0) * w,
            (HEIGHT - MARGIN) as f64 - (y - y0) / (y1 - y0) * h,
        )
    };
    let axis = Rgb([120, 120, 120]);
    let (ox, oy) = (MARGIN as f64, (HEIGHT - MARGIN) as f64);
    segment(&mut img, (ox, oy), ((WIDTH - MARGIN) as f64, oy), axis);
    segment(&mut img, (ox, oy), (ox, MARGIN as f64), axis);
    for (s, color) in series.iter().zip(PALETTE.iter().cycle()) {
        let color = Rgb(*color);
        let pts: Vec<_> = s.iter().filter(|(_, y)| y.is_finite()).map(|&(x, y)| to_px(x, y)).collect();
        for pair in pts.windows(2) {
            segment(&mut img, pair[0], pair[1], color);
            segment(&mut img, (pair[0].0, pair[0].1 + 1.0), (pair[1].0, pair[1].1 + 1.0), color);
        }
        if let [single] = pts.as_slice() {
            segment(&mut img, (single.0 - 2.0, single.1), (single.0 + 2.0, single.1), color);
        }
    }
    img
}

fn segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

#[derive(Deserialize)]
struct LocalizedFrame {
    video_id: String,
    person_id: i64,
    slot: usize,
    scores: Vec<f64>,
}

/// One `attention_<video>_<person>.png` per person: rows are sampled frames,
/// columns candidate slots, brightness the attention; the selected slot is
/// outlined in red.
pub fn heatmaps(jsonl: &str, out: &Path) -> Result<Vec<PathBuf>> {
    let mut videos: BTreeMap<(String, i64), Vec<LocalizedFrame>> = BTreeMap::new();
    for (i, line) in jsonl.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let frame: LocalizedFrame = serde_json::from_str(line)
            .map_err(|e| skelfuse::Error::Config(format!("localization line {}: {e}", i + 1)))?;
        videos.entry((frame.video_id.clone(), frame.person_id)).or_default().push(frame);
    }
    const CELL: u32 = 16;
    let mut written = Vec::new();
    for ((video, person), frames) in videos {
        let slots = frames.iter().map(|f| f.scores.len()).max().unwrap_or(0) as u32;
        let mut img = RgbImage::from_pixel(slots.max(1) * CELL, frames.len() as u32 * CELL, Rgb([0, 0, 0]));
        for (r, f) in frames.iter().enumerate() {
            for (c, &a) in f.scores.iter().enumerate() {
                let v = (a.clamp(0.0, 1.0) * 255.0).round() as u8;
                for dy in 0..CELL {
                    for dx in 0..CELL {
                        let edge = dx == 0 || dy == 0 || dx == CELL - 1 || dy == CELL - 1;
                        let px = if edge && c == f.slot { Rgb([220, 30, 30]) } else { Rgb([v, v, v]) };
                        img.put_pixel(c as u32 * CELL + dx, r as u32 * CELL + dy, px);
                    }
                }
            }
        }
        let safe: String = video.chars().map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' { ch } else { '_' }).collect();
        let path = out.join(format!("attention_{safe}_{person}.png"));
        img.save(&path)?;
        written.push(path);
    }
    Ok(written)
}
