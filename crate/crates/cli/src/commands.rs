use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use htt_core::data::synth::verb_of;
use htt_core::data::{load_manifest, load_sequence, save_manifest, synth_generate, SequenceRecord, SynthSpec};
use htt_core::kv::KvMap;
use htt_core::metrics::{write_metric_csv, write_pck_csv, CSV_VERSION_LINE};
use htt_core::model::eval::{evaluate, predict_video, predict_video_with};
use htt_core::model::train::{check_records, EPOCH_CSV_HEADER};
use htt_core::model::{load_checkpoint, save_checkpoint, HttConfig, HttModel, Trainer};
use htt_core::{HttError, Result};

use crate::run_config::RunConfig;
use crate::OUTPUT_DIR_ENV;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const MANIFEST_FILE: &str = "dataset.manifest";
pub const ATTENTION_HEADER: &str = "clip,block,segment,layer,head,query_index,key_index,weight";

/// Flag, then the config file's `output_dir`, then the environment, then `htt-out`.
fn output_dir(flag: Option<PathBuf>, configured: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .or(configured)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("htt-out"));
    fs::create_dir_all(&dir).map_err(|source| HttError::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| HttError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv(header: &str) -> String {
    format!("{CSV_VERSION_LINE}\n{header}\n")
}

fn read_config_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HttError::Config(format!("{}: {e}", path.display())))
}

pub fn synth(spec_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let kv = KvMap::parse(&read_config_text(spec_path)?, &spec_path.display().to_string())?;
    let spec = SynthSpec::from_kv(&kv)?;
    let records = synth_generate(&spec)?;
    let dir = output_dir(out, None)?;
    let manifest = dir.join(MANIFEST_FILE);
    save_manifest(&records, &manifest)?;
    println!("wrote {} sequences to {}", records.len(), manifest.display());
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in &records {
        counts.entry(r.action_label).or_insert((r.object_label, 0)).1 += 1;
    }
    for (action, (object, n)) in counts {
        println!("action {action} (verb {}, object {object}): {n} sequences", verb_of(&spec, action));
    }
    Ok(())
}

/// Keeps the version line, the header and the first `epochs` rows.
fn truncated_log(path: &Path, epochs: usize) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|source| HttError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 2 + epochs || lines[0] != CSV_VERSION_LINE || lines[1] != EPOCH_CSV_HEADER {
        return Err(HttError::Data(format!(
            "{}: log does not hold the {epochs} epochs recorded in the checkpoint",
            path.display()
        )));
    }
    let mut out = String::new();
    for l in &lines[..2 + epochs] {
        out.push_str(l);
        out.push('\n');
    }
    Ok(out)
}

pub fn train(config: &Path, out: Option<PathBuf>, resume: bool, stop_after: Option<usize>) -> Result<()> {
    let rc = RunConfig::load(config)?;
    let dir = output_dir(out, rc.output_dir.clone())?;
    let data = load_manifest(&rc.train_manifest)?;
    check_records(&data, &rc.model)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let log_path = dir.join(TRAIN_LOG_FILE);
    let (mut trainer, mut log) = if resume {
        if !ckpt.is_file() {
            return Err(HttError::Data(format!("{}: no checkpoint to resume from", ckpt.display())));
        }
        let t: Trainer = load_checkpoint(&ckpt)?;
        if t.model.cfg != rc.model || t.schedule != rc.schedule {
            return Err(HttError::Compat(format!(
                "{} was written for a different model or schedule than {}",
                ckpt.display(),
                config.display()
            )));
        }
        let log = truncated_log(&log_path, t.next_epoch)?;
        (t, log)
    } else {
        let model = HttModel::new(rc.model.clone(), rc.init_seed)?;
        (Trainer::new(model, rc.schedule.clone())?, csv(EPOCH_CSV_HEADER))
    };
    let mut ran = 0;
    while !trainer.finished() && stop_after.map_or(true, |n| ran < n) {
        let l = trainer.run_epoch(&data)?;
        log.push_str(&l.csv_row());
        log.push('\n');
        write_file(&log_path, &log)?;
        save_checkpoint(&trainer, &ckpt)?;
        println!(
            "epoch {:>3}  total {:.4}  action {:.4}  hand {:.4}  object {:.4}  lr {:e}",
            l.epoch, l.total_loss, l.loss_action, l.mean_loss_hand, l.mean_loss_object, l.learning_rate
        );
        ran += 1;
    }
    println!("checkpoint {} after {} epochs", ckpt.display(), trainer.next_epoch);
    Ok(())
}

fn load_model(checkpoint: &Path) -> Result<HttModel> {
    let t: Trainer = load_checkpoint(checkpoint)?;
    Ok(t.model)
}

fn load_single(sequence: &Path, cfg: &HttConfig) -> Result<SequenceRecord> {
    if !sequence.is_file() {
        return Err(HttError::Data(format!("{}: sequence file not found", sequence.display())));
    }
    let record = load_sequence(sequence, 0, 0)?;
    check_records(std::slice::from_ref(&record), cfg)?;
    Ok(record)
}

pub fn eval(checkpoint: &Path, data: &Path, out: Option<PathBuf>) -> Result<()> {
    let model = load_model(checkpoint)?;
    let records = load_manifest(data)?;
    let (evaluation, preds) = evaluate(&model, &records)?;
    let dir = output_dir(out, None)?;
    let mut buf = Vec::new();
    write_metric_csv(&mut buf, &evaluation.rows).expect("write to memory");
    write_file(&dir.join("metrics.csv"), &String::from_utf8(buf).expect("utf8"))?;
    for series in &evaluation.curves {
        let mut buf = Vec::new();
        write_pck_csv(&mut buf, &series.curve).expect("write to memory");
        let name = format!("pck_{}_{}.csv", series.space, series.hand);
        write_file(&dir.join(name), &String::from_utf8(buf).expect("utf8"))?;
    }
    let mut clips = csv("video,frames,clips,frames_encoded");
    for p in &preds {
        let _ = writeln!(clips, "{},{},{},{}", p.id, p.frames.len(), p.plan.clips.len(), p.frames_encoded);
    }
    write_file(&dir.join("clips.csv"), &clips)?;
    for r in &evaluation.rows {
        println!("{:<16} {:<13} {:<7} {:.6}", r.metric, r.space, r.hand, r.value);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Layers {
    All,
    Last,
    Index(usize),
}

/// Which attention maps to export.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Selector {
    pose: bool,
    action: bool,
    /// Only the α-token query row of the action block.
    alpha_only: bool,
    layers: Layers,
}

impl Selector {
    fn parse(text: &str, pose_layers: usize, action_layers: usize) -> Result<Self> {
        let bad = |why: &str| HttError::Config(format!("invalid selector `{text}`: {why}"));
        let (block, layer) = match text.split_once(':') {
            Some((b, l)) => (b, Some(l)),
            None => (text, None),
        };
        let (pose, action, alpha_only) = match block {
            "pose" => (true, false, false),
            "action" => (false, true, false),
            "alpha" => (false, true, true),
            "all" => (true, true, false),
            _ => return Err(bad("block must be pose, action, alpha or all")),
        };
        let layers = match layer {
            None if alpha_only => Layers::Last,
            None => Layers::All,
            Some("last") => Layers::Last,
            Some(l) => Layers::Index(l.parse().map_err(|_| bad("layer must be an index or `last`"))?),
        };
        if let Layers::Index(i) = layers {
            if (pose && i >= pose_layers) || (action && i >= action_layers) {
                return Err(bad("layer out of range"));
            }
        }
        Ok(Selector {
            pose,
            action,
            alpha_only,
            layers,
        })
    }

    fn keeps(&self, layer: usize, count: usize) -> bool {
        match self.layers {
            Layers::All => true,
            Layers::Last => layer + 1 == count,
            Layers::Index(i) => layer == i,
        }
    }
}

pub fn attn_dump(checkpoint: &Path, sequence: &Path, select: &str, out: Option<PathBuf>) -> Result<()> {
    let model = load_model(checkpoint)?;
    let sel = Selector::parse(select, model.cfg.pose_encoder.num_layers, model.cfg.action_encoder.num_layers)?;
    let record = load_single(sequence, &model.cfg)?;
    let mut rows = csv(ATTENTION_HEADER);
    let mut emit = |prefix: &str, rec: &htt_core::transformer::AttentionRecord, queries: usize| {
        for h in 0..rec.heads {
            for q in 0..queries {
                for (k, w) in rec.row(h, q).iter().enumerate() {
                    let _ = writeln!(rows, "{prefix},{h},{q},{k},{w}");
                }
            }
        }
    };
    let pred = predict_video_with(&model, &record, |c, o| {
        if sel.pose {
            for (s, layers) in o.pose_attention.iter().enumerate() {
                for (l, rec) in layers.iter().enumerate().filter(|(l, _)| sel.keeps(*l, layers.len())) {
                    emit(&format!("{c},pose,{s},{l}"), rec, rec.queries);
                }
            }
        }
        if sel.action {
            let n = o.action_attention.len();
            for (l, rec) in o.action_attention.iter().enumerate().filter(|(l, _)| sel.keeps(*l, n)) {
                emit(&format!("{c},action,-,{l}"), rec, if sel.alpha_only { 1 } else { rec.queries });
            }
        }
    })?;
    let dir = output_dir(out, None)?;
    let path = dir.join("attention.csv");
    write_file(&path, &rows)?;
    println!("{}: {} clips, attention written to {}", record.id, pred.plan.clips.len(), path.display());
    Ok(())
}

pub fn infer(checkpoint: &Path, sequence: &Path, out: Option<PathBuf>) -> Result<()> {
    let model = load_model(checkpoint)?;
    let record = load_single(sequence, &model.cfg)?;
    let pred = predict_video(&model, &record)?;
    let dir = output_dir(out, None)?;
    let mut poses = csv("frame,joint,u_px,v_px,depth_mm,x_mm,y_mm,z_mm");
    let mut objects = csv("frame,object,probability");
    for f in &pred.frames {
        for (j, p) in f.joints.iter().enumerate() {
            let [u, v] = f.pose.p2d[j];
            let _ = writeln!(poses, "{},{j},{u},{v},{},{},{},{}", f.frame, f.pose.depth[j], p[0], p[1], p[2]);
        }
        let o = f.object_label();
        let _ = writeln!(objects, "{},{o},{}", f.frame, f.object[o]);
    }
    let n_a = model.cfg.num_actions;
    let probs: Vec<String> = (0..n_a).map(|a| format!("p_{a}")).collect();
    let mut clips = csv(&format!("clip,first_frame,frames,{}", probs.join(",")));
    for (c, (clip, dist)) in pred.plan.clips.iter().zip(&pred.clip_actions).enumerate() {
        let values: Vec<String> = dist.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(clips, "{c},{},{},{}", clip.start(), clip.frames.len(), values.join(","));
    }
    let mut summary = csv("video,frames,clips,action");
    let _ = writeln!(summary, "{},{},{},{}", pred.id, pred.frames.len(), pred.plan.clips.len(), pred.action);
    write_file(&dir.join("poses.csv"), &poses)?;
    write_file(&dir.join("objects.csv"), &objects)?;
    write_file(&dir.join("clip_actions.csv"), &clips)?;
    write_file(&dir.join("summary.csv"), &summary)?;
    println!("{}: {} frames, {} clips, action {}", pred.id, pred.frames.len(), pred.plan.clips.len(), pred.action);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selector_grammar() {
        let s = Selector::parse("alpha", 2, 2).unwrap();
        assert!(s.action && s.alpha_only && !s.pose && s.layers == Layers::Last);
        assert_eq!(Selector::parse("pose:1", 2, 2).unwrap().layers, Layers::Index(1));
        assert_eq!(Selector::parse("all", 2, 2).unwrap().layers, Layers::All);
        assert!(Selector::parse("pose:2", 2, 2).is_err());
        assert!(Selector::parse("decoder", 2, 2).is_err());
        assert!(Selector::parse("action:x", 2, 2).is_err());
        assert!(Selector::parse("pose:last", 2, 2).unwrap().keeps(1, 2));
    }
}
